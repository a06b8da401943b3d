//! Seeded simulation of `W_n`, tail and ratio estimates, empirical Kolmogorov
//! distances and the moderate-deviation scaling diagnostic.

use crate::bounds::cramer_envelope;
use crate::coefficients::{coefficient_set, long_run_variance, DEFAULT_GAMMA_TOL};
use crate::error::{Error, Result};
use crate::exact::{distribution_of_sn, exact_tail, iid_two_point_log_tail, TailTable};
use crate::models::{FiniteLatticeModel, ModelSpec, SampledModel};
use crate::normal;
use crate::seeding::{child_rng, child_seed};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;
/// Largest `x` at which the normal tail is treated as representable.
pub const MAX_RATIO_X: f64 = 37.0;
/// Minimum sample size for [`empirical_ks`].
pub const MIN_KS_SAMPLES: usize = 100;
/// Relative slack used when comparing simulated sums with lattice thresholds.
const THRESHOLD_SLACK: f64 = 1e-9;

/// Monte Carlo estimate of `P(W_n >= x sigma_n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub x: f64,
    pub p: f64,
    pub lo: f64,
    pub hi: f64,
    pub chains: usize,
    pub seed: u64,
}

/// Wilson score interval for `hits` successes out of `trials`.
pub fn wilson_interval(hits: usize, trials: usize, z: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).clamp(0.0, p), (centre + half).clamp(p, 1.0))
}

struct ChainSampler<'a> {
    model: &'a FiniteLatticeModel,
    cum_pi: Vec<f64>,
    cum_rows: Vec<Vec<(usize, f64)>>,
}

impl<'a> ChainSampler<'a> {
    fn new(model: &'a FiniteLatticeModel) -> Self {
        let cum = |it: &mut dyn Iterator<Item = (usize, f64)>| {
            let mut acc = 0.0;
            it.map(|(j, p)| {
                acc += p;
                (j, acc)
            })
            .collect::<Vec<_>>()
        };
        let cum_pi = cum(&mut model.pi().iter().copied().enumerate())
            .into_iter()
            .map(|(_, c)| c)
            .collect();
        let cum_rows = model
            .rows()
            .iter()
            .map(|r| cum(&mut r.iter().copied()))
            .collect();
        Self {
            model,
            cum_pi,
            cum_rows,
        }
    }

    /// `S_n` for one stationary trajectory, summed on the integer lattice.
    fn sum<R: Rng>(&self, n: usize, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut s = self.cum_pi.partition_point(|&c| c <= u).min(self.cum_pi.len() - 1);
        let f = self.model.f_num();
        let mut total: i128 = 0;
        for _ in 0..n {
            let u: f64 = rng.random();
            let row = &self.cum_rows[s];
            s = row[row.partition_point(|&(_, c)| c <= u).min(row.len() - 1)].0;
            total += f[s] as i128;
        }
        (total as f64 - n as f64 * self.model.mean_num()) / self.model.denom() as f64
    }
}

fn sampled_sum(model: &SampledModel, n: usize, seed: u64) -> f64 {
    match model.sample(n, seed) {
        crate::models::Trajectory::Innovations { signs, presample } => {
            model.values(&signs, presample).iter().sum()
        }
        crate::models::Trajectory::Chain(_) => unreachable!("sampled models emit innovations"),
    }
}

/// `chains` independent draws of `W_n = S_n / sqrt(n)`; chain `i` uses the child
/// stream `(seed, i)`, and the output order is the chain order.
pub fn simulate_w(model: &ModelSpec, n: usize, chains: usize, seed: u64) -> Vec<f64> {
    let root_n = (n as f64).sqrt();
    match model {
        ModelSpec::Exact(m) => {
            let sampler = ChainSampler::new(m);
            (0..chains as u64)
                .into_par_iter()
                .map(|i| sampler.sum(n, &mut child_rng(seed, i)) / root_n)
                .collect()
        }
        ModelSpec::Sampled(m) => (0..chains as u64)
            .into_par_iter()
            .map(|i| sampled_sum(m, n, child_seed(seed, i)) / root_n)
            .collect(),
    }
}

fn at_or_above(w: f64, thr: f64) -> bool {
    w >= thr - THRESHOLD_SLACK * thr.abs().max(1.0)
}

fn at_or_below(w: f64, thr: f64) -> bool {
    w <= thr + THRESHOLD_SLACK * thr.abs().max(1.0)
}

/// Tail estimates `P(W_n >= x sigma_n)` with Wilson intervals.
pub fn tail_estimates(samples: &[f64], sigma_n: f64, x_grid: &[f64], seed: u64) -> Vec<TailEstimate> {
    x_grid
        .iter()
        .map(|&x| {
            let hits = samples.iter().filter(|&&w| at_or_above(w, x * sigma_n)).count();
            estimate(x, hits, samples.len(), seed)
        })
        .collect()
}

/// Mirrored estimates `P(W_n <= -x sigma_n)`.
pub fn left_tail_estimates(
    samples: &[f64],
    sigma_n: f64,
    x_grid: &[f64],
    seed: u64,
) -> Vec<TailEstimate> {
    x_grid
        .iter()
        .map(|&x| {
            let hits = samples.iter().filter(|&&w| at_or_below(w, -x * sigma_n)).count();
            estimate(x, hits, samples.len(), seed)
        })
        .collect()
}

fn estimate(x: f64, hits: usize, chains: usize, seed: u64) -> TailEstimate {
    let (lo, hi) = wilson_interval(hits, chains, Z_95);
    TailEstimate {
        x,
        p: hits as f64 / chains as f64,
        lo,
        hi,
        chains,
        seed,
    }
}

/// How a [`RatioCurve`] is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMode {
    Exact,
    Mc { chains: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioSource {
    Exact,
    Mc,
}

/// Right and left Cramér ratios on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioCurve {
    pub n: usize,
    pub m: usize,
    pub source: RatioSource,
    pub x_grid: Vec<f64>,
    /// `P(W_n >= x sigma_n) / (1 - Phi(x))`.
    pub right: Vec<f64>,
    /// `P(W_n <= -x sigma_n) / Phi(-x)`.
    pub left: Vec<f64>,
    /// Confidence bounds on `right` in Monte Carlo mode.
    pub right_ci: Option<Vec<(f64, f64)>>,
    pub left_ci: Option<Vec<(f64, f64)>>,
    /// Envelope on `|ln ratio|` with unit constant, when coefficients are available.
    pub envelope: Option<Vec<f64>>,
}

impl RatioCurve {
    /// `x,ratio,lo,hi,envelope,left_ratio`; `ratio` and its interval refer to the
    /// right tail, and missing fields are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,ratio,lo,hi,envelope,left_ratio\n");
        for (i, x) in self.x_grid.iter().enumerate() {
            let (lo, hi) = match &self.right_ci {
                Some(ci) => (ci[i].0.to_string(), ci[i].1.to_string()),
                None => (String::new(), String::new()),
            };
            let env = self
                .envelope
                .as_ref()
                .map(|e| e[i].to_string())
                .unwrap_or_default();
            out.push_str(&format!("{x},{},{lo},{hi},{env},{}\n", self.right[i], self.left[i]));
        }
        out
    }
}

fn check_grid(x_grid: &[f64]) -> Result<()> {
    for &x in x_grid {
        if x < 0.0 || x.is_nan() {
            return Err(Error::NegativeX(x));
        }
        if x > MAX_RATIO_X {
            return Err(Error::ZeroDenominatorTail(x));
        }
    }
    Ok(())
}

/// Exact ratios from a tail table.
pub fn exact_ratios(table: &TailTable, x_grid: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_grid(x_grid)?;
    let right = x_grid
        .iter()
        .map(|&x| (exact_tail(table, x) - normal::log_sf(x)).exp())
        .collect();
    let left = x_grid
        .iter()
        .map(|&x| (table.left_tail(x) - normal::log_sf(x)).exp())
        .collect();
    Ok((right, left))
}

/// Cramér ratios in both tail directions with the envelope overlay.
pub fn ratio_curve(model: &ModelSpec, n: usize, m: usize, x_grid: &[f64], mode: RatioMode) -> Result<RatioCurve> {
    check_grid(x_grid)?;
    let envelope = match model {
        ModelSpec::Exact(_) => {
            let c = coefficient_set(model, n, m, DEFAULT_GAMMA_TOL)?;
            Some(
                x_grid
                    .iter()
                    .map(|&x| cramer_envelope(&c, x, 1.0))
                    .collect::<Result<Vec<_>>>()?,
            )
        }
        ModelSpec::Sampled(_) => None,
    };
    match mode {
        RatioMode::Exact => {
            let table = distribution_of_sn(model, n)?;
            let (right, left) = exact_ratios(&table, x_grid)?;
            Ok(RatioCurve {
                n,
                m,
                source: RatioSource::Exact,
                x_grid: x_grid.to_vec(),
                right,
                left,
                right_ci: None,
                left_ci: None,
                envelope,
            })
        }
        RatioMode::Mc { chains, seed } => {
            let sigma = model.sigma_n(n)?;
            let samples = simulate_w(model, n, chains.max(1), seed);
            let r = tail_estimates(&samples, sigma, x_grid, seed);
            let l = left_tail_estimates(&samples, sigma, x_grid, seed);
            let scale = |e: &[TailEstimate]| -> (Vec<f64>, Vec<(f64, f64)>) {
                e.iter()
                    .map(|t| {
                        let d = normal::sf(t.x);
                        (t.p / d, (t.lo / d, t.hi / d))
                    })
                    .unzip()
            };
            let (right, right_ci) = scale(&r);
            let (left, left_ci) = scale(&l);
            Ok(RatioCurve {
                n,
                m,
                source: RatioSource::Mc,
                x_grid: x_grid.to_vec(),
                right,
                left,
                right_ci: Some(right_ci),
                left_ci: Some(left_ci),
                envelope,
            })
        }
    }
}

/// `sup_{x in [lo, hi]} |ratio(x) - 1|` over both tails, exact.
///
/// On each gap between atoms the tail is constant and the normal tail monotone,
/// so the supremum is attained at gap endpoints, approached from either side.
pub fn sup_ratio_deviation(table: &TailTable, lo: f64, hi: f64) -> Result<f64> {
    check_grid(&[lo, hi])?;
    let dev = |log_tail: f64, x: f64| ((log_tail - normal::log_sf(x)).exp() - 1.0).abs();
    let mut worst = dev(exact_tail(table, lo), lo)
        .max(dev(exact_tail(table, hi), hi))
        .max(dev(table.left_tail(lo), lo))
        .max(dev(table.left_tail(hi), hi));
    let len = table.log_masses().len() as i64;
    for (i, w, _) in table.atoms() {
        let i = i as i64;
        if w >= lo && w <= hi {
            // right tail: closed at the atom, open just above it
            worst = worst
                .max(dev(table.log_sf_index(i), w))
                .max(dev(table.log_sf_index((i + 1).min(len)), w));
        }
        let v = -w;
        if v >= lo && v <= hi {
            worst = worst
                .max(dev(table.log_cdf_index(i), v))
                .max(dev(table.log_cdf_index(i - 1), v));
        }
    }
    Ok(worst)
}

/// `sup_x |F_hat(x) - Phi(x)|` for the empirical law of `W_n / sigma_n`.
pub fn empirical_ks(samples: &[f64], sigma_n: f64) -> Result<f64> {
    if samples.len() < MIN_KS_SAMPLES {
        return Err(Error::TooFewSamples {
            have: samples.len(),
            need: MIN_KS_SAMPLES,
        });
    }
    let mut z: Vec<f64> = samples.iter().map(|w| w / sigma_n).collect();
    z.sort_by(f64::total_cmp);
    let nf = z.len() as f64;
    let mut worst = 0.0f64;
    let mut i = 0;
    while i < z.len() {
        let mut j = i;
        while j + 1 < z.len() && z[j + 1] == z[i] {
            j += 1;
        }
        let phi = normal::cdf(z[i]);
        worst = worst
            .max((i as f64 / nf - phi).abs())
            .max(((j + 1) as f64 / nf - phi).abs());
        i = j + 1;
    }
    Ok(worst)
}

/// One point of the moderate-deviation diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpPoint {
    pub n: usize,
    pub a_n: f64,
    /// `a_n^2 ln P(a_n W_n >= c)`.
    pub scaled_log_tail: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpDiagnostic {
    pub c: f64,
    pub a_exponent: f64,
    pub sigma_sq: f64,
    /// `-c^2 / (2 sigma^2)`.
    pub limit: f64,
    pub points: Vec<MdpPoint>,
}

impl MdpDiagnostic {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,scaled_log_tail,limit\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.n, p.scaled_log_tail, p.limit));
        }
        out
    }
}

/// `a_n^2 ln P(a_n W_n >= c)` along `n_grid` with `a_n = n^{-a_exponent}`.
pub fn mdp_diagnostic(model: &ModelSpec, c: f64, a_exponent: f64, n_grid: &[usize]) -> Result<MdpDiagnostic> {
    if !(a_exponent > 0.0 && a_exponent < 0.5) {
        return Err(Error::ExponentOutOfRange(a_exponent));
    }
    let chain = model.exact()?;
    let sigma_sq = long_run_variance(model)?;
    let limit = -c * c / (2.0 * sigma_sq);
    let iid_two_point = chain.len() == 2 && chain.is_iid();
    let points = n_grid
        .iter()
        .map(|&n| {
            let nf = n as f64;
            let a_n = nf.powf(-a_exponent);
            // a_n S_n / sqrt(n) >= c  <=>  S_n >= c sqrt(n) / a_n
            let s = c * nf.sqrt() / a_n;
            let log_tail = if iid_two_point {
                iid_two_point_log_tail(model, n, s)?
            } else {
                distribution_of_sn(model, n)?.log_sf_sum(s)
            };
            Ok(MdpPoint {
                n,
                a_n,
                scaled_log_tail: a_n * a_n * log_tail,
                limit,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MdpDiagnostic {
        c,
        a_exponent,
        sigma_sq,
        limit,
        points,
    })
}
