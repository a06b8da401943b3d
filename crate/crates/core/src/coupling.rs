//! Quantile coupling of the standardized sum with a standard normal variable.
//!
//! `Y = H_n(Phi(Z))` where `H_n` is the left-continuous inverse of the law of
//! `W_n / sigma_n`. The transform stores the normal breakpoints
//! `z_i = Phi^{-1}(F_n(w_i))`, so `Y = w_i` exactly when `z_{i-1} < Z <= z_i`.

use crate::coefficients::{coefficient_set, DEFAULT_GAMMA_TOL};
use crate::error::{Error, Result};
use crate::exact::{distribution_of_sn, TailTable};
use crate::models::ModelSpec;
use crate::normal;
use crate::seeding::child_rng;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Minimum sample size for an empirical transform.
pub const MIN_TRANSFORM_SAMPLES: usize = 1000;
/// Draws generated per derived seed.
const DRAW_CHUNK: usize = 4096;

/// A non-decreasing step function `s -> H_n(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTransform {
    values: Vec<f64>,
    cdf: Vec<f64>,
    breaks: Vec<f64>,
}

/// `Phi^{-1}(F)` given `F` and its complement, taking the accurate side.
fn breakpoint(cdf: f64, upper: f64) -> f64 {
    if upper <= 0.0 {
        f64::INFINITY
    } else if cdf <= 0.5 {
        normal::inv_cdf(cdf)
    } else {
        normal::inv_sf(upper)
    }
}

impl QuantileTransform {
    /// Exact transform from the law of `S_n`, on the standardized scale.
    pub fn from_table(table: &TailTable) -> Self {
        let mut values = Vec::new();
        let mut cdf = Vec::new();
        let mut breaks = Vec::new();
        for (i, w, _) in table.atoms() {
            let i = i as i64;
            let f = table.log_cdf_index(i).exp();
            let upper = table.log_sf_index(i + 1).exp();
            values.push(w);
            cdf.push(f);
            breaks.push(breakpoint(f, upper));
        }
        if let Some(last) = breaks.last_mut() {
            *last = f64::INFINITY;
        }
        Self { values, cdf, breaks }
    }

    /// Empirical transform from draws of `W_n / sigma_n`.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.len() < MIN_TRANSFORM_SAMPLES {
            return Err(Error::TooFewSamples {
                have: samples.len(),
                need: MIN_TRANSFORM_SAMPLES,
            });
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let total = sorted.len();
        let nf = total as f64;
        let mut values = Vec::new();
        let mut cdf = Vec::new();
        let mut breaks = Vec::new();
        let mut i = 0;
        while i < total {
            let mut j = i;
            while j + 1 < total && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let below = (j + 1) as f64 / nf;
            values.push(sorted[i]);
            cdf.push(below);
            breaks.push(breakpoint(below, (total - j - 1) as f64 / nf));
            i = j + 1;
        }
        Ok(Self { values, cdf, breaks })
    }

    /// Support points `w_i`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Normal breakpoints `z_i`, the last one infinite.
    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    /// `H_n(s) = inf { x : F_n(x) >= s }` for `s` in `(0, 1]`.
    pub fn quantile(&self, s: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < s);
        self.values[i.min(self.values.len() - 1)]
    }

    /// `H_n(Phi(z))`, read off the breakpoints.
    pub fn apply_normal(&self, z: f64) -> f64 {
        let i = self.breaks.partition_point(|&b| b < z);
        self.values[i.min(self.values.len() - 1)]
    }

    /// `P(Y = w_i) = Phi(z_i) - Phi(z_{i-1})` for every support point.
    pub fn induced_probabilities(&self) -> Vec<f64> {
        let mut prev = f64::NEG_INFINITY;
        self.breaks
            .iter()
            .map(|&z| {
                let p = if prev >= 0.0 {
                    normal::sf(prev) - normal::sf(z)
                } else {
                    normal::cdf(z) - normal::cdf(prev)
                };
                prev = z;
                p
            })
            .collect()
    }
}

/// Draws `(Y, Z)` with `Z` standard normal and `Y = H_n(Phi(Z))`.
///
/// Draws are generated in chunks of fixed size, chunk `c` from the child stream `(seed, c)`.
pub fn sample_coupled_pairs(transform: &QuantileTransform, draws: usize, seed: u64) -> Vec<(f64, f64)> {
    let chunks = draws.div_ceil(DRAW_CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = child_rng(seed, c as u64);
            let len = DRAW_CHUNK.min(draws - c * DRAW_CHUNK);
            (0..len)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    (transform.apply_normal(z), z)
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Gap statistics of the coupling at one `(n, m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub n: usize,
    pub m: usize,
    pub draws: usize,
    pub seed: u64,
    /// `gamma|ln gamma| + eps|ln eps| + delta + sqrt(m/n)`.
    pub varsigma_n: f64,
    pub alpha: f64,
    pub c_alpha: f64,
    /// Draws with `|Y| <= alpha / varsigma_n`.
    pub admissible: usize,
    /// Admissible draws with `|Y - Z| > 2 C_alpha (Y^2 + 1) varsigma_n`.
    pub violations: usize,
    pub violation_fraction: f64,
    pub median_gap: f64,
    /// `(x, P(G >= x))` for the normalized gap `G = |Y - Z| / varsigma_n`.
    pub survival: Vec<(f64, f64)>,
    /// Least-squares slope of `ln P(G >= x)` against `x` on the upper decile;
    /// negative for an exponential tail.
    pub lambda_hat: f64,
    pub lambda_se: f64,
}

/// Points on which the survival curve is reported.
pub const SURVIVAL_POINTS: usize = 101;

/// Ordinary least squares of `y` on `x`, returning `(slope, standard error)`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - my - slope * (a - mx)).powi(2))
        .sum();
    let se = if x.len() > 2 {
        (rss / (k - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    (slope, se)
}

/// Gap statistics shared by [`CouplingReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct GapSummary {
    pub admissible: usize,
    pub violations: usize,
    pub median_gap: f64,
    pub survival: Vec<(f64, f64)>,
    pub lambda_hat: f64,
    pub lambda_se: f64,
}

/// Summarises pairs `(Y, Z)` against the scale `varsigma_n`.
pub fn summarize_pairs(
    pairs: &[(f64, f64)],
    varsigma_n: f64,
    alpha: f64,
    c_alpha: f64,
) -> Result<GapSummary> {
    if !(varsigma_n.is_finite() && varsigma_n > f64::MIN_POSITIVE) {
        return Err(Error::DegenerateGap(varsigma_n));
    }
    let mut admissible = 0;
    let mut violations = 0;
    for &(y, z) in pairs {
        if y.abs() <= alpha / varsigma_n {
            admissible += 1;
            if (y - z).abs() > 2.0 * c_alpha * (y * y + 1.0) * varsigma_n {
                violations += 1;
            }
        }
    }
    let mut g: Vec<f64> = pairs.iter().map(|(y, z)| (y - z).abs() / varsigma_n).collect();
    g.sort_by(f64::total_cmp);
    let total = g.len();
    let nf = total as f64;
    let median = if total == 0 { f64::NAN } else { g[(total - 1) / 2] };
    let g_max = g.last().copied().unwrap_or(0.0);
    let survival = (0..SURVIVAL_POINTS)
        .map(|k| {
            let x = g_max * k as f64 / (SURVIVAL_POINTS - 1) as f64;
            let below = g.partition_point(|&v| v < x);
            (x, (total - below) as f64 / nf)
        })
        .collect();
    // upper decile: order statistics g_(k) with P(G >= g_(k)) = (N - k) / N
    let start = total - total / 10;
    let (xs, ys): (Vec<f64>, Vec<f64>) = (start..total)
        .map(|k| (g[k], ((total - k) as f64 / nf).ln()))
        .unzip();
    let (slope, se) = if xs.len() >= 2 {
        ols_slope(&xs, &ys)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(GapSummary {
        admissible,
        violations,
        median_gap: median,
        survival,
        lambda_hat: slope,
        lambda_se: se,
    })
}

/// Runs the coupling for an exact-tier model and returns the report with the pairs.
#[allow(clippy::too_many_arguments)]
pub fn coupling_run(
    model: &ModelSpec,
    n: usize,
    m: usize,
    draws: usize,
    seed: u64,
    alpha: f64,
    c_alpha: f64,
) -> Result<(CouplingReport, Vec<(f64, f64)>)> {
    let coeffs = coefficient_set(model, n, m, DEFAULT_GAMMA_TOL)?;
    let varsigma_n = coeffs.varsigma();
    if !(varsigma_n.is_finite() && varsigma_n > f64::MIN_POSITIVE) {
        return Err(Error::DegenerateGap(varsigma_n));
    }
    let table = distribution_of_sn(model, n)?;
    let transform = QuantileTransform::from_table(&table);
    let pairs = sample_coupled_pairs(&transform, draws, seed);
    let g = summarize_pairs(&pairs, varsigma_n, alpha, c_alpha)?;
    let report = CouplingReport {
        n,
        m,
        draws,
        seed,
        varsigma_n,
        alpha,
        c_alpha,
        admissible: g.admissible,
        violations: g.violations,
        violation_fraction: if g.admissible == 0 {
            0.0
        } else {
            g.violations as f64 / g.admissible as f64
        },
        median_gap: g.median_gap,
        survival: g.survival,
        lambda_hat: g.lambda_hat,
        lambda_se: g.lambda_se,
    };
    Ok((report, pairs))
}

pub fn coupling_report(
    model: &ModelSpec,
    n: usize,
    m: usize,
    draws: usize,
    seed: u64,
    alpha: f64,
    c_alpha: f64,
) -> Result<CouplingReport> {
    coupling_run(model, n, m, draws, seed, alpha, c_alpha).map(|(r, _)| r)
}

/// `z,y,gap` rows with `gap = |Y - Z| / varsigma_n`.
pub fn pairs_csv(pairs: &[(f64, f64)], varsigma_n: f64) -> String {
    let mut out = String::from("z,y,gap\n");
    for (y, z) in pairs {
        out.push_str(&format!("{z},{y},{}\n", (y - z).abs() / varsigma_n));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{two_state, Builtin};

    fn rad() -> ModelSpec {
        Builtin::Rademacher.build().unwrap()
    }

    fn ts(rho: f64) -> ModelSpec {
        ModelSpec::Exact(two_state(rho).unwrap())
    }

    #[test]
    fn rademacher_transform() {
        let t = QuantileTransform::from_table(&distribution_of_sn(&rad(), 1).unwrap());
        assert_eq!(t.quantile(0.3), -1.0);
        assert_eq!(t.quantile(0.7), 1.0);
        assert_eq!(t.quantile(0.5), -1.0);
        assert_eq!(t.breaks()[0], 0.0);
        assert_eq!(t.apply_normal(-1e-300), -1.0);
        assert_eq!(t.apply_normal(0.0), -1.0);
        assert_eq!(t.apply_normal(1e-300), 1.0);
        let p = t.induced_probabilities();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quantile_of_cdf_at_atoms() {
        let table = distribution_of_sn(&ts(0.4), 30).unwrap();
        let t = QuantileTransform::from_table(&table);
        for (k, &w) in t.values().iter().enumerate() {
            assert!(t.quantile(t.cdf[k]) <= w);
        }
        assert!(t.breaks().windows(2).all(|b| b[0] <= b[1]));
    }

    #[test]
    fn induced_law_matches_table() {
        for (model, n) in [(ts(0.4), 200), (rad(), 400), (ts(0.8), 64)] {
            let table = distribution_of_sn(&model, n).unwrap();
            let t = QuantileTransform::from_table(&table);
            let induced = t.induced_probabilities();
            let masses: Vec<f64> = table.atoms().map(|(_, _, p)| p).collect();
            assert_eq!(induced.len(), masses.len());
            for (a, b) in induced.iter().zip(&masses) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn pairs_are_monotone_and_reproducible() {
        let t = QuantileTransform::from_table(&distribution_of_sn(&ts(0.4), 50).unwrap());
        let mut pairs = sample_coupled_pairs(&t, 10_000, 8);
        assert_eq!(pairs, sample_coupled_pairs(&t, 10_000, 8));
        let (ys, zs): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let my = ys.iter().sum::<f64>() / 1e4;
        let mz = zs.iter().sum::<f64>() / 1e4;
        let cov: f64 = ys.iter().zip(&zs).map(|(y, z)| (y - my) * (z - mz)).sum();
        assert!(cov > 0.0);
        pairs.sort_by(|a, b| a.1.total_cmp(&b.1));
        assert!(pairs.windows(2).all(|w| w[0].0 <= w[1].0));
    }

    #[test]
    fn rademacher_sign_rule() {
        let t = QuantileTransform::from_table(&distribution_of_sn(&rad(), 1).unwrap());
        for (y, z) in sample_coupled_pairs(&t, 5000, 1) {
            assert_eq!(y == -1.0, z <= 0.0);
        }
    }

    #[test]
    fn empirical_transform() {
        assert!(matches!(
            QuantileTransform::from_samples(&[0.0; 10]),
            Err(Error::TooFewSamples { have: 10, need: 1000 })
        ));
        let s: Vec<f64> = (0..1000).map(|i| (i % 4) as f64).collect();
        let t = QuantileTransform::from_samples(&s).unwrap();
        assert_eq!(t.values(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(t.quantile(0.25), 0.0);
        assert_eq!(t.quantile(0.26), 1.0);
    }

    #[test]
    fn ols_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, -1.0, -3.0, -5.0];
        let (s, se) = ols_slope(&x, &y);
        assert!((s + 2.0).abs() < 1e-14 && se.abs() < 1e-7);
    }

    #[test]
    fn report_fields() {
        let r = coupling_report(&ts(0.4), 256, 4, 20_000, 3, 1.0, 1.0).unwrap();
        assert!(r.varsigma_n > 0.0);
        assert!(r.survival.windows(2).all(|w| w[0].1 >= w[1].1));
        assert!(r.lambda_hat < 0.0 && r.lambda_se.is_finite());
        assert!(r.admissible <= r.draws);
    }
}
