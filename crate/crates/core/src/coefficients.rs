//! Deviation coefficients `eps_m`, `gamma_m`, `delta_m`, `tau_m`, their
//! certificate-based upper bounds, block-size rules and the admissibility gates.

use crate::error::{Error, Result};
use crate::exact::{block_moments, oscillation, sigma_n_exact, sup_norm};
use crate::logspace::x_abs_ln_x;
use crate::models::{
    fit_power_decay, rate_constant, Contraction, DecayCertificate, FiniteLatticeModel, ModelSpec,
    TailBound,
};
use serde::{Deserialize, Serialize};

/// `zeta(3/2)`.
pub const ZETA_THREE_HALVES: f64 = 2.612_375_348_685_488_3;
/// Default truncation tolerance for the `gamma_m` series.
pub const DEFAULT_GAMMA_TOL: f64 = 1e-10;
/// Hard cap on the number of chain steps taken by the series evaluators.
const MAX_SERIES_STEPS: usize = 20_000_000;

/// `sum_{j > J} j^{-3/2}`.
pub fn zeta_three_halves_tail(j: usize) -> f64 {
    const SWITCH: usize = 64;
    let start = j.max(SWITCH);
    let direct: f64 = ((j + 1)..=start).map(|k| (k as f64).powf(-1.5)).sum();
    // Euler-Maclaurin for sum_{k > start} k^{-3/2}
    let a = start as f64;
    let f = a.powf(-1.5);
    let f1 = -1.5 * a.powf(-2.5);
    let f3 = -1.5 * 2.5 * 3.5 * a.powf(-4.5);
    let f5 = -1.5 * 2.5 * 3.5 * 4.5 * 5.5 * a.powf(-6.5);
    let from_a = 2.0 / a.sqrt() + f / 2.0 - f1 / 12.0 + f3 / 720.0 - f5 / 30240.0;
    direct + from_a - f
}

/// Admissibility gate mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// `eps_m <= 1/4`, `gamma_m <= e^{-6400}`, `delta_m^2 + m/n <= alpha_0`.
    Strict,
    /// `eps_m <= 1/4`, `gamma_m <= e^{-1}`, `delta_m^2 + m/n <= alpha_0`.
    #[default]
    Practical,
}

impl std::str::FromStr for GateMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "strict" => Ok(GateMode::Strict),
            "practical" => Ok(GateMode::Practical),
            other => Err(format!("unknown gate mode '{other}' (strict|practical)")),
        }
    }
}

/// Thresholds behind a [`GateMode`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gates {
    pub mode: GateMode,
    pub eps_max: f64,
    /// Threshold on `ln gamma_m` (kept in log form: `e^{-6400}` underflows).
    pub ln_gamma_max: f64,
    pub alpha0: f64,
}

impl Gates {
    pub fn new(mode: GateMode) -> Self {
        Self {
            mode,
            eps_max: 0.25,
            ln_gamma_max: match mode {
                GateMode::Strict => -6400.0,
                GateMode::Practical => -1.0,
            },
            alpha0: 0.5,
        }
    }

    pub fn check(&self, c: &CoefficientSet) -> GateVerdict {
        let eps_ok = c.eps_m <= self.eps_max;
        let gamma_ok = c.gamma_m == 0.0 || c.gamma_m.ln() <= self.ln_gamma_max;
        let alpha_ok = c.delta_m_sq + c.m as f64 / c.n as f64 <= self.alpha0;
        GateVerdict {
            mode: self.mode,
            eps_ok,
            gamma_ok,
            alpha_ok,
            passed: eps_ok && gamma_ok && alpha_ok,
        }
    }
}

impl Default for Gates {
    fn default() -> Self {
        Gates::new(GateMode::Practical)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateVerdict {
    pub mode: GateMode,
    pub eps_ok: bool,
    pub gamma_ok: bool,
    pub alpha_ok: bool,
    pub passed: bool,
}

/// The coefficients for one `(n, m)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub n: usize,
    pub m: usize,
    pub sigma_n: f64,
    pub eps_m: f64,
    pub gamma_m: f64,
    pub delta_m: f64,
    pub delta_m_sq: f64,
    pub tau_m: f64,
    pub tau_m_sq: f64,
    /// Certified bound on the error of the truncated `gamma_m` series.
    pub gamma_truncation_error: f64,
    /// Number of series terms summed explicitly.
    pub gamma_terms: usize,
}

impl CoefficientSet {
    /// Assembles a set from its primitive ingredients.
    ///
    /// `sup_mean` is `||E[S_m|F_0]||`, `second_dev` is
    /// `||E[S_m^2|F_0]/(m sigma^2) - 1||`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        n: usize,
        m: usize,
        sigma_n: f64,
        bound: f64,
        sup_mean: f64,
        second_dev: f64,
        gamma_m: f64,
        gamma_truncation_error: f64,
    ) -> Self {
        let (nf, mf) = (n as f64, m as f64);
        let eps_m = mf * bound / (nf.sqrt() * sigma_n);
        let delta_m_sq = sup_mean * sup_mean / (mf * sigma_n * sigma_n) + second_dev;
        let tau_m_sq = delta_m_sq + mf / nf + 4.0 * eps_m * eps_m;
        Self {
            n,
            m,
            sigma_n,
            eps_m,
            gamma_m,
            delta_m: delta_m_sq.sqrt(),
            delta_m_sq,
            tau_m: tau_m_sq.sqrt(),
            tau_m_sq,
            gamma_truncation_error,
            gamma_terms: 0,
        }
    }

    /// `gamma_m |ln gamma_m|`, zero at `gamma_m = 0`.
    pub fn gamma_log_gamma(&self) -> f64 {
        x_abs_ln_x(self.gamma_m)
    }

    /// `eps_m |ln eps_m|`.
    pub fn eps_log_eps(&self) -> f64 {
        x_abs_ln_x(self.eps_m)
    }

    /// `gamma|ln gamma| + eps|ln eps| + delta + sqrt(m/n)`.
    pub fn varsigma(&self) -> f64 {
        self.gamma_log_gamma()
            + self.eps_log_eps()
            + self.delta_m
            + (self.m as f64 / self.n as f64).sqrt()
    }
}

fn check_block(n: usize, m: usize) -> Result<()> {
    if m == 0 || m > n {
        return Err(Error::ParamOutOfRange {
            name: "m",
            value: m as f64,
            range: "1 <= m <= n",
        });
    }
    Ok(())
}

/// Exact coefficients of an exact-tier model.
pub fn coefficient_set(model: &ModelSpec, n: usize, m: usize, tol: f64) -> Result<CoefficientSet> {
    let chain = model.exact()?;
    check_block(n, m)?;
    if !(tol > 0.0) {
        return Err(Error::ParamOutOfRange {
            name: "tol",
            value: tol,
            range: "tol > 0",
        });
    }
    let sigma = sigma_n_exact(chain, n)?;
    let moments = block_moments(chain, m);
    let series = GammaSeries::new(chain, m, sigma, tol)?;
    let mut c = CoefficientSet::from_parts(
        n,
        m,
        sigma,
        chain.bound(),
        moments.sup_mean,
        moments.sup_second_dev(sigma),
        series.value,
        series.error,
    );
    c.gamma_terms = series.terms;
    Ok(c)
}

/// Remainder bound `sum_{s > t} ||P^s X|| <= osc(P^t X) * factor`.
fn remainder(osc: f64, c: &Contraction) -> f64 {
    if osc == 0.0 {
        0.0
    } else {
        osc * c.series_factor()
    }
}

/// Iterates `c_t = E[S_t | Y_0] = sum_{s<=t} P^s X` until the remainder is below `target`.
struct ConditionalMeanWalk {
    norms: Vec<f64>,
    remainders: Vec<f64>,
    limit_norm: f64,
    limit_remainder: f64,
}

impl ConditionalMeanWalk {
    fn run(chain: &FiniteLatticeModel, target: f64, min_steps: usize) -> Result<Self> {
        let contraction = chain.contraction().ok_or(Error::NoDecayCertificate)?;
        let mut v = chain.centered().to_vec();
        let mut c = vec![0.0; chain.len()];
        let mut norms = Vec::new();
        let mut remainders = Vec::new();
        loop {
            v = chain.apply(&v);
            c.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
            let r = remainder(oscillation(&v), &contraction);
            norms.push(sup_norm(&c));
            remainders.push(r);
            let t = norms.len();
            if (r <= target && t >= min_steps) || t >= MAX_SERIES_STEPS {
                return Ok(Self {
                    limit_norm: sup_norm(&c),
                    limit_remainder: r,
                    norms,
                    remainders,
                });
            }
        }
    }

    /// `||c_t||`, extended by the limit beyond the walk.
    fn norm(&self, t: usize) -> f64 {
        self.norms.get(t - 1).copied().unwrap_or(self.limit_norm)
    }

    fn remainder(&self, t: usize) -> f64 {
        self.remainders
            .get(t - 1)
            .copied()
            .unwrap_or(self.limit_remainder)
    }
}

/// Evaluation of `gamma_m` with a certified truncation error.
struct GammaSeries {
    value: f64,
    error: f64,
    terms: usize,
}

impl GammaSeries {
    /// Sums `j^{-3/2} ||c_{mj}||` for `j <= J` and replaces the rest by
    /// `||g|| zeta_tail(J)`, where `g = lim c_t`. Both `||c_{mj}|| - ||g||` for
    /// `j > J` and the error in `||g||` are bounded by the chain remainder.
    fn new(chain: &FiniteLatticeModel, m: usize, sigma: f64, tol: f64) -> Result<Self> {
        let scale = (m as f64).sqrt() * sigma;
        let target = tol * scale / (4.0 * ZETA_THREE_HALVES);
        let walk = ConditionalMeanWalk::run(chain, target, m)?;
        let r_star = walk.limit_remainder;
        let max_j = walk.norms.len() / m;
        let mut partial = 0.0;
        let mut j = 0;
        loop {
            // terms j' > j use c_{m j'} with m j' >= m (j + 1)
            let err = (walk.remainder(m * (j + 1)) + r_star) * zeta_three_halves_tail(j) / scale;
            if err < tol || j >= max_j {
                let value = (partial + walk.limit_norm * zeta_three_halves_tail(j)) / scale;
                return Ok(Self {
                    value,
                    error: err,
                    terms: j,
                });
            }
            j += 1;
            partial += (j as f64).powf(-1.5) * walk.norm(j * m);
        }
    }
}

/// Exact `gamma_m` alone.
pub fn gamma_exact(model: &ModelSpec, n: usize, m: usize, tol: f64) -> Result<(f64, f64)> {
    let chain = model.exact()?;
    check_block(n, m)?;
    let sigma = sigma_n_exact(chain, n)?;
    let s = GammaSeries::new(chain, m, sigma, tol)?;
    Ok((s.value, s.error))
}

/// Decay certificate for either tier. For exact-tier models the sequences are
/// exact suprema over states within a window of width `len`, closed by a
/// certified geometric tail.
pub fn eta_certificate(model: &ModelSpec, len: usize) -> Result<DecayCertificate> {
    match model {
        ModelSpec::Sampled(s) => Ok(s.decay.clone()),
        ModelSpec::Exact(chain) => exact_certificate(chain, len.max(2)),
    }
}

fn exact_certificate(chain: &FiniteLatticeModel, len: usize) -> Result<DecayCertificate> {
    let contraction = chain.contraction().ok_or(Error::WindowTooSmall)?;
    let (lag, delta) = (contraction.lag, contraction.coefficient);
    let window = len;
    let horizon = len + window;
    let x = chain.centered();
    let xb = chain.bound();

    // P^t X for t = 0..=horizon
    let mut powers = vec![x.to_vec()];
    for t in 1..=horizon {
        let next = chain.apply(&powers[t - 1]);
        powers.push(next);
    }
    let norm1: Vec<f64> = powers.iter().map(|v| sup_norm(v)).collect();
    let osc1: Vec<f64> = powers.iter().map(|v| oscillation(v)).collect();

    let eta1_at = |k: usize| -> f64 {
        let win = norm1[k..=k + window].iter().copied().fold(0.0, f64::max);
        win.max(osc1[k + window])
    };
    let eta1: Vec<f64> = (1..=len).map(eta1_at).collect();
    let eta1_far = osc1[window + 1];

    // h_d = X * P^d X; E[X_i X_{i+d} | Y_0] - E[..] = P^i h_d - pi h_d
    let mut eta2_window = vec![0.0f64; len + 1];
    let mut osc_at_len = 0.0f64;
    let mut osc_at_horizon = vec![0.0f64; len + 1];
    for d in 0..=window {
        let mut h: Vec<f64> = x.iter().zip(&powers[d]).map(|(a, b)| a * b).collect();
        let mean = chain.stationary_mean(&h);
        let mut dev = Vec::with_capacity(horizon + 1);
        let mut osc = Vec::with_capacity(horizon + 1);
        for i in 0..=horizon {
            if i > 0 {
                h = chain.apply(&h);
            }
            dev.push(h.iter().fold(0.0f64, |a, v| a.max((v - mean).abs())));
            osc.push(oscillation(&h));
        }
        for k in 1..=len {
            let win = dev[k..=k + window].iter().copied().fold(0.0, f64::max);
            eta2_window[k] = eta2_window[k].max(win);
            osc_at_horizon[k] = osc_at_horizon[k].max(osc[k + window]);
        }
        osc_at_len = osc_at_len.max(osc[len]);
    }
    let far_pairs = 2.0 * xb * eta1_far;
    let eta2: Vec<f64> = (1..=len)
        .map(|k| {
            let windowed = eta2_window[k].max(osc_at_horizon[k]).max(far_pairs);
            let crude = 2.0 * xb * xb * delta.powi((k / lag) as i32);
            windowed.min(crude)
        })
        .collect();

    let eta1_tail = TailBound {
        anchor: len,
        scale: osc1[len],
        ratio: delta,
        lag,
    };
    let eta2_tail = TailBound {
        anchor: len,
        scale: osc_at_len.max(far_pairs),
        ratio: delta,
        lag,
    };
    let fit = fit_power_decay(&eta1).or_else(|| fit_power_decay(&eta2));
    let (beta, rate) = match fit {
        Some((b, _)) => (
            Some(b),
            rate_constant(&eta1, b).max(rate_constant(&eta2, b)),
        ),
        None => (None, 0.0),
    };
    Ok(DecayCertificate {
        eta1,
        eta2,
        eta1_tail,
        eta2_tail,
        beta,
        beta_is_fit: beta.is_some(),
        rate_constant: rate,
        geometric_rho: Some(contraction.rate()),
    })
}

/// Rate class of the `delta_m` bound for `eta = O(k^{-beta})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum DeltaRate {
    /// `O(m^{-1/2})`, `beta > 2`.
    InverseSqrt,
    /// `O(m^{-1/2} sqrt(ln m))`, `beta = 2`.
    InverseSqrtLog,
    /// `O(m^{-exponent})` with `exponent = (beta - 1)/2`, `beta in (1, 2)`.
    Power { exponent: f64 },
}

impl DeltaRate {
    pub fn label(&self) -> String {
        match self {
            DeltaRate::InverseSqrt => "m^{-1/2}".into(),
            DeltaRate::InverseSqrtLog => "m^{-1/2} sqrt(ln m)".into(),
            DeltaRate::Power { exponent } => format!("m^{{-{exponent}}}"),
        }
    }
}

pub fn delta_rate(beta: f64) -> Result<DeltaRate> {
    if !(beta > 1.0) {
        return Err(Error::BetaOutOfRange(beta));
    }
    Ok(if beta > 2.0 {
        DeltaRate::InverseSqrt
    } else if beta == 2.0 {
        DeltaRate::InverseSqrtLog
    } else {
        DeltaRate::Power {
            exponent: (beta - 1.0) / 2.0,
        }
    })
}

/// Constants in the certificate-based bounds; both default to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateConstants {
    pub c1: f64,
    pub c2: f64,
}

impl Default for CertificateConstants {
    fn default() -> Self {
        Self { c1: 1.0, c2: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedBounds {
    pub m: usize,
    pub n: usize,
    pub gamma_bound: f64,
    pub delta_sq_bound: f64,
    pub constants: CertificateConstants,
    pub regime: Option<DeltaRate>,
}

/// `sum_{j >= k} eta_{1,j}` using the tabulated entries and the tail bound.
fn eta_sum_from(table: &[f64], tail: &TailBound, k: usize) -> f64 {
    let len = table.len();
    let head: f64 = if k <= len {
        table[k - 1..].iter().sum()
    } else {
        0.0
    };
    head + tail.sum_beyond(len.max(k - 1))
}

/// `sum_{j >= k} eta_{1,j} / sqrt(j)`.
fn eta_weighted_sum_from(table: &[f64], tail: &TailBound, k: usize) -> f64 {
    let len = table.len();
    let head: f64 = (k..=len).map(|j| table[j - 1] / (j as f64).sqrt()).sum();
    let from = len.max(k - 1);
    head + tail.sum_beyond(from) / ((from + 1) as f64).sqrt()
}

/// Certificate-based upper bounds on `gamma_m` and `delta_m^2`.
pub fn certified_coefficient_bounds(
    cert: &DecayCertificate,
    m: usize,
    n: usize,
    sigma_n: f64,
    bound_x0: f64,
    constants: CertificateConstants,
) -> Result<CertifiedBounds> {
    if m == 0 || cert.len() < m {
        return Err(Error::InsufficientCertificateLength {
            have: cert.len(),
            need: m.max(1),
        });
    }
    let mf = m as f64;
    let e1 = &cert.eta1;
    let e2 = &cert.eta2;
    let head1: f64 = e1[..m].iter().sum();
    let gamma_bound = constants.c1 / (mf.sqrt() * sigma_n)
        * (head1 + mf.sqrt() * eta_weighted_sum_from(e1, &cert.eta1_tail, m));

    let half = m / 2;
    let weighted2: f64 = (1..=half).map(|i| i as f64 * e2[i - 1]).sum();
    let cross: f64 = (1..=half)
        .map(|i| eta_sum_from(e1, &cert.eta1_tail, 2 * i))
        .sum();
    let tail2 = eta_sum_from(e2, &cert.eta2_tail, m.div_ceil(2).max(1));
    let delta_sq_bound = constants.c2 / (mf * sigma_n * sigma_n)
        * (head1 * head1 + weighted2 + bound_x0 * cross + mf * tail2);

    let regime = match cert.beta {
        Some(b) => Some(delta_rate(b)?),
        None => None,
    };
    Ok(CertifiedBounds {
        m,
        n,
        gamma_bound,
        delta_sq_bound,
        constants,
        regime,
    })
}

/// What the block size is tuned for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Cramer,
    BerryEsseen,
}

impl std::str::FromStr for Purpose {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cramer" => Ok(Purpose::Cramer),
            "berry_esseen" => Ok(Purpose::BerryEsseen),
            other => Err(format!("unknown purpose '{other}' (cramer|berry_esseen)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockChoice {
    pub m: usize,
    pub purpose: Purpose,
    /// `m ~ n^exponent`.
    pub exponent: f64,
    /// For [`Purpose::Cramer`], the scale of the admissible x-range; for
    /// [`Purpose::BerryEsseen`], the predicted rate.
    pub scale: f64,
    pub label: String,
}

fn floor_pow(n: usize, e: f64) -> usize {
    let x = (n as f64).powf(e);
    (x + 1e-9 * x).floor() as usize
}

/// Block size and the accompanying range or rate for decay exponent `beta`.
pub fn select_block_size(n: usize, beta: f64, purpose: Purpose) -> Result<BlockChoice> {
    if !(beta > 1.0) {
        return Err(Error::BetaOutOfRange(beta));
    }
    if n < 2 {
        return Err(Error::ParamOutOfRange {
            name: "n",
            value: n as f64,
            range: "n >= 2",
        });
    }
    let nf = n as f64;
    let ln = nf.ln();
    let (exponent, scale, label) = match purpose {
        Purpose::Cramer if beta >= 1.5 => (
            2.0 / 7.0,
            nf.powf(1.0 / 14.0) / ln.sqrt(),
            "x = o(n^{1/14} / sqrt(ln n))".to_string(),
        ),
        Purpose::Cramer => {
            let r = (beta - 1.0) / (6.0 * beta - 2.0);
            (1.0 / (3.0 * beta - 1.0), nf.powf(r), format!("x = o(n^{r})"))
        }
        Purpose::BerryEsseen if beta >= 2.0 => (
            1.0 / 3.0,
            nf.powf(-1.0 / 6.0) * ln,
            "n^{-1/6} ln n".to_string(),
        ),
        Purpose::BerryEsseen => {
            let r = (beta - 1.0) / (2.0 * beta + 2.0);
            (
                1.0 / (beta + 1.0),
                nf.powf(-r) * ln,
                format!("n^{{-{r}}} ln n"),
            )
        }
    };
    let m = floor_pow(n, exponent).clamp(1, n);
    Ok(BlockChoice {
        m,
        purpose,
        exponent,
        scale,
        label,
    })
}

/// Summary of the two series conditions on the conditional moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedeckerReport {
    pub horizon: usize,
    /// `sum_{k<=j} k^{-3/2} ||E[S_k|F_0]||` for `j = 1..=horizon`.
    pub partial_sums: Vec<f64>,
    /// Certified enclosure of `sum_{k > horizon} k^{-3/2} ||E[S_k|F_0]||`.
    pub tail_lo: f64,
    pub tail_hi: f64,
    /// `||E[S_k^2|F_0]/k - sigma^2||` for `k = 1..=horizon`.
    pub variance_deviation: Vec<f64>,
    /// `sigma^2 = sum_k Cov(X_0, X_k)`.
    pub sigma_sq: f64,
    /// Per-step contraction rate behind the certificate.
    pub decay_rate: f64,
    pub series_converges: bool,
}

impl DedeckerReport {
    pub fn tail_width(&self) -> f64 {
        self.tail_hi - self.tail_lo
    }
}

// sigma^2 = pi(X^2) + 2 pi(X g), g = sum_{t>=1} P^t X
fn variance_from_walk(chain: &FiniteLatticeModel, walk: &ConditionalMeanWalk) -> f64 {
    let x = chain.centered();
    let mut g = vec![0.0; chain.len()];
    let mut v = x.to_vec();
    for _ in 0..walk.norms.len() {
        v = chain.apply(&v);
        g.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
    }
    let sq: Vec<f64> = x.iter().map(|a| a * a).collect();
    let cross: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a * b).collect();
    chain.stationary_mean(&sq) + 2.0 * chain.stationary_mean(&cross)
}

/// Long-run variance `sigma^2 = lim_n sigma_n^2`.
pub fn long_run_variance(model: &ModelSpec) -> Result<f64> {
    match model {
        ModelSpec::Sampled(s) => Ok(s.weights().iter().sum::<f64>().powi(2)),
        ModelSpec::Exact(chain) => {
            chain.contraction().ok_or(Error::NoDecayCertificate)?;
            let walk = ConditionalMeanWalk::run(chain, 1e-15 * chain.bound(), 1)?;
            Ok(variance_from_walk(chain, &walk))
        }
    }
}

/// Partial sums and certified tail of `sum n^{-3/2} ||E[S_n|F_0]||`, and the
/// deviation of `E[S_n^2|F_0]/n` from `sigma^2`.
pub fn check_dedecker_conditions(model: &ModelSpec, horizon: usize) -> Result<DedeckerReport> {
    let chain = model.exact()?;
    let contraction = chain.contraction().ok_or(Error::NoDecayCertificate)?;
    let horizon = horizon.max(1);
    let walk = ConditionalMeanWalk::run(chain, 1e-15 * chain.bound(), horizon)?;
    let x = chain.centered();
    let sigma_sq = variance_from_walk(chain, &walk);

    let mut partial_sums = Vec::with_capacity(horizon);
    let mut acc = 0.0;
    for k in 1..=horizon {
        acc += (k as f64).powf(-1.5) * walk.norm(k);
        partial_sums.push(acc);
    }
    let slack = walk.remainder(horizon) + walk.limit_remainder;
    let zt = zeta_three_halves_tail(horizon);
    let tail_lo = (walk.limit_norm - slack).max(0.0) * zt;
    let tail_hi = (walk.limit_norm + slack) * zt;

    // E[S_k | Y_0], E[S_k^2 | Y_0] forward in k: a_k = P(X + a_{k-1}), etc.
    let size = chain.len();
    let mut a = vec![0.0; size];
    let mut b = vec![0.0; size];
    let mut variance_deviation = Vec::with_capacity(horizon);
    for k in 1..=horizon {
        let mut na = vec![0.0; size];
        let mut nb = vec![0.0; size];
        for (s, row) in chain.rows().iter().enumerate() {
            for &(u, p) in row {
                na[s] += p * (x[u] + a[u]);
                nb[s] += p * (x[u] * x[u] + 2.0 * x[u] * a[u] + b[u]);
            }
        }
        a = na;
        b = nb;
        let kf = k as f64;
        variance_deviation.push(b.iter().fold(0.0f64, |m, &v| m.max((v / kf - sigma_sq).abs())));
    }
    Ok(DedeckerReport {
        horizon,
        partial_sums,
        tail_lo,
        tail_hi,
        variance_deviation,
        sigma_sq,
        decay_rate: contraction.rate(),
        series_converges: tail_hi.is_finite(),
    })
}

/// Smallest constant `C` with `exact[i] <= C * bound[i]` over the supplied pairs.
pub fn calibrate_constant(exact: &[f64], bound: &[f64]) -> f64 {
    exact
        .iter()
        .zip(bound)
        .filter(|(_, &b)| b > 0.0)
        .map(|(&e, &b)| e / b)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{dyadic_contracting, two_state, Builtin};
    use proptest::prelude::*;

    fn rad() -> ModelSpec {
        Builtin::Rademacher.build().unwrap()
    }

    fn ts(rho: f64) -> ModelSpec {
        ModelSpec::Exact(two_state(rho).unwrap())
    }

    #[test]
    fn zeta_tail_matches_constant() {
        assert!((zeta_three_halves_tail(0) - ZETA_THREE_HALVES).abs() < 1e-14);
        let brute: f64 = (1..=10).map(|k| (k as f64).powf(-1.5)).sum();
        assert!((zeta_three_halves_tail(10) - (ZETA_THREE_HALVES - brute)).abs() < 1e-14);
        let big = 1_000_000usize;
        let approx = 2.0 / (big as f64).sqrt();
        assert!((zeta_three_halves_tail(big) / approx - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rademacher_coefficients() {
        let c = coefficient_set(&rad(), 400, 5, DEFAULT_GAMMA_TOL).unwrap();
        assert_eq!(c.gamma_m, 0.0);
        assert!(c.delta_m < 1e-12);
        assert!((c.eps_m - 0.25).abs() < 1e-15);
        assert!((c.tau_m_sq - (5.0 / 400.0 + 0.25)).abs() < 1e-12);
    }

    #[test]
    fn two_state_gamma_certified() {
        let c = coefficient_set(&ts(0.4), 120, 6, DEFAULT_GAMMA_TOL).unwrap();
        assert!(c.gamma_m > 0.0);
        assert!(c.gamma_truncation_error < 1e-10);
        // closed form: ||E[S_N|F_0]|| = rho (1 - rho^N) / (1 - rho)
        let rho: f64 = 0.4;
        let sum: f64 = (1..200_000)
            .map(|j| (j as f64).powf(-1.5) * rho * (1.0 - rho.powi(6 * j)) / (1.0 - rho))
            .sum::<f64>()
            + rho / (1.0 - rho) * zeta_three_halves_tail(199_999);
        let want = sum / (6f64.sqrt() * c.sigma_n);
        assert!((c.gamma_m - want).abs() < 1e-10, "{} vs {want}", c.gamma_m);
    }

    #[test]
    fn errors_reported() {
        let s = builtin_ma();
        assert_eq!(
            coefficient_set(&s, 10, 2, 1e-10).unwrap_err(),
            Error::SampledTierUnsupported
        );
        assert!(matches!(
            coefficient_set(&rad(), 10, 11, 1e-10),
            Err(Error::ParamOutOfRange { name: "m", .. })
        ));
    }

    fn builtin_ma() -> ModelSpec {
        Builtin::MovingAverage {
            c: 1.0,
            truncation: 20,
        }
        .build()
        .unwrap()
    }

    #[test]
    fn certificate_examples() {
        let c = eta_certificate(&ts(0.4), 40).unwrap();
        for k in 1..=30 {
            assert!((c.eta1_at(k) - 0.4f64.powi(k as i32)).abs() < 1e-14);
        }
        assert!(c.beta_is_fit);
        let r = eta_certificate(&rad(), 16).unwrap();
        assert!(r.eta1.iter().chain(&r.eta2).all(|&v| v == 0.0));
        assert_eq!(r.beta, None);
        let l = 10;
        let d = eta_certificate(&ModelSpec::Exact(dyadic_contracting(l).unwrap()), 24).unwrap();
        for k in 1..=24 {
            let allowed = 0.5f64.powi(k as i32 + 1) + 0.5f64.powi(l as i32);
            assert!(d.eta1_at(k) <= allowed, "k = {k}: {}", d.eta1_at(k));
        }
        for w in d.eta1.windows(2).chain(d.eta2.windows(2)) {
            assert!(w[1] <= w[0]);
        }
        let ma = eta_certificate(&builtin_ma(), 0).unwrap();
        assert!((ma.eta1_at(3) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn eta2_two_state_exact() {
        // X_i X_j for i < j: E[X_i X_j | Y_0] = rho^{j-i} (constant), so eta2 = 0;
        // the diagonal X_i^2 = 1 is constant too. What remains is the certified
        // slack 2 ||X|| osc(P^{K+1} X) = 4 rho^{K+1} for pairs beyond the window.
        let c = eta_certificate(&ts(0.4), 20).unwrap();
        let slack = 4.0 * 0.4f64.powi(21);
        assert!(c.eta2.iter().all(|&v| v <= slack * (1.0 + 1e-12)), "{:?}", &c.eta2[..3]);
    }

    #[test]
    fn certified_bounds_vanish_for_martingales() {
        let cert = eta_certificate(&rad(), 32).unwrap();
        let b = certified_coefficient_bounds(&cert, 16, 256, 1.0, 1.0, CertificateConstants::default()).unwrap();
        assert_eq!(b.gamma_bound, 0.0);
        assert_eq!(b.delta_sq_bound, 0.0);
        assert!(matches!(
            certified_coefficient_bounds(&cert, 64, 256, 1.0, 1.0, CertificateConstants::default()),
            Err(Error::InsufficientCertificateLength { have: 32, need: 64 })
        ));
    }

    #[test]
    fn delta_regimes() {
        assert_eq!(delta_rate(2.5).unwrap().label(), "m^{-1/2}");
        assert_eq!(delta_rate(2.0).unwrap(), DeltaRate::InverseSqrtLog);
        assert_eq!(
            delta_rate(1.5).unwrap(),
            DeltaRate::Power { exponent: 0.25 }
        );
        assert!(matches!(delta_rate(1.0), Err(Error::BetaOutOfRange(_))));
    }

    #[test]
    fn block_size_examples() {
        assert_eq!(select_block_size(128, 2.0, Purpose::Cramer).unwrap().m, 4);
        assert_eq!(
            select_block_size(1000, 2.5, Purpose::BerryEsseen).unwrap().m,
            10
        );
        assert_eq!(
            select_block_size(1024, 1.5, Purpose::BerryEsseen).unwrap().m,
            16
        );
        assert_eq!(
            select_block_size(1024, f64::INFINITY, Purpose::Cramer)
                .unwrap()
                .m,
            7
        );
        assert!(matches!(
            select_block_size(100, 1.0, Purpose::Cramer),
            Err(Error::BetaOutOfRange(_))
        ));
    }

    #[test]
    fn block_size_on_powers_of_two() {
        for p in 1..=30u32 {
            let n = 1usize << p;
            let c = select_block_size(n, 3.0, Purpose::BerryEsseen).unwrap();
            // m^3 <= n < (m+1)^3
            let m = c.m as u128;
            assert!(m * m * m <= n as u128 && (m + 1).pow(3) > n as u128, "n = {n}");
            let c = select_block_size(n, 3.0, Purpose::Cramer).unwrap();
            let m = c.m as u128;
            let n2 = (n as u128) * (n as u128);
            assert!(m.pow(7) <= n2 && (m + 1).pow(7) > n2, "n = {n}");
        }
    }

    #[test]
    fn dedecker_examples() {
        let r = check_dedecker_conditions(&rad(), 100).unwrap();
        assert!(r.partial_sums.iter().all(|&v| v == 0.0));
        assert!(r.variance_deviation.iter().all(|&v| v < 1e-12));
        let t = check_dedecker_conditions(&ts(0.4), 10_000).unwrap();
        assert!(t.series_converges && t.tail_width() < 1e-8);
        assert!((t.sigma_sq - 7.0 / 3.0).abs() < 1e-12);
        let slow = check_dedecker_conditions(&ts(0.99), 10_000).unwrap();
        assert!(slow.series_converges);
        assert!(slow.decay_rate > 0.98);
        assert!(slow.partial_sums[9_999] > 10.0 * t.partial_sums[9_999]);
    }

    #[test]
    fn gates() {
        let c = coefficient_set(&rad(), 400, 5, DEFAULT_GAMMA_TOL).unwrap();
        assert!(Gates::new(GateMode::Strict).check(&c).passed);
        let t = coefficient_set(&ts(0.4), 1024, 7, DEFAULT_GAMMA_TOL).unwrap();
        let v = Gates::new(GateMode::Strict).check(&t);
        assert!(!v.gamma_ok);
    }

    proptest! {
        #[test]
        fn eps_increasing_in_m(n in 16usize..2000, m in 1usize..15) {
            let a = coefficient_set(&ts(0.3), n, m, 1e-8).unwrap();
            let b = coefficient_set(&ts(0.3), n, m + 1, 1e-8).unwrap();
            prop_assert!(b.eps_m > a.eps_m);
            prop_assert!(a.tau_m_sq >= a.delta_m_sq);
            prop_assert!(a.gamma_m >= 0.0 && a.delta_m >= 0.0);
        }

        #[test]
        fn rademacher_is_martingale(n in 1usize..300, m in 1usize..16) {
            prop_assume!(m <= n);
            let c = coefficient_set(&rad(), n, m, 1e-10).unwrap();
            prop_assert!(c.gamma_m.abs() < 1e-12 && c.delta_m < 1e-12);
        }
    }
}
