//! Evaluators for the explicit inequalities: the Cramér-type envelopes, the
//! Berry-Esseen rate, the Bernstein-type, Freedman and Peligrad tail bounds,
//! and the two-sided normal tail sandwich.

use crate::coefficients::{CoefficientSet, GateMode, Gates};
use crate::error::{Error, Result};
use crate::logspace::{log_add_exp, x_abs_ln_x};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};

/// `ln(4 sqrt(e))`.
pub const LN_FOUR_SQRT_E: f64 = 1.886_294_361_119_890_6;

fn check_x(x: f64) -> Result<()> {
    if x < 0.0 || x.is_nan() {
        Err(Error::NegativeX(x))
    } else {
        Ok(())
    }
}

/// Which inequality a [`BoundCurve`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    CramerEnvelope,
    MartingaleEnvelope,
    Bernstein,
    Freedman,
    Peligrad,
    SandwichLower,
    SandwichUpper,
}

/// An inequality evaluated on a grid, with per-point validity flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCurve {
    pub kind: BoundKind,
    pub x_grid: Vec<f64>,
    pub value: Vec<f64>,
    pub valid: Vec<bool>,
    pub gate_mode: GateMode,
    /// Constants used; unknown absolute constants are reported with `shape_mode = 1`.
    pub constants: BTreeMap<String, f64>,
}

impl BoundCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,value,valid\n");
        for ((x, v), ok) in self.x_grid.iter().zip(&self.value).zip(&self.valid) {
            out.push_str(&format!("{x},{v},{ok}\n"));
        }
        out
    }
}

/// `C (x^3 eps + x^2 (delta^2 + m/n + g) + (1 + x)(eps|ln eps| + g + delta + sqrt(m/n)))`
/// with `g = gamma |ln gamma|`; a bound on the log-ratio of the tail to the normal tail.
pub fn cramer_envelope(c: &CoefficientSet, x: f64, constant: f64) -> Result<f64> {
    check_x(x)?;
    let g = c.gamma_log_gamma();
    let mn = c.m as f64 / c.n as f64;
    Ok(constant
        * (x.powi(3) * c.eps_m
            + x * x * (c.delta_m_sq + mn + g)
            + (1.0 + x) * (c.eps_log_eps() + g + c.delta_m + mn.sqrt())))
}

/// Whether `x` lies in the admissible range `x <= alpha_0 / eps_m` and the gates pass.
pub fn cramer_valid(c: &CoefficientSet, x: f64, gates: &Gates) -> bool {
    x >= 0.0 && x * c.eps_m <= gates.alpha0 && gates.check(c).passed
}

pub fn cramer_envelope_curve(
    c: &CoefficientSet,
    grid: &[f64],
    constant: f64,
    gates: &Gates,
) -> Result<BoundCurve> {
    let value = grid
        .iter()
        .map(|&x| cramer_envelope(c, x, constant))
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundCurve {
        kind: BoundKind::CramerEnvelope,
        x_grid: grid.to_vec(),
        value,
        valid: grid.iter().map(|&x| cramer_valid(c, x, gates)).collect(),
        gate_mode: gates.mode,
        constants: BTreeMap::from([
            ("C".to_string(), constant),
            ("alpha0".to_string(), gates.alpha0),
            ("shape_mode".to_string(), 1.0),
        ]),
    })
}

/// `C (x^3 eps + x^2 iota^2 + (1 + x)(eps |ln eps| + iota))` for martingales with
/// differences bounded by `eps` and quadratic characteristic within `iota^2` of 1.
pub fn martingale_cramer_envelope(eps: f64, iota: f64, x: f64, constant: f64) -> Result<f64> {
    check_x(x)?;
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(Error::ParamOutOfRange {
            name: "eps",
            value: eps,
            range: "0 < eps <= 1/2",
        });
    }
    if !(0.0..=0.5).contains(&iota) {
        return Err(Error::ParamOutOfRange {
            name: "iota",
            value: iota,
            range: "0 <= iota <= 1/2",
        });
    }
    Ok(constant * (x.powi(3) * eps + x * x * iota * iota + (1.0 + x) * (x_abs_ln_x(eps) + iota)))
}

/// Whether `x` is inside `[0, alpha_0 / eps]`.
pub fn martingale_envelope_valid(eps: f64, x: f64, alpha0: f64) -> bool {
    x >= 0.0 && x * eps <= alpha0
}

/// `C (gamma|ln gamma| + eps|ln eps| + delta + sqrt(m/n))`.
pub fn berry_esseen_bound(c: &CoefficientSet, constant: f64) -> f64 {
    constant * c.varsigma()
}

/// Natural log of the Bernstein-type bound from raw ingredients.
pub fn log_bernstein_bound_raw(gamma: f64, eps: f64, tau_sq: f64, x: f64) -> Result<f64> {
    check_x(x)?;
    let g = x_abs_ln_x(gamma);
    if g >= 1.0 {
        return Err(Error::GammaTooLarge(g));
    }
    let h = 1.0 - g;
    let first = -(h * h * x * x) / (2.0 * (1.0 + tau_sq + (2.0 / 3.0) * eps * h * x));
    let second = if gamma == 0.0 {
        f64::NEG_INFINITY
    } else {
        let l = gamma.ln();
        LN_FOUR_SQRT_E - l * l * x * x / (2.0 * 81.0 * 81.0)
    };
    Ok(log_add_exp(first, second))
}

/// `exp{-(1-g)^2 x^2 / (2(1 + tau^2 + (2/3) eps (1-g) x))} + 4 sqrt(e) exp{-(ln gamma)^2 x^2 / (2 81^2)}`.
pub fn bernstein_bound_raw(gamma: f64, eps: f64, tau_sq: f64, x: f64) -> Result<f64> {
    log_bernstein_bound_raw(gamma, eps, tau_sq, x).map(f64::exp)
}

pub fn bernstein_bound(c: &CoefficientSet, x: f64) -> Result<f64> {
    bernstein_bound_raw(c.gamma_m, c.eps_m, c.tau_m_sq, x)
}

pub fn log_bernstein_bound(c: &CoefficientSet, x: f64) -> Result<f64> {
    log_bernstein_bound_raw(c.gamma_m, c.eps_m, c.tau_m_sq, x)
}

pub fn bernstein_curve(c: &CoefficientSet, grid: &[f64]) -> Result<BoundCurve> {
    let value = grid
        .iter()
        .map(|&x| bernstein_bound(c, x))
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundCurve {
        kind: BoundKind::Bernstein,
        x_grid: grid.to_vec(),
        value,
        valid: grid.iter().map(|&x| x > 0.0).collect(),
        gate_mode: GateMode::Practical,
        constants: BTreeMap::new(),
    })
}

/// `ln exp{-x^2 / (2 (v^2 + a x / 3))}`.
pub fn log_freedman_bound(x: f64, v2: f64, a: f64) -> f64 {
    -(x * x) / (2.0 * (v2 + a * x / 3.0))
}

pub fn freedman_bound(x: f64, v2: f64, a: f64) -> f64 {
    log_freedman_bound(x, v2, a).exp()
}

/// `ln` of `4 sqrt(e) exp{-x^2 / (2 n (||X_1|| + 80 sum_{j<=n} j^{-3/2} ||E[S_j|F_0]||)^2)}`.
pub fn log_peligrad_bound(x: f64, n: usize, bound_x1: f64, cond_norms: &[f64]) -> Result<f64> {
    if cond_norms.len() < n {
        return Err(Error::MissingNorms {
            have: cond_norms.len(),
            need: n,
        });
    }
    let series: f64 = cond_norms[..n]
        .iter()
        .enumerate()
        .map(|(j, v)| ((j + 1) as f64).powf(-1.5) * v)
        .sum();
    let s = bound_x1 + 80.0 * series;
    Ok(LN_FOUR_SQRT_E - x * x / (2.0 * n as f64 * s * s))
}

pub fn peligrad_bound(x: f64, n: usize, bound_x1: f64, cond_norms: &[f64]) -> Result<f64> {
    log_peligrad_bound(x, n, bound_x1, cond_norms).map(f64::exp)
}

/// `(e^{-x^2/2} / (sqrt(2 pi)(1 + x)), e^{-x^2/2} / (sqrt(pi)(1 + x)))`.
pub fn gaussian_tail_sandwich(x: f64) -> Result<(f64, f64)> {
    check_x(x)?;
    let core = (-0.5 * x * x).exp() / (PI.sqrt() * (1.0 + x));
    Ok((core / SQRT_2, core))
}

/// `min{eps^{-1/3}, delta^{-1}, sqrt(n/m), (gamma|ln gamma|)^{-1/2}}`, zero
/// coefficients contributing `+inf`.
pub fn uniform_x_range(c: &CoefficientSet) -> f64 {
    let inv = |v: f64, p: f64| {
        if v > 0.0 {
            v.powf(-p)
        } else {
            f64::INFINITY
        }
    };
    inv(c.eps_m, 1.0 / 3.0)
        .min(inv(c.delta_m, 1.0))
        .min((c.n as f64 / c.m as f64).sqrt())
        .min(inv(c.gamma_log_gamma(), 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal;
    use proptest::prelude::*;

    fn rad(n: usize, m: usize) -> CoefficientSet {
        CoefficientSet::from_parts(n, m, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0)
    }

    #[test]
    fn cramer_examples() {
        let c = rad(400, 5);
        let x0 = cramer_envelope(&c, 0.0, 1.0).unwrap();
        assert!((x0 - (0.25 * 4f64.ln() + (5.0f64 / 400.0).sqrt())).abs() < 1e-15);
        // 0.25 + 0.0125 + 2 (0.25 ln 4 + sqrt(1/80))
        let x1 = cramer_envelope(&c, 1.0, 1.0).unwrap();
        assert!((x1 - 1.179_253_978_309_924).abs() < 1e-14);
        assert!(matches!(
            cramer_envelope(&c, -1.0, 1.0),
            Err(Error::NegativeX(_))
        ));
        assert!(cramer_valid(&c, 2.0, &Gates::default()));
        assert!(!cramer_valid(&c, 2.1, &Gates::default()));
    }

    #[test]
    fn martingale_examples() {
        let v = martingale_cramer_envelope(0.1, 0.05, 0.0, 1.0).unwrap();
        assert!((v - (0.1 * 10f64.ln() + 0.05)).abs() < 1e-15);
        // 8 * 0.1 + 4 * 0.0025 + 3 * (0.1 ln 10 + 0.05)
        let v = martingale_cramer_envelope(0.1, 0.05, 2.0, 1.0).unwrap();
        assert!((v - 1.650_775_527_898_214).abs() < 1e-14);
        let mut prev = 0.0;
        for i in 0..50 {
            let v = martingale_cramer_envelope(0.2, 0.0, i as f64 * 0.1, 1.0).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        assert!(matches!(
            martingale_cramer_envelope(0.7, 0.0, 1.0, 1.0),
            Err(Error::ParamOutOfRange { name: "eps", .. })
        ));
    }

    #[test]
    fn berry_esseen_examples() {
        let c = rad(1000, 10);
        assert!((berry_esseen_bound(&c, 1.0) - 0.464_070_670_010_59).abs() < 1e-12);
        let tiny = rad(1 << 60, 1);
        assert!(berry_esseen_bound(&tiny, 1.0) < 1e-7);
    }

    #[test]
    fn bernstein_examples() {
        let c = rad(1000, 10);
        let near0 = bernstein_bound_raw(0.01, c.eps_m, c.tau_m_sq, 1e-9).unwrap();
        assert!((near0 - (1.0 + 4.0 * 0.5f64.exp())).abs() < 1e-6);
        let v = bernstein_bound_raw(0.0, 0.1, 0.0, 1.0).unwrap();
        assert!((v - 0.625_784_009_604_591_1).abs() < 1e-15);
        let v = bernstein_bound(&c, 2.0).unwrap();
        let want = (-4.0 / (2.0 * (1.0 + c.tau_m_sq + (2.0 / 3.0) * c.eps_m * 2.0))).exp();
        assert!((v - want).abs() < 1e-15);
        assert!(matches!(
            bernstein_bound_raw(2.0, 0.1, 0.0, 1.0),
            Err(Error::GammaTooLarge(_))
        ));
    }

    #[test]
    fn freedman_examples() {
        assert_eq!(freedman_bound(0.0, 1.0, 0.3), 1.0);
        assert!((freedman_bound(2.0, 1.0, 0.0) - (-2.0f64).exp()).abs() < 1e-16);
        assert!((freedman_bound(1.0, 1.0, 0.1) - 0.616_392_731_327_227).abs() < 1e-14);
    }

    #[test]
    fn peligrad_examples() {
        let v = peligrad_bound(0.0, 3, 1.0, &[0.0; 3]).unwrap();
        assert!((v - 4.0 * 0.5f64.exp()).abs() < 1e-14);
        let v = peligrad_bound(2.0, 1, 1.0, &[0.0]).unwrap();
        assert!((v - 0.892_520_640_593_719_3).abs() < 1e-14);
        assert_eq!(
            peligrad_bound(1.0, 4, 1.0, &[0.0; 2]).unwrap_err(),
            Error::MissingNorms { have: 2, need: 4 }
        );
    }

    #[test]
    fn sandwich_examples() {
        let (lo, hi) = gaussian_tail_sandwich(0.0).unwrap();
        assert!((lo - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!((hi - 0.564_189_583_547_756_3).abs() < 1e-15);
        let (lo, hi) = gaussian_tail_sandwich(1.0).unwrap();
        assert!((lo - 0.120_985_362_259_571_67).abs() < 1e-15);
        assert!((hi - 0.171_099_140_156_108_27).abs() < 1e-15);
        assert!(lo <= normal::sf(1.0) && normal::sf(1.0) <= hi);
        assert!(gaussian_tail_sandwich(-0.1).is_err());
    }

    #[test]
    fn range_examples() {
        let c = rad(400, 5);
        assert!((uniform_x_range(&c) - 0.25f64.powf(-1.0 / 3.0)).abs() < 1e-14);
        let mut z = rad(1 << 50, 1);
        z.eps_m = 0.0;
        assert!(uniform_x_range(&z) > 1e7);
        let mut d = rad(1 << 30, 1);
        d.eps_m = 1e-9;
        d.delta_m = 0.1;
        assert!((uniform_x_range(&d) - 10.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn envelope_non_decreasing(
            eps in 0.0f64..0.5, gamma in 0.0f64..0.3, dsq in 0.0f64..0.4,
            n in 10usize..100_000, x in 0.0f64..10.0, dx in 0.0f64..1.0,
        ) {
            let mut c = rad(n, 1);
            c.eps_m = eps;
            c.gamma_m = gamma;
            c.delta_m_sq = dsq;
            c.delta_m = dsq.sqrt();
            let a = cramer_envelope(&c, x, 1.0).unwrap();
            let b = cramer_envelope(&c, x + dx, 1.0).unwrap();
            prop_assert!(b >= a);
            prop_assert_eq!(a.to_bits(), cramer_envelope(&c, x, 1.0).unwrap().to_bits());
        }

        #[test]
        fn sandwich_holds(x in 0.0f64..8.0) {
            let (lo, hi) = gaussian_tail_sandwich(x).unwrap();
            let t = normal::sf(x);
            prop_assert!(lo <= t && t <= hi);
        }

        #[test]
        fn bernstein_bounded(gamma in 0.0f64..0.3, eps in 0.0f64..1.0, tau in 0.0f64..2.0, x in 0.0f64..20.0) {
            let v = bernstein_bound_raw(gamma, eps, tau, x).unwrap();
            prop_assert!(v <= 1.0 + 4.0 * 0.5f64.exp() + 1e-12);
        }
    }
}
