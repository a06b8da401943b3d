//! Exact computations for finite lattice chains: covariances, `sigma_n`,
//! conditional block moments and the law of `S_n` by log-space dynamic
//! programming.

use crate::error::{Error, Result};
use crate::logspace::{log_add_exp, log_sum_exp_pairwise};
use crate::models::{FiniteLatticeModel, ModelSpec};
use crate::normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use libm::lgamma as ln_gamma;

/// Default memory ceiling for the lattice DP (2 GiB).
pub const DEFAULT_MEMORY_BUDGET: u128 = 2 << 30;
/// Variances at or below this are treated as zero.
pub const VARIANCE_FLOOR: f64 = 1e-14;
/// Relative slack used when deciding whether a lattice atom meets a threshold.
pub const ATOM_TOLERANCE: f64 = 1e-9;

const PAR_CHUNK: usize = 2048;

/// `Cov(X_0, X_k)` under the stationary law.
pub fn autocovariance(model: &ModelSpec, k: usize) -> Result<f64> {
    let m = model.exact()?;
    let mut v = m.centered().to_vec();
    for _ in 0..k {
        v = m.apply(&v);
    }
    Ok(weighted_dot(m, m.centered(), &v))
}

/// `gamma(0), ..., gamma(len - 1)`.
pub fn autocovariances(model: &FiniteLatticeModel, len: usize) -> Vec<f64> {
    let x = model.centered();
    let mut v = x.to_vec();
    let mut out = Vec::with_capacity(len);
    for k in 0..len {
        if k > 0 {
            v = model.apply(&v);
        }
        out.push(weighted_dot(model, x, &v));
    }
    out
}

fn weighted_dot(model: &FiniteLatticeModel, a: &[f64], b: &[f64]) -> f64 {
    model
        .pi()
        .iter()
        .zip(a.iter().zip(b))
        .map(|(p, (x, y))| p * x * y)
        .sum()
}

/// `sigma_n = sqrt(E W_n^2)`.
pub fn sigma_n(model: &ModelSpec, n: usize) -> Result<f64> {
    sigma_n_exact(model.exact()?, n)
}

pub(crate) fn sigma_n_exact(model: &FiniteLatticeModel, n: usize) -> Result<f64> {
    let n = n.max(1);
    let gam = autocovariances(model, n);
    let nf = n as f64;
    let tail: f64 = gam
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, g)| (1.0 - k as f64 / nf) * g)
        .sum();
    let var = gam[0] + 2.0 * tail;
    if var <= VARIANCE_FLOOR {
        return Err(Error::DegenerateVariance(var));
    }
    Ok(var.sqrt())
}

/// Per-state first and second conditional moments of a block sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMoments {
    pub m: usize,
    /// `E[S_m | Y_0 = s]`.
    pub mean_by_state: Vec<f64>,
    /// `E[S_m^2 | Y_0 = s]`.
    pub second_by_state: Vec<f64>,
    /// `max_s |E[S_m | Y_0 = s]|`.
    pub sup_mean: f64,
}

impl ConditionalMoments {
    /// `max_s |E[S_m^2 | Y_0 = s] / (m sigma^2) - 1|`.
    pub fn sup_second_dev(&self, sigma_n: f64) -> f64 {
        let scale = self.m as f64 * sigma_n * sigma_n;
        self.second_by_state
            .iter()
            .map(|&b| (b / scale - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `max_s |Var(S_m | Y_0 = s) / (m sigma^2) - 1|`, i.e. the same deviation for
    /// the martingale difference `S_m - E[S_m | F_0]`.
    pub fn sup_conditional_variance_dev(&self, sigma_n: f64) -> f64 {
        let scale = self.m as f64 * sigma_n * sigma_n;
        self.second_by_state
            .iter()
            .zip(&self.mean_by_state)
            .map(|(&b, &a)| ((b - a * a) / scale - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// `E[S_m | Y_0]` and `E[S_m^2 | Y_0]` by backward recursion over block length.
pub fn conditional_block_moments(model: &ModelSpec, m: usize) -> Result<ConditionalMoments> {
    Ok(block_moments(model.exact()?, m))
}

pub(crate) fn block_moments(model: &FiniteLatticeModel, m: usize) -> ConditionalMoments {
    let x = model.centered();
    let size = model.len();
    let mut a = vec![0.0; size];
    let mut b = vec![0.0; size];
    for _ in 0..m {
        let mut na = vec![0.0; size];
        let mut nb = vec![0.0; size];
        for (s, row) in model.rows().iter().enumerate() {
            let (mut fa, mut fb) = (0.0, 0.0);
            for &(u, p) in row {
                fa += p * (x[u] + a[u]);
                fb += p * (x[u] * x[u] + 2.0 * x[u] * a[u] + b[u]);
            }
            na[s] = fa;
            nb[s] = fb;
        }
        a = na;
        b = nb;
    }
    let sup_mean = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    ConditionalMoments {
        m,
        mean_by_state: a,
        second_by_state: b,
        sup_mean,
    }
}

/// `||E[S_j | F_0]||_inf` for `j = 1..=len`.
pub fn conditional_mean_norms(model: &FiniteLatticeModel, len: usize) -> Vec<f64> {
    let mut v = model.centered().to_vec();
    let mut c = vec![0.0; model.len()];
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        v = model.apply(&v);
        c.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
        out.push(sup_norm(&c));
    }
    out
}

pub(crate) fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

pub(crate) fn oscillation(v: &[f64]) -> f64 {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if v.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Exact law of `S_n` on the lattice `(k - center) / denom`, stored as
/// log-probabilities for `k = k_min, k_min + 1, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct TailTable {
    n: usize,
    denom: u64,
    k_min: i64,
    logp: Vec<f64>,
    center: f64,
    sigma_n: f64,
    log_sf: Vec<f64>,
    log_cdf: Vec<f64>,
}

/// Serialised form of a [`TailTable`]: only atoms of positive mass are listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailTableJson {
    pub n: usize,
    pub denom: u64,
    pub center: f64,
    pub sigma_n: f64,
    pub offsets: Vec<i64>,
    pub logp: Vec<f64>,
}

impl TailTable {
    /// Builds a table from dense log-masses starting at integer `k_min`.
    pub fn from_log_masses(
        n: usize,
        denom: u64,
        center: f64,
        sigma_n: f64,
        k_min: i64,
        logp: Vec<f64>,
    ) -> Self {
        let len = logp.len();
        let mut log_sf = vec![f64::NEG_INFINITY; len];
        let mut acc = f64::NEG_INFINITY;
        for i in (0..len).rev() {
            acc = log_add_exp(acc, logp[i]);
            log_sf[i] = acc;
        }
        let mut log_cdf = vec![f64::NEG_INFINITY; len];
        let mut acc = f64::NEG_INFINITY;
        for i in 0..len {
            acc = log_add_exp(acc, logp[i]);
            log_cdf[i] = acc;
        }
        Self {
            n,
            denom,
            k_min,
            logp,
            center,
            sigma_n,
            log_sf,
            log_cdf,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn denom(&self) -> u64 {
        self.denom
    }

    pub fn sigma_n(&self) -> f64 {
        self.sigma_n
    }

    /// Lattice origin: `S_n = (k - center) / denom`.
    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn k_min(&self) -> i64 {
        self.k_min
    }

    /// Dense log-masses for `k = k_min ..`.
    pub fn log_masses(&self) -> &[f64] {
        &self.logp
    }

    /// `ln sum_k P(k)`; zero up to rounding.
    pub fn log_total(&self) -> f64 {
        log_sum_exp_pairwise(&self.logp)
    }

    /// Scale taking lattice units to units of `W_n / sigma_n`.
    fn unit(&self) -> f64 {
        self.denom as f64 * (self.n as f64).sqrt() * self.sigma_n
    }

    /// `W_n / sigma_n` at lattice index `i`.
    pub fn standardized(&self, i: usize) -> f64 {
        (self.k_min as f64 + i as f64 - self.center) / self.unit()
    }

    /// `S_n` at lattice index `i`.
    pub fn sum_value(&self, i: usize) -> f64 {
        (self.k_min as f64 + i as f64 - self.center) / self.denom as f64
    }

    /// Atoms of positive mass as `(index, W_n / sigma_n, probability)`.
    pub fn atoms(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.logp
            .iter()
            .enumerate()
            .filter(|(_, lp)| lp.is_finite())
            .map(|(i, lp)| (i, self.standardized(i), lp.exp()))
    }

    /// First index whose lattice point is `>= thr` (in lattice units), with atom slack.
    fn first_at_or_above(&self, thr: f64) -> i64 {
        let tol = ATOM_TOLERANCE * thr.abs().max(1.0);
        (thr - tol).ceil() as i64 - self.k_min
    }

    fn last_at_or_below(&self, thr: f64) -> i64 {
        let tol = ATOM_TOLERANCE * thr.abs().max(1.0);
        (thr + tol).floor() as i64 - self.k_min
    }

    /// `ln P(S_n >= s)` for a threshold on `S_n` itself.
    pub fn log_sf_sum(&self, s: f64) -> f64 {
        let i = self.first_at_or_above(self.center + s * self.denom as f64);
        self.log_sf_index(i)
    }

    /// `ln P(k >= k_min + i)`.
    pub fn log_sf_index(&self, i: i64) -> f64 {
        if i <= 0 {
            0.0
        } else if i as usize >= self.logp.len() {
            f64::NEG_INFINITY
        } else {
            self.log_sf[i as usize]
        }
    }

    /// `ln P(k <= k_min + i)`.
    pub fn log_cdf_index(&self, i: i64) -> f64 {
        if i < 0 {
            f64::NEG_INFINITY
        } else if i as usize >= self.logp.len() - 1 {
            0.0
        } else {
            self.log_cdf[i as usize]
        }
    }

    /// `ln P(W_n <= -x sigma_n)`, inclusive.
    pub fn left_tail(&self, x: f64) -> f64 {
        let i = self.last_at_or_below(self.center - x * self.unit());
        self.log_cdf_index(i)
    }

    /// `P(k <= k_min + i)` in linear scale, complemented near 1 for accuracy.
    fn cdf_at(&self, i: usize) -> f64 {
        let c = self.log_cdf[i];
        if c < -std::f64::consts::LN_2 {
            c.exp()
        } else if i + 1 < self.logp.len() {
            1.0 - self.log_sf[i + 1].exp()
        } else {
            1.0
        }
    }

    pub fn to_json(&self) -> TailTableJson {
        let (offsets, logp) = self
            .logp
            .iter()
            .enumerate()
            .filter(|(_, lp)| lp.is_finite())
            .map(|(i, &lp)| (self.k_min + i as i64, lp))
            .unzip();
        TailTableJson {
            n: self.n,
            denom: self.denom,
            center: self.center,
            sigma_n: self.sigma_n,
            offsets,
            logp,
        }
    }

    pub fn from_json(j: &TailTableJson) -> Self {
        let (k_min, dense) = match (j.offsets.first(), j.offsets.last()) {
            (Some(&lo), Some(&hi)) => {
                let mut dense = vec![f64::NEG_INFINITY; (hi - lo + 1) as usize];
                for (&k, &lp) in j.offsets.iter().zip(&j.logp) {
                    dense[(k - lo) as usize] = lp;
                }
                (lo, dense)
            }
            _ => (0, vec![0.0]),
        };
        Self::from_log_masses(j.n, j.denom, j.center, j.sigma_n, k_min, dense)
    }

    /// CSV rows `sum,logp` for atoms of positive mass.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sum,logp\n");
        for (i, lp) in self.logp.iter().enumerate() {
            if lp.is_finite() {
                out.push_str(&format!("{},{}\n", self.k_min + i as i64, lp));
            }
        }
        out
    }
}

/// Law of `S_n` under the stationary start, within the default memory budget.
pub fn distribution_of_sn(model: &ModelSpec, n: usize) -> Result<TailTable> {
    distribution_of_sn_with_budget(model, n, DEFAULT_MEMORY_BUDGET)
}

/// Law of `S_n` by the `(state, lattice sum)` recursion over `n` steps.
pub fn distribution_of_sn_with_budget(
    model: &ModelSpec,
    n: usize,
    budget: u128,
) -> Result<TailTable> {
    let m = model.exact()?;
    let n = n.max(1);
    let sigma = sigma_n_exact(m, n)?;
    let size = m.len();
    let fmin = *m.f_num().iter().min().expect("nonempty");
    let fmax = *m.f_num().iter().max().expect("nonempty");
    let width = (fmax - fmin) as usize;
    let range = n * width + 1;
    let bytes = 2u128 * size as u128 * range as u128 * 8;
    if bytes > budget {
        return Err(Error::BudgetExceeded {
            n,
            states: size,
            range,
            bytes,
            budget,
        });
    }
    let shift: Vec<usize> = m.f_num().iter().map(|&f| (f - fmin) as usize).collect();
    let log_preds: Vec<Vec<(usize, f64)>> = m
        .preds()
        .iter()
        .map(|ps| ps.iter().map(|&(s, p)| (s, p.ln())).collect())
        .collect();

    let mut cur = vec![f64::NEG_INFINITY; size * range];
    let mut next = vec![f64::NEG_INFINITY; size * range];
    for s in 0..size {
        if m.pi()[s] > 0.0 {
            cur[s * range + shift[s]] = m.pi()[s].ln();
        }
    }
    for t in 1..n {
        // active indices at step t are 0..=t*width; after the step 0..=(t+1)*width
        let active = t * width + 1;
        let reach = (t + 1) * width + 1;
        for s in 0..size {
            let row = &mut next[s * range..s * range + reach];
            let d = shift[s];
            let preds = &log_preds[s];
            let cur = &cur;
            let fill = |j0: usize, chunk: &mut [f64]| {
                for (off, slot) in chunk.iter_mut().enumerate() {
                    let j = j0 + off;
                    *slot = if j < d || j - d >= active {
                        f64::NEG_INFINITY
                    } else {
                        combine(cur, range, j - d, preds)
                    };
                }
            };
            if reach * preds.len() >= 4 * PAR_CHUNK {
                row.par_chunks_mut(PAR_CHUNK)
                    .enumerate()
                    .for_each(|(c, chunk)| fill(c * PAR_CHUNK, chunk));
            } else {
                fill(0, row);
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }

    let mut logp = vec![f64::NEG_INFINITY; range];
    let column = |j: usize| -> f64 {
        let mut mx = f64::NEG_INFINITY;
        for s in 0..size {
            mx = mx.max(cur[s * range + j]);
        }
        if mx == f64::NEG_INFINITY {
            return mx;
        }
        let sum: f64 = (0..size).map(|s| (cur[s * range + j] - mx).exp()).sum();
        mx + sum.ln()
    };
    if range >= PAR_CHUNK {
        logp.par_iter_mut()
            .enumerate()
            .for_each(|(j, out)| *out = column(j));
    } else {
        for (j, out) in logp.iter_mut().enumerate() {
            *out = column(j);
        }
    }
    Ok(TailTable::from_log_masses(
        n,
        m.denom(),
        n as f64 * m.mean_num(),
        sigma,
        n as i64 * fmin,
        logp,
    ))
}

#[inline]
fn combine(cur: &[f64], range: usize, j: usize, preds: &[(usize, f64)]) -> f64 {
    let mut mx = f64::NEG_INFINITY;
    for &(sp, lp) in preds {
        mx = mx.max(cur[sp * range + j] + lp);
    }
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    let mut sum = 0.0;
    for &(sp, lp) in preds {
        sum += (cur[sp * range + j] + lp - mx).exp();
    }
    mx + sum.ln()
}

/// `ln P(W_n >= x sigma_n)`, inclusive at atoms.
pub fn exact_tail(table: &TailTable, x: f64) -> f64 {
    let thr = table.center + x * table.unit();
    table.log_sf_index(table.first_at_or_above(thr))
}

/// `H(s) = inf { x : P(W_n / sigma_n <= x) >= s }`.
pub fn quantile(table: &TailTable, s: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::OutOfRange(s));
    }
    let ls = s.ln();
    let i = table.log_cdf.partition_point(|&c| c < ls);
    let i = i.min(table.logp.len() - 1);
    Ok(table.standardized(i))
}

/// `sup_x |P(W_n <= x sigma_n) - Phi(x)|`, evaluated on both sides of every atom.
pub fn ks_distance_exact(table: &TailTable) -> f64 {
    let mut before = 0.0;
    let mut worst = 0.0f64;
    for (i, lp) in table.logp.iter().enumerate() {
        if !lp.is_finite() {
            continue;
        }
        let x = table.standardized(i);
        let phi = normal::cdf(x);
        let after = table.cdf_at(i);
        worst = worst.max((before - phi).abs()).max((after - phi).abs());
        before = after;
    }
    worst
}

/// `P(max_{1<=i<=n} |S_i| >= x)` by forward recursion with absorption at the barrier.
///
/// Intended for small horizons; the state space is `(state, lattice sum)`.
pub fn max_partial_sum_tail(model: &ModelSpec, n: usize, x: f64) -> Result<f64> {
    let m = model.exact()?;
    let size = m.len();
    let fmin = *m.f_num().iter().min().expect("nonempty");
    let fmax = *m.f_num().iter().max().expect("nonempty");
    let width = (fmax - fmin) as usize;
    let range = n * width + 1;
    let bytes = 2u128 * size as u128 * range as u128 * 8;
    if bytes > DEFAULT_MEMORY_BUDGET {
        return Err(Error::BudgetExceeded {
            n,
            states: size,
            range,
            bytes,
            budget: DEFAULT_MEMORY_BUDGET,
        });
    }
    let q = m.denom() as f64;
    let barrier = x * q;
    let tol = ATOM_TOLERANCE * barrier.abs().max(1.0);
    // index j at step t encodes lattice sum k = j + t * fmin
    let crossed = |t: usize, j: usize| -> bool {
        let k = j as f64 + (t as i64 * fmin) as f64;
        (k - t as f64 * m.mean_num()).abs() >= barrier - tol
    };
    let shift: Vec<usize> = m.f_num().iter().map(|&f| (f - fmin) as usize).collect();
    let mut cur = vec![0.0; size * range];
    let mut absorbed = 0.0;
    for s in 0..size {
        if crossed(1, shift[s]) {
            absorbed += m.pi()[s];
        } else {
            cur[s * range + shift[s]] = m.pi()[s];
        }
    }
    for t in 1..n {
        let mut next = vec![0.0; size * range];
        for s in 0..size {
            for j in 0..=t * width {
                let w = cur[s * range + j];
                if w == 0.0 {
                    continue;
                }
                for &(u, p) in &m.rows()[s] {
                    let jj = j + shift[u];
                    if crossed(t + 1, jj) {
                        absorbed += w * p;
                    } else {
                        next[u * range + jj] += w * p;
                    }
                }
            }
        }
        cur = next;
    }
    Ok(absorbed.min(1.0))
}

/// `ln P(S_n >= s)` for an i.i.d. two-point model, by summing log binomial terms.
pub fn iid_two_point_log_tail(model: &ModelSpec, n: usize, s: f64) -> Result<f64> {
    let m = model.exact()?;
    if m.len() != 2 || !m.is_iid() {
        return Err(Error::ParamOutOfRange {
            name: "model",
            value: m.len() as f64,
            range: "an i.i.d. two-point model",
        });
    }
    let (lo, hi) = if m.f_num()[0] < m.f_num()[1] { (0, 1) } else { (1, 0) };
    let f_lo = m.f_num()[lo] as f64;
    let f_hi = m.f_num()[hi] as f64;
    let p = m.pi()[hi];
    let nf = n as f64;
    // S_n = (j f_hi + (n - j) f_lo - n mean_num) / q >= s
    let thr = (s * m.denom() as f64 + nf * m.mean_num() - nf * f_lo) / (f_hi - f_lo);
    let tol = ATOM_TOLERANCE * thr.abs().max(1.0);
    let j0 = (thr - tol).ceil().max(0.0);
    if j0 > nf {
        return Ok(f64::NEG_INFINITY);
    }
    let j0 = j0 as usize;
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let ln_n1 = ln_gamma(nf + 1.0);
    let terms: Vec<f64> = (j0..=n)
        .map(|j| {
            let jf = j as f64;
            ln_n1 - ln_gamma(jf + 1.0) - ln_gamma(nf - jf + 1.0) + jf * lp + (nf - jf) * lq
        })
        .collect();
    Ok(log_sum_exp_pairwise(&terms))
}
