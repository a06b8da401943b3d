//! Stationary bounded process models.
//!
//! Two tiers are supported. The exact tier is a finite-state Markov chain
//! whose payoff takes values on a lattice `f(s) = f_num(s) / denom`; every
//! quantity downstream (covariances, conditional block moments, the full law
//! of `S_n`) is computed exactly for it. The sampled tier is a function of an
//! i.i.d. sequence that can only be simulated, and carries analytic decay
//! certificates instead.

use crate::error::{Error, Result};
use crate::seeding::child_rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

/// Row sums and the stationarity residual must hold to this accuracy.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Chains with at most this many states get a direct stationary solve.
pub const DIRECT_SOLVE_MAX_STATES: usize = 64;
/// Longest lag searched for a contracting power `P^r`.
pub const CONTRACTION_MAX_LAG: usize = 64;
/// Dense powers of `P` are only formed up to this many states.
pub const CONTRACTION_MAX_STATES: usize = 4096;
/// Stationarity tolerance behind the sampled-tier burn-in rule.
pub const BURN_IN_TOLERANCE: f64 = 1e-12;

/// Some power `P^lag` has Dobrushin coefficient `coefficient < 1`, hence
/// `osc(P^t v) <= coefficient^{floor(t / lag)} osc(v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contraction {
    pub lag: usize,
    pub coefficient: f64,
}

impl Contraction {
    /// Per-step geometric rate `coefficient^{1/lag}`.
    pub fn rate(&self) -> f64 {
        self.coefficient.powf(1.0 / self.lag as f64)
    }

    /// Upper bound on `sum_{t > 0} osc(P^t v) / osc(v)`.
    pub fn series_factor(&self) -> f64 {
        if self.coefficient >= 1.0 {
            return f64::INFINITY;
        }
        let lag = self.lag as f64;
        (lag - 1.0) + lag * self.coefficient / (1.0 - self.coefficient)
    }
}

/// A finite-state stationary Markov chain with a lattice-valued payoff.
#[derive(Debug, Clone)]
pub struct FiniteLatticeModel {
    states: Vec<String>,
    transition: Vec<f64>,
    f_num: Vec<i64>,
    denom: u64,
    pi: Vec<f64>,
    mean_num: f64,
    centered: Vec<f64>,
    bound: f64,
    rows: Vec<Vec<(usize, f64)>>,
    preds: Vec<Vec<(usize, f64)>>,
    contraction: Option<Contraction>,
}

impl FiniteLatticeModel {
    /// Validates the chain, solves for the stationary law and centres the payoff.
    pub fn new(
        states: Vec<String>,
        transition: Vec<Vec<f64>>,
        f_num: Vec<i64>,
        denom: u64,
    ) -> Result<Self> {
        let size = transition.len();
        if size == 0 {
            return Err(Error::ModelFile("empty state space".into()));
        }
        for (row, r) in transition.iter().enumerate() {
            if r.len() != size {
                return Err(Error::NotSquare {
                    rows: size,
                    row,
                    len: r.len(),
                });
            }
        }
        if states.len() != size {
            return Err(Error::LengthMismatch {
                states: size,
                what: "states",
                len: states.len(),
            });
        }
        if f_num.len() != size {
            return Err(Error::LengthMismatch {
                states: size,
                what: "f_num",
                len: f_num.len(),
            });
        }
        if denom == 0 {
            return Err(Error::ZeroDenominator);
        }
        for (row, r) in transition.iter().enumerate() {
            let min = r.iter().copied().fold(f64::INFINITY, f64::min);
            let sum: f64 = r.iter().sum();
            if !(min >= 0.0) || (sum - 1.0).abs() > STOCHASTIC_TOL || !sum.is_finite() {
                return Err(Error::NonStochasticRow { row, sum, min });
            }
        }

        let rows: Vec<Vec<(usize, f64)>> = transition
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(j, &p)| (j, p))
                    .collect()
            })
            .collect();
        let mut preds = vec![Vec::new(); size];
        for (i, r) in rows.iter().enumerate() {
            for &(j, p) in r {
                preds[j].push((i, p));
            }
        }

        check_irreducible(&rows, &preds)?;
        let period = period(&rows);
        if period != 1 {
            return Err(Error::PeriodicChain { period });
        }

        let flat: Vec<f64> = transition.into_iter().flatten().collect();
        let pi = stationary(&flat, &rows, size)?;

        if f_num.iter().all(|&v| v == f_num[0]) {
            return Err(Error::DegeneratePayoff);
        }
        let mean_num: f64 = pi.iter().zip(&f_num).map(|(p, &f)| p * f as f64).sum();
        let q = denom as f64;
        let centered: Vec<f64> = f_num.iter().map(|&f| (f as f64 - mean_num) / q).collect();
        let bound = centered.iter().fold(0.0f64, |a, &x| a.max(x.abs()));

        let mut model = Self {
            states,
            transition: flat,
            f_num,
            denom,
            pi,
            mean_num,
            centered,
            bound,
            rows,
            preds,
            contraction: None,
        };
        model.contraction = model.find_contraction();
        Ok(model)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    /// Row-major transition matrix.
    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    pub fn p(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.len() + to]
    }

    pub fn f_num(&self) -> &[i64] {
        &self.f_num
    }

    pub fn denom(&self) -> u64 {
        self.denom
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// `sum_s pi(s) f_num(s)`; the centred payoff is `(f_num - mean_num) / denom`.
    pub fn mean_num(&self) -> f64 {
        self.mean_num
    }

    /// Centred payoff `X(s)`.
    pub fn centered(&self) -> &[f64] {
        &self.centered
    }

    /// `||X_0||_inf`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Sparse out-edges `(to, prob)` per state.
    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    /// Sparse in-edges `(from, prob)` per state.
    pub fn preds(&self) -> &[Vec<(usize, f64)>] {
        &self.preds
    }

    pub fn contraction(&self) -> Option<Contraction> {
        self.contraction
    }

    /// `(P v)(s) = sum_u P(s, u) v(u)`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, p)| p * v[j]).sum())
            .collect()
    }

    /// `(mu P)(u) = sum_s mu(s) P(s, u)`.
    pub fn push_forward(&self, mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (s, r) in self.rows.iter().enumerate() {
            if mu[s] == 0.0 {
                continue;
            }
            for &(j, p) in r {
                out[j] += mu[s] * p;
            }
        }
        out
    }

    /// Expectation under the stationary law.
    pub fn stationary_mean(&self, v: &[f64]) -> f64 {
        self.pi.iter().zip(v).map(|(p, x)| p * x).sum()
    }

    /// Is the chain i.i.d. (all rows equal to `pi`)?
    pub fn is_iid(&self) -> bool {
        let n = self.len();
        (0..n).all(|s| (0..n).all(|u| (self.p(s, u) - self.pi[u]).abs() <= 1e-14))
    }

    /// `P^{k}` rows, dense, for `k = 1, 2, ...` via the callback; stops when it returns false.
    fn for_each_power(&self, mut visit: impl FnMut(usize, &[f64]) -> bool) {
        let n = self.len();
        let mut q = self.transition.clone();
        let mut k = 1;
        loop {
            if !visit(k, &q) {
                return;
            }
            let mut next = vec![0.0; n * n];
            for i in 0..n {
                let row = &q[i * n..(i + 1) * n];
                let out = &mut next[i * n..(i + 1) * n];
                for (s, &w) in row.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for &(j, p) in &self.rows[s] {
                        out[j] += w * p;
                    }
                }
            }
            q = next;
            k += 1;
        }
    }

    fn find_contraction(&self) -> Option<Contraction> {
        let n = self.len();
        if n > CONTRACTION_MAX_STATES {
            return None;
        }
        let mut found = None;
        self.for_each_power(|k, q| {
            let coefficient = if n <= DIRECT_SOLVE_MAX_STATES {
                dobrushin(q, n)
            } else {
                doeblin(q, n)
            };
            if coefficient < 1.0 - 1e-12 {
                found = Some(Contraction {
                    lag: k,
                    coefficient: coefficient.max(0.0),
                });
                return false;
            }
            k < CONTRACTION_MAX_LAG
        });
        found
    }

    /// Two-step joint table `P(Y_t = a, Y_{t+1} = b)` under the stationary start.
    pub fn joint_table(&self, shift: usize) -> Vec<f64> {
        let n = self.len();
        let mut mu = self.pi.clone();
        for _ in 0..shift {
            mu = self.push_forward(&mu);
        }
        let mut out = vec![0.0; n * n];
        for a in 0..n {
            for &(b, p) in &self.rows[a] {
                out[a * n + b] = mu[a] * p;
            }
        }
        out
    }
}

/// `max_{i,j} TV(Q(i,.), Q(j,.))`.
fn dobrushin(q: &[f64], n: usize) -> f64 {
    let mut best = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let tv: f64 = (0..n).map(|k| (q[i * n + k] - q[j * n + k]).abs()).sum();
            best = best.max(0.5 * tv);
        }
    }
    best
}

/// Doeblin minorisation bound `1 - sum_k min_i Q(i, k)` on the Dobrushin coefficient.
fn doeblin(q: &[f64], n: usize) -> f64 {
    let overlap: f64 = (0..n)
        .map(|k| (0..n).map(|i| q[i * n + k]).fold(f64::INFINITY, f64::min))
        .sum();
    1.0 - overlap
}

fn reach(adj: &[Vec<(usize, f64)>]) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for &(v, _) in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

fn check_irreducible(rows: &[Vec<(usize, f64)>], preds: &[Vec<(usize, f64)>]) -> Result<()> {
    if let Some(state) = reach(rows).iter().position(|&r| !r) {
        return Err(Error::ReducibleChain { state });
    }
    if let Some(state) = reach(preds).iter().position(|&r| !r) {
        return Err(Error::ReducibleChain { state });
    }
    Ok(())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Period of an irreducible chain from BFS levels.
fn period(rows: &[Vec<(usize, f64)>]) -> usize {
    let mut level = vec![usize::MAX; rows.len()];
    level[0] = 0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for &(v, _) in &rows[u] {
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g = 0;
    for (u, r) in rows.iter().enumerate() {
        for &(v, _) in r {
            let d = (level[u] + 1).abs_diff(level[v]);
            g = gcd(g, d);
        }
    }
    g
}

fn stationary(flat: &[f64], rows: &[Vec<(usize, f64)>], n: usize) -> Result<Vec<f64>> {
    let mut pi = if n <= DIRECT_SOLVE_MAX_STATES {
        // (P^T - I) pi = 0 with the last equation replaced by sum(pi) = 1.
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = flat[j * n + i] - if i == j { 1.0 } else { 0.0 };
            }
        }
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        let mut b = DVector::<f64>::zeros(n);
        b[n - 1] = 1.0;
        let sol = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::ModelFile("singular stationarity system".into()))?;
        sol.iter().copied().collect::<Vec<_>>()
    } else {
        let mut pi = vec![1.0 / n as f64; n];
        for _ in 0..1_000_000 {
            let mut next = vec![0.0; n];
            for (s, r) in rows.iter().enumerate() {
                for &(j, p) in r {
                    next[j] += pi[s] * p;
                }
            }
            let resid: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            pi = next;
            if resid < 1e-14 {
                break;
            }
        }
        pi
    };
    for p in pi.iter_mut() {
        if *p < 0.0 && *p > -1e-14 {
            *p = 0.0;
        }
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);

    let mut resid = 0.0f64;
    for j in 0..n {
        let pj: f64 = (0..n).map(|i| pi[i] * flat[i * n + j]).sum();
        resid = resid.max((pj - pi[j]).abs());
    }
    if resid > STOCHASTIC_TOL || pi.iter().any(|&p| p < 0.0) {
        return Err(Error::ModelFile(format!(
            "stationary solve did not converge (residual {resid:e})"
        )));
    }
    Ok(pi)
}

/// Upper bound `eta_k <= scale * ratio^{floor((k - anchor) / lag)}` for `k >= anchor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailBound {
    pub anchor: usize,
    pub scale: f64,
    pub ratio: f64,
    pub lag: usize,
}

impl TailBound {
    pub fn zero() -> Self {
        Self {
            anchor: 0,
            scale: 0.0,
            ratio: 0.0,
            lag: 1,
        }
    }

    pub fn at(&self, k: usize) -> f64 {
        debug_assert!(k >= self.anchor);
        if self.scale == 0.0 {
            return 0.0;
        }
        let e = ((k - self.anchor) / self.lag) as i32;
        self.scale * self.ratio.powi(e)
    }

    /// `sum_{k > k0} at(k)` for `k0 >= anchor`.
    pub fn sum_beyond(&self, k0: usize) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        if self.ratio >= 1.0 {
            return f64::INFINITY;
        }
        let j0 = k0 - self.anchor;
        let q0 = (j0 + 1) / self.lag;
        let first = ((q0 + 1) * self.lag - (j0 + 1)) as f64;
        let lag = self.lag as f64;
        self.scale
            * (self.ratio.powi(q0 as i32) * first
                + lag * self.ratio.powi(q0 as i32 + 1) / (1.0 - self.ratio))
    }
}

/// Upper bounds on `eta_{1,k} = sup_{j>=k} ||E[X_j|F_0]||_inf` and
/// `eta_{2,k} = sup_{i,j>=k} ||E[X_iX_j|F_0] - E[X_iX_j]||_inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCertificate {
    /// `eta1[k-1]` bounds `eta_{1,k}`, `k = 1..=len`.
    pub eta1: Vec<f64>,
    pub eta2: Vec<f64>,
    /// Valid beyond the tabulated range.
    pub eta1_tail: TailBound,
    pub eta2_tail: TailBound,
    /// Polynomial decay exponent; `None` when both sequences vanish.
    pub beta: Option<f64>,
    /// Whether `beta` came from a log-log least-squares fit.
    pub beta_is_fit: bool,
    pub rate_constant: f64,
    pub geometric_rho: Option<f64>,
}

impl DecayCertificate {
    pub fn len(&self) -> usize {
        self.eta1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta1.is_empty()
    }

    pub fn eta1_at(&self, k: usize) -> f64 {
        assert!(k >= 1);
        if k <= self.eta1.len() {
            self.eta1[k - 1]
        } else {
            self.eta1_tail.at(k)
        }
    }

    pub fn eta2_at(&self, k: usize) -> f64 {
        assert!(k >= 1);
        if k <= self.eta2.len() {
            self.eta2[k - 1]
        } else {
            self.eta2_tail.at(k)
        }
    }

    /// `H_1 = sum_{k>=1} eta_{1,k}`.
    pub fn eta1_total(&self) -> f64 {
        self.eta1.iter().sum::<f64>() + self.eta1_tail.sum_beyond(self.eta1.len())
    }
}

/// Log-log least squares of `ln eta_k` on `ln k` over the positive entries;
/// returns `(beta, constant)` with `eta_k ~ constant * k^{-beta}`.
pub fn fit_power_decay(eta: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = eta
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0 && v.is_finite())
        .map(|(i, &v)| (((i + 1) as f64).ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((-slope, (my - slope * mx).exp()))
}

/// Smallest `C` with `eta_k <= C k^{-beta}` over the tabulated entries.
pub fn rate_constant(eta: &[f64], beta: f64) -> f64 {
    eta.iter()
        .enumerate()
        .map(|(i, &v)| v * ((i + 1) as f64).powf(beta))
        .fold(0.0, f64::max)
}

/// The sampled-tier generating mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SampledKind {
    /// `X_k = sum_{i=0}^{truncation} c 2^{-i} eps_{k-i}`, `eps` i.i.d. signs.
    MovingAverage { c: f64, truncation: usize },
}

/// A model reachable only through seeded simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledModel {
    pub kind: SampledKind,
    pub bound: f64,
    pub decay: DecayCertificate,
    pub burn_in: usize,
    /// Whether block predictable parts may be estimated by nested resampling.
    pub nested_resampling: bool,
}

/// A trajectory produced by a model sampler.
#[derive(Debug, Clone, PartialEq)]
pub enum Trajectory {
    /// `Y_0, Y_1, ..., Y_n` for an exact-tier chain.
    Chain(Vec<usize>),
    /// Innovations `eps_{1-presample}, ..., eps_n` driving a moving average.
    Innovations { signs: Vec<i8>, presample: usize },
}

impl Trajectory {
    /// Number of summands `n`.
    pub fn horizon(&self) -> usize {
        match self {
            Trajectory::Chain(s) => s.len().saturating_sub(1),
            Trajectory::Innovations { signs, presample } => signs.len() - presample,
        }
    }
}

impl SampledModel {
    pub fn moving_average(c: f64, truncation: usize) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::ParamOutOfRange {
                name: "c",
                value: c,
                range: "c > 0",
            });
        }
        if truncation > 60 {
            return Err(Error::ParamOutOfRange {
                name: "L_trunc",
                value: truncation as f64,
                range: "0 <= L_trunc <= 60",
            });
        }
        let bound = c * (2.0 - 0.5f64.powi(truncation as i32));
        // Condition (A) with R_i = c 2^{1-i}: eta_{1,k} <= sum_{i>=k} R_i = c 2^{2-k},
        // and the F_0-measurable parts A_k, A_l give eta_{2,k} <= 2 (c 2^{2-k})^2.
        let len = 64;
        let eta1: Vec<f64> = (1..=len)
            .map(|k| (c * 2f64.powi(2 - k as i32)).min(bound))
            .collect();
        let eta2: Vec<f64> = (1..=len)
            .map(|k| (2.0 * (c * 2f64.powi(2 - k as i32)).powi(2)).min(2.0 * bound * bound))
            .collect();
        let eta1_tail = TailBound {
            anchor: len,
            scale: c * 2f64.powi(2 - len as i32),
            ratio: 0.5,
            lag: 1,
        };
        let eta2_tail = TailBound {
            anchor: len,
            scale: 2.0 * (c * 2f64.powi(2 - len as i32)).powi(2),
            ratio: 0.25,
            lag: 1,
        };
        // Geometric decay implies O(k^{-beta}) for every beta; 3 puts every
        // block-size rule in its fastest regime.
        let beta = 3.0;
        let rate = rate_constant(&eta1, beta).max(rate_constant(&eta2, beta));
        let rho: f64 = 0.5;
        let burn_in = (BURN_IN_TOLERANCE.ln() / rho.ln()).ceil() as usize;
        Ok(Self {
            kind: SampledKind::MovingAverage { c, truncation },
            bound,
            decay: DecayCertificate {
                eta1,
                eta2,
                eta1_tail,
                eta2_tail,
                beta: Some(beta),
                beta_is_fit: false,
                rate_constant: rate,
                geometric_rho: Some(rho),
            },
            burn_in,
            nested_resampling: true,
        })
    }

    /// Memory of the generating filter.
    pub fn memory(&self) -> usize {
        match self.kind {
            SampledKind::MovingAverage { truncation, .. } => truncation,
        }
    }

    /// Draws a stationary trajectory of `n` values after the certified burn-in.
    pub fn sample(&self, n: usize, seed: u64) -> Trajectory {
        let mut rng = child_rng(seed, 0);
        let presample = self.burn_in.max(self.memory());
        let signs = (0..presample + n)
            .map(|_| if rng.random::<bool>() { 1i8 } else { -1 })
            .collect();
        Trajectory::Innovations { signs, presample }
    }

    /// `X_1, ..., X_n` from innovations.
    pub fn values(&self, signs: &[i8], presample: usize) -> Vec<f64> {
        let SampledKind::MovingAverage { c, truncation } = self.kind;
        let weights: Vec<f64> = (0..=truncation).map(|i| c * 0.5f64.powi(i as i32)).collect();
        (presample..signs.len())
            .map(|t| {
                weights
                    .iter()
                    .enumerate()
                    .map(|(i, w)| w * signs[t - i] as f64)
                    .sum()
            })
            .collect()
    }

    /// Filter weights `c 2^{-i}`, `i = 0..=truncation`.
    pub fn weights(&self) -> Vec<f64> {
        let SampledKind::MovingAverage { c, truncation } = self.kind;
        (0..=truncation).map(|i| c * 0.5f64.powi(i as i32)).collect()
    }

    /// `Cov(X_0, X_k) = sum_i w_i w_{i+k}`.
    pub fn autocovariance(&self, k: usize) -> f64 {
        let w = self.weights();
        w.iter().zip(w.iter().skip(k)).map(|(a, b)| a * b).sum()
    }

    /// `sigma_n` in closed form.
    pub fn sigma_n(&self, n: usize) -> Result<f64> {
        let n = n.max(1);
        let nf = n as f64;
        let var = self.autocovariance(0)
            + 2.0
                * (1..n.min(self.memory() + 1))
                    .map(|k| (1.0 - k as f64 / nf) * self.autocovariance(k))
                    .sum::<f64>();
        if var <= 1e-14 {
            return Err(Error::DegenerateVariance(var));
        }
        Ok(var.sqrt())
    }

    /// One value given the innovation window ending at index `t` of `signs`.
    pub fn value_at(&self, signs: &[i8], t: usize) -> f64 {
        let SampledKind::MovingAverage { c, truncation } = self.kind;
        (0..=truncation)
            .map(|i| c * 0.5f64.powi(i as i32) * signs[t - i] as f64)
            .sum()
    }
}

/// A stationary process model of either tier.
#[derive(Debug, Clone)]
pub enum ModelSpec {
    Exact(FiniteLatticeModel),
    Sampled(SampledModel),
}

impl ModelSpec {
    pub fn exact(&self) -> Result<&FiniteLatticeModel> {
        match self {
            ModelSpec::Exact(m) => Ok(m),
            ModelSpec::Sampled(_) => Err(Error::SampledTierUnsupported),
        }
    }

    /// `sigma_n` for either tier (closed form for sampled models).
    pub fn sigma_n(&self, n: usize) -> Result<f64> {
        match self {
            ModelSpec::Exact(m) => crate::exact::sigma_n_exact(m, n),
            ModelSpec::Sampled(m) => m.sigma_n(n),
        }
    }

    pub fn bound(&self) -> f64 {
        match self {
            ModelSpec::Exact(m) => m.bound(),
            ModelSpec::Sampled(m) => m.bound,
        }
    }
}

/// Named built-in models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Builtin {
    Rademacher,
    TwoState { rho: f64 },
    DyadicContracting { levels: u32 },
    MovingAverage { c: f64, truncation: usize },
}

impl Builtin {
    /// Builds from a name and a parameter map (missing parameters take defaults).
    pub fn from_params(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |k: &str, default: f64| params.get(k).copied().unwrap_or(default);
        match name {
            "rademacher" => Ok(Builtin::Rademacher),
            "two_state" => Ok(Builtin::TwoState {
                rho: get("rho", 0.4),
            }),
            "dyadic_contracting" => {
                let l = get("L", 3.0);
                if l.fract() != 0.0 || !(1.0..=12.0).contains(&l) {
                    return Err(Error::ParamOutOfRange {
                        name: "L",
                        value: l,
                        range: "integer in [1, 12]",
                    });
                }
                Ok(Builtin::DyadicContracting { levels: l as u32 })
            }
            "moving_average" => {
                let t = get("L_trunc", 20.0);
                if t.fract() != 0.0 || !(0.0..=60.0).contains(&t) {
                    return Err(Error::ParamOutOfRange {
                        name: "L_trunc",
                        value: t,
                        range: "integer in [0, 60]",
                    });
                }
                Ok(Builtin::MovingAverage {
                    c: get("c", 1.0),
                    truncation: t as usize,
                })
            }
            other => Err(Error::UnknownBuiltin(other.to_string())),
        }
    }

    pub fn build(&self) -> Result<ModelSpec> {
        match *self {
            Builtin::Rademacher => Ok(ModelSpec::Exact(two_state(0.0)?)),
            Builtin::TwoState { rho } => Ok(ModelSpec::Exact(two_state(rho)?)),
            Builtin::DyadicContracting { levels } => {
                Ok(ModelSpec::Exact(dyadic_contracting(levels)?))
            }
            Builtin::MovingAverage { c, truncation } => Ok(ModelSpec::Sampled(
                SampledModel::moving_average(c, truncation)?,
            )),
        }
    }
}

impl FromStr for Builtin {
    type Err = Error;

    /// Parses `name` or `name:key=value,key=value`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut params = BTreeMap::new();
        for kv in rest.split(',').filter(|t| !t.trim().is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::UnknownBuiltin(s.to_string()))?;
            let value: f64 = v.trim().parse().map_err(|_| Error::ParamOutOfRange {
                name: "value",
                value: f64::NAN,
                range: "a number",
            })?;
            params.insert(k.trim().to_string(), value);
        }
        Builtin::from_params(name.trim(), &params)
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Builtin::Rademacher => write!(f, "rademacher"),
            Builtin::TwoState { rho } => write!(f, "two_state:rho={rho}"),
            Builtin::DyadicContracting { levels } => write!(f, "dyadic_contracting:L={levels}"),
            Builtin::MovingAverage { c, truncation } => {
                write!(f, "moving_average:c={c},L_trunc={truncation}")
            }
        }
    }
}

/// Convenience wrapper over [`Builtin::from_params`] and [`Builtin::build`].
pub fn builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<ModelSpec> {
    Builtin::from_params(name, params)?.build()
}

/// Symmetric two-state chain on `{-1, +1}` with stay probability `(1 + rho) / 2`.
pub fn two_state(rho: f64) -> Result<FiniteLatticeModel> {
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::ParamOutOfRange {
            name: "rho",
            value: rho,
            range: "-1 < rho < 1",
        });
    }
    let stay = (1.0 + rho) / 2.0;
    FiniteLatticeModel::new(
        vec!["-1".into(), "+1".into()],
        vec![vec![stay, 1.0 - stay], vec![1.0 - stay, stay]],
        vec![-1, 1],
        1,
    )
}

/// Chain on `{j / 2^L}` with `Y' = floor((j + b 2^L) / 2) / 2^L`, `b` a fair bit.
pub fn dyadic_contracting(levels: u32) -> Result<FiniteLatticeModel> {
    if !(1..=12).contains(&levels) {
        return Err(Error::ParamOutOfRange {
            name: "L",
            value: levels as f64,
            range: "integer in [1, 12]",
        });
    }
    let size = 1usize << levels;
    let mut transition = vec![vec![0.0; size]; size];
    for (j, row) in transition.iter_mut().enumerate() {
        for b in 0..2 {
            row[(j + b * size) / 2] += 0.5;
        }
    }
    FiniteLatticeModel::new(
        (0..size).map(|j| format!("{j}/{size}")).collect(),
        transition,
        (0..size as i64).collect(),
        size as u64,
    )
}

/// `phi_1(k)` for `k = 1..=horizon`: the largest total-variation distance
/// between a row of `P^k` and `pi`.
pub fn phi_mixing_coefficients(model: &ModelSpec, horizon: usize) -> Result<Vec<f64>> {
    let m = model.exact()?;
    let n = m.len();
    let mut out = Vec::with_capacity(horizon);
    if horizon == 0 {
        return Ok(out);
    }
    m.for_each_power(|_, q| {
        let worst = (0..n)
            .map(|s| {
                0.5 * (0..n)
                    .map(|u| (q[s * n + u] - m.pi[u]).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        out.push(worst.min(1.0));
        out.len() < horizon
    });
    Ok(out)
}

/// Outcome of the numerical check of the contracting-chain kernel conditions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractionReport {
    /// `max_s W_1(P^k(s, .), pi)` for `k = 1..=horizon`, i.e. the supremum over
    /// 1-Lipschitz test functions in the first inequality.
    pub wasserstein: Vec<f64>,
    /// Smallest `C` with `wasserstein[k-1] <= C rho^k`.
    pub constant: f64,
    pub rho: f64,
    /// Largest ratio `||K^k(f K^j g) - mu(f K^j g)|| / rho^k` over the test family.
    pub product_constant: f64,
}

/// Checks both kernel inequalities of the contracting-chain condition
/// for a lattice chain whose states sit at `f_num / denom`.
///
/// The first inequality is checked exactly through the `W_1` duality. The
/// second is checked over a finite family of 1-Lipschitz functions vanishing
/// at the origin (identity, a tent, a shifted ramp) for `j <= j_max`.
pub fn check_contraction_condition(
    model: &FiniteLatticeModel,
    horizon: usize,
    j_max: usize,
    rho: f64,
) -> ContractionReport {
    let n = model.len();
    let pos: Vec<f64> = model
        .f_num()
        .iter()
        .map(|&f| f as f64 / model.denom() as f64)
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pos[a].total_cmp(&pos[b]));

    let mut wasserstein = Vec::with_capacity(horizon);
    model.for_each_power(|_, q| {
        let mut worst = 0.0f64;
        for s in 0..n {
            let (mut fa, mut fb, mut w) = (0.0, 0.0, 0.0);
            for w_idx in 0..n.saturating_sub(1) {
                let u = order[w_idx];
                fa += q[s * n + u];
                fb += model.pi()[u];
                w += (fa - fb).abs() * (pos[order[w_idx + 1]] - pos[u]);
            }
            worst = worst.max(w);
        }
        wasserstein.push(worst);
        wasserstein.len() < horizon
    });
    let constant = wasserstein
        .iter()
        .enumerate()
        .map(|(k, &w)| w / rho.powi(k as i32 + 1))
        .fold(0.0, f64::max);

    let family: [fn(f64) -> f64; 3] = [|x| x, |x| (x - 0.5).abs() - 0.5, |x| (x - 0.25).max(0.0)];
    let mut product_constant = 0.0f64;
    for f in family.iter() {
        for g in family.iter() {
            let gv: Vec<f64> = pos.iter().map(|&x| g(x)).collect();
            let mut kg = gv;
            for _ in 0..=j_max {
                let h: Vec<f64> = pos.iter().zip(&kg).map(|(&x, &v)| f(x) * v).collect();
                let mean = model.stationary_mean(&h);
                let mut kh = h;
                for k in 1..=horizon {
                    kh = model.apply(&kh);
                    let dev = kh.iter().fold(0.0f64, |a, &v| a.max((v - mean).abs()));
                    product_constant = product_constant.max(dev / rho.powi(k as i32));
                }
                kg = model.apply(&kg);
            }
        }
    }
    ContractionReport {
        wasserstein,
        constant,
        rho,
        product_constant,
    }
}

/// Model definition file: TOML with keys `states`, `transition` (row-major),
/// `f_num` and `denom`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub states: Vec<String>,
    pub transition: Vec<f64>,
    pub f_num: Vec<i64>,
    pub denom: u64,
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ModelFile(e.to_string()))
    }

    pub fn build(&self) -> Result<FiniteLatticeModel> {
        let n = self.states.len();
        if self.transition.len() != n * n {
            return Err(Error::LengthMismatch {
                states: n,
                what: "transition (row-major, states^2 entries)",
                len: self.transition.len(),
            });
        }
        let rows = self.transition.chunks(n.max(1)).map(|c| c.to_vec()).collect();
        FiniteLatticeModel::new(self.states.clone(), rows, self.f_num.clone(), self.denom)
    }
}

/// Draws one stationary chain trajectory `Y_0..Y_n`.
pub fn sample_chain<R: Rng>(model: &FiniteLatticeModel, n: usize, rng: &mut R) -> Vec<usize> {
    let cum_pi = cumulative(model.pi());
    let cum_rows: Vec<Vec<(usize, f64)>> = model
        .rows()
        .iter()
        .map(|r| {
            let mut acc = 0.0;
            r.iter()
                .map(|&(j, p)| {
                    acc += p;
                    (j, acc)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(n + 1);
    let u: f64 = rng.random();
    let mut s = pick(&cum_pi, u);
    out.push(s);
    for _ in 0..n {
        let u: f64 = rng.random();
        let row = &cum_rows[s];
        let idx = row.partition_point(|&(_, c)| c <= u).min(row.len() - 1);
        s = row[idx].0;
        out.push(s);
    }
    out
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|&v| {
            acc += v;
            acc
        })
        .collect()
}

fn pick(cum: &[f64], u: f64) -> usize {
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}
