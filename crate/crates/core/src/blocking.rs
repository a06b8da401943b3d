//! Block martingale decomposition of a trajectory.

use crate::error::{Error, Result};
use crate::exact::{block_moments, sigma_n_exact};
use crate::models::{FiniteLatticeModel, ModelSpec, SampledModel, Trajectory};
use crate::seeding::child_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Default number of nested resamples per block for sampled models.
pub const DEFAULT_NESTED_RESAMPLES: usize = 256;

/// How the trailing partial block is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BlockVariant {
    /// `k` martingalised blocks; the remainder block is carried as is.
    #[default]
    RemainderAdditive,
    /// All `k + 1` blocks, including the remainder, are martingalised.
    AllMartingale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDecomposition {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub variant: BlockVariant,
    pub sigma_n: f64,
    /// `X_{i,m}` for `i = 1..=k+1`; the last entry is the (possibly empty) remainder.
    pub block_sums: Vec<f64>,
    /// Lattice numerators of the block sums (exact tier only).
    pub block_lattice: Option<Vec<i64>>,
    /// `E[X_{i,m} | F_{(i-1)m}]` for each martingalised block.
    pub predictable: Vec<f64>,
    /// Standard errors when the predictable parts are nested-resampling estimates.
    pub predictable_se: Option<Vec<f64>>,
    /// `D_{i,m}`.
    pub martingale_diffs: Vec<f64>,
    /// `E[D_{i,m}^2 | F_{(i-1)m}]`.
    pub conditional_variances: Vec<f64>,
    /// `xi_i = D_{i,m} / (sqrt(n) sigma_n)`.
    pub xi: Vec<f64>,
    /// `M_i = xi_1 + ... + xi_i`.
    pub partial_sums: Vec<f64>,
    /// `<M>_i = sum_{j<=i} E[xi_j^2 | F_{(j-1)m}]`.
    pub quadratic_characteristic: Vec<f64>,
}

impl BlockDecomposition {
    /// `sum_i X_{i,m}`, which equals `S_n`.
    pub fn total(&self) -> f64 {
        self.block_sums.iter().sum()
    }

    /// `<M>` over all martingalised blocks.
    pub fn final_quadratic_characteristic(&self) -> f64 {
        self.quadratic_characteristic.last().copied().unwrap_or(0.0)
    }

    /// CSV rows `i,block_sum,predictable,martingale_diff`; the remainder row of
    /// the additive variant has empty predictable and difference fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,block_sum,predictable,martingale_diff\n");
        for (i, x) in self.block_sums.iter().enumerate() {
            match (self.predictable.get(i), self.martingale_diffs.get(i)) {
                (Some(p), Some(d)) => out.push_str(&format!("{},{x},{p},{d}\n", i + 1)),
                _ => out.push_str(&format!("{},{x},,\n", i + 1)),
            }
        }
        out
    }
}

/// Splits a trajectory into blocks of length `m` and forms the martingale differences.
///
/// For exact-tier models the predictable parts are exact; for sampled models
/// they are estimated with `resamples` nested continuations per block, seeded
/// from `(seed, block index)`.
pub fn decompose(
    model: &ModelSpec,
    trajectory: &Trajectory,
    m: usize,
    variant: BlockVariant,
    seed: u64,
    resamples: usize,
) -> Result<BlockDecomposition> {
    let n = trajectory.horizon();
    if m == 0 || n < m {
        return Err(Error::TrajectoryTooShort { len: n, m });
    }
    match (model, trajectory) {
        (ModelSpec::Exact(chain), Trajectory::Chain(path)) => {
            decompose_exact(chain, path, m, variant)
        }
        (ModelSpec::Sampled(s), Trajectory::Innovations { signs, presample }) => {
            if !s.nested_resampling {
                return Err(Error::NestedEstimateUnavailable);
            }
            decompose_sampled(s, signs, *presample, m, variant, seed, resamples.max(2))
        }
        _ => Err(Error::ParamOutOfRange {
            name: "trajectory",
            value: f64::NAN,
            range: "a trajectory produced by the same model tier",
        }),
    }
}

struct Assembled {
    predictable: Vec<f64>,
    cond_var: Vec<f64>,
}

fn finish(
    n: usize,
    m: usize,
    variant: BlockVariant,
    sigma_n: f64,
    block_sums: Vec<f64>,
    block_lattice: Option<Vec<i64>>,
    parts: Assembled,
    predictable_se: Option<Vec<f64>>,
) -> BlockDecomposition {
    let k = n / m;
    let scale = (n as f64).sqrt() * sigma_n;
    let martingale_diffs: Vec<f64> = block_sums
        .iter()
        .zip(&parts.predictable)
        .map(|(x, p)| x - p)
        .collect();
    let xi: Vec<f64> = martingale_diffs.iter().map(|d| d / scale).collect();
    let mut acc = 0.0;
    let partial_sums = xi
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect();
    let mut acc = 0.0;
    let quadratic_characteristic = parts
        .cond_var
        .iter()
        .map(|v| {
            acc += v / (scale * scale);
            acc
        })
        .collect();
    BlockDecomposition {
        n,
        m,
        k,
        variant,
        sigma_n,
        block_sums,
        block_lattice,
        predictable: parts.predictable,
        predictable_se,
        martingale_diffs,
        conditional_variances: parts.cond_var,
        xi,
        partial_sums,
        quadratic_characteristic,
    }
}

fn block_ranges(n: usize, m: usize) -> Vec<(usize, usize)> {
    // 1-based inclusive start, length
    let k = n / m;
    let mut out: Vec<(usize, usize)> = (0..k).map(|i| (i * m + 1, m)).collect();
    out.push((k * m + 1, n - k * m));
    out
}

fn martingalised(variant: BlockVariant, k: usize) -> usize {
    match variant {
        BlockVariant::RemainderAdditive => k,
        BlockVariant::AllMartingale => k + 1,
    }
}

fn decompose_exact(
    chain: &FiniteLatticeModel,
    path: &[usize],
    m: usize,
    variant: BlockVariant,
) -> Result<BlockDecomposition> {
    let n = path.len() - 1;
    let sigma = sigma_n_exact(chain, n)?;
    let ranges = block_ranges(n, m);
    let q = chain.denom() as f64;
    let block_lattice: Vec<i64> = ranges
        .iter()
        .map(|&(start, len)| path[start..start + len].iter().map(|&s| chain.f_num()[s]).sum())
        .collect();
    let block_sums: Vec<f64> = block_lattice
        .iter()
        .zip(&ranges)
        .map(|(&num, &(_, len))| (num as f64 - len as f64 * chain.mean_num()) / q)
        .collect();

    let k = n / m;
    let full = block_moments(chain, m);
    let rem = block_moments(chain, n - k * m);
    let mut predictable = Vec::new();
    let mut cond_var = Vec::new();
    for (i, &(start, len)) in ranges.iter().enumerate().take(martingalised(variant, k)) {
        let mom = if len == m { &full } else { &rem };
        let s = path[start - 1];
        let a = mom.mean_by_state[s];
        predictable.push(a);
        cond_var.push((mom.second_by_state[s] - a * a).max(0.0));
        debug_assert!(i <= k);
    }
    Ok(finish(
        n,
        m,
        variant,
        sigma,
        block_sums,
        Some(block_lattice),
        Assembled {
            predictable,
            cond_var,
        },
        None,
    ))
}

fn decompose_sampled(
    model: &SampledModel,
    signs: &[i8],
    presample: usize,
    m: usize,
    variant: BlockVariant,
    seed: u64,
    resamples: usize,
) -> Result<BlockDecomposition> {
    let n = signs.len() - presample;
    let sigma = model.sigma_n(n)?;
    let ranges = block_ranges(n, m);
    // X_t is driven by signs[presample + t - 1]
    let idx = |t: usize| presample + t - 1;
    let block_sums: Vec<f64> = ranges
        .iter()
        .map(|&(start, len)| (start..start + len).map(|t| model.value_at(signs, idx(t))).sum())
        .collect();
    let k = n / m;
    let mut predictable = Vec::new();
    let mut cond_var = Vec::new();
    let mut se = Vec::new();
    for (i, &(start, len)) in ranges.iter().enumerate().take(martingalised(variant, k)) {
        if len == 0 {
            predictable.push(0.0);
            cond_var.push(0.0);
            se.push(0.0);
            continue;
        }
        let mut rng = child_rng(seed, i as u64);
        let first = idx(start);
        let mut scratch = signs[..first + len].to_vec();
        let mut draws = Vec::with_capacity(resamples);
        for _ in 0..resamples {
            for s in scratch[first..first + len].iter_mut() {
                *s = if rng.random::<bool>() { 1 } else { -1 };
            }
            draws.push((0..len).map(|o| model.value_at(&scratch, first + o)).sum::<f64>());
        }
        let r = resamples as f64;
        let mean = draws.iter().sum::<f64>() / r;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (r - 1.0);
        predictable.push(mean);
        cond_var.push(var);
        se.push((var / r).sqrt());
    }
    Ok(finish(
        n,
        m,
        variant,
        sigma,
        block_sums,
        None,
        Assembled {
            predictable,
            cond_var,
        },
        Some(se),
    ))
}

/// Exact supremum of `|<M>_k - 1|` over block-start paths, with the reference value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticDeviation {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub sigma_n: f64,
    /// `sup |(1/(n sigma_n^2)) sum_{i<=k} E[D_{i,m}^2 | F_{(i-1)m}] - 1|`.
    pub exact: f64,
    /// `delta_m^2 + m/n`.
    pub bound: f64,
    pub delta_m_sq: f64,
}

/// Sup over all positive-probability block-start sequences of the deviation of
/// the normalised quadratic characteristic from 1, computed by max-plus and
/// min-plus recursions over the support of `P^m`.
pub fn quadratic_characteristic_deviation(
    model: &ModelSpec,
    n: usize,
    m: usize,
) -> Result<QuadraticDeviation> {
    let chain = model.exact()?;
    if m == 0 || m > n {
        return Err(Error::TrajectoryTooShort { len: n, m });
    }
    let sigma = sigma_n_exact(chain, n)?;
    let k = n / m;
    let mom = block_moments(chain, m);
    let v: Vec<f64> = mom
        .second_by_state
        .iter()
        .zip(&mom.mean_by_state)
        .map(|(b, a)| b - a * a)
        .collect();
    let preds = m_step_predecessors(chain, m);

    let mut hi = v.clone();
    let mut lo = v.clone();
    for _ in 1..k {
        let mut nhi = vec![f64::NEG_INFINITY; v.len()];
        let mut nlo = vec![f64::INFINITY; v.len()];
        for (s, ps) in preds.iter().enumerate() {
            for &p in ps {
                nhi[s] = nhi[s].max(hi[p]);
                nlo[s] = nlo[s].min(lo[p]);
            }
            nhi[s] += v[s];
            nlo[s] += v[s];
        }
        hi = nhi;
        lo = nlo;
    }
    let scale = n as f64 * sigma * sigma;
    let max = hi.iter().copied().fold(f64::NEG_INFINITY, f64::max) / scale;
    let min = lo.iter().copied().fold(f64::INFINITY, f64::min) / scale;
    let exact = (max - 1.0).abs().max((min - 1.0).abs());
    let delta_m_sq =
        mom.sup_mean * mom.sup_mean / (m as f64 * sigma * sigma) + mom.sup_second_dev(sigma);
    Ok(QuadraticDeviation {
        n,
        m,
        k,
        sigma_n: sigma,
        exact,
        bound: delta_m_sq + m as f64 / n as f64,
        delta_m_sq,
    })
}

/// For each state, the states from which it is reachable in exactly `m` steps.
fn m_step_predecessors(chain: &FiniteLatticeModel, m: usize) -> Vec<Vec<usize>> {
    let size = chain.len();
    let mut preds = vec![Vec::new(); size];
    let mut cur = vec![false; size];
    let mut next = vec![false; size];
    for src in 0..size {
        cur.iter_mut().for_each(|c| *c = false);
        cur[src] = true;
        for _ in 0..m {
            next.iter_mut().for_each(|c| *c = false);
            for (s, &on) in cur.iter().enumerate() {
                if on {
                    for &(u, _) in &chain.rows()[s] {
                        next[u] = true;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        for (dst, &on) in cur.iter().enumerate() {
            if on {
                preds[dst].push(src);
            }
        }
    }
    preds
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::coefficient_set;
    use crate::models::{sample_chain, two_state, Builtin};
    use crate::seeding::child_rng;

    fn ts(rho: f64) -> ModelSpec {
        ModelSpec::Exact(two_state(rho).unwrap())
    }

    #[test]
    fn partition_identity() {
        let m = ts(0.4);
        let mut rng = child_rng(3, 0);
        let path = sample_chain(m.exact().unwrap(), 10, &mut rng);
        let d = decompose(
            &m,
            &Trajectory::Chain(path.clone()),
            3,
            BlockVariant::RemainderAdditive,
            0,
            0,
        )
        .unwrap();
        assert_eq!(d.k, 3);
        assert_eq!(d.block_sums.len(), 4);
        assert_eq!(d.martingale_diffs.len(), 3);
        let total: i64 = path[1..].iter().map(|&s| [-1i64, 1][s]).sum();
        assert_eq!(d.block_lattice.as_ref().unwrap().iter().sum::<i64>(), total);
        assert!((d.total() - total as f64).abs() < 1e-12);
        assert!(d.to_csv().lines().count() == 5);
    }

    #[test]
    fn rademacher_blocks_are_martingale() {
        let m = Builtin::Rademacher.build().unwrap();
        let path = sample_chain(m.exact().unwrap(), 40, &mut child_rng(5, 0));
        let d = decompose(
            &m,
            &Trajectory::Chain(path),
            4,
            BlockVariant::AllMartingale,
            0,
            0,
        )
        .unwrap();
        for (x, dd) in d.block_sums.iter().zip(&d.martingale_diffs) {
            assert!((x - dd).abs() < 1e-15);
        }
        assert!(d.predictable.iter().all(|p| p.abs() < 1e-15));
    }

    #[test]
    fn two_state_predictable_part() {
        let m = ts(0.4);
        // Y_0 = +1 (state 1), block of length 3
        let path = vec![1, 1, 0, 1, 1, 1, 0];
        let d = decompose(
            &m,
            &Trajectory::Chain(path),
            3,
            BlockVariant::RemainderAdditive,
            0,
            0,
        )
        .unwrap();
        assert!((d.predictable[0] - 0.624).abs() < 1e-14);
        // Y_3 = +1 as well
        assert!((d.predictable[1] - 0.624).abs() < 1e-14);
    }

    #[test]
    fn too_short_and_unavailable() {
        let m = ts(0.4);
        assert!(matches!(
            decompose(
                &m,
                &Trajectory::Chain(vec![0, 1]),
                2,
                BlockVariant::default(),
                0,
                0
            ),
            Err(Error::TrajectoryTooShort { len: 1, m: 2 })
        ));
        let mut s = crate::models::SampledModel::moving_average(1.0, 5).unwrap();
        s.nested_resampling = false;
        let t = s.sample(20, 1);
        assert_eq!(
            decompose(
                &ModelSpec::Sampled(s),
                &t,
                4,
                BlockVariant::default(),
                0,
                8
            )
            .unwrap_err(),
            Error::NestedEstimateUnavailable
        );
    }

    #[test]
    fn nested_estimates_track_the_analytic_predictable_part() {
        let s = crate::models::SampledModel::moving_average(1.0, 10).unwrap();
        let traj = s.sample(40, 11);
        let spec = ModelSpec::Sampled(s.clone());
        let d = decompose(&spec, &traj, 8, BlockVariant::RemainderAdditive, 7, 4096).unwrap();
        let Trajectory::Innovations { signs, presample } = &traj else {
            unreachable!()
        };
        let w = s.weights();
        for (i, (&est, &se)) in d
            .predictable
            .iter()
            .zip(d.predictable_se.as_ref().unwrap())
            .enumerate()
        {
            // E[X_t | F_{t0}] keeps the innovations with index <= t0
            let t0 = i * 8;
            let truth: f64 = (t0 + 1..=t0 + 8)
                .map(|t| {
                    (t - t0..w.len())
                        .map(|lag| w[lag] * signs[presample + t - 1 - lag] as f64)
                        .sum::<f64>()
                })
                .sum();
            assert!((est - truth).abs() <= 5.0 * se + 1e-12, "block {i}: {est} vs {truth}");
        }
        for (x, b) in d.xi.iter().zip(std::iter::repeat(2.0 * 8.0 * s.bound)) {
            assert!(x.abs() * (40f64).sqrt() * d.sigma_n <= b + 1e-12);
        }
    }

    #[test]
    fn qc_deviation_examples() {
        let r = Builtin::Rademacher.build().unwrap();
        let q = quadratic_characteristic_deviation(&r, 120, 6).unwrap();
        assert!(q.exact <= 6.0 / 120.0 + 1e-12);
        assert!(q.delta_m_sq < 1e-12);
        let t = quadratic_characteristic_deviation(&ts(0.4), 120, 6).unwrap();
        let c = coefficient_set(&ts(0.4), 120, 6, 1e-10).unwrap();
        assert!((t.delta_m_sq - c.delta_m_sq).abs() < 1e-12);
        assert!(t.exact <= c.delta_m_sq + 0.05);
        // single block: deviation of the conditional variance of S_n
        let single = quadratic_characteristic_deviation(&r, 9, 9).unwrap();
        let mom = crate::exact::conditional_block_moments(&r, 9).unwrap();
        assert!((single.exact - mom.sup_second_dev(1.0)).abs() < 1e-12);
        let single = quadratic_characteristic_deviation(&ts(0.4), 9, 9).unwrap();
        let mom = crate::exact::conditional_block_moments(&ts(0.4), 9).unwrap();
        assert!((single.exact - mom.sup_conditional_variance_dev(single.sigma_n)).abs() < 1e-12);
    }
}
