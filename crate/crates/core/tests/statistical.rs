//! Simulation-backed properties and convergence trends.

use mdlab::blocking::{decompose, quadratic_characteristic_deviation, BlockVariant};
use mdlab::bounds::berry_esseen_bound;
use mdlab::coefficients::{
    calibrate_constant, coefficient_set, eta_certificate, certified_coefficient_bounds, CertificateConstants,
};
use mdlab::coupling::coupling_report;
use mdlab::exact::{distribution_of_sn, exact_tail, ks_distance_exact};
use mdlab::models::{dyadic_contracting, sample_chain, two_state, ModelSpec, Trajectory};
use mdlab::montecarlo::{simulate_w, sup_ratio_deviation, tail_estimates};
use mdlab::seeding::child_rng;

fn ts(rho: f64) -> ModelSpec {
    ModelSpec::Exact(two_state(rho).unwrap())
}

#[test]
fn exact_tails_covered_by_mc_intervals() {
    let model = ts(0.4);
    let n = 256;
    let table = distribution_of_sn(&model, n).unwrap();
    let sigma = table.sigma_n();
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0];
    let seeds = 20u64;
    let mut covered = 0;
    let mut total = 0;
    for seed in 0..seeds {
        let w = simulate_w(&model, n, 100_000, 1000 + seed);
        for est in tail_estimates(&w, sigma, &grid, seed) {
            let p = exact_tail(&table, est.x).exp();
            total += 1;
            if est.lo <= p && p <= est.hi {
                covered += 1;
            }
        }
    }
    let coverage = covered as f64 / total as f64;
    assert!(coverage >= 0.90, "coverage {coverage}");
}

#[test]
fn martingale_differences_center_per_state() {
    let model = ts(0.4);
    let chain = model.exact().unwrap();
    let (n, m) = (30, 3);
    // per starting state of the block: count, sum, sum of squares
    let mut acc = vec![(0usize, 0.0f64, 0.0f64); chain.len()];
    let c = coefficient_set(&model, n, m, 1e-10).unwrap();
    for t in 0..10_000u64 {
        let path = sample_chain(chain, n, &mut child_rng(77, t));
        let d = decompose(&model, &Trajectory::Chain(path.clone()), m, BlockVariant::RemainderAdditive, 0, 0)
            .unwrap();
        for (i, diff) in d.martingale_diffs.iter().enumerate() {
            let e = &mut acc[path[i * m]];
            e.0 += 1;
            e.1 += diff;
            e.2 += diff * diff;
        }
        for xi in &d.xi {
            assert!(xi.abs() <= 2.0 * c.eps_m + 1e-12);
        }
        assert!((d.total() - path[1..].iter().map(|&y| chain.centered()[y]).sum::<f64>()).abs() < 1e-9);
    }
    for (count, sum, sq) in acc {
        let k = count as f64;
        let mean = sum / k;
        let se = ((sq / k - mean * mean) / k).sqrt();
        assert!(mean.abs() <= 4.0 * se, "mean {mean} se {se}");
    }
}

#[test]
fn quadratic_characteristic_within_interval() {
    let model = ts(0.4);
    let chain = model.exact().unwrap();
    for (n, m) in [(120, 6), (64, 4), (90, 7)] {
        let q = quadratic_characteristic_deviation(&model, n, m).unwrap();
        assert!(q.exact <= q.bound + 1e-12);
        for t in 0..200u64 {
            let path = sample_chain(chain, n, &mut child_rng(5, t));
            let d = decompose(&model, &Trajectory::Chain(path), m, BlockVariant::RemainderAdditive, 0, 0)
                .unwrap();
            let v = d.final_quadratic_characteristic();
            assert!((v - 1.0).abs() <= q.bound + 1e-12, "n={n} m={m} <M>={v}");
            assert!((v - 1.0).abs() <= q.exact + 1e-12);
        }
    }
}

#[test]
fn cramer_ratio_deviation_shrinks() {
    let model = ts(0.4);
    let mut prev = f64::INFINITY;
    for n in [400usize, 1600, 6400] {
        let table = distribution_of_sn(&model, n).unwrap();
        let sup = sup_ratio_deviation(&table, 0.0, 2.0).unwrap();
        assert!(sup < prev, "n={n}: {sup} !< {prev}");
        prev = sup;
    }
}

#[test]
fn berry_esseen_calibrated_at_256_covers_4096() {
    let model = ts(0.4);
    let anchor_table = distribution_of_sn(&model, 256).unwrap();
    let anchor = coefficient_set(&model, 256, 6, 1e-10).unwrap();
    let constant = ks_distance_exact(&anchor_table) / berry_esseen_bound(&anchor, 1.0);
    let c = coefficient_set(&model, 4096, 16, 1e-10).unwrap();
    let ks = ks_distance_exact(&distribution_of_sn(&model, 4096).unwrap());
    assert!(berry_esseen_bound(&c, constant) >= ks);
}

#[test]
fn delta_bound_calibrated_at_first_block_size_holds_beyond() {
    let grid = [1usize, 2, 4, 8, 16, 32, 64];
    for model in [
        ts(0.4),
        ts(0.7),
        ts(-0.5),
        ModelSpec::Exact(dyadic_contracting(6).unwrap()),
    ] {
        let n = 4096;
        let sigma = model.sigma_n(n).unwrap();
        let cert = eta_certificate(&model, 64).unwrap();
        let unit = CertificateConstants::default();
        let exact: Vec<f64> = grid
            .iter()
            .map(|&m| coefficient_set(&model, n, m, 1e-12).unwrap().delta_m_sq)
            .collect();
        let bound: Vec<f64> = grid
            .iter()
            .map(|&m| {
                certified_coefficient_bounds(&cert, m, n, sigma, model.bound(), unit)
                    .unwrap()
                    .delta_sq_bound
            })
            .collect();
        let c2 = calibrate_constant(&exact[..1], &bound[..1]);
        for (e, b) in exact.iter().zip(&bound) {
            assert!(*e <= c2 * b * (1.0 + 1e-12));
        }
    }
}

#[test]
fn gamma_bound_holds_with_constant_three() {
    // j^{-3/2} summed over j >= i/m is at most max(zeta(3/2), 3 sqrt(m / i)),
    // so the certificate bound dominates gamma_m with C_1 = 3 for every m.
    let grid = [1usize, 2, 4, 8, 16, 32, 64];
    for model in [ts(0.4), ts(0.7), ts(-0.5), ModelSpec::Exact(dyadic_contracting(6).unwrap())] {
        let n = 4096;
        let sigma = model.sigma_n(n).unwrap();
        let cert = eta_certificate(&model, 64).unwrap();
        let constants = CertificateConstants { c1: 3.0, c2: 1.0 };
        for &m in &grid {
            let exact = coefficient_set(&model, n, m, 1e-12).unwrap().gamma_m;
            let b = certified_coefficient_bounds(&cert, m, n, sigma, model.bound(), constants).unwrap();
            assert!(exact <= b.gamma_bound, "m={m}: {exact} > {}", b.gamma_bound);
        }
    }
}

#[test]
fn gamma_calibration_at_first_block_size_is_not_uniform() {
    // The exact-to-bound ratio for gamma grows with m towards zeta(3/2), so a
    // constant fitted at m = 1 underestimates larger block sizes.
    let model = ts(0.4);
    let n = 4096;
    let sigma = model.sigma_n(n).unwrap();
    let cert = eta_certificate(&model, 64).unwrap();
    let ratio = |m: usize| {
        let exact = coefficient_set(&model, n, m, 1e-12).unwrap().gamma_m;
        let b = certified_coefficient_bounds(&cert, m, n, sigma, model.bound(), CertificateConstants::default()).unwrap();
        exact / b.gamma_bound
    };
    let r1 = ratio(1);
    let r64 = ratio(64);
    assert!(r64 > r1);
    assert!(r64 < 3.0);
}

#[test]
fn normalized_gap_tightens() {
    let model = ts(0.4);
    let small = coupling_report(&model, 256, 4, 20_000, 9, 1.0, 1.0).unwrap();
    let large = coupling_report(&model, 4096, 10, 20_000, 9, 1.0, 1.0).unwrap();
    assert!(large.median_gap <= small.median_gap);
}

#[test]
fn coupling_tail_is_exponential() {
    let model = ts(0.4);
    let r = coupling_report(&model, 1024, 7, 100_000, 1, 1.0, 1.0).unwrap();
    assert!(r.lambda_hat < 0.0);
    assert!(r.lambda_hat.abs() >= 3.0 * r.lambda_se);
}
