use crate::config::{CommandKind, RunConfig};
use crate::error::CliError;
use crate::output::{Manifest, OutputDir};
use mdlab::bounds::{
    berry_esseen_bound, bernstein_bound, cramer_envelope, cramer_valid, freedman_bound,
    gaussian_tail_sandwich, peligrad_bound, uniform_x_range,
};
use mdlab::coefficients::{
    coefficient_set, eta_certificate, certified_coefficient_bounds, CoefficientSet, GateMode, GateVerdict, Gates,
    CertificateConstants, CertifiedBounds, DEFAULT_GAMMA_TOL,
};
use mdlab::coupling::{coupling_run, pairs_csv, CouplingReport};
use mdlab::exact::{conditional_mean_norms, distribution_of_sn, exact_tail, ks_distance_exact, max_partial_sum_tail};
use mdlab::models::ModelSpec;
use mdlab::montecarlo::{
    empirical_ks, exact_ratios, mdp_diagnostic, ratio_curve, simulate_w, tail_estimates, RatioCurve,
    RatioMode, RatioSource, MIN_KS_SAMPLES,
};
use mdlab::normal;
use serde::Serialize;

/// Largest horizon at which the running-maximum tail is computed for the Peligrad check.
pub const PELIGRAD_MAX_N: usize = 2048;
/// Relative slack allowed when comparing an exact probability with a bound.
const COMPARE_SLACK: f64 = 1e-12;

#[derive(Serialize)]
struct CoeffsPayload<'a> {
    model: &'a str,
    n: usize,
    m: usize,
    beta: Option<f64>,
    gate_mode: GateMode,
    /// Exact coefficients (exact tier).
    coefficients: Option<CoefficientSet>,
    /// Certificate-based bounds on `gamma_m` and `delta_m^2` with unit constants.
    certificate_bounds: Option<CertifiedBounds>,
    eps_m: f64,
    gates: Option<GateVerdict>,
    gates_strict: Option<GateVerdict>,
    gates_practical: Option<GateVerdict>,
    uniform_x_range: Option<f64>,
    berry_esseen_bound: Option<f64>,
    be_constant: f64,
    shape_mode: bool,
}

pub fn cmd_coeffs(config: &RunConfig, model: &ModelSpec, out: &mut OutputDir) -> Result<(), CliError> {
    let manifest = Manifest::new(CommandKind::Coeffs, config);
    let sigma = model.sigma_n(config.n)?;
    let eps_m = config.m as f64 * model.bound() / ((config.n as f64).sqrt() * sigma);
    let (coefficients, certificate_bounds) = match model {
        ModelSpec::Exact(_) => (Some(coefficient_set(model, config.n, config.m, DEFAULT_GAMMA_TOL)?), None),
        ModelSpec::Sampled(_) => {
            let cert = eta_certificate(model, config.m.max(64))?;
            let b = certified_coefficient_bounds(&cert, config.m, config.n, sigma, model.bound(), CertificateConstants::default())?;
            (None, Some(b))
        }
    };
    let verdict = |mode| coefficients.as_ref().map(|c| Gates::new(mode).check(c));
    let payload = CoeffsPayload {
        model: &config.model,
        n: config.n,
        m: config.m,
        beta: config.beta,
        gate_mode: config.gate_mode,
        gates: verdict(config.gate_mode),
        gates_strict: verdict(GateMode::Strict),
        gates_practical: verdict(GateMode::Practical),
        uniform_x_range: coefficients.as_ref().map(uniform_x_range),
        berry_esseen_bound: coefficients.as_ref().map(|c| berry_esseen_bound(c, config.be_constant)),
        coefficients,
        certificate_bounds,
        eps_m,
        be_constant: config.be_constant,
        shape_mode: true,
    };
    out.json("coefficients.json", &manifest, &payload)
}

#[derive(Serialize)]
struct KsPayload<'a> {
    model: &'a str,
    n: usize,
    m: usize,
    ks_exact: Option<f64>,
    ks_empirical: Option<f64>,
    chains: usize,
    varsigma_n: Option<f64>,
    berry_esseen_bound: Option<f64>,
    be_constant: f64,
    shape_mode: bool,
}

/// One row of `bounds.csv`; absent entries are written empty.
struct BoundRow {
    x: f64,
    exact_tail: Option<f64>,
    normal_tail: f64,
    bernstein: Option<f64>,
    sandwich: (f64, f64),
    freedman: Option<f64>,
    max_tail: Option<f64>,
    peligrad: Option<f64>,
    envelope: Option<f64>,
    envelope_valid: Option<bool>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn bounds_csv(rows: &[BoundRow]) -> String {
    let mut s = String::from(
        "x,exact_tail,normal_tail,bernstein,sandwich_lo,sandwich_hi,freedman,max_tail,peligrad,envelope,envelope_valid\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.x,
            opt(r.exact_tail),
            r.normal_tail,
            opt(r.bernstein),
            r.sandwich.0,
            r.sandwich.1,
            opt(r.freedman),
            opt(r.max_tail),
            opt(r.peligrad),
            opt(r.envelope),
            opt(r.envelope_valid),
        ));
    }
    s
}

fn within(value: f64, bound: f64) -> bool {
    value <= bound * (1.0 + COMPARE_SLACK)
}

/// First violated hard assertion as `(name, x, bound, exact)`.
fn first_violation(rows: &[BoundRow]) -> Option<(&'static str, f64, f64, f64)> {
    for r in rows {
        if let (Some(e), Some(b)) = (r.exact_tail, r.bernstein) {
            if !within(e, b) {
                return Some(("bernstein", r.x, b, e));
            }
        }
        let (lo, hi) = r.sandwich;
        if !(lo <= r.normal_tail * (1.0 + COMPARE_SLACK)) {
            return Some(("sandwich_lower", r.x, lo, r.normal_tail));
        }
        if !within(r.normal_tail, hi) {
            return Some(("sandwich_upper", r.x, hi, r.normal_tail));
        }
        if let (Some(e), Some(b)) = (r.exact_tail, r.freedman) {
            if !within(e, b) {
                return Some(("freedman", r.x, b, e));
            }
        }
        if let (Some(e), Some(b)) = (r.max_tail, r.peligrad) {
            if !within(e, b) {
                return Some(("peligrad", r.x, b, e));
            }
        }
    }
    None
}

pub fn cmd_verify(config: &RunConfig, model: &ModelSpec, out: &mut OutputDir) -> Result<(), CliError> {
    let manifest = Manifest::new(CommandKind::Verify, config);
    let grid = config.x_grid();
    let n = config.n;
    let sigma = model.sigma_n(n)?;
    let samples = (config.chains > 0).then(|| simulate_w(model, n, config.chains, config.seed));

    let (ratio, rows, ks_exact, coeffs) = match model {
        ModelSpec::Exact(chain) => {
            let coeffs = coefficient_set(model, n, config.m, DEFAULT_GAMMA_TOL)?;
            let table = distribution_of_sn(model, n)?;
            let (right, left) = exact_ratios(&table, &grid)?;
            let envelope = grid
                .iter()
                .map(|&x| cramer_envelope(&coeffs, x, config.c))
                .collect::<Result<Vec<_>, _>>()?;
            let gates = Gates::new(config.gate_mode);
            let scale = (n as f64).sqrt() * sigma;
            let norms = (n <= PELIGRAD_MAX_N).then(|| conditional_mean_norms(chain, n));
            let mut rows = Vec::with_capacity(grid.len());
            for (i, &x) in grid.iter().enumerate() {
                let exact = exact_tail(&table, x).exp();
                let (max_tail, peligrad) = match &norms {
                    Some(norms) => (
                        Some(max_partial_sum_tail(model, n, x * scale)?),
                        Some(peligrad_bound(x * scale, n, chain.bound(), norms)?),
                    ),
                    None => (None, None),
                };
                rows.push(BoundRow {
                    x,
                    exact_tail: Some(exact),
                    normal_tail: normal::sf(x),
                    bernstein: Some(bernstein_bound(&coeffs, x)?),
                    sandwich: gaussian_tail_sandwich(x)?,
                    // i.i.d. summands: M = S_n / (sqrt(n) sigma_n) has <M> = 1 and jumps <= ||X|| / (sqrt(n) sigma_n)
                    freedman: chain.is_iid().then(|| freedman_bound(x, 1.0, chain.bound() / scale)),
                    max_tail,
                    peligrad,
                    envelope: Some(envelope[i]),
                    envelope_valid: Some(cramer_valid(&coeffs, x, &gates)),
                });
            }
            let ratio = RatioCurve {
                n,
                m: config.m,
                source: RatioSource::Exact,
                x_grid: grid.clone(),
                right,
                left,
                right_ci: None,
                left_ci: None,
                envelope: Some(envelope),
            };
            (ratio, rows, Some(ks_distance_exact(&table)), Some(coeffs))
        }
        ModelSpec::Sampled(_) => {
            let chains = config.chains.max(1);
            let ratio = ratio_curve(model, n, config.m, &grid, RatioMode::Mc { chains, seed: config.seed })?;
            let rows = grid
                .iter()
                .map(|&x| {
                    Ok(BoundRow {
                        x,
                        exact_tail: None,
                        normal_tail: normal::sf(x),
                        bernstein: None,
                        sandwich: gaussian_tail_sandwich(x)?,
                        freedman: None,
                        max_tail: None,
                        peligrad: None,
                        envelope: None,
                        envelope_valid: None,
                    })
                })
                .collect::<Result<Vec<_>, mdlab::Error>>()?;
            (ratio, rows, None, None)
        }
    };

    out.csv("ratio.csv", &manifest, &ratio.to_csv())?;
    out.csv("bounds.csv", &manifest, &bounds_csv(&rows))?;
    if let Some(w) = &samples {
        let mut body = String::from("x,p,lo,hi\n");
        for t in tail_estimates(w, sigma, &grid, config.seed) {
            body.push_str(&format!("{},{},{},{}\n", t.x, t.p, t.lo, t.hi));
        }
        out.csv("mc_tails.csv", &manifest, &body)?;
    }
    let ks_empirical = match &samples {
        Some(w) if w.len() >= MIN_KS_SAMPLES => Some(empirical_ks(w, sigma)?),
        _ => None,
    };
    let ks = KsPayload {
        model: &config.model,
        n,
        m: config.m,
        ks_exact,
        ks_empirical,
        chains: config.chains,
        varsigma_n: coeffs.as_ref().map(|c| c.varsigma()),
        berry_esseen_bound: coeffs.as_ref().map(|c| berry_esseen_bound(c, config.be_constant)),
        be_constant: config.be_constant,
        shape_mode: true,
    };
    out.json("ks.json", &manifest, &ks)?;

    match first_violation(&rows) {
        Some((name, x, bound, exact)) => Err(CliError::Assertion(format!(
            "{name} at x = {x}: bound = {bound}, exact = {exact}"
        ))),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct CouplingPayload<'a> {
    model: &'a str,
    shape_mode: bool,
    report: CouplingReport,
}

pub fn cmd_coupling(config: &RunConfig, model: &ModelSpec, out: &mut OutputDir) -> Result<(), CliError> {
    let manifest = Manifest::new(CommandKind::Coupling, config);
    let (report, pairs) = coupling_run(
        model,
        config.n,
        config.m,
        config.draws,
        config.seed,
        config.alpha,
        config.c_alpha,
    )?;
    out.csv("pairs.csv", &manifest, &pairs_csv(&pairs, report.varsigma_n))?;
    out.json(
        "coupling.json",
        &manifest,
        &CouplingPayload {
            model: &config.model,
            shape_mode: true,
            report,
        },
    )
}

pub fn cmd_mdp(config: &RunConfig, model: &ModelSpec, out: &mut OutputDir) -> Result<(), CliError> {
    let manifest = Manifest::new(CommandKind::Mdp, config);
    let d = mdp_diagnostic(model, config.mdp_c, config.a_exponent, &config.n_grid)?;
    out.csv("mdp.csv", &manifest, &d.to_csv())
}

#[derive(Serialize)]
struct ReportEntry {
    command: CommandKind,
    status: &'static str,
    exit_code: i32,
    message: Option<String>,
}

#[derive(Serialize)]
struct ReportPayload<'a> {
    model: &'a str,
    commands: Vec<ReportEntry>,
    files: Vec<String>,
}

/// Runs every command; the exit code is the worst one encountered.
pub fn cmd_report(config: &RunConfig, model: &ModelSpec, out: &mut OutputDir) -> Result<(), CliError> {
    let manifest = Manifest::new(CommandKind::Report, config);
    type Step = fn(&RunConfig, &ModelSpec, &mut OutputDir) -> Result<(), CliError>;
    let steps: [(CommandKind, Step); 4] = [
        (CommandKind::Coeffs, cmd_coeffs),
        (CommandKind::Verify, cmd_verify),
        (CommandKind::Coupling, cmd_coupling),
        (CommandKind::Mdp, cmd_mdp),
    ];
    let mut entries = Vec::new();
    let mut worst: Option<CliError> = None;
    for (kind, step) in steps {
        let result = step(config, model, out);
        let (status, code, message) = match &result {
            Ok(()) => ("ok", 0, None),
            Err(e) => ("failed", e.exit_code(), Some(e.to_string())),
        };
        entries.push(ReportEntry {
            command: kind,
            status,
            exit_code: code,
            message,
        });
        if let Err(e) = result {
            if worst.as_ref().is_none_or(|w| e.exit_code() > w.exit_code()) {
                worst = Some(e);
            }
        }
    }
    let files = out.written.clone();
    out.json(
        "report.json",
        &manifest,
        &ReportPayload {
            model: &config.model,
            commands: entries,
            files,
        },
    )?;
    worst.map_or(Ok(()), Err)
}
