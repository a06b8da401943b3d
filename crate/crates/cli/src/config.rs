//! Command-line flags, the optional TOML config file, and their resolution
//! into a [`RunConfig`].

use crate::error::CliError;
use clap::{Parser, Subcommand};
use mdlab::coefficients::{eta_certificate, select_block_size, GateMode, Purpose};
use mdlab::models::{Builtin, ModelFile, ModelSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const DEFAULT_N: usize = 1024;
pub const DEFAULT_X_MIN: f64 = 0.0;
pub const DEFAULT_X_MAX: f64 = 3.0;
pub const DEFAULT_X_COUNT: usize = 31;
pub const DEFAULT_CHAINS: usize = 10_000;
pub const DEFAULT_DRAWS: usize = 100_000;
pub const DEFAULT_N_GRID: [usize; 3] = [256, 1024, 4096];
/// Decay exponent assumed when neither `--m`, `--beta` nor a certificate exponent is available.
pub const FALLBACK_BETA: f64 = 2.0;

#[derive(Debug, Parser)]
#[command(name = "mdlab", version, about = "Moderate deviation laboratory for stationary bounded sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Coeffs,
    Verify,
    Coupling,
    Mdp,
    Report,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Deviation coefficients and gate verdicts.
    Coeffs(Args),
    /// Exact or simulated tails checked against the explicit bounds.
    Verify(Args),
    /// Quantile coupling of the standardized sum with a normal variable.
    Coupling(Args),
    /// Scaled log-tails along a grid of horizons.
    Mdp(Args),
    /// Runs every command into one output directory.
    Report(Args),
}

impl Command {
    pub fn split(self) -> (CommandKind, Args) {
        match self {
            Command::Coeffs(a) => (CommandKind::Coeffs, a),
            Command::Verify(a) => (CommandKind::Verify, a),
            Command::Coupling(a) => (CommandKind::Coupling, a),
            Command::Mdp(a) => (CommandKind::Mdp, a),
            Command::Report(a) => (CommandKind::Report, a),
        }
    }
}

/// Flags shared by every subcommand. The same keys, in snake case, are
/// accepted in the `--config` file, whose values take precedence.
#[derive(Debug, Clone, Default, clap::Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Args {
    /// TOML file with any of these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Built-in model (`name` or `name:key=value,...`) or a model file path.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Block length.
    #[arg(long, conflicts_with = "beta")]
    pub m: Option<usize>,
    /// Decay exponent used to choose the block length.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub x_min: Option<f64>,
    #[arg(long)]
    pub x_max: Option<f64>,
    #[arg(long)]
    pub x_count: Option<usize>,
    /// Simulated trajectories.
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `strict` or `practical`.
    #[arg(long)]
    pub gate_mode: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Constant of the Cramér envelope.
    #[arg(long = "c", allow_hyphen_values = true)]
    pub c: Option<f64>,
    /// Constant of the Berry-Esseen bound.
    #[arg(long, allow_hyphen_values = true)]
    pub be_constant: Option<f64>,
    /// Coupling region constant.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    /// Coupling gap constant.
    #[arg(long, allow_hyphen_values = true)]
    pub c_alpha: Option<f64>,
    /// Coupled draws.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Level `c` of the scaled tail `a_n^2 ln P(a_n W_n >= c)`.
    #[arg(long, allow_hyphen_values = true)]
    pub mdp_c: Option<f64>,
    /// Speed exponent `a` in `a_n = n^{-a}`.
    #[arg(long)]
    pub a_exponent: Option<f64>,
    /// Horizons for the scaled tails, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
}

impl Args {
    /// Fills every unset field of `self` from `other`.
    fn or(self, other: Args) -> Args {
        Args {
            config: self.config.or(other.config),
            model: self.model.or(other.model),
            n: self.n.or(other.n),
            m: self.m.or(other.m),
            beta: self.beta.or(other.beta),
            x_min: self.x_min.or(other.x_min),
            x_max: self.x_max.or(other.x_max),
            x_count: self.x_count.or(other.x_count),
            chains: self.chains.or(other.chains),
            seed: self.seed.or(other.seed),
            gate_mode: self.gate_mode.or(other.gate_mode),
            out: self.out.or(other.out),
            threads: self.threads.or(other.threads),
            c: self.c.or(other.c),
            be_constant: self.be_constant.or(other.be_constant),
            alpha: self.alpha.or(other.alpha),
            c_alpha: self.c_alpha.or(other.c_alpha),
            draws: self.draws.or(other.draws),
            mdp_c: self.mdp_c.or(other.mdp_c),
            a_exponent: self.a_exponent.or(other.a_exponent),
            n_grid: self.n_grid.or(other.n_grid),
        }
    }
}

/// Fully resolved run parameters. Everything except the output directory
/// and thread count enters the configuration hash.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub model: String,
    /// SHA-256 of the model file, when the model comes from a file.
    pub model_file_sha256: Option<String>,
    pub n: usize,
    pub m: usize,
    /// Exponent used to choose `m`, when it was not given.
    pub beta: Option<f64>,
    pub x_min: f64,
    pub x_max: f64,
    pub x_count: usize,
    pub chains: usize,
    pub seed: u64,
    pub gate_mode: GateMode,
    pub c: f64,
    pub be_constant: f64,
    pub alpha: f64,
    pub c_alpha: f64,
    pub draws: usize,
    pub mdp_c: f64,
    pub a_exponent: f64,
    pub n_grid: Vec<usize>,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl RunConfig {
    /// `x_count` evenly spaced points on `[x_min, x_max]`.
    pub fn x_grid(&self) -> Vec<f64> {
        if self.x_count == 1 {
            return vec![self.x_min];
        }
        let span = self.x_max - self.x_min;
        let last = (self.x_count - 1) as f64;
        (0..self.x_count)
            .map(|i| self.x_min + span * i as f64 / last)
            .collect()
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn load_config_file(path: &Path) -> Result<Args, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("config file {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("config file {}: {e}", path.display())))
}

/// Loads a model from a built-in spec or a model file path.
pub fn load_model(spec: &str) -> Result<(ModelSpec, Option<String>), CliError> {
    match Builtin::from_str(spec) {
        Ok(b) => Ok((b.build().map_err(CliError::model)?, None)),
        Err(mdlab::Error::UnknownBuiltin(_)) if looks_like_path(spec) => {
            let path = Path::new(spec);
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("model file {}: {e}", path.display())))?;
            let file = ModelFile::parse(&text).map_err(CliError::model)?;
            let chain = file.build().map_err(CliError::model)?;
            let digest = hex::encode(Sha256::digest(text.as_bytes()));
            Ok((ModelSpec::Exact(chain), Some(digest)))
        }
        Err(e) => Err(CliError::model(e)),
    }
}

fn looks_like_path(spec: &str) -> bool {
    spec.contains('/') || spec.contains('\\') || spec.ends_with(".toml") || Path::new(spec).exists()
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name}: must be positive and finite, got {v}")))
    }
}

/// Merges the config file over the flags, applies defaults and validates.
pub fn resolve(flags: Args) -> Result<(RunConfig, ModelSpec), CliError> {
    let args = match &flags.config {
        Some(path) => load_config_file(path)?.or(flags),
        None => flags,
    };
    let model_spec = args
        .model
        .clone()
        .ok_or_else(|| CliError::Config("model: no model given (use --model)".into()))?;
    let (model, model_file_sha256) = load_model(&model_spec)?;
    let model_name = match Builtin::from_str(&model_spec) {
        Ok(b) => b.to_string(),
        Err(_) => model_spec.clone(),
    };

    let n = args.n.unwrap_or(DEFAULT_N);
    if n == 0 {
        return Err(CliError::Config("n: must be at least 1".into()));
    }
    let (m, beta) = match args.m {
        Some(m) => (m, None),
        None => {
            let beta = match args.beta {
                Some(b) => b,
                None => eta_certificate(&model, 64)
                    .ok()
                    .and_then(|c| c.beta)
                    .filter(|b| b.is_finite() && *b > 1.0)
                    .unwrap_or(FALLBACK_BETA),
            };
            let m = if n < 2 {
                1
            } else {
                select_block_size(n, beta, Purpose::Cramer)
                    .map_err(|e| CliError::Config(format!("beta: {e}")))?
                    .m
            };
            (m, Some(beta))
        }
    };
    if m == 0 || m > n {
        return Err(CliError::Config(format!("m: need n >= m >= 1, got n = {n}, m = {m}")));
    }

    let x_min = args.x_min.unwrap_or(DEFAULT_X_MIN);
    let x_max = args.x_max.unwrap_or(DEFAULT_X_MAX);
    let x_count = args.x_count.unwrap_or(DEFAULT_X_COUNT);
    if !(x_min >= 0.0 && x_max >= x_min && x_max.is_finite()) {
        return Err(CliError::Config(format!(
            "x_min/x_max: need 0 <= x_min <= x_max, got [{x_min}, {x_max}]"
        )));
    }
    if x_count == 0 {
        return Err(CliError::Config("x_count: must be at least 1".into()));
    }
    let gate_mode = match &args.gate_mode {
        Some(s) => GateMode::from_str(s).map_err(|e| CliError::Config(format!("gate_mode: {e}")))?,
        None => GateMode::default(),
    };
    let chains = args.chains.unwrap_or(DEFAULT_CHAINS);
    let draws = args.draws.unwrap_or(DEFAULT_DRAWS);
    if draws == 0 {
        return Err(CliError::Config("draws: must be at least 1".into()));
    }
    let a_exponent = args.a_exponent.unwrap_or(0.25);
    if !(a_exponent > 0.0 && a_exponent < 0.5) {
        return Err(CliError::Config(format!("a_exponent: must lie in (0, 1/2), got {a_exponent}")));
    }
    let n_grid = args.n_grid.unwrap_or_else(|| DEFAULT_N_GRID.to_vec());
    if n_grid.is_empty() || n_grid.contains(&0) {
        return Err(CliError::Config("n_grid: need positive horizons".into()));
    }
    if args.threads == Some(0) {
        return Err(CliError::Config("threads: must be at least 1".into()));
    }
    let config = RunConfig {
        model: model_name,
        model_file_sha256,
        n,
        m,
        beta,
        x_min,
        x_max,
        x_count,
        chains,
        seed: args.seed.unwrap_or(0),
        gate_mode,
        c: positive("c", args.c.unwrap_or(1.0))?,
        be_constant: positive("be_constant", args.be_constant.unwrap_or(1.0))?,
        alpha: positive("alpha", args.alpha.unwrap_or(1.0))?,
        c_alpha: positive("c_alpha", args.c_alpha.unwrap_or(1.0))?,
        draws,
        mdp_c: args.mdp_c.unwrap_or(1.0),
        a_exponent,
        n_grid,
        out: args.out.unwrap_or_else(|| PathBuf::from("out")),
        threads: args.threads,
    };
    Ok((config, model))
}
