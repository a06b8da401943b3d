use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn mdlab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdlab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Data rows of a manifest-stamped CSV, header line included.
fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn missing_model_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = mdlab(&["coeffs", "--model", "./no/such/model.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("no/such/model.toml"), "{err}");
}

#[test]
fn unknown_subcommand_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let o = mdlab(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn negative_envelope_constant_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = mdlab(&["verify", "--model", "rademacher", "--c", "-1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_model_parameter_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = mdlab(&["coeffs", "--model", "two_state:rho=2"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn malformed_model_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        "states = [\"a\", \"b\"]\ntransition = [0.5, 0.5, 0.5]\nf_num = [1, -1]\ndenom = 1\n",
    )
    .unwrap();
    let o = mdlab(&["coeffs", "--model", path.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn model_file_runs_like_the_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flip.toml");
    std::fs::write(
        &path,
        "states = [\"up\", \"down\"]\ntransition = [0.5, 0.5, 0.5, 0.5]\nf_num = [1, -1]\ndenom = 1\n",
    )
    .unwrap();
    let a = dir.path().join("file");
    let b = dir.path().join("builtin");
    let args = ["coeffs", "--n", "400", "--m", "5", "--model"];
    let o = mdlab(&[&args[..], &[path.to_str().unwrap()]].concat(), &a);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(mdlab(&[&args[..], &["rademacher"]].concat(), &b).status.success());
    let ca = read_json(&a.join("coefficients.json"))["coefficients"].clone();
    let cb = read_json(&b.join("coefficients.json"))["coefficients"].clone();
    assert_eq!(ca, cb);
}

#[test]
fn rademacher_ratio_at_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = mdlab(
        &["verify", "--model", "rademacher", "--n", "100", "--chains", "0"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&dir.path().join("ratio.csv"));
    assert_eq!(rows[0][..2], ["x".to_owned(), "ratio".to_owned()]);
    let row = rows[1..]
        .iter()
        .find(|r| (r[0].parse::<f64>().unwrap() - 1.0).abs() < 1e-12)
        .expect("grid contains x = 1");
    let ratio: f64 = row[1].parse().unwrap();
    assert!((ratio - 1.16).abs() < 0.01, "{ratio}");
    for name in ["bounds.csv", "ks.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    assert!(!dir.path().join("mc_tails.csv").exists());
}

#[test]
fn rademacher_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let o = mdlab(&["coeffs", "--model", "rademacher", "--n", "400", "--m", "5"], dir.path());
    assert!(o.status.success());
    let c = &read_json(&dir.path().join("coefficients.json"))["coefficients"];
    assert!((c["eps_m"].as_f64().unwrap() - 0.25).abs() < 1e-12);
    assert_eq!(c["gamma_m"].as_f64(), Some(0.0));
    assert_eq!(c["delta_m"].as_f64(), Some(0.0));
}

#[test]
fn two_state_coefficients_report_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let o = mdlab(
        &["coeffs", "--model", "two_state:rho=0.4", "--n", "120", "--m", "6"],
        dir.path(),
    );
    assert!(o.status.success());
    let c = &read_json(&dir.path().join("coefficients.json"))["coefficients"];
    assert!(c["gamma_m"].as_f64().unwrap() > 0.0);
    assert!(c["gamma_truncation_error"].as_f64().unwrap() < 1e-10);
}

#[test]
fn mdp_scaled_log_tail() {
    let dir = tempfile::tempdir().unwrap();
    let o = mdlab(
        &["mdp", "--model", "rademacher", "--mdp-c", "1", "--n-grid", "10000,1000000"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&dir.path().join("mdp.csv"));
    assert_eq!(rows[0], ["n", "scaled_log_tail", "limit"]);
    let last = rows.last().unwrap();
    assert_eq!(last[0], "1000000");
    let value: f64 = last[1].parse().unwrap();
    assert!((value + 0.5).abs() < 0.05, "{value}");
}

#[test]
fn coupling_writes_pairs_and_tail_slope() {
    let dir = tempfile::tempdir().unwrap();
    let o = mdlab(
        &["coupling", "--model", "two_state:rho=0.4", "--n", "256", "--draws", "20000", "--seed", "3"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let j = read_json(&dir.path().join("coupling.json"));
    assert!(j["report"]["lambda_hat"].as_f64().unwrap() < 0.0);
    assert_eq!(j["report"]["draws"].as_u64(), Some(20000));
    let rows = csv_rows(&dir.path().join("pairs.csv"));
    assert_eq!(rows[0], ["z", "y", "gap"]);
    assert_eq!(rows.len(), 20001);
}

#[test]
fn outputs_carry_manifest_headers() {
    let dir = tempfile::tempdir().unwrap();
    let o = mdlab(
        &["verify", "--model", "two_state:rho=0.4", "--n", "128", "--chains", "2000", "--seed", "9"],
        dir.path(),
    );
    assert!(o.status.success());
    for name in ["ratio.csv", "bounds.csv", "mc_tails.csv"] {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        let header: Vec<&str> = text.lines().take(4).collect();
        assert!(header[0].starts_with("# tool=mdlab version="), "{name}");
        assert_eq!(header[1], "# command=verify");
        assert!(header[2].starts_with("# config_sha256="));
        assert_eq!(header[3], "# seed=9");
    }
    let ks = read_json(&dir.path().join("ks.json"));
    assert_eq!(ks["manifest"]["command"], "verify");
    assert_eq!(ks["manifest"]["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "model = \"rademacher\"\nn = 256\nm = 4\n").unwrap();
    let o = mdlab(
        &["coeffs", "--config", cfg.to_str().unwrap(), "--n", "1000", "--model", "two_state:rho=0.4"],
        &dir.path().join("out"),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let j = read_json(&dir.path().join("out/coefficients.json"));
    assert_eq!(j["model"], "rademacher");
    assert_eq!(j["n"].as_u64(), Some(256));
    assert_eq!(j["m"].as_u64(), Some(4));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "model = \"rademacher\"\nsamples = 3\n").unwrap();
    let o = mdlab(&["coeffs", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_runs_every_command() {
    let dir = tempfile::tempdir().unwrap();
    let o = mdlab(
        &[
            "report", "--model", "two_state:rho=0.4", "--n", "256", "--chains", "2000", "--draws", "5000",
            "--n-grid", "256,1024",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let j = read_json(&dir.path().join("report.json"));
    let commands = j["commands"].as_array().unwrap();
    assert_eq!(commands.len(), 4);
    assert!(commands.iter().all(|c| c["status"] == "ok"));
    for name in ["coefficients.json", "ratio.csv", "coupling.json", "mdp.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}
