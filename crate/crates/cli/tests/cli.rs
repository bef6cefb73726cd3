use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 6] = [
    "--set",
    "sim.n=10",
    "--set",
    "data.epochs=2",
    "--set",
    "data.samples_per_epoch=20",
];

fn meanfield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meanfield"))
        .args(args)
        .env_remove("MEANFIELD_OUT_DIR")
        .output()
        .expect("spawn meanfield")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_outputs_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["simulate", "--out", out];
    args.extend(SMALL);
    let o = meanfield(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "schema.md",
        "config.toml",
        "summary.json",
        "arm0-power-q2_trajectory.csv",
        "arm1-power-q3_neurons.csv",
    ] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let traj = fs::read_to_string(dir.path().join("arm0-power-q2_trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,Q,"));
    // the written config reloads and reproduces itself
    let cfg = dir.path().join("config.toml");
    let again = tempfile::tempdir().unwrap();
    let o = meanfield(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        again.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        traj,
        fs::read_to_string(again.path().join("arm0-power-q2_trajectory.csv")).unwrap()
    );
}

#[test]
fn env_var_sets_default_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_meanfield"))
        .args(["gradcheck", "--set", "gradcheck.trials=5"])
        .env("MEANFIELD_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("gradcheck.json").is_file());
    assert!(dir.path().join("schema.md").is_file());
}

#[test]
fn gradcheck_passes_on_reference() {
    let dir = tempfile::tempdir().unwrap();
    let o = meanfield(&["gradcheck", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let v = json(&dir.path().join("gradcheck.json"));
    assert_eq!(v["arms"].as_array().unwrap().len(), 2);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "schema = 2\n").unwrap();
    assert_eq!(
        code(&meanfield(&[
            "simulate",
            "--config",
            bad.to_str().unwrap(),
            "--out",
            out
        ])),
        2
    );
    assert_eq!(
        code(&meanfield(&["simulate", "--set", "no_such_key=1", "--out", out])),
        2
    );
    assert_eq!(
        code(&meanfield(&["simulate", "--set", "sim.lambda=-1", "--out", out])),
        2
    );
    // the grid oracle is one-dimensional; the reference teacher lives in d = 2
    assert_eq!(code(&meanfield(&["fp-oracle", "--out", out])), 2);
    assert_eq!(code(&meanfield(&["no-such-command"])), 2);
}

#[test]
fn fit_rate_recovers_a_known_exponent() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let path = dir.path().join("traj.csv");
    let mut csv = String::from("t,Q\n");
    for i in 0..=200 {
        let t = i as f64 * 0.01;
        csv += &format!("{t},{}\n", 0.5 + 2.0 * (-3.0 * t).exp());
    }
    fs::write(&path, csv).unwrap();
    let input = format!("fit.input=\"{}\"", path.display());
    let o = meanfield(&["fit-rate", "--set", &input, "--set", "fit.q_star=0.5", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rate = json(&dir.path().join("fit.json"))["fit"]["rate"].as_f64().unwrap();
    assert!((rate - 3.0).abs() < 1e-9, "rate {rate}");
    // a trajectory that dips below Q* cannot be fitted
    let o = meanfield(&["fit-rate", "--set", &input, "--set", "fit.q_star=1.0", "--out", out]);
    assert_eq!(code(&o), 2);
    // missing input is a config error
    assert_eq!(code(&meanfield(&["fit-rate", "--out", out])), 2);
}

#[test]
fn lsi_bound_reports_both_arms() {
    let dir = tempfile::tempdir().unwrap();
    let o = meanfield(&["lsi-bound", "--out", dir.path().to_str().unwrap()]);
    assert!(matches!(code(&o), 0 | 2), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&dir.path().join("bounds.json"));
    assert_eq!(v["arms"].as_array().unwrap().len(), 2);
}

const ONE_D: &str = r#"schema = 1

[sim]
n = 10
d = 1
lambda = 1.0
dt = 0.001

[[teacher.neurons]]
u = 1.1
w = [1.0]

[[teacher.neurons]]
u = -3.2
w = [-3.0]

[[regularizers]]
kind = "quartic"
beta = 1.0

[grid]
half_width = 3.0
cells = 32
steps = 200
"#;

#[test]
fn fp_oracle_writes_fixed_point_and_flags_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = dir.path().join("oned.toml");
    fs::write(&cfg, ONE_D).unwrap();
    let cfg = cfg.to_str().unwrap();
    let o = meanfield(&["fp-oracle", "--config", cfg, "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "arm0-quartic_rho_star.csv",
        "arm0-quartic_rho_star.bin",
        "arm0-quartic_fp_trajectory.csv",
        "fp_report.json",
    ] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    assert_eq!(
        code(&meanfield(&[
            "fp-oracle",
            "--config",
            cfg,
            "--out",
            out,
            "--set",
            "grid.max_iter=2"
        ])),
        4
    );
}

#[test]
fn diverging_particles_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["simulate", "--out", dir.path().to_str().unwrap(), "--set", "sim.dt=1e6"];
    args.extend(SMALL);
    assert_eq!(code(&meanfield(&args)), 3);
}

#[test]
fn checked_in_schema_matches_generated() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&meanfield(&[
            "gradcheck",
            "--set",
            "gradcheck.trials=1",
            "--out",
            dir.path().to_str().unwrap()
        ])),
        0
    );
    let docs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schema.md");
    assert_eq!(
        fs::read_to_string(docs).unwrap(),
        fs::read_to_string(dir.path().join("schema.md")).unwrap(),
        "docs/schema.md is stale; regenerate it from any `meanfield` run"
    );
}

#[test]
fn shipped_configs_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/one_dim.toml");
    let o = meanfield(&[
        "fp-oracle",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}
