use std::path::Path;
use std::process::{Command, Output};

use superstat_cli::table::Table;

fn solver(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_solver"))
        .args(args)
        .env_remove("SUPERSTAT_THREADS")
        .output()
        .expect("solver binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SWEEP: &str = r#"
command = "sweep-alpha"

[problem]
loss = "square"
lambda = 1e-5
alphas = { start = 0.1, stop = 3.0, points = 30 }

[variance]
kind = "unit_covariance"
a = 2.0

[solver]
tol = 1e-10
max_iter = 200000
"#;

#[test]
fn sweep_has_fixed_schema_and_interpolation_peak() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sweep.toml", SWEEP);
    let out = dir.path().join("sweep.csv");
    let o = solver(&["sweep-alpha", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = Table::read_csv(&out).unwrap();
    assert_eq!(t.header, superstat_cli::SWEEP_COLUMNS);
    assert_eq!(t.rows.len(), 30);
    let alpha: Vec<f64> = t.numbers("alpha").unwrap().into_iter().map(Option::unwrap).collect();
    let eps: Vec<f64> = t.numbers("eps_g_theory").unwrap().into_iter().map(Option::unwrap).collect();
    // Near-interpolating ridge peaks where n = d.
    let peak = (0..eps.len()).max_by(|&i, &j| eps[i].total_cmp(&eps[j])).unwrap();
    assert!((alpha[peak] - 1.0).abs() < 0.15, "peak at alpha = {}", alpha[peak]);
    assert!(eps[peak] > eps[0] && eps[peak] > eps[29]);
    // No simulation requested.
    assert!(t.numbers("eps_g_emp_mean").unwrap().iter().all(Option::is_none));
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sim.toml",
        r#"
command = "simulate"

[problem]
loss = "logistic"
lambda = 1e-2
alphas = [0.5, 2.0]

[variance]
kind = "inverse_gamma"
a = 2.0
c = 1.0

[experiment]
d = 80
seeds = 4
n_test = 500
seed = 11
"#,
    );
    let run = |threads: &str| {
        let o = solver(&["simulate", "--config", &cfg, "--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        o.stdout
    };
    let a = run("1");
    assert_eq!(a, run("1"));
    assert_eq!(a, run("3"));
    let other = solver(&["simulate", "--config", &cfg, "--seed", "12"]);
    assert_ne!(a, other.stdout);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // Missing file and wrong command: configuration errors.
    assert_eq!(solver(&["bayes", "--config", "/nonexistent.toml"]).status.code(), Some(1));
    let sweep = write(dir.path(), "sweep.toml", SWEEP);
    let o = solver(&["bayes", "--config", &sweep]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sweep-alpha"));
    // Unknown key.
    let bad = write(dir.path(), "bad.toml", &SWEEP.replace("tol = 1e-10", "tolerance = 1e-10"));
    assert_eq!(solver(&["sweep-alpha", "--config", &bad]).status.code(), Some(1));
    // An infinite E[Δ] leaves the closed-form column empty; a bad class weight is an error.
    let heavy = "command = \"bayes\"\n[problem]\nalphas = [1.0]\n[variance]\nkind = \"inverse_gamma\"\na = 0.5\nc = 1.0\n";
    let heavy_cfg = write(dir.path(), "heavy.toml", heavy);
    let o = solver(&["bayes", "--config", &heavy_cfg]);
    assert_eq!(o.status.code(), Some(0));
    let t = Table::read(o.stdout.as_slice()).unwrap();
    assert_eq!(t.numbers("eps_bayes").unwrap(), vec![None]);
    let lopsided = write(dir.path(), "rho.toml", &heavy.replace("alphas", "rho_plus = 1.5\nalphas"));
    assert_eq!(solver(&["bayes", "--config", &lopsided]).status.code(), Some(1));
    // Iteration budget too small: results are written, exit code flags it.
    let starved = write(
        dir.path(),
        "starved.toml",
        &SWEEP.replace("max_iter = 200000", "max_iter = 2"),
    );
    let out = dir.path().join("starved.csv");
    let o = solver(&["sweep-alpha", "--config", &starved, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let t = Table::read_csv(&out).unwrap();
    assert!(t.column("converged").unwrap().iter().any(|c| **c == superstat_cli::table::Cell::Bool(false)));
    // Usage error.
    assert_eq!(solver(&["sweep-alpha"]).status.code(), Some(1));
    assert_eq!(solver(&["--help"]).status.code(), Some(0));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = superstat_cli::RunConfig::load(&path).unwrap();
            assert!(cfg.models().is_ok(), "{}", path.display());
            seen += 1;
        }
    }
    assert_eq!(seen, 6);
}
