use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_darcy-mlmc");

const MLMC: &str = r#"[problem]
kind = "outflow"
dim = 2

[permeability]
model = "piecewise_constant"
layers = [
  { mu = 0.0, sigma2 = 1.0 },
  { mu = 0.0, sigma2 = 1.0 },
  { mu = 0.0, sigma2 = 1.0 },
]

[grid]
m0 = 4

[sampling]
seed = 4
eps = [0.1, 0.05]
estimator = "both"
warmup = 20
initial_level = 1
max_level = 3
"#;

const CONVERGENCE: &str = r#"[problem]
kind = "point_average"
dim = 2

[permeability]
model = "piecewise_correlated"
layers = [
  { mu = 0.0, sigma2 = 1.0, lambda = 0.3, norm = 2 },
  { mu = 4.0, sigma2 = 1.0, lambda = 0.1, norm = 2 },
  { mu = 0.0, sigma2 = 1.0, lambda = 0.3, norm = 2 },
]

[grid]
m0 = 8
levels = 2
reference_level = 3

[sampling]
seed = 9
samples = 30
"#;

const CGV: &str = r#"[problem]
kind = "outflow"
dim = 2

[permeability]
model = "lognormal"
mu = 0.0
sigma2 = 1.0
lambda = 0.3
norm = 1

[grid]
m0 = 4
levels = 2

[sampling]
samples = 30
"#;

const BENCH: &str = r#"[problem]
kind = "point_average"
dim = 3

[permeability]
model = "lognormal"
mu = 0.0
sigma2 = 1.0
lambda = 0.3
norm = 2

[bench]
m = [8, 16]
systems = 3

[output]
residuals = true
dump_field = true
"#;

fn run(dir: &Path, args: &[&str], config: &str, env_out: Option<&Path>) -> Output {
    let cfg = dir.join("in.toml");
    fs::write(&cfg, config).unwrap();
    let mut cmd = Command::new(BIN);
    cmd.args(args)
        .arg("--config")
        .arg(&cfg)
        .env_remove("DARCY_MLMC_OUT")
        .current_dir(dir);
    if let Some(p) = env_out {
        cmd.env("DARCY_MLMC_OUT", p);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

/// Drops wall-clock fields, the only ones allowed to differ between runs.
fn strip_seconds(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.retain(|k, _| !k.contains("seconds"));
            map.values_mut().for_each(strip_seconds);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_seconds),
        _ => {}
    }
}

#[test]
fn same_seed_gives_identical_outputs() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&run(t.path(), &["mlmc", "--out", a.to_str().unwrap()], MLMC, None));
    ok(&run(
        t.path(),
        &["mlmc", "--threads", "2", "--out", b.to_str().unwrap()],
        MLMC,
        None,
    ));
    assert_eq!(
        fs::read(a.join("levels.csv")).unwrap(),
        fs::read(b.join("levels.csv")).unwrap()
    );
    let (mut sa, mut sb) = (summary(&a), summary(&b));
    strip_seconds(&mut sa);
    strip_seconds(&mut sb);
    assert_eq!(sa, sb);
}

#[test]
fn emitted_config_reproduces_the_run() {
    let t = tempfile::tempdir().unwrap();
    let first = t.path().join("first");
    ok(&run(
        t.path(),
        &["convergence", "--seed", "77", "--out", first.to_str().unwrap()],
        CONVERGENCE,
        None,
    ));
    let emitted = fs::read_to_string(first.join("config.toml")).unwrap();
    let second = t.path().join("second");
    ok(&run(
        t.path(),
        &["convergence", "--out", second.to_str().unwrap()],
        &emitted,
        None,
    ));
    let csv = fs::read_to_string(first.join("levels.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(second.join("levels.csv")).unwrap());

    let s = summary(&first);
    let hash = s["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 16);
    assert_eq!(s["seed"], 77);
    assert_eq!(s["config"]["sampling"]["seed"], 77);
    let tag = format!("# command=convergence config_hash={hash} seed=77");
    assert!(csv.starts_with(&tag), "{csv}");
    assert!(emitted.starts_with(&tag), "{emitted}");
    assert_eq!(s, summary(&second));
}

#[test]
fn different_seed_changes_results_and_hash() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&run(
        t.path(),
        &["cgv-compare", "--out", a.to_str().unwrap()],
        CGV,
        None,
    ));
    ok(&run(
        t.path(),
        &["cgv-compare", "--seed", "1", "--out", b.to_str().unwrap()],
        CGV,
        None,
    ));
    let (sa, sb) = (summary(&a), summary(&b));
    assert_ne!(sa["config_hash"], sb["config_hash"]);
    assert_ne!(
        sa["results"]["rows"][0]["var_y_standard"],
        sb["results"]["rows"][0]["var_y_standard"]
    );
}

#[test]
fn csv_headers_are_stable() {
    let t = tempfile::tempdir().unwrap();
    let cases = [
        ("mlmc", MLMC, "eps,estimator,level,h,inv_h,n,mean,variance,cost"),
        (
            "convergence",
            CONVERGENCE,
            "level,h,inv_h,samples,abs_mean_error,mean_error_se,var_y,var_y_se,mean_q,var_q,cost",
        ),
        (
            "cgv-compare",
            CGV,
            "level,h,inv_h,samples,var_y_standard,var_y_cgv,reduction,work_standard,work_cgv,mean_y_standard,mean_y_cgv",
        ),
        (
            "solver-bench",
            BENCH,
            "m,dof,systems,mean_iterations,max_iterations,max_relative_residual,work_per_dof,mean_seconds,seconds_per_dof",
        ),
    ];
    for (cmd, cfg, header) in cases {
        let out = t.path().join(cmd);
        ok(&run(t.path(), &[cmd, "--out", out.to_str().unwrap()], cfg, None));
        let csv = fs::read_to_string(out.join("levels.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[1], header, "{cmd}");
        let width = header.split(',').count();
        assert!(lines.len() > 2);
        for l in &lines[2..] {
            assert_eq!(l.split(',').count(), width, "{cmd}: {l}");
        }
    }
}

#[test]
fn solver_bench_writes_optional_files() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("o");
    let res = run(t.path(), &["solver-bench", "--out", out.to_str().unwrap()], BENCH, None);
    ok(&res);
    let listed = String::from_utf8(res.stdout).unwrap();
    for f in [
        "levels.csv",
        "summary.json",
        "config.toml",
        "residuals.csv",
        "field.bin",
    ] {
        assert!(out.join(f).exists(), "{f}");
        assert!(listed.contains(f));
    }
    // first bench grid, 8^3 little-endian doubles
    let raw = fs::read(out.join("field.bin")).unwrap();
    assert_eq!(raw.len(), 8 * 512);
    assert!(raw.chunks(8).all(|c| f64::from_le_bytes(c.try_into().unwrap()) > 0.0));
    let res = fs::read_to_string(out.join("residuals.csv")).unwrap();
    let rows: Vec<Vec<f64>> = res
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows[0][2], 1.0);
    // the last entry of each history meets the tolerance
    for w in rows.windows(2) {
        if w[1][2] == 1.0 {
            assert!(w[0][3] < 1e-10);
        }
    }
    assert!(rows.last().unwrap()[3] < 1e-10);
}

#[test]
fn output_directory_precedence() {
    let t = tempfile::tempdir().unwrap();
    let env_dir = t.path().join("from-env");
    ok(&run(t.path(), &["cgv-compare"], CGV, Some(&env_dir)));
    assert!(env_dir.join("summary.json").exists());

    let flag_dir = t.path().join("from-flag");
    let other = t.path().join("unused");
    ok(&run(
        t.path(),
        &["cgv-compare", "--out", flag_dir.to_str().unwrap()],
        CGV,
        Some(&other),
    ));
    assert!(flag_dir.join("summary.json").exists());
    assert!(!other.exists());

    ok(&run(t.path(), &["cgv-compare"], CGV, None));
    assert!(t.path().join("darcy-mlmc-out").join("summary.json").exists());
}

fn config_error(config: &str, cmd: &str) -> String {
    let t = tempfile::tempdir().unwrap();
    let out = run(
        t.path(),
        &[cmd, "--out", t.path().join("o").to_str().unwrap()],
        config,
        None,
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!t.path().join("o").exists());
    String::from_utf8(out.stderr).unwrap()
}

#[test]
fn config_errors_name_the_line() {
    // unknown key
    let bad = MLMC.replace("warmup = 20", "warmpu = 20");
    let err = config_error(&bad, "mlmc");
    assert!(err.contains("line 20"), "{err}");
    assert!(err.contains("warmpu"), "{err}");

    // syntax
    let bad = MLMC.replace("dim = 2", "dim = = 2");
    let err = config_error(&bad, "mlmc");
    assert!(err.contains("line 3"), "{err}");

    // semantic check after parsing
    let bad = CONVERGENCE.replace("reference_level = 3", "reference_level = 2");
    let err = config_error(&bad, "convergence");
    assert!(err.contains("line 16") && err.contains("reference_level"), "{err}");

    // averaging box not aligned with the coarsest cells
    let bad = CONVERGENCE.replace("m0 = 8", "m0 = 12");
    let err = config_error(&bad, "convergence");
    assert!(err.contains("line 14") && err.contains("m = 12"), "{err}");

    let bad = MLMC.replace("eps = [0.1, 0.05]", "eps = [0.1, -0.05]");
    let err = config_error(&bad, "mlmc");
    assert!(err.contains("line 18"), "{err}");

    let bad = CGV
        .replace("[sampling]", "[sampling]\ncoupling = \"cgv\"")
        .replace("lognormal", "piecewise_constant");
    config_error(&bad, "mlmc");
}

#[test]
fn coarse_grid_variates_need_a_stationary_model() {
    let err = config_error(MLMC, "cgv-compare");
    assert!(err.contains("stationary"), "{err}");
    let cfg = MLMC.replace("[sampling]", "[sampling]\ncoupling = \"cgv\"");
    let err = config_error(&cfg, "mlmc");
    assert!(err.contains("coupling"), "{err}");
}

#[test]
fn missing_config_file_is_an_io_error() {
    let out = Command::new(BIN)
        .args(["mlmc", "--config", "/nonexistent/x.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
