use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_residence-lab"))
        .current_dir(dir)
        .env_remove("RESIDENCE_LAB_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, src: &str) {
    fs::write(dir.join(name), src).unwrap();
}

const OU: &str = r#"
[system]
catalog = "ou"
mu = -1.0
sigma = 1.0

[domain]
kind = "interval"
a = -1.0
b = 1.0

[sim]
x0 = [2.0]
paths = 2000
dt = 1e-3
t_max = 20.0
t_list = [0.5, 1.0]
lambdas = [0.5]

[[sim.bounds]]
kind = "target"
value = 0.01
quantity = { quantity = "not_hit_by", t = 20.0 }
"#;

#[test]
fn empty_config_lists_missing_fields() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(dir.path(), &["simulate"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("system") && err.contains("domain") && err.contains("sim"), "{err}");
}

#[test]
fn malformed_config_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.toml", "seed = 3\npaths = = 4\n");
    let out = bin(dir.path(), &["hit-stats", "--config", "c.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn transient_gbm_fails_the_recurrence_certificate() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.toml",
        r#"
[system]
catalog = "gbm_cubic"
alpha1 = 1.0
alpha2 = 1.0
alpha3 = 0.0

[domain]
kind = "interval"
a = -1.0
b = 1.0

[certify]
kind = "recurrence_strict"
v = "abs(x1)^0.5"
nu = "0"
mu = "0.125 * s^0.5"
grid = { kind = "radial", r_min = 0.0, r_max = 8.0, radii = 81 }
"#,
    );
    let out = bin(dir.path(), &["certify", "--config", "c.toml", "--out", "o"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("x = ["), "{err}");
    let csv = fs::read_to_string(dir.path().join("o/certificate.csv")).unwrap();
    assert!(csv.starts_with("kind,pass,worst_margin"));
    assert!(csv.contains("recurrence_strict,false"));
}

#[test]
fn hit_stats_writes_artifacts_and_is_reproducible_from_the_echo() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.toml", OU);
    let first = bin(dir.path(), &["hit-stats", "--config", "c.toml", "--out", "a", "--seed", "17", "--threads", "2"]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    for f in ["stats.json", "bounds.csv", "bounds.jsonl", "ecdf.csv", "outcomes.csv", "resolved_config.toml"] {
        assert!(dir.path().join("a").join(f).exists(), "{f}");
    }
    let echo = fs::read_to_string(dir.path().join("a/resolved_config.toml")).unwrap();
    assert!(echo.contains("seed = 17"));
    let again = bin(dir.path(), &["hit-stats", "--config", "a/resolved_config.toml", "--out", "b"]);
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
    for f in ["stats.json", "outcomes.csv", "bounds.csv"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let bounds = fs::read_to_string(dir.path().join("a/bounds.csv")).unwrap();
    assert!(bounds.lines().nth(1).unwrap().ends_with("true") || bounds.contains(",true,"), "{bounds}");
}

#[test]
fn threads_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.toml", OU);
    let out = Command::new(env!("CARGO_BIN_EXE_residence-lab"))
        .current_dir(dir.path())
        .env("RESIDENCE_LAB_THREADS", "3")
        .args(["simulate", "--config", "c.toml", "--out", "o"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let echo = fs::read_to_string(dir.path().join("o/resolved_config.toml")).unwrap();
    assert!(echo.contains("threads = 3"));
    let paths = fs::read_to_string(dir.path().join("o/paths.csv")).unwrap();
    assert!(paths.starts_with("path_id,step,t,x1"));
}

#[test]
fn dirichlet_task_writes_the_solution_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.toml",
        r#"
[dirichlet]
drift = "-x^3"
delta = 1.0
x_r = 3.0
x0 = [2.0]
"#,
    );
    let out = bin(dir.path(), &["dirichlet", "--config", "c.toml", "--out", "o"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let tau = fs::read_to_string(dir.path().join("o/tau.csv")).unwrap();
    assert!(tau.starts_with("x,tau\n"));
    let rows = fs::read_to_string(dir.path().join("o/dirichlet.csv")).unwrap();
    let row: Vec<f64> = rows.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((row[1] - row[2]).abs() < 1e-3, "{rows}");
}

#[test]
fn synthesis_exit_codes_follow_admissibility() {
    let dir = tempfile::tempdir().unwrap();
    let spec = |p: f64, t: f64| {
        format!(
            r#"
[synthesize]
mode = "linear"
horizon = {t}
p = {p}
delta = 1.0
x0 = [2.0, 0.0]
a = [[0.0, 0.0], [0.0, 0.0]]
b = [[1.0, 0.0], [0.0, 1.0]]
c = [[1.0, 0.0], [0.0, 1.0]]
d = [[-1.0, 0.0], [0.0, -1.0]]
verify_paths = 2000
verify_dt = 1e-4
"#
        )
    };
    write(dir.path(), "ok.toml", &spec(0.9, 1.0));
    let out = bin(dir.path(), &["synthesize", "--config", "ok.toml", "--out", "ok"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("ok/synthesis.csv")).unwrap();
    assert!(csv.starts_with("field,value\n"));
    assert!(csv.contains("admissible,true"));
    assert!(dir.path().join("ok/verification.csv").exists());

    write(
        dir.path(),
        "cancel.toml",
        r#"
[synthesize]
mode = "cancel"
horizon = 0.1
p = 0.9
delta = 1.0
x0 = [3.0, 0.0]
g = ["sin(x2)", "x1 * x2"]
sigma_hat = "sqrt(0.5 * (1 + x1^2 + x2^2))"
alpha = 0.5
"#,
    );
    let out = bin(dir.path(), &["synthesize", "--config", "cancel.toml", "--out", "no"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("no/synthesis.csv").exists());
}

#[test]
fn task_mismatch_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.toml", &format!("task = \"certify\"\n{OU}"));
    let out = bin(dir.path(), &["simulate", "--config", "c.toml"]);
    assert_eq!(out.status.code(), Some(1));
}
