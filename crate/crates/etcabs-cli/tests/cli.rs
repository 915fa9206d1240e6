//! End-to-end checks of the command-line surface: exit codes, produced
//! files, determinism and the format exports.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_etcabs")
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        r#"
seed = 11
times = [4e-4, 8e-4]
[system]
state_dim = 2
input_dim = 1
plant = ["-1*x1^3 + x1*x2^2", "x1*x2^2 - x1^2*x2 + x3"]
controller = ["-1*x2^3 - x1*x2^2"]
sigma_sq = 1.45161e-5
alpha = 2
[cones]
count = 4
[delta]
p = 4
d = 2.2360679774997896
z_radius = 1.0
epsilon = 1e-6
lp_samples = 300
max_rounds = 0
[isochron]
rho = 1.0
[overapprox]
tol = 1e-3
seed_directions = 16
{extra}
[reach]
grid_radial = 4
grid_angular = 6
"#
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn built_output_dir() -> &'static Path {
    use std::sync::OnceLock;
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = std::env::temp_dir().join(format!("etcabs-cli-shared-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let config = small_config(&dir, "emit_smtlib = true");
        let out = dir.join("out");
        let res = run(&[
            "build",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(
            res.status.success(),
            "build failed: {}",
            String::from_utf8_lossy(&res.stderr)
        );
        out
    })
}

#[test]
fn build_produces_all_artifacts() {
    let out = built_output_dir();
    for name in [
        "abstraction.json",
        "graph.dot",
        "bounds.csv",
        "transitions.csv",
        "segments.csv",
        "regions.csv",
        "radial_sweep.csv",
        "manifest.json",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    // SMT queries for the certified radii were requested by the config
    let smt_entries = std::fs::read_dir(out.join("smt")).unwrap().count();
    assert!(smt_entries >= 8, "expected SMT queries, found {smt_entries}");
}

#[test]
fn rebuild_is_byte_identical() {
    let out = built_output_dir();
    let first = std::fs::read(out.join("abstraction.json")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "emit_smtlib = true");
    let out2 = dir.path().join("out");
    let res = run(&[
        "build",
        config.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    let second = std::fs::read(out2.join("abstraction.json")).unwrap();
    assert_eq!(first, second, "abstraction.json differs between reruns");
}

#[test]
fn missing_config_field_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let broken = std::fs::read_to_string(&config)
        .unwrap()
        .replace("sigma_sq = 1.45161e-5\n", "");
    std::fs::write(&config, broken).unwrap();
    let res = run(&["build", config.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("sigma_sq"), "stderr must name the field: {err}");
}

#[test]
fn simulate_writes_trace_and_validation() {
    let out = built_output_dir();
    let dir = tempfile::tempdir().unwrap();
    let res = run(&[
        "simulate",
        out.join("abstraction.json").to_str().unwrap(),
        "--x0",
        "0.9,0.4",
        "--duration",
        "0.02",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "simulate failed: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("event_index,t_k,x1,x2,inter_event_time"));
    assert!(trace.lines().count() > 1);
    let validation = std::fs::read_to_string(dir.path().join("validation.json")).unwrap();
    assert!(validation.contains("\"passed\": true"));
}

#[test]
fn simulate_rejects_origin_and_uncovered_states() {
    let out = built_output_dir();
    let abs = out.join("abstraction.json");
    let res = run(&[
        "simulate",
        abs.to_str().unwrap(),
        "--x0",
        "0,0",
        "--duration",
        "0.01",
    ]);
    assert_eq!(res.status.code(), Some(2));
    // far outside the outermost band: distinct coverage exit code
    let res = run(&[
        "simulate",
        abs.to_str().unwrap(),
        "--x0",
        "50,50",
        "--duration",
        "0.01",
    ]);
    assert_eq!(res.status.code(), Some(4));
}

#[test]
fn validate_passes_and_zero_samples_warns() {
    let out = built_output_dir();
    let abs = out.join("abstraction.json");
    let res = run(&["validate", abs.to_str().unwrap(), "--samples", "25", "--seed", "3"]);
    assert!(
        res.status.success(),
        "validate failed: {}",
        String::from_utf8_lossy(&res.stdout)
    );
    let res = run(&["validate", abs.to_str().unwrap(), "--samples", "0"]);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stdout).contains("vacuous"));
}

#[test]
fn export_formats() {
    let out = built_output_dir();
    let abs = out.join("abstraction.json");
    let res = run(&["export", abs.to_str().unwrap(), "--format", "dot"]);
    assert!(res.status.success());
    let dot = String::from_utf8_lossy(&res.stdout);
    assert_eq!(dot.matches("label=").count(), 8); // 2 bands x 4 cones
    let res = run(&["export", abs.to_str().unwrap(), "--format", "bogus"]);
    assert_eq!(res.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let res = run(&[
        "export",
        abs.to_str().unwrap(),
        "--format",
        "csv",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(res.status.success());
    assert!(dir.path().join("bounds.csv").exists());
    assert!(dir.path().join("transitions.csv").exists());
}

#[test]
fn output_dir_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let env_out = dir.path().join("env-out");
    let res = Command::new(bin())
        .args(["build", config.to_str().unwrap()])
        .env("ETCABS_OUTPUT_DIR", env_out.to_str().unwrap())
        .output()
        .unwrap();
    assert!(res.status.success());
    assert!(env_out.join("abstraction.json").exists());
}

#[test]
fn shipped_benchmark_yields_48_states() {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/sec5.toml");
    let dir = tempfile::tempdir().unwrap();
    let res = run(&[
        "build",
        config.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "build failed: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("48 states"), "stdout: {stdout}");
    let dot = std::fs::read_to_string(dir.path().join("graph.dot")).unwrap();
    assert_eq!(dot.matches("label=").count(), 48);
}
