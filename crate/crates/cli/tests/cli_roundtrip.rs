//! End-to-end tests of the `qmem` binary: exit codes, file round trips, and
//! the bundled fixtures.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qmem() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qmem"))
}

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(rel)
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("qmem-cli-test-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("process exited")
}

fn write_temp(dir: &Path, name: &str, content: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path
}

const SMALL_T1_CONFIG: &str = r#"
[hilbert]
n_cav = 12

[device]
chi = "500 kHz"
cavity_t1 = "1.4 ms"
cavity_tphi = "inf"
transmon_t1 = "30 us"
transmon_tphi = "inf"

[readout]
contrast = 0.9
baseline = 0.05

[experiment]
kind = "t1_fock"
points = 15
span = "5 ms"
"#;

#[test]
fn budget_fixture_reproduces_printed_values() {
    let out = temp_dir("budget6061");
    let status = qmem()
        .args(["budget"])
        .arg(fixture("budgets/table_storage_6061.toml"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(exit_code(&status), 0, "{status:?}");
    let machine = std::fs::read_to_string(out.join("budget.toml")).unwrap();
    let parsed: toml::Value = toml::from_str(&machine).unwrap();
    assert_eq!(parsed["total_q_printed"].as_float().unwrap(), 8e7);
    let text = std::fs::read_to_string(out.join("budget.txt")).unwrap();
    // Lower-bound channels mark the total as a bound.
    assert!(text.contains("≥"), "total should carry the bound marker");
    assert!(text.contains("Package conductor"));
}

#[test]
fn budget_without_channels_exits_2() {
    let dir = temp_dir("budget-empty");
    let path = write_temp(&dir, "empty.toml", "title = \"nothing\"\n");
    let status = qmem()
        .args(["budget"])
        .arg(&path)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&status), 2);
}

#[test]
fn budget_parse_error_exits_2_with_diagnostics() {
    let dir = temp_dir("budget-broken");
    let path = write_temp(
        &dir,
        "broken.toml",
        "[[channels]]\nname = \"x\"\nkind = \"participation\"\n",
    );
    let output = qmem()
        .args(["budget"])
        .arg(&path)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 2);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("participation"), "stderr: {stderr}");
}

#[test]
fn simulate_then_fit_round_trip() {
    let dir = temp_dir("sim-fit");
    let config = write_temp(&dir, "config.toml", SMALL_T1_CONFIG);
    let status = qmem()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&status), 0, "{status:?}");
    let dataset = dir.join("t1_fock.csv");
    assert!(dataset.exists());

    let status = qmem()
        .args(["fit"])
        .arg(&dataset)
        .args(["--model", "single_exp", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&status), 0, "{status:?}");
    let report = std::fs::read_to_string(dir.join("fit_single_exp.toml")).unwrap();
    let parsed: toml::Value = toml::from_str(&report).unwrap();
    assert!(parsed["converged"].as_bool().unwrap());
    let t1 = parsed["params"]["t1_s"].as_float().unwrap();
    assert!((t1 - 1.4e-3).abs() < 0.01 * 1.4e-3, "fitted t1 {t1}");
}

#[test]
fn simulate_json_format_round_trips_through_fit() {
    let dir = temp_dir("sim-json");
    let config = write_temp(&dir, "config.toml", SMALL_T1_CONFIG);
    let status = qmem()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&dir)
        .args(["--format", "json-like"])
        .output()
        .unwrap();
    assert_eq!(exit_code(&status), 0);
    let dataset = dir.join("t1_fock.json");
    let text = std::fs::read_to_string(&dataset).unwrap();
    assert!(text.trim_start().starts_with('{'));
    let status = qmem()
        .args(["fit"])
        .arg(&dataset)
        .args(["--model", "single_exp", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&status), 0);
}

#[test]
fn simulate_zero_length_sweep_exits_2() {
    let dir = temp_dir("sim-zero");
    let config = write_temp(
        &dir,
        "config.toml",
        &SMALL_T1_CONFIG.replace("points = 15", "points = 0"),
    );
    let status = qmem()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&status), 2);
}

#[test]
fn simulate_missing_config_exits_2() {
    let dir = temp_dir("sim-missing");
    let status = qmem()
        .args(["simulate", "--config"])
        .arg(dir.join("nope.toml"))
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&status), 2);
}

#[test]
fn fit_constant_trace_exits_4() {
    let dir = temp_dir("fit-flat");
    let mut csv = String::from("delay_s,probability\n");
    for i in 0..20 {
        csv.push_str(&format!("{:.9e},4.000000000000e-1\n", i as f64 * 1e-4));
    }
    let dataset = write_temp(&dir, "flat.csv", &csv);
    let output = qmem()
        .args(["fit"])
        .arg(&dataset)
        .args(["--model", "single_exp", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 4);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("constant"), "stderr: {stderr}");
}

#[test]
fn fit_unknown_model_exits_2() {
    let dir = temp_dir("fit-unknown");
    let dataset = write_temp(&dir, "d.csv", "delay_s,probability\n0.0,0.5\n1.0,0.4\n");
    let status = qmem()
        .args(["fit"])
        .arg(&dataset)
        .args(["--model", "triple_exp", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&status), 2);
}

const SMALL_WIGNER_CONFIG: &str = r#"
[hilbert]
n_cav = 16

[experiment]
kind = "wigner"
state = "fock:1"
grid_points = 21
grid_halfwidth = 1.5
"#;

#[test]
fn wigner_writes_grid_and_plot() {
    let dir = temp_dir("wigner");
    let config = write_temp(&dir, "config.toml", SMALL_WIGNER_CONFIG);
    let status = qmem()
        .args(["wigner", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&status), 0, "{status:?}");
    let csv = std::fs::read_to_string(dir.join("wigner.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "re_alpha,im_alpha,wigner");
    // Central value of |1⟩ is −2/π; the grid midpoint is row 10, col 10.
    let central: Vec<&str> = csv.lines().nth(1 + 10 * 21 + 10).unwrap().split(',').collect();
    let w: f64 = central[2].parse().unwrap();
    assert!(
        (w + std::f64::consts::FRAC_2_PI).abs() < 1e-6,
        "central Wigner value {w}"
    );
    let svg = std::fs::read_to_string(dir.join("wigner.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("<rect"));
}

#[test]
fn wigner_truncation_guard_exits_2() {
    let dir = temp_dir("wigner-guard");
    let config = write_temp(
        &dir,
        "config.toml",
        &SMALL_WIGNER_CONFIG.replace("grid_halfwidth = 1.5", "grid_halfwidth = 2.5"),
    );
    let status = qmem()
        .args(["wigner", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&status), 2);
}

const PIPELINE_MIXED_CONFIG: &str = r#"
[hilbert]
n_cav = 10

[readout]
contrast = 0.9
baseline = 0.05

[pipeline]
points = 21

[[devices]]
name = "good"
chi = "500 kHz"
cavity_t1 = "1.0 ms"
cavity_tphi = "inf"
transmon_t1 = "30 us"
transmon_tphi = "inf"

[[devices]]
name = "bad"
chi = "500 kHz"
cavity_t1 = "1.0 ms"
cavity_tphi = "inf"
nbar_th = 1.5
transmon_t1 = "30 us"
transmon_tphi = "inf"
"#;

#[test]
fn pipeline_records_per_row_failures_and_succeeds_if_any_row_does() {
    let dir = temp_dir("pipeline-mixed");
    let config = write_temp(&dir, "config.toml", PIPELINE_MIXED_CONFIG);
    let output = qmem()
        .args(["pipeline", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 0, "{output:?}");
    let summary = std::fs::read_to_string(dir.join("pipeline_summary.txt")).unwrap();
    assert!(summary.contains("good"));
    assert!(summary.contains("failed"), "summary: {summary}");
    assert!(summary.contains("nbar_th"), "per-row error recorded");
}

#[test]
fn pipeline_with_only_failing_rows_exits_3() {
    let dir = temp_dir("pipeline-allbad");
    // Keep only the invalid device.
    let config_text = {
        let marker = "[[devices]]\nname = \"bad\"";
        let idx = PIPELINE_MIXED_CONFIG.find("[[devices]]").unwrap();
        let tail = PIPELINE_MIXED_CONFIG[idx..]
            .find(marker)
            .map(|i| &PIPELINE_MIXED_CONFIG[idx + i..])
            .unwrap();
        format!("{}{}", &PIPELINE_MIXED_CONFIG[..idx], tail)
    };
    let config = write_temp(&dir, "config.toml", &config_text);
    let output = qmem()
        .args(["pipeline", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 3, "{output:?}");
}

#[test]
fn pipeline_empty_device_list_exits_2() {
    let dir = temp_dir("pipeline-empty");
    let config = write_temp(
        &dir,
        "config.toml",
        "[readout]\ncontrast = 0.9\n",
    );
    let status = qmem()
        .args(["pipeline", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&status), 2);
}

#[test]
fn simulate_is_deterministic_for_fixed_seed() {
    let dir_a = temp_dir("det-a");
    let dir_b = temp_dir("det-b");
    let config_text = SMALL_T1_CONFIG.replace(
        "[readout]",
        "[readout]\nshots = 2000\nseed = 3",
    );
    for dir in [&dir_a, &dir_b] {
        let config = write_temp(dir, "config.toml", &config_text);
        let status = qmem()
            .args(["simulate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(dir)
            .output()
            .unwrap();
        assert_eq!(exit_code(&status), 0);
    }
    let a = std::fs::read(dir_a.join("t1_fock.csv")).unwrap();
    let b = std::fs::read(dir_b.join("t1_fock.csv")).unwrap();
    assert_eq!(a, b, "identical config and seed must give identical bytes");
}

#[test]
fn seed_flag_changes_sampled_fractions() {
    let dir = temp_dir("seed-flag");
    let config_text = SMALL_T1_CONFIG.replace("[readout]", "[readout]\nshots = 2000\nseed = 3");
    let config = write_temp(&dir, "config.toml", &config_text);
    for (seed, name) in [("3", "a"), ("4", "b")] {
        let out = dir.join(name);
        let status = qmem()
            .args(["simulate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .args(["--seed", seed])
            .output()
            .unwrap();
        assert_eq!(exit_code(&status), 0);
    }
    let a = std::fs::read(dir.join("a/t1_fock.csv")).unwrap();
    let b = std::fs::read(dir.join("b/t1_fock.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn integration_failure_exits_3_without_partial_file() {
    // A 1e-30 s cavity lifetime drives the integrator step under its floor.
    let dir = temp_dir("sim-blowup");
    let config = write_temp(
        &dir,
        "config.toml",
        &SMALL_T1_CONFIG.replace("cavity_t1 = \"1.4 ms\"", "cavity_t1 = \"1e-30 s\""),
    );
    let output = qmem()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 3, "{output:?}");
    assert!(
        !dir.join("t1_fock.csv").exists(),
        "failed runs must not leave partial datasets"
    );
}

#[test]
fn thread_count_does_not_change_output_bytes() {
    let dir = temp_dir("threads");
    let config = write_temp(&dir, "config.toml", SMALL_T1_CONFIG);
    for (threads, name) in [("1", "a"), ("4", "b")] {
        let status = qmem()
            .args(["simulate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(dir.join(name))
            .env("QMEM_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(exit_code(&status), 0);
    }
    let a = std::fs::read(dir.join("a/t1_fock.csv")).unwrap();
    let b = std::fs::read(dir.join("b/t1_fock.csv")).unwrap();
    assert_eq!(a, b, "worker count must not affect results");
}

#[test]
fn nbar_simulate_writes_estimate() {
    let dir = temp_dir("nbar");
    let status = qmem()
        .args(["simulate", "--config"])
        .arg(fixture("configs/nbar.toml"))
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&status), 0, "{status:?}");
    let text = std::fs::read_to_string(dir.join("nbar.toml")).unwrap();
    let parsed: toml::Value = toml::from_str(&text).unwrap();
    let est = parsed["nbar_estimate"].as_float().unwrap();
    // ln(1 + 0.05) against the configured 0.05.
    assert!((est - 0.04879).abs() < 2e-3, "estimate {est}");
}

#[test]
fn three_mode_participation_fixture_lists_unbudgeted_ptfe() {
    let dir = temp_dir("budget-siii");
    let status = qmem()
        .args(["budget"])
        .arg(fixture("budgets/participations_storage_threemodes.toml"))
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&status), 0);
    let text = std::fs::read_to_string(dir.join("budget.txt")).unwrap();
    assert!(text.contains("PTFE clamp bulk"));
    assert!(text.contains("(no q)"));
    // Purcell seam limit matches the storage-mode budget's value.
    assert!(text.contains("8e10"));
}
