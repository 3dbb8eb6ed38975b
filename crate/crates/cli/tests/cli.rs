//! End-to-end runs of the `homsim` binary: outputs, determinism and exit codes.

use std::path::Path;
use std::process::{Command, Output};

const SOURCE: &str = r#"
[source]
material = "KTP"
length_mm = 1.0
grating_period_um = 3.425
pump_wavelength_um = 0.4054
temperature = "flux-optimal"
grid_points = 4096
span_factor = 4.0
"#;

fn homsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_homsim")).args(args).output().unwrap()
}

fn run_config(dir: &Path, body: &str, extra: &[&str]) -> Output {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    let out = dir.join("out");
    let mut args = vec!["--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    homsim(&args)
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("out/summary.json")).unwrap()).unwrap()
}

fn measure_config(material: &str) -> String {
    format!(
        "schema_version = 1\ncampaign = \"measure\"\n{SOURCE}\n[measure]\nintegration_time_s = 0.1\nhalf_range_um = 15.0\npoints = 151\n\n[[measure.samples]]\nlabel = \"s\"\nmaterial = \"{material}\"\nlength_mm = 2.0\n"
    )
}

#[test]
fn lists_presets() {
    let out = homsim(&["--list-presets"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["fig1b", "fig2", "fig3a", "fig3b", "fig4a", "fig4b", "table1"] {
        assert!(text.lines().any(|l| l == name), "missing preset {name}");
    }
}

#[test]
fn preset_run_writes_summary_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let status = homsim(&["--preset", "fig2", "--out", out.to_str().unwrap()]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let s = summary(dir.path());
    assert_eq!(s["schema_version"], 1);
    assert_eq!(s["report"]["rows"].as_array().unwrap().len(), 2);
    assert!(out.join("dip_no-sample.csv").exists());
    assert!(out.join("dip_ktp-5.07mm_counts.csv").exists());
}

#[test]
fn same_seed_reproduces_outputs_and_other_seed_differs() {
    let body = measure_config("KTP");
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(run_config(a.path(), &body, &["--seed", "7"]).status.success());
    assert!(run_config(b.path(), &body, &["--seed", "7"]).status.success());
    assert!(run_config(c.path(), &body, &["--seed", "8"]).status.success());
    let read = |d: &Path| std::fs::read(d.join("out/measure_s_sample.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_ne!(read(a.path()), read(c.path()));
}

#[test]
fn vacuum_sample_measures_unit_group_index() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(dir.path(), &measure_config("vacuum-test"), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let row = &summary(dir.path())["report"]["rows"][0];
    let ng = row["n_g"].as_f64().unwrap();
    let sigma = row["uncertainty"].as_f64().unwrap();
    assert!((ng - 1.0).abs() < 4.0 * sigma + 1e-6, "n_g {ng} ± {sigma}");
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = measure_config("KTP").replace("points = 151", "points = 151\nbogus = 3");
    let out = run_config(dir.path(), &body, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn empty_dip_case_list_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("schema_version = 1\ncampaign = \"dip\"\n{SOURCE}\n[dip]\nhalf_range_um = 10.0\npoints = 101\ncases = []\n");
    assert_eq!(run_config(dir.path(), &body, &[]).status.code(), Some(2));
}

#[test]
fn non_phase_matching_source_fails() {
    let dir = tempfile::tempdir().unwrap();
    let body = measure_config("KTP").replace("material = \"KTP\"\nlength_mm = 1.0", "material = \"vacuum-test\"\nlength_mm = 1.0");
    let out = run_config(dir.path(), &body, &[]);
    assert!(!out.status.success());
    assert_ne!(out.status.code(), Some(0));
    assert!(!dir.path().join("out/summary.json").exists());
}

fn sweep_config(mode: &str, start: f64, end: f64, extra: &str) -> String {
    format!(
        "schema_version = 1\ncampaign = \"sweep\"\n{SOURCE}\n[sweep]\nmode = \"{mode}\"\nsample = {{ material = \"KTP\", length_mm = 30.12 }}\nstart_c = {start}\nend_c = {end}\nstep_c = 0.5\nintegration_time_s = 0.05\n{extra}"
    )
}

#[test]
fn zero_width_calibration_sweep_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(dir.path(), &sweep_config("calibration", 26.0, 26.0, ""), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oven_limit_is_a_range_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(dir.path(), &sweep_config("calibration", 26.0, 30.0, "oven_range_c = [20.0, 29.0]\n"), &[]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn leaving_the_linear_region_is_a_protocol_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(dir.path(), &sweep_config("linear", 26.0, 34.0, ""), &[]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("recalibrate"));
}
