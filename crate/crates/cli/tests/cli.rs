//! End-to-end tests of the `loadshare` binary.

use std::path::Path;
use std::process::Command;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_loadshare"))
}

fn short_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("study.toml");
    std::fs::write(
        &path,
        "mode = \"all\"\nseed = 3\n\n[loop]\nhorizon_h = 200.0\n",
    )
    .unwrap();
    path
}

#[test]
fn runs_all_modes_and_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = short_config(tmp.path());
    let out = tmp.path().join("runs");
    let output = binary()
        .args(["--config"])
        .arg(&config)
        .args(["--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("excess_vs_nlp"), "missing summary: {stdout}");
    for name in [
        "nlp_poly_quadratic_seed3",
        "ofo-perfect_poly_quadratic_seed3",
        "ofo-mismatch_poly_quadratic_seed3",
        "ofo-adapt_poly_quadratic_seed3",
    ] {
        let dir = out.join(name);
        assert!(dir.join("trace.csv").is_file(), "missing trace in {name}");
        assert!(dir.join("metrics.txt").is_file(), "missing metrics in {name}");
    }
}

#[test]
fn single_mode_produces_no_gp_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let config = tmp.path().join("study.toml");
    std::fs::write(
        &config,
        "mode = \"nlp\"\nseed = 3\n\n[loop]\nhorizon_h = 100.0\n\n[output]\ndump_gp_datasets = true\n",
    )
    .unwrap();
    let output = binary()
        .args(["--config"])
        .arg(&config)
        .args(["--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let dir = out.join("nlp_poly_quadratic_seed3");
    let metrics = std::fs::read_to_string(dir.join("metrics.txt")).unwrap();
    assert!(!metrics.contains("mae_gp"));
    let gp_files = std::fs::read_dir(&dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with("gp_")
        })
        .count();
    assert_eq!(gp_files, 0);
}

#[test]
fn adaptive_mode_dumps_gp_datasets_when_asked() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let config = tmp.path().join("study.toml");
    std::fs::write(
        &config,
        "mode = \"ofo-adapt\"\nseed = 3\n\n[loop]\nhorizon_h = 150.0\n\n[output]\ndump_gp_datasets = true\n",
    )
    .unwrap();
    let output = binary()
        .args(["--config"])
        .arg(&config)
        .args(["--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let dir = out.join("ofo-adapt_poly_quadratic_seed3");
    let mut gp_files: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("gp_"))
        .collect();
    gp_files.sort();
    assert!(!gp_files.is_empty(), "expected GP dataset dumps");
    let first = std::fs::read_to_string(dir.join(&gp_files[0])).unwrap();
    assert!(first.starts_with("# beta ="), "dump header: {first}");
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let config = short_config(tmp.path());
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        let status = binary()
            .args(["--config"])
            .arg(&config)
            .args(["--mode", "ofo-adapt", "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let name = "ofo-adapt_poly_quadratic_seed3/trace.csv";
    let a = std::fs::read(out_a.join(name)).unwrap();
    let b = std::fs::read(out_b.join(name)).unwrap();
    assert_eq!(a, b, "trace files differ between identical runs");
}

#[test]
fn invalid_config_fails_with_field_name() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.toml");
    std::fs::write(&config, "[controller]\nnu = -1.0\n").unwrap();
    let output = binary().args(["--config"]).arg(&config).output().unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("controller.nu"), "stderr: {stderr}");
}

#[test]
fn out_of_range_demand_is_rejected_before_running() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("study.toml");
    std::fs::write(
        &config,
        "mode = \"ofo-perfect\"\nseed = 3\n\n[loop]\nhorizon_h = 100.0\n\n\
         [demand]\nsource = \"inline\"\nsegments = [[0.0, 250.0], [50.0, 379.0]]\n",
    )
    .unwrap();
    let output = binary().args(["--config"]).arg(&config).output().unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("demand.segments"), "stderr: {stderr}");
}

#[test]
fn failing_scenario_is_named() {
    // The perfect-knowledge mode cannot run against sinusoidal truth maps;
    // only the simulator knows that, so the runner must name the scenario.
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("study.toml");
    std::fs::write(
        &config,
        "mode = \"ofo-perfect\"\nseed = 3\n\n[loop]\nhorizon_h = 100.0\n\n\
         [truth]\nmap = \"sinusoidal\"\n",
    )
    .unwrap();
    let out = tmp.path().join("runs");
    let output = binary()
        .args(["--config"])
        .arg(&config)
        .args(["--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("ofo-perfect"), "stderr: {stderr}");
}

#[test]
fn print_config_emits_parseable_defaults() {
    let output = binary().args(["--print-config"]).output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains("rho1 = 0.017"));
    assert!(text.contains("nu = 0.001"));
    // The emitted text must parse back to the same configuration.
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("echo.toml");
    std::fs::write(&path, &text).unwrap();
    let echoed = binary()
        .args(["--config"])
        .arg(&path)
        .args(["--print-config"])
        .output()
        .unwrap();
    assert!(echoed.status.success());
    assert_eq!(String::from_utf8(echoed.stdout).unwrap(), text);
}
