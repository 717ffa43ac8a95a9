use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qswitch::experiments::{CsvTable, TRAJECTORY_HEADER};

const FIG2_PARAMS: &str = r#"{"params": {"omega_s": 5, "omega_q": 20, "gamma": 1,
    "cavity_detuning": 10, "storage_detuning": 1000, "gamma_q": 0, "gamma_e": 0}}"#;

fn qswitch(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qswitch"))
        .args(args)
        .current_dir(dir)
        .env_remove("QSWITCH_OUT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .map(|it| {
            it.map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
                .collect()
        })
        .unwrap_or_default();
    v.sort();
    v
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_three_files() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("fig2.json"), FIG2_PARAMS).unwrap();
    let o = qswitch(&["simulate", "--config", "fig2.json", "--out", "out/"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = tmp.path().join("out");
    assert_eq!(
        names(&out),
        ["simulate.csv", "simulate.meta.json", "simulate.metrics.json"]
    );
    let csv = fs::read_to_string(out.join("simulate.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), TRAJECTORY_HEADER.join(","));
    let m = json(&out.join("simulate.metrics.json"));
    for key in [
        "fidelity",
        "conditional_phase_rad",
        "p_return",
        "loss_decoherence",
        "loss_residual_internal",
        "mode_overlap",
        "t_gate_kappa_units",
    ] {
        assert!(m[key].is_number(), "missing {key}");
    }
    assert_eq!(m.as_object().unwrap().len(), 7);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for d in ["a", "b"] {
        let o = qswitch(&["simulate", "--out", d], tmp.path());
        assert_eq!(code(&o), 0);
    }
    for f in ["simulate.csv", "simulate.meta.json", "simulate.metrics.json"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(f)).unwrap(),
            fs::read(tmp.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn config_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("broken.json"), "{\"params\": {").unwrap();
    fs::write(tmp.path().join("typo.json"), r#"{"typo_key": 1}"#).unwrap();
    fs::write(
        tmp.path().join("invalid.json"),
        r#"{"params": {"omega_s": 5, "omega_q": 20, "gamma": 1,
            "cavity_detuning": 0, "storage_detuning": 1000, "gamma_q": 0, "gamma_e": 0}}"#,
    )
    .unwrap();
    for f in ["broken.json", "typo.json", "invalid.json", "missing.json"] {
        let o = qswitch(&["simulate", "--config", f, "--out", "out"], tmp.path());
        assert_eq!(code(&o), 1, "{f}");
    }
    let o = qswitch(&["simulate", "--config", "typo.json"], tmp.path());
    assert!(String::from_utf8_lossy(&o.stderr).contains("typo_key"));
    assert_eq!(code(&qswitch(&["bogus"], tmp.path())), 1);
    assert_eq!(code(&qswitch(&["simulate", "--dt", "-1"], tmp.path())), 1);
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn unstable_step_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qswitch(&["simulate", "--dt", "0.01", "--out", "out"], tmp.path());
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(names(&tmp.path().join("out")).is_empty());
}

#[test]
fn unwritable_output_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("taken"), "not a directory").unwrap();
    let o = qswitch(&["simulate", "--out", "taken/sub"], tmp.path());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn output_directory_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_qswitch"))
        .args(["emit"])
        .current_dir(tmp.path())
        .env("QSWITCH_OUT", "from_env")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let dir = tmp.path().join("from_env");
    assert_eq!(names(&dir), ["emit.csv", "emit.meta.json", "emit.metrics.json"]);
    let p = json(&dir.join("emit.metrics.json"))["p_out"].as_f64().unwrap();
    assert!(p > 0.999);
}

#[test]
fn analyze_and_optimize_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qswitch(&["analyze", "--out", "o"], tmp.path());
    assert_eq!(code(&o), 0);
    let t = CsvTable::parse(&fs::read_to_string(tmp.path().join("o/analyze.csv")).unwrap()).unwrap();
    assert_eq!(
        t.header,
        ["t", "E1", "E2", "E3", "overlap_s", "overlap_q", "overlap_e", "A_t"]
    );
    assert!(t.rows.len() > 100);

    fs::write(
        tmp.path().join("opt.json"),
        r#"{"optimization": {"free": [
            {"parameter": "alignment_offset", "lower": -5, "upper": 5}], "budget": 6}}"#,
    )
    .unwrap();
    let o = qswitch(&["optimize", "--config", "opt.json", "--out", "o"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(tmp.path().join("o/optimize_trace.csv")).unwrap();
    let trace = CsvTable::parse(&trace).unwrap();
    assert_eq!(trace.header, ["iteration", "alignment_offset", "objective"]);
    assert_eq!(trace.rows.len(), 6);
    let best = json(&tmp.path().join("o/optimize_best.json"));
    assert!(best["timing"]["switch_time"].is_number());
}

#[test]
fn preset_prints_kappa_units() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qswitch(&["preset", "nv-diamond"], tmp.path());
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["system"]["gamma"], 1.0);
    assert_eq!(code(&qswitch(&["preset", "unknown"], tmp.path())), 1);
}

#[test]
fn sweep_fig3b_reports_slope() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qswitch(&["sweep", "fig3b", "--out", "out/"], tmp.path());
    assert_eq!(code(&o), 0);
    let meta = json(&tmp.path().join("out/fig3b.meta.json"));
    let slope = meta["slope"].as_f64().unwrap();
    assert!((slope + 2.0).abs() < 0.3, "{slope}");
}

/// Everything the plotting scripts read comes out of `reproduce-all`.
#[test]
fn reproduce_all_writes_figure_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qswitch(&["reproduce-all", "--out", "all"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let dir = tmp.path().join("all");
    let mut expected = Vec::new();
    for n in ["fig2", "fig3a", "fig3b", "fig3c", "realizations"] {
        for ext in ["csv", "meta.json", "metrics.json"] {
            expected.push(format!("{n}.{ext}"));
        }
    }
    expected.sort();
    assert_eq!(names(&dir), expected);
    let table = |n: &str| {
        CsvTable::parse(&fs::read_to_string(dir.join(format!("{n}.csv"))).unwrap()).unwrap()
    };
    let fig2 = table("fig2");
    assert_eq!(fig2.header, TRAJECTORY_HEADER);
    let ps = fig2.column("ps_g").unwrap();
    assert!(ps.iter().cloned().fold(0.0, f64::max) > 0.45);
    assert_eq!(table("fig3a").header, ["gamma_over_kappa", "p_out"]);
    let b = table("fig3b");
    assert!(b.column("omega_q_over_kappa").is_some() && b.column("infidelity").is_some());
    assert_eq!(b.rows.len(), 5);
    assert_eq!(
        table("fig3c").header,
        ["gamma_beta", "fidelity_gamma_q", "fidelity_gamma_e", "fidelity_both"]
    );
    let r = json(&dir.join("realizations.metrics.json"));
    assert_eq!(r["cases"].as_array().unwrap().len(), 3);
}
