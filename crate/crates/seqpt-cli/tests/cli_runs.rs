//! End-to-end runs of the `seqpt` binary: artifact shapes, config
//! handling, exit codes, and the RESULT summary line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn seqpt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqpt")).args(args).output().expect("spawn seqpt")
}

fn seqpt_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqpt"))
        .args(args)
        .env(key, value)
        .output()
        .expect("spawn seqpt")
}

fn stdout_str(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn out_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("seqpt-cli-tests").join(name);
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn read_json(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

#[test]
fn run_writes_artifacts_and_a_result_line() {
    let dir = out_dir("run");
    let out = seqpt(&[
        "run", "--dim", "3", "--process", "h01", "--loss", "0.5", "--estimator", "exact",
        "--out", dir.to_str().unwrap(),
    ]);
    let text = stdout_str(&out);
    assert_eq!(
        text.trim(),
        "RESULT process=h01 mode=ntp circuits=36 shots=0 fidelity=1.000000"
    );
    let rec = read_json(&dir, "reconstruction.json");
    assert_eq!(rec["dim"], 3);
    assert_eq!(rec["mode"], "ntp");
    assert_eq!(rec["basis"], "sylvester");
    assert_eq!(rec["circuits_executed"], 36);
    assert!(rec["fidelity_vs_true"].as_f64().unwrap() > 1.0 - 1e-9);
    assert_eq!(rec["chi_real"].as_array().unwrap().len(), 9);
    let proj = read_json(&dir, "projection.json");
    assert_eq!(proj["converged"], true);
}

#[test]
fn designs_emits_the_state_sets() {
    let qutrit: serde_json::Value =
        serde_json::from_str(&stdout_str(&seqpt(&["designs", "--dim", "3"]))).unwrap();
    assert_eq!(qutrit["kind"], "mub");
    assert_eq!(qutrit["n_bases"], 4);
    assert_eq!(qutrit["states"].as_array().unwrap().len(), 12);
    let product: serde_json::Value =
        serde_json::from_str(&stdout_str(&seqpt(&["designs", "--dim", "6"]))).unwrap();
    assert_eq!(product["kind"], "product");
    assert_eq!(product["left"]["dim"], 2);
    assert_eq!(product["right"]["dim"], 3);
    assert_eq!(product["right"]["states"].as_array().unwrap().len(), 12);
}

#[test]
fn compare_prints_one_row_per_process() {
    let text = stdout_str(&seqpt(&["compare", "--dim", "3", "--estimator", "exact"]));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("process"));
    assert!(lines[0].contains("seqpt-tp") && lines[0].contains("seqpt-ntp"));
    for (line, name) in lines[1..].iter().zip(["id", "h01", "h12"]) {
        assert!(line.starts_with(name), "row {line:?}");
        // Lossless processes: all three methods sit at fidelity 1.
        assert_eq!(line.matches("1.000000").count(), 3, "row {line:?}");
    }
}

#[test]
fn selective_writes_one_series_per_repetition() {
    let dir = out_dir("selective");
    let out = seqpt(&[
        "selective", "--dim", "6", "--process", "swap25", "--loss", "0.5", "--elements",
        "nonzero", "--m", "50", "--reps", "2", "--seed", "3", "--out", dir.to_str().unwrap(),
    ]);
    let text = stdout_str(&out);
    assert!(text.trim().starts_with("RESULT process=swap25 mode=bipartite-ntp"));
    for rep in 0..2 {
        let csv = fs::read_to_string(dir.join(format!("selective_rep{rep}.csv"))).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "m,fidelity");
        assert_eq!(lines.len(), 51);
        assert!(lines[1].starts_with("1,"));
        assert!(lines[50].starts_with("50,"));
    }
    let rec = read_json(&dir, "reconstruction.json");
    assert_eq!(rec["mask"].as_array().unwrap().len(), 25, "only the requested elements");
}

#[test]
fn mitigation_recovers_fidelity_lost_to_readout() {
    let fidelity_of = |extra: &[&str]| -> f64 {
        let mut args = vec![
            "run", "--dim", "3", "--process", "h01", "--loss", "0.5", "--estimator",
            "shots:4096", "--readout-fidelity", "0.9", "--seed", "77",
        ];
        args.extend_from_slice(extra);
        let text = stdout_str(&seqpt(&args));
        text.rsplit_once("fidelity=").unwrap().1.trim().parse().unwrap()
    };
    let raw = fidelity_of(&[]);
    let mitigated = fidelity_of(&["--mitigate"]);
    assert!(
        mitigated > raw + 0.02,
        "mitigation gained too little: {raw:.4} → {mitigated:.4}"
    );
}

#[test]
fn config_file_drives_a_run_and_explicit_flags_override_it() {
    let dir = out_dir("config");
    fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("seqpt.json");
    fs::write(
        &cfg,
        r#"{"dim": 3, "process": "h01", "loss": 0.5, "mode": "ntp", "estimator": "exact"}"#,
    )
    .unwrap();
    let from_file = stdout_str(&seqpt(&["run", "--config", cfg.to_str().unwrap()]));
    assert!(from_file.contains("process=h01"));
    let overridden = stdout_str(&seqpt(&[
        "run", "--config", cfg.to_str().unwrap(), "--process", "h12",
    ]));
    assert!(overridden.contains("process=h12"));
}

#[test]
fn seed_env_variable_is_a_fallback_for_the_flag() {
    let dir_env = out_dir("seed-env");
    let dir_flag = out_dir("seed-flag");
    let base = ["run", "--dim", "3", "--process", "h01", "--estimator", "shots:256"];
    let mut env_args = base.to_vec();
    env_args.extend(["--out", dir_env.to_str().unwrap()]);
    let out = seqpt_env(&env_args, "SEQPT_SEED", "99");
    assert!(out.status.success());
    let mut flag_args = base.to_vec();
    flag_args.extend(["--seed", "99", "--out", dir_flag.to_str().unwrap()]);
    // The explicit flag must also win over a conflicting environment.
    let out = seqpt_env(&flag_args, "SEQPT_SEED", "12345");
    assert!(out.status.success());
    assert_eq!(
        fs::read(dir_env.join("reconstruction.json")).unwrap(),
        fs::read(dir_flag.join("reconstruction.json")).unwrap()
    );
}

#[test]
fn bad_inputs_exit_nonzero_with_a_message() {
    let unknown = seqpt(&["run", "--dim", "3", "--process", "teleport"]);
    assert!(!unknown.status.success());
    assert!(!unknown.stderr.is_empty());

    let wrong_dim = seqpt(&["run", "--dim", "6", "--process", "h01"]);
    assert!(!wrong_dim.status.success());

    let unsupported = seqpt(&["designs", "--dim", "8"]);
    assert!(!unsupported.status.success());

    let dir = out_dir("bad-config");
    fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("typo.json");
    fs::write(&cfg, r#"{"proces": "h01"}"#).unwrap();
    let typo = seqpt(&["run", "--config", cfg.to_str().unwrap(), "--dim", "3"]);
    assert!(!typo.status.success());
    assert!(String::from_utf8_lossy(&typo.stderr).contains("proces"));
}
