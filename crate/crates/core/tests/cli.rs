//! End-to-end tests of the `sbm-lab` binary: subcommand composition, exit
//! codes, stderr shape, and byte-level reproducibility of sweep outputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sbm-lab"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn affiliation_json(p_in: f64, p_out: f64) -> String {
    format!(
        r#"{{"q": 2, "alpha": [0.5, 0.5], "pi": [[{p_in}, {p_out}], [{p_out}, {p_in}]]}}"#
    )
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process exited with a code")
}

fn stderr_line(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).trim_end().to_string()
}

#[test]
fn sample_fit_eval_round_trip_scores_well() {
    let dir = tempfile::tempdir().unwrap();
    let params = write(dir.path(), "p.json", &affiliation_json(0.85, 0.15));
    let graph = dir.path().join("g.graph");
    let fit = dir.path().join("fit.json");

    let out = bin()
        .args(["sample", "--params"])
        .arg(&params)
        .args(["--n", "60", "--seed", "5", "--out"])
        .arg(&graph)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr_line(&out));
    let text = std::fs::read_to_string(&graph).unwrap();
    assert!(text.starts_with("n=60 q=2\n"));
    assert!(text.contains("labels:"));

    let out = bin()
        .args(["fit", "--graph"])
        .arg(&graph)
        .args(["--q", "2", "--method", "vem", "--restarts", "5", "--out"])
        .arg(&fit)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr_line(&out));

    let out = bin()
        .args(["eval", "--fit"])
        .arg(&fit)
        .arg("--truth")
        .arg(&params)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr_line(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    let err_pi = parsed["err_pi"].as_f64().unwrap();
    let err_alpha = parsed["err_alpha"].as_f64().unwrap();
    assert!(
        err_pi < 0.15 && err_alpha < 0.15,
        "weak fit: err_pi={err_pi} err_alpha={err_alpha}"
    );
    let perm: Vec<u64> = parsed["best_perm"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    let mut sorted = perm.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, vec![1, 2], "best_perm must be 1-based: {perm:?}");
}

#[test]
fn seed_env_var_matches_explicit_flag() {
    let dir = tempfile::tempdir().unwrap();
    let params = write(dir.path(), "p.json", &affiliation_json(0.8, 0.2));
    let by_flag = dir.path().join("flag.graph");
    let by_env = dir.path().join("env.graph");

    let out = bin()
        .args(["sample", "--params"])
        .arg(&params)
        .args(["--n", "12", "--seed", "99", "--out"])
        .arg(&by_flag)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let out = bin()
        .args(["sample", "--params"])
        .arg(&params)
        .args(["--n", "12", "--out"])
        .arg(&by_env)
        .env("SBM_LAB_SEED", "99")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(
        std::fs::read(&by_flag).unwrap(),
        std::fs::read(&by_env).unwrap()
    );
}

#[test]
fn check_reports_indistinguishable_classes_with_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let params = write(dir.path(), "flat.json", &affiliation_json(0.5, 0.5));
    let out = bin()
        .args(["check", "--params"])
        .arg(&params)
        .args(["--zeta", "0.1", "--gamma", "0.2"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 3);
    let err = stderr_line(&out);
    assert!(
        err.starts_with("error: validation: ") && err.contains("A1"),
        "stderr: {err}"
    );
    // The report still lands on stdout for inspection.
    let report: serde_json::Value =
        serde_json::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(report["a1_ok"], serde_json::Value::Bool(false));

    let good = write(dir.path(), "good.json", &affiliation_json(0.8, 0.2));
    let out = bin()
        .args(["check", "--params"])
        .arg(&good)
        .args(["--zeta", "0.1", "--gamma", "0.2"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr_line(&out));
}

#[test]
fn exact_em_refuses_unenumerable_graphs_with_exit_5() {
    let dir = tempfile::tempdir().unwrap();
    let params = write(dir.path(), "p.json", &affiliation_json(0.8, 0.2));
    let graph = dir.path().join("g.graph");
    let status = bin()
        .args(["sample", "--params"])
        .arg(&params)
        .args(["--n", "30", "--seed", "1", "--out"])
        .arg(&graph)
        .status()
        .unwrap();
    assert!(status.success());
    let out = bin()
        .args(["fit", "--graph"])
        .arg(&graph)
        .args([
            "--q",
            "2",
            "--method",
            "exact-em",
            "--restarts",
            "2",
            "--out",
        ])
        .arg(dir.path().join("fit.json"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 5);
    assert!(
        stderr_line(&out).starts_with("error: size-limit: "),
        "stderr: {}",
        stderr_line(&out)
    );
}

#[test]
fn recover_analytic_two_class_worked_case() {
    let dir = tempfile::tempdir().unwrap();
    let params = write(dir.path(), "p.json", &affiliation_json(0.8, 0.2));
    let out = bin()
        .args(["recover", "--params"])
        .arg(&params)
        .args(["--analytic", "--q2n4"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr_line(&out));
    let rec: serde_json::Value =
        serde_json::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    let alpha: Vec<f64> = rec["alpha"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!((alpha[0] - 0.5).abs() < 1e-8 && (alpha[1] - 0.5).abs() < 1e-8);
    let want = [[0.8, 0.2], [0.2, 0.8]];
    for i in 0..2 {
        for j in 0..2 {
            let got = rec["pi"][i][j].as_f64().unwrap();
            assert!(
                (got - want[i][j]).abs() < 1e-8,
                "pi[{i}][{j}] = {got}, want {}",
                want[i][j]
            );
        }
    }
    assert_eq!(rec["flags"].as_array().unwrap().len(), 0);

    // Identical within- and between-rates leave the cube root at zero
    // information: the closed form must refuse.
    let flat = write(dir.path(), "flat.json", &affiliation_json(0.5, 0.5));
    let out = bin()
        .args(["recover", "--params"])
        .arg(&flat)
        .args(["--analytic", "--q2n4"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 4);
    assert!(
        stderr_line(&out).starts_with("error: degenerate: "),
        "stderr: {}",
        stderr_line(&out)
    );
}

#[test]
fn recover_empirical_requires_sampling_arguments() {
    let dir = tempfile::tempdir().unwrap();
    let params = write(dir.path(), "p.json", &affiliation_json(0.8, 0.2));
    let out = bin()
        .args(["recover", "--params"])
        .arg(&params)
        .arg("--empirical")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(
        stderr_line(&out).starts_with("error: usage: "),
        "stderr: {}",
        stderr_line(&out)
    );
    // Neither source flag is also a usage error (clap's own exit code).
    let out = bin()
        .args(["recover", "--params"])
        .arg(&params)
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn sweep_outputs_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "sweep.json",
        r#"{
            "truth": {"q": 2, "alpha": [0.5, 0.5],
                      "pi": [[0.8, 0.2], [0.2, 0.8]]},
            "n_grid": [6, 8],
            "seeds": 2,
            "methods": ["vem", "exact-em"],
            "restarts": 2,
            "max_iter": 60
        }"#,
    );
    let run = |out: &Path| {
        let o = bin()
            .args(["sweep", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .arg("--threads")
            .arg("2")
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "stderr: {}", stderr_line(&o));
        String::from_utf8(o.stdout).unwrap()
    };
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let stdout_a = run(&a);
    let stdout_b = run(&b);
    assert_eq!(stdout_a, stdout_b);
    assert!(stdout_a.contains("med_err_pi"));

    let csv_a = std::fs::read(&a).unwrap();
    let csv_b = std::fs::read(&b).unwrap();
    assert_eq!(csv_a, csv_b);
    let text = String::from_utf8(csv_a).unwrap();
    assert!(text.starts_with(
        "n,seed,method,err_pi,err_alpha,label_err,objective,kl_gap,ratio_stat,wall_ms,flags\n"
    ));
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 2);

    for suffix in [".fits.json", ".summary.json"] {
        let pa = dir.path().join(format!("a.csv{suffix}"));
        let pb = dir.path().join(format!("b.csv{suffix}"));
        assert_eq!(
            std::fs::read(&pa).unwrap(),
            std::fs::read(&pb).unwrap(),
            "{suffix} differs between runs"
        );
    }
}

#[test]
fn concentrate_prints_quantile_table() {
    let dir = tempfile::tempdir().unwrap();
    let params = write(dir.path(), "p.json", &affiliation_json(0.9, 0.1));
    let summary = dir.path().join("conc.json");
    let out = bin()
        .args(["concentrate", "--params"])
        .arg(&params)
        .args(["--n", "8", "--seeds", "4", "--restarts", "2", "--out"])
        .arg(&summary)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr_line(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("class_mass") && text.contains("p50"));
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(parsed["mass"].as_array().unwrap().len(), 4);
}

#[test]
fn malformed_inputs_exit_with_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", "{ not json");
    let out = bin()
        .args(["sample", "--params"])
        .arg(&bad)
        .args(["--n", "5", "--seed", "0", "--out"])
        .arg(dir.path().join("g.graph"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);

    // Validation failures (bad simplex) are distinguished from parse errors.
    let invalid = write(
        dir.path(),
        "inv.json",
        r#"{"q": 2, "alpha": [0.9, 0.2], "pi": [[0.5, 0.5], [0.5, 0.5]]}"#,
    );
    let out = bin()
        .args(["sample", "--params"])
        .arg(&invalid)
        .args(["--n", "5", "--seed", "0", "--out"])
        .arg(dir.path().join("g.graph"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 3);
    assert!(stderr_line(&out).starts_with("error: validation: "));

    let out = bin()
        .args(["fit", "--graph"])
        .arg(dir.path().join("missing.graph"))
        .args(["--q", "2", "--method", "vem", "--out"])
        .arg(dir.path().join("f.json"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}
