use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gridflow(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridflow"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = gridflow(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    if root.is_dir() {
        for e in fs::read_dir(root).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                out.extend(files(&p));
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    files(root)
        .into_iter()
        .map(|p| (p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn generate_is_reproducible_and_atomic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["generate", "--case", "ieee14", "--scenarios", "2", "--samples", "100", "--seed", "7"];
    ok(a.path(), &args);
    ok(b.path(), &args);
    let snap = snapshot(a.path());
    let names: Vec<String> = snap.iter().map(|(p, _)| p.to_string_lossy().into_owned()).collect();
    assert_eq!(
        names,
        [
            "datasets/ieee14/ieee14_scenario_01.csv",
            "datasets/ieee14/ieee14_scenario_02.csv",
            "datasets/ieee14/manifest.json"
        ]
    );
    assert_eq!(snap, snapshot(b.path()));
    ok(a.path(), &args);
    assert_eq!(snap, snapshot(a.path()));

    let c = tempfile::tempdir().unwrap();
    let o = gridflow(c.path(), &["generate", "--case", "missing.case", "--samples", "5"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.case"));
    assert!(files(c.path()).is_empty());
}

#[test]
fn solve_paths() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["solve", "--case", "ieee14"]);
    assert!(out.contains("converged=true"));
    let csv = fs::read_to_string(dir.path().join("reports/ieee14_solution.csv")).unwrap();
    assert_eq!(csv.lines().count(), 15);
    assert!(csv.starts_with("bus_id,bus_type,v_pu,delta_rad,p_pu,q_pu\n"));

    let case = dir.path().join("idle.case");
    fs::write(
        &case,
        "[meta]\nname,idle\nbase_mva,100\n[bus]\n1,slack,0,0,0,0,1,0\n2,pq,0,0,0,0,1,0\n3,pq,0,0,0,0,1,0\n\
         [branch]\n1,2,0.01,0.1,0,1,1\n2,3,0.02,0.2,0,1,1\n",
    )
    .unwrap();
    ok(dir.path(), &["solve", "--case", case.to_str().unwrap()]);
    let csv = fs::read_to_string(dir.path().join("reports/idle_solution.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[2].parse::<f64>().unwrap(), 1.0, "{line}");
        assert_eq!(f[3].parse::<f64>().unwrap(), 0.0, "{line}");
    }

    let heavy = tempfile::tempdir().unwrap();
    let o = gridflow(heavy.path(), &["solve", "--case", "ieee14", "--load-scale", "10"]);
    assert_eq!(o.status.code(), Some(2));
    let diag: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(heavy.path().join("reports/ieee14_solve.json")).unwrap()).unwrap();
    assert_eq!(diag["converged"], false);
    assert!(!heavy.path().join("reports/ieee14_solution.csv").exists());
}

const QUICK: [&str; 4] = ["--set", "train.max_epochs=3", "--set", "train.patience=3"];

fn train_args<'a>(arch: &'a str, seed: &'a str) -> Vec<&'a str> {
    let mut v = QUICK.to_vec();
    v.extend(["train", "--case", "ieee14", "--arch", arch, "--seed", seed]);
    v
}

#[test]
fn train_evaluate_report_pipeline() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let gen = ["generate", "--case", "ieee14", "--scenarios", "10", "--samples", "40", "--seed", "3"];
    for d in [&a, &b] {
        ok(d.path(), &gen);
        ok(d.path(), &train_args("sage", "11"));
        ok(d.path(), &["evaluate", "--checkpoint", d.path().join("checkpoints/ieee14_sage.ckpt").to_str().unwrap()]);
    }
    // Every artefact, checkpoint and plots included, is byte-identical.
    assert_eq!(snapshot(a.path()), snapshot(b.path()));

    let reports: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("reports/ieee14_sage_metrics.json")).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 10);
    let summary = fs::read_to_string(a.path().join("reports/ieee14_sage_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    for f in ["plots/ieee14_sage_loss.svg", "plots/ieee14_sage_nrmse.svg", "reports/ieee14_sage_history.csv"] {
        assert!(a.path().join(f).exists(), "{f}");
    }

    // A second architecture, then the cross-architecture report.
    ok(a.path(), &train_args("gcn", "11"));
    ok(a.path(), &["evaluate", "--checkpoint", a.path().join("checkpoints/ieee14_gcn.ckpt").to_str().unwrap()]);
    let out = ok(a.path(), &["report"]);
    assert!(out.contains("ieee14 ordering by NRMSE"), "{out}");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("reports/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rows"].as_array().unwrap().len(), 2);
    for f in ["summary_nrmse.svg", "summary_r2.svg", "summary_test_loss.svg"] {
        assert!(a.path().join("plots").join(f).exists());
    }

    // Failure paths.
    let ckpt = a.path().join("checkpoints/ieee14_gcn.ckpt");
    let o = gridflow(a.path(), &["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--test", "/nonexistent/*.csv"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no test files"));

    ok(a.path(), &["generate", "--case", "ieee30", "--scenarios", "1", "--samples", "5"]);
    let other = a.path().join("datasets/ieee30/*.csv");
    let o = gridflow(a.path(), &["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--test", other.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("ieee30"));
}

#[test]
fn invalid_config_is_rejected_with_field_names() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"train": {"lr": 1e-3, "epochs": 5}}"#).unwrap();
    let o = gridflow(dir.path(), &["--config", cfg.to_str().unwrap(), "solve", "--case", "ieee14"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("epochs"));

    let o = gridflow(dir.path(), &["--set", "train.batch_size=0", "solve", "--case", "ieee14"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.batch_size"));

    let o = gridflow(dir.path(), &["train", "--case", "ieee14", "--arch", "mlp"]);
    assert!(!o.status.success());
    assert!(files(dir.path()).iter().all(|p| p.ends_with("bad.json")));
}
