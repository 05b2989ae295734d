//! The `acai` binary end to end on a tiny oracle configuration.

use std::path::Path;
use std::process::{Command, Output};

use acai_core::harness::EvalReport;
use acai_core::metrics::{cai_pair, AccGapPair};

const TINY: [&str; 12] = [
    "--set", "dataset.train=200",
    "--set", "dataset.validation=120",
    "--set", "dataset.test=120",
    "--set", "classifier.epochs=1",
    "--set", "interventions.top_k=1",
    "--set", "evaluation.min_count=3",
];

fn acai(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acai"))
        .args(args)
        .env("ACAI_OUTPUT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn tiny(verb: &str, out: &Path, extra: &[&str]) -> Vec<String> {
    let mut v = vec![verb.to_string(), "--out".into(), out.display().to_string(), "--set".into(), "classifier.widths=[4,8,8,8]".into()];
    v.extend(TINY.iter().map(|s| s.to_string()));
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn run_ok(args: &[String], root: &Path) {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = acai(&refs, root);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_one() {
    let root = tempfile::tempdir().unwrap();
    for args in [vec!["frobnicate"], vec!["run-all", "--bogus-flag"], vec![]] {
        let out = acai(&args, root.path());
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"), "{args:?} prints usage");
    }
    let out = acai(&["--help"], root.path());
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn bad_config_exits_one_and_bad_kind_too() {
    let root = tempfile::tempdir().unwrap();
    let out = acai(&["datagen", "--config", "/nonexistent.json"], root.path());
    assert_eq!(out.status.code(), Some(1));
    let run = root.path().join("r");
    let mut args = tiny("intervene", &run, &["--kind", "XY", "--code", "0"]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(acai(&refs, root.path()).status.code(), Some(1));
    args = tiny("intervene", &run, &["--kind", "DA", "--code", "99"]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(acai(&refs, root.path()).status.code(), Some(1));
}

#[test]
fn training_failure_exits_two_and_records_the_stage() {
    let root = tempfile::tempdir().unwrap();
    let run = root.path().join("r");
    // Every bin falls below the minimum count, so evaluation fails.
    run_ok(&tiny("datagen", &run, &["--set", "evaluation.min_count=100000"]), root.path());
    let args = tiny("scan", &run, &["--set", "evaluation.min_count=100000"]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = acai(&refs, root.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let failure: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("failure.json")).unwrap()).unwrap();
    assert_eq!(failure["stage"], "scan");
}

#[test]
fn mismatched_config_in_existing_run_is_refused() {
    let root = tempfile::tempdir().unwrap();
    let run = root.path().join("r");
    run_ok(&tiny("datagen", &run, &[]), root.path());
    let args = tiny("datagen", &run, &["--seed", "5"]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(acai(&refs, root.path()).status.code(), Some(1));
}

fn read_report(dir: &Path) -> EvalReport {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report").join("report.json")).unwrap()).unwrap()
}

#[test]
fn run_all_is_deterministic_resumable_and_regenerable() {
    let root = tempfile::tempdir().unwrap();
    let a = root.path().join("a");
    let b = root.path().join("b");
    run_ok(&tiny("run-all", &a, &["--seed", "7"]), root.path());
    for f in ["config.json", "data/manifest.csv", "data/spec.json", "baseline/model.ckpt", "baseline/curve.csv", "scan/ranking.json"] {
        assert!(a.join(f).exists(), "missing {f}");
    }
    let report = read_report(&a);
    assert_eq!(report.factors.len(), 1);
    let f = &report.factors[0];
    let labels: Vec<&str> = f.unsupervised.iter().map(|r| r.label.as_str()).collect();
    let i = f.code + 1;
    assert_eq!(labels, ["Base".to_string(), format!("DA-{i}"), format!("AA-{i}"), format!("SC-{i}")]);
    assert!(f.generalization.last().unwrap().label.starts_with("ACAI ("));
    assert_eq!((f.unsupervised[0].cai_05, f.unsupervised[0].cai_075), (0.0, 0.0));
    let ranked: std::collections::BTreeSet<usize> = report.ranking.iter().map(|r| r.code).collect();
    assert_eq!(ranked, (0..10).collect());
    assert!(a.join("report").join("figures").join(format!("traversal_c{i}.png")).exists());

    // Same config and seed in a fresh directory: identical report.
    run_ok(&tiny("run-all", &b, &["--seed", "7"]), root.path());
    assert_eq!(read_report(&b), report);

    // Drop the report and one intervention; resuming rebuilds them identically.
    std::fs::remove_dir_all(a.join("report")).unwrap();
    std::fs::remove_dir_all(a.join("interventions").join(format!("SC-{i}"))).unwrap();
    run_ok(&tiny("evaluate", &a, &["--seed", "7"]), root.path());
    assert_eq!(read_report(&a), report);

    // Regeneration from disk rewrites byte-identical tables.
    let table = a.join("report").join(format!("c{i}_generalization.csv"));
    let before = std::fs::read(&table).unwrap();
    let md_before = std::fs::read(a.join("report").join("report.md")).unwrap();
    std::fs::remove_file(&table).unwrap();
    run_ok(&["report".into(), "--from".into(), a.display().to_string()], root.path());
    assert_eq!(std::fs::read(&table).unwrap(), before);
    assert_eq!(std::fs::read(a.join("report").join("report.md")).unwrap(), md_before);

    // CSV re-parse: CAI recomputed from Acc/Acc_gap matches the stored column.
    let mut rdr = csv::Reader::from_path(&table).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(headers.iter().collect::<Vec<_>>(), ["Setting", "Interv.", "Acc", "Acc_gap", "Acc_min", "CAI_0.5", "CAI_0.75"]);
    let rows: Vec<Vec<String>> = rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    let num = |r: &Vec<String>, k: usize| r[k].parse::<f64>().unwrap();
    let base = AccGapPair { acc: num(&rows[0], 2), acc_gap: num(&rows[0], 3) };
    for r in &rows {
        let (c5, c75) = cai_pair(base, AccGapPair { acc: num(r, 2), acc_gap: num(r, 3) });
        assert!((c5 - num(r, 5)).abs() <= 1e-9 && (c75 - num(r, 6)).abs() <= 1e-9, "{r:?}");
    }
}

#[test]
fn metrics_only_oracle_run_trains_no_gan() {
    let root = tempfile::tempdir().unwrap();
    let args = tiny(
        "run-all",
        Path::new(""),
        &["--set", "stages.interventions=false", "--set", "stages.acai=false", "--set", "stages.figures=false", "--set", "name=metrics"],
    );
    // Drop `--out ""` so the run lands under ACAI_OUTPUT_ROOT.
    let args: Vec<String> = args.into_iter().enumerate().filter(|(k, _)| *k != 1 && *k != 2).map(|(_, a)| a).collect();
    run_ok(&args, root.path());
    let run = root.path().join("metrics-seed0");
    assert!(run.join("report").join("report.json").exists());
    assert!(!run.join("generator").join("q.ckpt").exists());
    assert!(!run.join("generator").join("gan_log.csv").exists());
    assert!(!run.join("interventions").exists());
    let report = read_report(&run);
    assert!(report.acai.is_none());
    assert_eq!(report.factors.len(), 1);
    let labels: Vec<&str> = report.factors[0].unsupervised.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["Base"]);
}
