use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn lrq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrq")).args(args).output().expect("binary runs")
}

fn instance(name: &str) -> String {
    fixtures().join("instances").join(format!("{name}.vrp")).display().to_string()
}

#[test]
fn exact_solve_writes_feasible_result() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = lrq(&["solve", "--instance", &instance("P-n16-k8"), "--solver", "exact", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let res: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("P-n16-k8.result.json")).unwrap()).unwrap();
    assert_eq!(res["feasible"], true);
    assert!(res["gap"].as_f64().unwrap() >= 0.0);
    assert!(dir.path().join("P-n16-k8.episode.jsonl").exists());
}

#[test]
fn repeated_runs_are_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pool = fixtures().join("devices").display().to_string();
    for d in [&a, &b] {
        let o = lrq(&[
            "solve", "--instance", &instance("P-n19-k2"), "--solver", "sampler", "--pool", &pool, "--seed", "5",
            "--t-max", "6", "--shots", "32", "--sweeps", "40", "--out", d.path().to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["P-n19-k2.result.json", "P-n19-k2.episode.jsonl", "P-n19-k2.audit.jsonl", "summary.csv"] {
        let x = fs::read(a.path().join(f)).unwrap();
        assert!(!x.is_empty(), "{f} empty");
        assert_eq!(x, fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
    let summary = fs::read_to_string(a.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with("instance,total_circuits"));
}

#[test]
fn missing_instance_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = lrq(&["solve", "--instance", "/nonexistent/x.vrp", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out_cfg = dir.path().join("from-config");
    fs::write(&cfg, format!("instance = {}\nsolver = exact\nt_max = 3\nout = {}\n", instance("P-n16-k8"), out_cfg.display())).unwrap();
    let o = lrq(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out_cfg.join("P-n16-k8.result.json").exists());

    let out_flag = dir.path().join("from-flag");
    let o = lrq(&["solve", "--config", cfg.to_str().unwrap(), "--out", out_flag.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(out_flag.join("P-n16-k8.result.json").exists());

    fs::write(&cfg, "colour = blue\n").unwrap();
    assert_eq!(lrq(&["solve", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn gen_train_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    let o = lrq(&["gen", "--out", gen.to_str().unwrap(), "--count", "2", "--n-min", "8", "--n-max", "12", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let files: Vec<_> = fs::read_dir(&gen).unwrap().collect();
    assert_eq!(files.len(), 2);

    let model = dir.path().join("model");
    let pool = fixtures().join("devices").display().to_string();
    let o = lrq(&["bandit-train", "--pool", &pool, "--out", model.to_str().unwrap(), "--episodes", "200"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let curve = fs::read_to_string(model.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 201);

    let results = dir.path().join("results");
    let mut args = vec!["solve".to_string()];
    for f in fs::read_dir(&gen).unwrap() {
        args.push("--instance".into());
        args.push(f.unwrap().path().display().to_string());
    }
    args.extend(
        ["--solver", "sampler", "--t-max", "4", "--shots", "16", "--sweeps", "20", "--pool", &pool, "--out"]
            .map(String::from),
    );
    args.push(results.display().to_string());
    args.push("--bandit".into());
    args.push(model.join("bandit.json").display().to_string());
    let o = Command::new(env!("CARGO_BIN_EXE_lrq")).args(&args).output().unwrap();
    assert!(matches!(o.status.code(), Some(0) | Some(2)), "{}", String::from_utf8_lossy(&o.stderr));

    let o = lrq(&["report", results.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(results.join("instances.csv")).unwrap();
    assert!(table.contains("\nmean,") && table.contains("\nmedian,"));
    assert!(results.join("buckets.csv").exists());
}

#[test]
fn report_on_empty_dir_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lrq(&["report", dir.path().to_str().unwrap()]).status.code(), Some(1));
}
