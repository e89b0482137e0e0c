use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mask-select"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// The declared world shrunk to a few hundred images.
fn small_config(dir: &Path) -> PathBuf {
    let text = fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../configs/default_world.json"
    ))
    .unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["world"]["num_images"] = 400.into();
    v["splits"] = serde_json::json!({"strong_pool": 200, "weak_pool": 100, "test": 100});
    v["n_initial"] = 30.into();
    v["n_total"] = 60.into();
    v["num_seeds"] = 2.into();
    let path = dir.join("small.json");
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

#[test]
fn budget_rows() {
    let o = run(&[
        "budget",
        "--strategy",
        "random",
        "--strong",
        "200",
        "--weak",
        "9118",
    ]);
    assert!(o.status.success());
    assert_eq!(
        stdout(&o),
        "strategy,n_strong,pool,n_weak,seconds,days\nrandom,200,0,9118,250541.96,2.90\n"
    );
    let o = run(&["budget", "--strategy", "mask_guided", "--strong", "400"]);
    assert_eq!(
        stdout(&o).lines().nth(1).unwrap(),
        "mask_guided,400,1464,0,119522.08,1.38"
    );
    let o = run(&[
        "budget",
        "--strategy",
        "mask_guided",
        "--strong",
        "400",
        "--pool",
        "300",
    ]);
    assert!(!o.status.success());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        vec!["budget", "--strategy", "random", "--strong", "1", "--bogus"],
        vec!["gen", "--out", "x"],
        vec!["run", "--config", "c.json", "--out", "x"],
        vec!["sweep", "--config", "c.json", "--out", "x"],
        vec!["frobnicate"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(!stderr(&o).is_empty());
    }
}

#[test]
fn missing_input_exits_1_with_path() {
    let o = run(&["select", "--scores", "/definitely/missing.csv", "--n", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/definitely/missing.csv"));
    let o = run(&[
        "run",
        "--config",
        "/no/such/config.json",
        "--seed",
        "1",
        "--out",
        "/tmp/unused",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/no/such/config.json"));
}

#[test]
fn select_from_scores_file() {
    let dir = TempDir::new().unwrap();
    let scores = dir.path().join("scores.csv");
    fs::write(
        &scores,
        "image_id,iou_score\n1,0.9\n2,0.45\n3,0.2\n4,0.55\n5,0.5\n",
    )
    .unwrap();
    let s = scores.to_str().unwrap();
    let o = run(&["select", "--scores", s, "--n", "3", "--beta", "0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "5\n2\n4\n");
    let o = run(&[
        "select",
        "--scores",
        s,
        "--n",
        "2",
        "--strategy",
        "random",
        "--seed",
        "4",
    ]);
    let a = stdout(&o);
    assert_eq!(a.lines().count(), 2);
    assert_eq!(
        a,
        stdout(&run(&[
            "select",
            "--scores",
            s,
            "--n",
            "2",
            "--strategy",
            "random",
            "--seed",
            "4"
        ]))
    );
    assert_eq!(fs::read_to_string(&scores).unwrap().lines().count(), 6);
}

#[test]
fn gen_is_byte_identical_across_runs_and_threads() {
    let dir = TempDir::new().unwrap();
    let outs: Vec<PathBuf> = (0..3).map(|i| dir.path().join(format!("g{i}"))).collect();
    for (i, out) in outs.iter().enumerate() {
        let o = bin()
            .args([
                "gen",
                "--seed",
                "7",
                "--images",
                "150",
                "--out",
                out.to_str().unwrap(),
            ])
            .env("RAYON_NUM_THREADS", if i == 2 { "3" } else { "1" })
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for name in ["dataset.json", "stats.csv"] {
        let first = fs::read(outs[0].join(name)).unwrap();
        for out in &outs[1..] {
            assert_eq!(first, fs::read(out.join(name)).unwrap(), "{name}");
        }
    }
    let stats = fs::read_to_string(outs[0].join("stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 151);
}

#[test]
fn run_is_byte_identical_across_runs_and_threads() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path());
    let before = fs::read(&cfg).unwrap();
    let outs: Vec<PathBuf> = (0..3).map(|i| dir.path().join(format!("r{i}"))).collect();
    for (i, out) in outs.iter().enumerate() {
        let o = bin()
            .args([
                "run",
                "--config",
                cfg.to_str().unwrap(),
                "--seed",
                "3",
                "--out",
                out.to_str().unwrap(),
            ])
            .env("RAYON_NUM_THREADS", if i == 2 { "4" } else { "1" })
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for name in ["report.csv", "analysis.csv"] {
        let first = fs::read(outs[0].join(name)).unwrap();
        for out in &outs[1..] {
            assert_eq!(first, fs::read(out.join(name)).unwrap(), "{name}");
        }
    }
    assert_eq!(before, fs::read(&cfg).unwrap());
    let report = fs::read_to_string(outs[0].join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 2 + 2);
}

fn field<'a>(header: &'a str, line: &'a str, name: &str) -> &'a str {
    let i = header.split(',').position(|h| h == name).unwrap();
    line.split(',').nth(i).unwrap()
}

#[test]
fn sweep_rows_match_individual_runs() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("sweep");
    let o = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "5",
        "--betas",
        "0.0:1.0:0.1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = sweep.lines();
    let header = lines.next().unwrap();
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 11);

    let base: serde_json::Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    for (i, row) in rows.iter().enumerate() {
        let beta = format!("{:.2}", i as f64 / 10.0);
        assert_eq!(field(header, row, "beta"), beta);
        let mut single = base.clone();
        single["selection"]["beta"] = serde_json::json!(i as f64 / 10.0);
        let path = dir.path().join(format!("b{i}.json"));
        fs::write(&path, single.to_string()).unwrap();
        let rout = dir.path().join(format!("run{i}"));
        let o = run(&[
            "run",
            "--config",
            path.to_str().unwrap(),
            "--seed",
            "5",
            "--out",
            rout.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let report = fs::read_to_string(rout.join("report.csv")).unwrap();
        let rh = report.lines().next().unwrap();
        let mean = report.lines().find(|l| l.starts_with("all,mean,")).unwrap();
        let std = report.lines().find(|l| l.starts_with("all,std,")).unwrap();
        for col in ["ap_annotation", "ap_segmentation", "mae_pp"] {
            assert_eq!(
                field(header, row, &format!("{col}_mean")),
                field(rh, mean, col),
                "beta {beta} {col}"
            );
            assert_eq!(
                field(header, row, &format!("{col}_std")),
                field(rh, std, col),
                "beta {beta} {col}"
            );
        }
        assert_eq!(
            field(header, row, "budget_days"),
            field(rh, mean, "budget_days")
        );
    }
    let analysis = fs::read_to_string(out.join("analysis.csv")).unwrap();
    assert_eq!(analysis.lines().count(), 12);
}

#[test]
fn analyze_writes_one_row_per_beta_plus_random() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("an");
    let o = run(&[
        "analyze",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "1",
        "--betas",
        "0.0,0.5,1.0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("analysis.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("random,,60,"));
    assert!(rows[3].starts_with("beta,1.00,60,"));
}
