use std::ffi::OsStr;
use std::fmt::Debug;
use std::fs;
use std::path::Path;
use std::process::Command;

use hvbpr::experiment::{RunReport, SettingReport};
use hvbpr::synth::TruthRecord;
use hvbpr::Checkpoint;
use hvbpr_core::ItemId;
use nalgebra::{DMatrix, DVector};
use serde_json::Value;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn hvbpr<S: AsRef<OsStr>>(args: &[S]) -> Out {
    let o = Command::new(env!("CARGO_BIN_EXE_hvbpr")).args(args).output().unwrap();
    Out {
        code: o.status.code().unwrap(),
        stdout: String::from_utf8(o.stdout).unwrap(),
        stderr: String::from_utf8(o.stderr).unwrap(),
    }
}

fn ok<S: AsRef<OsStr> + Debug>(args: &[S]) -> String {
    let o = hvbpr(args);
    assert_eq!(o.code, 0, "{args:?}: {}", o.stderr);
    o.stdout
}

fn error_kind(o: &Out) -> String {
    assert_ne!(o.code, 0);
    let last = o.stderr.lines().last().unwrap();
    let v: Value = serde_json::from_str(last).unwrap_or_else(|_| panic!("not JSON: {last}"));
    assert!(v["error"]["message"].is_string());
    v["error"]["kind"].as_str().unwrap().to_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--users",
    "120",
    "--items",
    "240",
    "--feature-dim",
    "16",
    "--branching",
    "4",
    "--positives",
    "8",
    "--planted",
    "2,2",
];

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out-dir", s(dir), "--seed", "3"];
    args.extend_from_slice(extra);
    ok(&args);
}

/// `cmd` followed by the four input flags for a synth directory, then `extra`.
fn args(cmd: &str, d: &Path, extra: &[&str]) -> Vec<String> {
    let mut v = vec![cmd.to_owned()];
    for (flag, file) in [
        ("--feedback", "feedback.tsv"),
        ("--features", "features.bin"),
        ("--hierarchy", "hierarchy.tsv"),
        ("--item-leaves", "item_leaves.tsv"),
    ] {
        v.push(flag.to_owned());
        v.push(s(&d.join(file)).to_owned());
    }
    v.extend(extra.iter().map(|e| e.to_string()));
    v
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_str().unwrap().to_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn validate_prints_ingest_report() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), SMALL);
    let before = snapshot(dir.path());
    let out = ok(&args("validate", dir.path(), &[]));
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["users"], 120);
    assert_eq!(v["items"], 240);
    assert_eq!(v["feedback_pairs"], 120 * 8);
    assert_eq!(v["pruned_items"], Value::Array(vec![]));
    assert_eq!(before, snapshot(dir.path()));
}

#[test]
fn errors_are_json_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), SMALL);
    fs::write(dir.path().join("bad.tsv"), "u0\n").unwrap();
    let mut a = args("validate", dir.path(), &[]);
    a[2] = s(&dir.path().join("bad.tsv")).to_owned();
    let o = hvbpr(&a);
    assert_eq!(error_kind(&o), "parse_error");

    let o = hvbpr(&["eval", "--model", s(&dir.path().join("missing.ckpt")), "--feedback", "x"]);
    assert_eq!(error_kind(&o), "io_error");

    let o = hvbpr(&["train", "--k"]);
    assert_eq!(error_kind(&o), "usage");

    // a feedback file is not a checkpoint
    let o = hvbpr(&["rank-dim", "--model", s(&dir.path().join("feedback.tsv")), "--dim", "0"]);
    assert_eq!(error_kind(&o), "format_error");

    assert_eq!(hvbpr(&["--help"]).code, 0);
}

#[test]
fn train_refuses_to_overwrite_inputs() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), SMALL);
    let before = snapshot(dir.path());
    let fb = dir.path().join("feedback.tsv");
    let o = hvbpr(&args("train", dir.path(), &["--epochs", "1", "--out", s(&fb)]));
    assert_eq!(error_kind(&o), "invalid_argument");
    assert_eq!(before, snapshot(dir.path()));
}

fn manifest(dir: &Path, name: &str, out_dir: &str, scheme: &str, epochs: usize) -> String {
    serde_json::json!({
        "name": name,
        "inputs": {
            "feedback": "data/feedback.tsv",
            "features": "data/features.bin",
            "hierarchy": "data/hierarchy.tsv",
            "item_leaves": "data/item_leaves.tsv",
        },
        "model": { "kind": "hierarchical", "k": 6, "kprime": 6, "scheme": scheme },
        "train": { "epochs": epochs, "reg": { "latent": 0.02 } },
        "seeds": { "split": 11, "init": 12, "sampling": 13 },
        "out_dir": dir.join(out_dir),
    })
    .to_string()
}

#[test]
fn eval_reproduces_the_run_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, SMALL);
    let list =
        format!("[{}, {}]", manifest(dir.path(), "e33", "e33", "3:3", 8), manifest(dir.path(), "e60", "e60", "6:0", 8));
    let mpath = dir.path().join("grid.json");
    fs::write(&mpath, list).unwrap();
    let before = snapshot(&data);
    let out = ok(&["run", s(&mpath)]);
    assert_eq!(out.lines().count(), 2);
    assert_eq!(before, snapshot(&data));

    let rdir = dir.path().join("e33");
    let report: RunReport = serde_json::from_str(&fs::read_to_string(rdir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.warm.seed.split, 11);
    assert_eq!(report.training.epochs_run, 8);
    let metrics = fs::read_to_string(rdir.join("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), "epoch\tval_auc\ttrain_loss_estimate\tseconds");
    assert_eq!(metrics.lines().count(), 9);

    let ckpt = rdir.join("model.ckpt");
    let fb = data.join("feedback.tsv");
    for (setting, expect) in [("warm", Some(&report.warm)), ("cold", report.cold.as_ref())] {
        let expect = expect.expect("synthetic corpus has cold test items");
        let out = ok(&["eval", "--model", s(&ckpt), "--feedback", s(&fb), "--setting", setting]);
        let got: SettingReport = serde_json::from_str(&out).unwrap();
        assert_eq!(&got, expect);
    }

    let rpath = dir.path().join("cold.json");
    ok(&[
        "eval",
        "--model",
        s(&ckpt),
        "--feedback",
        s(&fb),
        "--setting",
        "cold",
        "--cold-threshold",
        "3",
        "--out",
        s(&rpath),
    ]);
    let got: SettingReport = serde_json::from_str(&fs::read_to_string(&rpath).unwrap()).unwrap();
    assert_eq!(got.cold_threshold, 3);
    assert!(got.cold_items < report.cold.as_ref().unwrap().cold_items);

    let out = ok(&["eval", "--model", s(&ckpt), "--feedback", s(&fb), "--sample-candidates", "50"]);
    let sampled: SettingReport = serde_json::from_str(&out).unwrap();
    assert_eq!(sampled.sampled_candidates, Some(50));
    assert!((sampled.auc - report.warm.auc).abs() < 0.03, "{} vs {}", sampled.auc, report.warm.auc);

    // the train subcommand builds the same checkpoint as the manifest run
    let t = dir.path().join("t.ckpt");
    ok(&args(
        "train",
        &data,
        &[
            "--k",
            "6",
            "--kprime",
            "6",
            "--scheme",
            "3:3",
            "--epochs",
            "8",
            "--reg-latent",
            "0.02",
            "--split-seed",
            "11",
            "--init-seed",
            "12",
            "--sampling-seed",
            "13",
            "--out",
            s(&t),
        ],
    ));
    assert!(fs::read(&t).unwrap() == fs::read(&ckpt).unwrap(), "train and run checkpoints differ");
}

#[test]
fn eval_handles_unknown_ids_per_policy() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, SMALL);
    let strict = dir.path().join("strict.ckpt");
    let prune = dir.path().join("prune.ckpt");
    ok(&args("train", &data, &["--epochs", "2", "--out", s(&strict)]));
    ok(&args("train", &data, &["--epochs", "2", "--policy", "prune", "--out", s(&prune)]));

    let fb = dir.path().join("more.tsv");
    let mut text = fs::read_to_string(data.join("feedback.tsv")).unwrap();
    text.push_str("u000\tnew-item\n");
    fs::write(&fb, text).unwrap();

    let o = hvbpr(&["eval", "--model", s(&strict), "--feedback", s(&fb)]);
    assert_eq!(error_kind(&o), "unknown_id");
    let a = ok(&["eval", "--model", s(&prune), "--feedback", s(&fb)]);
    let b = ok(&["eval", "--model", s(&prune), "--feedback", s(&data.join("feedback.tsv"))]);
    assert_eq!(a, b);
}

fn r_squared(y: &[f64], x: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let n = y.len();
    let p = x[0].len() + 1;
    let a = DMatrix::from_fn(n, p, |r, c| if c == 0 { 1.0 } else { x[r][c - 1] });
    let b = DVector::from_column_slice(y);
    let coef = a.clone().svd(true, true).solve(&b, 1e-12).unwrap();
    let fitted = &a * &coef;
    let mean = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    (1.0 - (&b - &fitted).norm_squared() / tss, fitted.iter().copied().collect())
}

/// Learned root-layer dimensions are linear in the features, as are the
/// planted root rows; on a well-trained model the former should be largely
/// explained by the latter, and the top of a `rank-dim` listing should sit
/// at the top of the matching planted direction.
#[test]
fn rank_dim_follows_planted_root_direction() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, &[]);
    let ckpt = dir.path().join("m.ckpt");
    ok(&args("train", &data, &["--scheme", "5:5", "--out", s(&ckpt)]));

    let truth: TruthRecord = serde_json::from_str(&fs::read_to_string(data.join("truth.json")).unwrap()).unwrap();
    let raw = hvbpr::features::read(&data.join("features.bin")).unwrap();
    let ck = Checkpoint::load(&ckpt).unwrap();
    let f = raw.dim;
    let items = truth.config.items;
    let project = |rows: &[f64], i: usize| -> Vec<f64> {
        rows.chunks(f).map(|r| r.iter().zip(raw.row(i)).map(|(w, &x)| w * f64::from(x)).sum()).collect()
    };
    let root = ck.model.hierarchy().root();
    let root_block = truth.truth.blocks.iter().find(|b| b.node == root).unwrap();
    let planted: Vec<Vec<f64>> = (0..items).map(|i| project(&root_block.rows, i)).collect();
    let theta0: Vec<f64> = (0..items).map(|i| ck.frozen.theta(ItemId(i as u32))[0]).collect();
    let (r2, direction) = r_squared(&theta0, &planted);

    // control: a leaf's planted rows explain the shared root dimension poorly
    let leaf_block = truth.truth.blocks.iter().find(|b| b.node != root).unwrap();
    let control: Vec<Vec<f64>> = (0..items).map(|i| project(&leaf_block.rows, i)).collect();
    let (r2_control, _) = r_squared(&theta0, &control);
    assert!(r2 > 0.6 && r2 > r2_control + 0.3, "r2 {r2:.3}, control {r2_control:.3}");

    let leaf = ck.nodes.name(ck.model.hierarchy().item_leaves()[0].0).to_owned();
    let tsv = ok(&["rank-dim", "--model", s(&ckpt), "--dim", "0", "--category", &leaf, "--top", "10"]);
    let mut lines = tsv.lines();
    assert_eq!(lines.next(), Some("rank\titem_id\tscore"));
    let top: Vec<usize> = lines
        .enumerate()
        .map(|(r, l)| {
            let c: Vec<&str> = l.split('\t').collect();
            assert_eq!(c[0], (r + 1).to_string());
            ck.items.get(c[1]).unwrap() as usize
        })
        .collect();
    assert_eq!(top.len(), 10);

    let in_leaf: Vec<usize> =
        (0..items).filter(|&i| ck.nodes.name(ck.model.hierarchy().item_leaves()[i].0) == leaf).collect();
    let percentile =
        |i: usize| in_leaf.iter().filter(|&&j| direction[j] < direction[i]).count() as f64 / (in_leaf.len() - 1) as f64;
    let mean = top.iter().map(|&i| percentile(i)).sum::<f64>() / top.len() as f64;
    eprintln!("r2 {r2:.3}, control {r2_control:.3}, top-10 percentile {mean:.3}");
    assert!(mean > 0.8, "mean planted percentile of the top 10: {mean:.3}");
}

#[test]
fn bench_step_prints_a_row_per_config() {
    let out =
        ok(&["bench-step", "--k", "2,4", "--kprime", "3", "--feature-dim", "8", "--steps", "20", "--rounds", "2"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "k\tkprime\tfeature_dim\tsteps\tmean_ns\tmedian_ns");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("4\t3\t8\t40\t"));
}
