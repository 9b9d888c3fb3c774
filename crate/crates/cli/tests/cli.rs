use std::path::Path;
use std::process::{Command, Output};

use pase::io::RunConfig;
use pase::workers::WorkerName;

fn pase(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pase")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\nstdout: {}\nstderr: {}", o.status, String::from_utf8_lossy(&o.stdout), stderr(o));
}

/// A tiny synthetic corpus plus a desk config that trains in seconds.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(&pase(&["synth-data", "--out", "data", "--pretrain", "2", "--labeled", "2", "--seconds", "1", "--seed", "3"], dir.path()));
    std::fs::write(
        dir.path().join("small.ini"),
        "[run]\nmanifest = data/pretrain.tsv\nmodel = desk\n\n[train]\nepochs = 1\nbatch_size_chunks = 4\n\n[probe]\nepochs = 2\nhidden = 16\n",
    )
    .unwrap();
    dir
}

#[test]
fn unknown_worker_lists_the_valid_names() {
    let dir = tempfile::tempdir().unwrap();
    let o = pase(&["ablate", "--drop", "PITCH", "--out", "x"], dir.path());
    assert!(!o.status.success());
    let err = stderr(&o);
    for w in WorkerName::ALL {
        assert!(err.contains(w.as_str()), "{w} missing from: {err}");
    }
}

#[test]
fn train_without_manifest_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = pase(&["train", "--out", "run"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("manifest"));
}

#[test]
fn bad_probe_mode_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = pase(&["probe", "--mode", "linear", "--out", "p"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_config_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.ini"), "[train]\nepochs = 3\nwarmup = 2\n").unwrap();
    let o = pase(&["--config", "bad.ini", "train", "--manifest", "m.tsv", "--out", "r"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("bad.ini") && stderr(&o).contains("warmup"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = pase(&["gradcheck"], dir.path());
    ok(&o);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("stack/encoder") && !out.contains("FAIL"));
}

#[test]
fn synth_data_writes_manifests() {
    let dir = workspace();
    let data = dir.path().join("data");
    let pre = std::fs::read_to_string(data.join("pretrain.tsv")).unwrap();
    assert_eq!(pre.lines().count(), 4);
    let labeled = pase::io::Manifest::load_labeled(&data.join("labeled.tsv"), 2).unwrap();
    assert_eq!(labeled.split(pase::io::Split::Train).len(), 4);
    assert_eq!(labeled.split(pase::io::Split::Test).len(), 4);
    assert!(RunConfig::load(&data.join("desk.ini")).is_ok());
}

#[test]
fn train_extract_probe_plot() {
    let dir = workspace();
    let p = dir.path();
    ok(&pase(&["--config", "small.ini", "--seed", "5", "train", "--out", "run"], p));
    let run = p.join("run");
    for f in ["config.ini", "checkpoint.bin", "loss_curve.tsv"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let stored = RunConfig::load(&run.join("config.ini")).unwrap();
    assert_eq!(stored.train.seed, 5);
    assert_eq!(stored.train.epochs, 1);

    // same config and seed give the same curve
    ok(&pase(&["--config", "small.ini", "--seed", "5", "train", "--out", "again"], p));
    assert_eq!(std::fs::read(run.join("loss_curve.tsv")).unwrap(), std::fs::read(p.join("again/loss_curve.tsv")).unwrap());

    ok(&pase(&["--config", "small.ini", "--seed", "5", "train", "--out", "run", "--epochs", "2", "--resume"], p));
    assert_eq!(std::fs::read_to_string(run.join("loss_curve.tsv")).unwrap().lines().count(), 3);

    ok(&pase(&["extract", "--checkpoint", "run/checkpoint.bin", "--out", "feats", "data/wav/pre-spk0_0000.wav"], p));
    let m = pase::io::read_features(&p.join("feats/pre-spk0_0000.pase")).unwrap();
    assert_eq!((m.frames, m.dims), (100, 100));
    let o = pase(&["extract", "--checkpoint", "run/checkpoint.bin", "--out", "feats", "missing.wav"], p);
    assert!(!o.status.success() && stderr(&o).contains("missing.wav"));

    ok(&pase(&["--config", "small.ini", "probe", "--mode", "frozen", "--manifest", "data/labeled.tsv", "--checkpoint", "run/checkpoint.bin", "--out", "probe"], p));
    let metrics = std::fs::read_to_string(p.join("probe/metrics.tsv")).unwrap();
    assert!(metrics.starts_with("split\tutterance_accuracy"));
    assert_eq!(metrics.lines().count(), 3);

    ok(&pase(&["plotdata", "--out", "plots", "."], p));
    let loss = std::fs::read_to_string(p.join("plots/loss.tsv")).unwrap();
    assert!(loss.lines().any(|l| l.starts_with("run\t1\ttotal\t")));
    let acc = std::fs::read_to_string(p.join("plots/accuracy.tsv")).unwrap();
    assert!(acc.lines().any(|l| l.starts_with("probe\ttest\t")));
}

#[test]
fn ablate_drop_trains_six_workers() {
    let dir = workspace();
    ok(&pase(&["--config", "small.ini", "ablate", "--drop", "prosody", "--out", "abl"], dir.path()));
    let curve = std::fs::read_to_string(dir.path().join("abl/loss_curve.tsv")).unwrap();
    let header: Vec<&str> = curve.lines().next().unwrap().split('\t').collect();
    assert_eq!(header.len(), 2 + 6 + 1);
    assert!(!header.contains(&"PROSODY"));
    let stored = RunConfig::load(&dir.path().join("abl/config.ini")).unwrap();
    assert_eq!(stored.train.enabled().len(), 6);
}

#[test]
fn ablate_all_writes_the_delta_table() {
    let dir = workspace();
    ok(&pase(&["--config", "small.ini", "ablate", "--all", "--probe-manifest", "data/labeled.tsv", "--out", "study"], dir.path()));
    let table = std::fs::read_to_string(dir.path().join("study/ablation.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows[0], ["model", "accuracy", "delta"]);
    assert_eq!(rows[1][0], "all");
    let all: f64 = rows[1][1].parse().unwrap();
    for (r, w) in rows[2..].iter().zip(WorkerName::ALL) {
        assert_eq!(r[0], format!("-{w}"));
        let (acc, delta): (f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap());
        assert!((delta - (all - acc)).abs() < 1e-9);
        assert!(dir.path().join(format!("study/drop-{w}/checkpoint.bin")).exists());
    }
    assert_eq!(rows.len(), 9);
}
