use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use pase::io::{write_atomic, RunConfig, Split};
use pase::probe::{extract_features, metrics_tsv, run_ablation, ProbeMode, ProbeModel};
use pase::trainer::{gradient_suite, load_checkpoint, EpochRecord, Trainer, TrainingSet};
use pase::workers::WorkerName;

use crate::corpus;

fn training_set(c: &RunConfig) -> Result<TrainingSet> {
    let manifest = c.manifest.as_deref().expect("manifest checked by caller");
    let utts = corpus::unlabeled(manifest)?;
    Ok(TrainingSet::prepare(utts, c.train.chunk_samples)?)
}

fn save_config(c: &RunConfig, out: &Path) -> Result<()> {
    Ok(write_atomic(&out.join("config.ini"), c.to_text().as_bytes())?)
}

fn print_epoch(r: &EpochRecord) {
    let mut line = format!("epoch {:>3}  lr {:.3e}", r.epoch, r.lr);
    for (w, v) in &r.losses {
        write!(line, "  {w} {v:.4}").unwrap();
    }
    println!("{line}  total {:.4}", r.total);
}

pub fn train(c: &RunConfig, out: &Path, resume: bool) -> Result<()> {
    let set = training_set(c)?;
    let ckpt = out.join("checkpoint.bin");
    let mut t = if resume && ckpt.exists() {
        let mut t = load_checkpoint(&ckpt)?;
        t.config.epochs = c.train.epochs;
        if t.config.hash() != c.train.hash() {
            bail!("{}: checkpoint was trained with a different config", ckpt.display());
        }
        println!("resuming at epoch {}", t.epoch);
        t
    } else {
        Trainer::new(c.train.clone(), set.stats()?)?
    };
    save_config(c, out)?;
    let workers: Vec<&str> = c.train.enabled().iter().map(|w| w.as_str()).collect();
    println!("training {} utterances with {} workers ({})", set.len(), workers.len(), workers.join(","));
    t.train(&set, Some(out), print_epoch)?;
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

pub fn ablate_all(c: &RunConfig, out: &Path) -> Result<()> {
    let set = training_set(c)?;
    let labeled = corpus::labeled(c.probe.manifest.as_deref().unwrap(), c.probe.config.num_classes)?;
    let (train, test) = (corpus::split_of(&labeled, Split::Train), corpus::split_of(&labeled, Split::Test));
    if train.is_empty() || test.is_empty() {
        bail!("probe manifest needs both train and test entries");
    }
    save_config(c, out)?;
    let study = run_ablation(&c.train, &WorkerName::ALL, &set, &c.probe.config, &train, &test, Some(out), |r| {
        let name = r.dropped.map_or("all".to_string(), |w| format!("-{w}"));
        println!("{name:<9} accuracy {:.4}", r.accuracy);
    })?;
    if let Some(r) = study.runs.iter().find(|r| !r.head_untouched) {
        bail!("head of dropped worker {:?} changed during training", r.dropped);
    }
    let report = study.report()?;
    write_atomic(&out.join("ablation.tsv"), report.as_bytes())?;
    print!("{report}");
    Ok(())
}

/// Returns false if any input failed.
pub fn extract(checkpoint: &Path, inputs: &[PathBuf], out: &Path) -> Result<bool> {
    let t = load_checkpoint(checkpoint)?;
    let outcomes = extract_features(&t.model.encoder, &t.store, inputs, out);
    let mut ok = true;
    for o in &outcomes {
        match &o.result {
            Ok(p) => println!("{} -> {}", o.input.display(), p.display()),
            Err(e) => {
                ok = false;
                eprintln!("error: {e}");
            }
        }
    }
    Ok(ok)
}

pub fn probe(c: &RunConfig, out: &Path) -> Result<()> {
    let cfg = &c.probe.config;
    let labeled = corpus::labeled(c.probe.manifest.as_deref().unwrap(), cfg.num_classes)?;
    let train = corpus::split_of(&labeled, Split::Train);
    if train.is_empty() {
        bail!("probe manifest has no train entries");
    }
    let pretrained = match &c.probe.checkpoint {
        Some(p) => Some(load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let enc_config = pretrained.as_ref().map_or(&c.train.encoder, |t| &t.config.encoder);
    let source = pretrained.as_ref().filter(|_| cfg.mode != ProbeMode::Supervised).map(|t| (&t.model.encoder, &t.store));
    let mut m = ProbeModel::new(cfg.clone(), source, enc_config)?;
    m.fit(&train)?;
    let mut rows = Vec::new();
    for split in [Split::Train, Split::Valid, Split::Test] {
        let utts = corpus::split_of(&labeled, split);
        if !utts.is_empty() {
            rows.push((split, m.evaluate(&utts)?));
        }
    }
    save_config(c, out)?;
    let table = metrics_tsv(&rows);
    write_atomic(&out.join("metrics.tsv"), table.as_bytes())?;
    println!("{} probe", cfg.mode);
    print!("{table}");
    Ok(())
}

/// Returns false if any check fails.
pub fn gradcheck() -> Result<bool> {
    let checks = gradient_suite()?;
    println!("{:<32} {:>8} {:>12} {:>9}  status", "check", "entries", "max rel err", "narrowed");
    for c in &checks {
        let status = if c.passed() { "ok" } else { "FAIL" };
        println!("{:<32} {:>8} {:>12.3e} {:>9}  {status}", c.name, c.checked, c.max_rel_error, c.narrowed);
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        eprintln!("{failed} of {} checks exceed the tolerance", checks.len());
    }
    Ok(failed == 0)
}

fn find_files(dir: &Path, names: &[&str], found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            find_files(&p, names, found)?;
        } else if names.iter().any(|n| p.file_name().is_some_and(|f| f == *n)) {
            found.push(p);
        }
    }
    Ok(())
}

fn read_table(p: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    let mut lines = text.lines().filter(|l| !l.is_empty());
    let header = lines.next().with_context(|| format!("{}: empty table", p.display()))?.split('\t').map(String::from).collect();
    Ok((header, lines.map(|l| l.split('\t').map(String::from).collect()).collect()))
}

/// `loss.tsv` (run, epoch, series, value) and `accuracy.tsv` (run, row,
/// accuracy) gathered from every loss curve, metrics and ablation table
/// below `run`.
pub fn plotdata(run: &Path, out: &Path) -> Result<()> {
    let mut files = Vec::new();
    find_files(run, &["loss_curve.tsv", "metrics.tsv", "ablation.tsv"], &mut files)?;
    if files.is_empty() {
        bail!("{}: no loss_curve.tsv, metrics.tsv or ablation.tsv found", run.display());
    }
    let mut loss = String::from("run\tepoch\tseries\tvalue\n");
    let mut acc = String::from("run\trow\taccuracy\n");
    for f in &files {
        let dir = f.parent().unwrap();
        let name = dir.strip_prefix(run).ok().filter(|p| !p.as_os_str().is_empty()).map_or(".".into(), |p| p.to_string_lossy().into_owned());
        let (header, rows) = read_table(f)?;
        match f.file_name().and_then(|s| s.to_str()) {
            Some("loss_curve.tsv") => {
                for r in &rows {
                    for (col, v) in header.iter().zip(r).skip(2) {
                        writeln!(loss, "{name}\t{}\t{col}\t{v}", r[0]).unwrap();
                    }
                }
            }
            _ => {
                let col = header.iter().position(|h| h == "accuracy" || h == "utterance_accuracy");
                let col = col.with_context(|| format!("{}: no accuracy column", f.display()))?;
                for r in &rows {
                    writeln!(acc, "{name}\t{}\t{}", r[0], r[col]).unwrap();
                }
            }
        }
    }
    write_atomic(&out.join("loss.tsv"), loss.as_bytes())?;
    write_atomic(&out.join("accuracy.tsv"), acc.as_bytes())?;
    println!("{} tables read; wrote loss.tsv and accuracy.tsv to {}", files.len(), out.display());
    Ok(())
}
