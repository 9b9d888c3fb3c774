use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pase::dsp::{AudioChunk, SAMPLE_RATE};
use pase::io::{read_wav, synth_corpus, write_atomic, write_wav, Manifest, ManifestEntry, Split, SynthSpec};
use pase::probe::LabeledUtterance;
use pase::trainer::Utterance;

/// Reads WAV files on all cores, keeping input order.
pub fn load_audio(paths: &[PathBuf]) -> Result<Vec<AudioChunk>> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(paths.len().max(1));
    let per = paths.len().div_ceil(threads);
    let parts: Vec<Vec<pase::Result<AudioChunk>>> = std::thread::scope(|s| {
        let handles: Vec<_> = paths.chunks(per.max(1)).map(|part| s.spawn(move || part.iter().map(|p| read_wav(p)).collect())).collect();
        handles.into_iter().map(|h| h.join().expect("reader thread panicked")).collect()
    });
    Ok(parts.into_iter().flatten().collect::<pase::Result<Vec<_>>>()?)
}

pub fn unlabeled(manifest: &Path) -> Result<Vec<Utterance>> {
    let m = Manifest::load(manifest)?;
    if m.entries.is_empty() {
        bail!("{}: manifest has no entries", manifest.display());
    }
    let paths: Vec<PathBuf> = m.entries.into_iter().map(|e| e.path).collect();
    let audio = load_audio(&paths)?;
    Ok(audio.into_iter().map(|a| Utterance { id: a.utterance_id, samples: a.samples }).collect())
}

/// Labeled utterances grouped by split; every entry must carry one.
pub fn labeled(manifest: &Path, num_classes: usize) -> Result<Vec<LabeledUtterance>> {
    let m = Manifest::load_labeled(manifest, num_classes)?;
    if let Some(e) = m.entries.iter().find(|e| e.split.is_none()) {
        bail!("{}: {} has no split tag", manifest.display(), e.path.display());
    }
    let paths: Vec<PathBuf> = m.entries.iter().map(|e| e.path.clone()).collect();
    let audio = load_audio(&paths)?;
    Ok(m.entries
        .iter()
        .zip(audio)
        .map(|(e, a)| LabeledUtterance { id: a.utterance_id, label: e.label.unwrap(), samples: a.samples, split: e.split.unwrap() })
        .collect())
}

pub fn split_of(utts: &[LabeledUtterance], split: Split) -> Vec<LabeledUtterance> {
    utts.iter().filter(|u| u.split == split).cloned().collect()
}

fn write_set(dir: &Path, corpus: &[(String, usize, Vec<f32>)], prefix: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    corpus
        .iter()
        .map(|(id, _, samples)| {
            let p = dir.join(format!("{prefix}{id}.wav"));
            write_wav(&p, samples, SAMPLE_RATE)?;
            Ok(p)
        })
        .collect()
}

/// `pretrain.tsv` (unlabeled), `labeled.tsv` (label + train/test split)
/// and a `desk.ini` pointing at both.
pub fn synth_data(out: &Path, seed: u64, pretrain: usize, labeled: usize, seconds: f64, snr_db: f64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = |n| SynthSpec { snr_db, ..SynthSpec::two_speakers(n, seconds) };
    let pre = synth_corpus(&spec(pretrain), &mut rng);
    let train = synth_corpus(&spec(labeled), &mut rng);
    let test = synth_corpus(&spec(labeled), &mut rng);

    let pre_paths = write_set(&out.join("wav"), &pre, "pre-")?;
    let m = Manifest { entries: pre_paths.into_iter().map(|path| ManifestEntry { path, label: None, split: None }).collect() };
    write_atomic(&out.join("pretrain.tsv"), m.to_tsv(out).as_bytes())?;

    let mut entries = Vec::new();
    for (set, split, prefix) in [(&train, Split::Train, "train-"), (&test, Split::Test, "test-")] {
        let paths = write_set(&out.join("wav"), set, prefix)?;
        entries.extend(set.iter().zip(paths).map(|((_, label, _), path)| ManifestEntry { path, label: Some(*label), split: Some(split) }));
    }
    write_atomic(&out.join("labeled.tsv"), Manifest { entries }.to_tsv(out).as_bytes())?;

    let ini = format!(
        "[run]\nmanifest = pretrain.tsv\nout = run\nmodel = desk\n\n[train]\nepochs = 12\nbatch_size_chunks = 16\nseed = {seed}\n\n[probe]\nmanifest = labeled.tsv\ncheckpoint = run/checkpoint.bin\nepochs = 10\n"
    );
    write_atomic(&out.join("desk.ini"), ini.as_bytes())?;
    println!(
        "wrote {} pretraining and {} labeled utterances ({seconds} s each) under {}",
        pre.len(),
        train.len() + test.len(),
        out.display()
    );
    Ok(())
}
