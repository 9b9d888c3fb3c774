use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::dsp::{AudioChunk, FeatureMatrix, HOP};
use crate::encoder::Encoder;
use crate::error::{invalid, Result};
use crate::io::{read_wav, write_features};
use crate::nn::{ParamStore, Phase};

/// What happened to one input file.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractOutcome {
    pub input: PathBuf,
    /// Written feature file, or why the input was skipped.
    pub result: std::result::Result<PathBuf, String>,
}

/// Eval-phase embeddings of a whole utterance. Trailing samples short of a
/// frame are zero-padded.
pub fn embed_utterance(encoder: &Encoder, store: &ParamStore<f32>, audio: &AudioChunk) -> Result<FeatureMatrix> {
    if audio.is_empty() {
        return Err(invalid!("`{}` has no samples", audio.utterance_id));
    }
    let mut samples = audio.samples.clone();
    samples.resize(samples.len().next_multiple_of(HOP), 0.0);
    encoder.encode(store, &AudioChunk::new(samples, audio.utterance_id.clone(), 0), Phase::Eval)
}

/// Writes `<stem>.pase` into `out_dir` for every input. Files are spread
/// over the available cores; a failing file is recorded and skipped.
pub fn extract_features(encoder: &Encoder, store: &ParamStore<f32>, inputs: &[PathBuf], out_dir: &Path) -> Vec<ExtractOutcome> {
    let mut stems = HashSet::new();
    let targets: Vec<std::result::Result<PathBuf, String>> = inputs
        .iter()
        .map(|p| {
            let stem = p.file_stem().ok_or_else(|| format!("{}: no file name", p.display()))?;
            if !stems.insert(stem.to_os_string()) {
                return Err(format!("{}: another input already writes {}.pase", p.display(), stem.to_string_lossy()));
            }
            Ok(out_dir.join(stem).with_extension("pase"))
        })
        .collect();
    let one = |input: &Path, target: &std::result::Result<PathBuf, String>| {
        let result = target.clone().and_then(|out| {
            let audio = read_wav(input).map_err(|e| e.to_string())?;
            let m = embed_utterance(encoder, store, &audio).map_err(|e| format!("{}: {e}", input.display()))?;
            write_features(&out, &m).map_err(|e| e.to_string())?;
            Ok(out)
        });
        ExtractOutcome { input: input.to_path_buf(), result }
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(inputs.len().max(1));
    let per = inputs.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = inputs
            .chunks(per)
            .zip(targets.chunks(per))
            .map(|(ins, outs)| s.spawn(move || ins.iter().zip(outs).map(|(i, o)| one(i, o)).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("extraction thread panicked")).collect()
    })
}
