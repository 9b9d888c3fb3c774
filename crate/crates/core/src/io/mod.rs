//! Files in and out: WAV audio, manifests, run configs, feature files, and
//! the synthetic desk-scale corpora.

mod config;
mod features;
mod manifest;
mod resample;
mod synth;
mod wav;

use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::dsp::{AudioChunk, HOP};
use crate::error::{Error, Result};

pub use config::{ModelSize, ProbeSettings, RunConfig};
pub use features::{read_features, write_features, FEATURE_MAGIC, FEATURE_VERSION};
pub use manifest::{Manifest, ManifestEntry, Split};
pub use resample::resample;
pub use synth::{synth_corpus, synth_utterance, Speaker, SynthSpec};
pub use wav::{read_wav, write_wav};

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().ok_or_else(|| Error::format(path, "not a file path"))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// A random `chunk_samples` window of an utterance, starting on a frame
/// boundary. Utterances shorter than a chunk are zero-padded.
pub fn random_chunk(utterance: &AudioChunk, chunk_samples: usize, rng: &mut impl Rng) -> AudioChunk {
    let mut samples = utterance.samples.clone();
    if samples.len() < chunk_samples {
        samples.resize(chunk_samples, 0.0);
    }
    let positions = (samples.len() - chunk_samples) / HOP + 1;
    let offset = rng.gen_range(0..positions) * HOP;
    let mut c = AudioChunk::new(samples[offset..offset + chunk_samples].to_vec(), utterance.utterance_id.clone(), offset);
    c.sample_rate = utterance.sample_rate;
    c
}
