use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::resample;
use crate::dsp::{AudioChunk, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Reads a PCM16 or float32 WAV file as one 16 kHz mono utterance named
/// after the file stem. Stereo is averaged; other rates are resampled.
pub fn read_wav(path: &Path) -> Result<AudioChunk> {
    let fail = |m: String| Error::format(path, m);
    let mut reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => fail(format!("malformed WAV: {other}")),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 || channels > 2 {
        return Err(fail(format!("{channels} channels; only mono and stereo are supported")));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| fail(format!("bad sample data: {e}")))?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| fail(format!("bad sample data: {e}")))?,
        (fmt, bits) => return Err(fail(format!("unsupported encoding {fmt:?} {bits}-bit; use PCM16 or float32"))),
    };
    let mono: Vec<f32> = interleaved.chunks_exact(channels).map(|f| f.iter().sum::<f32>() / channels as f32).collect();
    let samples = if spec.sample_rate == SAMPLE_RATE { mono } else { resample(&mono, spec.sample_rate, SAMPLE_RATE) };
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(AudioChunk::new(samples, id, 0))
}

/// Writes mono PCM16, clipping to `[-1, 1]`.
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: SampleFormat::Int };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    };
    let mut w = WavWriter::create(path, spec).map_err(to_err)?;
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16).map_err(to_err)?;
    }
    w.finalize().map_err(to_err)
}
