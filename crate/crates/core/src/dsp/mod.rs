//! Regression targets computed from raw 16 kHz audio: framing, log power
//! spectrum, MFCC, prosody, and train-set standardization.

mod frame;
mod mfcc;
mod prosody;
mod spectrum;
mod stats;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use frame::{frame_count, frame_signal, hamming, raw_frames, reflect_index};
pub use mfcc::{dct_ii_ortho, hz_to_mel, mel_filterbank, mel_to_hz, mfcc, MFCC_COEFFS, MEL_BANDS};
pub use prosody::{prosody, F0_MAX_LAG, F0_MIN_LAG, VOICING_THRESHOLD};
pub use spectrum::{lps, power_spectra};
pub use stats::{compute_stats, destandardize, standardize, KindStats, StandardizationStats, StatsAccumulator, VAR_FLOOR};

pub const SAMPLE_RATE: u32 = 16_000;
/// Samples between consecutive frames (10 ms).
pub const HOP: usize = 160;
/// Analysis window length (25 ms).
pub const WINDOW: usize = 400;
/// Transform size giving 1025 one-sided bins.
pub const NFFT: usize = 2048;
pub const LPS_BINS: usize = NFFT / 2 + 1;
pub const PROSODY_DIMS: usize = 4;
/// Floor applied inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

pub(crate) fn log_floor(x: f64) -> f64 {
    x.max(LOG_FLOOR).ln()
}

/// A mono waveform segment in `[-1, 1]` taken from one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioChunk {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub utterance_id: String,
    /// Index of the first sample within the source utterance.
    pub offset: usize,
}

impl AudioChunk {
    pub fn new(samples: Vec<f32>, utterance_id: impl Into<String>, offset: usize) -> Self {
        AudioChunk { samples, sample_rate: SAMPLE_RATE, utterance_id: utterance_id.into(), offset }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub(crate) fn check_rate(&self) -> Result<()> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(invalid!("chunk `{}` is at {} Hz, expected {}", self.utterance_id, self.sample_rate, SAMPLE_RATE));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FeatureKind {
    Lps,
    Mfcc,
    Prosody,
    Embedding,
}

impl FeatureKind {
    /// Fixed per-frame dimensionality of the DSP kinds.
    pub fn dims(self) -> Option<usize> {
        match self {
            FeatureKind::Lps => Some(LPS_BINS),
            FeatureKind::Mfcc => Some(MFCC_COEFFS),
            FeatureKind::Prosody => Some(PROSODY_DIMS),
            FeatureKind::Embedding => None,
        }
    }
}

/// `frames x dims` real matrix, row-major, one row per 10 ms frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub kind: FeatureKind,
    pub frames: usize,
    pub dims: usize,
    /// Seconds between frames.
    pub frame_stride: f64,
    /// Seconds covered by one frame's analysis window.
    pub frame_window: f64,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(kind: FeatureKind, frames: usize, dims: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * dims {
            return Err(invalid!("{frames}x{dims} feature matrix given {} values", data.len()));
        }
        if let Some(d) = kind.dims() {
            if d != dims {
                return Err(invalid!("{kind:?} features have {d} dims, got {dims}"));
            }
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(crate::Error::NonFinite(format!("feature value at index {bad}")));
        }
        Ok(FeatureMatrix {
            kind,
            frames,
            dims,
            frame_stride: HOP as f64 / SAMPLE_RATE as f64,
            frame_window: WINDOW as f64 / SAMPLE_RATE as f64,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dims.max(1))
    }
}
