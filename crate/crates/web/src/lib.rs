//! wasm-bindgen surface for `www/index.html`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use pase::dsp::{lps, mfcc, prosody, AudioChunk, SAMPLE_RATE};
use pase::encoder::{bandpass_kernel, effective_band, EncoderConfig};
use pase::workers::{sample_spc, ChunkInfo, SpcWindow};

const MIN_BAND_HZ: f64 = 50.0;

/// Magnitude response in dB (peak at 0 dB) of one sinc band-pass filter,
/// sampled at `points` frequencies from 0 to 8 kHz.
#[wasm_bindgen]
pub fn sinc_response(low_hz: f64, band_hz: f64, taps: usize, points: usize) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let taps = taps.max(3) | 1;
    let (lo, hi) = effective_band(low_hz / sr, band_hz / sr, MIN_BAND_HZ / sr);
    let h = bandpass_kernel(lo, hi, taps);
    let mag: Vec<f64> = (0..points)
        .map(|i| {
            let w = PI * i as f64 / (points - 1).max(1) as f64;
            let (re, im) = h.iter().enumerate().fold((0.0, 0.0), |(re, im), (k, &v)| (re + v * (w * k as f64).cos(), im - v * (w * k as f64).sin()));
            (re * re + im * im).sqrt()
        })
        .collect();
    let peak = mag.iter().cloned().fold(1e-12, f64::max);
    mag.iter().map(|m| 20.0 * (m / peak).max(1e-6).log10()).collect()
}

/// Effective cutoffs in Hz after the band constraint.
#[wasm_bindgen]
pub fn sinc_band(low_hz: f64, band_hz: f64) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let (lo, hi) = effective_band(low_hz / sr, band_hz / sr, MIN_BAND_HZ / sr);
    vec![lo * sr, hi * sr]
}

#[wasm_bindgen]
pub struct Features {
    frames: usize,
    dims: usize,
    data: Vec<f64>,
}

#[wasm_bindgen]
impl Features {
    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[wasm_bindgen(getter)]
    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Row-major `frames x dims`.
    #[wasm_bindgen(getter)]
    pub fn data(&self) -> Vec<f64> {
        self.data.clone()
    }
}

/// Harmonic tone with `harmonics` partials, gliding from `f0_hz` to `f0_end_hz`.
pub fn tone(f0_hz: f64, f0_end_hz: f64, harmonics: usize, seconds: f64) -> Vec<f32> {
    let sr = SAMPLE_RATE as f64;
    let n = ((seconds * sr) as usize / 160).max(3) * 160;
    let mut phase = 0.0;
    (0..n)
        .map(|i| {
            let f = f0_hz + (f0_end_hz - f0_hz) * i as f64 / n as f64;
            phase += 2.0 * PI * f / sr;
            let v: f64 = (1..=harmonics.max(1)).map(|h| (h as f64 * phase).sin() / h as f64).sum();
            (0.3 * v) as f32
        })
        .collect()
}

/// LPS, MFCC or prosody targets of a gliding harmonic tone.
#[wasm_bindgen]
pub fn tone_features(kind: &str, f0_hz: f64, f0_end_hz: f64, harmonics: usize, seconds: f64) -> Option<Features> {
    let chunk = AudioChunk::new(tone(f0_hz, f0_end_hz, harmonics, seconds), "tone", 0);
    let m = match kind {
        "lps" => lps(&chunk),
        "mfcc" => mfcc(&chunk),
        "prosody" => prosody(&chunk),
        _ => return None,
    }
    .ok()?;
    Some(Features { frames: m.frames, dims: m.dims, data: m.data })
}

/// One SPC draw on a chunk of `frames` frames: anchor frame, then start and
/// length of the future (positive) and past (negative) windows.
#[wasm_bindgen]
pub fn spc_draw(seed: u64, frames: usize) -> Vec<u32> {
    let chunks = [ChunkInfo { utterance: "demo".into(), offset: 0, frames }];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match sample_spc(&chunks, &[0], SpcWindow::default(), &mut rng).ok().and_then(|v| v.into_iter().next()) {
        Some(p) => [p.anchor.start, p.positive.start, p.positive.len, p.negative.start, p.negative.len].map(|v| v as u32).to_vec(),
        None => Vec::new(),
    }
}

/// Input samples `[lo, hi)` that can influence embedding `frame` of a
/// `len`-sample input, for the full-size encoder.
#[wasm_bindgen]
pub fn receptive_window(frame: usize, len: usize) -> Vec<i32> {
    match EncoderConfig::full().receptive_window(frame, len) {
        Ok((lo, hi)) => vec![lo as i32, hi as i32],
        Err(_) => Vec::new(),
    }
}
