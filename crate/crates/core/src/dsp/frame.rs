use std::f64::consts::PI;

use crate::dsp::{AudioChunk, HOP, WINDOW};
use crate::error::{invalid, Result};

/// Samples of reflection padding before the first frame, chosen so that the
/// 400-sample window of frame `i` is centred on samples `160 i .. 160 (i + 1)`.
pub(crate) const LEFT_PAD: usize = (WINDOW - HOP) / 2;

/// Symmetric Hamming window `0.54 - 0.46 cos(2 pi n / (len - 1))`.
pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len).map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos()).collect()
}

/// Mirror index into a signal of `len` samples (edge sample not repeated),
/// valid for any offset.
pub fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Number of frames produced for a chunk of `len` samples.
pub fn frame_count(len: usize) -> usize {
    len / HOP
}

pub(crate) fn check_len(chunk: &AudioChunk) -> Result<()> {
    chunk.check_rate()?;
    if chunk.len() < WINDOW {
        return Err(invalid!(
            "chunk `{}` has {} samples, shorter than one {}-sample window",
            chunk.utterance_id,
            chunk.len(),
            WINDOW
        ));
    }
    Ok(())
}

/// `len` samples starting at `start` (possibly negative or past the end),
/// reading out-of-range positions by reflection.
pub(crate) fn reflected_span(samples: &[f32], start: isize, len: usize) -> Vec<f64> {
    let n = samples.len();
    (0..len as isize).map(|k| samples[reflect_index(start + k, n)] as f64).collect()
}

/// Start, in chunk coordinates, of frame `i`'s window.
pub(crate) fn frame_start(i: usize) -> isize {
    (i * HOP) as isize - LEFT_PAD as isize
}

/// Unwindowed 400-sample frames.
pub fn raw_frames(chunk: &AudioChunk) -> Result<Vec<Vec<f64>>> {
    check_len(chunk)?;
    Ok((0..frame_count(chunk.len())).map(|i| reflected_span(&chunk.samples, frame_start(i), WINDOW)).collect())
}

/// Hamming-windowed 400-sample frames at a 160-sample hop, `len / 160` of them.
pub fn frame_signal(chunk: &AudioChunk) -> Result<Vec<Vec<f64>>> {
    let window = hamming(WINDOW);
    let mut frames = raw_frames(chunk)?;
    for f in &mut frames {
        for (v, w) in f.iter_mut().zip(&window) {
            *v *= w;
        }
    }
    Ok(frames)
}
