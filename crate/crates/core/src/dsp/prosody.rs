use crate::dsp::frame::{check_len, frame_start, reflected_span};
use crate::dsp::{frame_count, log_floor, AudioChunk, FeatureKind, FeatureMatrix, PROSODY_DIMS, WINDOW};
use crate::error::Result;

/// Shortest pitch period searched (500 Hz).
pub const F0_MIN_LAG: usize = 32;
/// Longest pitch period searched (40 Hz).
pub const F0_MAX_LAG: usize = 400;
/// Peak correlation at or above which a frame counts as voiced.
pub const VOICING_THRESHOLD: f64 = 0.35;
/// A shorter-period peak is preferred when it reaches this fraction of the best peak.
const OCTAVE_TOLERANCE: f64 = 0.9;

/// Normalized cross-correlation between `x[0..WINDOW]` and `x[lag..lag+WINDOW]`
/// for every lag in the search range; index 0 is `F0_MIN_LAG - 1`.
fn nccf(x: &[f64]) -> Vec<f64> {
    let head = &x[..WINDOW];
    let e0: f64 = head.iter().map(|v| v * v).sum();
    // running energy of the lagged window
    let mut el: f64 = x[F0_MIN_LAG - 1..F0_MIN_LAG - 1 + WINDOW].iter().map(|v| v * v).sum();
    let mut out = Vec::with_capacity(F0_MAX_LAG - F0_MIN_LAG + 3);
    for lag in F0_MIN_LAG - 1..=F0_MAX_LAG + 1 {
        if lag > F0_MIN_LAG - 1 {
            el += x[lag + WINDOW - 1] * x[lag + WINDOW - 1] - x[lag - 1] * x[lag - 1];
        }
        let cross: f64 = head.iter().zip(&x[lag..lag + WINDOW]).map(|(a, b)| a * b).sum();
        let denom = (e0 * el.max(0.0)).sqrt();
        out.push(if denom > 1e-12 { cross / denom } else { 0.0 });
    }
    out
}

/// Pitch period (samples, sub-sample precision) and peak correlation of one frame.
fn pitch(x: &[f64]) -> (f64, f64) {
    let r = nccf(x);
    let lag_of = |i: usize| (i + F0_MIN_LAG - 1) as f64;
    let peaks: Vec<usize> = (1..r.len() - 1).filter(|&i| r[i] > 0.0 && r[i] >= r[i - 1] && r[i] >= r[i + 1]).collect();
    let Some(best) = peaks.iter().map(|&i| r[i]).reduce(f64::max) else {
        return (0.0, 0.0);
    };
    let i = *peaks.iter().find(|&&i| r[i] >= OCTAVE_TOLERANCE * best).expect("best peak qualifies");
    let (a, b, c) = (r[i - 1], r[i], r[i + 1]);
    let curvature = a - 2.0 * b + c;
    let shift = if curvature < 0.0 { (0.5 * (a - c) / curvature).clamp(-0.5, 0.5) } else { 0.0 };
    (lag_of(i) + shift, b)
}

const PITCH_SPAN: usize = WINDOW + F0_MAX_LAG + 1;

/// Start of the pitch analysis span for frame `i`, slid inside the chunk when
/// it fits so edge frames are not judged on reflected (time-reversed) audio.
fn pitch_start(i: usize, len: usize) -> isize {
    let start = frame_start(i);
    if len < PITCH_SPAN {
        return start;
    }
    start.clamp(0, (len - PITCH_SPAN) as isize)
}

/// Per frame: interpolated log F0, voicing probability, zero-crossing rate, RMS energy.
pub fn prosody(chunk: &AudioChunk) -> Result<FeatureMatrix> {
    check_len(chunk)?;
    let n = frame_count(chunk.len());
    let rate = chunk.sample_rate as f64;
    let mut log_f0: Vec<Option<f64>> = Vec::with_capacity(n);
    let mut voicing = Vec::with_capacity(n);
    let mut zcr = Vec::with_capacity(n);
    let mut energy = Vec::with_capacity(n);
    for i in 0..n {
        let frame = reflected_span(&chunk.samples, frame_start(i), WINDOW);
        let (period, peak) = pitch(&reflected_span(&chunk.samples, pitch_start(i, chunk.len()), PITCH_SPAN));
        let prob = peak.clamp(0.0, 1.0);
        voicing.push(prob);
        log_f0.push((prob >= VOICING_THRESHOLD && period > 0.0).then(|| (rate / period).ln()));
        let crossings = frame.windows(2).filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0)).count();
        zcr.push(crossings as f64 / (WINDOW - 1) as f64);
        energy.push((frame.iter().map(|v| v * v).sum::<f64>() / WINDOW as f64).sqrt());
    }
    let f0 = interpolate(&log_f0);
    let mut data = Vec::with_capacity(n * PROSODY_DIMS);
    for i in 0..n {
        data.extend([f0[i], voicing[i], zcr[i], energy[i]]);
    }
    FeatureMatrix::new(FeatureKind::Prosody, n, PROSODY_DIMS, data)
}

/// Linear interpolation across unvoiced gaps, holding the nearest voiced value
/// at the edges; an entirely unvoiced track sits at the log floor.
fn interpolate(track: &[Option<f64>]) -> Vec<f64> {
    let voiced: Vec<(usize, f64)> = track.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v))).collect();
    if voiced.is_empty() {
        return vec![log_floor(0.0); track.len()];
    }
    let mut out = Vec::with_capacity(track.len());
    let mut next = 0;
    for i in 0..track.len() {
        while next < voiced.len() && voiced[next].0 < i {
            next += 1;
        }
        let v = match (next.checked_sub(1).map(|p| voiced[p]), voiced.get(next)) {
            (_, Some(&(j, v))) if j == i => v,
            (Some((a, va)), Some(&(b, vb))) => va + (vb - va) * (i - a) as f64 / (b - a) as f64,
            (Some((_, va)), None) => va,
            (None, Some(&(_, vb))) => vb,
            (None, None) => unreachable!(),
        };
        out.push(v);
    }
    out
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::dsp::LOG_FLOOR;

    fn sine(f: f64, len: usize, amp: f64) -> AudioChunk {
        AudioChunk::new((0..len).map(|n| (amp * (2.0 * PI * f * n as f64 / 16000.0).sin()) as f32).collect(), "sine", 0)
    }

    #[test]
    fn recovers_200_hz() {
        let m = prosody(&sine(200.0, 8000, 0.5)).unwrap();
        for r in m.rows() {
            assert!(r[1] >= VOICING_THRESHOLD);
            assert!((r[0].exp() - 200.0).abs() < 2.0, "f0 {}", r[0].exp());
        }
    }

    #[test]
    fn constant_signal_has_no_crossings() {
        let m = prosody(&AudioChunk::new(vec![0.3; 1600], "c", 0)).unwrap();
        assert!(m.rows().all(|r| r[2] == 0.0));
        assert!(m.rows().all(|r| (r[3] - 0.3).abs() < 1e-6));
    }

    #[test]
    fn silence() {
        let m = prosody(&AudioChunk::new(vec![0.0; 1600], "z", 0)).unwrap();
        for r in m.rows() {
            assert_eq!(r[3], 0.0);
            assert!(r[1].abs() < 1e-9);
            assert_eq!(r[0], LOG_FLOOR.ln());
        }
    }

    #[test]
    fn interpolation_fills_gaps() {
        let t = interpolate(&[None, Some(1.0), None, None, Some(4.0), None]);
        assert_eq!(t, vec![1.0, 1.0, 2.0, 3.0, 4.0, 4.0]);
    }
}
