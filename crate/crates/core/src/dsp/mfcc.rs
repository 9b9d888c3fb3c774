use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::dsp::{log_floor, power_spectra, AudioChunk, FeatureKind, FeatureMatrix, LPS_BINS, NFFT, SAMPLE_RATE};
use crate::error::Result;

pub const MEL_BANDS: usize = 40;
pub const MFCC_COEFFS: usize = 20;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `bands x bins` triangular filters with peaks equally spaced on the mel
/// scale between `low_hz` and `high_hz`.
pub fn mel_filterbank(bands: usize, bins: usize, nfft: usize, sample_rate: u32, low_hz: f64, high_hz: f64) -> Vec<Vec<f64>> {
    let (lo, hi) = (hz_to_mel(low_hz), hz_to_mel(high_hz));
    let edges: Vec<f64> = (0..bands + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (bands + 1) as f64)).collect();
    let bin_hz = sample_rate as f64 / nfft as f64;
    (0..bands)
        .map(|m| {
            let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - left) / (centre - left);
                    let down = (right - f) / (right - centre);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

fn default_filterbank() -> &'static [Vec<f64>] {
    static BANK: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    BANK.get_or_init(|| mel_filterbank(MEL_BANDS, LPS_BINS, NFFT, SAMPLE_RATE, 0.0, SAMPLE_RATE as f64 / 2.0))
}

/// Orthonormal DCT-II, first `keep` coefficients.
pub fn dct_ii_ortho(x: &[f64], keep: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..keep)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            scale * x.iter().enumerate().map(|(i, &v)| v * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos()).sum::<f64>()
        })
        .collect()
}

/// 20 cepstral coefficients per frame from 40 log mel energies.
pub fn mfcc(chunk: &AudioChunk) -> Result<FeatureMatrix> {
    let bank = default_filterbank();
    let spectra = power_spectra(chunk)?;
    let frames = spectra.len();
    let mut data = Vec::with_capacity(frames * MFCC_COEFFS);
    for p in &spectra {
        let energies: Vec<f64> = bank.iter().map(|f| log_floor(f.iter().zip(p).map(|(w, v)| w * v).sum())).collect();
        data.extend(dct_ii_ortho(&energies, MFCC_COEFFS));
    }
    FeatureMatrix::new(FeatureKind::Mfcc, frames, MFCC_COEFFS, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::LOG_FLOOR;

    #[test]
    fn shape_for_one_second() {
        let s: Vec<f32> = (0..16000).map(|i| ((i as f32) * 0.05).sin() * 0.3).collect();
        let m = mfcc(&AudioChunk::new(s, "u", 0)).unwrap();
        assert_eq!((m.frames, m.dims), (100, 20));
    }

    #[test]
    fn silence_gives_constant_cepstrum() {
        let m = mfcc(&AudioChunk::new(vec![0.0; 800], "z", 0)).unwrap();
        let c0 = (MEL_BANDS as f64).sqrt() * LOG_FLOOR.ln();
        for r in m.rows() {
            assert!((r[0] - c0).abs() < 1e-9);
            assert!(r[1..].iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn filters_tile_the_band() {
        let bank = default_filterbank();
        assert_eq!(bank.len(), 40);
        assert!(bank.iter().all(|f| f.iter().sum::<f64>() > 0.0));
        // every interior bin is covered by some filter
        let bin_hz = 16000.0 / 2048.0;
        for k in 1..LPS_BINS - 1 {
            let covered = bank.iter().any(|f| f[k] > 0.0);
            assert!(covered, "bin {k} ({} Hz) uncovered", k as f64 * bin_hz);
        }
    }

    #[test]
    fn mel_round_trip() {
        for hz in [0.0, 30.0, 1000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 999.9855).abs() < 1e-3);
    }

    #[test]
    fn dct_is_orthonormal() {
        let n = 8;
        let basis: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                dct_ii_ortho(&e, n)
            })
            .collect();
        for a in 0..n {
            for b in 0..n {
                let dot: f64 = (0..n).map(|i| basis[i][a] * basis[i][b]).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
