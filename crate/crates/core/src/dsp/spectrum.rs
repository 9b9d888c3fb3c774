use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dsp::{frame_signal, log_floor, AudioChunk, FeatureKind, FeatureMatrix, LPS_BINS, NFFT};
use crate::error::Result;

/// `|DFT|^2` of each Hamming-windowed frame zero-padded to 2048 points, bins 0..=1024.
pub fn power_spectra(chunk: &AudioChunk) -> Result<Vec<Vec<f64>>> {
    let frames = frame_signal(chunk)?;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(NFFT);
    let mut buf = vec![Complex::new(0.0, 0.0); NFFT];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    Ok(frames
        .iter()
        .map(|f| {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (c, &v) in buf.iter_mut().zip(f) {
                c.re = v;
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            buf[..LPS_BINS].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect())
}

/// Log power spectrum, `frames x 1025`.
pub fn lps(chunk: &AudioChunk) -> Result<FeatureMatrix> {
    let spectra = power_spectra(chunk)?;
    let frames = spectra.len();
    let data = spectra.into_iter().flatten().map(log_floor).collect();
    FeatureMatrix::new(FeatureKind::Lps, frames, LPS_BINS, data)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::dsp::{hamming, LOG_FLOOR, WINDOW};

    #[test]
    fn silence_hits_log_floor() {
        let m = lps(&AudioChunk::new(vec![0.0; 1600], "z", 0)).unwrap();
        assert_eq!((m.frames, m.dims), (10, 1025));
        assert!(m.data.iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn bin_centred_sine_peaks_at_its_bin() {
        for k in [40usize, 64, 200, 700, 1000] {
            let f = k as f64 * 16000.0 / 2048.0;
            let s: Vec<f32> = (0..4000).map(|n| (2.0 * PI * f * n as f64 / 16000.0).sin() as f32 * 0.5).collect();
            let m = lps(&AudioChunk::new(s, "sine", 0)).unwrap();
            // edge frames mix in a mirrored copy of the tone; check frames fully inside the chunk
            for r in m.rows().skip(1).take(m.frames - 2) {
                let argmax = r.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
                assert_eq!(argmax, k);
            }
        }
    }

    #[test]
    fn matches_naive_dft_on_a_random_chunk() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s: Vec<f32> = (0..800).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let chunk = AudioChunk::new(s, "r", 0);
        let m = lps(&chunk).unwrap();
        let w = hamming(WINDOW);
        let frames = crate::dsp::raw_frames(&chunk).unwrap();
        for (i, f) in frames.iter().enumerate() {
            for k in (0..LPS_BINS).step_by(37) {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, (&x, &wn)) in f.iter().zip(&w).enumerate() {
                    let ang = -2.0 * PI * (k * n) as f64 / NFFT as f64;
                    re += x * wn * ang.cos();
                    im += x * wn * ang.sin();
                }
                let expect = log_floor(re * re + im * im);
                assert!((m.row(i)[k] - expect).abs() <= 1e-6 * expect.abs().max(1.0));
            }
        }
    }
}
