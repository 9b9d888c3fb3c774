//! Harmonic "speakers" separated by F0 band, with syllable-like envelopes,
//! moving formants and additive white noise.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dsp::SAMPLE_RATE;

#[derive(Clone, Debug, PartialEq)]
pub struct Speaker {
    pub f0_lo: f64,
    pub f0_hi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub speakers: Vec<Speaker>,
    pub utterances_per_speaker: usize,
    pub seconds: f64,
    pub snr_db: f64,
}

impl SynthSpec {
    /// Two speakers, 100-140 Hz and 220-280 Hz.
    pub fn two_speakers(utterances_per_speaker: usize, seconds: f64) -> Self {
        SynthSpec {
            speakers: vec![Speaker { f0_lo: 100.0, f0_hi: 140.0 }, Speaker { f0_lo: 220.0, f0_hi: 280.0 }],
            utterances_per_speaker,
            seconds,
            snr_db: 20.0,
        }
    }
}

fn formant_gain(f: f64, formants: &[(f64, f64)]) -> f64 {
    0.05 + formants.iter().map(|&(c, bw)| (-(f - c).powi(2) / (2.0 * bw * bw)).exp()).sum::<f64>()
}

/// One utterance of `seconds` at 16 kHz, peak-normalized to 0.5 before noise.
pub fn synth_utterance(speaker: &Speaker, seconds: f64, snr_db: f64, rng: &mut impl Rng) -> Vec<f32> {
    let sr = SAMPLE_RATE as f64;
    let len = (seconds * sr).round() as usize;
    let depth = 0.15 * (speaker.f0_hi - speaker.f0_lo);
    let centre = rng.gen_range(speaker.f0_lo + depth..=speaker.f0_hi - depth);
    let (rate, phase0) = (rng.gen_range(2.0..5.0), rng.gen_range(0.0..2.0 * PI));
    let harmonics = (4000.0 / speaker.f0_lo) as usize;
    let mut phases = vec![0.0f64; harmonics];
    let mut out = vec![0.0f64; len];

    let mut pos = rng.gen_range(0..(0.05 * sr) as usize);
    while pos < len {
        let syl = rng.gen_range((0.15 * sr) as usize..(0.3 * sr) as usize);
        let formants = [(rng.gen_range(300.0..800.0), 120.0), (rng.gen_range(900.0..2200.0), 200.0), (2800.0, 300.0)];
        let gains: Vec<f64> = (1..=harmonics).map(|k| formant_gain(k as f64 * centre, &formants) / k as f64).collect();
        let end = (pos + syl).min(len);
        for (n, o) in out.iter_mut().enumerate().take(end).skip(pos) {
            let t = n as f64 / sr;
            let f0 = centre + depth * (2.0 * PI * rate * t + phase0).sin();
            let env = (PI * (n - pos) as f64 / syl as f64).sin().powi(2);
            let mut v = 0.0;
            for (k, (ph, g)) in phases.iter_mut().zip(&gains).enumerate() {
                let f = (k + 1) as f64 * f0;
                *ph += 2.0 * PI * f / sr;
                if f < sr / 2.0 {
                    v += g * ph.sin();
                }
            }
            *o = env * v;
        }
        pos = end + rng.gen_range(0..(0.08 * sr) as usize);
    }

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let signal: Vec<f64> = out.iter().map(|v| 0.5 * v / peak).collect();
    let rms = (signal.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    let noise_rms = rms / 10f64.powf(snr_db / 20.0);
    signal
        .into_iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(rng);
            (v + noise_rms * z).clamp(-1.0, 1.0) as f32
        })
        .collect()
}

/// `(id, speaker index, samples)` for every utterance, speakers interleaved.
pub fn synth_corpus(spec: &SynthSpec, rng: &mut impl Rng) -> Vec<(String, usize, Vec<f32>)> {
    let mut out = Vec::new();
    for i in 0..spec.utterances_per_speaker {
        for (s, spk) in spec.speakers.iter().enumerate() {
            out.push((format!("spk{s}_{i:04}"), s, synth_utterance(spk, spec.seconds, spec.snr_db, rng)));
        }
    }
    out
}
