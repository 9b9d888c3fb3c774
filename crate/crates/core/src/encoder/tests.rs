use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::gradcheck;

fn noise(len: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-0.5f32..0.5)).collect()
}

fn build<F: Scalar>(config: EncoderConfig) -> (Encoder, ParamStore<F>) {
    let mut store = ParamStore::new();
    let enc = Encoder::new(config, &mut store, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    (enc, store)
}

#[test]
fn frame_count_law() {
    let (enc, store) = build::<f32>(EncoderConfig::desk());
    for t in [160, 16000, 32000] {
        let m = enc.encode(&store, &AudioChunk::new(noise(t, 1), "u", 0), Phase::Eval).unwrap();
        assert_eq!((m.frames, m.dims), (t / 160, 100));
    }
}

#[test]
fn rejects_lengths_off_the_hop_grid() {
    let (enc, store) = build::<f32>(EncoderConfig::tiny());
    assert!(enc.encode(&store, &AudioChunk::new(noise(1000, 1), "u", 0), Phase::Eval).is_err());
}

#[test]
fn sinc_layer_has_two_parameters_per_filter() {
    let (_, store) = build::<f32>(EncoderConfig::full());
    assert_eq!(store.count_trainable("encoder.sinc."), 128);
}

#[test]
fn train_phase_output_is_normalized() {
    let (enc, store) = build::<f64>(EncoderConfig::tiny());
    let mut g = Graph::new();
    let mut wave = Vec::new();
    for s in 0..4 {
        wave.extend(noise(3200, s).into_iter().map(f64::from));
    }
    let x = g.constant(Tensor::new([4, 1, 3200], wave).unwrap());
    let mut pending = Vec::new();
    let y = enc.forward(&mut g, &store, x, Phase::Train, &mut pending).unwrap();
    assert_eq!(g.shape(y), &[4, 4, 20]);
    assert_eq!(pending.len(), 5);
    let v = g.value(y).data();
    for c in 0..4 {
        let vals: Vec<f64> = (0..4).flat_map(|b| v[(b * 4 + c) * 20..(b * 4 + c + 1) * 20].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-3, "{mean} {var}");
    }
}

#[test]
fn eval_encoding_is_deterministic() {
    let (enc, store) = build::<f32>(EncoderConfig::desk());
    let chunk = AudioChunk::new(noise(3200, 3), "u", 0);
    let a = enc.encode(&store, &chunk, Phase::Eval).unwrap();
    let b = enc.encode(&store, &chunk, Phase::Eval).unwrap();
    assert_eq!(a, b);
}

#[test]
fn perturbation_stays_inside_receptive_windows() {
    let config = EncoderConfig::desk();
    let (enc, store) = build::<f32>(config.clone());
    let len = 8000;
    let base = noise(len, 5);
    let before = enc.encode(&store, &AudioChunk::new(base.clone(), "u", 0), Phase::Eval).unwrap();
    for pos in [0, 1234, 4000, 7999] {
        let mut x = base.clone();
        x[pos] += 0.7;
        let after = enc.encode(&store, &AudioChunk::new(x, "u", 0), Phase::Eval).unwrap();
        for f in 0..before.frames {
            let (lo, hi) = config.receptive_window(f, len).unwrap();
            let covered = (lo..hi).contains(&(pos as isize));
            if !covered {
                assert_eq!(before.row(f), after.row(f), "frame {f} moved for sample {pos}");
            }
        }
        assert_ne!(before.row(pos / 160), after.row(pos / 160));
    }
}

#[test]
fn zeroing_outside_the_window_keeps_the_frame() {
    let config = EncoderConfig::desk();
    let (enc, store) = build::<f32>(config.clone());
    let len = 16000;
    let base = noise(len, 9);
    let full = enc.encode(&store, &AudioChunk::new(base.clone(), "u", 0), Phase::Eval).unwrap();
    for f in [0, 37, 99] {
        let (lo, hi) = config.receptive_window(f, len).unwrap();
        let masked: Vec<f32> =
            base.iter().enumerate().map(|(i, &v)| if (lo..hi).contains(&(i as isize)) { v } else { 0.0 }).collect();
        let m = enc.encode(&store, &AudioChunk::new(masked, "u", 0), Phase::Eval).unwrap();
        assert_eq!(full.row(f), m.row(f));
    }
}

#[test]
fn tiny_encoder_gradients_reach_the_cutoffs() {
    let (enc, mut store) = build::<f64>(EncoderConfig::tiny());
    // the top filter is initialized with its upper edge on the Nyquist clamp
    store.get_mut(enc.sinc().band).data_mut()[1] *= 0.5;
    let wave: Vec<f64> = noise(2 * 320, 11).into_iter().map(f64::from).collect();
    let proj = Tensor::new([2, 4, 2], (0..16).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let ids = [enc.sinc().f1, enc.sinc().band];
    let r = gradcheck::check_params("encoder", &store, &ids, None, |g, s| {
        let x = g.constant(Tensor::new([2, 1, 320], wave.clone())?);
        let y = enc.forward(g, s, x, Phase::Train, &mut Vec::new())?;
        g.weighted_sum(y, &proj)
    })
    .unwrap();
    assert!(r.passed(), "{r:?}");
}
