use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::io::{synth_utterance, Speaker};
use crate::workers::WorkerName;

fn tiny_config() -> TrainConfig {
    TrainConfig {
        encoder: EncoderConfig::tiny(),
        workers: WorkerConfig::tiny(),
        chunk_samples: 1600,
        batch_size_chunks: 4,
        epochs: 2,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn tiny_set() -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let speakers = [Speaker { f0_lo: 100.0, f0_hi: 140.0 }, Speaker { f0_lo: 220.0, f0_hi: 280.0 }];
    let utts = (0..4)
        .map(|i| Utterance { id: format!("u{i}"), samples: synth_utterance(&speakers[i % 2], if i == 3 { 0.1 } else { 0.25 }, 20.0, &mut rng) })
        .collect();
    TrainingSet::prepare(utts, 1600).unwrap()
}

fn trainer(config: TrainConfig, set: &TrainingSet) -> Trainer {
    Trainer::new(config, set.stats().unwrap()).unwrap()
}

#[test]
fn learning_rate_halves_every_period() {
    let c = TrainConfig::default();
    assert_eq!(lr_at(0, &c), 5e-4);
    assert_eq!(lr_at(29, &c), 5e-4);
    assert_eq!(lr_at(30, &c), 2.5e-4);
    assert_eq!(lr_at(149, &c), 3.125e-5);
    let mut distinct: Vec<f64> = (0..150).map(|e| lr_at(e, &c)).collect();
    distinct.dedup();
    assert_eq!(distinct.len(), 5);
}

#[test]
fn total_loss_is_the_mean() {
    assert_eq!(total_loss(&[0.0, 2.0]).unwrap(), 1.0);
    assert_eq!(total_loss(&[3.0]).unwrap(), 3.0);
    assert!(total_loss(&[]).is_err());
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    let bad = |f: fn(&mut TrainConfig)| {
        let mut c = TrainConfig::default();
        f(&mut c);
        c.validate().is_err()
    };
    assert!(bad(|c| c.learning_rate = 0.0));
    assert!(bad(|c| c.chunk_samples = 16_001));
    assert!(bad(|c| c.enabled_workers.clear()));
    assert!(bad(|c| c.enabled_workers.push(WorkerName::Lps)));
    let c = TrainConfig::default().without(WorkerName::Gim).unwrap();
    assert_eq!(c.enabled().len(), 6);
    assert!(c.without(WorkerName::Gim).is_err());
}

#[test]
fn hash_ignores_epoch_budget_only() {
    let a = TrainConfig::default();
    let mut b = a.clone();
    b.epochs = 7;
    assert_eq!(a.hash(), b.hash());
    b.seed = 1;
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn epoch_plan_covers_every_utterance() {
    let set = tiny_set();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..50 {
        let plan = set.epoch_plan(3, &mut rng).unwrap();
        let mut seen = vec![0; set.len()];
        for b in &plan {
            let mut utts: Vec<usize> = b.iter().map(|r| r.utterance).collect();
            for r in b {
                seen[r.utterance] += 1;
                assert_eq!(r.offset % HOP, 0);
                assert!(r.offset + set.chunk_samples <= set.utterances[r.utterance].samples.len());
            }
            utts.dedup();
            assert!(utts.len() >= 2);
        }
        // three utterances are long enough for a second chunk
        assert_eq!(seen, vec![2, 2, 2, 1]);
        let batch: Batch<f32> = set.batch(&plan[0], &set.stats().unwrap(), &WorkerName::ALL).unwrap();
        assert!(!batch.gim_pairs.is_empty());
    }
}

#[test]
fn training_is_deterministic() {
    let set = tiny_set();
    let mut a = trainer(tiny_config(), &set);
    let mut b = trainer(tiny_config(), &set);
    a.train(&set, None, |_| {}).unwrap();
    b.train(&set, None, |_| {}).unwrap();
    assert_eq!(a.store.checksum(""), b.store.checksum(""));
    assert_eq!(a.loss_curve_tsv(), b.loss_curve_tsv());
    let mut c = tiny_config();
    c.seed = 12;
    let mut c = trainer(c, &set);
    c.train(&set, None, |_| {}).unwrap();
    assert_ne!(a.store.checksum(""), c.store.checksum(""));
}

#[test]
fn resume_is_bit_identical() {
    let set = tiny_set();
    let dir = tempfile::tempdir().unwrap();
    let mut straight = trainer(tiny_config(), &set);
    straight.train(&set, None, |_| {}).unwrap();

    let mut first = tiny_config();
    first.epochs = 1;
    let mut half = trainer(first, &set);
    half.train(&set, Some(dir.path()), |_| {}).unwrap();
    let mut resumed = load_checkpoint(&dir.path().join("checkpoint.bin")).unwrap();
    assert_eq!(resumed.store.checksum(""), half.store.checksum(""));
    assert_eq!(resumed.global_step, half.global_step);
    resumed.config.epochs = 2;
    resumed.train(&set, None, |_| {}).unwrap();

    assert_eq!(resumed.store.checksum(""), straight.store.checksum(""));
    assert_eq!(resumed.adam.step_count(), straight.adam.step_count());
    assert_eq!(resumed.loss_curve_tsv(), straight.loss_curve_tsv());
    let curve = std::fs::read_to_string(dir.path().join("loss_curve.tsv")).unwrap();
    assert_eq!(curve.lines().count(), 2);
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let set = tiny_set();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.bin");
    let t = trainer(tiny_config(), &set);
    save_checkpoint(&t, &p).unwrap();
    let good = std::fs::read(&p).unwrap();
    assert_eq!(&good[..8], b"PASECKPT");

    let mut bad = good.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 0x40;
    std::fs::write(&p, &bad).unwrap();
    assert!(load_checkpoint(&p).is_err());

    std::fs::write(&p, &good[..good.len() - 10]).unwrap();
    assert!(load_checkpoint(&p).is_err());

    let mut bad = good.clone();
    bad[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    std::fs::write(&p, &bad).unwrap();
    assert!(load_checkpoint(&p).is_err());
}

#[test]
fn ablated_worker_is_untouched() {
    let set = tiny_set();
    let config = tiny_config().without(WorkerName::Lps).unwrap();
    let mut t = trainer(config, &set);
    let lps = t.store.checksum("worker.LPS");
    let mfcc = t.store.checksum("worker.MFCC");
    t.train(&set, None, |_| {}).unwrap();
    assert_eq!(t.store.checksum("worker.LPS"), lps);
    assert_ne!(t.store.checksum("worker.MFCC"), mfcc);
    let header = t.loss_curve_tsv().lines().next().unwrap().to_string();
    assert_eq!(header, "epoch\tlr\tWAVE\tMFCC\tPROSODY\tLIM\tGIM\tSPC\ttotal");
    assert!(t.history.iter().all(|r| r.losses.len() == 6));
}

#[test]
fn failed_step_leaves_state_alone() {
    let set = tiny_set();
    let mut t = trainer(tiny_config(), &set);
    let refs = [ChunkRef { utterance: 0, offset: 0 }, ChunkRef { utterance: 1, offset: 0 }];
    let mut batch: Batch<f32> = set.batch(&refs, &t.stats, &t.config.enabled()).unwrap();
    batch.wave.data_mut()[3] = f32::NAN;
    let before = (t.store.checksum(""), t.rng.get_word_pos(), t.global_step);
    assert!(t.step(&batch).is_err());
    assert_eq!((t.store.checksum(""), t.rng.get_word_pos(), t.global_step), before);
}

#[test]
fn whole_stack_passes_finite_differences() {
    let checks = gradient_suite().unwrap();
    assert!(checks.len() >= 18);
    for r in &checks {
        assert!(r.passed(), "{}: {:.3e} over {}", r.name, r.max_rel_error, r.checked);
    }
}
