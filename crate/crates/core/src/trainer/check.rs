//! The full gradient suite: every graph op, the sinc layer, and a tiny
//! encoder with all seven workers, checked in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sample_plans, worker_losses, ChunkRef, Model, TrainingSet, Utterance};
use crate::encoder::{EncoderConfig, SincFilterbank, PREFIX};
use crate::error::Result;
use crate::nn::gradcheck::{check_params, op_suite, GradCheck};
use crate::nn::{ParamId, ParamStore, Phase, Tensor};
use crate::workers::{WorkerConfig, WorkerName, Workers};

/// Entries probed per tensor in the end-to-end check.
pub const STACK_PROBES: usize = 6;

pub fn sinc_check() -> Result<GradCheck> {
    let mut store = ParamStore::<f64>::new();
    let bank = SincFilterbank::register(&mut store, "sinc", 3, 31, 16000, 30.0, 50.0);
    // a negative cutoff, and the top filter moved off the Nyquist clamp
    store.get_mut(bank.f1).data_mut()[1] = -0.07;
    store.get_mut(bank.band).data_mut()[2] = 0.2;
    let weights = Tensor::new([3, 1, 31], (0..93).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect())?;
    check_params("sinc", &store, &[bank.f1, bank.band], None, |g, s| {
        let k = bank.forward(g, s)?;
        g.weighted_sum(k, &weights)
    })
}

/// Mean worker loss of the tiny model on a fixed four-chunk batch with one
/// GIM pair, checked per component against every trainable tensor.
pub fn stack_check(probes: Option<usize>) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let utts = (0..3)
        .map(|i| Utterance { id: format!("g{i}"), samples: (0..3200).map(|_| rng.gen_range(-0.5f32..0.5)).collect() })
        .collect();
    let set = TrainingSet::prepare(utts, 1600)?;
    let stats = set.stats()?;
    let refs = [
        ChunkRef { utterance: 0, offset: 0 },
        ChunkRef { utterance: 0, offset: 1600 },
        ChunkRef { utterance: 1, offset: 0 },
        ChunkRef { utterance: 2, offset: 1600 },
    ];
    let workers = WorkerName::ALL;
    let batch = set.batch::<f64>(&refs, &stats, &workers)?;
    let wk = WorkerConfig::tiny();
    let plans = sample_plans(&batch, &workers, wk.spc, &mut rng)?;

    let mut store = ParamStore::<f64>::new();
    let model = Model::new(&EncoderConfig::tiny(), &wk, &mut store, &mut rng)?;
    let band = model.encoder.sinc().band;
    let top = store.get(band).numel() - 1;
    store.get_mut(band).data_mut()[top] *= 0.5;

    let loss = |g: &mut crate::nn::Graph<f64>, s: &ParamStore<f64>| {
        let losses = worker_losses(g, &model, s, &batch, &plans, &workers, Phase::Train, &mut Vec::new())?;
        let vars: Vec<_> = losses.iter().map(|&(_, v)| v).collect();
        g.mean(&vars)
    };
    let mut groups = vec![(PREFIX.to_string(), format!("{PREFIX}."))];
    groups.extend(workers.iter().map(|&w| (Workers::prefix(w), format!("{}.", Workers::prefix(w)))));
    groups
        .iter()
        .map(|(name, pre)| {
            let ids: Vec<ParamId> = store.ids_with_prefix(pre).filter(|&id| store.is_trainable(id)).collect();
            check_params(&format!("stack/{name}"), &store, &ids, probes, loss)
        })
        .collect()
}

/// Everything, as run by `pase gradcheck`.
pub fn gradient_suite() -> Result<Vec<GradCheck>> {
    let mut all = op_suite()?;
    all.push(sinc_check()?);
    all.extend(stack_check(Some(STACK_PROBES))?);
    Ok(all)
}
