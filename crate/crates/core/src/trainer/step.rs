use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Batch;
use super::{lr_at, total_loss, Model, TrainConfig, TrainingSet};
use crate::dsp::StandardizationStats;
use crate::error::{invalid, Error, Result};
use crate::nn::{apply_pending, Adam, AdamConfig, Graph, ParamStore, PendingStats, Phase, Scalar, Var};
use crate::workers::{gather, sample_gim, sample_lim, sample_spc, worker_loss, SpcWindow, TriplePlan, WorkerName, WorkerOutput};

/// Contrastive triples drawn for one batch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Plans {
    pub lim: Vec<TriplePlan>,
    pub gim: Vec<TriplePlan>,
    pub spc: Vec<TriplePlan>,
}

/// Draws triples for the enabled discriminators. GIM gets no triples when
/// the batch holds no chunk pair.
pub fn sample_plans<F>(batch: &Batch<F>, workers: &[WorkerName], spc: SpcWindow, rng: &mut ChaCha8Rng) -> Result<Plans> {
    let pool: Vec<usize> = (0..batch.chunks.len()).collect();
    let mut plans = Plans::default();
    if workers.contains(&WorkerName::Lim) {
        plans.lim = sample_lim(&batch.chunks, &pool, rng)?;
    }
    if workers.contains(&WorkerName::Gim) && !batch.gim_pairs.is_empty() {
        plans.gim = sample_gim(&batch.chunks, &batch.gim_pairs, &pool, rng)?;
    }
    if workers.contains(&WorkerName::Spc) {
        plans.spc = sample_spc(&batch.chunks, &pool, spc, rng)?;
    }
    Ok(plans)
}

/// Records the loss of every enabled worker that has something to score.
#[allow(clippy::too_many_arguments)]
pub fn worker_losses<F: Scalar>(
    g: &mut Graph<F>,
    model: &Model,
    store: &ParamStore<F>,
    batch: &Batch<F>,
    plans: &Plans,
    workers: &[WorkerName],
    phase: Phase,
    pending: &mut Vec<PendingStats<F>>,
) -> Result<Vec<(WorkerName, Var)>> {
    let wave = g.constant(batch.wave.clone());
    let emb = model.encoder.forward(g, store, wave, phase, pending)?;
    let (b, d, n) = {
        let s = g.shape(emb);
        (s[0], s[1], s[2])
    };
    let needs_rows = workers.iter().any(|w| !matches!(w, WorkerName::Wave | WorkerName::Gim));
    let rows = if needs_rows {
        let t = g.transpose12(emb)?;
        Some(g.reshape(t, &[b * n, d])?)
    } else {
        None
    };
    let means = if !plans.gim.is_empty() { Some(g.mean_last(emb)?) } else { None };
    let mut out = Vec::new();
    for &w in workers {
        let loss = match w {
            WorkerName::Wave => {
                let pred = model.workers.wave.forward(g, store, emb, phase, pending)?;
                let target = batch.wave.clone().reshape(vec![b, batch.wave.shape()[2]])?;
                worker_loss(g, w, WorkerOutput::Regression { pred, target: &target })?
            }
            WorkerName::Lps | WorkerName::Mfcc | WorkerName::Prosody => {
                let head = model.workers.regressor(w).expect("regression worker");
                let pred = head.forward(g, store, rows.expect("rows built"))?;
                let target = batch.targets.get(&w).ok_or_else(|| invalid!("batch has no targets for {w}"))?;
                worker_loss(g, w, WorkerOutput::Regression { pred, target })?
            }
            WorkerName::Lim | WorkerName::Gim | WorkerName::Spc => {
                let plans = match w {
                    WorkerName::Lim => &plans.lim,
                    WorkerName::Gim => &plans.gim,
                    _ => &plans.spc,
                };
                if plans.is_empty() {
                    continue;
                }
                let disc = model.workers.discriminator(w).expect("discriminator");
                let rows = rows.unwrap_or(emb);
                let means = means.unwrap_or(emb);
                let (a, p, neg) = gather(g, rows, means, n, plans)?;
                let p_pos = disc.forward(g, store, a, p)?;
                let p_neg = disc.forward(g, store, a, neg)?;
                worker_loss(g, w, WorkerOutput::Discrimination { p_pos, p_neg })?
            }
        };
        out.push((w, loss));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub lr: f64,
    pub losses: Vec<(WorkerName, f64)>,
    pub total: f64,
}

/// Mean losses over one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub losses: Vec<(WorkerName, f64)>,
    pub total: f64,
}

/// Mutable state of a run. Everything needed to continue bit-identically is
/// persisted by [`crate::trainer::save_checkpoint`].
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub store: ParamStore<f32>,
    pub adam: Adam<f32>,
    pub stats: StandardizationStats,
    /// Data and sampling stream.
    pub rng: ChaCha8Rng,
    pub epoch: usize,
    pub global_step: u64,
    pub history: Vec<EpochRecord>,
    /// Free-form label carried into checkpoints, e.g. the dropped worker.
    pub tag: Option<String>,
}

impl Trainer {
    /// Fresh parameters drawn from stream 0 of the seed; data sampling uses stream 1.
    pub fn new(config: TrainConfig, stats: StandardizationStats) -> Result<Self> {
        config.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let model = Model::new(&config.encoder, &config.workers, &mut store, &mut init)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let adam = Adam::new(AdamConfig { lr: config.learning_rate, ..AdamConfig::default() })?;
        Ok(Trainer { config, model, store, adam, stats, rng, epoch: 0, global_step: 0, history: Vec::new(), tag: None })
    }

    pub fn lr(&self) -> f64 {
        lr_at(self.epoch, &self.config)
    }

    /// One forward/backward/Adam update on `batch`. On error nothing changes.
    pub fn step(&mut self, batch: &Batch<f32>) -> Result<StepReport> {
        let saved_rng = self.rng.clone();
        let r = self.try_step(batch);
        if r.is_err() {
            self.rng = saved_rng;
        }
        r
    }

    fn try_step(&mut self, batch: &Batch<f32>) -> Result<StepReport> {
        let workers = self.config.enabled();
        let plans = sample_plans(batch, &workers, self.config.workers.spc, &mut self.rng)?;
        let mut g = Graph::new();
        let mut pending = Vec::new();
        let losses = worker_losses(&mut g, &self.model, &self.store, batch, &plans, &workers, Phase::Train, &mut pending)?;
        let values: Vec<(WorkerName, f64)> = losses.iter().map(|&(w, v)| (w, g.value(v).item().f64())).collect();
        if let Some((w, v)) = values.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{w} loss is {v}")));
        }
        let vars: Vec<Var> = losses.iter().map(|&(_, v)| v).collect();
        let total_var = g.mean(&vars)?;
        let grads = g.backward(total_var)?;
        let lr = self.lr();
        self.adam.set_lr(lr);
        self.adam.step(&mut self.store, &grads.params())?;
        apply_pending(&mut self.store, pending);
        self.global_step += 1;
        let total = g.value(total_var).item().f64();
        Ok(StepReport { lr, losses: values, total })
    }

    /// One pass over `set` with freshly drawn chunk positions.
    pub fn run_epoch(&mut self, set: &TrainingSet) -> Result<EpochRecord> {
        let plan = set.epoch_plan(self.config.batch_size_chunks, &mut self.rng)?;
        let workers = self.config.enabled();
        let lr = self.lr();
        let mut sums = vec![0.0; workers.len()];
        let mut counts = vec![0usize; workers.len()];
        let mut totals = Vec::new();
        for refs in &plan {
            let batch = set.batch(refs, &self.stats, &workers)?;
            let rep = self.step(&batch)?;
            for (w, v) in &rep.losses {
                let i = workers.iter().position(|x| x == w).expect("enabled worker");
                sums[i] += v;
                counts[i] += 1;
            }
            totals.push(rep.total);
        }
        let losses = workers.iter().zip(sums.iter().zip(&counts)).map(|(&w, (&s, &c))| (w, s / c.max(1) as f64)).collect();
        let rec = EpochRecord { epoch: self.epoch, lr, losses, total: total_loss(&totals)? };
        self.history.push(rec.clone());
        self.epoch += 1;
        Ok(rec)
    }

    /// Trains until `config.epochs`, writing `checkpoint.bin` and
    /// `loss_curve.tsv` into `out` after every epoch when given.
    pub fn train(&mut self, set: &TrainingSet, out: Option<&Path>, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<()> {
        while self.epoch < self.config.epochs {
            let rec = self.run_epoch(set)?;
            if let Some(dir) = out {
                super::save_checkpoint(self, &dir.join("checkpoint.bin"))?;
                crate::io::write_atomic(&dir.join("loss_curve.tsv"), self.loss_curve_tsv().as_bytes())?;
            }
            on_epoch(&rec);
        }
        Ok(())
    }

    /// Tab-separated: epoch, lr, one column per enabled worker, total.
    pub fn loss_curve_tsv(&self) -> String {
        let workers = self.config.enabled();
        let mut s = String::from("epoch\tlr");
        for w in &workers {
            write!(s, "\t{w}").unwrap();
        }
        s.push_str("\ttotal\n");
        for r in &self.history {
            write!(s, "{}\t{:e}", r.epoch, r.lr).unwrap();
            for (_, v) in &r.losses {
                write!(s, "\t{v:.6}").unwrap();
            }
            writeln!(s, "\t{:.6}", r.total).unwrap();
        }
        s
    }
}
