//! Downstream classification on top of the encoder: frozen, fine-tuned, or
//! trained from scratch, with utterance decisions from averaged posteriors.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{AudioChunk, HOP};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{invalid, Result};
use crate::io::{random_chunk, Split};
use crate::nn::{apply_pending, softmax_rows, Adam, AdamConfig, Graph, ParamStore, Phase, Tensor};
use crate::workers::{RegressionHead, WorkerName};

mod ablation;
mod extract;

pub use ablation::{run_ablation, AblationRun, AblationStudy};
pub use extract::{embed_utterance, extract_features, ExtractOutcome};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeMode {
    /// Encoder fixed; only the classifier learns.
    #[default]
    Frozen,
    /// Pretrained encoder updated together with the classifier.
    Finetune,
    /// Randomly initialized encoder trained with the classifier.
    Supervised,
}

impl FromStr for ProbeMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "frozen" => Ok(ProbeMode::Frozen),
            "finetune" => Ok(ProbeMode::Finetune),
            "supervised" => Ok(ProbeMode::Supervised),
            _ => Err(format!("unknown probe mode `{s}` (expected frozen, finetune or supervised)")),
        }
    }
}

impl fmt::Display for ProbeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeMode::Frozen => "frozen",
            ProbeMode::Finetune => "finetune",
            ProbeMode::Supervised => "supervised",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub mode: ProbeMode,
    pub num_classes: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Frames per classifier update (rounded up to whole chunks when the
    /// encoder is trained).
    pub batch_frames: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { mode: ProbeMode::Frozen, num_classes: 2, hidden: 256, epochs: 20, learning_rate: 1e-3, batch_frames: 256, seed: 0 }
    }
}

/// A labeled utterance at 16 kHz.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledUtterance {
    pub id: String,
    pub label: usize,
    pub samples: Vec<f32>,
    pub split: Split,
}

/// Encoder and classifier in one store; classifier tensors live under `probe.`.
#[derive(Clone, Debug)]
pub struct ProbeModel {
    pub config: ProbeConfig,
    pub encoder: Encoder,
    pub classifier: RegressionHead,
    pub store: ParamStore<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub utterance_accuracy: f64,
    pub frame_accuracy: f64,
    pub num_utterances: usize,
}

/// Argmax of the per-class mean over frames; ties go to the lowest id.
pub fn classify_utterance(posteriors: &[f64], num_classes: usize) -> Result<usize> {
    if num_classes == 0 || posteriors.is_empty() || !posteriors.len().is_multiple_of(num_classes) {
        return Err(invalid!("need a non-empty frames x {num_classes} posterior matrix, got {} values", posteriors.len()));
    }
    let frames = posteriors.len() / num_classes;
    let mut mean = vec![0.0; num_classes];
    for row in posteriors.chunks(num_classes) {
        for (m, p) in mean.iter_mut().zip(row) {
            *m += p;
        }
    }
    let mut best = 0;
    for k in 1..num_classes {
        if mean[k] / frames as f64 > mean[best] / frames as f64 {
            best = k;
        }
    }
    Ok(best)
}

fn check_labels(utts: &[LabeledUtterance], k: usize) -> Result<()> {
    if utts.is_empty() {
        return Err(invalid!("no utterances to train the probe on"));
    }
    if let Some(u) = utts.iter().find(|u| u.label >= k) {
        return Err(invalid!("utterance `{}` has label {} but there are {k} classes", u.id, u.label));
    }
    Ok(())
}

impl ProbeModel {
    /// Sets up the model for `config.mode`. FROZEN and FINETUNE copy the
    /// given pretrained encoder; SUPERVISED ignores it and draws fresh
    /// weights for `encoder_config`.
    pub fn new(
        config: ProbeConfig,
        pretrained: Option<(&Encoder, &ParamStore<f32>)>,
        encoder_config: &EncoderConfig,
    ) -> Result<Self> {
        if config.num_classes < 2 || config.hidden == 0 || config.batch_frames == 0 {
            return Err(invalid!("probe needs >= 2 classes and positive hidden and batch sizes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (encoder, mut store) = match (config.mode, pretrained) {
            (ProbeMode::Supervised, _) => {
                let mut store = ParamStore::new();
                let enc = Encoder::new(encoder_config.clone(), &mut store, &mut rng)?;
                (enc, store)
            }
            (_, Some((enc, src))) => {
                let mut store = ParamStore::new();
                let mut scratch = ChaCha8Rng::seed_from_u64(0);
                let copy = Encoder::new(enc.config().clone(), &mut store, &mut scratch)?;
                for id in store.ids().collect::<Vec<_>>() {
                    let name = store.name(id).to_string();
                    let from = src.find(&name).ok_or_else(|| invalid!("pretrained store lacks `{name}`"))?;
                    store.set(id, src.get(from).clone())?;
                }
                (copy, store)
            }
            (mode, None) => return Err(invalid!("{mode} probe needs a pretrained encoder")),
        };
        // own stream, so every mode starts from the same classifier
        let mut head_rng = ChaCha8Rng::seed_from_u64(config.seed);
        head_rng.set_stream(2);
        let classifier = RegressionHead::register(&mut store, "probe", encoder.embedding_dim(), config.hidden, config.num_classes, &mut head_rng);
        Ok(ProbeModel { config, encoder, classifier, store })
    }

    /// Encoder checksum, unchanged by FROZEN training.
    pub fn encoder_checksum(&self) -> String {
        self.store.checksum(crate::encoder::PREFIX)
    }

    /// Eval-phase embeddings of a whole utterance, `frames x dim`.
    pub fn embed(&self, samples: &[f32]) -> Result<Vec<f32>> {
        let m = embed_utterance(&self.encoder, &self.store, &AudioChunk::new(samples.to_vec(), "", 0))?;
        Ok(m.data.iter().map(|&v| v as f32).collect())
    }

    /// Row-wise class posteriors for `frames x dim` embeddings.
    pub fn posteriors(&self, emb: &[f32]) -> Result<Vec<f64>> {
        let d = self.encoder.embedding_dim();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new([emb.len() / d, d], emb.to_vec())?);
        let logits = self.classifier.forward(&mut g, &self.store, x)?;
        Ok(softmax_rows(g.value(logits).data(), self.config.num_classes).into_iter().map(f64::from).collect())
    }

    /// Trains on every utterance given (use the train split), frame targets
    /// inheriting their utterance label.
    pub fn fit(&mut self, train: &[LabeledUtterance]) -> Result<()> {
        check_labels(train, self.config.num_classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(1);
        let mut adam = Adam::new(AdamConfig { lr: self.config.learning_rate, ..AdamConfig::default() })?;
        match self.config.mode {
            ProbeMode::Frozen => self.fit_frozen(train, &mut adam, &mut rng),
            _ => self.fit_joint(train, &mut adam, &mut rng),
        }
    }

    fn fit_frozen(&mut self, train: &[LabeledUtterance], adam: &mut Adam<f32>, rng: &mut ChaCha8Rng) -> Result<()> {
        let d = self.encoder.embedding_dim();
        let mut rows: Vec<f32> = Vec::new();
        let mut labels = Vec::new();
        for u in train {
            let e = self.embed(&u.samples)?;
            labels.extend(std::iter::repeat_n(u.label, e.len() / d));
            rows.extend(e);
        }
        let mut order: Vec<usize> = (0..labels.len()).collect();
        for _ in 0..self.config.epochs {
            order.shuffle(rng);
            for idx in order.chunks(self.config.batch_frames) {
                let x: Vec<f32> = idx.iter().flat_map(|&i| rows[i * d..(i + 1) * d].iter().copied()).collect();
                let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                let mut g = Graph::new();
                let xv = g.constant(Tensor::new([idx.len(), d], x)?);
                let logits = self.classifier.forward(&mut g, &self.store, xv)?;
                let loss = g.softmax_cross_entropy(logits, &y)?;
                let grads = g.backward(loss)?;
                adam.step(&mut self.store, &grads.params())?;
            }
        }
        Ok(())
    }

    fn fit_joint(&mut self, train: &[LabeledUtterance], adam: &mut Adam<f32>, rng: &mut ChaCha8Rng) -> Result<()> {
        let chunk = 16_000;
        let per_batch = self.config.batch_frames.div_ceil(chunk / HOP).max(2);
        let mut order: Vec<usize> = (0..train.len()).collect();
        for _ in 0..self.config.epochs {
            order.shuffle(rng);
            for idx in order.chunks(per_batch) {
                if idx.len() < 2 {
                    // batch norm over a single chunk is too noisy to be useful
                    continue;
                }
                let mut wave = Vec::with_capacity(idx.len() * chunk);
                let mut labels = Vec::new();
                for &i in idx {
                    let u = &train[i];
                    let c = random_chunk(&AudioChunk::new(u.samples.clone(), u.id.clone(), 0), chunk, rng);
                    wave.extend(c.samples);
                    labels.push(u.label);
                }
                let mut g = Graph::new();
                let x = g.constant(Tensor::new([idx.len(), 1, chunk], wave)?);
                let mut pending = Vec::new();
                let emb = self.encoder.forward(&mut g, &self.store, x, Phase::Train, &mut pending)?;
                let (b, d, n) = (idx.len(), self.encoder.embedding_dim(), chunk / HOP);
                let t = g.transpose12(emb)?;
                let rows = g.reshape(t, &[b * n, d])?;
                let logits = self.classifier.forward(&mut g, &self.store, rows)?;
                let y: Vec<usize> = labels.iter().flat_map(|&l| std::iter::repeat_n(l, n)).collect();
                let loss = g.softmax_cross_entropy(logits, &y)?;
                let grads = g.backward(loss)?;
                adam.step(&mut self.store, &grads.params())?;
                apply_pending(&mut self.store, pending);
            }
        }
        Ok(())
    }

    /// Utterance and frame accuracy on `utts`.
    pub fn evaluate(&self, utts: &[LabeledUtterance]) -> Result<Metrics> {
        check_labels(utts, self.config.num_classes)?;
        let k = self.config.num_classes;
        let (mut right, mut frames_right, mut frames) = (0usize, 0usize, 0usize);
        for u in utts {
            let post = self.posteriors(&self.embed(&u.samples)?)?;
            if classify_utterance(&post, k)? == u.label {
                right += 1;
            }
            for row in post.chunks(k) {
                frames += 1;
                if classify_utterance(row, k)? == u.label {
                    frames_right += 1;
                }
            }
        }
        Ok(Metrics {
            utterance_accuracy: right as f64 / utts.len() as f64,
            frame_accuracy: frames_right as f64 / frames as f64,
            num_utterances: utts.len(),
        })
    }
}

/// Tab-separated: split, utterance_accuracy, frame_accuracy, num_utterances.
pub fn metrics_tsv(rows: &[(Split, Metrics)]) -> String {
    let mut s = String::from("split\tutterance_accuracy\tframe_accuracy\tnum_utterances\n");
    for (split, m) in rows {
        writeln!(s, "{split}\t{:.6}\t{:.6}\t{}", m.utterance_accuracy, m.frame_accuracy, m.num_utterances).unwrap();
    }
    s
}

/// Accuracy loss of each single-worker ablation: `acc(all) - acc(without w)`,
/// one row per worker in canonical order.
pub fn ablation_deltas(all: f64, dropped: &[(WorkerName, f64)]) -> Result<Vec<(WorkerName, f64, f64)>> {
    WorkerName::ALL
        .iter()
        .map(|&w| {
            let acc = dropped
                .iter()
                .find(|(d, _)| *d == w)
                .map(|&(_, a)| a)
                .ok_or_else(|| invalid!("no ablation result for {w}"))?;
            Ok((w, acc, all - acc))
        })
        .collect()
}

/// Tab-separated table: an `all` row, then one row per dropped worker.
pub fn ablation_report(all: f64, dropped: &[(WorkerName, f64)]) -> Result<String> {
    let rows = ablation_deltas(all, dropped)?;
    let mut s = String::from("model\taccuracy\tdelta\n");
    writeln!(s, "all\t{all:.6}\t0.000000").unwrap();
    for (w, acc, delta) in rows {
        writeln!(s, "-{w}\t{acc:.6}\t{delta:.6}").unwrap();
    }
    Ok(s)
}
