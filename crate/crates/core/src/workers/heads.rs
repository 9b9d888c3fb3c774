use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{SpcWindow, WorkerName};
use crate::error::{shape_err, Result};
use crate::nn::{fan_in_uniform, register_prelu, BatchNorm, Dense, Graph, ParamId, ParamStore, PendingStats, Phase, Scalar, Var};

/// Head sizes. Frame-level heads always use one hidden layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerConfig {
    pub hidden: usize,
    pub decoder_channels: [usize; 3],
    pub decoder_kernels: [usize; 3],
    pub decoder_strides: [usize; 3],
    /// Width of the per-sample MLP after the transposed convolutions.
    pub decoder_hidden: usize,
    pub spc: SpcWindow,
}

impl WorkerConfig {
    pub fn full() -> Self {
        WorkerConfig {
            hidden: 256,
            decoder_channels: [256, 128, 64],
            decoder_kernels: [8, 8, 20],
            decoder_strides: [4, 4, 10],
            decoder_hidden: 256,
            spc: SpcWindow::default(),
        }
    }

    /// Narrow waveform decoder for single-core runs; frame heads unchanged.
    pub fn desk() -> Self {
        WorkerConfig { decoder_channels: [32, 32, 16], decoder_hidden: 64, ..Self::full() }
    }

    pub fn tiny() -> Self {
        WorkerConfig {
            hidden: 5,
            decoder_channels: [3, 3, 2],
            decoder_kernels: [4, 4, 10],
            decoder_strides: [4, 4, 10],
            decoder_hidden: 3,
            spc: SpcWindow { min_offset: 2, max_offset: 3, span: 2 },
        }
    }
}

/// `d_in -> hidden (PReLU) -> d_out`, applied row-wise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionHead {
    pub hidden: Dense,
    pub act: ParamId,
    pub out: Dense,
}

impl RegressionHead {
    pub fn register<F: Scalar>(store: &mut ParamStore<F>, prefix: &str, d_in: usize, hidden: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        RegressionHead {
            hidden: Dense::register(store, &format!("{prefix}.hidden"), d_in, hidden, rng),
            act: register_prelu(store, &format!("{prefix}.act"), hidden),
            out: Dense::register(store, &format!("{prefix}.out"), hidden, d_out, rng),
        }
    }

    /// `rows x d_in` to `rows x d_out`.
    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let d_in = store.get(self.hidden.weight).shape()[1];
        let s = g.shape(x);
        if s.len() != 2 || s[1] != d_in {
            return Err(shape_err!("head expects rows x {}, got {:?}", d_in, s));
        }
        let h = self.hidden.forward(g, store, x)?;
        let a = g.param(store, self.act);
        let h = g.prelu(h, a, 1)?;
        self.out.forward(g, store, h)
    }
}

/// Scores an (anchor, candidate) pair: the two are concatenated and passed
/// through one hidden layer to a sigmoid unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub net: RegressionHead,
    pub anchor_dim: usize,
    pub candidate_dim: usize,
}

impl Discriminator {
    pub fn register<F: Scalar>(
        store: &mut ParamStore<F>,
        prefix: &str,
        anchor_dim: usize,
        candidate_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let net = RegressionHead::register(store, prefix, anchor_dim + candidate_dim, hidden, 1, rng);
        Discriminator { net, anchor_dim, candidate_dim }
    }

    /// `k x anchor_dim` and `k x candidate_dim` to `k x 1` probabilities.
    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, store: &ParamStore<F>, anchor: Var, candidate: Var) -> Result<Var> {
        let (sa, sc) = (g.shape(anchor).to_vec(), g.shape(candidate).to_vec());
        if sa.len() != 2 || sc.len() != 2 || sa[1] != self.anchor_dim || sc[1] != self.candidate_dim {
            return Err(shape_err!(
                "discriminator expects k x {} and k x {}, got {:?} and {:?}",
                self.anchor_dim,
                self.candidate_dim,
                sa,
                sc
            ));
        }
        let x = g.concat_cols(anchor, candidate)?;
        let logit = self.net.forward(g, store, x)?;
        Ok(g.sigmoid(logit))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Upsample {
    weight: ParamId,
    stride: usize,
    bn: BatchNorm,
    act: ParamId,
}

/// Three transposed-conv blocks (x160 in total) then a per-sample MLP with
/// one output unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveDecoder {
    blocks: Vec<Upsample>,
    mlp: RegressionHead,
}

impl WaveDecoder {
    pub fn register<F: Scalar>(store: &mut ParamStore<F>, prefix: &str, d_in: usize, config: &WorkerConfig, rng: &mut impl Rng) -> Self {
        let mut c_in = d_in;
        let mut blocks = Vec::new();
        for i in 0..3 {
            let (c_out, w, s) = (config.decoder_channels[i], config.decoder_kernels[i], config.decoder_strides[i]);
            let p = format!("{prefix}.up{i}");
            // each output sample sees about w / s taps of every input channel
            let fan_in = c_in * w.div_ceil(s);
            blocks.push(Upsample {
                weight: store.add(format!("{p}.w"), fan_in_uniform(&[c_in, c_out, w], fan_in, rng)),
                stride: s,
                bn: BatchNorm::register(store, &format!("{p}.bn"), c_out, true),
                act: register_prelu(store, &format!("{p}.act"), c_out),
            });
            c_in = c_out;
        }
        let mlp = RegressionHead::register(store, &format!("{prefix}.mlp"), c_in, config.decoder_hidden, 1, rng);
        WaveDecoder { blocks, mlp }
    }

    pub fn upsampling(&self) -> usize {
        self.blocks.iter().map(|b| b.stride).product()
    }

    /// `batch x d x n` embeddings to `batch x (n * 160)` samples.
    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        emb: Var,
        phase: Phase,
        pending: &mut Vec<PendingStats<F>>,
    ) -> Result<Var> {
        let s = g.shape(emb).to_vec();
        if s.len() != 3 || s[2] == 0 {
            return Err(shape_err!("decoder expects batch x dims x frames, got {:?}", s));
        }
        let mut x = emb;
        for b in &self.blocks {
            let w = g.param(store, b.weight);
            x = g.conv_transpose1d(x, w, b.stride)?;
            x = b.bn.forward(g, store, x, phase, pending)?;
            let a = g.param(store, b.act);
            x = g.prelu(x, a, 1)?;
        }
        let (batch, c, t) = {
            let s = g.shape(x);
            (s[0], s[1], s[2])
        };
        let x = g.transpose12(x)?;
        let x = g.reshape(x, &[batch * t, c])?;
        let y = self.mlp.forward(g, store, x)?;
        g.reshape(y, &[batch, t])
    }
}

/// All seven heads, registered under `worker.<NAME>`. Heads of disabled
/// workers stay in the store untouched so ablated runs remain comparable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workers {
    pub config: WorkerConfig,
    pub wave: WaveDecoder,
    pub lps: RegressionHead,
    pub mfcc: RegressionHead,
    pub prosody: RegressionHead,
    pub lim: Discriminator,
    pub gim: Discriminator,
    pub spc: Discriminator,
}

pub fn prefix(worker: WorkerName) -> String {
    format!("worker.{worker}")
}

impl Workers {
    pub fn new<F: Scalar>(config: WorkerConfig, embedding_dim: usize, store: &mut ParamStore<F>, rng: &mut impl Rng) -> Self {
        let d = embedding_dim;
        let h = config.hidden;
        let wave = WaveDecoder::register(store, &prefix(WorkerName::Wave), d, &config, rng);
        let mut reg = |w: WorkerName, store: &mut ParamStore<F>| RegressionHead::register(store, &prefix(w), d, h, w.target_dim(), rng);
        let lps = reg(WorkerName::Lps, store);
        let mfcc = reg(WorkerName::Mfcc, store);
        let prosody = reg(WorkerName::Prosody, store);
        let lim = Discriminator::register(store, &prefix(WorkerName::Lim), d, d, h, rng);
        let gim = Discriminator::register(store, &prefix(WorkerName::Gim), d, d, h, rng);
        let spc = Discriminator::register(store, &prefix(WorkerName::Spc), d, d * config.spc.span, h, rng);
        Workers { config, wave, lps, mfcc, prosody, lim, gim, spc }
    }

    pub fn regressor(&self, worker: WorkerName) -> Option<&RegressionHead> {
        match worker {
            WorkerName::Lps => Some(&self.lps),
            WorkerName::Mfcc => Some(&self.mfcc),
            WorkerName::Prosody => Some(&self.prosody),
            _ => None,
        }
    }

    pub fn discriminator(&self, worker: WorkerName) -> Option<&Discriminator> {
        match worker {
            WorkerName::Lim => Some(&self.lim),
            WorkerName::Gim => Some(&self.gim),
            WorkerName::Spc => Some(&self.spc),
            _ => None,
        }
    }

    /// Name prefix of `worker`'s tensors in the store.
    pub fn prefix(worker: WorkerName) -> String {
        prefix(worker)
    }
}
