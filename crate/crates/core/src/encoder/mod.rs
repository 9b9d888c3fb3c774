//! Waveform encoder: sinc band-pass layer, strided conv blocks, and a
//! projection to normalized 100-dim frames, one per 160 samples.

mod config;
mod sinc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{AudioChunk, FeatureKind, FeatureMatrix, HOP};
use crate::error::{invalid, shape_err, Result};
use crate::nn::{fan_in_uniform, register_prelu, BatchNorm, ConvGeom, Graph, ParamId, ParamStore, PendingStats, Phase, Scalar, Tensor, Var};

pub use config::{ConvSpec, EncoderConfig};
pub use sinc::{bandpass_kernel, effective_band, init_sinc, SincFilterbank};

/// Name prefix of every encoder tensor in a parameter store.
pub const PREFIX: &str = "encoder";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Block {
    weight: ParamId,
    width: usize,
    stride: usize,
    bn: BatchNorm,
    act: ParamId,
}

/// Handles to the encoder tensors held in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    config: EncoderConfig,
    sinc: SincFilterbank,
    sinc_bn: BatchNorm,
    sinc_act: ParamId,
    blocks: Vec<Block>,
    proj: ParamId,
    out_bn: BatchNorm,
}

impl Encoder {
    pub fn new<F: Scalar>(config: EncoderConfig, store: &mut ParamStore<F>, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let s = &config.sinc;
        let sinc = SincFilterbank::register(
            store,
            &format!("{PREFIX}.sinc"),
            s.filters,
            s.width,
            config.sample_rate,
            config.init_low_hz,
            config.min_band_hz,
        );
        let sinc_bn = BatchNorm::register(store, &format!("{PREFIX}.sinc_bn"), s.filters, true);
        let sinc_act = register_prelu(store, &format!("{PREFIX}.sinc_act"), s.filters);
        let mut c_in = s.filters;
        let mut blocks = Vec::new();
        for (i, b) in config.blocks.iter().enumerate() {
            let p = format!("{PREFIX}.block{i}");
            let weight = store.add(format!("{p}.w"), fan_in_uniform(&[b.filters, c_in, b.width], c_in * b.width, rng));
            blocks.push(Block {
                weight,
                width: b.width,
                stride: b.stride,
                bn: BatchNorm::register(store, &format!("{p}.bn"), b.filters, true),
                act: register_prelu(store, &format!("{p}.act"), b.filters),
            });
            c_in = b.filters;
        }
        let proj = store.add(format!("{PREFIX}.proj.w"), fan_in_uniform(&[config.embedding_dim, c_in, 1], c_in, rng));
        let out_bn = BatchNorm::register(store, &format!("{PREFIX}.out_bn"), config.embedding_dim, false);
        Ok(Encoder { config, sinc, sinc_bn, sinc_act, blocks, proj, out_bn })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn sinc(&self) -> &SincFilterbank {
        &self.sinc
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    /// `wave`: `batch x 1 x T` with `T` a multiple of 160. Returns
    /// `batch x embedding_dim x T/160`.
    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        wave: Var,
        phase: Phase,
        pending: &mut Vec<PendingStats<F>>,
    ) -> Result<Var> {
        let shape = g.shape(wave).to_vec();
        if shape.len() != 3 || shape[1] != 1 {
            return Err(shape_err!("encoder expects batch x 1 x samples, got {:?}", shape));
        }
        let len = shape[2];
        if len == 0 || !len.is_multiple_of(HOP) {
            return Err(invalid!("input length {} is not a positive multiple of {}", len, HOP));
        }
        let kernels = self.sinc.forward(g, store)?;
        let geom = ConvGeom::same(self.sinc.width, 1, len)?;
        let mut x = g.conv1d(wave, kernels, 1, geom.pad_left, geom.pad_right)?;
        x = self.sinc_bn.forward(g, store, x, phase, pending)?;
        let a = g.param(store, self.sinc_act);
        x = g.prelu(x, a, 1)?;
        for b in &self.blocks {
            let w = g.param(store, b.weight);
            let geom = ConvGeom::same(b.width, b.stride, g.shape(x)[2])?;
            x = g.conv1d(x, w, b.stride, geom.pad_left, geom.pad_right)?;
            x = b.bn.forward(g, store, x, phase, pending)?;
            let a = g.param(store, b.act);
            x = g.prelu(x, a, 1)?;
        }
        let w = g.param(store, self.proj);
        x = g.conv1d(x, w, 1, 0, 0)?;
        self.out_bn.forward(g, store, x, phase, pending)
    }

    /// Embeds one chunk. Train-phase statistics come from this chunk alone
    /// and are discarded; nothing in `store` changes.
    pub fn encode<F: Scalar>(&self, store: &ParamStore<F>, chunk: &AudioChunk, phase: Phase) -> Result<FeatureMatrix> {
        chunk.check_rate()?;
        let len = chunk.len();
        let mut g = Graph::new();
        let wave = g.constant(Tensor::new([1, 1, len], chunk.samples.iter().map(|&s| F::of(s as f64)).collect())?);
        let y = self.forward(&mut g, store, wave, phase, &mut Vec::new())?;
        let (d, n) = (self.config.embedding_dim, len / HOP);
        let v = g.value(y).data();
        let mut data = Vec::with_capacity(n * d);
        for t in 0..n {
            data.extend((0..d).map(|c| v[c * n + t].f64()));
        }
        FeatureMatrix::new(FeatureKind::Embedding, n, d, data)
    }
}

#[cfg(test)]
mod tests;
