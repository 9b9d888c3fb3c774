//! Minimal differentiable substrate: tensors, a reverse-mode tape with the
//! handful of operations the encoder and workers use, and Adam.

mod adam;
pub(crate) mod conv;
pub mod gradcheck;
mod graph;
mod params;
mod scalar;
mod tensor;


use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use conv::ConvGeom;
pub use graph::{BatchMoments, CustomOp, Gradients, Graph, NormStats, Var};
pub use params::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub(crate) use graph::softmax_rows;

/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in running-statistics updates.
pub const BN_MOMENTUM: f64 = 0.1;
/// Clamp applied to discriminator probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;
/// Initial slope of every PReLU.
pub const PRELU_INIT: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Eval,
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn fan_in_uniform<F: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<F> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| F::of(rng.gen_range(-bound..=bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Batch-norm parameters and running statistics registered in a store.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Option<ParamId>,
    pub beta: Option<ParamId>,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

/// A running-statistics update deferred until the optimizer step succeeds.
#[derive(Clone, Debug)]
pub struct PendingStats<F> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub moments: BatchMoments<F>,
}

impl BatchNorm {
    pub fn register<F: Scalar>(store: &mut ParamStore<F>, prefix: &str, channels: usize, affine: bool) -> Self {
        let (gamma, beta) = if affine {
            (
                Some(store.add(format!("{prefix}.gamma"), Tensor::full([channels], F::one()))),
                Some(store.add(format!("{prefix}.beta"), Tensor::zeros([channels]))),
            )
        } else {
            (None, None)
        };
        BatchNorm {
            gamma,
            beta,
            running_mean: store.add_buffer(format!("{prefix}.running_mean"), Tensor::zeros([channels])),
            running_var: store.add_buffer(format!("{prefix}.running_var"), Tensor::full([channels], F::one())),
        }
    }

    /// Normalizes channel axis 1 of `x`. In the training phase the batch
    /// moments are returned for a later [`apply_pending`] call.
    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
        phase: Phase,
        pending: &mut Vec<PendingStats<F>>,
    ) -> crate::Result<Var> {
        let gamma = self.gamma.map(|id| g.param(store, id));
        let beta = self.beta.map(|id| g.param(store, id));
        let eps = F::of(BN_EPS);
        match phase {
            Phase::Train => {
                let (y, moments) = g.batch_norm(x, 1, gamma, beta, NormStats::Batch, eps)?;
                pending.push(PendingStats {
                    running_mean: self.running_mean,
                    running_var: self.running_var,
                    moments: moments.expect("batch statistics"),
                });
                Ok(y)
            }
            Phase::Eval => {
                let stats = NormStats::Running {
                    mean: store.get(self.running_mean).data(),
                    var: store.get(self.running_var).data(),
                };
                Ok(g.batch_norm(x, 1, gamma, beta, stats, eps)?.0)
            }
        }
    }
}

/// Folds deferred batch moments into running statistics.
pub fn apply_pending<F: Scalar>(store: &mut ParamStore<F>, pending: Vec<PendingStats<F>>) {
    let m = F::of(BN_MOMENTUM);
    let keep = F::one() - m;
    for p in pending {
        for (r, &b) in store.get_mut(p.running_mean).data_mut().iter_mut().zip(&p.moments.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in store.get_mut(p.running_var).data_mut().iter_mut().zip(&p.moments.var) {
            *r = keep * *r + m * b;
        }
    }
}

/// One fully connected layer stored as `prefix.w` (`out x in`) and `prefix.b`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn register<F: Scalar>(store: &mut ParamStore<F>, prefix: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Dense {
            weight: store.add(format!("{prefix}.w"), fan_in_uniform(&[d_out, d_in], d_in, rng)),
            bias: store.add(format!("{prefix}.b"), fan_in_uniform(&[d_out], d_in, rng)),
        }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> crate::Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, Some(b))
    }
}

/// PReLU slopes stored as `prefix.slope`.
pub fn register_prelu<F: Scalar>(store: &mut ParamStore<F>, prefix: &str, channels: usize) -> ParamId {
    store.add(format!("{prefix}.slope"), Tensor::full([channels], F::of(PRELU_INIT)))
}
