use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::{ParamId, ParamStore, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam with per-parameter first and second moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F> {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Option<(Tensor<F>, Tensor<F>)>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        if !(config.lr > 0.0 && config.eps > 0.0 && (0.0..1.0).contains(&config.beta1) && (0.0..1.0).contains(&config.beta2)) {
            return Err(invalid!("bad Adam hyper-parameters {:?}", config));
        }
        Ok(Adam { config, step: 0, moments: Vec::new() })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// First and second moment of a parameter, if it has been updated.
    pub fn moments(&self, id: ParamId) -> Option<(&Tensor<F>, &Tensor<F>)> {
        self.moments.get(id.0).and_then(|m| m.as_ref()).map(|(m, v)| (m, v))
    }

    pub(crate) fn restore(&mut self, step: u64, moments: Vec<(ParamId, Tensor<F>, Tensor<F>)>) {
        self.step = step;
        self.moments.clear();
        for (id, m, v) in moments {
            if self.moments.len() <= id.0 {
                self.moments.resize_with(id.0 + 1, || None);
            }
            self.moments[id.0] = Some((m, v));
        }
    }

    /// Applies one update to every parameter in `grads`. Parameters without a
    /// gradient keep their values and moments. Non-finite gradients abort the
    /// step before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[(ParamId, &Tensor<F>)]) -> Result<()> {
        for (id, g) in grads {
            if g.shape() != store.get(*id).shape() {
                return Err(invalid!("gradient for `{}` has shape {:?}", store.name(*id), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of `{}`", store.name(*id))));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powf(t);
        let c2 = 1.0 - beta2.powf(t);
        let (b1, b2) = (F::of(beta1), F::of(beta2));
        let (one_b1, one_b2) = (F::of(1.0 - beta1), F::of(1.0 - beta2));
        let step_size = F::of(lr / c1);
        let c2_sqrt = F::of(c2.sqrt());
        let eps = F::of(eps);
        for (id, g) in grads {
            if self.moments.len() <= id.0 {
                self.moments.resize_with(id.0 + 1, || None);
            }
            let (m, v) = self.moments[id.0].get_or_insert_with(|| {
                let shape = g.shape().to_vec();
                (Tensor::zeros(shape.clone()), Tensor::zeros(shape))
            });
            let p = store.get_mut(*id).data_mut();
            for (((p, m), v), &g) in p.iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p -= step_size * *m / (v.sqrt() / c2_sqrt + eps);
            }
        }
        Ok(())
    }
}
