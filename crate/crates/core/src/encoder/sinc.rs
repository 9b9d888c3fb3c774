//! Band-pass first layer whose kernels are generated from two cutoffs per filter.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dsp::{hamming, hz_to_mel, mel_to_hz};
use crate::error::{invalid, Result};
use crate::nn::{CustomOp, Graph, ParamId, ParamStore, Scalar, Tensor, Var};

/// Cutoffs in normalized frequency (cycles per sample), stored as
/// `prefix.f1` and `prefix.band`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SincFilterbank {
    pub f1: ParamId,
    pub band: ParamId,
    pub width: usize,
    /// Minimum bandwidth, normalized.
    pub min_band: f64,
}

/// Effective `(low, high)` band of one filter after the constraints.
pub fn effective_band(f1: f64, band: f64, min_band: f64) -> (f64, f64) {
    let lo = f1.abs().min(0.5 - min_band);
    let hi = (lo + band.abs() + min_band).min(0.5);
    (lo, hi)
}

/// Windowed band-pass kernel for normalized cutoffs `lo < hi`, centred on
/// tap `width / 2`.
pub fn bandpass_kernel(lo: f64, hi: f64, width: usize) -> Vec<f64> {
    let half = (width / 2) as isize;
    let window = hamming(width);
    (0..width)
        .map(|k| {
            let n = k as isize - half;
            let ideal = if n == 0 {
                2.0 * (hi - lo)
            } else {
                let n = n as f64;
                ((2.0 * PI * hi * n).sin() - (2.0 * PI * lo * n).sin()) / (PI * n)
            };
            ideal * window[k]
        })
        .collect()
}

/// Cutoffs equally spaced on the mel scale between `low_hz` and Nyquist:
/// returns `(f1, band)` in normalized frequency, band net of the minimum width.
pub fn init_sinc(filters: usize, sample_rate: u32, low_hz: f64, min_band_hz: f64) -> (Vec<f64>, Vec<f64>) {
    let sr = sample_rate as f64;
    let (m_lo, m_hi) = (hz_to_mel(low_hz), hz_to_mel(sr / 2.0));
    let edges: Vec<f64> = (0..=filters)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / filters as f64))
        .collect();
    let f1 = edges[..filters].iter().map(|&f| f / sr).collect();
    let band = edges.windows(2).map(|e| (e[1] - e[0] - min_band_hz).max(0.0) / sr).collect();
    (f1, band)
}

fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

struct SincOp {
    width: usize,
    min_band: f64,
}

impl<F: Scalar> CustomOp<F> for SincOp {
    fn name(&self) -> &'static str {
        "sinc_kernels"
    }

    fn branches(&self, inputs: &[&Tensor<F>]) -> Vec<bool> {
        let mut out = Vec::new();
        for (&a, &b) in inputs[0].data().iter().zip(inputs[1].data()) {
            let (a, b) = (a.f64(), b.f64());
            let lo = a.abs().min(0.5 - self.min_band);
            out.extend([a < 0.0, b < 0.0, a.abs() < 0.5 - self.min_band, lo + b.abs() + self.min_band < 0.5]);
        }
        out
    }

    fn backward(&self, inputs: &[&Tensor<F>], _output: &Tensor<F>, grad: &Tensor<F>) -> Vec<Tensor<F>> {
        let (f1, band) = (inputs[0].data(), inputs[1].data());
        let window = hamming(self.width);
        let half = (self.width / 2) as f64;
        let mut g1 = vec![F::zero(); f1.len()];
        let mut gb = vec![F::zero(); f1.len()];
        for i in 0..f1.len() {
            let (a, b) = (f1[i].f64(), band[i].f64());
            let (lo, hi) = effective_band(a, b, self.min_band);
            let row = &grad.data()[i * self.width..(i + 1) * self.width];
            // d kernel / d hi = 2 cos(2 pi hi n) w[n], and symmetrically for lo
            let (mut d_lo, mut d_hi) = (0.0, 0.0);
            for (k, &gk) in row.iter().enumerate() {
                let n = k as f64 - half;
                let gw = gk.f64() * window[k];
                d_hi += 2.0 * gw * (2.0 * PI * hi * n).cos();
                d_lo -= 2.0 * gw * (2.0 * PI * lo * n).cos();
            }
            let lo_free = if a.abs() < 0.5 - self.min_band { 1.0 } else { 0.0 };
            let hi_free = if lo + b.abs() + self.min_band < 0.5 { 1.0 } else { 0.0 };
            let d_lo_total = d_lo + d_hi * hi_free;
            g1[i] = F::of(d_lo_total * lo_free * sign(a));
            gb[i] = F::of(d_hi * hi_free * sign(b));
        }
        let n = f1.len();
        vec![
            Tensor::new([n], g1).expect("gradient shape"),
            Tensor::new([n], gb).expect("gradient shape"),
        ]
    }
}

impl SincFilterbank {
    pub fn register<F: Scalar>(
        store: &mut ParamStore<F>,
        prefix: &str,
        filters: usize,
        width: usize,
        sample_rate: u32,
        low_hz: f64,
        min_band_hz: f64,
    ) -> Self {
        let (f1, band) = init_sinc(filters, sample_rate, low_hz, min_band_hz);
        let to = |v: Vec<f64>| Tensor::new([filters], v.into_iter().map(F::of).collect()).expect("filter count");
        SincFilterbank {
            f1: store.add(format!("{prefix}.f1"), to(f1)),
            band: store.add(format!("{prefix}.band"), to(band)),
            width,
            min_band: min_band_hz / sample_rate as f64,
        }
    }

    pub fn filters<F: Scalar>(&self, store: &ParamStore<F>) -> usize {
        store.get(self.f1).numel()
    }

    /// Effective bands in Hz.
    pub fn bands_hz<F: Scalar>(&self, store: &ParamStore<F>, sample_rate: u32) -> Vec<(f64, f64)> {
        let sr = sample_rate as f64;
        store
            .get(self.f1)
            .data()
            .iter()
            .zip(store.get(self.band).data())
            .map(|(&a, &b)| {
                let (lo, hi) = effective_band(a.f64(), b.f64(), self.min_band);
                (lo * sr, hi * sr)
            })
            .collect()
    }

    /// `filters x 1 x width` kernel tensor, without recording a graph.
    pub fn kernels<F: Scalar>(&self, store: &ParamStore<F>) -> Tensor<F> {
        kernels(store.get(self.f1).data(), store.get(self.band).data(), self.width, self.min_band)
    }

    /// Kernel tensor recorded on `g` so gradients reach the cutoffs.
    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, store: &ParamStore<F>) -> Result<Var> {
        if self.width.is_multiple_of(2) {
            return Err(invalid!("sinc width must be odd, got {}", self.width));
        }
        let f1 = g.param(store, self.f1);
        let band = g.param(store, self.band);
        let out = kernels(g.value(f1).data(), g.value(band).data(), self.width, self.min_band);
        Ok(g.custom(&[f1, band], out, Box::new(SincOp { width: self.width, min_band: self.min_band })))
    }
}

fn kernels<F: Scalar>(f1: &[F], band: &[F], width: usize, min_band: f64) -> Tensor<F> {
    let mut data = Vec::with_capacity(f1.len() * width);
    for (&a, &b) in f1.iter().zip(band) {
        let (lo, hi) = effective_band(a.f64(), b.f64(), min_band);
        data.extend(bandpass_kernel(lo, hi, width).into_iter().map(F::of));
    }
    Tensor::new([f1.len(), 1, width], data).expect("kernel shape")
}
