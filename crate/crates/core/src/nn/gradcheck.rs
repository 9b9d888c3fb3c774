//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{Graph, NormStats, ParamId, ParamStore, Tensor, Var, BN_EPS, PROB_CLAMP};

/// Step used for central differences.
pub const STEP: f64 = 1e-5;
/// Pass threshold on the relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor so that gradients at round-off level are compared absolutely.
pub const FLOOR: f64 = 1e-6;
/// Times the step is divided by ten when `x ± h` straddles a kink.
pub const MAX_NARROWING: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Entries whose step had to shrink to stay on one smooth piece.
    pub narrowed: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Central difference of `eval(offset) -> (value, branch signature)`. When
/// the two sides land on different pieces of a piecewise-smooth function,
/// the step shrinks so the difference measures the local slope rather than a
/// jump in slope. Returns the estimate and whether shrinking was needed.
fn central(mut eval: impl FnMut(f64) -> Result<(f64, u64)>) -> Result<(f64, bool)> {
    let (_, at) = eval(0.0)?;
    let mut h = STEP;
    for i in 0..=MAX_NARROWING {
        let (up, su) = eval(h)?;
        let (down, sd) = eval(-h)?;
        if (su == at && sd == at) || i == MAX_NARROWING {
            return Ok(((up - down) / (2.0 * h), i > 0));
        }
        h /= 10.0;
    }
    unreachable!()
}

/// Entries to probe: all of them, or an evenly spread subset of `limit`.
fn probe_indices(n: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(l) if l < n => (0..l).map(|i| i * n / l).collect(),
        _ => (0..n).collect(),
    }
}

/// Checks d(f)/d(input) for every input of a scalar-valued `f`.
pub fn check_inputs(
    name: &str,
    inputs: &[Tensor<f64>],
    limit: Option<usize>,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheck> {
    let eval = |vals: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok((g.value(out).item(), g.branch_signature()))
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.wrt(&g, v)).collect();

    let (mut worst, mut checked, mut narrowed) = (0.0f64, 0, 0);
    let mut vals = inputs.to_vec();
    for (k, a) in analytic.iter().enumerate() {
        for i in probe_indices(a.numel(), limit) {
            let orig = vals[k].data()[i];
            let (numeric, shrunk) = central(|d| {
                vals[k].data_mut()[i] = orig + d;
                let r = eval(&vals);
                vals[k].data_mut()[i] = orig;
                r
            })?;
            worst = worst.max(relative_error(a.data()[i], numeric));
            checked += 1;
            narrowed += shrunk as usize;
        }
    }
    Ok(GradCheck { name: name.to_string(), checked, max_rel_error: worst, narrowed })
}

/// Checks d(loss)/d(param) for the listed stored tensors of a model whose loss
/// is rebuilt from `store` by `f`.
pub fn check_params(
    name: &str,
    store: &ParamStore<f64>,
    ids: &[ParamId],
    limit: Option<usize>,
    f: impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
) -> Result<GradCheck> {
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let grads = g.backward(out)?;
    let mut work = store.clone();
    let (mut worst, mut checked, mut narrowed) = (0.0f64, 0, 0);
    for &id in ids {
        let analytic = grads.param(store, id)?.clone();
        for i in probe_indices(analytic.numel(), limit) {
            let orig = work.get(id).data()[i];
            let (numeric, shrunk) = central(|d| {
                work.get_mut(id).data_mut()[i] = orig + d;
                let r = eval_store(&work, &f);
                work.get_mut(id).data_mut()[i] = orig;
                r
            })?;
            worst = worst.max(relative_error(analytic.data()[i], numeric));
            checked += 1;
            narrowed += shrunk as usize;
        }
    }
    Ok(GradCheck { name: name.to_string(), checked, max_rel_error: worst, narrowed })
}

fn eval_store(store: &ParamStore<f64>, f: &impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>) -> Result<(f64, u64)> {
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    Ok((g.value(out).item(), g.branch_signature()))
}

fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches")
}

/// Every differentiable graph op on small random inputs, each reduced to a
/// scalar through a fixed random projection.
pub fn op_suite() -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut r = |s: &[usize]| rand_tensor(s, &mut rng);
    let proj = |shape: &[usize], seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand_tensor(shape, &mut rng)
    };

    out.push(
        check_inputs("conv1d", &[r(&[2, 2, 13]), r(&[3, 2, 4])], None, |g, v| {
            let y = g.conv1d(v[0], v[1], 2, 2, 1)?;
            let s = g.shape(y).to_vec();
            g.weighted_sum(y, &proj(&s, 10))
        })?,
    );
    out.push(
        check_inputs("conv_transpose1d", &[r(&[2, 3, 5]), r(&[3, 2, 6])], None, |g, v| {
            let y = g.conv_transpose1d(v[0], v[1], 4)?;
            let s = g.shape(y).to_vec();
            g.weighted_sum(y, &proj(&s, 11))
        })?,
    );
    out.push(
        check_inputs("batchnorm-affine-train", &[r(&[3, 2, 5]), r(&[2]), r(&[2])], None, |g, v| {
            let (y, _) = g.batch_norm(v[0], 1, Some(v[1]), Some(v[2]), NormStats::Batch, BN_EPS)?;
            g.weighted_sum(y, &proj(&[3, 2, 5], 12))
        })?,
    );
    out.push(
        check_inputs("batchnorm-eval", &[r(&[3, 2, 5]), r(&[2])], None, |g, v| {
            let stats = NormStats::Running { mean: &[0.3, -0.1], var: &[1.7, 0.4] };
            let (y, _) = g.batch_norm(v[0], 1, Some(v[1]), None, stats, BN_EPS)?;
            g.weighted_sum(y, &proj(&[3, 2, 5], 13))
        })?,
    );
    out.push(
        check_inputs("prelu", &[r(&[2, 3, 4]), r(&[3])], None, |g, v| {
            let y = g.prelu(v[0], v[1], 1)?;
            g.weighted_sum(y, &proj(&[2, 3, 4], 14))
        })?,
    );
    out.push(
        check_inputs("linear", &[r(&[4, 3]), r(&[5, 3]), r(&[5])], None, |g, v| {
            let y = g.linear(v[0], v[1], Some(v[2]))?;
            g.weighted_sum(y, &proj(&[4, 5], 15))
        })?,
    );
    out.push(
        check_inputs("transpose-gather-concat-mean", &[r(&[2, 3, 4]), r(&[3, 2])], None, |g, v| {
            let t = g.transpose12(v[0])?;
            let rows = g.reshape(t, &[8, 3])?;
            let w = g.gather_windows(rows, &[0, 3, 5, 3], 2)?;
            let m = g.mean_last(v[0])?;
            let m = g.reshape(m, &[3, 2])?;
            let c = g.concat_cols(m, v[1])?;
            let a = g.weighted_sum(w, &proj(&[4, 6], 16))?;
            let b = g.weighted_sum(c, &proj(&[3, 4], 17))?;
            g.mean(&[a, b])
        })?,
    );
    out.push(
        check_inputs("sigmoid-bce", &[r(&[5]), r(&[4])], None, |g, v| {
            let p = g.sigmoid(v[0]);
            let q = g.sigmoid(v[1]);
            g.bce_loss(p, q, PROB_CLAMP)
        })?,
    );
    let target = r(&[3, 4]);
    out.push(
        check_inputs("l1-mse", &[r(&[3, 4])], None, |g, v| {
            let a = g.l1_loss(v[0], &target)?;
            let b = g.mse_loss(v[0], &target)?;
            g.mean(&[a, b])
        })?,
    );
    out.push(
        check_inputs("softmax-xent", &[r(&[4, 3])], None, |g, v| g.softmax_cross_entropy(v[0], &[0, 2, 1, 2]))?,
    );
    Ok(out)
}
