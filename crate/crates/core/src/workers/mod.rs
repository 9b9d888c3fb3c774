//! The seven self-supervised heads and the samplers feeding the three
//! discriminators.

mod heads;
mod sampling;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsp::{standardize, FeatureKind, FeatureMatrix, StandardizationStats, LPS_BINS, MFCC_COEFFS, PROSODY_DIMS};
use crate::error::{invalid, Error, Result};
use crate::nn::{Graph, Scalar, Tensor, Var, PROB_CLAMP};

pub use heads::{Discriminator, RegressionHead, WaveDecoder, WorkerConfig, Workers};
pub use sampling::{
    gather, gim_vectors, materialize, sample_gim, sample_lim, sample_spc, ChunkInfo, ContrastiveTriple, Segment, SpcWindow, TriplePlan,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum WorkerName {
    Wave,
    Lps,
    Mfcc,
    Prosody,
    Lim,
    Gim,
    Spc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkerKind {
    Regression,
    Discrimination,
}

impl WorkerName {
    pub const ALL: [WorkerName; 7] = [
        WorkerName::Wave,
        WorkerName::Lps,
        WorkerName::Mfcc,
        WorkerName::Prosody,
        WorkerName::Lim,
        WorkerName::Gim,
        WorkerName::Spc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WorkerName::Wave => "WAVE",
            WorkerName::Lps => "LPS",
            WorkerName::Mfcc => "MFCC",
            WorkerName::Prosody => "PROSODY",
            WorkerName::Lim => "LIM",
            WorkerName::Gim => "GIM",
            WorkerName::Spc => "SPC",
        }
    }

    pub fn kind(self) -> WorkerKind {
        match self {
            WorkerName::Wave | WorkerName::Lps | WorkerName::Mfcc | WorkerName::Prosody => WorkerKind::Regression,
            _ => WorkerKind::Discrimination,
        }
    }

    /// Output units per frame (per sample for WAVE, a single probability for
    /// the discriminators).
    pub fn target_dim(self) -> usize {
        match self {
            WorkerName::Lps => LPS_BINS,
            WorkerName::Mfcc => MFCC_COEFFS,
            WorkerName::Prosody => PROSODY_DIMS,
            _ => 1,
        }
    }

    /// Standardized DSP target this worker regresses, if any.
    pub fn feature_kind(self) -> Option<FeatureKind> {
        match self {
            WorkerName::Lps => Some(FeatureKind::Lps),
            WorkerName::Mfcc => Some(FeatureKind::Mfcc),
            WorkerName::Prosody => Some(FeatureKind::Prosody),
            _ => None,
        }
    }

    /// Comma-separated list of every valid name.
    pub fn valid_names() -> String {
        WorkerName::ALL.iter().map(|w| w.as_str()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for WorkerName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WorkerName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        WorkerName::ALL
            .into_iter()
            .find(|w| w.as_str() == up)
            .ok_or_else(|| invalid!("unknown worker `{}`; valid workers are {}", s, WorkerName::valid_names()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerSpec {
    pub name: WorkerName,
    pub kind: WorkerKind,
    pub target_dim: usize,
    pub enabled: bool,
}

impl WorkerSpec {
    pub fn new(name: WorkerName, enabled: bool) -> Self {
        WorkerSpec { name, kind: name.kind(), target_dim: name.target_dim(), enabled }
    }
}

/// Every worker, with those in `enabled` switched on.
pub fn roster(enabled: &[WorkerName]) -> Vec<WorkerSpec> {
    WorkerName::ALL.iter().map(|&w| WorkerSpec::new(w, enabled.contains(&w))).collect()
}

/// What a worker produced for one batch, paired with what it is scored against.
pub enum WorkerOutput<'a, F: Scalar> {
    /// Predicted and target samples (WAVE) or standardized frame targets.
    Regression { pred: Var, target: &'a Tensor<F> },
    /// Discriminator probabilities for positive and negative pairs.
    Discrimination { p_pos: Var, p_neg: Var },
}

/// L1 for WAVE, MSE for the other regressors, BCE for the discriminators.
pub fn worker_loss<F: Scalar>(g: &mut Graph<F>, worker: WorkerName, output: WorkerOutput<'_, F>) -> Result<Var> {
    match (worker.kind(), output) {
        (WorkerKind::Regression, WorkerOutput::Regression { pred, target }) => {
            if worker == WorkerName::Wave {
                g.l1_loss(pred, target)
            } else {
                g.mse_loss(pred, target)
            }
        }
        (WorkerKind::Discrimination, WorkerOutput::Discrimination { p_pos, p_neg }) => g.bce_loss(p_pos, p_neg, F::of(PROB_CLAMP)),
        _ => Err(invalid!("{worker} got an output of the wrong kind")),
    }
}

/// Standardized regression targets of `worker` for the chunks in `features`,
/// stacked chunk-major into one `rows x dim` tensor.
pub fn regression_targets<F: Scalar>(
    worker: WorkerName,
    features: &[&FeatureMatrix],
    stats: &StandardizationStats,
) -> Result<Tensor<F>> {
    let kind = worker.feature_kind().ok_or_else(|| invalid!("{worker} has no DSP target"))?;
    let ks = stats.get(kind).ok_or_else(|| invalid!("no standardization statistics for {worker}"))?;
    let mut data = Vec::new();
    let mut rows = 0;
    for f in features {
        let z = standardize(f, ks)?;
        rows += z.frames;
        data.extend(z.data.iter().map(|&v| F::of(v)));
    }
    Tensor::new([rows, worker.target_dim()], data)
}
