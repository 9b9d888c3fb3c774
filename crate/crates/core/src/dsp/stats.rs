use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dsp::{FeatureKind, FeatureMatrix};
use crate::error::{invalid, Result};

/// Lower bound on every per-dimension variance.
pub const VAR_FLOOR: f64 = 1e-8;

/// Per-dimension mean and population variance of one target kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindStats {
    pub kind: FeatureKind,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: u64,
}

/// Frozen train-set statistics for every regression target kind.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub kinds: BTreeMap<FeatureKind, KindStats>,
}

impl StandardizationStats {
    pub fn get(&self, kind: FeatureKind) -> Option<&KindStats> {
        self.kinds.get(&kind)
    }

    pub fn insert(&mut self, stats: KindStats) {
        self.kinds.insert(stats.kind, stats);
    }
}

/// Streaming (Chan et al. pairwise-merge) accumulator of per-dimension moments.
#[derive(Clone, Debug)]
pub struct StatsAccumulator {
    kind: FeatureKind,
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new(kind: FeatureKind) -> Self {
        StatsAccumulator { kind, count: 0, mean: Vec::new(), m2: Vec::new() }
    }

    pub fn push(&mut self, features: &FeatureMatrix) -> Result<()> {
        if features.kind != self.kind {
            return Err(invalid!("accumulating {:?} stats, got {:?} features", self.kind, features.kind));
        }
        if features.frames == 0 {
            return Ok(());
        }
        let d = features.dims;
        if self.count == 0 {
            self.mean = vec![0.0; d];
            self.m2 = vec![0.0; d];
        } else if self.mean.len() != d {
            return Err(invalid!("expected {} dims, got {}", self.mean.len(), d));
        }
        // moments of this block
        let nb = features.frames as f64;
        let mut bmean = vec![0.0; d];
        for r in features.rows() {
            for (m, &v) in bmean.iter_mut().zip(r) {
                *m += v;
            }
        }
        bmean.iter_mut().for_each(|m| *m /= nb);
        let mut bm2 = vec![0.0; d];
        for r in features.rows() {
            for ((s, &v), &m) in bm2.iter_mut().zip(r).zip(&bmean) {
                *s += (v - m) * (v - m);
            }
        }
        let na = self.count as f64;
        let n = na + nb;
        for j in 0..d {
            let delta = bmean[j] - self.mean[j];
            self.mean[j] += delta * nb / n;
            self.m2[j] += bm2[j] + delta * delta * na * nb / n;
        }
        self.count += features.frames as u64;
        Ok(())
    }

    pub fn finish(self) -> Result<KindStats> {
        if self.count == 0 {
            return Err(invalid!("no {:?} frames to compute statistics from", self.kind));
        }
        let n = self.count as f64;
        Ok(KindStats {
            kind: self.kind,
            var: self.m2.iter().map(|&s| (s / n).max(VAR_FLOOR)).collect(),
            mean: self.mean,
            count: self.count,
        })
    }
}

/// Statistics over a set of feature matrices of one kind.
pub fn compute_stats<'a>(kind: FeatureKind, features: impl IntoIterator<Item = &'a FeatureMatrix>) -> Result<KindStats> {
    let mut acc = StatsAccumulator::new(kind);
    for f in features {
        acc.push(f)?;
    }
    acc.finish()
}

fn check_kind(features: &FeatureMatrix, stats: &KindStats) -> Result<()> {
    if features.kind != stats.kind {
        return Err(invalid!("{:?} statistics applied to {:?} features", stats.kind, features.kind));
    }
    if features.dims != stats.mean.len() {
        return Err(invalid!("statistics cover {} dims, features have {}", stats.mean.len(), features.dims));
    }
    Ok(())
}

/// `(x - mean) / std` per dimension.
pub fn standardize(features: &FeatureMatrix, stats: &KindStats) -> Result<FeatureMatrix> {
    check_kind(features, stats)?;
    let inv: Vec<f64> = stats.var.iter().map(|v| 1.0 / v.sqrt()).collect();
    let mut out = features.clone();
    for row in out.data.chunks_mut(features.dims) {
        for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&inv) {
            *v = (*v - m) * s;
        }
    }
    Ok(out)
}

/// Inverse of [`standardize`].
pub fn destandardize(features: &FeatureMatrix, stats: &KindStats) -> Result<FeatureMatrix> {
    check_kind(features, stats)?;
    let mut out = features.clone();
    for row in out.data.chunks_mut(features.dims) {
        for ((v, m), var) in row.iter_mut().zip(&stats.mean).zip(&stats.var) {
            *v = *v * var.sqrt() + m;
        }
    }
    Ok(out)
}
