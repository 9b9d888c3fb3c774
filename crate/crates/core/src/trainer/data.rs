use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dsp::{self, compute_stats, AudioChunk, FeatureKind, FeatureMatrix, StandardizationStats, HOP};
use crate::error::{invalid, Result};
use crate::nn::{Scalar, Tensor};
use crate::workers::{regression_targets, ChunkInfo, WorkerName};

/// A whole 16 kHz mono recording.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub samples: Vec<f32>,
}

/// An utterance zero-padded to whole frames (and to at least one chunk),
/// with its regression targets computed once over the full signal.
#[derive(Clone, Debug)]
pub struct PreparedUtterance {
    pub id: String,
    pub samples: Vec<f32>,
    pub targets: BTreeMap<FeatureKind, FeatureMatrix>,
}

/// One chunk position: utterance index and a frame-aligned sample offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ChunkRef {
    pub utterance: usize,
    pub offset: usize,
}

#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub utterances: Vec<PreparedUtterance>,
    pub chunk_samples: usize,
}

/// Network input and targets for one step.
pub struct Batch<F> {
    /// `chunks x 1 x chunk_samples`.
    pub wave: Tensor<F>,
    pub chunks: Vec<ChunkInfo>,
    /// Pairs of batch positions cut from one utterance, for GIM.
    pub gim_pairs: Vec<(usize, usize)>,
    /// Standardized `chunks * frames x dim` targets per regression worker.
    pub targets: BTreeMap<WorkerName, Tensor<F>>,
}

impl TrainingSet {
    pub fn prepare(utterances: Vec<Utterance>, chunk_samples: usize) -> Result<Self> {
        if utterances.is_empty() {
            return Err(invalid!("training set is empty"));
        }
        if chunk_samples == 0 || !chunk_samples.is_multiple_of(HOP) {
            return Err(invalid!("chunk_samples must be a positive multiple of {HOP}"));
        }
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(utterances.len());
        for u in utterances {
            if !seen.insert(u.id.clone()) {
                return Err(invalid!("duplicate utterance id `{}`", u.id));
            }
            let mut samples = u.samples;
            let len = samples.len().max(chunk_samples).next_multiple_of(HOP);
            samples.resize(len, 0.0);
            let chunk = AudioChunk::new(samples, u.id.clone(), 0);
            let mut targets = BTreeMap::new();
            targets.insert(FeatureKind::Lps, dsp::lps(&chunk)?);
            targets.insert(FeatureKind::Mfcc, dsp::mfcc(&chunk)?);
            targets.insert(FeatureKind::Prosody, dsp::prosody(&chunk)?);
            out.push(PreparedUtterance { id: u.id, samples: chunk.samples, targets });
        }
        Ok(TrainingSet { utterances: out, chunk_samples })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Train-set statistics of every regression target.
    pub fn stats(&self) -> Result<StandardizationStats> {
        let mut s = StandardizationStats::default();
        for kind in [FeatureKind::Lps, FeatureKind::Mfcc, FeatureKind::Prosody] {
            s.insert(compute_stats(kind, self.utterances.iter().map(|u| &u.targets[&kind]))?);
        }
        Ok(s)
    }

    /// Number of frame-aligned chunk positions in an utterance.
    pub fn positions(&self, utterance: usize) -> usize {
        (self.utterances[utterance].samples.len() - self.chunk_samples) / HOP + 1
    }

    /// Whether the utterance holds two non-identical chunks.
    pub fn gim_eligible(&self, utterance: usize) -> bool {
        self.utterances[utterance].samples.len() >= 2 * self.chunk_samples
    }

    pub fn chunk(&self, r: ChunkRef) -> AudioChunk {
        let u = &self.utterances[r.utterance];
        AudioChunk::new(u.samples[r.offset..r.offset + self.chunk_samples].to_vec(), u.id.clone(), r.offset)
    }

    /// Target rows covering the chunk.
    pub fn targets(&self, r: ChunkRef, kind: FeatureKind) -> FeatureMatrix {
        let m = &self.utterances[r.utterance].targets[&kind];
        let (start, n) = (r.offset / HOP, self.chunk_samples / HOP);
        FeatureMatrix::new(kind, n, m.dims, m.data[start * m.dims..(start + n) * m.dims].to_vec())
            .expect("slice of a valid matrix")
    }

    /// Random chunk of an utterance, or another position than `avoid`.
    pub fn random_chunk(&self, utterance: usize, avoid: Option<usize>, rng: &mut impl Rng) -> ChunkRef {
        let n = self.positions(utterance);
        let pos = match avoid {
            Some(a) if n > 1 => {
                let p = rng.gen_range(0..n - 1);
                if p >= a / HOP {
                    p + 1
                } else {
                    p
                }
            }
            _ => rng.gen_range(0..n),
        };
        ChunkRef { utterance, offset: pos * HOP }
    }

    /// One epoch: every utterance contributes one random chunk, and those
    /// long enough a second chunk for GIM. Batches hold about `batch` chunks,
    /// always at least two utterances, and lead with a chunk pair when one
    /// is left.
    pub fn epoch_plan(&self, batch: usize, rng: &mut impl Rng) -> Result<Vec<Vec<ChunkRef>>> {
        if self.utterances.len() < 2 {
            return Err(invalid!("training needs at least two utterances"));
        }
        let mut order: Vec<usize> = (0..self.utterances.len()).collect();
        order.shuffle(rng);
        let mut groups: Vec<Vec<ChunkRef>> = order
            .into_iter()
            .map(|u| {
                let a = self.random_chunk(u, None, rng);
                if self.gim_eligible(u) {
                    vec![a, self.random_chunk(u, Some(a.offset), rng)]
                } else {
                    vec![a]
                }
            })
            .collect();
        let mut batches: Vec<Vec<ChunkRef>> = Vec::new();
        let mut utts_in: Vec<usize> = Vec::new();
        while !groups.is_empty() {
            let mut cur: Vec<ChunkRef> = Vec::new();
            utts_in.clear();
            if let Some(i) = groups.iter().position(|g| g.len() == 2) {
                let g = groups.remove(i);
                utts_in.push(g[0].utterance);
                cur.extend(g);
            }
            while let Some(g) = groups.first() {
                if cur.len() + g.len() > batch && utts_in.len() >= 2 {
                    break;
                }
                let g = groups.remove(0);
                utts_in.push(g[0].utterance);
                cur.extend(g);
            }
            if utts_in.len() < 2 {
                batches.last_mut().expect("two utterances exist").extend(cur);
            } else {
                batches.push(cur);
            }
        }
        Ok(batches)
    }

    /// Assembles network input and standardized targets for `refs`.
    pub fn batch<F: Scalar>(&self, refs: &[ChunkRef], stats: &StandardizationStats, workers: &[WorkerName]) -> Result<Batch<F>> {
        if refs.is_empty() {
            return Err(invalid!("empty batch"));
        }
        let t = self.chunk_samples;
        let mut wave = Vec::with_capacity(refs.len() * t);
        let mut chunks = Vec::with_capacity(refs.len());
        for &r in refs {
            let u = &self.utterances[r.utterance];
            wave.extend(u.samples[r.offset..r.offset + t].iter().map(|&s| F::of(s as f64)));
            chunks.push(ChunkInfo { utterance: u.id.clone(), offset: r.offset, frames: t / HOP });
        }
        let mut gim_pairs = Vec::new();
        for (i, a) in refs.iter().enumerate() {
            if gim_pairs.iter().any(|&(x, _): &(usize, usize)| refs[x].utterance == a.utterance) {
                continue;
            }
            if let Some(j) = refs.iter().enumerate().skip(i + 1).position(|(_, b)| b.utterance == a.utterance && b.offset != a.offset) {
                gim_pairs.push((i, i + 1 + j));
            }
        }
        let mut targets = BTreeMap::new();
        for &w in workers {
            if let Some(kind) = w.feature_kind() {
                let mats: Vec<FeatureMatrix> = refs.iter().map(|&r| self.targets(r, kind)).collect();
                let refs: Vec<&FeatureMatrix> = mats.iter().collect();
                targets.insert(w, regression_targets(w, &refs, stats)?);
            }
        }
        Ok(Batch { wave: Tensor::new([refs.len(), 1, t], wave)?, chunks, gim_pairs, targets })
    }
}
