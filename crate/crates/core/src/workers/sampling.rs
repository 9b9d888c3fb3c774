//! Anchor/positive/negative selection for LIM, GIM and SPC. Samplers only
//! pick frame ranges; [`gather`] turns plans into tape nodes and
//! [`materialize`] into plain vectors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::WorkerName;
use crate::dsp::FeatureMatrix;
use crate::error::{invalid, Result};
use crate::nn::{Graph, Scalar, Var};

/// Identity of one encoded chunk in a batch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkInfo {
    pub utterance: String,
    /// First sample of the chunk within its utterance.
    pub offset: usize,
    pub frames: usize,
}

/// Frames `start .. start + len` of batch chunk `chunk`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub chunk: usize,
    pub utterance: String,
    pub offset: usize,
    pub start: usize,
    pub len: usize,
}

impl Segment {
    fn new(chunk: usize, info: &ChunkInfo, start: usize, len: usize) -> Self {
        Segment { chunk, utterance: info.utterance.clone(), offset: info.offset, start, len }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriplePlan {
    pub worker: WorkerName,
    pub anchor: Segment,
    pub positive: Segment,
    pub negative: Segment,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveTriple {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub provenance: TriplePlan,
}

/// SPC offsets in frames: the nearest sampled frame is `min_offset` away
/// from the anchor, the farthest `max_offset + span - 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpcWindow {
    pub min_offset: usize,
    pub max_offset: usize,
    pub span: usize,
}

impl Default for SpcWindow {
    fn default() -> Self {
        SpcWindow { min_offset: 15, max_offset: 46, span: 5 }
    }
}

impl SpcWindow {
    pub fn reach(&self) -> usize {
        self.max_offset + self.span - 1
    }

    /// Anchors that leave room for the minimum offset on both sides.
    pub fn anchors(&self, frames: usize) -> Option<(usize, usize)> {
        let lo = self.min_offset + self.span - 1;
        let hi = frames.checked_sub(self.min_offset + self.span)?;
        (lo <= hi).then_some((lo, hi))
    }
}

fn other_utterance(chunks: &[ChunkInfo], pool: &[usize], utt: &str, rng: &mut impl Rng) -> Option<usize> {
    let others: Vec<usize> = pool.iter().copied().filter(|&c| chunks[c].utterance != utt).collect();
    (!others.is_empty()).then(|| others[rng.gen_range(0..others.len())])
}

/// One triple per chunk in `pool`: positive is another frame of the same
/// chunk, negative a frame of a chunk from a different utterance.
pub fn sample_lim(chunks: &[ChunkInfo], pool: &[usize], rng: &mut impl Rng) -> Result<Vec<TriplePlan>> {
    let first = pool.first().ok_or_else(|| invalid!("LIM needs a non-empty batch"))?;
    if pool.iter().all(|&c| chunks[c].utterance == chunks[*first].utterance) {
        return Err(invalid!("LIM needs at least two distinct utterances in the batch"));
    }
    pool.iter()
        .map(|&c| {
            let info = &chunks[c];
            if info.frames < 2 {
                return Err(invalid!("LIM needs two frames per chunk, `{}` has {}", info.utterance, info.frames));
            }
            let a = rng.gen_range(0..info.frames);
            let mut p = rng.gen_range(0..info.frames - 1);
            if p >= a {
                p += 1;
            }
            let nc = other_utterance(chunks, pool, &info.utterance, rng).expect("two utterances checked above");
            let nf = rng.gen_range(0..chunks[nc].frames);
            Ok(TriplePlan {
                worker: WorkerName::Lim,
                anchor: Segment::new(c, info, a, 1),
                positive: Segment::new(c, info, p, 1),
                negative: Segment::new(nc, &chunks[nc], nf, 1),
            })
        })
        .collect()
}

/// One triple per `(a, b)` pair of chunks cut from the same utterance. Every
/// segment spans its whole chunk and is averaged over frames downstream.
pub fn sample_gim(chunks: &[ChunkInfo], pairs: &[(usize, usize)], pool: &[usize], rng: &mut impl Rng) -> Result<Vec<TriplePlan>> {
    if pairs.is_empty() {
        return Err(invalid!("GIM needs at least one utterance long enough for two chunks"));
    }
    pairs
        .iter()
        .map(|&(a, b)| {
            let (ia, ib) = (&chunks[a], &chunks[b]);
            if ia.utterance != ib.utterance || ia.offset == ib.offset {
                return Err(invalid!("GIM pair ({a}, {b}) must be two different chunks of one utterance"));
            }
            let n = other_utterance(chunks, pool, &ia.utterance, rng)
                .ok_or_else(|| invalid!("GIM needs a chunk from a different utterance than `{}`", ia.utterance))?;
            Ok(TriplePlan {
                worker: WorkerName::Gim,
                anchor: Segment::new(a, ia, 0, ia.frames),
                positive: Segment::new(b, ib, 0, ib.frames),
                negative: Segment::new(n, &chunks[n], 0, chunks[n].frames),
            })
        })
        .collect()
}

/// One triple per chunk in `pool` long enough for `window`: positive frames
/// lie in the future of the anchor, negative frames in its past. Offsets are
/// uniform over what the chunk can hold, capped at `window.max_offset`.
pub fn sample_spc(chunks: &[ChunkInfo], pool: &[usize], window: SpcWindow, rng: &mut impl Rng) -> Result<Vec<TriplePlan>> {
    if window.span == 0 || window.min_offset == 0 || window.min_offset > window.max_offset {
        return Err(invalid!("bad SPC window {:?}", window));
    }
    let mut out = Vec::with_capacity(pool.len());
    for &c in pool {
        let info = &chunks[c];
        let Some((lo, hi)) = window.anchors(info.frames) else { continue };
        let t = rng.gen_range(lo..=hi);
        let room_after = info.frames - window.span - t;
        let room_before = t + 1 - window.span;
        let dp = rng.gen_range(window.min_offset..=window.max_offset.min(room_after));
        let dn = rng.gen_range(window.min_offset..=window.max_offset.min(room_before));
        out.push(TriplePlan {
            worker: WorkerName::Spc,
            anchor: Segment::new(c, info, t, 1),
            positive: Segment::new(c, info, t + dp, window.span),
            negative: Segment::new(c, info, t - dn - (window.span - 1), window.span),
        });
    }
    if out.is_empty() {
        return Err(invalid!("no chunk is long enough for SPC (needs {} frames)", 2 * (window.min_offset + window.span) - 1));
    }
    Ok(out)
}

/// Frame mean of a segment.
pub fn gim_vectors(frames: &FeatureMatrix, seg: &Segment) -> Vec<f64> {
    let mut acc = vec![0.0; frames.dims];
    for t in seg.start..seg.start + seg.len {
        for (a, v) in acc.iter_mut().zip(frames.row(t)) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / seg.len as f64).collect()
}

fn flatten(frames: &FeatureMatrix, seg: &Segment) -> Vec<f64> {
    (seg.start..seg.start + seg.len).flat_map(|t| frames.row(t).to_vec()).collect()
}

/// Looks up the vectors a plan refers to in per-chunk frame matrices.
pub fn materialize(plan: &TriplePlan, chunks: &[FeatureMatrix]) -> ContrastiveTriple {
    let pick = |seg: &Segment| {
        let m = &chunks[seg.chunk];
        if plan.worker == WorkerName::Gim {
            gim_vectors(m, seg)
        } else {
            flatten(m, seg)
        }
    };
    ContrastiveTriple {
        anchor: pick(&plan.anchor),
        positive: pick(&plan.positive),
        negative: pick(&plan.negative),
        provenance: plan.clone(),
    }
}

/// Tape nodes for the anchors, positives and negatives of `plans`.
/// `rows` holds every frame of the batch (`chunks * frames x d`, chunk-major);
/// `means` the per-chunk frame means (`chunks x d`), used for GIM.
pub fn gather<F: Scalar>(g: &mut Graph<F>, rows: Var, means: Var, frames: usize, plans: &[TriplePlan]) -> Result<(Var, Var, Var)> {
    let first = plans.first().ok_or_else(|| invalid!("no triples to gather"))?;
    let global = first.worker == WorkerName::Gim;
    let mut pick = |sel: fn(&TriplePlan) -> &Segment| -> Result<Var> {
        let span = sel(first).len;
        let mut starts = Vec::with_capacity(plans.len());
        for p in plans {
            let s = sel(p);
            if s.len != span || (!global && s.start + s.len > frames) {
                return Err(invalid!("inconsistent segment {:?}", s));
            }
            starts.push(if global { s.chunk } else { s.chunk * frames + s.start });
        }
        if global {
            g.gather_windows(means, &starts, 1)
        } else {
            g.gather_windows(rows, &starts, span)
        }
    };
    Ok((pick(|p| &p.anchor)?, pick(|p| &p.positive)?, pick(|p| &p.negative)?))
}
