//! Layout: `PASECKPT`, u32 version, u64 header length, JSON header, raw
//! little-endian f32 data (every tensor, then the Adam moments of the
//! tensors that have them, m before v), then a SHA-256 of all preceding bytes.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EpochRecord, Model, TrainConfig, Trainer};
use crate::dsp::StandardizationStats;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, ParamId, ParamStore, Scalar, Tensor};

const MAGIC: &[u8; 8] = b"PASECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    has_moments: bool,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: Vec<u8>,
    stream: u64,
    /// u128 as a decimal string; JSON numbers stop at 64 bits.
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    config: TrainConfig,
    config_hash: String,
    epoch: usize,
    global_step: u64,
    adam: AdamConfig,
    adam_step: u64,
    rng: RngState,
    stats: StandardizationStats,
    history: Vec<EpochRecord>,
    tag: Option<String>,
    tensors: Vec<TensorMeta>,
}

/// A loaded checkpoint: the full trainer state.
pub type Checkpoint = Trainer;

fn put_tensor(buf: &mut Vec<u8>, t: &Tensor<f32>) {
    for &v in t.data() {
        v.write_le(buf);
    }
}

pub fn save_checkpoint(t: &Trainer, path: &Path) -> Result<()> {
    let mut metas = Vec::new();
    let ids: Vec<ParamId> = t.store.ids().collect();
    for &id in &ids {
        metas.push(TensorMeta {
            name: t.store.name(id).to_string(),
            shape: t.store.get(id).shape().to_vec(),
            trainable: t.store.is_trainable(id),
            has_moments: t.adam.moments(id).is_some(),
        });
    }
    let header = Header {
        dtype: f32::DTYPE.to_string(),
        config: t.config.clone(),
        config_hash: t.config.hash(),
        epoch: t.epoch,
        global_step: t.global_step,
        adam: t.adam.config,
        adam_step: t.adam.step_count(),
        rng: RngState {
            seed: t.rng.get_seed().to_vec(),
            stream: t.rng.get_stream(),
            word_pos: t.rng.get_word_pos().to_string(),
        },
        stats: t.stats.clone(),
        history: t.history.clone(),
        tag: t.tag.clone(),
        tensors: metas,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::format(path, e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for &id in &ids {
        put_tensor(&mut buf, t.store.get(id));
    }
    for &id in &ids {
        if let Some((m, v)) = t.adam.moments(id) {
            put_tensor(&mut buf, m);
            put_tensor(&mut buf, v);
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    crate::io::write_atomic(path, &buf)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or_else(|| Error::format(self.path, "truncated checkpoint"))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor<f32>> {
        let n: usize = shape.iter().product();
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, "tensor too large"))?)?;
        let data = bytes.chunks_exact(4).map(f32::read_le).collect();
        Tensor::new(shape.to_vec(), data)
    }
}

/// Reads and verifies a checkpoint. Nothing is returned unless the whole
/// file checks out.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fmt = |m: &str| Error::format(path, m);
    if bytes.len() < MAGIC.len() + 12 + 32 || &bytes[..8] != MAGIC {
        return Err(fmt("not a checkpoint (bad magic)"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(fmt("checksum mismatch; file is corrupted or truncated"));
    }
    let mut r = Reader { data: body, pos: 8, path };
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let hlen = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    if header.dtype != f32::DTYPE {
        return Err(Error::format(path, format!("dtype {} is not supported", header.dtype)));
    }
    if header.config_hash != header.config.hash() {
        return Err(fmt("config hash does not match the stored config"));
    }
    header.config.validate().map_err(|e| Error::format(path, e.to_string()))?;

    let mut store = ParamStore::new();
    let mut scratch = ChaCha8Rng::seed_from_u64(0);
    let model = Model::new(&header.config.encoder, &header.config.workers, &mut store, &mut scratch)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let ids: Vec<ParamId> = store.ids().collect();
    if ids.len() != header.tensors.len() {
        return Err(Error::format(path, format!("{} tensors stored, model has {}", header.tensors.len(), ids.len())));
    }
    for (&id, meta) in ids.iter().zip(&header.tensors) {
        if store.name(id) != meta.name || store.get(id).shape() != &meta.shape[..] || store.is_trainable(id) != meta.trainable {
            return Err(Error::format(path, format!("tensor `{}` does not match the model layout", meta.name)));
        }
        let t = r.tensor(&meta.shape)?;
        store.set(id, t)?;
    }
    let mut moments = Vec::new();
    for (&id, meta) in ids.iter().zip(&header.tensors) {
        if meta.has_moments {
            let m = r.tensor(&meta.shape)?;
            let v = r.tensor(&meta.shape)?;
            moments.push((id, m, v));
        }
    }
    if r.pos != body.len() {
        return Err(fmt("trailing bytes after tensor data"));
    }
    let mut adam = Adam::new(header.adam)?;
    adam.restore(header.adam_step, moments);
    let seed: [u8; 32] = header.rng.seed.as_slice().try_into().map_err(|_| fmt("bad RNG seed"))?;
    let word_pos: u128 = header.rng.word_pos.parse().map_err(|_| fmt("bad RNG position"))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(header.rng.stream);
    rng.set_word_pos(word_pos);
    Ok(Trainer {
        config: header.config,
        model,
        store,
        adam,
        stats: header.stats,
        rng,
        epoch: header.epoch,
        global_step: header.global_step,
        history: header.history,
        tag: header.tag,
    })
}
