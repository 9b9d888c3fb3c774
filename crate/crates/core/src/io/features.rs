//! Feature file: `PASE`, then u32 version, N, D and frame stride in ms, then
//! N x D little-endian f32 values, row-major.

use std::path::Path;

use crate::dsp::{FeatureKind, FeatureMatrix, HOP, LPS_BINS, MFCC_COEFFS, PROSODY_DIMS, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"PASE";
pub const FEATURE_VERSION: u32 = 1;
const HEADER: usize = 20;

/// Values are stored as f32, so matrices computed in f32 round-trip exactly.
pub fn write_features(path: &Path, m: &FeatureMatrix) -> Result<()> {
    if m.frames == 0 || m.dims == 0 {
        return Err(Error::format(path, format!("refusing to write an empty {}x{} feature matrix", m.frames, m.dims)));
    }
    let stride_ms = (m.frame_stride * 1000.0).round() as u32;
    let mut buf = Vec::with_capacity(HEADER + 4 * m.data.len());
    buf.extend_from_slice(FEATURE_MAGIC);
    for v in [FEATURE_VERSION, m.frames as u32, m.dims as u32, stride_ms] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &v in &m.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    super::write_atomic(path, &buf)
}

/// The kind is not stored; it is inferred from D (any other width is an
/// embedding).
pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::format(path, "not a PASE feature file (bad magic)"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (version, n, d, stride_ms) = (word(0), word(1) as usize, word(2) as usize, word(3));
    if version != FEATURE_VERSION {
        return Err(Error::format(path, format!("feature file version {version}, expected {FEATURE_VERSION}")));
    }
    if n == 0 || d == 0 {
        return Err(Error::format(path, "empty feature matrix"));
    }
    let expected = n.checked_mul(d).and_then(|x| x.checked_mul(4)).and_then(|x| x.checked_add(HEADER));
    if expected != Some(bytes.len()) {
        return Err(Error::format(path, format!("{n}x{d} header does not match {} data bytes", bytes.len() - HEADER)));
    }
    let data = bytes[HEADER..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    let kind = match d {
        LPS_BINS => FeatureKind::Lps,
        MFCC_COEFFS => FeatureKind::Mfcc,
        PROSODY_DIMS => FeatureKind::Prosody,
        _ => FeatureKind::Embedding,
    };
    let mut m = FeatureMatrix::new(kind, n, d, data).map_err(|e| Error::format(path, e.to_string()))?;
    m.frame_stride = stride_ms as f64 / 1000.0;
    if stride_ms as usize * SAMPLE_RATE as usize != HOP * 1000 {
        return Err(Error::format(path, format!("frame stride {stride_ms} ms, expected 10 ms")));
    }
    Ok(m)
}
