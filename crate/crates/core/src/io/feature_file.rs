use std::path::Path;

use super::{IoError, Reader};
use crate::dsp::{FeatureKind, FeatureMatrix};

pub const FEATURE_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"MFB1";

fn malformed(detail: impl Into<String>) -> IoError {
    IoError::Malformed {
        kind: "feature file",
        detail: detail.into(),
    }
}

/// `MFB1 | version | N | D | kind | frame_shift f64 | sample_rate f64 |
/// N·D f32`, all little-endian.
pub fn encode_features(features: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(40 + features.values.len() * 4);
    out.extend_from_slice(MAGIC);
    for v in [
        FEATURE_VERSION,
        features.n_frames as u32,
        features.dim as u32,
        features.kind.code(),
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&features.frame_shift.to_le_bytes());
    out.extend_from_slice(&features.sample_rate.to_le_bytes());
    for &v in &features.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix, IoError> {
    let mut r = Reader::new(bytes);
    if r.take(4) != Some(MAGIC) {
        return Err(malformed("bad magic"));
    }
    let header = (r.u32(), r.u32(), r.u32(), r.u32(), r.f64(), r.f64());
    let (Some(version), Some(n), Some(d), Some(kind), Some(frame_shift), Some(sample_rate)) =
        header
    else {
        return Err(malformed("truncated header"));
    };
    if version != FEATURE_VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    let kind =
        FeatureKind::from_code(kind).ok_or_else(|| malformed(format!("unknown kind {kind}")))?;
    if d == 0 {
        return Err(malformed("zero feature dimension"));
    }
    let count = n as usize * d as usize;
    if r.remaining() != count * 4 {
        return Err(malformed(format!(
            "expected {} data bytes for {n}x{d}, found {}",
            count * 4,
            r.remaining()
        )));
    }
    let values = (0..count).map(|_| r.f32().unwrap() as f64).collect();
    Ok(FeatureMatrix::new(
        values,
        d as usize,
        kind,
        frame_shift,
        sample_rate,
    ))
}

pub fn write_features(path: &Path, features: &FeatureMatrix) -> Result<(), IoError> {
    std::fs::write(path, encode_features(features)).map_err(|e| IoError::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    decode_features(&bytes)
}
