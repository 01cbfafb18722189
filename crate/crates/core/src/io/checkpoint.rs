use super::{IoError, Reader};
use crate::nn::{ModelParams, ParamStore, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";
const ADAM_STEP: &str = "adam.step";

/// Decoded container before it is matched against a model configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointContents {
    pub config: Vec<u32>,
    pub params: ModelParams,
}

fn corrupt(detail: impl Into<String>) -> IoError {
    IoError::CorruptCheckpoint(detail.into())
}

fn push_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// `magic | version | config u32s | tensor count | tensors | CRC32`.
/// Weights come first, then Adam moments under `adam.m.*` / `adam.v.*`,
/// then the step counter as four exact 16-bit limbs under `adam.step`.
pub fn encode_checkpoint(magic: &[u8; 4], config: &[u32], params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for c in config {
        out.extend_from_slice(&c.to_le_bytes());
    }
    let count = params.tensors.len() * 3 + 1;
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for (name, t) in params.tensors.iter() {
        push_tensor(&mut out, name, &t.shape, &t.data);
    }
    for (prefix, store) in [(ADAM_M, &params.adam_m), (ADAM_V, &params.adam_v)] {
        for (name, t) in store.iter() {
            push_tensor(&mut out, &format!("{prefix}{name}"), &t.shape, &t.data);
        }
    }
    let limbs: Vec<f64> = (0..4)
        .map(|i| ((params.step >> (16 * i)) & 0xffff) as f64)
        .collect();
    push_tensor(&mut out, ADAM_STEP, &[4], &limbs);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Inverse of [`encode_checkpoint`]. Checks magic, version, CRC and that
/// every weight has matching Adam moments of the same shape.
pub fn decode_checkpoint(
    bytes: &[u8],
    magic: &[u8; 4],
    config_len: usize,
) -> Result<CheckpointContents, IoError> {
    if bytes.len() < 12 {
        return Err(corrupt(format!("file is only {} bytes", bytes.len())));
    }
    if &bytes[..4] != magic {
        return Err(corrupt(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let mut r = Reader::new(&body[4..]);
    let version = r.u32().ok_or_else(|| corrupt("truncated header"))?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let config = (0..config_len)
        .map(|_| r.u32())
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| corrupt("truncated config block"))?;
    let count = r.u32().ok_or_else(|| corrupt("truncated tensor count"))?;
    let mut tensors = ParamStore::new();
    let mut adam_m = ParamStore::new();
    let mut adam_v = ParamStore::new();
    let mut step = None;
    for idx in 0..count {
        let at = r.position() + 4;
        let truncated = || corrupt(format!("truncated in tensor {idx} at byte {at}"));
        let name_len = r.u16().ok_or_else(truncated)? as usize;
        let name = std::str::from_utf8(r.take(name_len).ok_or_else(truncated)?)
            .map_err(|_| corrupt(format!("tensor {idx} name is not UTF-8")))?
            .to_string();
        let ndim = r.u8().ok_or_else(truncated)? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(truncated)?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(truncated)?;
        if n.checked_mul(4).is_none_or(|b| b > r.remaining()) {
            return Err(truncated());
        }
        let data = (0..n).map(|_| r.f32().unwrap() as f64).collect();
        let tensor = Tensor { shape, data };
        if name == ADAM_STEP {
            if tensor.data.len() != 4 {
                return Err(corrupt("adam.step must have 4 limbs"));
            }
            step = Some(
                tensor
                    .data
                    .iter()
                    .enumerate()
                    .fold(0u64, |acc, (i, &l)| acc | ((l as u64) << (16 * i))),
            );
        } else if let Some(base) = name.strip_prefix(ADAM_M) {
            adam_m.insert(base, tensor);
        } else if let Some(base) = name.strip_prefix(ADAM_V) {
            adam_v.insert(base, tensor);
        } else {
            tensors.insert(name, tensor);
        }
    }
    if r.remaining() != 0 {
        return Err(corrupt(format!(
            "{} unexpected trailing bytes",
            r.remaining()
        )));
    }
    let computed = crc32fast::hash(body);
    if computed != stored {
        return Err(corrupt(format!(
            "CRC mismatch: stored {stored:08x}, computed {computed:08x}"
        )));
    }
    let step = step.ok_or_else(|| corrupt("missing adam.step"))?;
    for (name, t) in tensors.iter() {
        for (label, store) in [("first", &adam_m), ("second", &adam_v)] {
            match store.get(name) {
                Some(m) if m.shape == t.shape => {}
                Some(m) => {
                    return Err(corrupt(format!(
                        "{label} moment of {name} has shape {:?}, weight has {:?}",
                        m.shape, t.shape
                    )))
                }
                None => return Err(corrupt(format!("missing {label} moment for {name}"))),
            }
        }
    }
    if adam_m.len() != tensors.len() || adam_v.len() != tensors.len() {
        return Err(corrupt("optimizer state names do not match weights"));
    }
    Ok(CheckpointContents {
        config,
        params: ModelParams {
            tensors,
            step,
            adam_m,
            adam_v,
        },
    })
}

/// Fails with a per-tensor diagnostic unless `found` has exactly the names
/// and shapes of `expected`.
pub(crate) fn check_shapes(expected: &ParamStore, found: &ParamStore) -> Result<(), IoError> {
    for (name, t) in expected.iter() {
        match found.get(name) {
            None => return Err(corrupt(format!("missing tensor {name}"))),
            Some(f) if f.shape != t.shape => {
                return Err(corrupt(format!(
                    "shape mismatch for {name}: expected {:?}, found {:?}",
                    t.shape, f.shape
                )))
            }
            _ => {}
        }
    }
    if let Some(extra) = found.names().find(|n| expected.get(n).is_none()) {
        return Err(corrupt(format!("unexpected tensor {extra}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        let mut store = ParamStore::new();
        store.insert(
            "a.weight",
            Tensor {
                shape: vec![2, 3],
                data: vec![0.5, -1.0, 2.0, 0.1, 0.2, 0.3],
            },
        );
        store.insert(
            "a.bias",
            Tensor {
                shape: vec![2],
                data: vec![1.0, -1.0],
            },
        );
        let mut p = ModelParams::new(store);
        p.step = 70_000;
        p.adam_m.data_mut("a.bias")[0] = 0.25;
        p
    }

    #[test]
    fn save_load_save_is_byte_exact() {
        let bytes = encode_checkpoint(b"NSF1", &[1, 2, 3], &params());
        let back = decode_checkpoint(&bytes, b"NSF1", 3).unwrap();
        assert_eq!(back.config, vec![1, 2, 3]);
        assert_eq!(back.params.step, 70_000);
        assert_eq!(back.params.adam_m.data("a.bias")[0], 0.25);
        assert_eq!(
            encode_checkpoint(b"NSF1", &back.config, &back.params),
            bytes
        );
    }

    #[test]
    fn every_truncation_is_detected() {
        let bytes = encode_checkpoint(b"NSF1", &[7], &params());
        for cut in 0..bytes.len() {
            let err = decode_checkpoint(&bytes[..cut], b"NSF1", 1).unwrap_err();
            assert!(matches!(err, IoError::CorruptCheckpoint(_)), "cut {cut}");
        }
    }

    #[test]
    fn bad_magic_and_bit_flips() {
        let bytes = encode_checkpoint(b"NSF1", &[7], &params());
        assert!(decode_checkpoint(&bytes, b"ACM1", 1).is_err());
        let mut flipped = bytes.clone();
        let last = flipped.len() - 6;
        flipped[last] ^= 1;
        let msg = decode_checkpoint(&flipped, b"NSF1", 1)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("CRC"), "{msg}");
    }

    #[test]
    fn shape_diagnostic_names_the_tensor() {
        let expected = params().tensors;
        let mut found = expected.clone();
        found.insert("a.weight", Tensor::zeros(&[3, 3]));
        let msg = check_shapes(&expected, &found).unwrap_err().to_string();
        assert!(
            msg.contains("a.weight") && msg.contains("[2, 3]") && msg.contains("[3, 3]"),
            "{msg}"
        );
        assert!(check_shapes(&expected, &expected).is_ok());
    }
}
