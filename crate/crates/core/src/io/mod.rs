//! On-disk formats: PCM16 WAV, "MFB1" feature files and the tensor
//! checkpoint container shared by the waveform and acoustic models.

mod checkpoint;
mod feature_file;
mod wav;

use thiserror::Error;

pub(crate) use checkpoint::check_shapes;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, CheckpointContents, CHECKPOINT_VERSION,
};
pub use feature_file::{
    decode_features, encode_features, read_features, write_features, FEATURE_VERSION,
};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed {kind} data: {detail}")]
    Malformed { kind: &'static str, detail: String },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
}

impl IoError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Little-endian cursor over a byte slice.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    pub(crate) fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    pub(crate) fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Option<f32> {
        self.u32().map(f32::from_bits)
    }

    pub(crate) fn f64(&mut self) -> Option<f64> {
        self.take(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
}
