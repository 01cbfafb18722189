use std::path::Path;

use super::{IoError, Reader};
use crate::dsp::{WaveSignal, SAMPLE_RATE};

fn malformed(detail: impl Into<String>) -> IoError {
    IoError::Malformed {
        kind: "WAV",
        detail: detail.into(),
    }
}

/// RIFF/WAVE, PCM 16-bit little-endian, mono. Samples are clipped to
/// [-1, 1] and scaled by 32767.
pub fn encode_wav(wave: &WaveSignal) -> Vec<u8> {
    let data_len = (wave.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&wave.sample_rate.to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &wave.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a PCM16 mono 24 kHz WAV. Unknown chunks are skipped; any other
/// encoding, channel count or rate is `UnsupportedFormat`.
pub fn decode_wav(bytes: &[u8]) -> Result<WaveSignal, IoError> {
    let mut r = Reader::new(bytes);
    if r.take(4) != Some(b"RIFF") {
        return Err(malformed("missing RIFF magic"));
    }
    r.u32().ok_or_else(|| malformed("truncated header"))?;
    if r.take(4) != Some(b"WAVE") {
        return Err(malformed("missing WAVE tag"));
    }
    let mut format = None;
    while r.remaining() >= 8 {
        let id = r.take(4).unwrap();
        let len = r.u32().unwrap() as usize;
        let body = r.take(len).ok_or_else(|| {
            malformed(format!(
                "chunk {:?} runs past end of file",
                String::from_utf8_lossy(id)
            ))
        })?;
        if len % 2 == 1 {
            r.take(1);
        }
        match id {
            b"fmt " => {
                let mut f = Reader::new(body);
                let (Some(tag), Some(channels), Some(rate), Some(_), Some(_), Some(bits)) =
                    (f.u16(), f.u16(), f.u32(), f.u32(), f.u16(), f.u16())
                else {
                    return Err(malformed("fmt chunk too short"));
                };
                if tag != 1 {
                    return Err(IoError::UnsupportedFormat(format!(
                        "format tag {tag}, expected PCM (1)"
                    )));
                }
                if channels != 1 {
                    return Err(IoError::UnsupportedFormat(format!(
                        "{channels} channels, expected mono"
                    )));
                }
                if bits != 16 {
                    return Err(IoError::UnsupportedFormat(format!(
                        "{bits}-bit samples, expected 16"
                    )));
                }
                if rate != SAMPLE_RATE {
                    return Err(IoError::UnsupportedFormat(format!(
                        "{rate} Hz, expected {SAMPLE_RATE} Hz (resampling is not supported)"
                    )));
                }
                format = Some(rate);
            }
            b"data" => {
                let rate = format.ok_or_else(|| malformed("data chunk before fmt chunk"))?;
                let samples = body
                    .chunks_exact(2)
                    .map(|b| (i16::from_le_bytes([b[0], b[1]]) as f64 / 32767.0).max(-1.0))
                    .collect();
                return Ok(WaveSignal::new(samples, rate));
            }
            _ => {}
        }
    }
    Err(malformed("no data chunk"))
}

pub fn read_wav(path: &Path) -> Result<WaveSignal, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    decode_wav(&bytes)
}

pub fn write_wav(path: &Path, wave: &WaveSignal) -> Result<(), IoError> {
    std::fs::write(path, encode_wav(wave)).map_err(|e| IoError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_quantizes_to_16_bits() {
        let wave = WaveSignal::new(vec![0.0, 0.5, -0.5, 1.0, -1.0, 2.0], 24_000);
        let bytes = encode_wav(&wave);
        assert_eq!(bytes.len(), 44 + 12);
        let back = decode_wav(&bytes).unwrap();
        assert_eq!(back.len(), 6);
        for (a, b) in wave.samples.iter().zip(&back.samples) {
            assert!((a.clamp(-1.0, 1.0) - b).abs() <= 0.5 / 32767.0 + 1e-12);
        }
        assert_eq!(encode_wav(&back), bytes);
    }

    #[test]
    fn rejects_stereo_and_other_rates() {
        let mut bytes = encode_wav(&WaveSignal::silence(4, 24_000));
        bytes[22] = 2;
        assert!(matches!(
            decode_wav(&bytes),
            Err(IoError::UnsupportedFormat(_))
        ));
        let bytes = encode_wav(&WaveSignal::silence(4, 44_100));
        assert!(matches!(
            decode_wav(&bytes),
            Err(IoError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn skips_unknown_chunks() {
        let plain = encode_wav(&WaveSignal::new(vec![0.25; 3], 24_000));
        let mut bytes = plain[..36].to_vec();
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 0]);
        bytes.extend_from_slice(&plain[36..]);
        assert_eq!(decode_wav(&bytes).unwrap(), decode_wav(&plain).unwrap());
    }

    #[test]
    fn truncated_input() {
        let bytes = encode_wav(&WaveSignal::silence(10, 24_000));
        assert!(matches!(
            decode_wav(&bytes[..30]),
            Err(IoError::Malformed { .. })
        ));
        assert!(decode_wav(b"RIFX").is_err());
    }
}
