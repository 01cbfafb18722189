//! Source signals for the neural filter: a polyphonic sine mixture rendered
//! from notes, and seeded Gaussian noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::dsp::{midi_center_freq, WaveSignal};
use crate::midi_io::NoteEventList;

/// Linear fade applied at both ends of every note.
pub const FADE_SECONDS: f64 = 0.005;
/// Peak the sine mix is scaled down to when it would clip.
pub const SINE_NORMALIZED_PEAK: f64 = 0.89;
pub const DEFAULT_NOISE_STD: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExcitationError {
    #[error("note {pitch} ({freq:.1} Hz) is at or above Nyquist for {sample_rate} Hz")]
    NyquistViolation {
        pitch: u8,
        freq: f64,
        sample_rate: u32,
    },
    #[error("sample rate must be positive")]
    InvalidSampleRate,
    #[error("noise std must be finite and nonnegative, got {0}")]
    InvalidStd(f64),
}

/// Sum of one constant-amplitude sinusoid per note, each starting at zero
/// phase at its onset and weighted by `velocity / 127`, with 5 ms linear
/// fades. The mix is multiplied by `gain` and rescaled to a 0.89 peak only
/// if it exceeds 1. Output length is `ceil(duration · sample_rate)`.
pub fn sine_excitation(
    notes: &NoteEventList,
    sample_rate: u32,
    gain: f64,
) -> Result<WaveSignal, ExcitationError> {
    if sample_rate == 0 {
        return Err(ExcitationError::InvalidSampleRate);
    }
    let fs = sample_rate as f64;
    let len = (notes.duration * fs - 1e-9).ceil().max(0.0) as usize;
    let mut out = vec![0.0; len];
    for note in &notes.notes {
        let freq = midi_center_freq(note.pitch).expect("NoteEvent pitch is always < 128");
        if freq >= fs / 2.0 {
            return Err(ExcitationError::NyquistViolation {
                pitch: note.pitch,
                freq,
                sample_rate,
            });
        }
        let amp = note.velocity as f64 / 127.0;
        let first = (note.onset * fs - 1e-9).ceil().max(0.0) as usize;
        let stop = ((note.offset * fs - 1e-9).ceil().max(0.0) as usize).min(len);
        let omega = std::f64::consts::TAU * freq;
        for (i, slot) in out.iter_mut().enumerate().take(stop).skip(first) {
            let t = i as f64 / fs;
            let fade = ((t - note.onset) / FADE_SECONDS)
                .min((note.offset - t) / FADE_SECONDS)
                .clamp(0.0, 1.0);
            *slot += amp * fade * (omega * (t - note.onset)).sin();
        }
    }
    out.iter_mut().for_each(|s| *s *= gain);
    Ok(WaveSignal::new(out, sample_rate).normalize_if_clipping(SINE_NORMALIZED_PEAK))
}

/// I.i.d. Gaussian samples with standard deviation `std`, clipped to
/// [-1, 1]. The generator is ChaCha8 seeded with `seed` feeding
/// `rand_distr::Normal`, so a seed always yields the same signal.
pub fn noise_excitation(
    length: usize,
    seed: u64,
    std: f64,
    sample_rate: u32,
) -> Result<WaveSignal, ExcitationError> {
    if !(std.is_finite() && std >= 0.0) {
        return Err(ExcitationError::InvalidStd(std));
    }
    let normal = Normal::new(0.0, std).map_err(|_| ExcitationError::InvalidStd(std))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..length)
        .map(|_| normal.sample(&mut rng).clamp(-1.0, 1.0))
        .collect();
    Ok(WaveSignal::new(samples, sample_rate))
}
