//! Spectral analysis and synthesis: STFT/ISTFT, Mel and MIDI filter banks,
//! log filter-bank features, Griffin-Lim and the multi-resolution STFT loss.

mod filterbank;
mod griffin_lim;
mod loss;
mod stft;

use thiserror::Error;

pub use filterbank::{
    hz_to_mel, mel_filter_bank, mel_to_hz, midi_center_freq, midi_filter_bank, FilterBank,
    FilterBankKind,
};
pub use griffin_lim::{consistency_error, griffin_lim, griffin_lim_with_history};
pub use loss::{mr_stft_loss, LossConfig, LossValue};
pub use stft::{istft, stft, Spectrogram, StftPlan};

/// Canonical sample rate of the pipeline.
pub const SAMPLE_RATE: u32 = 24_000;
/// Canonical hop in samples (12 ms at 24 kHz); the upsampling factor L.
pub const HOP: usize = 288;
/// Canonical analysis window (50 ms at 24 kHz).
pub const FRAME_LENGTH: usize = 1200;
pub const FFT_SIZE: usize = 2048;
/// Floor applied before log compression.
pub const LOG_FLOOR: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("sample rate mismatch: expected {expected} Hz, got {found} Hz")]
    SampleRateMismatch { expected: u32, found: u32 },
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic window of `len` samples.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..len)
                .map(|j| 0.5 - 0.5 * (std::f64::consts::TAU * j as f64 / len as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub frame_length: usize,
    pub frame_shift: usize,
    pub fft_size: usize,
    pub window: Window,
}

impl StftConfig {
    /// 24 kHz, 50 ms frames, 12 ms shift, 2048-point FFT, Hann window.
    pub fn canonical() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            frame_length: FRAME_LENGTH,
            frame_shift: HOP,
            fft_size: FFT_SIZE,
            window: Window::Hann,
        }
    }

    /// Window equal to the FFT size, as used by the loss resolutions.
    pub fn square(sample_rate: u32, fft_size: usize, frame_shift: usize) -> Self {
        Self {
            sample_rate,
            frame_length: fft_size,
            frame_shift,
            fft_size,
            window: Window::Hann,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frequency of DFT bin `i` in Hz.
    pub fn bin_freq(&self, i: usize) -> f64 {
        i as f64 * self.sample_rate as f64 / self.fft_size as f64
    }

    /// Frame count for a signal of `len` samples: `ceil(len / frame_shift)`.
    pub fn n_frames(&self, len: usize) -> usize {
        len.div_ceil(self.frame_shift)
    }

    pub fn frame_shift_seconds(&self) -> f64 {
        self.frame_shift as f64 / self.sample_rate as f64
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if self.sample_rate == 0 || self.frame_length == 0 || self.frame_shift == 0 {
            return Err(DspError::InvalidConfig("all sizes must be positive".into()));
        }
        if self.fft_size < self.frame_length {
            return Err(DspError::InvalidConfig(format!(
                "fft_size {} < frame_length {}",
                self.fft_size, self.frame_length
            )));
        }
        if self.frame_shift > self.frame_length {
            return Err(DspError::InvalidConfig(format!(
                "frame_shift {} > frame_length {}",
                self.frame_shift, self.frame_length
            )));
        }
        Ok(())
    }
}

impl Default for StftConfig {
    fn default() -> Self {
        Self::canonical()
    }
}

/// Mono waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl WaveSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Truncates or zero-pads to exactly `len` samples.
    pub fn fit_to(mut self, len: usize) -> Self {
        self.samples.resize(len, 0.0);
        self
    }

    /// Rescales to `target` peak if the current peak exceeds 1.
    pub fn normalize_if_clipping(mut self, target: f64) -> Self {
        let peak = self.peak();
        if peak > 1.0 {
            let g = target / peak;
            self.samples.iter_mut().for_each(|s| *s *= g);
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    MelFb,
    MidiFb,
    LinearSpec,
    PianoRoll,
}

impl FeatureKind {
    pub fn code(self) -> u32 {
        match self {
            FeatureKind::MelFb => 0,
            FeatureKind::MidiFb => 1,
            FeatureKind::LinearSpec => 2,
            FeatureKind::PianoRoll => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            0 => FeatureKind::MelFb,
            1 => FeatureKind::MidiFb,
            2 => FeatureKind::LinearSpec,
            3 => FeatureKind::PianoRoll,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::MelFb => "mel-fb",
            FeatureKind::MidiFb => "midi-fb",
            FeatureKind::LinearSpec => "linear-spec",
            FeatureKind::PianoRoll => "piano-roll",
        }
    }
}

/// Frame-level features, `n_frames × dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Vec<f64>,
    pub n_frames: usize,
    pub dim: usize,
    pub kind: FeatureKind,
    /// Seconds between frames.
    pub frame_shift: f64,
    pub sample_rate: f64,
}

impl FeatureMatrix {
    pub fn new(
        values: Vec<f64>,
        dim: usize,
        kind: FeatureKind,
        frame_shift: f64,
        sample_rate: f64,
    ) -> Self {
        assert!(
            dim > 0 && values.len().is_multiple_of(dim),
            "ragged feature matrix"
        );
        Self {
            n_frames: values.len() / dim,
            values,
            dim,
            kind,
            frame_shift,
            sample_rate,
        }
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.dim..(n + 1) * self.dim]
    }

    pub fn get(&self, n: usize, d: usize) -> f64 {
        self.values[n * self.dim + d]
    }

    /// Piano roll viewed as a 128-dimensional feature sequence.
    pub fn from_piano_roll(roll: &crate::midi_io::PianoRoll) -> Self {
        Self::new(
            roll.values().to_vec(),
            crate::midi_io::NUM_NOTES,
            FeatureKind::PianoRoll,
            roll.frame_shift,
            roll.sample_rate_hint,
        )
    }

    /// First `n` frames.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.n_frames);
        Self::new(
            self.values[..n * self.dim].to_vec(),
            self.dim,
            self.kind,
            self.frame_shift,
            self.sample_rate,
        )
    }
}

/// Log-compressed filter-bank features: `log10(max(fb · |STFT|, 1e-5))`.
pub fn extract_features(
    wave: &WaveSignal,
    fb: &FilterBank,
    cfg: &StftConfig,
) -> Result<FeatureMatrix, DspError> {
    if fb.n_bins != cfg.n_bins() {
        return Err(DspError::InvalidConfig(format!(
            "filter bank has {} bins, STFT has {}",
            fb.n_bins,
            cfg.n_bins()
        )));
    }
    let spec = stft(wave, cfg)?;
    let mags = spec.magnitudes();
    let mut values = Vec::with_capacity(spec.n_frames * fb.n_filters);
    for n in 0..spec.n_frames {
        let frame = &mags[n * spec.n_bins..(n + 1) * spec.n_bins];
        values.extend(
            fb.apply(frame)
                .into_iter()
                .map(|e| e.max(LOG_FLOOR).log10()),
        );
    }
    let kind = match fb.kind {
        FilterBankKind::Mel => FeatureKind::MelFb,
        FilterBankKind::Midi => FeatureKind::MidiFb,
    };
    Ok(FeatureMatrix {
        values,
        n_frames: spec.n_frames,
        dim: fb.n_filters,
        kind,
        frame_shift: cfg.frame_shift_seconds(),
        sample_rate: cfg.sample_rate as f64,
    })
}

/// Log-magnitude spectrogram features, one dimension per DFT bin.
pub fn linear_spectrogram_features(
    wave: &WaveSignal,
    cfg: &StftConfig,
) -> Result<FeatureMatrix, DspError> {
    let spec = stft(wave, cfg)?;
    let values = spec
        .magnitudes()
        .into_iter()
        .map(|m| m.max(LOG_FLOOR).log10())
        .collect();
    Ok(FeatureMatrix {
        values,
        n_frames: spec.n_frames,
        dim: spec.n_bins,
        kind: FeatureKind::LinearSpec,
        frame_shift: cfg.frame_shift_seconds(),
        sample_rate: cfg.sample_rate as f64,
    })
}
