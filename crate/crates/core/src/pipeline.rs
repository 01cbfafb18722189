//! Synthesis topologies: copy synthesis from natural features, acoustic
//! model followed by NSF, and NSF conditioned directly on the piano roll.
//! Each runs with a sine or noise excitation and returns `N·L` samples.
//! The Griffin-Lim baseline inverts filter-bank features instead.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::acoustic::{am_generate, AmConfig, AmError};
use crate::dsp::{
    griffin_lim_with_history, mel_filter_bank, midi_filter_bank, DspError, FeatureKind,
    FeatureMatrix, StftConfig, WaveSignal, SAMPLE_RATE,
};
use crate::excitation::{noise_excitation, sine_excitation, ExcitationError, DEFAULT_NOISE_STD};
use crate::midi_io::{NoteEventList, PianoRoll};
use crate::nn::ModelParams;
use crate::nsf::{nsf_forward, NsfConfig, NsfError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Nsf(#[from] NsfError),
    #[error(transparent)]
    Am(#[from] AmError),
    #[error(transparent)]
    Excitation(#[from] ExcitationError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("features of kind {0} cannot be inverted to a spectrogram")]
    UnsupportedFeatureKind(&'static str),
    #[error("{kind} features have {found} dimensions, expected {expected}")]
    DimensionMismatch {
        kind: &'static str,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthMode {
    Abs,
    AmNsf,
    Direct,
}

impl SynthMode {
    pub fn name(self) -> &'static str {
        match self {
            SynthMode::Abs => "abs",
            SynthMode::AmNsf => "am+nsf",
            SynthMode::Direct => "direct",
        }
    }
}

impl fmt::Display for SynthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "abs" => Ok(SynthMode::Abs),
            "am+nsf" => Ok(SynthMode::AmNsf),
            "direct" => Ok(SynthMode::Direct),
            _ => Err(format!(
                "unknown mode {s:?} (expected abs, am+nsf or direct)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExcitationKind {
    Sine,
    Noise,
}

impl FromStr for ExcitationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sine" => Ok(ExcitationKind::Sine),
            "noise" => Ok(ExcitationKind::Noise),
            _ => Err(format!("unknown excitation {s:?} (expected sine or noise)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NsfModel {
    pub params: ModelParams,
    pub cfg: NsfConfig,
}

#[derive(Debug, Clone)]
pub struct AmModel {
    pub params: ModelParams,
    pub cfg: AmConfig,
}

/// Excitation for `n_frames` frames of `hop` samples: the sine mix of
/// `notes` padded or cut to `n_frames·hop`, or seeded Gaussian noise of
/// that length.
pub fn excitation_for(
    notes: &NoteEventList,
    n_frames: usize,
    hop: usize,
    kind: ExcitationKind,
    seed: u64,
) -> Result<WaveSignal, ExcitationError> {
    let len = n_frames * hop;
    match kind {
        ExcitationKind::Sine => Ok(sine_excitation(notes, SAMPLE_RATE, 1.0)?.fit_to(len)),
        ExcitationKind::Noise => noise_excitation(len, seed, DEFAULT_NOISE_STD, SAMPLE_RATE),
    }
}

/// Copy synthesis from natural features.
pub fn synth_abs(
    nsf: &NsfModel,
    features: &FeatureMatrix,
    notes: &NoteEventList,
    kind: ExcitationKind,
    seed: u64,
) -> Result<WaveSignal, PipelineError> {
    let exc = excitation_for(
        notes,
        features.n_frames,
        nsf.cfg.upsample_factor,
        kind,
        seed,
    )?;
    Ok(nsf_forward(&nsf.params, features, &exc, &nsf.cfg)?)
}

/// Predicted features from the acoustic model (no prenet dropout), then NSF.
pub fn synth_am_nsf(
    am: &AmModel,
    nsf: &NsfModel,
    roll: &PianoRoll,
    notes: &NoteEventList,
    kind: ExcitationKind,
    seed: u64,
) -> Result<WaveSignal, PipelineError> {
    let features = am_generate(&am.params, roll, &am.cfg, seed, false)?;
    synth_abs(nsf, &features, notes, kind, seed)
}

/// NSF conditioned on the piano roll itself.
pub fn synth_direct(
    nsf: &NsfModel,
    roll: &PianoRoll,
    notes: &NoteEventList,
    kind: ExcitationKind,
    seed: u64,
) -> Result<WaveSignal, PipelineError> {
    synth_abs(
        nsf,
        &FeatureMatrix::from_piano_roll(roll),
        notes,
        kind,
        seed,
    )
}

/// Magnitude spectrogram (`n_frames × n_bins`) from log-compressed
/// features: undo the log, then map filter energies back to bins through the
/// bank's pseudo-inverse, clipping negatives to zero.
pub fn features_to_magnitude(
    features: &FeatureMatrix,
    cfg: &StftConfig,
) -> Result<Vec<f64>, PipelineError> {
    let n_bins = cfg.n_bins();
    let expect_dim = |expected: usize| {
        if features.dim == expected {
            Ok(())
        } else {
            Err(PipelineError::DimensionMismatch {
                kind: features.kind.name(),
                expected,
                found: features.dim,
            })
        }
    };
    let linear = features.values.iter().map(|v| 10f64.powf(*v));
    let bank = match features.kind {
        FeatureKind::PianoRoll => {
            return Err(PipelineError::UnsupportedFeatureKind(features.kind.name()))
        }
        FeatureKind::LinearSpec => {
            expect_dim(n_bins)?;
            return Ok(linear.collect());
        }
        FeatureKind::MidiFb => {
            expect_dim(crate::midi_io::NUM_NOTES)?;
            midi_filter_bank(cfg)
        }
        FeatureKind::MelFb => mel_filter_bank(cfg, features.dim)?,
    };
    let pinv = bank.pseudo_inverse();
    let energies: Vec<f64> = linear.collect();
    let d = features.dim;
    let mut mag = Vec::with_capacity(features.n_frames * n_bins);
    for frame in energies.chunks(d) {
        for row in pinv.chunks(d) {
            let v: f64 = row.iter().zip(frame).map(|(w, e)| w * e).sum();
            mag.push(v.max(0.0));
        }
    }
    Ok(mag)
}

/// Griffin-Lim reconstruction from features, with the consistency error
/// after each iteration.
pub fn griffin_lim_features(
    features: &FeatureMatrix,
    cfg: &StftConfig,
    iters: usize,
) -> Result<(WaveSignal, Vec<f64>), PipelineError> {
    let mag = features_to_magnitude(features, cfg)?;
    Ok(griffin_lim_with_history(&mag, cfg, iters)?)
}
