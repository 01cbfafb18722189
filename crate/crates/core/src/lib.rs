//! Aligned MIDI-to-audio synthesis at desk scale.
//!
//! The pipeline turns a Standard MIDI File into a frame-level piano roll,
//! optionally predicts MIDI filter-bank features from it with a small
//! autoregressive acoustic model, and renders a waveform with a neural
//! source-filter model driven by a sine or noise excitation. Waveform length
//! is always `frames × 288` samples at 24 kHz.

pub mod acoustic;
pub mod dsp;
pub mod evaluation;
pub mod excitation;
pub mod gradcheck;
pub mod io;
pub mod midi_io;
pub mod nn;
pub mod nsf;
pub mod pipeline;
