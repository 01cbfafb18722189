//! `m2a`: MIDI-to-audio synthesis, features, baselines and evaluation.

mod train;

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand, ValueEnum};
use m2a_core::acoustic::{self, AmConfig, AmVariant};
use m2a_core::dsp::{
    extract_features, mel_filter_bank, midi_filter_bank, FeatureKind, FeatureMatrix, StftConfig,
    HOP,
};
use m2a_core::evaluation::{
    mos_summary, pitch_cross_entropy, pitch_probability, probe_set, significance_matrix, ScoreTable,
};
use m2a_core::io::{read_features, read_wav, write_features, write_wav};
use m2a_core::midi_io::{
    frame_count, parse_midi, to_piano_roll, write_smf, NoteEventList, DEFAULT_TEMPO_US,
};
use m2a_core::nsf::{self, NsfConfig};
use m2a_core::pipeline::{
    excitation_for, griffin_lim_features, synth_abs, synth_am_nsf, synth_direct, AmModel,
    ExcitationKind, NsfModel, SynthMode,
};

/// Exit status 2: bad arguments or unusable input. Exit status 1: anything else.
#[derive(Debug)]
pub enum Failure {
    Input(anyhow::Error),
    Internal(anyhow::Error),
}

pub type CmdResult<T = ()> = Result<T, Failure>;

pub trait Classify<T> {
    fn input(self, what: impl Display) -> CmdResult<T>;
    fn internal(self, what: impl Display) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self, what: impl Display) -> CmdResult<T> {
        self.map_err(|e| Failure::Input(e.into().context(what.to_string())))
    }

    fn internal(self, what: impl Display) -> CmdResult<T> {
        self.map_err(|e| Failure::Internal(e.into().context(what.to_string())))
    }
}

pub fn usage(msg: impl Display) -> Failure {
    Failure::Input(anyhow!("{msg}"))
}

#[derive(Parser)]
#[command(
    name = "m2a",
    version,
    about = "Aligned MIDI-to-audio synthesis toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Bank {
    Mel,
    Midi,
}

#[derive(Clone, Copy, ValueEnum)]
enum Excite {
    Sine,
    Noise,
}

impl From<Excite> for ExcitationKind {
    fn from(e: Excite) -> Self {
        match e {
            Excite::Sine => ExcitationKind::Sine,
            Excite::Noise => ExcitationKind::Noise,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Abs,
    #[value(name = "am+nsf")]
    AmNsf,
    Direct,
}

impl From<Mode> for SynthMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Abs => SynthMode::Abs,
            Mode::AmNsf => SynthMode::AmNsf,
            Mode::Direct => SynthMode::Direct,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Taco2,
    Taco3,
    Taco4,
}

impl From<Variant> for AmVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Taco2 => AmVariant::Taco2,
            Variant::Taco3 => AmVariant::Taco3,
            Variant::Taco4 => AmVariant::Taco4,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// MIDI file to piano-roll feature file
    Roll {
        midi: PathBuf,
        out: PathBuf,
        /// Frame shift in seconds
        #[arg(long, default_value_t = 0.012)]
        shift: f64,
        /// Keep notes at their key-release times
        #[arg(long)]
        ignore_pedal: bool,
    },
    /// WAV file to log filter-bank feature file
    Feat {
        wav: PathBuf,
        out: PathBuf,
        #[arg(long, value_enum, default_value = "midi")]
        bank: Bank,
        #[arg(long, default_value_t = 80)]
        nmel: usize,
    },
    /// Excitation signal for a MIDI file
    Excite {
        midi: PathBuf,
        out: PathBuf,
        #[arg(long, value_enum, default_value = "sine")]
        kind: Excite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Waveform synthesis with one of the NSF topologies
    Synth {
        midi: PathBuf,
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, value_enum, default_value = "sine")]
        excite: Excite,
        #[arg(long)]
        nsf_ckpt: Option<PathBuf>,
        #[arg(long)]
        am_ckpt: Option<PathBuf>,
        /// Natural recording (WAV) or feature file for copy synthesis
        #[arg(long)]
        feat: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Griffin-Lim reconstruction from a feature file
    Gl {
        features: PathBuf,
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        iters: usize,
    },
    /// Pitch cross-entropy between audio and a MIDI file
    PitchCe {
        wav: PathBuf,
        midi: PathBuf,
        /// Weight each active cell by its velocity instead of binarizing
        #[arg(long)]
        velocity_weighted: bool,
    },
    /// Seeded synthetic note and chord probes as MIDI files
    ProbeSet {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        notes: usize,
        #[arg(long, default_value_t = 50)]
        chords: usize,
    },
    /// MOS summary and pairwise significance from listening-test scores
    Stats {
        scores: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Also write mos.csv and significance.csv here
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train a model from paired .mid/.wav files
    Train {
        #[command(subcommand)]
        model: train::TrainCommand,
    },
    /// Write a freshly initialized checkpoint
    Init {
        #[command(subcommand)]
        model: InitCommand,
    },
}

#[derive(Subcommand)]
enum InitCommand {
    Nsf {
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        feature_dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// All-zero weights: the model passes its excitation through unchanged
        #[arg(long)]
        zero: bool,
    },
    Am {
        out: PathBuf,
        #[arg(long, value_enum, default_value = "taco2")]
        variant: Variant,
        #[arg(long, default_value_t = 128)]
        output_dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

pub fn read_notes(path: &Path, pedal: bool) -> CmdResult<NoteEventList> {
    let bytes = fs::read(path).input(format!("cannot read {}", path.display()))?;
    let parsed = parse_midi(&bytes).input(format!("{}", path.display()))?;
    for w in &parsed.warnings {
        eprintln!("warning: {}: {w:?}", path.display());
    }
    Ok(if pedal {
        parsed.sustained_notes()
    } else {
        parsed.notes
    })
}

fn bank_features(
    wave: &m2a_core::dsp::WaveSignal,
    kind: FeatureKind,
    dim: usize,
) -> CmdResult<FeatureMatrix> {
    let cfg = StftConfig::canonical();
    let fb = match kind {
        FeatureKind::MelFb => mel_filter_bank(&cfg, dim).input("mel filter bank")?,
        _ => midi_filter_bank(&cfg),
    };
    extract_features(wave, &fb, &cfg).input("feature extraction")
}

/// Features for copy synthesis: read a feature file as is, or analyze a
/// WAV with the filter bank the waveform model expects.
fn natural_features(path: &Path, dim: usize) -> CmdResult<FeatureMatrix> {
    let bytes = fs::read(path).input(format!("cannot read {}", path.display()))?;
    if bytes.starts_with(b"MFB1") {
        return read_features(path).input(format!("{}", path.display()));
    }
    let wave = read_wav(path).input(format!("{}", path.display()))?;
    let kind = if dim == 128 {
        FeatureKind::MidiFb
    } else {
        FeatureKind::MelFb
    };
    bank_features(&wave, kind, dim)
}

fn load_nsf(path: Option<&PathBuf>) -> CmdResult<NsfModel> {
    let path = path.ok_or_else(|| usage("--nsf-ckpt is required for this mode"))?;
    let (params, cfg) = nsf::load_checkpoint(path, None).input(format!("{}", path.display()))?;
    Ok(NsfModel { params, cfg })
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Roll {
            midi,
            out,
            shift,
            ignore_pedal,
        } => {
            if !(shift > 0.0 && shift.is_finite()) {
                return Err(usage(format!("--shift must be positive, got {shift}")));
            }
            let notes = read_notes(&midi, !ignore_pedal)?;
            let roll = to_piano_roll(&notes, shift);
            write_features(&out, &FeatureMatrix::from_piano_roll(&roll)).input("writing roll")?;
            println!("{} frames x 128", roll.n_frames());
        }
        Command::Feat {
            wav,
            out,
            bank,
            nmel,
        } => {
            let wave = read_wav(&wav).input(format!("{}", wav.display()))?;
            let feats = match bank {
                Bank::Mel => bank_features(&wave, FeatureKind::MelFb, nmel)?,
                Bank::Midi => bank_features(&wave, FeatureKind::MidiFb, 128)?,
            };
            write_features(&out, &feats).input("writing features")?;
            println!("{} frames x {}", feats.n_frames, feats.dim);
        }
        Command::Excite {
            midi,
            out,
            kind,
            seed,
        } => {
            let notes = read_notes(&midi, true)?;
            let n = frame_count(notes.duration, 0.012);
            let wave = excitation_for(&notes, n, HOP, kind.into(), seed).input("excitation")?;
            write_wav(&out, &wave).input("writing WAV")?;
        }
        Command::Synth {
            midi,
            out,
            mode,
            excite,
            nsf_ckpt,
            am_ckpt,
            feat,
            seed,
        } => {
            let notes = read_notes(&midi, true)?;
            let roll = to_piano_roll(&notes, 0.012);
            let nsf = load_nsf(nsf_ckpt.as_ref())?;
            let wave = match SynthMode::from(mode) {
                SynthMode::Abs => {
                    let path = feat.ok_or_else(|| usage("--feat is required for abs mode"))?;
                    let feats = natural_features(&path, nsf.cfg.feature_dim)?;
                    synth_abs(&nsf, &feats, &notes, excite.into(), seed)
                }
                SynthMode::AmNsf => {
                    let path =
                        am_ckpt.ok_or_else(|| usage("--am-ckpt is required for am+nsf mode"))?;
                    let (params, cfg) = acoustic::load_checkpoint(&path, None)
                        .input(format!("{}", path.display()))?;
                    synth_am_nsf(
                        &AmModel { params, cfg },
                        &nsf,
                        &roll,
                        &notes,
                        excite.into(),
                        seed,
                    )
                }
                SynthMode::Direct => synth_direct(&nsf, &roll, &notes, excite.into(), seed),
            }
            .input("synthesis")?;
            write_wav(&out, &wave).input("writing WAV")?;
            println!("{} samples", wave.len());
        }
        Command::Gl {
            features,
            out,
            iters,
        } => {
            let feats = read_features(&features).input(format!("{}", features.display()))?;
            let (wave, history) = griffin_lim_features(&feats, &StftConfig::canonical(), iters)
                .input("griffin-lim")?;
            write_wav(&out, &wave).input("writing WAV")?;
            println!(
                "consistency error {:.6}",
                history.last().copied().unwrap_or(0.0)
            );
        }
        Command::PitchCe {
            wav,
            midi,
            velocity_weighted,
        } => {
            let wave = read_wav(&wav).input(format!("{}", wav.display()))?;
            let roll = to_piano_roll(&read_notes(&midi, true)?, 0.012);
            let p =
                pitch_probability(&wave, &StftConfig::canonical()).input("pitch probability")?;
            let ce = pitch_cross_entropy(&p, &roll, velocity_weighted).input("cross-entropy")?;
            if ce.truncated {
                eprintln!(
                    "warning: audio has {} frames, roll has {}; compared the first {}",
                    p.n_frames,
                    roll.n_frames(),
                    ce.frames
                );
            }
            println!("{:.6}", ce.ce);
        }
        Command::ProbeSet {
            out_dir,
            seed,
            notes,
            chords,
        } => {
            fs::create_dir_all(&out_dir).input(format!("cannot create {}", out_dir.display()))?;
            for probe in probe_set(seed, notes, chords) {
                let path = out_dir.join(format!("{}.mid", probe.name));
                fs::write(&path, write_smf(&probe.notes, 480, DEFAULT_TEMPO_US))
                    .input(format!("cannot write {}", path.display()))?;
            }
            println!("{} probes in {}", notes + chords, out_dir.display());
        }
        Command::Stats {
            scores,
            alpha,
            out_dir,
        } => {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(usage(format!("--alpha must lie in (0, 1), got {alpha}")));
            }
            let table = ScoreTable::read(&scores).input(format!("{}", scores.display()))?;
            let mos = mos_summary(&table).input("MOS summary")?;
            let mut mos_csv = String::from("system,mean,median,q1,q3,count\n");
            for m in &mos {
                mos_csv.push_str(&format!(
                    "{},{:.4},{},{},{},{}\n",
                    m.system, m.mean, m.median, m.q1, m.q3, m.count
                ));
            }
            let sig = significance_matrix(&table, alpha).input("significance tests")?;
            print!("{mos_csv}\n{}\n{}", sig.to_csv(), sig.text_grid());
            if let Some(dir) = out_dir {
                fs::create_dir_all(&dir).input(format!("cannot create {}", dir.display()))?;
                fs::write(dir.join("mos.csv"), mos_csv).input("writing mos.csv")?;
                fs::write(dir.join("significance.csv"), sig.to_csv())
                    .input("writing significance.csv")?;
            }
        }
        Command::Train { model } => train::run(model)?,
        Command::Init { model } => match model {
            InitCommand::Nsf {
                out,
                feature_dim,
                seed,
                zero,
            } => {
                let cfg = NsfConfig {
                    feature_dim,
                    ..NsfConfig::default()
                };
                cfg.validate().input("NSF configuration")?;
                let params = if zero {
                    nsf::zero_params(&cfg)
                } else {
                    nsf::init_params(&cfg, seed)
                };
                nsf::save_checkpoint(&params, &cfg, &out).input("writing checkpoint")?;
            }
            InitCommand::Am {
                out,
                variant,
                output_dim,
                seed,
            } => {
                let cfg = AmConfig::new(variant.into(), output_dim);
                cfg.validate().input("acoustic model configuration")?;
                acoustic::save_checkpoint(&acoustic::init_params(&cfg, seed), &cfg, &out)
                    .input("writing checkpoint")?;
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(1)
        }
    }
}
