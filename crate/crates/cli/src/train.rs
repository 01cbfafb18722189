//! `m2a train`: JSON-configured training on a directory of `.mid`/`.wav` pairs.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Subcommand;
use m2a_core::acoustic::{self, am_train, warm_start, AmConfig, AmExample, AmVariant};
use m2a_core::dsp::{FeatureKind, FeatureMatrix, LossConfig, WaveSignal, HOP, SAMPLE_RATE};
use m2a_core::io::read_wav;
use m2a_core::midi_io::{to_piano_roll, NoteEventList};
use m2a_core::nn::{ModelParams, TrainConfig, TrainOutcome};
use m2a_core::nsf::{self, nsf_train, NsfConfig, NsfExample};
use m2a_core::pipeline::{excitation_for, ExcitationKind};
use serde::Deserialize;

use crate::{bank_features, read_notes, usage, Classify, CmdResult};

const FRAME_SHIFT: f64 = 0.012;

#[derive(Subcommand)]
pub enum TrainCommand {
    /// Train the NSF waveform model
    Nsf(TrainArgs),
    /// Train the acoustic model
    Am(TrainArgs),
}

#[derive(clap::Args)]
pub struct TrainArgs {
    /// JSON configuration; unknown keys are rejected
    config: PathBuf,
    /// Directory of recordings `x.wav` with their scores `x.mid`
    data_dir: PathBuf,
    /// Where checkpoints and loss.csv go
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Continue from this checkpoint, including optimizer state
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bank {
    Midi,
    Mel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Excitation {
    Sine,
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    /// Filter-bank features of the recording (copy synthesis, am+nsf).
    Features,
    /// The piano roll itself (direct topology).
    Roll,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NsfTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub segment_seconds: f64,
    pub bank: Bank,
    pub n_mel: usize,
    pub conditioning: Conditioning,
    pub excitation: Excitation,
    pub n_blocks: usize,
    pub convs_per_block: usize,
    pub channels: usize,
    pub kernel: usize,
}

impl Default for NsfTrainConfig {
    fn default() -> Self {
        let model = NsfConfig::default();
        let train = TrainConfig::nsf_default();
        Self {
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            max_steps: None,
            seed: 0,
            segment_seconds: 3.0,
            bank: Bank::Midi,
            n_mel: 80,
            conditioning: Conditioning::Features,
            excitation: Excitation::Sine,
            n_blocks: model.n_blocks,
            convs_per_block: model.convs_per_block,
            channels: model.channels,
            kernel: model.kernel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AmTrainConfig {
    pub variant: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub segment_seconds: f64,
    pub bank: Bank,
    pub n_mel: usize,
    /// Overrides the variant's prenet dropout.
    pub prenet_dropout: Option<f64>,
    /// taco2 checkpoint to initialize from.
    pub warm_start: Option<PathBuf>,
}

impl Default for AmTrainConfig {
    fn default() -> Self {
        let train = TrainConfig::am_default();
        Self {
            variant: "taco2".into(),
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            max_steps: None,
            seed: 0,
            segment_seconds: 3.0,
            bank: Bank::Midi,
            n_mel: 80,
            prenet_dropout: None,
            warm_start: None,
        }
    }
}

fn train_config(
    lr: f64,
    batch: usize,
    epochs: usize,
    steps: Option<usize>,
    seed: u64,
    dir: &Path,
) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        batch_size: batch,
        max_epochs: epochs,
        max_steps: steps,
        seed,
        checkpoint_dir: Some(dir.to_path_buf()),
        ..TrainConfig::nsf_default()
    }
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> CmdResult<T> {
    let text = fs::read_to_string(path).input(format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).input(format!("invalid configuration {}", path.display()))
}

fn segment_frames(seconds: f64) -> CmdResult<usize> {
    if !(seconds > 0.0 && seconds.is_finite()) {
        return Err(usage(format!(
            "segment_seconds must be positive, got {seconds}"
        )));
    }
    Ok(((seconds / FRAME_SHIFT).round() as usize).max(1))
}

/// `(notes, recording)` for every `x.mid` with a sibling `x.wav`, sorted by name.
fn load_pairs(dir: &Path) -> CmdResult<Vec<(NoteEventList, WaveSignal)>> {
    let entries =
        fs::read_dir(dir).input(format!("cannot read data directory {}", dir.display()))?;
    let mut mids: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "mid" || x == "midi"))
        .collect();
    mids.sort();
    let mut pairs = vec![];
    for mid in mids {
        let wav = mid.with_extension("wav");
        if !wav.exists() {
            eprintln!("warning: {} has no matching .wav, skipped", mid.display());
            continue;
        }
        let notes = read_notes(&mid, true)?;
        let wave = read_wav(&wav).input(format!("{}", wav.display()))?;
        pairs.push((notes, wave));
    }
    if pairs.is_empty() {
        return Err(usage(format!("no .mid/.wav pairs in {}", dir.display())));
    }
    Ok(pairs)
}

fn features_for(wave: &WaveSignal, bank: Bank, n_mel: usize) -> CmdResult<FeatureMatrix> {
    match bank {
        Bank::Midi => bank_features(wave, FeatureKind::MidiFb, 128),
        Bank::Mel => bank_features(wave, FeatureKind::MelFb, n_mel),
    }
}

/// Appends `step,loss` rows numbered after `first_step`; a fresh run
/// starts the file over.
fn write_history(out_dir: &Path, first_step: u64, history: &[f64], resumed: bool) -> CmdResult {
    let path = out_dir.join("loss.csv");
    let append = resumed && path.exists();
    let mut file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&path)
        .input(format!("cannot write {}", path.display()))?;
    let mut text = String::new();
    if !append {
        text.push_str("step,loss\n");
    }
    for (i, loss) in history.iter().enumerate() {
        text.push_str(&format!("{},{loss}\n", first_step + i as u64 + 1));
    }
    file.write_all(text.as_bytes())
        .input(format!("cannot write {}", path.display()))
}

fn report(outcome: &TrainOutcome, final_path: &Path) {
    match (outcome.history.first(), outcome.history.last()) {
        (Some(first), Some(last)) => println!(
            "{} steps (total {}), loss {first:.6} -> {last:.6}, saved {}",
            outcome.history.len(),
            outcome.params.step,
            final_path.display()
        ),
        _ => println!("no steps taken, saved {}", final_path.display()),
    }
}

fn train_nsf(args: TrainArgs) -> CmdResult {
    let tc: NsfTrainConfig = read_config(&args.config)?;
    let seg = segment_frames(tc.segment_seconds)?;
    let feature_dim = match (tc.conditioning, tc.bank) {
        (Conditioning::Roll, _) | (Conditioning::Features, Bank::Midi) => 128,
        (Conditioning::Features, Bank::Mel) => tc.n_mel,
    };
    let cfg = NsfConfig {
        feature_dim,
        upsample_factor: HOP,
        n_blocks: tc.n_blocks,
        convs_per_block: tc.convs_per_block,
        channels: tc.channels,
        kernel: tc.kernel,
    };
    cfg.validate().input("NSF configuration")?;
    let kind = match tc.excitation {
        Excitation::Sine => ExcitationKind::Sine,
        Excitation::Noise => ExcitationKind::Noise,
    };
    let mut dataset = vec![];
    for (i, (notes, wave)) in load_pairs(&args.data_dir)?.into_iter().enumerate() {
        let features = match tc.conditioning {
            Conditioning::Features => features_for(&wave, tc.bank, tc.n_mel)?,
            Conditioning::Roll => {
                let frames = wave.len().div_ceil(HOP);
                let mut roll = to_piano_roll(&notes, FRAME_SHIFT);
                let mut values = roll.values().to_vec();
                values.resize(frames * 128, 0.0);
                roll = m2a_core::midi_io::PianoRoll::from_values(
                    values,
                    FRAME_SHIFT,
                    SAMPLE_RATE as f64,
                );
                FeatureMatrix::from_piano_roll(&roll)
            }
        };
        let len = features.n_frames * HOP;
        let excitation = excitation_for(
            &notes,
            features.n_frames,
            HOP,
            kind,
            tc.seed.wrapping_add(i as u64),
        )
        .input("excitation")?;
        let example = NsfExample {
            excitation,
            target: wave.fit_to(len),
            features,
        };
        dataset.extend(nsf::split_segments(&example, seg, HOP));
    }
    let params = match &args.resume {
        Some(path) => {
            nsf::load_checkpoint(path, Some(&cfg))
                .input(format!("{}", path.display()))?
                .0
        }
        None => nsf::init_params(&cfg, tc.seed),
    };
    fs::create_dir_all(&args.out_dir).input(format!("cannot create {}", args.out_dir.display()))?;
    let start = params.step;
    let train = train_config(
        tc.learning_rate,
        tc.batch_size,
        tc.max_epochs,
        tc.max_steps,
        tc.seed,
        &args.out_dir,
    );
    let outcome = nsf_train(
        params,
        &dataset,
        &cfg,
        &LossConfig::default_for(SAMPLE_RATE),
        &train,
    )
    .map_err(|e| match e {
        nsf::NsfError::InvalidConfig(_) | nsf::NsfError::EmptyDataset => usage(e),
        other => crate::Failure::Internal(other.into()),
    })?;
    let final_path = args.out_dir.join("nsf_final.ckpt");
    nsf::save_checkpoint(&outcome.params, &cfg, &final_path).internal("writing checkpoint")?;
    write_history(
        &args.out_dir,
        start,
        &outcome.history,
        args.resume.is_some(),
    )?;
    report(&outcome, &final_path);
    Ok(())
}

fn train_am(args: TrainArgs) -> CmdResult {
    let tc: AmTrainConfig = read_config(&args.config)?;
    let variant: AmVariant = tc.variant.parse().map_err(usage)?;
    let seg = segment_frames(tc.segment_seconds)?;
    let dim = match tc.bank {
        Bank::Midi => 128,
        Bank::Mel => tc.n_mel,
    };
    let mut cfg = AmConfig::new(variant, dim);
    cfg.output_kind = match tc.bank {
        Bank::Midi => FeatureKind::MidiFb,
        Bank::Mel => FeatureKind::MelFb,
    };
    if let Some(p) = tc.prenet_dropout {
        cfg.prenet_dropout = p;
    }
    cfg.validate().input("acoustic model configuration")?;
    let mut dataset = vec![];
    for (notes, wave) in load_pairs(&args.data_dir)? {
        let example = AmExample {
            roll: to_piano_roll(&notes, FRAME_SHIFT),
            target: features_for(&wave, tc.bank, tc.n_mel)?,
        };
        dataset.extend(acoustic::split_segments(&example, seg));
    }
    let params: ModelParams = match (&args.resume, &tc.warm_start) {
        (Some(path), _) => {
            acoustic::load_checkpoint(path, Some(&cfg))
                .input(format!("{}", path.display()))?
                .0
        }
        (None, Some(path)) => {
            let (src, src_cfg) =
                acoustic::load_checkpoint(path, None).input(format!("{}", path.display()))?;
            let (params, adapted) = warm_start(&src, &src_cfg, &cfg).input("warm start")?;
            if !adapted.is_empty() {
                eprintln!("warm start adapted: {}", adapted.join(", "));
            }
            params
        }
        (None, None) => acoustic::init_params(&cfg, tc.seed),
    };
    fs::create_dir_all(&args.out_dir).input(format!("cannot create {}", args.out_dir.display()))?;
    let start = params.step;
    let train = train_config(
        tc.learning_rate,
        tc.batch_size,
        tc.max_epochs,
        tc.max_steps,
        tc.seed,
        &args.out_dir,
    );
    let outcome = am_train(params, &dataset, &cfg, &train).map_err(|e| match e {
        acoustic::AmError::InvalidConfig(_) | acoustic::AmError::EmptyDataset => usage(e),
        other => crate::Failure::Internal(other.into()),
    })?;
    let final_path = args.out_dir.join("am_final.ckpt");
    acoustic::save_checkpoint(&outcome.params, &cfg, &final_path).internal("writing checkpoint")?;
    write_history(
        &args.out_dir,
        start,
        &outcome.history,
        args.resume.is_some(),
    )?;
    report(&outcome, &final_path);
    Ok(())
}

pub fn run(cmd: TrainCommand) -> CmdResult {
    match cmd {
        TrainCommand::Nsf(args) => train_nsf(args),
        TrainCommand::Am(args) => train_am(args),
    }
}
