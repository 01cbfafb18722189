//! Toy neural source-filter waveform model.
//!
//! Frame-rate features pass through an affine condition transform and are
//! linearly interpolated to sample rate. Each filter block lifts the current
//! waveform to `channels` with a 1×1 projection, adds the condition, runs a
//! stack of causal dilated tanh convolutions with residual connections and
//! projects back to one channel, which is added to the block input. The
//! final waveform is hard-clipped to [-1, 1].

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dsp::{mr_stft_loss, DspError, FeatureKind, FeatureMatrix, LossConfig, WaveSignal, HOP};
use crate::io::{self, IoError};
use crate::nn::{
    causal_offsets, conv1d_backward, conv1d_forward, Adam, ModelParams, ParamStore, Tensor,
    TrainConfig, TrainOutcome,
};

pub const NSF_MAGIC: &[u8; 4] = b"NSF1";

#[derive(Debug, Error)]
pub enum NsfError {
    #[error("feature dimension {found} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("features of kind {0} cannot condition the waveform model")]
    UnsupportedFeatureKind(&'static str),
    #[error("length mismatch: expected {expected} samples, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NsfConfig {
    pub feature_dim: usize,
    /// Samples per feature frame (L).
    pub upsample_factor: usize,
    pub n_blocks: usize,
    /// Convolutions per block; conv `j` has dilation `2^j`.
    pub convs_per_block: usize,
    pub channels: usize,
    pub kernel: usize,
}

impl Default for NsfConfig {
    fn default() -> Self {
        Self {
            feature_dim: 128,
            upsample_factor: HOP,
            n_blocks: 2,
            convs_per_block: 5,
            channels: 16,
            kernel: 3,
        }
    }
}

impl NsfConfig {
    pub fn validate(&self) -> Result<(), NsfError> {
        let fields = [
            ("feature_dim", self.feature_dim),
            ("upsample_factor", self.upsample_factor),
            ("n_blocks", self.n_blocks),
            ("convs_per_block", self.convs_per_block),
            ("channels", self.channels),
            ("kernel", self.kernel),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(NsfError::InvalidConfig(format!("{name} must be positive"))),
            None if self.convs_per_block > 31 => Err(NsfError::InvalidConfig(
                "convs_per_block must be at most 31".into(),
            )),
            None => Ok(()),
        }
    }

    pub fn dilations(&self) -> Vec<usize> {
        (0..self.convs_per_block).map(|j| 1 << j).collect()
    }

    fn config_block(&self) -> [u32; 6] {
        [
            self.feature_dim as u32,
            self.upsample_factor as u32,
            self.n_blocks as u32,
            self.convs_per_block as u32,
            self.channels as u32,
            self.kernel as u32,
        ]
    }

    fn from_config_block(block: &[u32]) -> Self {
        Self {
            feature_dim: block[0] as usize,
            upsample_factor: block[1] as usize,
            n_blocks: block[2] as usize,
            convs_per_block: block[3] as usize,
            channels: block[4] as usize,
            kernel: block[5] as usize,
        }
    }
}

fn shapes(cfg: &NsfConfig) -> Vec<(String, Vec<usize>, usize)> {
    let (c, d, k) = (cfg.channels, cfg.feature_dim, cfg.kernel);
    let mut out = vec![
        ("cond.weight".to_string(), vec![c, d], d),
        ("cond.bias".to_string(), vec![c], d),
    ];
    for b in 0..cfg.n_blocks {
        out.push((format!("block{b}.in.weight"), vec![c, 1], 1));
        out.push((format!("block{b}.in.bias"), vec![c], 1));
        for j in 0..cfg.convs_per_block {
            out.push((format!("block{b}.conv{j}.weight"), vec![c, c, k], c * k));
            out.push((format!("block{b}.conv{j}.bias"), vec![c], c * k));
        }
        out.push((format!("block{b}.out.weight"), vec![1, c], 0));
        out.push((format!("block{b}.out.bias"), vec![1], 0));
    }
    out
}

/// Uniform `±sqrt(1/fan_in)` initialization; output projections start at
/// zero so a fresh model passes the excitation through unchanged.
pub fn init_params(cfg: &NsfConfig, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape, fan_in) in shapes(cfg) {
        let bound = if fan_in == 0 {
            0.0
        } else {
            (1.0 / fan_in as f64).sqrt()
        };
        store.insert(name, Tensor::uniform(&shape, bound, &mut rng));
    }
    ModelParams::new(store)
}

/// All-zero parameters of the right shapes.
pub fn zero_params(cfg: &NsfConfig) -> ModelParams {
    let mut store = ParamStore::new();
    for (name, shape, _) in shapes(cfg) {
        store.insert(name, Tensor::zeros(&shape));
    }
    ModelParams::new(store)
}

fn check_features(features: &FeatureMatrix, cfg: &NsfConfig) -> Result<(), NsfError> {
    if features.kind == FeatureKind::LinearSpec {
        return Err(NsfError::UnsupportedFeatureKind(features.kind.name()));
    }
    if features.dim != cfg.feature_dim {
        return Err(NsfError::DimensionMismatch {
            expected: cfg.feature_dim,
            found: features.dim,
        });
    }
    Ok(())
}

/// Frame pair and weight of the right-hand frame for sample `t`. Sample
/// centers map to `u = (t + 0.5)/L − 0.5` in frame units, held at the ends.
fn interp(t: usize, l: usize, n: usize) -> (usize, usize, f64) {
    let u = ((t as f64 + 0.5) / l as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let n0 = u.floor() as usize;
    let n1 = (n0 + 1).min(n - 1);
    (n0, n1, u - n0 as f64)
}

fn project_frames(params: &ParamStore, features: &FeatureMatrix, c: usize) -> Vec<f64> {
    let w = params.data("cond.weight");
    let b = params.data("cond.bias");
    let mut z = Vec::with_capacity(features.n_frames * c);
    for n in 0..features.n_frames {
        z.extend(crate::nn::dense(w, b, features.row(n)));
    }
    z
}

fn upsample(z: &[f64], n: usize, c: usize, l: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * l * c];
    for t in 0..n * l {
        let (n0, n1, a) = interp(t, l, n);
        let (z0, z1) = (&z[n0 * c..(n0 + 1) * c], &z[n1 * c..(n1 + 1) * c]);
        for (ch, o) in out[t * c..(t + 1) * c].iter_mut().enumerate() {
            *o = (1.0 - a) * z0[ch] + a * z1[ch];
        }
    }
    out
}

/// Sample-rate condition, `(N·L) × channels` row-major: the affine frame
/// transform followed by linear interpolation in time.
pub fn condition_upsample(
    params: &ModelParams,
    features: &FeatureMatrix,
    cfg: &NsfConfig,
) -> Result<Vec<f64>, NsfError> {
    check_features(features, cfg)?;
    let z = project_frames(&params.tensors, features, cfg.channels);
    Ok(upsample(
        &z,
        features.n_frames,
        cfg.channels,
        cfg.upsample_factor,
    ))
}

struct BlockTrace {
    input: Vec<f64>,
    /// Hidden state before each conv, plus the final one.
    hidden: Vec<Vec<f64>>,
    /// tanh outputs of each conv.
    acts: Vec<Vec<f64>>,
}

struct Trace {
    blocks: Vec<BlockTrace>,
    pre_clip: Vec<f64>,
}

fn forward_trace(
    params: &ParamStore,
    features: &FeatureMatrix,
    excitation: &WaveSignal,
    cfg: &NsfConfig,
) -> Result<(Vec<f64>, Trace), NsfError> {
    check_features(features, cfg)?;
    let t_len = features.n_frames * cfg.upsample_factor;
    if excitation.len() != t_len {
        return Err(NsfError::LengthMismatch {
            expected: t_len,
            found: excitation.len(),
        });
    }
    let c = cfg.channels;
    let z = project_frames(params, features, c);
    let cond = upsample(&z, features.n_frames, c, cfg.upsample_factor);
    let mut x = excitation.samples.clone();
    let mut blocks = Vec::with_capacity(cfg.n_blocks);
    for b in 0..cfg.n_blocks {
        let in_w = params.data(&format!("block{b}.in.weight"));
        let in_b = params.data(&format!("block{b}.in.bias"));
        let mut h = cond.clone();
        for (t, &xt) in x.iter().enumerate() {
            for (ch, v) in h[t * c..(t + 1) * c].iter_mut().enumerate() {
                *v += in_w[ch] * xt + in_b[ch];
            }
        }
        let mut hidden = Vec::with_capacity(cfg.convs_per_block + 1);
        let mut acts = Vec::with_capacity(cfg.convs_per_block);
        for (j, dil) in cfg.dilations().into_iter().enumerate() {
            let w = params.data(&format!("block{b}.conv{j}.weight"));
            let bias = params.data(&format!("block{b}.conv{j}.bias"));
            let a: Vec<f64> =
                conv1d_forward(&h, t_len, c, w, bias, c, &causal_offsets(cfg.kernel, dil))
                    .into_iter()
                    .map(f64::tanh)
                    .collect();
            let next: Vec<f64> = h.iter().zip(&a).map(|(u, v)| u + v).collect();
            hidden.push(std::mem::replace(&mut h, next));
            acts.push(a);
        }
        let out_w = params.data(&format!("block{b}.out.weight"));
        let out_b = params.data(&format!("block{b}.out.bias"))[0];
        let next: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(t, xt)| {
                let y: f64 = h[t * c..(t + 1) * c]
                    .iter()
                    .zip(out_w)
                    .map(|(u, w)| u * w)
                    .sum();
                xt + (y + out_b)
            })
            .collect();
        hidden.push(h);
        blocks.push(BlockTrace {
            input: std::mem::replace(&mut x, next),
            hidden,
            acts,
        });
    }
    let out = x.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    Ok((
        out,
        Trace {
            blocks,
            pre_clip: x,
        },
    ))
}

/// Waveform of exactly `N·L` samples at the excitation's sample rate.
pub fn nsf_forward(
    params: &ModelParams,
    features: &FeatureMatrix,
    excitation: &WaveSignal,
    cfg: &NsfConfig,
) -> Result<WaveSignal, NsfError> {
    let (out, _) = forward_trace(&params.tensors, features, excitation, cfg)?;
    Ok(WaveSignal::new(out, excitation.sample_rate))
}

#[derive(Debug, Clone)]
pub struct NsfGradients {
    pub loss: f64,
    pub grads: ParamStore,
}

/// MR-STFT loss of the forward output against `target` and its gradient
/// with respect to every parameter.
pub fn nsf_backward(
    params: &ModelParams,
    features: &FeatureMatrix,
    excitation: &WaveSignal,
    target: &WaveSignal,
    cfg: &NsfConfig,
    loss_cfg: &LossConfig,
) -> Result<NsfGradients, NsfError> {
    let p = &params.tensors;
    let (out, trace) = forward_trace(p, features, excitation, cfg)?;
    if target.len() != out.len() {
        return Err(NsfError::LengthMismatch {
            expected: out.len(),
            found: target.len(),
        });
    }
    let lv = mr_stft_loss(
        &WaveSignal::new(out, excitation.sample_rate),
        target,
        loss_cfg,
    )?;
    let mut grads = p.zeros_like();
    let (c, t_len) = (cfg.channels, target.len());
    let mut dx: Vec<f64> = lv
        .grad
        .iter()
        .zip(&trace.pre_clip)
        .map(|(g, v)| if v.abs() > 1.0 { 0.0 } else { *g })
        .collect();
    let mut dcond = vec![0.0; t_len * c];
    for (b, bt) in trace.blocks.iter().enumerate().rev() {
        let out_w = p.data(&format!("block{b}.out.weight")).to_vec();
        let top = &bt.hidden[cfg.convs_per_block];
        {
            let dw = grads.data_mut(&format!("block{b}.out.weight"));
            for (t, &g) in dx.iter().enumerate() {
                for (ch, d) in dw.iter_mut().enumerate() {
                    *d += g * top[t * c + ch];
                }
            }
        }
        grads.data_mut(&format!("block{b}.out.bias"))[0] += dx.iter().sum::<f64>();
        let mut dh = vec![0.0; t_len * c];
        for (t, &g) in dx.iter().enumerate() {
            for (ch, d) in dh[t * c..(t + 1) * c].iter_mut().enumerate() {
                *d = g * out_w[ch];
            }
        }
        for (j, dil) in cfg.dilations().into_iter().enumerate().rev() {
            let dpre: Vec<f64> = dh
                .iter()
                .zip(&bt.acts[j])
                .map(|(g, a)| g * (1.0 - a * a))
                .collect();
            let wname = format!("block{b}.conv{j}.weight");
            let bname = format!("block{b}.conv{j}.bias");
            let w = p.data(&wname);
            let mut dw = vec![0.0; w.len()];
            let mut db = vec![0.0; c];
            conv1d_backward(
                &bt.hidden[j],
                t_len,
                c,
                w,
                c,
                &causal_offsets(cfg.kernel, dil),
                &dpre,
                &mut dh,
                &mut dw,
                &mut db,
            );
            grads
                .data_mut(&wname)
                .iter_mut()
                .zip(&dw)
                .for_each(|(a, b)| *a += b);
            grads
                .data_mut(&bname)
                .iter_mut()
                .zip(&db)
                .for_each(|(a, b)| *a += b);
        }
        let in_w = p.data(&format!("block{b}.in.weight"));
        let mut d_in_w = vec![0.0; c];
        let mut d_in_b = vec![0.0; c];
        for t in 0..t_len {
            let row = &dh[t * c..(t + 1) * c];
            let mut acc = 0.0;
            for ch in 0..c {
                d_in_w[ch] += row[ch] * bt.input[t];
                d_in_b[ch] += row[ch];
                acc += row[ch] * in_w[ch];
            }
            dx[t] += acc;
        }
        dcond.iter_mut().zip(&dh).for_each(|(a, b)| *a += b);
        grads
            .data_mut(&format!("block{b}.in.weight"))
            .iter_mut()
            .zip(&d_in_w)
            .for_each(|(a, b)| *a += b);
        grads
            .data_mut(&format!("block{b}.in.bias"))
            .iter_mut()
            .zip(&d_in_b)
            .for_each(|(a, b)| *a += b);
    }
    let n = features.n_frames;
    let mut dz = vec![0.0; n * c];
    for t in 0..t_len {
        let (n0, n1, a) = interp(t, cfg.upsample_factor, n);
        for ch in 0..c {
            let g = dcond[t * c + ch];
            dz[n0 * c + ch] += (1.0 - a) * g;
            dz[n1 * c + ch] += a * g;
        }
    }
    let d = cfg.feature_dim;
    let mut dw = vec![0.0; c * d];
    let mut db = vec![0.0; c];
    let mut scratch = vec![0.0; d];
    for fr in 0..n {
        crate::nn::dense_backward(
            p.data("cond.weight"),
            features.row(fr),
            &dz[fr * c..(fr + 1) * c],
            &mut dw,
            &mut db,
            &mut scratch,
        );
    }
    grads.data_mut("cond.weight").copy_from_slice(&dw);
    grads.data_mut("cond.bias").copy_from_slice(&db);
    Ok(NsfGradients {
        loss: lv.loss,
        grads,
    })
}

/// One training item: features with their excitation and target waveform,
/// both exactly `N·L` samples.
#[derive(Debug, Clone)]
pub struct NsfExample {
    pub features: FeatureMatrix,
    pub excitation: WaveSignal,
    pub target: WaveSignal,
}

/// Cuts an example into consecutive pieces of at most `segment_frames`
/// frames; the last piece keeps the remainder.
pub fn split_segments(example: &NsfExample, segment_frames: usize, l: usize) -> Vec<NsfExample> {
    let n = example.features.n_frames;
    let seg = segment_frames.max(1);
    (0..n)
        .step_by(seg)
        .map(|start| {
            let end = (start + seg).min(n);
            let f = &example.features;
            let slice = |w: &WaveSignal| {
                WaveSignal::new(w.samples[start * l..end * l].to_vec(), w.sample_rate)
            };
            NsfExample {
                features: FeatureMatrix::new(
                    f.values[start * f.dim..end * f.dim].to_vec(),
                    f.dim,
                    f.kind,
                    f.frame_shift,
                    f.sample_rate,
                ),
                excitation: slice(&example.excitation),
                target: slice(&example.target),
            }
        })
        .collect()
}

/// Adam over shuffled mini-batches; the gradient of a batch is the mean of
/// its items' gradients, reduced in index order. With `checkpoint_dir`
/// set, `nsf_epochNNN.ckpt` is written after every epoch.
pub fn nsf_train(
    mut params: ModelParams,
    dataset: &[NsfExample],
    cfg: &NsfConfig,
    loss_cfg: &LossConfig,
    train: &TrainConfig,
) -> Result<TrainOutcome, NsfError> {
    if dataset.is_empty() {
        return Err(NsfError::EmptyDataset);
    }
    train.validate().map_err(NsfError::InvalidConfig)?;
    let adam = Adam::new(train.learning_rate, train.beta1, train.beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::new();
    'epochs: for epoch in 0..train.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(train.batch_size) {
            if train.max_steps.is_some_and(|m| history.len() >= m) {
                break 'epochs;
            }
            let mut acc = params.tensors.zeros_like();
            let mut loss = 0.0;
            for &i in batch {
                let ex = &dataset[i];
                let g = nsf_backward(
                    &params,
                    &ex.features,
                    &ex.excitation,
                    &ex.target,
                    cfg,
                    loss_cfg,
                )?;
                acc.add_assign(&g.grads);
                loss += g.loss;
            }
            acc.scale(1.0 / batch.len() as f64);
            history.push(loss / batch.len() as f64);
            adam.step(&mut params, &acc);
        }
        if let Some(dir) = &train.checkpoint_dir {
            save_checkpoint(&params, cfg, &epoch_checkpoint_path(dir, epoch + 1))?;
        }
    }
    Ok(TrainOutcome { params, history })
}

pub fn encode_nsf_checkpoint(params: &ModelParams, cfg: &NsfConfig) -> Vec<u8> {
    io::encode_checkpoint(NSF_MAGIC, &cfg.config_block(), params)
}

/// Decodes a checkpoint; when `expected` is given the stored configuration
/// and every tensor shape must match it.
pub fn decode_nsf_checkpoint(
    bytes: &[u8],
    expected: Option<&NsfConfig>,
) -> Result<(ModelParams, NsfConfig), IoError> {
    let contents = io::decode_checkpoint(bytes, NSF_MAGIC, 6)?;
    let stored = NsfConfig::from_config_block(&contents.config);
    stored
        .validate()
        .map_err(|e| IoError::CorruptCheckpoint(e.to_string()))?;
    if let Some(cfg) = expected {
        if *cfg != stored {
            return Err(IoError::CorruptCheckpoint(format!(
                "configuration mismatch: expected {cfg:?}, checkpoint has {stored:?}"
            )));
        }
    }
    io::check_shapes(&zero_params(&stored).tensors, &contents.params.tensors)?;
    Ok((contents.params, stored))
}

pub fn save_checkpoint(params: &ModelParams, cfg: &NsfConfig, path: &Path) -> Result<(), IoError> {
    std::fs::write(path, encode_nsf_checkpoint(params, cfg)).map_err(|e| IoError::io(path, e))
}

pub fn load_checkpoint(
    path: &Path,
    expected: Option<&NsfConfig>,
) -> Result<(ModelParams, NsfConfig), IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    decode_nsf_checkpoint(&bytes, expected)
}

/// Path of the checkpoint written after `epoch` (1-based).
pub fn epoch_checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("nsf_epoch{epoch:03}.ckpt"))
}
