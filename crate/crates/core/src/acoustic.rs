//! Aligned, attention-free acoustic model mapping a piano roll to frame-level
//! filter-bank features.
//!
//! The roll is downsampled by the reduction factor and projected by a dense
//! layer into a small residual convolutional encoder. An Elman decoder runs
//! one step per downsampled frame: the last frame of the previous group goes
//! through dropout and a two-layer ReLU prenet, is joined with the encoder
//! output of the step, and the decoder emits `r` frames at once. A two-layer
//! convolutional post-net adds a residual refinement over the whole output.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dsp::{FeatureKind, FeatureMatrix};
use crate::io::{self, IoError};
use crate::midi_io::{PianoRoll, NUM_NOTES};
use crate::nn::{
    centered_offsets, conv1d_backward, conv1d_forward, dense, dense_backward, Adam, ModelParams,
    ParamStore, Tensor, TrainConfig, TrainOutcome,
};

pub const AM_MAGIC: &[u8; 4] = b"ACM1";
const CONFIG_WORDS: usize = 11;
const ENCODER_LAYERS: usize = 2;
const ENCODER_KERNEL: usize = 3;
const POSTNET_KERNEL: usize = 5;

#[derive(Debug, Error)]
pub enum AmError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmVariant {
    Taco2,
    /// Also feeds the current downsampled roll frame to the prenet output.
    Taco3,
    /// No downsampling and ordinary prenet dropout.
    Taco4,
}

impl AmVariant {
    pub fn code(self) -> u32 {
        match self {
            AmVariant::Taco2 => 2,
            AmVariant::Taco3 => 3,
            AmVariant::Taco4 => 4,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            2 => AmVariant::Taco2,
            3 => AmVariant::Taco3,
            4 => AmVariant::Taco4,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            AmVariant::Taco2 => "taco2",
            AmVariant::Taco3 => "taco3",
            AmVariant::Taco4 => "taco4",
        }
    }
}

impl std::str::FromStr for AmVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "taco2" => Ok(AmVariant::Taco2),
            "taco3" => Ok(AmVariant::Taco3),
            "taco4" => Ok(AmVariant::Taco4),
            other => Err(format!("unknown variant {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmConfig {
    pub variant: AmVariant,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Also the reduction factor: frames emitted per decoder step.
    pub downsample_factor: usize,
    pub prenet_dropout: f64,
    pub encoder_channels: usize,
    pub decoder_state_dim: usize,
    pub prenet_dims: [usize; 2],
    pub postnet_channels: usize,
    pub output_kind: FeatureKind,
}

impl AmConfig {
    /// taco2/taco3: downsampling 4 and dropout 0.99; taco4: no
    /// downsampling and dropout 0.5. Outputs MIDI filter-bank features.
    pub fn new(variant: AmVariant, output_dim: usize) -> Self {
        let (factor, dropout) = match variant {
            AmVariant::Taco4 => (1, 0.5),
            _ => (4, 0.99),
        };
        Self {
            variant,
            input_dim: NUM_NOTES,
            output_dim,
            downsample_factor: factor,
            prenet_dropout: dropout,
            encoder_channels: 64,
            decoder_state_dim: 64,
            prenet_dims: [256, 128],
            postnet_channels: 64,
            output_kind: FeatureKind::MidiFb,
        }
    }

    pub fn reduction_factor(&self) -> usize {
        self.downsample_factor
    }

    /// Width of the prenet's first layer input.
    pub fn prenet_in(&self) -> usize {
        match self.variant {
            AmVariant::Taco3 => self.output_dim + self.input_dim,
            _ => self.output_dim,
        }
    }

    pub fn validate(&self) -> Result<(), AmError> {
        let bad = |m: String| Err(AmError::InvalidConfig(m));
        if self.input_dim != NUM_NOTES {
            return bad(format!("input_dim must be {NUM_NOTES}"));
        }
        if ![1, 2, 4].contains(&self.downsample_factor) {
            return bad(format!(
                "downsample factor {} not in {{1, 2, 4}}",
                self.downsample_factor
            ));
        }
        if self.variant == AmVariant::Taco4 && self.downsample_factor != 1 {
            return bad("taco4 does not downsample".into());
        }
        if !(0.0..1.0).contains(&self.prenet_dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.prenet_dropout));
        }
        let dims = [
            self.output_dim,
            self.encoder_channels,
            self.decoder_state_dim,
            self.prenet_dims[0],
            self.prenet_dims[1],
            self.postnet_channels,
        ];
        if dims.contains(&0) {
            return bad("all layer sizes must be positive".into());
        }
        if !matches!(self.output_kind, FeatureKind::MidiFb | FeatureKind::MelFb) {
            return bad(format!(
                "cannot predict {} features",
                self.output_kind.name()
            ));
        }
        Ok(())
    }

    fn config_block(&self) -> [u32; CONFIG_WORDS] {
        [
            self.variant.code(),
            self.input_dim as u32,
            self.output_dim as u32,
            self.downsample_factor as u32,
            (self.prenet_dropout as f32).to_bits(),
            self.encoder_channels as u32,
            self.decoder_state_dim as u32,
            self.prenet_dims[0] as u32,
            self.prenet_dims[1] as u32,
            self.postnet_channels as u32,
            self.output_kind.code(),
        ]
    }

    fn from_config_block(b: &[u32]) -> Result<Self, IoError> {
        let corrupt = |m: String| IoError::CorruptCheckpoint(m);
        let cfg = Self {
            variant: AmVariant::from_code(b[0])
                .ok_or_else(|| corrupt(format!("unknown variant code {}", b[0])))?,
            input_dim: b[1] as usize,
            output_dim: b[2] as usize,
            downsample_factor: b[3] as usize,
            prenet_dropout: f32::from_bits(b[4]) as f64,
            encoder_channels: b[5] as usize,
            decoder_state_dim: b[6] as usize,
            prenet_dims: [b[7] as usize, b[8] as usize],
            postnet_channels: b[9] as usize,
            output_kind: FeatureKind::from_code(b[10])
                .ok_or_else(|| corrupt(format!("unknown feature kind {}", b[10])))?,
        };
        cfg.validate().map_err(|e| corrupt(e.to_string()))?;
        Ok(cfg)
    }
}

fn shapes(cfg: &AmConfig) -> Vec<(String, Vec<usize>, usize)> {
    let (e, h, d, q) = (
        cfg.encoder_channels,
        cfg.decoder_state_dim,
        cfg.output_dim,
        cfg.postnet_channels,
    );
    let [p1, p2] = cfg.prenet_dims;
    let r = cfg.reduction_factor();
    let mut out = vec![
        (
            "input.weight".to_string(),
            vec![e, cfg.input_dim],
            cfg.input_dim,
        ),
        ("input.bias".to_string(), vec![e], cfg.input_dim),
    ];
    for i in 0..ENCODER_LAYERS {
        out.push((
            format!("encoder.conv{i}.weight"),
            vec![e, e, ENCODER_KERNEL],
            e * ENCODER_KERNEL,
        ));
        out.push((format!("encoder.conv{i}.bias"), vec![e], e * ENCODER_KERNEL));
    }
    let din = cfg.prenet_in();
    out.extend([
        ("prenet.fc1.weight".to_string(), vec![p1, din], din),
        ("prenet.fc1.bias".to_string(), vec![p1], din),
        ("prenet.fc2.weight".to_string(), vec![p2, p1], p1),
        ("prenet.fc2.bias".to_string(), vec![p2], p1),
        (
            "decoder.rnn.weight_ih".to_string(),
            vec![h, p2 + e],
            p2 + e + h,
        ),
        ("decoder.rnn.weight_hh".to_string(), vec![h, h], p2 + e + h),
        ("decoder.rnn.bias".to_string(), vec![h], p2 + e + h),
        ("decoder.out.weight".to_string(), vec![r * d, h + e], h + e),
        ("decoder.out.bias".to_string(), vec![r * d], h + e),
        (
            "postnet.conv0.weight".to_string(),
            vec![q, d, POSTNET_KERNEL],
            d * POSTNET_KERNEL,
        ),
        (
            "postnet.conv0.bias".to_string(),
            vec![q],
            d * POSTNET_KERNEL,
        ),
        (
            "postnet.conv1.weight".to_string(),
            vec![d, q, POSTNET_KERNEL],
            q * POSTNET_KERNEL,
        ),
        (
            "postnet.conv1.bias".to_string(),
            vec![d],
            q * POSTNET_KERNEL,
        ),
    ]);
    out
}

/// Uniform `±sqrt(1/fan_in)` for every tensor.
pub fn init_params(cfg: &AmConfig, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape, fan_in) in shapes(cfg) {
        store.insert(
            name,
            Tensor::uniform(&shape, (1.0 / fan_in as f64).sqrt(), &mut rng),
        );
    }
    ModelParams::new(store)
}

pub fn zero_params(cfg: &AmConfig) -> ModelParams {
    let mut store = ParamStore::new();
    for (name, shape, _) in shapes(cfg) {
        store.insert(name, Tensor::zeros(&shape));
    }
    ModelParams::new(store)
}

/// Collapses groups of `factor` frames by per-column maximum. A trailing
/// partial group is kept; the frame shift is multiplied by `factor`.
///
/// # Panics
/// If `factor` is zero.
pub fn downsample_roll(roll: &PianoRoll, factor: usize) -> PianoRoll {
    assert!(factor > 0, "downsample factor must be positive");
    let n = roll.n_frames().div_ceil(factor);
    let mut values = vec![0.0; n * NUM_NOTES];
    for f in 0..roll.n_frames() {
        let dst = &mut values[(f / factor) * NUM_NOTES..(f / factor + 1) * NUM_NOTES];
        for (v, &x) in dst.iter_mut().zip(roll.row(f)) {
            *v = f64::max(*v, x);
        }
    }
    PianoRoll::from_values(
        values,
        roll.frame_shift * factor as f64,
        roll.sample_rate_hint,
    )
}

/// Inverted dropout mask: each entry is 0 with probability `rate`,
/// otherwise `1/(1 − rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    if rate == 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect()
}

struct Encoded {
    inputs: Vec<f64>,
    hidden: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    steps: usize,
}

impl Encoded {
    fn output(&self) -> &[f64] {
        self.hidden.last().unwrap()
    }
}

fn encode(p: &ParamStore, roll: &PianoRoll, cfg: &AmConfig) -> Encoded {
    let ds = downsample_roll(roll, cfg.downsample_factor);
    let steps = ds.n_frames();
    let e = cfg.encoder_channels;
    let (w, b) = (p.data("input.weight"), p.data("input.bias"));
    let mut h = Vec::with_capacity(steps * e);
    for s in 0..steps {
        h.extend(dense(w, b, ds.row(s)));
    }
    let mut hidden = vec![];
    let mut acts = vec![];
    for i in 0..ENCODER_LAYERS {
        let a: Vec<f64> = conv1d_forward(
            &h,
            steps,
            e,
            p.data(&format!("encoder.conv{i}.weight")),
            p.data(&format!("encoder.conv{i}.bias")),
            e,
            &centered_offsets(ENCODER_KERNEL),
        )
        .into_iter()
        .map(f64::tanh)
        .collect();
        let next = h.iter().zip(&a).map(|(x, y)| x + y).collect();
        hidden.push(std::mem::replace(&mut h, next));
        acts.push(a);
    }
    hidden.push(h);
    Encoded {
        inputs: ds.values().to_vec(),
        hidden,
        acts,
        steps,
    }
}

struct Step {
    q: Vec<f64>,
    p1: Vec<f64>,
    p2: Vec<f64>,
    u: Vec<f64>,
    h_prev: Vec<f64>,
    h: Vec<f64>,
    ho: Vec<f64>,
}

/// One decoder step from the (already masked) prenet input `q`.
fn decoder_step(p: &ParamStore, q: Vec<f64>, enc: &[f64], h_prev: Vec<f64>) -> (Step, Vec<f64>) {
    let relu = |v: Vec<f64>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
    let p1 = relu(dense(
        p.data("prenet.fc1.weight"),
        p.data("prenet.fc1.bias"),
        &q,
    ));
    let p2 = relu(dense(
        p.data("prenet.fc2.weight"),
        p.data("prenet.fc2.bias"),
        &p1,
    ));
    let u: Vec<f64> = p2.iter().chain(enc).copied().collect();
    let a = dense(
        p.data("decoder.rnn.weight_ih"),
        p.data("decoder.rnn.bias"),
        &u,
    );
    let hh = dense(
        p.data("decoder.rnn.weight_hh"),
        &vec![0.0; h_prev.len()],
        &h_prev,
    );
    let h: Vec<f64> = a.iter().zip(&hh).map(|(x, y)| (x + y).tanh()).collect();
    let ho: Vec<f64> = h.iter().chain(enc).copied().collect();
    let y = dense(
        p.data("decoder.out.weight"),
        p.data("decoder.out.bias"),
        &ho,
    );
    (
        Step {
            q,
            p1,
            p2,
            u,
            h_prev,
            h,
            ho,
        },
        y,
    )
}

fn prenet_input(prev: &[f64], mask: &[f64], roll_frame: &[f64], cfg: &AmConfig) -> Vec<f64> {
    let mut q: Vec<f64> = prev.iter().zip(mask).map(|(x, m)| x * m).collect();
    if cfg.variant == AmVariant::Taco3 {
        q.extend_from_slice(roll_frame);
    }
    q
}

/// Returns (post-net hidden activations, refined output).
fn postnet(p: &ParamStore, pre: &[f64], t_len: usize, cfg: &AmConfig) -> (Vec<f64>, Vec<f64>) {
    let offs = centered_offsets(POSTNET_KERNEL);
    let (d, q) = (cfg.output_dim, cfg.postnet_channels);
    let c1: Vec<f64> = conv1d_forward(
        pre,
        t_len,
        d,
        p.data("postnet.conv0.weight"),
        p.data("postnet.conv0.bias"),
        q,
        &offs,
    )
    .into_iter()
    .map(f64::tanh)
    .collect();
    let c2 = conv1d_forward(
        &c1,
        t_len,
        q,
        p.data("postnet.conv1.weight"),
        p.data("postnet.conv1.bias"),
        d,
        &offs,
    );
    let post = pre.iter().zip(&c2).map(|(a, b)| a + b).collect();
    (c1, post)
}

fn check_shapes_match(
    roll: &PianoRoll,
    target: &FeatureMatrix,
    cfg: &AmConfig,
) -> Result<(), AmError> {
    if target.dim != cfg.output_dim {
        return Err(AmError::DimensionMismatch(format!(
            "target has {} dimensions, model predicts {}",
            target.dim, cfg.output_dim
        )));
    }
    if roll.n_frames() != target.n_frames {
        return Err(AmError::DimensionMismatch(format!(
            "roll has {} frames, target has {}",
            roll.n_frames(),
            target.n_frames
        )));
    }
    if roll.n_frames() == 0 {
        return Err(AmError::DimensionMismatch("empty sequence".into()));
    }
    Ok(())
}

/// Target padded to a whole number of decoder steps by repeating its last
/// frame.
fn pad_target(target: &FeatureMatrix, padded_frames: usize) -> Vec<f64> {
    let mut out = target.values.clone();
    let last = target.row(target.n_frames - 1).to_vec();
    for _ in target.n_frames..padded_frames {
        out.extend_from_slice(&last);
    }
    out
}

fn wrap(values: Vec<f64>, n: usize, roll: &PianoRoll, cfg: &AmConfig) -> FeatureMatrix {
    let d = cfg.output_dim;
    let mut values = values;
    values.truncate(n * d);
    FeatureMatrix::new(
        values,
        d,
        cfg.output_kind,
        roll.frame_shift,
        roll.sample_rate_hint,
    )
}

#[derive(Debug, Clone)]
pub struct AmOutput {
    /// Post-net output truncated to the roll length.
    pub features: FeatureMatrix,
    pub loss: f64,
    pub grads: ParamStore,
    pub decoder_steps: usize,
}

/// Teacher-forced pass: each step's prenet sees the last target frame of the
/// previous group (zeros at the first step). In `train_mode` the prenet
/// input is masked with inverted dropout drawn from `seed`. The loss is the
/// MSE before plus the MSE after the post-net, over the padded target.
pub fn am_teacher_forced(
    params: &ModelParams,
    roll: &PianoRoll,
    target: &FeatureMatrix,
    cfg: &AmConfig,
    train_mode: bool,
    seed: u64,
) -> Result<AmOutput, AmError> {
    cfg.validate()?;
    check_shapes_match(roll, target, cfg)?;
    let p = &params.tensors;
    let (d, r, e, hd) = (
        cfg.output_dim,
        cfg.reduction_factor(),
        cfg.encoder_channels,
        cfg.decoder_state_dim,
    );
    let enc = encode(p, roll, cfg);
    let steps = enc.steps;
    let t_len = steps * r;
    let tpad = pad_target(target, t_len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = if train_mode { cfg.prenet_dropout } else { 0.0 };

    let mut pre = Vec::with_capacity(t_len * d);
    let mut trace = Vec::with_capacity(steps);
    let mut h = vec![0.0; hd];
    for s in 0..steps {
        let prev = if s == 0 {
            vec![0.0; d]
        } else {
            tpad[(s * r - 1) * d..s * r * d].to_vec()
        };
        let mask = dropout_mask(d, rate, &mut rng);
        let q = prenet_input(
            &prev,
            &mask,
            &enc.inputs[s * NUM_NOTES..(s + 1) * NUM_NOTES],
            cfg,
        );
        let (st, y) = decoder_step(p, q, &enc.output()[s * e..(s + 1) * e], h);
        h = st.h.clone();
        pre.extend(y);
        trace.push(st);
    }
    let (c1, post) = postnet(p, &pre, t_len, cfg);
    let m = (t_len * d) as f64;
    let loss = pre
        .iter()
        .zip(&tpad)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / m
        + post
            .iter()
            .zip(&tpad)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / m;

    let mut g = p.zeros_like();
    let mut grad = |name: &str| g.data_mut(name).to_vec();
    let (mut d_in_w, mut d_in_b) = (grad("input.weight"), grad("input.bias"));
    let mut d_enc_w: Vec<Vec<f64>> = (0..ENCODER_LAYERS)
        .map(|i| grad(&format!("encoder.conv{i}.weight")))
        .collect();
    let mut d_enc_b: Vec<Vec<f64>> = (0..ENCODER_LAYERS)
        .map(|i| grad(&format!("encoder.conv{i}.bias")))
        .collect();
    let (mut d_fc1_w, mut d_fc1_b) = (grad("prenet.fc1.weight"), grad("prenet.fc1.bias"));
    let (mut d_fc2_w, mut d_fc2_b) = (grad("prenet.fc2.weight"), grad("prenet.fc2.bias"));
    let (mut d_ih, mut d_hh, mut d_rb) = (
        grad("decoder.rnn.weight_ih"),
        grad("decoder.rnn.weight_hh"),
        grad("decoder.rnn.bias"),
    );
    let (mut d_out_w, mut d_out_b) = (grad("decoder.out.weight"), grad("decoder.out.bias"));
    let (mut d_pn0_w, mut d_pn0_b) = (grad("postnet.conv0.weight"), grad("postnet.conv0.bias"));
    let (mut d_pn1_w, mut d_pn1_b) = (grad("postnet.conv1.weight"), grad("postnet.conv1.bias"));

    let dpost: Vec<f64> = post
        .iter()
        .zip(&tpad)
        .map(|(a, b)| 2.0 * (a - b) / m)
        .collect();
    let mut dpre: Vec<f64> = pre
        .iter()
        .zip(&tpad)
        .zip(&dpost)
        .map(|((a, b), dp)| 2.0 * (a - b) / m + dp)
        .collect();
    let offs = centered_offsets(POSTNET_KERNEL);
    let q = cfg.postnet_channels;
    let mut dc1 = vec![0.0; t_len * q];
    conv1d_backward(
        &c1,
        t_len,
        q,
        p.data("postnet.conv1.weight"),
        d,
        &offs,
        &dpost,
        &mut dc1,
        &mut d_pn1_w,
        &mut d_pn1_b,
    );
    let dz1: Vec<f64> = dc1
        .iter()
        .zip(&c1)
        .map(|(g, a)| g * (1.0 - a * a))
        .collect();
    conv1d_backward(
        &pre,
        t_len,
        d,
        p.data("postnet.conv0.weight"),
        q,
        &offs,
        &dz1,
        &mut dpre,
        &mut d_pn0_w,
        &mut d_pn0_b,
    );

    let [p1w, p2w] = cfg.prenet_dims;
    let mut denc = vec![0.0; steps * e];
    let mut dh_next = vec![0.0; hd];
    let mut scratch_bias = vec![0.0; hd];
    for s in (0..steps).rev() {
        let st = &trace[s];
        let mut dho = vec![0.0; hd + e];
        dense_backward(
            p.data("decoder.out.weight"),
            &st.ho,
            &dpre[s * r * d..(s + 1) * r * d],
            &mut d_out_w,
            &mut d_out_b,
            &mut dho,
        );
        let da: Vec<f64> = (0..hd)
            .map(|i| (dho[i] + dh_next[i]) * (1.0 - st.h[i] * st.h[i]))
            .collect();
        let denc_s = &mut denc[s * e..(s + 1) * e];
        for (acc, v) in denc_s.iter_mut().zip(&dho[hd..]) {
            *acc += v;
        }
        let mut du = vec![0.0; p2w + e];
        dense_backward(
            p.data("decoder.rnn.weight_ih"),
            &st.u,
            &da,
            &mut d_ih,
            &mut d_rb,
            &mut du,
        );
        let mut dhp = vec![0.0; hd];
        dense_backward(
            p.data("decoder.rnn.weight_hh"),
            &st.h_prev,
            &da,
            &mut d_hh,
            &mut scratch_bias,
            &mut dhp,
        );
        dh_next = dhp;
        for (acc, v) in denc_s.iter_mut().zip(&du[p2w..]) {
            *acc += v;
        }
        let dp2: Vec<f64> = du[..p2w]
            .iter()
            .zip(&st.p2)
            .map(|(g, a)| if *a > 0.0 { *g } else { 0.0 })
            .collect();
        let mut dp1 = vec![0.0; p1w];
        dense_backward(
            p.data("prenet.fc2.weight"),
            &st.p1,
            &dp2,
            &mut d_fc2_w,
            &mut d_fc2_b,
            &mut dp1,
        );
        for (gv, a) in dp1.iter_mut().zip(&st.p1) {
            if *a <= 0.0 {
                *gv = 0.0;
            }
        }
        let mut dq = vec![0.0; st.q.len()];
        dense_backward(
            p.data("prenet.fc1.weight"),
            &st.q,
            &dp1,
            &mut d_fc1_w,
            &mut d_fc1_b,
            &mut dq,
        );
    }

    for i in (0..ENCODER_LAYERS).rev() {
        let dgate: Vec<f64> = denc
            .iter()
            .zip(&enc.acts[i])
            .map(|(g, a)| g * (1.0 - a * a))
            .collect();
        conv1d_backward(
            &enc.hidden[i],
            steps,
            e,
            p.data(&format!("encoder.conv{i}.weight")),
            e,
            &centered_offsets(ENCODER_KERNEL),
            &dgate,
            &mut denc,
            &mut d_enc_w[i],
            &mut d_enc_b[i],
        );
    }
    let mut dx = vec![0.0; NUM_NOTES];
    for s in 0..steps {
        dense_backward(
            p.data("input.weight"),
            &enc.inputs[s * NUM_NOTES..(s + 1) * NUM_NOTES],
            &denc[s * e..(s + 1) * e],
            &mut d_in_w,
            &mut d_in_b,
            &mut dx,
        );
    }

    let mut put = |name: &str, v: Vec<f64>| g.data_mut(name).copy_from_slice(&v);
    put("input.weight", d_in_w);
    put("input.bias", d_in_b);
    for (i, (w, b)) in d_enc_w.into_iter().zip(d_enc_b).enumerate() {
        put(&format!("encoder.conv{i}.weight"), w);
        put(&format!("encoder.conv{i}.bias"), b);
    }
    put("prenet.fc1.weight", d_fc1_w);
    put("prenet.fc1.bias", d_fc1_b);
    put("prenet.fc2.weight", d_fc2_w);
    put("prenet.fc2.bias", d_fc2_b);
    put("decoder.rnn.weight_ih", d_ih);
    put("decoder.rnn.weight_hh", d_hh);
    put("decoder.rnn.bias", d_rb);
    put("decoder.out.weight", d_out_w);
    put("decoder.out.bias", d_out_b);
    put("postnet.conv0.weight", d_pn0_w);
    put("postnet.conv0.bias", d_pn0_b);
    put("postnet.conv1.weight", d_pn1_w);
    put("postnet.conv1.bias", d_pn1_b);

    Ok(AmOutput {
        features: wrap(post, roll.n_frames(), roll, cfg),
        loss,
        grads: g,
        decoder_steps: steps,
    })
}

/// Free-running generation: each step's prenet sees the last pre-post-net
/// frame the decoder produced. Prenet dropout stays active when `dropout`
/// is set. Output has exactly as many frames as the roll.
pub fn am_generate(
    params: &ModelParams,
    roll: &PianoRoll,
    cfg: &AmConfig,
    seed: u64,
    dropout: bool,
) -> Result<FeatureMatrix, AmError> {
    cfg.validate()?;
    let p = &params.tensors;
    let (d, r, e) = (cfg.output_dim, cfg.reduction_factor(), cfg.encoder_channels);
    let n = roll.n_frames();
    if n == 0 {
        return Ok(FeatureMatrix::new(
            vec![],
            d,
            cfg.output_kind,
            roll.frame_shift,
            roll.sample_rate_hint,
        ));
    }
    let enc = encode(p, roll, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = if dropout { cfg.prenet_dropout } else { 0.0 };
    let mut pre: Vec<f64> = Vec::with_capacity(enc.steps * r * d);
    let mut h = vec![0.0; cfg.decoder_state_dim];
    for s in 0..enc.steps {
        let prev = if s == 0 {
            vec![0.0; d]
        } else {
            pre[pre.len() - d..].to_vec()
        };
        let mask = dropout_mask(d, rate, &mut rng);
        let q = prenet_input(
            &prev,
            &mask,
            &enc.inputs[s * NUM_NOTES..(s + 1) * NUM_NOTES],
            cfg,
        );
        let (st, y) = decoder_step(p, q, &enc.output()[s * e..(s + 1) * e], h);
        h = st.h;
        pre.extend(y);
    }
    let (_, post) = postnet(p, &pre, enc.steps * r, cfg);
    Ok(wrap(post, n, roll, cfg))
}

/// One aligned training pair.
#[derive(Debug, Clone)]
pub struct AmExample {
    pub roll: PianoRoll,
    pub target: FeatureMatrix,
}

/// Cuts a pair into consecutive pieces of at most `segment_frames` frames.
pub fn split_segments(example: &AmExample, segment_frames: usize) -> Vec<AmExample> {
    let n = example.roll.n_frames().min(example.target.n_frames);
    let seg = segment_frames.max(1);
    let t = &example.target;
    (0..n)
        .step_by(seg)
        .map(|start| {
            let end = (start + seg).min(n);
            AmExample {
                roll: PianoRoll::from_values(
                    example.roll.values()[start * NUM_NOTES..end * NUM_NOTES].to_vec(),
                    example.roll.frame_shift,
                    example.roll.sample_rate_hint,
                ),
                target: FeatureMatrix::new(
                    t.values[start * t.dim..end * t.dim].to_vec(),
                    t.dim,
                    t.kind,
                    t.frame_shift,
                    t.sample_rate,
                ),
            }
        })
        .collect()
}

/// Adam over shuffled mini-batches of teacher-forced passes with prenet
/// dropout active. Each item's dropout seed is drawn from the training
/// generator, so a seed fixes the whole run.
pub fn am_train(
    mut params: ModelParams,
    dataset: &[AmExample],
    cfg: &AmConfig,
    train: &TrainConfig,
) -> Result<TrainOutcome, AmError> {
    if dataset.is_empty() {
        return Err(AmError::EmptyDataset);
    }
    train.validate().map_err(AmError::InvalidConfig)?;
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
                let out =
                    am_teacher_forced(&params, &ex.roll, &ex.target, cfg, true, rng.next_u64())?;
                acc.add_assign(&out.grads);
                loss += out.loss;
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

pub fn epoch_checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("am_epoch{epoch:03}.ckpt"))
}

/// Initializes `cfg`'s model from taco2 weights. Tensors whose names and
/// shapes agree are copied. The taco3 prenet input layer gains zero columns
/// for the roll frame. When the reduction factors differ, each output frame
/// slot of the decoder projection copies the matching taco2 slot (the last
/// one when the new factor is larger). Returns the parameters and the names
/// of tensors that had to be adapted.
pub fn warm_start(
    source: &ModelParams,
    source_cfg: &AmConfig,
    cfg: &AmConfig,
) -> Result<(ModelParams, Vec<String>), AmError> {
    if source_cfg.variant != AmVariant::Taco2 {
        return Err(AmError::InvalidConfig(
            "warm start expects a taco2 source".into(),
        ));
    }
    cfg.validate()?;
    let (d, r_old, r_new) = (
        cfg.output_dim,
        source_cfg.reduction_factor(),
        cfg.reduction_factor(),
    );
    let mut fresh = zero_params(cfg).tensors;
    let mut adapted = vec![];
    let names: Vec<String> = fresh.names().map(str::to_string).collect();
    for name in names {
        let src = source
            .tensors
            .get(&name)
            .ok_or_else(|| AmError::DimensionMismatch(format!("taco2 checkpoint lacks {name}")))?;
        let dst = fresh.get_mut(&name).unwrap();
        if src.shape == dst.shape {
            dst.data.copy_from_slice(&src.data);
            continue;
        }
        let cols_new = *dst.shape.last().unwrap();
        match name.as_str() {
            "prenet.fc1.weight"
                if cfg.variant == AmVariant::Taco3 && src.shape[0] == dst.shape[0] =>
            {
                let cols_old = src.shape[1];
                for row in 0..dst.shape[0] {
                    dst.data[row * cols_new..row * cols_new + cols_old]
                        .copy_from_slice(&src.data[row * cols_old..(row + 1) * cols_old]);
                }
            }
            "decoder.out.weight" | "decoder.out.bias" if src.shape[0] == r_old * d => {
                let width = if name.ends_with("weight") {
                    cols_new
                } else {
                    1
                };
                if src.shape.len() == 2 && src.shape[1] != cols_new {
                    return Err(AmError::DimensionMismatch(format!(
                        "{name}: {:?} vs {:?}",
                        src.shape, dst.shape
                    )));
                }
                for slot in 0..r_new {
                    let from = slot.min(r_old - 1);
                    dst.data[slot * d * width..(slot + 1) * d * width]
                        .copy_from_slice(&src.data[from * d * width..(from + 1) * d * width]);
                }
            }
            _ => {
                return Err(AmError::DimensionMismatch(format!(
                    "{name}: taco2 has {:?}, {} needs {:?}",
                    src.shape,
                    cfg.variant.name(),
                    dst.shape
                )))
            }
        }
        adapted.push(name);
    }
    Ok((ModelParams::new(fresh), adapted))
}

pub fn encode_am_checkpoint(params: &ModelParams, cfg: &AmConfig) -> Vec<u8> {
    io::encode_checkpoint(AM_MAGIC, &cfg.config_block(), params)
}

pub fn decode_am_checkpoint(
    bytes: &[u8],
    expected: Option<&AmConfig>,
) -> Result<(ModelParams, AmConfig), IoError> {
    let contents = io::decode_checkpoint(bytes, AM_MAGIC, CONFIG_WORDS)?;
    let stored = AmConfig::from_config_block(&contents.config)?;
    if let Some(cfg) = expected {
        if cfg.config_block() != stored.config_block() {
            return Err(IoError::CorruptCheckpoint(format!(
                "configuration mismatch: expected {cfg:?}, checkpoint has {stored:?}"
            )));
        }
    }
    io::check_shapes(&zero_params(&stored).tensors, &contents.params.tensors)?;
    Ok((contents.params, stored))
}

pub fn save_checkpoint(params: &ModelParams, cfg: &AmConfig, path: &Path) -> Result<(), IoError> {
    std::fs::write(path, encode_am_checkpoint(params, cfg)).map_err(|e| IoError::io(path, e))
}

pub fn load_checkpoint(
    path: &Path,
    expected: Option<&AmConfig>,
) -> Result<(ModelParams, AmConfig), IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    decode_am_checkpoint(&bytes, expected)
}
