//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs as a plain binary so the report is always printed.

use std::f64::consts::TAU;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use m2a_core::acoustic::{self, am_teacher_forced, am_train, AmConfig, AmExample, AmVariant};
use m2a_core::dsp::{
    extract_features, griffin_lim_with_history, istft, midi_center_freq, midi_filter_bank, stft,
    FeatureKind, FeatureMatrix, LossConfig, StftConfig, WaveSignal, HOP,
};
use m2a_core::evaluation::{
    holm_bonferroni, mann_whitney_u, pitch_cross_entropy, pitch_probability, probe_set,
};
use m2a_core::excitation::sine_excitation;
use m2a_core::gradcheck::{central_differences, max_rel_err};
use m2a_core::io::{decode_features, encode_features};
use m2a_core::midi_io::{
    roll_to_notes, to_piano_roll, NoteEvent, NoteEventList, PianoRoll, NUM_NOTES,
};
use m2a_core::nn::{ModelParams, TrainConfig};
use m2a_core::nsf::{
    self, decode_nsf_checkpoint, encode_nsf_checkpoint, nsf_backward, nsf_forward, nsf_train,
    NsfConfig, NsfExample,
};
use m2a_core::pipeline::{
    synth_abs, synth_am_nsf, synth_direct, AmModel, ExcitationKind, NsfModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn note(pitch: u8, onset: f64, offset: f64, vel: u8) -> NoteEvent {
    NoteEvent::new(pitch, onset, offset, vel).unwrap()
}

fn random_notes(seed: u64, duration: f64) -> NoteEventList {
    let mut r = rng(seed);
    let count = r.random_range(1..6);
    let notes = (0..count)
        .map(|_| {
            let onset = r.random_range(0.0..duration * 0.8);
            let offset = (onset + r.random_range(0.05..0.5)).min(duration);
            note(
                r.random_range(40..100),
                onset,
                offset,
                r.random_range(20..128),
            )
        })
        .collect();
    NoteEventList::new(notes, duration)
}

fn eq1_frequency() -> Outcome {
    let f69 = midi_center_freq(69).unwrap();
    ensure(f69 == 440.0, || format!("note 69 gives {f69} Hz"))?;
    for d in 0..=115u8 {
        let (lo, hi) = (
            midi_center_freq(d).unwrap(),
            midi_center_freq(d + 12).unwrap(),
        );
        let rel = (hi - 2.0 * lo).abs() / (2.0 * lo);
        ensure(rel <= 1e-9, || {
            format!("octave identity off by {rel:e} at note {d}")
        })?;
    }
    let c4 = midi_center_freq(60).unwrap();
    let rel = (c4 - 261.6255653).abs() / 261.6255653;
    ensure(rel <= 1e-6, || format!("note 60 gives {c4} Hz"))?;
    Ok(format!("note 60 = {c4:.7} Hz"))
}

fn filter_bank_emptiness() -> Outcome {
    let cfg = StftConfig::canonical();
    let fb = midi_filter_bank(&cfg);
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let center = |k: i32| 440.0 * 2f64.powf((k as f64 - 69.0) / 12.0);
    // a filter is nonempty iff some bin lies strictly inside its support
    // (or on the center of a half triangle at either end of the bank)
    let oracle: Vec<usize> = (0..NUM_NOTES as i32)
        .filter(|&k| {
            let c = center(k);
            if c > nyquist {
                return true;
            }
            let lo = if k == 0 { c } else { center(k - 1) };
            let hi = if k == 127 { c } else { center(k + 1) };
            !(0..cfg.n_bins()).any(|i| {
                let f = cfg.bin_freq(i);
                (f > lo && f < hi) || f == c
            })
        })
        .map(|k| k as usize)
        .collect();
    let empty = fb.empty_rows();
    ensure(empty == oracle, || {
        format!("empty rows {empty:?}, oracle {oracle:?}")
    })?;
    let low: Vec<usize> = empty
        .iter()
        .copied()
        .filter(|&k| center(k as i32) <= nyquist)
        .collect();
    ensure(!low.is_empty(), || "no empty filters".into())?;
    let cutoff = *low.last().unwrap();
    let resolved_below = (0..cutoff).filter(|k| !low.contains(k)).count();
    Ok(format!(
        "{} empty rows, none above note {} ({} nonempty interleaved below), above-Nyquist rows {:?}",
        low.len(),
        cutoff,
        resolved_below,
        empty.iter().filter(|&&k| center(k as i32) > nyquist).collect::<Vec<_>>()
    ))
}

fn length_contract() -> Outcome {
    let nsf_cfg = NsfConfig {
        n_blocks: 1,
        convs_per_block: 3,
        channels: 4,
        ..NsfConfig::default()
    };
    let nsf = NsfModel {
        params: nsf::init_params(&nsf_cfg, 1),
        cfg: nsf_cfg,
    };
    let am_cfg = AmConfig {
        encoder_channels: 16,
        decoder_state_dim: 16,
        prenet_dims: [32, 16],
        postnet_channels: 16,
        ..AmConfig::new(AmVariant::Taco3, 128)
    };
    let am = AmModel {
        params: acoustic::init_params(&am_cfg, 2),
        cfg: am_cfg,
    };
    let fb = midi_filter_bank(&StftConfig::canonical());
    let mut checked = 0;
    for seed in 0..20u64 {
        let duration = rng(seed + 100).random_range(0.1..1.5);
        let notes = random_notes(seed, duration);
        let roll = to_piano_roll(&notes, 0.012);
        let n = roll.n_frames();
        let natural = sine_excitation(&notes, 24_000, 1.0).unwrap();
        let feats = extract_features(&natural, &fb, &StftConfig::canonical()).unwrap();
        ensure(feats.n_frames == n, || {
            format!("seed {seed}: features {} vs roll {n}", feats.n_frames)
        })?;
        for kind in [ExcitationKind::Sine, ExcitationKind::Noise] {
            let outs = [
                ("abs", synth_abs(&nsf, &feats, &notes, kind, seed)),
                ("am+nsf", synth_am_nsf(&am, &nsf, &roll, &notes, kind, seed)),
                ("direct", synth_direct(&nsf, &roll, &notes, kind, seed)),
            ];
            for (mode, out) in outs {
                let len = out.map_err(|e| format!("{mode}: {e}"))?.len();
                ensure(len == n * HOP, || {
                    format!("seed {seed} {mode} {kind:?}: {len} != {}", n * HOP)
                })?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} syntheses, all N·288"))
}

fn zero_filter_identity() -> Outcome {
    let cfg = NsfConfig::default();
    let mut params = nsf::init_params(&cfg, 3);
    for (name, t) in params.tensors.iter_mut() {
        if name.contains(".out.") {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut r = rng(4);
    let n = 30;
    let feats = FeatureMatrix::new(
        (0..n * 128).map(|_| r.random_range(-5.0..1.0)).collect(),
        128,
        FeatureKind::MidiFb,
        0.012,
        24_000.0,
    );
    let exc = WaveSignal::new(
        (0..n * HOP).map(|_| r.random_range(-1.0..1.0)).collect(),
        24_000,
    );
    let out = nsf_forward(&params, &feats, &exc, &cfg).map_err(|e| e.to_string())?;
    ensure(out.samples == exc.samples, || {
        "output differs from excitation".into()
    })?;
    Ok(format!("{} samples bit-exact", out.len()))
}

fn nsf_gradient_error() -> f64 {
    let cfg = NsfConfig {
        feature_dim: 3,
        upsample_factor: 8,
        n_blocks: 2,
        convs_per_block: 2,
        channels: 3,
        kernel: 3,
    };
    let mut params = nsf::init_params(&cfg, 7);
    let mut r = rng(8);
    for (name, t) in params.tensors.iter_mut() {
        if name.contains(".out.") {
            t.data
                .iter_mut()
                .for_each(|v| *v = r.random_range(-0.3..0.3));
        }
    }
    let feats = FeatureMatrix::new(
        (0..12).map(|_| r.random_range(-1.0..1.0)).collect(),
        3,
        FeatureKind::MidiFb,
        0.012,
        24_000.0,
    );
    let exc = WaveSignal::new((0..32).map(|_| r.random_range(-0.5..0.5)).collect(), 24_000);
    let target = WaveSignal::new((0..32).map(|_| r.random_range(-0.1..0.1)).collect(), 24_000);
    let loss = LossConfig::single(StftConfig::square(24_000, 16, 4));
    let analytic = nsf_backward(&params, &feats, &exc, &target, &cfg, &loss)
        .unwrap()
        .grads
        .flatten();
    let numeric = central_differences(&params.tensors.flatten(), 1e-4, |x| {
        let mut p = params.clone();
        p.tensors.assign_flat(x);
        nsf_backward(&p, &feats, &exc, &target, &cfg, &loss)
            .unwrap()
            .loss
    });
    max_rel_err(&analytic, &numeric)
}

fn am_gradient_error(variant: AmVariant, r: usize) -> f64 {
    let cfg = AmConfig {
        variant,
        input_dim: NUM_NOTES,
        output_dim: 3,
        downsample_factor: r,
        prenet_dropout: 0.5,
        encoder_channels: 4,
        decoder_state_dim: 4,
        prenet_dims: [5, 4],
        postnet_channels: 3,
        output_kind: FeatureKind::MidiFb,
    };
    let params = acoustic::init_params(&cfg, 3);
    let mut g = rng(4);
    let mut roll = PianoRoll::zeros(7, 0.012, 24_000.0);
    for f in 0..7 {
        for k in 55..75 {
            if g.random::<f64>() < 0.3 {
                roll.set(f, k, g.random_range(0.2..1.0));
            }
        }
    }
    let target = FeatureMatrix::new(
        (0..21).map(|_| g.random_range(-1.0..1.0)).collect(),
        3,
        FeatureKind::MidiFb,
        0.012,
        24_000.0,
    );
    let analytic = am_teacher_forced(&params, &roll, &target, &cfg, true, 9)
        .unwrap()
        .grads
        .flatten();
    let numeric = central_differences(&params.tensors.flatten(), 1e-4, |x| {
        let mut p = params.clone();
        p.tensors.assign_flat(x);
        am_teacher_forced(&p, &roll, &target, &cfg, true, 9)
            .unwrap()
            .loss
    });
    max_rel_err(&analytic, &numeric)
}

fn gradient_correctness() -> Outcome {
    let nsf_err = nsf_gradient_error();
    ensure(nsf_err < 1e-4, || {
        format!("NSF max relative error {nsf_err:e}")
    })?;
    let mut report = format!("nsf {nsf_err:.1e}");
    for (variant, r) in [
        (AmVariant::Taco2, 2),
        (AmVariant::Taco3, 4),
        (AmVariant::Taco4, 1),
    ] {
        let err = am_gradient_error(variant, r);
        ensure(err < 1e-4, || {
            format!("{} max relative error {err:e}", variant.name())
        })?;
        report.push_str(&format!(", {} {err:.1e}", variant.name()));
    }
    Ok(report)
}

/// A decaying harmonic tone standing in for a recorded piano note.
fn toy_piano(pitch: u8, seconds: f64) -> WaveSignal {
    let f0 = midi_center_freq(pitch).unwrap();
    let n = (seconds * 24_000.0).round() as usize;
    WaveSignal::new(
        (0..n)
            .map(|i| {
                let t = i as f64 / 24_000.0;
                let partials: f64 = (1..=4)
                    .map(|h| (TAU * h as f64 * f0 * t).sin() / h as f64)
                    .sum();
                0.4 * (-4.0 * t).exp() * partials
            })
            .collect(),
        24_000,
    )
}

const NSF_TOY_LR: f64 = 1e-3;
const AM_TOY_LR: f64 = 1e-3;

fn toy_overfit_nsf() -> Result<(f64, f64), String> {
    let cfg = NsfConfig::default();
    let canonical = StftConfig::canonical();
    let notes = NoteEventList::new(vec![note(60, 0.0, 0.5, 100)], 0.5);
    let natural = toy_piano(60, 0.5);
    let features = extract_features(&natural, &midi_filter_bank(&canonical), &canonical)
        .map_err(|e| e.to_string())?;
    let len = features.n_frames * HOP;
    let example = NsfExample {
        excitation: sine_excitation(&notes, 24_000, 1.0).unwrap().fit_to(len),
        target: natural.fit_to(len),
        features,
    };
    let loss_cfg = LossConfig::default_for(24_000);
    let train = TrainConfig {
        learning_rate: NSF_TOY_LR,
        batch_size: 1,
        max_epochs: 200,
        max_steps: Some(200),
        ..TrainConfig::nsf_default()
    };
    let params = nsf::init_params(&cfg, 0);
    let out = nsf_train(
        params,
        std::slice::from_ref(&example),
        &cfg,
        &loss_cfg,
        &train,
    )
    .map_err(|e| e.to_string())?;
    let last = nsf_backward(
        &out.params,
        &example.features,
        &example.excitation,
        &example.target,
        &cfg,
        &loss_cfg,
    )
    .map_err(|e| e.to_string())?
    .loss;
    Ok((out.history[0], last))
}

fn toy_overfit_am() -> Result<(f64, f64), String> {
    let cfg = AmConfig {
        prenet_dropout: 0.0,
        ..AmConfig::new(AmVariant::Taco2, 128)
    };
    let canonical = StftConfig::canonical();
    let notes = NoteEventList::new(
        vec![
            note(60, 0.0, 0.4, 100),
            note(64, 0.2, 0.6, 90),
            note(67, 0.4, 0.9, 80),
        ],
        1.0,
    );
    let roll = to_piano_roll(&notes, 0.012);
    let audio = sine_excitation(&notes, 24_000, 1.0).unwrap();
    let target = extract_features(&audio, &midi_filter_bank(&canonical), &canonical)
        .map_err(|e| e.to_string())?;
    let example = AmExample { roll, target };
    let train = TrainConfig {
        learning_rate: AM_TOY_LR,
        batch_size: 1,
        max_epochs: 300,
        max_steps: Some(300),
        ..TrainConfig::am_default()
    };
    let params = acoustic::init_params(&cfg, 0);
    let out = am_train(params, std::slice::from_ref(&example), &cfg, &train)
        .map_err(|e| e.to_string())?;
    let last = am_teacher_forced(&out.params, &example.roll, &example.target, &cfg, false, 0)
        .map_err(|e| e.to_string())?
        .loss;
    Ok((out.history[0], last))
}

fn toy_overfit() -> Outcome {
    let (n0, n1) = toy_overfit_nsf()?;
    let (a0, a1) = toy_overfit_am()?;
    let report = format!(
        "nsf {n0:.4} -> {n1:.4} ({:.1}%), am {a0:.4} -> {a1:.4} ({:.1}%)",
        100.0 * n1 / n0,
        100.0 * a1 / a0
    );
    ensure(n1 <= 0.5 * n0, || format!("NSF above 50%: {report}"))?;
    ensure(a1 <= 0.25 * a0, || {
        format!("acoustic model above 25%: {report}")
    })?;
    Ok(report)
}

fn griffin_lim_monotone() -> Outcome {
    let cfg = StftConfig::canonical();
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let mut r = rng(seed);
        let frames = r.random_range(5..30);
        let mag: Vec<f64> = (0..frames * cfg.n_bins())
            .map(|_| r.random_range(0.0..1.0))
            .collect();
        let (_, history) = griffin_lim_with_history(&mag, &cfg, 32).map_err(|e| e.to_string())?;
        for (i, w) in history.windows(2).enumerate() {
            worst = worst.max(w[1] - w[0]);
            ensure(w[1] <= w[0] + 1e-6, || {
                format!("seed {seed}: error rose {} -> {} at {}", w[0], w[1], i + 1)
            })?;
        }
    }
    Ok(format!(
        "10 inputs x 32 iterations, largest increase {worst:.1e}"
    ))
}

fn pitch_ce_ordering() -> Outcome {
    let cfg = StftConfig::canonical();
    let mut margin = f64::INFINITY;
    for probe in probe_set(2024, 10, 10) {
        let audio = sine_excitation(&probe.notes, 24_000, 1.0).unwrap();
        let p = pitch_probability(&audio, &cfg).map_err(|e| e.to_string())?;
        let matched = pitch_cross_entropy(&p, &to_piano_roll(&probe.notes, 0.012), false)
            .map_err(|e| e.to_string())?;
        let shifted =
            pitch_cross_entropy(&p, &to_piano_roll(&probe.notes.transposed(2), 0.012), false)
                .map_err(|e| e.to_string())?;
        ensure(matched.ce < shifted.ce, || {
            format!(
                "{}: matched {} >= transposed {}",
                probe.name, matched.ce, shifted.ce
            )
        })?;
        margin = margin.min(shifted.ce - matched.ce);
    }
    Ok(format!("20 probes, smallest CE gap {margin:.3} nats"))
}

/// Exhaustive rank-labeling p-value, independent of the library.
fn enumeration_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let rank = |v: f64| 1.0 + pooled.iter().filter(|&&x| x < v).count() as f64;
    let ranks: Vec<f64> = pooled.iter().map(|&v| rank(v)).collect();
    let na = a.len();
    let u = |mask: u32| {
        (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| ranks[i])
            .sum::<f64>()
            - (na * (na + 1) / 2) as f64
    };
    let observed = u((1 << na) - 1);
    let all: Vec<f64> = (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == na)
        .map(u)
        .collect();
    let le = all.iter().filter(|&&v| v <= observed).count() as f64 / all.len() as f64;
    let ge = all.iter().filter(|&&v| v >= observed).count() as f64 / all.len() as f64;
    (2.0 * le.min(ge)).min(1.0)
}

/// Definitional Holm step-down, independent of the library.
fn holm_oracle(p: &[f64], alpha: f64) -> Vec<bool> {
    let m = p.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&i, &j| p[i].partial_cmp(&p[j]).unwrap());
    let mut reject = vec![false; m];
    for (k, &i) in idx.iter().enumerate() {
        if p[i] > alpha / (m - k) as f64 {
            break;
        }
        reject[i] = true;
    }
    reject
}

fn statistics_oracle() -> Outcome {
    let mut cases = 0;
    for n in 2..=10usize {
        for na in 1..n {
            for mask in (0u32..1 << n).filter(|m| m.count_ones() as usize == na) {
                let a: Vec<f64> = (0..n)
                    .filter(|i| mask >> i & 1 == 1)
                    .map(|i| i as f64)
                    .collect();
                let b: Vec<f64> = (0..n)
                    .filter(|i| mask >> i & 1 == 0)
                    .map(|i| i as f64)
                    .collect();
                let got = mann_whitney_u(&a, &b).map_err(|e| e.to_string())?;
                let want = enumeration_p(&a, &b);
                ensure(got.exact && (got.p - want).abs() < 1e-12, || {
                    format!("a={a:?} b={b:?}: p {} vs oracle {want}", got.p)
                })?;
                cases += 1;
            }
        }
    }
    let mut r = rng(9);
    for trial in 0..1000 {
        let m = r.random_range(1..=20);
        let p: Vec<f64> = (0..m)
            .map(|_| {
                if r.random::<bool>() {
                    r.random_range(0.0..0.01)
                } else {
                    r.random::<f64>()
                }
            })
            .collect();
        let got = holm_bonferroni(&p, 0.05).map_err(|e| e.to_string())?;
        ensure(got.reject == holm_oracle(&p, 0.05), || {
            format!("Holm mismatch on vector {trial}: {p:?}")
        })?;
    }
    let worked = mann_whitney_u(&[3.2, 3.5, 3.8], &[2.1, 2.2]).map_err(|e| e.to_string())?;
    ensure(worked.u_a == 6.0 && (worked.p - 0.2).abs() < 1e-12, || {
        format!("worked example gave {worked:?}")
    })?;
    Ok(format!(
        "{cases} exact splits, 1000 Holm vectors, worked example U=6 p=0.2"
    ))
}

fn round_trips() -> Outcome {
    let shift = 0.012;
    for seed in 0..20u64 {
        let mut r = rng(seed);
        let frames = 200;
        let mut notes = vec![];
        for pitch in [40u8, 52, 64, 76, 88] {
            let mut f = r.random_range(0..20usize);
            while f + 2 < frames {
                let len = r.random_range(1..30).min(frames - f);
                notes.push(note(
                    pitch,
                    f as f64 * shift,
                    (f + len) as f64 * shift,
                    r.random_range(1..128),
                ));
                f += len + r.random_range(1..20);
            }
        }
        let list = NoteEventList::new(notes, frames as f64 * shift);
        let back = roll_to_notes(&to_piano_roll(&list, shift));
        ensure(back.notes == list.notes, || {
            format!("seed {seed}: notes changed in roll round trip")
        })?;
    }

    let cfg = StftConfig::canonical();
    let mut r = rng(1);
    let x = WaveSignal::new(
        (0..24_000).map(|_| r.random_range(-1.0..1.0)).collect(),
        24_000,
    );
    let y = istft(&stft(&x, &cfg).unwrap(), &cfg).unwrap();
    let (lo, hi) = (cfg.frame_length, x.len() - cfg.frame_length);
    let num: f64 = (lo..hi)
        .map(|i| (x.samples[i] - y.samples[i]).powi(2))
        .sum();
    let den: f64 = (lo..hi).map(|i| x.samples[i].powi(2)).sum();
    let rel = (num / den).sqrt();
    ensure(rel < 1e-6, || {
        format!("STFT round trip relative error {rel:e}")
    })?;

    let nsf_cfg = NsfConfig::default();
    let bytes = encode_nsf_checkpoint(&nsf::init_params(&nsf_cfg, 5), &nsf_cfg);
    let (params, cfg2) =
        decode_nsf_checkpoint(&bytes, Some(&nsf_cfg)).map_err(|e| e.to_string())?;
    ensure(encode_nsf_checkpoint(&params, &cfg2) == bytes, || {
        "NSF checkpoint bytes differ".into()
    })?;
    let am_cfg = AmConfig::new(AmVariant::Taco3, 128);
    let am_params: ModelParams = acoustic::init_params(&am_cfg, 5);
    let am_bytes = acoustic::encode_am_checkpoint(&am_params, &am_cfg);
    let (p2, c2) =
        acoustic::decode_am_checkpoint(&am_bytes, Some(&am_cfg)).map_err(|e| e.to_string())?;
    ensure(acoustic::encode_am_checkpoint(&p2, &c2) == am_bytes, || {
        "acoustic checkpoint bytes differ".into()
    })?;

    let feats = extract_features(&x, &midi_filter_bank(&cfg), &cfg).unwrap();
    let fbytes = encode_features(&feats);
    let decoded = decode_features(&fbytes).map_err(|e| e.to_string())?;
    ensure(encode_features(&decoded) == fbytes, || {
        "feature file bytes differ".into()
    })?;
    Ok(format!(
        "20 rolls exact, STFT error {rel:.1e}, checkpoints and feature file byte-exact"
    ))
}

fn mean_spectrum(wave: &WaveSignal, cfg: &StftConfig) -> Vec<f64> {
    let spec = stft(wave, cfg).unwrap();
    let mags = spec.magnitudes();
    let mut out = vec![0.0; spec.n_bins];
    for n in 4..spec.n_frames - 4 {
        for (o, m) in out
            .iter_mut()
            .zip(&mags[n * spec.n_bins..(n + 1) * spec.n_bins])
        {
            *o += m;
        }
    }
    out
}

fn nearest_bin(f: f64, cfg: &StftConfig) -> usize {
    (f * cfg.fft_size as f64 / cfg.sample_rate as f64).round() as usize
}

fn sine_spectra() -> Outcome {
    let cfg = StftConfig::canonical();
    let mut count = 0;
    for pitch in 21..=108u8 {
        let notes = NoteEventList::new(vec![note(pitch, 0.0, 0.5, 100)], 0.5);
        let spectrum = mean_spectrum(&sine_excitation(&notes, 24_000, 1.0).unwrap(), &cfg);
        let peak = (0..spectrum.len())
            .max_by(|&a, &b| spectrum[a].total_cmp(&spectrum[b]))
            .unwrap();
        let want = nearest_bin(midi_center_freq(pitch).unwrap(), &cfg);
        ensure(peak == want, || {
            format!("note {pitch}: peak bin {peak}, expected {want}")
        })?;
        count += 1;
    }
    let triad = NoteEventList::new(
        vec![
            note(60, 0.0, 0.5, 100),
            note(64, 0.0, 0.5, 100),
            note(67, 0.0, 0.5, 100),
        ],
        0.5,
    );
    let spectrum = mean_spectrum(&sine_excitation(&triad, 24_000, 1.0).unwrap(), &cfg);
    let top = spectrum.iter().copied().fold(0.0, f64::max);
    for pitch in [60u8, 64, 67] {
        let b = nearest_bin(midi_center_freq(pitch).unwrap(), &cfg);
        let is_peak = spectrum[b] >= spectrum[b - 1]
            && spectrum[b] >= spectrum[b + 1]
            && spectrum[b] > 0.5 * top;
        ensure(is_peak, || {
            format!("triad lacks a peak for note {pitch} at bin {b}")
        })?;
    }
    Ok(format!(
        "{count} single notes on their nearest bin, C major triad shows 3 peaks"
    ))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            id: 1,
            name: "note frequency formula",
            budget: Duration::from_secs(1),
            run: eq1_frequency,
        },
        Criterion {
            id: 2,
            name: "MIDI filter bank emptiness",
            budget: Duration::from_secs(1),
            run: filter_bank_emptiness,
        },
        Criterion {
            id: 3,
            name: "T = N*L length contract",
            budget: Duration::from_secs(60),
            run: length_contract,
        },
        Criterion {
            id: 4,
            name: "NSF zero-filter identity",
            budget: Duration::from_secs(1),
            run: zero_filter_identity,
        },
        Criterion {
            id: 5,
            name: "gradient correctness",
            budget: Duration::from_secs(120),
            run: gradient_correctness,
        },
        Criterion {
            id: 6,
            name: "toy overfit",
            budget: Duration::from_secs(600),
            run: toy_overfit,
        },
        Criterion {
            id: 7,
            name: "Griffin-Lim monotonicity",
            budget: Duration::from_secs(60),
            run: griffin_lim_monotone,
        },
        Criterion {
            id: 8,
            name: "pitch CE ordering",
            budget: Duration::from_secs(120),
            run: pitch_ce_ordering,
        },
        Criterion {
            id: 9,
            name: "statistics oracle",
            budget: Duration::from_secs(60),
            run: statistics_oracle,
        },
        Criterion {
            id: 10,
            name: "round trips",
            budget: Duration::from_secs(60),
            run: round_trips,
        },
        Criterion {
            id: 11,
            name: "sine excitation spectra",
            budget: Duration::from_secs(60),
            run: sine_spectra,
        },
    ];
    let only: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for c in criteria
        .iter()
        .filter(|c| only.is_empty() || only.contains(&c.id))
    {
        let start = Instant::now();
        let result = (c.run)();
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > c.budget => {
                Err(format!("{detail}; exceeded {:?} budget", c.budget))
            }
            other => other,
        };
        let (status, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!(
            "criterion {:>2} {status} {} [{:.2}s]: {detail}",
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
        failed += result.is_err() as usize;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
