use super::stft::StftPlan;
use super::{DspError, StftConfig, WaveSignal, LOG_FLOOR};

/// Resolutions and scale of the multi-resolution STFT loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub resolutions: Vec<StftConfig>,
    pub scale: f64,
}

impl LossConfig {
    /// FFT 512/1024/2048 with hops 128/256/512.
    pub fn default_for(sample_rate: u32) -> Self {
        Self {
            resolutions: [(512, 128), (1024, 256), (2048, 512)]
                .into_iter()
                .map(|(fft, hop)| StftConfig::square(sample_rate, fft, hop))
                .collect(),
            scale: 1.0,
        }
    }

    pub fn single(cfg: StftConfig) -> Self {
        Self {
            resolutions: vec![cfg],
            scale: 1.0,
        }
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::default_for(super::SAMPLE_RATE)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    /// dLoss/dpred, one entry per sample.
    pub grad: Vec<f64>,
}

/// Mean over resolutions of spectral convergence plus mean absolute
/// log-magnitude difference, on magnitudes floored at 1e-5, with its
/// analytic gradient with respect to the predicted samples.
pub fn mr_stft_loss(
    pred: &WaveSignal,
    target: &WaveSignal,
    cfg: &LossConfig,
) -> Result<LossValue, DspError> {
    if pred.len() != target.len() {
        return Err(DspError::LengthMismatch(pred.len(), target.len()));
    }
    if pred.sample_rate != target.sample_rate {
        return Err(DspError::SampleRateMismatch {
            expected: target.sample_rate,
            found: pred.sample_rate,
        });
    }
    if cfg.resolutions.is_empty() {
        return Err(DspError::InvalidConfig("no loss resolutions".into()));
    }
    let plans = cfg
        .resolutions
        .iter()
        .map(StftPlan::new)
        .collect::<Result<Vec<_>, _>>()?;
    let weight = cfg.scale / plans.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for plan in &plans {
        let sp = plan.analyze(&pred.samples);
        let st = plan.analyze(&target.samples);
        let raw_p = sp.magnitudes();
        let mp: Vec<f64> = raw_p.iter().map(|m| m.max(LOG_FLOOR)).collect();
        let mt: Vec<f64> = st
            .magnitudes()
            .into_iter()
            .map(|m| m.max(LOG_FLOOR))
            .collect();
        let count = mp.len().max(1) as f64;

        let diff_norm = mt
            .iter()
            .zip(&mp)
            .map(|(t, p)| (t - p).powi(2))
            .sum::<f64>()
            .sqrt();
        let target_norm = mt.iter().map(|t| t * t).sum::<f64>().sqrt();
        let sc = if target_norm > 0.0 {
            diff_norm / target_norm
        } else {
            0.0
        };
        let log_l1 = mt
            .iter()
            .zip(&mp)
            .map(|(t, p)| (t.ln() - p.ln()).abs())
            .sum::<f64>()
            / count;
        loss += weight * (sc + log_l1);

        let mag_grad: Vec<f64> = (0..mp.len())
            .map(|i| {
                if raw_p[i] <= LOG_FLOOR {
                    return 0.0;
                }
                let d_sc = if diff_norm > 0.0 {
                    (mp[i] - mt[i]) / (diff_norm * target_norm)
                } else {
                    0.0
                };
                let log_diff = mp[i].ln() - mt[i].ln();
                let sign = if log_diff > 0.0 {
                    1.0
                } else if log_diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                let d_log = sign / (mp[i] * count);
                weight * (d_sc + d_log)
            })
            .collect();
        plan.magnitude_backward(&sp, &mag_grad, &mut grad);
    }
    Ok(LossValue { loss, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_differences, max_rel_err};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, len: usize, amp: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-amp..amp)).collect()
    }

    #[test]
    fn identical_signals_have_zero_loss_and_gradient() {
        let x = WaveSignal::new(noise(1, 4000, 0.5), 24_000);
        let out = mr_stft_loss(&x, &x, &LossConfig::default()).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad.iter().all(|&g| g == 0.0));

        let doubled = WaveSignal::new(x.samples.iter().map(|s| 2.0 * s).collect(), 24_000);
        assert_eq!(
            mr_stft_loss(&doubled, &doubled, &LossConfig::default())
                .unwrap()
                .loss,
            0.0
        );
    }

    #[test]
    fn loss_is_positive_for_different_signals() {
        let a = WaveSignal::new(noise(1, 4000, 0.5), 24_000);
        let b = WaveSignal::new(noise(2, 4000, 0.5), 24_000);
        assert!(mr_stft_loss(&a, &b, &LossConfig::default()).unwrap().loss > 0.0);
    }

    fn fd_error(seed: u64, h: f64) -> f64 {
        let cfg = LossConfig::single(StftConfig::square(24_000, 512, 128));
        let pred = noise(seed, 512, 1.0);
        let target = WaveSignal::new(pred.iter().map(|p| 0.3 * p).collect(), 24_000);
        let analytic = mr_stft_loss(&WaveSignal::new(pred.clone(), 24_000), &target, &cfg)
            .unwrap()
            .grad;
        let numeric = central_differences(&pred, h, |x| {
            mr_stft_loss(&WaveSignal::new(x.to_vec(), 24_000), &target, &cfg)
                .unwrap()
                .loss
        });
        max_rel_err(&analytic, &numeric)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let err = fd_error(1, 1e-4);
        assert!(err < 1e-4, "max relative error {err}");
    }

    // Bins close to zero magnitude put large curvature into the log term, so
    // some inputs need a smaller step before the stencil itself is accurate.
    #[test]
    fn residual_shrinks_with_step() {
        let coarse = fd_error(8, 1e-4);
        let fine = fd_error(8, 1e-5);
        assert!(fine < 1e-4 && fine < coarse / 10.0, "{coarse} -> {fine}");
    }

    #[test]
    fn scale_multiplies_gradient() {
        let a = WaveSignal::new(noise(1, 2048, 0.5), 24_000);
        let b = WaveSignal::new(noise(2, 2048, 0.5), 24_000);
        let mut cfg = LossConfig::default();
        let one = mr_stft_loss(&a, &b, &cfg).unwrap();
        cfg.scale = 2.0;
        let two = mr_stft_loss(&a, &b, &cfg).unwrap();
        assert!((two.loss - 2.0 * one.loss).abs() < 1e-12);
        for (g1, g2) in one.grad.iter().zip(&two.grad) {
            assert!((g2 - 2.0 * g1).abs() <= 1e-12 * g1.abs().max(1.0));
        }
    }

    #[test]
    fn length_mismatch() {
        let a = WaveSignal::silence(10, 24_000);
        let b = WaveSignal::silence(11, 24_000);
        assert_eq!(
            mr_stft_loss(&a, &b, &LossConfig::default()),
            Err(DspError::LengthMismatch(10, 11))
        );
    }
}
