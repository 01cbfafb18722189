use super::stft::{Spectrogram, StftPlan};
use super::{DspError, StftConfig, WaveSignal};

/// Distance between `|STFT(x)|` and a target magnitude, measured over the
/// full two-sided spectrum: interior bins count twice, DC and Nyquist once.
/// This is the quantity each Griffin-Lim iteration cannot increase.
pub fn consistency_error(spec: &Spectrogram, mag: &[f64]) -> f64 {
    let last = spec.n_bins - 1;
    let mut acc = 0.0;
    for (idx, (s, &m)) in spec.data.iter().zip(mag).enumerate() {
        let f = idx % spec.n_bins;
        let weight = if f == 0 || f == last { 1.0 } else { 2.0 };
        acc += weight * (s.norm() - m).powi(2);
    }
    acc.sqrt()
}

/// Classic Griffin-Lim from a `n_frames × n_bins` magnitude, zero initial
/// phase. Also returns the consistency error after each iteration.
pub fn griffin_lim_with_history(
    mag: &[f64],
    cfg: &StftConfig,
    iters: usize,
) -> Result<(WaveSignal, Vec<f64>), DspError> {
    if iters == 0 {
        return Err(DspError::OutOfRange(
            "griffin-lim needs at least one iteration".into(),
        ));
    }
    let n_bins = cfg.n_bins();
    if !mag.len().is_multiple_of(n_bins) {
        return Err(DspError::LengthMismatch(mag.len(), n_bins));
    }
    if mag.iter().any(|&m| m < 0.0 || !m.is_finite()) {
        return Err(DspError::OutOfRange(
            "magnitudes must be finite and nonnegative".into(),
        ));
    }
    let plan = StftPlan::new(cfg)?;
    let mut phase = vec![0.0; mag.len()];
    let mut history = Vec::with_capacity(iters);
    let mut x = Vec::new();
    for _ in 0..iters {
        x = plan.synthesize(&Spectrogram::from_polar(mag, &phase, n_bins));
        let spec = plan.analyze(&x);
        history.push(consistency_error(&spec, mag));
        for (p, s) in phase.iter_mut().zip(&spec.data) {
            *p = s.arg();
        }
    }
    let wave = WaveSignal::new(x, cfg.sample_rate).normalize_if_clipping(0.99);
    Ok((wave, history))
}

/// Griffin-Lim phase reconstruction; output is `n_frames · hop` samples,
/// peak-normalized to 0.99 if it would clip.
pub fn griffin_lim(mag: &[f64], cfg: &StftConfig, iters: usize) -> Result<WaveSignal, DspError> {
    griffin_lim_with_history(mag, cfg, iters).map(|(w, _)| w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::stft;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_magnitude_gives_silence() {
        let cfg = StftConfig::canonical();
        let wave = griffin_lim(&vec![0.0; 5 * 1025], &cfg, 4).unwrap();
        assert_eq!(wave.len(), 5 * 288);
        assert!(wave.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn sinusoid_reconstruction_keeps_pitch() {
        let cfg = StftConfig::canonical();
        let x: Vec<f64> = (0..12_000)
            .map(|i| 0.5 * (std::f64::consts::TAU * 440.0 * i as f64 / 24_000.0).sin())
            .collect();
        let mag = stft(&WaveSignal::new(x, 24_000), &cfg)
            .unwrap()
            .magnitudes();
        let wave = griffin_lim(&mag, &cfg, 32).unwrap();
        let spec = stft(&wave, &cfg).unwrap();
        let mid = spec.n_frames / 2;
        let frame: Vec<f64> = spec.frame(mid).iter().map(|c| c.norm()).collect();
        let argmax = (0..frame.len())
            .max_by(|&a, &b| frame[a].total_cmp(&frame[b]))
            .unwrap();
        assert_eq!(argmax, (440.0 / cfg.bin_freq(1)).round() as usize);
    }

    #[test]
    fn consistency_error_never_increases() {
        let cfg = StftConfig::square(24_000, 512, 128);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mag: Vec<f64> = (0..40 * cfg.n_bins())
            .map(|_| rng.random_range(0.0..2.0))
            .collect();
        let (_, history) = griffin_lim_with_history(&mag, &cfg, 32).unwrap();
        for w in history.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = StftConfig::canonical();
        assert!(griffin_lim(&[0.0; 1025], &cfg, 0).is_err());
        assert!(griffin_lim(&[-1.0; 1025], &cfg, 1).is_err());
        assert!(griffin_lim(&[0.0; 1000], &cfg, 1).is_err());
    }
}
