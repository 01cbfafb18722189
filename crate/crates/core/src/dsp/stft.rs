use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{DspError, StftConfig, WaveSignal};

/// Denominator floor of the overlap-add window normalization.
const WINDOW_SUM_FLOOR: f64 = 1e-8;

/// One-sided complex spectrogram, `n_frames × n_bins`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Vec<Complex64>,
    pub n_frames: usize,
    pub n_bins: usize,
}

impl Spectrogram {
    pub fn frame(&self, n: usize) -> &[Complex64] {
        &self.data[n * self.n_bins..(n + 1) * self.n_bins]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    /// Builds `mag · e^{i·phase}` element-wise.
    pub fn from_polar(mag: &[f64], phase: &[f64], n_bins: usize) -> Self {
        let data = mag
            .iter()
            .zip(phase)
            .map(|(&m, &p)| Complex64::from_polar(m, p))
            .collect::<Vec<_>>();
        Self {
            n_frames: data.len() / n_bins,
            data,
            n_bins,
        }
    }
}

/// Window and FFT plans for one [`StftConfig`], reusable across calls.
pub struct StftPlan {
    pub cfg: StftConfig,
    pub window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl StftPlan {
    pub fn new(cfg: &StftConfig) -> Result<Self, DspError> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg: *cfg,
            window: cfg.window.coefficients(cfg.frame_length),
            forward: planner.plan_fft_forward(cfg.fft_size),
            inverse: planner.plan_fft_inverse(cfg.fft_size),
        })
    }

    /// Forward transform of raw samples (no rate check).
    pub fn analyze(&self, samples: &[f64]) -> Spectrogram {
        let cfg = &self.cfg;
        let n_frames = cfg.n_frames(samples.len());
        let n_bins = cfg.n_bins();
        let mut data = Vec::with_capacity(n_frames * n_bins);
        let mut buf = vec![Complex64::default(); cfg.fft_size];
        for n in 0..n_frames {
            let start = n * cfg.frame_shift;
            buf.fill(Complex64::default());
            for (j, w) in self.window.iter().enumerate() {
                if let Some(&x) = samples.get(start + j) {
                    buf[j].re = w * x;
                }
            }
            self.forward.process(&mut buf);
            data.extend_from_slice(&buf[..n_bins]);
        }
        Spectrogram {
            data,
            n_frames,
            n_bins,
        }
    }

    /// Least-squares overlap-add inverse; returns exactly `n_frames · hop` samples.
    pub fn synthesize(&self, spec: &Spectrogram) -> Vec<f64> {
        let cfg = &self.cfg;
        let k = cfg.fft_size;
        let out_len = spec.n_frames * cfg.frame_shift;
        let full_len = out_len + cfg.frame_length;
        let mut acc = vec![0.0; full_len];
        let mut wsum = vec![0.0; full_len];
        let mut buf = vec![Complex64::default(); k];
        for n in 0..spec.n_frames {
            let frame = spec.frame(n);
            buf[..spec.n_bins].copy_from_slice(frame);
            for f in 1..k - spec.n_bins + 1 {
                buf[k - f] = frame[f].conj();
            }
            self.inverse.process(&mut buf);
            let start = n * cfg.frame_shift;
            for (j, w) in self.window.iter().enumerate() {
                acc[start + j] += w * buf[j].re / k as f64;
                wsum[start + j] += w * w;
            }
        }
        acc.truncate(out_len);
        acc.iter()
            .zip(&wsum)
            .map(|(a, w)| a / w.max(WINDOW_SUM_FLOOR))
            .collect()
    }

    /// Gradient of a scalar through `|STFT(x)|`: given `dL/d|S|` per bin,
    /// accumulates `dL/dx` into `grad`.
    pub(crate) fn magnitude_backward(
        &self,
        spec: &Spectrogram,
        mag_grad: &[f64],
        grad: &mut [f64],
    ) {
        let cfg = &self.cfg;
        let mut buf = vec![Complex64::default(); cfg.fft_size];
        for n in 0..spec.n_frames {
            buf.fill(Complex64::default());
            let mut any = false;
            for (f, s) in spec.frame(n).iter().enumerate() {
                let g = mag_grad[n * spec.n_bins + f];
                let m = s.norm();
                if g != 0.0 && m > 0.0 {
                    buf[f] = s.conj() * (g / m);
                    any = true;
                }
            }
            if !any {
                continue;
            }
            self.forward.process(&mut buf);
            let start = n * cfg.frame_shift;
            for (j, w) in self.window.iter().enumerate() {
                if let Some(slot) = grad.get_mut(start + j) {
                    *slot += w * buf[j].re;
                }
            }
        }
    }
}

/// One-sided STFT. Frame `n` covers samples `[n·hop, n·hop + frame_length)`
/// with zeros past the end, so there are `ceil(len / hop)` frames.
pub fn stft(wave: &WaveSignal, cfg: &StftConfig) -> Result<Spectrogram, DspError> {
    if wave.sample_rate != cfg.sample_rate {
        return Err(DspError::SampleRateMismatch {
            expected: cfg.sample_rate,
            found: wave.sample_rate,
        });
    }
    Ok(StftPlan::new(cfg)?.analyze(&wave.samples))
}

/// Overlap-add ISTFT normalized by the summed squared window. The output
/// has `n_frames · hop` samples.
pub fn istft(spec: &Spectrogram, cfg: &StftConfig) -> Result<WaveSignal, DspError> {
    if spec.n_bins != cfg.n_bins() {
        return Err(DspError::LengthMismatch(spec.n_bins, cfg.n_bins()));
    }
    let plan = StftPlan::new(cfg)?;
    Ok(WaveSignal::new(plan.synthesize(spec), cfg.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Window;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn interior_rel_err(a: &[f64], b: &[f64], margin: usize) -> f64 {
        let range = margin..a.len() - margin;
        let num: f64 = range.clone().map(|i| (a[i] - b[i]).powi(2)).sum();
        let den: f64 = range.map(|i| b[i].powi(2)).sum();
        (num / den).sqrt()
    }

    #[test]
    fn silence_frames() {
        let cfg = StftConfig::canonical();
        let spec = stft(&WaveSignal::silence(24_000, 24_000), &cfg).unwrap();
        assert_eq!(spec.n_frames, 84);
        assert_eq!(spec.n_bins, 1025);
        assert!(spec.magnitudes().iter().all(|&m| m == 0.0));
        assert_eq!(
            stft(&WaveSignal::silence(72_000, 24_000), &cfg)
                .unwrap()
                .n_frames,
            250
        );
    }

    #[test]
    fn tone_argmax_bin() {
        let cfg = StftConfig::canonical();
        let wave = WaveSignal::new(
            (0..24_000)
                .map(|i| (std::f64::consts::TAU * 440.0 * i as f64 / 24_000.0).sin())
                .collect(),
            24_000,
        );
        let spec = stft(&wave, &cfg).unwrap();
        let nearest = (440.0f64 / cfg.bin_freq(1)).round() as usize;
        for n in 0..spec.n_frames - 5 {
            let mags: Vec<f64> = spec.frame(n).iter().map(|c| c.norm()).collect();
            let argmax = (0..mags.len())
                .max_by(|&a, &b| mags[a].total_cmp(&mags[b]))
                .unwrap();
            assert_eq!(argmax, nearest);
        }
    }

    #[test]
    fn zero_spectrum_gives_zero_wave() {
        let cfg = StftConfig::canonical();
        let spec = Spectrogram {
            data: vec![Complex64::default(); 10 * 1025],
            n_frames: 10,
            n_bins: 1025,
        };
        let wave = istft(&spec, &cfg).unwrap();
        assert_eq!(wave.len(), 2880);
        assert!(wave.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn istft_is_linear() {
        let cfg = StftConfig::canonical();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..5000).map(|_| rng.random_range(-0.5..0.5)).collect();
        let spec = stft(&WaveSignal::new(x, 24_000), &cfg).unwrap();
        let scaled = Spectrogram {
            data: spec.data.iter().map(|c| c * 2.5).collect(),
            ..spec.clone()
        };
        let a = istft(&spec, &cfg).unwrap();
        let b = istft(&scaled, &cfg).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!((2.5 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rectangular_window_round_trip() {
        let cfg = StftConfig {
            window: Window::Rectangular,
            ..StftConfig::square(24_000, 256, 64)
        };
        let x: Vec<f64> = (0..1024)
            .map(|i| ((i * 37 % 101) as f64 / 101.0) - 0.5)
            .collect();
        let back = istft(
            &stft(&WaveSignal::new(x.clone(), 24_000), &cfg).unwrap(),
            &cfg,
        )
        .unwrap();
        assert!(interior_rel_err(&back.samples, &x, 256) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn round_trip_interior(seed in any::<u64>(), len in 3000usize..9000) {
            let cfg = StftConfig::canonical();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let back = istft(&stft(&WaveSignal::new(x.clone(), 24_000), &cfg).unwrap(), &cfg).unwrap();
            prop_assert_eq!(back.len(), cfg.n_frames(len) * cfg.frame_shift);
            prop_assert!(interior_rel_err(&back.samples[..len], &x, cfg.frame_length) < 1e-6);
        }
    }
}
