use nalgebra::DMatrix;

use super::{DspError, StftConfig};
use crate::midi_io::NUM_NOTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterBankKind {
    Mel,
    Midi,
}

/// Triangular filters over the one-sided DFT bins, `n_filters × n_bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub weights: Vec<f64>,
    pub n_filters: usize,
    pub n_bins: usize,
    pub center_freqs: Vec<f64>,
    pub kind: FilterBankKind,
}

impl FilterBank {
    pub fn row(&self, d: usize) -> &[f64] {
        &self.weights[d * self.n_bins..(d + 1) * self.n_bins]
    }

    /// Filter energies for one magnitude frame.
    pub fn apply(&self, frame: &[f64]) -> Vec<f64> {
        (0..self.n_filters)
            .map(|d| self.row(d).iter().zip(frame).map(|(w, m)| w * m).sum())
            .collect()
    }

    /// Indices of rows with no nonzero weight.
    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.n_filters)
            .filter(|&d| self.row(d).iter().all(|&w| w == 0.0))
            .collect()
    }

    /// Moore-Penrose pseudo-inverse, `n_bins × n_filters` row-major.
    pub fn pseudo_inverse(&self) -> Vec<f64> {
        let m = DMatrix::from_row_slice(self.n_filters, self.n_bins, &self.weights);
        let pinv = m
            .pseudo_inverse(1e-10)
            .expect("SVD of a finite matrix does not fail");
        let mut out = Vec::with_capacity(self.n_bins * self.n_filters);
        for i in 0..self.n_bins {
            for d in 0..self.n_filters {
                out.push(pinv[(i, d)]);
            }
        }
        out
    }
}

/// Equal-tempered frequency of MIDI note `d`: `440 · 2^((d − 69) / 12)`.
pub fn midi_center_freq(d: u8) -> Result<f64, DspError> {
    if d as usize >= NUM_NOTES {
        return Err(DspError::OutOfRange(format!("MIDI note {d}")));
    }
    Ok(note_freq(d as f64))
}

fn note_freq(d: f64) -> f64 {
    2f64.powf((d - 69.0) / 12.0) * 440.0
}

fn triangle(f: f64, lo: Option<f64>, center: f64, hi: Option<f64>) -> f64 {
    if f <= center {
        match lo {
            Some(lo) if f > lo => (f - lo) / (center - lo),
            None if f == center => 1.0,
            _ => 0.0,
        }
    } else {
        match hi {
            Some(hi) if f < hi => (hi - f) / (hi - center),
            _ => 0.0,
        }
    }
}

/// 128 triangular filters, one per MIDI note. Filter `k` peaks at the
/// frequency of note `k` and reaches zero at the neighbouring notes; notes 0
/// and 127 get half triangles. Filters that catch no DFT bin, and filters
/// centered above Nyquist, stay as all-zero rows.
pub fn midi_filter_bank(cfg: &StftConfig) -> FilterBank {
    let n_bins = cfg.n_bins();
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let centers: Vec<f64> = (0..NUM_NOTES).map(|k| note_freq(k as f64)).collect();
    let mut weights = vec![0.0; NUM_NOTES * n_bins];
    for k in 0..NUM_NOTES {
        if centers[k] > nyquist {
            continue;
        }
        let lo = k.checked_sub(1).map(|j| centers[j]);
        let hi = centers.get(k + 1).copied();
        for i in 0..n_bins {
            weights[k * n_bins + i] = triangle(cfg.bin_freq(i), lo, centers[k], hi);
        }
    }
    FilterBank {
        weights,
        n_filters: NUM_NOTES,
        n_bins,
        center_freqs: centers,
        kind: FilterBankKind::Midi,
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters with centers evenly spaced on the mel scale between
/// 0 Hz and Nyquist.
pub fn mel_filter_bank(cfg: &StftConfig, n_filters: usize) -> Result<FilterBank, DspError> {
    if n_filters < 2 {
        return Err(DspError::OutOfRange(format!("{n_filters} mel filters")));
    }
    let n_bins = cfg.n_bins();
    let mel_max = hz_to_mel(cfg.sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_filters + 1) as f64))
        .collect();
    let mut weights = vec![0.0; n_filters * n_bins];
    for d in 0..n_filters {
        let (lo, center, hi) = (edges[d], edges[d + 1], edges[d + 2]);
        for i in 0..n_bins {
            weights[d * n_bins + i] = triangle(cfg.bin_freq(i), Some(lo), center, Some(hi));
        }
    }
    Ok(FilterBank {
        weights,
        n_filters,
        n_bins,
        center_freqs: edges[1..=n_filters].to_vec(),
        kind: FilterBankKind::Mel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_temperament_anchors() {
        assert_eq!(midi_center_freq(69).unwrap(), 440.0);
        assert_eq!(midi_center_freq(81).unwrap(), 880.0);
        let c4 = midi_center_freq(60).unwrap();
        assert!((c4 / 261.625_565_3 - 1.0).abs() < 1e-6);
        assert!(midi_center_freq(128).is_err());
        for d in 0..=115u8 {
            let ratio = midi_center_freq(d + 12).unwrap() / midi_center_freq(d).unwrap();
            assert!((ratio / 2.0 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn a4_row_peaks_at_nearest_bin() {
        let cfg = StftConfig::canonical();
        let fb = midi_filter_bank(&cfg);
        let row = fb.row(69);
        let argmax = (0..row.len())
            .max_by(|&a, &b| row[a].total_cmp(&row[b]))
            .unwrap();
        assert_eq!(argmax, (440.0 / cfg.bin_freq(1)).round() as usize);
    }

    #[test]
    fn rows_are_supported_between_neighbours() {
        let cfg = StftConfig::canonical();
        let fb = midi_filter_bank(&cfg);
        for k in 0..128 {
            for (i, &w) in fb.row(k).iter().enumerate() {
                assert!((0.0..=1.0).contains(&w));
                if w > 0.0 {
                    let f = cfg.bin_freq(i);
                    if k > 0 {
                        assert!(f > fb.center_freqs[k - 1]);
                    } else {
                        assert!(f >= fb.center_freqs[0]);
                    }
                    if k < 127 {
                        assert!(f < fb.center_freqs[k + 1]);
                    }
                }
            }
        }
        assert!(fb.center_freqs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn above_nyquist_rows_are_empty() {
        let cfg = StftConfig::canonical();
        let fb = midi_filter_bank(&cfg);
        assert!(fb.center_freqs[127] > 12_000.0);
        assert!(fb.row(127).iter().all(|&w| w == 0.0));
        assert!(fb.row(126).iter().any(|&w| w > 0.0));
    }

    #[test]
    fn mel_bank_shape() {
        let cfg = StftConfig::canonical();
        let fb = mel_filter_bank(&cfg, 80).unwrap();
        assert_eq!(
            (fb.n_filters, fb.n_bins, fb.weights.len()),
            (80, 1025, 80 * 1025)
        );
        assert!(fb.empty_rows().is_empty());
        assert!(fb.center_freqs.windows(2).all(|w| w[0] < w[1]));
        assert!(mel_filter_bank(&cfg, 1).is_err());
    }

    #[test]
    fn mel_formula() {
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn pseudo_inverse_recovers_covered_energy() {
        let cfg = StftConfig::square(24_000, 256, 64);
        let fb = mel_filter_bank(&cfg, 20).unwrap();
        let pinv = fb.pseudo_inverse();
        // fb · pinv · fb == fb
        let mut prod = vec![0.0; 20 * 20];
        for a in 0..20 {
            for b in 0..20 {
                prod[a * 20 + b] = (0..fb.n_bins)
                    .map(|i| fb.row(a)[i] * pinv[i * 20 + b])
                    .sum();
            }
        }
        for a in 0..20 {
            for b in 0..20 {
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((prod[a * 20 + b] - expected).abs() < 1e-8);
            }
        }
    }
}
