//! Objective pitch mismatch and listening-test statistics.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::dsp::{midi_filter_bank, stft, DspError, StftConfig, WaveSignal};
use crate::midi_io::{NoteEvent, NoteEventList, PianoRoll, NUM_NOTES};

/// Probability floor; entries live in `[ε, 1 − ε]`.
pub const PITCH_EPS: f64 = 1e-4;
/// Frames whose strongest filter energy is below this are silent.
pub const SILENCE_ENERGY: f64 = 1e-6;
/// Largest `n_a + n_b` for which tie-free samples get an exact p-value.
pub const EXACT_LIMIT: usize = 12;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sample rate mismatch: expected {expected} Hz, got {found} Hz")]
    SampleRateMismatch { expected: u32, found: u32 },
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("no frames to compare")]
    EmptyInput,
    #[error("both samples must be nonempty")]
    EmptySample,
    #[error("p-value {0} outside [0, 1]")]
    InvalidP(f64),
    #[error("need at least two systems, found {0}")]
    TooFewSystems(usize),
    #[error("score table is empty")]
    EmptyTable,
    #[error("line {line}: {detail}")]
    MalformedCsv { line: u64, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Per-frame note probabilities, `n_frames × 128`.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchProbMatrix {
    pub values: Vec<f64>,
    pub n_frames: usize,
    pub frame_shift: f64,
}

impl PitchProbMatrix {
    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * NUM_NOTES..(n + 1) * NUM_NOTES]
    }
}

/// Spectral note-probability estimate: MIDI filter-bank energies of each
/// STFT frame divided by the frame's largest energy and clamped to
/// `[ε, 1 − ε]`. Silent frames are `ε` everywhere.
pub fn pitch_probability(
    wave: &WaveSignal,
    cfg: &StftConfig,
) -> Result<PitchProbMatrix, EvalError> {
    if wave.sample_rate != cfg.sample_rate {
        return Err(EvalError::SampleRateMismatch {
            expected: cfg.sample_rate,
            found: wave.sample_rate,
        });
    }
    let spec = stft(wave, cfg)?;
    let fb = midi_filter_bank(cfg);
    let mags = spec.magnitudes();
    let mut values = Vec::with_capacity(spec.n_frames * NUM_NOTES);
    for n in 0..spec.n_frames {
        let e = fb.apply(&mags[n * spec.n_bins..(n + 1) * spec.n_bins]);
        let peak = e.iter().copied().fold(0.0, f64::max);
        if peak < SILENCE_ENERGY {
            values.extend(std::iter::repeat_n(PITCH_EPS, NUM_NOTES));
        } else {
            values.extend(
                e.iter()
                    .map(|v| (v / peak).clamp(PITCH_EPS, 1.0 - PITCH_EPS)),
            );
        }
    }
    Ok(PitchProbMatrix {
        values,
        n_frames: spec.n_frames,
        frame_shift: cfg.frame_shift_seconds(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossEntropy {
    pub ce: f64,
    pub frames: usize,
    /// The two inputs had different frame counts and were cut to the shorter.
    pub truncated: bool,
}

/// `−(1/N) Σ_n Σ_k x_{n,k} ln p_{n,k}` with natural log. `x` is the roll
/// binarized (`> 0` → 1) unless `velocity_weighted`.
pub fn pitch_cross_entropy(
    p: &PitchProbMatrix,
    roll: &PianoRoll,
    velocity_weighted: bool,
) -> Result<CrossEntropy, EvalError> {
    let frames = p.n_frames.min(roll.n_frames());
    if frames == 0 {
        return Err(EvalError::EmptyInput);
    }
    let mut total = 0.0;
    for n in 0..frames {
        for (x, pk) in roll.row(n).iter().zip(p.row(n)) {
            if *x > 0.0 {
                let w = if velocity_weighted { *x } else { 1.0 };
                total -= w * pk.ln();
            }
        }
    }
    Ok(CrossEntropy {
        ce: total / frames as f64,
        frames,
        truncated: p.n_frames != roll.n_frames(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    pub u_a: f64,
    pub u_b: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub exact: bool,
}

/// Midranks (1-based) of `values`, plus the tie groups' sizes.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = vec![];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = rank;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    (ranks, ties)
}

/// Number of arrangements giving each value of U for sample sizes
/// (m, n); index u holds the count.
fn u_distribution(m: usize, n: usize) -> Vec<f64> {
    // f[i][j][u] over i ≤ m, j ≤ n via the standard recurrence
    // f(i, j, u) = f(i − 1, j, u − j) + f(i, j − 1, u)
    let max_u = m * n;
    let mut prev_row: Vec<Vec<f64>> = (0..=n)
        .map(|_| {
            let mut v = vec![0.0; max_u + 1];
            v[0] = 1.0;
            v
        })
        .collect();
    for _ in 1..=m {
        let mut row: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        let mut first = vec![0.0; max_u + 1];
        first[0] = 1.0;
        row.push(first);
        for j in 1..=n {
            let mut cur = row[j - 1].clone();
            for u in j..=max_u {
                cur[u] += prev_row[j][u - j];
            }
            row.push(cur);
        }
        prev_row = row;
    }
    prev_row.pop().unwrap()
}

/// Two-sided Mann-Whitney U test. Exact when the pooled size is at most 12
/// and there are no ties; otherwise the normal approximation with tie and
/// continuity corrections.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptySample);
    }
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let rank_sum_a: f64 = ranks[..na].iter().sum();
    let u_a = rank_sum_a - (na * (na + 1)) as f64 / 2.0;
    let u_b = (na * nb) as f64 - u_a;
    let n = (na + nb) as f64;

    if na + nb <= EXACT_LIMIT && ties.is_empty() {
        let dist = u_distribution(na, nb);
        let total: f64 = dist.iter().sum();
        let u = u_a.round() as usize;
        let lower: f64 = dist[..=u].iter().sum::<f64>() / total;
        let upper: f64 = dist[u..].iter().sum::<f64>() / total;
        return Ok(MannWhitney {
            u_a,
            u_b,
            p: (2.0 * lower.min(upper)).min(1.0),
            exact: true,
        });
    }
    let mu = (na * nb) as f64 / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
    let var = (na * nb) as f64 / 12.0 * ((n + 1.0) - tie_term);
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u_a - mu).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).unwrap();
        (2.0 * normal.sf(z)).min(1.0)
    };
    Ok(MannWhitney {
        u_a,
        u_b,
        p,
        exact: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Holm {
    pub reject: Vec<bool>,
    pub adjusted: Vec<f64>,
}

/// Holm step-down: walking p-values in ascending order, reject while
/// `p_(i) ≤ α/(m − i + 1)` and stop at the first failure. Adjusted values are
/// `min(1, max_{j ≤ i} (m − j + 1) p_(j))`. Outputs follow input order.
pub fn holm_bonferroni(pvals: &[f64], alpha: f64) -> Result<Holm, EvalError> {
    if let Some(&bad) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(EvalError::InvalidP(bad));
    }
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| pvals[i].total_cmp(&pvals[j]));
    let mut reject = vec![false; m];
    let mut adjusted = vec![0.0; m];
    let mut running = 0.0f64;
    let mut rejecting = true;
    for (rank, &i) in order.iter().enumerate() {
        let factor = (m - rank) as f64;
        rejecting = rejecting && pvals[i] <= alpha / factor;
        reject[i] = rejecting;
        running = running.max(factor * pvals[i]);
        adjusted[i] = running.min(1.0);
    }
    Ok(Holm { reject, adjusted })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreRecord {
    pub system: String,
    pub sample_id: String,
    pub listener_id: String,
    pub score: u8,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub records: Vec<ScoreRecord>,
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    system: String,
    sample_id: String,
    listener_id: String,
    score: String,
}

impl ScoreTable {
    /// Parses CSV with header `system,sample_id,listener_id,score`. Scores
    /// must be integers 1 to 5.
    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| EvalError::MalformedCsv {
                line: 1,
                detail: e.to_string(),
            })?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["system", "sample_id", "listener_id", "score"] {
            return Err(EvalError::MalformedCsv {
                line: 1,
                detail: "header must be system,sample_id,listener_id,score".into(),
            });
        }
        let mut records = vec![];
        for row in reader.records() {
            let row = row.map_err(|e| EvalError::MalformedCsv {
                line: e.position().map_or(0, |p| p.line()),
                detail: e.to_string(),
            })?;
            let line = row.position().map_or(0, |p| p.line());
            let raw: RawRecord =
                row.deserialize(Some(&headers))
                    .map_err(|e| EvalError::MalformedCsv {
                        line,
                        detail: e.to_string(),
                    })?;
            let score = match raw.score.parse::<u8>() {
                Ok(s @ 1..=5) => s,
                _ => {
                    return Err(EvalError::MalformedCsv {
                        line,
                        detail: format!("score {:?} is not an integer from 1 to 5", raw.score),
                    })
                }
            };
            records.push(ScoreRecord {
                system: raw.system,
                sample_id: raw.sample_id,
                listener_id: raw.listener_id,
                score,
            });
        }
        Ok(Self { records })
    }

    pub fn read(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv(&text)
    }

    /// Scores per system, systems in lexicographic order.
    pub fn by_system(&self) -> BTreeMap<&str, Vec<f64>> {
        let mut out: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in &self.records {
            out.entry(r.system.as_str())
                .or_default()
                .push(r.score as f64);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceMatrix {
    pub systems: Vec<String>,
    /// `S × S`, row-major, symmetric with a false diagonal.
    pub significant: Vec<bool>,
    pub raw_p: Vec<f64>,
    pub adjusted_p: Vec<f64>,
}

impl SignificanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.significant[i * self.systems.len() + j]
    }

    /// `system_a,system_b,p,p_holm,significant`, one row per pair.
    pub fn to_csv(&self) -> String {
        let s = self.systems.len();
        let mut out = String::from("system_a,system_b,p,p_holm,significant\n");
        for i in 0..s {
            for j in i + 1..s {
                let k = i * s + j;
                out.push_str(&format!(
                    "{},{},{:.6},{:.6},{}\n",
                    self.systems[i],
                    self.systems[j],
                    self.raw_p[k],
                    self.adjusted_p[k],
                    self.significant[k]
                ));
            }
        }
        out
    }

    /// Grid with `#` for significant pairs and `.` otherwise.
    pub fn text_grid(&self) -> String {
        let width = self.systems.iter().map(String::len).max().unwrap_or(0);
        let mut out = String::new();
        for (i, name) in self.systems.iter().enumerate() {
            out.push_str(&format!("{name:>width$} "));
            for j in 0..self.systems.len() {
                out.push(if self.get(i, j) { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }
}

/// Pairwise two-sided Mann-Whitney tests on pooled ratings, Holm-corrected
/// jointly over all pairs.
pub fn significance_matrix(
    table: &ScoreTable,
    alpha: f64,
) -> Result<SignificanceMatrix, EvalError> {
    let groups = table.by_system();
    let s = groups.len();
    if s < 2 {
        return Err(EvalError::TooFewSystems(s));
    }
    let systems: Vec<String> = groups.keys().map(|k| k.to_string()).collect();
    let scores: Vec<&Vec<f64>> = groups.values().collect();
    let mut pairs = vec![];
    let mut pvals = vec![];
    for i in 0..s {
        for j in i + 1..s {
            pairs.push((i, j));
            pvals.push(mann_whitney_u(scores[i], scores[j])?.p);
        }
    }
    let holm = holm_bonferroni(&pvals, alpha)?;
    let mut significant = vec![false; s * s];
    let mut raw_p = vec![1.0; s * s];
    let mut adjusted_p = vec![1.0; s * s];
    for (k, &(i, j)) in pairs.iter().enumerate() {
        for (a, b) in [(i, j), (j, i)] {
            significant[a * s + b] = holm.reject[k];
            raw_p[a * s + b] = pvals[k];
            adjusted_p[a * s + b] = holm.adjusted[k];
        }
    }
    Ok(SignificanceMatrix {
        systems,
        significant,
        raw_p,
        adjusted_p,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosSummary {
    pub system: String,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub count: usize,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, median and quartiles per system, systems in lexicographic order.
pub fn mos_summary(table: &ScoreTable) -> Result<Vec<MosSummary>, EvalError> {
    if table.records.is_empty() {
        return Err(EvalError::EmptyTable);
    }
    Ok(table
        .by_system()
        .into_iter()
        .map(|(system, mut scores)| {
            // integer scores: the sum is exact, so order cannot matter
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            scores.sort_by(f64::total_cmp);
            MosSummary {
                system: system.to_string(),
                mean,
                median: quantile(&scores, 0.5),
                q1: quantile(&scores, 0.25),
                q3: quantile(&scores, 0.75),
                count: scores.len(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    Note,
    Chord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub name: String,
    pub kind: ProbeKind,
    pub notes: NoteEventList,
}

/// Seeded synthetic pitch probes: `n_notes` isolated notes and `n_chords`
/// major or minor triads, each held from 0.05 s to 0.55 s of a 0.6 s clip.
/// Pitches stay in C4..A6 where adjacent MIDI filters are resolved at the
/// canonical FFT size.
pub fn probe_set(seed: u64, n_notes: usize, n_chords: usize) -> Vec<Probe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (onset, offset, duration) = (0.05, 0.55, 0.6);
    let mut out = Vec::with_capacity(n_notes + n_chords);
    for i in 0..n_notes {
        let pitch = rng.random_range(60..=93u8);
        let vel = rng.random_range(64..=127u8);
        let note = NoteEvent::new(pitch, onset, offset, vel).unwrap();
        out.push(Probe {
            name: format!("note{i:02}"),
            kind: ProbeKind::Note,
            notes: NoteEventList::new(vec![note], duration),
        });
    }
    for i in 0..n_chords {
        let root = rng.random_range(60..=86u8);
        let third = if rng.random::<bool>() { 4 } else { 3 };
        let notes = [0, third, 7]
            .iter()
            .map(|&iv| {
                NoteEvent::new(root + iv, onset, offset, rng.random_range(64..=127u8)).unwrap()
            })
            .collect();
        out.push(Probe {
            name: format!("chord{i:02}"),
            kind: ProbeKind::Chord,
            notes: NoteEventList::new(notes, duration),
        });
    }
    out
}
