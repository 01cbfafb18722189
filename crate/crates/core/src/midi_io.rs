//! Standard MIDI File decoding, sustain-pedal elongation and piano-roll conversion.
//!
//! Timing follows the SMF tempo map: delta ticks are accumulated per track,
//! tracks are merged into one stream, and every tick is converted to seconds
//! with the tempo in force at that tick. Only the ticks-per-quarter division
//! form is supported.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

/// Number of MIDI notes, and therefore piano-roll columns.
pub const NUM_NOTES: usize = 128;

/// Tempo assumed until the first Set Tempo meta event (120 BPM).
pub const DEFAULT_TEMPO_US: u32 = 500_000;

/// Controller number of the damper (sustain) pedal.
pub const SUSTAIN_CONTROLLER: u8 = 64;

/// Pedal values at or above this count as "pedal down".
pub const PEDAL_THRESHOLD: u8 = 64;

// Frame-boundary slack, in frame units, so that 0.036 / 0.012 counts as 3 frames.
const FRAME_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MidiError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported SMF format {0}")]
    UnsupportedFormat(u16),
    #[error("unsupported division 0x{0:04x} (SMPTE timecode)")]
    UnsupportedDivision(u16),
    #[error("track data runs past chunk end at byte offset {offset}")]
    TruncatedTrack { offset: usize },
    #[error("unexpected status byte 0x{status:02x} at byte offset {offset}")]
    UnexpectedStatus { status: u8, offset: usize },
    #[error("invalid note: {0}")]
    InvalidNote(String),
}

/// Non-fatal conditions found while decoding.
#[derive(Debug, Clone, PartialEq)]
pub enum MidiWarning {
    /// A note-on was never matched by a note-off; it was closed at track end.
    DanglingNoteOn { pitch: u8, onset: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoteEvent {
    pub pitch: u8,
    pub onset: f64,
    pub offset: f64,
    pub velocity: u8,
}

impl NoteEvent {
    pub fn new(pitch: u8, onset: f64, offset: f64, velocity: u8) -> Result<Self, MidiError> {
        if pitch as usize >= NUM_NOTES {
            return Err(MidiError::InvalidNote(format!(
                "pitch {pitch} out of range"
            )));
        }
        if !(1..=127).contains(&velocity) {
            return Err(MidiError::InvalidNote(format!(
                "velocity {velocity} out of range"
            )));
        }
        if !(onset >= 0.0 && offset > onset && offset.is_finite()) {
            return Err(MidiError::InvalidNote(format!(
                "interval [{onset}, {offset}) is empty or negative"
            )));
        }
        Ok(Self {
            pitch,
            onset,
            offset,
            velocity,
        })
    }
}

/// Notes sorted by onset, with the overall duration in seconds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NoteEventList {
    pub notes: Vec<NoteEvent>,
    pub ticks_per_quarter: u16,
    pub duration: f64,
}

impl NoteEventList {
    /// Builds a list from arbitrary notes; sorts them and extends the
    /// duration to cover the last offset.
    pub fn new(mut notes: Vec<NoteEvent>, duration: f64) -> Self {
        sort_notes(&mut notes);
        let max_off = notes.iter().map(|n| n.offset).fold(0.0, f64::max);
        Self {
            notes,
            ticks_per_quarter: 0,
            duration: duration.max(max_off),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    /// Shifts every pitch by `semitones`, dropping notes that leave 0..=127.
    pub fn transposed(&self, semitones: i32) -> Self {
        let notes = self
            .notes
            .iter()
            .filter_map(|n| {
                let p = n.pitch as i32 + semitones;
                (0..NUM_NOTES as i32).contains(&p).then_some(NoteEvent {
                    pitch: p as u8,
                    ..*n
                })
            })
            .collect();
        Self {
            notes,
            ticks_per_quarter: self.ticks_per_quarter,
            duration: self.duration,
        }
    }
}

fn sort_notes(notes: &mut [NoteEvent]) {
    notes.sort_by(|a, b| {
        a.onset
            .total_cmp(&b.onset)
            .then(a.pitch.cmp(&b.pitch))
            .then(a.offset.total_cmp(&b.offset))
    });
}

/// A control-64 value change at an absolute time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PedalEvent {
    pub time: f64,
    pub value: u8,
}

/// Everything `parse_midi` extracts from a file.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedMidi {
    pub notes: NoteEventList,
    pub sustain: Vec<PedalEvent>,
    pub warnings: Vec<MidiWarning>,
}

impl ParsedMidi {
    /// Notes with the sustain pedal folded in as note elongation.
    pub fn sustained_notes(&self) -> NoteEventList {
        apply_sustain_pedal(&self.notes, &self.sustain)
    }
}

#[derive(Debug, Clone, Copy)]
enum RawKind {
    NoteOn { channel: u8, key: u8, velocity: u8 },
    NoteOff { channel: u8, key: u8 },
    Sustain { value: u8 },
    Tempo(u32),
    EndOfTrack,
}

#[derive(Debug, Clone, Copy)]
struct RawEvent {
    tick: u64,
    kind: RawKind,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    end: usize,
}

impl<'a> Cursor<'a> {
    fn u8(&mut self) -> Result<u8, MidiError> {
        if self.pos >= self.end {
            return Err(MidiError::TruncatedTrack { offset: self.pos });
        }
        let b = self.bytes[self.pos];
        self.pos += 1;
        Ok(b)
    }

    fn skip(&mut self, n: usize) -> Result<(), MidiError> {
        if self.end - self.pos < n {
            return Err(MidiError::TruncatedTrack { offset: self.end });
        }
        self.pos += n;
        Ok(())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        let start = self.pos;
        self.skip(n)?;
        Ok(&self.bytes[start..start + n])
    }

    /// Variable-length quantity, at most four bytes.
    fn varlen(&mut self) -> Result<u32, MidiError> {
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(MidiError::TruncatedTrack { offset: self.pos })
    }
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

fn be_u16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

fn parse_track(bytes: &[u8], start: usize, end: usize) -> Result<Vec<RawEvent>, MidiError> {
    let mut cur = Cursor {
        bytes,
        pos: start,
        end,
    };
    let mut events = Vec::new();
    let mut tick = 0u64;
    let mut running: Option<u8> = None;

    while cur.pos < cur.end {
        tick += cur.varlen()? as u64;
        let status_pos = cur.pos;
        let first = cur.u8()?;
        match first {
            0xff => {
                let kind = cur.u8()?;
                let len = cur.varlen()? as usize;
                let data = cur.take(len)?;
                match kind {
                    0x51 if len == 3 => {
                        let us =
                            ((data[0] as u32) << 16) | ((data[1] as u32) << 8) | data[2] as u32;
                        events.push(RawEvent {
                            tick,
                            kind: RawKind::Tempo(us),
                        });
                    }
                    0x2f => {
                        events.push(RawEvent {
                            tick,
                            kind: RawKind::EndOfTrack,
                        });
                        // anything after end-of-track is ignored
                        return Ok(events);
                    }
                    _ => {}
                }
                running = None;
            }
            0xf0 | 0xf7 => {
                let len = cur.varlen()? as usize;
                cur.skip(len)?;
                running = None;
            }
            0xf1..=0xfe => {
                return Err(MidiError::UnexpectedStatus {
                    status: first,
                    offset: status_pos,
                })
            }
            _ => {
                let (status, data0) = if first & 0x80 != 0 {
                    running = Some(first);
                    (first, cur.u8()?)
                } else {
                    match running {
                        Some(s) => (s, first),
                        None => {
                            return Err(MidiError::UnexpectedStatus {
                                status: first,
                                offset: status_pos,
                            })
                        }
                    }
                };
                let channel = status & 0x0f;
                let data1 = match status & 0xf0 {
                    0xc0 | 0xd0 => None,
                    _ => Some(cur.u8()?),
                };
                let kind = match (status & 0xf0, data1) {
                    (0x90, Some(vel)) if vel > 0 => Some(RawKind::NoteOn {
                        channel,
                        key: data0 & 0x7f,
                        velocity: vel & 0x7f,
                    }),
                    (0x80, _) | (0x90, _) => Some(RawKind::NoteOff {
                        channel,
                        key: data0 & 0x7f,
                    }),
                    (0xb0, Some(value)) if data0 == SUSTAIN_CONTROLLER => Some(RawKind::Sustain {
                        value: value & 0x7f,
                    }),
                    _ => None,
                };
                if let Some(kind) = kind {
                    events.push(RawEvent { tick, kind });
                }
            }
        }
    }
    events.push(RawEvent {
        tick,
        kind: RawKind::EndOfTrack,
    });
    Ok(events)
}

/// Decodes a format 0 or 1 Standard MIDI File into notes and sustain-pedal events.
///
/// Tracks are merged before note pairing. A note-on with velocity 0 is a
/// note-off, and an off closes the earliest open note of the same channel
/// and pitch. Notes still open at the end are closed there and reported
/// through [`MidiWarning::DanglingNoteOn`].
pub fn parse_midi(bytes: &[u8]) -> Result<ParsedMidi, MidiError> {
    if bytes.len() < 14 || &bytes[0..4] != b"MThd" {
        return Err(MidiError::MalformedHeader("missing MThd magic".into()));
    }
    let header_len = be_u32(&bytes[4..8]) as usize;
    if header_len < 6 || 8 + header_len > bytes.len() {
        return Err(MidiError::MalformedHeader(format!(
            "header length {header_len}"
        )));
    }
    let format = be_u16(&bytes[8..10]);
    let n_tracks = be_u16(&bytes[10..12]) as usize;
    let division = be_u16(&bytes[12..14]);
    if format > 1 {
        return Err(MidiError::UnsupportedFormat(format));
    }
    if division & 0x8000 != 0 {
        return Err(MidiError::UnsupportedDivision(division));
    }
    if division == 0 {
        return Err(MidiError::MalformedHeader("division is zero".into()));
    }

    let mut pos = 8 + header_len;
    let mut tracks = Vec::with_capacity(n_tracks);
    while tracks.len() < n_tracks {
        if bytes.len() - pos < 8 {
            return Err(MidiError::TruncatedTrack {
                offset: bytes.len(),
            });
        }
        let id = &bytes[pos..pos + 4];
        let len = be_u32(&bytes[pos + 4..pos + 8]) as usize;
        let body = pos + 8;
        if len > bytes.len() - body {
            return Err(MidiError::TruncatedTrack {
                offset: bytes.len(),
            });
        }
        if id == b"MTrk" {
            tracks.push(parse_track(bytes, body, body + len)?);
        }
        pos = body + len;
    }

    // Merge; the sort is stable so same-tick events keep track order.
    let mut merged: Vec<RawEvent> = tracks.into_iter().flatten().collect();
    merged.sort_by_key(|e| e.tick);

    let tpq = division as f64;
    let mut tempo = DEFAULT_TEMPO_US as f64;
    let (mut last_tick, mut last_sec) = (0u64, 0.0f64);
    let mut open: HashMap<(u8, u8), VecDeque<(f64, u8)>> = HashMap::new();
    let mut notes = Vec::new();
    let mut sustain = Vec::new();
    let mut end_time = 0.0f64;

    for ev in &merged {
        let sec = last_sec + (ev.tick - last_tick) as f64 * tempo / (1e6 * tpq);
        last_tick = ev.tick;
        last_sec = sec;
        end_time = end_time.max(sec);
        match ev.kind {
            RawKind::Tempo(us) => tempo = us as f64,
            RawKind::NoteOn {
                channel,
                key,
                velocity,
            } => open
                .entry((channel, key))
                .or_default()
                .push_back((sec, velocity)),
            RawKind::NoteOff { channel, key } => {
                if let Some((onset, velocity)) =
                    open.get_mut(&(channel, key)).and_then(|q| q.pop_front())
                {
                    if sec > onset {
                        notes.push(NoteEvent {
                            pitch: key,
                            onset,
                            offset: sec,
                            velocity,
                        });
                    }
                }
            }
            RawKind::Sustain { value } => sustain.push(PedalEvent { time: sec, value }),
            RawKind::EndOfTrack => {}
        }
    }

    let mut warnings = Vec::new();
    let mut dangling: Vec<_> = open
        .into_iter()
        .flat_map(|((_, key), q)| q.into_iter().map(move |(on, vel)| (key, on, vel)))
        .collect();
    dangling.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    for (pitch, onset, velocity) in dangling {
        warnings.push(MidiWarning::DanglingNoteOn { pitch, onset });
        if end_time > onset {
            notes.push(NoteEvent {
                pitch,
                onset,
                offset: end_time,
                velocity,
            });
        }
    }

    sort_notes(&mut notes);
    Ok(ParsedMidi {
        notes: NoteEventList {
            notes,
            ticks_per_quarter: division,
            duration: end_time,
        },
        sustain,
        warnings,
    })
}

/// Extends every note whose offset falls while the pedal is down to the
/// moment the pedal is released (or to the end of the list).
pub fn apply_sustain_pedal(notes: &NoteEventList, pedal: &[PedalEvent]) -> NoteEventList {
    let mut spans: Vec<(f64, f64)> = Vec::new();
    let mut down_since: Option<f64> = None;
    for ev in pedal {
        let down = ev.value >= PEDAL_THRESHOLD;
        match (down, down_since) {
            (true, None) => down_since = Some(ev.time),
            (false, Some(start)) => {
                spans.push((start, ev.time));
                down_since = None;
            }
            _ => {}
        }
    }
    if let Some(start) = down_since {
        spans.push((start, notes.duration.max(start)));
    }

    let mut out = notes.clone();
    for note in &mut out.notes {
        if let Some(&(_, release)) = spans
            .iter()
            .find(|(start, end)| *start <= note.offset && note.offset < *end)
        {
            note.offset = note.offset.max(release);
        }
    }
    out.duration = out
        .notes
        .iter()
        .map(|n| n.offset)
        .fold(out.duration, f64::max);
    out
}

/// Frame-level velocity matrix, `n_frames × 128`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PianoRoll {
    values: Vec<f64>,
    n_frames: usize,
    pub frame_shift: f64,
    pub sample_rate_hint: f64,
}

impl PianoRoll {
    pub fn zeros(n_frames: usize, frame_shift: f64, sample_rate_hint: f64) -> Self {
        Self {
            values: vec![0.0; n_frames * NUM_NOTES],
            n_frames,
            frame_shift,
            sample_rate_hint,
        }
    }

    /// Wraps a row-major buffer; entries are clamped into [0, 1].
    pub fn from_values(values: Vec<f64>, frame_shift: f64, sample_rate_hint: f64) -> Self {
        assert_eq!(values.len() % NUM_NOTES, 0, "roll width must be 128");
        let n_frames = values.len() / NUM_NOTES;
        let values = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self {
            values,
            n_frames,
            frame_shift,
            sample_rate_hint,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, frame: usize, note: usize) -> f64 {
        self.values[frame * NUM_NOTES + note]
    }

    pub fn set(&mut self, frame: usize, note: usize, value: f64) {
        self.values[frame * NUM_NOTES + note] = value.clamp(0.0, 1.0);
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * NUM_NOTES..(frame + 1) * NUM_NOTES]
    }

    pub fn duration(&self) -> f64 {
        self.n_frames as f64 * self.frame_shift
    }
}

/// Number of frames of length `shift` needed to cover `duration` seconds.
pub fn frame_count(duration: f64, shift: f64) -> usize {
    if duration <= 0.0 {
        return 0;
    }
    (duration / shift - FRAME_EPS).ceil().max(0.0) as usize
}

/// Quantizes notes onto frames of `frame_shift` seconds. A note touches a
/// frame if their intervals intersect at all; colliding notes keep the
/// larger velocity.
pub fn to_piano_roll(notes: &NoteEventList, frame_shift: f64) -> PianoRoll {
    assert!(frame_shift > 0.0, "frame_shift must be positive");
    let n = frame_count(notes.duration, frame_shift);
    let mut roll = PianoRoll::zeros(n, frame_shift, 0.0);
    for note in &notes.notes {
        let first = (note.onset / frame_shift + FRAME_EPS).floor().max(0.0) as usize;
        let stop = ((note.offset / frame_shift - FRAME_EPS).ceil().max(0.0) as usize).min(n);
        let v = note.velocity as f64 / 127.0;
        for frame in first..stop {
            let cell = &mut roll.values[frame * NUM_NOTES + note.pitch as usize];
            *cell = cell.max(v);
        }
    }
    roll
}

/// Inverse of [`to_piano_roll`]: each maximal run of nonzero frames in a
/// column becomes one note.
pub fn roll_to_notes(roll: &PianoRoll) -> NoteEventList {
    let shift = roll.frame_shift;
    let mut notes = Vec::new();
    for pitch in 0..NUM_NOTES {
        let mut run: Option<(usize, f64)> = None;
        for frame in 0..=roll.n_frames {
            let v = if frame < roll.n_frames {
                roll.get(frame, pitch)
            } else {
                0.0
            };
            match (&mut run, v > 0.0) {
                (None, true) => run = Some((frame, v)),
                (Some((_, peak)), true) => *peak = peak.max(v),
                (Some((start, peak)), false) => {
                    notes.push(NoteEvent {
                        pitch: pitch as u8,
                        onset: *start as f64 * shift,
                        offset: frame as f64 * shift,
                        velocity: (*peak * 127.0).round().clamp(1.0, 127.0) as u8,
                    });
                    run = None;
                }
                (None, false) => {}
            }
        }
    }
    sort_notes(&mut notes);
    NoteEventList {
        notes,
        ticks_per_quarter: 0,
        duration: roll.duration(),
    }
}

fn push_varlen(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 4];
    let mut i = 3;
    buf[i] = (value & 0x7f) as u8;
    value >>= 7;
    while value > 0 {
        i -= 1;
        buf[i] = (value & 0x7f) as u8 | 0x80;
        value >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

/// Encodes notes as a single-track format-0 SMF at a constant tempo.
///
/// Times are rounded to the nearest tick. Note-offs sort before note-ons at
/// the same tick so back-to-back notes of one pitch stay separate.
pub fn write_smf(notes: &NoteEventList, ticks_per_quarter: u16, tempo_us: u32) -> Vec<u8> {
    let ticks_per_sec = ticks_per_quarter as f64 * 1e6 / tempo_us as f64;
    let to_tick = |t: f64| (t * ticks_per_sec).round() as u64;

    // (tick, order, bytes); order 0 = off, 1 = on
    let mut events: Vec<(u64, u8, [u8; 3])> = Vec::with_capacity(notes.len() * 2);
    for n in &notes.notes {
        events.push((to_tick(n.onset), 1, [0x90, n.pitch, n.velocity]));
        events.push((to_tick(n.offset), 0, [0x80, n.pitch, 0]));
    }
    events.sort_by_key(|e| (e.0, e.1));

    let mut track = Vec::new();
    push_varlen(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x51, 0x03]);
    track.extend_from_slice(&tempo_us.to_be_bytes()[1..]);
    let mut last = 0u64;
    for (tick, _, msg) in &events {
        push_varlen(&mut track, (tick - last) as u32);
        track.extend_from_slice(msg);
        last = *tick;
    }
    let end_tick = to_tick(notes.duration).max(last);
    push_varlen(&mut track, (end_tick - last) as u32);
    track.extend_from_slice(&[0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(22 + track.len());
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&ticks_per_quarter.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    out
}
