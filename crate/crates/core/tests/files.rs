use m2a_core::acoustic::{self, AmConfig, AmVariant};
use m2a_core::dsp::{FeatureMatrix, WaveSignal};
use m2a_core::io::{read_features, read_wav, write_features, write_wav, IoError};
use m2a_core::midi_io::{
    parse_midi, to_piano_roll, write_smf, NoteEvent, NoteEventList, DEFAULT_TEMPO_US,
};
use m2a_core::nsf::{self, NsfConfig};
use tempfile::TempDir;

#[test]
fn wav_file_round_trip_is_quantized() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("x.wav");
    let wave = WaveSignal::new(
        (0..1000).map(|i| ((i as f64) * 0.01).sin() * 0.8).collect(),
        24_000,
    );
    write_wav(&path, &wave).unwrap();
    let back = read_wav(&path).unwrap();
    assert_eq!(back.len(), 1000);
    for (a, b) in wave.samples.iter().zip(&back.samples) {
        assert!((a - b).abs() <= 0.5 / 32767.0 + 1e-12);
    }
    write_wav(&path, &back).unwrap();
    assert_eq!(read_wav(&path).unwrap(), back);
}

#[test]
fn midi_to_roll_file() {
    let dir = TempDir::new().unwrap();
    let notes = NoteEventList::new(
        vec![
            NoteEvent::new(60, 0.0, 0.25, 127).unwrap(),
            NoteEvent::new(72, 0.125, 0.5, 64).unwrap(),
        ],
        0.5,
    );
    let parsed = parse_midi(&write_smf(&notes, 480, DEFAULT_TEMPO_US)).unwrap();
    assert_eq!(parsed.notes.notes, notes.notes);
    let roll = to_piano_roll(&parsed.notes, 0.012);
    let path = dir.path().join("r.feat");
    write_features(&path, &FeatureMatrix::from_piano_roll(&roll)).unwrap();
    let f = read_features(&path).unwrap();
    assert_eq!(f.n_frames, 42);
    assert_eq!(f.get(0, 60), 1.0);
    assert!((f.get(20, 72) - 64.0 / 127.0).abs() < 1e-6);
}

#[test]
fn checkpoints_survive_disk_and_detect_damage() {
    let dir = TempDir::new().unwrap();
    let cfg = NsfConfig::default();
    let params = nsf::init_params(&cfg, 1);
    let path = dir.path().join("n.ckpt");
    nsf::save_checkpoint(&params, &cfg, &path).unwrap();
    let (back, back_cfg) = nsf::load_checkpoint(&path, Some(&cfg)).unwrap();
    assert_eq!(back_cfg, cfg);
    assert_eq!(
        nsf::encode_nsf_checkpoint(&back, &cfg),
        std::fs::read(&path).unwrap()
    );

    let other = NsfConfig { channels: 8, ..cfg };
    assert!(matches!(
        nsf::load_checkpoint(&path, Some(&other)),
        Err(IoError::CorruptCheckpoint(_))
    ));

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&path, &bytes).unwrap();
    assert!(nsf::load_checkpoint(&path, None).is_err());

    let am_cfg = AmConfig::new(AmVariant::Taco4, 80);
    let am_path = dir.path().join("a.ckpt");
    acoustic::save_checkpoint(&acoustic::init_params(&am_cfg, 2), &am_cfg, &am_path).unwrap();
    assert_eq!(acoustic::load_checkpoint(&am_path, None).unwrap().1, am_cfg);
    assert!(nsf::load_checkpoint(&am_path, None).is_err());
}
