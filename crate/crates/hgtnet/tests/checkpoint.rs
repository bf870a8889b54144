use hgtnet::{Checkpoint, CheckpointError, HgtError, RunConfig};
use hgtnet_core::data::synth::{class_names, synth_dataset};
use hgtnet_core::data::{compute_stats, stratified_split, AugmentPolicy, ImageSample, Split};
use hgtnet_core::train::{evaluate, Trainer};
use hgtnet_core::{HgtNet, ModelConfig, RngStream};

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("image_size", "32"),
        ("embed_dim", "8"),
        ("num_heads", "2"),
        ("encoder_layers", "1"),
        ("cnn_channels", "4"),
        ("batch_size", "8"),
        ("learning_rate", "0.001"),
        ("seed", "5"),
        ("synth_per_class", "6"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg
}

fn data(cfg: &RunConfig) -> Vec<ImageSample> {
    let mut s = synth_dataset(cfg.synth_per_class, 32, &mut RngStream::new(1, 2)).unwrap();
    stratified_split(&mut s, 0.2, 3).unwrap();
    s
}

fn trainer(cfg: &RunConfig, samples: &[ImageSample]) -> Trainer {
    let stats = compute_stats(samples.iter().filter(|s| s.split == Split::Train).map(|s| &s.image)).unwrap();
    let model = HgtNet::new(cfg.model.clone(), cfg.train.seed).unwrap();
    Trainer::new(model, cfg.train.clone(), cfg.train_policy.clone(), stats).unwrap()
}

fn splits(samples: &[ImageSample]) -> (Vec<&ImageSample>, Vec<&ImageSample>) {
    (
        samples.iter().filter(|s| s.split == Split::Train).collect(),
        samples.iter().filter(|s| s.split == Split::Test).collect(),
    )
}

#[test]
fn round_trip_preserves_everything_bitwise() {
    let cfg = small_config();
    let samples = data(&cfg);
    let (train, test) = splits(&samples);
    let mut tr = trainer(&cfg, &samples);
    tr.run_epoch(&train, &test).unwrap();
    let ck = Checkpoint::from_trainer(&tr, &cfg, &class_names());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.hgtn");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    assert!(back.params.bitwise_eq(&tr.model.params));

    let a = evaluate(&tr.model, &test, &tr.stats, 4).unwrap();
    let b = evaluate(&back.model(), &test, &back.stats, 4).unwrap();
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    for (x, y) in a.records.iter().zip(&b.records) {
        assert!(x.scores.iter().zip(&y.scores).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn resumed_training_matches_uninterrupted_training() {
    let cfg = small_config();
    let samples = data(&cfg);
    let (train, test) = splits(&samples);

    let mut straight = trainer(&cfg, &samples);
    straight.run_epoch(&train, &test).unwrap();
    straight.run_epoch(&train, &test).unwrap();
    let expected = straight.run_epoch(&train, &test).unwrap();

    let mut first = trainer(&cfg, &samples);
    first.run_epoch(&train, &test).unwrap();
    first.run_epoch(&train, &test).unwrap();
    let bytes = Checkpoint::from_trainer(&first, &cfg, &class_names()).encode();
    drop(first);
    let mut resumed = Checkpoint::decode(&bytes).unwrap().into_trainer();
    let got = resumed.run_epoch(&train, &test).unwrap();

    assert_eq!(got.record.train_loss.to_bits(), expected.record.train_loss.to_bits());
    assert_eq!(got.record.test_loss.to_bits(), expected.record.test_loss.to_bits());
    assert_eq!(got.record.epoch, 3);
    assert!(resumed.model.params.bitwise_eq(&straight.model.params));
    assert_eq!(resumed.history, straight.history);
    assert_eq!(resumed.tracker, straight.tracker);
}

fn encoded() -> Vec<u8> {
    let cfg = small_config();
    let model = HgtNet::new(cfg.model.clone(), 1).unwrap();
    let stats = hgtnet_core::data::DatasetStats::identity();
    let tr = Trainer::new(model, cfg.train.clone(), AugmentPolicy::train(32), stats).unwrap();
    Checkpoint::from_trainer(&tr, &cfg, &class_names()).encode()
}

#[test]
fn format_errors_are_distinct() {
    let good = encoded();
    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::decode(&bad), Err(CheckpointError::BadMagic(_))));

    let mut bad = good.clone();
    bad[4..8].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(Checkpoint::decode(&bad), Err(CheckpointError::Version { found: 7, expected: 1 })));

    for cut in [0, 3, 6, 10, 20, good.len() / 2, good.len() - 1] {
        assert!(
            matches!(Checkpoint::decode(&good[..cut]), Err(CheckpointError::Truncated(_))),
            "cut at {cut}"
        );
    }
    let mut bad = good.clone();
    bad.push(0);
    assert!(matches!(Checkpoint::decode(&bad), Err(CheckpointError::Corrupt(_))));
}

#[test]
fn metadata_and_layout_are_validated() {
    let good = encoded();
    let meta_len = u64::from_le_bytes(good[8..16].try_into().unwrap()) as usize;
    let meta = std::str::from_utf8(&good[16..16 + meta_len]).unwrap();
    let rebuild = |meta: &str| {
        let mut out = good[..8].to_vec();
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&good[16 + meta_len..]);
        out
    };
    // Same bytes reassembled decode fine.
    assert!(Checkpoint::decode(&rebuild(meta)).is_ok());
    // A different width no longer matches the parameter table.
    let wider = meta.replace("embed_dim = 8", "embed_dim = 12");
    assert!(matches!(Checkpoint::decode(&rebuild(&wider)), Err(CheckpointError::Corrupt(_))));
    let unknown = format!("{meta}state.mystery = 1\n");
    assert!(matches!(Checkpoint::decode(&rebuild(&unknown)), Err(CheckpointError::Corrupt(_))));
    let no_epoch: String = meta.lines().filter(|l| !l.starts_with("state.epoch")).map(|l| format!("{l}\n")).collect();
    assert!(matches!(Checkpoint::decode(&rebuild(&no_epoch)), Err(CheckpointError::Corrupt(_))));
}

#[test]
fn load_errors_carry_the_path_and_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing.hgtn");
    let err = Checkpoint::load(&path).unwrap_err();
    assert!(matches!(err, HgtError::Checkpoint { .. }));
    assert_eq!(err.exit_code(), 5);
    assert!(err.to_string().contains("missing.hgtn"));

    std::fs::write(&path, b"JUNKJUNKJUNK").unwrap();
    let err = Checkpoint::load(&path).unwrap_err();
    assert_eq!(err.exit_code(), 5);
    assert!(err.to_string().contains("magic"), "{err}");
}

#[test]
fn every_parameter_appears_once_in_the_table() {
    let bytes = encoded();
    let ck = Checkpoint::decode(&bytes).unwrap();
    let fresh = hgtnet_core::ParamSet::init(&ModelConfig { ..ck.config.model.clone() }, 0).unwrap();
    assert!(ck.params.same_layout(&fresh));
    assert_eq!(ck.params.len(), fresh.len());
}
