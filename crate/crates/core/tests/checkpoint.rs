use flavr_core::data::{enumerate_samples, materialize, synth_clips, MotionKind, SynthSpec};
use flavr_core::train::{load_checkpoint, load_checkpoint_for, save_checkpoint, train_step, AdamConfig, AdamState, Checkpoint};
use flavr_core::{Error, FlavrConfig, FusionMode, Network, Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn trained<T: Scalar>(cfg: &FlavrConfig) -> (Network<T>, AdamState) {
    let spec = SynthSpec::new(MotionKind::Translate, (1.0, 0.0), 7, 16, 16, 3);
    let samples: Vec<_> = synth_clips(&spec, 2)
        .unwrap()
        .iter()
        .map(|c| materialize(c, &enumerate_samples(c, 2, 2)[0]).unwrap())
        .collect();
    let mut net = Network::<T>::build(cfg, 9).unwrap();
    let mut state = AdamState::new();
    for _ in 0..2 {
        train_step(&mut net, &samples, &mut state, 1e-3, &AdamConfig::default(), None).unwrap();
    }
    (net, state)
}

fn round_trip<T: Scalar>() {
    let cfg = FlavrConfig::tiny();
    let (net, state) = trained::<T>(&cfg);
    let mut ckpt = Checkpoint::from_network(&net);
    ckpt.adam = Some(state);
    ckpt.epoch = 2;
    ckpt.best_val_psnr = 21.5;

    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    save_checkpoint(&a, &ckpt).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    save_checkpoint(&b, &loaded).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(loaded.epoch, 2);
    assert_eq!(loaded.adam, ckpt.adam);

    let restored: Network<T> = load_checkpoint_for(&a, &cfg).unwrap().to_network().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::<f64>::uniform(&[2, 3, 4, 16, 16], 0.0, 1.0, &mut rng).cast::<T>();
    let (p, q) = (net.infer(&x).unwrap(), restored.infer(&x).unwrap());
    for (fp, fq) in p.iter().zip(&q) {
        let bits = |t: &Tensor<T>| t.data().iter().map(|v| v.widen().to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(fp), bits(fq));
    }
}

#[test]
fn f32_round_trip_is_byte_and_bit_exact() {
    round_trip::<f32>();
}

#[test]
fn f64_round_trip_is_byte_and_bit_exact() {
    round_trip::<f64>();
}

#[test]
fn failures_have_distinct_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let net = Network::<f32>::build(&FlavrConfig::tiny(), 0).unwrap();
    let bytes = Checkpoint::from_network(&net).encode();
    let root = |e: Error| e.root().to_string();

    let missing = load_checkpoint(dir.path().join("nope.ckpt")).unwrap_err();
    assert!(matches!(missing.root(), Error::Io { .. }), "{missing}");

    let path = dir.path().join("x.ckpt");
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"NOPE");
    std::fs::write(&path, &bad).unwrap();
    let magic = load_checkpoint(&path).unwrap_err();
    assert!(matches!(magic.root(), Error::BadMagic { .. }), "{}", root(magic));

    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    let short = load_checkpoint(&path).unwrap_err();
    assert!(matches!(short.root(), Error::Truncated(_)), "{}", root(short));

    std::fs::write(&path, &bytes).unwrap();
    let ungated = FlavrConfig { gating: false, ..FlavrConfig::tiny() };
    let names = load_checkpoint_for(&path, &ungated).unwrap_err();
    assert!(matches!(names.root(), Error::NameMismatch { .. }), "{}", root(names));

    let mut unfused = Network::<f32>::build(&FlavrConfig { fusion: FusionMode::None, ..FlavrConfig::tiny() }, 0).unwrap();
    let shapes = load_checkpoint(&path).unwrap().restore(&mut unfused).unwrap_err();
    assert!(matches!(shapes.root(), Error::Shape { .. } | Error::InvalidTensor(_)), "{}", root(shapes));
}
