use flavr_core::data::{enumerate_samples, materialize, synth_clips, MotionKind, Sample, SynthSpec};
use flavr_core::train::{fit, train_step, AdamState, TrainConfig};
use flavr_core::{FlavrConfig, Network};

fn two_samples() -> Vec<Sample> {
    let spec = SynthSpec::new(MotionKind::Translate, (1.0, -0.5), 7, 16, 16, 11);
    synth_clips(&spec, 2)
        .unwrap()
        .iter()
        .map(|c| materialize(c, &enumerate_samples(c, 2, 2)[0]).unwrap())
        .collect()
}

fn full_batch(shuffle: bool) -> TrainConfig {
    TrainConfig {
        lr0: 1e-3,
        batch_size: 2,
        max_epochs: 3,
        augment: false,
        shuffle,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn gd_reference(samples: &[Sample], tcfg: &TrainConfig) -> Network<f64> {
    let mut net = Network::<f64>::build(&FlavrConfig::tiny(), 1).unwrap();
    let mut state = AdamState::new();
    for _ in 0..tcfg.max_epochs {
        train_step(&mut net, samples, &mut state, tcfg.lr0, &tcfg.adam, None).unwrap();
    }
    net
}

#[test]
fn full_batch_epochs_equal_gradient_steps() {
    let samples = two_samples();
    let tcfg = full_batch(false);
    let reference = gd_reference(&samples, &tcfg);
    let mut net = Network::<f64>::build(&FlavrConfig::tiny(), 1).unwrap();
    let outcome = fit(&mut net, &samples, &[], &tcfg).unwrap();
    assert_eq!(outcome.log.steps(), 3);
    for p in reference.parameters() {
        assert_eq!(net.parameter(p.name()).unwrap().value(), p.value(), "{}", p.name());
    }
}

#[test]
fn shuffling_a_full_batch_changes_only_rounding() {
    let samples = two_samples();
    let tcfg = full_batch(true);
    let reference = gd_reference(&samples, &tcfg);
    let mut net = Network::<f64>::build(&FlavrConfig::tiny(), 1).unwrap();
    fit(&mut net, &samples, &[], &tcfg).unwrap();
    for p in reference.parameters() {
        let d = net.parameter(p.name()).unwrap().value().max_abs_diff(p.value()).unwrap();
        assert!(d <= 1e-9, "{}: {d:e}", p.name());
    }
}

#[test]
fn seeded_runs_repeat_exactly() {
    let samples = two_samples();
    let tcfg = TrainConfig { batch_size: 1, augment: true, ..full_batch(true) };
    let run = || {
        let mut net = Network::<f32>::build(&FlavrConfig::tiny(), 2).unwrap();
        let outcome = fit(&mut net, &samples, &samples, &tcfg).unwrap();
        (outcome.log.to_csv(), outcome.last.encode())
    };
    assert_eq!(run(), run());
}
