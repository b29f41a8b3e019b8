use flavr_core::data::{augment, enumerate_indices, materialize, FrameSequence, SampleSpec};
use flavr_core::Tensor;
use proptest::prelude::*;

/// Every anchor whose 2C inputs and k-1 targets all fall inside `1..=len`.
fn oracle(len: usize, k: usize, context: usize) -> Vec<usize> {
    let (len, k, c) = (len as i64, k as i64, context as i64);
    (1..=len)
        .filter(|&anchor| {
            let inputs = (0..2 * c).map(|j| anchor + (j - c + 1) * k);
            let targets = anchor + 1..anchor + k;
            inputs.chain(targets).all(|i| (1..=len).contains(&i))
        })
        .map(|a| a as usize)
        .collect()
}

fn numbered(len: usize) -> FrameSequence {
    let frames = (1..=len).map(|i| Tensor::full(&[3, 2, 2], i as f32)).collect();
    FrameSequence::new(frames, 30.0).unwrap()
}

#[test]
fn thirteen_frames_k4_c2() {
    let specs = enumerate_indices(13, 4, 2);
    assert_eq!(specs.len(), 1);
    let spec = specs[0];
    assert_eq!(spec.input_indices(), vec![1, 5, 9, 13]);
    assert_eq!(spec.target_indices(), vec![6, 7, 8]);

    let sample = materialize(&numbered(13), &spec).unwrap();
    let first = |ts: &[Tensor<f32>]| ts.iter().map(|t| t.data()[0] as usize).collect::<Vec<_>>();
    assert_eq!(first(&sample.inputs), vec![1, 5, 9, 13]);
    assert_eq!(first(&sample.targets), vec![6, 7, 8]);
}

#[test]
fn short_clips_give_no_samples() {
    assert!(enumerate_indices(12, 4, 2).is_empty());
    assert!(materialize(&numbered(12), &SampleSpec { k: 4, context: 2, anchor: 5 }).is_err());
}

proptest! {
    #[test]
    fn enumeration_matches_exhaustive_oracle(len in 1usize..60, k in 1usize..9, context in 1usize..5) {
        let anchors: Vec<usize> = enumerate_indices(len, k, context).iter().map(|s| s.anchor).collect();
        prop_assert_eq!(anchors, oracle(len, k, context));
    }

    #[test]
    fn validity_matches_oracle(len in 1usize..40, k in 1usize..7, context in 1usize..4, anchor in 1usize..40) {
        let spec = SampleSpec { k, context, anchor };
        prop_assert_eq!(spec.is_valid(len), oracle(len, k, context).contains(&anchor));
    }

    #[test]
    fn valid_windows_are_evenly_spaced(len in 2usize..60, k in 2usize..9, context in 1usize..4) {
        for spec in enumerate_indices(len, k, context) {
            let inputs = spec.input_indices();
            prop_assert!(inputs.windows(2).all(|w| w[1] - w[0] == k));
            prop_assert_eq!(inputs[context - 1], spec.anchor);
            prop_assert_eq!(inputs[context], spec.anchor + k);
        }
    }

    #[test]
    fn augmentation_is_an_involution(reverse: bool, hflip: bool) {
        let mut frames = Vec::new();
        for i in 0..13 {
            frames.push(Tensor::from_fn(&[3, 2, 3], |j| (i * 18 + j) as f32));
        }
        let seq = FrameSequence::new(frames, 30.0).unwrap();
        let sample = materialize(&seq, &enumerate_indices(13, 4, 2)[0]).unwrap();
        let twice = augment(&augment(&sample, reverse, hflip), reverse, hflip);
        prop_assert_eq!(twice, sample);
    }
}
