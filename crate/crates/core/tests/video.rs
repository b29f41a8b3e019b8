use flavr_core::data::{enumerate_indices, FrameSequence};
use flavr_core::video::upsample;
use flavr_core::{FlavrConfig, Network, Tensor};
use proptest::prelude::*;

fn frames(n: usize) -> FrameSequence {
    let frames = (0..n).map(|i| Tensor::full(&[3, 16, 16], 0.1 * (i % 8) as f32)).collect();
    FrameSequence::new(frames, 12.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn predictions_are_the_targets_of_aligned_windows(n in 1usize..10, k in prop::sample::select(vec![2usize, 4]), context in 1usize..3) {
        let net = Network::<f32>::build(&FlavrConfig::tiny().with_k(k).with_context(context), 0).unwrap();
        let out = upsample(&net, &frames(n), k).unwrap();
        let len = (n - 1) * k + 1;
        let mut expected: Vec<usize> = enumerate_indices(len, k, context)
            .into_iter()
            .filter(|s| s.input_indices().iter().all(|i| (i - 1) % k == 0))
            .flat_map(|s| s.target_indices())
            .collect();
        expected.sort();
        let predicted: Vec<usize> = out.frames.iter().filter(|f| f.2).map(|f| f.0).collect();
        prop_assert_eq!(&predicted, &expected);
        prop_assert_eq!(predicted.len(), (n + 1).saturating_sub(2 * context) * (k - 1));
        prop_assert_eq!(out.frames.len() - predicted.len(), n);
        prop_assert_eq!(out.skipped.len() + predicted.len() / (k - 1), n - 1);
        prop_assert!(out.frames.iter().all(|f| f.0 >= 1 && f.0 <= len));
    }
}
