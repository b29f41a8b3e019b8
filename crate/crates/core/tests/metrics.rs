mod common;

use common::ssim_oracle;
use flavr_core::data::{synth_clips, FrameSequence, MotionKind, Sample, SynthSpec};
use flavr_core::metrics::{evaluate, psnr, ssim, Interpolator, PSNR_CAP};
use flavr_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_image(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(0.0..1.0))
}

#[test]
fn psnr_of_uniform_offsets() {
    let gt = Tensor::<f64>::full(&[3, 8, 8], 0.25);
    let p = psnr(&Tensor::full(&[3, 8, 8], 0.35), &gt).unwrap();
    assert!((p - 20.0).abs() < 1e-9, "{p}");
    let p = psnr(&Tensor::full(&[3, 8, 8], 0.75), &gt).unwrap();
    assert!((p - 20.0 * 2f64.log10()).abs() < 1e-9, "{p}");
    assert!((p - 6.0206).abs() < 1e-4);
    assert_eq!(psnr(&gt, &gt).unwrap(), PSNR_CAP);
}

#[test]
fn ssim_of_identical_images_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for shape in [vec![11, 11], vec![3, 32, 32], vec![2, 3, 17, 40]] {
        let x = unit_image(&shape, &mut rng);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn ssim_matches_window_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let x = unit_image(&[3, 32, 32], &mut rng);
        let noise = unit_image(&[3, 32, 32], &mut rng);
        let y = Tensor::from_fn(&[3, 32, 32], |i| (x.data()[i] + 0.3 * (noise.data()[i] - 0.5)).clamp(0.0, 1.0));
        let got = ssim(&x, &y).unwrap();
        let want = ssim_oracle(&x, &y);
        assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
    }
}

#[test]
fn ssim_rejects_small_images() {
    let x = Tensor::<f64>::zeros(&[3, 10, 32]);
    assert!(ssim(&x, &x).is_err());
}

proptest! {
    #[test]
    fn metrics_are_symmetric(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = unit_image(&[1, 12, 13], &mut rng);
        let y = unit_image(&[1, 12, 13], &mut rng);
        prop_assert_eq!(psnr(&x, &y).unwrap(), psnr(&y, &x).unwrap());
        prop_assert!((ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap()).abs() < 1e-12);
        prop_assert!(ssim(&x, &y).unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn psnr_depends_only_on_mse(d in 0.01f64..0.5) {
        let gt = Tensor::<f64>::full(&[3, 4, 4], 0.2);
        let up = psnr(&Tensor::full(&[3, 4, 4], 0.2 + d), &gt).unwrap();
        prop_assert!((up - (-20.0 * d.log10())).abs() < 1e-9);
    }
}

struct Exact;

impl Interpolator for Exact {
    fn interpolate(&self, sample: &Sample) -> flavr_core::Result<Vec<Tensor<f32>>> {
        Ok(sample.targets.clone())
    }
}

#[test]
fn exact_model_scores_ssim_one_on_every_row() {
    let spec = SynthSpec::new(MotionKind::Translate, (1.0, 0.5), 14, 32, 32, 4);
    let clips: Vec<(String, FrameSequence)> = synth_clips(&spec, 3)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, s)| (format!("clip{i}"), s))
        .collect();
    let report = evaluate(&Exact, &clips, 4, 2).unwrap();
    assert_eq!(report.rows.len(), 3 * 3);
    assert_eq!(report.to_csv().lines().count(), 1 + 3 * 3 + 1);
    for r in &report.rows {
        assert!((r.ssim - 1.0).abs() < 1e-12, "{r:?}");
        assert_eq!(r.psnr, PSNR_CAP);
    }
    assert!((report.ssim - 1.0).abs() < 1e-12);
}
