mod common;

use common::*;
use flavr_core::tensor::{conv2d, conv2d_backward, conv3d, conv3d_backward, conv_transpose3d, conv_transpose3d_backward, Conv2dSpec, ConvSpec};
use flavr_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DRAWS: usize = 200;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn conv3d_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..DRAWS {
        let case = ConvCase::draw(&mut rng);
        let x = random_tensor(&case.input_shape(), &mut rng);
        let w = random_tensor(&case.spec.weight_shape(), &mut rng);
        let b = random_tensor(&[case.spec.out_channels], &mut rng);
        let got = conv3d(&x, &w, &b, &case.spec).unwrap();
        let want = conv3d_oracle(&x, &w, &b, &case.spec);
        assert_eq!(got.shape(), want.shape(), "draw {i}: {case:?}");
        let err = got.max_abs_diff(&want).unwrap();
        assert!(err <= 1e-12, "draw {i}: {case:?} err {err:e}");
    }
}

#[test]
fn conv_transpose3d_matches_scatter() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut done = 0;
    while done < DRAWS {
        let kernel = [0; 3].map(|_| rng.gen_range(1..=4));
        let stride = [0; 3].map(|_| rng.gen_range(1..=3));
        let padding = kernel.map(|k: usize| rng.gen_range(0..k));
        let extents: [usize; 3] = [0; 3].map(|_| rng.gen_range(1..=8));
        let spec = ConvSpec::new(rng.gen_range(1..=5), rng.gen_range(1..=5), kernel, stride, padding).unwrap();
        if spec.transposed_output_extents(extents).is_err() {
            continue;
        }
        let batch = rng.gen_range(1..=2);
        let x = random_tensor(&[batch, spec.in_channels, extents[0], extents[1], extents[2]], &mut rng);
        let w = random_tensor(&spec.transposed_weight_shape(), &mut rng);
        let b = random_tensor(&[spec.out_channels], &mut rng);
        let got = conv_transpose3d(&x, &w, &b, &spec).unwrap();
        let want = conv_transpose3d_oracle(&x, &w, &b, &spec);
        assert_eq!(got.shape(), want.shape(), "{spec:?} on {extents:?}");
        let err = got.max_abs_diff(&want).unwrap();
        assert!(err <= 1e-12, "{spec:?} on {extents:?}: err {err:e}");
        done += 1;
    }
}

#[test]
fn conv2d_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut done = 0;
    while done < DRAWS {
        let kernel = [0; 2].map(|_| rng.gen_range(1..=7));
        let stride = [0; 2].map(|_| rng.gen_range(1..=3));
        let padding = kernel.map(|k: usize| rng.gen_range(0..k));
        let (h, w) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        if h + 2 * padding[0] < kernel[0] || w + 2 * padding[1] < kernel[1] {
            continue;
        }
        let spec = Conv2dSpec {
            in_channels: rng.gen_range(1..=5),
            out_channels: rng.gen_range(1..=5),
            kernel,
            stride,
            padding,
        };
        let x = random_tensor(&[rng.gen_range(1..=2), spec.in_channels, h, w], &mut rng);
        let wt = random_tensor(&spec.weight_shape(), &mut rng);
        let b = random_tensor(&[spec.out_channels], &mut rng);
        let got = conv2d(&x, &wt, &b, &spec).unwrap();
        let want = conv2d_oracle(&x, &wt, &b, stride, padding);
        assert_eq!(got.shape(), want.shape());
        let err = got.max_abs_diff(&want).unwrap();
        assert!(err <= 1e-12, "{spec:?} on {h}x{w}: err {err:e}");
        done += 1;
    }
}

/// `<conv(x), y> = <x, conv^T(y)>` and `<conv_w(V), y> = <dW, V>`.
#[test]
fn adjoint_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let zero = |c| Tensor::<f64>::zeros(&[c]);
    for i in 0..DRAWS {
        let case = ConvCase::draw(&mut rng);
        let spec = case.spec;
        let x = random_tensor(&case.input_shape(), &mut rng);
        let w = random_tensor(&spec.weight_shape(), &mut rng);
        let y = random_tensor(&case.output_shape(), &mut rng);
        let lhs = conv3d(&x, &w, &zero(spec.out_channels), &spec).unwrap().dot(&y).unwrap();
        let grads = conv3d_backward(&y, &x, &w, &spec).unwrap();
        let rhs = x.dot(&grads.input).unwrap();
        assert!(rel(lhs, rhs) <= 1e-10, "draw {i}: {lhs} vs {rhs}");

        let v = random_tensor(&spec.weight_shape(), &mut rng);
        let lhs = conv3d(&x, &v, &zero(spec.out_channels), &spec).unwrap().dot(&y).unwrap();
        let rhs = grads.weight.dot(&v).unwrap();
        assert!(rel(lhs, rhs) <= 1e-10, "draw {i}: weight {lhs} vs {rhs}");

        // The transposed op is the same adjoint whenever its extent formula
        // lands back on the input extents.
        let t = spec.transposed_output_extents(spec.output_extents(case.extents).unwrap());
        if t.is_ok_and(|t| t == case.extents) {
            let tspec = ConvSpec::new(spec.out_channels, spec.in_channels, spec.kernel, spec.stride, spec.padding).unwrap();
            let back = conv_transpose3d(&y, &w, &zero(spec.in_channels), &tspec).unwrap();
            assert_eq!(back.shape(), x.shape());
            let rhs = x.dot(&back).unwrap();
            let lhs = conv3d(&x, &w, &zero(spec.out_channels), &spec).unwrap().dot(&y).unwrap();
            assert!(rel(lhs, rhs) <= 1e-10, "draw {i}: transpose {lhs} vs {rhs}");
        }
    }
}

#[test]
fn transposed_backward_is_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut done = 0;
    while done < 50 {
        let case = ConvCase::draw(&mut rng);
        let tspec = ConvSpec::new(case.spec.out_channels, case.spec.in_channels, case.spec.kernel, case.spec.stride, case.spec.padding).unwrap();
        let [t, h, w] = case.spec.output_extents(case.extents).unwrap();
        if tspec.transposed_output_extents([t, h, w]).is_err() {
            continue;
        }
        done += 1;
        let x = random_tensor(&[case.batch, tspec.in_channels, t, h, w], &mut rng);
        let wt = random_tensor(&tspec.transposed_weight_shape(), &mut rng);
        let b = Tensor::zeros(&[tspec.out_channels]);
        let out = conv_transpose3d(&x, &wt, &b, &tspec).unwrap();
        let g = random_tensor(out.shape(), &mut rng);
        let grads = conv_transpose3d_backward(&g, &x, &wt, &tspec).unwrap();
        let lhs = out.dot(&g).unwrap();
        assert!(rel(lhs, x.dot(&grads.input).unwrap()) <= 1e-10);
        assert!(rel(lhs, wt.dot(&grads.weight).unwrap()) <= 1e-10);
        assert!((grads.bias.sum() - g.sum()).abs() <= 1e-10 * g.numel() as f64);
    }
}

#[test]
fn conv2d_backward_matches_3d_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let spec = Conv2dSpec::same(3, 5, [7, 7]);
    let x = random_tensor(&[2, 3, 9, 6], &mut rng);
    let w = random_tensor(&spec.weight_shape(), &mut rng);
    let g = random_tensor(&[2, 5, 9, 6], &mut rng);
    let grads = conv2d_backward(&g, &x, &w, &spec).unwrap();
    let g3 = conv3d_backward(
        &g.reshape(&[2, 5, 1, 9, 6]).unwrap(),
        &x.reshape(&[2, 3, 1, 9, 6]).unwrap(),
        &w.reshape(&[5, 3, 1, 7, 7]).unwrap(),
        &spec.to_3d(),
    )
    .unwrap();
    assert_eq!(grads.input.data(), g3.input.data());
    assert_eq!(grads.weight.data(), g3.weight.data());
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let spec = ConvSpec::new(6, 7, [3, 4, 4], [1, 2, 2], [1, 1, 1]).unwrap();
    let x = random_tensor(&[2, 6, 4, 8, 8], &mut rng);
    let w = random_tensor(&spec.weight_shape(), &mut rng);
    let b = random_tensor(&[7], &mut rng);
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let y = conv3d(&x, &w, &b, &spec).unwrap();
            let g = conv3d_backward(&y, &x, &w, &spec).unwrap();
            (y, g)
        })
    };
    assert_eq!(run(1), run(3));
}
