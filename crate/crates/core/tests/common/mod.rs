//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use flavr_core::net::{channel_gate, channel_gate_backward, GatingLayer};
use flavr_core::tensor::*;
use flavr_core::train::loss;
use flavr_core::LossMode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seven nested loops straight from the definition of zero-padded
/// cross-correlation.
pub fn conv3d_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, spec: &ConvSpec) -> Tensor<f64> {
    let [bn, ci, ti, hi, wi] = dims5(x.shape());
    let co = spec.out_channels;
    let [kt, kh, kw] = spec.kernel;
    let [st, sh, sw] = spec.stride.map(|s| s as i64);
    let [pt, ph, pw] = spec.padding.map(|p| p as i64);
    let out = |n: usize, k: usize, s: i64, p: i64| ((n as i64 + 2 * p - k as i64) / s + 1) as usize;
    let (to, ho, wo) = (out(ti, kt, st, pt), out(hi, kh, sh, ph), out(wi, kw, sw, pw));
    let mut y = Tensor::zeros(&[bn, co, to, ho, wo]);
    for n in 0..bn {
        for o in 0..co {
            for t in 0..to {
                for h in 0..ho {
                    for v in 0..wo {
                        let mut acc = b.data()[o];
                        for c in 0..ci {
                            for a in 0..kt {
                                for e in 0..kh {
                                    for f in 0..kw {
                                        let it = t as i64 * st + a as i64 - pt;
                                        let ih = h as i64 * sh + e as i64 - ph;
                                        let iw = v as i64 * sw + f as i64 - pw;
                                        if it < 0 || ih < 0 || iw < 0 || it >= ti as i64 || ih >= hi as i64 || iw >= wi as i64 {
                                            continue;
                                        }
                                        acc += w.get(&[o, c, a, e, f]) * x.get(&[n, c, it as usize, ih as usize, iw as usize]);
                                    }
                                }
                            }
                        }
                        y.set(&[n, o, t, h, v], acc);
                    }
                }
            }
        }
    }
    y
}

/// Scatter form of the transposed convolution: every input element spreads
/// `x * w` over the window it maps to, then padding is cropped.
pub fn conv_transpose3d_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, spec: &ConvSpec) -> Tensor<f64> {
    let [bn, ci, ti, hi, wi] = dims5(x.shape());
    let co = spec.out_channels;
    let k = spec.kernel;
    let s = spec.stride;
    let p = spec.padding;
    let full = |n: usize, a: usize| (n - 1) * s[a] + k[a];
    let (tf, hf, wf) = (full(ti, 0), full(hi, 1), full(wi, 2));
    let mut big = Tensor::<f64>::zeros(&[bn, co, tf, hf, wf]);
    for n in 0..bn {
        for c in 0..ci {
            for t in 0..ti {
                for h in 0..hi {
                    for v in 0..wi {
                        let xv = x.get(&[n, c, t, h, v]);
                        for o in 0..co {
                            for a in 0..k[0] {
                                for e in 0..k[1] {
                                    for f in 0..k[2] {
                                        let idx = [n, o, t * s[0] + a, h * s[1] + e, v * s[2] + f];
                                        big.set(&idx, big.get(&idx) + xv * w.get(&[c, o, a, e, f]));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let (to, ho, wo) = (tf - 2 * p[0], hf - 2 * p[1], wf - 2 * p[2]);
    Tensor::from_fn(&[bn, co, to, ho, wo], |i| {
        let v = i % wo;
        let h = i / wo % ho;
        let t = i / (wo * ho) % to;
        let o = i / (wo * ho * to) % co;
        let n = i / (wo * ho * to * co);
        big.get(&[n, o, t + p[0], h + p[1], v + p[2]]) + b.data()[o]
    })
}

/// Plain 2D correlation oracle on `[B, C, H, W]`.
pub fn conv2d_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: [usize; 2], pad: [usize; 2]) -> Tensor<f64> {
    let s = x.shape();
    let (bn, ci, hi, wi) = (s[0], s[1], s[2] as i64, s[3] as i64);
    let ws = w.shape();
    let (co, kh, kw) = (ws[0], ws[2], ws[3]);
    let ho = ((hi + 2 * pad[0] as i64 - kh as i64) / stride[0] as i64 + 1) as usize;
    let wo = ((wi + 2 * pad[1] as i64 - kw as i64) / stride[1] as i64 + 1) as usize;
    let mut y = Tensor::zeros(&[bn, co, ho, wo]);
    for n in 0..bn {
        for o in 0..co {
            for h in 0..ho {
                for v in 0..wo {
                    let mut acc = b.data()[o];
                    for c in 0..ci {
                        for e in 0..kh {
                            for f in 0..kw {
                                let ih = (h * stride[0] + e) as i64 - pad[0] as i64;
                                let iw = (v * stride[1] + f) as i64 - pad[1] as i64;
                                if ih >= 0 && iw >= 0 && ih < hi && iw < wi {
                                    acc += w.get(&[o, c, e, f]) * x.get(&[n, c, ih as usize, iw as usize]);
                                }
                            }
                        }
                    }
                    y.set(&[n, o, h, v], acc);
                }
            }
        }
    }
    y
}

fn dims5(s: &[usize]) -> [usize; 5] {
    [s[0], s[1], s[2], s[3], s[4]]
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// A random conv3d problem with every extent at most 8 and a
/// non-degenerate output.
#[derive(Debug, Clone)]
pub struct ConvCase {
    pub batch: usize,
    pub spec: ConvSpec,
    pub extents: [usize; 3],
}

impl ConvCase {
    pub fn draw(rng: &mut impl Rng) -> Self {
        loop {
            let kernel = [0; 3].map(|_| rng.gen_range(1..=4));
            let stride = [0; 3].map(|_| rng.gen_range(1..=3));
            let padding = kernel.map(|k: usize| rng.gen_range(0..k));
            let extents = [0; 3].map(|_| rng.gen_range(1..=8));
            let spec = ConvSpec::new(rng.gen_range(1..=5), rng.gen_range(1..=5), kernel, stride, padding).unwrap();
            if spec.output_extents(extents).is_ok() {
                return ConvCase {
                    batch: rng.gen_range(1..=2),
                    spec,
                    extents,
                };
            }
        }
    }

    pub fn input_shape(&self) -> Vec<usize> {
        let [t, h, w] = self.extents;
        vec![self.batch, self.spec.in_channels, t, h, w]
    }

    pub fn output_shape(&self) -> Vec<usize> {
        let [t, h, w] = self.spec.output_extents(self.extents).unwrap();
        vec![self.batch, self.spec.out_channels, t, h, w]
    }
}

/// Denominator floor of [`rel_err`]: gradients smaller than this are
/// compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-5;

/// Relative error used by the finite-difference checks.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central difference of `f` along every element of `x`.
pub fn numeric_grad(x: &Tensor<f64>, h: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    out
}

pub fn max_rel_err(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// SSIM computed window by window with explicit 2D Gaussian weights on
/// every valid 11x11 placement; planes are averaged.
pub fn ssim_oracle(x: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    const R: usize = 11;
    let sigma = 1.5f64;
    let mut g = [[0.0; R]; R];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let (c1, c2) = ((0.01f64).powi(2), (0.03f64).powi(2));
    let s = x.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = x.numel() / (h * w);
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in 0..planes {
        let xa = &x.data()[p * h * w..][..h * w];
        let ya = &y.data()[p * h * w..][..h * w];
        for i0 in 0..=h - R {
            for j0 in 0..=w - R {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..R {
                    for j in 0..R {
                        let wt = g[i][j] / total;
                        let (a, b) = (xa[(i0 + i) * w + j0 + j], ya[(i0 + i) * w + j0 + j]);
                        mx += wt * a;
                        my += wt * b;
                        xx += wt * a * a;
                        yy += wt * b * b;
                        xy += wt * a * b;
                    }
                }
                let (vx, vy, cov) = (xx - mx * mx, yy - my * my, xy - mx * my);
                sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    sum / count as f64
}

/// Uniform in `+-[0.1, 1)`, clear of the ReLU and L1 kinks.
pub fn away_from_zero(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(0.1..1.0);
        if rng.gen() { v } else { -v }
    })
}

/// Max relative error of every analytic op gradient against central
/// differences of `<op(x), R>`, keyed by op and argument.
pub fn op_gradient_errors(seed: u64, h: f64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: String, a: &Tensor<f64>, n: &Tensor<f64>| out.push((name, max_rel_err(a, n)));

    for i in 0..12 {
        let case = ConvCase::draw(&mut rng);
        let spec = case.spec;
        let x = random_tensor(&case.input_shape(), &mut rng);
        let w = random_tensor(&spec.weight_shape(), &mut rng);
        let b = random_tensor(&[spec.out_channels], &mut rng);
        let r = random_tensor(&case.output_shape(), &mut rng);
        let g = conv3d_backward(&r, &x, &w, &spec).unwrap();
        let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| conv3d(x, w, b, &spec).unwrap().dot(&r).unwrap();
        push(format!("conv3d[{i}] input"), &g.input, &numeric_grad(&x, h, |x| f(x, &w, &b)));
        push(format!("conv3d[{i}] weight"), &g.weight, &numeric_grad(&w, h, |w| f(&x, w, &b)));
        push(format!("conv3d[{i}] bias"), &g.bias, &numeric_grad(&b, h, |b| f(&x, &w, b)));
    }

    let transposed = [
        ([3, 4, 4], [1, 2, 2], [1, 1, 1]),
        ([4, 4, 4], [2, 2, 2], [1, 1, 1]),
        ([2, 3, 1], [1, 3, 1], [0, 1, 0]),
    ];
    for (i, (k, s, p)) in transposed.into_iter().enumerate() {
        let spec = ConvSpec::new(3, 2, k, s, p).unwrap();
        let x = random_tensor(&[2, 3, 2, 3, 3], &mut rng);
        let w = random_tensor(&spec.transposed_weight_shape(), &mut rng);
        let b = random_tensor(&[2], &mut rng);
        let r = random_tensor(conv_transpose3d(&x, &w, &b, &spec).unwrap().shape(), &mut rng);
        let g = conv_transpose3d_backward(&r, &x, &w, &spec).unwrap();
        let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| conv_transpose3d(x, w, b, &spec).unwrap().dot(&r).unwrap();
        push(format!("conv_transpose3d[{i}] input"), &g.input, &numeric_grad(&x, h, |x| f(x, &w, &b)));
        push(format!("conv_transpose3d[{i}] weight"), &g.weight, &numeric_grad(&w, h, |w| f(&x, w, &b)));
        push(format!("conv_transpose3d[{i}] bias"), &g.bias, &numeric_grad(&b, h, |b| f(&x, &w, b)));
    }

    for (i, spec) in [Conv2dSpec::same(3, 4, [3, 3]), Conv2dSpec::same(2, 6, [7, 7])].into_iter().enumerate() {
        let x = random_tensor(&[2, spec.in_channels, 6, 5], &mut rng);
        let w = random_tensor(&spec.weight_shape(), &mut rng);
        let b = random_tensor(&[spec.out_channels], &mut rng);
        let r = random_tensor(&[2, spec.out_channels, 6, 5], &mut rng);
        let g = conv2d_backward(&r, &x, &w, &spec).unwrap();
        let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| conv2d(x, w, b, &spec).unwrap().dot(&r).unwrap();
        push(format!("conv2d[{i}] input"), &g.input, &numeric_grad(&x, h, |x| f(x, &w, &b)));
        push(format!("conv2d[{i}] weight"), &g.weight, &numeric_grad(&w, h, |w| f(&x, w, &b)));
        push(format!("conv2d[{i}] bias"), &g.bias, &numeric_grad(&b, h, |b| f(&x, &w, b)));
    }

    let x = away_from_zero(&[2, 3, 2, 3, 4], &mut rng);
    let r = random_tensor(x.shape(), &mut rng);
    let g = relu_backward(&r, &x).unwrap();
    push("relu".into(), &g, &numeric_grad(&x, h, |x| relu(x).dot(&r).unwrap()));
    let g = sigmoid_backward(&r, &sigmoid(&x)).unwrap();
    push("sigmoid".into(), &g, &numeric_grad(&x, h, |x| sigmoid(x).dot(&r).unwrap()));
    let rp = random_tensor(&[2, 3], &mut rng);
    let g = global_avg_pool_backward(&rp, x.shape()).unwrap();
    let n = numeric_grad(&x, h, |x| global_avg_pool(x).unwrap().dot(&rp).unwrap());
    push("global_avg_pool".into(), &g, &n);

    let x = random_tensor(&[2, 4, 2, 3, 3], &mut rng);
    let w = random_tensor(&[4, 4], &mut rng);
    let b = random_tensor(&[4], &mut rng);
    let r = random_tensor(x.shape(), &mut rng);
    let (gx, gw, gb) = channel_gate_backward(&r, &x, &GatingLayer::new(w.clone(), b.clone()).unwrap()).unwrap();
    let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
        let layer = GatingLayer::new(w.clone(), b.clone()).unwrap();
        channel_gate(x, &layer).unwrap().dot(&r).unwrap()
    };
    push("gate input".into(), &gx, &numeric_grad(&x, h, |x| f(x, &w, &b)));
    push("gate W".into(), &gw, &numeric_grad(&w, h, |w| f(&x, w, &b)));
    push("gate b".into(), &gb, &numeric_grad(&b, h, |b| f(&x, &w, b)));

    let targets: Vec<Tensor<f64>> = (0..2).map(|_| random_tensor(&[2, 3, 4, 4], &mut rng)).collect();
    for mode in [LossMode::L1, LossMode::L2, LossMode::Huber] {
        // residuals of either sign, away from the L1 kink, on both Huber branches
        let preds: Vec<Tensor<f64>> = targets
            .iter()
            .map(|t| t.add(&away_from_zero(t.shape(), &mut rng).scale(1.5)).unwrap())
            .collect();
        let analytic = loss(&preds, &targets, mode).unwrap().grads;
        for f in 0..preds.len() {
            let n = numeric_grad(&preds[f], h, |p| {
                let mut probe = preds.clone();
                probe[f] = p.clone();
                loss(&probe, &targets, mode).unwrap().value
            });
            push(format!("{mode:?} loss frame {f}"), &analytic[f], &n);
        }
    }
    out
}
