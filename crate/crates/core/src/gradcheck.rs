//! End-to-end central finite-difference check of [`Network::backward`].

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::{FlavrConfig, Network};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub height: usize,
    pub width: usize,
    pub batch: usize,
    /// Central difference step.
    pub step: f64,
    /// Denominator floor of the relative error, so entries whose gradient
    /// is numerically zero are compared in absolute terms.
    pub floor: f64,
    /// Coordinates probed per tensor; `None` probes all of them.
    pub per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            height: 16,
            width: 16,
            batch: 1,
            step: 3e-5,
            floor: 1e-5,
            per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates skipped because a perturbation flipped a ReLU.
    pub kinks: usize,
    pub max_rel_err: f64,
    pub worst: Option<Worst>,
}

/// The coordinate with the largest relative error.
#[derive(Debug, Clone, PartialEq)]
pub struct Worst {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// `sum_f <frames_f, weights_f>` along with the activation fingerprint.
fn objective(net: &mut Network<f64>, input: &Tensor<f64>, weights: &[Tensor<f64>]) -> Result<(f64, u64)> {
    let frames = net.forward(input)?;
    let mut total = 0.0;
    for (f, w) in frames.iter().zip(weights) {
        total += f.dot(w)?;
    }
    Ok((total, net.activation_pattern().expect("taped")))
}

fn coordinates(n: usize, limit: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match limit {
        Some(m) if m < n => {
            let mut idx = sample(rng, n, m).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    }
}

/// Compares every parameter gradient and the input gradient of a network
/// built from `config` against central differences of a random linear
/// functional of its output.
pub fn check_network(config: &FlavrConfig, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    if !(opts.step > 0.0) || opts.batch == 0 {
        return Err(Error::Config("gradcheck needs a positive step and batch".into()));
    }
    config.check_input(config.input_frames(), opts.height, opts.width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut net = Network::<f64>::build(config, opts.seed)?;
    let input = Tensor::uniform(
        &[opts.batch, 3, config.input_frames(), opts.height, opts.width],
        -1.0,
        1.0,
        &mut rng,
    );
    let weights: Vec<Tensor<f64>> = (0..config.output_frames())
        .map(|_| Tensor::uniform(&[opts.batch, 3, opts.height, opts.width], -1.0, 1.0, &mut rng))
        .collect();

    net.zero_grads();
    let (_, pattern) = objective(&mut net, &input, &weights)?;
    let grad_input = net.backward(&weights)?;
    let analytic: Vec<(String, Tensor<f64>)> = net
        .parameters()
        .iter()
        .map(|p| (p.name().to_string(), p.grad().clone()))
        .collect();

    let mut report = GradCheckReport {
        checked: 0,
        kinks: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    let h = opts.step;
    let record = |report: &mut GradCheckReport, name: &str, i: usize, a: f64, up: (f64, u64), down: (f64, u64)| {
        if up.1 != pattern || down.1 != pattern {
            report.kinks += 1;
            return;
        }
        let numeric = (up.0 - down.0) / (2.0 * h);
        let e = rel_err(a, numeric, opts.floor);
        report.checked += 1;
        if e > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(e);
            report.worst = Some(Worst {
                tensor: name.to_string(),
                index: i,
                analytic: a,
                numeric,
            });
        }
    };

    for (name, grad) in &analytic {
        for i in coordinates(grad.numel(), opts.per_tensor, &mut rng) {
            let orig = net.parameter(name).expect("known name").value().data()[i];
            let set = |net: &mut Network<f64>, v: f64| {
                net.parameter_mut(name).expect("known name").pair_mut().value_mut().data_mut()[i] = v;
            };
            set(&mut net, orig + h);
            let up = objective(&mut net, &input, &weights)?;
            set(&mut net, orig - h);
            let down = objective(&mut net, &input, &weights)?;
            set(&mut net, orig);
            record(&mut report, name, i, grad.data()[i], up, down);
        }
    }

    let mut probe = input.clone();
    for i in coordinates(input.numel(), opts.per_tensor, &mut rng) {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = objective(&mut net, &probe, &weights)?;
        probe.data_mut()[i] = orig - h;
        let down = objective(&mut net, &probe, &weights)?;
        probe.data_mut()[i] = orig;
        record(&mut report, "input", i, grad_input.data()[i], up, down);
    }
    Ok(report)
}
