//! Forward-only inference timing and the single-shot versus recursive
//! scaling study.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::net::{FlavrConfig, Network};
use crate::scalar::Scalar;
use crate::tensor::{concat, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMode {
    /// One forward pass predicts all `k - 1` frames.
    SingleShot,
    /// A k=2 network applied in `log2(k)` rounds of midpoint insertion.
    Recursive,
}

impl std::fmt::Display for BenchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BenchMode::SingleShot => "single-shot",
            BenchMode::Recursive => "recursive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub mode: BenchMode,
    pub k: usize,
    pub context: usize,
    pub height: usize,
    pub width: usize,
    pub widths: [usize; 5],
    pub threads: usize,
    pub warmup: usize,
    /// Wall time of each measured run in seconds.
    pub times: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub stddev: f64,
    /// Predicted frames per second, `(k - 1) / mean`.
    pub fps: f64,
    /// Network forward passes per clip, read from the instrumented counter.
    pub forwards_per_clip: f64,
}

impl BenchReport {
    fn new(mode: BenchMode, config: &FlavrConfig, hw: (usize, usize), warmup: usize, times: Vec<f64>, forwards: f64) -> Self {
        let n = times.len() as f64;
        let mean = times.iter().sum::<f64>() / n;
        let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let mut sorted = times.clone();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        BenchReport {
            mode,
            k: config.k,
            context: config.context,
            height: hw.0,
            width: hw.1,
            widths: config.encoder_widths,
            threads: rayon::current_num_threads(),
            warmup,
            times,
            mean,
            median,
            stddev: var.sqrt(),
            fps: config.output_frames() as f64 / mean,
            forwards_per_clip: forwards,
        }
    }

    pub fn runs(&self) -> usize {
        self.times.len()
    }

    pub fn summary(&self) -> String {
        format!(
            "{} k={} C={} {}x{} widths={:?}: mean {:.4}s median {:.4}s sd {:.4}s over {} runs ({} warmup, {} threads), {:.2} frames/s, {} forward(s)/clip",
            self.mode,
            self.k,
            self.context,
            self.height,
            self.width,
            self.widths,
            self.mean,
            self.median,
            self.stddev,
            self.runs(),
            self.warmup,
            self.threads,
            self.fps,
            self.forwards_per_clip
        )
    }
}

/// Deterministic clip-shaped input `[1, 3, 2C, H, W]` with values in [0, 1).
pub fn bench_input<T: Scalar>(config: &FlavrConfig, height: usize, width: usize) -> Result<Tensor<T>> {
    config.validate()?;
    config.check_input(config.input_frames(), height, width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Ok(Tensor::uniform(&[1, 3, config.input_frames(), height, width], 0.0, 1.0, &mut rng))
}

fn timed(warmup: usize, runs: usize, mut f: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    if runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    for _ in 0..warmup {
        f()?;
    }
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        f()?;
        times.push(start.elapsed().as_secs_f64());
    }
    Ok(times)
}

/// Times `net.infer` on a pre-built `height x width` clip. Shape errors are
/// reported before anything is timed.
pub fn time_forward<T: Scalar>(net: &Network<T>, height: usize, width: usize, warmup: usize, runs: usize) -> Result<BenchReport> {
    let input = bench_input::<T>(net.config(), height, width)?;
    let before = net.forward_count();
    let times = timed(warmup, runs, || net.infer(&input).map(drop))?;
    let forwards = (net.forward_count() - before) as f64 / (warmup + runs) as f64;
    Ok(BenchReport::new(BenchMode::SingleShot, net.config(), (height, width), warmup, times, forwards))
}

/// Interpolates `k - 1` frames with a k=2 network by repeatedly inserting
/// midpoints into the central gap. Each midpoint is predicted from the
/// `C` nearest frames on either side in the current, partly densified
/// sequence. Returns `[1, 3, H, W]` frames in temporal order.
pub fn recursive_interpolate<T: Scalar>(net2: &Network<T>, input: &Tensor<T>, k: usize) -> Result<Vec<Tensor<T>>> {
    let cfg = net2.config();
    if cfg.k != 2 {
        return Err(Error::Config(format!("recursive interpolation needs a k=2 network, got k={}", cfg.k)));
    }
    if !k.is_power_of_two() || k < 2 {
        return Err(Error::Config(format!("recursive interpolation needs a power-of-two k, got {k}")));
    }
    input.expect_rank(5, "recursive_interpolate")?;
    let s = input.shape();
    let (c, n, h, w) = (cfg.context, s[2], s[3], s[4]);
    if s[0] != 1 || s[1] != 3 || n != 2 * c {
        return Err(Error::Shape {
            op: "recursive_interpolate",
            axis: "input".into(),
            expected: 2 * c,
            actual: n,
        });
    }
    let plane = h * w;
    // (time, frame [1, 3, 1, H, W]) in temporal order; time in units of 1/k.
    let mut seq: Vec<(usize, Tensor<T>)> = (0..n)
        .map(|t| {
            let data = (0..3).flat_map(|ch| input.data()[(ch * n + t) * plane..][..plane].iter().copied()).collect();
            Tensor::new(vec![1, 3, 1, h, w], data).map(|f| (t * k, f))
        })
        .collect::<Result<_>>()?;
    let (lo, hi) = ((c - 1) * k, c * k);
    let mut step = k;
    while step > 1 {
        let half = step / 2;
        let mut t = lo;
        while t < hi {
            let left = seq.iter().position(|(time, _)| *time == t).expect("gap start exists");
            let right = left + 1;
            let frames: Vec<&Tensor<T>> = seq[left + 1 - c..=left].iter().chain(&seq[right..right + c]).map(|(_, f)| f).collect();
            let mid = net2.infer(&concat(&frames, 2)?)?.remove(0);
            seq.insert(right, (t + half, mid.into_shape(&[1, 3, 1, h, w])?));
            t += step;
        }
        step = half;
    }
    seq.into_iter()
        .filter(|(time, _)| *time > lo && *time < hi)
        .map(|(_, f)| f.into_shape(&[1, 3, h, w]))
        .collect()
}

/// Times [`recursive_interpolate`] for factor `k` with the k=2 network `net2`.
pub fn time_recursive<T: Scalar>(net2: &Network<T>, k: usize, height: usize, width: usize, warmup: usize, runs: usize) -> Result<BenchReport> {
    let input = bench_input::<T>(net2.config(), height, width)?;
    recursive_interpolate(net2, &input, k)?;
    let before = net2.forward_count();
    let times = timed(warmup, runs, || recursive_interpolate(net2, &input, k).map(drop))?;
    let forwards = (net2.forward_count() - before) as f64 / (warmup + runs) as f64;
    let config = net2.config().clone().with_k(k);
    Ok(BenchReport::new(BenchMode::Recursive, &config, (height, width), warmup, times, forwards))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub k: usize,
    pub single: BenchReport,
    /// `single.mean` over the k=2 single-shot mean.
    pub ratio: f64,
    /// `None` when k is not a power of two.
    pub recursive: Option<BenchReport>,
    pub recursive_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingStudy {
    pub reference_mean: f64,
    pub rows: Vec<ScalingRow>,
}

impl ScalingStudy {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,height,width,threads,runs,mean_s,median_s,stddev_s,fps,ratio,recursive_mean_s,recursive_ratio\n");
        for r in &self.rows {
            let s = &r.single;
            let (rm, rr) = match (&r.recursive, r.recursive_ratio) {
                (Some(rec), Some(ratio)) => (rec.mean.to_string(), ratio.to_string()),
                _ => ("NA".into(), "NA".into()),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.k,
                s.height,
                s.width,
                s.threads,
                s.runs(),
                s.mean,
                s.median,
                s.stddev,
                s.fps,
                r.ratio,
                rm,
                rr
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn row(&self, k: usize) -> Option<&ScalingRow> {
        self.rows.iter().find(|r| r.k == k)
    }
}

/// Options shared by every measurement of a [`scaling_study`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StudyOptions {
    pub height: usize,
    pub width: usize,
    pub warmup: usize,
    pub runs: usize,
    pub seed: u64,
    /// Also time the recursive baseline.
    pub recursive: bool,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            height: 256,
            width: 256,
            warmup: 2,
            runs: 20,
            seed: 0,
            recursive: true,
        }
    }
}

/// One configuration measured by [`scaling_study`].
struct Job<'a, T: Scalar> {
    mode: BenchMode,
    config: FlavrConfig,
    net: &'a Network<T>,
    k: usize,
}

impl<T: Scalar> Job<'_, T> {
    fn call(&self, input: &Tensor<T>) -> Result<()> {
        match self.mode {
            BenchMode::SingleShot => self.net.infer(input).map(drop),
            BenchMode::Recursive => recursive_interpolate(self.net, input, self.k).map(drop),
        }
    }
}

/// Runs every job once per round, warmup rounds first, so slow changes in
/// machine load fall on all jobs alike.
fn interleaved<T: Scalar>(jobs: &[Job<'_, T>], input: &Tensor<T>, opts: &StudyOptions) -> Result<Vec<BenchReport>> {
    if opts.runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    let rounds = opts.warmup + opts.runs;
    let mut times = vec![Vec::with_capacity(opts.runs); jobs.len()];
    let mut forwards = vec![0; jobs.len()];
    for round in 0..rounds {
        for (j, job) in jobs.iter().enumerate() {
            let before = job.net.forward_count();
            let start = Instant::now();
            job.call(input)?;
            let elapsed = start.elapsed().as_secs_f64();
            forwards[j] += job.net.forward_count() - before;
            if round >= opts.warmup {
                times[j].push(elapsed);
            }
        }
    }
    Ok(jobs
        .iter()
        .zip(times)
        .zip(forwards)
        .map(|((job, t), f)| {
            BenchReport::new(job.mode, &job.config, (opts.height, opts.width), opts.warmup, t, f as f64 / rounds as f64)
        })
        .collect())
}

/// Times single-shot networks for every `k` in `ks` (same widths and
/// context, only the prediction head differs) against the k=2 network,
/// and the recursive baseline for power-of-two `k`. Measurements of all
/// configurations are interleaved round by round.
pub fn scaling_study<T: Scalar>(base: &FlavrConfig, ks: &[usize], opts: &StudyOptions) -> Result<ScalingStudy> {
    if ks.is_empty() {
        return Err(Error::Config("scaling study needs at least one k".into()));
    }
    for &k in ks {
        base.clone().with_k(k).validate()?;
    }
    let input = bench_input::<T>(base, opts.height, opts.width)?;
    let net2 = Network::<T>::build(&base.clone().with_k(2), opts.seed)?;
    let others: Vec<Network<T>> = ks
        .iter()
        .filter(|&&k| k != 2)
        .map(|&k| Network::<T>::build(&base.clone().with_k(k), opts.seed))
        .collect::<Result<_>>()?;

    let single = |k: usize| Job {
        mode: BenchMode::SingleShot,
        config: base.clone().with_k(k),
        net: if k == 2 { &net2 } else { others.iter().find(|n| n.config().k == k).expect("built above") },
        k,
    };
    let mut jobs = vec![single(2)];
    let mut slots = Vec::new();
    for &k in ks {
        let s = if k == 2 {
            0
        } else {
            jobs.push(single(k));
            jobs.len() - 1
        };
        let r = (opts.recursive && k.is_power_of_two()).then(|| {
            jobs.push(Job {
                mode: BenchMode::Recursive,
                config: base.clone().with_k(k),
                net: &net2,
                k,
            });
            jobs.len() - 1
        });
        slots.push((k, s, r));
    }
    let reports = interleaved(&jobs, &input, opts)?;
    let reference = reports[0].mean;
    let rows = slots
        .into_iter()
        .map(|(k, s, r)| {
            let recursive = r.map(|r| reports[r].clone());
            ScalingRow {
                k,
                ratio: reports[s].mean / reference,
                recursive_ratio: recursive.as_ref().map(|r| r.mean / reference),
                single: reports[s].clone(),
                recursive,
            }
        })
        .collect();
    Ok(ScalingStudy {
        reference_mean: reference,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FlavrConfig {
        FlavrConfig::tiny()
    }

    #[test]
    fn report_statistics() {
        let r = BenchReport::new(BenchMode::SingleShot, &small().with_k(4), (16, 16), 1, vec![1.0, 2.0, 4.0, 5.0], 1.0);
        assert_eq!(r.mean, 3.0);
        assert_eq!(r.median, 3.0);
        assert!((r.stddev - (10.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(r.fps, 1.0);
    }

    #[test]
    fn recursive_gives_k_minus_one_frames() {
        let net2 = Network::<f64>::build(&small(), 3).unwrap();
        let input = bench_input::<f64>(&small(), 16, 16).unwrap();
        for (k, forwards) in [(2, 1), (4, 3), (8, 7)] {
            let before = net2.forward_count();
            let frames = recursive_interpolate(&net2, &input, k).unwrap();
            assert_eq!(frames.len(), k - 1);
            assert!(frames.iter().all(|f| f.shape() == [1, 3, 16, 16]));
            assert_eq!(net2.forward_count() - before, forwards);
        }
        // the k=2 case is exactly one single-shot forward
        let single = net2.infer(&input).unwrap();
        assert_eq!(recursive_interpolate(&net2, &input, 2).unwrap()[0].data(), single[0].data());
        assert!(recursive_interpolate(&net2, &input, 6).is_err());
    }

    #[test]
    fn study_rows_follow_ks() {
        let opts = StudyOptions {
            height: 16,
            width: 16,
            warmup: 1,
            runs: 3,
            ..StudyOptions::default()
        };
        let study = scaling_study::<f32>(&small(), &[4, 2, 6], &opts).unwrap();
        let ks: Vec<usize> = study.rows.iter().map(|r| r.k).collect();
        assert_eq!(ks, vec![4, 2, 6]);
        assert_eq!(study.row(2).unwrap().ratio, 1.0);
        for row in &study.rows {
            assert_eq!(row.single.runs(), 3);
            assert_eq!(row.single.k, row.k);
            assert_eq!(row.single.forwards_per_clip, 1.0);
        }
        assert_eq!(study.row(4).unwrap().recursive.as_ref().unwrap().forwards_per_clip, 3.0);
        assert!(study.row(6).unwrap().recursive.is_none());
        assert_eq!(study.to_csv().lines().count(), 4);
    }

    #[test]
    fn shape_errors_come_first() {
        let net = Network::<f32>::build(&small(), 0).unwrap();
        assert!(matches!(time_forward(&net, 30, 32, 0, 1), Err(Error::NotDivisible { .. })));
        assert!(time_forward(&net, 32, 32, 0, 0).is_err());
    }
}
