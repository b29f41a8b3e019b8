//! PSNR, SSIM and the multi-frame evaluation protocol.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::{collate, denormalize_batch, enumerate_samples, materialize, normalize, FrameSequence, Sample};
use crate::error::{Error, Result};
use crate::net::Network;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Reported for identical images instead of `+inf`.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check_pair<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &'static str) -> Result<()> {
    a.expect_same_shape(b, op)
}

/// `10 log10(1 / MSE)` after clamping both images to `[0, 1]`, capped at
/// [`PSNR_CAP`].
pub fn psnr<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    check_pair(pred, gt, "psnr")?;
    let mse = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| {
            let d = p.widen().clamp(0.0, 1.0) - g.widen().clamp(0.0, 1.0);
            d * d
        })
        .sum::<f64>()
        / pred.numel() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP)
    }
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering of an `h x w` plane.
fn blur(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = g.iter().enumerate().map(|(i, gi)| gi * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g.iter().enumerate().map(|(i, gi)| gi * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize, g: &[f64]) -> f64 {
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (mx, my) = (blur(x, h, w, g), blur(y, h, w, g));
    let (sxx, syy, sxy) = (blur(&xx, h, w, g), blur(&yy, h, w, g), blur(&xy, h, w, g));
    let n = mx.len();
    (0..n)
        .map(|i| {
            let (a, b) = (mx[i], my[i]);
            let vx = sxx[i] - a * a;
            let vy = syy[i] - b * b;
            let cov = sxy[i] - a * b;
            ((2.0 * a * b + c1) * (2.0 * cov + c2)) / ((a * a + b * b + c1) * (vx + vy + c2))
        })
        .sum::<f64>()
        / n as f64
}

/// Gaussian-window SSIM (11x11, sigma 1.5, valid mode, dynamic range 1),
/// averaged over every plane. The last two axes are height and width.
pub fn ssim<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    check_pair(pred, gt, "ssim")?;
    if pred.rank() < 2 {
        return Err(Error::Rank {
            op: "ssim",
            expected: 3,
            actual: pred.rank(),
        });
    }
    let r = pred.rank();
    let (h, w) = (pred.shape()[r - 2], pred.shape()[r - 1]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::WindowTooLarge {
            height: h,
            width: w,
            window: SSIM_WINDOW,
        });
    }
    let g = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let (p, t) = (pred.widened(), gt.widened());
    let planes = p.len() / (h * w);
    let total: f64 = (0..planes)
        .map(|c| {
            let span = c * h * w..(c + 1) * h * w;
            ssim_plane(&p[span.clone()], &t[span], h, w, &g)
        })
        .sum();
    Ok(total / planes as f64)
}

/// Anything that turns a raw (unnormalized) sample into `k - 1` frames.
pub trait Interpolator: Sync {
    /// Predictions for `sample.targets`, each `[3, H, W]` in image space.
    fn interpolate(&self, sample: &Sample) -> Result<Vec<Tensor<f32>>>;
}

impl<T: Scalar> Interpolator for Network<T> {
    fn interpolate(&self, sample: &Sample) -> Result<Vec<Tensor<f32>>> {
        let (normalized, means) = normalize(sample);
        let batch = collate::<T>(std::slice::from_ref(&normalized))?;
        let preds = self.infer(&batch.inputs)?;
        denormalize_batch(&preds, &[means])
            .into_iter()
            .map(|f| {
                let s = f.shape()[1..].to_vec();
                Ok(f.cast::<f32>().into_shape(&s)?)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub clip: String,
    /// 1-based position of the predicted frame inside the gap.
    pub offset: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipScore {
    pub clip: String,
    pub samples: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-clip, per-offset and aggregate scores.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub k: usize,
    pub rows: Vec<EvalRow>,
    pub clips: Vec<ClipScore>,
    pub psnr: f64,
    pub ssim: f64,
}

impl EvalReport {
    /// `clip,offset,psnr,ssim` rows followed by a `mean,all,...` summary row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("clip,offset,psnr,ssim\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:.6},{:.6}", r.clip, r.offset, r.psnr, r.ssim);
        }
        let _ = writeln!(out, "mean,all,{:.6},{:.6}", self.psnr, self.ssim);
        out
    }

    /// Mean over clips of one offset's scores.
    pub fn offset_mean(&self, offset: usize) -> (f64, f64) {
        let rows: Vec<&EvalRow> = self.rows.iter().filter(|r| r.offset == offset).collect();
        let n = rows.len().max(1) as f64;
        (
            rows.iter().map(|r| r.psnr).sum::<f64>() / n,
            rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        )
    }
}

/// Scores of every predicted frame of one sample: `(psnr, ssim)` per offset.
pub fn score_sample(model: &dyn Interpolator, sample: &Sample) -> Result<Vec<(f64, f64)>> {
    let preds = model.interpolate(sample)?;
    if preds.len() != sample.targets.len() {
        return Err(Error::Shape {
            op: "evaluate",
            axis: "frames".into(),
            expected: sample.targets.len(),
            actual: preds.len(),
        });
    }
    preds
        .iter()
        .zip(&sample.targets)
        .map(|(p, t)| {
            let p = p.map(|v| v.clamp(0.0, 1.0));
            Ok((psnr(&p, t)?, ssim(&p, t)?))
        })
        .collect()
}

/// Evaluates every full-context window of every clip. Scores are averaged
/// over the `k - 1` predicted frames, then over a clip's windows, then over
/// clips.
pub fn evaluate(
    model: &dyn Interpolator,
    clips: &[(String, FrameSequence)],
    k: usize,
    context: usize,
) -> Result<EvalReport> {
    let per_clip: Vec<(String, Vec<Vec<(f64, f64)>>)> = clips
        .par_iter()
        .map(|(name, seq)| {
            let scores = enumerate_samples(seq, k, context)
                .iter()
                .map(|spec| score_sample(model, &materialize(seq, spec)?))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.context(format!("evaluating clip {name}")))?;
            Ok((name.clone(), scores))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut scores = Vec::new();
    for (name, samples) in per_clip.into_iter().filter(|(_, s)| !s.is_empty()) {
        let n = samples.len() as f64;
        for offset in 0..k - 1 {
            rows.push(EvalRow {
                clip: name.clone(),
                offset: offset + 1,
                psnr: samples.iter().map(|s| s[offset].0).sum::<f64>() / n,
                ssim: samples.iter().map(|s| s[offset].1).sum::<f64>() / n,
            });
        }
        let frame_mean = |s: &Vec<(f64, f64)>, pick: fn(&(f64, f64)) -> f64| {
            s.iter().map(pick).sum::<f64>() / s.len() as f64
        };
        scores.push(ClipScore {
            clip: name,
            samples: samples.len(),
            psnr: samples.iter().map(|s| frame_mean(s, |v| v.0)).sum::<f64>() / n,
            ssim: samples.iter().map(|s| frame_mean(s, |v| v.1)).sum::<f64>() / n,
        });
    }
    if scores.is_empty() {
        return Err(Error::Config(format!(
            "no clip has a full-context window for k={k}, context={context}"
        )));
    }
    let n = scores.len() as f64;
    Ok(EvalReport {
        k,
        psnr: scores.iter().map(|c| c.psnr).sum::<f64>() / n,
        ssim: scores.iter().map(|c| c.ssim).sum::<f64>() / n,
        rows,
        clips: scores,
    })
}
