use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{flip, Tensor};

use super::frames::FrameSequence;

/// One training window. Indices are 1-based; `anchor` is the frame left of
/// the target gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SampleSpec {
    pub k: usize,
    pub context: usize,
    pub anchor: usize,
}

impl SampleSpec {
    /// `anchor + (j - C + 1) * k` for `j = 0..2C`. Only meaningful for specs
    /// that pass [`is_valid`](Self::is_valid).
    pub fn input_indices(&self) -> Vec<usize> {
        let first = self.anchor - (self.context - 1) * self.k;
        (0..2 * self.context).map(|j| first + j * self.k).collect()
    }

    pub fn target_indices(&self) -> Vec<usize> {
        (self.anchor + 1..self.anchor + self.k).collect()
    }

    /// Full-context validity within a clip of `len` frames.
    pub fn is_valid(&self, len: usize) -> bool {
        self.k >= 1
            && self.context >= 1
            && self.anchor > (self.context - 1) * self.k
            && self.anchor + self.context * self.k <= len
    }
}

/// Every anchor with full context in a clip of `len` frames, in order.
pub fn enumerate_indices(len: usize, k: usize, context: usize) -> Vec<SampleSpec> {
    if k == 0 || context == 0 {
        return Vec::new();
    }
    let lo = (context - 1) * k + 1;
    let hi = len.saturating_sub(context * k);
    (lo..=hi).map(|anchor| SampleSpec { k, context, anchor }).collect()
}

pub fn enumerate_samples(seq: &FrameSequence, k: usize, context: usize) -> Vec<SampleSpec> {
    enumerate_indices(seq.len(), k, context)
}

/// Input and target frames of one window, each `[3, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub inputs: Vec<Tensor<f32>>,
    pub targets: Vec<Tensor<f32>>,
    pub input_indices: Vec<usize>,
    pub target_indices: Vec<usize>,
    /// Per-channel means removed from the inputs by [`normalize`]; zero otherwise.
    pub means: [f64; 3],
}

pub fn materialize(seq: &FrameSequence, spec: &SampleSpec) -> Result<Sample> {
    if !spec.is_valid(seq.len()) {
        let index = if spec.anchor <= (spec.context.max(1) - 1) * spec.k {
            spec.anchor.saturating_sub((spec.context.max(1) - 1) * spec.k)
        } else {
            spec.anchor + spec.context * spec.k
        };
        return Err(Error::OutOfRange { index, len: seq.len() });
    }
    let input_indices = spec.input_indices();
    let target_indices = spec.target_indices();
    let fetch = |idx: &[usize]| -> Result<Vec<Tensor<f32>>> {
        idx.iter().map(|&i| seq.frame(i).cloned()).collect()
    };
    Ok(Sample {
        inputs: fetch(&input_indices)?,
        targets: fetch(&target_indices)?,
        input_indices,
        target_indices,
        means: [0.0; 3],
    })
}

/// Optionally reverses time (inputs and targets together) and mirrors every
/// frame horizontally. Both are involutions and they commute.
pub fn augment(sample: &Sample, reverse: bool, hflip: bool) -> Sample {
    let mut out = sample.clone();
    if reverse {
        out.inputs.reverse();
        out.targets.reverse();
        out.input_indices.reverse();
        out.target_indices.reverse();
    }
    if hflip {
        for f in out.inputs.iter_mut().chain(out.targets.iter_mut()) {
            *f = flip(f, 2).expect("frames are rank 3");
        }
    }
    out
}

/// Per-channel mean over all input frames.
pub fn channel_means(inputs: &[Tensor<f32>]) -> [f64; 3] {
    let mut means = [0.0; 3];
    let mut count = 0usize;
    for f in inputs {
        let plane = f.numel() / 3;
        for (c, m) in means.iter_mut().enumerate() {
            *m += f.data()[c * plane..(c + 1) * plane].iter().map(|&v| v as f64).sum::<f64>();
        }
        count += plane;
    }
    means.map(|m| m / count.max(1) as f64)
}

fn shift(frame: &Tensor<f32>, means: &[f64; 3], sign: f64) -> Tensor<f32> {
    let plane = frame.numel() / 3;
    let data = frame
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| (v as f64 + sign * means[i / plane]) as f32)
        .collect();
    Tensor::new(frame.shape().to_vec(), data).expect("same shape")
}

/// Subtracts the input channel means from the inputs. Targets are untouched.
pub fn normalize(sample: &Sample) -> (Sample, [f64; 3]) {
    let means = channel_means(&sample.inputs);
    let mut out = sample.clone();
    out.inputs = sample.inputs.iter().map(|f| shift(f, &means, -1.0)).collect();
    out.means = means;
    (out, means)
}

/// Adds `means` back to `[3, H, W]` frames.
pub fn denormalize(frames: &[Tensor<f32>], means: &[f64; 3]) -> Vec<Tensor<f32>> {
    frames.iter().map(|f| shift(f, means, 1.0)).collect()
}

/// Adds per-sample means back to batched `[B, 3, H, W]` frames.
pub fn denormalize_batch<T: Scalar>(frames: &[Tensor<T>], means: &[[f64; 3]]) -> Vec<Tensor<T>> {
    frames
        .iter()
        .map(|f| {
            let plane = f.shape()[2] * f.shape()[3];
            let data = f
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let (b, c) = (i / (3 * plane), (i / plane) % 3);
                    T::narrow(v.widen() + means[b][c])
                })
                .collect();
            Tensor::new(f.shape().to_vec(), data).expect("same shape")
        })
        .collect()
}

/// Network-ready tensors for a list of samples.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    /// `[B, 3, 2C, H, W]`
    pub inputs: Tensor<T>,
    /// `k - 1` tensors of `[B, 3, H, W]`.
    pub targets: Vec<Tensor<T>>,
    pub means: Vec<[f64; 3]>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

/// Stacks samples into a batch. Every sample must share frame counts and size.
pub fn collate<T: Scalar>(samples: &[Sample]) -> Result<Batch<T>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidTensor("cannot collate an empty batch".into()))?;
    let frames = first.inputs.len();
    let targets = first.targets.len();
    let shape = first.inputs[0].shape().to_vec();
    let (h, w) = (shape[1], shape[2]);
    let plane = h * w;
    for s in samples {
        if s.inputs.len() != frames || s.targets.len() != targets {
            return Err(Error::Shape {
                op: "collate",
                axis: "frames".into(),
                expected: frames,
                actual: s.inputs.len(),
            });
        }
        if let Some(f) = s.inputs.iter().chain(&s.targets).find(|f| f.shape() != shape.as_slice()) {
            return Err(Error::Shape {
                op: "collate",
                axis: "frame".into(),
                expected: plane * 3,
                actual: f.numel(),
            });
        }
    }
    let b = samples.len();
    let mut input = Vec::with_capacity(b * 3 * frames * plane);
    for s in samples {
        for c in 0..3 {
            for f in &s.inputs {
                input.extend(f.data()[c * plane..(c + 1) * plane].iter().map(|&v| T::narrow(v as f64)));
            }
        }
    }
    let targets = (0..targets)
        .map(|j| {
            let data = samples
                .iter()
                .flat_map(|s| s.targets[j].data().iter().map(|&v| T::narrow(v as f64)))
                .collect();
            Tensor::new(vec![b, 3, h, w], data)
        })
        .collect::<Result<_>>()?;
    Ok(Batch {
        inputs: Tensor::new(vec![b, 3, frames, h, w], input)?,
        targets,
        means: samples.iter().map(|s| s.means).collect(),
    })
}
