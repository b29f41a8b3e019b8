//! Frame-rate upsampling of a whole sequence with a trained network.

use std::fs;
use std::path::Path;

use crate::data::{collate, denormalize_batch, frame_file_name, normalize, save_frame, FrameSequence, Sample};
use crate::error::{Error, Result};
use crate::net::Network;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Output of [`upsample`]. Original frame `n` (1-based) sits at index
/// `(n - 1) * k + 1`; the predictions for the gap after it fill the `k - 1`
/// indices in between.
#[derive(Debug, Clone)]
pub struct Upsampled {
    pub k: usize,
    pub fps: f64,
    /// `(output index, frame, predicted)` in index order.
    pub frames: Vec<(usize, Tensor<f32>, bool)>,
    /// Gaps (numbered by their left frame) left empty for lack of context.
    pub skipped: Vec<usize>,
}

impl Upsampled {
    pub fn predicted(&self) -> usize {
        self.frames.iter().filter(|f| f.2).count()
    }

    /// Writes every frame under its output index plus `meta.txt`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (index, frame, _) in &self.frames {
            save_frame(frame, dir.join(frame_file_name(*index)))?;
        }
        let meta = dir.join("meta.txt");
        fs::write(&meta, format!("fps={}\n", self.fps)).map_err(|e| Error::io(&meta, e))
    }
}

/// Which of a `trained`-way head's outputs serve a `k`-way split: every
/// `trained / k`-th frame. `None` when `k` does not divide `trained`.
pub fn head_subset(trained: usize, k: usize) -> Option<Vec<usize>> {
    if k < 2 || trained % k != 0 {
        return None;
    }
    let step = trained / k;
    Some((1..k).map(|j| j * step - 1).collect())
}

/// Inserts `k - 1` frames into every gap of `seq` that has `C` frames of
/// context on both sides. `k` must divide the network's own `k`.
pub fn upsample<T: Scalar>(net: &Network<T>, seq: &FrameSequence, k: usize) -> Result<Upsampled> {
    let cfg = net.config();
    let pick = head_subset(cfg.k, k).ok_or_else(|| {
        Error::Config(format!("k = {k} is not available from a network trained with k = {}", cfg.k))
    })?;
    let (c, n) = (cfg.context, seq.len());
    cfg.check_input(2 * c, seq.height(), seq.width())?;

    let slot = |frame: usize| (frame - 1) * k + 1;
    let mut frames: Vec<(usize, Tensor<f32>, bool)> = seq
        .frames()
        .iter()
        .enumerate()
        .map(|(i, f)| (slot(i + 1), f.clone(), false))
        .collect();
    let mut skipped = Vec::new();
    for gap in 1..n {
        if gap < c || gap + c > n {
            skipped.push(gap);
            continue;
        }
        let sample = Sample {
            inputs: seq.frames()[gap - c..gap + c].to_vec(),
            targets: Vec::new(),
            input_indices: (gap + 1 - c..=gap + c).collect(),
            target_indices: Vec::new(),
            means: [0.0; 3],
        };
        let (normalized, means) = normalize(&sample);
        let batch = collate::<T>(std::slice::from_ref(&normalized))?;
        let preds = denormalize_batch(&net.infer(&batch.inputs)?, &[means]);
        for (j, &head) in pick.iter().enumerate() {
            let f = &preds[head];
            let frame = f.cast::<f32>().into_shape(&f.shape()[1..])?;
            frames.push((slot(gap) + j + 1, frame, true));
        }
    }
    frames.sort_by_key(|f| f.0);
    Ok(Upsampled {
        k,
        fps: seq.fps() * k as f64,
        frames,
        skipped,
    })
}
