use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An ordered clip of RGB frames, each `[3, H, W]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Tensor<f32>>,
    fps: f64,
}

pub const DEFAULT_FPS: f64 = 30.0;

impl FrameSequence {
    pub fn new(frames: Vec<Tensor<f32>>, fps: f64) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidTensor("a frame sequence needs at least one frame".into()))?;
        if first.rank() != 3 || first.shape()[0] != 3 {
            return Err(Error::InvalidTensor(format!(
                "frames must be [3, H, W], got {:?}",
                first.shape()
            )));
        }
        for (i, f) in frames.iter().enumerate().skip(1) {
            if f.shape() != first.shape() {
                return Err(Error::FrameDimensions {
                    path: PathBuf::from(format!("#{}", i + 1)),
                    expected_h: first.shape()[1],
                    expected_w: first.shape()[2],
                    found_h: f.shape().get(1).copied().unwrap_or(0),
                    found_w: f.shape().get(2).copied().unwrap_or(0),
                });
            }
        }
        Ok(FrameSequence { frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn height(&self) -> usize {
        self.frames[0].shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames[0].shape()[2]
    }

    pub fn frames(&self) -> &[Tensor<f32>] {
        &self.frames
    }

    /// Frame at a 1-based index.
    pub fn frame(&self, index: usize) -> Result<&Tensor<f32>> {
        if index == 0 || index > self.frames.len() {
            return Err(Error::OutOfRange {
                index,
                len: self.frames.len(),
            });
        }
        Ok(&self.frames[index - 1])
    }
}

/// File name for a 1-based frame index.
pub fn frame_file_name(index: usize) -> String {
    format!("{index:06}.png")
}

fn is_frame_file(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Reads every `*.png` in `dir` in lexicographic order, plus `fps` from an
/// optional `meta.txt`.
pub fn load_frames(dir: impl AsRef<Path>) -> Result<FrameSequence> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_frame_file(p))
        .collect();
    if paths.is_empty() {
        return Err(Error::EmptyDirectory(dir.to_path_buf()));
    }
    paths.sort();

    let mut frames = Vec::with_capacity(paths.len());
    let mut dims: Option<(usize, usize)> = None;
    for path in &paths {
        let img = image::open(path)
            .map_err(|e| Error::UnreadableFile {
                path: path.clone(),
                message: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        match dims {
            None => dims = Some((h, w)),
            Some((eh, ew)) if (eh, ew) != (h, w) => {
                return Err(Error::FrameDimensions {
                    path: path.clone(),
                    expected_h: eh,
                    expected_w: ew,
                    found_h: h,
                    found_w: w,
                })
            }
            Some(_) => {}
        }
        let mut data = vec![0.0f32; 3 * h * w];
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 255.0;
            }
        }
        frames.push(Tensor::new(vec![3, h, w], data)?);
    }
    FrameSequence::new(frames, read_fps(dir)?)
}

fn read_fps(dir: &Path) -> Result<f64> {
    let path = dir.join("meta.txt");
    if !path.exists() {
        return Ok(DEFAULT_FPS);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    for line in text.lines() {
        if let Some((key, value)) = line.split_once('=') {
            if key.trim() == "fps" {
                return value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Malformed(format!("{}: bad fps `{}`", path.display(), value.trim())));
            }
        }
    }
    Ok(DEFAULT_FPS)
}

/// Quantizes a `[3, H, W]` frame to 8-bit RGB, clamping to `[0, 1]`.
pub fn frame_to_rgb8(frame: &Tensor<f32>) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
    let (h, w) = (frame.shape()[1], frame.shape()[2]);
    let d = frame.data();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| {
            let v = d[(c * h + y as usize) * w + x as usize].clamp(0.0, 1.0);
            (v * 255.0).round() as u8
        };
        Rgb([at(0), at(1), at(2)])
    })
}

/// Writes a single frame as PNG.
pub fn save_frame(frame: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    frame_to_rgb8(frame)
        .save(path)
        .map_err(|e| Error::UnreadableFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Writes `000001.png, 000002.png, ...` and `meta.txt` into `dir`, creating it.
pub fn save_frames(seq: &FrameSequence, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, frame) in seq.frames().iter().enumerate() {
        save_frame(frame, dir.join(frame_file_name(i + 1)))?;
    }
    let meta = dir.join("meta.txt");
    fs::write(&meta, format!("fps={}\n", seq.fps())).map_err(|e| Error::io(&meta, e))
}

/// Loads each clip directory under `root`, sorted by name.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<(String, FrameSequence)>> {
    let root = root.as_ref();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs.into_iter()
        .map(|d| {
            let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            load_frames(&d).map(|seq| (name, seq))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_based_access() {
        let frames = (0..3).map(|i| Tensor::full(&[3, 2, 2], i as f32)).collect();
        let seq = FrameSequence::new(frames, 24.0).unwrap();
        assert_eq!(seq.frame(1).unwrap().data()[0], 0.0);
        assert_eq!(seq.frame(3).unwrap().data()[0], 2.0);
        assert!(matches!(seq.frame(0), Err(Error::OutOfRange { .. })));
        assert!(matches!(seq.frame(4), Err(Error::OutOfRange { index: 4, len: 3 })));
    }

    #[test]
    fn rejects_mixed_shapes() {
        let frames = vec![Tensor::zeros(&[3, 2, 2]), Tensor::zeros(&[3, 2, 3])];
        assert!(matches!(FrameSequence::new(frames, 1.0), Err(Error::FrameDimensions { .. })));
    }

    #[test]
    fn file_names_sort_temporally() {
        assert_eq!(frame_file_name(1), "000001.png");
        assert!(frame_file_name(99) < frame_file_name(100));
    }
}
