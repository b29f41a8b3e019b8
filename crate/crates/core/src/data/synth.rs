use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::frames::{FrameSequence, DEFAULT_FPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionKind {
    /// One textured square moving with constant velocity.
    Translate,
    /// One square whose horizontal position follows a sinusoid.
    Sine,
    /// Two squares crossing each other with opposite horizontal velocities.
    Occlude,
}

impl fmt::Display for MotionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MotionKind::Translate => "translate",
            MotionKind::Sine => "sine",
            MotionKind::Occlude => "occlude",
        })
    }
}

impl FromStr for MotionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translate" => Ok(MotionKind::Translate),
            "sine" => Ok(MotionKind::Sine),
            "occlude" => Ok(MotionKind::Occlude),
            other => Err(Error::Config(format!(
                "unknown motion kind `{other}` (translate|sine|occlude)"
            ))),
        }
    }
}

/// Parameters of a synthetic clip. Positions are in pixels, time in frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub kind: MotionKind,
    /// `(vx, vy)` in pixels per frame.
    pub velocity: (f64, f64),
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Side of the square.
    pub size: f64,
    /// Horizontal amplitude of the sine motion.
    pub amplitude: f64,
    /// Period of the sine motion in frames.
    pub period: f64,
}

impl SynthSpec {
    pub fn new(kind: MotionKind, velocity: (f64, f64), n_frames: usize, height: usize, width: usize, seed: u64) -> Self {
        let side = height.min(width) as f64;
        SynthSpec {
            kind,
            velocity,
            n_frames,
            height,
            width,
            seed,
            size: (side / 3.0).round(),
            amplitude: (side / 4.0).round(),
            period: 8.0,
        }
    }
}

/// Symmetric about the vertical centre line, so a mirrored clip can be
/// rendered directly by negating horizontal motion.
#[derive(Debug, Clone, Copy)]
struct Texture {
    base: [f64; 3],
    amp: [f64; 3],
    fu: f64,
    fv: f64,
    phase: f64,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        Texture {
            base: [(); 3].map(|_| rng.gen_range(0.3..0.7)),
            amp: [(); 3].map(|_| rng.gen_range(0.1..0.25)),
            fu: rng.gen_range(1..=2) as f64,
            fv: rng.gen_range(1..=2) as f64,
            phase: rng.gen_range(0.0..TAU),
        }
    }

    fn at(&self, c: usize, u: f64, v: f64) -> f64 {
        self.base[c] + self.amp[c] * (TAU * self.fu * (u - 0.5)).cos() * (TAU * self.fv * v + self.phase).cos()
    }
}

#[derive(Debug, Clone, Copy)]
struct Background {
    base: [f64; 3],
    amp: f64,
    fx: f64,
    fy: f64,
    phase: f64,
}

impl Background {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        Background {
            base: [(); 3].map(|_| rng.gen_range(0.2..0.8)),
            amp: rng.gen_range(0.05..0.15),
            fx: rng.gen_range(1..=3) as f64,
            fy: rng.gen_range(1..=3) as f64,
            phase: rng.gen_range(0.0..TAU),
        }
    }

    fn at(&self, c: usize, x: f64, y: f64, w: f64, h: f64) -> f64 {
        let sign = if c == 1 { -1.0 } else { 1.0 };
        self.base[c]
            + sign * self.amp * (TAU * self.fx * (x - w / 2.0) / w).cos() * (TAU * self.fy * y / h + self.phase).cos()
    }
}

struct Scene {
    background: Background,
    textures: [Texture; 2],
    /// Vertical centre offsets of the two objects.
    y0: [f64; 2],
}

impl Scene {
    fn new(spec: &SynthSpec) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let background = Background::random(&mut rng);
        let textures = [Texture::random(&mut rng), Texture::random(&mut rng)];
        let h = spec.height as f64;
        let mid = (spec.n_frames.max(1) - 1) as f64 / 2.0;
        let drift = spec.velocity.1.abs() * mid;
        let (lo, hi) = (drift, h - spec.size - drift);
        if lo > hi {
            return Err(Error::ObjectLeavesFrame { frame: 1 });
        }
        let first = rng.gen_range(lo..=hi);
        // The second object only appears in the occlusion clip; it sits a
        // quarter square away vertically so the two overlap while crossing.
        let second = (first + spec.size / 4.0).min(hi);
        Ok(Scene {
            background,
            textures,
            y0: [first, second],
        })
    }
}

/// Top-left corners of the objects in 0-based frame `t`.
fn origins(spec: &SynthSpec, scene: &Scene, t: usize) -> Vec<(f64, f64)> {
    let mid = (spec.n_frames.max(1) - 1) as f64 / 2.0;
    let dt = t as f64 - mid;
    let cx = (spec.width as f64 - spec.size) / 2.0;
    let (vx, vy) = spec.velocity;
    match spec.kind {
        MotionKind::Translate => vec![(cx + vx * dt, scene.y0[0] + vy * dt)],
        MotionKind::Sine => {
            let x = cx + vx * dt + spec.amplitude * (TAU * t as f64 / spec.period).sin();
            vec![(x, scene.y0[0] + vy * dt)]
        }
        MotionKind::Occlude => vec![
            (cx - vx * dt, scene.y0[1] + vy * dt),
            (cx + vx * dt, scene.y0[0] + vy * dt),
        ],
    }
}

/// Analytic top-left corner of the (front) square in 0-based frame `t`.
pub fn square_origin(spec: &SynthSpec, t: usize) -> Result<(f64, f64)> {
    let scene = Scene::new(spec)?;
    Ok(*origins(spec, &scene, t).last().expect("at least one object"))
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Renders a clip; errors if any object is not fully inside every frame.
pub fn synth_motion(spec: &SynthSpec) -> Result<FrameSequence> {
    if spec.n_frames == 0 || spec.height == 0 || spec.width == 0 || spec.size <= 0.0 {
        return Err(Error::Config("synthetic clip needs frames, a positive size and a square".into()));
    }
    if spec.kind == MotionKind::Sine && spec.period <= 0.0 {
        return Err(Error::Config("sine period must be positive".into()));
    }
    let scene = Scene::new(spec)?;
    let (h, w) = (spec.height, spec.width);
    let (hf, wf) = (h as f64, w as f64);
    let s = spec.size;
    let eps = 1e-9;

    let mut frames = Vec::with_capacity(spec.n_frames);
    for t in 0..spec.n_frames {
        let objs = origins(spec, &scene, t);
        for &(x, y) in &objs {
            if x < -eps || y < -eps || x + s > wf + eps || y + s > hf + eps {
                return Err(Error::ObjectLeavesFrame { frame: t + 1 });
            }
        }
        let mut data = vec![0.0f32; 3 * h * w];
        for i in 0..h {
            for j in 0..w {
                let (px, py) = (j as f64 + 0.5, i as f64 + 0.5);
                let mut rgb = [0.0; 3];
                for (c, v) in rgb.iter_mut().enumerate() {
                    *v = scene.background.at(c, px, py, wf, hf);
                }
                // Later objects are drawn in front.
                let first_texture = 2 - objs.len();
                for (o, &(x, y)) in objs.iter().enumerate() {
                    let cover = overlap(j as f64, j as f64 + 1.0, x, x + s) * overlap(i as f64, i as f64 + 1.0, y, y + s);
                    if cover <= 0.0 {
                        continue;
                    }
                    let tex = &scene.textures[first_texture + o];
                    let (u, v) = ((px - x) / s, (py - y) / s);
                    for (c, val) in rgb.iter_mut().enumerate() {
                        *val = cover * tex.at(c, u, v) + (1.0 - cover) * *val;
                    }
                }
                for (c, val) in rgb.iter().enumerate() {
                    data[(c * h + i) * w + j] = val.clamp(0.0, 1.0) as f32;
                }
            }
        }
        frames.push(Tensor::new(vec![3, h, w], data)?);
    }
    FrameSequence::new(frames, DEFAULT_FPS)
}

/// `count` clips with seeds `base.seed + i`. Each clip's velocity is drawn
/// uniformly from `[-|vx|, |vx|] x [-|vy|, |vy|]` using that seed.
pub fn synth_clips(base: &SynthSpec, count: usize) -> Result<Vec<FrameSequence>> {
    (0..count as u64)
        .map(|i| {
            let mut spec = base.clone();
            spec.seed = base.seed.wrapping_add(i);
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0f_ce11);
            let draw = |rng: &mut ChaCha8Rng, v: f64| if v == 0.0 { 0.0 } else { rng.gen_range(-v.abs()..=v.abs()) };
            spec.velocity = (draw(&mut rng, base.velocity.0), draw(&mut rng, base.velocity.1));
            synth_motion(&spec)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_velocity_is_static() {
        let spec = SynthSpec::new(MotionKind::Translate, (0.0, 0.0), 5, 24, 24, 3);
        let seq = synth_motion(&spec).unwrap();
        assert!(seq.frames().windows(2).all(|p| p[0] == p[1]));
    }

    #[test]
    fn translate_origin_is_linear() {
        let spec = SynthSpec::new(MotionKind::Translate, (2.0, 0.0), 7, 32, 32, 1);
        let x0 = square_origin(&spec, 0).unwrap().0;
        for t in 0..7 {
            let (x, _) = square_origin(&spec, t).unwrap();
            assert_eq!(x - x0, 2.0 * t as f64);
        }
    }

    #[test]
    fn leaving_the_frame_is_an_error() {
        let spec = SynthSpec::new(MotionKind::Translate, (5.0, 0.0), 9, 32, 32, 1);
        assert!(matches!(synth_motion(&spec), Err(Error::ObjectLeavesFrame { .. })));
    }

    #[test]
    fn values_in_unit_range() {
        for kind in [MotionKind::Translate, MotionKind::Sine, MotionKind::Occlude] {
            let spec = SynthSpec::new(kind, (1.0, 0.5), 7, 32, 32, 9);
            let seq = synth_motion(&spec).unwrap();
            assert!(seq.frames().iter().flat_map(|f| f.data()).all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
