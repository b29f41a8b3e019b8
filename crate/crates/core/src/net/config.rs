use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How encoder features are merged into the decoder at matching resolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionMode {
    None,
    Add,
    Concat,
}

impl FusionMode {
    /// Channel multiplier applied to the decoder feature after fusion.
    pub fn growth(self) -> usize {
        match self {
            FusionMode::Concat => 2,
            FusionMode::None | FusionMode::Add => 1,
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::None => "none",
            FusionMode::Add => "add",
            FusionMode::Concat => "concat",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FusionMode::None),
            "add" => Ok(FusionMode::Add),
            "concat" => Ok(FusionMode::Concat),
            other => Err(Error::Config(format!("unknown fusion mode `{other}` (none|add|concat)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossMode {
    L1,
    L2,
    Huber,
    /// L1 plus a caller-supplied feature-space term.
    L1Perceptual,
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::L1 => "l1",
            LossMode::L2 => "l2",
            LossMode::Huber => "huber",
            LossMode::L1Perceptual => "l1+perceptual",
        })
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" | "L1" => Ok(LossMode::L1),
            "l2" | "L2" => Ok(LossMode::L2),
            "huber" => Ok(LossMode::Huber),
            "l1+perceptual" => Ok(LossMode::L1Perceptual),
            other => Err(Error::Config(format!(
                "unknown loss `{other}` (l1|l2|huber|l1+perceptual)"
            ))),
        }
    }
}

/// Architecture and sampling hyperparameters of a network.
///
/// Block indices run 0..5 for `conv1` (the stem) through `conv5`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlavrConfig {
    /// Interpolation factor; the network predicts `k - 1` frames.
    pub k: usize,
    /// Frames of context on each side of the gap; the input has `2 * context` frames.
    pub context: usize,
    pub encoder_widths: [usize; 5],
    pub stem_kernel: [usize; 3],
    pub block_kernel: [usize; 3],
    pub spatial_stride: [bool; 5],
    pub temporal_stride: [usize; 5],
    pub fusion: FusionMode,
    pub gating: bool,
    pub fusion_conv_kernel: usize,
    pub fusion_width: usize,
    pub prediction_kernel: usize,
    pub loss: LossMode,
}

impl Default for FlavrConfig {
    fn default() -> Self {
        FlavrConfig {
            k: 2,
            context: 2,
            encoder_widths: [64, 64, 128, 256, 512],
            stem_kernel: [3, 7, 7],
            block_kernel: [3, 3, 3],
            spatial_stride: [true, false, true, true, false],
            temporal_stride: [1; 5],
            fusion: FusionMode::Concat,
            gating: true,
            fusion_conv_kernel: 3,
            fusion_width: 64,
            prediction_kernel: 7,
            loss: LossMode::L1,
        }
    }
}

const KEYS: &[&str] = &[
    "k",
    "context",
    "encoder_widths",
    "stem_kernel",
    "block_kernel",
    "spatial_stride_blocks",
    "temporal_stride",
    "fusion",
    "gating",
    "fusion_conv_kernel",
    "fusion_width",
    "prediction_kernel",
    "loss",
];

impl FlavrConfig {
    /// Desk-scale network used for gradient checks and overfit runs.
    pub fn tiny() -> Self {
        FlavrConfig {
            encoder_widths: [4, 4, 8, 8, 8],
            fusion_width: 8,
            ..Self::default()
        }
    }

    /// The tiny widths with a narrower fusion layer; the default for timing
    /// studies, where the prediction head should stay a small share of the
    /// forward cost.
    pub fn tiny_bench() -> Self {
        FlavrConfig {
            fusion_width: 4,
            ..Self::tiny()
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_context(mut self, context: usize) -> Self {
        self.context = context;
        self
    }

    pub fn input_frames(&self) -> usize {
        2 * self.context
    }

    pub fn output_frames(&self) -> usize {
        self.k - 1
    }

    pub fn prediction_channels(&self) -> usize {
        3 * (self.k - 1)
    }

    pub fn is_strided(&self, block: usize) -> bool {
        self.spatial_stride[block] || self.temporal_stride[block] > 1
    }

    pub fn spatial_stride_of(&self, block: usize) -> usize {
        if self.spatial_stride[block] {
            2
        } else {
            1
        }
    }

    /// Product of spatial strides; H and W must be multiples of it.
    pub fn spatial_divisor(&self) -> usize {
        (0..5).map(|b| self.spatial_stride_of(b)).product()
    }

    pub fn temporal_divisor(&self) -> usize {
        self.temporal_stride.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("k must be at least 2, got {}", self.k)));
        }
        if self.context < 1 {
            return Err(Error::Config("context must be at least 1".into()));
        }
        if self.encoder_widths.contains(&0) || self.fusion_width == 0 {
            return Err(Error::Config("channel widths must be at least 1".into()));
        }
        for (name, kernel) in [("stem_kernel", self.stem_kernel), ("block_kernel", self.block_kernel)] {
            if kernel.iter().any(|&k| k % 2 == 0) {
                return Err(Error::Config(format!("{name} {kernel:?} must be odd on every axis")));
            }
        }
        for (name, k) in [
            ("fusion_conv_kernel", self.fusion_conv_kernel),
            ("prediction_kernel", self.prediction_kernel),
        ] {
            if k % 2 == 0 {
                return Err(Error::Config(format!("{name} must be odd, got {k}")));
            }
        }
        if let Some(s) = self.temporal_stride.iter().find(|&&s| s != 1 && s != 2) {
            return Err(Error::Config(format!("temporal strides must be 1 or 2, got {s}")));
        }
        if self.input_frames() % self.temporal_divisor() != 0 {
            return Err(Error::Config(format!(
                "{} input frames are not divisible by the temporal stride product {}",
                self.input_frames(),
                self.temporal_divisor()
            )));
        }
        Ok(())
    }

    /// Checks an input extent triple `(T, H, W)` against the stride plan.
    pub fn check_input(&self, t: usize, h: usize, w: usize) -> Result<()> {
        if t != self.input_frames() {
            return Err(Error::Shape {
                op: "forward",
                axis: "time".into(),
                expected: self.input_frames(),
                actual: t,
            });
        }
        let d = self.spatial_divisor();
        for (axis, extent) in [("height", h), ("width", w)] {
            if extent % d != 0 {
                return Err(Error::NotDivisible {
                    op: "forward",
                    axis,
                    extent,
                    divisor: d,
                });
            }
        }
        Ok(())
    }

    /// `key=value` lines in a fixed key order.
    pub fn to_kv(&self) -> String {
        let list = |xs: &[usize]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let strided: Vec<usize> = (0..5).filter(|&b| self.spatial_stride[b]).map(|b| b + 1).collect();
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        line("k", self.k.to_string());
        line("context", self.context.to_string());
        line("encoder_widths", list(&self.encoder_widths));
        line("stem_kernel", list(&self.stem_kernel));
        line("block_kernel", list(&self.block_kernel));
        line("spatial_stride_blocks", list(&strided));
        line("temporal_stride", list(&self.temporal_stride));
        line("fusion", self.fusion.to_string());
        line("gating", self.gating.to_string());
        line("fusion_conv_kernel", self.fusion_conv_kernel.to_string());
        line("fusion_width", self.fusion_width.to_string());
        line("prediction_kernel", self.prediction_kernel.to_string());
        line("loss", self.loss.to_string());
        out
    }

    pub fn is_key(key: &str) -> bool {
        KEYS.contains(&key)
    }

    /// Applies one `key=value` setting; unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "k" => self.k = parse_num(key, value)?,
            "context" => self.context = parse_num(key, value)?,
            "encoder_widths" => self.encoder_widths = parse_array(key, value)?,
            "stem_kernel" => self.stem_kernel = parse_array(key, value)?,
            "block_kernel" => self.block_kernel = parse_array(key, value)?,
            "spatial_stride_blocks" => {
                let mut strided = [false; 5];
                for b in parse_list::<usize>(key, value)? {
                    if !(1..=5).contains(&b) {
                        return Err(Error::Config(format!("{key}: block {b} is not in conv1..conv5")));
                    }
                    strided[b - 1] = true;
                }
                self.spatial_stride = strided;
            }
            "temporal_stride" => self.temporal_stride = parse_array(key, value)?,
            "fusion" => self.fusion = value.parse()?,
            "gating" => self.gating = parse_bool(key, value)?,
            "fusion_conv_kernel" => self.fusion_conv_kernel = parse_num(key, value)?,
            "fusion_width" => self.fusion_width = parse_num(key, value)?,
            "prediction_kernel" => self.prediction_kernel = parse_num(key, value)?,
            "loss" => self.loss = value.parse()?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses the output of [`FlavrConfig::to_kv`]. Missing keys keep their defaults.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = FlavrConfig::default();
        for (key, value) in parse_kv_lines(text)? {
            cfg.set(&key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments. Later
/// duplicates override earlier ones.
pub fn parse_kv_lines(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{raw}`", no + 1)))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

pub(crate) fn parse_num<N: FromStr>(key: &str, value: &str) -> Result<N> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected a boolean, got `{other}`"))),
    }
}

pub(crate) fn parse_list<N: FromStr>(key: &str, value: &str) -> Result<Vec<N>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn parse_array<const N: usize>(key: &str, value: &str) -> Result<[usize; N]> {
    let items: Vec<usize> = parse_list(key, value)?;
    items
        .try_into()
        .map_err(|v: Vec<usize>| Error::Config(format!("{key}: expected {N} values, got {}", v.len())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut cfg = FlavrConfig::tiny().with_k(8).with_context(3);
        cfg.fusion = FusionMode::Add;
        cfg.gating = false;
        cfg.temporal_stride = [2, 1, 1, 1, 1];
        cfg.loss = LossMode::Huber;
        let text = cfg.to_kv();
        assert!(text.contains("spatial_stride_blocks=1,3,4\n"));
        assert_eq!(FlavrConfig::from_kv(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(FlavrConfig::from_kv("k=1").is_err());
        assert!(FlavrConfig::from_kv("bogus=3").is_err());
        assert!(FlavrConfig::from_kv("encoder_widths=1,2,3").is_err());
        assert!(FlavrConfig::from_kv("temporal_stride=3,1,1,1,1").is_err());
        assert!(FlavrConfig::from_kv("fusion=mean").is_err());
        // six input frames cannot be halved twice
        assert!(FlavrConfig::from_kv("context=3\ntemporal_stride=2,1,2,1,1").is_err());
    }

    #[test]
    fn default_divisibility() {
        let cfg = FlavrConfig::default();
        assert_eq!(cfg.spatial_divisor(), 8);
        assert_eq!(cfg.prediction_channels(), 3);
        assert!(cfg.check_input(4, 64, 64).is_ok());
        assert!(matches!(cfg.check_input(4, 60, 64), Err(Error::NotDivisible { axis: "height", .. })));
        assert!(matches!(cfg.check_input(3, 64, 64), Err(Error::Shape { .. })));
    }

    #[test]
    fn comments_and_spacing() {
        let map = parse_kv_lines("# header\n k = 4  # trailing\n\nfusion=add\n").unwrap();
        assert_eq!(map["k"], "4");
        assert_eq!(map["fusion"], "add");
        assert!(parse_kv_lines("novalue").is_err());
    }
}
