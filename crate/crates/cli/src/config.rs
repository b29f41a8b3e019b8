//! Resolved run settings: command defaults, then the config file, then flags.

use std::fmt::Write as _;
use std::path::PathBuf;

use flavr_core::data::MotionKind;
use flavr_core::net::parse_kv_lines;
use flavr_core::train::TrainConfig;
use flavr_core::{DType, FlavrConfig};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Interpolate,
    Eval,
    Bench,
    Gradcheck,
    Synth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Default,
    Tiny,
    TinyBench,
}

impl Preset {
    fn parse(value: &str) -> Result<Self, Failure> {
        match value {
            "default" => Ok(Preset::Default),
            "tiny" => Ok(Preset::Tiny),
            "tiny-bench" => Ok(Preset::TinyBench),
            other => Err(Failure::usage(format!("preset: unknown `{other}` (default|tiny|tiny-bench)"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Preset::Default => "default",
            Preset::Tiny => "tiny",
            Preset::TinyBench => "tiny-bench",
        }
    }

    fn config(self) -> FlavrConfig {
        match self {
            Preset::Default => FlavrConfig::default(),
            Preset::Tiny => FlavrConfig::tiny(),
            Preset::TinyBench => FlavrConfig::tiny_bench(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub preset: Preset,
    pub net: FlavrConfig,
    pub seed: u64,
    /// Worker threads; 0 keeps the rayon default.
    pub threads: usize,
    pub out: PathBuf,
    pub dataset: Option<PathBuf>,
    pub val_dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub dtype: DType,
    pub train: TrainConfig,
    pub height: usize,
    pub width: usize,
    pub ks: Vec<usize>,
    pub runs: usize,
    pub warmup: usize,
    pub recursive: bool,
    pub json: bool,
    /// Coordinates probed per tensor by gradcheck; 0 probes all.
    pub per_tensor: usize,
    pub step: f64,
    pub tolerance: f64,
    pub kind: MotionKind,
    pub velocity: (f64, f64),
    pub frames: usize,
    pub clips: usize,
    /// Keys set by the config file or a flag rather than a default.
    pub explicit: Vec<String>,
}

/// Keys besides the network ones.
const RUN_KEYS: &[&str] = &[
    "preset",
    "seed",
    "threads",
    "out",
    "dataset",
    "val_dataset",
    "checkpoint",
    "input",
    "dtype",
    "lr",
    "batch_size",
    "epochs",
    "max_steps",
    "patience",
    "augment",
    "height",
    "width",
    "ks",
    "runs",
    "warmup",
    "recursive",
    "json",
    "per_tensor",
    "step",
    "tolerance",
    "kind",
    "velocity",
    "frames",
    "clips",
];

fn num<N: std::str::FromStr>(key: &str, value: &str) -> Result<N, Failure> {
    value
        .parse()
        .map_err(|_| Failure::usage(format!("{key}: cannot parse `{value}`")))
}

fn boolean(key: &str, value: &str) -> Result<bool, Failure> {
    match value {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        other => Err(Failure::usage(format!("{key}: expected a boolean, got `{other}`"))),
    }
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    pub fn defaults(command: Command) -> Self {
        let (preset, size) = match command {
            Command::Bench => (Preset::TinyBench, 256),
            Command::Gradcheck => (Preset::Tiny, 16),
            _ => (Preset::Default, 32),
        };
        let name = match command {
            Command::Train => "train",
            Command::Interpolate => "interpolate",
            Command::Eval => "eval",
            Command::Bench => "bench",
            Command::Gradcheck => "gradcheck",
            Command::Synth => "synth",
        };
        RunConfig {
            preset,
            net: preset.config(),
            seed: 0,
            threads: 0,
            out: PathBuf::from("runs").join(name),
            dataset: None,
            val_dataset: None,
            checkpoint: None,
            input: None,
            dtype: DType::F32,
            train: TrainConfig::default(),
            height: size,
            width: size,
            ks: vec![2, 4, 8],
            runs: 20,
            warmup: 2,
            recursive: true,
            json: false,
            per_tensor: 0,
            step: 3e-5,
            tolerance: 1e-5,
            kind: MotionKind::Translate,
            velocity: (1.0, 0.0),
            frames: 13,
            clips: 1,
            explicit: Vec::new(),
        }
    }

    /// Applies config file text and then flag overrides. A `preset` anywhere
    /// resets the network settings before the other keys are applied.
    pub fn resolve(command: Command, file: Option<&str>, overrides: &[(&str, String)]) -> Result<Self, Failure> {
        let mut settings: Vec<(String, String)> = Vec::new();
        if let Some(text) = file {
            let map = parse_kv_lines(text).map_err(|e| Failure::usage(e.to_string()))?;
            settings.extend(map);
        }
        settings.extend(overrides.iter().map(|(k, v)| (k.to_string(), v.clone())));

        let mut cfg = RunConfig::defaults(command);
        if let Some((_, p)) = settings.iter().rev().find(|(k, _)| k == "preset") {
            cfg.preset = Preset::parse(p)?;
            cfg.net = cfg.preset.config();
        }
        if let Some((key, _)) = settings.iter().find(|(k, _)| !Self::is_key(k)) {
            return Err(Failure::usage(format!("unknown config key `{key}`")));
        }
        for (key, value) in &settings {
            cfg.set(key, value)?;
        }
        cfg.train.seed = cfg.seed;
        cfg.explicit = settings.into_iter().map(|(k, _)| k).collect();
        cfg.net.validate().map_err(|e| Failure::usage(e.to_string()))?;
        cfg.train.validate().map_err(|e| Failure::usage(e.to_string()))?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), Failure> {
        let value = value.trim();
        if FlavrConfig::is_key(key) {
            return self.net.set(key, value).map_err(|e| Failure::usage(e.to_string()));
        }
        match key {
            "preset" => {}
            "seed" => self.seed = num(key, value)?,
            "threads" => self.threads = num(key, value)?,
            "out" => self.out = path(value).ok_or_else(|| Failure::usage("out: must not be empty"))?,
            "dataset" => self.dataset = path(value),
            "val_dataset" => self.val_dataset = path(value),
            "checkpoint" => self.checkpoint = path(value),
            "input" => self.input = path(value),
            "dtype" => {
                self.dtype = match value {
                    "f32" => DType::F32,
                    "f64" => DType::F64,
                    other => return Err(Failure::usage(format!("dtype: expected f32 or f64, got `{other}`"))),
                }
            }
            "lr" => self.train.lr0 = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "epochs" => self.train.max_epochs = num(key, value)?,
            "max_steps" => {
                let steps: usize = num(key, value)?;
                self.train.max_steps = (steps > 0).then_some(steps);
            }
            "patience" => self.train.plateau_patience = num(key, value)?,
            "augment" => self.train.augment = boolean(key, value)?,
            "height" => self.height = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "ks" => {
                self.ks = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| num(key, s))
                    .collect::<Result<_, _>>()?;
                if self.ks.is_empty() {
                    return Err(Failure::usage("ks: needs at least one value"));
                }
            }
            "runs" => self.runs = num(key, value)?,
            "warmup" => self.warmup = num(key, value)?,
            "recursive" => self.recursive = boolean(key, value)?,
            "json" => self.json = boolean(key, value)?,
            "per_tensor" => self.per_tensor = num(key, value)?,
            "step" => self.step = num(key, value)?,
            "tolerance" => self.tolerance = num(key, value)?,
            "kind" => self.kind = value.parse().map_err(|e: flavr_core::Error| Failure::usage(e.to_string()))?,
            "velocity" => {
                let parts: Vec<f64> = value.split(',').map(|s| num(key, s.trim())).collect::<Result<_, _>>()?;
                self.velocity = match parts[..] {
                    [vx] => (vx, 0.0),
                    [vx, vy] => (vx, vy),
                    _ => return Err(Failure::usage(format!("velocity: expected `vx` or `vx,vy`, got `{value}`"))),
                };
            }
            "frames" => self.frames = num(key, value)?,
            "clips" => self.clips = num(key, value)?,
            other => unreachable!("`{other}` passed is_key"),
        }
        Ok(())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.iter().any(|k| k == key)
    }

    pub fn is_key(key: &str) -> bool {
        FlavrConfig::is_key(key) || RUN_KEYS.contains(&key)
    }

    /// Every resolved setting as `key = value` lines, readable by
    /// [`resolve`](Self::resolve).
    pub fn to_kv(&self) -> String {
        let p = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let t = &self.train;
        let mut out = format!("preset = {}\n", self.preset.name());
        for line in self.net.to_kv().lines() {
            let (k, v) = line.split_once('=').expect("key=value");
            let _ = writeln!(out, "{k} = {v}");
        }
        let ks: Vec<String> = self.ks.iter().map(|k| k.to_string()).collect();
        let pairs: [(&str, String); 28] = [
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("out", self.out.display().to_string()),
            ("dataset", p(&self.dataset)),
            ("val_dataset", p(&self.val_dataset)),
            ("checkpoint", p(&self.checkpoint)),
            ("input", p(&self.input)),
            ("dtype", if self.dtype == DType::F32 { "f32" } else { "f64" }.into()),
            ("lr", t.lr0.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("epochs", t.max_epochs.to_string()),
            ("max_steps", t.max_steps.unwrap_or(0).to_string()),
            ("patience", t.plateau_patience.to_string()),
            ("augment", t.augment.to_string()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("ks", ks.join(",")),
            ("runs", self.runs.to_string()),
            ("warmup", self.warmup.to_string()),
            ("recursive", self.recursive.to_string()),
            ("json", self.json.to_string()),
            ("per_tensor", self.per_tensor.to_string()),
            ("step", self.step.to_string()),
            ("tolerance", self.tolerance.to_string()),
            ("kind", self.kind.to_string()),
            ("velocity", format!("{},{}", self.velocity.0, self.velocity.1)),
            ("frames", self.frames.to_string()),
            ("clips", self.clips.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
