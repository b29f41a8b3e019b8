//! `flavr`: train, run, evaluate and time the frame interpolation network.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Command, RunConfig};

/// Exit status plus message of a failed command.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<flavr_core::Error> for Failure {
    fn from(e: flavr_core::Error) -> Self {
        use flavr_core::Error as E;
        match e.root() {
            E::Config(_) | E::NotDivisible { .. } | E::WindowTooLarge { .. } => Failure::usage(e.to_string()),
            _ => Failure::runtime(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "flavr", version, about = "Multi-frame video interpolation with a gated 3D U-Net")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on a dataset root of frame directories.
    Train(TrainArgs),
    /// Insert k-1 frames into every gap of a frame directory.
    Interpolate(InterpolateArgs),
    /// Score a checkpoint on a dataset root; writes eval.csv.
    Eval(EvalArgs),
    /// Time single-shot forwards for several k against the recursive baseline.
    Bench(BenchArgs),
    /// Finite-difference check of every network gradient.
    Gradcheck(GradcheckArgs),
    /// Write synthetic moving-square clips as a dataset root.
    Synth(SynthArgs),
}

#[derive(Args)]
struct Common {
    /// `key = value` config file; flags override its entries.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for initialization, shuffling and synthesis.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    threads: Option<usize>,
    /// Upsampling factor: frames predicted per gap plus one.
    #[arg(long)]
    k: Option<usize>,
    /// Context frames on each side of a gap.
    #[arg(long)]
    context: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Training dataset root.
    #[arg(long, value_name = "DIR")]
    dataset: Option<PathBuf>,
    /// Validation dataset root.
    #[arg(long, value_name = "DIR")]
    val_dataset: Option<PathBuf>,
    /// Network preset: default, tiny or tiny-bench.
    #[arg(long)]
    preset: Option<String>,
    /// Parameter type: f32 or f64.
    #[arg(long)]
    dtype: Option<String>,
    /// Passes over the training set.
    #[arg(long)]
    epochs: Option<usize>,
    /// Stop after this many optimizer steps (0 = no limit).
    #[arg(long)]
    max_steps: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Samples per optimizer step.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Random temporal reversal and horizontal flips (true/false).
    #[arg(long)]
    augment: Option<String>,
}

#[derive(Args)]
struct InterpolateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Directory of input frames.
    #[arg(long, value_name = "DIR")]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Dataset root to score.
    #[arg(long, value_name = "DIR")]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Network preset: default, tiny or tiny-bench.
    #[arg(long)]
    preset: Option<String>,
    /// Comma-separated values of k to time.
    #[arg(long, value_name = "LIST")]
    ks: Option<String>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Measured runs per configuration (at least 20).
    #[arg(long)]
    runs: Option<usize>,
    /// Untimed runs before measuring.
    #[arg(long)]
    warmup: Option<usize>,
    /// Skip the recursive baseline.
    #[arg(long)]
    no_recursive: bool,
    /// Also write bench.json and print it instead of the summary.
    #[arg(long)]
    json: bool,
    /// Parameter type: f32 or f64.
    #[arg(long)]
    dtype: Option<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: Common,
    /// Network preset: default, tiny or tiny-bench.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Coordinates sampled per tensor (0 = all).
    #[arg(long)]
    per_tensor: Option<usize>,
    /// Central difference step.
    #[arg(long)]
    step: Option<f64>,
    /// Largest accepted relative error.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Motion kind: translate, sine or occlude.
    #[arg(long)]
    kind: Option<String>,
    /// Velocity in pixels per frame, `vx` or `vx,vy`.
    #[arg(long, allow_hyphen_values = true)]
    velocity: Option<String>,
    /// Frames per clip.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Number of clips; clip i uses seed + i.
    #[arg(long)]
    clips: Option<usize>,
}

type Overrides = Vec<(&'static str, String)>;

fn push<V: ToString>(out: &mut Overrides, key: &'static str, value: &Option<V>) {
    if let Some(v) = value {
        out.push((key, v.to_string()));
    }
}

fn push_path(out: &mut Overrides, key: &'static str, value: &Option<PathBuf>) {
    if let Some(p) = value {
        out.push((key, p.display().to_string()));
    }
}

impl Common {
    fn overrides(&self) -> Overrides {
        let mut o = Vec::new();
        push(&mut o, "seed", &self.seed);
        push_path(&mut o, "out", &self.out);
        push(&mut o, "threads", &self.threads);
        push(&mut o, "k", &self.k);
        push(&mut o, "context", &self.context);
        o
    }
}

fn resolve(command: Command, common: &Common, extra: Overrides) -> Result<RunConfig, Failure> {
    let text = match &common.config {
        Some(path) => Some(
            std::fs::read_to_string(path)
                .map_err(|e| Failure::usage(format!("config: cannot read {}: {e}", path.display())))?,
        ),
        None => None,
    };
    let mut overrides = common.overrides();
    overrides.extend(extra);
    RunConfig::resolve(command, text.as_deref(), &overrides)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Cmd::Train(a) => {
            let mut o = Vec::new();
            push_path(&mut o, "dataset", &a.dataset);
            push_path(&mut o, "val_dataset", &a.val_dataset);
            push(&mut o, "preset", &a.preset);
            push(&mut o, "dtype", &a.dtype);
            push(&mut o, "epochs", &a.epochs);
            push(&mut o, "max_steps", &a.max_steps);
            push(&mut o, "lr", &a.lr);
            push(&mut o, "batch_size", &a.batch_size);
            push(&mut o, "augment", &a.augment);
            commands::train(&resolve(Command::Train, &a.common, o)?)
        }
        Cmd::Interpolate(a) => {
            let mut o = Vec::new();
            push_path(&mut o, "checkpoint", &a.checkpoint);
            push_path(&mut o, "input", &a.input);
            commands::interpolate(&resolve(Command::Interpolate, &a.common, o)?)
        }
        Cmd::Eval(a) => {
            let mut o = Vec::new();
            push_path(&mut o, "checkpoint", &a.checkpoint);
            push_path(&mut o, "dataset", &a.dataset);
            commands::eval(&resolve(Command::Eval, &a.common, o)?)
        }
        Cmd::Bench(a) => {
            let mut o = Vec::new();
            push(&mut o, "preset", &a.preset);
            push(&mut o, "ks", &a.ks);
            push(&mut o, "height", &a.height);
            push(&mut o, "width", &a.width);
            push(&mut o, "runs", &a.runs);
            push(&mut o, "warmup", &a.warmup);
            push(&mut o, "dtype", &a.dtype);
            if a.no_recursive {
                o.push(("recursive", "false".into()));
            }
            if a.json {
                o.push(("json", "true".into()));
            }
            commands::bench(&resolve(Command::Bench, &a.common, o)?)
        }
        Cmd::Gradcheck(a) => {
            let mut o = Vec::new();
            push(&mut o, "preset", &a.preset);
            push(&mut o, "height", &a.height);
            push(&mut o, "width", &a.width);
            push(&mut o, "per_tensor", &a.per_tensor);
            push(&mut o, "step", &a.step);
            push(&mut o, "tolerance", &a.tolerance);
            commands::gradcheck(&resolve(Command::Gradcheck, &a.common, o)?)
        }
        Cmd::Synth(a) => {
            let mut o = Vec::new();
            push(&mut o, "kind", &a.kind);
            push(&mut o, "velocity", &a.velocity);
            push(&mut o, "frames", &a.frames);
            push(&mut o, "height", &a.height);
            push(&mut o, "width", &a.width);
            push(&mut o, "clips", &a.clips);
            commands::synth(&resolve(Command::Synth, &a.common, o)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
