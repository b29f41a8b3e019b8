use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};

use flavr_core::bench::{scaling_study, StudyOptions};
use flavr_core::data::{enumerate_samples, load_dataset, load_frames, materialize, save_frames, synth_motion, Sample, SynthSpec};
use flavr_core::gradcheck::{check_network, GradCheckOptions};
use flavr_core::metrics::{evaluate, Interpolator};
use flavr_core::train::{fit_with, load_checkpoint, save_checkpoint, Checkpoint, FitHooks};
use flavr_core::video::{head_subset, upsample};
use flavr_core::{DType, FlavrConfig, Network, Scalar, Tensor};

use crate::config::RunConfig;
use crate::Failure;

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

/// Sizes the worker pool, creates the output directory and echoes the
/// resolved config into it.
fn prepare(cfg: &RunConfig) -> Result<(), Failure> {
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| Failure::runtime(format!("thread pool: {e}")))?;
    }
    fs::create_dir_all(&cfg.out).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", cfg.out.display())))?;
    write(&cfg.out.join("config.resolved"), &cfg.to_kv())
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, Failure> {
    let path = value
        .as_deref()
        .ok_or_else(|| Failure::usage(format!("{key}: required but not set (--{})", key.replace('_', "-"))))?;
    if !path.exists() {
        return Err(Failure::usage(format!("{key}: {} does not exist", path.display())));
    }
    Ok(path)
}

fn samples_of(root: &Path, key: &str, net: &FlavrConfig) -> Result<Vec<Sample>, Failure> {
    let clips = load_dataset(root)?;
    let mut samples = Vec::new();
    for (name, seq) in &clips {
        for spec in enumerate_samples(seq, net.k, net.context) {
            samples.push(materialize(seq, &spec).map_err(|e| Failure::from(e.context(format!("clip {name}"))))?);
        }
    }
    info!("{key}: {} clips, {} samples", clips.len(), samples.len());
    Ok(samples)
}

pub fn train(cfg: &RunConfig) -> Result<(), Failure> {
    let root = required(&cfg.dataset, "dataset")?;
    let val_root = match &cfg.val_dataset {
        Some(_) => Some(required(&cfg.val_dataset, "val_dataset")?),
        None => None,
    };
    prepare(cfg)?;
    let train = samples_of(root, "dataset", &cfg.net)?;
    if train.is_empty() {
        return Err(Failure::usage(format!(
            "dataset: {} has no clip long enough for k = {}, context = {}",
            root.display(),
            cfg.net.k,
            cfg.net.context
        )));
    }
    let val = match val_root {
        Some(r) => samples_of(r, "val_dataset", &cfg.net)?,
        None => Vec::new(),
    };
    match cfg.dtype {
        DType::F32 => train_as::<f32>(cfg, &train, &val),
        DType::F64 => train_as::<f64>(cfg, &train, &val),
    }
}

fn train_as<T: Scalar>(cfg: &RunConfig, train: &[Sample], val: &[Sample]) -> Result<(), Failure> {
    let mut net = Network::<T>::build(&cfg.net, cfg.seed)?;
    info!("{} parameters", net.parameter_count());
    let mut report = |r: &flavr_core::train::EpochRecord, _: &Network<T>| {
        info!("epoch {} loss {:.6} val_psnr {:.3} lr {:e} steps {}", r.epoch, r.train_loss, r.val_psnr, r.lr, r.steps);
    };
    let hooks = FitHooks {
        feature_loss: None,
        on_epoch: Some(&mut report),
    };
    let outcome = fit_with(&mut net, train, val, &cfg.train, hooks)?;
    write(&cfg.out.join("train_log.csv"), &outcome.log.to_csv())?;
    save_checkpoint(cfg.out.join("last.ckpt"), &outcome.last)?;
    save_checkpoint(cfg.out.join("best.ckpt"), &outcome.best)?;
    info!("wrote {}", cfg.out.display());
    Ok(())
}

fn open_checkpoint(cfg: &RunConfig) -> Result<Checkpoint, Failure> {
    let ckpt = load_checkpoint(required(&cfg.checkpoint, "checkpoint")?)?;
    if cfg.is_explicit("context") && cfg.net.context != ckpt.config.context {
        return Err(Failure::usage(format!(
            "context: {} does not match the checkpoint's {}",
            cfg.net.context, ckpt.config.context
        )));
    }
    Ok(ckpt)
}

fn checkpoint_dtype(ckpt: &Checkpoint) -> DType {
    ckpt.params.first().map_or(DType::F32, |(_, t)| t.dtype())
}

/// The requested `k`, or the checkpoint's own when none was given.
fn effective_k(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<usize, Failure> {
    let trained = ckpt.config.k;
    if !cfg.is_explicit("k") {
        return Ok(trained);
    }
    head_subset(trained, cfg.net.k)
        .map(|_| cfg.net.k)
        .ok_or_else(|| Failure::usage(format!("k: {} is not available from a checkpoint trained with k = {trained}", cfg.net.k)))
}

pub fn interpolate(cfg: &RunConfig) -> Result<(), Failure> {
    let ckpt = open_checkpoint(cfg)?;
    let k = effective_k(cfg, &ckpt)?;
    let input = required(&cfg.input, "input")?;
    prepare(cfg)?;
    let seq = load_frames(input)?;
    let out = match checkpoint_dtype(&ckpt) {
        DType::F32 => upsample(&ckpt.to_network::<f32>()?, &seq, k)?,
        DType::F64 => upsample(&ckpt.to_network::<f64>()?, &seq, k)?,
    };
    if !out.skipped.is_empty() {
        warn!("gaps without full context left empty: {:?}", out.skipped);
    }
    out.save(&cfg.out)?;
    println!(
        "{} input frames, {} predicted, {} gaps skipped, fps {}",
        seq.len(),
        out.predicted(),
        out.skipped.len(),
        out.fps
    );
    Ok(())
}

/// A `k`-way view of a network trained with a larger head.
struct HeadSubset<'a> {
    model: &'a dyn Interpolator,
    pick: Vec<usize>,
}

impl Interpolator for HeadSubset<'_> {
    fn interpolate(&self, sample: &Sample) -> flavr_core::Result<Vec<Tensor<f32>>> {
        let all = self.model.interpolate(sample)?;
        Ok(self.pick.iter().map(|&i| all[i].clone()).collect())
    }
}

pub fn eval(cfg: &RunConfig) -> Result<(), Failure> {
    let ckpt = open_checkpoint(cfg)?;
    let k = effective_k(cfg, &ckpt)?;
    let root = required(&cfg.dataset, "dataset")?;
    let clips = load_dataset(root)?;
    let context = ckpt.config.context;
    let windows: usize = clips.iter().map(|(_, s)| enumerate_samples(s, k, context).len()).sum();
    if windows == 0 {
        return Err(Failure::usage(format!(
            "dataset: {} has no clip long enough for k = {k}, context = {context}",
            root.display()
        )));
    }
    prepare(cfg)?;
    let pick = head_subset(ckpt.config.k, k).expect("checked by effective_k");
    let report = match checkpoint_dtype(&ckpt) {
        DType::F32 => {
            let net = ckpt.to_network::<f32>()?;
            evaluate(&HeadSubset { model: &net, pick }, &clips, k, context)?
        }
        DType::F64 => {
            let net = ckpt.to_network::<f64>()?;
            evaluate(&HeadSubset { model: &net, pick }, &clips, k, context)?
        }
    };
    write(&cfg.out.join("eval.csv"), &report.to_csv())?;
    for offset in 1..k {
        let (p, s) = report.offset_mean(offset);
        info!("offset {offset}: psnr {p:.3} ssim {s:.4}");
    }
    println!("clips {} windows {windows} psnr {:.4} ssim {:.6}", report.clips.len(), report.psnr, report.ssim);
    Ok(())
}

pub fn bench(cfg: &RunConfig) -> Result<(), Failure> {
    if cfg.runs < 20 {
        return Err(Failure::usage(format!("runs: at least 20 measured runs are required, got {}", cfg.runs)));
    }
    prepare(cfg)?;
    let opts = StudyOptions {
        height: cfg.height,
        width: cfg.width,
        warmup: cfg.warmup,
        runs: cfg.runs,
        seed: cfg.seed,
        recursive: cfg.recursive,
    };
    let study = match cfg.dtype {
        DType::F32 => scaling_study::<f32>(&cfg.net, &cfg.ks, &opts)?,
        DType::F64 => scaling_study::<f64>(&cfg.net, &cfg.ks, &opts)?,
    };
    write(&cfg.out.join("bench.csv"), &study.to_csv())?;
    if cfg.json {
        let json = study.to_json();
        write(&cfg.out.join("bench.json"), &json)?;
        println!("{json}");
    } else {
        println!("workers {}", rayon::current_num_threads());
        for row in &study.rows {
            println!("{}  ratio {:.3}", row.single.summary(), row.ratio);
            if let (Some(rec), Some(ratio)) = (&row.recursive, row.recursive_ratio) {
                println!("{}  ratio {:.3}", rec.summary(), ratio);
            }
        }
    }
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig) -> Result<(), Failure> {
    prepare(cfg)?;
    let opts = GradCheckOptions {
        height: cfg.height,
        width: cfg.width,
        step: cfg.step,
        per_tensor: (cfg.per_tensor > 0).then_some(cfg.per_tensor),
        seed: cfg.seed,
        ..GradCheckOptions::default()
    };
    let report = check_network(&cfg.net, &opts)?;
    let mut text = format!(
        "checked {}\nkinks {}\nmax_rel_err {:e}\ntolerance {:e}\n",
        report.checked, report.kinks, report.max_rel_err, cfg.tolerance
    );
    if let Some(w) = &report.worst {
        text.push_str(&format!("worst {}[{}] analytic {:e} numeric {:e}\n", w.tensor, w.index, w.analytic, w.numeric));
    }
    write(&cfg.out.join("gradcheck.txt"), &text)?;
    print!("{text}");
    if report.max_rel_err <= cfg.tolerance {
        Ok(())
    } else {
        Err(Failure::runtime(format!(
            "max relative error {:e} exceeds {:e}",
            report.max_rel_err, cfg.tolerance
        )))
    }
}

pub fn synth(cfg: &RunConfig) -> Result<(), Failure> {
    prepare(cfg)?;
    for i in 0..cfg.clips {
        let spec = SynthSpec::new(cfg.kind, cfg.velocity, cfg.frames, cfg.height, cfg.width, cfg.seed.wrapping_add(i as u64));
        let seq = synth_motion(&spec)?;
        save_frames(&seq, cfg.out.join(format!("clip_{i:06}")))?;
    }
    println!("{} clips of {} frames in {}", cfg.clips, cfg.frames, cfg.out.display());
    Ok(())
}
