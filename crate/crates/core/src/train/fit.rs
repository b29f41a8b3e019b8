use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, collate, denormalize_batch, normalize, Sample};
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::net::Network;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::checkpoint::Checkpoint;
use super::loss::{loss_with, FeatureLoss};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation gain above `plateau_threshold` before the
    /// learning rate halves.
    pub plateau_patience: usize,
    /// Minimum validation PSNR gain in dB that counts as an improvement.
    pub plateau_threshold: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Random temporal reversal and horizontal flips.
    pub augment: bool,
    pub shuffle: bool,
    /// Stops after this many optimizer steps, possibly mid-epoch.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 2e-4,
            batch_size: 8,
            max_epochs: 200,
            plateau_patience: 5,
            plateau_threshold: 1e-3,
            adam: AdamConfig::default(),
            seed: 0,
            augment: true,
            shuffle: true,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.plateau_patience == 0 {
            return Err(Error::Config("plateau_patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN when there is no validation set.
    pub val_psnr: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    /// Optimizer steps taken so far.
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_psnr,lr\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.val_psnr, r.lr);
        }
        out
    }

    pub fn steps(&self) -> usize {
        self.epochs.last().map_or(0, |r| r.steps)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: TrainLog,
    /// Parameters at the best validation epoch, or the final ones without a
    /// validation set.
    pub best: Checkpoint,
    pub last: Checkpoint,
}

/// Halves the learning rate after `patience` consecutive observations
/// without a gain above `threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    lr: f64,
    best: f64,
    stale: usize,
    patience: usize,
    threshold: f64,
}

impl PlateauSchedule {
    pub fn new(lr0: f64, patience: usize, threshold: f64) -> Self {
        PlateauSchedule {
            lr: lr0,
            best: f64::NEG_INFINITY,
            stale: 0,
            patience,
            threshold,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Records one validation score; returns whether it is a new best.
    pub fn observe(&mut self, score: f64) -> bool {
        if score > self.best + self.threshold {
            self.best = score;
            self.stale = 0;
            return true;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.lr *= 0.5;
            self.stale = 0;
        }
        false
    }
}

/// Optional extras for [`fit_with`].
pub struct FitHooks<'a, T: Scalar> {
    pub feature_loss: Option<&'a dyn FeatureLoss<T>>,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochRecord, &Network<T>)>,
}

impl<T: Scalar> Default for FitHooks<'_, T> {
    fn default() -> Self {
        FitHooks {
            feature_loss: None,
            on_epoch: None,
        }
    }
}

/// Mean PSNR of clamped, de-normalized predictions: over frames, then samples.
pub fn mean_psnr<T: Scalar>(net: &Network<T>, samples: &[Sample], batch_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let normalized: Vec<Sample> = chunk.iter().map(|s| normalize(s).0).collect();
        let batch = collate::<T>(&normalized)?;
        let preds = denormalize_batch(&net.infer(&batch.inputs)?, &batch.means);
        for b in 0..chunk.len() {
            let mut per_sample = 0.0;
            for (p, t) in preds.iter().zip(&batch.targets) {
                per_sample += psnr(&slice_batch(p, b), &slice_batch(t, b))?;
            }
            total += per_sample / preds.len() as f64;
        }
    }
    Ok(total / samples.len() as f64)
}

fn slice_batch<T: Scalar>(t: &Tensor<T>, b: usize) -> Tensor<T> {
    let per = t.numel() / t.shape()[0];
    let mut shape = t.shape().to_vec();
    shape[0] = 1;
    Tensor::new(shape, t.data()[b * per..(b + 1) * per].to_vec()).expect("slice of a valid tensor")
}

/// One optimizer step on `batch`; returns the loss before the update.
pub fn train_step<T: Scalar>(
    net: &mut Network<T>,
    samples: &[Sample],
    state: &mut AdamState,
    lr: f64,
    adam: &AdamConfig,
    feature_loss: Option<&dyn FeatureLoss<T>>,
) -> Result<f64> {
    let normalized: Vec<Sample> = samples.iter().map(|s| normalize(s).0).collect();
    let batch = collate::<T>(&normalized)?;
    net.zero_grads();
    let preds = denormalize_batch(&net.forward(&batch.inputs)?, &batch.means);
    let l = loss_with(&preds, &batch.targets, net.config().loss, feature_loss)?;
    net.backward(&l.grads)?;
    adam_step(&mut net.parameters_mut(), state, lr, adam)?;
    Ok(l.value)
}

pub fn fit<T: Scalar>(net: &mut Network<T>, train: &[Sample], val: &[Sample], tcfg: &TrainConfig) -> Result<TrainOutcome> {
    fit_with(net, train, val, tcfg, FitHooks::default())
}

/// Mini-batch Adam with learning-rate halving on validation plateaus.
pub fn fit_with<T: Scalar>(
    net: &mut Network<T>,
    train: &[Sample],
    val: &[Sample],
    tcfg: &TrainConfig,
    mut hooks: FitHooks<'_, T>,
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut state = AdamState::new();
    let mut schedule = PlateauSchedule::new(tcfg.lr0, tcfg.plateau_patience, tcfg.plateau_threshold);
    let mut log = TrainLog::default();
    let mut best: Option<Checkpoint> = None;
    let mut steps = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    'epochs: for epoch in 1..=tcfg.max_epochs {
        if tcfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut seen = 0;
        let lr = schedule.lr();
        for chunk in order.chunks(tcfg.batch_size) {
            if tcfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let batch: Vec<Sample> = chunk
                .iter()
                .map(|&i| {
                    if tcfg.augment {
                        let (reverse, hflip) = (rng.gen::<bool>(), rng.gen::<bool>());
                        augment(&train[i], reverse, hflip)
                    } else {
                        train[i].clone()
                    }
                })
                .collect();
            let l = train_step(net, &batch, &mut state, lr, &tcfg.adam, hooks.feature_loss)
                .map_err(|e| e.context(format!("training step {} (epoch {epoch})", steps + 1)))?;
            loss_sum += l * batch.len() as f64;
            seen += batch.len();
            steps += 1;
        }
        if seen == 0 {
            break 'epochs;
        }

        let val_psnr = mean_psnr(net, val, tcfg.batch_size).map_err(|e| e.context(format!("validation after epoch {epoch}")))?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_psnr,
            lr,
            steps,
        };
        log.epochs.push(record);
        if let Some(cb) = hooks.on_epoch.as_mut() {
            cb(&record, net);
        }

        if !val.is_empty() && schedule.observe(val_psnr) {
            best = Some(snapshot(net, &state, epoch, val_psnr));
        }
        if tcfg.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
    }

    let final_epoch = log.epochs.last().map_or(0, |r| r.epoch);
    let recorded_best = if val.is_empty() { f64::NAN } else { schedule.best() };
    let last = snapshot(net, &state, final_epoch, recorded_best);
    Ok(TrainOutcome {
        log,
        best: best.unwrap_or_else(|| last.clone()),
        last,
    })
}

fn snapshot<T: Scalar>(net: &Network<T>, state: &AdamState, epoch: usize, best_val_psnr: f64) -> Checkpoint {
    let mut ckpt = Checkpoint::from_network(net);
    ckpt.adam = Some(state.clone());
    ckpt.epoch = epoch;
    ckpt.best_val_psnr = best_val_psnr;
    ckpt
}
