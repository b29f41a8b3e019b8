use crate::error::{Error, Result};
use crate::net::LossMode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Huber transition point on `[0, 1]`-scaled residuals.
pub const HUBER_DELTA: f64 = 1.0;

/// Loss value with its gradient with respect to each prediction.
#[derive(Debug, Clone)]
pub struct LossValue<T> {
    pub value: f64,
    pub grads: Vec<Tensor<T>>,
}

/// Extra feature-space term for [`LossMode::L1Perceptual`].
pub trait FeatureLoss<T: Scalar>: Sync {
    fn loss(&self, preds: &[Tensor<T>], targets: &[Tensor<T>]) -> Result<LossValue<T>>;
}

fn check<T: Scalar>(preds: &[Tensor<T>], targets: &[Tensor<T>]) -> Result<()> {
    if preds.len() != targets.len() {
        return Err(Error::Shape {
            op: "loss",
            axis: "frames".into(),
            expected: targets.len(),
            actual: preds.len(),
        });
    }
    for (p, t) in preds.iter().zip(targets) {
        p.expect_same_shape(t, "loss")?;
    }
    Ok(())
}

/// Per-element penalty and its derivative with respect to the residual.
fn penalty(mode: LossMode, d: f64) -> (f64, f64) {
    match mode {
        LossMode::L1 | LossMode::L1Perceptual => (d.abs(), if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 }),
        LossMode::L2 => (d * d, 2.0 * d),
        LossMode::Huber => {
            if d.abs() <= HUBER_DELTA {
                (0.5 * d * d, d)
            } else {
                (HUBER_DELTA * (d.abs() - 0.5 * HUBER_DELTA), HUBER_DELTA * d.signum())
            }
        }
    }
}

/// Sum over predicted frames of the element-mean penalty. For a batch of
/// `N` samples this equals `(1/N) sum_i sum_j mean|pred_ij - target_ij|` in
/// L1 mode. `L1Perceptual` needs a hook; use [`loss_with`].
pub fn loss<T: Scalar>(preds: &[Tensor<T>], targets: &[Tensor<T>], mode: LossMode) -> Result<LossValue<T>> {
    loss_with(preds, targets, mode, None)
}

pub fn loss_with<T: Scalar>(
    preds: &[Tensor<T>],
    targets: &[Tensor<T>],
    mode: LossMode,
    hook: Option<&dyn FeatureLoss<T>>,
) -> Result<LossValue<T>> {
    check(preds, targets)?;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(preds.len());
    for (p, t) in preds.iter().zip(targets) {
        let scale = 1.0 / p.numel() as f64;
        let mut g = Vec::with_capacity(p.numel());
        let mut sum = 0.0;
        for (&a, &b) in p.data().iter().zip(t.data()) {
            let (v, dv) = penalty(mode, a.widen() - b.widen());
            sum += v;
            g.push(T::narrow(dv * scale));
        }
        value += sum * scale;
        grads.push(Tensor::new(p.shape().to_vec(), g)?);
    }
    if mode == LossMode::L1Perceptual {
        let hook = hook.ok_or_else(|| {
            Error::Config("loss l1+perceptual needs a feature-loss hook; none was supplied".into())
        })?;
        let extra = hook.loss(preds, targets)?;
        check(&extra.grads, targets)?;
        value += extra.value;
        for (g, e) in grads.iter_mut().zip(&extra.grads) {
            g.add_assign(e)?;
        }
    }
    Ok(LossValue { value, grads })
}
