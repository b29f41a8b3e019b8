use crate::error::{Error, Result};
use crate::net::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments of one parameter, kept in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub name: String,
    pub m: Tensor<f64>,
    pub v: Tensor<f64>,
}

/// Optimizer state aligned with a parameter list.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub moments: Vec<Moments>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure<T: Scalar>(&mut self, params: &[&mut Param<T>]) -> Result<()> {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| Moments {
                    name: p.name().to_string(),
                    m: Tensor::zeros(p.value().shape()),
                    v: Tensor::zeros(p.value().shape()),
                })
                .collect();
            return Ok(());
        }
        if self.moments.len() != params.len() {
            return Err(Error::Shape {
                op: "adam_step",
                axis: "parameters".into(),
                expected: self.moments.len(),
                actual: params.len(),
            });
        }
        for (mo, p) in self.moments.iter().zip(params) {
            if mo.name != p.name() || mo.m.shape() != p.value().shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    axis: p.name().to_string(),
                    expected: mo.m.numel(),
                    actual: p.value().numel(),
                });
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam update of a single tensor. `step` is the
/// 1-based update count.
pub fn adam_update<T: Scalar>(
    value: &mut Tensor<T>,
    grad: &Tensor<T>,
    m: &mut Tensor<f64>,
    v: &mut Tensor<f64>,
    step: u64,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    value.expect_same_shape(grad, "adam_step")?;
    if m.shape() != value.shape() || v.shape() != value.shape() {
        return Err(Error::Shape {
            op: "adam_step",
            axis: "moments".into(),
            expected: value.numel(),
            actual: m.numel().min(v.numel()),
        });
    }
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    for (((p, &g), mi), vi) in value
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.data_mut())
        .zip(v.data_mut())
    {
        let g = g.widen();
        *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
        *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
        let update = lr * (*mi / c1) / ((*vi / c2).sqrt() + cfg.eps);
        *p = T::narrow(p.widen() - update);
    }
    Ok(())
}

/// Applies one Adam step to every parameter using its accumulated gradient.
pub fn adam_step<T: Scalar>(params: &mut [&mut Param<T>], state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    state.ensure(params)?;
    state.step += 1;
    for (p, mo) in params.iter_mut().zip(state.moments.iter_mut()) {
        let (value, grad) = p.pair_mut().parts_mut();
        adam_update(value, grad, &mut mo.m, &mut mo.v, state.step, lr, cfg)?;
    }
    Ok(())
}
