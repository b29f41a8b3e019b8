//! Parameterised building blocks with hand-written backward passes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{
    conv2d, conv2d_backward, conv3d, conv3d_backward, conv_transpose3d, conv_transpose3d_backward,
    global_avg_pool, relu, relu_backward, Conv2dSpec, ConvGrads, ConvSpec, GradPair, Tensor,
};

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    name: String,
    pair: GradPair<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Param {
            name: name.into(),
            pair: GradPair::new(value),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        self.pair.value()
    }

    pub fn grad(&self) -> &Tensor<T> {
        self.pair.grad()
    }

    pub fn pair(&self) -> &GradPair<T> {
        &self.pair
    }

    pub fn pair_mut(&mut self) -> &mut GradPair<T> {
        &mut self.pair
    }

    /// `uniform(-s, s)` with `s = sqrt(gain / fan_in)`, drawn from a stream
    /// keyed by `(seed, name)` so a parameter's initial value does not depend
    /// on which other layers exist.
    fn init(name: String, shape: &[usize], fan_in: usize, gain: f64, seed: u64) -> Self {
        let bound = (gain / fan_in.max(1) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &name));
        let value = Tensor::uniform(shape, -bound, bound, &mut rng);
        Param::new(name, value)
    }
}

fn stream_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, then one splitmix64 round with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in name.bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum ConvKind {
    Conv3d(ConvSpec),
    Transposed(ConvSpec),
    Conv2d(Conv2dSpec),
}

/// One convolution with weight and bias.
#[derive(Debug, Clone)]
pub(crate) struct ConvLayer<T> {
    pub kind: ConvKind,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

/// Weight gain for convolutions feeding a ReLU (He-uniform).
const RELU_GAIN: f64 = 6.0;

impl<T: Scalar> ConvLayer<T> {
    /// A convolution whose output goes through a ReLU.
    pub fn new(name: &str, kind: ConvKind, seed: u64) -> Self {
        Self::with_gain(name, kind, RELU_GAIN, seed)
    }

    /// A convolution with no following nonlinearity.
    pub fn linear(name: &str, kind: ConvKind, seed: u64) -> Self {
        Self::with_gain(name, kind, 1.0, seed)
    }

    fn with_gain(name: &str, kind: ConvKind, gain: f64, seed: u64) -> Self {
        let (shape, fan_in, out_channels): (Vec<usize>, usize, usize) = match kind {
            ConvKind::Conv3d(s) => {
                let taps: usize = s.kernel.iter().product();
                (s.weight_shape().to_vec(), s.in_channels * taps, s.out_channels)
            }
            ConvKind::Transposed(s) => {
                let taps: usize = s.kernel.iter().product();
                let strides: usize = s.stride.iter().product();
                (
                    s.transposed_weight_shape().to_vec(),
                    s.in_channels * taps / strides,
                    s.out_channels,
                )
            }
            ConvKind::Conv2d(s) => (
                s.weight_shape().to_vec(),
                s.in_channels * s.kernel[0] * s.kernel[1],
                s.out_channels,
            ),
        };
        ConvLayer {
            kind,
            weight: Param::init(format!("{name}.weight"), &shape, fan_in, gain, seed),
            bias: Param::init(format!("{name}.bias"), &[out_channels], fan_in, 1.0, seed),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (w, b) = (self.weight.value(), self.bias.value());
        match &self.kind {
            ConvKind::Conv3d(s) => conv3d(x, w, b, s),
            ConvKind::Transposed(s) => conv_transpose3d(x, w, b, s),
            ConvKind::Conv2d(s) => conv2d(x, w, b, s),
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let w = self.weight.value();
        let ConvGrads { input, weight, bias } = match &self.kind {
            ConvKind::Conv3d(s) => conv3d_backward(grad_out, x, w, s)?,
            ConvKind::Transposed(s) => conv_transpose3d_backward(grad_out, x, w, s)?,
            ConvKind::Conv2d(s) => conv2d_backward(grad_out, x, w, s)?,
        };
        self.weight.pair_mut().accumulate(&weight)?;
        self.bias.pair_mut().accumulate(&bias)?;
        Ok(input)
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Channel gate `x * sigmoid(W . pool(x) + b)` with `W` of shape `[C, C]`.
#[derive(Debug, Clone)]
pub struct GatingLayer<T> {
    pub(crate) weight: Param<T>,
    pub(crate) bias: Param<T>,
}

/// Values the gate backward pass needs from its forward pass.
#[derive(Debug, Clone)]
pub(crate) struct GateTape {
    pooled: Vec<f64>,
    gate: Vec<f64>,
}

impl<T: Scalar> GatingLayer<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        Self::from_params(Param::new("gate.W", weight), Param::new("gate.b", bias))
    }

    fn from_params(weight: Param<T>, bias: Param<T>) -> Result<Self> {
        let ws = weight.value().shape();
        if ws.len() != 2 || ws[0] != ws[1] {
            return Err(Error::InvalidTensor(format!("gate weight must be square, got {ws:?}")));
        }
        if bias.value().shape() != [ws[0]] {
            return Err(Error::Shape {
                op: "channel_gate",
                axis: "bias".into(),
                expected: ws[0],
                actual: bias.value().numel(),
            });
        }
        Ok(GatingLayer { weight, bias })
    }

    pub(crate) fn init(prefix: &str, channels: usize, seed: u64) -> Self {
        GatingLayer {
            weight: Param::init(format!("{prefix}.W"), &[channels, channels], channels, 1.0, seed),
            bias: Param::init(format!("{prefix}.b"), &[channels], channels, 1.0, seed),
        }
    }

    pub fn channels(&self) -> usize {
        self.bias.value().numel()
    }

    pub fn weight(&self) -> &Tensor<T> {
        self.weight.value()
    }

    pub fn bias(&self) -> &Tensor<T> {
        self.bias.value()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_taped(x)?.0)
    }

    /// Per-(batch, channel) gate values in `(0, 1)`, shape `[B, C]`.
    pub fn gates(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let pooled = global_avg_pool(x)?.widened();
        let gate = self.gate_values(&pooled, x.shape()[0]);
        Ok(Tensor::from_wide(vec![x.shape()[0], self.channels()], gate))
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.rank() < 3 {
            return Err(Error::Rank {
                op: "channel_gate",
                expected: 5,
                actual: x.rank(),
            });
        }
        if x.shape()[1] != self.channels() {
            return Err(Error::Shape {
                op: "channel_gate",
                axis: "channels".into(),
                expected: self.channels(),
                actual: x.shape()[1],
            });
        }
        Ok(())
    }

    fn gate_values(&self, pooled: &[f64], batch: usize) -> Vec<f64> {
        let c = self.channels();
        let w = self.weight.value().data();
        let b = self.bias.value().data();
        let mut gate = Vec::with_capacity(batch * c);
        for bi in 0..batch {
            let p = &pooled[bi * c..(bi + 1) * c];
            for o in 0..c {
                let mut z = b[o].widen();
                for (i, &pv) in p.iter().enumerate() {
                    z += w[o * c + i].widen() * pv;
                }
                gate.push(logistic(z));
            }
        }
        gate
    }

    pub(crate) fn forward_taped(&self, x: &Tensor<T>) -> Result<(Tensor<T>, GateTape)> {
        self.check(x)?;
        let batch = x.shape()[0];
        let pooled = global_avg_pool(x)?.widened();
        let gate = self.gate_values(&pooled, batch);
        let plane = x.numel() / (batch * self.channels());
        let data = x
            .data()
            .chunks(plane)
            .zip(&gate)
            .flat_map(|(chunk, &g)| chunk.iter().map(move |&v| T::narrow(v.widen() * g)))
            .collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok((out, GateTape { pooled, gate }))
    }

    pub(crate) fn backward(&mut self, x: &Tensor<T>, tape: &GateTape, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        x.expect_same_shape(grad_out, "channel_gate_backward")?;
        let c = self.channels();
        let batch = x.shape()[0];
        let plane = x.numel() / (batch * c);
        let xs = x.data();
        let gs = grad_out.data();

        let mut dz = vec![0.0; batch * c];
        for (idx, dzv) in dz.iter_mut().enumerate() {
            let span = idx * plane..(idx + 1) * plane;
            let dg: f64 = xs[span.clone()]
                .iter()
                .zip(&gs[span])
                .map(|(&a, &b)| a.widen() * b.widen())
                .sum();
            let g = tape.gate[idx];
            *dzv = dg * g * (1.0 - g);
        }

        let w: Vec<f64> = self.weight.value().widened();
        let mut dw = vec![0.0; c * c];
        let mut db = vec![0.0; c];
        let mut dpooled = vec![0.0; batch * c];
        for bi in 0..batch {
            for o in 0..c {
                let d = dz[bi * c + o];
                db[o] += d;
                for i in 0..c {
                    dw[o * c + i] += d * tape.pooled[bi * c + i];
                    dpooled[bi * c + i] += w[o * c + i] * d;
                }
            }
        }
        self.weight.pair_mut().accumulate(&Tensor::from_wide(vec![c, c], dw))?;
        self.bias.pair_mut().accumulate(&Tensor::from_wide(vec![c], db))?;

        let inv = 1.0 / plane as f64;
        let data = gs
            .chunks(plane)
            .enumerate()
            .flat_map(|(idx, chunk)| {
                let g = tape.gate[idx];
                let spread = dpooled[idx] * inv;
                chunk.iter().map(move |&v| T::narrow(v.widen() * g + spread))
            })
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Scales each channel of `f_in` by its gate value.
pub fn channel_gate<T: Scalar>(f_in: &Tensor<T>, layer: &GatingLayer<T>) -> Result<Tensor<T>> {
    layer.forward(f_in)
}

/// Gradients of [`channel_gate`]: `(d f_in, d W, d b)`.
pub fn channel_gate_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    f_in: &Tensor<T>,
    layer: &GatingLayer<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let mut scratch = GatingLayer::from_params(
        Param::new("W", layer.weight().clone()),
        Param::new("b", layer.bias().clone()),
    )?;
    let (_, tape) = scratch.forward_taped(f_in)?;
    let dx = scratch.backward(f_in, &tape, grad_out)?;
    Ok((dx, scratch.weight.grad().clone(), scratch.bias.grad().clone()))
}

/// Convolution, ReLU, then an optional channel gate.
#[derive(Debug, Clone)]
pub(crate) struct Unit<T> {
    pub conv: ConvLayer<T>,
    pub gate: Option<GatingLayer<T>>,
}

#[derive(Debug, Clone)]
pub(crate) struct UnitTape<T> {
    input: Tensor<T>,
    act: Tensor<T>,
    gate: Option<GateTape>,
}

impl<T: Scalar> UnitTape<T> {
    pub fn relu_outputs(&self) -> [&Tensor<T>; 1] {
        [&self.act]
    }
}

impl<T: Scalar> Unit<T> {
    pub fn forward(&self, x: &Tensor<T>, tape: Option<&mut Option<UnitTape<T>>>) -> Result<Tensor<T>> {
        let act = relu(&self.conv.forward(x)?);
        let (out, gate_tape) = match &self.gate {
            Some(g) => {
                let (o, t) = g.forward_taped(&act)?;
                (o, Some(t))
            }
            None => (act.clone(), None),
        };
        if let Some(slot) = tape {
            *slot = Some(UnitTape {
                input: x.clone(),
                act,
                gate: gate_tape,
            });
        }
        Ok(out)
    }

    pub fn backward(&mut self, tape: &UnitTape<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g_act = match (&mut self.gate, &tape.gate) {
            (Some(g), Some(t)) => g.backward(&tape.act, t, grad_out)?,
            _ => grad_out.clone(),
        };
        let g_pre = relu_backward(&g_act, &tape.act)?;
        self.conv.backward(&tape.input, &g_pre)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out: Vec<&Param<T>> = self.conv.params().into();
        if let Some(g) = &self.gate {
            out.extend(g.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out: Vec<&mut Param<T>> = self.conv.params_mut().into();
        if let Some(g) = &mut self.gate {
            out.extend(g.params_mut());
        }
        out
    }
}

/// Two 3D convolutions with an identity or 1x1x1-projection skip, ReLU after
/// the sum, then an optional gate.
#[derive(Debug, Clone)]
pub(crate) struct ResBlock<T> {
    pub first: ConvLayer<T>,
    pub second: ConvLayer<T>,
    pub projection: Option<ConvLayer<T>>,
    pub gate: Option<GatingLayer<T>>,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockTape<T> {
    input: Tensor<T>,
    mid: Tensor<T>,
    act: Tensor<T>,
    gate: Option<GateTape>,
}

impl<T: Scalar> BlockTape<T> {
    pub fn relu_outputs(&self) -> [&Tensor<T>; 2] {
        [&self.mid, &self.act]
    }
}

impl<T: Scalar> ResBlock<T> {
    pub fn forward(&self, x: &Tensor<T>, tape: Option<&mut Option<BlockTape<T>>>) -> Result<Tensor<T>> {
        let mid = relu(&self.first.forward(x)?);
        let residual = self.second.forward(&mid)?;
        let skip = match &self.projection {
            Some(p) => p.forward(x)?,
            None => x.clone(),
        };
        let act = relu(&residual.add(&skip)?);
        let (out, gate_tape) = match &self.gate {
            Some(g) => {
                let (o, t) = g.forward_taped(&act)?;
                (o, Some(t))
            }
            None => (act.clone(), None),
        };
        if let Some(slot) = tape {
            *slot = Some(BlockTape {
                input: x.clone(),
                mid,
                act,
                gate: gate_tape,
            });
        }
        Ok(out)
    }

    pub fn backward(&mut self, tape: &BlockTape<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g_act = match (&mut self.gate, &tape.gate) {
            (Some(g), Some(t)) => g.backward(&tape.act, t, grad_out)?,
            _ => grad_out.clone(),
        };
        let g_sum = relu_backward(&g_act, &tape.act)?;
        let g_mid = self.second.backward(&tape.mid, &g_sum)?;
        let g_pre = relu_backward(&g_mid, &tape.mid)?;
        let mut g_in = self.first.backward(&tape.input, &g_pre)?;
        match &mut self.projection {
            Some(p) => g_in.add_assign(&p.backward(&tape.input, &g_sum)?)?,
            None => g_in.add_assign(&g_sum)?,
        }
        Ok(g_in)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out: Vec<&Param<T>> = self.first.params().into();
        out.extend(self.second.params());
        if let Some(p) = &self.projection {
            out.extend(p.params());
        }
        if let Some(g) = &self.gate {
            out.extend(g.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out: Vec<&mut Param<T>> = self.first.params_mut().into();
        out.extend(self.second.params_mut());
        if let Some(p) = &mut self.projection {
            out.extend(p.params_mut());
        }
        if let Some(g) = &mut self.gate {
            out.extend(g.params_mut());
        }
        out
    }
}
