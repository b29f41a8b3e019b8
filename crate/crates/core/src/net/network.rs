use std::sync::atomic::{AtomicUsize, Ordering};

use super::config::{FlavrConfig, FusionMode};
use super::layers::{BlockTape, ConvKind, ConvLayer, GatingLayer, Param, ResBlock, Unit, UnitTape};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{concat, relu, relu_backward, split, Conv2dSpec, ConvSpec, Tensor};

const BLOCK_NAMES: [&str; 5] = ["stem", "conv2", "conv3", "conv4", "conv5"];

/// Encoder levels whose outputs are fused into the decoder (stem, conv2, conv3).
const SKIP_LEVELS: usize = 3;

/// One decoder step: a (transposed) 3D conv unit, then optional fusion with
/// the encoder output at `skip`.
#[derive(Debug, Clone)]
struct Stage<T> {
    unit: Unit<T>,
    skip: Option<usize>,
}

#[derive(Debug, Clone)]
struct Decoder<T> {
    stages: Vec<Stage<T>>,
    post: Unit<T>,
    fusion: ConvLayer<T>,
    prediction: ConvLayer<T>,
}

#[derive(Debug, Clone)]
struct Tape<T> {
    stem: Option<UnitTape<T>>,
    blocks: Vec<Option<BlockTape<T>>>,
    encoded: Tensor<T>,
    stages: Vec<Option<UnitTape<T>>>,
    post: Option<UnitTape<T>>,
    head_input: Tensor<T>,
    head_act: Tensor<T>,
    decoder_shape: Vec<usize>,
    output_shape: Vec<usize>,
    feature_shapes: Vec<(String, Vec<usize>)>,
}

/// The interpolation network: gated 3D U-Net encoder/decoder followed by a
/// temporal-fusion 2D conv and the prediction conv.
///
/// `forward` retains intermediates for `backward`; `infer` does not.
#[derive(Debug)]
pub struct Network<T> {
    config: FlavrConfig,
    stem: Unit<T>,
    blocks: Vec<ResBlock<T>>,
    decoder: Option<Decoder<T>>,
    tape: Option<Tape<T>>,
    forward_count: AtomicUsize,
}

impl<T: Scalar> Clone for Network<T> {
    fn clone(&self) -> Self {
        Network {
            config: self.config.clone(),
            stem: self.stem.clone(),
            blocks: self.blocks.clone(),
            decoder: self.decoder.clone(),
            tape: self.tape.clone(),
            forward_count: AtomicUsize::new(self.forward_count()),
        }
    }
}

fn gate<T: Scalar>(config: &FlavrConfig, prefix: &str, channels: usize, seed: u64) -> Option<GatingLayer<T>> {
    config.gating.then(|| GatingLayer::init(prefix, channels, seed))
}

impl<T: Scalar> Network<T> {
    /// Builds a network with parameters drawn deterministically from `seed`.
    pub fn build(config: &FlavrConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let w = config.encoder_widths;
        let stride3 = |block: usize| {
            let s = config.spatial_stride_of(block);
            [config.temporal_stride[block], s, s]
        };

        let stem_spec = ConvSpec {
            in_channels: 3,
            out_channels: w[0],
            kernel: config.stem_kernel,
            stride: stride3(0),
            padding: config.stem_kernel.map(|k| k / 2),
        };
        let stem = Unit {
            conv: ConvLayer::new("encoder.stem", ConvKind::Conv3d(stem_spec), seed),
            gate: gate(config, "gate.enc.stem", w[0], seed),
        };

        let mut blocks = Vec::with_capacity(4);
        for block in 1..5 {
            let name = format!("encoder.{}", BLOCK_NAMES[block]);
            let stride = stride3(block);
            let first = ConvSpec {
                in_channels: w[block - 1],
                out_channels: w[block],
                kernel: config.block_kernel,
                stride,
                padding: config.block_kernel.map(|k| k / 2),
            };
            let second = ConvSpec::same(w[block], w[block], config.block_kernel);
            let projection = (stride != [1, 1, 1] || w[block - 1] != w[block]).then(|| {
                let spec = ConvSpec {
                    in_channels: w[block - 1],
                    out_channels: w[block],
                    kernel: [1, 1, 1],
                    stride,
                    padding: [0, 0, 0],
                };
                ConvLayer::new(&format!("{name}.proj"), ConvKind::Conv3d(spec), seed)
            });
            blocks.push(ResBlock {
                first: ConvLayer::new(&format!("{name}.0"), ConvKind::Conv3d(first), seed),
                second: ConvLayer::new(&format!("{name}.1"), ConvKind::Conv3d(second), seed),
                projection,
                gate: gate(config, &format!("gate.enc.{}", BLOCK_NAMES[block]), w[block], seed),
            });
        }

        // The decoder mirrors the encoder block by block: strided blocks are
        // undone by transposed convs, unstrided ones get a plain 3D conv.
        let growth = config.fusion.growth();
        let mut stages = Vec::new();
        let mut channels = w[4];
        let (mut ups, mut convs) = (0, 0);
        for block in (0..5).rev() {
            let target = if block == 0 { w[0] } else { w[block - 1] };
            let (name, kind) = if config.is_strided(block) {
                ups += 1;
                let stride = stride3(block);
                let spec = ConvSpec {
                    in_channels: channels,
                    out_channels: target,
                    kernel: stride.map(|s| if s == 2 { 4 } else { 3 }),
                    stride,
                    padding: [1, 1, 1],
                };
                (format!("up{ups}"), ConvKind::Transposed(spec))
            } else {
                convs += 1;
                let spec = ConvSpec::same(channels, target, config.block_kernel);
                (format!("conv{convs}"), ConvKind::Conv3d(spec))
            };
            let skip = (block > 0 && block - 1 < SKIP_LEVELS && config.fusion != FusionMode::None)
                .then(|| block - 1);
            stages.push(Stage {
                unit: Unit {
                    conv: ConvLayer::new(&format!("decoder.{name}"), kind, seed),
                    gate: gate(config, &format!("gate.dec.{name}"), target, seed),
                },
                skip,
            });
            channels = if skip.is_some() { target * growth } else { target };
        }
        let post = Unit {
            conv: ConvLayer::new(
                "decoder.post",
                ConvKind::Conv3d(ConvSpec::same(channels, w[0], config.block_kernel)),
                seed,
            ),
            gate: gate(config, "gate.dec.post", w[0], seed),
        };
        let frames = config.input_frames();
        let fusion = ConvLayer::new(
            "head.fusion",
            ConvKind::Conv2d(Conv2dSpec::same(
                w[0] * frames,
                config.fusion_width,
                [config.fusion_conv_kernel; 2],
            )),
            seed,
        );
        let prediction = ConvLayer::linear(
            "head.pred",
            ConvKind::Conv2d(Conv2dSpec::same(
                config.fusion_width,
                config.prediction_channels(),
                [config.prediction_kernel; 2],
            )),
            seed,
        );

        Ok(Network {
            config: config.clone(),
            stem,
            blocks,
            decoder: Some(Decoder {
                stages,
                post,
                fusion,
                prediction,
            }),
            tape: None,
            forward_count: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &FlavrConfig {
        &self.config
    }

    pub fn is_encoder_only(&self) -> bool {
        self.decoder.is_none()
    }

    /// Number of forward passes (retaining or not) run so far.
    pub fn forward_count(&self) -> usize {
        self.forward_count.load(Ordering::Relaxed)
    }

    /// A network holding copies of the stem and conv2..conv5 parameters; its
    /// [`encode`](Self::encode) yields the conv5 feature map.
    pub fn export_encoder(&self) -> Network<T> {
        Network {
            config: self.config.clone(),
            stem: self.stem.clone(),
            blocks: self.blocks.clone(),
            decoder: None,
            tape: None,
            forward_count: AtomicUsize::new(0),
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        input.expect_rank(5, "forward")?;
        let s = input.shape();
        if s[1] != 3 {
            return Err(Error::Shape {
                op: "forward",
                axis: "channels".into(),
                expected: 3,
                actual: s[1],
            });
        }
        self.config.check_input(s[2], s[3], s[4])
    }

    fn run_encoder(
        &self,
        input: &Tensor<T>,
        mut tape: Option<&mut Tape<T>>,
    ) -> Result<Vec<Tensor<T>>> {
        self.check_input(input)?;
        let mut levels = Vec::with_capacity(5);
        levels.push(self.stem.forward(input, tape.as_deref_mut().map(|t| &mut t.stem))?);
        for (i, block) in self.blocks.iter().enumerate() {
            let slot = tape.as_deref_mut().map(|t| &mut t.blocks[i]);
            let out = block.forward(&levels[i], slot)?;
            levels.push(out);
        }
        Ok(levels)
    }

    fn run(&self, input: &Tensor<T>, mut tape: Option<&mut Tape<T>>) -> Result<Vec<Tensor<T>>> {
        let decoder = self.decoder.as_ref().ok_or(Error::EncoderOnly)?;
        self.forward_count.fetch_add(1, Ordering::Relaxed);
        let levels = self.run_encoder(input, tape.as_deref_mut())?;

        let mut shapes: Vec<(String, Vec<usize>)> = BLOCK_NAMES
            .iter()
            .zip(&levels)
            .map(|(n, l)| (format!("encoder.{n}"), l.shape().to_vec()))
            .collect();
        let mut x = levels[4].clone();
        for (i, stage) in decoder.stages.iter().enumerate() {
            let slot = tape.as_deref_mut().map(|t| &mut t.stages[i]);
            let up = stage.unit.forward(&x, slot)?;
            x = match stage.skip {
                Some(level) => fuse(self.config.fusion, up, &levels[level])?,
                None => up,
            };
            shapes.push((unit_name(&stage.unit), x.shape().to_vec()));
        }
        let post = decoder.post.forward(&x, tape.as_deref_mut().map(|t| &mut t.post))?;
        shapes.push((unit_name(&decoder.post), post.shape().to_vec()));

        // Time folds into channels: [B, C, T, H, W] -> [B, C*T, H, W].
        let s = post.shape().to_vec();
        let head_input = post.into_shape(&[s[0], s[1] * s[2], s[3], s[4]])?;
        let head_act = relu(&decoder.fusion.forward(&head_input)?);
        let out = decoder.prediction.forward(&head_act)?;
        let frames = split(&out, 1, &vec![3; self.config.output_frames()])?;

        if let Some(t) = tape {
            t.encoded = levels[4].clone();
            t.decoder_shape = s;
            t.output_shape = out.shape().to_vec();
            t.head_input = head_input;
            t.head_act = head_act;
            t.feature_shapes = shapes;
        }
        Ok(frames)
    }

    fn empty_tape(&self) -> Tape<T> {
        let stages = self.decoder.as_ref().map_or(0, |d| d.stages.len());
        let placeholder = Tensor::zeros(&[1]);
        Tape {
            stem: None,
            blocks: vec![None; 4],
            encoded: placeholder.clone(),
            stages: vec![None; stages],
            post: None,
            head_input: placeholder.clone(),
            head_act: placeholder,
            decoder_shape: Vec::new(),
            output_shape: Vec::new(),
            feature_shapes: Vec::new(),
        }
    }

    /// Predicts the `k - 1` frames `[B, 3, H, W]` for input `[B, 3, 2C, H, W]`
    /// and retains intermediates for [`backward`](Self::backward).
    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.tape = None;
        let mut tape = self.empty_tape();
        let frames = self.run(input, Some(&mut tape))?;
        self.tape = Some(tape);
        Ok(frames)
    }

    /// Same as [`forward`](Self::forward) without retaining anything.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.run(input, None)
    }

    /// The conv5 feature map `[B, C5, T', H/8, W/8]`.
    pub fn encode(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run_encoder(input, None)?.pop().expect("five levels"))
    }

    /// conv5 activation retained by the last [`forward`](Self::forward).
    pub fn conv5_activation(&self) -> Option<&Tensor<T>> {
        self.tape.as_ref().map(|t| &t.encoded)
    }

    /// Accumulates parameter gradients for `grad_frames` (one per predicted
    /// frame) and returns the gradient with respect to the network input.
    pub fn backward(&mut self, grad_frames: &[Tensor<T>]) -> Result<Tensor<T>> {
        let tape = self.tape.as_ref().ok_or(Error::BackwardWithoutForward)?;
        let decoder = self.decoder.as_mut().ok_or(Error::EncoderOnly)?;
        if grad_frames.len() != self.config.output_frames() {
            return Err(Error::Shape {
                op: "backward",
                axis: "frames".into(),
                expected: self.config.output_frames(),
                actual: grad_frames.len(),
            });
        }
        let refs: Vec<&Tensor<T>> = grad_frames.iter().collect();
        let g_out = concat(&refs, 1)?;
        if g_out.shape() != tape.output_shape.as_slice() {
            return Err(Error::Shape {
                op: "backward",
                axis: "grad".into(),
                expected: tape.output_shape.iter().product(),
                actual: g_out.numel(),
            });
        }
        let g_act = decoder.prediction.backward(&tape.head_act, &g_out)?;
        let g_pre = relu_backward(&g_act, &tape.head_act)?;
        let g_head = decoder.fusion.backward(&tape.head_input, &g_pre)?;
        let mut g = g_head.into_shape(&tape.decoder_shape)?;
        g = decoder.post.backward(tape.post.as_ref().expect("taped"), &g)?;

        let mut level_grads: Vec<Option<Tensor<T>>> = vec![None; 5];
        for (i, stage) in decoder.stages.iter_mut().enumerate().rev() {
            if let Some(level) = stage.skip {
                let (g_dec, g_enc) = unfuse(self.config.fusion, g)?;
                accumulate(&mut level_grads[level], g_enc)?;
                g = g_dec;
            }
            g = stage.unit.backward(tape.stages[i].as_ref().expect("taped"), &g)?;
        }
        accumulate(&mut level_grads[4], g)?;

        for level in (1..5).rev() {
            let g_level = level_grads[level].take().expect("every level receives a gradient");
            let block_tape = tape.blocks[level - 1].as_ref().expect("taped");
            let g_in = self.blocks[level - 1].backward(block_tape, &g_level)?;
            accumulate(&mut level_grads[level - 1], g_in)?;
        }
        let g_stem = level_grads[0].take().expect("stem gradient");
        self.stem.backward(tape.stem.as_ref().expect("taped"), &g_stem)
    }

    pub fn zero_grads(&mut self) {
        for p in self.parameters_mut() {
            p.pair_mut().reset();
        }
    }

    /// Every parameter in a fixed build order.
    pub fn parameters(&self) -> Vec<&Param<T>> {
        let mut out = self.stem.params();
        for b in &self.blocks {
            out.extend(b.params());
        }
        if let Some(d) = &self.decoder {
            for s in &d.stages {
                out.extend(s.unit.params());
            }
            out.extend(d.post.params());
            out.extend(d.fusion.params());
            out.extend(d.prediction.params());
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = self.stem.params_mut();
        for b in &mut self.blocks {
            out.extend(b.params_mut());
        }
        if let Some(d) = &mut self.decoder {
            for s in &mut d.stages {
                out.extend(s.unit.params_mut());
            }
            out.extend(d.post.params_mut());
            out.extend(d.fusion.params_mut());
            out.extend(d.prediction.params_mut());
        }
        out
    }

    pub fn parameter(&self, name: &str) -> Option<&Param<T>> {
        self.parameters().into_iter().find(|p| p.name() == name)
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.parameters_mut().into_iter().find(|p| p.name() == name)
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.value().numel()).sum()
    }

    /// Encoder levels each decoder stage reads, in stage order. Used to
    /// inspect the skip wiring.
    pub fn decoder_skips(&self) -> Vec<Option<usize>> {
        self.decoder
            .as_ref()
            .map(|d| d.stages.iter().map(|s| s.skip).collect())
            .unwrap_or_default()
    }

    /// Shapes of every encoder level and decoder stage output (after fusion)
    /// in the last retained forward pass, keyed by layer name.
    pub fn feature_shapes(&self) -> Option<&[(String, Vec<usize>)]> {
        self.tape.as_ref().map(|t| t.feature_shapes.as_slice())
    }

    /// Fingerprint of which ReLU units were active in the last retained
    /// forward pass.
    pub fn activation_pattern(&self) -> Option<u64> {
        let tape = self.tape.as_ref()?;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |t: &Tensor<T>| {
            for v in t.data() {
                h ^= (*v > T::zero()) as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        tape.stem.iter().flat_map(|u| u.relu_outputs()).for_each(&mut feed);
        tape.blocks.iter().flatten().flat_map(|b| b.relu_outputs()).for_each(&mut feed);
        tape.stages.iter().flatten().flat_map(|u| u.relu_outputs()).for_each(&mut feed);
        tape.post.iter().flat_map(|u| u.relu_outputs()).for_each(&mut feed);
        feed(&tape.head_act);
        Some(h)
    }
}

fn unit_name<T: Scalar>(unit: &Unit<T>) -> String {
    unit.conv.weight.name().trim_end_matches(".weight").to_string()
}

fn fuse<T: Scalar>(mode: FusionMode, decoded: Tensor<T>, encoded: &Tensor<T>) -> Result<Tensor<T>> {
    match mode {
        FusionMode::None => Ok(decoded),
        FusionMode::Add => decoded.add(encoded),
        FusionMode::Concat => concat(&[&decoded, encoded], 1),
    }
}

/// Splits the gradient of a fused tensor into (decoder part, encoder part).
fn unfuse<T: Scalar>(mode: FusionMode, grad: Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    match mode {
        FusionMode::None => unreachable!("no skip stages without fusion"),
        FusionMode::Add => Ok((grad.clone(), grad)),
        FusionMode::Concat => {
            let half = grad.shape()[1] / 2;
            let mut parts = split(&grad, 1, &[half, half])?;
            let enc = parts.pop().expect("two halves");
            let dec = parts.pop().expect("two halves");
            Ok((dec, enc))
        }
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, grad: Tensor<T>) -> Result<()> {
    match slot {
        Some(existing) => existing.add_assign(&grad),
        None => {
            *slot = Some(grad);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn input(cfg: &FlavrConfig, hw: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(&[1, 3, cfg.input_frames(), hw, hw], -0.5, 0.5, &mut rng)
    }

    #[test]
    fn names_follow_convention() {
        let net = Network::<f32>::build(&FlavrConfig::tiny(), 1).unwrap();
        let names: Vec<&str> = net.parameters().iter().map(|p| p.name()).collect();
        for expected in [
            "encoder.stem.weight",
            "encoder.conv2.0.weight",
            "encoder.conv3.0.weight",
            "encoder.conv3.proj.weight",
            "decoder.up1.weight",
            "decoder.up3.bias",
            "decoder.conv1.weight",
            "decoder.post.weight",
            "gate.enc.conv2.W",
            "gate.dec.up2.b",
            "head.fusion.weight",
            "head.pred.weight",
        ] {
            assert!(names.contains(&expected), "missing {expected}");
        }
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert!(!names.contains(&"encoder.conv2.proj.weight"));
    }

    #[test]
    fn forward_shape_and_zero_network() {
        let cfg = FlavrConfig::tiny().with_k(4);
        let mut net = Network::<f64>::build(&cfg, 3).unwrap();
        let x = input(&cfg, 16, 0);
        let out = net.forward(&x).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|f| f.shape() == [1, 3, 16, 16]));
        for p in net.parameters_mut() {
            p.pair_mut().value_mut().fill(0.0);
        }
        let out = net.infer(&x).unwrap();
        assert!(out.iter().all(|f| f.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_requires_forward() {
        let mut net = Network::<f64>::build(&FlavrConfig::tiny(), 3).unwrap();
        let g = vec![Tensor::zeros(&[1, 3, 16, 16])];
        assert!(matches!(net.backward(&g), Err(Error::BackwardWithoutForward)));
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = Network::<f64>::build(&FlavrConfig::tiny(), 3).unwrap();
        let x = Tensor::zeros(&[1, 3, 4, 12, 16]);
        assert!(matches!(net.infer(&x), Err(Error::NotDivisible { axis: "height", .. })));
        let x = Tensor::zeros(&[1, 3, 6, 16, 16]);
        assert!(matches!(net.infer(&x), Err(Error::Shape { .. })));
        let x = Tensor::zeros(&[1, 1, 4, 16, 16]);
        assert!(matches!(net.infer(&x), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_grad_gives_zero_parameter_grads() {
        let cfg = FlavrConfig::tiny();
        let mut net = Network::<f64>::build(&cfg, 5).unwrap();
        net.forward(&input(&cfg, 16, 1)).unwrap();
        net.backward(&[Tensor::zeros(&[1, 3, 16, 16])]).unwrap();
        assert!(net.parameters().iter().all(|p| p.grad().data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_is_additive() {
        let cfg = FlavrConfig::tiny();
        let mut net = Network::<f64>::build(&cfg, 5).unwrap();
        net.forward(&input(&cfg, 16, 1)).unwrap();
        let g = vec![Tensor::from_fn(&[1, 3, 16, 16], |i| (i as f64 * 0.1).sin())];
        net.backward(&g).unwrap();
        let once: Vec<Tensor<f64>> = net.parameters().iter().map(|p| p.grad().clone()).collect();
        net.backward(&g).unwrap();
        for (p, o) in net.parameters().iter().zip(&once) {
            assert_eq!(p.grad(), &o.scale(2.0), "{}", p.name());
        }
        net.zero_grads();
        assert!(net.parameters().iter().all(|p| p.grad().sum() == 0.0));
    }

    #[test]
    fn fusion_none_has_no_skips() {
        let mut cfg = FlavrConfig::tiny();
        cfg.fusion = FusionMode::None;
        let net = Network::<f32>::build(&cfg, 1).unwrap();
        assert!(net.decoder_skips().iter().all(Option::is_none));
        let concat = Network::<f32>::build(&FlavrConfig::tiny(), 1).unwrap();
        assert_eq!(concat.decoder_skips(), vec![None, Some(2), Some(1), Some(0), None]);
    }
}
