//! Generator and PatchGAN discriminator definitions.
//!
//! A network is an ordered list of [`LayerSpec`]s plus the matching named
//! parameter tensors. The forward pass walks the layer list, so the same
//! descriptor drives parameter creation, the forward pass, checkpoint naming
//! and the receptive-field report.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::image::{ImageBuffer, ImageError};
use crate::io::resize_bilinear;
use crate::tensor::{Activation, Tape, Tensor, TensorError, Var};

/// Standard deviation of the Gaussian weight initializer.
pub const INIT_STD: f32 = 0.02;
pub const NORM_EPS: f32 = 1e-5;
pub const LEAKY_SLOPE: f32 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("invalid architecture: {0}")]
    InvalidConfig(String),
    #[error("network expects {expected} parameter tensors, got {got}")]
    ParameterCount { expected: usize, got: usize },
    #[error("parameter {name}: expected shape {expected:?}, got {got:?}")]
    ParameterShape {
        name: String,
        expected: [usize; 4],
        got: [usize; 4],
    },
    #[error("input must be Nx3xSxS with S divisible by 4, got {0:?}")]
    Input([usize; 4]),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    pub base_channels: usize,
    pub num_residual_blocks: usize,
    pub image_size: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            num_residual_blocks: 2,
            image_size: 32,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.base_channels == 0 {
            return Err(NetworkError::InvalidConfig("base_channels must be at least 1".into()));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(4) {
            return Err(NetworkError::InvalidConfig(format!(
                "image_size must be a positive multiple of 4, got {}",
                self.image_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetKind {
    Generator,
    Discriminator,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    /// Transposed convolution with the given output padding.
    ConvTranspose {
        output_padding: usize,
    },
}

/// Position of a layer inside a residual block, if any.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Residual {
    None,
    /// First conv of a block; its input is the skip value.
    Open,
    /// Last conv of a block; the skip is added after its norm/activation.
    Close,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub norm: bool,
    pub activation: Option<Activation>,
    pub residual: Residual,
}

impl LayerSpec {
    fn conv(name: impl Into<String>, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Conv,
            in_ch,
            out_ch,
            kernel,
            stride,
            padding: kernel / 2,
            norm: false,
            activation: None,
            residual: Residual::None,
        }
    }

    fn up(name: impl Into<String>, in_ch: usize, out_ch: usize) -> Self {
        Self {
            kind: LayerKind::ConvTranspose { output_padding: 1 },
            ..Self::conv(name, in_ch, out_ch, 3, 2)
        }
    }

    fn norm(mut self) -> Self {
        self.norm = true;
        self
    }

    fn act(mut self, a: Activation) -> Self {
        self.activation = Some(a);
        self
    }

    fn residual(mut self, r: Residual) -> Self {
        self.residual = r;
        self
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        match self.kind {
            LayerKind::Conv => [self.out_ch, self.in_ch, self.kernel, self.kernel],
            LayerKind::ConvTranspose { .. } => [self.in_ch, self.out_ch, self.kernel, self.kernel],
        }
    }

    pub fn bias_shape(&self) -> [usize; 4] {
        [1, self.out_ch, 1, 1]
    }
}

pub fn generator_layers(cfg: &ArchConfig) -> Vec<LayerSpec> {
    let c = cfg.base_channels;
    let mut layers = vec![
        LayerSpec::conv("enc0", 3, c, 7, 1).norm().act(Activation::Relu),
        LayerSpec::conv("enc1", c, 2 * c, 3, 2).norm().act(Activation::Relu),
        LayerSpec::conv("enc2", 2 * c, 4 * c, 3, 2).norm().act(Activation::Relu),
    ];
    for b in 0..cfg.num_residual_blocks {
        layers.push(
            LayerSpec::conv(format!("res{b}.conv0"), 4 * c, 4 * c, 3, 1)
                .norm()
                .act(Activation::Relu)
                .residual(Residual::Open),
        );
        layers.push(
            LayerSpec::conv(format!("res{b}.conv1"), 4 * c, 4 * c, 3, 1)
                .norm()
                .residual(Residual::Close),
        );
    }
    layers.push(LayerSpec::up("dec0", 4 * c, 2 * c).norm().act(Activation::Relu));
    layers.push(LayerSpec::up("dec1", 2 * c, c).norm().act(Activation::Relu));
    layers.push(LayerSpec::conv("out", c, 3, 7, 1).act(Activation::Tanh));
    layers
}

pub fn discriminator_layers(cfg: &ArchConfig) -> Vec<LayerSpec> {
    let c = cfg.base_channels;
    let leaky = Activation::LeakyRelu(LEAKY_SLOPE);
    vec![
        LayerSpec::conv("conv0", 3, c, 3, 2).act(leaky),
        LayerSpec::conv("conv1", c, 2 * c, 3, 2).norm().act(leaky),
        LayerSpec::conv("conv2", 2 * c, 4 * c, 3, 2).norm().act(leaky),
        LayerSpec::conv("conv3", 4 * c, 8 * c, 3, 1).norm().act(leaky),
        LayerSpec::conv("conv4", 8 * c, 1, 3, 1),
    ]
}

/// Receptive field (in input pixels) of one output unit of a plain conv stack.
pub fn receptive_field(layers: &[LayerSpec]) -> usize {
    let (mut rf, mut jump) = (1usize, 1usize);
    for l in layers {
        rf += (l.kernel - 1) * jump;
        jump *= l.stride;
    }
    rf
}

/// Named parameter tensors of one network, in layer order (weight, bias).
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    kind: NetKind,
    arch: ArchConfig,
    layers: Vec<LayerSpec>,
    params: Vec<(String, Tensor)>,
}

/// Tape handles of a network's parameters for one forward pass.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

fn layers_for(kind: NetKind, cfg: &ArchConfig) -> Vec<LayerSpec> {
    match kind {
        NetKind::Generator => generator_layers(cfg),
        NetKind::Discriminator => discriminator_layers(cfg),
    }
}

pub fn build_generator<R: Rng + ?Sized>(cfg: ArchConfig, rng: &mut R) -> Result<NetworkParams, NetworkError> {
    NetworkParams::build(NetKind::Generator, cfg, rng)
}

pub fn build_discriminator<R: Rng + ?Sized>(cfg: ArchConfig, rng: &mut R) -> Result<NetworkParams, NetworkError> {
    NetworkParams::build(NetKind::Discriminator, cfg, rng)
}

/// Redraws every weight from N(0, 0.02²) and zeroes every bias.
pub fn init_weights<R: Rng + ?Sized>(params: &mut NetworkParams, rng: &mut R) {
    let normal = Normal::new(0.0f32, INIT_STD).expect("valid std");
    for (name, t) in &mut params.params {
        let is_bias = name.ends_with(".bias");
        for v in t.data_mut() {
            *v = if is_bias { 0.0 } else { normal.sample(rng) };
        }
        t.zero_grad();
    }
}

impl NetworkParams {
    fn build<R: Rng + ?Sized>(kind: NetKind, arch: ArchConfig, rng: &mut R) -> Result<Self, NetworkError> {
        arch.validate()?;
        let layers = layers_for(kind, &arch);
        let mut params = Vec::with_capacity(2 * layers.len());
        for l in &layers {
            params.push((
                format!("{}.weight", l.name),
                Tensor::zeros(l.weight_shape()).with_requires_grad(true),
            ));
            params.push((
                format!("{}.bias", l.name),
                Tensor::zeros(l.bias_shape()).with_requires_grad(true),
            ));
        }
        let mut net = Self {
            kind,
            arch,
            layers,
            params,
        };
        init_weights(&mut net, rng);
        Ok(net)
    }

    /// Rebuilds a network from named tensors, checking names and shapes
    /// against the descriptor for `kind` and `arch`.
    pub fn from_tensors(kind: NetKind, arch: ArchConfig, tensors: Vec<(String, Tensor)>) -> Result<Self, NetworkError> {
        arch.validate()?;
        let layers = layers_for(kind, &arch);
        if tensors.len() != 2 * layers.len() {
            return Err(NetworkError::ParameterCount {
                expected: 2 * layers.len(),
                got: tensors.len(),
            });
        }
        let mut params = Vec::with_capacity(tensors.len());
        for (l, pair) in layers.iter().zip(tensors.chunks(2)) {
            for ((name, t), (suffix, shape)) in pair
                .iter()
                .zip([("weight", l.weight_shape()), ("bias", l.bias_shape())])
            {
                let expected = format!("{}.{suffix}", l.name);
                if *name != expected || t.shape() != shape {
                    return Err(NetworkError::ParameterShape {
                        name: name.clone(),
                        expected: shape,
                        got: t.shape(),
                    });
                }
                params.push((name.clone(), t.clone().with_requires_grad(true)));
            }
        }
        Ok(Self {
            kind,
            arch,
            layers,
            params,
        })
    }

    pub fn kind(&self) -> NetKind {
        self.kind
    }

    pub fn arch(&self) -> ArchConfig {
        self.arch
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(&self.layers)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|(_, t)| t.is_finite())
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|(_, t)| t.zero_grad());
    }

    /// Records the parameters on `tape`. With `trainable == false` they are
    /// recorded as constants, which freezes the network for that pass.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|(_, t)| if trainable { tape.leaf(t) } else { tape.constant(t) })
            .collect();
        BoundParams { vars }
    }

    /// Adds the tape gradients of bound parameters into each tensor's grad slot.
    pub fn pull_grads(&mut self, tape: &Tape, bound: &BoundParams) -> Result<(), TensorError> {
        for ((_, t), v) in self.params.iter_mut().zip(&bound.vars) {
            if let Some(g) = tape.grad(*v) {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, input: Var) -> Result<Var, NetworkError> {
        let shape = tape.shape(input);
        if shape[1] != 3 || !shape[2].is_multiple_of(4) || !shape[3].is_multiple_of(4) || shape[2] == 0 || shape[3] == 0
        {
            return Err(NetworkError::Input(shape));
        }
        let mut h = input;
        let mut skip = None;
        for (i, l) in self.layers.iter().enumerate() {
            let (w, b) = (bound.vars[2 * i], bound.vars[2 * i + 1]);
            if l.residual == Residual::Open {
                skip = Some(h);
            }
            h = match l.kind {
                LayerKind::Conv => tape.conv2d(h, w, b, l.stride, l.padding)?,
                LayerKind::ConvTranspose { output_padding } => {
                    tape.conv2d_transpose(h, w, b, l.stride, l.padding, output_padding)?
                }
            };
            if l.norm {
                h = tape.instance_norm(h, NORM_EPS)?;
            }
            if let Some(a) = l.activation {
                h = tape.activation(h, a);
            }
            if l.residual == Residual::Close {
                let s = skip.take().expect("residual block opened before it closes");
                h = tape.add(s, h)?;
            }
        }
        Ok(h)
    }

    /// Forward pass on a fresh tape without gradient tracking.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor, NetworkError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(input);
        let y = self.forward(&mut tape, &bound, x)?;
        Ok(tape.to_tensor(y))
    }

    /// Runs a generator on one image. The image is resampled to the network
    /// resolution and the output is resampled back to the input dimensions.
    pub fn translate(&self, image: &ImageBuffer) -> Result<ImageBuffer, NetworkError> {
        let size = self.arch.image_size;
        let input = resize_bilinear(&image.to_rgb(), size, size)?;
        let out = ImageBuffer::from_tensor(&self.infer(&input.to_tensor())?, 0)?;
        Ok(resize_bilinear(&out, image.width(), image.height())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ArchConfig {
        ArchConfig {
            base_channels: 4,
            num_residual_blocks: 2,
            image_size: 16,
        }
    }

    #[test]
    fn generator_is_shape_preserving_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = build_generator(small(), &mut rng).unwrap();
        for s in [8, 16, 20] {
            let x = Tensor::rand_uniform([1, 3, s, s], -1.0, 1.0, &mut rng);
            let y = g.infer(&x).unwrap();
            assert_eq!(y.shape(), [1, 3, s, s]);
            assert!(y.data().iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn tensor_count_follows_layer_list() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for blocks in 0..4 {
            let cfg = ArchConfig {
                base_channels: 8,
                num_residual_blocks: blocks,
                image_size: 32,
            };
            let g = build_generator(cfg, &mut rng).unwrap();
            assert_eq!(g.len(), 2 * (6 + 2 * blocks));
        }
    }

    #[test]
    fn builds_are_deterministic() {
        let a = build_generator(small(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = build_generator(small(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let c = build_generator(small(), &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn discriminator_patch_map_and_receptive_field() {
        let cfg = ArchConfig::default();
        let d = build_discriminator(cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let x = Tensor::rand_uniform([1, 3, 32, 32], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(d.infer(&x).unwrap().shape(), [1, 1, 4, 4]);
        // 1 + 2·(1 + 2 + 4 + 8 + 8)
        assert_eq!(d.receptive_field(), 47);
    }

    #[test]
    fn zero_weights_give_zero_scores() {
        let mut d = build_discriminator(small(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for (_, t) in d.params_mut() {
            t.data_mut().fill(0.0);
        }
        let x = Tensor::rand_uniform([1, 3, 16, 16], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
        assert!(d.infer(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scaled_weights_grow_scores() {
        let mut d = build_discriminator(small(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let x = Tensor::rand_uniform([1, 3, 16, 16], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(5));
        let max_abs = |t: &Tensor| t.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let before = max_abs(&d.infer(&x).unwrap());
        for (_, t) in d.params_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= 10.0);
        }
        assert!(max_abs(&d.infer(&x).unwrap()) > before);
    }

    #[test]
    fn init_statistics() {
        let cfg = ArchConfig {
            base_channels: 16,
            num_residual_blocks: 2,
            image_size: 32,
        };
        let g = build_generator(cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let weights: Vec<f64> = g
            .params()
            .iter()
            .filter(|(n, _)| n.ends_with(".weight"))
            .flat_map(|(_, t)| t.data().iter().map(|&v| v as f64))
            .take(100_000)
            .collect();
        assert_eq!(weights.len(), 100_000);
        let n = weights.len() as f64;
        let mean = weights.iter().sum::<f64>() / n;
        let std = (weights.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 3.0 * 0.02 / n.sqrt(), "mean {mean}");
        assert!((std - 0.02).abs() < 0.02 * 0.02, "std {std}");
        for (name, t) in g.params() {
            if name.ends_with(".bias") {
                assert!(t.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bad = ArchConfig {
            image_size: 30,
            ..ArchConfig::default()
        };
        assert!(matches!(
            build_generator(bad, &mut rng),
            Err(NetworkError::InvalidConfig(_))
        ));
        let bad = ArchConfig {
            base_channels: 0,
            ..ArchConfig::default()
        };
        assert!(build_discriminator(bad, &mut rng).is_err());
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for mut net in [
            build_generator(small(), &mut rng).unwrap(),
            build_discriminator(small(), &mut rng).unwrap(),
        ] {
            let mut tape = Tape::new();
            let bound = net.bind(&mut tape, true);
            let x = tape.constant(&Tensor::rand_uniform([1, 3, 16, 16], -1.0, 1.0, &mut rng));
            let y = net.forward(&mut tape, &bound, x).unwrap();
            let sq = tape.square(y);
            let loss = tape.mean(sq);
            tape.backward(loss).unwrap();
            net.pull_grads(&tape, &bound).unwrap();
            let normed: Vec<String> = net
                .layers()
                .iter()
                .filter(|l| l.norm)
                .map(|l| format!("{}.bias", l.name))
                .collect();
            for (name, t) in net.params() {
                let g = t.grad().unwrap();
                if normed.contains(name) {
                    // instance norm cancels a per-channel offset exactly
                    assert!(g.iter().all(|v| v.abs() < 1e-5), "{name}: {g:?}");
                } else {
                    assert!(g.iter().any(|&v| v != 0.0), "{name} has zero grad");
                }
            }
        }
    }
}
