//! The encoder, decoder and discriminator networks.
//!
//! All three are stacks of [`Stage`]s: a (transposed) convolution followed by
//! optional batch normalization, an activation and optional dropout. The
//! fully connected projections are valid convolutions whose kernel covers the
//! whole 5x5 map. Each forward pass returns a [`ForwardPass`] holding what the
//! backward pass needs, so the same network can be run several times per
//! optimization step (the encoder sees both `x` and its reconstruction) and
//! the gradients of every run accumulate into one [`Gradients`] buffer.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::activation::dropout;
use crate::nn::{Activation, BatchNorm2d, Conv2d, ConvTranspose2d, NormCache, NormStats};
use crate::tensor::{Shape, Tensor};

pub const IMAGE_SIZE: usize = 128;
pub const IMAGE_CHANNELS: usize = 3;
pub const LATENT_DIM: usize = 512;
pub const DEFAULT_DROPOUT: f32 = 0.3;

/// Per-sample shape of the encoder's four intermediate activations.
pub const FEATURE_SHAPES: [(usize, usize, usize); 4] =
    [(32, 62, 62), (64, 29, 29), (128, 14, 14), (256, 5, 5)];

pub fn image_shape(n: usize) -> Shape {
    Shape::new(n, IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE)
}

pub fn latent_shape(n: usize) -> Shape {
    Shape::new(n, LATENT_DIM, 1, 1)
}

/// Whether a forward pass trains or evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batch statistics (per-sample statistics for a batch of one), running
    /// estimates updated, dropout active.
    Train,
    /// Frozen running statistics, no dropout.
    Eval,
    /// Per-sample statistics, no dropout, nothing mutated.
    Instance,
}

impl Mode {
    fn norm_stats(self) -> NormStats {
        match self {
            Mode::Train => NormStats::Batch,
            Mode::Eval => NormStats::Running,
            Mode::Instance => NormStats::Instance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    StridedConv,
    TransposedConv,
    FlattenProjection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
    pub filters: usize,
    pub batch_norm: bool,
    pub activation: Activation,
    pub dropout_rate: f32,
}

impl LayerSpec {
    const fn conv(kernel: usize, padding: usize, filters: usize, batch_norm: bool, dropout_rate: f32) -> Self {
        LayerSpec {
            kind: LayerKind::StridedConv,
            kernel,
            stride: 2,
            padding,
            output_padding: 0,
            filters,
            batch_norm,
            activation: Activation::LeakyRelu,
            dropout_rate,
        }
    }

    const fn projection(filters: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::FlattenProjection,
            kernel: 5,
            stride: 1,
            padding: 0,
            output_padding: 0,
            filters,
            batch_norm: false,
            activation,
            dropout_rate: 0.0,
        }
    }

    const fn transposed(
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        filters: usize,
        batch_norm: bool,
        activation: Activation,
    ) -> Self {
        LayerSpec {
            kind: LayerKind::TransposedConv,
            kernel,
            stride,
            padding,
            output_padding,
            filters,
            batch_norm,
            activation,
            dropout_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Encoder,
    Decoder,
    Discriminator,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Encoder => "encoder",
            Role::Decoder => "decoder",
            Role::Discriminator => "discriminator",
        }
    }
}

/// Knobs on the fixed architecture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    /// Dropout on the discriminator's third and fourth convolutions.
    pub dropout_rate: f32,
    /// Batch normalization before the decoder's output `tanh`.
    pub decoder_output_norm: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            dropout_rate: DEFAULT_DROPOUT,
            decoder_output_norm: true,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Layer table for one network.
pub fn layer_specs(role: Role, arch: &ArchConfig) -> Vec<LayerSpec> {
    use Activation::*;
    match role {
        Role::Encoder => vec![
            LayerSpec::conv(5, 0, 32, true, 0.0),
            LayerSpec::conv(5, 0, 64, true, 0.0),
            LayerSpec::conv(4, 1, 128, true, 0.0),
            LayerSpec::conv(5, 0, 256, true, 0.0),
            LayerSpec::projection(LATENT_DIM, None),
        ],
        Role::Decoder => vec![
            LayerSpec::transposed(5, 1, 0, 0, 256, true, Relu),
            LayerSpec::transposed(5, 2, 0, 1, 128, true, Relu),
            LayerSpec::transposed(4, 2, 1, 1, 64, true, Relu),
            LayerSpec::transposed(5, 2, 0, 1, 32, true, Relu),
            LayerSpec::transposed(5, 2, 0, 1, IMAGE_CHANNELS, arch.decoder_output_norm, Tanh),
        ],
        Role::Discriminator => vec![
            LayerSpec::conv(5, 0, 32, true, 0.0),
            LayerSpec::conv(5, 0, 64, true, 0.0),
            LayerSpec::conv(4, 1, 128, false, arch.dropout_rate),
            LayerSpec::conv(5, 0, 256, false, arch.dropout_rate),
            LayerSpec::projection(1, Sigmoid),
        ],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerOp {
    Conv(Conv2d),
    Transposed(ConvTranspose2d),
}

impl LayerOp {
    fn weight(&self) -> &[f32] {
        match self {
            LayerOp::Conv(c) => &c.weight,
            LayerOp::Transposed(c) => &c.weight,
        }
    }

    fn bias(&self) -> Option<&[f32]> {
        match self {
            LayerOp::Conv(c) => c.bias.as_deref(),
            LayerOp::Transposed(c) => c.bias.as_deref(),
        }
    }

    fn weight_dims(&self) -> Vec<usize> {
        match self {
            LayerOp::Conv(c) => vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
            LayerOp::Transposed(c) => vec![c.in_channels, c.out_channels, c.kernel, c.kernel],
        }
    }

    fn weight_bias_mut(&mut self) -> (&mut Vec<f32>, Option<&mut Vec<f32>>) {
        match self {
            LayerOp::Conv(c) => (&mut c.weight, c.bias.as_mut()),
            LayerOp::Transposed(c) => (&mut c.weight, c.bias.as_mut()),
        }
    }

    fn out_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            LayerOp::Conv(c) => c.out_shape(input),
            LayerOp::Transposed(c) => c.out_shape(input),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub spec: LayerSpec,
    pub op: LayerOp,
    pub norm: Option<BatchNorm2d>,
}

/// One network: its layer table and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    role: Role,
    input: Shape,
    stages: Vec<Stage>,
}

/// Everything recorded by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub output: Tensor,
    /// Post-activation output of every stage (before dropout).
    pub activations: Vec<Tensor>,
    inputs: Vec<Tensor>,
    norms: Vec<Option<NormCache>>,
    masks: Vec<Option<Vec<f32>>>,
}

/// Parameter gradients, laid out like [`Network::params_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub slots: Vec<Vec<f32>>,
}

impl Gradients {
    pub fn zero(&mut self) {
        self.slots.iter_mut().for_each(|s| s.fill(0.0));
    }

    pub fn l2_norm(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .map(|&v| v as f64 * v as f64)
            .sum::<f64>()
            .sqrt()
    }
}

/// A named parameter or statistic tensor, as stored in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Network {
    /// Builds `role`'s network with Xavier-uniform weights drawn from `rng`.
    pub fn build<R: Rng>(role: Role, arch: &ArchConfig, rng: &mut R) -> Self {
        let input = match role {
            Role::Decoder => latent_shape(1),
            _ => image_shape(1),
        };
        let mut channels = input.c;
        let stages = layer_specs(role, arch)
            .into_iter()
            .map(|spec| {
                let bias = !spec.batch_norm;
                let op = match spec.kind {
                    LayerKind::TransposedConv => LayerOp::Transposed(ConvTranspose2d::new(
                        rng,
                        channels,
                        spec.filters,
                        spec.kernel,
                        spec.stride,
                        spec.padding,
                        spec.output_padding,
                        bias,
                    )),
                    _ => LayerOp::Conv(Conv2d::new(
                        rng,
                        channels,
                        spec.filters,
                        spec.kernel,
                        spec.stride,
                        spec.padding,
                        bias,
                    )),
                };
                channels = spec.filters;
                Stage {
                    spec,
                    op,
                    norm: spec.batch_norm.then(|| BatchNorm2d::new(spec.filters)),
                }
            })
            .collect();
        Network { role, input, stages }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        self.stages.iter().map(|s| s.spec).collect()
    }

    /// Per-sample input shape.
    pub fn input_shape(&self) -> Shape {
        self.input
    }

    /// Output shape of every stage for a batch of `n`.
    pub fn stage_shapes(&self, n: usize) -> Result<Vec<Shape>> {
        let mut shape = self.input.with_batch(n);
        self.stages
            .iter()
            .map(|s| {
                shape = s.op.out_shape(shape)?;
                Ok(shape)
            })
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.n == 0 || s.with_batch(1) != self.input {
            return Err(Error::shape(
                match self.role {
                    Role::Encoder => "encoder input",
                    Role::Decoder => "decoder input",
                    Role::Discriminator => "discriminator input",
                },
                format!("(N, {}, {}, {})", self.input.c, self.input.h, self.input.w),
                s,
            ));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor, mode: Mode, mut rng: Option<&mut dyn RngCore>) -> Result<ForwardPass> {
        self.check_input(x)?;
        let n = self.stages.len();
        let mut pass = ForwardPass {
            output: Tensor::zeros(Shape::new(0, 0, 0, 0)),
            activations: Vec::with_capacity(n),
            inputs: Vec::with_capacity(n),
            norms: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
        };
        let mut cur = x.clone();
        for stage in &self.stages {
            let pre = match &stage.op {
                LayerOp::Conv(c) => c.forward(&cur)?,
                LayerOp::Transposed(c) => c.forward(&cur)?,
            };
            let (normed, cache) = match &stage.norm {
                Some(bn) => {
                    let (y, cache) = bn.forward(&pre, mode.norm_stats());
                    (y, Some(cache))
                }
                None => (pre, None),
            };
            let act = stage.spec.activation.apply(&normed);
            let (next, mask) = match (&mut rng, mode) {
                (Some(r), Mode::Train) if stage.spec.dropout_rate > 0.0 => {
                    let (y, m) = dropout(&act, stage.spec.dropout_rate, r);
                    (y, Some(m))
                }
                _ => (act.clone(), None),
            };
            pass.inputs.push(std::mem::replace(&mut cur, next));
            pass.norms.push(cache);
            pass.masks.push(mask);
            pass.activations.push(act);
        }
        pass.output = cur;
        Ok(pass)
    }

    /// Forward pass. In [`Mode::Train`] the batch-norm running estimates are
    /// updated and dropout masks are drawn from `rng`.
    pub fn forward<R: Rng>(&mut self, x: &Tensor, mode: Mode, rng: &mut R) -> Result<ForwardPass> {
        let pass = self.run(x, mode, Some(rng))?;
        if mode == Mode::Train {
            for (stage, cache) in self.stages.iter_mut().zip(&pass.norms) {
                if let (Some(bn), Some(cache)) = (stage.norm.as_mut(), cache) {
                    bn.update_running(cache);
                }
            }
        }
        Ok(pass)
    }

    /// Read-only forward pass for [`Mode::Eval`] or [`Mode::Instance`].
    pub fn infer(&self, x: &Tensor, mode: Mode) -> Result<ForwardPass> {
        if mode == Mode::Train {
            return Err(Error::Config(
                "Network::infer cannot run in train mode; use Network::forward".into(),
            ));
        }
        self.run(x, mode, None)
    }

    pub fn zero_gradients(&self) -> Gradients {
        let mut slots = Vec::new();
        for s in &self.stages {
            slots.push(vec![0.0; s.op.weight().len()]);
            if let Some(b) = s.op.bias() {
                slots.push(vec![0.0; b.len()]);
            }
            if let Some(bn) = &s.norm {
                slots.push(vec![0.0; bn.channels()]);
                slots.push(vec![0.0; bn.channels()]);
            }
        }
        Gradients { slots }
    }

    /// Trainable parameters in a fixed order matching [`Gradients::slots`].
    pub fn params_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out = Vec::new();
        for s in &mut self.stages {
            let (w, b) = s.op.weight_bias_mut();
            out.push(w);
            if let Some(b) = b {
                out.push(b);
            }
            if let Some(bn) = &mut s.norm {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    /// Backpropagates through a recorded pass, accumulating into `grads`.
    ///
    /// `grad_output` is the gradient w.r.t. [`ForwardPass::output`];
    /// `grad_activations[i]`, when present, is added at stage `i`'s
    /// post-activation output. Returns the gradient w.r.t. the input.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        grad_output: Option<&Tensor>,
        grad_activations: &[Option<Tensor>],
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        let mut slot_of = Vec::with_capacity(self.stages.len());
        let mut next = 0;
        for s in &self.stages {
            slot_of.push(next);
            next += 1 + s.op.bias().is_some() as usize + 2 * s.norm.is_some() as usize;
        }

        let mut g = match grad_output {
            Some(g) => {
                g.expect_shape("gradient w.r.t. network output", pass.output.shape())?;
                g.clone()
            }
            None => Tensor::zeros(pass.output.shape()),
        };
        for (i, stage) in self.stages.iter().enumerate().rev() {
            if let Some(mask) = &pass.masks[i] {
                for (v, m) in g.data_mut().iter_mut().zip(mask) {
                    *v *= m;
                }
            }
            if let Some(Some(extra)) = grad_activations.get(i) {
                extra.expect_shape("gradient w.r.t. stage activation", g.shape())?;
                g.add_assign(extra)?;
            }
            g = stage.spec.activation.backward(&pass.activations[i], &g);
            let slot = slot_of[i];
            let has_bias = stage.op.bias().is_some();
            let norm_slot = slot + 1 + has_bias as usize;
            if let (Some(bn), Some(cache)) = (&stage.norm, &pass.norms[i]) {
                let (gamma, beta) = grads.slots[norm_slot..norm_slot + 2].split_at_mut(1);
                g = bn.backward(cache, &g, &mut gamma[0], &mut beta[0]);
            }
            let (head, rest) = grads.slots.split_at_mut(slot + 1);
            let gw = &mut head[slot];
            let gb = if has_bias { Some(rest[0].as_mut_slice()) } else { None };
            g = match &stage.op {
                LayerOp::Conv(c) => c.backward(&pass.inputs[i], &g, gw, gb),
                LayerOp::Transposed(c) => c.backward(&pass.inputs[i], &g, gw, gb),
            };
        }
        Ok(g)
    }

    /// Every parameter and running statistic, named `<role>.<stage>.<field>`.
    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        let role = self.role.name();
        for (i, s) in self.stages.iter().enumerate() {
            out.push(NamedTensor {
                name: format!("{role}.{i}.weight"),
                dims: s.op.weight_dims(),
                data: s.op.weight().to_vec(),
            });
            if let Some(b) = s.op.bias() {
                out.push(NamedTensor {
                    name: format!("{role}.{i}.bias"),
                    dims: vec![b.len()],
                    data: b.to_vec(),
                });
            }
            if let Some(bn) = &s.norm {
                for (field, data) in [
                    ("bn.gamma", &bn.gamma),
                    ("bn.beta", &bn.beta),
                    ("bn.running_mean", &bn.running_mean),
                    ("bn.running_var", &bn.running_var),
                ] {
                    out.push(NamedTensor {
                        name: format!("{role}.{i}.{field}"),
                        dims: vec![data.len()],
                        data: data.clone(),
                    });
                }
            }
        }
        out
    }

    /// Overwrites parameters from named tensors; every expected name must be
    /// present with the expected dimensions.
    pub fn load_named(&mut self, lookup: &dyn Fn(&str) -> Option<NamedTensor>) -> Result<()> {
        let expected = self.named_tensors();
        for want in expected {
            let got = lookup(&want.name)
                .ok_or_else(|| Error::CorruptContainer(format!("missing tensor {}", want.name)))?;
            if got.dims != want.dims {
                return Err(Error::CorruptContainer(format!(
                    "tensor {} has dims {:?}, expected {:?}",
                    want.name, got.dims, want.dims
                )));
            }
            let target = self.tensor_mut(&want.name).expect("name produced by named_tensors");
            target.copy_from_slice(&got.data);
        }
        Ok(())
    }

    fn tensor_mut(&mut self, name: &str) -> Option<&mut Vec<f32>> {
        let mut parts = name.splitn(3, '.');
        let _role = parts.next()?;
        let idx: usize = parts.next()?.parse().ok()?;
        let field = parts.next()?;
        let stage = self.stages.get_mut(idx)?;
        match field {
            "weight" => Some(stage.op.weight_bias_mut().0),
            "bias" => stage.op.weight_bias_mut().1,
            "bn.gamma" => stage.norm.as_mut().map(|b| &mut b.gamma),
            "bn.beta" => stage.norm.as_mut().map(|b| &mut b.beta),
            "bn.running_mean" => stage.norm.as_mut().map(|b| &mut b.running_mean),
            "bn.running_var" => stage.norm.as_mut().map(|b| &mut b.running_var),
            _ => None,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.stages
            .iter()
            .map(|s| {
                s.op.weight().len()
                    + s.op.bias().map_or(0, |b| b.len())
                    + s.norm.as_ref().map_or(0, |b| 2 * b.channels())
            })
            .sum()
    }
}

/// Seeded RNG stream for one network; the three roles never share a stream.
pub fn network_rng(seed: u64, role: Role) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(match role {
        Role::Encoder => 1,
        Role::Decoder => 2,
        Role::Discriminator => 3,
    });
    rng
}

/// The encoder / decoder / discriminator triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Networks {
    pub encoder: Network,
    pub decoder: Network,
    pub discriminator: Network,
}

/// Builds all three networks deterministically from `seed`.
pub fn build_networks(seed: u64, arch: &ArchConfig) -> Networks {
    build_networks_split(seed, seed, arch)
}

/// Like [`build_networks`] with a separate seed for the discriminator.
pub fn build_networks_split(ae_seed: u64, discriminator_seed: u64, arch: &ArchConfig) -> Networks {
    Networks {
        encoder: Network::build(Role::Encoder, arch, &mut network_rng(ae_seed, Role::Encoder)),
        decoder: Network::build(Role::Decoder, arch, &mut network_rng(ae_seed, Role::Decoder)),
        discriminator: Network::build(
            Role::Discriminator,
            arch,
            &mut network_rng(discriminator_seed, Role::Discriminator),
        ),
    }
}

/// A batch of images, `(N, 3, 128, 128)` with values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch(Tensor);

impl ImageBatch {
    pub fn new(t: Tensor) -> Result<Self> {
        let s = t.shape();
        if s.with_batch(1) != image_shape(1) {
            return Err(Error::shape("image batch", "(N, 3, 128, 128)", s));
        }
        Ok(ImageBatch(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.0.batch() == 0
    }
}

/// Bottleneck codes, `(N, 512)` stored as `(N, 512, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode(Tensor);

impl LatentCode {
    pub fn new(t: Tensor) -> Result<Self> {
        let s = t.shape();
        if s.n == 0 || s != latent_shape(s.n) {
            return Err(Error::shape("latent code", "(N, 512)", s));
        }
        Ok(LatentCode(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.0.batch() == 0
    }
}

/// The encoder's four leaky-rectified activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack(Vec<Tensor>);

impl FeatureStack {
    pub fn new(stages: Vec<Tensor>) -> Result<Self> {
        if stages.len() != FEATURE_SHAPES.len() {
            return Err(Error::shape("feature stack length", FEATURE_SHAPES.len(), stages.len()));
        }
        let n = stages[0].batch();
        for (t, &(c, h, w)) in stages.iter().zip(&FEATURE_SHAPES) {
            t.expect_shape("feature stack stage", Shape::new(n, c, h, w))?;
        }
        Ok(FeatureStack(stages))
    }

    /// Builds a stack without the fixed-architecture shape check; used by
    /// losses on small toy tensors.
    pub fn from_tensors(stages: Vec<Tensor>) -> Self {
        FeatureStack(stages)
    }

    pub fn stages(&self) -> &[Tensor] {
        &self.0
    }

    /// The last stage, `(N, 256, 5, 5)` for the full architecture.
    pub fn last(&self) -> &Tensor {
        self.0.last().expect("feature stack is never empty")
    }
}

fn encoder_outputs(encoder: &Network, pass: &ForwardPass) -> Result<(LatentCode, FeatureStack)> {
    debug_assert_eq!(encoder.role(), Role::Encoder);
    let z = LatentCode::new(pass.output.clone())?;
    let feats = FeatureStack::new(pass.activations[..4].to_vec())?;
    Ok((z, feats))
}

/// Encodes images into bottleneck codes plus intermediate activations.
/// [`Mode::Train`] is rejected here; training drives [`Network::forward`].
pub fn encode(encoder: &Network, x: &ImageBatch, mode: Mode) -> Result<(LatentCode, FeatureStack)> {
    let pass = encoder.infer(x.tensor(), mode)?;
    encoder_outputs(encoder, &pass)
}

/// Training-mode encode; updates running statistics.
pub fn encode_train<R: Rng>(
    encoder: &mut Network,
    x: &ImageBatch,
    rng: &mut R,
) -> Result<(LatentCode, FeatureStack)> {
    let pass = encoder.forward(x.tensor(), Mode::Train, rng)?;
    encoder_outputs(encoder, &pass)
}

pub fn decode(decoder: &Network, z: &LatentCode, mode: Mode) -> Result<ImageBatch> {
    let pass = decoder.infer(z.tensor(), mode)?;
    ImageBatch::new(pass.output)
}

/// Probability that each image is real.
pub fn discriminate(discriminator: &Network, x: &ImageBatch, mode: Mode) -> Result<Vec<f32>> {
    Ok(discriminator.infer(x.tensor(), mode)?.output.into_vec())
}

/// `x -> E(x) -> G(E(x))`, returning the reconstruction, the code and the
/// input's features.
pub fn reconstruct(
    encoder: &Network,
    decoder: &Network,
    x: &ImageBatch,
    mode: Mode,
) -> Result<(ImageBatch, LatentCode, FeatureStack)> {
    let (z, feats) = encode(encoder, x, mode)?;
    let x_hat = decode(decoder, &z, mode)?;
    Ok((x_hat, z, feats))
}
