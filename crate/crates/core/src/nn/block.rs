//! Parameter storage and the composite blocks used by the model zoo:
//! inverted residual (MobileNetV2 / MixNet) and depthwise separable
//! (MobileNetV1), both built on a [`Tape`].

use crate::conv::ConvGeom;
use crate::error::{Error, Result};
use crate::mixconv::MixConvSpec;
use crate::nn::activation::Activation;
use crate::nn::batchnorm::{BnMode, RunningStats, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
use crate::nn::se::SqueezeExciteSpec;
use crate::nn::tape::{Tape, Var};
use crate::tensor::{Rng, Shape4, Tensor};

/// Initialization rule for a freshly allocated parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    He { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnSettings {
    pub epsilon: f64,
    pub momentum: f64,
}

impl Default for BnSettings {
    fn default() -> Self {
        BnSettings { epsilon: DEFAULT_EPSILON, momentum: DEFAULT_MOMENTUM }
    }
}

/// Flat, named parameter storage plus batch-norm running statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    values: Vec<Tensor>,
    names: Vec<String>,
    stats: Vec<RunningStats>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn alloc(&mut self, name: impl Into<String>, shape: Shape4, init: Init, rng: &mut Rng) -> usize {
        let value = match init {
            Init::He { fan_in } => Tensor::randn(shape, 0.0, (2.0 / fan_in as f64).sqrt(), rng),
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::new(shape, crate::tensor::Fill::Ones),
        };
        self.values.push(value);
        self.names.push(name.into());
        self.values.len() - 1
    }

    pub fn alloc_stats(&mut self, stats: RunningStats) -> usize {
        self.stats.push(stats);
        self.stats.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, slot: usize) -> &Tensor {
        &self.values[slot]
    }

    pub fn set(&mut self, slot: usize, value: Tensor) -> Result<()> {
        self.values[slot].expect_same_shape(&value)?;
        self.values[slot] = value;
        Ok(())
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    /// Mutable access for optimizers; shapes must be preserved.
    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn shapes(&self) -> Vec<Shape4> {
        self.values.iter().map(Tensor::shape).collect()
    }

    pub fn stats(&self, idx: usize) -> &RunningStats {
        &self.stats[idx]
    }

    pub fn all_stats(&self) -> &[RunningStats] {
        &self.stats
    }

    pub fn stats_mut(&mut self, idx: usize) -> &mut RunningStats {
        &mut self.stats[idx]
    }

    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Registers `slot` on the tape.
    pub fn var(&self, tape: &mut Tape, slot: usize) -> Var {
        tape.param(slot, self.values[slot].clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BnSlots {
    pub gamma: usize,
    pub beta: usize,
    pub stats: usize,
}

impl BnSlots {
    pub fn alloc(params: &mut Params, prefix: &str, channels: usize, bn: BnSettings, rng: &mut Rng) -> Result<Self> {
        let shape = Shape4::new(1, 1, 1, channels)?;
        Ok(BnSlots {
            gamma: params.alloc(format!("{prefix}.gamma"), shape, Init::Ones, rng),
            beta: params.alloc(format!("{prefix}.beta"), shape, Init::Zeros, rng),
            stats: params.alloc_stats(RunningStats::with_settings(channels, bn.epsilon, bn.momentum)),
        })
    }

    pub fn apply(&self, tape: &mut Tape, x: Var, params: &mut Params, mode: BnMode) -> Result<Var> {
        let gamma = params.var(tape, self.gamma);
        let beta = params.var(tape, self.beta);
        tape.batchnorm(x, gamma, beta, params.stats_mut(self.stats), mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeSlots {
    pub reduce_w: usize,
    pub reduce_b: usize,
    pub expand_w: usize,
    pub expand_b: usize,
}

impl SeSlots {
    pub fn alloc(params: &mut Params, prefix: &str, spec: &SqueezeExciteSpec, rng: &mut Rng) -> Result<Self> {
        let (c, r) = (spec.channels, spec.reduced);
        Ok(SeSlots {
            reduce_w: params.alloc(format!("{prefix}.reduce.w"), Shape4::new(1, 1, c, r)?, Init::He { fan_in: c }, rng),
            reduce_b: params.alloc(format!("{prefix}.reduce.b"), Shape4::new(1, 1, 1, r)?, Init::Zeros, rng),
            expand_w: params.alloc(format!("{prefix}.expand.w"), Shape4::new(1, 1, r, c)?, Init::He { fan_in: r }, rng),
            expand_b: params.alloc(format!("{prefix}.expand.b"), Shape4::new(1, 1, 1, c)?, Init::Zeros, rng),
        })
    }

    /// Pool, reduce, activate, expand, sigmoid, rescale.
    pub fn apply(&self, tape: &mut Tape, x: Var, act: Activation, params: &Params) -> Result<Var> {
        let pooled = tape.global_avg_pool(x)?;
        let (rw, rb) = (params.var(tape, self.reduce_w), params.var(tape, self.reduce_b));
        let reduced = tape.dense(pooled, rw, rb)?;
        let reduced = tape.activation(reduced, act);
        let (ew, eb) = (params.var(tape, self.expand_w), params.var(tape, self.expand_b));
        let logits = tape.dense(reduced, ew, eb)?;
        let gate = tape.sigmoid(logits);
        tape.scale_channels(x, gate)
    }
}

/// Allocates one kernel per MixConv group; fan-in is `k_t^2`.
fn alloc_mix(params: &mut Params, prefix: &str, mix: &MixConvSpec, rng: &mut Rng) -> Result<Vec<usize>> {
    (0..mix.groups())
        .map(|t| {
            let k = mix.kernels()[t];
            Ok(params.alloc(format!("{prefix}.k{k}"), mix.kernel_shape(t)?, Init::He { fan_in: k * k }, rng))
        })
        .collect()
}

fn apply_mix(tape: &mut Tape, x: Var, mix: &MixConvSpec, slots: &[usize], params: &Params) -> Result<Var> {
    let kernels: Vec<Var> = slots.iter().map(|&s| params.var(tape, s)).collect();
    if mix.groups() == 1 {
        tape.depthwise(x, kernels[0], mix.group_geom(0))
    } else {
        tape.mixconv(x, &kernels, mix)
    }
}

fn alloc_pointwise(params: &mut Params, name: String, c_in: usize, c_out: usize, groups: usize, rng: &mut Rng) -> Result<usize> {
    if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
        return Err(Error::Shape(format!("1x1 groups {groups} must divide {c_in} and {c_out}")));
    }
    let shape = Shape4::new(1, 1, c_in / groups, c_out)?;
    Ok(params.alloc(name, shape, Init::He { fan_in: c_in / groups }, rng))
}

/// Expand (1x1) -> BN -> act -> MixConv -> BN -> act -> SE -> project (1x1)
/// -> BN -> optional residual. The projection is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedResidualSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub expansion: usize,
    pub mix: MixConvSpec,
    pub se: Option<SqueezeExciteSpec>,
    pub activation: Activation,
    pub expand_groups: usize,
    pub project_groups: usize,
    residual: bool,
}

impl InvertedResidualSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        expansion: usize,
        mix: MixConvSpec,
        se: Option<SqueezeExciteSpec>,
        activation: Activation,
        expand_groups: usize,
        project_groups: usize,
    ) -> Result<Self> {
        if expansion == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::Shape("block widths and expansion must be positive".into()));
        }
        let expanded = in_channels * expansion;
        if mix.in_channels() != expanded || mix.multiplier() != 1 {
            return Err(Error::Spec(format!(
                "mixconv covers {} channels with multiplier {}, block expands to {expanded}",
                mix.in_channels(),
                mix.multiplier()
            )));
        }
        for (groups, a, b) in [(expand_groups, in_channels, expanded), (project_groups, expanded, out_channels)] {
            if groups == 0 || a % groups != 0 || b % groups != 0 {
                return Err(Error::Shape(format!("1x1 groups {groups} must divide {a} and {b}")));
            }
        }
        if let Some(se) = &se {
            if se.channels != expanded {
                return Err(Error::Shape(format!("squeeze-excite gates {} channels, block has {expanded}", se.channels)));
            }
        }
        let residual = mix.stride() == 1 && in_channels == out_channels;
        Ok(InvertedResidualSpec {
            in_channels,
            out_channels,
            expansion,
            mix,
            se,
            activation,
            expand_groups,
            project_groups,
            residual,
        })
    }

    /// Forces the skip connection on or off; enabling it on a block whose
    /// input and output shapes differ is a shape error.
    pub fn with_residual(mut self, residual: bool) -> Result<Self> {
        if residual && !(self.mix.stride() == 1 && self.in_channels == self.out_channels) {
            return Err(Error::Shape(format!(
                "residual needs stride 1 and equal widths, block is {} -> {} at stride {}",
                self.in_channels,
                self.out_channels,
                self.mix.stride()
            )));
        }
        self.residual = residual;
        Ok(self)
    }

    pub fn residual(&self) -> bool {
        self.residual
    }

    pub fn expanded(&self) -> usize {
        self.in_channels * self.expansion
    }

    pub fn stride(&self) -> usize {
        self.mix.stride()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvertedResidualSlots {
    pub expand: Option<(usize, BnSlots)>,
    pub mix: Vec<usize>,
    pub mix_bn: BnSlots,
    pub se: Option<SeSlots>,
    pub project: usize,
    pub project_bn: BnSlots,
}

impl InvertedResidualSlots {
    pub fn alloc(spec: &InvertedResidualSpec, prefix: &str, params: &mut Params, bn: BnSettings, rng: &mut Rng) -> Result<Self> {
        let e = spec.expanded();
        let expand = if spec.expansion == 1 {
            None
        } else {
            let w = alloc_pointwise(params, format!("{prefix}.expand.w"), spec.in_channels, e, spec.expand_groups, rng)?;
            Some((w, BnSlots::alloc(params, &format!("{prefix}.expand.bn"), e, bn, rng)?))
        };
        let mix = alloc_mix(params, &format!("{prefix}.mix"), &spec.mix, rng)?;
        let mix_bn = BnSlots::alloc(params, &format!("{prefix}.mix.bn"), e, bn, rng)?;
        let se = spec.se.as_ref().map(|se| SeSlots::alloc(params, &format!("{prefix}.se"), se, rng)).transpose()?;
        let project =
            alloc_pointwise(params, format!("{prefix}.project.w"), e, spec.out_channels, spec.project_groups, rng)?;
        let project_bn = BnSlots::alloc(params, &format!("{prefix}.project.bn"), spec.out_channels, bn, rng)?;
        Ok(InvertedResidualSlots { expand, mix, mix_bn, se, project, project_bn })
    }
}

pub fn inverted_residual_tape(
    tape: &mut Tape,
    x: Var,
    spec: &InvertedResidualSpec,
    slots: &InvertedResidualSlots,
    params: &mut Params,
    mode: BnMode,
) -> Result<Var> {
    if tape.value(x).shape().c != spec.in_channels {
        return Err(Error::Shape(format!(
            "block expects {} channels, input has {}",
            spec.in_channels,
            tape.value(x).shape().c
        )));
    }
    let mut h = x;
    if let Some((w, bn)) = &slots.expand {
        let wv = params.var(tape, *w);
        h = tape.pointwise(h, wv, spec.expand_groups)?;
        h = bn.apply(tape, h, params, mode)?;
        h = tape.activation(h, spec.activation);
    }
    h = apply_mix(tape, h, &spec.mix, &slots.mix, params)?;
    h = slots.mix_bn.apply(tape, h, params, mode)?;
    h = tape.activation(h, spec.activation);
    if let (Some(se), Some(se_slots)) = (&spec.se, &slots.se) {
        h = se_slots.apply(tape, h, se.activation, params)?;
    }
    let wv = params.var(tape, slots.project);
    h = tape.pointwise(h, wv, spec.project_groups)?;
    h = slots.project_bn.apply(tape, h, params, mode)?;
    if spec.residual {
        h = tape.add(h, x)?;
    }
    Ok(h)
}

/// Runs one inverted residual block on its own tape.
pub fn inverted_residual(
    x: &Tensor,
    spec: &InvertedResidualSpec,
    slots: &InvertedResidualSlots,
    params: &mut Params,
    mode: BnMode,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let y = inverted_residual_tape(&mut tape, xv, spec, slots, params, mode)?;
    Ok(tape.value(y).clone())
}

/// MobileNetV1 block: depthwise (or MixConv) -> BN -> act -> 1x1 -> BN -> act.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableSpec {
    pub mix: MixConvSpec,
    pub out_channels: usize,
    pub activation: Activation,
    pub pw_groups: usize,
}

impl SeparableSpec {
    pub fn new(mix: MixConvSpec, out_channels: usize, activation: Activation, pw_groups: usize) -> Result<Self> {
        let c = mix.out_channels();
        if pw_groups == 0 || c % pw_groups != 0 || out_channels % pw_groups != 0 {
            return Err(Error::Shape(format!("1x1 groups {pw_groups} must divide {c} and {out_channels}")));
        }
        Ok(SeparableSpec { mix, out_channels, activation, pw_groups })
    }

    pub fn in_channels(&self) -> usize {
        self.mix.in_channels()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeparableSlots {
    pub mix: Vec<usize>,
    pub mix_bn: BnSlots,
    pub pointwise: usize,
    pub pointwise_bn: BnSlots,
}

impl SeparableSlots {
    pub fn alloc(spec: &SeparableSpec, prefix: &str, params: &mut Params, bn: BnSettings, rng: &mut Rng) -> Result<Self> {
        let mix = alloc_mix(params, &format!("{prefix}.mix"), &spec.mix, rng)?;
        let c = spec.mix.out_channels();
        let mix_bn = BnSlots::alloc(params, &format!("{prefix}.mix.bn"), c, bn, rng)?;
        let pointwise = alloc_pointwise(params, format!("{prefix}.pointwise.w"), c, spec.out_channels, spec.pw_groups, rng)?;
        let pointwise_bn = BnSlots::alloc(params, &format!("{prefix}.pointwise.bn"), spec.out_channels, bn, rng)?;
        Ok(SeparableSlots { mix, mix_bn, pointwise, pointwise_bn })
    }
}

pub fn separable_tape(
    tape: &mut Tape,
    x: Var,
    spec: &SeparableSpec,
    slots: &SeparableSlots,
    params: &mut Params,
    mode: BnMode,
) -> Result<Var> {
    let mut h = apply_mix(tape, x, &spec.mix, &slots.mix, params)?;
    h = slots.mix_bn.apply(tape, h, params, mode)?;
    h = tape.activation(h, spec.activation);
    let wv = params.var(tape, slots.pointwise);
    h = tape.pointwise(h, wv, spec.pw_groups)?;
    h = slots.pointwise_bn.apply(tape, h, params, mode)?;
    Ok(tape.activation(h, spec.activation))
}

/// Dense k x k convolution -> BN -> act, as used by stems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvBnSpec {
    pub geom: ConvGeom,
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvBnSlots {
    pub weight: usize,
    pub bn: BnSlots,
}

impl ConvBnSlots {
    pub fn alloc(spec: &ConvBnSpec, prefix: &str, params: &mut Params, bn: BnSettings, rng: &mut Rng) -> Result<Self> {
        let k = spec.geom.kernel;
        let shape = Shape4::new(k, k, spec.in_channels, spec.out_channels)?;
        let weight = params.alloc(format!("{prefix}.w"), shape, Init::He { fan_in: k * k * spec.in_channels }, rng);
        let bn = BnSlots::alloc(params, &format!("{prefix}.bn"), spec.out_channels, bn, rng)?;
        Ok(ConvBnSlots { weight, bn })
    }
}

pub fn conv_bn_tape(
    tape: &mut Tape,
    x: Var,
    spec: &ConvBnSpec,
    slots: &ConvBnSlots,
    params: &mut Params,
    mode: BnMode,
) -> Result<Var> {
    let w = params.var(tape, slots.weight);
    let h = tape.conv2d(x, w, spec.geom)?;
    let h = slots.bn.apply(tape, h, params, mode)?;
    Ok(tape.activation(h, spec.activation))
}
