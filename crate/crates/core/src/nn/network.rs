//! A full classifier built from a [`ModelConfig`].

use crate::error::{Error, Result};
use crate::nn::batchnorm::BnMode;
use crate::nn::block::{
    conv_bn_tape, inverted_residual_tape, separable_tape, BnSettings, BnSlots, ConvBnSlots, Init, InvertedResidualSlots,
    Params, SeparableSlots,
};
use crate::nn::tape::{Tape, Var};
use crate::tensor::{Rng, Shape4, Tensor};
use crate::zoo::config::{BlockPlan, ModelConfig, ModelPlan};

#[derive(Debug, Clone, PartialEq, Eq)]
enum BlockSlots {
    InvertedResidual(InvertedResidualSlots),
    Separable(SeparableSlots),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct HeadSlots {
    conv: Option<(usize, BnSlots)>,
    fc_w: usize,
    fc_b: usize,
}

/// Stem, blocks, optional 1x1 head conv, global pool and a dense classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    plan: ModelPlan,
    params: Params,
    stem: ConvBnSlots,
    blocks: Vec<BlockSlots>,
    head: HeadSlots,
}

impl Network {
    /// Allocates and initializes every parameter from one seeded stream, in
    /// stem, block, head order.
    pub fn new(config: &ModelConfig, seed: u64, bn: BnSettings) -> Result<Self> {
        let plan = config.resolve()?;
        let mut rng = Rng::new(seed);
        let mut params = Params::new();
        let stem = ConvBnSlots::alloc(&plan.stem, "stem", &mut params, bn, &mut rng)?;
        let mut blocks = Vec::with_capacity(plan.blocks.len());
        for (i, b) in plan.blocks.iter().enumerate() {
            let prefix = format!("blocks.{i}");
            blocks.push(match b {
                BlockPlan::InvertedResidual(s) => {
                    BlockSlots::InvertedResidual(InvertedResidualSlots::alloc(s, &prefix, &mut params, bn, &mut rng)?)
                }
                BlockPlan::Separable(s) => {
                    BlockSlots::Separable(SeparableSlots::alloc(s, &prefix, &mut params, bn, &mut rng)?)
                }
            });
        }
        let h = plan.head;
        let conv = match h.channels {
            Some(c) => {
                let shape = Shape4::new(1, 1, h.in_channels, c)?;
                let w = params.alloc("head.conv.w", shape, Init::He { fan_in: h.in_channels }, &mut rng);
                Some((w, BnSlots::alloc(&mut params, "head.conv.bn", c, bn, &mut rng)?))
            }
            None => None,
        };
        let f = h.features();
        let fc_w = params.alloc("head.fc.w", Shape4::new(1, 1, f, h.classes)?, Init::He { fan_in: f }, &mut rng);
        let fc_b = params.alloc("head.fc.b", Shape4::new(1, 1, 1, h.classes)?, Init::Zeros, &mut rng);
        Ok(Network { plan, params, stem, blocks, head: HeadSlots { conv, fc_w, fc_b } })
    }

    pub fn plan(&self) -> &ModelPlan {
        &self.plan
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    /// Records the forward pass; returns logits of shape `(n, 1, 1, classes)`.
    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: BnMode) -> Result<Var> {
        let c = tape.value(x).shape().c;
        if c != self.plan.stem.in_channels {
            return Err(Error::Shape(format!("network expects {} input channels, got {c}", self.plan.stem.in_channels)));
        }
        let p = &mut self.params;
        let mut h = conv_bn_tape(tape, x, &self.plan.stem, &self.stem, p, mode)?;
        for (plan, slots) in self.plan.blocks.iter().zip(&self.blocks) {
            h = match (plan, slots) {
                (BlockPlan::InvertedResidual(s), BlockSlots::InvertedResidual(sl)) => {
                    inverted_residual_tape(tape, h, s, sl, p, mode)?
                }
                (BlockPlan::Separable(s), BlockSlots::Separable(sl)) => separable_tape(tape, h, s, sl, p, mode)?,
                _ => unreachable!("slots are allocated from the same plan"),
            };
        }
        if let Some((w, bn)) = &self.head.conv {
            let wv = p.var(tape, *w);
            h = tape.pointwise(h, wv, 1)?;
            h = bn.apply(tape, h, p, mode)?;
            h = tape.activation(h, self.plan.head.activation);
        }
        let pooled = tape.global_avg_pool(h)?;
        let (w, b) = (p.var(tape, self.head.fc_w), p.var(tape, self.head.fc_b));
        tape.dense(pooled, w, b)
    }

    /// Inference-mode logits for a batch.
    pub fn predict(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let y = self.forward(&mut tape, xv, BnMode::Infer)?;
        Ok(tape.value(y).clone())
    }
}

/// Deterministically initialized parameters for `config`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<Params> {
    Ok(Network::new(config, seed, BnSettings::default())?.params)
}
