//! Minimal reverse-mode tape over the layer kernels.
//!
//! Ops are appended in execution order and every value is kept alive until
//! the tape is dropped. [`Tape::backward`] walks the ops in exact reverse
//! order, so gradients do not depend on how the forward was scheduled.

use crate::conv::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::mixconv::{self, MixConvSpec};
use crate::nn::activation;
use crate::nn::batchnorm::{self, BatchNormCache, BnMode, RunningStats};
use crate::nn::dense;
use crate::tensor::{Shape4, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Node {
    Input,
    Param(usize),
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    Depthwise { x: Var, w: Var, geom: ConvGeom },
    MixConv { x: Var, kernels: Vec<Var>, spec: MixConvSpec },
    Pointwise { x: Var, w: Var, groups: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, cache: BatchNormCache },
    Relu(Var),
    Swish(Var),
    Sigmoid(Var),
    Add(Var, Var),
    AddBias { x: Var, b: Var },
    GlobalAvgPool(Var),
    ScaleChannels { x: Var, gate: Var },
}

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Tensor>,
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// One gradient per parameter slot in `shapes`, summed over every use on
    /// the tape; slots never used get zeros.
    pub fn param_grads(&self, shapes: &[Shape4]) -> Result<Vec<Tensor>> {
        let mut out: Vec<Tensor> = shapes.iter().map(|&s| Tensor::zeros(s)).collect();
        for &(slot, var) in &self.params {
            let acc = out
                .get_mut(slot)
                .ok_or_else(|| Error::Lookup(format!("parameter slot {slot} of {}", shapes.len())))?;
            if let Some(g) = self.grads.get(var.0).and_then(Option::as_ref) {
                *acc = acc.add(g)?;
            }
        }
        Ok(out)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    fn push(&mut self, value: Tensor, node: Node) -> Var {
        self.values.push(value);
        self.nodes.push(node);
        Var(self.values.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Node::Input)
    }

    /// Records a trainable value belonging to parameter `slot`.
    pub fn param(&mut self, slot: usize, value: Tensor) -> Var {
        self.push(value, Node::Param(slot))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, geom: ConvGeom) -> Result<Var> {
        let y = conv::conv2d_forward(self.value(x), self.value(w), &geom)?;
        Ok(self.push(y, Node::Conv2d { x, w, geom }))
    }

    pub fn depthwise(&mut self, x: Var, w: Var, geom: ConvGeom) -> Result<Var> {
        let y = conv::depthwise_forward(self.value(x), self.value(w), &geom)?;
        Ok(self.push(y, Node::Depthwise { x, w, geom }))
    }

    pub fn mixconv(&mut self, x: Var, kernels: &[Var], spec: &MixConvSpec) -> Result<Var> {
        let ks: Vec<Tensor> = kernels.iter().map(|&k| self.value(k).clone()).collect();
        let y = mixconv::mixconv_forward(self.value(x), &ks, spec)?;
        Ok(self.push(y, Node::MixConv { x, kernels: kernels.to_vec(), spec: spec.clone() }))
    }

    pub fn pointwise(&mut self, x: Var, w: Var, groups: usize) -> Result<Var> {
        let y = conv::pointwise_forward(self.value(x), self.value(w), groups)?;
        Ok(self.push(y, Node::Pointwise { x, w, groups }))
    }

    /// `gamma` and `beta` are `(1, 1, 1, c)` values; `stats` is updated in
    /// train mode.
    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, stats: &mut RunningStats, mode: BnMode) -> Result<Var> {
        let (y, cache) = batchnorm::batchnorm_forward_cached(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            stats,
            mode,
        )?;
        Ok(self.push(y, Node::BatchNorm { x, gamma, beta, cache }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = activation::relu_forward(self.value(x));
        self.push(y, Node::Relu(x))
    }

    pub fn swish(&mut self, x: Var) -> Var {
        let y = activation::swish_forward(self.value(x));
        self.push(y, Node::Swish(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = activation::sigmoid_forward(self.value(x));
        self.push(y, Node::Sigmoid(x))
    }

    pub fn activation(&mut self, x: Var, act: activation::Activation) -> Var {
        match act {
            activation::Activation::Relu => self.relu(x),
            activation::Activation::Swish => self.swish(x),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        Ok(self.push(y, Node::Add(a, b)))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let y = dense::add_bias(self.value(x), self.value(b))?;
        Ok(self.push(y, Node::AddBias { x, b }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = dense::global_avg_pool(self.value(x))?;
        Ok(self.push(y, Node::GlobalAvgPool(x)))
    }

    pub fn scale_channels(&mut self, x: Var, gate: Var) -> Result<Var> {
        let y = dense::scale_channels(self.value(x), self.value(gate))?;
        Ok(self.push(y, Node::ScaleChannels { x, gate }))
    }

    /// Pointwise projection plus bias on `(n, 1, 1, d)` values.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let z = self.pointwise(x, w, 1)?;
        self.add_bias(z, b)
    }

    /// Propagates `seed` (the gradient of some scalar with respect to
    /// `output`) back to every recorded value.
    pub fn backward(&self, output: Var, seed: Tensor) -> Result<Gradients> {
        seed.expect_same_shape(self.value(output))?;
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].clone() else { continue };
            let mut acc = |v: Var, d: Tensor| -> Result<()> {
                let slot = &mut grads[v.0];
                *slot = Some(match slot.take() {
                    Some(prev) => prev.add(&d)?,
                    None => d,
                });
                Ok(())
            };
            match &self.nodes[idx] {
                Node::Input | Node::Param(_) => {}
                Node::Conv2d { x, w, geom } => {
                    let (dx, dw) = conv::conv2d_backward(self.value(*x), self.value(*w), geom, &g)?;
                    acc(*x, dx)?;
                    acc(*w, dw)?;
                }
                Node::Depthwise { x, w, geom } => {
                    let (dx, dw) = conv::depthwise_backward(self.value(*x), self.value(*w), geom, &g)?;
                    acc(*x, dx)?;
                    acc(*w, dw)?;
                }
                Node::MixConv { x, kernels, spec } => {
                    let ks: Vec<Tensor> = kernels.iter().map(|&k| self.value(k).clone()).collect();
                    let (dx, dks) = mixconv::mixconv_backward(self.value(*x), &ks, spec, &g)?;
                    acc(*x, dx)?;
                    for (k, dk) in kernels.iter().zip(dks) {
                        acc(*k, dk)?;
                    }
                }
                Node::Pointwise { x, w, groups } => {
                    let (dx, dw) = conv::pointwise_backward(self.value(*x), self.value(*w), *groups, &g)?;
                    acc(*x, dx)?;
                    acc(*w, dw)?;
                }
                Node::BatchNorm { x, gamma, beta, cache } => {
                    let gv = self.value(*gamma);
                    let (dx, dgamma, dbeta) = batchnorm::batchnorm_backward(cache, gv.data(), &g)?;
                    acc(*x, dx)?;
                    acc(*gamma, Tensor::from_vec(gv.shape(), dgamma)?)?;
                    acc(*beta, Tensor::from_vec(self.value(*beta).shape(), dbeta)?)?;
                }
                Node::Relu(x) => acc(*x, activation::relu_backward(self.value(*x), &g)?)?,
                Node::Swish(x) => acc(*x, activation::swish_backward(self.value(*x), &g)?)?,
                Node::Sigmoid(x) => acc(*x, activation::sigmoid_backward(self.value(*x), &g)?)?,
                Node::Add(a, b) => {
                    acc(*a, g.clone())?;
                    acc(*b, g)?;
                }
                Node::AddBias { x, b } => {
                    acc(*b, dense::bias_grad(&g)?)?;
                    acc(*x, g)?;
                }
                Node::GlobalAvgPool(x) => acc(*x, dense::global_avg_pool_backward(self.value(*x).shape(), &g)?)?,
                Node::ScaleChannels { x, gate } => {
                    let (dx, dgate) = dense::scale_channels_backward(self.value(*x), self.value(*gate), &g)?;
                    acc(*x, dx)?;
                    acc(*gate, dgate)?;
                }
            }
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .take(output.0 + 1)
            .filter_map(|(i, n)| match n {
                Node::Param(slot) => Some((*slot, Var(i))),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }
}
