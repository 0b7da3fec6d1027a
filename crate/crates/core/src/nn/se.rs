//! Squeeze-and-excitation: pool, bottleneck, sigmoid gate, rescale.

use crate::conv::pointwise_backward;
use crate::error::{Error, Result};
use crate::nn::activation::{sigmoid, Activation};
use crate::nn::dense::{bias_grad, global_avg_pool_backward, scale_channels};
use crate::tensor::{Shape4, Tensor};

pub const DEFAULT_SE_RATIO: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SqueezeExciteSpec {
    /// Channels being gated.
    pub channels: usize,
    /// Bottleneck width.
    pub reduced: usize,
    /// Activation between the two dense layers.
    pub activation: Activation,
}

impl SqueezeExciteSpec {
    pub fn new(channels: usize, reduced: usize, activation: Activation) -> Result<Self> {
        if channels == 0 || reduced == 0 {
            return Err(Error::Shape(format!("squeeze-excite {channels} -> {reduced} needs positive widths")));
        }
        Ok(SqueezeExciteSpec { channels, reduced, activation })
    }

    /// Bottleneck of `max(1, floor(ratio * block_in))` channels.
    pub fn from_ratio(block_in: usize, channels: usize, ratio: f64, activation: Activation) -> Result<Self> {
        if !(ratio > 0.0 && ratio.is_finite()) {
            return Err(Error::Config(format!("squeeze-excite ratio must be positive, got {ratio}")));
        }
        let reduced = ((block_in as f64 * ratio).floor() as usize).max(1);
        Self::new(channels, reduced, activation)
    }

    /// Two dense layers with biases.
    pub fn param_count(&self) -> u64 {
        (2 * self.channels * self.reduced + self.channels + self.reduced) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeWeights {
    /// `(1, 1, c, r)`
    pub reduce_w: Tensor,
    /// `(1, 1, 1, r)`
    pub reduce_b: Tensor,
    /// `(1, 1, r, c)`
    pub expand_w: Tensor,
    /// `(1, 1, 1, c)`
    pub expand_b: Tensor,
}

impl SeWeights {
    pub fn shapes(spec: &SqueezeExciteSpec) -> Result<[Shape4; 4]> {
        let (c, r) = (spec.channels, spec.reduced);
        Ok([Shape4::new(1, 1, c, r)?, Shape4::new(1, 1, 1, r)?, Shape4::new(1, 1, r, c)?, Shape4::new(1, 1, 1, c)?])
    }

    fn check(&self, spec: &SqueezeExciteSpec) -> Result<()> {
        let shapes = Self::shapes(spec)?;
        let got = [self.reduce_w.shape(), self.reduce_b.shape(), self.expand_w.shape(), self.expand_b.shape()];
        if got != shapes {
            return Err(Error::Shape(format!("squeeze-excite weights {got:?}, expected {shapes:?}")));
        }
        Ok(())
    }
}

struct Trace {
    pooled: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    gate: Vec<f64>,
}

fn trace(x: &Tensor, spec: &SqueezeExciteSpec, w: &SeWeights) -> Result<Trace> {
    let s = x.shape();
    if s.c != spec.channels {
        return Err(Error::Shape(format!("squeeze-excite over {} channels, input has {}", spec.channels, s.c)));
    }
    w.check(spec)?;
    let (c, r, area) = (s.c, spec.reduced, s.h * s.w);
    let mut pooled = vec![0.0; s.n * c];
    for n in 0..s.n {
        let acc = &mut pooled[n * c..(n + 1) * c];
        for px in x.data()[n * area * c..(n + 1) * area * c].chunks_exact(c) {
            for z in 0..c {
                acc[z] += px[z];
            }
        }
        for a in acc.iter_mut() {
            *a /= area as f64;
        }
    }
    let (wr, br, we, be) = (w.reduce_w.data(), w.reduce_b.data(), w.expand_w.data(), w.expand_b.data());
    let mut pre = vec![0.0; s.n * r];
    let mut gate = vec![0.0; s.n * c];
    for n in 0..s.n {
        for j in 0..r {
            let mut acc = 0.0;
            for z in 0..c {
                acc += pooled[n * c + z] * wr[z * r + j];
            }
            pre[n * r + j] = acc + br[j];
        }
    }
    let pre_t = Tensor::from_vec(Shape4::new(s.n, 1, 1, r)?, pre.clone())?;
    let act = spec.activation.forward(&pre_t).into_vec();
    for n in 0..s.n {
        for z in 0..c {
            let mut acc = 0.0;
            for j in 0..r {
                acc += act[n * r + j] * we[j * c + z];
            }
            gate[n * c + z] = sigmoid(acc + be[z]);
        }
    }
    Ok(Trace { pooled, pre, act, gate })
}

pub fn squeeze_excite(x: &Tensor, spec: &SqueezeExciteSpec, weights: &SeWeights) -> Result<Tensor> {
    let t = trace(x, spec, weights)?;
    let s = x.shape();
    scale_channels(x, &Tensor::from_vec(Shape4::new(s.n, 1, 1, s.c)?, t.gate)?)
}

/// Per-image gate values in `(0, 1)`, shaped `(n, 1, 1, c)`.
pub fn squeeze_excite_gate(x: &Tensor, spec: &SqueezeExciteSpec, weights: &SeWeights) -> Result<Tensor> {
    let t = trace(x, spec, weights)?;
    Tensor::from_vec(Shape4::new(x.shape().n, 1, 1, x.shape().c)?, t.gate)
}

/// Returns `dx` and the weight gradients.
pub fn squeeze_excite_backward(
    x: &Tensor,
    spec: &SqueezeExciteSpec,
    weights: &SeWeights,
    dy: &Tensor,
) -> Result<(Tensor, SeWeights)> {
    dy.expect_same_shape(x)?;
    let t = trace(x, spec, weights)?;
    let s = x.shape();
    let (n, c, r, area) = (s.n, s.c, spec.reduced, s.h * s.w);
    let vec_shape = |d| Shape4::new(n, 1, 1, d);

    let gate = Tensor::from_vec(vec_shape(c)?, t.gate.clone())?;
    let direct = scale_channels(dy, &gate)?;
    let mut dgate = vec![0.0; n * c];
    for (i, (px, gp)) in x.data().chunks_exact(c).zip(dy.data().chunks_exact(c)).enumerate() {
        for z in 0..c {
            dgate[(i / area) * c + z] += px[z] * gp[z];
        }
    }
    let dlogit: Vec<f64> = dgate.iter().zip(&t.gate).map(|(d, g)| d * g * (1.0 - g)).collect();
    let dlogit = Tensor::from_vec(vec_shape(c)?, dlogit)?;
    let act = Tensor::from_vec(vec_shape(r)?, t.act)?;
    let (dact, dwe) = pointwise_backward(&act, &weights.expand_w, 1, &dlogit)?;
    let pre = Tensor::from_vec(vec_shape(r)?, t.pre)?;
    let dpre = spec.activation.backward(&pre, &dact)?;
    let pooled = Tensor::from_vec(vec_shape(c)?, t.pooled)?;
    let (dpooled, dwr) = pointwise_backward(&pooled, &weights.reduce_w, 1, &dpre)?;
    let dx = direct.add(&global_avg_pool_backward(s, &dpooled)?)?;
    let grads = SeWeights { reduce_w: dwr, reduce_b: bias_grad(&dpre)?, expand_w: dwe, expand_b: bias_grad(&dlogit)? };
    Ok((dx, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Fill;

    fn weights(spec: &SqueezeExciteSpec, fills: [Fill; 4]) -> SeWeights {
        let [a, b, c, d] = SeWeights::shapes(spec).unwrap();
        SeWeights {
            reduce_w: Tensor::new(a, fills[0]),
            reduce_b: Tensor::new(b, fills[1]),
            expand_w: Tensor::new(c, fills[2]),
            expand_b: Tensor::new(d, fills[3]),
        }
    }

    #[test]
    fn saturated_gate_is_identity() {
        let spec = SqueezeExciteSpec::new(4, 2, Activation::Swish).unwrap();
        let rnd = Fill::Normal { mean: 0.0, std: 0.1, seed: 3 };
        let w = weights(&spec, [rnd, Fill::Zeros, Fill::Zeros, Fill::Constant(60.0)]);
        let x = Tensor::new(Shape4::new(2, 3, 3, 4).unwrap(), Fill::Normal { mean: 0.0, std: 1.0, seed: 1 });
        assert!(squeeze_excite(&x, &spec, &w).unwrap().max_abs_diff(&x).unwrap() < 1e-20);
    }

    #[test]
    fn zero_expand_halves_input() {
        let spec = SqueezeExciteSpec::new(4, 1, Activation::Relu).unwrap();
        let rnd = Fill::Normal { mean: 0.0, std: 1.0, seed: 9 };
        let w = weights(&spec, [rnd, rnd, Fill::Zeros, Fill::Zeros]);
        let x = Tensor::new(Shape4::new(1, 2, 5, 4).unwrap(), Fill::Normal { mean: 0.0, std: 1.0, seed: 2 });
        assert_eq!(squeeze_excite(&x, &spec, &w).unwrap(), x.scale(0.5));
    }

    #[test]
    fn ratio_reduction() {
        let spec = SqueezeExciteSpec::from_ratio(40, 240, 0.25, Activation::Swish).unwrap();
        assert_eq!(spec.reduced, 10);
        assert_eq!(SqueezeExciteSpec::from_ratio(3, 18, 0.25, Activation::Swish).unwrap().reduced, 1);
        assert!(SqueezeExciteSpec::new(4, 0, Activation::Relu).is_err());
        assert!(SqueezeExciteSpec::from_ratio(4, 4, 0.0, Activation::Relu).is_err());
        assert_eq!(spec.param_count(), 2 * 240 * 10 + 250);
    }
}
