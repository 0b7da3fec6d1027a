//! Finite-difference gradient checks for every differentiable operator.
//!
//! Each trial draws small random shapes and inputs, takes the scalar
//! `L = sum(r * y)` with random `r`, and compares the analytic gradient of
//! every input element against `(L(x + h) - L(x - h)) / 2h`, `h = 1e-5`.
//! The perturbed difference is formed elementwise before weighting so that
//! untouched outputs cancel exactly.

use serde::Serialize;

use crate::conv::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::mixconv::{self, MixConvSpec, PartitionScheme};
use crate::nn::activation::{self, Activation};
use crate::nn::batchnorm::{batchnorm_backward, batchnorm_forward_cached, BnMode, RunningStats};
use crate::nn::block::{inverted_residual_tape, BnSettings, InvertedResidualSlots, InvertedResidualSpec, Params};
use crate::nn::dense;
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::se::{self, SeWeights, SqueezeExciteSpec};
use crate::nn::tape::Tape;
use crate::tensor::{Rng, Shape4, Tensor};

pub const FD_STEP: f64 = 1e-5;

/// Registered operators and their relative-error tolerances.
pub const OPS: [(&str, f64); 12] = [
    ("depthwise", 1e-4),
    ("pointwise", 1e-4),
    ("conv", 1e-4),
    ("mixconv", 1e-4),
    ("batchnorm", 1e-4),
    ("se", 1e-4),
    ("dense", 1e-4),
    ("loss", 1e-4),
    ("swish", 1e-6),
    ("sigmoid", 1e-6),
    ("relu", 1e-6),
    ("inverted_residual", 1e-3),
];

pub fn tolerance(op: &str) -> Result<f64> {
    OPS.iter().find(|(name, _)| *name == op).map(|&(_, t)| t).ok_or_else(|| Error::Lookup(op.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub op: String,
    pub trials: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a - f| / max(|a|, |f|, 1e-8)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Worst relative error over every element of every input.
pub fn check_fn<F, B>(inputs: &[Tensor], forward: F, backward: B, rng: &mut Rng) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
    B: Fn(&[Tensor], &Tensor) -> Result<Vec<Tensor>>,
{
    let y = forward(inputs)?;
    let r = Tensor::from_vec(y.shape(), (0..y.len()).map(|_| rng.uniform_range(-1.0, 1.0)).collect())?;
    let analytic = backward(inputs, &r)?;
    if analytic.len() != inputs.len() {
        return Err(Error::Shape(format!("{} gradients for {} inputs", analytic.len(), inputs.len())));
    }
    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        inputs[i].expect_same_shape(grad)?;
        for j in 0..inputs[i].len() {
            let base = inputs[i].data()[j];
            let mut nudged = |delta: f64| -> Result<Tensor> {
                let mut d = inputs[i].data().to_vec();
                d[j] = base + delta;
                work[i] = Tensor::from_vec(inputs[i].shape(), d)?;
                forward(&work)
            };
            let plus = nudged(FD_STEP)?;
            let minus = nudged(-FD_STEP)?;
            work[i] = inputs[i].clone();
            let diff: f64 = plus.data().iter().zip(minus.data()).zip(r.data()).map(|((p, m), w)| w * (p - m)).sum();
            worst = worst.max(rel_err(grad.data()[j], diff / (2.0 * FD_STEP)));
        }
    }
    Ok(worst)
}

fn shape(n: usize, h: usize, w: usize, c: usize) -> Result<Shape4> {
    Shape4::new(n, h, w, c)
}

fn randn(s: Shape4, rng: &mut Rng) -> Tensor {
    Tensor::randn(s, 0.0, 1.0, rng)
}

fn random_geom(rng: &mut Rng) -> ConvGeom {
    let kernel = [1, 3, 5][rng.int_range(0, 2)];
    let stride = rng.int_range(1, 2);
    let dilation = if stride == 1 && kernel > 1 { rng.int_range(1, 2) } else { 1 };
    ConvGeom::new(kernel).with_stride(stride).with_dilation(dilation).with_multiplier(rng.int_range(1, 2))
}

fn trial(op: &str, rng: &mut Rng) -> Result<f64> {
    let n = rng.int_range(1, 2);
    let (h, w) = (rng.int_range(3, 6), rng.int_range(3, 6));
    match op {
        "depthwise" => {
            let geom = random_geom(rng);
            let c = rng.int_range(1, 4);
            let x = randn(shape(n, h, w, c)?, rng);
            let k = randn(conv::depthwise_kernel_shape(geom.kernel, c, geom.multiplier)?, rng);
            check_fn(
                &[x, k],
                |v| conv::depthwise_forward(&v[0], &v[1], &geom),
                |v, dy| conv::depthwise_backward(&v[0], &v[1], &geom, dy).map(|(a, b)| vec![a, b]),
                rng,
            )
        }
        "pointwise" => {
            let groups = rng.int_range(1, 3);
            let (ci, co) = (groups * rng.int_range(1, 3), groups * rng.int_range(1, 3));
            let x = randn(shape(n, h, w, ci)?, rng);
            let k = randn(shape(1, 1, ci / groups, co)?, rng);
            check_fn(
                &[x, k],
                |v| conv::pointwise_forward(&v[0], &v[1], groups),
                |v, dy| conv::pointwise_backward(&v[0], &v[1], groups, dy).map(|(a, b)| vec![a, b]),
                rng,
            )
        }
        "conv" => {
            let geom = random_geom(rng).with_multiplier(1);
            let (ci, co) = (rng.int_range(1, 3), rng.int_range(1, 3));
            let x = randn(shape(n, h, w, ci)?, rng);
            let k = randn(shape(geom.kernel, geom.kernel, ci, co)?, rng);
            check_fn(
                &[x, k],
                |v| conv::conv2d_forward(&v[0], &v[1], &geom),
                |v, dy| conv::conv2d_backward(&v[0], &v[1], &geom, dy).map(|(a, b)| vec![a, b]),
                rng,
            )
        }
        "mixconv" => {
            let g = rng.int_range(1, 4);
            let c = rng.int_range(g, g + 4);
            let exp = rng.uniform() < 0.5 && PartitionScheme::Exponential.partition(c, g).is_ok();
            let scheme = if exp { PartitionScheme::Exponential } else { PartitionScheme::Equal };
            let spec = MixConvSpec::uniform(c, g, &scheme, rng.int_range(1, 2), rng.int_range(1, 2))?;
            let x = randn(shape(n, h, w, c)?, rng);
            let mut inputs = vec![x];
            for t in 0..g {
                inputs.push(randn(spec.kernel_shape(t)?, rng));
            }
            check_fn(
                &inputs,
                |v| mixconv::mixconv_forward(&v[0], &v[1..], &spec),
                |v, dy| {
                    let (dx, dks) = mixconv::mixconv_backward(&v[0], &v[1..], &spec, dy)?;
                    Ok(std::iter::once(dx).chain(dks).collect())
                },
                rng,
            )
        }
        "batchnorm" => {
            let c = rng.int_range(1, 4);
            let n = rng.int_range(2, 3);
            let x = randn(shape(n, h, w, c)?, rng);
            let gamma = Tensor::from_vec(shape(1, 1, 1, c)?, (0..c).map(|_| rng.uniform_range(0.5, 1.5)).collect())?;
            let beta = randn(shape(1, 1, 1, c)?, rng);
            let run = |v: &[Tensor]| {
                let mut stats = RunningStats::new(c);
                batchnorm_forward_cached(&v[0], v[1].data(), v[2].data(), &mut stats, BnMode::Train)
            };
            check_fn(
                &[x, gamma, beta],
                |v| run(v).map(|(y, _)| y),
                |v, dy| {
                    let (_, cache) = run(v)?;
                    let (dx, dg, db) = batchnorm_backward(&cache, v[1].data(), dy)?;
                    Ok(vec![dx, Tensor::from_vec(v[1].shape(), dg)?, Tensor::from_vec(v[2].shape(), db)?])
                },
                rng,
            )
        }
        "se" => {
            let c = rng.int_range(2, 6);
            let spec = SqueezeExciteSpec::new(c, rng.int_range(1, 3), Activation::Swish)?;
            let x = randn(shape(n, h, w, c)?, rng);
            let mut inputs = vec![x];
            for s in SeWeights::shapes(&spec)? {
                inputs.push(randn(s, rng));
            }
            let weights = |v: &[Tensor]| SeWeights {
                reduce_w: v[1].clone(),
                reduce_b: v[2].clone(),
                expand_w: v[3].clone(),
                expand_b: v[4].clone(),
            };
            check_fn(
                &inputs,
                |v| se::squeeze_excite(&v[0], &spec, &weights(v)),
                |v, dy| {
                    let (dx, g) = se::squeeze_excite_backward(&v[0], &spec, &weights(v), dy)?;
                    Ok(vec![dx, g.reduce_w, g.reduce_b, g.expand_w, g.expand_b])
                },
                rng,
            )
        }
        "dense" => {
            let (di, d_out) = (rng.int_range(1, 6), rng.int_range(1, 6));
            let x = randn(shape(n, 1, 1, di)?, rng);
            let wt = randn(shape(1, 1, di, d_out)?, rng);
            let b = randn(shape(1, 1, 1, d_out)?, rng);
            check_fn(
                &[x, wt, b],
                |v| dense::dense_forward(&v[0], &v[1], &v[2]),
                |v, dy| dense::dense_backward(&v[0], &v[1], dy).map(|(a, b, c)| vec![a, b, c]),
                rng,
            )
        }
        "loss" => {
            let classes = rng.int_range(2, 5);
            let n = rng.int_range(1, 4);
            let labels: Vec<usize> = (0..n).map(|_| rng.int_range(0, classes - 1)).collect();
            let logits = randn(shape(n, 1, 1, classes)?, rng);
            let scalar = shape(1, 1, 1, 1)?;
            check_fn(
                &[logits],
                |v| Tensor::from_vec(scalar, vec![softmax_cross_entropy(&v[0], &labels)?.0]),
                |v, dy| Ok(vec![softmax_cross_entropy(&v[0], &labels)?.1.scale(dy.data()[0])]),
                rng,
            )
        }
        "swish" | "sigmoid" | "relu" => {
            let s = shape(n, h, w, rng.int_range(1, 3))?;
            let x = if op == "relu" {
                // keep samples clear of the kink at zero
                let d = (0..s.len()).map(|_| rng.uniform_range(0.05, 2.0) * if rng.uniform() < 0.5 { -1.0 } else { 1.0 });
                Tensor::from_vec(s, d.collect())?
            } else {
                Tensor::randn(s, 0.0, 2.0, rng)
            };
            let (f, b): (fn(&Tensor) -> Tensor, fn(&Tensor, &Tensor) -> Result<Tensor>) = match op {
                "swish" => (activation::swish_forward, activation::swish_backward),
                "sigmoid" => (activation::sigmoid_forward, activation::sigmoid_backward),
                _ => (activation::relu_forward, activation::relu_backward),
            };
            check_fn(&[x], |v| Ok(f(&v[0])), |v, dy| Ok(vec![b(&v[0], dy)?]), rng)
        }
        "inverted_residual" => inverted_residual_trial(rng),
        other => Err(Error::Lookup(other.to_string())),
    }
}

/// Whole block through the tape: input plus every trainable parameter.
fn inverted_residual_trial(rng: &mut Rng) -> Result<f64> {
    let c_in = rng.int_range(2, 3);
    let expansion = rng.int_range(1, 2);
    let stride = rng.int_range(1, 2);
    let c_out = if stride == 1 && rng.uniform() < 0.5 { c_in } else { rng.int_range(2, 3) };
    let e = c_in * expansion;
    let g = rng.int_range(1, 2.min(e));
    let mix = MixConvSpec::uniform(e, g, &PartitionScheme::Equal, 1, stride)?;
    let se = Some(SqueezeExciteSpec::from_ratio(c_in, e, 0.5, Activation::Swish)?);
    let spec = InvertedResidualSpec::new(c_in, c_out, expansion, mix, se, Activation::Swish, 1, 1)?;
    let mut params = Params::new();
    let slots = InvertedResidualSlots::alloc(&spec, "b", &mut params, BnSettings::default(), rng)?;
    // move BN scales and shifts off their identity init
    for slot in 0..params.len() {
        if params.name(slot).ends_with(".gamma") || params.name(slot).ends_with(".beta") {
            let s = params.get(slot).shape();
            params.set(slot, Tensor::randn(s, 0.5, 0.5, rng))?;
        }
    }
    let x = randn(shape(2, rng.int_range(3, 4), rng.int_range(3, 4), c_in)?, rng);
    let mut inputs = vec![x];
    inputs.extend(params.values().iter().cloned());
    let run = |v: &[Tensor]| -> Result<(Tape, crate::nn::tape::Var, crate::nn::tape::Var)> {
        let mut p = params.clone();
        for (slot, t) in v[1..].iter().enumerate() {
            p.set(slot, t.clone())?;
        }
        let mut tape = Tape::new();
        let xv = tape.input(v[0].clone());
        let y = inverted_residual_tape(&mut tape, xv, &spec, &slots, &mut p, BnMode::Train)?;
        Ok((tape, xv, y))
    };
    check_fn(
        &inputs,
        |v| run(v).map(|(tape, _, y)| tape.value(y).clone()),
        |v, dy| {
            let (tape, xv, y) = run(v)?;
            let grads = tape.backward(y, dy.clone())?;
            let dx = grads.get(xv).cloned().unwrap_or_else(|| Tensor::zeros(v[0].shape()));
            let shapes: Vec<Shape4> = v[1..].iter().map(Tensor::shape).collect();
            Ok(std::iter::once(dx).chain(grads.param_grads(&shapes)?).collect())
        },
        rng,
    )
}

/// Runs `trials` random trials of `op` and reports the worst relative error.
pub fn gradcheck(op: &str, trials: usize, seed: u64) -> Result<GradcheckReport> {
    let tol = tolerance(op)?;
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        worst = worst.max(trial(op, &mut rng)?);
    }
    Ok(GradcheckReport { op: op.to_string(), trials, max_rel_err: worst, tolerance: tol, passed: worst < tol })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_op_is_lookup_error() {
        assert_eq!(gradcheck("softmax2d", 1, 0), Err(Error::Lookup("softmax2d".into())));
    }

    #[test]
    fn rel_err_floor() {
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        assert!((rel_err(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((rel_err(1e-12, 0.0) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn each_op_passes_a_few_trials() {
        for (op, _) in OPS {
            let r = gradcheck(op, 3, 11).unwrap();
            assert!(r.passed, "{op}: {}", r.max_rel_err);
        }
    }
}
