//! Reference implementations and the seeded equivalence suites built on them.

use serde::Serialize;

use crate::conv::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::mixconv::{self, MixConvSpec, PartitionScheme};
use crate::tensor::{Rng, Shape4, Tensor};

pub const SUITES: [&str; 4] = ["mixconv-equivalence", "mixconv-reduction", "depthwise-naive", "pointwise-naive"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub suite: String,
    pub cases: usize,
    pub max_abs_diff: f64,
    pub passed: bool,
}

/// Depthwise convolution over an explicitly zero-padded copy of `x`.
/// Returns the output and the number of multiply-adds executed.
pub fn naive_depthwise(x: &Tensor, w: &Tensor, geom: &ConvGeom) -> Result<(Tensor, u64)> {
    geom.validate()?;
    let xs = x.shape();
    let (pad, oh, ow) = conv::pad_amounts(xs.h, xs.w, geom)?;
    let (ph, pw) = (xs.h + pad.top + pad.bottom, xs.w + pad.left + pad.right);
    let mut padded = vec![0.0; xs.n * ph * pw * xs.c];
    for n in 0..xs.n {
        for y in 0..xs.h {
            for xx in 0..xs.w {
                for z in 0..xs.c {
                    padded[((n * ph + y + pad.top) * pw + xx + pad.left) * xs.c + z] = x.get(n, y, xx, z);
                }
            }
        }
    }
    let (k, s, d, m) = (geom.kernel, geom.stride, geom.dilation, geom.multiplier);
    if w.shape() != conv::depthwise_kernel_shape(k, xs.c, m)? {
        return Err(Error::Shape(format!("kernel {} does not match geometry", w.shape())));
    }
    let ys = Shape4::new(xs.n, oh, ow, xs.c * m)?;
    let mut y = vec![0.0; ys.len()];
    let mut madds = 0u64;
    for n in 0..xs.n {
        for oy in 0..oh {
            for ox in 0..ow {
                for z in 0..ys.c {
                    let (ci, q) = (z / m, z % m);
                    let mut acc = 0.0;
                    for i in 0..k {
                        for j in 0..k {
                            let v = padded[((n * ph + oy * s + i * d) * pw + ox * s + j * d) * xs.c + ci];
                            acc += v * w.get(i, j, ci, q);
                            madds += 1;
                        }
                    }
                    y[ys.index(n, oy, ox, z)] = acc;
                }
            }
        }
    }
    Ok((Tensor::from_vec(ys, y)?, madds))
}

/// Grouped 1x1 convolution by direct summation.
pub fn naive_pointwise(x: &Tensor, w: &Tensor, groups: usize) -> Result<(Tensor, u64)> {
    let xs = x.shape();
    let c_out = w.shape().c;
    if groups == 0 || xs.c % groups != 0 || c_out % groups != 0 || w.shape().w * groups != xs.c {
        return Err(Error::Shape(format!("pointwise kernel {} with {groups} groups on {xs}", w.shape())));
    }
    let (cin_g, cout_g) = (xs.c / groups, c_out / groups);
    let ys = xs.with_channels(c_out)?;
    let mut y = vec![0.0; ys.len()];
    let mut madds = 0u64;
    for n in 0..xs.n {
        for py in 0..xs.h {
            for px in 0..xs.w {
                for o in 0..c_out {
                    let g = o / cout_g;
                    let mut acc = 0.0;
                    for ci in 0..cin_g {
                        acc += x.get(n, py, px, g * cin_g + ci) * w.get(0, 0, ci, o);
                        madds += 1;
                    }
                    y[ys.index(n, py, px, o)] = acc;
                }
            }
        }
    }
    Ok((Tensor::from_vec(ys, y)?, madds))
}

/// MixConv as split, per-group depthwise, concatenate.
pub fn mixconv_composed(x: &Tensor, kernels: &[Tensor], spec: &MixConvSpec) -> Result<Tensor> {
    let mut parts = Vec::with_capacity(spec.groups());
    for (t, off) in spec.offsets().into_iter().enumerate() {
        let slice = x.slice_channels(off, off + spec.channels()[t])?;
        parts.push(conv::depthwise_forward(&slice, &kernels[t], &spec.group_geom(t))?);
    }
    Tensor::concat_channels(&parts)
}

fn random_input(rng: &mut Rng, c: usize) -> Result<Tensor> {
    let s = Shape4::new(rng.int_range(1, 3), rng.int_range(1, 12), rng.int_range(1, 12), c)?;
    Ok(Tensor::randn(s, 0.0, 1.0, rng))
}

fn case(suite: &str, rng: &mut Rng) -> Result<f64> {
    match suite {
        "mixconv-equivalence" => {
            let g = rng.int_range(1, 5);
            let c = rng.int_range(g, 3 * g + 2);
            let exp = rng.uniform() < 0.5 && PartitionScheme::Exponential.partition(c, g).is_ok();
            let scheme = if exp { PartitionScheme::Exponential } else { PartitionScheme::Equal };
            let spec = MixConvSpec::uniform(c, g, &scheme, rng.int_range(1, 2), rng.int_range(1, 2))?;
            let x = random_input(rng, c)?;
            let kernels: Vec<Tensor> =
                (0..g).map(|t| Ok(Tensor::randn(spec.kernel_shape(t)?, 0.0, 1.0, rng))).collect::<Result<_>>()?;
            mixconv::mixconv_forward(&x, &kernels, &spec)?.max_abs_diff(&mixconv_composed(&x, &kernels, &spec)?)
        }
        "mixconv-reduction" => {
            let k = 2 * rng.int_range(0, 4) + 1;
            let c = rng.int_range(1, 8);
            let (m, s) = (rng.int_range(1, 2), rng.int_range(1, 2));
            let spec = MixConvSpec::depthwise(k, c, m, s)?;
            let x = random_input(rng, c)?;
            let w = Tensor::randn(spec.kernel_shape(0)?, 0.0, 1.0, rng);
            let a = mixconv::mixconv_forward(&x, std::slice::from_ref(&w), &spec)?;
            let b = conv::depthwise_forward(&x, &w, &spec.group_geom(0))?;
            Ok(if a.to_le_bytes() == b.to_le_bytes() { 0.0 } else { a.max_abs_diff(&b)?.max(f64::MIN_POSITIVE) })
        }
        "depthwise-naive" => {
            let k = 2 * rng.int_range(0, 3) + 1;
            let s = rng.int_range(1, 2);
            let d = if s == 1 { rng.int_range(1, 3) } else { 1 };
            let geom = ConvGeom::new(k).with_stride(s).with_dilation(d).with_multiplier(rng.int_range(1, 2));
            let c = rng.int_range(1, 6);
            let x = random_input(rng, c)?;
            let w = Tensor::randn(conv::depthwise_kernel_shape(k, c, geom.multiplier)?, 0.0, 1.0, rng);
            conv::depthwise_forward(&x, &w, &geom)?.max_abs_diff(&naive_depthwise(&x, &w, &geom)?.0)
        }
        "pointwise-naive" => {
            let groups = rng.int_range(1, 4);
            let (ci, co) = (groups * rng.int_range(1, 4), groups * rng.int_range(1, 4));
            let x = random_input(rng, ci)?;
            let w = Tensor::randn(Shape4::new(1, 1, ci / groups, co)?, 0.0, 1.0, rng);
            conv::pointwise_forward(&x, &w, groups)?.max_abs_diff(&naive_pointwise(&x, &w, groups)?.0)
        }
        other => Err(Error::Lookup(other.to_string())),
    }
}

/// Runs `cases` seeded cases; every suite demands an exact match.
pub fn run_suite(suite: &str, cases: usize, seed: u64) -> Result<OracleReport> {
    if !SUITES.contains(&suite) {
        return Err(Error::Lookup(suite.to_string()));
    }
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        worst = worst.max(case(suite, &mut rng)?);
    }
    Ok(OracleReport { suite: suite.to_string(), cases, max_abs_diff: worst, passed: worst == 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_are_exact() {
        for s in SUITES {
            let r = run_suite(s, 10, 4).unwrap();
            assert!(r.passed, "{s}: {}", r.max_abs_diff);
        }
        assert!(matches!(run_suite("winograd", 1, 0), Err(Error::Lookup(_))));
    }

    #[test]
    fn naive_counts_match_closed_form() {
        let geom = ConvGeom::new(3);
        let x = Tensor::zeros(Shape4::new(1, 56, 56, 32).unwrap());
        let w = Tensor::zeros(conv::depthwise_kernel_shape(3, 32, 1).unwrap());
        assert_eq!(naive_depthwise(&x, &w, &geom).unwrap().1, 903_168);
    }
}
