//! Reference implementations written independently of the library kernels.

#![allow(dead_code)]

use mixconv::{Rng, Shape4, Tensor};

/// SAME padding before an axis, from the closed form.
pub fn pad_before(input: usize, k: usize, stride: usize, dilation: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let span = (k - 1) * dilation + 1;
    let total = ((out - 1) * stride + span).saturating_sub(input);
    (total / 2, out)
}

/// Depthwise convolution straight from the definition, counting every
/// multiply-add including taps that land in the zero padding.
pub fn depthwise_reference(
    x: &Tensor,
    w: &Tensor,
    k: usize,
    stride: usize,
    dilation: usize,
    m: usize,
) -> (Tensor, u64) {
    let s = x.shape();
    let (top, oh) = pad_before(s.h, k, stride, dilation);
    let (left, ow) = pad_before(s.w, k, stride, dilation);
    let ys = Shape4::new(s.n, oh, ow, s.c * m).unwrap();
    let mut out = vec![0.0; ys.len()];
    let mut count = 0;
    for n in 0..s.n {
        for oy in 0..oh {
            for ox in 0..ow {
                for z in 0..s.c * m {
                    let mut acc = 0.0;
                    for i in 0..k {
                        for j in 0..k {
                            count += 1;
                            let y = (oy * stride + i * dilation) as isize - top as isize;
                            let xx = (ox * stride + j * dilation) as isize - left as isize;
                            if y < 0 || xx < 0 || y as usize >= s.h || xx as usize >= s.w {
                                continue;
                            }
                            acc += x.get(n, y as usize, xx as usize, z / m) * w.get(i, j, z / m, z % m);
                        }
                    }
                    out[ys.index(n, oy, ox, z)] = acc;
                }
            }
        }
    }
    (Tensor::from_vec(ys, out).unwrap(), count)
}

pub fn random(shape: Shape4, rng: &mut Rng) -> Tensor {
    Tensor::randn(shape, 0.0, 1.0, rng)
}

pub fn shape(n: usize, h: usize, w: usize, c: usize) -> Shape4 {
    Shape4::new(n, h, w, c).unwrap()
}
