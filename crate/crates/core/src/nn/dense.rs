//! Pooling, fully connected and per-channel broadcast helpers.
//!
//! Vectors are carried as `(n, 1, 1, d)` tensors so that a dense layer is a
//! pointwise convolution plus a bias.

use crate::conv::{pointwise_backward, pointwise_forward};
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor};

/// Mean over `(h, w)` per image and channel, summed row-major then divided.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    let area = s.h * s.w;
    let mut out = vec![0.0; s.n * s.c];
    for n in 0..s.n {
        let acc = &mut out[n * s.c..(n + 1) * s.c];
        for px in x.data()[n * area * s.c..(n + 1) * area * s.c].chunks_exact(s.c) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= area as f64);
    }
    Tensor::from_vec(Shape4::new(s.n, 1, 1, s.c)?, out)
}

pub fn global_avg_pool_backward(in_shape: Shape4, dy: &Tensor) -> Result<Tensor> {
    let s = in_shape;
    if dy.shape() != Shape4::new(s.n, 1, 1, s.c)? {
        return Err(Error::Shape(format!("pool gradient {} for input {s}", dy.shape())));
    }
    let area = (s.h * s.w) as f64;
    let mut dx = Vec::with_capacity(s.len());
    for n in 0..s.n {
        let g = &dy.data()[n * s.c..(n + 1) * s.c];
        for _ in 0..s.h * s.w {
            dx.extend(g.iter().map(|v| v / area));
        }
    }
    Tensor::from_vec(s, dx)
}

/// Adds `b` (shape `(1, 1, 1, c)`) to every pixel.
pub fn add_bias(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let c = x.shape().c;
    if b.shape() != Shape4::new(1, 1, 1, c)? {
        return Err(Error::Shape(format!("bias {} for {c} channels", b.shape())));
    }
    let data = x.data().chunks_exact(c).flat_map(|px| px.iter().zip(b.data()).map(|(v, bb)| v + bb)).collect();
    Tensor::from_vec(x.shape(), data)
}

/// Gradient of [`add_bias`] with respect to the bias.
pub fn bias_grad(dy: &Tensor) -> Result<Tensor> {
    let c = dy.shape().c;
    let mut db = vec![0.0; c];
    for px in dy.data().chunks_exact(c) {
        for (d, &g) in db.iter_mut().zip(px) {
            *d += g;
        }
    }
    Tensor::from_vec(Shape4::new(1, 1, 1, c)?, db)
}

/// `x * gate` with `gate` shaped `(n, 1, 1, c)` broadcast over `(h, w)`.
pub fn scale_channels(x: &Tensor, gate: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if gate.shape() != Shape4::new(s.n, 1, 1, s.c)? {
        return Err(Error::Shape(format!("gate {} for input {s}", gate.shape())));
    }
    let area = s.h * s.w;
    let mut y = Vec::with_capacity(s.len());
    for (i, px) in x.data().chunks_exact(s.c).enumerate() {
        let g = &gate.data()[(i / area) * s.c..(i / area + 1) * s.c];
        y.extend(px.iter().zip(g).map(|(v, gv)| v * gv));
    }
    Tensor::from_vec(s, y)
}

/// Returns `(dx, dgate)`.
pub fn scale_channels_backward(x: &Tensor, gate: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    let s = x.shape();
    dy.expect_same_shape(x)?;
    let dx = scale_channels(dy, gate)?;
    let area = s.h * s.w;
    let mut dgate = vec![0.0; s.n * s.c];
    for (i, (px, gp)) in x.data().chunks_exact(s.c).zip(dy.data().chunks_exact(s.c)).enumerate() {
        let dg = &mut dgate[(i / area) * s.c..(i / area + 1) * s.c];
        for z in 0..s.c {
            dg[z] += px[z] * gp[z];
        }
    }
    Ok((dx, Tensor::from_vec(gate.shape(), dgate)?))
}

/// Fully connected layer: `w` is `(1, 1, d_in, d_out)`, `b` is `(1, 1, 1, d_out)`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    add_bias(&pointwise_forward(x, w, 1)?, b)
}

/// Returns `(dx, dw, db)`.
pub fn dense_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (dx, dw) = pointwise_backward(x, w, 1, dy)?;
    Ok((dx, dw, bias_grad(dy)?))
}
