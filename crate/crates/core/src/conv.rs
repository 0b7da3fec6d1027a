//! Reference convolution kernels: depthwise (optionally dilated), pointwise
//! (optionally grouped) and dense k x k, forward and backward.
//!
//! Summation order is part of the contract. Every output element is reduced
//! sequentially: kernel rows `i` outer, kernel columns `j` inner, input
//! channels innermost for the dense case, all ascending. Taps that fall
//! outside the image are skipped (implicit zero padding).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output extent `ceil(in / stride)`, extra padding goes after.
    Same,
    /// No padding.
    Valid,
}

/// Spatial geometry of a square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
    pub multiplier: usize,
}

impl ConvGeom {
    /// Stride 1, no dilation, `same` padding, multiplier 1.
    pub fn new(kernel: usize) -> Self {
        ConvGeom { kernel, stride: 1, dilation: 1, padding: Padding::Same, multiplier: 1 }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_multiplier(mut self, multiplier: usize) -> Self {
        self.multiplier = multiplier;
        self
    }

    /// Span of the dilated kernel, `(k - 1) * d + 1`.
    pub fn effective_kernel(&self) -> usize {
        (self.kernel - 1) * self.dilation + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Geometry(format!("kernel must be odd and positive, got {}", self.kernel)));
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(Error::Geometry(format!("stride must be 1 or 2, got {}", self.stride)));
        }
        if self.dilation == 0 {
            return Err(Error::Geometry("dilation rate must be at least 1".into()));
        }
        if self.dilation > 1 && self.stride != 1 {
            return Err(Error::Geometry(format!(
                "dilation {} is only supported with stride 1 (stride {})",
                self.dilation, self.stride
            )));
        }
        if self.multiplier == 0 {
            return Err(Error::Geometry("channel multiplier must be at least 1".into()));
        }
        Ok(())
    }
}

/// Padding along one spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AxisPad {
    pub before: usize,
    pub after: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PadAmounts {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

/// Padding and output extent for one spatial axis.
pub fn pad_compute(in_extent: usize, geom: &ConvGeom) -> Result<(AxisPad, usize)> {
    geom.validate()?;
    if in_extent == 0 {
        return Err(Error::Geometry("input extent must be positive".into()));
    }
    let k_eff = geom.effective_kernel();
    match geom.padding {
        Padding::Same => {
            let out = in_extent.div_ceil(geom.stride);
            let total = ((out - 1) * geom.stride + k_eff).saturating_sub(in_extent);
            let before = total / 2;
            Ok((AxisPad { before, after: total - before }, out))
        }
        Padding::Valid => {
            if k_eff > in_extent {
                return Err(Error::Geometry(format!(
                    "valid padding with effective kernel {k_eff} on extent {in_extent}"
                )));
            }
            Ok((AxisPad::default(), (in_extent - k_eff) / geom.stride + 1))
        }
    }
}

/// Padding on both spatial axes plus the output height and width.
pub fn pad_amounts(h: usize, w: usize, geom: &ConvGeom) -> Result<(PadAmounts, usize, usize)> {
    let (ph, out_h) = pad_compute(h, geom)?;
    let (pw, out_w) = pad_compute(w, geom)?;
    Ok((PadAmounts { top: ph.before, bottom: ph.after, left: pw.before, right: pw.after }, out_h, out_w))
}

/// Output spatial extent for an input extent.
pub fn out_extent(in_extent: usize, geom: &ConvGeom) -> Result<usize> {
    pad_compute(in_extent, geom).map(|(_, out)| out)
}

/// Resolved loop bounds shared by the kernels.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Window {
    pub out_h: usize,
    pub out_w: usize,
    pub top: usize,
    pub left: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl Window {
    pub(crate) fn new(in_shape: Shape4, geom: &ConvGeom) -> Result<Self> {
        let (pad, out_h, out_w) = pad_amounts(in_shape.h, in_shape.w, geom)?;
        Ok(Window {
            out_h,
            out_w,
            top: pad.top,
            left: pad.left,
            kernel: geom.kernel,
            stride: geom.stride,
            dilation: geom.dilation,
        })
    }

    /// Input coordinate read by output `o` at tap `t`, if inside `extent`.
    #[inline]
    fn source(&self, o: usize, t: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + t * self.dilation) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    #[inline]
    pub(crate) fn row(&self, oy: usize, i: usize, h: usize) -> Option<usize> {
        self.source(oy, i, self.top, h)
    }

    #[inline]
    pub(crate) fn col(&self, ox: usize, j: usize, w: usize) -> Option<usize> {
        self.source(ox, j, self.left, w)
    }
}

/// Expected depthwise kernel shape `(k, k, c, m)`.
pub fn depthwise_kernel_shape(kernel: usize, channels: usize, multiplier: usize) -> Result<Shape4> {
    Shape4::new(kernel, kernel, channels, multiplier)
}

fn check_depthwise(x: &Tensor, w: &Tensor, geom: &ConvGeom) -> Result<Window> {
    geom.validate()?;
    let ws = w.shape();
    if ws.n != geom.kernel || ws.h != geom.kernel || ws.c != geom.multiplier {
        return Err(Error::Shape(format!(
            "depthwise kernel {ws} does not match k={} m={}",
            geom.kernel, geom.multiplier
        )));
    }
    if ws.w != x.shape().c {
        return Err(Error::Shape(format!(
            "depthwise kernel has {} channels, input has {}",
            ws.w,
            x.shape().c
        )));
    }
    Window::new(x.shape(), geom)
}

/// Depthwise kernel over a channel range of `x`, writing a channel range of
/// `out`. Shared by [`depthwise_forward`] and the fused MixConv path.
///
/// Reads input channels `x_off..x_off + cg` and writes output channels
/// `y_off..y_off + cg * m`; output channel `z` reads input channel `z / m`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn depthwise_into(
    x: &[f64],
    xs: Shape4,
    x_off: usize,
    cg: usize,
    m: usize,
    w: &[f64],
    win: &Window,
    y: &mut [f64],
    y_c: usize,
    y_off: usize,
) {
    let k = win.kernel;
    let width = cg * m;
    for n in 0..xs.n {
        for oy in 0..win.out_h {
            for ox in 0..win.out_w {
                let ybase = ((n * win.out_h + oy) * win.out_w + ox) * y_c + y_off;
                let out = &mut y[ybase..ybase + width];
                out.fill(0.0);
                // taps outermost, channels innermost: every output still
                // accumulates its taps in (i, j) order
                for i in 0..k {
                    let Some(iy) = win.row(oy, i, xs.h) else { continue };
                    for j in 0..k {
                        let Some(ix) = win.col(ox, j, xs.w) else { continue };
                        let xb = ((n * xs.h + iy) * xs.w + ix) * xs.c + x_off;
                        let xrow = &x[xb..xb + cg];
                        let wrow = &w[(i * k + j) * width..(i * k + j + 1) * width];
                        if m == 1 {
                            for ((o, &xv), &wv) in out.iter_mut().zip(xrow).zip(wrow) {
                                *o += xv * wv;
                            }
                        } else {
                            for ((o, &xv), wv) in out.chunks_exact_mut(m).zip(xrow).zip(wrow.chunks_exact(m)) {
                                for (oo, &wq) in o.iter_mut().zip(wv) {
                                    *oo += xv * wq;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`depthwise_into`]: accumulates into `dx` (input channel
/// range) and `dw`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn depthwise_adjoint_into(
    x: &[f64],
    xs: Shape4,
    x_off: usize,
    cg: usize,
    m: usize,
    w: &[f64],
    win: &Window,
    dy: &[f64],
    y_c: usize,
    y_off: usize,
    dx: &mut [f64],
    dw: &mut [f64],
) {
    let k = win.kernel;
    let width = cg * m;
    for n in 0..xs.n {
        for oy in 0..win.out_h {
            for ox in 0..win.out_w {
                let ybase = ((n * win.out_h + oy) * win.out_w + ox) * y_c + y_off;
                let g = &dy[ybase..ybase + width];
                for i in 0..k {
                    let Some(iy) = win.row(oy, i, xs.h) else { continue };
                    for j in 0..k {
                        let Some(ix) = win.col(ox, j, xs.w) else { continue };
                        let xb = ((n * xs.h + iy) * xs.w + ix) * xs.c + x_off;
                        let wb = (i * k + j) * width;
                        let wrow = &w[wb..wb + width];
                        let dwrow = &mut dw[wb..wb + width];
                        let xrow = &x[xb..xb + cg];
                        let dxrow = &mut dx[xb..xb + cg];
                        if m == 1 {
                            for (((d, dwq), (&xv, &wq)), &gq) in
                                dxrow.iter_mut().zip(dwrow.iter_mut()).zip(xrow.iter().zip(wrow)).zip(g)
                            {
                                *d += wq * gq;
                                *dwq += xv * gq;
                            }
                        } else {
                            for ch in 0..cg {
                                let mut gx = 0.0;
                                for q in ch * m..(ch + 1) * m {
                                    gx += wrow[q] * g[q];
                                    dwrow[q] += xrow[ch] * g[q];
                                }
                                dxrow[ch] += gx;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Depthwise convolution with kernel `w` shaped `(k, k, c, m)`.
pub fn depthwise_forward(x: &Tensor, w: &Tensor, geom: &ConvGeom) -> Result<Tensor> {
    let win = check_depthwise(x, w, geom)?;
    let xs = x.shape();
    let m = geom.multiplier;
    let ys = Shape4::new(xs.n, win.out_h, win.out_w, xs.c * m)?;
    let mut y = vec![0.0; ys.len()];
    depthwise_into(x.data(), xs, 0, xs.c, m, w.data(), &win, &mut y, ys.c, 0);
    Tensor::from_vec(ys, y)
}

/// Returns `(dx, dw)` for upstream gradient `dy`.
pub fn depthwise_backward(x: &Tensor, w: &Tensor, geom: &ConvGeom, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    let win = check_depthwise(x, w, geom)?;
    let xs = x.shape();
    let m = geom.multiplier;
    let ys = Shape4::new(xs.n, win.out_h, win.out_w, xs.c * m)?;
    if dy.shape() != ys {
        return Err(Error::Shape(format!("dy is {}, forward output is {ys}", dy.shape())));
    }
    let mut dx = vec![0.0; xs.len()];
    let mut dw = vec![0.0; w.len()];
    depthwise_adjoint_into(x.data(), xs, 0, xs.c, m, w.data(), &win, dy.data(), ys.c, 0, &mut dx, &mut dw);
    Ok((Tensor::from_vec(xs, dx)?, Tensor::from_vec(w.shape(), dw)?))
}

fn check_pointwise(x: &Tensor, w: &Tensor, groups: usize) -> Result<(usize, usize)> {
    let xs = x.shape();
    let ws = w.shape();
    if groups == 0 {
        return Err(Error::Shape("pointwise groups must be positive".into()));
    }
    if ws.n != 1 || ws.h != 1 {
        return Err(Error::Shape(format!("pointwise kernel must be (1,1,c_in/g,c_out), got {ws}")));
    }
    let c_out = ws.c;
    if xs.c % groups != 0 || c_out % groups != 0 {
        return Err(Error::Shape(format!(
            "groups {groups} must divide c_in {} and c_out {c_out}",
            xs.c
        )));
    }
    if ws.w * groups != xs.c {
        return Err(Error::Shape(format!(
            "pointwise kernel expects {} input channels, input has {}",
            ws.w * groups,
            xs.c
        )));
    }
    Ok((xs.c / groups, c_out / groups))
}

/// 1x1 convolution. `w` is shaped `(1, 1, c_in / groups, c_out)`; output
/// channel `o` belongs to group `o / (c_out / groups)` and reads only that
/// group's input channels, summed in ascending order.
pub fn pointwise_forward(x: &Tensor, w: &Tensor, groups: usize) -> Result<Tensor> {
    let (cin_g, cout_g) = check_pointwise(x, w, groups)?;
    let xs = x.shape();
    let c_out = w.shape().c;
    let ys = xs.with_channels(c_out)?;
    let wd = w.data();
    let mut y = vec![0.0; ys.len()];
    for (xp, yp) in x.data().chunks_exact(xs.c).zip(y.chunks_exact_mut(c_out)) {
        for g in 0..groups {
            let out = &mut yp[g * cout_g..(g + 1) * cout_g];
            for ci in 0..cin_g {
                let xv = xp[g * cin_g + ci];
                let row = &wd[ci * c_out + g * cout_g..ci * c_out + (g + 1) * cout_g];
                for (o, &wv) in out.iter_mut().zip(row) {
                    *o += xv * wv;
                }
            }
        }
    }
    Tensor::from_vec(ys, y)
}

pub fn pointwise_backward(x: &Tensor, w: &Tensor, groups: usize, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    let (cin_g, cout_g) = check_pointwise(x, w, groups)?;
    let xs = x.shape();
    let c_out = w.shape().c;
    if dy.shape() != xs.with_channels(c_out)? {
        return Err(Error::Shape(format!("dy is {}, expected {} channels", dy.shape(), c_out)));
    }
    let wd = w.data();
    let mut dx = vec![0.0; xs.len()];
    let mut dw = vec![0.0; w.len()];
    for ((xp, dyp), dxp) in x.data().chunks_exact(xs.c).zip(dy.data().chunks_exact(c_out)).zip(dx.chunks_exact_mut(xs.c)) {
        for g in 0..groups {
            let gy = &dyp[g * cout_g..(g + 1) * cout_g];
            for ci in 0..cin_g {
                let xi = g * cin_g + ci;
                let lo = ci * c_out + g * cout_g;
                let row = &wd[lo..lo + cout_g];
                dxp[xi] = row.iter().zip(gy).map(|(w, g)| w * g).sum();
                for (d, &gv) in dw[lo..lo + cout_g].iter_mut().zip(gy) {
                    *d += xp[xi] * gv;
                }
            }
        }
    }
    Ok((Tensor::from_vec(xs, dx)?, Tensor::from_vec(w.shape(), dw)?))
}

fn check_conv(x: &Tensor, w: &Tensor, geom: &ConvGeom) -> Result<Window> {
    geom.validate()?;
    let ws = w.shape();
    if ws.n != geom.kernel || ws.h != geom.kernel || ws.w != x.shape().c {
        return Err(Error::Shape(format!(
            "conv kernel {ws} does not match k={} c_in={}",
            geom.kernel,
            x.shape().c
        )));
    }
    if geom.multiplier != 1 {
        return Err(Error::Geometry("dense convolution takes no channel multiplier".into()));
    }
    Window::new(x.shape(), geom)
}

/// Dense k x k convolution with kernel `(k, k, c_in, c_out)`, used for stems.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, geom: &ConvGeom) -> Result<Tensor> {
    let win = check_conv(x, w, geom)?;
    let xs = x.shape();
    let (k, c_out) = (geom.kernel, w.shape().c);
    let ys = Shape4::new(xs.n, win.out_h, win.out_w, c_out)?;
    let (xd, wd) = (x.data(), w.data());
    let mut y = vec![0.0; ys.len()];
    for n in 0..xs.n {
        for oy in 0..win.out_h {
            for ox in 0..win.out_w {
                let ybase = ((n * win.out_h + oy) * win.out_w + ox) * c_out;
                let out = &mut y[ybase..ybase + c_out];
                // every output sums its terms in (i, j, ci) order
                for i in 0..k {
                    let Some(iy) = win.row(oy, i, xs.h) else { continue };
                    for j in 0..k {
                        let Some(ix) = win.col(ox, j, xs.w) else { continue };
                        let xb = ((n * xs.h + iy) * xs.w + ix) * xs.c;
                        let wb = (i * k + j) * xs.c;
                        for ci in 0..xs.c {
                            let xv = xd[xb + ci];
                            let row = &wd[(wb + ci) * c_out..(wb + ci + 1) * c_out];
                            for (o, &wv) in out.iter_mut().zip(row) {
                                *o += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(ys, y)
}

pub fn conv2d_backward(x: &Tensor, w: &Tensor, geom: &ConvGeom, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    let win = check_conv(x, w, geom)?;
    let xs = x.shape();
    let (k, c_out) = (geom.kernel, w.shape().c);
    let ys = Shape4::new(xs.n, win.out_h, win.out_w, c_out)?;
    if dy.shape() != ys {
        return Err(Error::Shape(format!("dy is {}, forward output is {ys}", dy.shape())));
    }
    let (xd, wd, dyd) = (x.data(), w.data(), dy.data());
    let mut dx = vec![0.0; xs.len()];
    let mut dw = vec![0.0; w.len()];
    for n in 0..xs.n {
        for oy in 0..win.out_h {
            for ox in 0..win.out_w {
                let ybase = ((n * win.out_h + oy) * win.out_w + ox) * c_out;
                for i in 0..k {
                    let Some(iy) = win.row(oy, i, xs.h) else { continue };
                    for j in 0..k {
                        let Some(ix) = win.col(ox, j, xs.w) else { continue };
                        let xb = ((n * xs.h + iy) * xs.w + ix) * xs.c;
                        let wb = (i * k + j) * xs.c;
                        for ci in 0..xs.c {
                            let row = (wb + ci) * c_out;
                            let mut gx = 0.0;
                            for o in 0..c_out {
                                let g = dyd[ybase + o];
                                gx += wd[row + o] * g;
                                dw[row + o] += xd[xb + ci] * g;
                            }
                            dx[xb + ci] += gx;
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::from_vec(xs, dx)?, Tensor::from_vec(w.shape(), dw)?))
}
