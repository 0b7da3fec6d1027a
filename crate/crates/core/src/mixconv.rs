//! Mixed depthwise convolution.
//!
//! The input channels are split into `g` contiguous groups, group `t` is
//! convolved depthwise with its own `k_t x k_t` kernel, and the group outputs
//! are concatenated in group order. With one group this is exactly a vanilla
//! depthwise convolution.

use serde::{Deserialize, Serialize};

use crate::conv::{self, ConvGeom, Window};
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor};

/// How channels are assigned to groups.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PartitionScheme {
    /// Equal counts; the remainder goes one channel each to the leading groups.
    #[default]
    Equal,
    /// Group `i` gets `max(1, floor(c / 2^i))`, the last group takes the rest.
    Exponential,
    Explicit(Vec<usize>),
}

impl PartitionScheme {
    pub fn partition(&self, channels: usize, groups: usize) -> Result<Vec<usize>> {
        match self {
            PartitionScheme::Equal => partition_equal(channels, groups),
            PartitionScheme::Exponential => partition_exponential(channels, groups),
            PartitionScheme::Explicit(counts) => {
                if counts.len() != groups {
                    return Err(Error::Partition(format!(
                        "{} explicit counts for {groups} groups",
                        counts.len()
                    )));
                }
                if counts.contains(&0) || counts.iter().sum::<usize>() != channels {
                    return Err(Error::Partition(format!(
                        "explicit counts {counts:?} must be positive and sum to {channels}"
                    )));
                }
                Ok(counts.clone())
            }
        }
    }
}

pub fn partition_equal(channels: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || groups > channels {
        return Err(Error::Partition(format!("cannot split {channels} channels into {groups} groups")));
    }
    let (base, rem) = (channels / groups, channels % groups);
    Ok((0..groups).map(|i| base + usize::from(i < rem)).collect())
}

pub fn partition_exponential(channels: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || groups > channels {
        return Err(Error::Partition(format!("cannot split {channels} channels into {groups} groups")));
    }
    let mut counts: Vec<usize> = (1..groups)
        .map(|i| {
            let share = if i >= usize::BITS as usize { 0 } else { channels >> i };
            share.max(1)
        })
        .collect();
    let head: usize = counts.iter().sum();
    if head >= channels {
        return Err(Error::Partition(format!(
            "exponential split of {channels} channels into {groups} groups leaves the last group empty"
        )));
    }
    counts.push(channels - head);
    Ok(counts)
}

/// Kernel sizes `3, 5, ..., 2g + 1`.
pub fn default_kernels(groups: usize) -> Vec<usize> {
    (1..=groups).map(|t| 2 * t + 1).collect()
}

/// Shape of a mixed depthwise convolution.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MixConvSpec {
    kernels: Vec<usize>,
    channels: Vec<usize>,
    dilations: Vec<usize>,
    multiplier: usize,
    stride: usize,
}

impl MixConvSpec {
    /// Undilated spec; kernels and channel counts are per group.
    pub fn new(kernels: Vec<usize>, channels: Vec<usize>, multiplier: usize, stride: usize) -> Result<Self> {
        let dilations = vec![1; kernels.len()];
        Self::with_dilations(kernels, channels, dilations, multiplier, stride)
    }

    pub fn with_dilations(
        kernels: Vec<usize>,
        channels: Vec<usize>,
        dilations: Vec<usize>,
        multiplier: usize,
        stride: usize,
    ) -> Result<Self> {
        let spec = MixConvSpec { kernels, channels, dilations, multiplier, stride };
        spec.validate()?;
        Ok(spec)
    }

    /// `g` groups with the default kernel schedule and the given partition.
    pub fn uniform(
        channels: usize,
        groups: usize,
        scheme: &PartitionScheme,
        multiplier: usize,
        stride: usize,
    ) -> Result<Self> {
        let counts = scheme.partition(channels, groups)?;
        Self::new(default_kernels(groups), counts, multiplier, stride)
    }

    /// Vanilla depthwise convolution as a one-group spec.
    pub fn depthwise(kernel: usize, channels: usize, multiplier: usize, stride: usize) -> Result<Self> {
        Self::new(vec![kernel], vec![channels], multiplier, stride)
    }

    fn validate(&self) -> Result<()> {
        let g = self.kernels.len();
        if g == 0 {
            return Err(Error::Spec("at least one group is required".into()));
        }
        if self.channels.len() != g || self.dilations.len() != g {
            return Err(Error::Spec(format!(
                "{g} kernels, {} channel counts and {} dilations must agree",
                self.channels.len(),
                self.dilations.len()
            )));
        }
        if self.channels.contains(&0) {
            return Err(Error::Spec(format!("empty group in {:?}", self.channels)));
        }
        for t in 0..g {
            self.group_geom(t).validate().map_err(|e| match e {
                Error::Geometry(msg) => Error::Geometry(format!("group {t}: {msg}")),
                other => other,
            })?;
        }
        let spans: Vec<usize> = (0..g).map(|t| self.group_geom(t).effective_kernel()).collect();
        if spans.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Spec(format!("effective kernel sizes {spans:?} must strictly increase")));
        }
        Ok(())
    }

    pub fn groups(&self) -> usize {
        self.kernels.len()
    }

    pub fn kernels(&self) -> &[usize] {
        &self.kernels
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn dilations(&self) -> &[usize] {
        &self.dilations
    }

    pub fn multiplier(&self) -> usize {
        self.multiplier
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn in_channels(&self) -> usize {
        self.channels.iter().sum()
    }

    pub fn out_channels(&self) -> usize {
        self.multiplier * self.in_channels()
    }

    /// First input channel of each group.
    pub fn offsets(&self) -> Vec<usize> {
        self.channels
            .iter()
            .scan(0, |acc, &c| {
                let start = *acc;
                *acc += c;
                Some(start)
            })
            .collect()
    }

    pub fn group_geom(&self, t: usize) -> ConvGeom {
        ConvGeom::new(self.kernels[t])
            .with_stride(self.stride)
            .with_dilation(self.dilations[t])
            .with_multiplier(self.multiplier)
    }

    pub fn kernel_shape(&self, t: usize) -> Result<Shape4> {
        conv::depthwise_kernel_shape(self.kernels[t], self.channels[t], self.multiplier)
    }

    /// Sum over groups of `k_t^2 * c_t * m`.
    pub fn param_count(&self) -> u64 {
        self.kernels
            .iter()
            .zip(&self.channels)
            .map(|(&k, &c)| (k * k * c * self.multiplier) as u64)
            .sum()
    }

    /// Multiply-adds at the given input resolution.
    pub fn madds(&self, in_h: usize, in_w: usize) -> Result<u64> {
        let geom = self.group_geom(0);
        let (_, out_h, out_w) = conv::pad_amounts(in_h, in_w, &geom)?;
        Ok((out_h * out_w) as u64 * self.param_count())
    }

    /// Output spatial extent; identical across groups under `same` padding.
    pub fn out_hw(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        let (_, out_h, out_w) = conv::pad_amounts(in_h, in_w, &self.group_geom(0))?;
        Ok((out_h, out_w))
    }
}

fn check(x: &Tensor, kernels: &[Tensor], spec: &MixConvSpec) -> Result<Vec<Window>> {
    let xs = x.shape();
    if xs.c != spec.in_channels() {
        return Err(Error::Spec(format!(
            "input has {} channels, spec partitions {}",
            xs.c,
            spec.in_channels()
        )));
    }
    if kernels.len() != spec.groups() {
        return Err(Error::Spec(format!("{} kernels for {} groups", kernels.len(), spec.groups())));
    }
    let mut windows = Vec::with_capacity(spec.groups());
    for (t, w) in kernels.iter().enumerate() {
        let expected = spec.kernel_shape(t)?;
        if w.shape() != expected {
            return Err(Error::Shape(format!("group {t} kernel is {}, expected {expected}", w.shape())));
        }
        windows.push(Window::new(xs, &spec.group_geom(t))?);
    }
    Ok(windows)
}

/// Fused forward pass: each group reads its channel range of `x` in place
/// and writes its range of the output directly.
pub fn mixconv_forward(x: &Tensor, kernels: &[Tensor], spec: &MixConvSpec) -> Result<Tensor> {
    let windows = check(x, kernels, spec)?;
    let xs = x.shape();
    let m = spec.multiplier;
    let (out_h, out_w) = (windows[0].out_h, windows[0].out_w);
    let ys = Shape4::new(xs.n, out_h, out_w, spec.out_channels())?;
    let mut y = vec![0.0; ys.len()];
    for (t, off) in spec.offsets().into_iter().enumerate() {
        conv::depthwise_into(
            x.data(),
            xs,
            off,
            spec.channels[t],
            m,
            kernels[t].data(),
            &windows[t],
            &mut y,
            ys.c,
            off * m,
        );
    }
    Tensor::from_vec(ys, y)
}

/// Returns `dx` and one kernel gradient per group.
pub fn mixconv_backward(
    x: &Tensor,
    kernels: &[Tensor],
    spec: &MixConvSpec,
    dy: &Tensor,
) -> Result<(Tensor, Vec<Tensor>)> {
    let windows = check(x, kernels, spec)?;
    let xs = x.shape();
    let m = spec.multiplier;
    let ys = Shape4::new(xs.n, windows[0].out_h, windows[0].out_w, spec.out_channels())?;
    if dy.shape() != ys {
        return Err(Error::Shape(format!("dy is {}, forward output is {ys}", dy.shape())));
    }
    let mut dx = vec![0.0; xs.len()];
    let mut dws = Vec::with_capacity(spec.groups());
    for (t, off) in spec.offsets().into_iter().enumerate() {
        let mut dw = vec![0.0; kernels[t].len()];
        conv::depthwise_adjoint_into(
            x.data(),
            xs,
            off,
            spec.channels[t],
            m,
            kernels[t].data(),
            &windows[t],
            dy.data(),
            ys.c,
            off * m,
            &mut dx,
            &mut dw,
        );
        dws.push(Tensor::from_vec(kernels[t].shape(), dw)?);
    }
    Ok((Tensor::from_vec(xs, dx)?, dws))
}
