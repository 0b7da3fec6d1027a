//! Batch normalization over the (n, h, w) axes of an NHWC tensor.

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and update the running statistics.
    Train,
    /// Normalize with the running statistics.
    Infer,
}

/// Running statistics plus the stabilizer and decay used to maintain them.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self::with_settings(channels, DEFAULT_EPSILON, DEFAULT_MOMENTUM)
    }

    pub fn with_settings(channels: usize, epsilon: f64, momentum: f64) -> Self {
        RunningStats { mean: vec![0.0; channels], var: vec![1.0; channels], epsilon, momentum }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub stats: RunningStats,
}

impl BatchNormState {
    /// `gamma = 1`, `beta = 0`, running mean 0 and variance 1.
    pub fn new(channels: usize) -> Self {
        BatchNormState { gamma: vec![1.0; channels], beta: vec![0.0; channels], stats: RunningStats::new(channels) }
    }
}

/// Values saved by the forward pass for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub mode: BnMode,
}

fn check(x: &Tensor, gamma: &[f64], beta: &[f64], stats: &RunningStats) -> Result<()> {
    let c = x.shape().c;
    if gamma.len() != c || beta.len() != c || stats.channels() != c {
        return Err(Error::Shape(format!(
            "batch norm over {c} channels with {} scales, {} shifts, {} running stats",
            gamma.len(),
            beta.len(),
            stats.channels()
        )));
    }
    Ok(())
}

pub fn batchnorm_forward_cached(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    stats: &mut RunningStats,
    mode: BnMode,
) -> Result<(Tensor, BatchNormCache)> {
    check(x, gamma, beta, stats)?;
    let s = x.shape();
    let c = s.c;
    let count = (s.n * s.h * s.w) as f64;
    let (mean, var) = match mode {
        BnMode::Train => {
            let mut mean = vec![0.0; c];
            for px in x.data().chunks_exact(c) {
                for (m, &v) in mean.iter_mut().zip(px) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            let mut var = vec![0.0; c];
            for px in x.data().chunks_exact(c) {
                for ((q, &v), &m) in var.iter_mut().zip(px).zip(&mean) {
                    *q += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|q| *q /= count);
            let mom = stats.momentum;
            for z in 0..c {
                stats.mean[z] = mom * stats.mean[z] + (1.0 - mom) * mean[z];
                stats.var[z] = mom * stats.var[z] + (1.0 - mom) * var[z];
            }
            (mean, var)
        }
        BnMode::Infer => (stats.mean.clone(), stats.var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + stats.epsilon).sqrt()).collect();
    let mut xhat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    for px in x.data().chunks_exact(c) {
        for z in 0..c {
            let h = (px[z] - mean[z]) * inv_std[z];
            xhat.push(h);
            y.push(gamma[z] * h + beta[z]);
        }
    }
    let cache = BatchNormCache { xhat: Tensor::from_vec(s, xhat)?, inv_std, mode };
    Ok((Tensor::from_vec(s, y)?, cache))
}

pub fn batchnorm_forward(x: &Tensor, state: &mut BatchNormState, mode: BnMode) -> Result<Tensor> {
    let BatchNormState { gamma, beta, stats } = state;
    batchnorm_forward_cached(x, gamma, beta, stats, mode).map(|(y, _)| y)
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward(cache: &BatchNormCache, gamma: &[f64], dy: &Tensor) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let s: Shape4 = cache.xhat.shape();
    dy.expect_same_shape(&cache.xhat)?;
    let c = s.c;
    if gamma.len() != c {
        return Err(Error::Shape(format!("{} scales for {c} channels", gamma.len())));
    }
    let count = (s.n * s.h * s.w) as f64;
    let mut dbeta = vec![0.0; c];
    let mut dgamma = vec![0.0; c];
    for (hp, gp) in cache.xhat.data().chunks_exact(c).zip(dy.data().chunks_exact(c)) {
        for z in 0..c {
            dbeta[z] += gp[z];
            dgamma[z] += gp[z] * hp[z];
        }
    }
    let mut dx = Vec::with_capacity(dy.len());
    for (hp, gp) in cache.xhat.data().chunks_exact(c).zip(dy.data().chunks_exact(c)) {
        for z in 0..c {
            let scale = gamma[z] * cache.inv_std[z];
            dx.push(match cache.mode {
                BnMode::Train => scale / count * (count * gp[z] - dbeta[z] - hp[z] * dgamma[z]),
                BnMode::Infer => scale * gp[z],
            });
        }
    }
    Ok((Tensor::from_vec(s, dx)?, dgamma, dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Fill;

    #[test]
    fn constant_channels_normalize_to_zero() {
        let s = Shape4::new(2, 3, 3, 2).unwrap();
        let data: Vec<f64> = (0..s.len()).map(|i| if i % 2 == 0 { 3.7 } else { -1.25 }).collect();
        let x = Tensor::from_vec(s, data).unwrap();
        let mut state = BatchNormState::new(2);
        let y = batchnorm_forward(&x, &mut state, BnMode::Train).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-12));
        // running stats moved toward the batch statistics
        assert!((state.stats.mean[0] - 0.01 * 3.7).abs() < 1e-12);
        assert!((state.stats.var[0] - 0.99).abs() < 1e-12);
    }

    #[test]
    fn infer_mode_is_affine() {
        let s = Shape4::new(1, 2, 2, 3).unwrap();
        let x = Tensor::new(s, Fill::Normal { mean: 0.0, std: 1.0, seed: 5 });
        let mut state = BatchNormState::new(3);
        state.gamma = vec![2.0; 3];
        state.beta = vec![1.0; 3];
        state.stats.epsilon = 0.0;
        let y = batchnorm_forward(&x, &mut state, BnMode::Infer).unwrap();
        assert_eq!(y, x.map(|v| 2.0 * v + 1.0));
        assert_eq!(state.stats, RunningStats::with_settings(3, 0.0, DEFAULT_MOMENTUM));
    }

    #[test]
    fn channel_mismatch() {
        let x = Tensor::zeros(Shape4::new(1, 2, 2, 3).unwrap());
        let mut state = BatchNormState::new(2);
        assert!(matches!(batchnorm_forward(&x, &mut state, BnMode::Train), Err(Error::Shape(_))));
    }
}
