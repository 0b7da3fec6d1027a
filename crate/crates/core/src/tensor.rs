//! Dense 4-D tensors in batch-height-width-channel order.
//!
//! A [`Tensor`] is an immutable value: every operation returns a fresh
//! tensor. Element `(n, y, x, z)` lives at flat index
//! `((n * h + y) * w + x) * c + z`.

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Extents of a 4-D tensor, all strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape4 {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape4 {
    pub fn new(n: usize, h: usize, w: usize, c: usize) -> Result<Self> {
        if n == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::Shape(format!("extents must be positive, got ({n},{h},{w},{c})")));
        }
        let shape = Shape4 { n, h, w, c };
        shape.checked_len()?;
        Ok(shape)
    }

    fn checked_len(&self) -> Result<usize> {
        self.n
            .checked_mul(self.h)
            .and_then(|v| v.checked_mul(self.w))
            .and_then(|v| v.checked_mul(self.c))
            .filter(|&v| v <= isize::MAX as usize / std::mem::size_of::<f64>())
            .ok_or_else(|| {
                Error::Size(format!(
                    "({},{},{},{}) exceeds the addressable range",
                    self.n, self.h, self.w, self.c
                ))
            })
    }

    pub fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, n: usize, y: usize, x: usize, z: usize) -> usize {
        debug_assert!(n < self.n && y < self.h && x < self.w && z < self.c);
        ((n * self.h + y) * self.w + x) * self.c + z
    }

    pub fn with_channels(&self, c: usize) -> Result<Self> {
        Shape4::new(self.n, self.h, self.w, c)
    }
}

impl std::fmt::Display for Shape4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.h, self.w, self.c)
    }
}

/// Initial contents for [`Tensor::new`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fill {
    Zeros,
    Ones,
    Constant(f64),
    /// Gaussian samples drawn from [`Rng::new(seed)`] in flat index order.
    Normal { mean: f64, std: f64, seed: u64 },
}

/// Seeded random source: ChaCha8 keyed by a 64-bit seed.
///
/// ChaCha output is specified bit-for-bit, so the same seed yields the same
/// stream on every platform.
#[derive(Debug, Clone)]
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform sample in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_range(&mut self, lo: usize, hi: usize) -> usize {
        self.0.random_range(lo..=hi)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = self.0.sample(StandardNormal);
        mean + std * z
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape4,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape4, fill: Fill) -> Self {
        let len = shape.len();
        let data = match fill {
            Fill::Zeros => vec![0.0; len],
            Fill::Ones => vec![1.0; len],
            Fill::Constant(v) => vec![v; len],
            Fill::Normal { mean, std, seed } => {
                let mut rng = Rng::new(seed);
                (0..len).map(|_| rng.normal(mean, std)).collect()
            }
        };
        Tensor { shape, data }
    }

    pub fn zeros(shape: Shape4) -> Self {
        Tensor::new(shape, Fill::Zeros)
    }

    pub fn from_vec(shape: Shape4, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "{} values supplied for shape {shape} ({} elements)",
                data.len(),
                shape.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Draws every element from `rng`, continuing its stream.
    pub fn randn(shape: Shape4, mean: f64, std: f64, rng: &mut Rng) -> Self {
        let data = (0..shape.len()).map(|_| rng.normal(mean, std)).collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, n: usize, y: usize, x: usize, z: usize) -> f64 {
        self.data[self.shape.index(n, y, x, z)]
    }

    /// Same data viewed under another shape with equal element count.
    pub fn reshape(&self, shape: Shape4) -> Result<Self> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape, data })
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|v| alpha * v)
    }

    /// Inner product, summed in flat index order.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Copies channels `lo..hi` into a new tensor.
    pub fn slice_channels(&self, lo: usize, hi: usize) -> Result<Self> {
        let s = self.shape;
        if lo >= hi || hi > s.c {
            return Err(Error::Bounds(format!("channel range {lo}..{hi} for {} channels", s.c)));
        }
        let width = hi - lo;
        let mut data = Vec::with_capacity(s.n * s.h * s.w * width);
        for pixel in self.data.chunks_exact(s.c) {
            data.extend_from_slice(&pixel[lo..hi]);
        }
        Ok(Tensor { shape: s.with_channels(width)?, data })
    }

    /// Concatenates along the channel axis, preserving part order.
    pub fn concat_channels(parts: &[Tensor]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let s = first.shape;
        let mut total = 0usize;
        for p in parts {
            let ps = p.shape;
            if (ps.n, ps.h, ps.w) != (s.n, s.h, s.w) {
                return Err(Error::Shape(format!("cannot concat {ps} with {s}")));
            }
            total += ps.c;
        }
        let out_shape = s.with_channels(total)?;
        let mut data = Vec::with_capacity(out_shape.len());
        let pixels = s.n * s.h * s.w;
        for p in 0..pixels {
            for part in parts {
                let c = part.shape.c;
                data.extend_from_slice(&part.data[p * c..(p + 1) * c]);
            }
        }
        Ok(Tensor { shape: out_shape, data })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    pub fn expect_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{} vs {}", self.shape, other.shape)));
        }
        Ok(())
    }

    /// Little-endian bytes of the data, for byte-level comparisons.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}
