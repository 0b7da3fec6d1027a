//! Seeded synthetic texture classification.
//!
//! Each image superimposes a coarse grating (period about 8 px) and a fine
//! grating (period about 3 px) whose orientations depend on the class, with
//! random phase, per-channel gain and pixel noise.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{Rng, Shape4, Tensor};

pub const IMAGE_SIZE: usize = 16;
pub const IMAGE_CHANNELS: usize = 3;

const COARSE_PERIOD: f64 = 8.0;
const FINE_PERIOD: f64 = 3.0;
const ANGLE_JITTER: f64 = 0.15;
const NOISE_STD: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
}

impl SyntheticDataset {
    /// `samples_per_class * classes` images, labels cycling `0, 1, ..., C-1`.
    pub fn generate(classes: usize, samples_per_class: usize, seed: u64) -> Result<Self> {
        if classes < 2 || samples_per_class == 0 {
            return Err(Error::Config("dataset needs at least 2 classes and 1 sample per class".into()));
        }
        let n = classes * samples_per_class;
        let shape = Shape4::new(n, IMAGE_SIZE, IMAGE_SIZE, IMAGE_CHANNELS)?;
        let mut rng = Rng::new(seed);
        let mut data = Vec::with_capacity(shape.len());
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % classes;
            labels.push(label);
            let base = PI * label as f64 / classes as f64;
            let coarse = base + rng.uniform_range(-ANGLE_JITTER, ANGLE_JITTER);
            let fine = base + PI / 2.0 + rng.uniform_range(-ANGLE_JITTER, ANGLE_JITTER);
            let (p0, p1) = (rng.uniform_range(0.0, 2.0 * PI), rng.uniform_range(0.0, 2.0 * PI));
            let gains: Vec<f64> = (0..IMAGE_CHANNELS).map(|_| rng.uniform_range(0.5, 1.0)).collect();
            for y in 0..IMAGE_SIZE {
                for x in 0..IMAGE_SIZE {
                    let (xf, yf) = (x as f64, y as f64);
                    let a = (2.0 * PI * (xf * coarse.cos() + yf * coarse.sin()) / COARSE_PERIOD + p0).sin();
                    let b = (2.0 * PI * (xf * fine.cos() + yf * fine.sin()) / FINE_PERIOD + p1).sin();
                    for g in &gains {
                        data.push(g * (a + b) + rng.normal(0.0, NOISE_STD));
                    }
                }
            }
        }
        Ok(SyntheticDataset { images: Tensor::from_vec(shape, data)?, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Gathers the listed images into one batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let per = IMAGE_SIZE * IMAGE_SIZE * IMAGE_CHANNELS;
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Bounds(format!("image {i} of {}", self.len())));
            }
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        let shape = Shape4::new(indices.len(), IMAGE_SIZE, IMAGE_SIZE, IMAGE_CHANNELS)?;
        Ok((Tensor::from_vec(shape, data)?, labels))
    }
}
