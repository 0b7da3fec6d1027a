use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Swish,
}

impl Activation {
    pub fn forward(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Relu => relu_forward(x),
            Activation::Swish => swish_forward(x),
        }
    }

    pub fn backward(self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Relu => relu_backward(x, dy),
            Activation::Swish => swish_backward(x, dy),
        }
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_forward(x: &Tensor) -> Tensor {
    x.map(sigmoid)
}

pub fn sigmoid_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    x.zip_map(dy, |v, g| {
        let s = sigmoid(v);
        g * s * (1.0 - s)
    })
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    x.zip_map(dy, |v, g| if v > 0.0 { g } else { 0.0 })
}

/// `x * sigmoid(x)`.
pub fn swish_forward(x: &Tensor) -> Tensor {
    x.map(|v| v * sigmoid(v))
}

pub fn swish_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    x.zip_map(dy, |v, g| {
        let s = sigmoid(v);
        g * (s + v * s * (1.0 - s))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Fill, Shape4};
    use proptest::prelude::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::new(Shape4::new(1, 1, 1, 1).unwrap(), Fill::Constant(v))
    }

    #[test]
    fn swish_at_zero_and_asymptote() {
        assert_eq!(swish_forward(&scalar(0.0)).data()[0], 0.0);
        assert!((swish_forward(&scalar(20.0)).data()[0] - 20.0).abs() < 1e-7);
        assert!(swish_forward(&scalar(-800.0)).data()[0].abs() < 1e-300);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    proptest! {
        #[test]
        fn swish_lower_bound(v in -50.0f64..50.0) {
            let y = swish_forward(&scalar(v)).data()[0];
            prop_assert!(y > -0.2785);
        }

        #[test]
        fn relu_is_nonnegative(v in -1e6f64..1e6) {
            prop_assert!(relu_forward(&scalar(v)).data()[0] >= 0.0);
        }
    }
}
