//! Layers, composite blocks and the reverse-mode tape.

pub mod activation;
pub mod batchnorm;
pub mod block;
pub mod dense;
pub mod loss;
pub mod network;
pub mod se;
pub mod tape;

pub use activation::Activation;
pub use batchnorm::{BatchNormState, BnMode, RunningStats};
pub use block::{BnSettings, InvertedResidualSpec, Params, SeparableSpec};
pub use loss::softmax_cross_entropy;
pub use se::{SeWeights, SqueezeExciteSpec};
pub use tape::{Gradients, Tape, Var};
