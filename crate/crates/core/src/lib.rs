//! Mixed depthwise convolution (MixConv) and the networks built from it.
//!
//! Tensors are NHWC `f64`. Every operator has a forward and a hand-written
//! backward pass; [`nn::Tape`] chains them for whole networks.

pub mod accounting;
pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod mixconv;
pub mod nn;
pub mod oracle;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use conv::{ConvGeom, Padding};
pub use error::{Error, Result};
pub use mixconv::{MixConvSpec, PartitionScheme};
pub use tensor::{Rng, Shape4, Tensor};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/mixconv.md")]
    mod mixconv {}
    #[doc = include_str!("../../../book/src/blocks.md")]
    mod blocks {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/accounting.md")]
    mod accounting {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
}
