//! Model configs, reference architectures and width scaling.

pub mod config;
pub mod mixnet;
pub mod mobilenet;

pub use config::{apply_width_multiplier, round_channels, BlockConfig, BlockPlan, BlockType, HeadConfig, ModelConfig, ModelPlan, StemConfig};
pub use mixnet::{build_mixnet, MixNetVariant};
pub use mobilenet::{build_mobilenet_v1, build_mobilenet_v2, substitute_layer, KernelOverride};

use crate::error::{Error, Result};

/// Looks up a built-in model by name.
pub fn builtin(name: &str) -> Result<ModelConfig> {
    match name {
        "mobilenet-v1" => build_mobilenet_v1(&KernelOverride::depthwise(3)),
        "mobilenet-v2" => build_mobilenet_v2(&KernelOverride::depthwise(3)),
        "mixnet-s" => build_mixnet(MixNetVariant::S),
        "mixnet-m" => build_mixnet(MixNetVariant::M),
        "mixnet-l" => build_mixnet(MixNetVariant::L),
        other => Err(Error::Config(format!(
            "unknown model {other:?}; expected one of {}",
            BUILTIN_MODELS.join(", ")
        ))),
    }
}

pub const BUILTIN_MODELS: [&str; 5] = ["mobilenet-v1", "mobilenet-v2", "mixnet-s", "mixnet-m", "mixnet-l"];
