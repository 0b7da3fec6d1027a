//! MixNet-S/M/L, expanded from the stage tables in `data/`.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::mixconv::PartitionScheme;
use crate::nn::activation::Activation;
use crate::zoo::config::{
    apply_width_multiplier, BlockConfig, BlockType, HeadConfig, ModelConfig, StemConfig,
};

const MIXNET_S: &str = include_str!("../../data/mixnet_s.toml");
const MIXNET_M: &str = include_str!("../../data/mixnet_m.toml");

/// Width factor taking MixNet-M to MixNet-L.
pub const MIXNET_L_WIDTH: f64 = 1.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixNetVariant {
    S,
    M,
    L,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Table {
    name: String,
    stem_channels: usize,
    head_channels: usize,
    classes: usize,
    stage: Vec<Stage>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Stage {
    repeats: usize,
    kernels: Vec<usize>,
    expansion: usize,
    channels_out: usize,
    stride: usize,
    pw_groups: [usize; 2],
    se_ratio: Option<f64>,
    activation: Activation,
}

/// Parses a stage table and expands repeats into a flat block list.
pub fn mixnet_from_table(text: &str) -> Result<ModelConfig> {
    let table: Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut blocks = Vec::new();
    for st in &table.stage {
        for r in 0..st.repeats {
            blocks.push(BlockConfig {
                kind: BlockType::InvertedResidual,
                expansion: st.expansion,
                kernels: st.kernels.clone(),
                dilations: None,
                partition: PartitionScheme::Equal,
                channels_out: st.channels_out,
                stride: if r == 0 { st.stride } else { 1 },
                se_ratio: st.se_ratio,
                activation: st.activation,
                pw_groups: st.pw_groups,
            });
        }
    }
    let config = ModelConfig {
        name: table.name,
        width_multiplier: 1.0,
        stem: StemConfig {
            kernel: 3,
            in_channels: 3,
            channels: table.stem_channels,
            stride: 2,
            activation: Activation::Relu,
        },
        blocks,
        head: HeadConfig { channels: Some(table.head_channels), activation: Activation::Relu, classes: table.classes },
    };
    config.resolve()?;
    Ok(config)
}

pub fn build_mixnet(variant: MixNetVariant) -> Result<ModelConfig> {
    match variant {
        MixNetVariant::S => mixnet_from_table(MIXNET_S),
        MixNetVariant::M => mixnet_from_table(MIXNET_M),
        MixNetVariant::L => {
            let mut l = apply_width_multiplier(&mixnet_from_table(MIXNET_M)?, MIXNET_L_WIDTH)?;
            l.name = "mixnet-l".into();
            Ok(l)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_counts_and_resolution() {
        let s = build_mixnet(MixNetVariant::S).unwrap();
        let m = build_mixnet(MixNetVariant::M).unwrap();
        assert_eq!(s.blocks.len(), 16);
        assert_eq!(m.blocks.len(), 19);
        for c in [&s, &m] {
            let trace = c.resolve().unwrap().spatial_trace(224).unwrap();
            assert_eq!(*trace.last().unwrap(), (7, 7));
        }
    }

    #[test]
    fn large_variant_scales_width() {
        let l = build_mixnet(MixNetVariant::L).unwrap();
        assert_eq!(l.stem.channels, 32);
        assert_eq!(l.blocks.last().unwrap().channels_out, 264);
        assert_eq!(l.head.classes, 1000);
    }

    #[test]
    fn bad_table_is_config_error() {
        assert!(matches!(mixnet_from_table("name = 1"), Err(Error::Config(_))));
    }
}
