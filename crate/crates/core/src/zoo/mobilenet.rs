//! MobileNetV1 and V2 reference stacks with kernel substitution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixconv::{default_kernels, PartitionScheme};
use crate::nn::activation::Activation;
use crate::zoo::config::{BlockConfig, BlockType, HeadConfig, ModelConfig, StemConfig};

/// Kernel assignment applied to a depthwise layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelOverride {
    pub kernels: Vec<usize>,
    pub partition: PartitionScheme,
    /// Replace each `k x k` group by a `3 x 3` kernel at rate `(k - 1) / 2`
    /// on stride-1 layers; stride-2 layers keep the plain kernels.
    pub dilated: bool,
}

impl KernelOverride {
    /// Vanilla depthwise `k x k`.
    pub fn depthwise(kernel: usize) -> Self {
        KernelOverride { kernels: vec![kernel], partition: PartitionScheme::Equal, dilated: false }
    }

    /// `groups` groups with kernels `3, 5, ..., 2g + 1`.
    pub fn mixconv(groups: usize, partition: PartitionScheme) -> Self {
        KernelOverride { kernels: default_kernels(groups), partition, dilated: false }
    }

    pub fn mixconv_dilated(groups: usize) -> Self {
        KernelOverride { kernels: default_kernels(groups), partition: PartitionScheme::Equal, dilated: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernels.is_empty() || self.kernels.iter().any(|&k| k < 3 || k % 2 == 0) {
            return Err(Error::Config(format!("kernels must be odd and at least 3, got {:?}", self.kernels)));
        }
        if self.kernels.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Config(format!("kernels must strictly increase, got {:?}", self.kernels)));
        }
        Ok(())
    }

    fn apply(&self, block: &mut BlockConfig) {
        block.partition = self.partition.clone();
        if self.dilated && block.stride == 1 {
            block.kernels = vec![3; self.kernels.len()];
            block.dilations = Some(self.kernels.iter().map(|k| (k - 1) / 2).collect());
        } else {
            block.kernels = self.kernels.clone();
            block.dilations = None;
        }
    }
}

/// Applies `choice` to block `index` only.
pub fn substitute_layer(config: &ModelConfig, index: usize, choice: &KernelOverride) -> Result<ModelConfig> {
    choice.validate()?;
    let mut out = config.clone();
    let block = out
        .blocks
        .get_mut(index)
        .ok_or_else(|| Error::Config(format!("layer {index} out of range for {} blocks", config.blocks.len())))?;
    choice.apply(block);
    out.resolve()?;
    Ok(out)
}

fn substitute_all(mut config: ModelConfig, choice: &KernelOverride) -> Result<ModelConfig> {
    choice.validate()?;
    for b in &mut config.blocks {
        choice.apply(b);
    }
    config.resolve()?;
    Ok(config)
}

fn relu_block(kind: BlockType, expansion: usize, channels_out: usize, stride: usize) -> BlockConfig {
    BlockConfig {
        kind,
        expansion,
        kernels: vec![3],
        dilations: None,
        partition: PartitionScheme::Equal,
        channels_out,
        stride,
        se_ratio: None,
        activation: Activation::Relu,
        pw_groups: [1, 1],
    }
}

/// (output channels, stride) of the 13 separable blocks.
const MOBILENET_V1: [(usize, usize); 13] = [
    (64, 1),
    (128, 2),
    (128, 1),
    (256, 2),
    (256, 1),
    (512, 2),
    (512, 1),
    (512, 1),
    (512, 1),
    (512, 1),
    (512, 1),
    (1024, 2),
    (1024, 1),
];

/// (expansion, output channels, repeats, first stride) per stage.
const MOBILENET_V2: [(usize, usize, usize, usize); 7] = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
];

fn stem(channels: usize) -> StemConfig {
    StemConfig { kernel: 3, in_channels: 3, channels, stride: 2, activation: Activation::Relu }
}

pub fn build_mobilenet_v1(choice: &KernelOverride) -> Result<ModelConfig> {
    let blocks = MOBILENET_V1.iter().map(|&(c, s)| relu_block(BlockType::Separable, 1, c, s)).collect();
    let base = ModelConfig {
        name: "mobilenet-v1".into(),
        width_multiplier: 1.0,
        stem: stem(32),
        blocks,
        head: HeadConfig { channels: None, activation: Activation::Relu, classes: 1000 },
    };
    substitute_all(base, choice)
}

pub fn build_mobilenet_v2(choice: &KernelOverride) -> Result<ModelConfig> {
    let mut blocks = Vec::new();
    for &(t, c, n, s) in &MOBILENET_V2 {
        for i in 0..n {
            blocks.push(relu_block(BlockType::InvertedResidual, t, c, if i == 0 { s } else { 1 }));
        }
    }
    let base = ModelConfig {
        name: "mobilenet-v2".into(),
        width_multiplier: 1.0,
        stem: stem(32),
        blocks,
        head: HeadConfig { channels: Some(1280), activation: Activation::Relu, classes: 1000 },
    };
    substitute_all(base, choice)
}

/// The 15 MobileNetV2 blocks used in the single-layer kernel ablation: all
/// expanding bottlenecks except the final 320-channel block.
pub fn mobilenet_v2_ablation_layers() -> Vec<usize> {
    (1..=15).collect()
}
