//! Declarative model configs and their JSON form.
//!
//! ```json
//! {"name": "...", "width_multiplier": 1.0,
//!  "stem": {"kernel": 3, "in_channels": 3, "channels": 32, "stride": 2, "activation": "relu"},
//!  "blocks": [{"type": "inverted_residual", "expansion": 6, "kernels": [3, 5],
//!              "partition": "equal", "channels_out": 24, "stride": 2,
//!              "se_ratio": null, "activation": "relu", "pw_groups": [1, 1]}],
//!  "head": {"channels": 1280, "activation": "relu", "classes": 1000}}
//! ```
//!
//! `dilations` is optional per block (omitted means rate 1 everywhere) and
//! `pw_groups` lists the expand and project 1x1 group counts.

use serde::{Deserialize, Serialize};

use crate::conv::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::mixconv::{MixConvSpec, PartitionScheme};
use crate::nn::activation::Activation;
use crate::nn::block::{ConvBnSpec, InvertedResidualSpec, SeparableSpec};
use crate::nn::se::SqueezeExciteSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockType {
    InvertedResidual,
    Separable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemConfig {
    pub kernel: usize,
    pub in_channels: usize,
    pub channels: usize,
    pub stride: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    #[serde(rename = "type")]
    pub kind: BlockType,
    pub expansion: usize,
    pub kernels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dilations: Option<Vec<usize>>,
    #[serde(default)]
    pub partition: PartitionScheme,
    pub channels_out: usize,
    pub stride: usize,
    pub se_ratio: Option<f64>,
    pub activation: Activation,
    pub pw_groups: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    /// Width of the final 1x1 feature conv; `None` pools the last block directly.
    pub channels: Option<usize>,
    pub activation: Activation,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub width_multiplier: f64,
    pub stem: StemConfig,
    pub blocks: Vec<BlockConfig>,
    pub head: HeadConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockPlan {
    InvertedResidual(InvertedResidualSpec),
    Separable(SeparableSpec),
}

impl BlockPlan {
    pub fn mix(&self) -> &MixConvSpec {
        match self {
            BlockPlan::InvertedResidual(s) => &s.mix,
            BlockPlan::Separable(s) => &s.mix,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            BlockPlan::InvertedResidual(s) => s.out_channels,
            BlockPlan::Separable(s) => s.out_channels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadPlan {
    pub in_channels: usize,
    pub channels: Option<usize>,
    pub activation: Activation,
    pub classes: usize,
}

impl HeadPlan {
    pub fn features(&self) -> usize {
        self.channels.unwrap_or(self.in_channels)
    }
}

/// A config with every block resolved to concrete layer specs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPlan {
    pub name: String,
    pub stem: ConvBnSpec,
    pub blocks: Vec<BlockPlan>,
    pub head: HeadPlan,
}

impl ModelPlan {
    /// Spatial extent after the stem and after each block.
    pub fn spatial_trace(&self, resolution: usize) -> Result<Vec<(usize, usize)>> {
        let ctx = |e: Error| Error::Config(format!("shape propagation at {resolution}x{resolution}: {e}"));
        let mut hw = (resolution, resolution);
        let (_, h, w) = conv::pad_amounts(hw.0, hw.1, &self.stem.geom).map_err(ctx)?;
        hw = (h, w);
        let mut trace = vec![hw];
        for b in &self.blocks {
            hw = b.mix().out_hw(hw.0, hw.1).map_err(ctx)?;
            trace.push(hw);
        }
        Ok(trace)
    }
}

impl BlockConfig {
    fn dilations(&self) -> Vec<usize> {
        self.dilations.clone().unwrap_or_else(|| vec![1; self.kernels.len()])
    }

    /// Resolves this block given its input width.
    pub fn resolve(&self, in_channels: usize) -> Result<BlockPlan> {
        match self.kind {
            BlockType::InvertedResidual => {
                let expanded = in_channels * self.expansion;
                let counts = self.partition.partition(expanded, self.kernels.len())?;
                let mix = MixConvSpec::with_dilations(self.kernels.clone(), counts, self.dilations(), 1, self.stride)?;
                let se = self
                    .se_ratio
                    .map(|r| SqueezeExciteSpec::from_ratio(in_channels, expanded, r, self.activation))
                    .transpose()?;
                let [eg, pg] = self.pw_groups;
                let spec = InvertedResidualSpec::new(
                    in_channels,
                    self.channels_out,
                    self.expansion,
                    mix,
                    se,
                    self.activation,
                    eg,
                    pg,
                )?;
                Ok(BlockPlan::InvertedResidual(spec))
            }
            BlockType::Separable => {
                if self.expansion != 1 || self.se_ratio.is_some() || self.pw_groups[0] != 1 {
                    return Err(Error::Config(
                        "separable blocks take expansion 1, no squeeze-excite and no expand groups".into(),
                    ));
                }
                let counts = self.partition.partition(in_channels, self.kernels.len())?;
                let mix = MixConvSpec::with_dilations(self.kernels.clone(), counts, self.dilations(), 1, self.stride)?;
                Ok(BlockPlan::Separable(SeparableSpec::new(mix, self.channels_out, self.activation, self.pw_groups[1])?))
            }
        }
    }
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model configs always serialize")
    }

    pub fn resolve(&self) -> Result<ModelPlan> {
        let s = &self.stem;
        let geom = ConvGeom::new(s.kernel).with_stride(s.stride);
        geom.validate().map_err(|e| Error::Config(format!("stem: {e}")))?;
        if s.in_channels == 0 || s.channels == 0 || self.head.classes == 0 || self.head.channels == Some(0) {
            return Err(Error::Config("channel counts and classes must be positive".into()));
        }
        let stem = ConvBnSpec { geom, in_channels: s.in_channels, out_channels: s.channels, activation: s.activation };
        let mut c = s.channels;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            let plan = b.resolve(c).map_err(|e| Error::Config(format!("block {i}: {e}")))?;
            c = plan.out_channels();
            blocks.push(plan);
        }
        let head =
            HeadPlan { in_channels: c, channels: self.head.channels, activation: self.head.activation, classes: self.head.classes };
        Ok(ModelPlan { name: self.name.clone(), stem, blocks, head })
    }

    /// Resolves and propagates shapes at `resolution`.
    pub fn check(&self, resolution: usize) -> Result<()> {
        self.resolve()?.spatial_trace(resolution).map(|_| ())
    }
}

/// `c * factor` rounded to the nearest multiple of 8 (at least 8), bumped up
/// by 8 if rounding lost more than 10% of the target.
pub fn round_channels(channels: usize, factor: f64) -> usize {
    let target = channels as f64 * factor;
    let mut rounded = (((target + 4.0) / 8.0).floor() as usize * 8).max(8);
    if (rounded as f64) < 0.9 * target {
        rounded += 8;
    }
    rounded
}

/// Scales every channel count (stem, block outputs, head) by `factor`.
pub fn apply_width_multiplier(config: &ModelConfig, factor: f64) -> Result<ModelConfig> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Config(format!("width multiplier must be positive, got {factor}")));
    }
    if factor == 1.0 {
        return Ok(config.clone());
    }
    let mut out = config.clone();
    out.width_multiplier = config.width_multiplier * factor;
    out.stem.channels = round_channels(config.stem.channels, factor);
    for b in &mut out.blocks {
        b.channels_out = round_channels(b.channels_out, factor);
    }
    out.head.channels = config.head.channels.map(|c| round_channels(c, factor));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_rule() {
        assert_eq!(round_channels(16, 1.3), 24);
        assert_eq!(round_channels(40, 1.3), 56);
        assert_eq!(round_channels(24, 2.0), 48);
        assert_eq!(round_channels(3, 0.5), 8);
        assert_eq!(round_channels(200, 1.3), 264);
        // 0.9 floor: 12 * 0.75 = 9 -> nearest 8 keeps 8 >= 8.1? no, so bump
        assert_eq!(round_channels(12, 0.75), 16);
    }

    #[test]
    fn unknown_fields_and_types_rejected() {
        assert!(matches!(ModelConfig::from_json("{}"), Err(Error::Config(_))));
        let bad = r#"{"name":"x","width_multiplier":1.0,
            "stem":{"kernel":3,"in_channels":3,"channels":8,"stride":2,"activation":"relu"},
            "blocks":[{"type":"dense_block","expansion":1,"kernels":[3],"channels_out":8,"stride":1,
                       "se_ratio":null,"activation":"relu","pw_groups":[1,1]}],
            "head":{"channels":null,"activation":"relu","classes":3}}"#;
        assert!(matches!(ModelConfig::from_json(bad), Err(Error::Config(_))));
    }
}
