//! Static parameter and multiply-add counts.
//!
//! "FLOPS" here means multiply-adds. Batch norm contributes `2c` trainable
//! parameters (its `2c` running statistics are reported separately) and no
//! multiply-adds; activations and pooling contribute nothing.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conv::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::mixconv::MixConvSpec;
use crate::nn::se::SqueezeExciteSpec;
use crate::zoo::config::{BlockPlan, ModelConfig};

pub const CSV_HEADER: [&str; 7] = ["layer", "op", "out_h", "out_w", "out_c", "params", "madds"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Conv,
    Depthwise,
    MixConv,
    Pointwise,
    Dense,
    BatchNorm,
    Se,
    Activation,
    Pool,
}

impl OpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Conv => "conv",
            OpKind::Depthwise => "depthwise",
            OpKind::MixConv => "mixconv",
            OpKind::Pointwise => "pointwise",
            OpKind::Dense => "dense",
            OpKind::BatchNorm => "batchnorm",
            OpKind::Se => "se",
            OpKind::Activation => "activation",
            OpKind::Pool => "pool",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "conv" => OpKind::Conv,
            "depthwise" => OpKind::Depthwise,
            "mixconv" => OpKind::MixConv,
            "pointwise" => OpKind::Pointwise,
            "dense" => OpKind::Dense,
            "batchnorm" => OpKind::BatchNorm,
            "se" => OpKind::Se,
            "activation" => OpKind::Activation,
            "pool" => OpKind::Pool,
            other => return Err(Error::Config(format!("unknown op kind {other:?}"))),
        })
    }
}

/// One countable layer with its geometry.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerOp {
    Conv { geom: ConvGeom, in_channels: usize, out_channels: usize },
    Depthwise { geom: ConvGeom, channels: usize },
    MixConv(MixConvSpec),
    Pointwise { in_channels: usize, out_channels: usize, groups: usize },
    Dense { in_features: usize, out_features: usize },
    BatchNorm { channels: usize },
    Se(SqueezeExciteSpec),
    Activation { channels: usize },
    Pool { channels: usize },
}

impl LayerOp {
    pub fn kind(&self) -> OpKind {
        match self {
            LayerOp::Conv { .. } => OpKind::Conv,
            LayerOp::Depthwise { .. } => OpKind::Depthwise,
            LayerOp::MixConv(_) => OpKind::MixConv,
            LayerOp::Pointwise { .. } => OpKind::Pointwise,
            LayerOp::Dense { .. } => OpKind::Dense,
            LayerOp::BatchNorm { .. } => OpKind::BatchNorm,
            LayerOp::Se(_) => OpKind::Se,
            LayerOp::Activation { .. } => OpKind::Activation,
            LayerOp::Pool { .. } => OpKind::Pool,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LayerCost {
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
    pub params: u64,
    pub madds: u64,
    /// Non-trainable running statistics (batch norm only).
    pub running: u64,
}

/// Counts one layer applied to an `in_h x in_w` input.
pub fn count_layer(op: &LayerOp, in_h: usize, in_w: usize) -> Result<LayerCost> {
    if in_h == 0 || in_w == 0 {
        return Err(Error::Geometry("input extent must be positive".into()));
    }
    let u = |v: usize| v as u64;
    let cost = match op {
        LayerOp::Conv { geom, in_channels, out_channels } => {
            geom.validate()?;
            let (_, oh, ow) = conv::pad_amounts(in_h, in_w, geom)?;
            let params = u(geom.kernel * geom.kernel * in_channels * out_channels);
            LayerCost { out_h: oh, out_w: ow, out_c: *out_channels, params, madds: u(oh * ow) * params, running: 0 }
        }
        LayerOp::Depthwise { geom, channels } => {
            geom.validate()?;
            let (_, oh, ow) = conv::pad_amounts(in_h, in_w, geom)?;
            let params = u(geom.kernel * geom.kernel * channels * geom.multiplier);
            let out_c = channels * geom.multiplier;
            LayerCost { out_h: oh, out_w: ow, out_c, params, madds: u(oh * ow) * params, running: 0 }
        }
        LayerOp::MixConv(spec) => {
            let (oh, ow) = spec.out_hw(in_h, in_w)?;
            let params = spec.param_count();
            LayerCost { out_h: oh, out_w: ow, out_c: spec.out_channels(), params, madds: spec.madds(in_h, in_w)?, running: 0 }
        }
        LayerOp::Pointwise { in_channels, out_channels, groups } => {
            if *groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
                return Err(Error::Shape(format!("1x1 groups {groups} must divide {in_channels} and {out_channels}")));
            }
            let params = u(in_channels * out_channels / groups);
            LayerCost { out_h: in_h, out_w: in_w, out_c: *out_channels, params, madds: u(in_h * in_w) * params, running: 0 }
        }
        LayerOp::Dense { in_features, out_features } => {
            let mult = u(in_features * out_features);
            LayerCost { out_h: 1, out_w: 1, out_c: *out_features, params: mult + u(*out_features), madds: mult, running: 0 }
        }
        LayerOp::BatchNorm { channels } => {
            LayerCost { out_h: in_h, out_w: in_w, out_c: *channels, params: u(2 * channels), madds: 0, running: u(2 * channels) }
        }
        LayerOp::Se(spec) => LayerCost {
            out_h: in_h,
            out_w: in_w,
            out_c: spec.channels,
            params: spec.param_count(),
            madds: u(2 * spec.channels * spec.reduced),
            running: 0,
        },
        LayerOp::Activation { channels } => LayerCost { out_h: in_h, out_w: in_w, out_c: *channels, ..LayerCost::default() },
        LayerOp::Pool { channels } => LayerCost { out_h: 1, out_w: 1, out_c: *channels, ..LayerCost::default() },
    };
    Ok(cost)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRow {
    pub layer: String,
    pub op: OpKind,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
    pub params: u64,
    pub madds: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub model: String,
    pub resolution: usize,
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_madds: u64,
    /// Batch-norm running statistics, excluded from `total_params`.
    pub running_stats: u64,
}

impl CostReport {
    /// Params and madds summed over depthwise and MixConv rows only.
    pub fn depthwise_totals(&self) -> (u64, u64) {
        self.rows
            .iter()
            .filter(|r| matches!(r.op, OpKind::Depthwise | OpKind::MixConv))
            .fold((0, 0), |(p, m), r| (p + r.params, m + r.madds))
    }

    /// Rows whose layer name starts with `prefix`.
    pub fn rows_for<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a CostRow> + 'a {
        self.rows.iter().filter(move |r| r.layer.starts_with(prefix))
    }

    /// CSV with a header row and a trailing `total` row; LF line endings.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::Config(format!("writing csv: {e}"));
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(CSV_HEADER).map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.layer.clone(),
                r.op.to_string(),
                r.out_h.to_string(),
                r.out_w.to_string(),
                r.out_c.to_string(),
                r.params.to_string(),
                r.madds.to_string(),
            ])
            .map_err(io)?;
        }
        w.write_record(["total", "", "", "", "", &self.total_params.to_string(), &self.total_madds.to_string()])
            .map_err(io)?;
        w.flush().map_err(|e| Error::Config(format!("writing csv: {e}")))?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// The CSV rows (including the total row) as a JSON array.
    pub fn to_json(&self) -> String {
        let mut rows: Vec<serde_json::Value> = self.rows.iter().map(|r| serde_json::to_value(r).expect("row")).collect();
        rows.push(serde_json::json!({
            "layer": "total", "op": "", "out_h": null, "out_w": null, "out_c": null,
            "params": self.total_params, "madds": self.total_madds,
        }));
        serde_json::to_string_pretty(&rows).expect("json")
    }
}

struct Counter {
    rows: Vec<CostRow>,
    running: u64,
    hw: (usize, usize),
}

impl Counter {
    fn push(&mut self, layer: String, op: LayerOp) -> Result<()> {
        let c = count_layer(&op, self.hw.0, self.hw.1).map_err(|e| Error::Config(format!("{layer}: {e}")))?;
        self.hw = (c.out_h, c.out_w);
        self.running += c.running;
        self.rows.push(CostRow {
            layer,
            op: op.kind(),
            out_h: c.out_h,
            out_w: c.out_w,
            out_c: c.out_c,
            params: c.params,
            madds: c.madds,
        });
        Ok(())
    }

    fn mix(&mut self, prefix: &str, mix: &MixConvSpec) -> Result<()> {
        let op = if mix.groups() == 1 {
            LayerOp::Depthwise { geom: mix.group_geom(0), channels: mix.in_channels() }
        } else {
            LayerOp::MixConv(mix.clone())
        };
        self.push(format!("{prefix}.mix"), op)?;
        self.push(format!("{prefix}.mix.bn"), LayerOp::BatchNorm { channels: mix.out_channels() })
    }
}

/// Per-layer costs in execution order; activations are omitted from the rows.
pub fn count_model(config: &ModelConfig, resolution: usize) -> Result<CostReport> {
    let plan = config.resolve()?;
    plan.spatial_trace(resolution)?;
    let mut k = Counter { rows: Vec::new(), running: 0, hw: (resolution, resolution) };
    let s = &plan.stem;
    k.push("stem.conv".into(), LayerOp::Conv { geom: s.geom, in_channels: s.in_channels, out_channels: s.out_channels })?;
    k.push("stem.bn".into(), LayerOp::BatchNorm { channels: s.out_channels })?;
    for (i, b) in plan.blocks.iter().enumerate() {
        let p = format!("blocks.{i}");
        match b {
            BlockPlan::InvertedResidual(spec) => {
                let e = spec.expanded();
                if spec.expansion != 1 {
                    let op = LayerOp::Pointwise { in_channels: spec.in_channels, out_channels: e, groups: spec.expand_groups };
                    k.push(format!("{p}.expand"), op)?;
                    k.push(format!("{p}.expand.bn"), LayerOp::BatchNorm { channels: e })?;
                }
                k.mix(&p, &spec.mix)?;
                if let Some(se) = spec.se {
                    k.push(format!("{p}.se"), LayerOp::Se(se))?;
                }
                let op =
                    LayerOp::Pointwise { in_channels: e, out_channels: spec.out_channels, groups: spec.project_groups };
                k.push(format!("{p}.project"), op)?;
                k.push(format!("{p}.project.bn"), LayerOp::BatchNorm { channels: spec.out_channels })?;
            }
            BlockPlan::Separable(spec) => {
                k.mix(&p, &spec.mix)?;
                let op = LayerOp::Pointwise {
                    in_channels: spec.mix.out_channels(),
                    out_channels: spec.out_channels,
                    groups: spec.pw_groups,
                };
                k.push(format!("{p}.pointwise"), op)?;
                k.push(format!("{p}.pointwise.bn"), LayerOp::BatchNorm { channels: spec.out_channels })?;
            }
        }
    }
    let h = plan.head;
    if let Some(c) = h.channels {
        k.push("head.conv".into(), LayerOp::Pointwise { in_channels: h.in_channels, out_channels: c, groups: 1 })?;
        k.push("head.conv.bn".into(), LayerOp::BatchNorm { channels: c })?;
    }
    k.push("head.pool".into(), LayerOp::Pool { channels: h.features() })?;
    k.push("head.fc".into(), LayerOp::Dense { in_features: h.features(), out_features: h.classes })?;
    let total_params = k.rows.iter().map(|r| r.params).sum();
    let total_madds = k.rows.iter().map(|r| r.madds).sum();
    Ok(CostReport { model: plan.name, resolution, rows: k.rows, total_params, total_madds, running_stats: k.running })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depthwise_example() {
        let op = LayerOp::Depthwise { geom: ConvGeom::new(3), channels: 32 };
        let c = count_layer(&op, 56, 56).unwrap();
        assert_eq!((c.params, c.madds), (288, 903_168));
    }

    #[test]
    fn mixconv_example() {
        let spec = MixConvSpec::new(vec![3, 5], vec![16, 16], 1, 1).unwrap();
        let c = count_layer(&LayerOp::MixConv(spec), 56, 56).unwrap();
        assert_eq!((c.params, c.madds), (544, 1_705_984));
    }

    #[test]
    fn dilation_is_free() {
        let plain = LayerOp::Depthwise { geom: ConvGeom::new(3), channels: 40 };
        let dilated = LayerOp::Depthwise { geom: ConvGeom::new(3).with_dilation(4), channels: 40 };
        assert_eq!(count_layer(&plain, 28, 28).unwrap(), count_layer(&dilated, 28, 28).unwrap());
    }

    #[test]
    fn small_layers() {
        let d = count_layer(&LayerOp::Dense { in_features: 1280, out_features: 1000 }, 1, 1).unwrap();
        assert_eq!((d.params, d.madds), (1_281_000, 1_280_000));
        let bn = count_layer(&LayerOp::BatchNorm { channels: 32 }, 7, 7).unwrap();
        assert_eq!((bn.params, bn.madds, bn.running), (64, 0, 64));
        let pw = count_layer(&LayerOp::Pointwise { in_channels: 8, out_channels: 12, groups: 2 }, 4, 4).unwrap();
        assert_eq!((pw.params, pw.madds), (48, 768));
        let a = count_layer(&LayerOp::Activation { channels: 9 }, 3, 3).unwrap();
        assert_eq!((a.params, a.madds), (0, 0));
    }

    #[test]
    fn op_kind_names() {
        for k in ["conv", "depthwise", "mixconv", "pointwise", "dense", "batchnorm", "se", "activation", "pool"] {
            assert_eq!(k.parse::<OpKind>().unwrap().as_str(), k);
        }
        assert!(matches!("attention".parse::<OpKind>(), Err(Error::Config(_))));
    }
}
