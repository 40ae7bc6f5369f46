//! Analytical cost model: layer graphs of DeepLabV3+ subnetworks, with
//! parameter, FLOP and latency-proxy counts.
//!
//! Conventions: a convolution costs `2 * MACs` FLOPs, batch norm, pooling and
//! upsampling cost 2 FLOPs per element processed, concatenation is free. Batch
//! norm contributes two trainable scalars per channel. Spatial shapes follow
//! same padding, `out = ceil(in / stride)`; dilation never changes a shape.

mod mobilenet;
mod xception;

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::{Architecture, MobileNetV2Arch, SpaceId, XceptionArch};

pub use mobilenet::build_mobilenetv2;
pub use xception::build_xception;

/// Output classes of the segmentation head (PASCAL VOC: 20 objects + background).
pub const NUM_CLASSES: usize = 21;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("throughput for {kind:?} must be positive and finite, got {value}")]
    NonPositiveThroughput { kind: LayerKind, value: f64 },
    #[error("per-layer overhead must be non-negative and finite, got {0}")]
    NegativeOverhead(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    DepthwiseConv,
    PointwiseConv,
    Pool,
    Upsample,
    Concat,
    BatchNorm,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::DepthwiseConv => "depthwise_conv",
            LayerKind::PointwiseConv => "pointwise_conv",
            LayerKind::Pool => "pool",
            LayerKind::Upsample => "upsample",
            LayerKind::Concat => "concat",
            LayerKind::BatchNorm => "batchnorm",
        }
    }
}

/// Where a layer sits in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stem,
    /// Xception entry-flow block `n`.
    Entry(u8),
    /// Xception middle-flow block `n` (0-based position among the 16).
    Middle(u8),
    Exit(u8),
    /// MobileNetV2 inverted-residual block `n` (0-based).
    Backbone(u8),
    Aspp,
    Decoder,
    Head,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub kind: LayerKind,
    pub stage: Stage,
    pub kernel: (usize, usize),
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub dilation: usize,
    pub in_spatial: (usize, usize),
    pub out_spatial: (usize, usize),
    pub bias: bool,
}

impl LayerRecord {
    pub fn params(&self) -> u64 {
        let (kh, kw) = (self.kernel.0 as u64, self.kernel.1 as u64);
        let (cin, cout) = (self.in_channels as u64, self.out_channels as u64);
        let bias = if self.bias { cout } else { 0 };
        match self.kind {
            LayerKind::Conv | LayerKind::PointwiseConv => kh * kw * cin * cout + bias,
            LayerKind::DepthwiseConv => kh * kw * cin + bias,
            LayerKind::BatchNorm => 2 * cout,
            LayerKind::Pool | LayerKind::Upsample | LayerKind::Concat => 0,
        }
    }

    /// Multiply-accumulates, or elements processed for non-convolution layers.
    pub fn macs(&self) -> u64 {
        let (kh, kw) = (self.kernel.0 as u64, self.kernel.1 as u64);
        let (cin, cout) = (self.in_channels as u64, self.out_channels as u64);
        let out_cells = (self.out_spatial.0 * self.out_spatial.1) as u64;
        let in_cells = (self.in_spatial.0 * self.in_spatial.1) as u64;
        match self.kind {
            LayerKind::Conv | LayerKind::PointwiseConv => kh * kw * cin * cout * out_cells,
            LayerKind::DepthwiseConv => kh * kw * cin * out_cells,
            LayerKind::BatchNorm | LayerKind::Upsample => cout * out_cells,
            LayerKind::Pool => cin * in_cells,
            LayerKind::Concat => 0,
        }
    }

    pub fn flops(&self) -> u64 {
        2 * self.macs()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGraph {
    pub layers: Vec<LayerRecord>,
}

impl LayerGraph {
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LayerRecord> {
        self.layers.iter()
    }
}

/// Default input side length for a space: 513 for Xception, 384 for MobileNetV2.
pub fn default_input_side(space: SpaceId) -> usize {
    match space {
        SpaceId::Xception => 513,
        SpaceId::MobileNetV2 => 384,
    }
}

pub fn build_layer_graph(arch: &Architecture, input_side: usize) -> LayerGraph {
    match arch {
        Architecture::Xception(a) => build_xception(a, input_side),
        Architecture::MobileNetV2(a) => build_mobilenetv2(a, input_side),
    }
}

pub fn count_params(lg: &LayerGraph) -> u64 {
    lg.iter().map(LayerRecord::params).sum()
}

pub fn count_flops(lg: &LayerGraph) -> u64 {
    lg.iter().map(LayerRecord::flops).sum()
}

/// MACs-per-cycle by layer kind plus a fixed per-layer overhead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThroughputModel {
    pub conv: f64,
    pub depthwise: f64,
    pub pointwise: f64,
    pub elementwise: f64,
    pub overhead_cycles: f64,
}

impl Default for ThroughputModel {
    fn default() -> Self {
        ThroughputModel {
            conv: 1.0,
            depthwise: 0.25,
            pointwise: 1.0,
            elementwise: 1.0,
            overhead_cycles: 10_000.0,
        }
    }
}

impl ThroughputModel {
    pub fn validate(&self) -> Result<(), CostError> {
        for kind in [
            LayerKind::Conv,
            LayerKind::DepthwiseConv,
            LayerKind::PointwiseConv,
            LayerKind::BatchNorm,
        ] {
            let value = self.throughput(kind);
            if !(value.is_finite() && value > 0.0) {
                return Err(CostError::NonPositiveThroughput { kind, value });
            }
        }
        if !(self.overhead_cycles.is_finite() && self.overhead_cycles >= 0.0) {
            return Err(CostError::NegativeOverhead(self.overhead_cycles));
        }
        Ok(())
    }

    pub fn throughput(&self, kind: LayerKind) -> f64 {
        match kind {
            LayerKind::Conv => self.conv,
            LayerKind::DepthwiseConv => self.depthwise,
            LayerKind::PointwiseConv => self.pointwise,
            LayerKind::Pool | LayerKind::Upsample | LayerKind::Concat | LayerKind::BatchNorm => {
                self.elementwise
            }
        }
    }

    pub fn layer_cycles(&self, layer: &LayerRecord) -> f64 {
        layer.macs() as f64 / self.throughput(layer.kind) + self.overhead_cycles
    }
}

pub fn latency_proxy(lg: &LayerGraph, model: &ThroughputModel) -> Result<f64, CostError> {
    model.validate()?;
    Ok(lg.iter().map(|l| model.layer_cycles(l)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub params: u64,
    pub flops: u64,
    pub cycles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub flops: u64,
    pub params: u64,
    pub latency_cycles: f64,
    pub per_layer: Vec<LayerCost>,
}

impl CostReport {
    pub fn new(lg: &LayerGraph, model: &ThroughputModel) -> Result<Self, CostError> {
        model.validate()?;
        let per_layer: Vec<LayerCost> = lg
            .iter()
            .map(|l| LayerCost {
                params: l.params(),
                flops: l.flops(),
                cycles: model.layer_cycles(l),
            })
            .collect();
        Ok(CostReport {
            flops: per_layer.iter().map(|c| c.flops).sum(),
            params: per_layer.iter().map(|c| c.params).sum(),
            latency_cycles: per_layer.iter().map(|c| c.cycles).sum(),
            per_layer,
        })
    }
}

/// Builds the graph of an architecture and prices it in one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub input_side: usize,
    pub throughput: ThroughputModel,
}

impl CostModel {
    pub fn new(input_side: usize, throughput: ThroughputModel) -> Result<Self, CostError> {
        throughput.validate()?;
        Ok(CostModel {
            input_side,
            throughput,
        })
    }

    pub fn for_space(space: SpaceId) -> Self {
        CostModel {
            input_side: default_input_side(space),
            throughput: ThroughputModel::default(),
        }
    }

    pub fn report(&self, arch: &Architecture) -> CostReport {
        let lg = build_layer_graph(arch, self.input_side);
        CostReport::new(&lg, &self.throughput).expect("throughput validated on construction")
    }
}

/// Writes the per-layer breakdown as CSV.
pub fn write_layer_csv<W: io::Write>(
    lg: &LayerGraph,
    report: &CostReport,
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "index", "kind", "kh", "kw", "cin", "cout", "stride", "dilation", "hout", "wout",
        "params", "flops", "cycles",
    ])?;
    for (i, (l, c)) in lg.iter().zip(&report.per_layer).enumerate() {
        w.write_record([
            i.to_string(),
            l.kind.as_str().to_string(),
            l.kernel.0.to_string(),
            l.kernel.1.to_string(),
            l.in_channels.to_string(),
            l.out_channels.to_string(),
            l.stride.to_string(),
            l.dilation.to_string(),
            l.out_spatial.0.to_string(),
            l.out_spatial.1.to_string(),
            c.params.to_string(),
            c.flops.to_string(),
            format!("{:.6}", c.cycles),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Incremental construction of a layer graph over a running feature map.
pub(crate) struct GraphBuilder {
    layers: Vec<LayerRecord>,
    stage: Stage,
}

/// Shape of a feature map: channels and square side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Feature {
    pub channels: usize,
    pub side: usize,
}

pub(crate) fn strided(side: usize, stride: usize) -> usize {
    side.div_ceil(stride)
}

impl GraphBuilder {
    pub fn new() -> Self {
        GraphBuilder {
            layers: Vec::new(),
            stage: Stage::Stem,
        }
    }

    pub fn stage(&mut self, stage: Stage) {
        self.stage = stage;
    }

    pub fn finish(self) -> LayerGraph {
        LayerGraph {
            layers: self.layers,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        kind: LayerKind,
        kernel: usize,
        input: Feature,
        out_channels: usize,
        stride: usize,
        dilation: usize,
        out_side: usize,
        bias: bool,
    ) -> Feature {
        self.layers.push(LayerRecord {
            kind,
            stage: self.stage,
            kernel: (kernel, kernel),
            in_channels: input.channels,
            out_channels,
            stride,
            dilation,
            in_spatial: (input.side, input.side),
            out_spatial: (out_side, out_side),
            bias,
        });
        Feature {
            channels: out_channels,
            side: out_side,
        }
    }

    pub fn conv(&mut self, x: Feature, kernel: usize, out: usize, stride: usize) -> Feature {
        let kind = if kernel == 1 {
            LayerKind::PointwiseConv
        } else {
            LayerKind::Conv
        };
        self.push(kind, kernel, x, out, stride, 1, strided(x.side, stride), false)
    }

    pub fn conv_bias(&mut self, x: Feature, kernel: usize, out: usize) -> Feature {
        let kind = if kernel == 1 {
            LayerKind::PointwiseConv
        } else {
            LayerKind::Conv
        };
        self.push(kind, kernel, x, out, 1, 1, x.side, true)
    }

    pub fn depthwise(&mut self, x: Feature, stride: usize, dilation: usize) -> Feature {
        let side = strided(x.side, stride);
        self.push(LayerKind::DepthwiseConv, 3, x, x.channels, stride, dilation, side, false)
    }

    pub fn bn(&mut self, x: Feature) -> Feature {
        self.push(LayerKind::BatchNorm, 1, x, x.channels, 1, 1, x.side, false)
    }

    /// Convolution (or pointwise convolution) followed by batch norm.
    pub fn conv_bn(&mut self, x: Feature, kernel: usize, out: usize, stride: usize) -> Feature {
        let y = self.conv(x, kernel, out, stride);
        self.bn(y)
    }

    /// Depthwise-separable convolution: depthwise + BN + pointwise + BN.
    pub fn sep_conv(&mut self, x: Feature, out: usize, stride: usize, dilation: usize) -> Feature {
        let y = self.depthwise(x, stride, dilation);
        let y = self.bn(y);
        self.conv_bn(y, 1, out, 1)
    }

    pub fn global_pool(&mut self, x: Feature) -> Feature {
        self.push(LayerKind::Pool, x.side, x, x.channels, x.side, 1, 1, false)
    }

    pub fn upsample(&mut self, x: Feature, side: usize) -> Feature {
        self.push(LayerKind::Upsample, 1, x, x.channels, 1, 1, side, false)
    }

    pub fn concat(&mut self, parts: &[Feature]) -> Feature {
        let side = parts[0].side;
        debug_assert!(parts.iter().all(|p| p.side == side));
        let channels = parts.iter().map(|p| p.channels).sum();
        let input = Feature { channels, side };
        self.push(LayerKind::Concat, 1, input, channels, 1, 1, side, false)
    }
}

/// Xception-backbone report for the default 513×513 input.
pub fn xception_report(arch: &XceptionArch) -> CostReport {
    CostModel::for_space(SpaceId::Xception).report(&Architecture::Xception(*arch))
}

/// MobileNetV2-backbone report for the default 384×384 input.
pub fn mobilenetv2_report(arch: &MobileNetV2Arch) -> CostReport {
    CostModel::for_space(SpaceId::MobileNetV2).report(&Architecture::MobileNetV2(arch.clone()))
}
