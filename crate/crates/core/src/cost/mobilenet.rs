//! DeepLabV3+ with a MobileNetV2 backbone (output stride 8) and the two-branch
//! encoder used for edge deployment: image pooling plus a 1x1 branch.

use super::{Feature, GraphBuilder, LayerGraph, Stage, NUM_CLASSES};
use crate::genome::{MobileNetV2Arch, GROUP_SIZES};

const EXPANSION: usize = 6;
const ASPP_CHANNELS: usize = 256;

/// Searched stride positions as inverted-residual block indices (layers 2, 3,
/// 14 and 17 counted from 1).
const STRIDE_BLOCKS: [usize; 4] = [1, 3, 13, 16];
/// Searched dilation positions (layers 12 through 17).
const DILATION_BLOCKS: [usize; 6] = [11, 12, 13, 14, 15, 16];

/// Output channels and default dilation of the 17 inverted-residual blocks.
const BLOCKS: [(usize, usize); 17] = [
    (16, 1),
    (24, 1),
    (24, 1),
    (32, 1),
    (32, 1),
    (32, 1),
    (64, 1),
    (64, 2),
    (64, 2),
    (64, 2),
    (96, 2),
    (96, 2),
    (96, 2),
    (160, 2),
    (160, 4),
    (160, 4),
    (320, 4),
];

fn inverted_residual(
    b: &mut GraphBuilder,
    x: Feature,
    out: usize,
    expansion: usize,
    stride: usize,
    dilation: usize,
) -> Feature {
    let mut y = x;
    if expansion != 1 {
        y = b.conv_bn(y, 1, x.channels * expansion, 1);
    }
    let y = b.depthwise(y, stride, dilation);
    let y = b.bn(y);
    b.conv_bn(y, 1, out, 1)
}

/// Whether block `idx` is present under the architecture's group masks.
/// Blocks outside the five searchable groups are always present.
fn block_present(arch: &MobileNetV2Arch, idx: usize) -> bool {
    let mut start = 1;
    for (group, &size) in arch.group_layers.iter().zip(GROUP_SIZES.iter()) {
        if (start..start + size).contains(&idx) {
            return group[idx - start];
        }
        start += size;
    }
    true
}

pub fn build_mobilenetv2(arch: &MobileNetV2Arch, input_side: usize) -> LayerGraph {
    assert!(input_side > 0, "input side must be positive");
    let mut b = GraphBuilder::new();
    let input = Feature {
        channels: 3,
        side: input_side,
    };

    b.stage(Stage::Stem);
    let mut x = b.conv_bn(input, 3, 32, 2);

    for (idx, &(out, default_dilation)) in BLOCKS.iter().enumerate() {
        if !block_present(arch, idx) {
            continue;
        }
        let stride = STRIDE_BLOCKS
            .iter()
            .position(|&s| s == idx)
            .map_or(1, |k| usize::from(arch.strides[k]));
        let dilation = DILATION_BLOCKS
            .iter()
            .position(|&d| d == idx)
            .map_or(default_dilation, |k| usize::from(arch.dilations[k]));
        let expansion = if idx == 0 { 1 } else { EXPANSION };
        b.stage(Stage::Backbone(idx as u8));
        x = inverted_residual(&mut b, x, out, expansion, stride, dilation);
    }

    b.stage(Stage::Aspp);
    let pooled = b.global_pool(x);
    let pooled = b.conv_bn(pooled, 1, ASPP_CHANNELS, 1);
    let pooled = b.upsample(pooled, x.side);
    let branch0 = b.conv_bn(x, 1, ASPP_CHANNELS, 1);
    let y = b.concat(&[pooled, branch0]);
    let y = b.conv_bn(y, 1, ASPP_CHANNELS, 1);

    b.stage(Stage::Head);
    let y = b.conv_bias(y, 1, NUM_CLASSES);
    b.upsample(y, input_side);
    b.finish()
}
