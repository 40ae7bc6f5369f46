//! DeepLabV3+ with the modified (65-layer, 16 middle block) Xception backbone.

use super::{strided, Feature, GraphBuilder, LayerGraph, Stage, NUM_CLASSES};
use crate::genome::XceptionArch;

const MIDDLE_CHANNELS: usize = 728;
const ASPP_CHANNELS: usize = 256;
const LOW_LEVEL_CHANNELS: usize = 48;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Skip {
    Conv,
    Sum,
    None,
}

/// One Xception block: three separable convs (the last one strided) and an
/// optional 1x1 projection shortcut. Returns the block output and the feature
/// after the second separable conv.
fn xception_block(
    b: &mut GraphBuilder,
    x: Feature,
    depths: [usize; 3],
    stride: usize,
    dilation: usize,
    skip: Skip,
) -> (Feature, Feature) {
    let mut y = x;
    let mut low_level = x;
    for (i, &depth) in depths.iter().enumerate() {
        let s = if i == 2 { stride } else { 1 };
        y = b.sep_conv(y, depth, s, dilation);
        if i == 1 {
            low_level = y;
        }
    }
    if skip == Skip::Conv {
        let shortcut = b.conv_bn(x, 1, depths[2], stride);
        debug_assert_eq!(shortcut, y);
    }
    (y, low_level)
}

pub fn build_xception(arch: &XceptionArch, input_side: usize) -> LayerGraph {
    assert!(input_side > 0, "input side must be positive");
    let mut b = GraphBuilder::new();
    let input = Feature {
        channels: 3,
        side: input_side,
    };

    b.stage(Stage::Stem);
    let x = b.conv_bn(input, 3, 32, 2);
    let x = b.conv_bn(x, 3, 64, 1);

    b.stage(Stage::Entry(0));
    let (x, _) = xception_block(&mut b, x, [128; 3], 2, 1, Skip::Conv);
    b.stage(Stage::Entry(1));
    let (x, low_level) = xception_block(&mut b, x, [256; 3], 2, 1, Skip::Conv);
    b.stage(Stage::Entry(2));
    let entry_stride = usize::from(arch.entry_stride);
    let (mut x, _) = xception_block(&mut b, x, [MIDDLE_CHANNELS; 3], entry_stride, 1, Skip::Conv);
    debug_assert_eq!(x.side, strided(input_side.div_ceil(8), entry_stride));

    for (k, _) in arch.middle_blocks.iter().enumerate().filter(|(_, &on)| on) {
        b.stage(Stage::Middle(k as u8));
        let dilation = usize::from(arch.middle_atrous);
        x = xception_block(&mut b, x, [MIDDLE_CHANNELS; 3], 1, dilation, Skip::Sum).0;
    }

    let (exit0, exit1) = arch.exit_atrous;
    b.stage(Stage::Exit(0));
    let (x, _) = xception_block(&mut b, x, [728, 1024, 1024], 1, exit0.into(), Skip::Conv);
    b.stage(Stage::Exit(1));
    let (x, _) = xception_block(&mut b, x, [1536, 1536, 2048], 1, exit1.into(), Skip::None);

    b.stage(Stage::Aspp);
    let pooled = b.global_pool(x);
    let pooled = b.conv_bn(pooled, 1, ASPP_CHANNELS, 1);
    let pooled = b.upsample(pooled, x.side);
    let branch0 = b.conv_bn(x, 1, ASPP_CHANNELS, 1);
    let (r1, r2, r3) = arch.aspp_rates;
    let atrous: Vec<Feature> = [r1, r2, r3]
        .iter()
        .map(|&rate| b.sep_conv(x, ASPP_CHANNELS, 1, rate.into()))
        .collect();
    let mut branches = vec![pooled, branch0];
    branches.extend(atrous);
    let x = b.concat(&branches);
    let x = b.conv_bn(x, 1, ASPP_CHANNELS, 1);

    b.stage(Stage::Decoder);
    let x = b.upsample(x, low_level.side);
    let projected = b.conv_bn(low_level, 1, LOW_LEVEL_CHANNELS, 1);
    let x = b.concat(&[x, projected]);
    let x = b.sep_conv(x, ASPP_CHANNELS, 1, 1);
    let x = b.sep_conv(x, ASPP_CHANNELS, 1, 1);

    b.stage(Stage::Head);
    let x = b.conv_bias(x, 1, NUM_CLASSES);
    b.upsample(x, input_side);
    b.finish()
}
