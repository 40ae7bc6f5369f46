mod common;

use std::collections::HashSet;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use segnas::genome::{
    bit_labels, decode_mobilenetv2, decode_xception, encode_mobilenetv2, encode_xception, space_cardinality,
    Architecture, Genome, MobileNetV2Arch, SpaceId, XceptionArch,
};

#[test]
fn cardinalities_match_genome_lengths() {
    assert_eq!(space_cardinality(SpaceId::Xception), 4_194_304);
    assert_eq!(space_cardinality(SpaceId::MobileNetV2), 8_388_608);
}

#[test]
fn every_xception_genome_round_trips() {
    for packed in 0..(1u32 << 22) {
        let g = Genome::from_packed(SpaceId::Xception, packed).unwrap();
        let arch = decode_xception(&g).unwrap();
        assert_eq!(encode_xception(&arch).unwrap(), g);
    }
}

#[test]
fn a_million_mobilenet_genomes_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut distinct_archs = HashSet::new();
    for _ in 0..1_000_000 {
        let g = Genome::random(SpaceId::MobileNetV2, &mut rng);
        let arch = decode_mobilenetv2(&g).unwrap();
        assert_eq!(encode_mobilenetv2(&arch).unwrap(), g);
        if distinct_archs.len() < 50_000 {
            distinct_archs.insert((g, arch));
        }
    }
    // no two genomes share an architecture
    let archs: HashSet<_> = distinct_archs.iter().map(|(_, a)| a.clone()).collect();
    let genomes: HashSet<_> = distinct_archs.iter().map(|(g, _)| *g).collect();
    assert_eq!(archs.len(), genomes.len());
}

#[test]
fn published_xception_rows_decode() {
    let p1 = decode_xception(&genome(FMAS_P1)).unwrap();
    assert_eq!(p1.entry_stride, 2);
    assert_eq!(p1.mask_string(), "1111011110010100");
    assert_eq!(p1.active_blocks(), 10);

    let f1 = decode_xception(&genome(FMAS_F1)).unwrap();
    let p2 = decode_xception(&genome(FMAS_P2)).unwrap();
    assert_eq!((f1.entry_stride, p2.entry_stride), (3, 2));
    assert_eq!(f1.middle_blocks, p2.middle_blocks);
    assert_eq!(decode_xception(&genome(BASELINE_X)).unwrap(), XceptionArch::supernet());
    assert_eq!(genome(BASELINE_X), SpaceId::Xception.supernet());
}

#[test]
fn published_mobilenet_rows_decode() {
    let l1 = decode_mobilenetv2(&genome(FMAS_L1)).unwrap();
    assert_eq!(l1.strides, [2, 2, 1, 2]);
    assert_eq!(l1.dilations, [2, 2, 1, 3, 4, 2]);
    assert_eq!(l1.group_string(), "1111111111");

    let l2 = decode_mobilenetv2(&genome(FMAS_L2)).unwrap();
    assert_eq!(l2.strides, [2, 3, 1, 1]);
    assert_eq!(l2.dilations, [2, 2, 2, 3, 2, 2]);
    assert_eq!(decode_mobilenetv2(&genome(BASELINE_M)).unwrap(), MobileNetV2Arch::supernet());
}

#[test]
fn all_zero_xception_genome_is_the_minimal_architecture() {
    let a = decode_xception(&genome("xception:0000000000000000000000")).unwrap();
    assert_eq!(a.entry_stride, 1);
    assert_eq!(a.middle_atrous, 1);
    assert_eq!(a.exit_atrous, (1, 2));
    assert_eq!(a.aspp_rates, (6, 12, 18));
    assert_eq!(a.active_blocks(), 0);
}

#[test]
fn labels_name_each_bit_once() {
    for space in [SpaceId::Xception, SpaceId::MobileNetV2] {
        let labels = bit_labels(space);
        assert_eq!(labels.len(), space.genome_len());
        assert_eq!(labels.iter().collect::<HashSet<_>>().len(), labels.len());
    }
    assert_eq!(bit_labels(SpaceId::Xception)[16], "middle_block_10");
}

fn any_genome() -> impl Strategy<Value = Genome> {
    prop_oneof![
        (0u32..1 << 22).prop_map(|p| Genome::from_packed(SpaceId::Xception, p).unwrap()),
        (0u32..1 << 23).prop_map(|p| Genome::from_packed(SpaceId::MobileNetV2, p).unwrap()),
    ]
}

proptest! {
    #[test]
    fn text_form_round_trips(g in any_genome()) {
        let text = g.to_string();
        prop_assert_eq!(text.parse::<Genome>().unwrap(), g);
        prop_assert_eq!(text.len(), g.space().name().len() + 1 + g.len());
    }

    #[test]
    fn architecture_round_trips(g in any_genome()) {
        let arch = Architecture::decode(&g);
        prop_assert_eq!(arch.encode().unwrap(), g);
    }

    #[test]
    fn single_bit_flips_stay_legal(g in any_genome(), i in 0usize..22) {
        let flipped = g.with_bit(i, !g.bit(i));
        prop_assert!(Architecture::decode(&flipped).encode().is_ok());
    }
}
