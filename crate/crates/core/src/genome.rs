//! Fixed-length bitstring genomes for the two supernet search spaces and the
//! codecs mapping them to architecture hyperparameters.
//!
//! Bit `i` of a genome is character `i` of its text form. Multi-bit fields are
//! read most-significant bit first, so the text reads naturally left to right.
//!
//! Xception layout (22 bits):
//!
//! | bits    | field                 | mapping                      |
//! |---------|-----------------------|------------------------------|
//! | 0..=1   | entry flow stride     | code + 1                     |
//! | 2..=3   | middle flow atrous    | code + 1                     |
//! | 4       | exit flow atrous      | 0 → (1,2), 1 → (2,4)         |
//! | 5       | ASPP atrous rates     | 0 → (6,12,18), 1 → (12,24,36)|
//! | 6..=21  | middle blocks b1..b16 | 1 = present                  |
//!
//! MobileNetV2 layout (23 bits):
//!
//! | bits    | field                               | mapping               |
//! |---------|-------------------------------------|-----------------------|
//! | 0, 1    | stride of layers 2, 3               | 0 → 2, 1 → 3          |
//! | 2, 3    | stride of layers 14, 17             | 0 → 1, 1 → 2          |
//! | 4..=6   | dilation of layers 12, 13, 14       | 0 → 1, 1 → 2          |
//! | 7..=12  | dilation of layers 15, 16, 17       | 2 bits each, code + 1 |
//! | 13..=22 | free group-layer bits               | see below             |
//!
//! The first layer of each inverted-residual group is always present; the
//! remaining 1 + 2 + 3 + 2 + 2 = 10 layers of the 24/32/64/96/160-channel
//! groups are searched, in group order.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("expected a {expected} genome, got {found}")]
    WrongSpace { expected: SpaceId, found: SpaceId },
    #[error("{space} genomes have {expected} bits, got {found}")]
    WrongLength {
        space: SpaceId,
        expected: usize,
        found: usize,
    },
    #[error("invalid bit character {0:?}, expected '0' or '1'")]
    InvalidBit(char),
    #[error("unknown search space {0:?}")]
    UnknownSpace(String),
    #[error("malformed genome text {0:?}, expected <space>:<bits>")]
    Malformed(String),
    #[error("{field} = {value} is outside its choice set")]
    OutOfChoiceSet { field: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceId {
    Xception,
    #[serde(rename = "mobilenetv2")]
    MobileNetV2,
}

impl SpaceId {
    pub const ALL: [SpaceId; 2] = [SpaceId::Xception, SpaceId::MobileNetV2];

    pub fn genome_len(self) -> usize {
        match self {
            SpaceId::Xception => 22,
            SpaceId::MobileNetV2 => 23,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SpaceId::Xception => "xception",
            SpaceId::MobileNetV2 => "mobilenetv2",
        }
    }

    /// Genome of the unmodified supernet.
    pub fn supernet(self) -> Genome {
        match self {
            SpaceId::Xception => encode_xception(&XceptionArch::supernet()),
            SpaceId::MobileNetV2 => encode_mobilenetv2(&MobileNetV2Arch::supernet()),
        }
        .expect("supernet architecture is legal")
    }
}

impl fmt::Display for SpaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SpaceId {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "xception" => Ok(SpaceId::Xception),
            "mobilenetv2" => Ok(SpaceId::MobileNetV2),
            _ => Err(CodecError::UnknownSpace(s.to_string())),
        }
    }
}

/// Exact number of distinct genomes (and architectures) in a space.
pub fn space_cardinality(space: SpaceId) -> u64 {
    match space {
        // entry stride, middle atrous, exit atrous, ASPP rates, 16 block bits
        SpaceId::Xception => 4 * 4 * 2 * 2 * (1 << 16),
        // four strides, three binary dilations, three 4-way dilations, 10 free group bits
        SpaceId::MobileNetV2 => (1 << 4) * (1 << 3) * 4u64.pow(3) * (1 << 10),
    }
}

/// A fixed-length bitstring tagged with the space it belongs to.
///
/// Every bit pattern of the right length is a legal genome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Genome {
    space: SpaceId,
    bits: u32,
}

impl Genome {
    /// Builds a genome from its packed representation, where bit `i` of the
    /// genome is bit `i` of `packed` (least significant first).
    pub fn from_packed(space: SpaceId, packed: u32) -> Result<Self, CodecError> {
        let len = space.genome_len();
        if packed >> len != 0 {
            return Err(CodecError::WrongLength {
                space,
                expected: len,
                found: 32 - packed.leading_zeros() as usize,
            });
        }
        Ok(Genome {
            space,
            bits: packed,
        })
    }

    pub fn from_bits(space: SpaceId, bits: &[bool]) -> Result<Self, CodecError> {
        let len = space.genome_len();
        if bits.len() != len {
            return Err(CodecError::WrongLength {
                space,
                expected: len,
                found: bits.len(),
            });
        }
        let packed = bits
            .iter()
            .enumerate()
            .fold(0u32, |acc, (i, &b)| acc | (u32::from(b) << i));
        Ok(Genome {
            space,
            bits: packed,
        })
    }

    /// Parses a bare 0/1 string for the given space.
    pub fn from_bit_str(space: SpaceId, s: &str) -> Result<Self, CodecError> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(CodecError::InvalidBit(other)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Genome::from_bits(space, &bits)
    }

    pub fn random<R: Rng + ?Sized>(space: SpaceId, rng: &mut R) -> Self {
        let mask = (1u32 << space.genome_len()) - 1;
        Genome {
            space,
            bits: rng.gen::<u32>() & mask,
        }
    }

    pub fn space(&self) -> SpaceId {
        self.space
    }

    pub fn len(&self) -> usize {
        self.space.genome_len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn packed(&self) -> u32 {
        self.bits
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.len(), "bit index {i} out of range");
        self.bits >> i & 1 == 1
    }

    pub fn with_bit(mut self, i: usize, value: bool) -> Self {
        assert!(i < self.len(), "bit index {i} out of range");
        if value {
            self.bits |= 1 << i;
        } else {
            self.bits &= !(1 << i);
        }
        self
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len()).map(move |i| self.bit(i))
    }

    pub fn bit_string(&self) -> String {
        self.bits().map(|b| if b { '1' } else { '0' }).collect()
    }

    /// Reads `width` bits starting at `start`, most significant first.
    fn field(&self, start: usize, width: usize) -> u32 {
        (start..start + width).fold(0, |acc, i| acc << 1 | u32::from(self.bit(i)))
    }

    fn expect_space(&self, space: SpaceId) -> Result<(), CodecError> {
        if self.space != space {
            return Err(CodecError::WrongSpace {
                expected: space,
                found: self.space,
            });
        }
        Ok(())
    }
}

impl fmt::Display for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.space, self.bit_string())
    }
}

impl FromStr for Genome {
    type Err = CodecError;

    /// Parses the canonical `<space>:<bits>` form.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (space, bits) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| CodecError::Malformed(s.to_string()))?;
        Genome::from_bit_str(space.parse()?, bits)
    }
}

impl Serialize for Genome {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Genome {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Sets `width` bits starting at `start` from `value`, most significant first.
fn put_field(bits: &mut [bool], start: usize, width: usize, value: u32) {
    for k in 0..width {
        bits[start + k] = value >> (width - 1 - k) & 1 == 1;
    }
}

pub const EXIT_ATROUS_CHOICES: [(u8, u8); 2] = [(1, 2), (2, 4)];
pub const ASPP_RATE_CHOICES: [(u8, u8, u8); 2] = [(6, 12, 18), (12, 24, 36)];
pub const MIDDLE_BLOCKS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct XceptionArch {
    pub entry_stride: u8,
    pub middle_atrous: u8,
    pub exit_atrous: (u8, u8),
    pub aspp_rates: (u8, u8, u8),
    pub middle_blocks: [bool; MIDDLE_BLOCKS],
}

impl XceptionArch {
    /// DeepLabV3+ with the unmodified modified-Xception backbone (output stride 16).
    pub fn supernet() -> Self {
        XceptionArch {
            entry_stride: 2,
            middle_atrous: 1,
            exit_atrous: (1, 2),
            aspp_rates: (6, 12, 18),
            middle_blocks: [true; MIDDLE_BLOCKS],
        }
    }

    pub fn active_blocks(&self) -> usize {
        self.middle_blocks.iter().filter(|&&b| b).count()
    }

    pub fn mask_string(&self) -> String {
        mask_string(&self.middle_blocks)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if !(1..=4).contains(&self.entry_stride) {
            return Err(out_of_set("entry_stride", self.entry_stride));
        }
        if !(1..=4).contains(&self.middle_atrous) {
            return Err(out_of_set("middle_atrous", self.middle_atrous));
        }
        if !EXIT_ATROUS_CHOICES.contains(&self.exit_atrous) {
            return Err(out_of_set("exit_atrous", format!("{:?}", self.exit_atrous)));
        }
        if !ASPP_RATE_CHOICES.contains(&self.aspp_rates) {
            return Err(out_of_set("aspp_rates", format!("{:?}", self.aspp_rates)));
        }
        Ok(())
    }
}

pub fn decode_xception(g: &Genome) -> Result<XceptionArch, CodecError> {
    g.expect_space(SpaceId::Xception)?;
    let mut middle_blocks = [false; MIDDLE_BLOCKS];
    for (k, slot) in middle_blocks.iter_mut().enumerate() {
        *slot = g.bit(6 + k);
    }
    Ok(XceptionArch {
        entry_stride: g.field(0, 2) as u8 + 1,
        middle_atrous: g.field(2, 2) as u8 + 1,
        exit_atrous: EXIT_ATROUS_CHOICES[g.field(4, 1) as usize],
        aspp_rates: ASPP_RATE_CHOICES[g.field(5, 1) as usize],
        middle_blocks,
    })
}

pub fn encode_xception(a: &XceptionArch) -> Result<Genome, CodecError> {
    a.validate()?;
    let mut bits = [false; 22];
    put_field(&mut bits, 0, 2, u32::from(a.entry_stride - 1));
    put_field(&mut bits, 2, 2, u32::from(a.middle_atrous - 1));
    bits[4] = a.exit_atrous == EXIT_ATROUS_CHOICES[1];
    bits[5] = a.aspp_rates == ASPP_RATE_CHOICES[1];
    bits[6..].copy_from_slice(&a.middle_blocks);
    Genome::from_bits(SpaceId::Xception, &bits)
}

/// Layer counts of the searchable inverted-residual groups (24, 32, 64, 96 and
/// 160 output channels).
pub const GROUP_SIZES: [usize; 5] = [2, 3, 4, 3, 3];
pub const GROUP_CHANNELS: [usize; 5] = [24, 32, 64, 96, 160];
pub const FREE_GROUP_BITS: usize = 10;

/// Searchable MobileNetV2 hyperparameters.
///
/// `strides` apply to layers 2, 3, 14 and 17; `dilations` to layers 12 through
/// 17 (layer numbering counts inverted-residual layers from 1).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MobileNetV2Arch {
    pub strides: [u8; 4],
    pub dilations: [u8; 6],
    pub group_layers: [Vec<bool>; 5],
}

impl MobileNetV2Arch {
    pub fn supernet() -> Self {
        MobileNetV2Arch {
            strides: [2, 2, 1, 1],
            dilations: [2, 2, 2, 4, 4, 4],
            group_layers: GROUP_SIZES.map(|n| vec![true; n]),
        }
    }

    pub fn group_string(&self) -> String {
        let free: Vec<bool> = self
            .group_layers
            .iter()
            .flat_map(|g| g.iter().skip(1).copied())
            .collect();
        mask_string(&free)
    }

    pub fn active_layers(&self) -> usize {
        self.group_layers
            .iter()
            .map(|g| g.iter().filter(|&&b| b).count())
            .sum()
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        for (i, &s) in self.strides.iter().enumerate() {
            let allowed: &[u8] = if i < 2 { &[2, 3] } else { &[1, 2] };
            if !allowed.contains(&s) {
                return Err(out_of_set("strides", format!("{:?}", self.strides)));
            }
        }
        for (i, &d) in self.dilations.iter().enumerate() {
            let max = if i < 3 { 2 } else { 4 };
            if !(1..=max).contains(&d) {
                return Err(out_of_set("dilations", format!("{:?}", self.dilations)));
            }
        }
        for (group, &size) in self.group_layers.iter().zip(GROUP_SIZES.iter()) {
            if group.len() != size || !group[0] {
                return Err(out_of_set("group_layers", mask_string(group)));
            }
        }
        Ok(())
    }
}

pub fn decode_mobilenetv2(g: &Genome) -> Result<MobileNetV2Arch, CodecError> {
    g.expect_space(SpaceId::MobileNetV2)?;
    let strides = [
        2 + g.field(0, 1) as u8,
        2 + g.field(1, 1) as u8,
        1 + g.field(2, 1) as u8,
        1 + g.field(3, 1) as u8,
    ];
    let dilations = [
        1 + g.field(4, 1) as u8,
        1 + g.field(5, 1) as u8,
        1 + g.field(6, 1) as u8,
        1 + g.field(7, 2) as u8,
        1 + g.field(9, 2) as u8,
        1 + g.field(11, 2) as u8,
    ];
    let mut next = 13;
    let group_layers = GROUP_SIZES.map(|size| {
        let mut layers = vec![true; size];
        for slot in layers.iter_mut().skip(1) {
            *slot = g.bit(next);
            next += 1;
        }
        layers
    });
    Ok(MobileNetV2Arch {
        strides,
        dilations,
        group_layers,
    })
}

pub fn encode_mobilenetv2(a: &MobileNetV2Arch) -> Result<Genome, CodecError> {
    a.validate()?;
    let mut bits = [false; 23];
    bits[0] = a.strides[0] == 3;
    bits[1] = a.strides[1] == 3;
    bits[2] = a.strides[2] == 2;
    bits[3] = a.strides[3] == 2;
    for k in 0..3 {
        bits[4 + k] = a.dilations[k] == 2;
        put_field(&mut bits, 7 + 2 * k, 2, u32::from(a.dilations[3 + k] - 1));
    }
    let free = a.group_layers.iter().flat_map(|g| g.iter().skip(1));
    for (slot, &b) in bits[13..].iter_mut().zip(free) {
        *slot = b;
    }
    Genome::from_bits(SpaceId::MobileNetV2, &bits)
}

/// A decoded genome of either space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "space", rename_all = "lowercase")]
pub enum Architecture {
    Xception(XceptionArch),
    #[serde(rename = "mobilenetv2")]
    MobileNetV2(MobileNetV2Arch),
}

impl Architecture {
    pub fn decode(g: &Genome) -> Architecture {
        match g.space() {
            SpaceId::Xception => Architecture::Xception(decode_xception(g).expect("space checked")),
            SpaceId::MobileNetV2 => {
                Architecture::MobileNetV2(decode_mobilenetv2(g).expect("space checked"))
            }
        }
    }

    pub fn encode(&self) -> Result<Genome, CodecError> {
        match self {
            Architecture::Xception(a) => encode_xception(a),
            Architecture::MobileNetV2(a) => encode_mobilenetv2(a),
        }
    }

    pub fn space(&self) -> SpaceId {
        match self {
            Architecture::Xception(_) => SpaceId::Xception,
            Architecture::MobileNetV2(_) => SpaceId::MobileNetV2,
        }
    }
}

/// Human-readable label of every bit position, used in gene-frequency tables.
pub fn bit_labels(space: SpaceId) -> Vec<String> {
    let mut labels = Vec::with_capacity(space.genome_len());
    match space {
        SpaceId::Xception => {
            labels.extend(["entry_stride.msb", "entry_stride.lsb"].map(String::from));
            labels.extend(["middle_atrous.msb", "middle_atrous.lsb"].map(String::from));
            labels.push("exit_atrous".into());
            labels.push("aspp_rates".into());
            labels.extend((0..MIDDLE_BLOCKS).map(|k| format!("middle_block_{k}")));
        }
        SpaceId::MobileNetV2 => {
            labels.extend(
                ["stride_l2", "stride_l3", "stride_l14", "stride_l17"].map(String::from),
            );
            labels.extend(["dilation_l12", "dilation_l13", "dilation_l14"].map(String::from));
            for layer in 15..=17 {
                labels.push(format!("dilation_l{layer}.msb"));
                labels.push(format!("dilation_l{layer}.lsb"));
            }
            for (channels, &size) in GROUP_CHANNELS.iter().zip(GROUP_SIZES.iter()) {
                labels.extend((1..size).map(|k| format!("group{channels}_layer_{k}")));
            }
        }
    }
    labels
}

fn mask_string(mask: &[bool]) -> String {
    mask.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

fn out_of_set(field: &'static str, value: impl ToString) -> CodecError {
    CodecError::OutOfChoiceSet {
        field,
        value: value.to_string(),
    }
}
