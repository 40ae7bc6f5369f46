use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalObjective, EvalRequest, EvalResponse, Evaluator};
use crate::cost::CostModel;
use crate::genome::{Architecture, Genome, SpaceId, MIDDLE_BLOCKS};
use crate::nsga::quantize;

pub const SYNTHETIC_ID: &str = "synthetic-v1";

/// Constants of the closed-form error surrogate
///
/// ```text
/// error = base(space) + alpha * removed + beta * stride_excess
///         - gamma * [wide ASPP rates] + delta * noise(genome)
/// ```
///
/// clamped to [0, 100] and rounded to six decimals. `removed` counts dropped
/// middle blocks (Xception) or dropped group layers (MobileNetV2).
/// `stride_excess` is `max(0, entry_stride - 2)^2` for Xception and the sum of
/// squared stride increases over the supernet's (2, 2, 1, 1) for MobileNetV2.
/// The noise term is zero for the supernet genome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConstants {
    pub base_xception: f64,
    pub base_mobilenetv2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for SurrogateConstants {
    fn default() -> Self {
        SurrogateConstants {
            // subset-validation error of the unmodified supernets
            base_xception: 23.14,
            base_mobilenetv2: 33.03,
            alpha: 0.6,
            beta: 2.0,
            gamma: 0.3,
            delta: 0.2,
        }
    }
}

impl SurrogateConstants {
    pub fn base(&self, space: SpaceId) -> f64 {
        match space {
            SpaceId::Xception => self.base_xception,
            SpaceId::MobileNetV2 => self.base_mobilenetv2,
        }
    }

    pub fn error_pct(&self, arch: &Architecture) -> f64 {
        let genome = arch.encode().expect("decoded architectures are legal");
        let (removed, stride_excess, wide_aspp) = match arch {
            Architecture::Xception(a) => {
                let removed = MIDDLE_BLOCKS - a.active_blocks();
                let excess = f64::from(a.entry_stride.saturating_sub(2)).powi(2);
                (removed, excess, a.aspp_rates == (12, 24, 36))
            }
            Architecture::MobileNetV2(a) => {
                let removed = 15 - a.active_layers();
                let excess = a
                    .strides
                    .iter()
                    .zip([2u8, 2, 1, 1])
                    .map(|(&s, base)| f64::from(s.saturating_sub(base)).powi(2))
                    .sum();
                (removed, excess, false)
            }
        };
        let noise = if genome == genome.space().supernet() {
            0.0
        } else {
            hash_noise(&genome)
        };
        let error = self.base(genome.space())
            + self.alpha * removed as f64
            + self.beta * stride_excess
            - if wide_aspp { self.gamma } else { 0.0 }
            + self.delta * noise;
        quantize(error.clamp(0.0, 100.0))
    }
}

/// Deterministic pseudo-noise in [-1, 1): FNV-1a (64-bit) over the canonical
/// genome text, top 53 bits scaled to the unit interval.
pub fn hash_noise(genome: &Genome) -> f64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let h = genome
        .to_string()
        .bytes()
        .fold(OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(PRIME));
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// In-process stand-in for GPU accuracy evaluation. Latency requests are
/// answered with the analytical latency proxy.
#[derive(Debug, Clone)]
pub struct SyntheticEvaluator {
    constants: SurrogateConstants,
    cost: CostModel,
    capacity: usize,
}

impl SyntheticEvaluator {
    pub fn new(constants: SurrogateConstants, cost: CostModel) -> Self {
        SyntheticEvaluator {
            constants,
            cost,
            capacity: 4,
        }
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.capacity = capacity.max(1);
        self
    }

    pub fn constants(&self) -> &SurrogateConstants {
        &self.constants
    }
}

impl Evaluator for SyntheticEvaluator {
    fn id(&self) -> &str {
        SYNTHETIC_ID
    }

    fn capacity(&self) -> usize {
        self.capacity
    }

    fn evaluate(&self, req: &EvalRequest) -> Result<EvalResponse, EvalError> {
        req.validate()?;
        let start = Instant::now();
        let arch = Architecture::decode(&req.genome);
        let miou_error_pct = req
            .wants(EvalObjective::Error)
            .then(|| self.constants.error_pct(&arch));
        let latency_cycles = req
            .wants(EvalObjective::Latency)
            .then(|| self.cost.report(&arch).latency_cycles.round() as u64);
        Ok(EvalResponse {
            miou_error_pct,
            latency_cycles,
            evaluator_id: SYNTHETIC_ID.to_string(),
            wall_time_ms: start.elapsed().as_millis() as u64,
        })
    }
}
