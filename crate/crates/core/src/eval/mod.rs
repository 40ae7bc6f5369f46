//! Candidate evaluation behind one interface: a deterministic synthetic
//! surrogate, a lookup table, and external worker processes.

mod external;
pub mod protocol;
mod synthetic;
mod table;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::Genome;

pub use external::{ExternalConfig, ExternalEvaluator};
pub use synthetic::{hash_noise, SurrogateConstants, SyntheticEvaluator};
pub use table::TableEvaluator;

/// Default fraction of the validation set used while searching.
pub const DEFAULT_SUBSET_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no table entry for {genome} at subset fraction {subset_fraction}")]
    MissingEntry { genome: String, subset_fraction: f64 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("worker transport failure: {0}")]
    Transport(String),
    #[error("request {id} timed out after {timeout:?}")]
    Timeout { id: u64, timeout: Duration },
    #[error("handshake rejected: {0}")]
    Handshake(String),
    #[error("malformed frame: {0}")]
    Protocol(String),
    #[error("worker reported an error: {0}")]
    Worker(String),
    #[error("evaluation table: {0}")]
    Table(String),
}

impl EvalError {
    /// Failures of the transport itself, as opposed to a rejected request.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            EvalError::Transport(_)
                | EvalError::Timeout { .. }
                | EvalError::Handshake(_)
                | EvalError::Protocol(_)
        )
    }
}

/// Quantities an evaluator can be asked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalObjective {
    Error,
    Latency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub genome: Genome,
    pub subset_fraction: f64,
    pub objectives: Vec<EvalObjective>,
}

impl EvalRequest {
    pub fn new(genome: Genome, objectives: Vec<EvalObjective>) -> Self {
        EvalRequest {
            genome,
            subset_fraction: DEFAULT_SUBSET_FRACTION,
            objectives,
        }
    }

    pub fn wants(&self, objective: EvalObjective) -> bool {
        self.objectives.contains(&objective)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return Err(EvalError::InvalidRequest(format!(
                "subset_fraction {} is outside (0, 1]",
                self.subset_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResponse {
    pub miou_error_pct: Option<f64>,
    pub latency_cycles: Option<u64>,
    pub evaluator_id: String,
    /// Excluded from every determinism comparison.
    pub wall_time_ms: u64,
}

impl EvalResponse {
    /// Checks that every requested field is present and in range.
    pub fn check_against(&self, req: &EvalRequest) -> Result<(), EvalError> {
        if req.wants(EvalObjective::Error) {
            match self.miou_error_pct {
                Some(e) if (0.0..=100.0).contains(&e) => {}
                Some(e) => {
                    return Err(EvalError::Protocol(format!(
                        "miou_error_pct {e} outside [0, 100]"
                    )))
                }
                None => return Err(EvalError::Protocol("missing miou_error_pct".into())),
            }
        }
        if req.wants(EvalObjective::Latency) && self.latency_cycles.is_none() {
            return Err(EvalError::Protocol("missing latency_cycles".into()));
        }
        Ok(())
    }
}

pub trait Evaluator: Send + Sync {
    fn id(&self) -> &str;

    /// Number of requests that may be in flight at once.
    fn capacity(&self) -> usize {
        1
    }

    fn evaluate(&self, req: &EvalRequest) -> Result<EvalResponse, EvalError>;
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn capacity(&self) -> usize {
        (**self).capacity()
    }

    fn evaluate(&self, req: &EvalRequest) -> Result<EvalResponse, EvalError> {
        (**self).evaluate(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::SpaceId;

    #[test]
    fn request_validation() {
        let mut r = EvalRequest::new(SpaceId::Xception.supernet(), vec![EvalObjective::Error]);
        assert_eq!(r.subset_fraction, 0.2);
        assert!(r.validate().is_ok());
        r.subset_fraction = 0.0;
        assert!(r.validate().is_err());
        r.subset_fraction = 1.0;
        assert!(r.validate().is_ok());
        r.subset_fraction = 1.5;
        assert!(r.validate().is_err());
    }

    #[test]
    fn response_must_carry_requested_fields() {
        let req = EvalRequest::new(
            SpaceId::Xception.supernet(),
            vec![EvalObjective::Error, EvalObjective::Latency],
        );
        let mut resp = EvalResponse {
            miou_error_pct: Some(20.0),
            latency_cycles: Some(5),
            evaluator_id: "x".into(),
            wall_time_ms: 0,
        };
        assert!(resp.check_against(&req).is_ok());
        resp.latency_cycles = None;
        assert!(resp.check_against(&req).is_err());
        resp.latency_cycles = Some(5);
        resp.miou_error_pct = Some(101.0);
        assert!(resp.check_against(&req).is_err());
    }
}
