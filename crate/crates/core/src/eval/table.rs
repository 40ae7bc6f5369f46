use std::collections::HashMap;
use std::io;
use std::path::Path;

use serde::Deserialize;

use super::{EvalError, EvalObjective, EvalRequest, EvalResponse, Evaluator};
use crate::genome::Genome;

#[derive(Debug, Deserialize)]
struct Row {
    genome: String,
    subset_fraction: f64,
    miou_error_pct: f64,
    #[serde(default)]
    latency_cycles: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    miou_error_pct: f64,
    latency_cycles: Option<u64>,
}

/// Answers requests from a precomputed CSV
/// (`genome,subset_fraction,miou_error_pct[,latency_cycles]`).
#[derive(Debug, Clone)]
pub struct TableEvaluator {
    id: String,
    entries: HashMap<(Genome, i64), Entry>,
}

fn fraction_key(f: f64) -> i64 {
    (f * 1e6).round() as i64
}

impl TableEvaluator {
    pub fn from_path(path: &Path) -> Result<Self, EvalError> {
        let file = std::fs::File::open(path)
            .map_err(|e| EvalError::Table(format!("{}: {e}", path.display())))?;
        let name = path
            .file_name()
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        Self::from_reader(format!("table:{name}"), file)
    }

    pub fn from_reader<R: io::Read>(id: String, reader: R) -> Result<Self, EvalError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut entries = HashMap::new();
        for (line, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| EvalError::Table(format!("row {}: {e}", line + 1)))?;
            let genome: Genome = row
                .genome
                .parse()
                .map_err(|e| EvalError::Table(format!("row {}: {e}", line + 1)))?;
            if !(0.0..=100.0).contains(&row.miou_error_pct) {
                return Err(EvalError::Table(format!(
                    "row {}: miou_error_pct {} outside [0, 100]",
                    line + 1,
                    row.miou_error_pct
                )));
            }
            entries.insert(
                (genome, fraction_key(row.subset_fraction)),
                Entry {
                    miou_error_pct: row.miou_error_pct,
                    latency_cycles: row.latency_cycles,
                },
            );
        }
        Ok(TableEvaluator { id, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Evaluator for TableEvaluator {
    fn id(&self) -> &str {
        &self.id
    }

    fn capacity(&self) -> usize {
        4
    }

    fn evaluate(&self, req: &EvalRequest) -> Result<EvalResponse, EvalError> {
        req.validate()?;
        let missing = || EvalError::MissingEntry {
            genome: req.genome.to_string(),
            subset_fraction: req.subset_fraction,
        };
        let entry = self
            .entries
            .get(&(req.genome, fraction_key(req.subset_fraction)))
            .ok_or_else(missing)?;
        let latency_cycles = if req.wants(EvalObjective::Latency) {
            Some(entry.latency_cycles.ok_or_else(missing)?)
        } else {
            None
        };
        Ok(EvalResponse {
            miou_error_pct: req.wants(EvalObjective::Error).then_some(entry.miou_error_pct),
            latency_cycles,
            evaluator_id: self.id.clone(),
            wall_time_ms: 0,
        })
    }
}
