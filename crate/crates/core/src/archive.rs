//! On-disk layout of a run directory.
//!
//! ```text
//! run.json         config snapshot and its hash
//! checkpoint.json  the full RunArchive, replaced atomically after each generation
//! gen_NNNN.jsonl   surviving individuals of generation NNNN, one per line
//! fronts.csv       genome,<objectives...>,generation  (archive front per generation)
//! metrics.csv      generation,hypervolume,hyperarea_difference,front_size
//! timing.jsonl     wall times; the only file that differs between identical runs
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SearchConfig;
use crate::engine::{RunArchive, StepReport};
use crate::pareto::ParetoFront;

pub const RUN_FILE: &str = "run.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const FRONTS_FILE: &str = "fronts.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.jsonl";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("no run archive in {0}")]
    Missing(PathBuf),
    #[error("{0} already holds a run; use resume")]
    Exists(PathBuf),
    #[error("corrupt {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("config hash mismatch: run.json has {run}, checkpoint has {checkpoint}, config hashes to {actual}")]
    HashMismatch {
        run: String,
        checkpoint: String,
        actual: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ArchiveError + '_ {
    move |source| ArchiveError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunFile {
    config_hash: String,
    config: SearchConfig,
}

/// Writes `contents` next to `path` and renames it into place.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), ArchiveError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(contents).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn generation_file_name(generation: usize) -> String {
    format!("gen_{generation:04}.jsonl")
}

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

/// `genome,<objective names>,generation` rows for each front in turn.
pub fn fronts_csv<'a>(
    names: &[String],
    fronts: impl IntoIterator<Item = &'a ParetoFront>,
) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["genome".to_string()];
    header.extend(names.iter().cloned());
    header.push("generation".into());
    w.write_record(&header)?;
    for front in fronts {
        for p in &front.points {
            let mut row = vec![p.genome.to_string()];
            row.extend(p.objectives.iter().map(|&v| fmt6(v)));
            row.push(front.generation.to_string());
            w.write_record(&row)?;
        }
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv"))
}

pub fn metrics_csv(archive: &RunArchive) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["generation", "hypervolume", "hyperarea_difference", "front_size"])?;
    for r in &archive.records {
        w.write_record([
            r.generation.to_string(),
            r.hypervolume.map(fmt6).unwrap_or_default(),
            r.hyperarea_difference.map(fmt6).unwrap_or_default(),
            r.front.len().to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv"))
}

/// A run directory on disk.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn has_run(&self) -> bool {
        self.path(CHECKPOINT_FILE).exists()
    }

    /// Starts a fresh run: writes run.json and the generation-0 checkpoint.
    pub fn create(&self, archive: &RunArchive) -> Result<(), ArchiveError> {
        if self.has_run() {
            return Err(ArchiveError::Exists(self.root.clone()));
        }
        fs::create_dir_all(&self.root).map_err(io_err(&self.root))?;
        let run = RunFile {
            config_hash: archive.config_hash.clone(),
            config: archive.config.clone(),
        };
        let mut text = serde_json::to_string_pretty(&run).expect("config serializes");
        text.push('\n');
        write_atomic(&self.path(RUN_FILE), text.as_bytes())?;
        let timing = self.path(TIMING_FILE);
        File::create(&timing).map_err(io_err(&timing))?;
        self.write_tables(archive)?;
        self.write_checkpoint(archive)
    }

    /// Persists the newest generation of `archive`, then the checkpoint.
    pub fn save_generation(&self, archive: &RunArchive, report: &StepReport) -> Result<(), ArchiveError> {
        let record = archive
            .records
            .last()
            .expect("save_generation after at least one generation");
        let mut lines = String::new();
        for ind in &record.population {
            lines.push_str(&serde_json::to_string(ind).expect("individuals serialize"));
            lines.push('\n');
        }
        write_atomic(&self.path(&generation_file_name(record.generation)), lines.as_bytes())?;
        self.write_tables(archive)?;
        self.write_checkpoint(archive)?;
        self.append_timing(report)
    }

    fn write_tables(&self, archive: &RunArchive) -> Result<(), ArchiveError> {
        let names = archive.config.objective_names();
        let fronts = fronts_csv(&names, archive.records.iter().map(|r| &r.front))
            .expect("in-memory csv");
        write_atomic(&self.path(FRONTS_FILE), fronts.as_bytes())?;
        let metrics = metrics_csv(archive).expect("in-memory csv");
        write_atomic(&self.path(METRICS_FILE), metrics.as_bytes())
    }

    fn write_checkpoint(&self, archive: &RunArchive) -> Result<(), ArchiveError> {
        let mut text = serde_json::to_string(archive).expect("archive serializes");
        text.push('\n');
        write_atomic(&self.path(CHECKPOINT_FILE), text.as_bytes())
    }

    fn append_timing(&self, report: &StepReport) -> Result<(), ArchiveError> {
        let path = self.path(TIMING_FILE);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        writeln!(
            f,
            "{{\"generation\":{},\"new_evaluations\":{},\"wall_time_ms\":{}}}",
            report.generation, report.new_evaluations, report.wall_time_ms
        )
        .map_err(io_err(&path))
    }

    /// Loads the checkpoint and checks it against run.json.
    pub fn load(&self) -> Result<RunArchive, ArchiveError> {
        let cp_path = self.path(CHECKPOINT_FILE);
        if !cp_path.exists() {
            return Err(ArchiveError::Missing(self.root.clone()));
        }
        let text = fs::read_to_string(&cp_path).map_err(io_err(&cp_path))?;
        let archive: RunArchive = serde_json::from_str(&text).map_err(|e| ArchiveError::Corrupt {
            path: cp_path.clone(),
            reason: e.to_string(),
        })?;
        archive.validate().map_err(|e| ArchiveError::Corrupt {
            path: cp_path.clone(),
            reason: e.to_string(),
        })?;

        let run_path = self.path(RUN_FILE);
        let text = fs::read_to_string(&run_path).map_err(io_err(&run_path))?;
        let run: RunFile = serde_json::from_str(&text).map_err(|e| ArchiveError::Corrupt {
            path: run_path.clone(),
            reason: e.to_string(),
        })?;
        let actual = run.config.hash();
        if run.config_hash != archive.config_hash || actual != archive.config_hash {
            return Err(ArchiveError::HashMismatch {
                run: run.config_hash,
                checkpoint: archive.config_hash,
                actual,
            });
        }
        Ok(archive)
    }

    /// Brings the derived files in line with `archive` after an interruption:
    /// generation files beyond the checkpoint are removed and the tables rewritten.
    pub fn reconcile(&self, archive: &RunArchive) -> Result<(), ArchiveError> {
        let done = archive.generations_done();
        let entries = fs::read_dir(&self.root).map_err(io_err(&self.root))?;
        for entry in entries {
            let entry = entry.map_err(io_err(&self.root))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let stale = name
                .strip_prefix("gen_")
                .and_then(|n| n.strip_suffix(".jsonl"))
                .and_then(|n| n.parse::<usize>().ok())
                .is_some_and(|g| g > done);
            if stale || name.ends_with(".tmp") {
                fs::remove_file(entry.path()).map_err(io_err(&entry.path()))?;
            }
        }
        self.write_tables(archive)
    }

    /// Reads back the individuals of one generation file.
    pub fn read_generation(&self, generation: usize) -> Result<Vec<crate::nsga::Individual>, ArchiveError> {
        let path = self.path(&generation_file_name(generation));
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        text.lines()
            .map(|l| {
                serde_json::from_str(l).map_err(|e| ArchiveError::Corrupt {
                    path: path.clone(),
                    reason: e.to_string(),
                })
            })
            .collect()
    }
}

/// Writes a CSV to any sink; used by the CLI for stdout output.
pub fn write_front_series<W: Write>(
    out: W,
    archive: &RunArchive,
    generations: &[usize],
    tagged: bool,
) -> io::Result<()> {
    let mut out = BufWriter::new(out);
    let names = archive.config.objective_names();
    // cost objective first, error (or the last objective) second, as plotted
    let (cost_i, err_i) = match names.iter().position(|n| n == "error") {
        Some(e) => ((0..names.len()).find(|&i| i != e).unwrap_or(0), e),
        None => (0, names.len() - 1),
    };
    let mut header = Vec::new();
    if tagged {
        header.push("generation".to_string());
    }
    header.push(names[cost_i].clone());
    header.push(names[err_i].clone());
    writeln!(out, "{}", header.join(","))?;
    for &g in generations {
        let Some(record) = archive.record(g) else { continue };
        let mut pts: Vec<(f64, f64)> = record
            .front
            .points
            .iter()
            .map(|p| (p.objectives[cost_i], p.objectives[err_i]))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        for (c, e) in pts {
            if tagged {
                write!(out, "{g},")?;
            }
            writeln!(out, "{},{}", fmt6(c), fmt6(e))?;
        }
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Objective;
    use crate::engine::Engine;
    use crate::eval::SyntheticEvaluator;
    use crate::genome::SpaceId;

    fn config() -> SearchConfig {
        let mut c = SearchConfig::new(SpaceId::Xception, vec![Objective::Error, Objective::Flops], 11);
        c.generations = 3;
        c
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path().join("run"));
        let config = config();
        let ev = SyntheticEvaluator::new(config.surrogate.clone(), config.cost_model());
        let mut engine = Engine::new(config, &ev).unwrap();
        run.create(engine.archive()).unwrap();
        assert_eq!(&run.load().unwrap(), engine.archive());
        while let Some(report) = engine.step().unwrap() {
            run.save_generation(engine.archive(), &report).unwrap();
            assert_eq!(&run.load().unwrap(), engine.archive());
        }
        assert_eq!(run.read_generation(3).unwrap(), engine.archive().records[2].population);
        assert!(matches!(run.create(engine.archive()), Err(ArchiveError::Exists(_))));

        let metrics = fs::read_to_string(run.path(METRICS_FILE)).unwrap();
        assert_eq!(metrics.lines().count(), 4);
        assert!(metrics.starts_with("generation,hypervolume,hyperarea_difference,front_size\n"));
        let fronts = fs::read_to_string(run.path(FRONTS_FILE)).unwrap();
        assert!(fronts.starts_with("genome,error,flops,generation\n"));
    }

    #[test]
    fn corrupt_and_missing_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path());
        assert!(matches!(run.load(), Err(ArchiveError::Missing(_))));
        let config = config();
        let ev = SyntheticEvaluator::new(config.surrogate.clone(), config.cost_model());
        run.create(Engine::new(config, &ev).unwrap().archive()).unwrap();
        fs::write(run.path(CHECKPOINT_FILE), "{\"config\": 3").unwrap();
        assert!(matches!(run.load(), Err(ArchiveError::Corrupt { .. })));
    }

    #[test]
    fn edited_run_file_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path());
        let config = config();
        let ev = SyntheticEvaluator::new(config.surrogate.clone(), config.cost_model());
        run.create(Engine::new(config, &ev).unwrap().archive()).unwrap();
        let text = fs::read_to_string(run.path(RUN_FILE)).unwrap();
        fs::write(run.path(RUN_FILE), text.replace("\"seed\": 11", "\"seed\": 12")).unwrap();
        assert!(matches!(run.load(), Err(ArchiveError::HashMismatch { .. })));
    }
}
