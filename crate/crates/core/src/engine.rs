//! The elitist (μ+λ) NSGA-II search loop and the run archive it maintains.
//!
//! Generation 1 is the seeded population. Every later generation breeds `M`
//! offspring that have not been evaluated before, merges them with the
//! parents and truncates back to `M`. A run of `G` generations therefore
//! evaluates exactly `G × M` distinct genomes unless the space runs out.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, Objective, SearchConfig};
use crate::cost::CostModel;
use crate::eval::{EvalError, EvalRequest, EvalResponse, Evaluator};
use crate::genome::{space_cardinality, Architecture, Genome};
use crate::nsga::{environmental_selection, quantize, tournament_select, EvalMeta, Individual, SortError};
use crate::operators::{crossover, mutate, seed_population, OperatorError};
use crate::pareto::{extract_front, front_hypervolume, reference_point, FrontPoint, MetricsError, ParetoFront};

/// Offspring draws per slot before falling back to uniform random genomes.
const BREED_ATTEMPTS_PER_SLOT: usize = 64;

/// `evaluator_id` recorded when no objective needs an evaluator.
pub const COST_ONLY_ID: &str = "cost-model";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("evaluation of {genome} failed: {source}")]
    Eval { genome: Genome, source: EvalError },
    #[error(transparent)]
    Sort(#[from] SortError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("archive does not match its configuration: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    /// All configured generations ran.
    Completed,
    /// The hyperarea stop rule fired.
    Stopped,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    /// Genomes asked for, duplicates included.
    pub requests: u64,
    /// Requests answered from the cache.
    pub hits: u64,
}

/// Position in the ChaCha8 stream seeded with the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

impl RngState {
    fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(self.word_pos);
        rng
    }

    fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        RngState {
            seed,
            word_pos: rng.get_word_pos(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    /// The surviving population, ranked and crowded.
    pub population: Vec<Individual>,
    /// Genomes evaluated for the first time in this generation.
    pub new_evaluations: usize,
    /// Non-dominated set over every genome evaluated so far.
    pub front: ParetoFront,
    /// Archive hypervolume; only for two objectives.
    pub hypervolume: Option<f64>,
    pub hyperarea_difference: Option<f64>,
}

/// Everything needed to inspect a run or continue it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArchive {
    pub config: SearchConfig,
    pub config_hash: String,
    pub status: RunStatus,
    pub records: Vec<GenerationRecord>,
    /// Every evaluated genome, in evaluation order.
    pub cache: Vec<Individual>,
    pub stats: CacheStats,
    /// Fixed after generation 1; two-objective runs only.
    pub reference: Option<Vec<f64>>,
    /// Consecutive generations below the stop threshold.
    pub stall: usize,
    pub rng: RngState,
}

impl RunArchive {
    pub fn new(config: SearchConfig) -> Self {
        RunArchive {
            config_hash: config.hash(),
            status: RunStatus::Running,
            records: Vec::new(),
            cache: Vec::new(),
            stats: CacheStats::default(),
            reference: None,
            stall: 0,
            rng: RngState {
                seed: config.seed,
                word_pos: 0,
            },
            config,
        }
    }

    pub fn generations_done(&self) -> usize {
        self.records.len()
    }

    pub fn is_finished(&self) -> bool {
        self.status != RunStatus::Running
    }

    pub fn unique_evaluations(&self) -> usize {
        self.cache.len()
    }

    pub fn record(&self, generation: usize) -> Option<&GenerationRecord> {
        generation
            .checked_sub(1)
            .and_then(|i| self.records.get(i))
            .filter(|r| r.generation == generation)
    }

    pub fn last_front(&self) -> Option<&ParetoFront> {
        self.records.last().map(|r| &r.front)
    }

    /// Structural checks run before an archive is resumed.
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Inconsistent(m));
        self.config.validate()?;
        if self.config.hash() != self.config_hash {
            return bad("config hash does not match the stored config".into());
        }
        if self.rng.seed != self.config.seed {
            return bad("rng seed differs from the config seed".into());
        }
        let k = self.config.objectives.len();
        for (i, r) in self.records.iter().enumerate() {
            if r.generation != i + 1 {
                return bad(format!("record {i} is labelled generation {}", r.generation));
            }
            if r.population.len() != self.config.population {
                return bad(format!("generation {} has {} individuals", r.generation, r.population.len()));
            }
        }
        let mut seen = HashSet::new();
        for ind in &self.cache {
            if ind.genome.space() != self.config.space || ind.objectives.len() != k {
                return bad(format!("cache entry {} does not fit the config", ind.genome));
            }
            if !seen.insert(ind.genome) {
                return bad(format!("{} is cached twice", ind.genome));
            }
        }
        if self.stats.requests < self.stats.hits
            || self.stats.requests - self.stats.hits != self.cache.len() as u64
        {
            return bad("cache statistics disagree with the cache".into());
        }
        if self.records.len() > self.config.generations {
            return bad("more records than configured generations".into());
        }
        Ok(())
    }
}

/// What one call to [`Engine::step`] did; wall time is kept out of the archive.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub generation: usize,
    pub new_evaluations: usize,
    pub wall_time_ms: u64,
}

pub struct Engine<'e> {
    archive: RunArchive,
    evaluator: &'e dyn Evaluator,
    cost: CostModel,
    index: HashMap<Genome, usize>,
    rng: ChaCha8Rng,
}

impl<'e> Engine<'e> {
    pub fn new(config: SearchConfig, evaluator: &'e dyn Evaluator) -> Result<Self, EngineError> {
        config.validate()?;
        Self::resume(RunArchive::new(config), evaluator)
    }

    pub fn resume(archive: RunArchive, evaluator: &'e dyn Evaluator) -> Result<Self, EngineError> {
        archive.validate()?;
        let index = archive
            .cache
            .iter()
            .enumerate()
            .map(|(i, ind)| (ind.genome, i))
            .collect();
        Ok(Engine {
            cost: archive.config.cost_model(),
            rng: archive.rng.restore(),
            index,
            evaluator,
            archive,
        })
    }

    pub fn archive(&self) -> &RunArchive {
        &self.archive
    }

    pub fn into_archive(self) -> RunArchive {
        self.archive
    }

    /// Runs every remaining generation.
    pub fn run(mut self) -> Result<RunArchive, EngineError> {
        while self.step()?.is_some() {}
        Ok(self.archive)
    }

    /// Runs the next generation, or returns `None` once the run is finished.
    /// On error the engine and its archive are left as they were before the call.
    pub fn step(&mut self) -> Result<Option<StepReport>, EngineError> {
        if self.archive.is_finished() {
            return Ok(None);
        }
        let start = Instant::now();
        let saved_rng = self.rng.clone();
        let result = self.advance();
        if result.is_err() {
            self.rng = saved_rng;
        }
        let (generation, new_evaluations) = result?;
        Ok(Some(StepReport {
            generation,
            new_evaluations,
            wall_time_ms: start.elapsed().as_millis() as u64,
        }))
    }

    fn advance(&mut self) -> Result<(usize, usize), EngineError> {
        let config = self.archive.config.clone();
        let generation = self.archive.records.len() + 1;
        let m = config.population;

        let parents: Vec<Individual> = self
            .archive
            .records
            .last()
            .map_or_else(Vec::new, |r| r.population.clone());
        let batch = if parents.is_empty() {
            seed_population(config.space, m, &config.seed_genomes, &mut self.rng)?
        } else {
            self.breed(&parents)?
        };

        let fresh: Vec<Genome> = {
            let mut seen = HashSet::new();
            batch
                .iter()
                .copied()
                .filter(|g| !self.index.contains_key(g) && seen.insert(*g))
                .collect()
        };
        let evaluated = self.evaluate_all(&fresh, generation)?;

        let lookup: HashMap<Genome, &Individual> = evaluated.iter().map(|i| (i.genome, i)).collect();
        let batch_inds: Vec<Individual> = batch
            .iter()
            .map(|g| match self.index.get(g) {
                Some(&i) => self.archive.cache[i].clone(),
                None => lookup[g].clone(),
            })
            .collect();

        let mut candidates = parents;
        candidates.extend(batch_inds);
        for c in &mut candidates {
            c.rank = None;
            c.crowding = None;
        }
        let population = environmental_selection(candidates, m)?;

        // commit
        let archive = &mut self.archive;
        for ind in evaluated {
            self.index.insert(ind.genome, archive.cache.len());
            archive.cache.push(ind);
        }
        archive.stats.requests += batch.len() as u64;
        archive.stats.hits += (batch.len() - fresh.len()) as u64;

        let names = archive.config.objective_names();
        let points: Vec<FrontPoint> = archive
            .cache
            .iter()
            .map(|i| FrontPoint {
                genome: i.genome,
                objectives: i.objectives.clone(),
            })
            .collect();
        let front = extract_front(&points, generation, names)?;

        let (hypervolume, hyperarea_difference) = if archive.config.objectives.len() == 2 {
            let reference = archive
                .reference
                .get_or_insert_with(|| reference_point(&points))
                .clone();
            let hv = front_hypervolume(&front, &reference)?;
            let prev = archive
                .records
                .last()
                .and_then(|r| r.hypervolume)
                .unwrap_or(0.0);
            (Some(hv), Some(hv - prev))
        } else {
            (None, None)
        };

        if let (Some(stop), Some(diff), Some(reference)) =
            (&archive.config.stop, hyperarea_difference, &archive.reference)
        {
            let box_area: f64 = reference.iter().map(|r| r.abs()).product();
            if generation > 1 && diff < stop.epsilon * box_area {
                archive.stall += 1;
            } else {
                archive.stall = 0;
            }
        }

        archive.records.push(GenerationRecord {
            generation,
            population,
            new_evaluations: fresh.len(),
            front,
            hypervolume,
            hyperarea_difference,
        });
        archive.rng = RngState::capture(archive.config.seed, &self.rng);
        archive.status = match &archive.config.stop {
            _ if generation >= archive.config.generations => RunStatus::Completed,
            Some(stop) if archive.stall >= stop.patience => RunStatus::Stopped,
            _ => RunStatus::Running,
        };
        Ok((generation, fresh.len()))
    }

    /// Breeds `M` offspring never evaluated before and distinct from each other.
    fn breed(&mut self, parents: &[Individual]) -> Result<Vec<Genome>, EngineError> {
        let config = &self.archive.config;
        let m = config.population;
        let space = config.space;
        let mut batch: Vec<Genome> = Vec::with_capacity(m);
        let mut taken: HashSet<Genome> = HashSet::new();
        let is_novel = |g: &Genome, taken: &HashSet<Genome>| !self.index.contains_key(g) && !taken.contains(g);

        let mut attempts = 0;
        while batch.len() < m && attempts < BREED_ATTEMPTS_PER_SLOT * m {
            attempts += 1;
            let a = tournament_select(parents, &mut self.rng).genome;
            let b = tournament_select(parents, &mut self.rng).genome;
            let (x, y) = crossover(&a, &b, config.crossover_rate, &mut self.rng)?;
            for child in [x, y] {
                let child = mutate(&child, config.mutation_rate, &mut self.rng)?;
                if batch.len() < m && is_novel(&child, &taken) {
                    taken.insert(child);
                    batch.push(child);
                }
            }
        }
        // the neighbourhood of the parents is exhausted: fill with uniform draws
        let remaining = space_cardinality(space) - self.index.len() as u64 - taken.len() as u64;
        let mut novel_left = remaining;
        while batch.len() < m {
            let g = Genome::random(space, &mut self.rng);
            if novel_left == 0 || is_novel(&g, &taken) {
                if taken.insert(g) {
                    novel_left = novel_left.saturating_sub(1);
                }
                batch.push(g);
            }
        }
        Ok(batch)
    }

    /// Scores `genomes` in parallel up to the evaluator's capacity. Results are
    /// returned in the order of `genomes`.
    fn evaluate_all(&self, genomes: &[Genome], generation: usize) -> Result<Vec<Individual>, EngineError> {
        let config = &self.archive.config;
        let wanted = config.eval_objectives();
        let responses: Vec<Option<EvalResponse>> = if wanted.is_empty() {
            vec![None; genomes.len()]
        } else {
            let slots: Vec<Mutex<Option<Result<EvalResponse, EvalError>>>> =
                genomes.iter().map(|_| Mutex::new(None)).collect();
            let next = AtomicUsize::new(0);
            let threads = self.evaluator.capacity().clamp(1, genomes.len().max(1));
            std::thread::scope(|s| {
                for _ in 0..threads {
                    s.spawn(|| loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(g) = genomes.get(i) else { break };
                        let req = EvalRequest {
                            genome: *g,
                            subset_fraction: config.subset_fraction,
                            objectives: wanted.clone(),
                        };
                        let out = self
                            .evaluator
                            .evaluate(&req)
                            .and_then(|r| r.check_against(&req).map(|_| r));
                        *slots[i].lock().unwrap() = Some(out);
                    });
                }
            });
            let mut out = Vec::with_capacity(genomes.len());
            for (g, slot) in genomes.iter().zip(slots) {
                match slot.into_inner().unwrap().expect("every slot is filled") {
                    Ok(r) => out.push(Some(r)),
                    Err(source) => return Err(EngineError::Eval { genome: *g, source }),
                }
            }
            out
        };

        genomes
            .iter()
            .zip(responses)
            .map(|(g, resp)| {
                let report = self.cost.report(&Architecture::decode(g));
                let objectives = config
                    .objectives
                    .iter()
                    .map(|o| {
                        let v = match o {
                            Objective::Error => resp.as_ref().and_then(|r| r.miou_error_pct).unwrap_or(f64::NAN),
                            Objective::Flops => report.flops as f64 / 1e9,
                            Objective::Params => report.params as f64 / 1e6,
                            Objective::Latency => resp
                                .as_ref()
                                .and_then(|r| r.latency_cycles)
                                .map_or(f64::NAN, |c| c as f64 / 1e6),
                        };
                        quantize(v)
                    })
                    .collect();
                let mut ind = Individual::new(*g, objectives, generation);
                ind.eval_meta = Some(EvalMeta {
                    evaluator_id: resp
                        .as_ref()
                        .map_or_else(|| COST_ONLY_ID.to_string(), |r| r.evaluator_id.clone()),
                    subset_fraction: config.subset_fraction,
                });
                Ok(ind)
            })
            .collect()
    }
}

/// Runs a whole search in memory.
pub fn evolve(config: SearchConfig, evaluator: &dyn Evaluator) -> Result<RunArchive, EngineError> {
    Engine::new(config, evaluator)?.run()
}
