use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use segnas::archive::{write_front_series, ArchiveError, RunDir};
use segnas::config::SearchConfig;
use segnas::cost::{build_layer_graph, default_input_side, write_layer_csv, CostModel, ThroughputModel};
use segnas::engine::{Engine, EngineError, RunArchive};
use segnas::eval::protocol::{serve, ServeOptions, PROTOCOL_VERSION};
use segnas::eval::{EvalError, EvalRequest, EvalResponse, Evaluator, SurrogateConstants, SyntheticEvaluator};
use segnas::genome::{bit_labels, Architecture, Genome, SpaceId};
use segnas::pareto::gene_frequency;

/// Overrides the command of an `external:` evaluator.
const WORKER_ENV: &str = "SEGNAS_WORKER_CMD";

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_EVALUATOR: u8 = 3;
const EXIT_CORRUPT: u8 = 4;

#[derive(Parser)]
#[command(name = "segnas", version, about = "Multi-objective search over DeepLabV3+ subnetworks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a search described by a TOML config.
    Search {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        limit: Limit,
    },
    /// Continue an interrupted search.
    Resume {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        limit: Limit,
    },
    /// Print the architecture and cost of a genome such as `xception:0100...`.
    Decode {
        genome: String,
        /// Input side length; defaults to 513 (xception) or 384 (mobilenetv2).
        #[arg(long)]
        input_side: Option<usize>,
        /// Print the per-layer table as CSV instead of the summary.
        #[arg(long)]
        layers: bool,
    },
    /// Print a generation's front as cost,error pairs sorted by cost.
    Front {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, required_unless_present = "all")]
        generation: Option<usize>,
        /// Every generation, tagged with its number.
        #[arg(long)]
        all: bool,
    },
    /// Per-bit activation frequency over the final front.
    Genes {
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the synthetic evaluator over the worker protocol on stdin/stdout.
    #[command(hide = true)]
    Worker {
        #[arg(long, default_value_t = PROTOCOL_VERSION)]
        protocol: u32,
        #[arg(long, default_value_t = 1)]
        capacity: usize,
        /// Exit without answering after this many evaluations.
        #[arg(long)]
        fail_after: Option<usize>,
    },
}

#[derive(Args)]
struct Limit {
    /// Exit after this many generations in this invocation, leaving the run resumable.
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Failure {
            code,
            message: message.to_string(),
        }
    }
}

impl From<ArchiveError> for Failure {
    fn from(e: ArchiveError) -> Self {
        let code = match e {
            ArchiveError::Missing(_) | ArchiveError::Exists(_) | ArchiveError::HashMismatch { .. } => {
                EXIT_USAGE
            }
            ArchiveError::Corrupt { .. } => EXIT_CORRUPT,
            ArchiveError::Io { .. } => EXIT_FAILURE,
        };
        Failure::new(code, e)
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let code = match e {
            EngineError::Eval { .. } => EXIT_EVALUATOR,
            EngineError::Config(_) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        };
        Failure::new(code, e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Search { config, out, limit } => cmd_search(config, out, limit.stop_after),
        Command::Resume { out, limit } => cmd_resume(out, limit.stop_after),
        Command::Decode {
            genome,
            input_side,
            layers,
        } => cmd_decode(&genome, input_side, layers),
        Command::Front {
            out,
            generation,
            all,
        } => cmd_front(out, generation, all),
        Command::Genes { out } => cmd_genes(out),
        Command::Worker {
            protocol,
            capacity,
            fail_after,
        } => cmd_worker(protocol, capacity, fail_after),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("segnas: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_search(config_path: PathBuf, out: PathBuf, stop_after: Option<usize>) -> Result<(), Failure> {
    let config = SearchConfig::load(&config_path).map_err(|e| Failure::new(EXIT_USAGE, e))?;
    let run = RunDir::new(out);
    if run.has_run() {
        return Err(ArchiveError::Exists(run.root().to_path_buf()).into());
    }
    let archive = RunArchive::new(config);
    run.create(&archive)?;
    drive(&run, archive, stop_after)
}

fn cmd_resume(out: PathBuf, stop_after: Option<usize>) -> Result<(), Failure> {
    let run = RunDir::new(out);
    let archive = run.load()?;
    run.reconcile(&archive)?;
    if archive.is_finished() {
        eprintln!("segnas: run already {:?}, nothing to do", archive.status);
        return Ok(());
    }
    drive(&run, archive, stop_after)
}

fn drive(run: &RunDir, archive: RunArchive, stop_after: Option<usize>) -> Result<(), Failure> {
    let override_cmd = std::env::var(WORKER_ENV).ok().filter(|s| !s.trim().is_empty());
    let evaluator = archive
        .config
        .build_evaluator(override_cmd.as_deref())
        .map_err(|e| {
            let code = if e.is_transport() { EXIT_EVALUATOR } else { EXIT_USAGE };
            Failure::new(code, format!("cannot start evaluator: {e}"))
        })?;
    let mut engine = Engine::resume(archive, evaluator.as_ref())?;
    let mut ran = 0;
    while stop_after.map_or(true, |n| ran < n) {
        let Some(report) = engine.step()? else { break };
        run.save_generation(engine.archive(), &report)?;
        ran += 1;
        let a = engine.archive();
        let r = a.records.last().expect("a generation was recorded");
        eprintln!(
            "generation {:>3}: {} new, {} unique, front {}{}",
            r.generation,
            report.new_evaluations,
            a.unique_evaluations(),
            r.front.len(),
            r.hypervolume.map_or(String::new(), |hv| format!(", hypervolume {hv:.6}"))
        );
    }
    Ok(())
}

fn cmd_decode(text: &str, input_side: Option<usize>, layers: bool) -> Result<(), Failure> {
    let genome: Genome = text.parse().map_err(|e| Failure::new(EXIT_USAGE, e))?;
    let side = input_side.unwrap_or_else(|| default_input_side(genome.space()));
    let cost = CostModel::new(side, ThroughputModel::default()).map_err(|e| Failure::new(EXIT_USAGE, e))?;
    let arch = Architecture::decode(&genome);
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let report = cost.report(&arch);
    if layers {
        let lg = build_layer_graph(&arch, side);
        return write_layer_csv(&lg, &report, &mut out).map_err(|e| Failure::new(EXIT_FAILURE, e));
    }
    let mut lines = vec![
        ("genome", genome.to_string()),
        ("input_side", side.to_string()),
    ];
    match &arch {
        Architecture::Xception(a) => {
            lines.push(("entry_stride", a.entry_stride.to_string()));
            lines.push(("middle_atrous", a.middle_atrous.to_string()));
            lines.push(("exit_atrous", format!("({}, {})", a.exit_atrous.0, a.exit_atrous.1)));
            let (r1, r2, r3) = a.aspp_rates;
            lines.push(("aspp_rates", format!("({r1}, {r2}, {r3})")));
            lines.push(("middle_blocks", a.mask_string()));
            lines.push(("active_blocks", a.active_blocks().to_string()));
        }
        Architecture::MobileNetV2(a) => {
            lines.push(("strides", tuple(&a.strides)));
            lines.push(("dilations", tuple(&a.dilations)));
            let groups: Vec<String> = a
                .group_layers
                .iter()
                .map(|g| g.iter().map(|&b| if b { '1' } else { '0' }).collect())
                .collect();
            lines.push(("group_layers", groups.join(" ")));
            lines.push(("active_layers", a.active_layers().to_string()));
        }
    }
    lines.push(("params", format!("{} ({:.2} M)", report.params, report.params as f64 / 1e6)));
    lines.push(("flops", format!("{} ({:.2} G)", report.flops, report.flops as f64 / 1e9)));
    lines.push((
        "latency_proxy",
        format!("{:.0} cycles ({:.2} M)", report.latency_cycles, report.latency_cycles / 1e6),
    ));
    for (k, v) in lines {
        writeln!(out, "{k:<14} {v}").map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    }
    Ok(())
}

fn tuple(xs: &[u8]) -> String {
    let parts: Vec<String> = xs.iter().map(u8::to_string).collect();
    format!("({})", parts.join(", "))
}

fn cmd_front(out: PathBuf, generation: Option<usize>, all: bool) -> Result<(), Failure> {
    let archive = RunDir::new(out).load()?;
    if archive.records.is_empty() {
        return Err(Failure::new(EXIT_USAGE, "the run has no recorded generations"));
    }
    let generations: Vec<usize> = if all {
        archive.records.iter().map(|r| r.generation).collect()
    } else {
        let g = generation.expect("clap requires --generation without --all");
        if archive.record(g).is_none() {
            return Err(Failure::new(
                EXIT_USAGE,
                format!("generation {g} not recorded (run has 1..={})", archive.records.len()),
            ));
        }
        vec![g]
    };
    write_front_series(io::stdout().lock(), &archive, &generations, all)
        .map_err(|e| Failure::new(EXIT_FAILURE, e))
}

fn cmd_genes(out: PathBuf) -> Result<(), Failure> {
    let archive = RunDir::new(out).load()?;
    let front = archive
        .last_front()
        .filter(|f| !f.is_empty())
        .ok_or_else(|| Failure::new(EXIT_USAGE, "the run has no recorded front"))?;
    let freq = gene_frequency(&front.genomes()).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    let labels = bit_labels(archive.config.space);
    let stdout = io::stdout();
    let mut w = stdout.lock();
    let write = |w: &mut io::StdoutLock, line: String| writeln!(w, "{line}");
    write(&mut w, "bit,label,frequency".into()).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    for (i, (label, f)) in labels.iter().zip(freq).enumerate() {
        write(&mut w, format!("{i},{label},{f:.6}")).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    }
    Ok(())
}

fn cmd_worker(protocol: u32, capacity: usize, fail_after: Option<usize>) -> Result<(), Failure> {
    // The space arrives in the hello frame; both cost models are prepared so
    // latency answers use the space's default input side.
    let evaluator = WorkerEvaluator {
        xception: SyntheticEvaluator::new(
            SurrogateConstants::default(),
            CostModel::for_space(SpaceId::Xception),
        ),
        mobilenetv2: SyntheticEvaluator::new(
            SurrogateConstants::default(),
            CostModel::for_space(SpaceId::MobileNetV2),
        ),
    };
    let opts = ServeOptions {
        capacity: capacity.max(1),
        protocol,
        fail_after,
    };
    let stdin = io::stdin();
    serve(&evaluator, stdin.lock(), io::stdout().lock(), &opts).map_err(|e| Failure::new(EXIT_FAILURE, e))
}

struct WorkerEvaluator {
    xception: SyntheticEvaluator,
    mobilenetv2: SyntheticEvaluator,
}

impl Evaluator for WorkerEvaluator {
    fn id(&self) -> &str {
        self.xception.id()
    }

    fn evaluate(&self, req: &EvalRequest) -> Result<EvalResponse, EvalError> {
        match req.genome.space() {
            SpaceId::Xception => self.xception.evaluate(req),
            SpaceId::MobileNetV2 => self.mobilenetv2.evaluate(req),
        }
    }
}
