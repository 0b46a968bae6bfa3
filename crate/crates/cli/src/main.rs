//! `routegen`: ingest benchmarks, run routed generation, score it and
//! report token economics.
//!
//! Exit status is 0 on success, 1 when the run finished but some tasks
//! failed, and 2 on a fatal error (bad config, unreadable input).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use routegen_core::corpus::{attach_external_labels, load_benchmark, load_labels, RecordFormat};
use routegen_core::pipeline::{Pipeline, ReplaySetting, RunConfig, RunMode, RunOutcome, RunRecord, StageLimit, RECORD_FILE};
use routegen_core::prompts::Ablation;
use routegen_core::report;

#[derive(Parser)]
#[command(name = "routegen", version, about = "Difficulty-aware routing for LLM code generation")]
struct Cli {
    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a benchmark file and write it back as normalized JSON lines.
    Ingest {
        input: PathBuf,
        /// Where to write the normalized records; stdout if omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Difficulty labels to attach (JSON object or JSON lines).
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Classify every task and print the routing decisions.
    Route(RunArgs),
    /// Route, generate and evaluate.
    Run {
        #[command(flatten)]
        args: RunArgs,
        /// Stop after this stage.
        #[arg(long, value_enum, default_value = "evaluate")]
        until: Until,
    },
    /// Finish evaluation of a run and print per-task pass@k.
    Eval(RunArgs),
    /// Render pass@k, token and routing tables from saved run records.
    Report {
        /// `record.json` files or run output directories.
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(short, long, default_value_t = 1)]
        k: u64,
        /// Run name that relative deltas are computed against.
        #[arg(long)]
        baseline: Option<String>,
        /// Run name treated as the routed method in the token table.
        #[arg(long)]
        routed: Option<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(short, long)]
    config: PathBuf,
    /// direct, icot, routed, self or label.
    #[arg(long)]
    mode: Option<RunMode>,
    /// Samples per task.
    #[arg(long)]
    n: Option<u32>,
    /// full, no_specification or no_idea.
    #[arg(long)]
    ablation: Option<Ablation>,
    /// live, record or replay.
    #[arg(long)]
    replay: Option<ReplaySetting>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Until {
    Route,
    Generate,
    Evaluate,
}

impl From<Until> for StageLimit {
    fn from(u: Until) -> Self {
        match u {
            Until::Route => StageLimit::Route,
            Until::Generate => StageLimit::Generate,
            Until::Evaluate => StageLimit::Evaluate,
        }
    }
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        if let Some(n) = self.n {
            cfg.sampling.n = n;
            cfg.ks.retain(|&k| k <= n as u64);
            if cfg.ks.is_empty() {
                cfg.ks.push(1);
            }
        }
        if let Some(ablation) = self.ablation {
            cfg.ablation = ablation;
        }
        if let Some(replay) = self.replay {
            cfg.replay.mode = replay;
        }
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn run(&self, limit: StageLimit) -> Result<RunOutcome> {
        let pipeline = Pipeline::from_config(self.load()?)?;
        let outcome = pipeline.run(limit)?;
        log::info!(
            "{} stages computed; record at {}",
            outcome.computed,
            pipeline.config().output_dir.join(RECORD_FILE).display()
        );
        Ok(outcome)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Ingest {
            input,
            out,
            labels,
            format,
        } => ingest(&input, out.as_deref(), labels.as_deref(), format),
        Command::Route(args) => {
            let outcome = args.run(StageLimit::Route)?;
            print_routes(&outcome.record);
            Ok(status(&outcome))
        }
        Command::Run { args, until } => {
            let outcome = args.run(until.into())?;
            print_summary(&outcome.record);
            Ok(status(&outcome))
        }
        Command::Eval(args) => {
            let outcome = args.run(StageLimit::Evaluate)?;
            print_scores(&outcome.record);
            Ok(status(&outcome))
        }
        Command::Report {
            records,
            k,
            baseline,
            routed,
        } => {
            let runs = records
                .iter()
                .map(|p| load_record(p))
                .collect::<Result<Vec<_>>>()?;
            print!("{}", report::render(&runs, k, baseline.as_deref(), routed.as_deref())?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn status(outcome: &RunOutcome) -> ExitCode {
    ExitCode::from(outcome.exit_code() as u8)
}

fn load_record(path: &Path) -> Result<RunRecord> {
    let file = if path.is_dir() { path.join(RECORD_FILE) } else { path.to_path_buf() };
    let record = RunRecord::load(&file).with_context(|| format!("reading {}", file.display()))?;
    if record.compute_digest() != record.digest {
        bail!("{}: digest does not match contents", file.display());
    }
    Ok(record)
}

fn ingest(input: &Path, out: Option<&Path>, labels: Option<&Path>, format: Option<Format>) -> Result<ExitCode> {
    let format = match format {
        Some(Format::Jsonl) => RecordFormat::JsonLines,
        Some(Format::Json) => RecordFormat::JsonArray,
        None => RecordFormat::from_path(input),
    };
    let mut bench = load_benchmark(input, format)?;
    if let Some(path) = labels {
        bench = attach_external_labels(bench, &load_labels(path)?)?;
    }
    match out {
        Some(path) => {
            let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            bench.write_jsonl(std::io::BufWriter::new(file))?;
        }
        None => bench.write_jsonl(std::io::stdout().lock())?,
    }
    let with_tests = bench.tasks.iter().filter(|t| t.has_tests()).count();
    let labelled = bench.tasks.iter().filter(|t| t.external_label.is_some()).count();
    eprintln!(
        "{}: {} tasks, {with_tests} with tests, {labelled} labelled",
        bench.name,
        bench.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn print_routes(record: &RunRecord) {
    for t in &record.tasks {
        match (&t.decision, &t.error) {
            (Some(d), _) => println!(
                "{}\t{:?}\t{}\t{}",
                t.task_id,
                d.label,
                d.strategy(),
                if d.parse_failure { "(unparsed reply)" } else { d.rationale.as_str() }
            ),
            (None, Some(e)) => println!("{}\tfailed\t{e}", t.task_id),
            (None, None) => println!("{}\t-\t{}", t.task_id, t.strategy.map(|s| s.to_string()).unwrap_or_default()),
        }
    }
    if let Some(s) = &record.routing {
        println!("{}", s.distribution());
    }
    println!("routing tokens: {}", record.totals.routing_total);
}

fn print_summary(record: &RunRecord) {
    println!("{} on {} ({} tasks)", record.settings.name, record.benchmark, record.tasks.len());
    if let Some(s) = &record.routing {
        println!("routing: {}", s.distribution());
    }
    for score in &record.scores {
        println!("pass@{}: {:.2}% over {} tasks", score.k, score.mean * 100.0, record.evaluated);
    }
    let t = &record.totals;
    println!(
        "tokens: {} in, {} out, {} routing, {} total",
        t.c_in, t.c_out, t.routing_total, t.total
    );
    if record.failures > 0 {
        println!("failed tasks: {}", record.failures);
    }
    println!("digest: {}", record.digest);
}

fn print_scores(record: &RunRecord) {
    for t in &record.tasks {
        let Some(e) = &t.evaluation else {
            println!("{}\t-\t{}", t.task_id, t.error.as_deref().unwrap_or("not evaluated"));
            continue;
        };
        let per_k: Vec<String> = record
            .scores
            .iter()
            .filter_map(|s| s.per_task.get(&t.task_id).map(|p| format!("pass@{}={p:.4}", s.k)))
            .collect();
        let strategy = t.strategy.map(|s| s.to_string()).unwrap_or_default();
        println!("{}\t{strategy}\t{}/{}\t{}", t.task_id, e.c, e.n, per_k.join(" "));
    }
    print_summary(record);
}
