//! `incropt`: optimize, re-optimize, benchmark and verify.
//!
//! Exit codes: 0 success, 1 parse or validation error, 2 infeasible query,
//! 3 verification mismatch.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use incropt_core::baselines::BaselineRun;
use incropt_core::bench::{self, BenchSpec, EngineKind, Fault, VerifySpec, SCHEMA_VERSION};
use incropt_core::catalog::{load_catalog, load_updates};
use incropt_core::costmodel::CostConfig;
use incropt_core::incremental::ReoptSession;
use incropt_core::optimizer::Snapshot;
use incropt_core::workload::{fixture, Shape, FIXTURE_NAMES};
use incropt_core::{
    algebra::load_query, Catalog, Cost, CostModel, Error, Optimizer, OptimizerConfig, Query,
    QueryGraph, Strategies,
};

const SEED_ENV: &str = "INCROPT_SEED";

#[derive(Parser)]
#[command(name = "incropt", version, about = "Incremental cost-based join-order optimizer")]
struct Cli {
    /// Print the benchmark CSV schema version and exit.
    #[arg(long)]
    schema_version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one query.
    Optimize(OptimizeArgs),
    /// Apply a batch of statistics updates to a saved state.
    Reoptimize(ReoptimizeArgs),
    /// Run a seeded sweep and write a CSV report.
    Bench(BenchArgs),
    /// Check every engine against the exhaustive oracle.
    Verify(VerifyArgs),
    /// Write a built-in fixture's catalog and query as JSON.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long, required_unless_present = "fixture")]
    catalog: Option<PathBuf>,
    #[arg(long, required_unless_present = "fixture")]
    query: Option<PathBuf>,
    /// Use a built-in fixture (q3s, q5s, q8joins) instead of files.
    #[arg(long, conflicts_with_all = ["catalog", "query"])]
    fixture: Option<String>,
    /// `all`, `none`, or a comma list of aggsel, refcount, bounding.
    #[arg(long, default_value = "all")]
    strategies: String,
    /// declarative, volcano, systemr or oracle.
    #[arg(long, default_value = "declarative")]
    engine: String,
    #[arg(long)]
    cost_config: Option<PathBuf>,
    #[arg(long)]
    emit_plan: Option<PathBuf>,
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Save the engine state for `reoptimize` (declarative engine only).
    #[arg(long)]
    save_state: Option<PathBuf>,
}

#[derive(Args)]
struct ReoptimizeArgs {
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    updates: PathBuf,
    #[arg(long)]
    emit_plan: Option<PathBuf>,
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Write the updated state; may equal `--state`.
    #[arg(long)]
    save_state: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "chain,star,clique")]
    shapes: Vec<Shape>,
    #[arg(long, value_delimiter = ',', default_value = "3,4,5,6")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    /// Overridden by INCROPT_SEED.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "all")]
    strategies: String,
    #[arg(long, value_delimiter = ',', default_value = "declarative,volcano,systemr,oracle")]
    engines: Vec<EngineKind>,
    /// Updates per re-optimization batch; 0 draws 1 to 10 at random.
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Add wall-clock columns (makes output nondeterministic).
    #[arg(long)]
    timing: bool,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_delimiter = ',', default_value = "chain,star,clique")]
    shapes: Vec<Shape>,
    #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    trials: usize,
    /// Overridden by INCROPT_SEED.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Test hook: add one cost unit to every scan cost in this engine.
    #[arg(long, hide = true)]
    inject_fault: Option<EngineKind>,
    /// Where to write the reproducer on mismatch.
    #[arg(long, default_value = "incropt-reproducer.json")]
    reproducer: PathBuf,
}

#[derive(Args)]
struct FixtureArgs {
    name: String,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        let code = match err.downcast_ref::<Error>() {
            Some(Error::InfeasibleQuery) => 2,
            _ => 1,
        };
        Failure { code, err }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

type CmdResult = Result<u8, Failure>;

fn seed(flag: u64) -> anyhow::Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}=`{v}` is not an unsigned integer")),
        Err(_) => Ok(flag),
    }
}

fn write_or_print(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_json(path: &Path, v: &serde_json::Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(v)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn inputs(a: &OptimizeArgs) -> anyhow::Result<(Catalog, Query)> {
    if let Some(name) = &a.fixture {
        let w = fixture(name)
            .with_context(|| format!("unknown fixture `{name}` ({})", FIXTURE_NAMES.join(", ")))?;
        return Ok((w.catalog, w.query));
    }
    let (c, q) = (a.catalog.as_ref().expect("clap"), a.query.as_ref().expect("clap"));
    Ok((load_catalog(c).map_err(Error::from)?, load_query(q).map_err(Error::from)?))
}

fn baseline_metrics(r: &BaselineRun) -> serde_json::Value {
    let m = r.metrics;
    json!({
        "total_or": m.total_or,
        "total_and": m.total_and,
        "visited_or": m.visited_or,
        "visited_and": m.visited_and,
        "pruned_or": m.pruned_or,
        "pruned_and": m.pruned_and,
        "pruning_ratio_or": m.pruning_ratio_or(),
        "pruning_ratio_and": m.pruning_ratio_and(),
        "wall_time_ms": m.wall_time_ms,
    })
}

fn optimize(a: OptimizeArgs) -> CmdResult {
    let (cat, query) = inputs(&a)?;
    let strategies: Strategies = a.strategies.parse()?;
    let engine: EngineKind = a.engine.parse().map_err(anyhow::Error::msg)?;
    let mut model = CostModel::default();
    if let Some(p) = &a.cost_config {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        model.config = CostConfig::from_json(&text).map_err(Error::CostConfig)?;
    }
    if a.save_state.is_some() && engine != EngineKind::Declarative {
        return Err(anyhow::anyhow!("--save-state needs the declarative engine").into());
    }
    let graph = QueryGraph::new(&cat, &query).map_err(Error::from)?;
    let start = std::time::Instant::now();
    let (plan, metrics) = if engine == EngineKind::Declarative {
        let cfg = OptimizerConfig {
            model,
            ..OptimizerConfig::with_strategies(strategies)
        };
        let (opt, plan) = Optimizer::optimize(&cat, &query, cfg)?;
        let mut m = serde_json::to_value(opt.metrics())?;
        m["strategies"] = json!(strategies.to_string());
        m["wall_time_ms"] = json!(start.elapsed().as_secs_f64() * 1e3);
        if let Some(p) = &a.save_state {
            fs::write(p, opt.snapshot()?.to_json())
                .with_context(|| format!("writing {}", p.display()))?;
        }
        (plan, m)
    } else {
        let w = incropt_core::workload::Workload {
            name: "query".into(),
            catalog: cat.clone(),
            query: query.clone(),
        };
        let run = bench::run_baseline(engine, &w, model)?;
        let m = baseline_metrics(&run);
        (run.plan, m)
    };
    let mut metrics = metrics;
    metrics["engine"] = json!(engine.name());
    metrics["cost"] = json!(plan.cost());
    match &a.emit_plan {
        Some(p) => write_json(p, &plan.to_json(&graph))?,
        None => print!("{}", plan.render(&graph)),
    }
    if let Some(p) = &a.metrics {
        write_json(p, &metrics)?;
    }
    Ok(0)
}

fn reoptimize(a: ReoptimizeArgs) -> CmdResult {
    let text = fs::read_to_string(&a.state).with_context(|| format!("reading {}", a.state.display()))?;
    let opt = Snapshot::from_json(&text)?.restore()?;
    let updates = load_updates(&a.updates).map_err(Error::from)?;
    let mut session = ReoptSession::new(opt)?;
    session.extend(updates);
    let (plan, m) = session.reoptimize()?;
    let graph = session.optimizer().graph();
    let mut metrics = serde_json::to_value(m)?;
    metrics["cost"] = json!(plan.cost());
    match &a.emit_plan {
        Some(p) => write_json(p, &plan.to_json(graph))?,
        None => print!("{}", plan.render(graph)),
    }
    if let Some(p) = &a.metrics {
        write_json(p, &metrics)?;
    }
    if let Some(p) = &a.save_state {
        fs::write(p, session.optimizer().snapshot()?.to_json())
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(0)
}

fn run_bench(a: BenchArgs) -> CmdResult {
    let spec = BenchSpec {
        shapes: a.shapes,
        sizes: a.sizes,
        trials: a.trials,
        seed: seed(a.seed)?,
        strategies: a.strategies.parse()?,
        engines: a.engines,
        batch: a.batch,
        timing: a.timing,
    };
    if let Some(&n) = spec.sizes.iter().find(|&&n| !(2..=incropt_core::algebra::MAX_QUERY_RELATIONS).contains(&n)) {
        return Err(anyhow::anyhow!("query size {n} out of range").into());
    }
    let rows = bench::run_bench(&spec)?;
    write_or_print(a.out.as_deref(), &bench::to_csv(&rows, spec.timing))?;
    Ok(0)
}

fn verify(a: VerifyArgs) -> CmdResult {
    if a.trials == 0 {
        eprintln!("warning: --trials 0, nothing to verify");
        return Ok(0);
    }
    let spec = VerifySpec {
        shapes: a.shapes,
        sizes: a.sizes,
        trials: a.trials,
        seed: seed(a.seed)?,
        fault: a.inject_fault.map(|engine| Fault {
            engine,
            scan_bias: Cost::from_f64(1.0),
        }),
    };
    let report = bench::run_verify(&spec)?;
    match report.reproducer {
        None => {
            println!("verify: {} cases, {} checks, all passed", report.cases, report.checks);
            Ok(0)
        }
        Some(r) => {
            let text = serde_json::to_string_pretty(&r).map_err(anyhow::Error::from)? + "\n";
            fs::write(&a.reproducer, &text)
                .with_context(|| format!("writing {}", a.reproducer.display()))?;
            eprintln!(
                "verify: {} mismatch in {} (expected {}, got {}: {}); reproducer written to {}",
                r.check,
                r.engine,
                r.expected_cost,
                r.actual_cost,
                r.detail,
                a.reproducer.display()
            );
            Ok(3)
        }
    }
}

fn write_fixture(a: FixtureArgs) -> CmdResult {
    let w = fixture(&a.name)
        .with_context(|| format!("unknown fixture `{}` ({})", a.name, FIXTURE_NAMES.join(", ")))?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let cat = a.out_dir.join(format!("{}.catalog.json", w.name));
    let query = a.out_dir.join(format!("{}.query.json", w.name));
    fs::write(&cat, w.catalog.to_json() + "\n")?;
    fs::write(&query, w.query.to_json() + "\n")?;
    println!("{}\n{}", cat.display(), query.display());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.schema_version {
        println!("schema-version={SCHEMA_VERSION}");
        return ExitCode::SUCCESS;
    }
    let Some(cmd) = cli.command else {
        eprintln!("error: a subcommand is required (see --help)");
        return ExitCode::from(1);
    };
    let result = match cmd {
        Command::Optimize(a) => optimize(a),
        Command::Reoptimize(a) => reoptimize(a),
        Command::Bench(a) => run_bench(a),
        Command::Verify(a) => verify(a),
        Command::Fixture(a) => write_fixture(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
