//! Benchmark sweeps and the equivalence suite behind the `bench` and
//! `verify` commands.
//!
//! Everything here is a pure function of its inputs and seed. Wall-clock
//! columns are only emitted on request, so default reports are
//! byte-identical across runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::baselines::{
    brute_force_optimize, systemr_optimize, volcano_optimize, BaselineRun, VolcanoOptions,
};
use crate::catalog::StatUpdate;
use crate::costmodel::{Cost, CostModel};
use crate::incremental::ReoptSession;
use crate::optimizer::{Optimizer, OptimizerConfig, Strategies};
use crate::plan::PlanTree;
use crate::workload::{random_update_batch, synthetic, update_batch, Shape, Workload};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Largest query the exhaustive oracle is run on.
pub const ORACLE_LIMIT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Declarative,
    Volcano,
    Systemr,
    Oracle,
}

impl EngineKind {
    pub const ALL: [EngineKind; 4] = [
        EngineKind::Declarative,
        EngineKind::Volcano,
        EngineKind::Systemr,
        EngineKind::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EngineKind::Declarative => "declarative",
            EngineKind::Volcano => "volcano",
            EngineKind::Systemr => "systemr",
            EngineKind::Oracle => "oracle",
        }
    }
}

impl std::fmt::Display for EngineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EngineKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        EngineKind::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown engine `{s}` (declarative, volcano, systemr, oracle)"))
    }
}

/// Runs one of the non-declarative engines.
pub fn run_baseline(
    engine: EngineKind,
    w: &Workload,
    model: CostModel,
) -> Result<BaselineRun> {
    match engine {
        EngineKind::Volcano => volcano_optimize(&w.catalog, &w.query, model, VolcanoOptions::default()),
        EngineKind::Systemr => systemr_optimize(&w.catalog, &w.query, model),
        EngineKind::Oracle => brute_force_optimize(&w.catalog, &w.query, model),
        EngineKind::Declarative => unreachable!("declarative engine is not a baseline"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub shapes: Vec<Shape>,
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub strategies: Strategies,
    pub engines: Vec<EngineKind>,
    /// Updates per re-optimization batch; 0 draws a random size.
    pub batch: usize,
    pub timing: bool,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            shapes: Shape::ALL.to_vec(),
            sizes: vec![3, 4, 5, 6],
            trials: 5,
            seed: 42,
            strategies: Strategies::ALL,
            engines: EngineKind::ALL.to_vec(),
            batch: 1,
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub engine: EngineKind,
    pub strategies: String,
    pub query: String,
    pub trial: usize,
    pub total_or: usize,
    pub total_and: usize,
    pub pruning_ratio_or: f64,
    pub pruning_ratio_and: f64,
    pub touched_or: usize,
    pub touched_and: usize,
    pub update_ratio_or: f64,
    pub update_ratio_and: f64,
    pub cost: String,
    pub optimize_ms: f64,
    pub reoptimize_ms: f64,
}

const COLUMNS: &str = "engine,strategies,query,trial,total_or,total_and,pruning_ratio_or,pruning_ratio_and,touched_or,touched_and,update_ratio_or,update_ratio_and,cost";

/// Per-trial seed derived from the sweep seed and the trial coordinates.
pub fn trial_seed(seed: u64, shape: Shape, n: usize, trial: usize) -> u64 {
    let s = Shape::ALL.iter().position(|&x| x == shape).unwrap_or(0) as u64;
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (s << 48)
        ^ ((n as u64) << 32)
        ^ trial as u64
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn bench_declarative(w: &Workload, trial: usize, spec: &BenchSpec, batch: &[StatUpdate]) -> Result<BenchRow> {
    let (opt, plan) = Optimizer::optimize(&w.catalog, &w.query, OptimizerConfig::with_strategies(spec.strategies))?;
    let m = opt.metrics();
    let mut session = ReoptSession::new(opt)?;
    session.extend(batch.iter().cloned());
    let (_, r) = session.reoptimize()?;
    Ok(BenchRow {
        engine: EngineKind::Declarative,
        strategies: spec.strategies.to_string(),
        query: w.name.clone(),
        trial,
        total_or: m.total_or,
        total_and: m.total_and,
        pruning_ratio_or: m.pruning_ratio_or,
        pruning_ratio_and: m.pruning_ratio_and,
        touched_or: r.touched_or,
        touched_and: r.touched_and,
        update_ratio_or: r.update_ratio_or,
        update_ratio_and: r.update_ratio_and,
        cost: plan.cost().to_string(),
        optimize_ms: 0.0,
        reoptimize_ms: r.wall_time_ms,
    })
}

/// Baselines re-optimize from scratch, so every live group they solve and
/// every live alternative they cost again counts as touched.
fn bench_baseline(engine: EngineKind, w: &Workload, trial: usize, batch: &[StatUpdate]) -> Result<BenchRow> {
    let model = CostModel::default();
    let first = run_baseline(engine, w, model)?;
    let updated = Workload {
        catalog: w.catalog.apply_updates(batch)?,
        ..w.clone()
    };
    let again = run_baseline(engine, &updated, model)?;
    let m = again.metrics;
    Ok(BenchRow {
        engine,
        strategies: "-".into(),
        query: w.name.clone(),
        trial,
        total_or: first.metrics.total_or,
        total_and: first.metrics.total_and,
        pruning_ratio_or: first.metrics.pruning_ratio_or(),
        pruning_ratio_and: first.metrics.pruning_ratio_and(),
        touched_or: m.total_or - m.pruned_or,
        touched_and: m.total_and - m.pruned_and,
        update_ratio_or: ratio(m.total_or - m.pruned_or, m.total_or),
        update_ratio_and: ratio(m.total_and - m.pruned_and, m.total_and),
        cost: first.plan.cost().to_string(),
        optimize_ms: first.metrics.wall_time_ms,
        reoptimize_ms: m.wall_time_ms,
    })
}

/// Runs the sweep. Trials are ordered by shape, then size, then trial
/// number; engines follow `spec.engines`. The oracle is skipped above
/// [`ORACLE_LIMIT`] relations.
pub fn run_bench(spec: &BenchSpec) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &shape in &spec.shapes {
        for &n in &spec.sizes {
            for trial in 0..spec.trials {
                let seed = trial_seed(spec.seed, shape, n, trial);
                let w = Workload {
                    name: format!("{shape}{n}-t{trial}"),
                    ..synthetic(shape, n, seed)
                };
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB47C);
                let batch = if spec.batch == 0 {
                    random_update_batch(&w, seed ^ 0xB47C)
                } else {
                    update_batch(&w, spec.batch, &mut rng)
                };
                for &e in &spec.engines {
                    match e {
                        EngineKind::Declarative => {
                            let start = std::time::Instant::now();
                            let mut row = bench_declarative(&w, trial, spec, &batch)?;
                            row.optimize_ms = start.elapsed().as_secs_f64() * 1e3 - row.reoptimize_ms;
                            rows.push(row);
                        }
                        EngineKind::Oracle if n > ORACLE_LIMIT => {}
                        _ => rows.push(bench_baseline(e, &w, trial, &batch)?),
                    }
                }
            }
        }
    }
    Ok(rows)
}

fn columns(timing: bool) -> Vec<&'static str> {
    let mut c: Vec<&str> = COLUMNS.split(',').collect();
    if timing {
        c.extend(["optimize_ms", "reoptimize_ms"]);
    }
    c
}

/// The report: a `#schema-version=N` line, then CSV with a header row.
pub fn to_csv(rows: &[BenchRow], timing: bool) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(columns(timing)).expect("in-memory write");
    for r in rows {
        let mut rec = vec![
            r.engine.to_string(),
            r.strategies.replace(',', "+"),
            r.query.clone(),
            r.trial.to_string(),
            r.total_or.to_string(),
            r.total_and.to_string(),
            format!("{:.6}", r.pruning_ratio_or),
            format!("{:.6}", r.pruning_ratio_and),
            r.touched_or.to_string(),
            r.touched_and.to_string(),
            format!("{:.6}", r.update_ratio_or),
            format!("{:.6}", r.update_ratio_and),
            r.cost.clone(),
        ];
        if timing {
            rec.push(format!("{:.3}", r.optimize_ms));
            rec.push(format!("{:.3}", r.reoptimize_ms));
        }
        w.write_record(&rec).expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("flush")).expect("utf-8");
    format!("#schema-version={SCHEMA_VERSION}\n{body}")
}

/// Perturbs the cost model of one engine in the verify suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fault {
    pub engine: EngineKind,
    pub scan_bias: Cost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifySpec {
    pub shapes: Vec<Shape>,
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for VerifySpec {
    fn default() -> Self {
        VerifySpec {
            shapes: Shape::ALL.to_vec(),
            sizes: vec![3, 4, 5],
            trials: 3,
            seed: 42,
            fault: None,
        }
    }
}

/// A failing case, reduced: the smallest failing workload is found first
/// and updates that are not needed to reproduce it are dropped.
#[derive(Debug, Clone, Serialize)]
pub struct Reproducer {
    pub check: String,
    pub engine: String,
    pub query: crate::algebra::Query,
    pub catalog: crate::catalog::Catalog,
    pub updates: Vec<StatUpdate>,
    pub expected_cost: String,
    pub actual_cost: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub cases: usize,
    pub checks: usize,
    pub reproducer: Option<Reproducer>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.reproducer.is_none()
    }
}

struct Mismatch {
    check: &'static str,
    engine: String,
    expected: Cost,
    actual: Cost,
    detail: String,
}

fn model_for(fault: Option<Fault>, engine: EngineKind) -> CostModel {
    let mut m = CostModel::default();
    if let Some(f) = fault.filter(|f| f.engine == engine) {
        m.scan_bias = f.scan_bias;
    }
    m
}

fn compare(check: &'static str, engine: String, expected: &PlanTree, actual: &PlanTree) -> Option<Mismatch> {
    if expected.cost() == actual.cost() && expected.nodes() == actual.nodes() {
        return None;
    }
    Some(Mismatch {
        check,
        engine,
        expected: expected.cost(),
        actual: actual.cost(),
        detail: if expected.cost() == actual.cost() {
            "plan trees differ".into()
        } else {
            "best costs differ".into()
        },
    })
}

/// Checks every engine against the oracle on `w`, then the declarative
/// engine's re-optimization under `updates` against a from-scratch run.
fn check_case(w: &Workload, updates: &[StatUpdate], fault: Option<Fault>, checks: &mut usize) -> Result<Option<Mismatch>> {
    let oracle = brute_force_optimize(&w.catalog, &w.query, model_for(fault, EngineKind::Oracle))?.plan;
    for e in [EngineKind::Volcano, EngineKind::Systemr] {
        *checks += 1;
        let plan = run_baseline(e, w, model_for(fault, e))?.plan;
        if let Some(m) = compare("optimality", e.name().into(), &oracle, &plan) {
            return Ok(Some(m));
        }
    }
    *checks += 1;
    let opts = VolcanoOptions { limits: false };
    let unbounded = volcano_optimize(&w.catalog, &w.query, model_for(fault, EngineKind::Volcano), opts)?;
    if let Some(m) = compare("optimality", "volcano-unbounded".into(), &oracle, &unbounded.plan) {
        return Ok(Some(m));
    }
    let model = model_for(fault, EngineKind::Declarative);
    for s in Strategies::all_subsets() {
        *checks += 1;
        let cfg = OptimizerConfig {
            model,
            ..OptimizerConfig::with_strategies(s)
        };
        let (opt, plan) = Optimizer::optimize(&w.catalog, &w.query, cfg)?;
        if let Some(m) = compare("optimality", format!("declarative[{s}]"), &oracle, &plan) {
            return Ok(Some(m));
        }
        if !opt.audit().is_clean() {
            return Ok(Some(Mismatch {
                check: "audit",
                engine: format!("declarative[{s}]"),
                expected: plan.cost(),
                actual: plan.cost(),
                detail: opt.audit().violations.join("; "),
            }));
        }
        if updates.is_empty() {
            continue;
        }
        *checks += 1;
        let mut session = ReoptSession::new(opt)?;
        session.extend(updates.iter().cloned());
        let (re, _) = session.reoptimize()?;
        let next = w.catalog.apply_updates(updates)?;
        let (_, scratch) = Optimizer::optimize(&next, &w.query, cfg)?;
        if let Some(m) = compare("incremental", format!("declarative[{s}]"), &scratch, &re) {
            return Ok(Some(m));
        }
    }
    Ok(None)
}

fn reduce(w: &Workload, mut updates: Vec<StatUpdate>, fault: Option<Fault>) -> (Vec<StatUpdate>, Option<Mismatch>) {
    let mut scratch = 0;
    let mut i = 0;
    while i < updates.len() {
        let mut fewer = updates.clone();
        fewer.remove(i);
        match check_case(w, &fewer, fault, &mut scratch) {
            Ok(Some(_)) => updates = fewer,
            _ => i += 1,
        }
    }
    let m = check_case(w, &updates, fault, &mut scratch).ok().flatten();
    (updates, m)
}

/// Runs the equivalence suite: optimality of every engine and strategy
/// subset against the oracle, engine audits and incremental-versus-scratch
/// agreement, over seeded workloads in increasing size.
pub fn run_verify(spec: &VerifySpec) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let mut sizes = spec.sizes.clone();
    sizes.sort_unstable();
    for &n in &sizes {
        if n > ORACLE_LIMIT {
            return Err(Error::TooLarge(n));
        }
        for &shape in &spec.shapes {
            for trial in 0..spec.trials {
                let seed = trial_seed(spec.seed, shape, n, trial);
                let w = synthetic(shape, n, seed);
                let updates = random_update_batch(&w, seed ^ 0x5EED);
                report.cases += 1;
                if let Some(m) = check_case(&w, &updates, spec.fault, &mut report.checks)? {
                    let (updates, reduced) = reduce(&w, updates, spec.fault);
                    let m = reduced.unwrap_or(m);
                    report.reproducer = Some(Reproducer {
                        check: m.check.into(),
                        engine: m.engine,
                        query: w.query.clone(),
                        catalog: w.catalog.clone(),
                        updates,
                        expected_cost: m.expected.to_string(),
                        actual_cost: m.actual.to_string(),
                        detail: m.detail,
                    });
                    return Ok(report);
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_is_deterministic_and_versioned() {
        let spec = BenchSpec {
            shapes: vec![Shape::Star],
            sizes: vec![4],
            trials: 2,
            ..Default::default()
        };
        let a = to_csv(&run_bench(&spec).unwrap(), false);
        assert_eq!(a, to_csv(&run_bench(&spec).unwrap(), false));
        assert!(a.starts_with("#schema-version=1\n"));
        assert_eq!(a.lines().count(), 2 + 2 * 4);
        let timed = to_csv(&run_bench(&spec).unwrap(), true);
        assert!(timed.lines().nth(1).unwrap().ends_with(",optimize_ms,reoptimize_ms"));
    }

    #[test]
    fn fault_injection_is_caught_and_reduced() {
        let spec = VerifySpec {
            sizes: vec![3],
            trials: 1,
            fault: Some(Fault {
                engine: EngineKind::Volcano,
                scan_bias: Cost::from_f64(1.0),
            }),
            ..Default::default()
        };
        let r = run_verify(&spec).unwrap();
        let repro = r.reproducer.expect("mismatch found");
        assert_eq!(repro.engine, "volcano");
        assert!(repro.updates.is_empty());
        assert!(run_verify(&VerifySpec { fault: None, ..spec }).unwrap().passed());
    }
}
