use incropt_core::baselines::brute_force_optimize;
use incropt_core::deltaflow::{Delta, DrainOrder};
use incropt_core::incremental::{stat_to_deltas, ReoptSession};
use incropt_core::optimizer::{Fact, Snapshot};
use incropt_core::workload::{fixture, random_update_batch, synthetic, Shape, Workload};
use incropt_core::{
    algebra::PhyOp, CostModel, Error, Optimizer, OptimizerConfig, PropertySpec, Query,
    StatUpdate, Strategies,
};
use proptest::prelude::*;

fn run(w: &Workload, s: Strategies) -> Optimizer {
    Optimizer::optimize(&w.catalog, &w.query, OptimizerConfig::with_strategies(s))
        .unwrap()
        .0
}

fn q3s() -> Workload {
    fixture("q3s").unwrap()
}

#[test]
fn root_group_keeps_several_alternatives_without_pruning() {
    let w = q3s();
    let opt = run(&w, Strategies::NONE);
    let root = opt.graph().root_group();
    let visible = opt.visible_rows().iter().filter(|(k, _)| *k == root).count();
    assert!(visible >= 2, "{visible}");
}

#[test]
fn single_relation_query_is_one_scan() {
    let w = q3s();
    let q = Query::new(&["orders"]);
    let (opt, plan) = Optimizer::optimize(&w.catalog, &q, OptimizerConfig::default()).unwrap();
    assert_eq!(plan.nodes().len(), 1);
    assert_eq!(plan.root.phy_op, PhyOp::SeqScan);
    assert_eq!(opt.visible_rows().len(), 1);
}

#[test]
fn disconnected_query_is_infeasible() {
    let w = fixture("q5s").unwrap();
    let q = Query::new(&["customer", "region"]);
    for s in Strategies::all_subsets() {
        let err = Optimizer::optimize(&w.catalog, &q, OptimizerConfig::with_strategies(s)).unwrap_err();
        assert_eq!(err, Error::InfeasibleQuery);
    }
    let err = brute_force_optimize(&w.catalog, &q, CostModel::default()).unwrap_err();
    assert_eq!(err, Error::InfeasibleQuery);
}

#[test]
fn weaker_strategies_leave_extra_rows() {
    let w = q3s();
    assert!(run(&w, Strategies::ALL).final_state_check().is_exact());
    let aggsel = Strategies::new(true, false, false).unwrap();
    let rep = run(&w, aggsel).final_state_check();
    assert!(!rep.extra.is_empty() && rep.missing.is_empty());
    let opt = run(&w, Strategies::NONE);
    let rep = opt.final_state_check();
    let m = opt.metrics();
    assert_eq!(rep.extra.len() + opt.best_plan().unwrap().nodes().len(), m.total_and);
}

#[test]
fn extraction_is_deterministic() {
    let w = fixture("q8joins").unwrap();
    let opt = run(&w, Strategies::ALL);
    let a = opt.best_plan().unwrap();
    assert_eq!(a, opt.best_plan().unwrap());
    assert!(a.sums_consistent());
    assert_eq!(a.nodes().len(), 15);
}

#[test]
fn scan_update_only_touches_the_scanned_relation() {
    let w = q3s();
    let opt = run(&w, Strategies::ALL);
    let d = stat_to_deltas(&[StatUpdate::scan_cost("lineitem", 8.0)], &opt).unwrap();
    let l = opt.graph().rel_index("lineitem").unwrap() as u32;
    assert_eq!(d.len(), 1);
    assert!(matches!(d[0], Delta::Update(Fact::ScanParams(r, _), Fact::ScanParams(r2, _)) if r == l && r2 == l));
    let p = &w.catalog.predicates[0];
    let same = StatUpdate::join_selectivity(p.left.clone(), p.right.clone(), 1.0);
    assert!(stat_to_deltas(&[same], &opt).unwrap().is_empty());
}

#[test]
fn selectivity_update_changes_summaries_above_the_join() {
    let w = q3s();
    let opt = run(&w, Strategies::ALL);
    let p = &w.catalog.predicates[1];
    let d = stat_to_deltas(&[StatUpdate::join_selectivity(p.left.clone(), p.right.clone(), 4.0)], &opt).unwrap();
    // orders-lineitem appears in OL and COL.
    assert_eq!(d.len(), 2);
    assert!(d.iter().all(|x| matches!(x, Delta::Update(Fact::Summary(..), Fact::Summary(..)))));
}

#[test]
fn convergence_flags() {
    let w = fixture("q5s").unwrap();
    let mut s = ReoptSession::new(run(&w, Strategies::ALL)).unwrap();
    s.push(StatUpdate::scan_cost("lineitem", 8.0));
    let (_, m) = s.reoptimize().unwrap();
    assert!(m.plan_changed && m.update_ratio_and < 1.0);
    assert!(!s.converged());
    s.push(StatUpdate::scan_cost("lineitem", 1.0));
    let (_, m) = s.reoptimize().unwrap();
    assert_eq!((m.touched_and, m.touched_or, m.update_ratio_and), (0, 0, 0.0));
    assert!(!m.plan_changed && s.converged());
}

#[test]
fn inverse_batches_restore_the_initial_state() {
    let w = fixture("q5s").unwrap();
    let opt = run(&w, Strategies::ALL);
    let initial = opt.snapshot().unwrap();
    let batch = vec![
        StatUpdate::scan_cost("lineitem", 8.0),
        StatUpdate::scan_cost("nation", 0.25),
        StatUpdate::join_selectivity("orders.o_orderkey".parse().unwrap(), "lineitem.l_orderkey".parse().unwrap(), 0.5),
    ];
    let mut s = ReoptSession::new(opt).unwrap();
    s.extend(batch.clone());
    s.reoptimize().unwrap();
    s.extend(batch.iter().rev().map(StatUpdate::inverse));
    s.reoptimize().unwrap();
    assert_eq!(s.optimizer().snapshot().unwrap(), initial);
    s.reoptimize().unwrap();
    assert!(s.converged());
}

#[test]
fn snapshot_round_trip_and_tamper_detection() {
    let w = fixture("q5s").unwrap();
    let opt = run(&w, Strategies::ALL);
    let text = opt.snapshot().unwrap().to_json();
    let back = Snapshot::from_json(&text).unwrap().restore().unwrap();
    assert_eq!(back.visible_state(), opt.visible_state());

    let mut snap = Snapshot::from_json(&text).unwrap();
    snap.relations.search_space.pop();
    assert!(matches!(snap.restore(), Err(Error::Snapshot(_))));

    let mut snap = Snapshot::from_json(&text).unwrap();
    snap.catalog.relations[0].cardinality += 1.0;
    assert!(matches!(snap.restore(), Err(Error::Snapshot(_))));

    assert!(Snapshot::from_json("{\"format\": 1}").is_err());
}

#[test]
fn leaf_properties_follow_access_paths() {
    let w = q3s();
    let opt = run(&w, Strategies::NONE);
    let g = opt.graph();
    for k in opt.group_keys().into_iter().filter(|k| k.expr.len() == 1) {
        let rel = &w.catalog.relations[g.rel(k.expr.lowest()).catalog_index];
        let ops: Vec<PhyOp> = opt.alternatives(k).iter().map(|a| a.phy_op).collect();
        match k.prop {
            PropertySpec::None => assert_eq!(ops, [PhyOp::SeqScan]),
            PropertySpec::IndexOn(a) => {
                let name = g.attr_ref(a).attribute;
                assert_eq!(!ops.is_empty(), rel.is_indexed_on(&name));
            }
            PropertySpec::SortedOn(a) => {
                let name = g.attr_ref(a).attribute;
                assert_eq!(!ops.is_empty(), rel.is_indexed_on(&name) || rel.is_sorted_on(&name));
            }
        }
    }
}

fn strategies() -> impl Strategy<Value = Strategies> {
    (0usize..6).prop_map(|i| Strategies::all_subsets()[i])
}

fn shape() -> impl Strategy<Value = Shape> {
    prop::sample::select(Shape::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn incremental_matches_scratch_under_any_drain(
        shape in shape(),
        n in 3usize..=5,
        seed in any::<u64>(),
        batch_seed in any::<u64>(),
        drain_seed in any::<u64>(),
        s in strategies(),
    ) {
        let w = synthetic(shape, n, seed);
        let batch = random_update_batch(&w, batch_seed);
        let cfg = OptimizerConfig { drain: DrainOrder::Shuffled(drain_seed), ..OptimizerConfig::with_strategies(s) };
        let (opt, _) = Optimizer::optimize(&w.catalog, &w.query, cfg).unwrap();
        let mut session = ReoptSession::new(opt).unwrap();
        session.extend(batch.clone());
        let (re, _) = session.reoptimize().unwrap();
        prop_assert!(session.optimizer().audit().is_clean(), "{:?}", session.optimizer().audit());
        let next = w.catalog.apply_updates(&batch).unwrap();
        let (scratch, plan) = Optimizer::optimize(&next, &w.query, OptimizerConfig::with_strategies(s)).unwrap();
        prop_assert_eq!(&re, &plan);
        prop_assert_eq!(session.optimizer().visible_state(), scratch.visible_state());
        let oracle = brute_force_optimize(&next, &w.query, CostModel::default()).unwrap().plan;
        prop_assert_eq!(re, oracle);
    }

    #[test]
    fn all_strategies_keep_only_the_optimal_tree(shape in shape(), n in 2usize..=6, seed in any::<u64>()) {
        let w = synthetic(shape, n, seed);
        let opt = run(&w, Strategies::ALL);
        let rep = opt.final_state_check();
        prop_assert!(rep.is_exact(), "{:?}", rep);
    }
}
