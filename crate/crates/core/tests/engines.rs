use incropt_core::baselines::{brute_force_optimize, systemr_optimize, volcano_optimize, Space, VolcanoOptions};
use incropt_core::workload::{fixture, fixtures, synthetic, Shape};
use incropt_core::{CostModel, Error, Optimizer, OptimizerConfig, QueryGraph, Strategies};

#[test]
fn all_engines_agree_on_fixtures() {
    for w in fixtures() {
        let m = CostModel::default();
        let oracle = brute_force_optimize(&w.catalog, &w.query, m).unwrap();
        let sr = systemr_optimize(&w.catalog, &w.query, m).unwrap();
        let vo = volcano_optimize(&w.catalog, &w.query, m, VolcanoOptions::default()).unwrap();
        assert_eq!(oracle.plan, sr.plan, "{}", w.name);
        assert_eq!(oracle.plan, vo.plan, "{}", w.name);
        assert!(oracle.plan.sums_consistent());
        for s in Strategies::all_subsets() {
            let (_, plan) = Optimizer::optimize(&w.catalog, &w.query, OptimizerConfig::with_strategies(s)).unwrap();
            assert_eq!(plan, oracle.plan, "{} {s}", w.name);
        }
    }
}

#[test]
fn all_engines_agree_on_small_synthetic_queries() {
    for shape in Shape::ALL {
        for n in 3..=5 {
            for seed in 0..4 {
                let w = synthetic(shape, n, seed);
                let m = CostModel::default();
                let oracle = brute_force_optimize(&w.catalog, &w.query, m).unwrap();
                let vo = volcano_optimize(&w.catalog, &w.query, m, VolcanoOptions::default()).unwrap();
                assert_eq!(oracle.plan, vo.plan, "{}", w.name);
                for s in Strategies::all_subsets() {
                    let (_, plan) =
                        Optimizer::optimize(&w.catalog, &w.query, OptimizerConfig::with_strategies(s)).unwrap();
                    assert_eq!(plan, oracle.plan, "{} {s}", w.name);
                }
            }
        }
    }
}

#[test]
fn unlimited_volcano_visits_what_systemr_visits() {
    for shape in Shape::ALL {
        let w = synthetic(shape, 5, 11);
        let m = CostModel::default();
        let sr = systemr_optimize(&w.catalog, &w.query, m).unwrap();
        let vo = volcano_optimize(&w.catalog, &w.query, m, VolcanoOptions { limits: false }).unwrap();
        assert_eq!(sr.metrics.visited_or, vo.metrics.visited_or);
        assert_eq!(sr.metrics.visited_and, vo.metrics.visited_and);
        assert_eq!(vo.metrics.pruned_and, 0);
        assert_eq!(sr.metrics.pruned_or, 0);
    }
}

#[test]
fn engine_space_matches_enumeration() {
    for w in fixtures() {
        let g = QueryGraph::new(&w.catalog, &w.query).unwrap();
        let space = Space::enumerate(&g);
        let (opt, _) = Optimizer::optimize(&w.catalog, &w.query, OptimizerConfig::with_strategies(Strategies::NONE)).unwrap();
        let m = opt.metrics();
        assert_eq!(m.enumerated_or, space.groups.len());
        assert_eq!(m.enumerated_and, space.total_alternatives());
        assert_eq!(m.total_or, space.live_groups.len());
        assert_eq!(m.total_and, space.live_alts.len());
    }
}

#[test]
fn oracle_refuses_large_queries() {
    let w = synthetic(Shape::Chain, 9, 1);
    let err = brute_force_optimize(&w.catalog, &w.query, CostModel::default()).unwrap_err();
    assert_eq!(err, Error::TooLarge(9));
    assert!(fixture("q8joins").is_some());
}
