//! Exhaustive recursive search without memoization of costs. Exponential,
//! so limited to small queries; used as ground truth in tests.

use std::collections::HashSet;
use std::time::Instant;

use crate::algebra::{alternatives, GroupKey, Query, QueryGraph};
use crate::catalog::Catalog;
use crate::costmodel::{Cost, CostModel, Coster};
use crate::plan::{build_tree, PlanTree};
use crate::{Error, Result};

use super::{BaselineMetrics, BaselineRun, Space};

pub const ORACLE_MAX_RELATIONS: usize = 8;

struct Visits {
    seen: HashSet<GroupKey>,
    order: Vec<GroupKey>,
}

impl Visits {
    fn new() -> Visits {
        Visits {
            seen: HashSet::new(),
            order: Vec::new(),
        }
    }

    fn record(&mut self, k: GroupKey) {
        if self.seen.insert(k) {
            self.order.push(k);
        }
    }
}

fn best(c: &mut Coster<'_>, key: GroupKey, visits: &mut Visits) -> Option<(Cost, u32)> {
    visits.record(key);
    let mut out: Option<(Cost, u32)> = None;
    for alt in alternatives(c.graph, key) {
        let mut total = c.local_cost(key.expr, &alt);
        let mut ok = true;
        for child in alt.children() {
            match best(c, child, visits) {
                Some((cc, _)) => total = total + cc,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && out.is_none_or(|b| (total, alt.index) < b) {
            out = Some((total, alt.index));
        }
    }
    out
}

pub fn brute_force_optimize(cat: &Catalog, query: &Query, model: CostModel) -> Result<BaselineRun> {
    let start = Instant::now();
    let g = QueryGraph::new(cat, query)?;
    if g.num_rels() > ORACLE_MAX_RELATIONS {
        return Err(Error::TooLarge(g.num_rels()));
    }
    let mut coster = Coster::new(&g, cat, model);
    let mut visits = Visits::new();
    best(&mut coster, g.root_group(), &mut visits).ok_or(Error::InfeasibleQuery)?;
    let mut scratch = Visits::new();
    let root = build_tree(g.root_group(), &mut |k| {
        let (cost, idx) = best(&mut coster, k, &mut scratch)?;
        let alt = alternatives(&g, k).into_iter().find(|a| a.index == idx)?;
        let local = coster.local_cost(k.expr, &alt);
        Some((alt, cost, local, coster.summary(k.expr)))
    })
    .ok_or(Error::InfeasibleQuery)?;

    let space = Space::enumerate(&g);
    let metrics = BaselineMetrics {
        visited_or: space.groups.len(),
        visited_and: space.total_alternatives(),
        pruned_or: 0,
        pruned_and: 0,
        total_or: space.live_groups.len(),
        total_and: space.live_alts.len(),
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok(BaselineRun {
        plan: PlanTree { root },
        metrics,
        visits: visits.order,
    })
}
