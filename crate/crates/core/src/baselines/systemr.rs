//! Bottom-up dynamic programming: the set of groups reachable from the root
//! is computed first, then each group is solved once, smallest expressions
//! first, so every child is already final when its parent is visited.

use std::collections::HashMap;
use std::time::Instant;

use crate::algebra::{GroupKey, Query, QueryGraph};
use crate::catalog::Catalog;
use crate::costmodel::{Cost, CostModel, Coster};
use crate::plan::{build_tree, PlanTree};
use crate::{Error, Result};

use super::{BaselineMetrics, BaselineRun, Space};

pub fn systemr_optimize(cat: &Catalog, query: &Query, model: CostModel) -> Result<BaselineRun> {
    let start = Instant::now();
    let g = QueryGraph::new(cat, query)?;
    let space = Space::enumerate(&g);
    let mut coster = Coster::new(&g, cat, model);

    let mut order: Vec<GroupKey> = space.groups.keys().copied().collect();
    order.sort_by_key(|k| (k.expr.len(), *k));
    let mut best: HashMap<GroupKey, (Cost, u32)> = HashMap::new();
    let mut visited_and = 0;
    for &k in &order {
        let mut out: Option<(Cost, u32)> = None;
        for alt in &space.groups[&k] {
            visited_and += 1;
            let kids: Option<Vec<Cost>> = alt.children().map(|c| best.get(&c).map(|b| b.0)).collect();
            let Some(kids) = kids else { continue };
            let total = kids.into_iter().fold(coster.local_cost(k.expr, alt), |a, c| a + c);
            if out.is_none_or(|b| (total, alt.index) < b) {
                out = Some((total, alt.index));
            }
        }
        if let Some(b) = out {
            best.insert(k, b);
        }
    }

    let root = build_tree(g.root_group(), &mut |k| {
        let &(cost, idx) = best.get(&k)?;
        let alt = *space.groups[&k].iter().find(|a| a.index == idx)?;
        let local = coster.local_cost(k.expr, &alt);
        Some((alt, cost, local, coster.summary(k.expr)))
    })
    .ok_or(Error::InfeasibleQuery)?;

    let metrics = BaselineMetrics {
        visited_or: order.len(),
        visited_and,
        pruned_or: 0,
        pruned_and: 0,
        total_or: space.live_groups.len(),
        total_and: space.live_alts.len(),
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok(BaselineRun {
        plan: PlanTree { root },
        metrics,
        visits: order,
    })
}
