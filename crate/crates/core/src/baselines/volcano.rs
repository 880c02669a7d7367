//! Top-down memoized search with cost limits. A group is optimized under a
//! limit; alternatives whose partial cost exceeds it are abandoned, and a
//! failure under a limit is remembered so a later request with a tighter or
//! equal limit fails without search.

use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use crate::algebra::{alternatives, Alternative, GroupKey, Query, QueryGraph};
use crate::catalog::Catalog;
use crate::costmodel::{Cost, CostModel, Coster};
use crate::plan::{build_tree, PlanTree};
use crate::{Error, Result};

use super::{BaselineMetrics, BaselineRun, Space};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VolcanoOptions {
    /// Branch-and-bound on. Without limits every child of every alternative
    /// is explored.
    pub limits: bool,
}

impl Default for VolcanoOptions {
    fn default() -> Self {
        VolcanoOptions { limits: true }
    }
}

#[derive(Debug, Clone, Copy)]
enum Memo {
    /// The group's optimum, or `None` if no complete plan exists.
    Solved(Option<(Cost, u32)>),
    /// The optimum is known to exceed this limit.
    Failed(Cost),
}

struct Search<'a> {
    coster: Coster<'a>,
    opts: VolcanoOptions,
    memo: HashMap<GroupKey, Memo>,
    alts: HashMap<GroupKey, Vec<Alternative>>,
    visits: Vec<GroupKey>,
    examined: BTreeSet<(GroupKey, u32)>,
    costed: BTreeSet<(GroupKey, u32)>,
}

impl Search<'_> {
    fn alternatives(&mut self, key: GroupKey) -> Vec<Alternative> {
        if !self.alts.contains_key(&key) {
            self.visits.push(key);
            let a = alternatives(self.coster.graph, key);
            self.alts.insert(key, a);
        }
        self.alts[&key].clone()
    }

    fn optimize(&mut self, key: GroupKey, limit: Cost) -> Option<(Cost, u32)> {
        match self.memo.get(&key) {
            Some(Memo::Solved(b)) => return b.filter(|b| b.0 <= limit),
            Some(Memo::Failed(l)) if limit <= *l => return None,
            _ => {}
        }
        let limits = self.opts.limits;
        let mut best: Option<(Cost, u32)> = None;
        for alt in self.alternatives(key) {
            self.examined.insert((key, alt.index));
            let local = self.coster.local_cost(key.expr, &alt);
            // Alternatives come in index order, so a later one must be
            // strictly cheaper to win a tie.
            let budget = match best {
                Some((b, _)) if limits => limit.min(b - Cost::UNIT),
                _ if limits => limit,
                _ => Cost::INFINITY,
            };
            if local > budget {
                continue;
            }
            let mut acc = local;
            let mut ok = true;
            for child in alt.children() {
                let child_limit = budget - acc;
                if limits && child_limit < Cost::ZERO {
                    ok = false;
                    break;
                }
                match self.optimize(child, child_limit) {
                    Some((c, _)) => acc = acc + c,
                    None => {
                        ok = false;
                        if limits {
                            break;
                        }
                    }
                }
            }
            if !ok {
                continue;
            }
            self.costed.insert((key, alt.index));
            if acc <= budget && best.is_none_or(|b| (acc, alt.index) < b) {
                best = Some((acc, alt.index));
            }
        }
        let entry = match (best, self.memo.get(&key)) {
            (Some(b), _) => Memo::Solved(Some(b)),
            (None, _) if limit.is_infinite() => Memo::Solved(None),
            (None, Some(Memo::Failed(l))) => Memo::Failed((*l).max(limit)),
            (None, _) => Memo::Failed(limit),
        };
        self.memo.insert(key, entry);
        best
    }
}

pub fn volcano_optimize(
    cat: &Catalog,
    query: &Query,
    model: CostModel,
    opts: VolcanoOptions,
) -> Result<BaselineRun> {
    let start = Instant::now();
    let g = QueryGraph::new(cat, query)?;
    let mut s = Search {
        coster: Coster::new(&g, cat, model),
        opts,
        memo: HashMap::new(),
        alts: HashMap::new(),
        visits: Vec::new(),
        examined: BTreeSet::new(),
        costed: BTreeSet::new(),
    };
    s.optimize(g.root_group(), Cost::INFINITY).ok_or(Error::InfeasibleQuery)?;

    let memo = s.memo.clone();
    let alts = s.alts.clone();
    let root = build_tree(g.root_group(), &mut |k| {
        let Some(Memo::Solved(Some((cost, idx)))) = memo.get(&k).copied() else {
            return None;
        };
        let alt = *alts[&k].iter().find(|a| a.index == idx)?;
        let local = s.coster.local_cost(k.expr, &alt);
        Some((alt, cost, local, s.coster.summary(k.expr)))
    })
    .ok_or(Error::InfeasibleQuery)?;

    let space = Space::enumerate(&g);
    let solved = space
        .live_groups
        .iter()
        .filter(|k| matches!(memo.get(k), Some(Memo::Solved(Some(_)))))
        .count();
    let costed = space.live_alts.iter().filter(|a| s.costed.contains(a)).count();
    let metrics = BaselineMetrics {
        visited_or: s.visits.len(),
        visited_and: s.examined.len(),
        pruned_or: space.live_groups.len() - solved,
        pruned_and: space.live_alts.len() - costed,
        total_or: space.live_groups.len(),
        total_and: space.live_alts.len(),
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok(BaselineRun {
        plan: PlanTree { root },
        metrics,
        visits: s.visits,
    })
}
