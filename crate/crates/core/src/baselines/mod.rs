//! Reference optimizers over the same enumeration and cost functions as the
//! declarative engine: an exhaustive oracle, bottom-up dynamic programming
//! and top-down branch-and-bound.
//!
//! All three break cost ties toward the lowest alternative index.

mod oracle;
mod systemr;
mod volcano;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::algebra::{alternatives, Alternative, GroupKey, QueryGraph};

pub use oracle::brute_force_optimize;
pub use systemr::systemr_optimize;
pub use volcano::{volcano_optimize, VolcanoOptions};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct BaselineMetrics {
    /// Groups whose alternatives were examined.
    pub visited_or: usize,
    /// Alternatives examined.
    pub visited_and: usize,
    /// Live groups for which no optimal plan was computed.
    pub pruned_or: usize,
    /// Live alternatives never fully costed.
    pub pruned_and: usize,
    pub total_or: usize,
    pub total_and: usize,
    pub wall_time_ms: f64,
}

impl BaselineMetrics {
    pub fn pruning_ratio_or(&self) -> f64 {
        ratio(self.pruned_or, self.total_or)
    }

    pub fn pruning_ratio_and(&self) -> f64 {
        ratio(self.pruned_and, self.total_and)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub plan: crate::plan::PlanTree,
    pub metrics: BaselineMetrics,
    /// Groups in the order their alternatives were first examined.
    pub visits: Vec<GroupKey>,
}

/// Every group reachable from the root through enumerated alternatives,
/// with the alternatives and which groups and alternatives can produce a
/// complete plan.
#[derive(Debug, Clone)]
pub struct Space {
    pub groups: BTreeMap<GroupKey, Vec<Alternative>>,
    pub live_groups: BTreeSet<GroupKey>,
    pub live_alts: BTreeSet<(GroupKey, u32)>,
}

impl Space {
    pub fn enumerate(g: &QueryGraph) -> Space {
        let mut groups = BTreeMap::new();
        let mut stack = vec![g.root_group()];
        while let Some(k) = stack.pop() {
            if groups.contains_key(&k) {
                continue;
            }
            let alts = alternatives(g, k);
            stack.extend(alts.iter().flat_map(|a| a.children()));
            groups.insert(k, alts);
        }
        let mut order: Vec<GroupKey> = groups.keys().copied().collect();
        order.sort_by_key(|k| (k.expr.len(), *k));
        let mut live_groups = BTreeSet::new();
        let mut live_alts = BTreeSet::new();
        for k in order {
            for a in &groups[&k] {
                if a.children().all(|c| live_groups.contains(&c)) {
                    live_alts.insert((k, a.index));
                }
            }
            if groups[&k].iter().any(|a| live_alts.contains(&(k, a.index))) {
                live_groups.insert(k);
            }
        }
        Space {
            groups,
            live_groups,
            live_alts,
        }
    }

    pub fn total_alternatives(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }
}
