//! The declarative optimizer: search space, costs, best plans, pruning and
//! bounds maintained as relations over the delta engine.
//!
//! A value layer (summaries, local costs, per-alternative costs, per-group
//! best costs) is maintained over the whole enumerated space. Which
//! alternatives are *visible* in `SearchSpace`/`PlanCost` is decided on top
//! of it by the enabled strategies:
//!
//! * aggregate selection keeps only a group's minimum (ties go to the
//!   lowest alternative index);
//! * reference counting hides every alternative of a group that no visible
//!   parent alternative references (the root holds a permanent reference);
//! * recursive bounding hides alternatives costlier than the largest bound
//!   any visible parent hands down.

pub mod rules;
mod snapshot;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::algebra::{Alternative, GroupKey, Query, QueryGraph};
use crate::catalog::Catalog;
use crate::costmodel::{sum_cost, Cost, CostModel, Coster};
use crate::deltaflow::{Delta, DrainOrder, Engine, DEFAULT_CEILING};
use crate::plan::{build_tree, PlanTree};
use crate::{Error, Result};

pub use rules::{aggsel_keep, bound_keep, combine_bound, parent_bound, AltId, Fact, GroupId};
pub use snapshot::{catalog_hash, Snapshot};

use rules::{Rules, Touched};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Strategies {
    pub aggsel: bool,
    pub refcount: bool,
    pub bounding: bool,
}

impl Strategies {
    pub const NONE: Strategies = Strategies {
        aggsel: false,
        refcount: false,
        bounding: false,
    };
    pub const ALL: Strategies = Strategies {
        aggsel: true,
        refcount: true,
        bounding: true,
    };

    pub fn new(aggsel: bool, refcount: bool, bounding: bool) -> Result<Strategies> {
        let s = Strategies {
            aggsel,
            refcount,
            bounding,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bounding && !self.aggsel {
            return Err(Error::Strategies("bounding requires aggsel".into()));
        }
        Ok(())
    }

    /// The six valid subsets, weakest first.
    pub fn all_subsets() -> Vec<Strategies> {
        let mut out = Vec::new();
        for bits in 0..8u8 {
            let s = Strategies {
                aggsel: bits & 1 != 0,
                refcount: bits & 2 != 0,
                bounding: bits & 4 != 0,
            };
            if s.validate().is_ok() {
                out.push(s);
            }
        }
        out
    }
}

impl fmt::Display for Strategies {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names = Vec::new();
        if self.aggsel {
            names.push("aggsel");
        }
        if self.refcount {
            names.push("refcount");
        }
        if self.bounding {
            names.push("bounding");
        }
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

impl FromStr for Strategies {
    type Err = Error;

    fn from_str(s: &str) -> Result<Strategies> {
        let mut out = Strategies::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "none" => {}
                "all" => out = Strategies::ALL,
                "aggsel" => out.aggsel = true,
                "refcount" => out.refcount = true,
                "bounding" => out.bounding = true,
                other => return Err(Error::Strategies(format!("unknown strategy `{other}`"))),
            }
        }
        out.validate()?;
        Ok(out)
    }
}

impl Serialize for Strategies {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Strategies {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub strategies: Strategies,
    pub model: CostModel,
    pub drain: DrainOrder,
    pub ceiling: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            strategies: Strategies::ALL,
            model: CostModel::default(),
            drain: DrainOrder::Fifo,
            ceiling: DEFAULT_CEILING,
        }
    }
}

impl OptimizerConfig {
    pub fn with_strategies(strategies: Strategies) -> Self {
        OptimizerConfig {
            strategies,
            ..Default::default()
        }
    }
}

/// Search-space sizes and how much of it is visible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpaceMetrics {
    /// Groups with at least one complete plan.
    pub total_or: usize,
    /// Alternatives with a complete plan cost.
    pub total_and: usize,
    pub enumerated_or: usize,
    pub enumerated_and: usize,
    pub visible_or: usize,
    pub visible_and: usize,
    pub pruning_ratio_or: f64,
    pub pruning_ratio_and: f64,
    pub deltas: u64,
}

/// The externally meaningful relations, keyed by group and alternative
/// index so that runs with different internal numbering compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VisibleState {
    pub search_space: BTreeMap<(GroupKey, u32), i64>,
    pub plan_cost: BTreeMap<(GroupKey, u32), Cost>,
    pub best_cost: BTreeMap<GroupKey, (Cost, u32)>,
    pub refcount: BTreeMap<GroupKey, i64>,
    pub max_bound: BTreeMap<GroupKey, Cost>,
    pub bound: BTreeMap<GroupKey, Cost>,
}

impl VisibleState {
    pub fn rows(&self) -> usize {
        self.search_space.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FinalStateReport {
    /// Visible rows that are not nodes of the optimal tree.
    pub extra: Vec<String>,
    /// Optimal-tree nodes without a visible row.
    pub missing: Vec<String>,
    pub cost_mismatch: Vec<String>,
}

impl FinalStateReport {
    pub fn is_exact(&self) -> bool {
        self.extra.is_empty() && self.missing.is_empty() && self.cost_mismatch.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AuditReport {
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

pub struct Optimizer {
    query: Query,
    config: OptimizerConfig,
    rules: Rules,
    engine: Engine<Fact>,
}

impl fmt::Debug for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Optimizer")
            .field("query", &self.query)
            .field("strategies", &self.config.strategies)
            .field("groups", &self.rules.groups.len())
            .field("alternatives", &self.rules.alts.len())
            .field("engine", &self.engine)
            .finish()
    }
}

impl Optimizer {
    /// Builds the engine and seeds the root group; call [`Optimizer::run`]
    /// to reach the fixpoint.
    pub fn new(catalog: &Catalog, query: &Query, config: OptimizerConfig) -> Result<Optimizer> {
        catalog.validate()?;
        config.strategies.validate()?;
        config.model.config.validate().map_err(Error::CostConfig)?;
        let graph = QueryGraph::new(catalog, query)?;
        let root = graph.root_group();
        let mut rules = Rules::new(graph, catalog.clone(), config.model, config.strategies);
        let root = rules.group_id(root);
        let mut engine = Engine::new(config.drain, config.ceiling);
        engine.push(Delta::Insert(Fact::Expr(root)));
        engine.push(Delta::Insert(Fact::RefCount(root)));
        Ok(Optimizer {
            query: query.clone(),
            config,
            rules,
            engine,
        })
    }

    /// Optimizes from scratch and extracts the best plan.
    pub fn optimize(catalog: &Catalog, query: &Query, config: OptimizerConfig) -> Result<(Optimizer, PlanTree)> {
        let mut opt = Optimizer::new(catalog, query, config)?;
        opt.run()?;
        let plan = opt.best_plan()?;
        Ok((opt, plan))
    }

    pub fn set_trace(&mut self, sink: Box<dyn Write + Send>) {
        self.rules.tracing = true;
        self.engine.set_trace(sink);
    }

    /// Drains pending deltas; returns how many were processed.
    pub fn run(&mut self) -> Result<u64> {
        Ok(self.engine.run(&mut self.rules)?)
    }

    /// Processes a single pending delta.
    pub fn step(&mut self) -> bool {
        self.engine.step(&mut self.rules)
    }

    pub fn is_quiescent(&self) -> bool {
        self.engine.is_quiescent()
    }

    pub fn query(&self) -> &Query {
        &self.query
    }

    pub fn catalog(&self) -> &Catalog {
        &self.rules.catalog
    }

    pub fn graph(&self) -> &QueryGraph {
        &self.rules.graph
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn strategies(&self) -> Strategies {
        self.config.strategies
    }

    pub fn deltas_processed(&self) -> u64 {
        self.engine.processed()
    }

    /// Replaces the catalog and queues the source changes it implies.
    /// Returns the number of queued deltas.
    pub fn apply_catalog(&mut self, next: Catalog) -> Result<usize> {
        next.validate()?;
        let ds = self.rules.source_deltas(next);
        let n = ds.len();
        self.engine.extend(ds);
        Ok(n)
    }

    /// Previews the source deltas a catalog change would queue, without
    /// applying them.
    pub fn preview_source_deltas(&self, next: &Catalog) -> Vec<Delta<Fact>> {
        let mut probe = Rules::new(
            self.rules.graph.clone(),
            self.rules.catalog.clone(),
            self.rules.model,
            self.rules.strategies,
        );
        probe.copy_sources_from(&self.rules);
        probe.source_deltas(next.clone())
    }

    pub(crate) fn start_touch_tracking(&mut self) {
        self.rules.touched = Some(Touched::default());
    }

    /// Distinct (alternatives, groups) that received a delta since tracking
    /// started.
    pub(crate) fn take_touched(&mut self) -> (usize, usize) {
        let t = self.rules.touched.take().unwrap_or_default();
        (t.alts.len(), t.groups.len())
    }

    fn gid(&self, key: GroupKey) -> Option<GroupId> {
        self.rules.group_ids.get(&key).copied()
    }

    fn aid(&self, key: GroupKey, index: u32) -> Option<AltId> {
        let g = self.gid(key)?;
        self.rules
            .group(g)
            .alts
            .iter()
            .copied()
            .find(|&a| self.rules.alt(a).alt.index == index)
    }

    pub fn best_plan(&self) -> Result<PlanTree> {
        if !self.is_quiescent() {
            return Err(Error::NotQuiescent);
        }
        let r = &self.rules;
        let root = r.graph.root_group();
        let mut choose = |key: GroupKey| {
            let g = self.gid(key)?;
            let (cost, idx) = r.best_of(g)?;
            let a = self.aid(key, idx)?;
            let local = *r.local.min(&a)?;
            let summary = *r.summary.min(&key.expr)?;
            Some((r.alt(a).alt, cost, local, summary))
        };
        build_tree(root, &mut choose)
            .map(|root| PlanTree { root })
            .ok_or(Error::InfeasibleQuery)
    }

    pub fn group_keys(&self) -> Vec<GroupKey> {
        let mut keys: Vec<GroupKey> = self.rules.groups.iter().map(|g| g.key).collect();
        keys.sort();
        keys
    }

    pub fn alternatives(&self, key: GroupKey) -> Vec<Alternative> {
        self.gid(key)
            .map(|g| self.rules.group(g).alts.iter().map(|&a| self.rules.alt(a).alt).collect())
            .unwrap_or_default()
    }

    pub fn refcount(&self, key: GroupKey) -> i64 {
        self.gid(key).map_or(0, |g| self.rules.refcount.count(&g))
    }

    pub fn best_cost(&self, key: GroupKey) -> Option<(Cost, u32)> {
        self.rules.best_of(self.gid(key)?)
    }

    pub fn bound(&self, key: GroupKey) -> Option<Cost> {
        self.rules.bound.min(&self.gid(key)?).copied()
    }

    pub fn max_bound(&self, key: GroupKey) -> Option<Cost> {
        self.rules.max_bound.min(&self.gid(key)?).copied()
    }

    /// ParentBound tuples of a group as (parent group, parent index, bound).
    pub fn parent_bounds(&self, key: GroupKey) -> Vec<(GroupKey, u32, Cost)> {
        let Some(g) = self.gid(key) else {
            return Vec::new();
        };
        let r = &self.rules;
        r.parent_bound
            .members(&g)
            .map(|(c, a)| {
                let st = r.alt(*a);
                (r.group(st.group).key, st.alt.index, c.0)
            })
            .collect()
    }

    pub fn local_cost(&self, key: GroupKey, index: u32) -> Option<Cost> {
        self.rules.local.min(&self.aid(key, index)?).copied()
    }

    pub fn alt_cost(&self, key: GroupKey, index: u32) -> Option<Cost> {
        self.rules.alt_cost.min(&self.aid(key, index)?).copied()
    }

    pub fn is_visible(&self, key: GroupKey, index: u32) -> bool {
        self.aid(key, index).is_some_and(|a| self.rules.is_visible(a))
    }

    pub fn visible_rows(&self) -> BTreeSet<(GroupKey, u32)> {
        self.rules
            .search_space
            .visible()
            .map(|&a| self.alt_key(a))
            .collect()
    }

    fn alt_key(&self, a: AltId) -> (GroupKey, u32) {
        let st = self.rules.alt(a);
        (self.rules.group(st.group).key, st.alt.index)
    }

    pub fn visible_state(&self) -> VisibleState {
        let r = &self.rules;
        let mut s = VisibleState::default();
        for (&a, c) in r.search_space.entries() {
            s.search_space.insert(self.alt_key(a), c);
        }
        for (i, _) in r.alts.iter().enumerate() {
            let a = AltId(i as u32);
            if let Some(&c) = r.plan_cost.min(&a) {
                s.plan_cost.insert(self.alt_key(a), c);
            }
        }
        for (i, g) in r.groups.iter().enumerate() {
            let id = GroupId(i as u32);
            if let Some(b) = r.best_of(id) {
                s.best_cost.insert(g.key, b);
            }
            let rc = r.refcount.count(&id);
            if rc != 0 {
                s.refcount.insert(g.key, rc);
            }
            if let Some(&m) = r.max_bound.min(&id) {
                s.max_bound.insert(g.key, m);
            }
            if let Some(&b) = r.bound.min(&id) {
                s.bound.insert(g.key, b);
            }
        }
        s
    }

    pub fn metrics(&self) -> SpaceMetrics {
        let r = &self.rules;
        let total_or = (0..r.groups.len())
            .filter(|&i| r.best_of(GroupId(i as u32)).is_some())
            .count();
        let total_and = (0..r.alts.len())
            .filter(|&i| r.alt_cost.min(&AltId(i as u32)).is_some())
            .count();
        let visible: Vec<AltId> = r.search_space.visible().copied().collect();
        let visible_groups: BTreeSet<GroupId> = visible.iter().map(|&a| r.alt(a).group).collect();
        let ratio = |vis: usize, tot: usize| {
            if tot == 0 {
                0.0
            } else {
                1.0 - vis as f64 / tot as f64
            }
        };
        SpaceMetrics {
            total_or,
            total_and,
            enumerated_or: r.groups.len(),
            enumerated_and: r.alts.len(),
            visible_or: visible_groups.len(),
            visible_and: visible.len(),
            pruning_ratio_or: ratio(visible_groups.len(), total_or),
            pruning_ratio_and: ratio(visible.len(), total_and),
            deltas: self.engine.processed(),
        }
    }

    /// Compares visible rows against the nodes of the extracted best plan.
    pub fn final_state_check(&self) -> FinalStateReport {
        let mut rep = FinalStateReport::default();
        let g = &self.rules.graph;
        let label = |(k, i): (GroupKey, u32)| format!("{} #{i}", g.group_label(k));
        let tree = match self.best_plan() {
            Ok(t) => t,
            Err(e) => {
                rep.missing.push(format!("no plan: {e}"));
                return rep;
            }
        };
        let mut tree_costs = BTreeMap::new();
        let mut stack = vec![&tree.root];
        while let Some(n) = stack.pop() {
            tree_costs.insert((n.group, n.index), n.cost);
            stack.extend(n.children.iter());
        }
        let state = self.visible_state();
        for (&k, &c) in &state.search_space {
            if c > 0 && !tree_costs.contains_key(&k) {
                rep.extra.push(label(k));
            }
        }
        for (&k, &cost) in &tree_costs {
            if !state.search_space.get(&k).is_some_and(|&c| c > 0) {
                rep.missing.push(label(k));
            }
            match state.plan_cost.get(&k) {
                Some(&c) if c == cost => {}
                other => rep.cost_mismatch.push(format!("{}: plan cost {other:?}, tree {cost}", label(k))),
            }
        }
        for k in state.plan_cost.keys() {
            if !tree_costs.contains_key(k) && !rep.extra.contains(&label(*k)) {
                rep.extra.push(label(*k));
            }
        }
        rep
    }

    /// Recomputes every maintained relation from its defining equation by a
    /// direct scan and lists disagreements.
    pub fn audit(&self) -> AuditReport {
        let r = &self.rules;
        let g = &r.graph;
        let mut v = Vec::new();
        if !self.is_quiescent() {
            v.push(format!("{} deltas still pending", self.engine.pending()));
        }
        if r.expr.has_negative()
            || r.search_space.has_negative()
            || r.refcount.has_negative()
            || r.local.has_negative()
            || r.alt_cost.has_negative()
            || r.best.has_negative()
            || r.plan_cost.has_negative()
            || r.parent_bound.has_negative()
            || r.max_bound.has_negative()
            || r.bound.has_negative()
            || r.summary.has_negative()
            || r.scan.has_negative()
        {
            v.push("negative count at quiescence".into());
        }
        let alabel = |a: AltId| {
            let st = r.alt(a);
            format!("{} #{}", g.group_label(r.group(st.group).key), st.alt.index)
        };
        let mut coster = Coster::new(g, &r.catalog, r.model);
        let root = self.gid(g.root_group());

        for i in 0..r.alts.len() {
            let a = AltId(i as u32);
            let st = r.alt(a);
            let e = r.group(st.group).key.expr;
            if r.local.members(&a).count() > 1 || r.alt_cost.members(&a).count() > 1 {
                v.push(format!("{}: several live values", alabel(a)));
            }
            let kids: Vec<Option<Cost>> = st
                .children
                .iter()
                .flatten()
                .map(|&c| r.best_of(c).map(|b| b.0))
                .collect();
            let kids_live = kids.iter().all(Option::is_some);
            let want_local = kids_live.then(|| coster.local_cost(e, &st.alt));
            if r.local.min(&a).copied() != want_local {
                v.push(format!(
                    "{}: LocalCost {:?}, recomputed {want_local:?}",
                    alabel(a),
                    r.local.min(&a)
                ));
            }
            let want_cost = want_local.map(|lc| {
                let mut k = kids.iter().flatten().copied();
                sum_cost(k.next(), k.next(), lc)
            });
            if r.alt_cost.min(&a).copied() != want_cost {
                v.push(format!("{}: cost {:?}, recomputed {want_cost:?}", alabel(a), r.alt_cost.min(&a)));
            }
            let vis = r.visibility(a);
            if r.is_visible(a) != vis.is_some() || r.plan_cost.min(&a).copied() != vis {
                v.push(format!("{}: visibility disagrees with its strategy rules", alabel(a)));
            }
            if r.search_space.count(&a) > 1 {
                v.push(format!("{}: SearchSpace count above one", alabel(a)));
            }
        }

        for (i, grp) in r.groups.iter().enumerate() {
            let id = GroupId(i as u32);
            let gl = g.group_label(grp.key);
            let want_best = grp
                .alts
                .iter()
                .filter_map(|&a| r.alt_cost.min(&a).map(|&c| (c, r.alt(a).alt.index)))
                .min();
            if r.best_of(id) != want_best || r.best.members(&id).count() > 1 {
                v.push(format!("{gl}: BestCost {:?}, recomputed {want_best:?}", r.best_of(id)));
            }
            let recount = grp.parents.iter().filter(|&&p| r.is_visible(p)).count() as i64
                + i64::from(Some(id) == root);
            if r.refcount.count(&id) != recount {
                v.push(format!("{gl}: refcount {}, recount {recount}", r.refcount.count(&id)));
            }
            if !r.strategies.bounding {
                if r.parent_bound.members(&id).next().is_some()
                    || r.max_bound.min(&id).is_some()
                    || r.bound.min(&id).is_some()
                {
                    v.push(format!("{gl}: bound tuples without bounding"));
                }
                continue;
            }
            let mut want_pb: BTreeSet<(Cost, AltId)> = BTreeSet::new();
            for &p in &grp.parents {
                let st = r.alt(p);
                if !r.is_visible(p) {
                    continue;
                }
                let side = if st.children[0] == Some(id) { 1 } else { 0 };
                let sib = st.children[side].expect("join alternative");
                if let (Some(&b), Some((sc, _)), Some(&lc)) =
                    (r.bound.min(&st.group), r.best_of(sib), r.local.min(&p))
                {
                    want_pb.insert((parent_bound(b, sc, lc), p));
                }
            }
            let got_pb: BTreeSet<(Cost, AltId)> = r.parent_bound.members(&id).map(|(c, a)| (c.0, *a)).collect();
            if got_pb != want_pb {
                v.push(format!("{gl}: ParentBound {got_pb:?}, recomputed {want_pb:?}"));
            }
            let want_max = want_pb.iter().map(|x| x.0).max();
            if r.max_bound.min(&id).copied() != want_max || r.max_bound.members(&id).count() > 1 {
                v.push(format!("{gl}: MaxBound {:?}, recomputed {want_max:?}", r.max_bound.min(&id)));
            }
            let want_bound = combine_bound(want_best.map(|b| b.0), want_max);
            if r.bound.min(&id).copied() != want_bound || r.bound.members(&id).count() > 1 {
                v.push(format!("{gl}: Bound {:?}, recomputed {want_bound:?}", r.bound.min(&id)));
            }
        }
        AuditReport { violations: v }
    }

    pub fn snapshot(&self) -> Result<Snapshot> {
        Snapshot::capture(self)
    }

    pub(crate) fn rules(&self) -> &Rules {
        &self.rules
    }
}
