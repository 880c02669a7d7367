//! The rule network: enumeration, costing, min-aggregation, pruning and
//! bounds, each as a delta-driven operator.
//!
//! Every operator keeps its inputs as relation state and remembers what it
//! last emitted. When an input changes, the operator recomputes its output
//! from the current inputs and emits only the difference. Because the
//! dependency graph between operators is acyclic (values flow up from
//! smaller expressions, visibility flows down from larger ones), the
//! quiescent state is a function of the inputs alone, whatever the order in
//! which deltas were drained.

use std::cmp::Reverse;
use std::collections::{HashMap, HashSet};

use crate::algebra::{self, is_leaf, Alternative, ExprSig, GroupKey, QueryGraph};
use crate::catalog::Catalog;
use crate::costmodel::{expr_summary, sum_cost, Cost, CostModel, ScanParams, Summary};
use crate::deltaflow::{diff, Applied, CountedState, Delta, MinGroupState, RuleSet};

use super::Strategies;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AltId(pub u32);

/// A tuple of one maintained relation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fact {
    /// A group whose alternatives must be enumerated.
    Expr(GroupId),
    Summary(ExprSig, Summary),
    ScanParams(u32, ScanParams),
    LocalCost(AltId, Cost),
    /// Cost of an alternative built from its children's best costs; the
    /// input of the per-group minimum.
    AltCost(AltId, Cost),
    BestCost(GroupId, Cost, u32),
    SearchSpace(AltId),
    PlanCost(AltId, Cost),
    RefCount(GroupId),
    /// Bound a parent alternative passes down to one of its children.
    ParentBound(GroupId, AltId, Cost),
    MaxBound(GroupId, Cost),
    Bound(GroupId, Cost),
}

impl Fact {
    pub fn relation(&self) -> &'static str {
        match self {
            Fact::Expr(_) => "Expr",
            Fact::Summary(..) => "Summary",
            Fact::ScanParams(..) => "ScanParams",
            Fact::LocalCost(..) => "LocalCost",
            Fact::AltCost(..) => "AltCost",
            Fact::BestCost(..) => "BestCost",
            Fact::SearchSpace(_) => "SearchSpace",
            Fact::PlanCost(..) => "PlanCost",
            Fact::RefCount(_) => "RefCount",
            Fact::ParentBound(..) => "ParentBound",
            Fact::MaxBound(..) => "MaxBound",
            Fact::Bound(..) => "Bound",
        }
    }
}

pub(crate) struct GroupState {
    pub key: GroupKey,
    pub alts: Vec<AltId>,
    pub parents: Vec<AltId>,
    bound_out: Option<Cost>,
}

pub(crate) struct AltState {
    pub group: GroupId,
    pub alt: Alternative,
    pub children: [Option<GroupId>; 2],
    local_out: Option<Cost>,
    cost_out: Option<Cost>,
    vis_out: Option<Cost>,
    pb_out: [Option<Cost>; 2],
}

#[derive(Default)]
pub(crate) struct Touched {
    pub alts: HashSet<AltId>,
    pub groups: HashSet<GroupId>,
}

pub(crate) struct Rules {
    pub graph: QueryGraph,
    pub catalog: Catalog,
    pub model: CostModel,
    pub strategies: Strategies,
    pub groups: Vec<GroupState>,
    pub group_ids: HashMap<GroupKey, GroupId>,
    pub alts: Vec<AltState>,
    by_summary: HashMap<ExprSig, Vec<AltId>>,
    by_scan: Vec<Vec<AltId>>,
    summary_src: HashMap<ExprSig, Summary>,
    scan_src: Vec<Option<ScanParams>>,

    pub expr: CountedState<GroupId>,
    pub summary: MinGroupState<ExprSig, Summary>,
    pub scan: MinGroupState<u32, ScanParams>,
    pub local: MinGroupState<AltId, Cost>,
    pub alt_cost: MinGroupState<AltId, Cost>,
    best_agg: MinGroupState<GroupId, (Cost, u32)>,
    pub best: MinGroupState<GroupId, (Cost, u32)>,
    pub search_space: CountedState<AltId>,
    pub plan_cost: MinGroupState<AltId, Cost>,
    pub refcount: CountedState<GroupId>,
    /// ParentBound tuples per child group, ordered largest bound first.
    pub parent_bound: MinGroupState<GroupId, (Reverse<Cost>, AltId)>,
    pub max_bound: MinGroupState<GroupId, Cost>,
    pub bound: MinGroupState<GroupId, Cost>,

    pub touched: Option<Touched>,
    pub tracing: bool,
}

/// Keep/prune decision of aggregate selection: an alternative survives only
/// as the lexicographic minimum of (cost, index) in its group.
pub fn aggsel_keep(candidate: (Cost, u32), group_best: Option<(Cost, u32)>) -> bool {
    group_best.is_none_or(|b| candidate <= b)
}

/// Keep/prune decision of recursive bounding against the largest bound
/// handed down by any parent. A plan exactly meeting the bound survives.
pub fn bound_keep(cost: Cost, max_parent_bound: Option<Cost>) -> bool {
    max_parent_bound.is_none_or(|b| cost <= b)
}

/// Bound a parent alternative hands one child: what is left of the parent's
/// bound after the sibling's best plan and the parent's own work.
pub fn parent_bound(parent_bound: Cost, sibling_best: Cost, local: Cost) -> Cost {
    parent_bound - sibling_best - local
}

/// Combines a group's own best cost with the largest parent bound.
pub fn combine_bound(best: Option<Cost>, max_bound: Option<Cost>) -> Option<Cost> {
    match (best, max_bound) {
        (Some(b), Some(m)) => Some(b.min(m)),
        (b, m) => b.or(m),
    }
}

impl Rules {
    pub fn new(graph: QueryGraph, catalog: Catalog, model: CostModel, strategies: Strategies) -> Rules {
        let n = graph.num_rels();
        Rules {
            graph,
            catalog,
            model,
            strategies,
            groups: Vec::new(),
            group_ids: HashMap::new(),
            alts: Vec::new(),
            by_summary: HashMap::new(),
            by_scan: vec![Vec::new(); n],
            summary_src: HashMap::new(),
            scan_src: vec![None; n],
            expr: CountedState::new(),
            summary: MinGroupState::new(),
            scan: MinGroupState::new(),
            local: MinGroupState::new(),
            alt_cost: MinGroupState::new(),
            best_agg: MinGroupState::new(),
            best: MinGroupState::new(),
            search_space: CountedState::new(),
            plan_cost: MinGroupState::new(),
            refcount: CountedState::new(),
            parent_bound: MinGroupState::new(),
            max_bound: MinGroupState::new(),
            bound: MinGroupState::new(),
            touched: None,
            tracing: false,
        }
    }

    pub fn group_id(&mut self, key: GroupKey) -> GroupId {
        if let Some(&id) = self.group_ids.get(&key) {
            return id;
        }
        let id = GroupId(self.groups.len() as u32);
        self.groups.push(GroupState {
            key,
            alts: Vec::new(),
            parents: Vec::new(),
            bound_out: None,
        });
        self.group_ids.insert(key, id);
        id
    }

    pub fn group(&self, id: GroupId) -> &GroupState {
        &self.groups[id.0 as usize]
    }

    pub fn alt(&self, id: AltId) -> &AltState {
        &self.alts[id.0 as usize]
    }

    pub fn best_of(&self, g: GroupId) -> Option<(Cost, u32)> {
        self.best.min(&g).copied()
    }

    pub fn is_visible(&self, a: AltId) -> bool {
        self.search_space.is_visible(&a)
    }

    pub fn is_active(&self, g: GroupId) -> bool {
        !self.strategies.refcount || self.refcount.is_visible(&g)
    }

    fn touch(&mut self, f: &Fact) {
        let Some(t) = self.touched.as_mut() else {
            return;
        };
        match *f {
            Fact::LocalCost(a, _) | Fact::AltCost(a, _) | Fact::SearchSpace(a) | Fact::PlanCost(a, _) => {
                t.alts.insert(a);
            }
            Fact::Expr(g)
            | Fact::BestCost(g, ..)
            | Fact::RefCount(g)
            | Fact::ParentBound(g, ..)
            | Fact::MaxBound(g, _)
            | Fact::Bound(g, _) => {
                t.groups.insert(g);
            }
            Fact::Summary(..) | Fact::ScanParams(..) => {}
        }
    }

    /// Current multiplicity of one tuple, for trace lines.
    fn count_of(&self, f: &Fact) -> i64 {
        match *f {
            Fact::Expr(g) => self.expr.count(&g),
            Fact::Summary(e, s) => self.summary.count(&e, &s),
            Fact::ScanParams(r, p) => self.scan.count(&r, &p),
            Fact::LocalCost(a, c) => self.local.count(&a, &c),
            Fact::AltCost(a, c) => self.alt_cost.count(&a, &c),
            Fact::BestCost(g, c, i) => self.best.count(&g, &(c, i)),
            Fact::SearchSpace(a) => self.search_space.count(&a),
            Fact::PlanCost(a, c) => self.plan_cost.count(&a, &c),
            Fact::RefCount(g) => self.refcount.count(&g),
            Fact::ParentBound(g, a, c) => self.parent_bound.count(&g, &(Reverse(c), a)),
            Fact::MaxBound(g, c) => self.max_bound.count(&g, &c),
            Fact::Bound(g, c) => self.bound.count(&g, &c),
        }
    }

    pub fn copy_sources_from(&mut self, other: &Rules) {
        self.summary_src = other.summary_src.clone();
        self.scan_src = other.scan_src.clone();
    }

    /// Source tuples whose values differ under `next`; the catalog is
    /// replaced afterwards.
    pub fn source_deltas(&mut self, next: Catalog) -> Vec<Delta<Fact>> {
        let mut out = Vec::new();
        for r in 0..self.graph.num_rels() {
            if let Some(old) = self.scan_src[r] {
                let new = ScanParams::of(&self.graph, &next, r);
                if new != old {
                    out.push(Delta::Update(
                        Fact::ScanParams(r as u32, old),
                        Fact::ScanParams(r as u32, new),
                    ));
                    self.scan_src[r] = Some(new);
                }
            }
        }
        let mut exprs: Vec<ExprSig> = self.summary_src.keys().copied().collect();
        exprs.sort();
        for e in exprs {
            let old = self.summary_src[&e];
            let new = expr_summary(&self.graph, &next, e);
            if new != old {
                out.push(Delta::Update(Fact::Summary(e, old), Fact::Summary(e, new)));
                self.summary_src.insert(e, new);
            }
        }
        self.catalog = next;
        out
    }

    fn ensure_sources(&mut self, e: ExprSig, out: &mut Vec<Delta<Fact>>) {
        if !self.summary_src.contains_key(&e) {
            let s = expr_summary(&self.graph, &self.catalog, e);
            self.summary_src.insert(e, s);
            out.push(Delta::Insert(Fact::Summary(e, s)));
        }
        if is_leaf(e) {
            let r = e.lowest();
            if self.scan_src[r].is_none() {
                let p = ScanParams::of(&self.graph, &self.catalog, r);
                self.scan_src[r] = Some(p);
                out.push(Delta::Insert(Fact::ScanParams(r as u32, p)));
            }
        }
    }

    fn enumerate(&mut self, g: GroupId, out: &mut Vec<Delta<Fact>>) {
        let key = self.group(g).key;
        self.ensure_sources(key.expr, out);
        for alt in algebra::alternatives(&self.graph, key) {
            let id = AltId(self.alts.len() as u32);
            let l = alt.left.map(|k| self.group_id(k));
            let r = alt.right.map(|k| self.group_id(k));
            self.alts.push(AltState {
                group: g,
                alt,
                children: [l, r],
                local_out: None,
                cost_out: None,
                vis_out: None,
                pb_out: [None, None],
            });
            self.groups[g.0 as usize].alts.push(id);
            if is_leaf(key.expr) {
                self.by_scan[key.expr.lowest()].push(id);
            }
            self.by_summary.entry(key.expr).or_default().push(id);
            for c in [l, r].into_iter().flatten() {
                self.groups[c.0 as usize].parents.push(id);
                let ce = self.group(c).key.expr;
                self.by_summary.entry(ce).or_default().push(id);
                out.push(Delta::Insert(Fact::Expr(c)));
            }
            self.eval_local(id, out);
        }
    }

    fn eval_local(&mut self, a: AltId, out: &mut Vec<Delta<Fact>>) {
        let st = self.alt(a);
        let e = self.group(st.group).key.expr;
        let new = match st.children {
            [None, None] => self
                .scan
                .min(&(e.lowest() as u32))
                .map(|&p| self.model.scan_cost(st.alt.phy_op, p)),
            [Some(l), Some(r)] => {
                let (le, re) = (self.group(l).key.expr, self.group(r).key.expr);
                match (
                    self.best_of(l),
                    self.best_of(r),
                    self.summary.min(&e),
                    self.summary.min(&le),
                    self.summary.min(&re),
                ) {
                    (Some(_), Some(_), Some(&s), Some(&ls), Some(&rs)) => {
                        Some(self.model.nonscan_cost(st.alt.phy_op, s, ls, rs))
                    }
                    _ => None,
                }
            }
            _ => unreachable!("alternatives have zero or two children"),
        };
        let old = st.local_out;
        if let Some(d) = diff(old, new) {
            self.alts[a.0 as usize].local_out = new;
            out.push(d.map(|c| Fact::LocalCost(a, c)));
        }
    }

    fn eval_cost(&mut self, a: AltId, out: &mut Vec<Delta<Fact>>) {
        let st = self.alt(a);
        let local = self.local.min(&a).copied();
        let child = |c: Option<GroupId>| -> Option<Option<Cost>> {
            match c {
                None => Some(None),
                Some(g) => self.best_of(g).map(|b| Some(b.0)),
            }
        };
        let new = match (local, child(st.children[0]), child(st.children[1])) {
            (Some(lc), Some(l), Some(r)) => Some(sum_cost(l, r, lc)),
            _ => None,
        };
        let old = st.cost_out;
        if let Some(d) = diff(old, new) {
            self.alts[a.0 as usize].cost_out = new;
            out.push(d.map(|c| Fact::AltCost(a, c)));
        }
    }

    /// Whether `a` belongs in SearchSpace/PlanCost under the enabled
    /// strategies, and at what cost.
    pub fn visibility(&self, a: AltId) -> Option<Cost> {
        let st = self.alt(a);
        let g = st.group;
        if !self.is_active(g) {
            return None;
        }
        let cost = *self.alt_cost.min(&a)?;
        if self.strategies.aggsel && !aggsel_keep((cost, st.alt.index), self.best_of(g)) {
            return None;
        }
        if self.strategies.bounding && !bound_keep(cost, self.max_bound.min(&g).copied()) {
            return None;
        }
        Some(cost)
    }

    fn eval_vis(&mut self, a: AltId, out: &mut Vec<Delta<Fact>>) {
        let new = self.visibility(a);
        let old = self.alt(a).vis_out;
        if old == new {
            return;
        }
        self.alts[a.0 as usize].vis_out = new;
        match (old, new) {
            (None, Some(_)) => out.push(Delta::Insert(Fact::SearchSpace(a))),
            (Some(_), None) => out.push(Delta::Delete(Fact::SearchSpace(a))),
            _ => {}
        }
        if let Some(d) = diff(old, new) {
            out.push(d.map(|c| Fact::PlanCost(a, c)));
        }
    }

    fn eval_pb(&mut self, a: AltId, side: usize, out: &mut Vec<Delta<Fact>>) {
        if !self.strategies.bounding {
            return;
        }
        let st = self.alt(a);
        let (Some(child), Some(sibling)) = (st.children[side], st.children[1 - side]) else {
            return;
        };
        let new = if self.is_visible(a) {
            match (
                self.bound.min(&st.group),
                self.best_of(sibling),
                self.local.min(&a),
            ) {
                (Some(&b), Some((sc, _)), Some(&lc)) => Some(parent_bound(b, sc, lc)),
                _ => None,
            }
        } else {
            None
        };
        let old = st.pb_out[side];
        if let Some(d) = diff(old, new) {
            self.alts[a.0 as usize].pb_out[side] = new;
            out.push(d.map(|c| Fact::ParentBound(child, a, c)));
        }
    }

    fn eval_pb_both(&mut self, a: AltId, out: &mut Vec<Delta<Fact>>) {
        self.eval_pb(a, 0, out);
        self.eval_pb(a, 1, out);
    }

    fn eval_bound(&mut self, g: GroupId, out: &mut Vec<Delta<Fact>>) {
        if !self.strategies.bounding {
            return;
        }
        let new = combine_bound(self.best_of(g).map(|b| b.0), self.max_bound.min(&g).copied());
        let old = self.group(g).bound_out;
        if let Some(d) = diff(old, new) {
            self.groups[g.0 as usize].bound_out = new;
            out.push(d.map(|c| Fact::Bound(g, c)));
        }
    }

    fn alts_of(&self, g: GroupId) -> Vec<AltId> {
        self.group(g).alts.clone()
    }

    fn parents_of(&self, g: GroupId) -> Vec<AltId> {
        self.group(g).parents.clone()
    }
}

fn value<T>(d: &Delta<Fact>, f: impl Fn(&Fact) -> T) -> Delta<T> {
    d.as_ref().map(f)
}

impl RuleSet for Rules {
    type Tuple = Fact;

    fn apply(&mut self, d: Delta<Fact>, out: &mut Vec<Delta<Fact>>) -> Applied {
        let head = *d.payload();
        self.touch(&head);
        let before = if self.tracing { self.count_of(&head) } else { 0 };
        match head {
            Fact::Expr(g) => {
                let tr = self.expr.apply(&value(&d, |_| g));
                if matches!(tr.first(), Some(Delta::Insert(_))) {
                    self.enumerate(g, out);
                }
            }
            Fact::Summary(e, _) => {
                self.summary.apply(&e, &value(&d, |f| match f {
                    Fact::Summary(_, s) => *s,
                    _ => unreachable!(),
                }));
                for a in self.by_summary.get(&e).cloned().unwrap_or_default() {
                    self.eval_local(a, out);
                }
            }
            Fact::ScanParams(r, _) => {
                self.scan.apply(&r, &value(&d, |f| match f {
                    Fact::ScanParams(_, p) => *p,
                    _ => unreachable!(),
                }));
                for a in self.by_scan[r as usize].clone() {
                    self.eval_local(a, out);
                }
            }
            Fact::LocalCost(a, _) => {
                self.local.apply(&a, &value(&d, |f| match f {
                    Fact::LocalCost(_, c) => *c,
                    _ => unreachable!(),
                }));
                self.eval_cost(a, out);
                self.eval_pb_both(a, out);
            }
            Fact::AltCost(a, _) => {
                let vd = value(&d, |f| match f {
                    Fact::AltCost(_, c) => *c,
                    _ => unreachable!(),
                });
                self.alt_cost.apply(&a, &vd);
                let st = self.alt(a);
                let (g, idx) = (st.group, st.alt.index);
                if let Some(m) = self.best_agg.apply(&g, &vd.map(|c| (c, idx))) {
                    out.push(m.map(|(c, i)| Fact::BestCost(g, c, i)));
                }
                self.eval_vis(a, out);
            }
            Fact::BestCost(g, ..) => {
                self.best.apply(&g, &value(&d, |f| match f {
                    Fact::BestCost(_, c, i) => (*c, *i),
                    _ => unreachable!(),
                }));
                for p in self.parents_of(g) {
                    self.eval_local(p, out);
                    self.eval_cost(p, out);
                    self.eval_pb_both(p, out);
                }
                for a in self.alts_of(g) {
                    self.eval_vis(a, out);
                }
                self.eval_bound(g, out);
            }
            Fact::SearchSpace(a) => {
                let tr = self.search_space.apply(&value(&d, |_| a));
                if let Some(t) = tr.first() {
                    let children = self.alt(a).children;
                    for c in children.into_iter().flatten() {
                        out.push(match t {
                            Delta::Delete(_) => Delta::Delete(Fact::RefCount(c)),
                            _ => Delta::Insert(Fact::RefCount(c)),
                        });
                    }
                    self.eval_pb_both(a, out);
                }
            }
            Fact::PlanCost(a, _) => {
                self.plan_cost.apply(&a, &value(&d, |f| match f {
                    Fact::PlanCost(_, c) => *c,
                    _ => unreachable!(),
                }));
            }
            Fact::RefCount(g) => {
                let tr = self.refcount.apply(&value(&d, |_| g));
                if !tr.is_empty() && self.strategies.refcount {
                    for a in self.alts_of(g) {
                        self.eval_vis(a, out);
                    }
                }
            }
            Fact::ParentBound(g, ..) => {
                let old = self.parent_bound.min(&g).map(|e| e.0 .0);
                self.parent_bound.apply(&g, &value(&d, |f| match f {
                    Fact::ParentBound(_, a, c) => (Reverse(*c), *a),
                    _ => unreachable!(),
                }));
                let new = self.parent_bound.min(&g).map(|e| e.0 .0);
                if let Some(m) = diff(old, new) {
                    out.push(m.map(|c| Fact::MaxBound(g, c)));
                }
            }
            Fact::MaxBound(g, _) => {
                self.max_bound.apply(&g, &value(&d, |f| match f {
                    Fact::MaxBound(_, c) => *c,
                    _ => unreachable!(),
                }));
                self.eval_bound(g, out);
                for a in self.alts_of(g) {
                    self.eval_vis(a, out);
                }
            }
            Fact::Bound(g, _) => {
                self.bound.apply(&g, &value(&d, |f| match f {
                    Fact::Bound(_, c) => *c,
                    _ => unreachable!(),
                }));
                for a in self.alts_of(g) {
                    self.eval_pb_both(a, out);
                }
            }
        }
        let after = if self.tracing { self.count_of(&head) } else { 0 };
        Applied {
            count_before: before,
            count_after: after,
        }
    }

    fn describe(&self, d: &Delta<Fact>) -> (String, String) {
        let g = &self.graph;
        let alt = |a: AltId| {
            let st = self.alt(a);
            format!("{}#{}", g.group_label(self.group(st.group).key).replace(' ', ":"), st.alt.index)
        };
        let grp = |id: GroupId| g.group_label(self.group(id).key).replace(' ', ":");
        let render = |f: &Fact| match *f {
            Fact::Expr(id) | Fact::RefCount(id) => grp(id),
            Fact::Summary(e, s) => format!("{}={}", g.expr_label(e), s.cardinality),
            Fact::ScanParams(r, p) => format!(
                "{}={}x{}",
                g.rel(r as usize).name,
                p.base_cardinality,
                p.scan_cost_factor
            ),
            Fact::LocalCost(a, c) | Fact::AltCost(a, c) | Fact::PlanCost(a, c) => {
                format!("{}={c}", alt(a))
            }
            Fact::SearchSpace(a) => alt(a),
            Fact::BestCost(id, c, i) => format!("{}={c}#{i}", grp(id)),
            Fact::ParentBound(id, a, c) => format!("{}<-{}={c}", grp(id), alt(a)),
            Fact::MaxBound(id, c) | Fact::Bound(id, c) => format!("{}={c}", grp(id)),
        };
        let payload = match d {
            Delta::Insert(f) | Delta::Delete(f) => render(f),
            Delta::Update(o, n) => format!("{}->{}", render(o), render(n)),
        };
        (d.payload().relation().to_string(), payload)
    }
}
