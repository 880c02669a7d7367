//! Query expressions, physical properties, and the enumeration of plan
//! alternatives for an (expression, property) group.
//!
//! Expressions are bitmasks over the relations of one query, held in a
//! [`QueryGraph`] that fixes the canonical (name-sorted) relation order and an
//! attribute table. Access-path metadata (indexes, sort orders) is copied into
//! the graph because statistics updates never change it; numeric statistics
//! stay in the [`Catalog`] and are read by the cost model.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{AttrRef, Catalog};

/// Upper bound on relations per query; expressions are `u32` masks.
pub const MAX_QUERY_RELATIONS: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("no alternative satisfies the requested property")]
    NoAlternatives,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Filter {
    pub relation: String,
    pub selectivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Query {
    pub relations: Vec<String>,
    #[serde(default)]
    pub filters: Vec<Filter>,
}

impl Query {
    pub fn new(relations: &[&str]) -> Query {
        Query {
            relations: relations.iter().map(|s| s.to_string()).collect(),
            filters: Vec::new(),
        }
    }

    pub fn with_filter(mut self, relation: &str, selectivity: f64) -> Query {
        self.filters.push(Filter {
            relation: relation.to_string(),
            selectivity,
        });
        self
    }

    pub fn from_json(text: &str) -> Result<Query, AlgebraError> {
        serde_json::from_str(text).map_err(|e| AlgebraError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("query serializes")
    }
}

pub fn load_query(path: impl AsRef<Path>) -> Result<Query, AlgebraError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| AlgebraError::Parse(format!("{}: {e}", path.as_ref().display())))?;
    Query::from_json(&text)
}

/// Canonical signature of a subexpression: bit `i` is the `i`-th relation of
/// the query in name order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExprSig(pub u32);

impl ExprSig {
    pub fn single(rel: usize) -> ExprSig {
        ExprSig(1 << rel)
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, rel: usize) -> bool {
        self.0 & (1 << rel) != 0
    }

    pub fn is_subset_of(self, other: ExprSig) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: ExprSig) -> ExprSig {
        ExprSig(self.0 | other.0)
    }

    pub fn lowest(self) -> usize {
        self.0.trailing_zeros() as usize
    }

    pub fn rels(self) -> impl Iterator<Item = usize> {
        let mut m = self.0;
        std::iter::from_fn(move || {
            if m == 0 {
                None
            } else {
                let i = m.trailing_zeros() as usize;
                m &= m - 1;
                Some(i)
            }
        })
    }
}

pub fn is_leaf(e: ExprSig) -> bool {
    e.len() == 1
}

/// Index into a [`QueryGraph`]'s attribute table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttrId(pub u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PropertySpec {
    None,
    SortedOn(AttrId),
    IndexOn(AttrId),
}

impl PropertySpec {
    pub fn attr(self) -> Option<AttrId> {
        match self {
            PropertySpec::None => None,
            PropertySpec::SortedOn(a) | PropertySpec::IndexOn(a) => Some(a),
        }
    }
}

/// An OR node of the search graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub expr: ExprSig,
    pub prop: PropertySpec,
}

impl GroupKey {
    pub fn new(expr: ExprSig, prop: PropertySpec) -> GroupKey {
        GroupKey { expr, prop }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LogOp {
    Join,
    Scan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PhyOp {
    HashJoin,
    MergeJoin,
    IndexNLJoin,
    SeqScan,
    IndexScan,
}

impl PhyOp {
    pub fn name(self) -> &'static str {
        match self {
            PhyOp::HashJoin => "HashJoin",
            PhyOp::MergeJoin => "MergeJoin",
            PhyOp::IndexNLJoin => "IndexNLJoin",
            PhyOp::SeqScan => "SeqScan",
            PhyOp::IndexScan => "IndexScan",
        }
    }
}

/// One AND node: a physical alternative for a group. For `IndexNLJoin` the
/// left child is the indexed inner relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Alternative {
    pub index: u32,
    pub log_op: LogOp,
    pub phy_op: PhyOp,
    pub left: Option<GroupKey>,
    pub right: Option<GroupKey>,
}

impl Alternative {
    pub fn children(&self) -> impl Iterator<Item = GroupKey> {
        self.left.into_iter().chain(self.right)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelInfo {
    pub name: String,
    pub catalog_index: usize,
    pub filter_selectivity: f64,
    pub attrs: Vec<AttrId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttrInfo {
    pub rel: usize,
    pub name: String,
    pub indexed: bool,
    pub sorted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredInfo {
    pub catalog_index: usize,
    pub left: AttrId,
    pub right: AttrId,
}

/// The join graph of one query, with canonical relation numbering.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGraph {
    rels: Vec<RelInfo>,
    attrs: Vec<AttrInfo>,
    preds: Vec<PredInfo>,
    adjacency: Vec<u32>,
}

impl QueryGraph {
    pub fn new(cat: &Catalog, query: &Query) -> Result<QueryGraph, AlgebraError> {
        let bad = |m: String| Err(AlgebraError::Validation(m));
        if query.relations.is_empty() {
            return bad("query names no relations".into());
        }
        if query.relations.len() > MAX_QUERY_RELATIONS {
            return bad(format!("query exceeds {MAX_QUERY_RELATIONS} relations"));
        }
        let mut names: Vec<&String> = query.relations.iter().collect();
        names.sort();
        for w in names.windows(2) {
            if w[0] == w[1] {
                return bad(format!("relation `{}` listed twice", w[0]));
            }
        }
        let mut rels = Vec::new();
        let mut attrs = Vec::new();
        for (ri, name) in names.iter().enumerate() {
            let Some(ci) = cat.relation_index(name) else {
                return bad(format!("query relation `{name}` is not in the catalog"));
            };
            let meta = &cat.relations[ci];
            let mut ids = Vec::new();
            for a in &meta.attributes {
                ids.push(AttrId(attrs.len() as u16));
                attrs.push(AttrInfo {
                    rel: ri,
                    name: a.clone(),
                    indexed: meta.is_indexed_on(a),
                    sorted: meta.is_sorted_on(a),
                });
            }
            rels.push(RelInfo {
                name: (*name).clone(),
                catalog_index: ci,
                filter_selectivity: 1.0,
                attrs: ids,
            });
        }
        for f in &query.filters {
            let Some(r) = rels.iter_mut().find(|r| r.name == f.relation) else {
                return bad(format!("filter on `{}` which the query does not use", f.relation));
            };
            if !(f.selectivity > 0.0 && f.selectivity <= 1.0) {
                return bad(format!("filter selectivity on `{}` must be in (0, 1]", f.relation));
            }
            r.filter_selectivity *= f.selectivity;
        }
        let mut graph = QueryGraph {
            adjacency: vec![0; rels.len()],
            rels,
            attrs,
            preds: Vec::new(),
        };
        for (pi, p) in cat.predicates.iter().enumerate() {
            if let (Some(l), Some(r)) = (graph.attr_id(&p.left), graph.attr_id(&p.right)) {
                let (lr, rr) = (graph.attrs[l.0 as usize].rel, graph.attrs[r.0 as usize].rel);
                graph.adjacency[lr] |= 1 << rr;
                graph.adjacency[rr] |= 1 << lr;
                graph.preds.push(PredInfo {
                    catalog_index: pi,
                    left: l,
                    right: r,
                });
            }
        }
        Ok(graph)
    }

    pub fn num_rels(&self) -> usize {
        self.rels.len()
    }

    pub fn root(&self) -> ExprSig {
        ExprSig(((1u64 << self.rels.len()) - 1) as u32)
    }

    pub fn root_group(&self) -> GroupKey {
        GroupKey::new(self.root(), PropertySpec::None)
    }

    pub fn rel(&self, i: usize) -> &RelInfo {
        &self.rels[i]
    }

    pub fn rels(&self) -> &[RelInfo] {
        &self.rels
    }

    pub fn attr(&self, a: AttrId) -> &AttrInfo {
        &self.attrs[a.0 as usize]
    }

    pub fn preds(&self) -> &[PredInfo] {
        &self.preds
    }

    pub fn rel_index(&self, name: &str) -> Option<usize> {
        self.rels.iter().position(|r| r.name == name)
    }

    pub fn attr_id(&self, a: &AttrRef) -> Option<AttrId> {
        let r = self.rel_index(&a.relation)?;
        self.rels[r]
            .attrs
            .iter()
            .copied()
            .find(|&id| self.attrs[id.0 as usize].name == a.attribute)
    }

    pub fn attr_ref(&self, a: AttrId) -> AttrRef {
        let info = self.attr(a);
        AttrRef::new(self.rels[info.rel].name.clone(), info.name.clone())
    }

    pub fn attr_rel(&self, a: AttrId) -> usize {
        self.attr(a).rel
    }

    pub fn expr_of_names(&self, names: &[&str]) -> Option<ExprSig> {
        let mut m = 0;
        for n in names {
            m |= 1 << self.rel_index(n)?;
        }
        (m != 0).then_some(ExprSig(m))
    }

    pub fn expr_names(&self, e: ExprSig) -> Vec<String> {
        e.rels().map(|i| self.rels[i].name.clone()).collect()
    }

    pub fn expr_label(&self, e: ExprSig) -> String {
        format!("({})", self.expr_names(e).join(","))
    }

    pub fn prop_label(&self, p: PropertySpec) -> String {
        match p {
            PropertySpec::None => "none".to_string(),
            PropertySpec::SortedOn(a) => format!("sorted({})", self.attr_ref(a)),
            PropertySpec::IndexOn(a) => format!("index({})", self.attr_ref(a)),
        }
    }

    pub fn parse_prop(&self, s: &str) -> Option<PropertySpec> {
        if s == "none" {
            return Some(PropertySpec::None);
        }
        let inner = |prefix: &str| -> Option<AttrId> {
            let a: AttrRef = s.strip_prefix(prefix)?.strip_suffix(')')?.parse().ok()?;
            self.attr_id(&a)
        };
        if let Some(a) = inner("sorted(") {
            return Some(PropertySpec::SortedOn(a));
        }
        inner("index(").map(PropertySpec::IndexOn)
    }

    pub fn group_label(&self, g: GroupKey) -> String {
        format!("{} {}", self.expr_label(g.expr), self.prop_label(g.prop))
    }

    pub fn is_connected(&self, e: ExprSig) -> bool {
        if e.is_empty() {
            return false;
        }
        let mut seen = 1u32 << e.lowest();
        let mut frontier = seen;
        while frontier != 0 {
            let i = frontier.trailing_zeros() as usize;
            frontier &= frontier - 1;
            let next = self.adjacency[i] & e.0 & !seen;
            seen |= next;
            frontier |= next;
        }
        seen == e.0
    }

    /// Predicates with one endpoint in `l` and the other in `r`, oriented
    /// as (attribute in `l`, attribute in `r`), in catalog order.
    pub fn crossing(&self, l: ExprSig, r: ExprSig) -> Vec<(usize, AttrId, AttrId)> {
        let mut out = Vec::new();
        for (i, p) in self.preds.iter().enumerate() {
            let (a, b) = (self.attr_rel(p.left), self.attr_rel(p.right));
            if l.contains(a) && r.contains(b) {
                out.push((i, p.left, p.right));
            } else if l.contains(b) && r.contains(a) {
                out.push((i, p.right, p.left));
            }
        }
        out
    }
}

/// Connected binary partitions `(L, R)` of `e`; `L` holds the lowest relation.
pub fn partitions(g: &QueryGraph, e: ExprSig) -> Vec<(ExprSig, ExprSig)> {
    let low = 1u32 << e.lowest();
    let rest = e.0 & !low;
    let mut out = Vec::new();
    let mut sub = rest;
    loop {
        let l = sub | low;
        if l != e.0 {
            let (le, re) = (ExprSig(l), ExprSig(e.0 & !l));
            if g.is_connected(le) && g.is_connected(re) && !g.crossing(le, re).is_empty() {
                out.push((le, re));
            }
        }
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & rest;
    }
    out.sort();
    out
}

/// Physical alternatives of a leaf group; empty when the property is
/// unobtainable from the base relation.
pub fn leaf_alternatives(g: &QueryGraph, e: ExprSig, p: PropertySpec) -> Vec<Alternative> {
    debug_assert!(is_leaf(e));
    let scan = |phy_op| {
        vec![Alternative {
            index: 1,
            log_op: LogOp::Scan,
            phy_op,
            left: None,
            right: None,
        }]
    };
    match p {
        PropertySpec::None => scan(PhyOp::SeqScan),
        PropertySpec::SortedOn(a) => {
            let info = g.attr(a);
            if e.contains(info.rel) && (info.sorted || info.indexed) {
                scan(PhyOp::IndexScan)
            } else {
                Vec::new()
            }
        }
        PropertySpec::IndexOn(a) => {
            let info = g.attr(a);
            if e.contains(info.rel) && info.indexed {
                scan(PhyOp::IndexScan)
            } else {
                Vec::new()
            }
        }
    }
}

fn child_obtainable(g: &QueryGraph, key: GroupKey) -> bool {
    !is_leaf(key.expr) || !leaf_alternatives(g, key.expr, key.prop).is_empty()
}

/// Join alternatives for a non-leaf group, numbered from 1 in partition order
/// then operator order (hash, merge per predicate, index nested-loop with the
/// left side as inner, then with the right side as inner).
pub fn split(g: &QueryGraph, e: ExprSig, p: PropertySpec) -> Result<Vec<Alternative>, AlgebraError> {
    if is_leaf(e) {
        return Err(AlgebraError::Validation("split called on a leaf expression".into()));
    }
    let mut out: Vec<Alternative> = Vec::new();
    let mut push = |phy_op, left: GroupKey, right: GroupKey| {
        if !child_obtainable(g, left) || !child_obtainable(g, right) {
            return;
        }
        if out
            .iter()
            .any(|a| a.phy_op == phy_op && a.left == Some(left) && a.right == Some(right))
        {
            return;
        }
        out.push(Alternative {
            index: out.len() as u32 + 1,
            log_op: LogOp::Join,
            phy_op,
            left: Some(left),
            right: Some(right),
        });
    };
    for (l, r) in partitions(g, e) {
        let cross = g.crossing(l, r);
        if p == PropertySpec::None {
            push(
                PhyOp::HashJoin,
                GroupKey::new(l, PropertySpec::None),
                GroupKey::new(r, PropertySpec::None),
            );
        }
        for &(_, a, b) in &cross {
            let ok = p == PropertySpec::None
                || p == PropertySpec::SortedOn(a)
                || p == PropertySpec::SortedOn(b);
            if ok {
                push(
                    PhyOp::MergeJoin,
                    GroupKey::new(l, PropertySpec::SortedOn(a)),
                    GroupKey::new(r, PropertySpec::SortedOn(b)),
                );
            }
        }
        if p != PropertySpec::None {
            continue;
        }
        if is_leaf(l) {
            for &(_, a, _) in &cross {
                push(
                    PhyOp::IndexNLJoin,
                    GroupKey::new(l, PropertySpec::IndexOn(a)),
                    GroupKey::new(r, PropertySpec::None),
                );
            }
        }
        if is_leaf(r) {
            for &(_, _, b) in &cross {
                push(
                    PhyOp::IndexNLJoin,
                    GroupKey::new(r, PropertySpec::IndexOn(b)),
                    GroupKey::new(l, PropertySpec::None),
                );
            }
        }
    }
    if out.is_empty() {
        Err(AlgebraError::NoAlternatives)
    } else {
        Ok(out)
    }
}

/// All alternatives of a group, leaf or not; empty for a dead group.
pub fn alternatives(g: &QueryGraph, key: GroupKey) -> Vec<Alternative> {
    if is_leaf(key.expr) {
        leaf_alternatives(g, key.expr, key.prop)
    } else {
        split(g, key.expr, key.prop).unwrap_or_default()
    }
}

/// Subsets of `query` inducing a connected join subgraph, ordered by size
/// then mask.
pub fn connected_subexprs(g: &QueryGraph, query: ExprSig) -> Vec<ExprSig> {
    let mut out = Vec::new();
    let mut sub = query.0;
    while sub != 0 {
        let e = ExprSig(sub);
        if g.is_connected(e) {
            out.push(e);
        }
        sub = (sub - 1) & query.0;
    }
    out.sort_by_key(|e| (e.len(), e.0));
    out
}

impl fmt::Display for PhyOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
