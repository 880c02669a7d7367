//! Cardinality summaries and the cost functions shared by every optimizer.
//!
//! Costs are fixed-point integers (micro work units). Each local cost is
//! rounded once when it is produced; from then on sums and differences are
//! exact, so a plan's cost does not depend on the order in which its parts
//! were added, and bound arithmetic agrees with plan arithmetic exactly.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::algebra::{is_leaf, Alternative, ExprSig, PhyOp, QueryGraph};
use crate::catalog::Catalog;

const SCALE: f64 = 1_000_000.0;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cost(i128);

impl Cost {
    pub const ZERO: Cost = Cost(0);
    /// Reserved value for "no bound yet".
    pub const INFINITY: Cost = Cost(i128::MAX);
    /// Smallest representable cost step.
    pub const UNIT: Cost = Cost(1);

    pub fn from_f64(x: f64) -> Cost {
        if !x.is_finite() {
            return Cost::INFINITY;
        }
        let v = (x * SCALE).round();
        if v >= i128::MAX as f64 {
            Cost::INFINITY
        } else {
            Cost(v as i128)
        }
    }

    pub fn from_micros(m: i128) -> Cost {
        Cost(m)
    }

    pub fn micros(self) -> i128 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        if self.is_infinite() {
            f64::INFINITY
        } else {
            self.0 as f64 / SCALE
        }
    }

    pub fn is_infinite(self) -> bool {
        self == Cost::INFINITY
    }
}

impl Add for Cost {
    type Output = Cost;

    fn add(self, rhs: Cost) -> Cost {
        if self.is_infinite() || rhs.is_infinite() {
            return Cost::INFINITY;
        }
        match self.0.checked_add(rhs.0) {
            Some(v) if v != i128::MAX => Cost(v),
            _ => Cost::INFINITY,
        }
    }
}

impl Sub for Cost {
    type Output = Cost;

    /// `INFINITY - x` stays infinite; finite differences may be negative.
    fn sub(self, rhs: Cost) -> Cost {
        if self.is_infinite() {
            return Cost::INFINITY;
        }
        debug_assert!(!rhs.is_infinite(), "subtracting an infinite cost");
        Cost(self.0 - rhs.0)
    }
}

impl fmt::Debug for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            let sign = if self.0 < 0 { "-" } else { "" };
            let a = self.0.unsigned_abs();
            write!(f, "{sign}{}.{:06}", a / 1_000_000, a % 1_000_000)
        }
    }
}

impl Serialize for Cost {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.as_f64())
        }
    }
}

/// Estimated output rows of an expression.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Summary {
    pub cardinality: f64,
}

impl Summary {
    pub fn new(cardinality: f64) -> Summary {
        Summary { cardinality }
    }
}

impl PartialEq for Summary {
    fn eq(&self, other: &Self) -> bool {
        self.cardinality.to_bits() == other.cardinality.to_bits()
    }
}

impl Eq for Summary {}

impl PartialOrd for Summary {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Summary {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cardinality.total_cmp(&other.cardinality)
    }
}

impl std::hash::Hash for Summary {
    fn hash<H: std::hash::Hasher>(&self, h: &mut H) {
        self.cardinality.to_bits().hash(h)
    }
}

/// Per-relation inputs of the scan cost: unfiltered cardinality and the
/// scan cost factor.
#[derive(Debug, Clone, Copy)]
pub struct ScanParams {
    pub base_cardinality: f64,
    pub scan_cost_factor: f64,
}

impl ScanParams {
    pub fn of(g: &QueryGraph, cat: &Catalog, rel: usize) -> ScanParams {
        let meta = &cat.relations[g.rel(rel).catalog_index];
        ScanParams {
            base_cardinality: meta.cardinality,
            scan_cost_factor: meta.scan_cost_factor,
        }
    }

    fn bits(&self) -> (u64, u64) {
        (self.base_cardinality.to_bits(), self.scan_cost_factor.to_bits())
    }
}

impl PartialEq for ScanParams {
    fn eq(&self, other: &Self) -> bool {
        self.bits() == other.bits()
    }
}

impl Eq for ScanParams {}

impl PartialOrd for ScanParams {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ScanParams {
    fn cmp(&self, other: &Self) -> Ordering {
        self.base_cardinality
            .total_cmp(&other.base_cardinality)
            .then(self.scan_cost_factor.total_cmp(&other.scan_cost_factor))
    }
}

impl std::hash::Hash for ScanParams {
    fn hash<H: std::hash::Hasher>(&self, h: &mut H) {
        self.bits().hash(h)
    }
}

fn default_surcharge() -> f64 {
    1.2
}

fn default_log_base() -> f64 {
    2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    #[serde(default = "default_surcharge")]
    pub index_scan_surcharge: f64,
    #[serde(default = "default_log_base")]
    pub inlj_log_base: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            index_scan_surcharge: default_surcharge(),
            inlj_log_base: default_log_base(),
        }
    }
}

impl CostConfig {
    pub fn from_json(text: &str) -> Result<CostConfig, String> {
        let c: CostConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.index_scan_surcharge.is_finite() && self.index_scan_surcharge >= 1.0) {
            return Err("index_scan_surcharge must be >= 1".into());
        }
        if !(self.inlj_log_base.is_finite() && self.inlj_log_base > 1.0) {
            return Err("inlj_log_base must be > 1".into());
        }
        Ok(())
    }
}

/// The cost functions. `scan_bias` adds a constant to every scan cost; it is
/// zero except when a test deliberately perturbs one engine.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostModel {
    pub config: CostConfig,
    pub scan_bias: Cost,
}

impl Default for Cost {
    fn default() -> Self {
        Cost::ZERO
    }
}

impl CostModel {
    pub fn new(config: CostConfig) -> CostModel {
        CostModel {
            config,
            scan_bias: Cost::ZERO,
        }
    }

    pub fn scan_cost(&self, op: PhyOp, params: ScanParams) -> Cost {
        let base = params.base_cardinality * params.scan_cost_factor;
        let c = match op {
            PhyOp::SeqScan => base,
            PhyOp::IndexScan => base * self.config.index_scan_surcharge,
            _ => panic!("scan_cost on join operator {op}"),
        };
        Cost::from_f64(c) + self.scan_bias
    }

    /// Local cost of a join. For `IndexNLJoin`, `l` is the indexed inner.
    pub fn nonscan_cost(&self, op: PhyOp, out: Summary, l: Summary, r: Summary) -> Cost {
        let c = match op {
            PhyOp::HashJoin | PhyOp::MergeJoin => l.cardinality + r.cardinality + out.cardinality,
            PhyOp::IndexNLJoin => {
                let probe = 1.0 + (1.0 + l.cardinality).log(self.config.inlj_log_base);
                r.cardinality * probe + out.cardinality
            }
            _ => panic!("nonscan_cost on scan operator {op}"),
        };
        Cost::from_f64(c)
    }
}

pub fn sum_cost(l: Option<Cost>, r: Option<Cost>, local: Cost) -> Cost {
    l.unwrap_or(Cost::ZERO) + r.unwrap_or(Cost::ZERO) + local
}

pub fn scan_summary(g: &QueryGraph, cat: &Catalog, rel: usize) -> Summary {
    let meta = &cat.relations[g.rel(rel).catalog_index];
    Summary::new(meta.cardinality * g.rel(rel).filter_selectivity)
}

/// Output summary of joining `l` and `r`: the product of the child
/// cardinalities and every predicate selectivity crossing the partition.
pub fn nonscan_summary(
    g: &QueryGraph,
    cat: &Catalog,
    l: ExprSig,
    r: ExprSig,
    ls: Summary,
    rs: Summary,
) -> Summary {
    let mut card = ls.cardinality * rs.cardinality;
    for (pi, _, _) in g.crossing(l, r) {
        card *= cat.predicates[g.preds()[pi].catalog_index].selectivity;
    }
    Summary::new(card)
}

/// Canonical summary of an expression: relations are folded in canonical
/// order, so every partition of the same expression shares one value.
pub fn expr_summary(g: &QueryGraph, cat: &Catalog, e: ExprSig) -> Summary {
    let mut rels = e.rels();
    let first = rels.next().expect("non-empty expression");
    let mut acc = ExprSig::single(first);
    let mut s = scan_summary(g, cat, first);
    for r in rels {
        let re = ExprSig::single(r);
        s = nonscan_summary(g, cat, acc, re, s, scan_summary(g, cat, r));
        acc = acc.union(re);
    }
    s
}

/// Memoizing evaluator used by the baselines: summaries per expression and
/// local costs per alternative.
pub struct Coster<'a> {
    pub graph: &'a QueryGraph,
    pub catalog: &'a Catalog,
    pub model: CostModel,
    summaries: HashMap<ExprSig, Summary>,
}

impl<'a> Coster<'a> {
    pub fn new(graph: &'a QueryGraph, catalog: &'a Catalog, model: CostModel) -> Self {
        Coster {
            graph,
            catalog,
            model,
            summaries: HashMap::new(),
        }
    }

    pub fn summary(&mut self, e: ExprSig) -> Summary {
        let (g, c) = (self.graph, self.catalog);
        *self.summaries.entry(e).or_insert_with(|| expr_summary(g, c, e))
    }

    pub fn local_cost(&mut self, e: ExprSig, alt: &Alternative) -> Cost {
        if is_leaf(e) {
            self.model
                .scan_cost(alt.phy_op, ScanParams::of(self.graph, self.catalog, e.lowest()))
        } else {
            let l = self.summary(alt.left.expect("join has children").expr);
            let r = self.summary(alt.right.expect("join has children").expr);
            let out = self.summary(e);
            self.model.nonscan_cost(alt.phy_op, out, l, r)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Query;

    fn p(card: f64, factor: f64) -> ScanParams {
        ScanParams {
            base_cardinality: card,
            scan_cost_factor: factor,
        }
    }

    #[test]
    fn scan_costs() {
        let m = CostModel::default();
        assert_eq!(m.scan_cost(PhyOp::SeqScan, p(1500.0, 1.0)), Cost::from_f64(1500.0));
        assert_eq!(m.scan_cost(PhyOp::IndexScan, p(1500.0, 1.0)), Cost::from_f64(1800.0));
        assert_eq!(m.scan_cost(PhyOp::SeqScan, p(1500.0, 8.0)), Cost::from_f64(12000.0));
    }

    #[test]
    fn join_costs() {
        let m = CostModel::new(CostConfig::default());
        let s = Summary::new;
        assert_eq!(
            m.nonscan_cost(PhyOp::HashJoin, s(22500.0), s(1500.0), s(15000.0)),
            Cost::from_f64(39000.0)
        );
        assert_eq!(
            m.nonscan_cost(PhyOp::MergeJoin, s(22500.0), s(1500.0), s(15000.0)),
            m.nonscan_cost(PhyOp::HashJoin, s(22500.0), s(1500.0), s(15000.0))
        );
        assert_eq!(
            m.nonscan_cost(PhyOp::IndexNLJoin, s(7.0), s(60000.0), s(0.0)),
            Cost::from_f64(7.0)
        );
        // 100 * (1 + log2(1 + 7)) + 5 = 405
        assert_eq!(
            m.nonscan_cost(PhyOp::IndexNLJoin, s(5.0), s(7.0), s(100.0)),
            Cost::from_f64(405.0)
        );
    }

    #[test]
    fn sums_are_exact() {
        let c = |x| Cost::from_f64(x);
        assert_eq!(sum_cost(Some(c(0.04)), Some(c(0.19)), c(0.07)), c(0.30));
        assert_eq!(sum_cost(None, None, c(3.5)), c(3.5));
        assert_eq!(sum_cost(Some(c(1.0)), Some(c(2.0)), Cost::ZERO), c(3.0));
        assert_eq!(Cost::INFINITY + c(1.0), Cost::INFINITY);
        assert_eq!(Cost::INFINITY - c(1.0), Cost::INFINITY);
        assert_eq!(c(1.0) - c(3.0), c(-2.0));
        assert_eq!(c(-2.0).to_string(), "-2.000000");
    }

    #[test]
    fn summaries() {
        let cat = Catalog::from_json(
            r#"{"relations":[
                {"name":"C","cardinality":1500,"attributes":["ck"]},
                {"name":"O","cardinality":15000,"attributes":["ck","ok"]},
                {"name":"L","cardinality":60000,"attributes":["ok","ck"]}],
              "predicates":[
                {"left":"C.ck","right":"O.ck","selectivity":0.001},
                {"left":"O.ok","right":"L.ok","selectivity":0.0001},
                {"left":"C.ck","right":"L.ck","selectivity":0.5}]}"#,
        )
        .unwrap();
        let q = Query::new(&["C", "O", "L"]).with_filter("L", 0.5);
        let g = QueryGraph::new(&cat, &q).unwrap();
        let rel = |n| g.rel_index(n).unwrap();
        assert_eq!(scan_summary(&g, &cat, rel("L")).cardinality, 30000.0);
        assert_eq!(scan_summary(&g, &cat, rel("C")).cardinality, 1500.0);
        let c = ExprSig::single(rel("C"));
        let o = ExprSig::single(rel("O"));
        let co = nonscan_summary(&g, &cat, c, o, Summary::new(1500.0), Summary::new(15000.0));
        assert_eq!(co.cardinality, 1500.0 * 15000.0 * 0.001);
        let zero = nonscan_summary(&g, &cat, c, o, Summary::new(0.0), Summary::new(15000.0));
        assert_eq!(zero.cardinality, 0.0);
        // {C}|{O,L} is crossed by two predicates.
        let ol = g.expr_of_names(&["O", "L"]).unwrap();
        let two = nonscan_summary(&g, &cat, c, ol, Summary::new(3.0), Summary::new(5.0));
        assert_eq!(two.cardinality, 3.0 * 5.0 * 0.001 * 0.5);
    }
}
