//! Seeded workload generation: synthetic chain, star and clique join graphs,
//! TPC-H shaped fixtures and random statistics-update batches.
//!
//! Fixture cardinalities are TPC-H scale factor 1 divided by 100.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algebra::Query;
use crate::catalog::{AttrRef, Catalog, JoinPredicate, RelationMeta, StatUpdate};

/// Multiplicative factors drawn for random updates.
pub const UPDATE_FACTORS: [f64; 6] = [0.125, 0.25, 0.5, 2.0, 4.0, 8.0];

/// Upper bound on updates per random batch.
pub const MAX_BATCH: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Chain,
    Star,
    Clique,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Chain, Shape::Star, Shape::Clique];

    /// Relation index pairs joined by a predicate.
    pub fn edges(self, n: usize) -> Vec<(usize, usize)> {
        match self {
            Shape::Chain => (1..n).map(|i| (i - 1, i)).collect(),
            Shape::Star => (1..n).map(|i| (0, i)).collect(),
            Shape::Clique => (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .collect(),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Chain => "chain",
            Shape::Star => "star",
            Shape::Clique => "clique",
        })
    }
}

impl FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chain" => Ok(Shape::Chain),
            "star" => Ok(Shape::Star),
            "clique" => Ok(Shape::Clique),
            _ => Err(format!("unknown shape `{s}` (chain, star, clique)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub name: String,
    pub catalog: Catalog,
    pub query: Query,
}

fn rel(name: &str, card: f64, attrs: &[&str], indexed: &[&str], sorted: Option<&str>) -> RelationMeta {
    RelationMeta {
        name: name.into(),
        cardinality: card,
        attributes: attrs.iter().map(|s| s.to_string()).collect(),
        indexed_on: indexed.iter().map(|s| s.to_string()).collect(),
        sorted_on: sorted.map(str::to_string),
        scan_cost_factor: 1.0,
    }
}

fn pred(l: &str, r: &str, selectivity: f64) -> JoinPredicate {
    JoinPredicate {
        left: l.parse().expect("fixture attribute"),
        right: r.parse().expect("fixture attribute"),
        selectivity,
    }
}

/// The eight TPC-H relations used by the fixtures.
pub fn tpch_catalog() -> Catalog {
    Catalog {
        relations: vec![
            rel("customer", 1500.0, &["c_custkey", "c_nationkey"], &["c_custkey"], Some("c_custkey")),
            rel(
                "orders",
                15000.0,
                &["o_orderkey", "o_custkey"],
                &["o_orderkey", "o_custkey"],
                Some("o_orderkey"),
            ),
            rel(
                "lineitem",
                60000.0,
                &["l_orderkey", "l_partkey", "l_suppkey"],
                &["l_orderkey"],
                Some("l_orderkey"),
            ),
            rel("supplier", 100.0, &["s_suppkey", "s_nationkey"], &["s_suppkey"], Some("s_suppkey")),
            rel("nation", 25.0, &["n_nationkey", "n_regionkey"], &["n_nationkey"], Some("n_nationkey")),
            rel("region", 5.0, &["r_regionkey"], &["r_regionkey"], Some("r_regionkey")),
            rel("part", 2000.0, &["p_partkey"], &["p_partkey"], Some("p_partkey")),
            rel(
                "partsupp",
                8000.0,
                &["ps_partkey", "ps_suppkey"],
                &["ps_partkey"],
                Some("ps_partkey"),
            ),
        ],
        predicates: vec![
            pred("customer.c_custkey", "orders.o_custkey", 1.0 / 1500.0),
            pred("orders.o_orderkey", "lineitem.l_orderkey", 1.0 / 15000.0),
            pred("lineitem.l_suppkey", "supplier.s_suppkey", 1.0 / 100.0),
            pred("customer.c_nationkey", "supplier.s_nationkey", 1.0 / 25.0),
            pred("supplier.s_nationkey", "nation.n_nationkey", 1.0 / 25.0),
            pred("nation.n_regionkey", "region.r_regionkey", 1.0 / 5.0),
            pred("lineitem.l_partkey", "part.p_partkey", 1.0 / 2000.0),
            pred("partsupp.ps_partkey", "part.p_partkey", 1.0 / 2000.0),
            pred("partsupp.ps_suppkey", "supplier.s_suppkey", 1.0 / 100.0),
        ],
    }
}

/// Keeps only the relations a query uses and the predicates among them.
pub fn restrict(cat: &Catalog, query: &Query) -> Catalog {
    let used = |r: &str| query.relations.iter().any(|q| q == r);
    Catalog {
        relations: cat.relations.iter().filter(|r| used(&r.name)).cloned().collect(),
        predicates: cat
            .predicates
            .iter()
            .filter(|p| used(&p.left.relation) && used(&p.right.relation))
            .cloned()
            .collect(),
    }
}

pub const FIXTURE_NAMES: [&str; 3] = ["q3s", "q5s", "q8joins"];

/// `q3s`: customer, orders, lineitem. `q5s`: adds supplier, nation, region.
/// `q8joins`: adds part and partsupp.
pub fn fixture(name: &str) -> Option<Workload> {
    let query = match name.to_ascii_lowercase().as_str() {
        "q3s" => Query::new(&["customer", "orders", "lineitem"])
            .with_filter("customer", 0.2)
            .with_filter("orders", 0.5)
            .with_filter("lineitem", 0.5),
        "q5s" => Query::new(&["customer", "orders", "lineitem", "supplier", "nation", "region"])
            .with_filter("region", 0.2)
            .with_filter("orders", 0.15),
        "q8joins" => Query::new(&[
            "part", "partsupp", "supplier", "lineitem", "orders", "customer", "nation", "region",
        ])
        .with_filter("region", 0.2)
        .with_filter("part", 0.0067)
        .with_filter("orders", 0.3),
        _ => return None,
    };
    Some(Workload {
        name: name.to_ascii_lowercase(),
        catalog: restrict(&tpch_catalog(), &query),
        query,
    })
}

pub fn fixtures() -> Vec<Workload> {
    FIXTURE_NAMES.iter().map(|n| fixture(n).expect("known fixture")).collect()
}

/// A random catalog and query over `R0..R{n-1}` joined in `shape`.
pub fn synthetic(shape: Shape, n: usize, seed: u64) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = shape.edges(n);
    let names: Vec<String> = (0..n).map(|i| format!("R{i}")).collect();
    let attr = |i: usize, j: usize| format!("k{j}_{i}");
    let mut relations = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let attrs: Vec<String> = edges
            .iter()
            .filter_map(|&(a, b)| match () {
                _ if a == i => Some(attr(a, b)),
                _ if b == i => Some(attr(b, a)),
                _ => None,
            })
            .collect();
        let card = 10f64.powf(rng.gen_range(1.0..5.0)).round();
        let indexed_on = attrs.iter().filter(|_| rng.gen_bool(0.5)).cloned().collect();
        let sorted_on = if rng.gen_bool(0.5) {
            attrs.choose(&mut rng).cloned()
        } else {
            None
        };
        relations.push(RelationMeta {
            name: name.clone(),
            cardinality: card,
            attributes: attrs,
            indexed_on,
            sorted_on,
            scan_cost_factor: *[0.5, 1.0, 1.0, 2.0].choose(&mut rng).expect("nonempty"),
        });
    }
    let predicates = edges
        .iter()
        .map(|&(a, b)| {
            let big = relations[a].cardinality.max(relations[b].cardinality);
            JoinPredicate {
                left: AttrRef::new(names[a].clone(), attr(a, b)),
                right: AttrRef::new(names[b].clone(), attr(b, a)),
                selectivity: (rng.gen_range(0.5..2.0) / big).min(1.0),
            }
        })
        .collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut query = Query::new(&refs);
    for name in &names {
        if rng.gen_bool(0.3) {
            let s = (rng.gen_range(0.05..1.0) * 100.0f64).round() / 100.0;
            query = query.with_filter(name, s);
        }
    }
    Workload {
        name: format!("{shape}{n}-{seed}"),
        catalog: Catalog {
            relations,
            predicates,
        },
        query,
    }
}

/// Every statistics update that can target `w`'s query, with factor 1.
pub fn update_targets(w: &Workload) -> Vec<StatUpdate> {
    let mut out: Vec<StatUpdate> = w
        .query
        .relations
        .iter()
        .map(|r| StatUpdate::scan_cost(r.clone(), 1.0))
        .collect();
    out.extend(
        w.catalog
            .predicates
            .iter()
            .map(|p| StatUpdate::join_selectivity(p.left.clone(), p.right.clone(), 1.0)),
    );
    out
}

/// A random batch of `k` updates with factors from [`UPDATE_FACTORS`]. A
/// selectivity factor that would push the running value above 1 is
/// inverted, so the batch always applies cleanly.
pub fn update_batch(w: &Workload, k: usize, rng: &mut impl Rng) -> Vec<StatUpdate> {
    let targets = update_targets(w);
    let mut cat = w.catalog.clone();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut u = targets.choose(rng).expect("workload has targets").clone();
        u.factor = *UPDATE_FACTORS.choose(rng).expect("nonempty");
        let next = match cat.apply_update(&u) {
            Ok(c) => c,
            Err(_) => {
                u.factor = 1.0 / u.factor;
                cat.apply_update(&u).expect("inverted factor lowers selectivity")
            }
        };
        cat = next;
        out.push(u);
    }
    out
}

/// A batch of 1 to [`MAX_BATCH`] updates determined by `seed`.
pub fn random_update_batch(w: &Workload, seed: u64) -> Vec<StatUpdate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(1..=MAX_BATCH);
    update_batch(w, k, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::QueryGraph;

    #[test]
    fn fixtures_validate() {
        for w in fixtures() {
            w.catalog.validate().unwrap();
            QueryGraph::new(&w.catalog, &w.query).unwrap();
        }
        assert_eq!(fixture("q5s").unwrap().query.relations.len(), 6);
        assert_eq!(fixture("Q8JoinS").unwrap().query.relations.len(), 8);
        assert!(fixture("q9").is_none());
    }

    #[test]
    fn edge_counts() {
        assert_eq!(Shape::Chain.edges(5).len(), 4);
        assert_eq!(Shape::Star.edges(5).len(), 4);
        assert_eq!(Shape::Clique.edges(5).len(), 10);
    }

    #[test]
    fn synthetic_is_deterministic_and_valid() {
        for shape in Shape::ALL {
            for n in 3..=8 {
                let a = synthetic(shape, n, 7);
                assert_eq!(a, synthetic(shape, n, 7));
                a.catalog.validate().unwrap();
                let g = QueryGraph::new(&a.catalog, &a.query).unwrap();
                assert!(g.is_connected(g.root()));
            }
        }
        assert_ne!(synthetic(Shape::Chain, 4, 1), synthetic(Shape::Chain, 4, 2));
    }

    #[test]
    fn batches_apply() {
        let w = fixture("q3s").unwrap();
        for seed in 0..200 {
            let b = random_update_batch(&w, seed);
            assert!((1..=MAX_BATCH).contains(&b.len()));
            for u in &b {
                let f = u.factor;
                assert!(UPDATE_FACTORS.contains(&f));
            }
            w.catalog.apply_updates(&b).unwrap();
        }
    }
}
