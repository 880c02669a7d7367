//! Serialized optimizer state.
//!
//! A snapshot carries the inputs needed to rebuild the engine (query,
//! catalog, strategies, cost configuration) and a dump of the maintained
//! relations with their counts. Restoring rebuilds deterministically and then
//! checks the rebuilt relations against the dump, so an edited or truncated
//! file is rejected rather than silently re-derived.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algebra::{GroupKey, LogOp, Query};
use crate::catalog::Catalog;
use crate::costmodel::{CostConfig, CostModel};
use crate::{Error, Result};

use super::{AltId, GroupId, Optimizer, OptimizerConfig, Strategies};

pub const SNAPSHOT_FORMAT: u32 = 1;

/// Hex SHA-256 of the catalog's compact JSON form.
pub fn catalog_hash(cat: &Catalog) -> String {
    let text = serde_json::to_string(cat).expect("catalog serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpaceRow {
    pub expr: Vec<String>,
    pub prop: String,
    pub index: u32,
    pub log_op: String,
    pub phy_op: String,
    pub l_expr: Option<Vec<String>>,
    pub l_prop: Option<String>,
    pub r_expr: Option<Vec<String>>,
    pub r_prop: Option<String>,
    pub count: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanCostRow {
    pub expr: Vec<String>,
    pub prop: String,
    pub index: u32,
    pub phy_op: String,
    pub summary_card: f64,
    pub cost: String,
    pub count: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupRow {
    pub expr: Vec<String>,
    pub prop: String,
    pub value: String,
    pub count: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BestPlanRow {
    pub expr: Vec<String>,
    pub prop: String,
    pub index: u32,
    pub phy_op: String,
    pub cost: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Relations {
    pub search_space: Vec<SearchSpaceRow>,
    pub plan_cost: Vec<PlanCostRow>,
    pub best_cost: Vec<GroupRow>,
    pub best_plan: Vec<BestPlanRow>,
    pub bound: Vec<GroupRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub format: u32,
    pub query: Query,
    pub catalog: Catalog,
    pub catalog_sha256: String,
    pub strategies: Strategies,
    pub cost_config: CostConfig,
    pub relations: Relations,
}

fn dump(opt: &Optimizer) -> Relations {
    let r = opt.rules();
    let g = &r.graph;
    let group_cols = |k: GroupKey| (g.expr_names(k.expr), g.prop_label(k.prop));
    let mut rel = Relations {
        search_space: Vec::new(),
        plan_cost: Vec::new(),
        best_cost: Vec::new(),
        best_plan: Vec::new(),
        bound: Vec::new(),
    };
    for (i, st) in r.alts.iter().enumerate() {
        let a = AltId(i as u32);
        let key = r.group(st.group).key;
        let (expr, prop) = group_cols(key);
        let count = r.search_space.count(&a);
        if count != 0 {
            rel.search_space.push(SearchSpaceRow {
                expr: expr.clone(),
                prop: prop.clone(),
                index: st.alt.index,
                log_op: match st.alt.log_op {
                    LogOp::Join => "Join",
                    LogOp::Scan => "Scan",
                }
                .into(),
                phy_op: st.alt.phy_op.name().into(),
                l_expr: st.alt.left.map(|k| g.expr_names(k.expr)),
                l_prop: st.alt.left.map(|k| g.prop_label(k.prop)),
                r_expr: st.alt.right.map(|k| g.expr_names(k.expr)),
                r_prop: st.alt.right.map(|k| g.prop_label(k.prop)),
                count,
            });
        }
        for c in r.plan_cost.members(&a) {
            rel.plan_cost.push(PlanCostRow {
                expr: expr.clone(),
                prop: prop.clone(),
                index: st.alt.index,
                phy_op: st.alt.phy_op.name().into(),
                summary_card: r.summary.min(&key.expr).map_or(f64::NAN, |s| s.cardinality),
                cost: c.to_string(),
                count: r.plan_cost.count(&a, c),
            });
            let best = r.best_of(st.group);
            if best == Some((*c, st.alt.index)) {
                rel.best_plan.push(BestPlanRow {
                    expr: expr.clone(),
                    prop: prop.clone(),
                    index: st.alt.index,
                    phy_op: st.alt.phy_op.name().into(),
                    cost: c.to_string(),
                });
            }
        }
    }
    for (i, grp) in r.groups.iter().enumerate() {
        let id = GroupId(i as u32);
        let (expr, prop) = group_cols(grp.key);
        for &(c, idx) in r.best.members(&id) {
            rel.best_cost.push(GroupRow {
                expr: expr.clone(),
                prop: prop.clone(),
                value: format!("{c}#{idx}"),
                count: r.best.count(&id, &(c, idx)),
            });
        }
        for &b in r.bound.members(&id) {
            rel.bound.push(GroupRow {
                expr: expr.clone(),
                prop: prop.clone(),
                value: b.to_string(),
                count: r.bound.count(&id, &b),
            });
        }
    }
    let key = |e: &Vec<String>, p: &String, i: u32| (e.clone(), p.clone(), i);
    rel.search_space.sort_by_key(|x| key(&x.expr, &x.prop, x.index));
    rel.plan_cost.sort_by_key(|x| key(&x.expr, &x.prop, x.index));
    rel.best_plan.sort_by_key(|x| key(&x.expr, &x.prop, x.index));
    rel.best_cost.sort_by(|a, b| (&a.expr, &a.prop).cmp(&(&b.expr, &b.prop)));
    rel.bound.sort_by(|a, b| (&a.expr, &a.prop).cmp(&(&b.expr, &b.prop)));
    rel
}

impl Snapshot {
    pub fn capture(opt: &Optimizer) -> Result<Snapshot> {
        if !opt.is_quiescent() {
            return Err(Error::NotQuiescent);
        }
        Ok(Snapshot {
            format: SNAPSHOT_FORMAT,
            query: opt.query().clone(),
            catalog: opt.catalog().clone(),
            catalog_sha256: catalog_hash(opt.catalog()),
            strategies: opt.strategies(),
            cost_config: opt.config().model.config,
            relations: dump(opt),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Snapshot> {
        serde_json::from_str(text).map_err(|e| Error::Snapshot(e.to_string()))
    }

    /// Rebuilds the optimizer and verifies it reproduces the dumped state.
    pub fn restore(&self) -> Result<Optimizer> {
        if self.format != SNAPSHOT_FORMAT {
            return Err(Error::Snapshot(format!("unsupported format {}", self.format)));
        }
        if catalog_hash(&self.catalog) != self.catalog_sha256 {
            return Err(Error::Snapshot("embedded catalog does not match its hash".into()));
        }
        let config = OptimizerConfig {
            strategies: self.strategies,
            model: CostModel::new(self.cost_config),
            ..Default::default()
        };
        let mut opt = Optimizer::new(&self.catalog, &self.query, config)
            .map_err(|e| Error::Snapshot(e.to_string()))?;
        opt.run()?;
        if dump(&opt) != self.relations {
            return Err(Error::Snapshot("stored relations do not match the rebuilt state".into()));
        }
        Ok(opt)
    }
}
