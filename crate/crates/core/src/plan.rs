//! Resolved operator trees, shared by every optimizer.

use serde_json::{json, Value};

use crate::algebra::{Alternative, GroupKey, LogOp, PhyOp, QueryGraph};
use crate::costmodel::{Cost, Summary};

#[derive(Debug, Clone, PartialEq)]
pub struct PlanNode {
    pub group: GroupKey,
    pub index: u32,
    pub log_op: LogOp,
    pub phy_op: PhyOp,
    /// Cost of the whole subtree rooted here.
    pub cost: Cost,
    pub local_cost: Cost,
    pub summary: Summary,
    pub children: Vec<PlanNode>,
}

impl PlanNode {
    pub fn to_json(&self, g: &QueryGraph) -> Value {
        json!({
            "op": match self.log_op { LogOp::Join => "Join", LogOp::Scan => "Scan" },
            "phy_op": self.phy_op.name(),
            "expr": g.expr_names(self.group.expr),
            "prop": g.prop_label(self.group.prop),
            "index": self.index,
            "cost": self.cost.as_f64(),
            "local_cost": self.local_cost.as_f64(),
            "summary_card": self.summary.cardinality,
            "children": self.children.iter().map(|c| c.to_json(g)).collect::<Vec<_>>(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanTree {
    pub root: PlanNode,
}

impl PlanTree {
    pub fn cost(&self) -> Cost {
        self.root.cost
    }

    /// Every node as `(group, alternative index)`, preorder.
    pub fn nodes(&self) -> Vec<(GroupKey, u32)> {
        let mut out = Vec::new();
        let mut stack = vec![&self.root];
        while let Some(n) = stack.pop() {
            out.push((n.group, n.index));
            stack.extend(n.children.iter().rev());
        }
        out
    }

    /// True when every node's cost is its local cost plus its children's.
    pub fn sums_consistent(&self) -> bool {
        fn ok(n: &PlanNode) -> bool {
            let kids = n.children.iter().fold(Cost::ZERO, |acc, c| acc + c.cost);
            kids + n.local_cost == n.cost && n.children.iter().all(ok)
        }
        ok(&self.root)
    }

    pub fn to_json(&self, g: &QueryGraph) -> Value {
        self.root.to_json(g)
    }

    /// Indented one-line-per-node rendering.
    pub fn render(&self, g: &QueryGraph) -> String {
        fn walk(n: &PlanNode, g: &QueryGraph, depth: usize, out: &mut String) {
            out.push_str(&format!(
                "{}{} {} [{}] cost={} card={}\n",
                "  ".repeat(depth),
                n.phy_op,
                g.expr_label(n.group.expr),
                g.prop_label(n.group.prop),
                n.cost,
                n.summary.cardinality
            ));
            for c in &n.children {
                walk(c, g, depth + 1, out);
            }
        }
        let mut s = String::new();
        walk(&self.root, g, 0, &mut s);
        s
    }
}

/// Builds a tree by following a best-alternative choice from `root`.
/// `choose` returns the chosen alternative, the subtree cost, the local cost
/// and the summary of a group.
pub fn build_tree(
    root: GroupKey,
    choose: &mut impl FnMut(GroupKey) -> Option<(Alternative, Cost, Cost, Summary)>,
) -> Option<PlanNode> {
    let (alt, cost, local_cost, summary) = choose(root)?;
    let mut children = Vec::new();
    for c in alt.children() {
        children.push(build_tree(c, choose)?);
    }
    Some(PlanNode {
        group: root,
        index: alt.index,
        log_op: alt.log_op,
        phy_op: alt.phy_op,
        cost,
        local_cost,
        summary,
        children,
    })
}
