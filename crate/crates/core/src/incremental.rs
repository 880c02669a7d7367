//! Re-optimization after statistics changes.
//!
//! A batch of [`StatUpdate`]s is applied to the catalog first; the changed
//! source values (scan parameters, expression summaries) then enter the
//! running engine as update deltas and propagate to a new fixpoint.

use std::time::Instant;

use serde::Serialize;

use crate::catalog::StatUpdate;
use crate::deltaflow::Delta;
use crate::optimizer::{Fact, Optimizer};
use crate::plan::PlanTree;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReoptMetrics {
    pub touched_and: usize,
    pub touched_or: usize,
    pub total_and: usize,
    pub total_or: usize,
    pub update_ratio_and: f64,
    pub update_ratio_or: f64,
    pub wall_time_ms: f64,
    /// The chosen tree differs in shape or operators; cost changes alone
    /// do not count.
    pub plan_changed: bool,
}

/// The source deltas a batch of updates would inject into `opt`, without
/// changing it.
pub fn stat_to_deltas(updates: &[StatUpdate], opt: &Optimizer) -> Result<Vec<Delta<Fact>>> {
    if !opt.is_quiescent() {
        return Err(Error::NotQuiescent);
    }
    let next = opt.catalog().apply_updates(updates)?;
    Ok(opt.preview_source_deltas(&next))
}

#[derive(Debug)]
pub struct ReoptSession {
    optimizer: Optimizer,
    plan: PlanTree,
    pending: Vec<StatUpdate>,
    last: Option<ReoptMetrics>,
}

impl ReoptSession {
    /// Starts from a quiescent optimizer with a plan.
    pub fn new(optimizer: Optimizer) -> Result<ReoptSession> {
        let plan = optimizer.best_plan()?;
        Ok(ReoptSession {
            optimizer,
            plan,
            pending: Vec::new(),
            last: None,
        })
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    pub fn into_optimizer(self) -> Optimizer {
        self.optimizer
    }

    pub fn plan(&self) -> &PlanTree {
        &self.plan
    }

    pub fn push(&mut self, u: StatUpdate) {
        self.pending.push(u);
    }

    pub fn extend(&mut self, us: impl IntoIterator<Item = StatUpdate>) {
        self.pending.extend(us);
    }

    /// Applies every pending update and drains to the new fixpoint.
    pub fn reoptimize(&mut self) -> Result<(PlanTree, ReoptMetrics)> {
        let start = Instant::now();
        let updates = std::mem::take(&mut self.pending);
        let next = self.optimizer.catalog().apply_updates(&updates)?;
        self.optimizer.start_touch_tracking();
        self.optimizer.apply_catalog(next)?;
        let run = self.optimizer.run();
        let (touched_and, touched_or) = self.optimizer.take_touched();
        run?;
        let plan = self.optimizer.best_plan()?;
        let space = self.optimizer.metrics();
        let ratio = |t: usize, n: usize| if n == 0 { 0.0 } else { t as f64 / n as f64 };
        let metrics = ReoptMetrics {
            touched_and,
            touched_or,
            total_and: space.total_and,
            total_or: space.total_or,
            update_ratio_and: ratio(touched_and, space.total_and),
            update_ratio_or: ratio(touched_or, space.total_or),
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
            plan_changed: plan.nodes() != self.plan.nodes(),
        };
        self.plan = plan.clone();
        self.last = Some(metrics);
        Ok((plan, metrics))
    }

    pub fn last_metrics(&self) -> Option<ReoptMetrics> {
        self.last
    }

    /// True when the last re-optimization touched nothing and kept the plan.
    pub fn converged(&self) -> bool {
        self.last
            .is_some_and(|m| m.touched_and == 0 && m.touched_or == 0 && !m.plan_changed)
    }
}
