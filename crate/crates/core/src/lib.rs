//! A cost-based join-order optimizer whose search and cost state is kept as
//! incrementally maintained relations, so that after a statistics change only
//! the affected plans are re-derived.
//!
//! Reference optimizers (exhaustive, bottom-up dynamic programming, top-down
//! branch-and-bound) share the same enumeration and cost functions.

pub mod algebra;
pub mod baselines;
pub mod bench;
pub mod catalog;
pub mod costmodel;
pub mod deltaflow;
pub mod incremental;
pub mod optimizer;
pub mod plan;
pub mod workload;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Catalog(#[from] catalog::CatalogError),
    #[error(transparent)]
    Algebra(#[from] algebra::AlgebraError),
    #[error(transparent)]
    Deltaflow(#[from] deltaflow::DeltaflowError),
    #[error("infeasible query: no plan satisfies the root group")]
    InfeasibleQuery,
    #[error("optimizer state is not quiescent")]
    NotQuiescent,
    #[error("query has {0} relations; the exhaustive oracle handles at most 8")]
    TooLarge(usize),
    #[error("invalid strategy set: {0}")]
    Strategies(String),
    #[error("snapshot error: {0}")]
    Snapshot(String),
    #[error("invalid cost configuration: {0}")]
    CostConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub use algebra::{ExprSig, GroupKey, PropertySpec, Query, QueryGraph};
pub use catalog::{Catalog, StatUpdate};
pub use costmodel::{Cost, CostConfig, CostModel};
pub use optimizer::{Optimizer, OptimizerConfig, Strategies};
pub use plan::PlanTree;
