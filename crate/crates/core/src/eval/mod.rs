//! Known-item evaluation: reciprocal ranks, MRR, paired significance
//! testing, run-file I/O, per-query comparison and the timing harness.

mod compare;
mod grid;
mod metrics;
mod runfile;
mod timing;
mod ttest;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::index::RankedList;

pub use compare::{compare_runs, Comparison};
pub use grid::{
    build_grid_corpus, run_experiment_grid, EarlyFusionWeights, GapReport, GridCell,
    GridConfig, GridReport, SigMark,
};
pub use metrics::{mrr, reciprocal_ranks};
pub use runfile::{read_qrels, read_run, write_qrels, write_run};
pub use timing::{timing_harness, TimingReport};
pub use ttest::{paired_ttest, students_t_two_tailed_p, TtestResult};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("run file is malformed at line {line}: {message}")]
    RunFile { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

/// Per-query ranked lists of one system, the unit of evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFile {
    pub system_tag: String,
    pub rankings: BTreeMap<String, RankedList>,
    /// Free-form provenance: condition, fusion config, seeds.
    pub metadata: BTreeMap<String, String>,
}

impl RunFile {
    pub fn new(system_tag: impl Into<String>) -> Self {
        RunFile {
            system_tag: system_tag.into(),
            rankings: BTreeMap::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, query_id: impl Into<String>, mut list: RankedList) {
        let query_id = query_id.into();
        list.query_id = query_id.clone();
        self.rankings.insert(query_id, list);
    }

    pub fn num_queries(&self) -> usize {
        self.rankings.len()
    }
}
