//! Campaign loop: seed queue, mutation cycles, evaluation-model filtering, execution,
//! roulette re-queueing and incremental retraining, with a write-ahead journal.

mod campaign;
mod config;
mod state;

pub use campaign::{run_campaign, Campaign, CampaignReport, ErrorSummary};
pub use config::{Budget, CampaignLimits, FuzzConfig, SemSettings, StrategyMode};
pub use state::{
    load_journal, CampaignState, ErrorArtifact, ErrorEntry, ExecutionRecord, JournalLine, StateStore, TimelineEvent,
    RECORDS_FILE, REPORT_FILE,
};

use crate::corpus::CorpusError;
use crate::mutation::MutationError;
use crate::sem::SemError;
use crate::sim::SimError;
use rand::Rng;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FuzzError {
    #[error("invalid campaign config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Mutation(#[from] MutationError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Sem(#[from] SemError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("journal line {line}: {why}")]
    Journal { line: usize, why: String },
}

/// Roulette re-queue decision for a seed with `frequency` earlier selections:
/// true with probability `1 / (1 + frequency)`.
pub fn check_frequency<R: Rng + ?Sized>(frequency: usize, rng: &mut R) -> bool {
    rng.random::<f64>() < 1.0 / (1.0 + frequency as f64)
}
