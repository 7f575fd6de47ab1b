//! Training loop, scripted baselines, evaluation, transfer, checkpoints and
//! run reports.

mod checkpoint;
mod config;
mod eval;
mod report;
mod rollout;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Algo, RunConfig};
pub use eval::{evaluate, evaluate_actor, transfer_eval, EvalMode, EvalOptions, EvalReport, EpisodeReport};
pub use report::{report, RunSummary, ReportOutput};
pub use rollout::{
    ActionMode,
    collect, BaselineCommPolicy, CollectOptions, Collected, CommBehavior, EpisodeStats, EpisodeTrace,
    LearnedCommPolicy,
};
pub use train::{finetune, train, IterationMetrics, Trainer, TrainOutcome, METRICS_HEADER, EVAL_HEADER};

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::comm::CommError;
use crate::env::EnvError;
use crate::learning::LearnError;
use crate::networks::NetError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("update failed at iteration {iteration}: {source}")]
    Learn {
        iteration: u64,
        #[source]
        source: LearnError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("actor parameters changed during transfer to {0}")]
    ParamsChanged(String),
    #[error("no runs found in {0}")]
    NoRuns(PathBuf),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}
