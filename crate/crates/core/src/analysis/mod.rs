//! Hyperparameter sweeps and the left-context embedding study.

mod skipgram;
mod sweep;

pub use skipgram::{
    compare_to_permuted, context_vector, cosine_similarity, cs_pairs, cs_profile, cs_profile_retrained,
    permuted_cs_pairs, train_left_skipgram, CsComparison, EmbeddingModel, SkipGramConfig, MAX_SKIPGRAM_VOCAB,
};
pub use sweep::{
    check_sweep_values, evaluate_transcript, summarize, sweep, SweepAxis, SweepPoint, SweepResult,
    TranscriptResult, TurnResult,
};

use thiserror::Error;

use crate::engine::EngineError;
use crate::metrics::MetricsError;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("sweep values must be non-empty and strictly increasing")]
    BadSweepValues,
    #[error("vocabulary of {0} symbols is too large for full-softmax training")]
    VocabTooLarge(usize),
    #[error("zero vector")]
    ZeroVector,
    #[error("vector lengths differ ({0} vs {1})")]
    DimMismatch(usize, usize),
    #[error("invalid skip-gram setting: {0}")]
    BadSkipGramConfig(&'static str),
    #[error("no (context, next token) pairs in corpus")]
    NoPairs,
}
