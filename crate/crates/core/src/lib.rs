//! Copy-first speculative generation.
//!
//! The engine looks up the last `gamma` accepted tokens in a hash index of
//! every `gamma`-gram seen so far in the context. On a hit it proposes the
//! tokens that followed the earlier occurrence as a speculative chunk and
//! verifies the whole chunk with a single target-model pass. Accepted tokens
//! are kept, the target supplies one extra token at the first disagreement,
//! and model caches are truncated back to the accepted prefix. When there is
//! no copy opportunity a small draft model can propose tokens instead.
//!
//! Everything here is deterministic and runs at desk scale: the language
//! models are reference k-gram and table models, and speed is measured by a
//! pass-counting cost model instead of wall clock.
//!
//! Numeric code (cost model, metrics, embeddings) is generic over the float
//! type; the aliases below fix it to `f64` for everyday use.

pub mod analysis;
pub mod corpus;
pub mod engine;
pub mod lm;
pub mod match_index;
pub mod metrics;

pub use corpus::{TokenId, Transcript, Vocabulary};
pub use engine::{AttemptOutcome, EngineConfig, Session, Source, Strategy};
pub use lm::{KgramLM, LangModel, TableLM};
pub use match_index::{MatchIndex, MatchResult};

/// Pass-counting cost model in `f64`.
pub type CostModel = metrics::CostModel<f64>;
/// Per-turn run metrics in `f64`.
pub type RunMetrics = metrics::RunMetrics<f64>;
/// Left-context skip-gram embeddings in `f64`.
pub type EmbeddingModel = analysis::EmbeddingModel<f64>;
/// Sweep result in `f64`.
pub type SweepResult = analysis::SweepResult<f64>;

/// Single-precision variants.
pub mod f32 {
    pub type CostModel = crate::metrics::CostModel<f32>;
    pub type RunMetrics = crate::metrics::RunMetrics<f32>;
    pub type EmbeddingModel = crate::analysis::EmbeddingModel<f32>;
}
