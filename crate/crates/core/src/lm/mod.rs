//! Stateful next-token models with a KV-cache-like append/truncate contract.
//!
//! A model holds a cached prefix. [`LangModel::score_block`] appends a block
//! to it in one call (one parallel forward pass) and returns, for every block
//! position, the greedy next token after the prefix up to and including that
//! position. [`LangModel::next_argmax`] reads the greedy next token after
//! the whole cached prefix, i.e. the last logits of the pass that appended
//! it. Both are pure functions of the cached prefix: any append/truncate
//! history that ends in the same prefix gives the same answers.

mod kgram;
mod table;

pub use kgram::{KgramCounts, KgramLM, KGRAM_FORMAT, KGRAM_VERSION};
pub use table::TableLM;

use thiserror::Error;

use crate::corpus::TokenId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LmError {
    #[error("token {id} is outside the {vocab_size}-symbol vocabulary")]
    InvalidToken { id: TokenId, vocab_size: usize },
    #[error("cannot truncate a {len}-token state to {keep}")]
    TruncateBeyondState { keep: usize, len: usize },
    #[error("empty block")]
    EmptyBlock,
    #[error("training corpus contains no tokens")]
    EmptyCorpus,
    #[error("model order must be at least 1")]
    ZeroOrder,
    #[error("model dump: {0}")]
    Dump(String),
}

/// Work counters a model accumulates over its lifetime.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScoreCounters {
    pub blocks_scored: u64,
    pub tokens_scored: u64,
}

pub trait LangModel {
    fn vocab_size(&self) -> usize;

    /// Number of cached tokens.
    fn state_len(&self) -> usize;

    /// Appends `block` and returns the greedy next token after each of its
    /// positions.
    fn score_block(&mut self, block: &[TokenId]) -> Result<Vec<TokenId>, LmError>;

    /// Greedy next token after the cached prefix.
    fn next_argmax(&self) -> TokenId;

    /// Next-token distribution after the cached prefix.
    fn next_distribution(&self) -> Vec<f64>;

    /// Discards everything after the first `keep_len` cached tokens.
    fn truncate(&mut self, keep_len: usize) -> Result<(), LmError>;

    fn counters(&self) -> ScoreCounters;

    /// Appends tokens when only the state change is wanted.
    fn append(&mut self, tokens: &[TokenId]) -> Result<(), LmError> {
        if tokens.is_empty() {
            return Ok(());
        }
        self.score_block(tokens).map(|_| ())
    }
}

impl<M: LangModel + ?Sized> LangModel for Box<M> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn state_len(&self) -> usize {
        (**self).state_len()
    }
    fn score_block(&mut self, block: &[TokenId]) -> Result<Vec<TokenId>, LmError> {
        (**self).score_block(block)
    }
    fn next_argmax(&self) -> TokenId {
        (**self).next_argmax()
    }
    fn next_distribution(&self) -> Vec<f64> {
        (**self).next_distribution()
    }
    fn truncate(&mut self, keep_len: usize) -> Result<(), LmError> {
        (**self).truncate(keep_len)
    }
    fn counters(&self) -> ScoreCounters {
        (**self).counters()
    }
}

/// Shared bookkeeping for models whose state is just the token prefix.
#[derive(Debug, Clone, Default)]
pub(crate) struct PrefixState {
    pub tokens: Vec<TokenId>,
    pub counters: ScoreCounters,
}

impl PrefixState {
    pub fn check(&self, block: &[TokenId], vocab_size: usize) -> Result<(), LmError> {
        if block.is_empty() {
            return Err(LmError::EmptyBlock);
        }
        match block.iter().find(|&&t| t as usize >= vocab_size) {
            Some(&id) => Err(LmError::InvalidToken { id, vocab_size }),
            None => Ok(()),
        }
    }

    /// Appends `block`, calling `predict` on the prefix after each token.
    pub fn score_with(
        &mut self,
        block: &[TokenId],
        vocab_size: usize,
        predict: impl Fn(&[TokenId]) -> TokenId,
    ) -> Result<Vec<TokenId>, LmError> {
        self.check(block, vocab_size)?;
        self.counters.blocks_scored += 1;
        self.counters.tokens_scored += block.len() as u64;
        let mut out = Vec::with_capacity(block.len());
        for &tok in block {
            self.tokens.push(tok);
            out.push(predict(&self.tokens));
        }
        Ok(out)
    }

    pub fn truncate(&mut self, keep: usize) -> Result<(), LmError> {
        if keep > self.tokens.len() {
            return Err(LmError::TruncateBeyondState {
                keep,
                len: self.tokens.len(),
            });
        }
        self.tokens.truncate(keep);
        Ok(())
    }
}

/// Greedy decoding one token at a time, without any speculation. Stops
/// before `eot` or after `max_new` tokens. This is the reference every
/// speculative strategy must reproduce.
pub fn greedy_decode(
    model: &mut dyn LangModel,
    prompt: &[TokenId],
    eot: Option<TokenId>,
    max_new: usize,
) -> Result<Vec<TokenId>, LmError> {
    model.truncate(0)?;
    model.append(prompt)?;
    let mut out = Vec::new();
    while out.len() < max_new {
        let next = model.next_argmax();
        if Some(next) == eot {
            break;
        }
        out.push(next);
        model.append(&[next])?;
    }
    Ok(out)
}
