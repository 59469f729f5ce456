//! Copy-first speculative generation loop.
//!
//! Each attempt proposes a block of tokens, verifies it with one target
//! pass, keeps the longest prefix that matches the target's greedy choices
//! and appends one more token from the target (the bonus). Proposals come
//! from, in order of preference:
//!
//! 1. the context itself, when the last `gamma` tokens occurred earlier
//!    without overlapping the current window (a copy attempt);
//! 2. a draft model run greedily for `draft_len` tokens;
//! 3. nothing, in which case the attempt is a plain greedy step.
//!
//! The output is always exactly the target's greedy continuation.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, EncodedTranscript, TokenId, EOT_ID};
use crate::lm::{KgramCounts, KgramLM, LangModel, LmError};
use crate::match_index::{extract_chunk, IndexError, MatchIndex, DEFAULT_GAMMA};

pub const DEFAULT_CHUNK_LEN: usize = 10;
pub const DEFAULT_DRAFT_LEN: usize = 3;
pub const DEFAULT_MAX_NEW_TOKENS: usize = 1024;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
    #[error("output budget exhausted")]
    BudgetExhausted,
    #[error("turn already ended at end-of-text")]
    TurnEnded,
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("proposal is empty")]
    EmptyProposal,
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "copy")]
    Copy,
    #[serde(rename = "specdec")]
    SpecDec,
    #[serde(rename = "copy+specdec")]
    CopyPlusSpecDec,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Baseline,
        Strategy::Copy,
        Strategy::SpecDec,
        Strategy::CopyPlusSpecDec,
    ];

    pub fn copies(self) -> bool {
        matches!(self, Strategy::Copy | Strategy::CopyPlusSpecDec)
    }

    pub fn drafts(self) -> bool {
        matches!(self, Strategy::SpecDec | Strategy::CopyPlusSpecDec)
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::Copy => "copy",
            Strategy::SpecDec => "specdec",
            Strategy::CopyPlusSpecDec => "copy+specdec",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub gamma: usize,
    /// Upper bound on the copied chunk length.
    pub chunk_len: usize,
    /// Tokens the draft model proposes per attempt.
    pub draft_len: usize,
    pub strategy: Strategy,
    pub max_new_tokens: usize,
    /// Token that ends a turn; it is never part of the output.
    pub eot: Option<TokenId>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            gamma: DEFAULT_GAMMA,
            chunk_len: DEFAULT_CHUNK_LEN,
            draft_len: DEFAULT_DRAFT_LEN,
            strategy: Strategy::Copy,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            eot: Some(EOT_ID),
        }
    }
}

impl EngineConfig {
    pub fn with_strategy(self, strategy: Strategy) -> Self {
        EngineConfig { strategy, ..self }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let checks = [
            (self.gamma, "gamma"),
            (self.chunk_len, "chunk_len"),
            (self.draft_len, "draft_len"),
            (self.max_new_tokens, "max_new_tokens"),
        ];
        match checks.iter().find(|(v, _)| *v == 0) {
            Some((_, name)) => Err(EngineError::InvalidConfig(format!("{name} must be at least 1"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Copy,
    Draft,
    Plain,
}

/// Result of one verification attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptOutcome {
    pub source: Source,
    /// Tokens proposed for verification (0 for a plain step).
    pub proposed: usize,
    /// Leading proposed tokens that matched the target.
    pub accepted_k: usize,
    /// The target's token after the accepted prefix.
    pub bonus: TokenId,
    /// The bonus is end-of-text; the turn ends and the bonus is not emitted.
    pub hit_eot: bool,
    /// First proposed token the target disagreed with.
    pub first_rejected: Option<TokenId>,
    /// Index lookups plus windows inserted, for copy-capable strategies.
    pub index_ops: usize,
}

impl AttemptOutcome {
    /// Tokens this attempt added to the output.
    pub fn emitted(&self) -> usize {
        self.accepted_k + usize::from(!self.hit_eot)
    }
}

/// One generation session: the accepted context, its match index, and the
/// model caches kept aligned with it.
pub struct Session {
    context: Vec<TokenId>,
    index: MatchIndex,
    target: Box<dyn LangModel + Send>,
    draft: Option<Box<dyn LangModel + Send>>,
    config: EngineConfig,
    log: Vec<AttemptOutcome>,
    turn_start: usize,
    turn_ended: bool,
}

impl Session {
    /// Both models are reset to an empty cache.
    pub fn new(
        mut target: Box<dyn LangModel + Send>,
        mut draft: Option<Box<dyn LangModel + Send>>,
        config: EngineConfig,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        target.truncate(0)?;
        if let Some(d) = draft.as_mut() {
            d.truncate(0)?;
        }
        Ok(Session {
            context: Vec::new(),
            index: MatchIndex::new(config.gamma)?,
            target,
            draft,
            config,
            log: Vec::new(),
            turn_start: 0,
            turn_ended: true,
        })
    }

    pub fn context(&self) -> &[TokenId] {
        &self.context
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn log(&self) -> &[AttemptOutcome] {
        &self.log
    }

    pub fn index(&self) -> &MatchIndex {
        &self.index
    }

    pub fn target(&self) -> &dyn LangModel {
        self.target.as_ref()
    }

    pub fn draft(&self) -> Option<&dyn LangModel> {
        self.draft.as_deref().map(|d| d as &dyn LangModel)
    }

    /// Tokens generated in the current turn.
    pub fn turn_output(&self) -> &[TokenId] {
        &self.context[self.turn_start..]
    }

    /// Whether every model cache holds exactly the context.
    pub fn caches_aligned(&self) -> bool {
        self.target.state_len() == self.context.len()
            && self
                .draft
                .as_ref()
                .is_none_or(|d| d.state_len() == self.context.len())
    }

    /// Appends prompt tokens and starts a new turn.
    pub fn push_prompt(&mut self, prompt: &[TokenId]) -> Result<(), EngineError> {
        self.target.append(prompt)?;
        if let Some(d) = self.draft.as_mut() {
            d.append(prompt)?;
        }
        self.context.extend_from_slice(prompt);
        self.index.extend(&self.context);
        self.turn_start = self.context.len();
        self.turn_ended = false;
        Ok(())
    }

    fn remaining(&self) -> usize {
        self.config.max_new_tokens - (self.context.len() - self.turn_start)
    }

    /// Runs one attempt: copy if possible, else draft, else a plain step.
    pub fn step(&mut self) -> Result<AttemptOutcome, EngineError> {
        if self.turn_ended {
            return Err(EngineError::TurnEnded);
        }
        let remaining = self.remaining();
        if remaining == 0 {
            return Err(EngineError::BudgetExhausted);
        }
        // proposals leave room for the bonus token
        let room = remaining - 1;
        let mut lookups = 0;

        let g = self.config.gamma;
        if self.config.strategy.copies() && room > 0 && self.context.len() >= 2 * g {
            lookups = 1;
            let t = self.context.len();
            if let Some(found) = self.index.lookup(&self.context, t) {
                if let Ok(chunk) = extract_chunk(&self.context, found, self.config.chunk_len.min(room)) {
                    let chunk = chunk.to_vec();
                    return self.attempt(&chunk, Source::Copy, lookups);
                }
            }
        }

        if self.config.strategy.drafts() && room > 0 && self.draft.is_some() {
            let proposal = self.draft_proposal(self.config.draft_len.min(room))?;
            return self.attempt(&proposal, Source::Draft, lookups);
        }

        self.attempt(&[], Source::Plain, lookups)
    }

    /// Verifies an externally supplied proposal against the target.
    pub fn verify_block(
        &mut self,
        proposal: &[TokenId],
        source: Source,
    ) -> Result<AttemptOutcome, EngineError> {
        if proposal.is_empty() {
            return Err(EngineError::EmptyProposal);
        }
        if self.turn_ended {
            return Err(EngineError::TurnEnded);
        }
        if proposal.len() >= self.remaining() {
            return Err(EngineError::BudgetExhausted);
        }
        self.attempt(proposal, source, 0)
    }

    /// Greedy draft continuation of the context, conditioned on its own
    /// earlier proposals. Leaves the draft cache at the context length.
    fn draft_proposal(&mut self, len: usize) -> Result<Vec<TokenId>, EngineError> {
        let t = self.context.len();
        let eot = self.config.eot;
        let draft = self.draft.as_mut().expect("draft present");
        let mut proposal = vec![draft.next_argmax()];
        while proposal.len() < len && Some(proposal[proposal.len() - 1]) != eot {
            let last = proposal[proposal.len() - 1];
            proposal.push(draft.score_block(&[last])?[0]);
        }
        draft.truncate(t)?;
        Ok(proposal)
    }

    fn attempt(
        &mut self,
        proposal: &[TokenId],
        source: Source,
        lookups: usize,
    ) -> Result<AttemptOutcome, EngineError> {
        let t = self.context.len();
        let eot = self.config.eot;

        // prediction for proposal[i]; predictions[m] follows the whole block
        let mut predictions = Vec::with_capacity(proposal.len() + 1);
        predictions.push(self.target.next_argmax());
        if !proposal.is_empty() {
            predictions.extend(self.target.score_block(proposal)?);
        }

        let mut k = 0;
        while k < proposal.len() && proposal[k] == predictions[k] && Some(predictions[k]) != eot {
            k += 1;
        }
        let bonus = predictions[k];
        let hit_eot = Some(bonus) == eot;
        let first_rejected = (k < proposal.len() && proposal[k] != bonus).then(|| proposal[k]);

        let mut accepted: Vec<TokenId> = proposal[..k].to_vec();
        if !hit_eot {
            accepted.push(bonus);
        }

        // roll the target back to the accepted prefix, then feed the bonus
        self.target.truncate(t + k)?;
        if !hit_eot {
            self.target.append(&[bonus])?;
        }
        if let Some(d) = self.draft.as_mut() {
            d.truncate(t)?;
            d.append(&accepted)?;
        }
        self.context.extend_from_slice(&accepted);
        let inserted = self.index.extend(&self.context);

        let outcome = AttemptOutcome {
            source,
            proposed: proposal.len(),
            accepted_k: k,
            bonus,
            hit_eot,
            first_rejected,
            index_ops: if self.config.strategy.copies() {
                lookups + inserted
            } else {
                0
            },
        };
        if hit_eot || self.remaining() == 0 {
            self.turn_ended = true;
        }
        self.log.push(outcome);
        Ok(outcome)
    }

    /// Steps until end-of-text or the budget runs out. Returns the turn's
    /// output and the attempts that produced it.
    pub fn run_turn(&mut self) -> Result<Generation, EngineError> {
        let log_start = self.log.len();
        loop {
            match self.step() {
                Ok(_) => {}
                Err(EngineError::TurnEnded | EngineError::BudgetExhausted) => break,
                Err(e) => return Err(e),
            }
        }
        Ok(Generation {
            output: self.turn_output().to_vec(),
            log: self.log[log_start..].to_vec(),
        })
    }
}

/// Output of one generation call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub output: Vec<TokenId>,
    pub log: Vec<AttemptOutcome>,
}

/// Generates a continuation of `prompt` from a fresh session.
pub fn generate(
    prompt: &[TokenId],
    target: Box<dyn LangModel + Send>,
    draft: Option<Box<dyn LangModel + Send>>,
    config: EngineConfig,
) -> Result<Generation, EngineError> {
    if prompt.is_empty() {
        return Err(EngineError::EmptyPrompt);
    }
    let mut session = Session::new(target, draft, config)?;
    session.push_prompt(prompt)?;
    session.run_turn()
}

/// Produces fresh model instances for each session.
pub trait ModelSource: Sync {
    fn target(&self) -> Box<dyn LangModel + Send>;
    fn draft(&self) -> Option<Box<dyn LangModel + Send>>;
}

/// Target and optional draft k-gram models over shared counts.
#[derive(Debug, Clone)]
pub struct KgramPair {
    pub target: Arc<KgramCounts>,
    pub draft: Option<Arc<KgramCounts>>,
}

pub const DEFAULT_TARGET_ORDER: usize = 4;
pub const DEFAULT_DRAFT_ORDER: usize = 2;

impl KgramPair {
    /// Trains a target and optional draft on the conversations of `corpus`,
    /// reference answers included.
    pub fn train(
        corpus: &[EncodedTranscript],
        target_order: usize,
        draft_order: Option<usize>,
        vocab_size: usize,
    ) -> Result<Self, LmError> {
        let seqs: Vec<Vec<TokenId>> = corpus.iter().map(corpus::training_sequence).collect();
        let target = Arc::new(KgramCounts::train(&seqs, target_order, vocab_size)?);
        let draft = match draft_order {
            Some(k) => Some(Arc::new(KgramCounts::train(&seqs, k, vocab_size)?)),
            None => None,
        };
        Ok(KgramPair { target, draft })
    }
}

impl ModelSource for KgramPair {
    fn target(&self) -> Box<dyn LangModel + Send> {
        Box::new(KgramLM::new(self.target.clone()))
    }

    fn draft(&self) -> Option<Box<dyn LangModel + Send>> {
        self.draft
            .as_ref()
            .map(|c| Box::new(KgramLM::new(c.clone())) as Box<dyn LangModel + Send>)
    }
}

/// One turn of a transcript run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnRun {
    pub output: Vec<TokenId>,
    pub log: Vec<AttemptOutcome>,
    /// Context length when generation for this turn started.
    pub context_len: usize,
}

/// Runs every user turn in order within one session, so the context and the
/// match index carry over from turn to turn. Each turn's context is the
/// previous context, then `<user> text <assistant>`.
pub fn run_transcript(
    transcript: &EncodedTranscript,
    models: &dyn ModelSource,
    config: EngineConfig,
) -> Result<Vec<TurnRun>, EngineError> {
    let draft = if config.strategy.drafts() {
        models.draft()
    } else {
        None
    };
    let mut session = Session::new(models.target(), draft, config)?;
    let mut turns = Vec::with_capacity(transcript.user_turns.len());
    for user in &transcript.user_turns {
        session.push_prompt(&corpus::turn_prompt(user))?;
        let context_len = session.context().len();
        let Generation { output, log } = session.run_turn()?;
        turns.push(TurnRun {
            output,
            log,
            context_len,
        });
    }
    Ok(turns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{greedy_decode, TableLM};
    use std::collections::HashMap;

    fn boxed<M: LangModel + Send + 'static>(m: M) -> Box<dyn LangModel + Send> {
        Box::new(m)
    }

    fn cfg(strategy: Strategy) -> EngineConfig {
        EngineConfig {
            strategy,
            max_new_tokens: 40,
            ..EngineConfig::default()
        }
    }

    #[test]
    fn config_rejects_zeroes() {
        let bad = EngineConfig {
            max_new_tokens: 0,
            ..EngineConfig::default()
        };
        assert!(matches!(bad.validate(), Err(EngineError::InvalidConfig(_))));
        let bad = EngineConfig {
            gamma: 0,
            ..EngineConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn strategy_names_roundtrip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(json, format!("\"{}\"", s.name()));
        }
    }

    #[test]
    fn full_acceptance_matches_greedy() {
        // greedy continuation of [1,2,3] cycles 4,1,2,3,4,...
        let lm = TableLM::cyclic(6, &[1, 2, 3, 4], 5).unwrap();
        let mut s = Session::new(boxed(lm.fresh()), None, cfg(Strategy::Copy)).unwrap();
        s.push_prompt(&[1, 2, 3]).unwrap();
        let out = s.verify_block(&[4, 1, 2, 3], Source::Copy).unwrap();
        assert_eq!(out.accepted_k, 4);
        assert_eq!(out.bonus, 4);
        assert_eq!(out.first_rejected, None);
        let mut oracle = lm.fresh();
        let expect = greedy_decode(&mut oracle, &[1, 2, 3], None, 5).unwrap();
        assert_eq!(s.turn_output(), &expect[..]);
        assert!(s.caches_aligned());
    }

    #[test]
    fn first_token_reject_diverges() {
        let lm = TableLM::cyclic(10, &[1, 2, 3, 4], 5).unwrap();
        let mut s = Session::new(boxed(lm), None, cfg(Strategy::Copy)).unwrap();
        s.push_prompt(&[1, 2, 3]).unwrap();
        let out = s.verify_block(&[9, 9, 9], Source::Copy).unwrap();
        assert_eq!((out.accepted_k, out.bonus), (0, 4));
        assert_eq!(out.first_rejected, Some(9));
        assert_eq!(s.turn_output(), &[4]);
        assert_eq!(s.target().state_len(), 4);
    }

    #[test]
    fn eot_bonus_ends_turn() {
        // 1 -> 2 -> 3 -> eot
        let table = HashMap::from([(vec![1], 2), (vec![2], 3), (vec![3], 0)]);
        let lm = TableLM::new(5, 1, table, 4).unwrap();
        let mut s = Session::new(boxed(lm), None, cfg(Strategy::Copy)).unwrap();
        s.push_prompt(&[1]).unwrap();
        let out = s.verify_block(&[2, 3], Source::Copy).unwrap();
        assert_eq!(out.accepted_k, 2);
        assert!(out.hit_eot);
        assert_eq!(out.emitted(), 2);
        assert_eq!(s.turn_output(), &[2, 3]);
        assert_eq!(s.step(), Err(EngineError::TurnEnded));
    }

    #[test]
    fn accepted_eot_inside_chunk_stops() {
        let table = HashMap::from([(vec![1], 2), (vec![2], 0)]);
        let lm = TableLM::new(5, 1, table, 4).unwrap();
        let mut s = Session::new(boxed(lm), None, cfg(Strategy::Copy)).unwrap();
        s.push_prompt(&[1]).unwrap();
        let out = s.verify_block(&[2, 0, 3], Source::Copy).unwrap();
        assert_eq!((out.accepted_k, out.bonus, out.hit_eot), (1, 0, true));
        assert_eq!(out.first_rejected, None);
        assert_eq!(s.turn_output(), &[2]);
        assert!(s.caches_aligned());
    }

    #[test]
    fn immediate_eot_gives_empty_output() {
        let lm = TableLM::new(3, 1, HashMap::new(), 0).unwrap();
        for strategy in Strategy::ALL {
            let g = generate(&[1, 2], boxed(lm.fresh()), Some(boxed(lm.fresh())), cfg(strategy)).unwrap();
            assert!(g.output.is_empty());
            assert_eq!(g.log.len(), 1);
        }
    }

    #[test]
    fn baseline_takes_one_attempt_per_token() {
        let lm = TableLM::cyclic(6, &[1, 2, 3, 4], 5).unwrap();
        let g = generate(&[1], boxed(lm), None, cfg(Strategy::Baseline)).unwrap();
        assert_eq!(g.output.len(), 40);
        assert_eq!(g.log.len(), 40);
        assert!(g.log.iter().all(|a| a.source == Source::Plain));
    }

    #[test]
    fn copy_proposes_tokens_after_earlier_occurrence() {
        // prompt holds "p q r s t"; the model then emits "p q r"
        let (p, q, r, s_, t, x) = (3, 4, 5, 6, 7, 8);
        let table = HashMap::from([
            (vec![t], x),
            (vec![x], p),
            (vec![p], q),
            (vec![q], r),
            (vec![r], s_),
            (vec![s_], t),
        ]);
        let lm = TableLM::new(10, 1, table, 0).unwrap();
        let mut sess = Session::new(boxed(lm), None, cfg(Strategy::Copy)).unwrap();
        sess.push_prompt(&[p, q, r, s_, t]).unwrap();
        for _ in 0..4 {
            let a = sess.step().unwrap();
            assert_eq!(a.source, Source::Plain);
        }
        assert_eq!(sess.turn_output(), &[x, p, q, r]);
        let a = sess.step().unwrap();
        assert_eq!(a.source, Source::Copy);
        assert_eq!(a.proposed, 6);
        assert_eq!(a.accepted_k, 6);
        assert_eq!(&sess.turn_output()[4..], &[s_, t, x, p, q, r, s_]);
    }

    #[test]
    fn draft_used_when_no_match() {
        let lm = TableLM::cyclic(12, &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10], 11).unwrap();
        let mut s = Session::new(
            boxed(lm.fresh()),
            Some(boxed(lm.fresh())),
            cfg(Strategy::CopyPlusSpecDec),
        )
        .unwrap();
        s.push_prompt(&[1, 2, 3, 4, 5, 6]).unwrap();
        let a = s.step().unwrap();
        assert_eq!(a.source, Source::Draft);
        assert_eq!((a.proposed, a.accepted_k, a.bonus), (3, 3, 10));
        assert!(s.caches_aligned());
    }

    #[test]
    fn budget_caps_output_exactly() {
        let lm = TableLM::cyclic(6, &[1, 2, 3, 4], 5).unwrap();
        for strategy in Strategy::ALL {
            let config = EngineConfig {
                strategy,
                max_new_tokens: 17,
                ..EngineConfig::default()
            };
            let g = generate(
                &[1, 2, 3, 4, 1, 2, 3],
                boxed(lm.fresh()),
                Some(boxed(lm.fresh())),
                config,
            )
            .unwrap();
            assert_eq!(g.output.len(), 17, "{strategy}");
            assert_eq!(g.log.iter().map(AttemptOutcome::emitted).sum::<usize>(), 17);
        }
    }

    #[test]
    fn empty_prompt_rejected() {
        let lm = TableLM::cyclic(6, &[1, 2], 5).unwrap();
        assert_eq!(
            generate(&[], boxed(lm), None, cfg(Strategy::Copy)).unwrap_err(),
            EngineError::EmptyPrompt
        );
    }
}
