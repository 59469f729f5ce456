//! Attempt-log aggregation and the pass-counting cost model.
//!
//! Simulated time charges every attempt one target pass, plus a per-token
//! term for each scored position (proposal plus bonus), plus draft and index
//! work. It covers generation only; prompt processing is not charged.

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{AttemptOutcome, EngineConfig, Source};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("attempt log is empty")]
    EmptyLog,
    #[error("speedup undefined: a run produced no tokens")]
    DivByZero,
    #[error("cost {0} must be finite and non-negative")]
    NegativeCost(&'static str),
}

/// Time units charged for model and index work.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel<F> {
    /// Per target verification pass.
    pub target_pass_cost: F,
    /// Per position scored in a target pass.
    pub target_per_token_cost: F,
    /// Per token the draft model proposes.
    pub draft_token_cost: F,
    /// Per index lookup or window insertion.
    pub index_op_cost: F,
}

impl<F: Float + FromPrimitive> Default for CostModel<F> {
    fn default() -> Self {
        let f = |x: f64| F::from_f64(x).expect("representable");
        CostModel {
            target_pass_cost: f(1.0),
            target_per_token_cost: f(0.02),
            draft_token_cost: f(0.1),
            index_op_cost: f(0.0),
        }
    }
}

impl<F: Float + FromPrimitive> CostModel<F> {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let fields = [
            (self.target_pass_cost, "target_pass_cost"),
            (self.target_per_token_cost, "target_per_token_cost"),
            (self.draft_token_cost, "draft_token_cost"),
            (self.index_op_cost, "index_op_cost"),
        ];
        for (v, name) in fields {
            if !(v.is_finite() && v >= F::zero()) {
                return Err(MetricsError::NegativeCost(name));
            }
        }
        Ok(())
    }

    /// Simulated time of one attempt.
    pub fn attempt_cost(&self, a: &AttemptOutcome) -> F {
        let n = |x: usize| F::from_usize(x).expect("representable");
        let drafted = if a.source == Source::Draft { a.proposed } else { 0 };
        self.target_pass_cost
            + self.target_per_token_cost * n(a.proposed + 1)
            + self.draft_token_cost * n(drafted)
            + self.index_op_cost * n(a.index_ops)
    }
}

/// Aggregate counters for one generate call (or a concatenation of them).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics<F> {
    pub tokens_out: usize,
    pub copied_tokens: usize,
    pub copy_attempts: usize,
    pub draft_attempts: usize,
    pub plain_steps: usize,
    /// Mean accepted tokens per copy attempt.
    pub tau1: F,
    /// Mean accepted tokens per draft attempt.
    pub tau2: F,
    pub sim_time: F,
    pub sim_tps: F,
    pub pct_copied: F,
}

fn ratio<F: Float + FromPrimitive>(num: usize, den: usize) -> F {
    if den == 0 {
        F::zero()
    } else {
        F::from_usize(num).unwrap() / F::from_usize(den).unwrap()
    }
}

/// Aggregates an attempt log under `cost`.
pub fn score_log<F: Float + FromPrimitive>(
    log: &[AttemptOutcome],
    cost: &CostModel<F>,
) -> Result<RunMetrics<F>, MetricsError> {
    if log.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let mut tokens_out = 0;
    let mut copied = 0;
    let mut drafted_accepted = 0;
    let (mut copies, mut drafts, mut plains) = (0, 0, 0);
    let mut sim_time = F::zero();
    for a in log {
        tokens_out += a.emitted();
        sim_time = sim_time + cost.attempt_cost(a);
        match a.source {
            Source::Copy => {
                copies += 1;
                copied += a.accepted_k;
            }
            Source::Draft => {
                drafts += 1;
                drafted_accepted += a.accepted_k;
            }
            Source::Plain => plains += 1,
        }
    }
    let sim_tps = if sim_time > F::zero() {
        F::from_usize(tokens_out).unwrap() / sim_time
    } else {
        F::zero()
    };
    Ok(RunMetrics {
        tokens_out,
        copied_tokens: copied,
        copy_attempts: copies,
        draft_attempts: drafts,
        plain_steps: plains,
        tau1: ratio(copied, copies),
        tau2: ratio(drafted_accepted, drafts),
        sim_time,
        sim_tps,
        pct_copied: ratio(copied, tokens_out),
    })
}

/// Ratio of simulated throughputs, `a` over `b`.
pub fn speedup<F: Float>(a: &RunMetrics<F>, b: &RunMetrics<F>) -> Result<F, MetricsError> {
    if a.tokens_out == 0 || b.tokens_out == 0 {
        return Err(MetricsError::DivByZero);
    }
    Ok(a.sim_tps / b.sim_tps)
}

/// Field-wise mean of several metrics records. Counts are rounded to the
/// nearest integer.
pub fn mean_metrics<F: Float + FromPrimitive>(items: &[RunMetrics<F>]) -> Option<RunMetrics<F>> {
    if items.is_empty() {
        return None;
    }
    let n = F::from_usize(items.len()).unwrap();
    let mean_f = |f: fn(&RunMetrics<F>) -> F| items.iter().map(f).fold(F::zero(), |a, b| a + b) / n;
    let mean_u = |f: fn(&RunMetrics<F>) -> usize| {
        let total: usize = items.iter().map(f).sum();
        (total + items.len() / 2) / items.len()
    };
    Some(RunMetrics {
        tokens_out: mean_u(|m| m.tokens_out),
        copied_tokens: mean_u(|m| m.copied_tokens),
        copy_attempts: mean_u(|m| m.copy_attempts),
        draft_attempts: mean_u(|m| m.draft_attempts),
        plain_steps: mean_u(|m| m.plain_steps),
        tau1: mean_f(|m| m.tau1),
        tau2: mean_f(|m| m.tau2),
        sim_time: mean_f(|m| m.sim_time),
        sim_tps: mean_f(|m| m.sim_tps),
        pct_copied: mean_f(|m| m.pct_copied),
    })
}

/// One emitted metrics row: a (transcript, turn, strategy) record, or an
/// aggregate when `transcript` is `*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub corpus: String,
    pub transcript: String,
    pub category: String,
    /// 1-based turn number.
    pub turn: usize,
    pub strategy: String,
    pub gamma: usize,
    pub chunk_len: usize,
    pub draft_len: usize,
    pub max_new_tokens: usize,
    pub tokens_out: usize,
    pub copied_tokens: usize,
    pub copy_attempts: usize,
    pub draft_attempts: usize,
    pub plain_steps: usize,
    pub tau1: f64,
    pub tau2: f64,
    pub sim_time: f64,
    pub sim_tps: f64,
    pub pct_copied: f64,
}

/// Marker used in the `transcript` column for aggregate rows.
pub const AGGREGATE_ID: &str = "*";

impl MetricsRecord {
    pub fn new<F: Float>(
        corpus: &str,
        transcript: &str,
        category: &str,
        turn: usize,
        config: &EngineConfig,
        m: &RunMetrics<F>,
    ) -> Self {
        let f = |x: F| x.to_f64().expect("finite");
        MetricsRecord {
            corpus: corpus.to_owned(),
            transcript: transcript.to_owned(),
            category: category.to_owned(),
            turn,
            strategy: config.strategy.name().to_owned(),
            gamma: config.gamma,
            chunk_len: config.chunk_len,
            draft_len: config.draft_len,
            max_new_tokens: config.max_new_tokens,
            tokens_out: m.tokens_out,
            copied_tokens: m.copied_tokens,
            copy_attempts: m.copy_attempts,
            draft_attempts: m.draft_attempts,
            plain_steps: m.plain_steps,
            tau1: f(m.tau1),
            tau2: f(m.tau2),
            sim_time: f(m.sim_time),
            sim_tps: f(m.sim_tps),
            pct_copied: f(m.pct_copied),
        }
    }

    pub fn is_aggregate(&self) -> bool {
        self.transcript == AGGREGATE_ID
    }

    pub fn metrics(&self) -> RunMetrics<f64> {
        RunMetrics {
            tokens_out: self.tokens_out,
            copied_tokens: self.copied_tokens,
            copy_attempts: self.copy_attempts,
            draft_attempts: self.draft_attempts,
            plain_steps: self.plain_steps,
            tau1: self.tau1,
            tau2: self.tau2,
            sim_time: self.sim_time,
            sim_tps: self.sim_tps,
            pct_copied: self.pct_copied,
        }
    }
}

/// Per-turn aggregates over all transcripts (`category` = `*`), then per
/// (category, turn). Rows come out sorted.
pub fn aggregate_records(records: &[MetricsRecord]) -> Vec<MetricsRecord> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(String, String, usize), Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.is_aggregate()) {
        groups
            .entry((r.strategy.clone(), AGGREGATE_ID.to_owned(), r.turn))
            .or_default()
            .push(r);
        if !r.category.is_empty() {
            groups
                .entry((r.strategy.clone(), r.category.clone(), r.turn))
                .or_default()
                .push(r);
        }
    }
    groups
        .into_iter()
        .map(|((_, category, turn), rows)| {
            let ms: Vec<RunMetrics<f64>> = rows.iter().map(|r| r.metrics()).collect();
            let mean = mean_metrics(&ms).expect("group non-empty");
            let first = rows[0];
            MetricsRecord::new(
                &first.corpus,
                AGGREGATE_ID,
                &category,
                turn,
                &EngineConfig::default(),
                &mean,
            )
            .with_config_of(first)
        })
        .collect()
}

impl MetricsRecord {
    fn with_config_of(mut self, other: &MetricsRecord) -> Self {
        self.strategy = other.strategy.clone();
        self.gamma = other.gamma;
        self.chunk_len = other.chunk_len;
        self.draft_len = other.draft_len;
        self.max_new_tokens = other.max_new_tokens;
        self
    }
}

/// Records as CSV with a header row.
pub fn records_to_csv(records: &[MetricsRecord]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn records_from_csv(text: &str) -> Result<Vec<MetricsRecord>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn attempt(source: Source, proposed: usize, k: usize) -> AttemptOutcome {
        AttemptOutcome {
            source,
            proposed,
            accepted_k: k,
            bonus: 1,
            hit_eot: false,
            first_rejected: (k < proposed).then_some(9),
            index_ops: 0,
        }
    }

    #[test]
    fn baseline_log() {
        let cost = CostModel::<f64>::default();
        let log = vec![attempt(Source::Plain, 0, 0); 25];
        let m = score_log(&log, &cost).unwrap();
        let expect = 25.0 * (1.0 + 0.02);
        assert!((m.sim_time - expect).abs() < 1e-12);
        assert!((m.sim_tps - 25.0 / expect).abs() < 1e-12);
        assert_eq!(m.tokens_out, 25);
        assert_eq!(m.pct_copied, 0.0);
    }

    #[test]
    fn single_copy_attempt() {
        let m = score_log(&[attempt(Source::Copy, 10, 7)], &CostModel::<f64>::default()).unwrap();
        assert_eq!((m.tokens_out, m.copied_tokens, m.copy_attempts), (8, 7, 1));
        assert_eq!(m.tau1, 7.0);
        assert!((m.pct_copied - 7.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn empty_log_is_error() {
        assert_eq!(
            score_log::<f64>(&[], &CostModel::default()),
            Err(MetricsError::EmptyLog)
        );
    }

    #[test]
    fn speedup_cases() {
        let cost = CostModel::<f64>::default();
        let base = score_log(&vec![attempt(Source::Plain, 0, 0); 100], &cost).unwrap();
        assert_eq!(speedup(&base, &base).unwrap(), 1.0);
        // ten copy attempts accepting 9 of 10 each: 100 tokens
        let copy = score_log(&vec![attempt(Source::Copy, 10, 9); 10], &cost).unwrap();
        assert_eq!(copy.tokens_out, 100);
        // 100 / (10 * 1.22) over 100 / (100 * 1.02)
        let expect = (100.0 * 1.02) / (10.0 * 1.22);
        assert!((speedup(&copy, &base).unwrap() - expect).abs() < 1e-12);
        // copy attempts that never accept anything
        let zero = score_log(&vec![attempt(Source::Copy, 10, 0); 100], &cost).unwrap();
        assert!(speedup(&zero, &base).unwrap() <= 1.0);
        let mut empty = base;
        empty.tokens_out = 0;
        assert_eq!(speedup(&empty, &base), Err(MetricsError::DivByZero));
    }

    #[test]
    fn f32_and_f64_agree() {
        let log = vec![
            attempt(Source::Copy, 10, 4),
            attempt(Source::Draft, 3, 2),
            attempt(Source::Plain, 0, 0),
        ];
        let a = score_log(&log, &CostModel::<f64>::default()).unwrap();
        let b = score_log(&log, &CostModel::<f32>::default()).unwrap();
        assert_eq!(a.tokens_out, b.tokens_out);
        assert!((a.sim_time - f64::from(b.sim_time)).abs() < 1e-5);
    }

    #[test]
    fn csv_roundtrip_keeps_columns() {
        let m = score_log(&[attempt(Source::Copy, 10, 7)], &CostModel::<f64>::default()).unwrap();
        let r = MetricsRecord::new("c", "t1", "math", 2, &EngineConfig::default(), &m);
        let text = records_to_csv(std::slice::from_ref(&r)).unwrap();
        assert!(text.starts_with("corpus,transcript,category,turn,strategy,"));
        assert_eq!(records_from_csv(&text).unwrap(), vec![r]);
    }

    #[test]
    fn negative_costs_rejected() {
        let bad = CostModel {
            draft_token_cost: -1.0,
            ..CostModel::<f64>::default()
        };
        assert_eq!(
            bad.validate(),
            Err(MetricsError::NegativeCost("draft_token_cost"))
        );
    }

    fn arb_attempt() -> impl Strategy<Value = AttemptOutcome> {
        (0usize..3, 0usize..12, 0usize..12, any::<bool>(), 0usize..5).prop_map(|(s, p, k, eot, ops)| {
            let source = [Source::Copy, Source::Draft, Source::Plain][s];
            let proposed = if source == Source::Plain { 0 } else { p.max(1) };
            let k = k.min(proposed);
            AttemptOutcome {
                source,
                proposed,
                accepted_k: k,
                bonus: 0,
                hit_eot: eot,
                first_rejected: None,
                index_ops: ops,
            }
        })
    }

    proptest! {
        #[test]
        fn matches_independent_reaggregation(log in proptest::collection::vec(arb_attempt(), 1..40)) {
            let cost = CostModel { index_op_cost: 0.01, ..CostModel::<f64>::default() };
            let m = score_log(&log, &cost).unwrap();
            // recompute from the raw log, one field at a time
            let out: usize = log.iter().map(|a| a.accepted_k + if a.hit_eot { 0 } else { 1 }).sum();
            let copies: Vec<_> = log.iter().filter(|a| a.source == Source::Copy).collect();
            let drafts: Vec<_> = log.iter().filter(|a| a.source == Source::Draft).collect();
            let copied: usize = copies.iter().map(|a| a.accepted_k).sum();
            let time: f64 = log.iter().map(|a| {
                let d = if a.source == Source::Draft { a.proposed as f64 } else { 0.0 };
                1.0 + 0.02 * (a.proposed as f64 + 1.0) + 0.1 * d + 0.01 * a.index_ops as f64
            }).sum();
            prop_assert_eq!(m.tokens_out, out);
            prop_assert_eq!(m.copied_tokens, copied);
            prop_assert_eq!(m.copy_attempts, copies.len());
            prop_assert_eq!(m.draft_attempts, drafts.len());
            prop_assert!((m.sim_time - time).abs() < 1e-9);
            if !copies.is_empty() {
                prop_assert!((m.tau1 - copied as f64 / copies.len() as f64).abs() < 1e-12);
            }
            prop_assert!(m.pct_copied >= 0.0 && m.pct_copied <= 1.0);
        }

        #[test]
        fn raising_any_cost_never_raises_throughput(
            log in proptest::collection::vec(arb_attempt(), 1..30),
            field in 0usize..4,
            bump in 0.0f64..2.0,
        ) {
            let base = CostModel { index_op_cost: 0.01, ..CostModel::<f64>::default() };
            let mut raised = base;
            match field {
                0 => raised.target_pass_cost += bump,
                1 => raised.target_per_token_cost += bump,
                2 => raised.draft_token_cost += bump,
                _ => raised.index_op_cost += bump,
            }
            let a = score_log(&log, &base).unwrap();
            let b = score_log(&log, &raised).unwrap();
            prop_assert!(b.sim_tps <= a.sim_tps + 1e-12);
        }
    }
}
