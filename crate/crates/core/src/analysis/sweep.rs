use std::fmt;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::corpus::{EncodedTranscript, TokenId};
use crate::engine::{run_transcript, AttemptOutcome, EngineConfig, ModelSource};
use crate::metrics::{mean_metrics, score_log, CostModel, MetricsRecord, RunMetrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnResult<F> {
    pub output: Vec<TokenId>,
    pub context_len: usize,
    pub metrics: RunMetrics<F>,
}

/// All turns of one transcript run, plus metrics over the whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptResult<F> {
    pub id: String,
    pub category: String,
    pub turns: Vec<TurnResult<F>>,
    pub total: RunMetrics<F>,
}

impl<F: Float> TranscriptResult<F> {
    /// One record per turn.
    pub fn records(&self, corpus: &str, config: &EngineConfig) -> Vec<MetricsRecord> {
        self.turns
            .iter()
            .enumerate()
            .map(|(i, t)| MetricsRecord::new(corpus, &self.id, &self.category, i + 1, config, &t.metrics))
            .collect()
    }
}

pub fn evaluate_transcript<F: Float + FromPrimitive>(
    transcript: &EncodedTranscript,
    models: &dyn ModelSource,
    config: EngineConfig,
    cost: &CostModel<F>,
) -> Result<TranscriptResult<F>, AnalysisError> {
    let runs = run_transcript(transcript, models, config)?;
    let mut all: Vec<AttemptOutcome> = Vec::new();
    let mut turns = Vec::with_capacity(runs.len());
    for run in runs {
        all.extend_from_slice(&run.log);
        turns.push(TurnResult {
            metrics: score_log(&run.log, cost)?,
            output: run.output,
            context_len: run.context_len,
        });
    }
    Ok(TranscriptResult {
        id: transcript.id.clone(),
        category: transcript.category.clone(),
        turns,
        total: score_log(&all, cost)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Gamma,
    ChunkLen,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Gamma => "gamma",
            SweepAxis::ChunkLen => "chunk_len",
        }
    }

    /// `config` with this axis set to `value`.
    pub fn apply(self, config: EngineConfig, value: usize) -> EngineConfig {
        match self {
            SweepAxis::Gamma => EngineConfig {
                gamma: value,
                ..config
            },
            SweepAxis::ChunkLen => EngineConfig {
                chunk_len: value,
                ..config
            },
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gamma" => Ok(SweepAxis::Gamma),
            "chunk" | "chunk_len" => Ok(SweepAxis::ChunkLen),
            _ => Err(format!("unknown sweep axis {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint<F> {
    pub value: usize,
    /// Mean of per-transcript whole-run metrics.
    pub metrics: RunMetrics<F>,
    /// Mean of per-transcript metrics for each turn.
    pub per_turn: Vec<RunMetrics<F>>,
    /// Copy attempts summed over the corpus.
    pub copy_attempts: usize,
    #[serde(skip, default = "Vec::new")]
    pub transcripts: Vec<TranscriptResult<F>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult<F> {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint<F>>,
}

/// Aggregates transcript results into one sweep point.
pub fn summarize<F: Float + FromPrimitive>(
    value: usize,
    transcripts: Vec<TranscriptResult<F>>,
) -> SweepPoint<F> {
    let totals: Vec<RunMetrics<F>> = transcripts.iter().map(|t| t.total).collect();
    let turns = transcripts.iter().map(|t| t.turns.len()).max().unwrap_or(0);
    let per_turn = (0..turns)
        .filter_map(|i| {
            let ms: Vec<RunMetrics<F>> = transcripts
                .iter()
                .filter_map(|t| t.turns.get(i))
                .map(|t| t.metrics)
                .collect();
            mean_metrics(&ms)
        })
        .collect();
    SweepPoint {
        value,
        metrics: mean_metrics(&totals).unwrap_or_else(|| zero_metrics()),
        per_turn,
        copy_attempts: totals.iter().map(|m| m.copy_attempts).sum(),
        transcripts,
    }
}

fn zero_metrics<F: Float>() -> RunMetrics<F> {
    RunMetrics {
        tokens_out: 0,
        copied_tokens: 0,
        copy_attempts: 0,
        draft_attempts: 0,
        plain_steps: 0,
        tau1: F::zero(),
        tau2: F::zero(),
        sim_time: F::zero(),
        sim_tps: F::zero(),
        pct_copied: F::zero(),
    }
}

/// Sweep values must be non-empty and strictly increasing.
pub fn check_sweep_values(values: &[usize]) -> Result<(), AnalysisError> {
    if values.is_empty() || values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AnalysisError::BadSweepValues);
    }
    Ok(())
}

/// Runs the corpus once per value of `axis`, everything else held fixed.
pub fn sweep<F: Float + FromPrimitive>(
    corpus: &[EncodedTranscript],
    models: &dyn ModelSource,
    base: EngineConfig,
    axis: SweepAxis,
    values: &[usize],
    cost: &CostModel<F>,
) -> Result<SweepResult<F>, AnalysisError> {
    check_sweep_values(values)?;
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let config = axis.apply(base, value);
        config.validate()?;
        let transcripts = corpus
            .iter()
            .map(|t| evaluate_transcript(t, models, config, cost))
            .collect::<Result<Vec<_>, _>>()?;
        points.push(summarize(value, transcripts));
    }
    Ok(SweepResult { axis, points })
}

#[derive(Serialize)]
struct PointRow<'a> {
    axis: &'a str,
    value: usize,
    copy_attempts_total: usize,
    tokens_out: usize,
    copied_tokens: usize,
    copy_attempts: usize,
    draft_attempts: usize,
    plain_steps: usize,
    tau1: f64,
    tau2: f64,
    sim_time: f64,
    sim_tps: f64,
    pct_copied: f64,
}

impl<F: Float + Serialize> SweepResult<F> {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep serializes")
    }

    /// One row per sweep point.
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let f = |x: F| x.to_f64().unwrap_or(f64::NAN);
        let mut w = csv::Writer::from_writer(Vec::new());
        for p in &self.points {
            let m = &p.metrics;
            w.serialize(PointRow {
                axis: self.axis.name(),
                value: p.value,
                copy_attempts_total: p.copy_attempts,
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
            })?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
    }

    /// Long format: one (value, metric, number) row per metric per point.
    pub fn to_long_csv(&self) -> Result<String, csv::Error> {
        let f = |x: F| x.to_f64().unwrap_or(f64::NAN);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["value", "metric", "number"])?;
        for p in &self.points {
            let m = &p.metrics;
            let rows: [(&str, f64); 8] = [
                ("copy_attempts", p.copy_attempts as f64),
                ("tokens_out", m.tokens_out as f64),
                ("copied_tokens", m.copied_tokens as f64),
                ("tau1", f(m.tau1)),
                ("tau2", f(m.tau2)),
                ("sim_time", f(m.sim_time)),
                ("sim_tps", f(m.sim_tps)),
                ("pct_copied", f(m.pct_copied)),
            ];
            for (name, v) in rows {
                w.write_record([p.value.to_string(), name.to_owned(), v.to_string()])?;
            }
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
    }
}
