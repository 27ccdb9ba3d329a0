//! Token-level edit distance, normalized average edit distance (AED) and
//! translation throughput.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, TranslateRequest};
use crate::dataset::FunctionPair;
use crate::tokenizer::SubwordModel;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("ground truth has no tokens")]
    EmptyTruth,
    #[error("no test pairs to evaluate")]
    NoSamples,
}

/// Levenshtein distance with unit insert, delete and substitute costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance divided by the ground-truth length. Not clamped: a long
/// prediction against a short truth can exceed 1.
pub fn normalized_ed<T: PartialEq>(pred: &[T], truth: &[T]) -> Result<f64, MetricsError> {
    if truth.is_empty() {
        return Err(MetricsError::EmptyTruth);
    }
    Ok(edit_distance(pred, truth) as f64 / truth.len() as f64)
}

/// Monotonic time source, injectable for tests.
pub trait Clock {
    fn now(&self) -> Duration;
}

pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }
}

/// Advances by a fixed step on every reading.
pub struct TickClock {
    step: Duration,
    ticks: std::cell::Cell<u32>,
}

impl TickClock {
    pub fn new(step: Duration) -> Self {
        TickClock {
            step,
            ticks: std::cell::Cell::new(0),
        }
    }
}

impl Clock for TickClock {
    fn now(&self) -> Duration {
        let t = self.ticks.get();
        self.ticks.set(t + 1);
        self.step * t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub pair_id: String,
    pub edit_distance: usize,
    pub truth_len: usize,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedSample {
    pub pair_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Wall time spent waiting on the backend, tokenization excluded.
    pub backend_seconds: f64,
    /// `sample_count / backend_seconds`; absent when no time was measured.
    pub functions_per_second: Option<f64>,
}

/// Evaluation results. The serialized form holds only the reproducible
/// numbers; wall-clock figures live in [`EvalReport::timing`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub backend: String,
    /// Tokenizer file the distances were measured with.
    pub tokenizer: String,
    pub per_sample: Vec<SampleScore>,
    pub aed: f64,
    pub sample_count: usize,
    pub skipped: Vec<SkippedSample>,
    #[serde(skip, default = "no_timing")]
    pub timing: Timing,
}

fn no_timing() -> Timing {
    Timing {
        backend_seconds: 0.0,
        functions_per_second: None,
    }
}

impl EvalReport {
    /// Summary row: model name, AED, functions per second.
    pub fn table(&self) -> String {
        let speed = self
            .timing
            .functions_per_second
            .map_or_else(|| "-".to_owned(), |f| format!("{f:.2}"));
        format!(
            "{:<24} {:>14} {:>14} {:>8} {:>8}\n{:<24} {:>14.4} {:>14} {:>8} {:>8}\n",
            "model", "avg_edit_dist", "functions/s", "samples", "skipped", self.backend, self.aed, speed, self.sample_count,
            self.skipped.len()
        )
    }
}

/// Test pairs in the order [`evaluate`] sends them, with their request ids.
pub fn request_order(test: &[FunctionPair]) -> Vec<(u64, &FunctionPair)> {
    let mut pairs: Vec<&FunctionPair> = test.iter().collect();
    pairs.sort_by(|a, b| a.id.cmp(&b.id));
    pairs.into_iter().enumerate().map(|(i, p)| (i as u64 + 1, p)).collect()
}

/// Sends every test pair's assembly to `backend` and scores the returned
/// source against the ground truth, both tokenized with `source_tok`.
pub fn evaluate(
    backend: &mut dyn Backend,
    test: &[FunctionPair],
    source_tok: &SubwordModel,
    tokenizer_ref: &str,
    clock: &dyn Clock,
) -> Result<EvalReport, MetricsError> {
    if test.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    let mut per_sample = Vec::with_capacity(test.len());
    let mut skipped = Vec::new();
    let mut backend_time = Duration::ZERO;
    for (request_id, pair) in request_order(test) {
        let req = TranslateRequest {
            request_id,
            asm_text: pair.asm_text.clone(),
        };
        let started = clock.now();
        let result = backend.translate(&req);
        backend_time += clock.now().saturating_sub(started);
        let skip = |reason: String| SkippedSample {
            pair_id: pair.id.clone(),
            reason,
        };
        let resp = match result {
            Ok(r) => r,
            Err(e) => {
                skipped.push(skip(format!("backend_failure: {e}")));
                continue;
            }
        };
        if resp.request_id != request_id {
            skipped.push(skip(format!(
                "backend_failure: response id {} for request {request_id}",
                resp.request_id
            )));
            continue;
        }
        let pred = source_tok.encode(&resp.source_text);
        if let Some(probs) = &resp.token_probs {
            if probs.len() != pred.len() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                skipped.push(skip("backend_failure: token_probs do not match the prediction".to_owned()));
                continue;
            }
        }
        let truth = source_tok.encode(&pair.source_text);
        match normalized_ed(&pred.ids, &truth.ids) {
            Ok(normalized) => per_sample.push(SampleScore {
                pair_id: pair.id.clone(),
                edit_distance: edit_distance(&pred.ids, &truth.ids),
                truth_len: truth.len(),
                normalized,
            }),
            Err(e) => skipped.push(skip(e.to_string())),
        }
    }
    let sample_count = per_sample.len();
    let aed = if sample_count == 0 {
        0.0
    } else {
        per_sample.iter().map(|s| s.normalized).sum::<f64>() / sample_count as f64
    };
    let secs = backend_time.as_secs_f64();
    Ok(EvalReport {
        backend: backend.name(),
        tokenizer: tokenizer_ref.to_owned(),
        per_sample,
        aed,
        sample_count,
        skipped,
        timing: Timing {
            backend_seconds: secs,
            functions_per_second: (secs > 0.0).then(|| sample_count as f64 / secs),
        },
    })
}
