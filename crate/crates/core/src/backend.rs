//! Translation backends and the line-delimited JSON protocol they speak.
//!
//! Protocol v1: the client writes one [`TranslateRequest`] JSON object per
//! line; the server answers each line with exactly one line, either a
//! [`TranslateResponse`] or an [`ErrorResponse`], in request order.
//!
//! ```text
//! > {"request_id":1,"asm_text":"pushq %rbp\nmovq %rsp, %rbp\n..."}
//! < {"request_id":1,"source_text":"int sq(int x) { return x * x; }"}
//! > {"request_id":1,"asm_text":"ret"}
//! < {"request_id":1,"error":"request_id 1 does not increase (last was 1)"}
//! > not json
//! < {"request_id":null,"error":"malformed request: expected ident at line 1 column 2"}
//! ```

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::FunctionPair;
use crate::metrics::request_order;
use crate::tokenizer::SubwordModel;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslateRequest {
    pub request_id: u64,
    pub asm_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslateResponse {
    pub request_id: u64,
    pub source_text: String,
    /// Per-token probabilities of `source_text` under the source tokenizer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_probs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub request_id: Option<u64>,
    pub error: String,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("no answer for request {0}")]
    NoAnswer(u64),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("backend reported: {0}")]
    Remote(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub trait Backend {
    fn name(&self) -> String;
    fn translate(&mut self, req: &TranslateRequest) -> Result<TranslateResponse, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub pair_id: String,
    /// Sorted, deduplicated assembly token ids.
    pub tokens: Vec<u32>,
    pub source_text: String,
}

/// Training pairs keyed by their assembly token sets, sorted by pair id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalIndex {
    pub entries: Vec<IndexEntry>,
    pub built_from: String,
}

fn token_set(asm_tok: &SubwordModel, text: &str) -> Vec<u32> {
    let mut ids = asm_tok.encode(text).ids;
    ids.sort_unstable();
    ids.dedup();
    ids
}

pub fn build_index(train: &[FunctionPair], asm_tok: &SubwordModel, built_from: &str) -> Result<RetrievalIndex, BackendError> {
    if train.is_empty() {
        return Err(BackendError::EmptyTrainSet);
    }
    let mut entries: Vec<IndexEntry> = train
        .iter()
        .map(|p| IndexEntry {
            pair_id: p.id.clone(),
            tokens: token_set(asm_tok, &p.asm_text),
            source_text: p.source_text.clone(),
        })
        .collect();
    entries.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    Ok(RetrievalIndex {
        entries,
        built_from: built_from.to_owned(),
    })
}

/// Jaccard similarity of two sorted, deduplicated sets; two empty sets are
/// identical.
pub fn jaccard(a: &[u32], b: &[u32]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

impl RetrievalIndex {
    /// Entry with the highest Jaccard similarity; the lowest pair id wins ties.
    pub fn nearest(&self, query: &[u32]) -> &IndexEntry {
        let mut best = &self.entries[0];
        let mut best_score = jaccard(query, &best.tokens);
        for e in &self.entries[1..] {
            let s = jaccard(query, &e.tokens);
            if s > best_score {
                best = e;
                best_score = s;
            }
        }
        best
    }
}

/// Returns the source of the most similar training function. The response
/// carries request id 0; [`KnnBackend`] fills in the real one.
pub fn knn_decompile(index: &RetrievalIndex, asm_text: &str, asm_tok: &SubwordModel) -> TranslateResponse {
    let entry = index.nearest(&token_set(asm_tok, asm_text));
    TranslateResponse {
        request_id: 0,
        source_text: entry.source_text.clone(),
        token_probs: None,
    }
}

pub struct KnnBackend<'a> {
    pub index: &'a RetrievalIndex,
    pub asm_tok: &'a SubwordModel,
}

impl Backend for KnnBackend<'_> {
    fn name(&self) -> String {
        "knn-jaccard".to_owned()
    }

    fn translate(&mut self, req: &TranslateRequest) -> Result<TranslateResponse, BackendError> {
        let mut resp = knn_decompile(self.index, &req.asm_text, self.asm_tok);
        resp.request_id = req.request_id;
        Ok(resp)
    }
}

/// Control backend answering with a uniformly drawn training source.
pub struct RandomControl {
    sources: Vec<String>,
    rng: ChaCha8Rng,
    seed: u64,
}

pub fn random_control(train: &[FunctionPair], seed: u64) -> Result<RandomControl, BackendError> {
    if train.is_empty() {
        return Err(BackendError::EmptyTrainSet);
    }
    let mut pairs: Vec<&FunctionPair> = train.iter().collect();
    pairs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(RandomControl {
        sources: pairs.into_iter().map(|p| p.source_text.clone()).collect(),
        rng: ChaCha8Rng::seed_from_u64(seed),
        seed,
    })
}

impl Backend for RandomControl {
    fn name(&self) -> String {
        format!("random-control(seed={})", self.seed)
    }

    fn translate(&mut self, req: &TranslateRequest) -> Result<TranslateResponse, BackendError> {
        let i = self.rng.random_range(0..self.sources.len());
        Ok(TranslateResponse {
            request_id: req.request_id,
            source_text: self.sources[i].clone(),
            token_probs: None,
        })
    }
}

/// Answers each request with the ground truth of the pair evaluation sends
/// under that id. Useful only as a calibration point.
pub struct EchoBackend {
    truths: std::collections::HashMap<u64, String>,
}

impl EchoBackend {
    pub fn for_test_set(test: &[FunctionPair]) -> Self {
        EchoBackend {
            truths: request_order(test)
                .into_iter()
                .map(|(id, p)| (id, p.source_text.clone()))
                .collect(),
        }
    }
}

impl Backend for EchoBackend {
    fn name(&self) -> String {
        "echo".to_owned()
    }

    fn translate(&mut self, req: &TranslateRequest) -> Result<TranslateResponse, BackendError> {
        let text = self.truths.get(&req.request_id).ok_or(BackendError::NoAnswer(req.request_id))?;
        Ok(TranslateResponse {
            request_id: req.request_id,
            source_text: text.clone(),
            token_probs: None,
        })
    }
}

/// Always answers with empty text.
pub struct EmptyBackend;

impl Backend for EmptyBackend {
    fn name(&self) -> String {
        "empty".to_owned()
    }

    fn translate(&mut self, req: &TranslateRequest) -> Result<TranslateResponse, BackendError> {
        Ok(TranslateResponse {
            request_id: req.request_id,
            source_text: String::new(),
            token_probs: None,
        })
    }
}

/// An external process speaking protocol v1 on its stdin/stdout.
pub struct ProcessBackend {
    label: String,
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl ProcessBackend {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, BackendError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut label = program.to_owned();
        for a in args {
            label.push(' ');
            label.push_str(a);
        }
        Ok(ProcessBackend {
            label,
            child,
            stdin,
            stdout,
        })
    }
}

impl Drop for ProcessBackend {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Backend for ProcessBackend {
    fn name(&self) -> String {
        format!("process({})", self.label)
    }

    fn translate(&mut self, req: &TranslateRequest) -> Result<TranslateResponse, BackendError> {
        let line = serde_json::to_string(req).expect("requests serialize");
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.write_all(b"\n")?;
        self.stdin.flush()?;
        let mut buf = String::new();
        if self.stdout.read_line(&mut buf)? == 0 {
            return Err(BackendError::Protocol("backend closed its output".into()));
        }
        parse_reply(buf.trim_end())
    }
}

/// Decodes one server line into a response, turning error lines into
/// [`BackendError::Remote`].
pub fn parse_reply(line: &str) -> Result<TranslateResponse, BackendError> {
    if let Ok(resp) = serde_json::from_str::<TranslateResponse>(line) {
        return Ok(resp);
    }
    match serde_json::from_str::<ErrorResponse>(line) {
        Ok(err) => Err(BackendError::Remote(err.error)),
        Err(e) => Err(BackendError::Protocol(format!("unparseable reply: {e}"))),
    }
}

/// Decodes one client line. On failure returns the error reply to send,
/// carrying the request id when one can be recovered.
pub fn parse_request(line: &str) -> Result<TranslateRequest, ErrorResponse> {
    serde_json::from_str::<TranslateRequest>(line).map_err(|e| {
        let request_id = serde_json::from_str::<serde_json::Value>(line)
            .ok()
            .and_then(|v| v.get("request_id").and_then(serde_json::Value::as_u64));
        ErrorResponse {
            request_id,
            error: format!("malformed request: {e}"),
        }
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub answered: usize,
    pub errors: usize,
}

/// Runs one session: one reply line per input line, flushed immediately.
pub fn serve<R: BufRead, W: Write>(backend: &mut dyn Backend, input: R, mut output: W) -> std::io::Result<ServeStats> {
    let mut stats = ServeStats::default();
    let mut last_id: Option<u64> = None;
    for line in input.lines() {
        let line = line?;
        let reply = match parse_request(&line) {
            Err(err) => Err(err),
            Ok(req) if last_id.is_some_and(|last| req.request_id <= last) => Err(ErrorResponse {
                request_id: Some(req.request_id),
                error: format!(
                    "request_id {} does not increase (last was {})",
                    req.request_id,
                    last_id.unwrap_or_default()
                ),
            }),
            Ok(req) => {
                last_id = Some(req.request_id);
                backend.translate(&req).map_err(|e| ErrorResponse {
                    request_id: Some(req.request_id),
                    error: e.to_string(),
                })
            }
        };
        let text = match reply {
            Ok(resp) => {
                stats.answered += 1;
                serde_json::to_string(&resp)
            }
            Err(err) => {
                stats.errors += 1;
                serde_json::to_string(&err)
            }
        }
        .expect("replies serialize");
        output.write_all(text.as_bytes())?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(stats)
}
