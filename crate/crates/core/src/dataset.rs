//! Function pairs, dataset filtering, splitting, token-budget batching and
//! contraction statistics.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::asm::LineSpan;
use crate::diagnostics::Diagnostics;
use crate::tokenizer::{Side, SubwordModel, TokenizerMode};

pub const TRAIN_FILE: &str = "pairs.train.jsonl";
pub const TEST_FILE: &str = "pairs.test.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("test fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("split of {total} pairs would leave one side empty")]
    DegenerateSplit { total: usize },
    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Data-quality flags a pair can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// Referenced source lines do not cover the whole span.
    Perforated,
    /// `.loc` references point into more than one file.
    MultiFile,
    /// No `.loc` references; usually compiler-generated code.
    ZeroLoc,
    /// The normalizer ran off the end of a literal or comment.
    Suspect,
}

impl Flag {
    pub const ALL: [Flag; 4] = [Flag::Perforated, Flag::MultiFile, Flag::ZeroLoc, Flag::Suspect];

    pub fn name(self) -> &'static str {
        match self {
            Flag::Perforated => "perforated",
            Flag::MultiFile => "multi_file",
            Flag::ZeroLoc => "zero_loc",
            Flag::Suspect => "suspect",
        }
    }

    pub fn parse(s: &str) -> Option<Flag> {
        Flag::ALL.into_iter().find(|f| f.name() == s)
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairFlags {
    pub perforated: bool,
    pub multi_file: bool,
    pub zero_loc: bool,
    pub suspect: bool,
}

impl PairFlags {
    pub fn has(&self, flag: Flag) -> bool {
        match flag {
            Flag::Perforated => self.perforated,
            Flag::MultiFile => self.multi_file,
            Flag::ZeroLoc => self.zero_loc,
            Flag::Suspect => self.suspect,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Flag> + '_ {
        Flag::ALL.into_iter().filter(|f| self.has(*f))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub asm_path: String,
    pub function_label: String,
    pub source_path: String,
    pub line_span: Option<LineSpan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionPair {
    pub id: String,
    pub language: String,
    pub asm_text: String,
    pub source_text: String,
    /// Token counts under the dataset's tokenizers; absent until [`build`].
    pub src_tokens: Option<usize>,
    pub asm_tokens: Option<usize>,
    pub provenance: Provenance,
    pub flags: PairFlags,
}

/// Stable identifier derived from the two texts only.
pub fn pair_id(asm_text: &str, source_text: &str) -> String {
    let mut h = Sha256::new();
    h.update((asm_text.len() as u64).to_le_bytes());
    h.update(asm_text.as_bytes());
    h.update(source_text.as_bytes());
    hex::encode(&h.finalize()[..8])
}

impl FunctionPair {
    pub fn new(language: &str, asm_text: String, source_text: String, provenance: Provenance, flags: PairFlags) -> Self {
        FunctionPair {
            id: pair_id(&asm_text, &source_text),
            language: language.to_owned(),
            asm_text,
            source_text,
            src_tokens: None,
            asm_tokens: None,
            provenance,
            flags,
        }
    }

    pub fn tokens(&self, side: Side) -> Option<usize> {
        match side {
            Side::Source => self.src_tokens,
            Side::Asm => self.asm_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagPolicy {
    pub exclude: BTreeSet<Flag>,
}

impl Default for FlagPolicy {
    /// Drops pairs without attribution, spanning several files, or with
    /// unterminated literals/comments. Perforated pairs are kept.
    fn default() -> Self {
        FlagPolicy {
            exclude: [Flag::ZeroLoc, Flag::MultiFile, Flag::Suspect].into_iter().collect(),
        }
    }
}

impl FlagPolicy {
    pub fn none() -> Self {
        FlagPolicy {
            exclude: BTreeSet::new(),
        }
    }

    pub fn first_excluded(&self, flags: &PairFlags) -> Option<Flag> {
        flags.iter().find(|f| self.exclude.contains(f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthCaps {
    pub max_source: usize,
    pub max_asm: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
    pub train_count: usize,
    pub test_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerRefs {
    pub source: String,
    pub asm: String,
}

/// Dataset statistics over exactly the included pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub language: String,
    /// Longest included source, in tokens.
    pub max_source_len: usize,
    /// Longest included assembly, in tokens.
    pub max_asm_len: usize,
    pub source_len_cap: usize,
    pub asm_len_cap: usize,
    pub source_vocab: usize,
    pub asm_vocab: usize,
    pub tokenizer_mode: TokenizerMode,
    pub source_line_count: usize,
    pub source_token_count: usize,
    pub asm_token_count: usize,
    pub function_count: usize,
    /// `asm_token_count / source_token_count`, 0 when there is no source.
    pub token_ratio: f64,
    pub split: Option<SplitSpec>,
    pub tokenizer_refs: TokenizerRefs,
    pub flag_policy: Vec<Flag>,
}

/// The summable part of a manifest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CorpusTotals {
    pub max_source_len: usize,
    pub max_asm_len: usize,
    pub source_line_count: usize,
    pub source_token_count: usize,
    pub asm_token_count: usize,
    pub function_count: usize,
}

impl CorpusTotals {
    /// Pairs without token counts contribute zero tokens.
    pub fn over<'a>(pairs: impl IntoIterator<Item = &'a FunctionPair>) -> Self {
        let mut t = CorpusTotals::default();
        for p in pairs {
            let s = p.src_tokens.unwrap_or(0);
            let a = p.asm_tokens.unwrap_or(0);
            t.max_source_len = t.max_source_len.max(s);
            t.max_asm_len = t.max_asm_len.max(a);
            t.source_line_count += p.source_text.lines().count();
            t.source_token_count += s;
            t.asm_token_count += a;
            t.function_count += 1;
        }
        t
    }

    pub fn token_ratio(&self) -> f64 {
        if self.source_token_count == 0 {
            0.0
        } else {
            self.asm_token_count as f64 / self.source_token_count as f64
        }
    }
}

impl DatasetManifest {
    pub fn totals(&self) -> CorpusTotals {
        CorpusTotals {
            max_source_len: self.max_source_len,
            max_asm_len: self.max_asm_len,
            source_line_count: self.source_line_count,
            source_token_count: self.source_token_count,
            asm_token_count: self.asm_token_count,
            function_count: self.function_count,
        }
    }

    /// Table-style one-row summary (header line plus value line).
    pub fn table(&self) -> String {
        format!(
            "{:<12} {:>10} {:>10} {:>10} {:>10} {:>12} {:>12} {:>12} {:>10}\n{:<12} {:>10} {:>10} {:>10} {:>10} {:>12} {:>12} {:>12} {:>10}\n",
            "dataset",
            "max_src",
            "max_asm",
            "src_vocab",
            "asm_vocab",
            "src_lines",
            "src_tokens",
            "asm_tokens",
            "functions",
            self.name,
            self.max_source_len,
            self.max_asm_len,
            self.source_vocab,
            self.asm_vocab,
            self.source_line_count,
            self.source_token_count,
            self.asm_token_count,
            self.function_count,
        )
    }
}

pub struct BuildConfig<'a> {
    pub name: &'a str,
    pub language: &'a str,
    pub caps: LengthCaps,
    pub flag_policy: &'a FlagPolicy,
    pub tokenizer_refs: TokenizerRefs,
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub pairs: Vec<FunctionPair>,
    pub manifest: DatasetManifest,
    /// Per-reason drop counts (`flag.<name>`, `length.source`,
    /// `length.asm`, `duplicate`).
    pub dropped: Diagnostics,
}

/// Counts tokens, filters by flags and length caps, and deduplicates. The
/// included pairs come back sorted by id.
pub fn build(pairs: Vec<FunctionPair>, source_tok: &SubwordModel, asm_tok: &SubwordModel, cfg: &BuildConfig<'_>) -> BuildOutput {
    use rayon::prelude::*;

    let mut pairs: Vec<FunctionPair> = pairs
        .into_par_iter()
        .map(|mut p| {
            p.src_tokens = Some(source_tok.encode_len(&p.source_text));
            p.asm_tokens = Some(asm_tok.encode_len(&p.asm_text));
            p
        })
        .collect();
    pairs.sort_by(|a, b| (&a.id, &a.provenance).cmp(&(&b.id, &b.provenance)));

    let mut dropped = Diagnostics::default();
    let mut included: Vec<FunctionPair> = Vec::with_capacity(pairs.len());
    for p in pairs {
        if let Some(flag) = cfg.flag_policy.first_excluded(&p.flags) {
            dropped.bump(&format!("flag.{flag}"));
        } else if p.src_tokens.unwrap_or(0) > cfg.caps.max_source {
            dropped.bump("length.source");
        } else if p.asm_tokens.unwrap_or(0) > cfg.caps.max_asm {
            dropped.bump("length.asm");
        } else if included.last().is_some_and(|q| q.id == p.id) {
            dropped.bump("duplicate");
        } else {
            included.push(p);
        }
    }

    let totals = CorpusTotals::over(&included);
    let manifest = DatasetManifest {
        name: cfg.name.to_owned(),
        language: cfg.language.to_owned(),
        max_source_len: totals.max_source_len,
        max_asm_len: totals.max_asm_len,
        source_len_cap: cfg.caps.max_source,
        asm_len_cap: cfg.caps.max_asm,
        source_vocab: source_tok.vocab_size(),
        asm_vocab: asm_tok.vocab_size(),
        tokenizer_mode: source_tok.mode(),
        source_line_count: totals.source_line_count,
        source_token_count: totals.source_token_count,
        asm_token_count: totals.asm_token_count,
        function_count: totals.function_count,
        token_ratio: totals.token_ratio(),
        split: None,
        tokenizer_refs: cfg.tokenizer_refs.clone(),
        flag_policy: cfg.flag_policy.exclude.iter().copied().collect(),
    };
    BuildOutput {
        pairs: included,
        manifest,
        dropped,
    }
}

/// Deterministic seeded partition into `(train, test)`, both sorted by id.
/// Pairs with equal ids are collapsed first. The test side gets
/// `round(n * test_fraction)` pairs, clamped to `1..n`.
pub fn split(pairs: Vec<FunctionPair>, test_fraction: f64, seed: u64) -> Result<(Vec<FunctionPair>, Vec<FunctionPair>), DatasetError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(test_fraction));
    }
    let mut pairs = pairs;
    pairs.sort_by(|a, b| (&a.id, &a.provenance).cmp(&(&b.id, &b.provenance)));
    pairs.dedup_by(|a, b| a.id == b.id);
    let n = pairs.len();
    if n < 2 {
        return Err(DatasetError::DegenerateSplit { total: n });
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    let mut test: Vec<FunctionPair> = pairs.drain(..n_test).collect();
    let mut train = pairs;
    train.sort_by(|a, b| a.id.cmp(&b.id));
    test.sort_by(|a, b| a.id.cmp(&b.id));
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub sample_ids: Vec<String>,
    pub max_len_in_batch: usize,
    /// `sample_ids.len() * max_len_in_batch`.
    pub padded_token_cost: usize,
    /// A single sample longer than the budget.
    pub over_long: bool,
}

/// Sorts samples by length (then id) and packs them greedily so that each
/// batch's padded cost stays within `max_tokens`. A sample that alone
/// exceeds the budget becomes a flagged singleton batch.
pub fn batch_by_tokens<S: AsRef<str>>(samples: &[(S, usize)], max_tokens: usize) -> Vec<Batch> {
    let max_tokens = max_tokens.max(1);
    let mut order: Vec<(usize, &str)> = samples.iter().map(|(id, len)| (*len, id.as_ref())).collect();
    order.sort_unstable();

    let mut batches = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let mut current_max = 0;
    let close = |ids: &mut Vec<String>, max_len: usize, batches: &mut Vec<Batch>| {
        if ids.is_empty() {
            return;
        }
        let ids = std::mem::take(ids);
        let cost = ids.len() * max_len;
        batches.push(Batch {
            over_long: cost > max_tokens,
            padded_token_cost: cost,
            max_len_in_batch: max_len,
            sample_ids: ids,
        });
    };
    for (len, id) in order {
        let new_max = current_max.max(len);
        if !current.is_empty() && (current.len() + 1) * new_max > max_tokens {
            close(&mut current, current_max, &mut batches);
            current_max = 0;
        }
        current_max = current_max.max(len);
        current.push(id.to_owned());
        if len > max_tokens {
            close(&mut current, current_max, &mut batches);
            current_max = 0;
        }
    }
    close(&mut current, current_max, &mut batches);
    batches
}

/// `(id, token length)` for one side; pairs without counts use zero.
pub fn lengths(pairs: &[FunctionPair], side: Side) -> Vec<(String, usize)> {
    pairs.iter().map(|p| (p.id.clone(), p.tokens(side).unwrap_or(0))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Binning {
    /// Bins of this width from 0 up to the smallest multiple covering the
    /// largest value.
    Width(f64),
    /// Explicit ascending edges; values outside go to the first/last bin.
    Edges(Vec<f64>),
}

impl Default for Binning {
    fn default() -> Self {
        Binning::Width(0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start,bin_end,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], c));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionStats {
    /// `(pair id, η)` in input order.
    pub per_sample: Vec<(String, f64)>,
    pub mean: f64,
    /// Population standard deviation.
    pub stddev: f64,
    pub histogram: Histogram,
    /// Pairs without a positive denominator token count.
    pub skipped: usize,
}

impl ContractionStats {
    pub fn per_sample_eta(&self) -> impl Iterator<Item = f64> + '_ {
        self.per_sample.iter().map(|(_, e)| *e)
    }
}

/// Which token count is the numerator of η.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaDirection {
    #[default]
    AsmOverSource,
    SourceOverAsm,
}

/// Sequence contraction per pair, measured from assembly to source.
pub fn contraction_stats(pairs: &[FunctionPair], binning: &Binning) -> ContractionStats {
    contraction_stats_directed(pairs, binning, EtaDirection::AsmOverSource)
}

pub fn contraction_stats_directed(pairs: &[FunctionPair], binning: &Binning, direction: EtaDirection) -> ContractionStats {
    let mut per_sample = Vec::with_capacity(pairs.len());
    let mut skipped = 0;
    for p in pairs {
        let (num, den) = match direction {
            EtaDirection::AsmOverSource => (p.asm_tokens, p.src_tokens),
            EtaDirection::SourceOverAsm => (p.src_tokens, p.asm_tokens),
        };
        match (num, den) {
            (Some(a), Some(s)) if s > 0 => per_sample.push((p.id.clone(), a as f64 / s as f64)),
            _ => skipped += 1,
        }
    }
    let n = per_sample.len() as f64;
    let (mean, stddev) = if per_sample.is_empty() {
        (0.0, 0.0)
    } else {
        let mean = per_sample.iter().map(|(_, e)| e).sum::<f64>() / n;
        let var = per_sample.iter().map(|(_, e)| (e - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    let values: Vec<f64> = per_sample.iter().map(|(_, e)| *e).collect();
    ContractionStats {
        histogram: histogram(&values, binning),
        per_sample,
        mean,
        stddev,
        skipped,
    }
}

fn histogram(values: &[f64], binning: &Binning) -> Histogram {
    let edges = match binning {
        Binning::Edges(e) if e.len() >= 2 => e.clone(),
        Binning::Edges(_) => vec![0.0, 1.0],
        Binning::Width(w) => {
            let w = if *w > 0.0 { *w } else { 0.5 };
            let max = values.iter().copied().fold(0.0f64, f64::max);
            let bins = ((max / w).floor() as usize + 1).max(1);
            (0..=bins).map(|i| i as f64 * w).collect()
        }
    };
    let nbins = edges.len() - 1;
    let mut counts = vec![0u64; nbins];
    for &v in values {
        let idx = edges[1..nbins].partition_point(|&e| e <= v);
        counts[idx] += 1;
    }
    Histogram { edges, counts }
}

/// A dataset as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<FunctionPair>,
    pub test: Vec<FunctionPair>,
}

pub fn write_jsonl(path: &Path, pairs: &[FunctionPair]) -> Result<(), DatasetError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    for p in pairs {
        let line = serde_json::to_string(p).expect("pairs serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<FunctionPair>, DatasetError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_pair_record(&line).map_err(|message| DatasetError::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?);
    }
    Ok(out)
}

/// Decodes one JSONL pair record.
pub fn parse_pair_record(line: &str) -> Result<FunctionPair, String> {
    serde_json::from_str(line).map_err(|e| e.to_string())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest, String> {
    serde_json::from_str(text).map_err(|e| e.to_string())
}

impl Dataset {
    pub fn export(&self, dir: &Path) -> Result<(), DatasetError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_jsonl(&dir.join(TRAIN_FILE), &self.train)?;
        write_jsonl(&dir.join(TEST_FILE), &self.test)?;
        write_json(&dir.join(MANIFEST_FILE), &self.manifest)
    }

    pub fn import(dir: &Path) -> Result<Dataset, DatasetError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest = parse_manifest(&text).map_err(|message| DatasetError::Manifest { path, message })?;
        Ok(Dataset {
            manifest,
            train: read_jsonl(&dir.join(TRAIN_FILE))?,
            test: read_jsonl(&dir.join(TEST_FILE))?,
        })
    }

    pub fn all_pairs(&self) -> impl Iterator<Item = &FunctionPair> {
        self.train.iter().chain(&self.test)
    }
}
