//! File-level stages: extract, train tokenizers, build, stats, eval and
//! serve. Each stage reads and writes only the documented on-disk formats.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::{extract_functions, parse_asm_bytes, resolve_source, ResolveError};
use crate::backend::{
    build_index, random_control, serve, Backend, BackendError, EchoBackend, EmptyBackend, KnnBackend, ProcessBackend,
    ServeStats,
};
use crate::dataset::{
    self, batch_by_tokens, contraction_stats_directed, lengths, Batch, Binning, BuildConfig, Dataset, DatasetError, EtaDirection, FlagPolicy,
    FunctionPair, LengthCaps, PairFlags, Provenance, SplitSpec, TokenizerRefs,
};
use crate::lang::{preprocess, LanguageProfile};
use crate::metrics::{evaluate, Clock, EvalReport, MetricsError};
use crate::tokenizer::{train, Side, SubwordModel, TokenizerError, TokenizerMode};
use crate::Diagnostics;

pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const EXTRACT_DIAGNOSTICS_FILE: &str = "extract.diagnostics.json";
pub const SOURCE_TOKENIZER_FILE: &str = "tokenizer.source.json";
pub const ASM_TOKENIZER_FILE: &str = "tokenizer.asm.json";
pub const BATCHES_FILE: &str = "batches.train.json";
pub const DROPPED_FILE: &str = "dropped.json";
pub const ETA_HISTOGRAM_FILE: &str = "eta_histogram.csv";
pub const CONTRACTION_FILE: &str = "contraction.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TABLE_FILE: &str = "report.txt";
pub const THROUGHPUT_FILE: &str = "throughput.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no assembly files under {0}")]
    NoInput(PathBuf),
    #[error("no function pairs could be extracted under {0}")]
    NothingExtracted(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Walk(#[from] walkdir::Error),
    #[error("{path}: {source}")]
    Tokenizer { path: PathBuf, source: TokenizerError },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid worker pool: {0}")]
    Pool(String),
    #[error("unknown backend spec {0:?}")]
    BackendSpec(String),
}

impl PipelineError {
    /// Short stable identifier for machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::NoInput(_) => "no_input",
            PipelineError::NothingExtracted(_) => "nothing_extracted",
            PipelineError::Io { .. } => "io",
            PipelineError::Walk(_) => "walk",
            PipelineError::Tokenizer { .. } => "tokenizer",
            PipelineError::Dataset(_) => "dataset",
            PipelineError::Backend(_) => "backend",
            PipelineError::Metrics(_) => "metrics",
            PipelineError::Pool(_) => "pool",
            PipelineError::BackendSpec(_) => "backend_spec",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub struct ExtractOptions<'a> {
    pub asm_root: &'a Path,
    pub source_root: &'a Path,
    pub profile: &'a LanguageProfile,
    pub workers: usize,
    pub keep_directives: bool,
}

#[derive(Debug, Clone)]
pub struct ExtractOutcome {
    /// Pairs in (asm path, file order).
    pub pairs: Vec<FunctionPair>,
    pub diagnostics: Diagnostics,
}

/// All `.s` files under `root`, sorted by path.
pub fn asm_files(root: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry?;
        if entry.file_type().is_file() && entry.path().extension().is_some_and(|e| e == "s") {
            files.push(entry.into_path());
        }
    }
    Ok(files)
}

fn slash_path(path: &Path, root: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn resolve_reason(e: &ResolveError) -> &'static str {
    match e {
        ResolveError::NoAttribution => "resolve.no_attribution",
        ResolveError::MissingSourceFile { .. } => "resolve.missing_source",
        ResolveError::SpanOutOfRange { .. } => "resolve.span_out_of_range",
        ResolveError::Io { .. } => "resolve.io",
    }
}

/// Extracts, resolves and preprocesses every function of one assembly file.
pub fn extract_file(path: &Path, opts: &ExtractOptions<'_>) -> Result<ExtractOutcome, PipelineError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let parsed = parse_asm_bytes(&bytes);
    let extraction = extract_functions(&parsed.lines);
    let mut diagnostics = extraction.diagnostics();
    diagnostics.add("files", 1);
    diagnostics.add("malformed_lines", parsed.malformed as u64);
    let asm_path = slash_path(path, opts.asm_root);
    let language = opts.profile.name.as_str();
    let mut pairs = Vec::new();
    for f in &extraction.functions {
        let asm_text = f.asm_text(opts.keep_directives);
        let mut flags = PairFlags {
            perforated: f.perforated,
            multi_file: f.multi_file,
            zero_loc: f.zero_loc(),
            suspect: false,
        };
        let mut source_text = String::new();
        let mut span = f.line_span;
        if !flags.zero_loc {
            let ext = Path::new(&f.source_file).extension().and_then(|e| e.to_str()).unwrap_or("");
            if !opts.profile.matches_extension(ext) {
                diagnostics.bump("language_mismatch");
                continue;
            }
            match resolve_source(f, opts.source_root) {
                Ok(resolved) => {
                    span = Some(resolved.span);
                    let pre = preprocess(&resolved.text, opts.profile);
                    flags.suspect = pre.suspect();
                    source_text = pre.text;
                }
                Err(e) => {
                    diagnostics.bump(resolve_reason(&e));
                    continue;
                }
            }
        }
        pairs.push(FunctionPair::new(
            language,
            asm_text,
            source_text,
            Provenance {
                asm_path: asm_path.clone(),
                function_label: f.label.clone(),
                source_path: f.source_file.clone(),
                line_span: span,
            },
            flags,
        ));
    }
    diagnostics.add("pairs", pairs.len() as u64);
    Ok(ExtractOutcome { pairs, diagnostics })
}

/// Runs [`extract_file`] over the tree on `opts.workers` threads. Output
/// order and content do not depend on the worker count.
pub fn extract_tree(opts: &ExtractOptions<'_>) -> Result<ExtractOutcome, PipelineError> {
    let files = asm_files(opts.asm_root)?;
    if files.is_empty() {
        return Err(PipelineError::NoInput(opts.asm_root.to_path_buf()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let results: Vec<Result<ExtractOutcome, PipelineError>> =
        pool.install(|| files.par_iter().map(|p| extract_file(p, opts)).collect());
    let mut pairs = Vec::new();
    let mut diagnostics = Diagnostics::default();
    for r in results {
        let r = r?;
        pairs.extend(r.pairs);
        diagnostics.merge(&r.diagnostics);
    }
    Ok(ExtractOutcome { pairs, diagnostics })
}

/// `extract` stage: writes `pairs.jsonl` and the diagnostics summary to
/// `out_dir`. Fails only when nothing at all could be extracted.
pub fn run_extract(opts: &ExtractOptions<'_>, out_dir: &Path) -> Result<ExtractOutcome, PipelineError> {
    let outcome = extract_tree(opts)?;
    if outcome.pairs.is_empty() {
        return Err(PipelineError::NothingExtracted(opts.asm_root.to_path_buf()));
    }
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    dataset::write_jsonl(&out_dir.join(PAIRS_FILE), &outcome.pairs)?;
    dataset::write_json(&out_dir.join(EXTRACT_DIAGNOSTICS_FILE), &outcome.diagnostics)?;
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerSpec {
    pub mode: TokenizerMode,
    pub source_vocab: usize,
    pub asm_vocab: usize,
}

fn load_model(path: &Path) -> Result<SubwordModel, PipelineError> {
    SubwordModel::load(path).map_err(|source| PipelineError::Tokenizer {
        path: path.to_path_buf(),
        source,
    })
}

fn save_model(model: &SubwordModel, path: &Path) -> Result<(), PipelineError> {
    model.save(path).map_err(|source| PipelineError::Tokenizer {
        path: path.to_path_buf(),
        source,
    })
}

/// `train-tokenizers` stage: trains the source and assembly models on the
/// pairs in `work_dir/pairs.jsonl` that the flag policy keeps.
pub fn run_train_tokenizers(
    work_dir: &Path,
    spec: &TokenizerSpec,
    policy: &FlagPolicy,
) -> Result<(SubwordModel, SubwordModel), PipelineError> {
    let pairs = dataset::read_jsonl(&work_dir.join(PAIRS_FILE))?;
    let kept: Vec<&FunctionPair> = pairs.iter().filter(|p| policy.first_excluded(&p.flags).is_none()).collect();
    let train_side = |side: Side, vocab: usize, path: PathBuf| -> Result<SubwordModel, PipelineError> {
        let texts = kept.iter().map(|p| match side {
            Side::Source => p.source_text.as_str(),
            Side::Asm => p.asm_text.as_str(),
        });
        let model = train(texts, vocab, spec.mode, side).map_err(|source| PipelineError::Tokenizer {
            path: path.clone(),
            source,
        })?;
        save_model(&model, &path)?;
        Ok(model)
    };
    let src = train_side(Side::Source, spec.source_vocab, work_dir.join(SOURCE_TOKENIZER_FILE))?;
    let asm = train_side(Side::Asm, spec.asm_vocab, work_dir.join(ASM_TOKENIZER_FILE))?;
    Ok((src, asm))
}

pub struct BuildOptions<'a> {
    pub name: &'a str,
    pub language: &'a str,
    pub caps: LengthCaps,
    pub flag_policy: &'a FlagPolicy,
    pub test_fraction: f64,
    pub seed: u64,
    pub max_tokens: usize,
    pub batch_side: Side,
}

#[derive(Debug, Clone)]
pub struct BuildSummary {
    pub dataset: Dataset,
    pub dropped: Diagnostics,
    pub batches: Vec<Batch>,
}

/// `build` stage: filters, splits and batches `work_dir/pairs.jsonl` into
/// `dataset_dir`, copying both tokenizer files alongside.
pub fn run_build(work_dir: &Path, dataset_dir: &Path, opts: &BuildOptions<'_>) -> Result<BuildSummary, PipelineError> {
    let pairs = dataset::read_jsonl(&work_dir.join(PAIRS_FILE))?;
    let src_tok = load_model(&work_dir.join(SOURCE_TOKENIZER_FILE))?;
    let asm_tok = load_model(&work_dir.join(ASM_TOKENIZER_FILE))?;
    let cfg = BuildConfig {
        name: opts.name,
        language: opts.language,
        caps: opts.caps,
        flag_policy: opts.flag_policy,
        tokenizer_refs: TokenizerRefs {
            source: SOURCE_TOKENIZER_FILE.to_owned(),
            asm: ASM_TOKENIZER_FILE.to_owned(),
        },
    };
    let built = dataset::build(pairs, &src_tok, &asm_tok, &cfg);
    let mut manifest = built.manifest;
    let (train, test) = dataset::split(built.pairs, opts.test_fraction, opts.seed)?;
    manifest.split = Some(SplitSpec {
        test_fraction: opts.test_fraction,
        seed: opts.seed,
        train_count: train.len(),
        test_count: test.len(),
    });
    let batches = batch_by_tokens(&lengths(&train, opts.batch_side), opts.max_tokens);
    let ds = Dataset { manifest, train, test };
    ds.export(dataset_dir)?;
    for name in [SOURCE_TOKENIZER_FILE, ASM_TOKENIZER_FILE] {
        let to = dataset_dir.join(name);
        std::fs::copy(work_dir.join(name), &to).map_err(io_err(&to))?;
    }
    dataset::write_json(&dataset_dir.join(BATCHES_FILE), &batches)?;
    dataset::write_json(&dataset_dir.join(DROPPED_FILE), &built.dropped)?;
    Ok(BuildSummary {
        dataset: ds,
        dropped: built.dropped,
        batches,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionSummary {
    pub samples: usize,
    pub skipped: usize,
    pub mean: f64,
    pub stddev: f64,
    pub token_ratio: f64,
    pub direction: EtaDirection,
}

/// `stats` stage: η over every pair of the dataset, written as a CSV
/// histogram plus a JSON summary. Returns the manifest table and summary.
pub fn run_stats(
    dataset_dir: &Path,
    binning: &Binning,
    direction: EtaDirection,
) -> Result<(String, ContractionSummary), PipelineError> {
    let ds = Dataset::import(dataset_dir)?;
    let pairs: Vec<FunctionPair> = ds.all_pairs().cloned().collect();
    let stats = contraction_stats_directed(&pairs, binning, direction);
    let summary = ContractionSummary {
        samples: stats.per_sample.len(),
        skipped: stats.skipped,
        mean: stats.mean,
        stddev: stats.stddev,
        token_ratio: ds.manifest.token_ratio,
        direction,
    };
    let csv_path = dataset_dir.join(ETA_HISTOGRAM_FILE);
    std::fs::write(&csv_path, stats.histogram.to_csv()).map_err(io_err(&csv_path))?;
    dataset::write_json(&dataset_dir.join(CONTRACTION_FILE), &summary)?;
    Ok((ds.manifest.table(), summary))
}

/// Which backend `eval` should talk to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Knn,
    Random(u64),
    Echo,
    Empty,
    Process { program: String, args: Vec<String> },
}

impl BackendSpec {
    /// Parses `knn`, `random:<seed>`, `echo`, `empty` or
    /// `process:<program> [args...]`.
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let bad = || PipelineError::BackendSpec(text.to_owned());
        match text {
            "knn" => return Ok(BackendSpec::Knn),
            "echo" => return Ok(BackendSpec::Echo),
            "empty" => return Ok(BackendSpec::Empty),
            _ => {}
        }
        if let Some(seed) = text.strip_prefix("random:") {
            return seed.parse().map(BackendSpec::Random).map_err(|_| bad());
        }
        if let Some(cmd) = text.strip_prefix("process:") {
            let mut words = cmd.split_whitespace().map(str::to_owned);
            let program = words.next().ok_or_else(bad)?;
            return Ok(BackendSpec::Process {
                program,
                args: words.collect(),
            });
        }
        Err(bad())
    }

    /// Short name usable as a directory component.
    pub fn slug(&self) -> String {
        match self {
            BackendSpec::Knn => "knn".into(),
            BackendSpec::Random(seed) => format!("random-{seed}"),
            BackendSpec::Echo => "echo".into(),
            BackendSpec::Empty => "empty".into(),
            BackendSpec::Process { .. } => "process".into(),
        }
    }
}

/// `eval` stage: scores `spec` on the dataset's test split and writes the
/// report, its table, and the timing figures to `report_dir`.
pub fn run_eval(dataset_dir: &Path, spec: &BackendSpec, report_dir: &Path, clock: &dyn Clock) -> Result<EvalReport, PipelineError> {
    let ds = Dataset::import(dataset_dir)?;
    let src_tok = load_model(&dataset_dir.join(&ds.manifest.tokenizer_refs.source))?;
    let asm_tok = load_model(&dataset_dir.join(&ds.manifest.tokenizer_refs.asm))?;
    let index;
    let mut backend: Box<dyn Backend + '_> = match spec {
        BackendSpec::Knn => {
            index = build_index(&ds.train, &asm_tok, dataset::MANIFEST_FILE)?;
            Box::new(KnnBackend {
                index: &index,
                asm_tok: &asm_tok,
            })
        }
        BackendSpec::Random(seed) => Box::new(random_control(&ds.train, *seed)?),
        BackendSpec::Echo => Box::new(EchoBackend::for_test_set(&ds.test)),
        BackendSpec::Empty => Box::new(EmptyBackend),
        BackendSpec::Process { program, args } => Box::new(ProcessBackend::spawn(program, args)?),
    };
    let report = evaluate(backend.as_mut(), &ds.test, &src_tok, &ds.manifest.tokenizer_refs.source, clock)?;
    std::fs::create_dir_all(report_dir).map_err(io_err(report_dir))?;
    dataset::write_json(&report_dir.join(REPORT_FILE), &report)?;
    let table = report_dir.join(REPORT_TABLE_FILE);
    std::fs::write(&table, report.table()).map_err(io_err(&table))?;
    dataset::write_json(&report_dir.join(THROUGHPUT_FILE), &report.timing)?;
    Ok(report)
}

/// `baseline-serve` stage: answers protocol requests from `input` with the
/// kNN baseline over the dataset's training split.
pub fn run_baseline_serve<R: BufRead, W: Write>(dataset_dir: &Path, input: R, output: W) -> Result<ServeStats, PipelineError> {
    let ds = Dataset::import(dataset_dir)?;
    let asm_tok = load_model(&dataset_dir.join(&ds.manifest.tokenizer_refs.asm))?;
    let index = build_index(&ds.train, &asm_tok, dataset::MANIFEST_FILE)?;
    let mut backend = KnnBackend {
        index: &index,
        asm_tok: &asm_tok,
    };
    serve(&mut backend, input, output).map_err(|source| PipelineError::Io {
        path: PathBuf::from("<stdio>"),
        source,
    })
}

/// Per-file byte contents of a directory tree, keyed by relative path.
/// Used to compare two pipeline runs.
pub fn snapshot_dir(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, PipelineError> {
    let mut out = BTreeMap::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry?;
        if entry.file_type().is_file() {
            let bytes = std::fs::read(entry.path()).map_err(io_err(entry.path()))?;
            out.insert(slash_path(entry.path(), root), bytes);
        }
    }
    Ok(out)
}
