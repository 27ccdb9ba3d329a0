mod config;

use std::fmt::Display;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use decompkit::dataset::{Binning, EtaDirection, Flag};
use decompkit::metrics::SystemClock;
use decompkit::Diagnostics;
use decompkit::pipeline::{self, BackendSpec, BuildOptions, ExtractOptions, PipelineError, TokenizerSpec};
use decompkit::tokenizer::{Side, TokenizerMode};
use serde::de::{DeserializeOwned, IntoDeserializer};

use config::{ConfigError, PipelineConfig, Settings};

#[derive(Parser)]
#[command(name = "decompkit", version, about = "Build assembly/source corpora and evaluate decompilation backends")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract function pairs from a tree of `.s` files into the work directory.
    Extract {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: ExtractArgs,
    },
    /// Train the source and assembly tokenizers on the extracted pairs.
    TrainTokenizers {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: TokenizerArgs,
    },
    /// Filter, split and batch the pairs into a dataset directory.
    Build {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: BuildArgs,
    },
    /// Print the manifest table and write the η histogram.
    Stats {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: StatsArgs,
    },
    /// Score a backend on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: EvalArgs,
    },
    /// Answer protocol requests on stdin/stdout with the kNN baseline.
    BaselineServe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    language: Option<String>,
    /// Named dataset preset such as C-S or OCaml-L.
    #[arg(long)]
    preset: Option<String>,
    /// Extra language profile file; repeatable.
    #[arg(long = "profile")]
    profiles: Vec<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    asm_root: Option<PathBuf>,
    #[arg(long)]
    source_root: Option<PathBuf>,
    #[arg(long)]
    work_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Keep directive lines in the pair's assembly text.
    #[arg(long)]
    keep_directives: bool,
}

#[derive(Args)]
struct TokenizerArgs {
    #[arg(long)]
    work_dir: Option<PathBuf>,
    /// `bpe` or `char`.
    #[arg(long, value_parser = parse_word::<TokenizerMode>)]
    tokenizer_mode: Option<TokenizerMode>,
    #[arg(long)]
    source_vocab: Option<usize>,
    #[arg(long)]
    asm_vocab: Option<usize>,
    /// Comma-separated flags whose pairs are left out, or `none`.
    #[arg(long, value_parser = parse_flags)]
    exclude_flags: Option<FlagList>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    work_dir: Option<PathBuf>,
    #[arg(long)]
    dataset_dir: Option<PathBuf>,
    /// Dataset name recorded in the manifest.
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    max_source_len: Option<usize>,
    #[arg(long)]
    max_asm_len: Option<usize>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Token budget per training batch.
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Which side's length drives batching: `source` or `asm`.
    #[arg(long, value_parser = parse_word::<Side>)]
    batch_side: Option<Side>,
    #[arg(long, value_parser = parse_flags)]
    exclude_flags: Option<FlagList>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    dataset_dir: Option<PathBuf>,
    #[arg(long)]
    bin_width: Option<f64>,
    /// `asm_over_source` or `source_over_asm`.
    #[arg(long, value_parser = parse_word::<EtaDirection>)]
    eta_direction: Option<EtaDirection>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset_dir: Option<PathBuf>,
    /// `knn`, `random:<seed>`, `echo`, `empty` or `process:<command> [args]`.
    #[arg(long, default_value = "knn")]
    backend: String,
    /// Defaults to `<dataset_dir>/eval/<backend>`.
    #[arg(long)]
    report_dir: Option<PathBuf>,
}

#[derive(Clone)]
struct FlagList(Vec<Flag>);

fn parse_word<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    T::deserialize(s.into_deserializer()).map_err(|e: serde::de::value::Error| e.to_string())
}

fn parse_flags(s: &str) -> Result<FlagList, String> {
    if s == "none" {
        return Ok(FlagList(Vec::new()));
    }
    s.split(',')
        .map(|w| Flag::parse(w.trim()).ok_or_else(|| format!("unknown flag {w:?}")))
        .collect::<Result<_, _>>()
        .map(FlagList)
}

impl Common {
    fn settings(&self) -> Settings {
        Settings {
            language: self.language.clone(),
            preset: self.preset.clone(),
            profiles: (!self.profiles.is_empty()).then(|| self.profiles.clone()),
            ..Settings::default()
        }
    }
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::Extract { .. } => "extract",
            Command::TrainTokenizers { .. } => "train-tokenizers",
            Command::Build { .. } => "build",
            Command::Stats { .. } => "stats",
            Command::Eval { .. } => "eval",
            Command::BaselineServe { .. } => "baseline-serve",
        }
    }

    fn layers(&self) -> Result<(Settings, Settings), ConfigError> {
        let (common, own) = match self {
            Command::Extract { common, args } => (
                common,
                Settings {
                    asm_root: args.asm_root.clone(),
                    source_root: args.source_root.clone(),
                    work_dir: args.work_dir.clone(),
                    workers: args.workers,
                    keep_directives: args.keep_directives.then_some(true),
                    ..Settings::default()
                },
            ),
            Command::TrainTokenizers { common, args } => (
                common,
                Settings {
                    work_dir: args.work_dir.clone(),
                    tokenizer_mode: args.tokenizer_mode,
                    source_vocab: args.source_vocab,
                    asm_vocab: args.asm_vocab,
                    exclude_flags: args.exclude_flags.clone().map(|f| f.0),
                    ..Settings::default()
                },
            ),
            Command::Build { common, args } => (
                common,
                Settings {
                    work_dir: args.work_dir.clone(),
                    dataset_dir: args.dataset_dir.clone(),
                    name: args.name.clone(),
                    max_source_len: args.max_source_len,
                    max_asm_len: args.max_asm_len,
                    test_fraction: args.test_fraction,
                    seed: args.seed,
                    max_tokens: args.max_tokens,
                    batch_side: args.batch_side,
                    exclude_flags: args.exclude_flags.clone().map(|f| f.0),
                    ..Settings::default()
                },
            ),
            Command::Stats { common, args } => (
                common,
                Settings {
                    dataset_dir: args.dataset_dir.clone(),
                    bin_width: args.bin_width,
                    eta_direction: args.eta_direction,
                    ..Settings::default()
                },
            ),
            Command::Eval { common, args } => (
                common,
                Settings {
                    dataset_dir: args.dataset_dir.clone(),
                    report_dir: args.report_dir.clone(),
                    ..Settings::default()
                },
            ),
            Command::BaselineServe { common, dataset_dir } => (
                common,
                Settings {
                    dataset_dir: dataset_dir.clone(),
                    ..Settings::default()
                },
            ),
        };
        let file = match &common.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        Ok((own.over(common.settings()), file))
    }
}

enum Failure {
    Config(ConfigError),
    Pipeline(PipelineError),
    Missing(&'static str),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Pipeline(e)
    }
}

/// One `key=value` log line on stderr. Values with spaces or quotes are
/// written as quoted strings.
fn log(stage: &str, fields: &[(&str, &dyn Display)]) {
    let mut line = format!("stage={stage}");
    for (k, v) in fields {
        line.push(' ');
        line.push_str(k);
        line.push('=');
        line.push_str(&quote(&v.to_string()));
    }
    eprintln!("{line}");
}

/// A diagnostics counter set as one log line, keys prefixed.
fn log_counts(stage: &str, prefix: &str, counts: &Diagnostics) {
    if counts.is_empty() {
        return;
    }
    let keys: Vec<String> = counts.iter().map(|(k, _)| format!("{prefix}{k}")).collect();
    let values: Vec<u64> = counts.iter().map(|(_, v)| v).collect();
    let fields: Vec<(&str, &dyn Display)> = keys.iter().zip(&values).map(|(k, v)| (k.as_str(), v as &dyn Display)).collect();
    log(stage, &fields);
}

fn quote(v: &str) -> String {
    if v.is_empty() || v.contains(|c: char| c.is_whitespace() || c == '"' || c == '=') {
        format!("{v:?}")
    } else {
        v.to_owned()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stage = cli.command.stage();
    let (flags, file) = match cli.command.layers() {
        Ok(l) => l,
        Err(e) => return fail(stage, &Failure::Config(e)),
    };
    let cfg = match config::resolve(flags, file) {
        Ok(c) => c,
        Err(e) => return fail(stage, &Failure::Config(e)),
    };
    match run(&cli.command, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(stage, &e),
    }
}

fn fail(stage: &str, e: &Failure) -> ExitCode {
    let (reason, detail) = match e {
        Failure::Config(e) => ("config", e.to_string()),
        Failure::Pipeline(e) => (e.code(), e.to_string()),
        Failure::Missing(key) => ("config", format!("{key} is required for this stage")),
    };
    eprintln!("error: stage={stage} reason={reason} detail={}", quote(&detail.replace('\n', " ")));
    ExitCode::from(if matches!(e, Failure::Pipeline(_)) { 1 } else { 2 })
}

fn run(cmd: &Command, cfg: &PipelineConfig) -> Result<(), Failure> {
    match cmd {
        Command::Extract { .. } => {
            let asm_root = cfg.asm_root.as_deref().ok_or(Failure::Missing("asm_root"))?;
            let source_root = cfg.source_root.as_deref().ok_or(Failure::Missing("source_root"))?;
            let opts = ExtractOptions {
                asm_root,
                source_root,
                profile: cfg.profile(),
                workers: cfg.workers,
                keep_directives: cfg.keep_directives,
            };
            let out = pipeline::run_extract(&opts, &cfg.work_dir)?;
            log(
                "extract",
                &[
                    ("language", &cfg.language),
                    ("work_dir", &cfg.work_dir.display()),
                    ("pairs", &out.pairs.len()),
                ],
            );
            log_counts("extract", "", &out.diagnostics);
        }
        Command::TrainTokenizers { .. } => {
            let spec = TokenizerSpec {
                mode: cfg.tokenizer_mode,
                source_vocab: cfg.source_vocab,
                asm_vocab: cfg.asm_vocab,
            };
            let (src, asm) = pipeline::run_train_tokenizers(&cfg.work_dir, &spec, &cfg.flag_policy)?;
            log(
                "train-tokenizers",
                &[
                    ("mode", &mode_word(cfg.tokenizer_mode)),
                    ("source_vocab", &src.vocab_size()),
                    ("asm_vocab", &asm.vocab_size()),
                ],
            );
        }
        Command::Build { .. } => {
            let opts = BuildOptions {
                name: &cfg.name,
                language: &cfg.language,
                caps: cfg.caps,
                flag_policy: &cfg.flag_policy,
                test_fraction: cfg.test_fraction,
                seed: cfg.seed,
                max_tokens: cfg.max_tokens,
                batch_side: cfg.batch_side,
            };
            let out = pipeline::run_build(&cfg.work_dir, &cfg.dataset_dir, &opts)?;
            let m = &out.dataset.manifest;
            let over_long = out.batches.iter().filter(|b| b.over_long).count();
            log(
                "build",
                &[
                    ("name", &m.name),
                    ("functions", &m.function_count),
                    ("train", &out.dataset.train.len()),
                    ("test", &out.dataset.test.len()),
                    ("batches", &out.batches.len()),
                    ("over_long_batches", &over_long),
                    ("dataset_dir", &cfg.dataset_dir.display()),
                ],
            );
            log_counts("build", "dropped.", &out.dropped);
        }
        Command::Stats { .. } => {
            let (table, summary) = pipeline::run_stats(&cfg.dataset_dir, &Binning::Width(cfg.bin_width), cfg.eta_direction)?;
            print!("{table}");
            let csv = std::fs::read_to_string(cfg.dataset_dir.join(pipeline::ETA_HISTOGRAM_FILE)).unwrap_or_default();
            print!("{csv}");
            log(
                "stats",
                &[
                    ("direction", &direction_word(summary.direction)),
                    ("samples", &summary.samples),
                    ("skipped", &summary.skipped),
                    ("eta_mean", &format!("{:.4}", summary.mean)),
                    ("eta_stddev", &format!("{:.4}", summary.stddev)),
                    ("token_ratio", &format!("{:.4}", summary.token_ratio)),
                ],
            );
        }
        Command::Eval { args, .. } => {
            let spec = BackendSpec::parse(&args.backend)?;
            let report_dir = cfg
                .report_dir
                .clone()
                .unwrap_or_else(|| cfg.dataset_dir.join("eval").join(spec.slug()));
            let report = pipeline::run_eval(&cfg.dataset_dir, &spec, &report_dir, &SystemClock::new())?;
            print!("{}", report.table());
            log(
                "eval",
                &[
                    ("backend", &report.backend),
                    ("aed", &format!("{:.4}", report.aed)),
                    ("samples", &report.sample_count),
                    ("skipped", &report.skipped.len()),
                    ("report_dir", &report_dir.display()),
                ],
            );
        }
        Command::BaselineServe { .. } => {
            let stdin = std::io::stdin().lock();
            let stdout = std::io::stdout().lock();
            let stats = serve_stdio(cfg, stdin, stdout)?;
            log("baseline-serve", &[("answered", &stats.answered), ("errors", &stats.errors)]);
        }
    }
    Ok(())
}

fn serve_stdio(cfg: &PipelineConfig, input: impl BufRead, output: impl Write) -> Result<decompkit::backend::ServeStats, Failure> {
    log("baseline-serve", &[("dataset_dir", &cfg.dataset_dir.display()), ("status", &"ready")]);
    Ok(pipeline::run_baseline_serve(&cfg.dataset_dir, input, output)?)
}

fn mode_word(m: TokenizerMode) -> &'static str {
    match m {
        TokenizerMode::Bpe => "bpe",
        TokenizerMode::Char => "char",
    }
}

fn direction_word(d: EtaDirection) -> &'static str {
    match d {
        EtaDirection::AsmOverSource => "asm_over_source",
        EtaDirection::SourceOverAsm => "source_over_asm",
    }
}
