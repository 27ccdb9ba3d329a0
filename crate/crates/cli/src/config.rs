//! Pipeline settings and how they are layered.
//!
//! Every setting is optional at each layer. The resolved value comes from the
//! first layer that sets it, in the order: command-line flags, the TOML config
//! file, the named (or per-language) preset, and finally built-in defaults.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use decompkit::dataset::{EtaDirection, Flag, FlagPolicy, LengthCaps};
use decompkit::lang::{builtin_profiles, LanguageProfile};
use decompkit::tokenizer::{Side, TokenizerMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// One layer of settings. Also the schema of the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub language: Option<String>,
    pub preset: Option<String>,
    pub name: Option<String>,
    pub asm_root: Option<PathBuf>,
    pub source_root: Option<PathBuf>,
    pub work_dir: Option<PathBuf>,
    pub dataset_dir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub keep_directives: Option<bool>,
    pub tokenizer_mode: Option<TokenizerMode>,
    pub source_vocab: Option<usize>,
    pub asm_vocab: Option<usize>,
    pub max_source_len: Option<usize>,
    pub max_asm_len: Option<usize>,
    pub test_fraction: Option<f64>,
    pub seed: Option<u64>,
    pub max_tokens: Option<usize>,
    pub batch_side: Option<Side>,
    pub exclude_flags: Option<Vec<Flag>>,
    pub bin_width: Option<f64>,
    pub eta_direction: Option<EtaDirection>,
    /// Extra language profile files, one TOML document each.
    pub profiles: Option<Vec<PathBuf>>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr, $($f:ident),* $(,)?) => {
        Settings { $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl Settings {
    /// Fields set in `self` win; the rest come from `lower`.
    pub fn over(self, lower: Settings) -> Settings {
        overlay!(
            self,
            lower,
            language,
            preset,
            name,
            asm_root,
            source_root,
            work_dir,
            dataset_dir,
            report_dir,
            workers,
            keep_directives,
            tokenizer_mode,
            source_vocab,
            asm_vocab,
            max_source_len,
            max_asm_len,
            test_fraction,
            seed,
            max_tokens,
            batch_side,
            exclude_flags,
            bin_width,
            eta_direction,
            profiles,
        )
    }

    pub fn from_toml(text: &str) -> Result<Settings, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(format!("config: {}", e.message())))
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Settings, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut s = Settings::from_toml(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        rebase(&mut s.asm_root);
        rebase(&mut s.source_root);
        rebase(&mut s.work_dir);
        rebase(&mut s.dataset_dir);
        rebase(&mut s.report_dir);
        if let Some(files) = &mut s.profiles {
            for f in files.iter_mut() {
                if f.is_relative() {
                    *f = base.join(&*f);
                }
            }
        }
        Ok(s)
    }
}

/// Dataset parameter rows used as presets: name, language, max source
/// length, max asm length, source vocab, asm vocab.
pub const PRESETS: [(&str, &str, usize, usize, usize, usize); 6] = [
    ("C-S", "c", 271, 1776, 7104, 4040),
    ("Go-S", "go", 254, 6350, 8688, 4848),
    ("Fortran-S", "fortran", 398, 5408, 8352, 3056),
    ("OCaml-S", "ocaml", 192, 5939, 23184, 17288),
    ("C-L", "c", 271, 1776, 11176, 11608),
    ("OCaml-L", "ocaml", 271, 1776, 10960, 11680),
];

pub fn preset(name: &str) -> Option<Settings> {
    PRESETS
        .iter()
        .find(|p| p.0.eq_ignore_ascii_case(name))
        .map(|&(name, lang, max_src, max_asm, src_vocab, asm_vocab)| Settings {
            language: Some(lang.to_owned()),
            name: Some(name.to_owned()),
            max_source_len: Some(max_src),
            max_asm_len: Some(max_asm),
            source_vocab: Some(src_vocab),
            asm_vocab: Some(asm_vocab),
            ..Settings::default()
        })
}

/// The small preset for a language, if there is one.
pub fn language_preset(language: &str) -> Option<Settings> {
    PRESETS
        .iter()
        .find(|p| p.1 == language && p.0.ends_with("-S"))
        .and_then(|p| preset(p.0))
}

fn defaults() -> Settings {
    Settings {
        work_dir: Some("work".into()),
        dataset_dir: Some("dataset".into()),
        workers: Some(std::thread::available_parallelism().map_or(1, |n| n.get())),
        keep_directives: Some(false),
        tokenizer_mode: Some(TokenizerMode::Bpe),
        source_vocab: Some(4096),
        asm_vocab: Some(4096),
        max_source_len: Some(512),
        max_asm_len: Some(4096),
        test_fraction: Some(0.1),
        seed: Some(1),
        max_tokens: Some(4096),
        batch_side: Some(Side::Asm),
        exclude_flags: Some(FlagPolicy::default().exclude.into_iter().collect()),
        bin_width: Some(0.5),
        eta_direction: Some(EtaDirection::AsmOverSource),
        profiles: Some(Vec::new()),
        ..Settings::default()
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub language: String,
    pub name: String,
    pub asm_root: Option<PathBuf>,
    pub source_root: Option<PathBuf>,
    pub work_dir: PathBuf,
    pub dataset_dir: PathBuf,
    pub report_dir: Option<PathBuf>,
    pub workers: usize,
    pub keep_directives: bool,
    pub tokenizer_mode: TokenizerMode,
    pub source_vocab: usize,
    pub asm_vocab: usize,
    pub caps: LengthCaps,
    pub test_fraction: f64,
    pub seed: u64,
    pub max_tokens: usize,
    pub batch_side: Side,
    pub flag_policy: FlagPolicy,
    pub bin_width: f64,
    pub eta_direction: EtaDirection,
    pub profiles: Vec<LanguageProfile>,
}

/// Layers `flags` over `file` over the preset and defaults, then validates.
pub fn resolve(flags: Settings, file: Settings) -> Result<PipelineConfig, ConfigError> {
    let top = flags.over(file);
    let preset_layer = match (&top.preset, &top.language) {
        (Some(p), _) => match preset(p) {
            Some(s) => s,
            None => {
                let known: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
                return bad(format!("unknown preset {p:?}; known: {}", known.join(", ")));
            }
        },
        (None, Some(lang)) => language_preset(lang).unwrap_or_default(),
        (None, None) => Settings::default(),
    };
    let s = top.over(preset_layer).over(defaults());

    let Some(language) = s.language else {
        return bad("no language given; set `language` or a preset");
    };
    let mut profiles = builtin_profiles();
    for path in s.profiles.unwrap_or_default() {
        let text = std::fs::read_to_string(&path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let p = LanguageProfile::from_toml(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        profiles.retain(|q| q.name != p.name);
        profiles.push(p);
    }
    if !profiles.iter().any(|p| p.name == language) {
        return bad(format!("no language profile named {language:?}"));
    }

    let cfg = PipelineConfig {
        name: s.name.unwrap_or_else(|| language.clone()),
        language,
        asm_root: s.asm_root,
        source_root: s.source_root,
        work_dir: s.work_dir.unwrap(),
        dataset_dir: s.dataset_dir.unwrap(),
        report_dir: s.report_dir,
        workers: s.workers.unwrap(),
        keep_directives: s.keep_directives.unwrap(),
        tokenizer_mode: s.tokenizer_mode.unwrap(),
        source_vocab: s.source_vocab.unwrap(),
        asm_vocab: s.asm_vocab.unwrap(),
        caps: LengthCaps {
            max_source: s.max_source_len.unwrap(),
            max_asm: s.max_asm_len.unwrap(),
        },
        test_fraction: s.test_fraction.unwrap(),
        seed: s.seed.unwrap(),
        max_tokens: s.max_tokens.unwrap(),
        batch_side: s.batch_side.unwrap(),
        flag_policy: FlagPolicy {
            exclude: s.exclude_flags.unwrap().into_iter().collect::<BTreeSet<_>>(),
        },
        bin_width: s.bin_width.unwrap(),
        eta_direction: s.eta_direction.unwrap(),
        profiles,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("workers", self.workers),
            ("source_vocab", self.source_vocab),
            ("asm_vocab", self.asm_vocab),
            ("max_source_len", self.caps.max_source),
            ("max_asm_len", self.caps.max_asm),
            ("max_tokens", self.max_tokens),
        ];
        for (key, v) in positive {
            if v == 0 {
                return bad(format!("{key} must be positive"));
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction must lie strictly between 0 and 1, got {}", self.test_fraction));
        }
        if !(self.bin_width.is_finite() && self.bin_width > 0.0) {
            return bad(format!("bin_width must be positive, got {}", self.bin_width));
        }
        let paths = [
            ("asm_root", self.asm_root.as_deref()),
            ("source_root", self.source_root.as_deref()),
            ("work_dir", Some(self.work_dir.as_path())),
            ("dataset_dir", Some(self.dataset_dir.as_path())),
            ("report_dir", self.report_dir.as_deref()),
        ];
        for (i, (ka, a)) in paths.iter().enumerate() {
            for (kb, b) in &paths[i + 1..] {
                if let (Some(a), Some(b)) = (a, b) {
                    if lexical(a) == lexical(b) {
                        return bad(format!("{ka} and {kb} must differ, both are {}", a.display()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn profile(&self) -> &LanguageProfile {
        self.profiles.iter().find(|p| p.name == self.language).expect("checked in resolve")
    }
}

fn lexical(p: &Path) -> PathBuf {
    p.components().filter(|c| !matches!(c, std::path::Component::CurDir)).collect()
}
