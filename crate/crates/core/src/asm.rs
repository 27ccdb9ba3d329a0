//! Line classification for GNU-assembler text and CFI-delimited function
//! extraction.
//!
//! Only the textual debug directives are interpreted: `.cfi_startproc` /
//! `.cfi_endproc` delimit procedures, `.file` builds the file table and
//! `.loc` attributes code to source lines. Instruction semantics are never
//! inspected, so the same extractor serves every source language whose
//! compiler emits GNU-style assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::Diagnostics;

/// The classification of a single assembly line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AsmKind {
    CfiStartProc,
    CfiEndProc,
    /// `.file N "path"` or the DWARF 5 form `.file N "dir" "name" [md5 ...]`.
    FileDirective { index: u32, path: String },
    LocDirective { file_index: u32, line: u32, column: u32 },
    Label { name: String },
    /// Any other dot-directive, including the index-less `.file "name"`
    /// and line-zero `.loc` (code not attributable to any source line).
    Directive { name: String },
    Instruction,
    /// Empty or comment-only.
    Blank,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsmLine {
    pub raw: String,
    pub kind: AsmKind,
}

impl AsmLine {
    /// True for lines that carry code a reader of the function would see:
    /// labels and instructions.
    pub fn is_code(&self) -> bool {
        matches!(self.kind, AsmKind::Label { .. } | AsmKind::Instruction)
    }
}

/// Output of [`parse_asm`]: one [`AsmLine`] per input line plus the number of
/// directives whose arguments could not be decoded.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedAsm {
    pub lines: Vec<AsmLine>,
    pub malformed: usize,
}

/// Classifies every line of an assembly file.
pub fn parse_asm(text: &str) -> ParsedAsm {
    let mut malformed = 0;
    let lines = text
        .lines()
        .map(|raw| {
            let (kind, ok) = classify(raw);
            if !ok {
                malformed += 1;
            }
            AsmLine {
                raw: raw.to_owned(),
                kind,
            }
        })
        .collect();
    ParsedAsm { lines, malformed }
}

/// Lossy byte entry point; invalid UTF-8 sequences become U+FFFD.
pub fn parse_asm_bytes(bytes: &[u8]) -> ParsedAsm {
    parse_asm(&String::from_utf8_lossy(bytes))
}

fn classify(raw: &str) -> (AsmKind, bool) {
    let body = strip_comment(raw).trim();
    if body.is_empty() {
        return (AsmKind::Blank, true);
    }
    if let Some(name) = label_name(body) {
        return (
            AsmKind::Label {
                name: name.to_owned(),
            },
            true,
        );
    }
    if !body.starts_with('.') {
        return (AsmKind::Instruction, true);
    }
    let (name, rest) = match body.find(|c: char| c.is_ascii_whitespace()) {
        Some(i) => (&body[..i], body[i..].trim()),
        None => (body, ""),
    };
    match name {
        ".cfi_startproc" => (AsmKind::CfiStartProc, true),
        ".cfi_endproc" => (AsmKind::CfiEndProc, true),
        ".file" => match parse_file_args(rest) {
            Some(kind) => (kind, true),
            None => (AsmKind::Instruction, false),
        },
        ".loc" => match parse_loc_args(rest) {
            Some(kind) => (kind, true),
            None => (AsmKind::Instruction, false),
        },
        _ => (
            AsmKind::Directive {
                name: name.to_owned(),
            },
            true,
        ),
    }
}

/// Removes a trailing `#` comment that is not inside a quoted string.
pub(crate) fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        if in_quote {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_quote = false;
            }
        } else if c == '"' {
            in_quote = true;
        } else if c == '#' {
            return &line[..i];
        }
    }
    line
}

fn is_symbol_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '$' | '@')
}

fn label_name(body: &str) -> Option<&str> {
    let colon = body.find(':')?;
    let name = &body[..colon];
    if !name.is_empty() && name.chars().all(is_symbol_char) {
        Some(name)
    } else {
        None
    }
}

#[derive(Debug, PartialEq, Eq)]
enum Arg<'a> {
    Bare(&'a str),
    Quoted(String),
}

fn split_args(s: &str) -> Option<Vec<Arg<'_>>> {
    let mut out = Vec::new();
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b.is_ascii_whitespace() || b == b',' {
            i += 1;
        } else if b == b'"' {
            let (text, next) = unquote(&s[i..])?;
            out.push(Arg::Quoted(text));
            i += next;
        } else {
            let start = i;
            while i < bytes.len()
                && !bytes[i].is_ascii_whitespace()
                && bytes[i] != b','
                && bytes[i] != b'"'
            {
                i += 1;
            }
            out.push(Arg::Bare(&s[start..i]));
        }
    }
    Some(out)
}

/// Decodes a GNU-as quoted string starting at `s[0] == '"'`. Returns the
/// decoded text and the number of bytes consumed including both quotes.
fn unquote(s: &str) -> Option<(String, usize)> {
    let bytes = s.as_bytes();
    debug_assert_eq!(bytes.first(), Some(&b'"'));
    let mut out = Vec::new();
    let mut i = 1;
    while i < bytes.len() {
        match bytes[i] {
            b'"' => return Some((String::from_utf8_lossy(&out).into_owned(), i + 1)),
            b'\\' => {
                let esc = *bytes.get(i + 1)?;
                i += 2;
                match esc {
                    b'n' => out.push(b'\n'),
                    b't' => out.push(b'\t'),
                    b'r' => out.push(b'\r'),
                    b'b' => out.push(0x08),
                    b'f' => out.push(0x0c),
                    b'0'..=b'7' => {
                        let mut v: u32 = u32::from(esc - b'0');
                        let mut n = 1;
                        while n < 3 && i < bytes.len() && (b'0'..=b'7').contains(&bytes[i]) {
                            v = v * 8 + u32::from(bytes[i] - b'0');
                            i += 1;
                            n += 1;
                        }
                        out.push((v & 0xff) as u8);
                    }
                    b'x' | b'X' => {
                        let mut v: u32 = 0;
                        let mut n = 0;
                        while i < bytes.len() && bytes[i].is_ascii_hexdigit() {
                            v = (v << 4) | (bytes[i] as char).to_digit(16).unwrap_or(0);
                            v &= 0xff;
                            i += 1;
                            n += 1;
                        }
                        if n == 0 {
                            return None;
                        }
                        out.push(v as u8);
                    }
                    other => out.push(other),
                }
            }
            b => {
                out.push(b);
                i += 1;
            }
        }
    }
    None
}

fn parse_file_args(rest: &str) -> Option<AsmKind> {
    let args = split_args(rest)?;
    match args.as_slice() {
        [Arg::Quoted(_)] => Some(AsmKind::Directive {
            name: ".file".to_owned(),
        }),
        [Arg::Bare(n), Arg::Quoted(path)] => Some(AsmKind::FileDirective {
            index: n.parse().ok()?,
            path: path.clone(),
        }),
        [Arg::Bare(n), Arg::Quoted(dir), Arg::Quoted(name), ..] => Some(AsmKind::FileDirective {
            index: n.parse().ok()?,
            path: join_dir(dir, name),
        }),
        _ => None,
    }
}

fn join_dir(dir: &str, name: &str) -> String {
    if dir.is_empty() || name.starts_with('/') {
        name.to_owned()
    } else if dir.ends_with('/') {
        format!("{dir}{name}")
    } else {
        format!("{dir}/{name}")
    }
}

fn parse_loc_args(rest: &str) -> Option<AsmKind> {
    let args = split_args(rest)?;
    let mut bare = args.iter().map(|a| match a {
        Arg::Bare(s) => Some(*s),
        Arg::Quoted(_) => None,
    });
    let file_index: u32 = bare.next()??.parse().ok()?;
    let line: u32 = bare.next()??.parse().ok()?;
    let column = bare
        .next()
        .flatten()
        .and_then(|c| c.parse().ok())
        .unwrap_or(0);
    if line == 0 {
        return Some(AsmKind::Directive {
            name: ".loc".to_owned(),
        });
    }
    Some(AsmKind::LocDirective {
        file_index,
        line,
        column,
    })
}

/// A `(file_index, line)` attribution taken from a `.loc` directive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LocRef {
    pub file_index: u32,
    pub line: u32,
}

/// Inclusive source line range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LineSpan {
    pub min: u32,
    pub max: u32,
}

impl LineSpan {
    pub fn contains(&self, line: u32) -> bool {
        self.min <= line && line <= self.max
    }

    pub fn len(&self) -> u32 {
        self.max - self.min + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// One procedure cut out between a balanced `.cfi_startproc` / `.cfi_endproc`
/// pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFunction {
    pub label: String,
    /// Line index (0-based) of the `.cfi_startproc` marker.
    pub start_index: usize,
    /// Line index (0-based) of the matching `.cfi_endproc` marker.
    pub end_index: usize,
    /// Lines strictly between the two markers.
    pub body: Vec<AsmLine>,
    pub loc_refs: Vec<LocRef>,
    /// Path of the dominant file as written in its `.file` directive; empty
    /// when the function has no usable `.loc` references.
    pub source_file: String,
    pub line_span: Option<LineSpan>,
    pub perforated: bool,
    pub multi_file: bool,
}

impl RawFunction {
    pub fn zero_loc(&self) -> bool {
        self.line_span.is_none()
    }

    pub fn asm_lines(&self) -> impl Iterator<Item = &str> {
        self.body.iter().map(|l| l.raw.as_str())
    }

    /// Renders the body as newline-joined text with comments stripped and
    /// intra-line whitespace collapsed. With `keep_directives == false` only
    /// labels and instructions survive.
    pub fn asm_text(&self, keep_directives: bool) -> String {
        let mut out = String::new();
        for line in &self.body {
            let keep = match line.kind {
                AsmKind::Blank => false,
                AsmKind::Label { .. } | AsmKind::Instruction => true,
                _ => keep_directives,
            };
            if !keep {
                continue;
            }
            let text = collapse_ws(strip_comment(&line.raw));
            if text.is_empty() {
                continue;
            }
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&text);
        }
        out
    }
}

fn collapse_ws(s: &str) -> String {
    s.split_ascii_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfiMismatch {
    /// A `.cfi_startproc` with no matching end before the next start or EOF.
    MissingEnd,
    /// A `.cfi_endproc` outside any open region.
    StrayEnd,
}

/// Non-fatal problems found during extraction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExtractIssue {
    UnbalancedCfi { line: usize, mismatch: CfiMismatch },
    UnknownFileIndex { line: usize, file_index: u32 },
}

impl fmt::Display for ExtractIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtractIssue::UnbalancedCfi { line, mismatch } => {
                let what = match mismatch {
                    CfiMismatch::MissingEnd => ".cfi_startproc without .cfi_endproc",
                    CfiMismatch::StrayEnd => ".cfi_endproc without .cfi_startproc",
                };
                write!(f, "line {}: unbalanced CFI: {what}", line + 1)
            }
            ExtractIssue::UnknownFileIndex { line, file_index } => {
                write!(f, "line {}: .loc references undeclared file {file_index}", line + 1)
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub functions: Vec<RawFunction>,
    pub issues: Vec<ExtractIssue>,
}

impl Extraction {
    pub fn diagnostics(&self) -> Diagnostics {
        let mut d = Diagnostics::default();
        d.add("functions", self.functions.len() as u64);
        for f in &self.functions {
            if f.zero_loc() {
                d.bump("flag.zero_loc");
            }
            if f.perforated {
                d.bump("flag.perforated");
            }
            if f.multi_file {
                d.bump("flag.multi_file");
            }
        }
        for issue in &self.issues {
            match issue {
                ExtractIssue::UnbalancedCfi {
                    mismatch: CfiMismatch::MissingEnd,
                    ..
                } => d.bump("unbalanced_cfi.missing_end"),
                ExtractIssue::UnbalancedCfi {
                    mismatch: CfiMismatch::StrayEnd,
                    ..
                } => d.bump("unbalanced_cfi.stray_end"),
                ExtractIssue::UnknownFileIndex { .. } => d.bump("unknown_file_index"),
            }
        }
        d
    }
}

struct OpenRegion {
    start: usize,
    label: String,
    locs: Vec<(usize, u32, u32)>,
}

/// Cuts one [`RawFunction`] per balanced CFI region, in file order.
pub fn extract_functions(lines: &[AsmLine]) -> Extraction {
    let mut files: BTreeMap<u32, &str> = BTreeMap::new();
    for line in lines {
        if let AsmKind::FileDirective { index, path } = &line.kind {
            files.entry(*index).or_insert(path.as_str());
        }
    }

    let mut out = Extraction::default();
    // Labels and `.loc`s seen since the previous region closed; gcc and clang
    // both put the function symbol and its signature `.loc` ahead of
    // `.cfi_startproc`.
    let mut global_label: Option<&str> = None;
    let mut any_label: Option<&str> = None;
    let mut header_locs: Vec<(usize, u32, u32)> = Vec::new();
    let mut open: Option<OpenRegion> = None;

    for (i, line) in lines.iter().enumerate() {
        match &line.kind {
            AsmKind::CfiStartProc => {
                if let Some(prev) = open.take() {
                    out.issues.push(ExtractIssue::UnbalancedCfi {
                        line: prev.start,
                        mismatch: CfiMismatch::MissingEnd,
                    });
                }
                let label = global_label.or(any_label).unwrap_or("").to_owned();
                open = Some(OpenRegion {
                    start: i,
                    label,
                    locs: std::mem::take(&mut header_locs),
                });
            }
            AsmKind::CfiEndProc => match open.take() {
                Some(region) => {
                    let f = finish(region, i, lines, &files, &mut out.issues);
                    out.functions.push(f);
                    global_label = None;
                    any_label = None;
                    header_locs.clear();
                }
                None => out.issues.push(ExtractIssue::UnbalancedCfi {
                    line: i,
                    mismatch: CfiMismatch::StrayEnd,
                }),
            },
            AsmKind::Label { name } => {
                if open.is_none() {
                    any_label = Some(name);
                    if !is_local_label(name) {
                        global_label = Some(name);
                    }
                }
            }
            AsmKind::LocDirective {
                file_index,
                line: src_line,
                ..
            } => match open.as_mut() {
                Some(region) => region.locs.push((i, *file_index, *src_line)),
                None => header_locs.push((i, *file_index, *src_line)),
            },
            _ => {}
        }
    }
    if let Some(region) = open {
        out.issues.push(ExtractIssue::UnbalancedCfi {
            line: region.start,
            mismatch: CfiMismatch::MissingEnd,
        });
    }
    out
}

fn is_local_label(name: &str) -> bool {
    name.starts_with(".L") || name.chars().all(|c| c.is_ascii_digit())
}

fn finish(
    region: OpenRegion,
    end: usize,
    lines: &[AsmLine],
    files: &BTreeMap<u32, &str>,
    issues: &mut Vec<ExtractIssue>,
) -> RawFunction {
    let mut loc_refs = Vec::with_capacity(region.locs.len());
    // path -> (lowest file index naming it, vote count, referenced lines)
    let mut by_path: BTreeMap<&str, (u32, usize, BTreeSet<u32>)> = BTreeMap::new();
    for (at, file_index, line) in region.locs {
        let Some(path) = files.get(&file_index) else {
            issues.push(ExtractIssue::UnknownFileIndex {
                line: at,
                file_index,
            });
            continue;
        };
        loc_refs.push(LocRef { file_index, line });
        let entry = by_path.entry(path).or_insert((file_index, 0, BTreeSet::new()));
        entry.0 = entry.0.min(file_index);
        entry.1 += 1;
        entry.2.insert(line);
    }

    let dominant = by_path
        .iter()
        .max_by(|a, b| a.1 .1.cmp(&b.1 .1).then(b.1 .0.cmp(&a.1 .0)));
    let (source_file, line_span, perforated) = match dominant {
        Some((path, (_, _, referenced))) => {
            let min = *referenced.first().expect("non-empty by construction");
            let max = *referenced.last().expect("non-empty by construction");
            let full = (max - min + 1) as usize == referenced.len();
            ((*path).to_owned(), Some(LineSpan { min, max }), !full)
        }
        None => (String::new(), None, false),
    };

    RawFunction {
        label: region.label,
        start_index: region.start,
        end_index: end,
        body: lines[region.start + 1..end].to_vec(),
        loc_refs,
        source_file,
        line_span,
        perforated,
        multi_file: by_path.len() > 1,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ResolveError {
    #[error("function has no source attribution")]
    NoAttribution,
    #[error("source file {path:?} not found under {root}")]
    MissingSourceFile { path: String, root: PathBuf },
    #[error("span {min}..={max} exceeds the {len} lines of {path}")]
    SpanOutOfRange {
        path: PathBuf,
        min: u32,
        max: u32,
        len: usize,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Finds the file a `.file` path refers to below `root`.
///
/// Relative paths are tried as-is, absolute paths only when they already lie
/// under `root`; after that successively shorter path suffixes are tried, so a
/// compilation directory baked into the assembly does not need to exist.
pub fn locate_source(path: &str, root: &Path) -> Option<PathBuf> {
    let p = Path::new(path);
    if p.is_absolute() {
        if p.starts_with(root) && p.is_file() {
            return Some(p.to_path_buf());
        }
    } else {
        let direct = root.join(p);
        if direct.is_file() {
            return Some(direct);
        }
    }
    let parts: Vec<&std::ffi::OsStr> = p
        .components()
        .filter_map(|c| match c {
            Component::Normal(s) => Some(s),
            _ => None,
        })
        .collect();
    (0..parts.len()).find_map(|k| {
        let candidate = parts[k..].iter().fold(root.to_path_buf(), |acc, s| acc.join(s));
        candidate.is_file().then_some(candidate)
    })
}

/// Source text attributed to one function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedSource {
    pub path: PathBuf,
    /// The function's span after [`widen_to_header`].
    pub span: LineSpan,
    pub text: String,
}

const MAX_HEADER_LINES: u32 = 16;

fn has_word_char(line: &str) -> bool {
    line.chars().any(char::is_alphanumeric)
}

/// Compilers may attribute a function's entry to its opening delimiter
/// rather than to the line naming it, as with a brace on a line of its own.
/// When the first span line has no alphanumeric character, the span grows
/// upward over the contiguous lines that do, stopping at a blank or
/// punctuation-only line.
pub fn widen_to_header(lines: &[&str], span: LineSpan) -> LineSpan {
    let idx = span.min as usize;
    if idx == 0 || idx > lines.len() || has_word_char(lines[idx - 1]) {
        return span;
    }
    let mut min = span.min;
    while min > 1 && span.min - min < MAX_HEADER_LINES {
        let above = lines[min as usize - 2];
        if above.trim().is_empty() || !has_word_char(above) {
            break;
        }
        min -= 1;
    }
    LineSpan { min, max: span.max }
}

/// Reads the dominant file and returns its lines over the widened span,
/// newline-joined.
pub fn resolve_source(f: &RawFunction, root: &Path) -> Result<ResolvedSource, ResolveError> {
    let span = f.line_span.ok_or(ResolveError::NoAttribution)?;
    let path = locate_source(&f.source_file, root).ok_or_else(|| ResolveError::MissingSourceFile {
        path: f.source_file.clone(),
        root: root.to_path_buf(),
    })?;
    let bytes = std::fs::read(&path).map_err(|source| ResolveError::Io {
        path: path.clone(),
        source,
    })?;
    let text = String::from_utf8_lossy(&bytes);
    let lines: Vec<&str> = text.lines().collect();
    if span.max as usize > lines.len() {
        return Err(ResolveError::SpanOutOfRange {
            path,
            min: span.min,
            max: span.max,
            len: lines.len(),
        });
    }
    let span = widen_to_header(&lines, span);
    let text = lines[span.min as usize - 1..span.max as usize].join("\n");
    Ok(ResolvedSource { path, span, text })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(text: &str) -> Vec<AsmKind> {
        parse_asm(text).lines.into_iter().map(|l| l.kind).collect()
    }

    #[test]
    fn classifies_cfi_markers() {
        assert_eq!(kinds("\t.cfi_startproc"), vec![AsmKind::CfiStartProc]);
        assert_eq!(kinds(".cfi_endproc\n"), vec![AsmKind::CfiEndProc]);
        assert_eq!(kinds("  .cfi_startproc simple"), vec![AsmKind::CfiStartProc]);
    }

    #[test]
    fn classifies_file_directives() {
        assert_eq!(
            kinds(".file 2 \"src/main.c\""),
            vec![AsmKind::FileDirective {
                index: 2,
                path: "src/main.c".into()
            }]
        );
        assert_eq!(
            kinds("\t.file\t0 \"/tmp/t\" \"a.c\" md5 0x3ce082aa6780a4d4f394c2e03df74673"),
            vec![AsmKind::FileDirective {
                index: 0,
                path: "/tmp/t/a.c".into()
            }]
        );
        assert_eq!(
            kinds("\t.file\t\"a.c\""),
            vec![AsmKind::Directive {
                name: ".file".into()
            }]
        );
        assert_eq!(
            kinds(".file 1 \"we\\\"ird\\040name.c\""),
            vec![AsmKind::FileDirective {
                index: 1,
                path: "we\"ird name.c".into()
            }]
        );
    }

    #[test]
    fn malformed_directives_become_instructions() {
        let parsed = parse_asm(".file x \"a.c\"\n.loc 1\n.file 1 \"unterminated\n.loc a b");
        assert!(parsed.lines.iter().all(|l| l.kind == AsmKind::Instruction));
        assert_eq!(parsed.malformed, 4);
    }

    #[test]
    fn classifies_loc_with_options_and_comments() {
        assert_eq!(
            kinds("\t.loc\t0 7 20 is_stmt 0                # a.c:7:20"),
            vec![AsmKind::LocDirective {
                file_index: 0,
                line: 7,
                column: 20
            }]
        );
        assert_eq!(
            kinds(".loc 1 12"),
            vec![AsmKind::LocDirective {
                file_index: 1,
                line: 12,
                column: 0
            }]
        );
        assert_eq!(
            kinds(".loc 1 0 0"),
            vec![AsmKind::Directive {
                name: ".loc".into()
            }]
        );
        assert_eq!(
            kinds(".loc_view .LVU3"),
            vec![AsmKind::Directive {
                name: ".loc_view".into()
            }]
        );
    }

    #[test]
    fn classifies_labels_instructions_blanks() {
        assert_eq!(
            kinds("main:                                   # @main"),
            vec![AsmKind::Label {
                name: "main".into()
            }]
        );
        assert_eq!(
            kinds(".LFB0:"),
            vec![AsmKind::Label {
                name: ".LFB0".into()
            }]
        );
        assert_eq!(kinds("\tmovl\t%edi, -4(%rbp)"), vec![AsmKind::Instruction]);
        assert_eq!(kinds("\tmovq %fs:40, %rax"), vec![AsmKind::Instruction]);
        assert_eq!(kinds("# %bb.0:"), vec![AsmKind::Blank]);
        assert_eq!(kinds("   "), vec![AsmKind::Blank]);
        assert_eq!(
            kinds("\t.string\t\"a # b:\""),
            vec![AsmKind::Directive {
                name: ".string".into()
            }]
        );
    }

    #[test]
    fn line_count_is_preserved() {
        let text = "a\n\n.b\r\nc:\n";
        assert_eq!(parse_asm(text).lines.len(), 4);
        assert_eq!(parse_asm("").lines.len(), 0);
    }

    #[test]
    fn no_cfi_means_no_functions() {
        let parsed = parse_asm("\t.text\nfoo:\n\tret\n");
        let ex = extract_functions(&parsed.lines);
        assert!(ex.functions.is_empty());
        assert!(ex.issues.is_empty());
    }

    #[test]
    fn contiguous_function() {
        let text = ".file 1 \"a.c\"\nf:\n.cfi_startproc\n.loc 1 10\nnop\n.loc 1 11\nnop\n.loc 1 12\nret\n.cfi_endproc\n";
        let ex = extract_functions(&parse_asm(text).lines);
        assert_eq!(ex.functions.len(), 1);
        let f = &ex.functions[0];
        assert_eq!(f.label, "f");
        assert_eq!(f.source_file, "a.c");
        assert_eq!(f.line_span, Some(LineSpan { min: 10, max: 12 }));
        assert!(!f.perforated);
        assert!(!f.multi_file);
        assert_eq!(f.asm_text(false), "nop\nnop\nret");
    }

    #[test]
    fn gap_marks_perforated() {
        let text = ".file 1 \"a.c\"\n.cfi_startproc\n.loc 1 10\nnop\n.loc 1 14\nret\n.cfi_endproc";
        let ex = extract_functions(&parse_asm(text).lines);
        let f = &ex.functions[0];
        assert_eq!(f.line_span, Some(LineSpan { min: 10, max: 14 }));
        assert!(f.perforated);
        assert_eq!(f.label, "");
    }

    #[test]
    fn header_loc_and_global_label_are_attributed() {
        let text = "\
\t.file 1 \"a.c\"
main:
.LFB1:
\t.loc 1 5 16
\t.cfi_startproc
\tpushq %rbp
\t.loc 1 6 9
\tret
\t.cfi_endproc
";
        let ex = extract_functions(&parse_asm(text).lines);
        let f = &ex.functions[0];
        assert_eq!(f.label, "main");
        assert_eq!(f.line_span, Some(LineSpan { min: 5, max: 6 }));
        assert_eq!(f.loc_refs.len(), 2);
    }

    #[test]
    fn dominant_file_majority_and_tie() {
        let text = "\
.file 1 \"a.c\"
.file 2 \"b.h\"
.cfi_startproc
.loc 2 3
.loc 2 4
.loc 1 9
.cfi_endproc
.cfi_startproc
.loc 2 3
.loc 1 9
.cfi_endproc
";
        let ex = extract_functions(&parse_asm(text).lines);
        assert_eq!(ex.functions[0].source_file, "b.h");
        assert!(ex.functions[0].multi_file);
        assert_eq!(ex.functions[0].line_span, Some(LineSpan { min: 3, max: 4 }));
        assert_eq!(ex.functions[1].source_file, "a.c");
        assert_eq!(ex.functions[1].line_span, Some(LineSpan { min: 9, max: 9 }));
    }

    #[test]
    fn aliased_file_indices_are_one_file() {
        let text = ".file 0 \"a.c\"\n.file 1 \"a.c\"\n.cfi_startproc\n.loc 0 1\n.loc 1 2\n.cfi_endproc";
        let f = &extract_functions(&parse_asm(text).lines).functions[0];
        assert!(!f.multi_file);
        assert_eq!(f.line_span, Some(LineSpan { min: 1, max: 2 }));
    }

    #[test]
    fn zero_loc_function_is_flagged() {
        let ex = extract_functions(&parse_asm(".cfi_startproc\nret\n.cfi_endproc").lines);
        let f = &ex.functions[0];
        assert!(f.zero_loc());
        assert_eq!(f.source_file, "");
        assert_eq!(ex.diagnostics().get("flag.zero_loc"), 1);
    }

    #[test]
    fn unknown_file_index_is_dropped_and_reported() {
        let text = ".file 1 \"a.c\"\n.cfi_startproc\n.loc 3 7\n.loc 1 8\n.cfi_endproc";
        let ex = extract_functions(&parse_asm(text).lines);
        assert_eq!(ex.functions[0].loc_refs, vec![LocRef { file_index: 1, line: 8 }]);
        assert_eq!(
            ex.issues,
            vec![ExtractIssue::UnknownFileIndex {
                line: 2,
                file_index: 3
            }]
        );
    }

    #[test]
    fn unbalanced_regions_are_skipped() {
        let text = ".cfi_endproc\n.cfi_startproc\nnop\n.cfi_startproc\nret\n.cfi_endproc\n.cfi_startproc\n";
        let ex = extract_functions(&parse_asm(text).lines);
        assert_eq!(ex.functions.len(), 1);
        assert_eq!(ex.functions[0].start_index, 3);
        assert_eq!(ex.functions[0].end_index, 5);
        let d = ex.diagnostics();
        assert_eq!(d.get("unbalanced_cfi.stray_end"), 1);
        assert_eq!(d.get("unbalanced_cfi.missing_end"), 2);
    }

    #[test]
    fn resolves_span_lines() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("src")).unwrap();
        std::fs::write(dir.path().join("src/a.c"), "l1\nl2\nl3\nl4\n").unwrap();
        let text = ".file 1 \"/build/x/src/a.c\"\n.cfi_startproc\n.loc 1 2\n.loc 1 3\n.cfi_endproc";
        let f = extract_functions(&parse_asm(text).lines).functions.remove(0);
        assert_eq!(resolve_source(&f, dir.path()).unwrap().text, "l2\nl3");

        let text = ".file 1 \"src/a.c\"\n.cfi_startproc\n.loc 1 3\n.loc 1 9\n.cfi_endproc";
        let f = extract_functions(&parse_asm(text).lines).functions.remove(0);
        assert!(matches!(
            resolve_source(&f, dir.path()),
            Err(ResolveError::SpanOutOfRange { len: 4, .. })
        ));

        let text = ".file 1 \"nope.c\"\n.cfi_startproc\n.loc 1 3\n.cfi_endproc";
        let f = extract_functions(&parse_asm(text).lines).functions.remove(0);
        assert!(matches!(
            resolve_source(&f, dir.path()),
            Err(ResolveError::MissingSourceFile { .. })
        ));
    }

    #[test]
    fn brace_only_entry_lines_widen_upward() {
        let src = ["int x;", "", "/* doc */", "static int", "f(int a)", "{", "  return a;", "}"];
        let span = |min, max| LineSpan { min, max };
        assert_eq!(widen_to_header(&src, span(6, 8)), span(3, 8));
        assert_eq!(widen_to_header(&src, span(7, 8)), span(7, 8));
        let src = ["}", "int g(void)", "{", "}"];
        assert_eq!(widen_to_header(&src, span(3, 4)), span(2, 4));
        let src = ["{", "}"];
        assert_eq!(widen_to_header(&src, span(1, 2)), span(1, 2));
    }

    #[test]
    fn directives_can_be_kept_in_asm_text() {
        let text = ".cfi_startproc\n\tpushq\t%rbp\n\t.cfi_def_cfa_offset 16\n.L2:\n\tret # done\n.cfi_endproc";
        let f = &extract_functions(&parse_asm(text).lines).functions[0];
        assert_eq!(f.asm_text(false), "pushq %rbp\n.L2:\nret");
        assert_eq!(f.asm_text(true), "pushq %rbp\n.cfi_def_cfa_offset 16\n.L2:\nret");
    }
}
