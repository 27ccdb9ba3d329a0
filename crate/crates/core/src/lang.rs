//! Per-language comment and literal syntax, and the source normalizer that
//! uses it.
//!
//! A [`LanguageProfile`] is plain data. [`preprocess`] is a single-pass
//! scanner with four states (code, line comment, block comment with nesting
//! depth, literal) that
//!
//! 1. removes comments,
//! 2. replaces the content of every string literal with `STR`, keeping the
//!    delimiters (`"hello"` becomes `"STR"`),
//! 3. collapses runs of spaces and tabs to one space and trims each line,
//!    dropping lines that only became blank because a comment was removed.
//!
//! No tokenizing, parsing or validation of the language is attempted.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STRING_PLACEHOLDER: &str = "STR";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockComment {
    pub open: String,
    pub close: String,
    #[serde(default)]
    pub nested: bool,
}

/// A quoted literal. An `escape` equal to the first character of `close`
/// means the close delimiter is escaped by doubling it (Fortran `'it''s'`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiteralDelims {
    pub open: String,
    pub close: String,
    #[serde(default)]
    pub escape: Option<char>,
    /// Whether a raw newline may appear inside the literal.
    #[serde(default)]
    pub multiline: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageProfile {
    pub name: String,
    pub extensions: Vec<String>,
    #[serde(default)]
    pub line_comment_prefixes: Vec<String>,
    #[serde(default)]
    pub block_comment_delims: Vec<BlockComment>,
    #[serde(default)]
    pub string_delims: Vec<LiteralDelims>,
    /// Character literals are always skipped over so their content is never
    /// mistaken for a string or comment opener.
    #[serde(default)]
    pub char_literal_delims: Option<LiteralDelims>,
    /// Replace character literal content with `STR` as well.
    #[serde(default)]
    pub replace_char_literals: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProfileError {
    #[error("profile {0:?} declares no file extensions")]
    NoExtensions(String),
    #[error("profile {0:?} has an empty delimiter")]
    EmptyDelimiter(String),
    #[error("profile {0:?} has a block comment whose open and close are equal")]
    SymmetricBlockComment(String),
    #[error("invalid profile document: {0}")]
    Parse(String),
}

impl LanguageProfile {
    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.extensions.is_empty() {
            return Err(ProfileError::NoExtensions(self.name.clone()));
        }
        let literals = self.string_delims.iter().chain(self.char_literal_delims.iter());
        let empty = self.extensions.iter().any(String::is_empty)
            || self.line_comment_prefixes.iter().any(String::is_empty)
            || self
                .block_comment_delims
                .iter()
                .any(|b| b.open.is_empty() || b.close.is_empty())
            || literals.clone().any(|l| l.open.is_empty() || l.close.is_empty());
        if empty {
            return Err(ProfileError::EmptyDelimiter(self.name.clone()));
        }
        if self.block_comment_delims.iter().any(|b| b.open == b.close) {
            return Err(ProfileError::SymmetricBlockComment(self.name.clone()));
        }
        Ok(())
    }

    /// Parses one TOML document describing a profile.
    pub fn from_toml(text: &str) -> Result<Self, ProfileError> {
        let p: LanguageProfile = toml::from_str(text).map_err(|e| ProfileError::Parse(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("profiles always serialize")
    }

    pub fn matches_extension(&self, ext: &str) -> bool {
        let ext = ext.trim_start_matches('.');
        self.extensions
            .iter()
            .any(|e| e.trim_start_matches('.').eq_ignore_ascii_case(ext))
    }
}

fn lit(open: &str, close: &str, escape: Option<char>, multiline: bool) -> LiteralDelims {
    LiteralDelims {
        open: open.into(),
        close: close.into(),
        escape,
        multiline,
    }
}

fn block(open: &str, close: &str, nested: bool) -> BlockComment {
    BlockComment {
        open: open.into(),
        close: close.into(),
        nested,
    }
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| (*s).to_owned()).collect()
}

/// Profiles for C, Go, Fortran (free form) and OCaml.
pub fn builtin_profiles() -> Vec<LanguageProfile> {
    vec![
        LanguageProfile {
            name: "c".into(),
            extensions: strings(&[".c", ".h"]),
            line_comment_prefixes: strings(&["//"]),
            block_comment_delims: vec![block("/*", "*/", false)],
            string_delims: vec![lit("\"", "\"", Some('\\'), false)],
            char_literal_delims: Some(lit("'", "'", Some('\\'), false)),
            replace_char_literals: false,
        },
        LanguageProfile {
            name: "go".into(),
            extensions: strings(&[".go"]),
            line_comment_prefixes: strings(&["//"]),
            block_comment_delims: vec![block("/*", "*/", false)],
            string_delims: vec![lit("\"", "\"", Some('\\'), false), lit("`", "`", None, true)],
            char_literal_delims: Some(lit("'", "'", Some('\\'), false)),
            replace_char_literals: false,
        },
        LanguageProfile {
            name: "fortran".into(),
            extensions: strings(&[".f90", ".f95", ".f03", ".f08", ".f", ".for"]),
            line_comment_prefixes: strings(&["!"]),
            block_comment_delims: vec![],
            string_delims: vec![lit("'", "'", Some('\''), false), lit("\"", "\"", Some('"'), false)],
            char_literal_delims: None,
            replace_char_literals: false,
        },
        LanguageProfile {
            name: "ocaml".into(),
            extensions: strings(&[".ml", ".mli"]),
            line_comment_prefixes: vec![],
            block_comment_delims: vec![block("(*", "*)", true)],
            string_delims: vec![lit("\"", "\"", Some('\\'), true)],
            char_literal_delims: None,
            replace_char_literals: false,
        },
    ]
}

pub fn profile_for_extension<'a>(profiles: &'a [LanguageProfile], ext: &str) -> Option<&'a LanguageProfile> {
    profiles.iter().find(|p| p.matches_extension(ext))
}

pub fn profile_for_path<'a>(profiles: &'a [LanguageProfile], path: &Path) -> Option<&'a LanguageProfile> {
    let ext = path.extension()?.to_str()?;
    profile_for_extension(profiles, ext)
}

pub fn profile_by_name<'a>(profiles: &'a [LanguageProfile], name: &str) -> Option<&'a LanguageProfile> {
    profiles.iter().find(|p| p.name.eq_ignore_ascii_case(name))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessIssue {
    UnterminatedString,
    UnterminatedComment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessedSource {
    pub text: String,
    pub original_line_count: usize,
    pub replaced_literals: usize,
    pub removed_comment_spans: usize,
    pub issues: Vec<PreprocessIssue>,
}

impl PreprocessedSource {
    /// Input that hit end-of-file inside a literal or comment.
    pub fn suspect(&self) -> bool {
        !self.issues.is_empty()
    }
}

enum State<'p> {
    Code,
    LineComment,
    BlockComment { delims: &'p BlockComment, depth: usize },
    Literal { delims: &'p LiteralDelims, replace: bool },
}

struct Scanner {
    lines: Vec<String>,
    current: String,
    /// Whether a comment was removed from the line being built.
    touched: bool,
    touched_lines: Vec<bool>,
}

impl Scanner {
    fn push_str(&mut self, s: &str) {
        self.current.push_str(s);
    }

    fn newline(&mut self) {
        self.lines.push(std::mem::take(&mut self.current));
        self.touched_lines.push(self.touched);
        self.touched = false;
    }
}

/// Applies the three normalization rules of `profile` to `src`.
pub fn preprocess(src: &str, profile: &LanguageProfile) -> PreprocessedSource {
    let src = src.replace("\r\n", "\n");
    let original_line_count = src.lines().count();

    let mut out = Scanner {
        lines: Vec::new(),
        current: String::new(),
        touched: false,
        touched_lines: Vec::new(),
    };
    let mut replaced_literals = 0;
    let mut removed_comment_spans = 0;
    let mut issues = Vec::new();
    let mut state = State::Code;
    let mut rest: &str = &src;

    while let Some(c) = rest.chars().next() {
        match state {
            State::Code => {
                if let Some(b) = longest_prefix(rest, &profile.block_comment_delims, |b| &b.open) {
                    rest = &rest[b.open.len()..];
                    out.push_str(" ");
                    out.touched = true;
                    removed_comment_spans += 1;
                    state = State::BlockComment { delims: b, depth: 1 };
                } else if let Some(p) = profile
                    .line_comment_prefixes
                    .iter()
                    .filter(|p| rest.starts_with(p.as_str()))
                    .max_by_key(|p| p.len())
                {
                    rest = &rest[p.len()..];
                    out.touched = true;
                    removed_comment_spans += 1;
                    state = State::LineComment;
                } else if let Some(l) = longest_prefix(rest, &profile.string_delims, |l| &l.open) {
                    rest = &rest[l.open.len()..];
                    out.push_str(&l.open);
                    state = State::Literal {
                        delims: l,
                        replace: true,
                    };
                } else if let Some(l) = profile
                    .char_literal_delims
                    .as_ref()
                    .filter(|l| rest.starts_with(l.open.as_str()))
                {
                    rest = &rest[l.open.len()..];
                    out.push_str(&l.open);
                    state = State::Literal {
                        delims: l,
                        replace: profile.replace_char_literals,
                    };
                } else {
                    if c == '\n' {
                        out.newline();
                    } else {
                        out.current.push(c);
                    }
                    rest = &rest[c.len_utf8()..];
                }
            }
            State::LineComment => {
                if c == '\n' {
                    out.newline();
                    state = State::Code;
                }
                rest = &rest[c.len_utf8()..];
            }
            State::BlockComment { delims, depth } => {
                if rest.starts_with(delims.close.as_str()) {
                    rest = &rest[delims.close.len()..];
                    state = if depth == 1 {
                        State::Code
                    } else {
                        State::BlockComment {
                            delims,
                            depth: depth - 1,
                        }
                    };
                } else if delims.nested && rest.starts_with(delims.open.as_str()) {
                    rest = &rest[delims.open.len()..];
                    state = State::BlockComment {
                        delims,
                        depth: depth + 1,
                    };
                } else {
                    if c == '\n' {
                        out.newline();
                        out.touched = true;
                    }
                    rest = &rest[c.len_utf8()..];
                }
            }
            State::Literal { delims, replace } => {
                let (content_len, terminated) = scan_literal(rest, delims);
                let content = &rest[..content_len];
                if replace {
                    out.push_str(STRING_PLACEHOLDER);
                    replaced_literals += 1;
                } else {
                    out.push_str(content);
                }
                rest = &rest[content_len..];
                if terminated {
                    out.push_str(&delims.close);
                    rest = &rest[delims.close.len()..];
                } else {
                    issues.push(PreprocessIssue::UnterminatedString);
                }
                state = State::Code;
            }
        }
    }
    if matches!(state, State::BlockComment { .. }) {
        issues.push(PreprocessIssue::UnterminatedComment);
    }
    out.newline();

    let kept: Vec<String> = out
        .lines
        .iter()
        .zip(&out.touched_lines)
        .filter_map(|(line, touched)| {
            let norm = collapse_line(line);
            (!(norm.is_empty() && *touched)).then_some(norm)
        })
        .collect();
    let text = kept.join("\n");

    PreprocessedSource {
        text,
        original_line_count,
        replaced_literals,
        removed_comment_spans,
        issues,
    }
}

fn longest_prefix<'p, T>(rest: &str, items: &'p [T], key: impl Fn(&T) -> &String) -> Option<&'p T> {
    items
        .iter()
        .filter(|item| rest.starts_with(key(item).as_str()))
        .max_by_key(|item| key(item).len())
}

/// Length in bytes of literal content starting at `rest`, and whether the
/// close delimiter follows it.
fn scan_literal(rest: &str, delims: &LiteralDelims) -> (usize, bool) {
    let doubled = delims.escape.is_some() && delims.close.chars().next() == delims.escape;
    let mut i = 0;
    while i < rest.len() {
        let tail = &rest[i..];
        if tail.starts_with(delims.close.as_str()) {
            if doubled && tail[delims.close.len()..].starts_with(delims.close.as_str()) {
                i += 2 * delims.close.len();
                continue;
            }
            return (i, true);
        }
        let c = tail.chars().next().expect("non-empty tail");
        if !doubled && Some(c) == delims.escape {
            i += c.len_utf8();
            if let Some(next) = rest[i..].chars().next() {
                i += next.len_utf8();
            }
            continue;
        }
        if c == '\n' && !delims.multiline {
            return (i, false);
        }
        i += c.len_utf8();
    }
    (i, false)
}

fn is_inline_ws(c: char) -> bool {
    matches!(c, ' ' | '\t' | '\r' | '\x0b' | '\x0c')
}

fn collapse_line(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut pending_space = false;
    for c in line.chars() {
        if is_inline_ws(c) {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(name: &str) -> LanguageProfile {
        profile_by_name(&builtin_profiles(), name).unwrap().clone()
    }

    fn pp(name: &str, src: &str) -> String {
        preprocess(src, &profile(name)).text
    }

    #[test]
    fn builtin_profiles_are_valid() {
        for p in builtin_profiles() {
            p.validate().unwrap();
        }
    }

    #[test]
    fn extension_lookup() {
        let all = builtin_profiles();
        assert_eq!(profile_for_extension(&all, ".f90").unwrap().name, "fortran");
        assert_eq!(profile_for_extension(&all, ".ml").unwrap().name, "ocaml");
        assert_eq!(profile_for_extension(&all, "go").unwrap().name, "go");
        assert!(profile_for_extension(&all, ".xyz").is_none());
        assert_eq!(profile_for_path(&all, Path::new("x/y.c")).unwrap().name, "c");
    }

    #[test]
    fn c_block_comment_removed() {
        assert_eq!(pp("c", "int x = 1; /* note */"), "int x = 1;");
    }

    #[test]
    fn c_string_content_replaced() {
        assert_eq!(pp("c", "puts(\"hello world\");"), "puts(\"STR\");");
        assert_eq!(
            pp("c", "scanf (\"%d\", &a);"),
            "scanf (\"STR\", &a);"
        );
        assert_eq!(pp("c", r#"s = "a\"b // c";"#), r#"s = "STR";"#);
    }

    #[test]
    fn c_char_literals_are_kept_but_shield_quotes() {
        assert_eq!(pp("c", "if (c == '\"') x++; // q"), "if (c == '\"') x++;");
        let mut p = profile("c");
        p.replace_char_literals = true;
        assert_eq!(preprocess("c = 'a';", &p).text, "c = 'STR';");
    }

    #[test]
    fn ocaml_nested_comment() {
        assert_eq!(pp("ocaml", "(* a (* nested *) b *) let x = 1"), "let x = 1");
        assert_eq!(pp("ocaml", "let s = \"(* no *)\" (* yes *)"), "let s = \"STR\"");
    }

    #[test]
    fn fortran_doubled_quotes_and_bang_comments() {
        assert_eq!(
            pp("fortran", "print *, 'it''s ok' ! greet\n  x = 1"),
            "print *, 'STR'\nx = 1"
        );
        assert_eq!(pp("fortran", "s = \"say \"\"hi\"\"\""), "s = \"STR\"");
    }

    #[test]
    fn go_raw_strings_span_lines() {
        assert_eq!(pp("go", "s := `a\nb // c`\nreturn s"), "s := `STR`\nreturn s");
    }

    #[test]
    fn whitespace_collapses_within_lines_only() {
        assert_eq!(pp("c", "  int\t\tx  =  1;\n\n  return x;  "), "int x = 1;\n\nreturn x;");
    }

    #[test]
    fn blank_lines_from_comments_are_dropped() {
        let src = "int a;\n// only a comment\n/* block\n   spanning */\nint b;\n";
        assert_eq!(pp("c", src), "int a;\nint b;\n");
    }

    #[test]
    fn block_comment_keeps_line_structure() {
        assert_eq!(pp("c", "a /* x\n y */ b\nc"), "a\nb\nc");
    }

    #[test]
    fn unterminated_constructs_are_flagged() {
        let r = preprocess("x = \"open\ny = 2", &profile("c"));
        assert_eq!(r.text, "x = \"STR\ny = 2");
        assert_eq!(r.issues, vec![PreprocessIssue::UnterminatedString]);
        let r = preprocess("x /* open", &profile("c"));
        assert_eq!(r.text, "x");
        assert!(r.suspect());
        assert_eq!(r.issues, vec![PreprocessIssue::UnterminatedComment]);
    }

    #[test]
    fn counters() {
        let r = preprocess("a(\"x\", \"y\"); // c\n/* d */", &profile("c"));
        assert_eq!(r.replaced_literals, 2);
        assert_eq!(r.removed_comment_spans, 2);
        assert_eq!(r.original_line_count, 2);
    }

    #[test]
    fn idempotent_on_examples() {
        for (lang, src) in [
            ("c", "int main() { /* x */ printf(\"%d\\n\", 1); }\n"),
            ("ocaml", "let f x = (* (* *) *) x ^ \"s\"\n"),
            ("fortran", "  call foo('a''b')  ! c\n"),
            ("go", "x := `raw`  // c\n\ty := \"s\"\n"),
        ] {
            let once = pp(lang, src);
            assert_eq!(pp(lang, &once), once, "{lang}");
        }
    }

    #[test]
    fn profile_toml_roundtrip_and_validation() {
        let p = profile("go");
        assert_eq!(LanguageProfile::from_toml(&p.to_toml()).unwrap(), p);
        let bad = "name = \"x\"\nextensions = []\n";
        assert_eq!(
            LanguageProfile::from_toml(bad),
            Err(ProfileError::NoExtensions("x".into()))
        );
        let bad = "name = \"x\"\nextensions = [\".x\"]\n[[block_comment_delims]]\nopen = \"%\"\nclose = \"%\"\n";
        assert!(matches!(
            LanguageProfile::from_toml(bad),
            Err(ProfileError::SymmetricBlockComment(_))
        ));
    }

    #[test]
    fn new_language_is_data_only() {
        let lua = LanguageProfile::from_toml(
            r#"
name = "lua"
extensions = [".lua"]
line_comment_prefixes = ["--"]

[[block_comment_delims]]
open = "--[["
close = "]]"

[[string_delims]]
open = "'"
close = "'"
escape = "\\"
"#,
        )
        .unwrap();
        assert_eq!(preprocess("x = 'a' --[[ c ]] -- d", &lua).text, "x = 'STR'");
    }
}
