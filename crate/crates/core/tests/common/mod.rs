//! Independent oracles and fixture helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use decompkit::dataset::Batch;
use rand::seq::IndexedRandom;
use rand::Rng;

pub fn fixture_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus")
}

/// `expected.toml`: source path -> (symbol -> definition line).
pub fn expected_definitions() -> BTreeMap<String, BTreeMap<String, u32>> {
    let text = std::fs::read_to_string(fixture_root().join("expected.toml")).expect("expected.toml");
    toml::from_str(&text).expect("expected.toml parses")
}

// ---------------------------------------------------------------------------
// Preprocessing oracle: snippets are generated segment by segment, and the
// expected output is assembled alongside from what each segment must become.

pub struct Snippet {
    pub input: String,
    pub expected: String,
}

#[derive(Default)]
struct Builder {
    input: String,
    lines: Vec<(String, bool)>,
    cur: String,
    touched: bool,
}

impl Builder {
    fn emit(&mut self, input: &str, expected: &str) {
        self.input.push_str(input);
        self.cur.push_str(expected);
    }

    fn newline(&mut self) {
        self.input.push('\n');
        self.lines.push((std::mem::take(&mut self.cur), self.touched));
        self.touched = false;
    }

    fn line_comment(&mut self, text: &str) {
        self.input.push_str(text);
        self.touched = true;
    }

    /// A block comment whose body is `parts` joined by newlines.
    fn block_comment(&mut self, open: &str, parts: &[String], close: &str) {
        self.input.push_str(open);
        self.input.push_str(&parts.join("\n"));
        self.input.push_str(close);
        self.cur.push(' ');
        self.touched = true;
        for _ in 1..parts.len() {
            self.lines.push((std::mem::take(&mut self.cur), true));
        }
    }

    fn finish(mut self) -> Snippet {
        self.lines.push((self.cur, self.touched));
        let kept: Vec<String> = self
            .lines
            .into_iter()
            .filter_map(|(line, touched)| {
                let norm = line.split([' ', '\t']).filter(|w| !w.is_empty()).collect::<Vec<_>>().join(" ");
                (!(norm.is_empty() && touched)).then_some(norm)
            })
            .collect();
        Snippet {
            input: self.input,
            expected: kept.join("\n"),
        }
    }
}

fn ws<R: Rng>(rng: &mut R, min: usize) -> String {
    let n = rng.random_range(min..=3);
    (0..n).map(|_| if rng.random_bool(0.7) { ' ' } else { '\t' }).collect()
}

fn pick<'a, R: Rng>(rng: &mut R, items: &[&'a str]) -> &'a str {
    items.choose(rng).expect("non-empty")
}

fn content<R: Rng>(rng: &mut R, pieces: &[&str], max: usize) -> String {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| pick(rng, pieces)).collect()
}

struct Grammar {
    words: &'static [&'static str],
    /// (open, close, content pieces)
    strings: &'static [(&'static str, &'static str, &'static [&'static str])],
    multiline_string: Option<(&'static str, &'static [&'static str])>,
    chars: &'static [&'static str],
    line_comment: Option<&'static str>,
    block: Option<(&'static str, &'static str, bool)>,
    comment_text: &'static [&'static str],
}

const C_WORDS: &[&str] = &[
    "x", "y1", "foo", "bar_2", "=", "+", "-", "<", ">", "(", ")", "{", "}", ";", ",", "0", "42", "3.5", "&", "*", "[",
    "]", "if", "return", "#include", "<stdio.h>", "p->q",
];
const BACKSLASH_PIECES: &[&str] = &["a", "b", "z", " ", "//", "/*", "(*", "*)", "!", "'", "\\\"", "\\\\", "\\n", "\t", "7"];
const COMMENT_TEXT: &[&str] = &["a", "note", " ", "\"", "'", "!", "x = 1;", "\t", "9"];

fn grammar(language: &str) -> Grammar {
    match language {
        "c" => Grammar {
            words: C_WORDS,
            strings: &[("\"", "\"", BACKSLASH_PIECES)],
            multiline_string: None,
            chars: &["'a'", "'\"'", "'\\''", "'/'", "'\\n'", "'*'"],
            line_comment: Some("//"),
            block: Some(("/*", "*/", false)),
            comment_text: COMMENT_TEXT,
        },
        "go" => Grammar {
            words: &["sum", ":=", "range", "arr", "_", "for", "{", "}", "+=", "0", "12", "fmt.Println", "(", ")", "*", "&"],
            strings: &[("\"", "\"", BACKSLASH_PIECES)],
            multiline_string: Some(("`", &["a", " ", "\"", "//", "/*", "\\", "\t", "\n", "'"])),
            chars: &["'a'", "'\\''", "'\"'", "'`'"],
            line_comment: Some("//"),
            block: Some(("/*", "*/", false)),
            comment_text: COMMENT_TEXT,
        },
        "fortran" => Grammar {
            words: &["integer", "::", "x", "=", "call", "foo", "(", ")", "1", "2.0d0", ",", "*", "/", "end", "do", "i"],
            strings: &[
                ("'", "'", &["a", "b", " ", "!", "\"", "''", "\t", "3"]),
                ("\"", "\"", &["a", "b", " ", "!", "'", "\"\"", "\t", "3"]),
            ],
            multiline_string: None,
            chars: &[],
            line_comment: Some("!"),
            block: None,
            comment_text: COMMENT_TEXT,
        },
        "ocaml" => Grammar {
            words: &["let", "x", "=", "in", "fun", "->", "(", ")", "1", "+", ";;", "match", "with", "|", "List.map", "'a"],
            strings: &[],
            multiline_string: Some(("\"", &["a", " ", "\\\"", "\\\\", "(*", "*)", "\n", "\t", "'"])),
            chars: &[],
            line_comment: None,
            block: Some(("(*", "*)", true)),
            comment_text: &["a", "note", " ", "!", "x = 1", "\t", "9", "/"],
        },
        other => panic!("no grammar for {other}"),
    }
}

fn block_body<R: Rng>(rng: &mut R, g: &Grammar, depth: u32, allow_newlines: bool) -> Vec<String> {
    let (open, close, nested) = g.block.expect("block comments");
    let mut parts = vec![String::new()];
    for _ in 0..rng.random_range(0..4) {
        let roll = rng.random_range(0..10);
        if roll < 6 {
            parts.last_mut().unwrap().push_str(pick(rng, g.comment_text));
        } else if roll < 8 && allow_newlines {
            parts.push(String::new());
        } else if nested && depth < 3 {
            let inner = block_body(rng, g, depth + 1, allow_newlines);
            let last = parts.last_mut().unwrap();
            last.push_str(open);
            last.push_str(&inner[0]);
            for p in &inner[1..] {
                parts.push(p.clone());
            }
            parts.last_mut().unwrap().push_str(close);
        }
    }
    parts
}

/// One random snippet in `language` together with its exact preprocessed
/// form.
pub fn snippet<R: Rng>(rng: &mut R, language: &str) -> Snippet {
    let g = grammar(language);
    let mut b = Builder::default();
    let lines = rng.random_range(1..=8);
    for li in 0..lines {
        if li > 0 {
            b.newline();
        }
        let lead = ws(rng, 0);
        b.emit(&lead, &lead);
        if rng.random_bool(0.1) {
            continue;
        }
        for _ in 0..rng.random_range(0..=6) {
            let gap = ws(rng, 1);
            b.emit(&gap, &gap);
            let roll = rng.random_range(0..100);
            if roll < 50 || (roll < 65 && g.strings.is_empty() && g.multiline_string.is_none()) {
                let w = pick(rng, g.words);
                b.emit(w, w);
            } else if roll < 65 && !g.strings.is_empty() {
                let (open, close, pieces) = *g.strings.choose(rng).unwrap();
                let body = content(rng, pieces, 5);
                b.emit(&format!("{open}{body}{close}"), &format!("{open}STR{close}"));
            } else if let Some((delim, pieces)) = g.multiline_string.filter(|_| roll < 72) {
                let body = content(rng, pieces, 6);
                b.emit(&format!("{delim}{body}{delim}"), &format!("{delim}STR{delim}"));
            } else if roll < 80 && !g.chars.is_empty() {
                let c = pick(rng, g.chars);
                b.emit(c, c);
            } else if let Some((open, close, _)) = g.block.filter(|_| roll < 92) {
                let multiline = rng.random_bool(0.3);
                let body = block_body(rng, &g, 1, multiline);
                b.block_comment(open, &body, close);
            } else {
                let w = pick(rng, g.words);
                b.emit(w, w);
            }
        }
        let trail = ws(rng, 0);
        b.emit(&trail, &trail);
        if let Some(prefix) = g.line_comment {
            if rng.random_bool(0.25) {
                let text = format!("{prefix}{}", content(rng, g.comment_text, 4));
                b.line_comment(&text);
            }
        }
    }
    if rng.random_bool(0.2) {
        b.newline();
    }
    b.finish()
}

// ---------------------------------------------------------------------------
// BPE oracle: recounts every pair from scratch on each iteration.

fn oracle_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    let mut in_ws = true;
    for c in text.chars() {
        let is_ws = c.is_ascii_whitespace();
        if is_ws && !in_ws {
            words.push(std::mem::take(&mut cur));
        }
        in_ws = is_ws;
        cur.push(c);
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

type Pair = (Vec<u8>, Vec<u8>);

/// Merge list an exhaustive trainer produces on an ASCII corpus.
pub fn bpe_oracle(corpus: &[String], target_vocab: usize) -> Vec<Pair> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for line in corpus {
        assert!(line.is_ascii(), "oracle handles ASCII corpora only");
        for w in oracle_words(line) {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<Vec<u8>>, u64)> =
        counts.into_iter().map(|(w, c)| (w.bytes().map(|b| vec![b]).collect(), c)).collect();
    let mut vocab: HashSet<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    let specials = 4;
    let mut merges = Vec::new();
    let digit = |t: &[u8]| t.iter().any(u8::is_ascii_digit);
    while vocab.len() + specials < target_vocab {
        let mut pair_counts: BTreeMap<(Vec<u8>, Vec<u8>), u64> = BTreeMap::new();
        for (syms, c) in &words {
            for w in syms.windows(2) {
                if digit(&w[0]) || digit(&w[1]) {
                    continue;
                }
                *pair_counts.entry((w[0].clone(), w[1].clone())).or_default() += c;
            }
        }
        let mut best: Option<(&Pair, u64)> = None;
        for (p, &c) in &pair_counts {
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((p, c));
            }
        }
        let Some(((l, r), c)) = best else { break };
        if c < 2 {
            break;
        }
        let (l, r) = (l.clone(), r.clone());
        let joined: Vec<u8> = [l.clone(), r.clone()].concat();
        vocab.insert(joined.clone());
        for (syms, _) in &mut words {
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    out.push(joined.clone());
                    i += 2;
                } else {
                    out.push(syms[i].clone());
                    i += 1;
                }
            }
            *syms = out;
        }
        merges.push((l, r));
    }
    merges
}

/// Small corpora with plenty of repeated and tied pairs.
pub fn tiny_corpora() -> Vec<Vec<String>> {
    use rand::SeedableRng;
    let mut out: Vec<Vec<String>> = vec![
        vec!["low lower lowest newer newest wider widest".into(); 3],
        vec!["aaaa aaa aa a".into(), "abab baba".into()],
        vec!["x1 x12 x123 y2y2 22 333".into(), "x1 x12".into()],
        vec!["movl %eax, -4(%rbp)".into(), "movl -4(%rbp), %eax".into(), "addl $1, %eax".into()],
    ];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    while out.len() < 10 {
        let alphabet = ["a", "b", "c", "ab", "ba", "1", "2", " ", "  ", "\n", "_", "%"];
        let lines = (0..rng.random_range(2..6)).map(|_| content(&mut rng, &alphabet, 40)).collect();
        out.push(lines);
    }
    for c in &out {
        assert!(c.iter().map(String::len).sum::<usize>() <= 1024);
    }
    out
}

// ---------------------------------------------------------------------------

/// Textbook full-matrix Levenshtein distance.
pub fn dp_oracle(a: &[u32], b: &[u32]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

/// Checks every batching invariant; returns the first violation.
pub fn check_batches(samples: &[(String, usize)], max_tokens: usize, batches: &[Batch]) -> Result<(), String> {
    let lens: BTreeMap<&str, usize> = samples.iter().map(|(id, l)| (id.as_str(), *l)).collect();
    let mut seen: Vec<&str> = Vec::new();
    for b in batches {
        if b.sample_ids.is_empty() {
            return Err("empty batch".into());
        }
        let max = b.sample_ids.iter().map(|id| lens[id.as_str()]).max().unwrap();
        if max != b.max_len_in_batch {
            return Err(format!("max_len {} != {max}", b.max_len_in_batch));
        }
        if b.padded_token_cost != b.sample_ids.len() * max {
            return Err("cost formula".into());
        }
        let over = b.padded_token_cost > max_tokens;
        if over && !(b.sample_ids.len() == 1 && b.over_long) {
            return Err(format!("cost {} exceeds {max_tokens}", b.padded_token_cost));
        }
        if b.over_long != (b.sample_ids.len() == 1 && max > max_tokens) {
            return Err("over_long flag".into());
        }
        seen.extend(b.sample_ids.iter().map(String::as_str));
    }
    let mut want: Vec<&str> = samples.iter().map(|(id, _)| id.as_str()).collect();
    want.sort_unstable();
    seen.sort_unstable();
    if want != seen {
        return Err("samples not conserved".into());
    }
    Ok(())
}

/// A random line with no tabs, no repeated spaces and no edge whitespace.
pub fn normalized_line<R: Rng>(rng: &mut R) -> String {
    let pieces = [
        "a", "Z", "_", "0", "7", "42", "(", ")", "{", "}", ";", "%", "$", "-", ".", ",", "\"STR\"", "é", "λ", "→", "中",
        "movq", "int", "::",
    ];
    let n = rng.random_range(1..20);
    let mut words = Vec::with_capacity(n);
    for _ in 0..n {
        words.push(content(rng, &pieces, 4));
    }
    words.retain(|w| !w.is_empty());
    words.join(" ")
}
