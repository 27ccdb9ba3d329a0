//! Byte-level BPE and character-level subword models.
//!
//! Text is pre-split into words: a run of whitespace followed by a run of
//! non-whitespace, so the space or newline in front of a word is part of the
//! word and decoding is plain concatenation. Merges never cross words.
//!
//! The seed alphabet is the 256 single bytes plus every multi-byte character
//! seen during training; characters outside it fall back to their bytes, so
//! no input ever needs `<unk>`. Any pair with a digit on either side is
//! excluded from counting, which keeps every digit a token of its own.
//!
//! Ids `0..4` are the specials `<pad>`, `<unk>`, `<s>`, `</s>`.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];
const NUM_SPECIALS: u32 = SPECIAL_TOKENS.len() as u32;
/// Specials plus the 256 single-byte tokens.
pub const BASE_VOCAB: usize = NUM_SPECIALS as usize + 256;

const FORMAT: &str = "decompkit.subword";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    Bpe,
    Char,
}

/// Which side of a translation pair a model was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Source,
    Asm,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Source => "source",
            Side::Asm => "asm",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub side: Side,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("corpus contains no text")]
    EmptyCorpus,
    #[error("target vocabulary {0} must exceed {BASE_VOCAB} in BPE mode")]
    VocabTooSmall(usize),
    #[error("token id {0} is outside the vocabulary")]
    InvalidId(u32),
    #[error("model file: {0}")]
    Corrupt(String),
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct SubwordModel {
    mode: TokenizerMode,
    side: Side,
    /// Token bytes by id; special entries hold their display names and are
    /// absent from `index`.
    vocab: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, u32>,
    merges: Vec<(u32, u32)>,
    /// pair -> (rank, merged id)
    ranks: HashMap<(u32, u32), (usize, u32)>,
}

/// Splits text into whitespace-prefixed words. Concatenating the pieces gives
/// back the input.
pub fn split_words(text: &str) -> impl Iterator<Item = &str> {
    let bytes = text.as_bytes();
    let mut pos = 0;
    std::iter::from_fn(move || {
        if pos >= bytes.len() {
            return None;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        Some(&text[start..pos])
    })
}

fn has_digit(bytes: &[u8]) -> bool {
    bytes.iter().any(u8::is_ascii_digit)
}

impl SubwordModel {
    fn with_alphabet(mode: TokenizerMode, side: Side, chars: &BTreeSet<char>) -> Self {
        let mut vocab: Vec<Vec<u8>> = SPECIAL_TOKENS.iter().map(|s| s.as_bytes().to_vec()).collect();
        let mut index = HashMap::new();
        for b in 0..=255u8 {
            index.insert(vec![b], vocab.len() as u32);
            vocab.push(vec![b]);
        }
        for c in chars {
            let bytes = c.to_string().into_bytes();
            index.insert(bytes.clone(), vocab.len() as u32);
            vocab.push(bytes);
        }
        SubwordModel {
            mode,
            side,
            vocab,
            index,
            merges: Vec::new(),
            ranks: HashMap::new(),
        }
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// Raw bytes of a token (special tokens return their display name).
    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.vocab.get(id as usize).map(Vec::as_slice)
    }

    pub fn token_id(&self, bytes: &[u8]) -> Option<u32> {
        self.index.get(bytes).copied()
    }

    /// Merges as byte strings, in training order.
    pub fn merge_strings(&self) -> Vec<(Vec<u8>, Vec<u8>)> {
        self.merges
            .iter()
            .map(|&(l, r)| (self.vocab[l as usize].clone(), self.vocab[r as usize].clone()))
            .collect()
    }

    /// Initial symbols for a word: one id per character when that character
    /// is in the alphabet, otherwise one id per byte.
    fn segment(&self, word: &str) -> Vec<u32> {
        let mut ids = Vec::with_capacity(word.len());
        let mut buf = [0u8; 4];
        for c in word.chars() {
            let bytes = c.encode_utf8(&mut buf).as_bytes();
            match self.index.get(bytes) {
                Some(&id) => ids.push(id),
                None => ids.extend(bytes.iter().map(|&b| u32::from(b) + NUM_SPECIALS)),
            }
        }
        ids
    }

    fn add_merge(&mut self, left: u32, right: u32) -> u32 {
        let mut bytes = self.vocab[left as usize].clone();
        bytes.extend_from_slice(&self.vocab[right as usize]);
        let id = match self.index.get(&bytes) {
            Some(&id) => id,
            None => {
                let id = self.vocab.len() as u32;
                self.index.insert(bytes.clone(), id);
                self.vocab.push(bytes);
                id
            }
        };
        self.ranks.insert((left, right), (self.merges.len(), id));
        self.merges.push((left, right));
        id
    }

    pub fn encode(&self, text: &str) -> TokenSeq {
        let mut ids = Vec::new();
        for word in split_words(text) {
            ids.extend(self.encode_word(word));
        }
        TokenSeq { ids, side: self.side }
    }

    pub fn encode_len(&self, text: &str) -> usize {
        split_words(text).map(|w| self.encode_word(w).len()).sum()
    }

    fn encode_word(&self, word: &str) -> Vec<u32> {
        let mut symbols = self.segment(word);
        if self.mode == TokenizerMode::Char || self.merges.is_empty() {
            return symbols;
        }
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&(rank, id)| (rank, (w[0], w[1]), id)))
                .min_by_key(|&(rank, _, _)| rank);
            let Some((_, pair, id)) = best else { break };
            symbols = merge_pair(&symbols, pair, id);
        }
        symbols
    }

    /// Concatenates token bytes; special ids contribute nothing.
    pub fn decode(&self, seq: &TokenSeq) -> Result<String, TokenizerError> {
        self.decode_ids(&seq.ids)
    }

    pub fn decode_ids(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut bytes = Vec::new();
        for &id in ids {
            let tok = self.vocab.get(id as usize).ok_or(TokenizerError::InvalidId(id))?;
            if id >= NUM_SPECIALS {
                bytes.extend_from_slice(tok);
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// True when no non-special token holds a digit next to anything else.
    pub fn digits_are_atomic(&self) -> bool {
        self.vocab
            .iter()
            .skip(NUM_SPECIALS as usize)
            .all(|t| !has_digit(t) || (t.len() == 1 && t[0].is_ascii_digit()))
    }

    pub fn to_file(&self) -> ModelFile {
        let map = ByteMap::new();
        let mut vocab: Vec<String> = SPECIAL_TOKENS.iter().map(|s| (*s).to_owned()).collect();
        vocab.extend(self.vocab[NUM_SPECIALS as usize..].iter().map(|t| map.encode(t)));
        let merges = self
            .merges
            .iter()
            .map(|&(l, r)| [map.encode(&self.vocab[l as usize]), map.encode(&self.vocab[r as usize])])
            .collect();
        ModelFile {
            format: FORMAT.to_owned(),
            version: FORMAT_VERSION,
            mode: self.mode,
            side: self.side,
            specials: SPECIAL_TOKENS.iter().map(|s| (*s).to_owned()).collect(),
            vocab,
            merges,
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self, TokenizerError> {
        let corrupt = |m: String| TokenizerError::Corrupt(m);
        if file.format != FORMAT {
            return Err(corrupt(format!("unknown format {:?}", file.format)));
        }
        if file.version != FORMAT_VERSION {
            return Err(TokenizerError::Version(file.version));
        }
        if file.specials.len() != SPECIAL_TOKENS.len()
            || file.specials.iter().zip(SPECIAL_TOKENS).any(|(a, b)| a != b)
            || file.vocab.len() < BASE_VOCAB
            || file.vocab[..NUM_SPECIALS as usize] != file.specials[..]
        {
            return Err(corrupt("special tokens do not match".into()));
        }
        let map = ByteMap::new();
        let mut tokens = Vec::with_capacity(file.vocab.len());
        for s in &file.vocab[NUM_SPECIALS as usize..] {
            tokens.push(map.decode(s).ok_or_else(|| corrupt(format!("undecodable token {s:?}")))?);
        }
        for (b, tok) in tokens.iter().take(256).enumerate() {
            if tok.as_slice() != [b as u8] {
                return Err(corrupt(format!("byte alphabet entry {b} is wrong")));
            }
        }
        // Alphabet entries past the bytes are single characters; everything
        // after them must be produced by a merge.
        let alphabet_end = tokens
            .iter()
            .skip(256)
            .position(|t| std::str::from_utf8(t).map_or(true, |s| s.chars().count() != 1 || s.len() == 1))
            .map_or(tokens.len(), |p| p + 256);
        let chars: BTreeSet<char> = tokens[256..alphabet_end]
            .iter()
            .map(|t| std::str::from_utf8(t).expect("checked").chars().next().expect("checked"))
            .collect();
        if chars.len() != alphabet_end - 256 {
            return Err(corrupt("alphabet is not sorted and unique".into()));
        }
        let mut model = SubwordModel::with_alphabet(file.mode, file.side, &chars);
        if model.vocab.len() != NUM_SPECIALS as usize + alphabet_end
            || model.vocab[NUM_SPECIALS as usize..] != tokens[..alphabet_end]
        {
            return Err(corrupt("alphabet is not in canonical order".into()));
        }
        if file.mode == TokenizerMode::Char && (!file.merges.is_empty() || alphabet_end != tokens.len()) {
            return Err(corrupt("character model with merges".into()));
        }
        for [l, r] in &file.merges {
            let lb = map.decode(l).ok_or_else(|| corrupt(format!("undecodable merge {l:?}")))?;
            let rb = map.decode(r).ok_or_else(|| corrupt(format!("undecodable merge {r:?}")))?;
            let (Some(&li), Some(&ri)) = (model.index.get(&lb), model.index.get(&rb)) else {
                return Err(corrupt(format!("merge ({l:?}, {r:?}) uses unknown tokens")));
            };
            if model.ranks.contains_key(&(li, ri)) {
                return Err(corrupt(format!("duplicate merge ({l:?}, {r:?})")));
            }
            model.add_merge(li, ri);
        }
        if model.vocab[NUM_SPECIALS as usize..] != tokens[..] {
            return Err(corrupt("vocabulary does not match the merge list".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        let mut text = serde_json::to_string_pretty(&self.to_file()).expect("model serializes");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, TokenizerError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| TokenizerError::Corrupt(e.to_string()))?;
        Self::from_file(file)
    }
}

fn merge_pair(symbols: &[u32], pair: (u32, u32), id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && (symbols[i], symbols[i + 1]) == pair {
            out.push(id);
            i += 2;
        } else {
            out.push(symbols[i]);
            i += 1;
        }
    }
    out
}

/// Serialized form of a [`SubwordModel`]. Token strings use the byte-to-
/// printable-character mapping common to byte-level BPE files (space is
/// `Ġ`, newline is `Ċ`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub mode: TokenizerMode,
    pub side: Side,
    pub specials: Vec<String>,
    pub vocab: Vec<String>,
    pub merges: Vec<[String; 2]>,
}

struct ByteMap {
    to_char: [char; 256],
    to_byte: HashMap<char, u8>,
}

impl ByteMap {
    fn new() -> Self {
        let mut to_char = ['\0'; 256];
        let mut n = 0u32;
        for b in 0..=255u8 {
            let printable = (b'!'..=b'~').contains(&b) || (0xa1..=0xac).contains(&b) || b >= 0xae;
            to_char[b as usize] = if printable {
                char::from(b)
            } else {
                n += 1;
                char::from_u32(255 + n).expect("valid code point")
            };
        }
        let to_byte = to_char.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
        ByteMap { to_char, to_byte }
    }

    fn encode(&self, bytes: &[u8]) -> String {
        bytes.iter().map(|&b| self.to_char[b as usize]).collect()
    }

    fn decode(&self, s: &str) -> Option<Vec<u8>> {
        s.chars().map(|c| self.to_byte.get(&c).copied()).collect()
    }
}

#[derive(Clone, PartialEq, Eq)]
struct Candidate {
    count: u64,
    left: Vec<u8>,
    right: Vec<u8>,
    pair: (u32, u32),
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| other.left.cmp(&self.left))
            .then_with(|| other.right.cmp(&self.right))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Trainer {
    model: SubwordModel,
    words: Vec<(Vec<u32>, u64)>,
    digit: Vec<bool>,
    counts: HashMap<(u32, u32), u64>,
    occurs: HashMap<(u32, u32), HashSet<usize>>,
    heap: BinaryHeap<Candidate>,
}

impl Trainer {
    fn countable(&self, pair: (u32, u32)) -> bool {
        !self.digit[pair.0 as usize] && !self.digit[pair.1 as usize]
    }

    fn candidate(&self, pair: (u32, u32), count: u64) -> Candidate {
        Candidate {
            count,
            left: self.model.vocab[pair.0 as usize].clone(),
            right: self.model.vocab[pair.1 as usize].clone(),
            pair,
        }
    }

    fn init_counts(&mut self) {
        for (wi, (symbols, freq)) in self.words.iter().enumerate() {
            for w in symbols.windows(2) {
                let pair = (w[0], w[1]);
                if self.digit[pair.0 as usize] || self.digit[pair.1 as usize] {
                    continue;
                }
                *self.counts.entry(pair).or_insert(0) += freq;
                self.occurs.entry(pair).or_default().insert(wi);
            }
        }
        let mut pairs: Vec<_> = self.counts.iter().map(|(&p, &c)| (p, c)).collect();
        pairs.sort_unstable();
        for (pair, count) in pairs {
            let cand = self.candidate(pair, count);
            self.heap.push(cand);
        }
    }

    fn next_merge(&mut self) -> Option<(u32, u32)> {
        while let Some(top) = self.heap.pop() {
            let current = self.counts.get(&top.pair).copied().unwrap_or(0);
            if current != top.count {
                if current > 0 {
                    let cand = self.candidate(top.pair, current);
                    self.heap.push(cand);
                }
                continue;
            }
            return (current >= 2).then_some(top.pair);
        }
        None
    }

    fn apply(&mut self, pair: (u32, u32), id: u32) {
        let mut affected: Vec<usize> = self.occurs.remove(&pair).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        let mut touched: BTreeSet<(u32, u32)> = BTreeSet::new();
        for wi in affected {
            let (symbols, freq) = &self.words[wi];
            if !symbols.windows(2).any(|w| (w[0], w[1]) == pair) {
                continue;
            }
            let freq = *freq;
            let merged = merge_pair(symbols, pair, id);
            let old = symbols.clone();
            for w in old.windows(2) {
                let p = (w[0], w[1]);
                if self.countable(p) {
                    let c = self.counts.get_mut(&p).expect("counted pair");
                    *c -= freq;
                    touched.insert(p);
                }
            }
            for w in merged.windows(2) {
                let p = (w[0], w[1]);
                if self.countable(p) {
                    *self.counts.entry(p).or_insert(0) += freq;
                    self.occurs.entry(p).or_default().insert(wi);
                    touched.insert(p);
                }
            }
            self.words[wi].0 = merged;
        }
        for p in touched {
            let c = self.counts.get(&p).copied().unwrap_or(0);
            if c == 0 {
                self.counts.remove(&p);
                self.occurs.remove(&p);
            } else if p != pair {
                let cand = self.candidate(p, c);
                self.heap.push(cand);
            }
        }
        self.counts.remove(&pair);
    }
}

/// Counts whitespace-prefixed words over the corpus.
fn word_counts<I, S>(corpus: I) -> HashMap<String, u64>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, u64> = HashMap::new();
    for text in corpus {
        for w in split_words(text.as_ref()) {
            match counts.get_mut(w) {
                Some(c) => *c += 1,
                None => {
                    counts.insert(w.to_owned(), 1);
                }
            }
        }
    }
    counts
}

/// Trains a model on `corpus`. In BPE mode merges continue until the
/// vocabulary reaches `target_vocab` or no countable pair occurs twice.
pub fn train<I, S>(corpus: I, target_vocab: usize, mode: TokenizerMode, side: Side) -> Result<SubwordModel, TokenizerError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if mode == TokenizerMode::Bpe && target_vocab <= BASE_VOCAB {
        return Err(TokenizerError::VocabTooSmall(target_vocab));
    }
    let counts = word_counts(corpus);
    if counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let chars: BTreeSet<char> = counts.keys().flat_map(|w| w.chars()).filter(|c| !c.is_ascii()).collect();
    let model = SubwordModel::with_alphabet(mode, side, &chars);
    if mode == TokenizerMode::Char {
        return Ok(model);
    }

    let mut words: Vec<(&String, u64)> = counts.iter().map(|(w, &c)| (w, c)).collect();
    words.sort_unstable();
    let words = words.into_iter().map(|(w, c)| (model.segment(w), c)).collect();
    let digit = model.vocab.iter().enumerate().map(|(i, t)| i >= NUM_SPECIALS as usize && has_digit(t)).collect();
    let mut trainer = Trainer {
        model,
        words,
        digit,
        counts: HashMap::new(),
        occurs: HashMap::new(),
        heap: BinaryHeap::new(),
    };
    trainer.init_counts();
    while trainer.model.vocab.len() < target_vocab {
        let Some(pair) = trainer.next_merge() else { break };
        let id = trainer.model.add_merge(pair.0, pair.1);
        if id as usize == trainer.digit.len() {
            let d = has_digit(&trainer.model.vocab[id as usize]);
            trainer.digit.push(d);
        }
        trainer.apply(pair, id);
    }
    Ok(trainer.model)
}

/// Mean number of characters covered by one token over `texts`.
pub fn chars_per_token<I, S>(model: &SubwordModel, texts: I) -> f64
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let (mut chars, mut tokens) = (0usize, 0usize);
    for t in texts {
        let t = t.as_ref();
        chars += t.chars().count();
        tokens += model.encode_len(t);
    }
    if tokens == 0 {
        0.0
    } else {
        chars as f64 / tokens as f64
    }
}
