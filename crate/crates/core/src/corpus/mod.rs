//! Parallel text, word alignments and vocabularies.

mod vocab;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub use vocab::{
    build_char_vocab, build_word_vocab, decode_word_chars, encode_sentence, encode_word_chars,
    eos_word_chars, Vocab, VocabKind, EOS, EOS_CHAR, EOW, PAD, RESERVED_COUNT, SOS, SOW, UNK,
    UNK_CHAR,
};

use crate::error::{Error, Result};

/// Target word index → aligned source word index, both 0-based over the
/// real words (sentence markers excluded).
pub type Alignment = BTreeMap<usize, usize>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub alignment: Option<Alignment>,
}

impl SentencePair {
    pub fn new(source: &str, target: &str) -> Self {
        Self {
            source: source.split(' ').map(str::to_string).collect(),
            target: target.split(' ').map(str::to_string).collect(),
            alignment: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusLimits {
    pub max_word_len: usize,
    pub max_sent_len: usize,
}

impl Default for CorpusLimits {
    fn default() -> Self {
        Self {
            max_word_len: 64,
            max_sent_len: 128,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
}

impl ParallelCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &[String]> {
        self.pairs.iter().map(|p| p.source.as_slice())
    }

    pub fn targets(&self) -> impl Iterator<Item = &[String]> {
        self.pairs.iter().map(|p| p.target.as_slice())
    }
}

fn read_utf8(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    String::from_utf8(bytes).map_err(|e| {
        let line = 1 + e.as_bytes()[..e.utf8_error().valid_up_to()]
            .iter()
            .filter(|&&b| b == b'\n')
            .count();
        Error::data(path, line, "invalid UTF-8")
    })
}

/// Splits one pre-tokenized line into words, enforcing the length limits.
pub fn tokenize_line(line: &str, limits: CorpusLimits) -> std::result::Result<Vec<String>, String> {
    if line.is_empty() {
        return Err("empty sentence".into());
    }
    let words: Vec<String> = line.split(' ').map(str::to_string).collect();
    if words.iter().any(String::is_empty) {
        return Err("words must be separated by single spaces".into());
    }
    if words.len() > limits.max_sent_len {
        return Err(format!(
            "sentence has {} words, limit is {}",
            words.len(),
            limits.max_sent_len
        ));
    }
    if let Some(w) = words.iter().find(|w| w.chars().count() > limits.max_word_len) {
        return Err(format!(
            "word {w:?} exceeds {} characters",
            limits.max_word_len
        ));
    }
    Ok(words)
}

fn parse_side(path: &Path, text: &str, limits: CorpusLimits) -> Result<Vec<Vec<String>>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| tokenize_line(l, limits).map_err(|m| Error::data(path, i + 1, m)))
        .collect()
}

/// Reads two line-aligned, space-tokenized UTF-8 files.
pub fn load_parallel(src_path: &Path, tgt_path: &Path, limits: CorpusLimits) -> Result<ParallelCorpus> {
    let src = read_utf8(src_path)?;
    let tgt = read_utf8(tgt_path)?;
    let src = parse_side(src_path, &src, limits)?;
    let tgt = parse_side(tgt_path, &tgt, limits)?;
    if src.len() != tgt.len() {
        return Err(Error::data(
            tgt_path,
            tgt.len().min(src.len()) + 1,
            format!("line count mismatch: {} source vs {} target", src.len(), tgt.len()),
        ));
    }
    if src.is_empty() {
        return Err(Error::Empty("empty corpus".into()));
    }
    Ok(ParallelCorpus {
        pairs: src
            .into_iter()
            .zip(tgt)
            .map(|(source, target)| SentencePair {
                source,
                target,
                alignment: None,
            })
            .collect(),
    })
}

/// Parses one Pharaoh line ("i-j" = source i, target j) and keeps only target
/// words with exactly one link.
pub fn parse_alignment_line(line: &str, n_src: usize, n_tgt: usize) -> std::result::Result<Alignment, String> {
    let mut links: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for tok in line.split_whitespace() {
        let (i, j) = tok
            .split_once('-')
            .ok_or_else(|| format!("malformed alignment token {tok:?}"))?;
        let i: usize = i.parse().map_err(|_| format!("malformed alignment token {tok:?}"))?;
        let j: usize = j.parse().map_err(|_| format!("malformed alignment token {tok:?}"))?;
        if i >= n_src || j >= n_tgt {
            return Err(format!(
                "alignment {i}-{j} out of range for {n_src}x{n_tgt} pair"
            ));
        }
        links.entry(j).or_default().push(i);
    }
    Ok(links
        .into_iter()
        .filter_map(|(j, srcs)| match srcs.as_slice() {
            [i] => Some((j, *i)),
            _ => None,
        })
        .collect())
}

pub fn load_alignments(path: &Path, mut corpus: ParallelCorpus) -> Result<ParallelCorpus> {
    let text = read_utf8(path)?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != corpus.len() {
        return Err(Error::data(
            path,
            lines.len().min(corpus.len()) + 1,
            format!(
                "line count mismatch: {} alignment lines for {} pairs",
                lines.len(),
                corpus.len()
            ),
        ));
    }
    for (k, (line, pair)) in lines.iter().zip(corpus.pairs.iter_mut()).enumerate() {
        let map = parse_alignment_line(line, pair.source.len(), pair.target.len())
            .map_err(|m| Error::data(path, k + 1, m))?;
        pair.alignment = Some(map);
    }
    Ok(corpus)
}

/// Simple (one-to-one) Unicode lowercase mapping.
pub fn lowercase_char(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

pub fn lowercase_word(w: &str) -> String {
    w.chars().map(lowercase_char).collect()
}

/// Lowercases both sides. Only the word-level baseline uses this; the
/// character model trains on true case.
pub fn lowercase_transform(mut corpus: ParallelCorpus) -> ParallelCorpus {
    for pair in &mut corpus.pairs {
        for w in pair.source.iter_mut().chain(pair.target.iter_mut()) {
            *w = lowercase_word(w);
        }
    }
    corpus
}
