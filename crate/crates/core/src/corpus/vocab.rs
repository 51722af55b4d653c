use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabKind {
    Word,
    Char,
}

pub const RESERVED_COUNT: usize = 4;

pub const SOS: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;
/// Reserved word id that is never produced by encoding.
pub const PAD: usize = 3;

pub const SOW: usize = 0;
pub const EOW: usize = 1;
pub const UNK_CHAR: usize = 2;
/// The end-of-sentence marker spelled as a character: the target word
/// `EOS` is the one-character sequence `[EOS_CHAR]`.
pub const EOS_CHAR: usize = 3;

const WORD_RESERVED: [&str; RESERVED_COUNT] = ["<s>", "</s>", "<unk>", "<pad>"];
const CHAR_RESERVED: [&str; RESERVED_COUNT] = ["<w>", "</w>", "<unk>", "</s>"];

/// Bidirectional token ↔ id map. Ids `0..4` are reserved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    kind: VocabKind,
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    fn reserved(kind: VocabKind) -> &'static [&'static str; RESERVED_COUNT] {
        match kind {
            VocabKind::Word => &WORD_RESERVED,
            VocabKind::Char => &CHAR_RESERVED,
        }
    }

    /// Builds a vocabulary from the non-reserved tokens, in the given order.
    pub fn from_tokens<I, S>(kind: VocabKind, tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = Self::reserved(kind).iter().map(|s| s.to_string()).collect();
        let mut index = HashMap::new();
        for tok in tokens {
            let tok = tok.into();
            if tok.is_empty() {
                return Err(Error::Invalid("empty vocabulary token".into()));
            }
            if kind == VocabKind::Char && tok.chars().count() != 1 {
                return Err(Error::Invalid(format!(
                    "character vocabulary token {tok:?} is not a single character"
                )));
            }
            if Self::reserved(kind).contains(&tok.as_str()) || index.contains_key(&tok) {
                return Err(Error::Invalid(format!("duplicate vocabulary token {tok:?}")));
            }
            index.insert(tok.clone(), all.len());
            all.push(tok);
        }
        Ok(Self {
            kind,
            tokens: all,
            index,
        })
    }

    /// Rebuilds the lookup index after deserialization.
    pub(crate) fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .skip(RESERVED_COUNT)
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED_COUNT
    }

    pub fn unk(&self) -> usize {
        UNK
    }

    /// Id of a regular token; `None` when it is out of vocabulary.
    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn char_id(&self, c: char) -> usize {
        let mut buf = [0u8; 4];
        self.id(c.encode_utf8(&mut buf))
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn regular_tokens(&self) -> &[String] {
        &self.tokens[RESERVED_COUNT..]
    }

    /// One token per line; line `k` holds id `k + 4`.
    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in self.regular_tokens() {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read_file(path: &Path, kind: VocabKind) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let text = String::from_utf8(bytes)
            .map_err(|e| Error::data(path, 0, format!("invalid UTF-8: {e}")))?;
        Self::from_tokens(kind, text.lines().map(str::to_string))
            .map_err(|e| Error::data(path, 0, e.to_string()))
    }
}

/// Word vocabulary over all tokens seen at least `min_count` times, most
/// frequent first, ties broken lexicographically.
pub fn build_word_vocab<'a, I>(sentences: I, min_count: usize) -> Vocab
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for sent in sentences {
        for w in sent {
            *counts.entry(w.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(w, c)| c >= min_count.max(1) && !WORD_RESERVED.contains(&w))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocab::from_tokens(VocabKind::Word, kept.into_iter().map(|(w, _)| w))
        .expect("filtered tokens are unique and non-reserved")
}

/// Character vocabulary containing every character on one corpus side,
/// in code point order.
pub fn build_char_vocab<'a, I>(sentences: I) -> Vocab
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut chars: Vec<char> = sentences
        .into_iter()
        .flat_map(|s| s.iter())
        .flat_map(|w| w.chars())
        .collect();
    chars.sort_unstable();
    chars.dedup();
    Vocab::from_tokens(VocabKind::Char, chars.into_iter().map(String::from))
        .expect("deduplicated single characters")
}

/// `[SOS] + word ids + [EOS]`; unknown words map to UNK.
pub fn encode_sentence<S: AsRef<str>>(words: &[S], vocab: &Vocab) -> Vec<usize> {
    debug_assert_eq!(vocab.kind(), VocabKind::Word);
    let mut ids = Vec::with_capacity(words.len() + 2);
    ids.push(SOS);
    ids.extend(words.iter().map(|w| vocab.id(w.as_ref())));
    ids.push(EOS);
    ids
}

/// `[SOW] + char ids + [EOW]`; unseen characters map to UNK.
pub fn encode_word_chars(word: &str, vocab: &Vocab, max_word_len: usize) -> Result<Vec<usize>> {
    debug_assert_eq!(vocab.kind(), VocabKind::Char);
    let n = word.chars().count();
    if n > max_word_len {
        return Err(Error::Invalid(format!(
            "word {word:?} has {n} characters, limit is {max_word_len}"
        )));
    }
    let mut ids = Vec::with_capacity(n + 2);
    ids.push(SOW);
    ids.extend(word.chars().map(|c| vocab.char_id(c)));
    ids.push(EOW);
    Ok(ids)
}

/// Character spelling of the end-of-sentence word.
pub fn eos_word_chars() -> Vec<usize> {
    vec![EOS_CHAR]
}

/// Inverse of [`encode_word_chars`] for generated sequences: drops the
/// sentinels and renders the characters.
pub fn decode_word_chars(ids: &[usize], vocab: &Vocab) -> String {
    ids.iter()
        .filter(|&&id| id >= RESERVED_COUNT)
        .filter_map(|&id| vocab.token(id))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn sents(lines: &[&str]) -> Vec<Vec<String>> {
        lines
            .iter()
            .map(|l| l.split(' ').map(str::to_string).collect())
            .collect()
    }

    #[test]
    fn word_vocab_counts_and_orders() {
        let s = sents(&["a a b"]);
        let v = build_word_vocab(s.iter().map(Vec::as_slice), 1);
        assert_eq!(v.regular_tokens(), &["a", "b"]);
        assert!(v.id("a") < v.id("b"));
        let v2 = build_word_vocab(s.iter().map(Vec::as_slice), 2);
        assert_eq!(v2.regular_tokens(), &["a"]);
        assert_eq!(v2.id("b"), UNK);
    }

    #[test]
    fn word_vocab_matches_brute_force_filter() {
        // deterministic pseudo-random fixture of 100 sentences
        let mut x: u64 = 12345;
        let mut lines = Vec::new();
        for _ in 0..100 {
            let mut words = Vec::new();
            for _ in 0..(1 + x % 7) {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                words.push(format!("w{}", (x >> 33) % 60));
            }
            lines.push(words);
        }
        for min_count in [1, 2, 5, 9] {
            let v = build_word_vocab(lines.iter().map(Vec::as_slice), min_count);
            let mut counts: HashMap<String, usize> = HashMap::new();
            for l in &lines {
                for w in l {
                    *counts.entry(w.clone()).or_insert(0) += 1;
                }
            }
            let expected = counts.values().filter(|&&c| c >= min_count).count();
            assert_eq!(v.len() - RESERVED_COUNT, expected);
        }
    }

    #[test]
    fn char_vocab_is_set_union() {
        let s = sents(&["ab", "ba"]);
        let v = build_char_vocab(s.iter().map(Vec::as_slice));
        assert_eq!(v.regular_tokens(), &["a", "b"]);
        assert_eq!(v.char_id('z'), UNK_CHAR);

        let s = sents(&["A reconstrução das casas", "o Parlamento , não"]);
        let v = build_char_vocab(s.iter().map(Vec::as_slice));
        let mut oracle: Vec<char> = "A reconstrução das casas o Parlamento , não"
            .chars()
            .filter(|c| *c != ' ')
            .collect();
        oracle.sort();
        oracle.dedup();
        let got: Vec<char> = v.regular_tokens().iter().map(|t| t.chars().next().unwrap()).collect();
        assert_eq!(got, oracle);
    }

    #[test]
    fn encode_sentence_examples() {
        let v = Vocab::from_tokens(VocabKind::Word, ["cat"]).unwrap();
        assert_eq!(encode_sentence(&["cat"], &v), vec![SOS, 4, EOS]);
        assert_eq!(encode_sentence::<&str>(&[], &v), vec![SOS, EOS]);
        assert_eq!(encode_sentence(&["dog"], &v), vec![SOS, UNK, EOS]);
    }

    #[test]
    fn encode_word_chars_examples() {
        let v = Vocab::from_tokens(VocabKind::Char, ["a", "c", "t"]).unwrap();
        let (c, a, t) = (v.char_id('c'), v.char_id('a'), v.char_id('t'));
        assert_eq!(encode_word_chars("cat", &v, 64).unwrap(), vec![SOW, c, a, t, EOW]);
        assert_eq!(encode_word_chars("", &v, 64).unwrap(), vec![SOW, EOW]);
        assert_eq!(eos_word_chars(), vec![EOS_CHAR]);
        assert!(encode_word_chars("cat", &v, 2).is_err());
        assert_eq!(decode_word_chars(&[SOW, c, a, t, EOW], &v), "cat");
    }

    #[test]
    fn reserved_and_duplicate_tokens_rejected() {
        assert!(Vocab::from_tokens(VocabKind::Word, ["a", "a"]).is_err());
        assert!(Vocab::from_tokens(VocabKind::Word, ["<unk>"]).is_err());
        assert!(Vocab::from_tokens(VocabKind::Char, ["ab"]).is_err());
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.txt");
        let v = Vocab::from_tokens(VocabKind::Word, ["ção", "b", "Play"]).unwrap();
        v.write_file(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "ção\nb\nPlay\n");
        let back = Vocab::read_file(&path, VocabKind::Word).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("b"), 5);
    }

    proptest! {
        #[test]
        fn token_id_round_trip(words in prop::collection::btree_set("[a-zé]{1,6}", 1..30)) {
            let v = Vocab::from_tokens(VocabKind::Word, words.iter().cloned()).unwrap();
            for w in &words {
                prop_assert_eq!(v.token(v.id(w)), Some(w.as_str()));
            }
            for id in RESERVED_COUNT..v.len() {
                prop_assert_eq!(v.id(v.token(id).unwrap()), id);
            }
        }

        #[test]
        fn encoded_lengths(words in prop::collection::vec("[a-z]{0,8}", 0..10)) {
            let wv = Vocab::from_tokens(VocabKind::Word, ["a"]).unwrap();
            let cv = Vocab::from_tokens(VocabKind::Char, ["a", "b"]).unwrap();
            prop_assert_eq!(encode_sentence(&words, &wv).len(), words.len() + 2);
            for w in &words {
                prop_assert_eq!(encode_word_chars(w, &cv, 64).unwrap().len(), w.chars().count() + 2);
            }
        }
    }
}
