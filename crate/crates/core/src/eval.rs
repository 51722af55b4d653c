//! Corpus BLEU against a single reference and cosine nearest neighbours
//! of word vectors.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::encoder::ProjectionMode;
use crate::error::{Error, Result};
use crate::model::{Model, ModelKind};
use crate::numerics::{cosine_similarity, Tape};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// 0 to 100.
    pub bleu: f64,
    /// Modified n-gram precisions p₁ … p₄.
    pub precisions: [f64; MAX_ORDER],
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub brevity_penalty: f64,
    pub candidate_length: usize,
    pub reference_length: usize,
    pub smoothed: bool,
}

fn ngram_counts<S: AsRef<str>>(words: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            let key: Vec<&str> = w.iter().map(|s| s.as_ref()).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-4 with clipped counts and the brevity penalty
/// `exp(1 − r/c)` for `c < r`. Unsmoothed, any zero precision gives 0; with
/// `smoothing`, orders above 1 use `(m + 1) / (t + 1)`. Orders for which the
/// candidates contain no n-gram at all are left out of the geometric mean.
pub fn bleu<S: AsRef<str>, T: AsRef<str>>(
    candidates: &[Vec<S>],
    references: &[Vec<T>],
    smoothing: bool,
) -> Result<BleuReport> {
    if candidates.is_empty() {
        return Err(Error::Empty("no candidate sentences".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Invalid(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let mut c_len = 0;
    let mut r_len = 0;
    for (cand, reference) in candidates.iter().zip(references) {
        c_len += cand.len();
        r_len += reference.len();
        for n in 1..=MAX_ORDER {
            let cc = ngram_counts(cand, n);
            let rc = ngram_counts(reference, n);
            for (gram, &count) in &cc {
                matches[n - 1] += count.min(rc.get(gram).copied().unwrap_or(0));
                totals[n - 1] += count;
            }
        }
    }

    let mut precisions = [0.0; MAX_ORDER];
    let mut log_sum = 0.0;
    let mut used = 0;
    let mut zero = false;
    for n in 0..MAX_ORDER {
        if totals[n] == 0 {
            continue;
        }
        let p = if smoothing && n > 0 {
            (matches[n] + 1) as f64 / (totals[n] + 1) as f64
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        precisions[n] = p;
        if p == 0.0 {
            zero = true;
        } else {
            log_sum += p.ln();
        }
        used += 1;
    }
    let brevity_penalty = if c_len == 0 {
        0.0
    } else if c_len < r_len {
        (1.0 - r_len as f64 / c_len as f64).exp()
    } else {
        1.0
    };
    let bleu = if zero || used == 0 {
        0.0
    } else {
        100.0 * brevity_penalty * (log_sum / used as f64).exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        matches,
        totals,
        brevity_penalty,
        candidate_length: c_len,
        reference_length: r_len,
        smoothed: smoothing,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
}

/// Vector of `word` under the given projection, whatever mode the model is
/// currently in.
pub fn word_vector(model: &Model, side: Side, mode: ProjectionMode, word: &str) -> Result<Vec<f64>> {
    if mode == ProjectionMode::C2w && model.kind != ModelKind::Char {
        return Err(Error::Invalid("word models have no C2W projection".into()));
    }
    let (mut projection, input, vocab) = match side {
        Side::Source => (
            model.layout.encoder.projection,
            model.source_input(word)?,
            &model.vocabs.source_words,
        ),
        Side::Target => (
            model.layout.target.projection,
            model.target_input(word)?,
            &model.vocabs.target_words,
        ),
    };
    if mode == ProjectionMode::Lookup && vocab.get(word).is_none() {
        return Err(Error::Invalid(format!("{word:?} is not in the vocabulary")));
    }
    projection.mode = mode;
    let mut tape = Tape::new(&model.params);
    let v = projection.project(&mut tape, &input)?;
    Ok(tape.value(v).to_vec())
}

/// Ranks `candidates` by cosine similarity to `query`, best first, ties by
/// word; `exclude` is skipped.
pub fn rank_neighbors(
    query: &[f64],
    candidates: &[(String, Vec<f64>)],
    exclude: Option<&str>,
    k: usize,
) -> Vec<(String, f64)> {
    let mut scored: Vec<(String, f64)> = candidates
        .iter()
        .filter(|(w, _)| Some(w.as_str()) != exclude)
        .map(|(w, v)| (w.clone(), cosine_similarity(query, v)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Top-`k` in-vocabulary words closest to `query`, excluding the query.
pub fn nearest_neighbors(
    model: &Model,
    side: Side,
    mode: ProjectionMode,
    query: &str,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    let q = word_vector(model, side, mode, query)?;
    let vocab = match side {
        Side::Source => &model.vocabs.source_words,
        Side::Target => &model.vocabs.target_words,
    };
    let candidates = vocab
        .regular_tokens()
        .iter()
        .map(|w| Ok((w.to_string(), word_vector(model, side, mode, w)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(rank_neighbors(&q, &candidates, Some(query), k))
}
