//! Two-level beam decoding: a character beam proposes candidate words, a
//! word beam assembles translations until EOS.

use std::cmp::Ordering;

use crate::attention::SourceMemory;
use crate::config::ModelConfig;
use crate::corpus::{decode_word_chars, eos_word_chars, EOS, EOS_CHAR, EOW, PAD, SOS, SOW};
use crate::encoder::WordInput;
use crate::error::{Error, Result};
use crate::generator::{v2c_context, v2c_log_probs, v2c_step, word_scores, CharState, V2cContext, V2cParams};
use crate::model::{Model, ModelKind, OutputLayer};
use crate::numerics::{masked_log_softmax, LstmState, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchConfig {
    pub k_w: usize,
    pub k_c: usize,
    pub max_sent_len: usize,
    /// Rank finished translations by log-probability per predicted word.
    pub length_normalize: bool,
}

impl SearchConfig {
    pub fn from_model_config(c: &ModelConfig) -> Self {
        Self {
            k_w: c.k_w,
            k_c: c.k_c,
            max_sent_len: c.max_sent_len,
            length_normalize: c.length_normalize,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k_w == 0 || self.k_c == 0 {
            return Err(Error::Config("beam widths must be at least 1".into()));
        }
        if self.max_sent_len == 0 {
            return Err(Error::Config("max_sent_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// Higher score first, then lexicographically smaller sequence.
fn rank<T: Ord>(a: (f64, &T), b: (f64, &T)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// A finished word proposed by the character beam. `chars` holds the
/// letters only, or `[EOS_CHAR]` for the end-of-sentence word.
#[derive(Debug, Clone, PartialEq)]
pub struct CharCandidate {
    pub chars: Vec<usize>,
    pub logprob: f64,
}

impl CharCandidate {
    pub fn is_eos(&self) -> bool {
        self.chars == [EOS_CHAR]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharBeamResult {
    /// Sorted best first.
    pub finals: Vec<CharCandidate>,
    /// Fewer than `k_w` words could be produced.
    pub truncated: bool,
}

struct CharHypothesis {
    chars: Vec<usize>,
    logprob: f64,
    state: CharState,
}

/// Character beam of width `k_c` over V2C. Finished words leave the beam
/// without taking a slot. The search stops once `k_w` words are finished
/// and no open prefix can still reach the `k_w`-th best of them (extensions
/// only lose probability), or when nothing is left to extend; the length
/// cap guarantees termination.
pub fn char_beam_expand(
    tape: &mut Tape<'_>,
    p: &V2cParams,
    ctx: &V2cContext,
    k_c: usize,
    k_w: usize,
) -> Result<CharBeamResult> {
    if k_c == 0 || k_w == 0 {
        return Err(Error::Config("beam widths must be at least 1".into()));
    }
    let mut active = vec![CharHypothesis {
        chars: Vec::new(),
        logprob: 0.0,
        state: CharState::initial(tape, p),
    }];
    let mut finals: Vec<CharCandidate> = Vec::new();
    while !active.is_empty() {
        if finals.len() >= k_w {
            finals.sort_by(|a, b| rank((a.logprob, &a.chars), (b.logprob, &b.chars)));
            let kth = finals[k_w - 1].logprob;
            // active is sorted best first
            if active[0].logprob < kth {
                break;
            }
        }
        let mut extended: Vec<CharHypothesis> = Vec::new();
        let mut finished: Vec<CharCandidate> = Vec::new();
        for hyp in &active {
            let prev = hyp.chars.last().copied().unwrap_or(SOW);
            let (logits, state) = v2c_step(tape, p, ctx, prev, hyp.state)?;
            let lps = v2c_log_probs(tape, p, logits, &state);
            for (c, &lp) in lps.iter().enumerate() {
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                let logprob = hyp.logprob + lp;
                match c {
                    EOW => finished.push(CharCandidate {
                        chars: hyp.chars.clone(),
                        logprob,
                    }),
                    EOS_CHAR => finished.push(CharCandidate {
                        chars: vec![EOS_CHAR],
                        logprob,
                    }),
                    _ => {
                        let mut chars = hyp.chars.clone();
                        chars.push(c);
                        extended.push(CharHypothesis { chars, logprob, state });
                    }
                }
            }
        }
        finals.extend(finished);
        extended.sort_by(|a, b| rank((a.logprob, &a.chars), (b.logprob, &b.chars)));
        extended.truncate(k_c);
        active = extended;
    }
    finals.sort_by(|a, b| rank((a.logprob, &a.chars), (b.logprob, &b.chars)));
    let truncated = finals.len() < k_w;
    Ok(CharBeamResult { finals, truncated })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    pub words: Vec<String>,
    /// `log P(words, EOS | source)`.
    pub logprob: f64,
    /// EOS was forced at the sentence length cap.
    pub truncated: bool,
}

#[derive(Clone)]
struct WordHypothesis {
    words: Vec<String>,
    logprob: f64,
    state: LstmState,
    finished: bool,
    truncated: bool,
}

/// A candidate next word and its log-probability given the current state.
struct Proposal {
    word: Option<String>,
    logprob: f64,
}

fn word_proposals(
    tape: &mut Tape<'_>,
    model: &Model,
    memory: &SourceMemory,
    state: &LstmState,
    cfg: &SearchConfig,
    eos_only: bool,
) -> Result<Vec<Proposal>> {
    let att = model.attend(tape, state.h, memory)?;
    match &model.layout.output {
        OutputLayer::Softmax(p) => {
            let scores = word_scores(tape, p, att.context, state.h)?;
            let lps = masked_log_softmax(tape.value(scores), None);
            if eos_only {
                return Ok(vec![Proposal {
                    word: None,
                    logprob: lps[EOS],
                }]);
            }
            let vocab = &model.vocabs.target_words;
            let mut ids: Vec<usize> = (0..lps.len()).filter(|&i| i != SOS && i != PAD).collect();
            ids.sort_by(|&a, &b| lps[b].total_cmp(&lps[a]).then_with(|| vocab.token(a).cmp(&vocab.token(b))));
            ids.truncate(cfg.k_w);
            Ok(ids
                .into_iter()
                .map(|i| Proposal {
                    word: (i != EOS).then(|| vocab.token(i).unwrap_or_default().to_string()),
                    logprob: lps[i],
                })
                .collect())
        }
        OutputLayer::V2c(p) => {
            let ctx = v2c_context(tape, p, att.context, state.h)?;
            if eos_only {
                let init = CharState::initial(tape, p);
                let (logits, s) = v2c_step(tape, p, &ctx, SOW, init)?;
                let lps = v2c_log_probs(tape, p, logits, &s);
                return Ok(vec![Proposal {
                    word: None,
                    logprob: lps[EOS_CHAR],
                }]);
            }
            let beam = char_beam_expand(tape, p, &ctx, cfg.k_c, cfg.k_w)?;
            let chars = &model.vocabs.target_chars;
            Ok(beam
                .finals
                .into_iter()
                .map(|c| Proposal {
                    word: (!c.is_eos()).then(|| decode_word_chars(&c.chars, chars)),
                    logprob: c.logprob,
                })
                .collect())
        }
    }
}

fn final_score(h: &WordHypothesis, cfg: &SearchConfig) -> f64 {
    if cfg.length_normalize {
        h.logprob / (h.words.len() + 1) as f64
    } else {
        h.logprob
    }
}

/// Word-level beam of width `k_w`. Finished hypotheses are set aside and do
/// not occupy beam slots; at `max_sent_len` words EOS is forced and scored
/// with its true probability.
pub fn word_beam_translate<S: AsRef<str>>(model: &Model, source: &[S], cfg: &SearchConfig) -> Result<Translation> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::Empty("cannot translate an empty sentence".into()));
    }
    let inputs = model.source_inputs(source)?;
    let mut tape = Tape::new(&model.params);
    let memory = model.encode_source(&mut tape, &inputs)?;
    let start = model.start_target(&mut tape)?;
    let mut active = vec![WordHypothesis {
        words: Vec::new(),
        logprob: 0.0,
        state: start,
        finished: false,
        truncated: false,
    }];
    let mut finished: Vec<WordHypothesis> = Vec::new();

    while !active.is_empty() {
        let mut next: Vec<WordHypothesis> = Vec::new();
        for hyp in &active {
            let at_cap = hyp.words.len() >= cfg.max_sent_len;
            for prop in word_proposals(&mut tape, model, &memory, &hyp.state, cfg, at_cap)? {
                let logprob = hyp.logprob + prop.logprob;
                let mut words = hyp.words.clone();
                let done = prop.word.is_none();
                if let Some(w) = prop.word {
                    words.push(w);
                }
                next.push(WordHypothesis {
                    words,
                    logprob,
                    state: hyp.state,
                    finished: done,
                    truncated: done && at_cap,
                });
            }
        }
        let (done, mut open): (Vec<_>, Vec<_>) = next.into_iter().partition(|h| h.finished);
        finished.extend(done);
        open.sort_by(|a, b| rank((a.logprob, &a.words), (b.logprob, &b.words)));
        open.truncate(cfg.k_w);
        if !cfg.length_normalize {
            // extensions only lose probability
            let best_done = finished.iter().map(|h| h.logprob).fold(f64::NEG_INFINITY, f64::max);
            open.retain(|h| h.logprob > best_done);
        }
        for h in &mut open {
            let last = h.words.last().expect("open hypotheses end in a word");
            let input = model.target_input(last)?;
            h.state = model.advance_target(&mut tape, h.state, &input)?;
        }
        active = open;
    }

    let best = finished
        .into_iter()
        .min_by(|a, b| rank((final_score(a, cfg), &a.words), (final_score(b, cfg), &b.words)))
        .ok_or_else(|| Error::Empty("beam search produced no translation".into()))?;
    Ok(Translation {
        words: best.words,
        logprob: best.logprob,
        truncated: best.truncated,
    })
}

/// Teacher-forced `log P(target, EOS | source)` of an arbitrary word
/// sequence, computed independently of the search.
pub fn score_translation<S: AsRef<str>, T: AsRef<str>>(model: &Model, source: &[S], target: &[T]) -> Result<f64> {
    let inputs = model.source_inputs(source)?;
    let mut tape = Tape::new(&model.params);
    let memory = model.encode_source(&mut tape, &inputs)?;
    let mut state = model.start_target(&mut tape)?;
    let mut total = 0.0;
    for j in 0..=target.len() {
        let att = model.attend(&mut tape, state.h, &memory)?;
        let word = target.get(j).map(|w| w.as_ref());
        total += match (&model.layout.output, model.kind) {
            (OutputLayer::Softmax(p), _) => {
                let id = word.map_or(EOS, |w| model.vocabs.target_words.id(w));
                let scores = word_scores(&mut tape, p, att.context, state.h)?;
                masked_log_softmax(tape.value(scores), None)[id]
            }
            (OutputLayer::V2c(p), ModelKind::Char) => {
                let ctx = v2c_context(&mut tape, p, att.context, state.h)?;
                let chars = match word {
                    Some(w) => model.target_spelling(w)?,
                    None => eos_word_chars(),
                };
                let lp = crate::generator::v2c_word_logprob(&mut tape, p, &ctx, &chars)?;
                tape.scalar(lp)
            }
            (OutputLayer::V2c(_), ModelKind::Word) => unreachable!("word models use the softmax output"),
        };
        if let Some(w) = word {
            let input: WordInput = model.target_input(w)?;
            state = model.advance_target(&mut tape, state, &input)?;
        }
    }
    Ok(total)
}

/// Translates every sentence with the same settings; output order equals
/// input order.
pub fn translate_all<S: AsRef<str>>(model: &Model, sentences: &[Vec<S>], cfg: &SearchConfig) -> Result<Vec<Translation>> {
    sentences.iter().map(|s| word_beam_translate(model, s, cfg)).collect()
}
