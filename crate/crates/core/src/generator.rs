//! Target side: the forward context LSTM over the translated prefix, the
//! word softmax baseline (with NCE), and the V2C character generator.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::corpus::{EOS_CHAR, EOW, RESERVED_COUNT, SOW};
use crate::encoder::{bind_param, WordInput, WordProjection};
use crate::error::{Error, Result};
use crate::numerics::{
    lstm_step, lstm_step_projected, masked_log_softmax, LstmParams, LstmState, ParamId, ParamStore, Tape, Tensor,
    Var,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetContextParams {
    pub projection: WordProjection,
    pub lstm: LstmParams,
}

/// Feeds one more target word to the context LSTM.
pub fn target_step(
    tape: &mut Tape<'_>,
    p: &TargetContextParams,
    word: &WordInput,
    state: LstmState,
) -> Result<LstmState> {
    let x = p.projection.project(tape, word)?;
    lstm_step(tape, &p.lstm, x, state)
}

/// `lᶠ` after reading the whole prefix, which must start with SOS.
pub fn target_context(tape: &mut Tape<'_>, p: &TargetContextParams, prefix: &[WordInput]) -> Result<LstmState> {
    if prefix.first() != Some(&WordInput::Sos) {
        return Err(Error::Invalid("target prefix must start with SOS".into()));
    }
    let mut state = LstmState::zero(tape, p.lstm.hidden);
    for w in prefix {
        state = target_step(tape, p, w, state)?;
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WordSoftmaxParams {
    /// |T| × d_z
    pub sa: ParamId,
    /// |T| × d_lstm
    pub sl: ParamId,
}

impl WordSoftmaxParams {
    pub fn init(store: &mut ParamStore, n_words: usize, d_z: usize, d_lstm: usize, scale: f64, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            sa: store.insert("out.sa", Tensor::uniform(&[n_words, d_z], scale, rng))?,
            sl: store.insert("out.sl", Tensor::uniform(&[n_words, d_lstm], scale, rng))?,
        })
    }

    pub fn bind(store: &ParamStore, n_words: usize, d_z: usize, d_lstm: usize) -> Result<Self> {
        Ok(Self {
            sa: bind_param(store, "out.sa", &[n_words, d_z])?,
            sl: bind_param(store, "out.sl", &[n_words, d_lstm])?,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![self.sa, self.sl]
    }
}

/// `scoreⱼ = S_aʲ·𝐚 + S_lʲ·𝐥` for every target word type.
pub fn word_scores(tape: &mut Tape<'_>, p: &WordSoftmaxParams, attended: Var, context: Var) -> Result<Var> {
    let a = tape.matvec(p.sa, attended)?;
    let l = tape.matvec(p.sl, context)?;
    tape.add(a, l)
}

pub fn word_softmax(tape: &mut Tape<'_>, p: &WordSoftmaxParams, attended: Var, context: Var) -> Result<Var> {
    let s = word_scores(tape, p, attended, context)?;
    Ok(tape.softmax(s))
}

/// Empirical unigram distribution over target word ids, used as the NCE
/// noise distribution.
#[derive(Debug, Clone)]
pub struct NoiseDistribution {
    probs: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

impl NoiseDistribution {
    pub fn from_counts(counts: &[f64]) -> Result<Self> {
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Empty("noise distribution has no mass".into()));
        }
        let sampler = WeightedIndex::new(counts).map_err(|e| Error::Invalid(format!("noise distribution: {e}")))?;
        Ok(Self {
            probs: counts.iter().map(|c| c / total).collect(),
            sampler,
        })
    }

    pub fn prob(&self, id: usize) -> f64 {
        self.probs[id]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        self.sampler.sample(rng)
    }
}

/// Binary NCE objective for one prediction: the observed word against `k`
/// noise words, with unnormalized scores (normalizer fixed at 1) offset by
/// `log(k·P_noise)`.
#[allow(clippy::too_many_arguments)]
pub fn nce_loss(
    tape: &mut Tape<'_>,
    p: &WordSoftmaxParams,
    attended: Var,
    context: Var,
    target: usize,
    noise: &NoiseDistribution,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Var> {
    let n = tape.params().get(p.sa).rows();
    if target >= n {
        return Err(Error::OutOfRange {
            what: "target vocabulary",
            index: target,
            size: n,
        });
    }
    if k == 0 {
        return Err(Error::Invalid("NCE needs at least one noise sample".into()));
    }
    if noise.len() != n {
        return Err(Error::Shape(format!("noise over {} words, vocabulary has {n}", noise.len())));
    }
    let mut ids = Vec::with_capacity(k + 1);
    ids.push(target);
    ids.extend((0..k).map(|_| noise.sample(rng)));

    let mut scores = Vec::with_capacity(ids.len());
    for &id in &ids {
        let ra = tape.row(p.sa, id)?;
        let rl = tape.row(p.sl, id)?;
        let sa = tape.dot(ra, attended)?;
        let sl = tape.dot(rl, context)?;
        scores.push(tape.add(sa, sl)?);
    }
    let scores = tape.concat(&scores);
    // Δ = s − log(k·Pn); the data term uses Δ, noise terms use −Δ
    let offsets: Vec<f64> = ids
        .iter()
        .map(|&id| (k as f64 * noise.prob(id)).ln())
        .collect();
    if offsets.iter().any(|o| !o.is_finite()) {
        return Err(Error::NonFinite("noise probability of zero for a scored word".into()));
    }
    let offsets = tape.input(offsets);
    let delta = tape.sub(scores, offsets)?;
    let signs: Vec<f64> = (0..ids.len()).map(|i| if i == 0 { 1.0 } else { -1.0 }).collect();
    let signs = tape.input(signs);
    let signed = tape.mul(delta, signs)?;
    let ls = tape.log_sigmoid(signed);
    let total = tape.sum(ls);
    Ok(tape.scale(total, -1.0))
}

/// Which outputs the character generator may produce at a given point of a
/// word: never SOW or UNK; the end-of-sentence character only as the first
/// and only character; EOW only after at least one character, and forced
/// once the word reaches the length cap.
#[derive(Debug, Clone, PartialEq)]
pub struct CharMasks {
    first: Arc<[bool]>,
    inner: Arc<[bool]>,
    cap: Arc<[bool]>,
    max_word_len: usize,
}

impl CharMasks {
    pub fn new(n_chars: usize, max_word_len: usize) -> Self {
        let letter = |i: usize| i >= RESERVED_COUNT;
        let first: Vec<bool> = (0..n_chars).map(|i| letter(i) || i == EOS_CHAR).collect();
        let inner: Vec<bool> = (0..n_chars).map(|i| letter(i) || i == EOW).collect();
        let cap: Vec<bool> = (0..n_chars).map(|i| i == EOW).collect();
        Self {
            first: first.into(),
            inner: inner.into(),
            cap: cap.into(),
            max_word_len,
        }
    }

    /// Mask for the prediction that follows `emitted` characters.
    pub fn for_emitted(&self, emitted: usize) -> &Arc<[bool]> {
        if emitted == 0 {
            &self.first
        } else if emitted >= self.max_word_len {
            &self.cap
        } else {
            &self.inner
        }
    }

    pub fn max_word_len(&self) -> usize {
        self.max_word_len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct V2cParams {
    /// Shared with the target-side C2W model.
    pub chars: ParamId,
    /// Input is `[char embedding ; 𝐚 ; 𝐥]`.
    pub lstm: LstmParams,
    /// |T_c| × d_lstm
    pub sy: ParamId,
    pub d_char: usize,
    pub masks: CharMasks,
}

impl V2cParams {
    /// New generator over the character table `chars`, conditioned on a
    /// `d_cond`-dimensional `[𝐚 ; 𝐥]`. Creates `v2c.lstm.*` and `v2c.sy`.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        chars: ParamId,
        d_cond: usize,
        d_lstm: usize,
        max_word_len: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (n_chars, d_char) = (store.get(chars).rows(), store.get(chars).cols());
        let lstm = LstmParams::init(store, "v2c.lstm", d_char + d_cond, d_lstm, scale, rng)?;
        let sy = store.insert("v2c.sy", Tensor::uniform(&[n_chars, d_lstm], scale, rng))?;
        Ok(Self {
            chars,
            lstm,
            sy,
            d_char,
            masks: CharMasks::new(n_chars, max_word_len),
        })
    }

    pub fn bind(store: &ParamStore, chars: ParamId, d_cond: usize, d_lstm: usize, max_word_len: usize) -> Result<Self> {
        let (n_chars, d_char) = (store.get(chars).rows(), store.get(chars).cols());
        Ok(Self {
            chars,
            lstm: LstmParams::bind(store, "v2c.lstm", d_char + d_cond, d_lstm)?,
            sy: bind_param(store, "v2c.sy", &[n_chars, d_lstm])?,
            d_char,
            masks: CharMasks::new(n_chars, max_word_len),
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.chars, self.sy];
        v.extend(self.lstm.ids());
        v
    }

    pub fn n_chars(&self, store: &ParamStore) -> usize {
        store.get(self.sy).rows()
    }
}

/// Generator state inside one word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CharState {
    pub lstm: LstmState,
    /// Characters consumed after SOW.
    pub emitted: usize,
}

impl CharState {
    pub fn initial(tape: &mut Tape<'_>, p: &V2cParams) -> Self {
        Self {
            lstm: LstmState::zero(tape, p.lstm.hidden),
            emitted: 0,
        }
    }
}

/// The word-level conditioning `W_x[:, d_c..]·[𝐚 ; 𝐥]`, identical for every
/// character of the word.
#[derive(Debug, Clone, Copy)]
pub struct V2cContext {
    proj: Var,
}

pub fn v2c_context(tape: &mut Tape<'_>, p: &V2cParams, attended: Var, context: Var) -> Result<V2cContext> {
    let al = tape.concat(&[attended, context]);
    if p.d_char + tape.dim(al) != p.lstm.d_in {
        return Err(Error::Shape(format!(
            "V2C input {} + {} does not match LSTM input {}",
            p.d_char,
            tape.dim(al),
            p.lstm.d_in
        )));
    }
    let proj = tape.matvec_cols(p.lstm.wx, p.d_char, al)?;
    Ok(V2cContext { proj })
}

/// Consumes `prev_char` and returns the output scores for the next
/// character together with the advanced state.
pub fn v2c_step(
    tape: &mut Tape<'_>,
    p: &V2cParams,
    ctx: &V2cContext,
    prev_char: usize,
    state: CharState,
) -> Result<(Var, CharState)> {
    let e = tape.row(p.chars, prev_char)?;
    let xe = tape.matvec_cols(p.lstm.wx, 0, e)?;
    let input = tape.add(xe, ctx.proj)?;
    let lstm = lstm_step_projected(tape, &p.lstm, input, state.lstm)?;
    let logits = tape.matvec(p.sy, lstm.h)?;
    let emitted = if prev_char == SOW { state.emitted } else { state.emitted + 1 };
    Ok((logits, CharState { lstm, emitted }))
}

/// Masked log-probabilities of the next character (−∞ where disallowed).
pub fn v2c_log_probs(tape: &Tape<'_>, p: &V2cParams, logits: Var, state: &CharState) -> Vec<f64> {
    masked_log_softmax(tape.value(logits), Some(p.masks.for_emitted(state.emitted)))
}

/// Probability vector over the character vocabulary.
pub fn v2c_distribution(tape: &Tape<'_>, p: &V2cParams, logits: Var, state: &CharState) -> Vec<f64> {
    v2c_log_probs(tape, p, logits, state)
        .into_iter()
        .map(|lp| if lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() })
        .collect()
}

/// Checks a teacher-forcing spelling and returns (inputs, outputs).
fn split_spelling(chars: &[usize], max_word_len: usize) -> Result<(&[usize], &[usize])> {
    if chars == [EOS_CHAR] {
        return Ok((&[SOW], chars));
    }
    let bad = || Error::Invalid(format!("malformed character sequence {chars:?}"));
    if chars.len() < 3 || chars[0] != SOW || chars[chars.len() - 1] != EOW {
        return Err(bad());
    }
    let inner = &chars[1..chars.len() - 1];
    if inner.len() > max_word_len || inner.iter().any(|&c| c < RESERVED_COUNT) {
        return Err(bad());
    }
    Ok((&chars[..chars.len() - 1], &chars[1..]))
}

/// `log P(word | 𝐚, 𝐥)` as the sum of teacher-forced character
/// log-probabilities, including the final EOW. The end-of-sentence word is
/// the single character `[EOS_CHAR]`.
pub fn v2c_word_logprob(tape: &mut Tape<'_>, p: &V2cParams, ctx: &V2cContext, chars: &[usize]) -> Result<Var> {
    let (inputs, outputs) = split_spelling(chars, p.masks.max_word_len())?;
    let mut state = CharState::initial(tape, p);
    let mut terms = Vec::with_capacity(outputs.len());
    for (&prev, &next) in inputs.iter().zip(outputs) {
        let (logits, s) = v2c_step(tape, p, ctx, prev, state)?;
        state = s;
        let mask = p.masks.for_emitted(state.emitted).clone();
        terms.push(tape.log_softmax_pick(logits, next, Some(mask))?);
    }
    tape.sum_all(&terms)
}
