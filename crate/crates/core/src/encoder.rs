//! Source-side word vectors (lookup table or C2W composition) and the
//! bidirectional LSTM that turns them into context vectors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EOW, SOW};
use crate::error::{Error, Result};
use crate::numerics::{lstm_step, LstmParams, LstmState, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMode {
    Lookup,
    C2w,
}

/// One position of an encoded sentence, carrying whatever each projection
/// mode needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WordInput {
    Sos,
    Eos,
    Word {
        /// Word-vocabulary id (UNK for OOV).
        id: usize,
        /// `[SOW] + chars + [EOW]`.
        chars: Vec<usize>,
    },
}

pub(crate) fn bind_param(store: &ParamStore, name: &str, shape: &[usize]) -> Result<ParamId> {
    let id = store
        .id(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
    if store.get(id).shape() != shape {
        return Err(Error::Checkpoint(format!(
            "{name}: expected shape {shape:?}, found {:?}",
            store.get(id).shape()
        )));
    }
    Ok(id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct C2wParams {
    pub chars: ParamId,
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    pub df: ParamId,
    pub db: ParamId,
    pub bd: ParamId,
    pub d_out: usize,
}

impl C2wParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        n_chars: usize,
        d_char: usize,
        d_lstm: usize,
        d_out: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let chars = store.insert(
            format!("{prefix}.chars"),
            Tensor::uniform(&[n_chars, d_char], scale, rng),
        )?;
        let fwd = LstmParams::init(store, &format!("{prefix}.fwd"), d_char, d_lstm, scale, rng)?;
        let bwd = LstmParams::init(store, &format!("{prefix}.bwd"), d_char, d_lstm, scale, rng)?;
        let df = store.insert(format!("{prefix}.df"), Tensor::uniform(&[d_out, d_lstm], scale, rng))?;
        let db = store.insert(format!("{prefix}.db"), Tensor::uniform(&[d_out, d_lstm], scale, rng))?;
        let bd = store.insert(format!("{prefix}.bd"), Tensor::uniform(&[d_out], scale, rng))?;
        Ok(Self {
            chars,
            fwd,
            bwd,
            df,
            db,
            bd,
            d_out,
        })
    }

    pub fn bind(
        store: &ParamStore,
        prefix: &str,
        n_chars: usize,
        d_char: usize,
        d_lstm: usize,
        d_out: usize,
    ) -> Result<Self> {
        Ok(Self {
            chars: bind_param(store, &format!("{prefix}.chars"), &[n_chars, d_char])?,
            fwd: LstmParams::bind(store, &format!("{prefix}.fwd"), d_char, d_lstm)?,
            bwd: LstmParams::bind(store, &format!("{prefix}.bwd"), d_char, d_lstm)?,
            df: bind_param(store, &format!("{prefix}.df"), &[d_out, d_lstm])?,
            db: bind_param(store, &format!("{prefix}.db"), &[d_out, d_lstm])?,
            bd: bind_param(store, &format!("{prefix}.bd"), &[d_out])?,
            d_out,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.chars, self.df, self.db, self.bd];
        v.extend(self.fwd.ids());
        v.extend(self.bwd.ids());
        v
    }
}

/// Composes a word vector from its characters: a forward LSTM reads
/// `SOW c₁ … EOW` left to right, a backward LSTM right to left, and the two
/// final states are combined linearly.
pub fn c2w_compose(tape: &mut Tape<'_>, p: &C2wParams, char_ids: &[usize]) -> Result<Var> {
    if char_ids.len() < 2 || char_ids[0] != SOW || char_ids[char_ids.len() - 1] != EOW {
        return Err(Error::Invalid(
            "character sequence must start with SOW and end with EOW".into(),
        ));
    }
    let embedded = char_ids
        .iter()
        .map(|&c| tape.row(p.chars, c))
        .collect::<Result<Vec<_>>>()?;

    let mut fwd = LstmState::zero(tape, p.fwd.hidden);
    for &e in &embedded {
        fwd = lstm_step(tape, &p.fwd, e, fwd)?;
    }
    let mut bwd = LstmState::zero(tape, p.bwd.hidden);
    for &e in embedded.iter().rev() {
        bwd = lstm_step(tape, &p.bwd, e, bwd)?;
    }
    let f = tape.matvec(p.df, fwd.h)?;
    let b = tape.matvec(p.db, bwd.h)?;
    let bias = tape.param(p.bd);
    let s = tape.add(f, b)?;
    tape.add(s, bias)
}

/// Word projection shared by the source and target sides: a lookup table
/// and/or a C2W model, plus dedicated vectors for the sentence markers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WordProjection {
    pub mode: ProjectionMode,
    pub lookup: Option<ParamId>,
    pub c2w: Option<C2wParams>,
    /// Rows: SOS, EOS.
    pub special: ParamId,
    pub d_out: usize,
}

impl WordProjection {
    pub fn project(&self, tape: &mut Tape<'_>, input: &WordInput) -> Result<Var> {
        match input {
            WordInput::Sos => tape.row(self.special, 0),
            WordInput::Eos => tape.row(self.special, 1),
            WordInput::Word { id, chars } => match self.mode {
                ProjectionMode::Lookup => {
                    let table = self
                        .lookup
                        .ok_or_else(|| Error::Invalid("model has no word lookup table".into()))?;
                    tape.row(table, *id)
                }
                ProjectionMode::C2w => {
                    let c2w = self
                        .c2w
                        .ok_or_else(|| Error::Invalid("model has no C2W composition".into()))?;
                    c2w_compose(tape, &c2w, chars)
                }
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceEncoderParams {
    pub projection: WordProjection,
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    pub cf: ParamId,
    pub cb: ParamId,
    pub bias: ParamId,
    pub d_context: usize,
}

impl SourceEncoderParams {
    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.cf, self.cb, self.bias];
        v.extend(self.fwd.ids());
        v.extend(self.bwd.ids());
        v
    }
}

pub fn embed_source_words(
    tape: &mut Tape<'_>,
    p: &SourceEncoderParams,
    words: &[WordInput],
) -> Result<Vec<Var>> {
    words.iter().map(|w| p.projection.project(tape, w)).collect()
}

/// Forward states, backward states and combined contexts of the sentence
/// BLSTM.
#[derive(Debug, Clone)]
pub struct BiLstmStates {
    pub forward: Vec<Var>,
    pub backward: Vec<Var>,
    pub contexts: Vec<Var>,
}

/// `bᵢ = C_f·gᶠᵢ + C_b·gᵇᵢ + bias`, where `gᶠᵢ` has read words `0..=i` and
/// `gᵇᵢ` has read words `i..n` in reverse.
pub fn bilstm_states(
    tape: &mut Tape<'_>,
    p: &SourceEncoderParams,
    vectors: &[Var],
) -> Result<BiLstmStates> {
    if vectors.is_empty() {
        return Err(Error::Empty("bilstm over zero vectors".into()));
    }
    let mut forward = Vec::with_capacity(vectors.len());
    let mut s = LstmState::zero(tape, p.fwd.hidden);
    for &x in vectors {
        s = lstm_step(tape, &p.fwd, x, s)?;
        forward.push(s.h);
    }
    let mut backward = vec![forward[0]; vectors.len()];
    let mut s = LstmState::zero(tape, p.bwd.hidden);
    for (i, &x) in vectors.iter().enumerate().rev() {
        s = lstm_step(tape, &p.bwd, x, s)?;
        backward[i] = s.h;
    }
    let bias = tape.param(p.bias);
    let mut contexts = Vec::with_capacity(vectors.len());
    for (&gf, &gb) in forward.iter().zip(&backward) {
        let f = tape.matvec(p.cf, gf)?;
        let b = tape.matvec(p.cb, gb)?;
        let fb = tape.add(f, b)?;
        contexts.push(tape.add(fb, bias)?);
    }
    Ok(BiLstmStates {
        forward,
        backward,
        contexts,
    })
}

pub fn bilstm_context(tape: &mut Tape<'_>, p: &SourceEncoderParams, vectors: &[Var]) -> Result<Vec<Var>> {
    Ok(bilstm_states(tape, p, vectors)?.contexts)
}

/// Source sentence → context vectors `b₀ … bₙ`.
pub fn encode_source(tape: &mut Tape<'_>, p: &SourceEncoderParams, words: &[WordInput]) -> Result<Vec<Var>> {
    let vecs = embed_source_words(tape, p, words)?;
    bilstm_context(tape, p, &vecs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::reference;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c2w(seed: u64) -> (ParamStore, C2wParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = C2wParams::init(&mut store, "c2w", 7, 3, 4, 5, 0.7, &mut rng).unwrap();
        (store, p)
    }

    fn encoder(seed: u64) -> (ParamStore, SourceEncoderParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lookup = store.insert("lookup", Tensor::uniform(&[9, 3], 0.7, &mut rng)).unwrap();
        let special = store.insert("special", Tensor::uniform(&[2, 3], 0.7, &mut rng)).unwrap();
        let fwd = LstmParams::init(&mut store, "fwd", 3, 4, 0.7, &mut rng).unwrap();
        let bwd = LstmParams::init(&mut store, "bwd", 3, 4, 0.7, &mut rng).unwrap();
        let cf = store.insert("cf", Tensor::uniform(&[5, 4], 0.7, &mut rng)).unwrap();
        let cb = store.insert("cb", Tensor::uniform(&[5, 4], 0.7, &mut rng)).unwrap();
        let bias = store.insert("bias", Tensor::uniform(&[5], 0.7, &mut rng)).unwrap();
        let p = SourceEncoderParams {
            projection: WordProjection {
                mode: ProjectionMode::Lookup,
                lookup: Some(lookup),
                c2w: None,
                special,
                d_out: 3,
            },
            fwd,
            bwd,
            cf,
            cb,
            bias,
            d_context: 5,
        };
        (store, p)
    }

    fn word(id: usize) -> WordInput {
        WordInput::Word { id, chars: Vec::new() }
    }

    #[test]
    fn c2w_matches_straight_line_reference() {
        let (store, p) = c2w(1);
        let chars = [SOW, 4, 6, 5, EOW];
        let table = store.get(p.chars);
        let xs: Vec<Vec<f64>> = chars.iter().map(|&c| table.row(c).to_vec()).collect();
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let hf = reference::lstm_run(&store, &p.fwd, &xs).pop().unwrap();
        let hb = reference::lstm_run(&store, &p.bwd, &rev).pop().unwrap();
        let f = reference::matvec(store.get(p.df), &hf);
        let b = reference::matvec(store.get(p.db), &hb);
        let bd = store.get(p.bd).data();
        let expected: Vec<f64> = (0..5).map(|k| f[k] + b[k] + bd[k]).collect();

        let mut t = Tape::new(&store);
        let v = c2w_compose(&mut t, &p, &chars).unwrap();
        for (x, y) in t.value(v).iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn c2w_is_deterministic_and_order_sensitive() {
        let (store, p) = c2w(2);
        let mut t = Tape::new(&store);
        let a = c2w_compose(&mut t, &p, &[SOW, 4, 5, EOW]).unwrap();
        let b = c2w_compose(&mut t, &p, &[SOW, 4, 5, EOW]).unwrap();
        let c = c2w_compose(&mut t, &p, &[SOW, 5, 4, EOW]).unwrap();
        assert_eq!(t.value(a), t.value(b));
        assert_ne!(t.value(a), t.value(c));
    }

    #[test]
    fn c2w_requires_word_markers() {
        let (store, p) = c2w(0);
        let mut t = Tape::new(&store);
        assert!(c2w_compose(&mut t, &p, &[4, 5]).is_err());
        assert!(c2w_compose(&mut t, &p, &[SOW, 4]).is_err());
        assert!(c2w_compose(&mut t, &p, &[SOW, 40, EOW]).is_err());
    }

    #[test]
    fn bilstm_matches_straight_line_reference() {
        let (store, p) = encoder(3);
        let words = [WordInput::Sos, word(4), word(7), word(5), WordInput::Eos];
        let lookup = store.get(p.projection.lookup.unwrap());
        let special = store.get(p.projection.special);
        let xs: Vec<Vec<f64>> = words
            .iter()
            .map(|w| match w {
                WordInput::Sos => special.row(0).to_vec(),
                WordInput::Eos => special.row(1).to_vec(),
                WordInput::Word { id, .. } => lookup.row(*id).to_vec(),
            })
            .collect();
        let gf = reference::lstm_run(&store, &p.fwd, &xs);
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let mut gb = reference::lstm_run(&store, &p.bwd, &rev);
        gb.reverse();
        let bias = store.get(p.bias).data();

        let mut t = Tape::new(&store);
        let ctx = encode_source(&mut t, &p, &words).unwrap();
        assert_eq!(ctx.len(), words.len());
        for i in 0..words.len() {
            let f = reference::matvec(store.get(p.cf), &gf[i]);
            let b = reference::matvec(store.get(p.cb), &gb[i]);
            for k in 0..5 {
                assert!((t.value(ctx[i])[k] - (f[k] + b[k] + bias[k])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_states_only_see_the_prefix() {
        let (store, p) = encoder(4);
        let a = [WordInput::Sos, word(4), word(5), word(6), WordInput::Eos];
        let b = [WordInput::Sos, word(4), word(5), word(8), WordInput::Eos];
        let mut t = Tape::new(&store);
        let va = embed_source_words(&mut t, &p, &a).unwrap();
        let vb = embed_source_words(&mut t, &p, &b).unwrap();
        let sa = bilstm_states(&mut t, &p, &va).unwrap();
        let sb = bilstm_states(&mut t, &p, &vb).unwrap();
        for i in 0..3 {
            assert_eq!(t.value(sa.forward[i]), t.value(sb.forward[i]));
        }
        assert_ne!(t.value(sa.forward[3]), t.value(sb.forward[3]));
        // and backward states only see the suffix
        assert_eq!(t.value(sa.backward[4]), t.value(sb.backward[4]));
        assert_ne!(t.value(sa.backward[2]), t.value(sb.backward[2]));
    }

    #[test]
    fn zero_combination_gives_bias() {
        let (mut store, p) = encoder(5);
        *store.get_mut(p.cf) = Tensor::zeros(&[5, 4]);
        *store.get_mut(p.cb) = Tensor::zeros(&[5, 4]);
        let bias = store.get(p.bias).data().to_vec();
        let mut t = Tape::new(&store);
        let ctx = encode_source(&mut t, &p, &[WordInput::Sos, word(4), WordInput::Eos]).unwrap();
        for c in ctx {
            assert_eq!(t.value(c), &bias[..]);
        }
    }

    #[test]
    fn projection_needs_the_right_table() {
        let (store, mut p) = encoder(6);
        p.projection.mode = ProjectionMode::C2w;
        let mut t = Tape::new(&store);
        assert!(p.projection.project(&mut t, &word(4)).is_err());
        assert!(p.projection.project(&mut t, &WordInput::Sos).is_ok());
        assert!(encode_source(&mut t, &p, &[]).is_err());
    }
}
