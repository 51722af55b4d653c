//! The full translation model: parameters, vocabularies and the wiring
//! between encoder, attention and output layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{attend, AttentionParams, Attended, SourceMemory};
use crate::config::ModelConfig;
use crate::corpus::{
    build_char_vocab, build_word_vocab, encode_word_chars, eos_word_chars, ParallelCorpus, SentencePair, Vocab, EOS,
};
use crate::encoder::{bind_param, encode_source, C2wParams, ProjectionMode, SourceEncoderParams, WordInput, WordProjection};
use crate::error::{Error, Result};
use crate::generator::{target_step, TargetContextParams, V2cParams, WordSoftmaxParams};
use crate::numerics::{LstmParams, LstmState, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Word lookup tables and a word softmax.
    Word,
    /// C2W composition on both sides and the V2C character generator.
    Char,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabs {
    pub source_words: Vocab,
    pub target_words: Vocab,
    pub source_chars: Vocab,
    pub target_chars: Vocab,
}

impl Vocabs {
    pub fn build(corpus: &ParallelCorpus, min_count: usize) -> Self {
        Self {
            source_words: build_word_vocab(corpus.sources(), min_count),
            target_words: build_word_vocab(corpus.targets(), min_count),
            source_chars: build_char_vocab(corpus.sources()),
            target_chars: build_char_vocab(corpus.targets()),
        }
    }

    pub(crate) fn reindex(&mut self) {
        self.source_words.reindex();
        self.target_words.reindex();
        self.source_chars.reindex();
        self.target_chars.reindex();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutputLayer {
    Softmax(WordSoftmaxParams),
    V2c(V2cParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub encoder: SourceEncoderParams,
    pub target: TargetContextParams,
    pub attention: AttentionParams,
    pub output: OutputLayer,
}

/// One sentence pair encoded for teacher forcing. With `m` target words
/// there are `m + 1` predictions: the words followed by EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPair {
    /// `SOS w₁ … wₙ EOS`
    pub source: Vec<WordInput>,
    /// Inputs of the target context LSTM: `SOS t₁ … t_m`.
    pub target_inputs: Vec<WordInput>,
    /// Word ids to predict: `t₁ … t_m EOS`.
    pub target_ids: Vec<usize>,
    /// Character spellings to predict; the last one is the EOS word.
    pub target_chars: Vec<Vec<usize>>,
    /// Per prediction, the aligned position in `source` (markers included),
    /// or `None` where no supervision applies.
    pub alignment: Vec<Option<usize>>,
}

impl EncodedPair {
    pub fn predictions(&self) -> usize {
        self.target_ids.len()
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub kind: ModelKind,
    pub vocabs: Vocabs,
    pub params: ParamStore,
    pub layout: Layout,
}

fn lookup_and_special(
    store: &mut ParamStore,
    prefix: &str,
    n_words: usize,
    d: usize,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(ParamId, ParamId)> {
    let lookup = store.insert(format!("{prefix}.lookup"), Tensor::uniform(&[n_words, d], scale, rng))?;
    let special = store.insert(format!("{prefix}.special"), Tensor::uniform(&[2, d], scale, rng))?;
    Ok((lookup, special))
}

impl Model {
    /// Fresh model with seeded uniform initialization. Character models start
    /// in lookup mode on both sides, as layer-wise training expects; call
    /// [`Model::set_projection`] to switch to C2W.
    pub fn new(config: ModelConfig, kind: ModelKind, vocabs: Vocabs) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let scale = c.init_scale;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut store = ParamStore::new();
        let is_char = kind == ModelKind::Char;

        let (src_lookup, src_special) =
            lookup_and_special(&mut store, "src", vocabs.source_words.len(), c.d_sw, scale, &mut rng)?;
        let src_c2w = if is_char {
            Some(C2wParams::init(
                &mut store,
                "src.c2w",
                vocabs.source_chars.len(),
                c.d_sc,
                c.d_lstm,
                c.d_sw,
                scale,
                &mut rng,
            )?)
        } else {
            None
        };
        let enc_fwd = LstmParams::init(&mut store, "enc.fwd", c.d_sw, c.d_lstm, scale, &mut rng)?;
        let enc_bwd = LstmParams::init(&mut store, "enc.bwd", c.d_sw, c.d_lstm, scale, &mut rng)?;
        let cf = store.insert("enc.cf", Tensor::uniform(&[c.d_z, c.d_lstm], scale, &mut rng))?;
        let cb = store.insert("enc.cb", Tensor::uniform(&[c.d_z, c.d_lstm], scale, &mut rng))?;
        let bias = store.insert("enc.bias", Tensor::uniform(&[c.d_z], scale, &mut rng))?;

        let (tgt_lookup, tgt_special) =
            lookup_and_special(&mut store, "tgt", vocabs.target_words.len(), c.d_tw, scale, &mut rng)?;
        let tgt_c2w = if is_char {
            Some(C2wParams::init(
                &mut store,
                "tgt.c2w",
                vocabs.target_chars.len(),
                c.d_tc,
                c.d_lstm,
                c.d_tw,
                scale,
                &mut rng,
            )?)
        } else {
            None
        };
        let dec = LstmParams::init(&mut store, "dec.lstm", c.d_tw, c.d_lstm, scale, &mut rng)?;
        let attention = AttentionParams::init(&mut store, c.d_z, c.d_lstm, scale, &mut rng)?;
        let output = match (kind, tgt_c2w) {
            (ModelKind::Word, _) => OutputLayer::Softmax(WordSoftmaxParams::init(
                &mut store,
                vocabs.target_words.len(),
                c.d_z,
                c.d_lstm,
                scale,
                &mut rng,
            )?),
            (ModelKind::Char, Some(tc)) => OutputLayer::V2c(V2cParams::init(
                &mut store,
                tc.chars,
                c.d_z + c.d_lstm,
                c.d_lstm,
                c.max_word_len,
                scale,
                &mut rng,
            )?),
            (ModelKind::Char, None) => unreachable!("char models always have a target C2W"),
        };

        let layout = Layout {
            encoder: SourceEncoderParams {
                projection: WordProjection {
                    mode: ProjectionMode::Lookup,
                    lookup: Some(src_lookup),
                    c2w: src_c2w,
                    special: src_special,
                    d_out: c.d_sw,
                },
                fwd: enc_fwd,
                bwd: enc_bwd,
                cf,
                cb,
                bias,
                d_context: c.d_z,
            },
            target: TargetContextParams {
                projection: WordProjection {
                    mode: ProjectionMode::Lookup,
                    lookup: Some(tgt_lookup),
                    c2w: tgt_c2w,
                    special: tgt_special,
                    d_out: c.d_tw,
                },
                lstm: dec,
            },
            attention,
            output,
        };
        Ok(Self {
            config,
            kind,
            vocabs,
            params: store,
            layout,
        })
    }

    /// Reassembles a model around an existing parameter store, validating
    /// every tensor shape against the config and vocabularies.
    pub fn from_parts(
        config: ModelConfig,
        kind: ModelKind,
        mut vocabs: Vocabs,
        params: ParamStore,
        mode: ProjectionMode,
    ) -> Result<Self> {
        config.validate()?;
        vocabs.reindex();
        let c = &config;
        let is_char = kind == ModelKind::Char;
        let s = &params;
        let src_c2w = if is_char {
            Some(C2wParams::bind(s, "src.c2w", vocabs.source_chars.len(), c.d_sc, c.d_lstm, c.d_sw)?)
        } else {
            None
        };
        let tgt_c2w = if is_char {
            Some(C2wParams::bind(s, "tgt.c2w", vocabs.target_chars.len(), c.d_tc, c.d_lstm, c.d_tw)?)
        } else {
            None
        };
        let output = match tgt_c2w {
            None => OutputLayer::Softmax(WordSoftmaxParams::bind(s, vocabs.target_words.len(), c.d_z, c.d_lstm)?),
            Some(tc) => OutputLayer::V2c(V2cParams::bind(s, tc.chars, c.d_z + c.d_lstm, c.d_lstm, c.max_word_len)?),
        };
        let layout = Layout {
            encoder: SourceEncoderParams {
                projection: WordProjection {
                    mode,
                    lookup: Some(bind_param(s, "src.lookup", &[vocabs.source_words.len(), c.d_sw])?),
                    c2w: src_c2w,
                    special: bind_param(s, "src.special", &[2, c.d_sw])?,
                    d_out: c.d_sw,
                },
                fwd: LstmParams::bind(s, "enc.fwd", c.d_sw, c.d_lstm)?,
                bwd: LstmParams::bind(s, "enc.bwd", c.d_sw, c.d_lstm)?,
                cf: bind_param(s, "enc.cf", &[c.d_z, c.d_lstm])?,
                cb: bind_param(s, "enc.cb", &[c.d_z, c.d_lstm])?,
                bias: bind_param(s, "enc.bias", &[c.d_z])?,
                d_context: c.d_z,
            },
            target: TargetContextParams {
                projection: WordProjection {
                    mode,
                    lookup: Some(bind_param(s, "tgt.lookup", &[vocabs.target_words.len(), c.d_tw])?),
                    c2w: tgt_c2w,
                    special: bind_param(s, "tgt.special", &[2, c.d_tw])?,
                    d_out: c.d_tw,
                },
                lstm: LstmParams::bind(s, "dec.lstm", c.d_tw, c.d_lstm)?,
            },
            attention: AttentionParams::bind(s, c.d_z, c.d_lstm)?,
            output,
        };
        let expected = count_layout_params(kind);
        if params.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} parameter tensors for a {kind:?} model, found {}",
                params.len()
            )));
        }
        if mode == ProjectionMode::C2w && !is_char {
            return Err(Error::Checkpoint("word models have no C2W projection".into()));
        }
        Ok(Self {
            config,
            kind,
            vocabs,
            params,
            layout,
        })
    }

    pub fn projection_mode(&self) -> ProjectionMode {
        self.layout.encoder.projection.mode
    }

    /// Switches both sides between word lookups and C2W composition.
    pub fn set_projection(&mut self, mode: ProjectionMode) -> Result<()> {
        if mode == ProjectionMode::C2w && self.kind != ModelKind::Char {
            return Err(Error::Invalid("word models have no C2W projection".into()));
        }
        self.layout.encoder.projection.mode = mode;
        self.layout.target.projection.mode = mode;
        Ok(())
    }

    pub fn v2c(&self) -> Option<&V2cParams> {
        match &self.layout.output {
            OutputLayer::V2c(v) => Some(v),
            OutputLayer::Softmax(_) => None,
        }
    }

    pub fn word_softmax(&self) -> Option<&WordSoftmaxParams> {
        match &self.layout.output {
            OutputLayer::Softmax(w) => Some(w),
            OutputLayer::V2c(_) => None,
        }
    }

    fn word_input(&self, word: &str, words: &Vocab, chars: &Vocab, has_c2w: bool) -> Result<WordInput> {
        let char_ids = if has_c2w {
            encode_word_chars(word, chars, self.config.max_word_len)?
        } else {
            Vec::new()
        };
        Ok(WordInput::Word {
            id: words.id(word),
            chars: char_ids,
        })
    }

    pub fn source_input(&self, word: &str) -> Result<WordInput> {
        let v = &self.vocabs;
        self.word_input(
            word,
            &v.source_words,
            &v.source_chars,
            self.layout.encoder.projection.c2w.is_some(),
        )
    }

    pub fn target_input(&self, word: &str) -> Result<WordInput> {
        let v = &self.vocabs;
        self.word_input(
            word,
            &v.target_words,
            &v.target_chars,
            self.layout.target.projection.c2w.is_some(),
        )
    }

    /// `SOS w₁ … wₙ EOS`
    pub fn source_inputs<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<WordInput>> {
        if words.len() > self.config.max_sent_len {
            return Err(Error::Invalid(format!(
                "sentence has {} words, limit is {}",
                words.len(),
                self.config.max_sent_len
            )));
        }
        let mut out = Vec::with_capacity(words.len() + 2);
        out.push(WordInput::Sos);
        for w in words {
            out.push(self.source_input(w.as_ref())?);
        }
        out.push(WordInput::Eos);
        Ok(out)
    }

    pub fn target_spelling(&self, word: &str) -> Result<Vec<usize>> {
        encode_word_chars(word, &self.vocabs.target_chars, self.config.max_word_len)
    }

    pub fn encode_pair(&self, pair: &SentencePair) -> Result<EncodedPair> {
        let source = self.source_inputs(&pair.source)?;
        let mut target_inputs = vec![WordInput::Sos];
        let mut target_ids = Vec::with_capacity(pair.target.len() + 1);
        let mut target_chars = Vec::with_capacity(pair.target.len() + 1);
        for w in &pair.target {
            target_inputs.push(self.target_input(w)?);
            target_ids.push(self.vocabs.target_words.id(w));
            if self.kind == ModelKind::Char {
                target_chars.push(self.target_spelling(w)?);
            }
        }
        target_ids.push(EOS);
        if self.kind == ModelKind::Char {
            target_chars.push(eos_word_chars());
        }
        let mut alignment = vec![None; target_ids.len()];
        if let Some(map) = &pair.alignment {
            for (&j, &i) in map {
                if j >= pair.target.len() || i >= pair.source.len() {
                    return Err(Error::OutOfRange {
                        what: "alignment",
                        index: j.max(i),
                        size: pair.target.len().min(pair.source.len()),
                    });
                }
                // +1 skips SOS on the source side
                alignment[j] = Some(i + 1);
            }
        }
        Ok(EncodedPair {
            source,
            target_inputs,
            target_ids,
            target_chars,
            alignment,
        })
    }

    pub fn encode_corpus(&self, corpus: &ParallelCorpus) -> Result<Vec<EncodedPair>> {
        corpus.pairs.iter().map(|p| self.encode_pair(p)).collect()
    }

    /// Runs the source encoder and prepares attention memory.
    pub fn encode_source(&self, tape: &mut Tape<'_>, source: &[WordInput]) -> Result<SourceMemory> {
        let contexts = encode_source(tape, &self.layout.encoder, source)?;
        SourceMemory::new(tape, &self.layout.attention, contexts)
    }

    /// Target context state after reading SOS.
    pub fn start_target(&self, tape: &mut Tape<'_>) -> Result<LstmState> {
        let s0 = LstmState::zero(tape, self.layout.target.lstm.hidden);
        target_step(tape, &self.layout.target, &WordInput::Sos, s0)
    }

    pub fn advance_target(&self, tape: &mut Tape<'_>, state: LstmState, word: &WordInput) -> Result<LstmState> {
        target_step(tape, &self.layout.target, word, state)
    }

    pub fn attend(&self, tape: &mut Tape<'_>, target_context: Var, memory: &SourceMemory) -> Result<Attended> {
        attend(tape, &self.layout.attention, target_context, memory)
    }

    /// Parameters reachable in the current projection mode; lookup tables
    /// in C2W mode (and the reverse) are excluded.
    pub fn active_params(&self) -> Vec<ParamId> {
        let l = &self.layout;
        let mut ids = Vec::new();
        for proj in [&l.encoder.projection, &l.target.projection] {
            ids.push(proj.special);
            match proj.mode {
                ProjectionMode::Lookup => ids.extend(proj.lookup),
                ProjectionMode::C2w => ids.extend(proj.c2w.iter().flat_map(C2wParams::ids)),
            }
        }
        ids.extend(l.encoder.ids());
        ids.extend(l.target.lstm.ids());
        ids.extend(l.attention.ids());
        match &l.output {
            OutputLayer::Softmax(w) => ids.extend(w.ids()),
            OutputLayer::V2c(v) => ids.extend(v.ids()),
        }
        ids.sort();
        ids.dedup();
        ids
    }
}

fn count_layout_params(kind: ModelKind) -> usize {
    // per side: lookup + special; encoder: 2 LSTMs (3 each) + cf, cb, bias;
    // decoder LSTM: 3; attention: 3
    let base = 2 * 2 + 9 + 3 + 3;
    match kind {
        // word softmax: sa, sl
        ModelKind::Word => base + 2,
        // two C2W models (chars, 2 LSTMs, df, db, bd = 10 each) + V2C LSTM + sy
        ModelKind::Char => base + 2 * 10 + 3 + 1,
    }
}
