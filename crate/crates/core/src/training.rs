//! Objectives, mini-batch SGD, C2W distillation and the layer-wise
//! training schedule with early stopping on dev BLEU.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::supervision_term;
use crate::corpus::{ParallelCorpus, PAD, SOS};
use crate::encoder::{c2w_compose, C2wParams, ProjectionMode};
use crate::error::{Error, Result};
use crate::eval::bleu;
use crate::generator::{nce_loss, v2c_context, v2c_word_logprob, word_scores, NoiseDistribution};
use crate::model::{EncodedPair, Model, ModelKind, OutputLayer};
use crate::numerics::{Gradients, ParamId, ParamStore, Tape, Var};
use crate::search::{translate_all, SearchConfig};

/// How word predictions of the softmax baseline are scored. Character
/// models always use the exact (locally normalized) objective.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    Exact,
    Nce { noise: &'a NoiseDistribution, k: usize },
}

/// Per-sentence loss on the tape plus bookkeeping for reporting.
#[derive(Debug, Clone, Copy)]
pub struct SentenceLoss {
    pub loss: Var,
    /// Negative log-likelihood (or the NCE objective) without the
    /// supervision penalty.
    pub nll: f64,
    pub penalty: f64,
    pub predictions: usize,
    /// Predicted characters, EOW and the EOS character included.
    pub chars: usize,
}

/// Teacher-forced loss of one pair: `Σ −log P(t_p)` over words (softmax)
/// or characters (V2C), plus `Σ −λ log a_k` where alignments are given.
pub fn sentence_loss(
    tape: &mut Tape<'_>,
    model: &Model,
    pair: &EncodedPair,
    objective: Objective<'_>,
    rng: &mut impl Rng,
) -> Result<SentenceLoss> {
    let memory = model.encode_source(tape, &pair.source)?;
    let mut state = model.start_target(tape)?;
    let weight = model.config.supervision_weight;
    let mut nll_terms = Vec::with_capacity(pair.predictions());
    let mut penalty_terms = Vec::new();
    let mut chars = 0;
    for j in 0..pair.predictions() {
        let att = model.attend(tape, state.h, &memory)?;
        let term = match &model.layout.output {
            OutputLayer::Softmax(p) => match objective {
                Objective::Exact => {
                    let scores = word_scores(tape, p, att.context, state.h)?;
                    let lp = tape.log_softmax_pick(scores, pair.target_ids[j], None)?;
                    tape.scale(lp, -1.0)
                }
                Objective::Nce { noise, k } => {
                    nce_loss(tape, p, att.context, state.h, pair.target_ids[j], noise, k, rng)?
                }
            },
            OutputLayer::V2c(p) => {
                let ctx = v2c_context(tape, p, att.context, state.h)?;
                let spelling = &pair.target_chars[j];
                chars += spelling.len() - 1;
                let lp = v2c_word_logprob(tape, p, &ctx, spelling)?;
                tape.scale(lp, -1.0)
            }
        };
        nll_terms.push(term);
        if weight != 0.0 {
            if let Some(t) = supervision_term(tape, &att, pair.alignment[j], weight)? {
                penalty_terms.push(t);
            }
        }
        if j + 1 < pair.target_inputs.len() {
            state = model.advance_target(tape, state, &pair.target_inputs[j + 1])?;
        }
    }
    let nll = tape.sum_all(&nll_terms)?;
    let nll_value = tape.scalar(nll);
    let (loss, penalty) = if penalty_terms.is_empty() {
        (nll, 0.0)
    } else {
        let pen = tape.sum_all(&penalty_terms)?;
        let pv = tape.scalar(pen);
        (tape.add(nll, pen)?, pv)
    };
    if !tape.scalar(loss).is_finite() {
        return Err(Error::NonFinite(format!(
            "sentence loss (nll {nll_value}, penalty {penalty})"
        )));
    }
    Ok(SentenceLoss {
        loss,
        nll: nll_value,
        penalty,
        predictions: pair.predictions(),
        chars,
    })
}

/// Unigram distribution of target words (EOS included) for NCE.
pub fn noise_distribution(model: &Model, data: &[EncodedPair]) -> Result<NoiseDistribution> {
    let mut counts = vec![0.0; model.vocabs.target_words.len()];
    for pair in data {
        for &id in &pair.target_ids {
            counts[id] += 1.0;
        }
    }
    debug_assert!(counts[SOS] == 0.0 && counts[PAD] == 0.0);
    NoiseDistribution::from_counts(&counts)
}

/// True when the word baseline should train with NCE instead of the full
/// softmax.
pub fn uses_nce(model: &Model) -> bool {
    model.kind == ModelKind::Word && model.vocabs.target_words.len() > model.config.nce_vocab_threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossSummary {
    pub sentences: usize,
    pub nll: f64,
    pub penalty: f64,
    pub predictions: usize,
    pub chars: usize,
}

impl LossSummary {
    fn add(&mut self, s: &SentenceLoss) {
        self.sentences += 1;
        self.nll += s.nll;
        self.penalty += s.penalty;
        self.predictions += s.predictions;
        self.chars += s.chars;
    }

    /// Mean loss per sentence, penalty included.
    pub fn mean(&self) -> f64 {
        (self.nll + self.penalty) / self.sentences.max(1) as f64
    }

    pub fn mean_nll(&self) -> f64 {
        self.nll / self.sentences.max(1) as f64
    }

    /// `exp(nll / predicted characters)`; character models only.
    pub fn char_perplexity(&self) -> f64 {
        (self.nll / self.chars.max(1) as f64).exp()
    }

    pub fn word_perplexity(&self) -> f64 {
        (self.nll / self.predictions.max(1) as f64).exp()
    }
}

/// Exact teacher-forced loss over a data set, without parameter updates.
pub fn corpus_loss(model: &Model, data: &[EncodedPair]) -> Result<LossSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut summary = LossSummary::default();
    for pair in data {
        let mut tape = Tape::new(&model.params);
        let s = sentence_loss(&mut tape, model, pair, Objective::Exact, &mut rng)?;
        summary.add(&s);
    }
    Ok(summary)
}

/// Mean teacher-forced attention weight `a_k` on the aligned source position,
/// over every prediction that has an alignment; `None` when there are none.
pub fn mean_aligned_attention(model: &Model, data: &[EncodedPair]) -> Result<Option<f64>> {
    let mut total = 0.0;
    let mut count = 0usize;
    for pair in data {
        if pair.alignment.iter().all(Option::is_none) {
            continue;
        }
        let mut tape = Tape::new(&model.params);
        let memory = model.encode_source(&mut tape, &pair.source)?;
        let mut state = model.start_target(&mut tape)?;
        for j in 0..pair.predictions() {
            if let Some(k) = pair.alignment[j] {
                let att = model.attend(&mut tape, state.h, &memory)?;
                total += tape.value(att.coefficients)[k];
                count += 1;
            }
            if j + 1 < pair.target_inputs.len() {
                state = model.advance_target(&mut tape, state, &pair.target_inputs[j + 1])?;
            }
        }
    }
    Ok((count > 0).then(|| total / count as f64))
}

/// Summed gradient of a batch: per-pair gradients reduced in batch order.
pub fn batch_gradient(
    model: &Model,
    batch: &[&EncodedPair],
    objective: Objective<'_>,
    rng: &mut impl Rng,
) -> Result<(Gradients, LossSummary)> {
    let mut grads = Gradients::for_store(&model.params);
    let mut summary = LossSummary::default();
    for pair in batch {
        let mut tape = Tape::new(&model.params);
        let s = sentence_loss(&mut tape, model, pair, objective, rng)?;
        grads.accumulate(&tape.backward(s.loss)?);
        summary.add(&s);
    }
    Ok((grads, summary))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub loss: LossSummary,
    /// Largest pre-clipping gradient norm seen.
    pub max_grad_norm: f64,
}

/// One pass over `data` in a seeded random order: per batch, the summed
/// gradient is clipped to the configured global norm and applied as
/// `p ← p − lr·g`.
pub fn sgd_epoch(
    model: &mut Model,
    data: &[EncodedPair],
    learning_rate: f64,
    noise: Option<&NoiseDistribution>,
    rng: &mut ChaCha8Rng,
) -> Result<EpochReport> {
    if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
        return Err(Error::Config(format!("invalid learning rate {learning_rate}")));
    }
    if data.is_empty() {
        return Err(Error::Empty("no training pairs".into()));
    }
    let objective = match noise {
        Some(noise) => Objective::Nce {
            noise,
            k: model.config.nce_negatives,
        },
        None => Objective::Exact,
    };
    let mut order: Vec<&EncodedPair> = data.iter().collect();
    order.shuffle(rng);
    let mut total = LossSummary::default();
    let mut max_norm: f64 = 0.0;
    for batch in order.chunks(model.config.batch_size) {
        let (mut grads, summary) = batch_gradient(model, batch, objective, rng)?;
        let norm = grads.clip_global_norm(model.config.clip_norm);
        if !grads.all_finite() {
            return Err(Error::NonFinite(format!("gradient (norm {norm})")));
        }
        max_norm = max_norm.max(norm);
        model.params.apply_sgd(&grads, learning_rate);
        total.sentences += summary.sentences;
        total.nll += summary.nll;
        total.penalty += summary.penalty;
        total.predictions += summary.predictions;
        total.chars += summary.chars;
    }
    Ok(EpochReport {
        loss: total,
        max_grad_norm: max_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub initial_mse: f64,
    pub final_mse: f64,
    pub epochs: usize,
}

/// `Σ ‖target − c2w(word)‖² / n` on the tape.
fn distill_loss(tape: &mut Tape<'_>, c2w: &C2wParams, batch: &[&(Vec<usize>, Vec<f64>)]) -> Result<Var> {
    let mut terms = Vec::with_capacity(batch.len());
    for (chars, target) in batch {
        let v = c2w_compose(tape, c2w, chars)?;
        let t = tape.input(target.clone());
        let d = tape.sub(v, t)?;
        terms.push(tape.squared_norm(d));
    }
    let sum = tape.sum_all(&terms)?;
    Ok(tape.scale(sum, 1.0 / batch.len() as f64))
}

pub fn distill_mse(params: &ParamStore, c2w: &C2wParams, words: &[(Vec<usize>, Vec<f64>)]) -> Result<f64> {
    if words.is_empty() {
        return Ok(0.0);
    }
    let mut tape = Tape::new(params);
    let all: Vec<_> = words.iter().collect();
    let loss = distill_loss(&mut tape, c2w, &all)?;
    Ok(tape.scalar(loss))
}

/// Fits a C2W model to fixed word vectors: mini-batch gradient descent on
/// the mean squared distance, updating only `trainable`.
#[allow(clippy::too_many_arguments)]
pub fn distill_c2w(
    params: &mut ParamStore,
    c2w: &C2wParams,
    words: &[(Vec<usize>, Vec<f64>)],
    trainable: &[ParamId],
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    clip_norm: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DistillReport> {
    if let Some((_, v)) = words.iter().find(|(_, v)| v.len() != c2w.d_out) {
        return Err(Error::Shape(format!(
            "target vector of size {} for a C2W output of {}",
            v.len(),
            c2w.d_out
        )));
    }
    let initial_mse = distill_mse(params, c2w, words)?;
    let mut order: Vec<&(Vec<usize>, Vec<f64>)> = words.iter().collect();
    for _ in 0..epochs {
        if words.is_empty() {
            break;
        }
        order.shuffle(rng);
        for batch in order.chunks(batch_size.max(1)) {
            let mut grads = {
                let mut tape = Tape::new(params);
                let loss = distill_loss(&mut tape, c2w, batch)?;
                tape.backward(loss)?
            };
            grads.retain(|id| trainable.contains(&id));
            grads.clip_global_norm(clip_norm);
            if !grads.all_finite() {
                return Err(Error::NonFinite("distillation gradient".into()));
            }
            params.apply_sgd(&grads, learning_rate);
        }
    }
    Ok(DistillReport {
        initial_mse,
        final_mse: distill_mse(params, c2w, words)?,
        epochs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Word lookups in place of C2W.
    A,
    /// C2W distillation against the learned lookups.
    B,
    /// C2W in place, all parameters fine-tuned.
    C,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::A => "A",
            Stage::B => "B",
            Stage::C => "C",
        };
        f.write_str(s)
    }
}

/// Dev data in both encoded (loss) and raw (BLEU) form.
#[derive(Debug, Clone)]
pub struct DevSet {
    pub encoded: Vec<EncodedPair>,
    pub sources: Vec<Vec<String>>,
    pub references: Vec<Vec<String>>,
}

impl DevSet {
    pub fn new(model: &Model, corpus: &ParallelCorpus) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Empty("dev corpus".into()));
        }
        Ok(Self {
            encoded: model.encode_corpus(corpus)?,
            sources: corpus.pairs.iter().map(|p| p.source.clone()).collect(),
            references: corpus.pairs.iter().map(|p| p.target.clone()).collect(),
        })
    }
}

/// Translates the dev sources with the model's beam settings and scores
/// them against the references.
pub fn dev_bleu(model: &Model, dev: &DevSet) -> Result<f64> {
    let cfg = SearchConfig::from_model_config(&model.config);
    let out = translate_all(model, &dev.sources, &cfg)?;
    let hyps: Vec<Vec<String>> = out.into_iter().map(|t| t.words).collect();
    Ok(bleu(&hyps, &dev.references, model.config.bleu_smoothing)?.bleu)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: Stage,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_bleu: f64,
    pub learning_rate: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {} stage {} train_loss {:.6} dev_loss {:.6} dev_bleu {:.2} lr {}",
            self.epoch, self.stage, self.train_loss, self.dev_loss, self.dev_bleu, self.learning_rate
        )
    }
}

/// Progress notifications; the callback may persist checkpoints.
#[derive(Debug)]
pub enum TrainEvent<'a> {
    StageStarted(Stage),
    Epoch(&'a EpochLog),
    /// Dev score improved; `model` holds the new best parameters.
    Improved { model: &'a Model, log: &'a EpochLog },
    Distilled { side: &'static str, report: &'a DistillReport },
    StageFinished { stage: Stage, epochs: usize, best_bleu: f64 },
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub stage: Stage,
    /// Epochs run in the current stage.
    pub epoch: usize,
    pub best_bleu: f64,
    pub best_dev_loss: f64,
    pub epochs_since_improvement: usize,
    pub learning_rate: f64,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(config: &crate::ModelConfig) -> Self {
        Self {
            stage: Stage::A,
            epoch: 0,
            best_bleu: f64::NEG_INFINITY,
            best_dev_loss: f64::INFINITY,
            epochs_since_improvement: 0,
            learning_rate: config.learning_rate,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        }
    }

    /// Moves to `next`; only A→B→C is allowed.
    pub fn advance(&mut self, next: Stage) -> Result<()> {
        let ok = matches!((self.stage, next), (Stage::A, Stage::B) | (Stage::B, Stage::C));
        if !ok {
            return Err(Error::Invalid(format!("stage transition {} -> {next}", self.stage)));
        }
        self.stage = next;
        self.epoch = 0;
        self.best_bleu = f64::NEG_INFINITY;
        self.best_dev_loss = f64::INFINITY;
        self.epochs_since_improvement = 0;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub epochs: usize,
    pub best_bleu: f64,
    pub best_dev_loss: f64,
    pub history: Vec<EpochLog>,
}

/// Trains until dev BLEU has not improved for `patience_epochs` epochs (or
/// `max_epochs` is reached), then restores the best parameters. A tie in
/// BLEU counts as an improvement when the dev loss is lower. The learning
/// rate halves after `lr_halving_patience` epochs without improvement.
pub fn train_stage(
    model: &mut Model,
    train: &[EncodedPair],
    dev: &DevSet,
    state: &mut TrainState,
    on_event: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<StageReport> {
    let c = model.config.clone();
    let noise = if uses_nce(model) {
        Some(noise_distribution(model, train)?)
    } else {
        None
    };
    on_event(TrainEvent::StageStarted(state.stage))?;
    let mut best_params = model.params.clone();
    let mut history = Vec::new();
    let mut stalled = 0;
    while state.epoch < c.max_epochs && state.epochs_since_improvement < c.patience_epochs {
        state.epoch += 1;
        let report = sgd_epoch(model, train, state.learning_rate, noise.as_ref(), &mut state.rng)?;
        let dev_loss = corpus_loss(model, &dev.encoded)?.mean();
        let dev_bleu = dev_bleu(model, dev)?;
        let log = EpochLog {
            epoch: state.epoch,
            stage: state.stage,
            train_loss: report.loss.mean(),
            dev_loss,
            dev_bleu,
            learning_rate: state.learning_rate,
        };
        log::info!("{log}");
        on_event(TrainEvent::Epoch(&log))?;
        let improved = dev_bleu > state.best_bleu || (dev_bleu == state.best_bleu && dev_loss < state.best_dev_loss);
        if improved {
            state.best_bleu = dev_bleu;
            state.best_dev_loss = dev_loss;
            state.epochs_since_improvement = 0;
            stalled = 0;
            best_params = model.params.clone();
            on_event(TrainEvent::Improved { model, log: &log })?;
        } else {
            state.epochs_since_improvement += 1;
            stalled += 1;
            if stalled >= c.lr_halving_patience {
                state.learning_rate /= 2.0;
                stalled = 0;
            }
        }
        history.push(log);
    }
    model.params = best_params;
    log::info!(
        "stage {} stopped after epoch {} (best dev_bleu {:.2})",
        state.stage,
        state.epoch,
        state.best_bleu
    );
    on_event(TrainEvent::StageFinished {
        stage: state.stage,
        epochs: state.epoch,
        best_bleu: state.best_bleu,
    })?;
    Ok(StageReport {
        stage: state.stage,
        epochs: state.epoch,
        best_bleu: state.best_bleu,
        best_dev_loss: state.best_dev_loss,
        history,
    })
}

/// Distillation pairs `(SOW chars EOW, lookup row)` for every regular word
/// type of one side.
fn distill_targets(model: &Model, source_side: bool) -> Result<Vec<(Vec<usize>, Vec<f64>)>> {
    let (proj, vocab) = if source_side {
        (&model.layout.encoder.projection, &model.vocabs.source_words)
    } else {
        (&model.layout.target.projection, &model.vocabs.target_words)
    };
    let lookup = proj
        .lookup
        .ok_or_else(|| Error::Invalid("no lookup table to distill from".into()))?;
    let table = model.params.get(lookup);
    vocab
        .regular_tokens()
        .iter()
        .map(|w| {
            let chars = if source_side {
                crate::corpus::encode_word_chars(w, &model.vocabs.source_chars, model.config.max_word_len)?
            } else {
                model.target_spelling(w)?
            };
            let id = vocab.id(w);
            Ok((chars, table.row(id).to_vec()))
        })
        .collect()
}

/// Stage B on both sides. The target character table is shared with the
/// V2C generator and stays frozen so Stage A's generator is undisturbed.
pub fn distill_both(model: &mut Model, rng: &mut ChaCha8Rng) -> Result<(DistillReport, DistillReport)> {
    let c = model.config.clone();
    let mut run = |model: &mut Model, source_side: bool| -> Result<DistillReport> {
        let proj = if source_side {
            model.layout.encoder.projection
        } else {
            model.layout.target.projection
        };
        let c2w = proj
            .c2w
            .ok_or_else(|| Error::Invalid("model has no C2W projection".into()))?;
        let mut trainable = c2w.ids();
        if !source_side {
            trainable.retain(|&id| id != c2w.chars);
        }
        let targets = distill_targets(model, source_side)?;
        distill_c2w(
            &mut model.params,
            &c2w,
            &targets,
            &trainable,
            c.distill_epochs,
            c.distill_learning_rate,
            c.batch_size,
            c.distill_clip_norm,
            rng,
        )
    };
    let src = run(model, true)?;
    let tgt = run(model, false)?;
    Ok((src, tgt))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub stages: Vec<StageReport>,
    pub distill: Option<(DistillReport, DistillReport)>,
    /// Dev loss at the end of Stage A and right after the switch to C2W.
    pub swap_dev_loss: Option<(f64, f64)>,
}

/// Word models: a single stage. Character models: Stage A with lookups,
/// Stage B distillation, Stage C fine-tuning with C2W.
pub fn train_layerwise(
    model: &mut Model,
    train: &ParallelCorpus,
    dev: &ParallelCorpus,
    on_event: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainingReport> {
    let train_data = model.encode_corpus(train)?;
    let dev_set = DevSet::new(model, dev)?;
    let mut state = TrainState::new(&model.config);
    model.set_projection(ProjectionMode::Lookup)?;
    let a = train_stage(model, &train_data, &dev_set, &mut state, on_event)?;
    if model.kind == ModelKind::Word {
        return Ok(TrainingReport {
            stages: vec![a],
            distill: None,
            swap_dev_loss: None,
        });
    }

    state.advance(Stage::B)?;
    on_event(TrainEvent::StageStarted(Stage::B))?;
    let before = corpus_loss(model, &dev_set.encoded)?.mean();
    let (src, tgt) = distill_both(model, &mut state.rng)?;
    for (side, report) in [("source", &src), ("target", &tgt)] {
        log::info!(
            "stage B {side} distillation mse {:.6} -> {:.6}",
            report.initial_mse,
            report.final_mse
        );
        on_event(TrainEvent::Distilled { side, report })?;
    }
    model.set_projection(ProjectionMode::C2w)?;
    let after = corpus_loss(model, &dev_set.encoded)?.mean();
    log::info!("dev loss {before:.6} with lookups, {after:.6} with C2W");

    // fine-tuning keeps Stage A's learning rate and must beat the swapped model
    state.advance(Stage::C)?;
    state.best_bleu = dev_bleu(model, &dev_set)?;
    state.best_dev_loss = after;
    let c = train_stage(model, &train_data, &dev_set, &mut state, on_event)?;
    Ok(TrainingReport {
        stages: vec![a, c],
        distill: Some((src, tgt)),
        swap_dev_loss: Some((before, after)),
    })
}
