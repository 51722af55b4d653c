//! Finite-difference checks of every model component at a given config.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::supervision_term;
use crate::config::ModelConfig;
use crate::corpus::{ParallelCorpus, SentencePair};
use crate::encoder::{c2w_compose, encode_source, ProjectionMode, WordInput};
use crate::error::{Error, Result};
use crate::generator::{v2c_context, v2c_word_logprob};
use crate::model::{Model, ModelKind, Vocabs};
use crate::numerics::{finite_difference_check, GradCheckReport, ParamId, Tape, Var};
use crate::training::{sentence_loss, Objective};

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub group: &'static str,
    pub max_relative_error: f64,
    pub checked: usize,
    pub worst_param: Option<String>,
}

impl GroupReport {
    fn new(group: &'static str, r: GradCheckReport) -> Self {
        Self {
            group,
            max_relative_error: r.max_relative_error,
            checked: r.checked,
            worst_param: r.worst.map(|w| format!("{}[{}] analytic {} numeric {}", w.0, w.1, w.2, w.3)),
        }
    }
}

fn fixture() -> ParallelCorpus {
    let mut pairs = vec![
        SentencePair::new("the small house", "a casa pequena"),
        SentencePair::new("small houses", "casas pequenas"),
    ];
    pairs[0].alignment = Some([(0, 0), (1, 2), (2, 1)].into());
    ParallelCorpus { pairs }
}

/// `r·v` for a fixed random `r`, turning a vector output into a scalar with
/// a generic gradient.
fn project(tape: &mut Tape<'_>, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f64> = (0..tape.dim(v)).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r = tape.input(r);
    tape.dot(r, v)
}

fn check(
    model: &Model,
    group: &'static str,
    candidates: &[ParamId],
    loss: impl Fn(&mut Tape<'_>) -> Result<Var>,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<GroupReport> {
    let r = finite_difference_check(&model.params, candidates, loss, epsilon, samples, seed)?;
    Ok(GroupReport::new(group, r))
}

/// Checks C2W, the source BLSTM, attention, the word softmax, V2C, the
/// supervision penalty and the whole character-model loss, `samples`
/// entries each.
pub fn gradcheck_suite(config: &ModelConfig, epsilon: f64, samples: usize, seed: u64) -> Result<Vec<GroupReport>> {
    let corpus = fixture();
    let mut config = config.clone();
    config.min_count = 1;
    let mut char_model = Model::new(config.clone(), ModelKind::Char, Vocabs::build(&corpus, 1))?;
    char_model.set_projection(ProjectionMode::C2w)?;
    let word_model = Model::new(config, ModelKind::Word, Vocabs::build(&corpus, 1))?;
    let m = &char_model;
    let pair = m.encode_pair(&corpus.pairs[0])?;
    let l = &m.layout;
    let mut out = Vec::new();

    let src_c2w = l.encoder.projection.c2w.ok_or_else(|| Error::Invalid("no C2W".into()))?;
    let chars = match &pair.source[1] {
        WordInput::Word { chars, .. } => chars.clone(),
        _ => unreachable!("position 1 is a word"),
    };
    out.push(check(
        m,
        "c2w",
        &src_c2w.ids(),
        |t| {
            let v = c2w_compose(t, &src_c2w, &chars)?;
            project(t, v, 1)
        },
        epsilon,
        samples,
        seed,
    )?);

    out.push(check(
        m,
        "encoder",
        &l.encoder.ids(),
        |t| {
            let ctx = encode_source(t, &l.encoder, &pair.source)?;
            let all = t.concat(&ctx);
            project(t, all, 2)
        },
        epsilon,
        samples,
        seed + 1,
    )?);

    let attention_loss = |t: &mut Tape<'_>, supervised: bool| -> Result<Var> {
        let memory = m.encode_source(t, &pair.source)?;
        let state = m.start_target(t)?;
        let att = m.attend(t, state.h, &memory)?;
        if supervised {
            supervision_term(t, &att, Some(2), 1.0)?.ok_or_else(|| Error::Invalid("no penalty".into()))
        } else {
            project(t, att.context, 3)
        }
    };
    out.push(check(
        m,
        "attention",
        &l.attention.ids(),
        |t| attention_loss(t, false),
        epsilon,
        samples,
        seed + 2,
    )?);

    let wm = &word_model;
    let wpair = wm.encode_pair(&corpus.pairs[0])?;
    let softmax_ids = wm
        .word_softmax()
        .map(|w| w.ids())
        .ok_or_else(|| Error::Invalid("no word softmax".into()))?;
    out.push(check(
        wm,
        "word_softmax",
        &softmax_ids,
        |t| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            Ok(sentence_loss(t, wm, &wpair, Objective::Exact, &mut rng)?.loss)
        },
        epsilon,
        samples,
        seed + 3,
    )?);

    let v2c = m.v2c().ok_or_else(|| Error::Invalid("no V2C".into()))?;
    let spelling = pair.target_chars[1].clone();
    out.push(check(
        m,
        "v2c",
        &v2c.ids(),
        |t| {
            let a = t.input((0..m.config.d_z).map(|i| (i as f64 * 0.37).sin()).collect());
            let h = t.input((0..m.config.d_lstm).map(|i| (i as f64 * 0.11).cos() * 0.5).collect());
            let ctx = v2c_context(t, v2c, a, h)?;
            let lp = v2c_word_logprob(t, v2c, &ctx, &spelling)?;
            Ok(t.scale(lp, -1.0))
        },
        epsilon,
        samples,
        seed + 4,
    )?);

    let mut sup_ids = l.attention.ids();
    sup_ids.extend(l.encoder.ids());
    out.push(check(
        m,
        "supervision",
        &sup_ids,
        |t| attention_loss(t, true),
        epsilon,
        samples,
        seed + 5,
    )?);

    out.push(check(
        m,
        "full_char_loss",
        &m.active_params(),
        |t| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            Ok(sentence_loss(t, m, &pair, Objective::Exact, &mut rng)?.loss)
        },
        epsilon,
        samples,
        seed + 6,
    )?);
    Ok(out)
}
