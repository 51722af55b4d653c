//! Soft alignment of the next target word over the source context vectors.

use rand::Rng;

use crate::encoder::bind_param;
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionParams {
    /// d_z × d_lstm, applied to the target context.
    pub wt: ParamId,
    /// d_z × d_z, applied to each source context.
    pub ws: ParamId,
    /// 1 × d_z scoring vector.
    pub s: ParamId,
}

impl AttentionParams {
    pub fn init(store: &mut ParamStore, d_z: usize, d_lstm: usize, scale: f64, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            wt: store.insert("att.wt", Tensor::uniform(&[d_z, d_lstm], scale, rng))?,
            ws: store.insert("att.ws", Tensor::uniform(&[d_z, d_z], scale, rng))?,
            s: store.insert("att.s", Tensor::uniform(&[1, d_z], scale, rng))?,
        })
    }

    pub fn bind(store: &ParamStore, d_z: usize, d_lstm: usize) -> Result<Self> {
        Ok(Self {
            wt: bind_param(store, "att.wt", &[d_z, d_lstm])?,
            ws: bind_param(store, "att.ws", &[d_z, d_z])?,
            s: bind_param(store, "att.s", &[1, d_z])?,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![self.wt, self.ws, self.s]
    }
}

/// Source contexts with their `W_s·bᵢ` projections, which do not depend on
/// the target position and are computed once per sentence.
#[derive(Debug, Clone)]
pub struct SourceMemory {
    pub contexts: Vec<Var>,
    projected: Vec<Var>,
}

impl SourceMemory {
    pub fn new(tape: &mut Tape<'_>, p: &AttentionParams, contexts: Vec<Var>) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::Empty("attention over zero source vectors".into()));
        }
        let projected = contexts
            .iter()
            .map(|&b| tape.matvec(p.ws, b))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { contexts, projected })
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Attended {
    /// Unnormalized scores `zᵢ`.
    pub scores: Var,
    pub coefficients: Var,
    /// `𝐚 = Σ aᵢ bᵢ`.
    pub context: Var,
}

/// `zᵢ = s·tanh(W_t l + W_s bᵢ)`, `a = softmax(z)`, `𝐚 = Σ aᵢ bᵢ`.
pub fn attend(tape: &mut Tape<'_>, p: &AttentionParams, target_context: Var, memory: &SourceMemory) -> Result<Attended> {
    let wl = tape.matvec(p.wt, target_context)?;
    let mut z = Vec::with_capacity(memory.len());
    for &wb in &memory.projected {
        let h = tape.add(wl, wb)?;
        let h = tape.tanh(h);
        z.push(tape.matvec(p.s, h)?);
    }
    let scores = tape.concat(&z);
    let coefficients = tape.softmax(scores);
    let context = tape.weighted_sum(coefficients, &memory.contexts)?;
    Ok(Attended {
        scores,
        coefficients,
        context,
    })
}

/// `−λ·log a_k` for an aligned source position `k`, zero when the target
/// word has no (one-to-one) alignment.
pub fn supervision_penalty(coefficients: &[f64], aligned: Option<usize>, weight: f64) -> Result<f64> {
    match aligned {
        None => Ok(0.0),
        Some(k) if k >= coefficients.len() => Err(Error::OutOfRange {
            what: "attention coefficients",
            index: k,
            size: coefficients.len(),
        }),
        Some(k) => Ok(-weight * coefficients[k].ln()),
    }
}

/// Differentiable form of [`supervision_penalty`], computed from the scores
/// through a log-softmax so it stays finite when `a_k` underflows.
pub fn supervision_term(tape: &mut Tape<'_>, att: &Attended, aligned: Option<usize>, weight: f64) -> Result<Option<Var>> {
    let Some(k) = aligned else { return Ok(None) };
    let n = tape.dim(att.scores);
    if k >= n {
        return Err(Error::OutOfRange {
            what: "attention coefficients",
            index: k,
            size: n,
        });
    }
    let log_ak = tape.log_softmax_pick(att.scores, k, None)?;
    Ok(Some(tape.scale(log_ak, -weight)))
}
