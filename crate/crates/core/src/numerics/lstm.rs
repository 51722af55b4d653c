use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Gate blocks are stacked `[input, forget, output, candidate]` along the
/// rows of `wx` (4h × d_in), `wh` (4h × h) and `b` (4h).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub hidden: usize,
}

pub const FORGET_BIAS_INIT: f64 = 1.0;

impl LstmParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        hidden: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let wx = store.insert(
            format!("{prefix}.wx"),
            Tensor::uniform(&[4 * hidden, d_in], scale, rng),
        )?;
        let wh = store.insert(
            format!("{prefix}.wh"),
            Tensor::uniform(&[4 * hidden, hidden], scale, rng),
        )?;
        let mut bias = Tensor::uniform(&[4 * hidden], scale, rng);
        bias.data_mut()[hidden..2 * hidden].fill(FORGET_BIAS_INIT);
        let b = store.insert(format!("{prefix}.b"), bias)?;
        Ok(Self {
            wx,
            wh,
            b,
            d_in,
            hidden,
        })
    }

    /// Re-binds to tensors already present in `store`, checking shapes.
    pub fn bind(store: &ParamStore, prefix: &str, d_in: usize, hidden: usize) -> Result<Self> {
        let get = |suffix: &str, shape: &[usize]| -> Result<ParamId> {
            let name = format!("{prefix}.{suffix}");
            let id = store
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if store.get(id).shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "{name}: expected shape {shape:?}, found {:?}",
                    store.get(id).shape()
                )));
            }
            Ok(id)
        };
        Ok(Self {
            wx: get("wx", &[4 * hidden, d_in])?,
            wh: get("wh", &[4 * hidden, hidden])?,
            b: get("b", &[4 * hidden])?,
            d_in,
            hidden,
        })
    }

    pub fn ids(&self) -> [ParamId; 3] {
        [self.wx, self.wh, self.b]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zero(tape: &mut Tape<'_>, hidden: usize) -> Self {
        let h = tape.zeros(hidden);
        let c = tape.zeros(hidden);
        Self { h, c }
    }
}

/// One standard LSTM update without peepholes:
/// `c = f⊙c_prev + i⊙g`, `h = o⊙tanh(c)`.
pub fn lstm_step(tape: &mut Tape<'_>, p: &LstmParams, x: Var, prev: LstmState) -> Result<LstmState> {
    if tape.dim(x) != p.d_in {
        return Err(Error::Shape(format!(
            "lstm input has {} entries, expected {}",
            tape.dim(x),
            p.d_in
        )));
    }
    let xw = tape.matvec(p.wx, x)?;
    lstm_step_projected(tape, p, xw, prev)
}

/// Same as [`lstm_step`] but with the input term `Wx·x` (4h) already
/// computed, which lets callers split a fixed input part out of a loop.
pub fn lstm_step_projected(
    tape: &mut Tape<'_>,
    p: &LstmParams,
    input_proj: Var,
    prev: LstmState,
) -> Result<LstmState> {
    let h = p.hidden;
    if tape.dim(prev.h) != h || tape.dim(prev.c) != h || tape.dim(input_proj) != 4 * h {
        return Err(Error::Shape(format!(
            "lstm state/projection sizes {}/{}/{} do not match hidden size {h}",
            tape.dim(prev.h),
            tape.dim(prev.c),
            tape.dim(input_proj)
        )));
    }
    let hw = tape.matvec(p.wh, prev.h)?;
    let bias = tape.param(p.b);
    let pre = tape.add(input_proj, hw)?;
    let pre = tape.add(pre, bias)?;
    let i = tape.slice(pre, 0, h)?;
    let f = tape.slice(pre, h, h)?;
    let o = tape.slice(pre, 2 * h, h)?;
    let g = tape.slice(pre, 3 * h, h)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let o = tape.sigmoid(o);
    let g = tape.tanh(g);
    let keep = tape.mul(f, prev.c)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h_new = tape.mul(o, tc)?;
    Ok(LstmState { h: h_new, c })
}
