use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so entries whose true
/// gradient is zero compare on an absolute scale.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// `(parameter name, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares reverse-mode gradients of `loss` against central differences
/// at `sample_count` scalar entries drawn (with a seeded generator) from
/// the parameters listed in `candidates`. Entries with a nonzero analytic
/// gradient are preferred; when there are none, any entry may be drawn.
pub fn finite_difference_check<F>(
    params: &ParamStore,
    candidates: &[ParamId],
    loss: F,
    epsilon: f64,
    sample_count: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(Error::Invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if candidates.is_empty() {
        return Err(Error::Empty("no parameters to check".into()));
    }
    let grads = {
        let mut tape = Tape::new(params);
        let l = loss(&mut tape)?;
        tape.backward(l)?
    };

    let mut pool: Vec<(ParamId, usize)> = Vec::new();
    for &id in candidates {
        pool.extend((0..params.get(id).len()).filter(|&k| grads.value(id, k) != 0.0).map(|k| (id, k)));
    }
    if pool.is_empty() {
        for &id in candidates {
            pool.extend((0..params.get(id).len()).map(|k| (id, k)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(store);
        let l = loss(&mut tape)?;
        let v = tape.scalar(l);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss {v} at perturbed point")));
        }
        Ok(v)
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        worst: None,
    };
    for _ in 0..sample_count {
        let (id, k) = pool[rng.random_range(0..pool.len())];
        let original = params.get(id).data()[k];

        work.get_mut(id).data_mut()[k] = original + epsilon;
        let plus = eval(&work)?;
        work.get_mut(id).data_mut()[k] = original - epsilon;
        let minus = eval(&work)?;
        work.get_mut(id).data_mut()[k] = original;

        let numeric = (plus - minus) / (2.0 * epsilon);
        let analytic = grads.value(id, k);
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = Some((params.name(id).to_string(), k, analytic, numeric));
        }
    }
    Ok(report)
}
