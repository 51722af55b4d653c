//! Plain-loop reimplementations used as test oracles.

use super::lstm::LstmParams;
use super::tensor::{ParamStore, Tensor};

pub(crate) fn matvec(t: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..t.rows())
        .map(|r| t.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One LSTM step computed entry by entry.
pub(crate) fn lstm(store: &ParamStore, p: &LstmParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = p.hidden;
    let wx = matvec(store.get(p.wx), x);
    let wh = matvec(store.get(p.wh), h);
    let b = store.get(p.b).data();
    let pre: Vec<f64> = (0..4 * n).map(|k| wx[k] + wh[k] + b[k]).collect();
    let mut h2 = vec![0.0; n];
    let mut c2 = vec![0.0; n];
    for j in 0..n {
        let i = sigmoid(pre[j]);
        let f = sigmoid(pre[n + j]);
        let o = sigmoid(pre[2 * n + j]);
        let g = pre[3 * n + j].tanh();
        c2[j] = f * c[j] + i * g;
        h2[j] = o * c2[j].tanh();
    }
    (h2, c2)
}

/// Runs an LSTM over `xs` from the zero state and returns every `h`.
pub(crate) fn lstm_run(store: &ParamStore, p: &LstmParams, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut h = vec![0.0; p.hidden];
    let mut c = vec![0.0; p.hidden];
    let mut out = Vec::new();
    for x in xs {
        (h, c) = lstm(store, p, x, &h, &c);
        out.push(h.clone());
    }
    out
}
