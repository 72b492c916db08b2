//! Numerically stable softmax and cross-entropy, plus the fused gradient of
//! mean batch cross-entropy with respect to the logits.

use crate::matrix::Matrix;

/// Probabilities below this are clamped before `ln`, so a fully confident
/// wrong prediction yields a large finite loss instead of infinity.
pub const LOG_CLAMP: f64 = 1e-300;

/// Row-wise softmax with max-subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    out
}

/// `-Σ_i u_i ln b_i` for a one-hot row `u` and probability row `b`.
pub fn cross_entropy(u: &[f64], b: &[f64]) -> f64 {
    assert_eq!(u.len(), b.len());
    let mut loss = 0.0;
    for (&ui, &bi) in u.iter().zip(b) {
        if ui != 0.0 {
            loss -= ui * bi.max(LOG_CLAMP).ln();
        }
    }
    loss
}

/// Mean of `-ln b[i][target_i]` over the batch; the 0-based targets play
/// the role of one-hot rows.
pub fn mean_cross_entropy(b: &Matrix, targets: &[usize]) -> f64 {
    assert_eq!(b.rows(), targets.len());
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        total -= b.get(r, t).max(LOG_CLAMP).ln();
    }
    total / targets.len() as f64
}

/// Gradient of mean batch cross-entropy w.r.t. the logits: `(b - u) / B`.
pub fn softmax_ce_grad(b: &Matrix, targets: &[usize]) -> Matrix {
    assert_eq!(b.rows(), targets.len());
    let inv_batch = 1.0 / targets.len() as f64;
    let mut g = b.clone();
    for v in g.as_mut_slice() {
        *v *= inv_batch;
    }
    for (r, &t) in targets.iter().enumerate() {
        let v = g.get(r, t);
        g.set(r, t, v - inv_batch);
    }
    g
}
