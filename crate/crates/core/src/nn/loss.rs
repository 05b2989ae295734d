use alloc::vec::Vec;

use super::tensor::Tensor;

/// Row-wise softmax of a `[N, K]` logit tensor, in f64.
pub fn softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    (0..logits.rows()).map(|i| softmax(logits.row(i))).collect()
}

pub fn log_softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    (0..logits.rows()).map(|i| log_softmax(logits.row(i))).collect()
}

pub(crate) fn log_softmax(row: &[f32]) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(f64::from(v)));
    let lse = max + libm::log(row.iter().map(|&v| libm::exp(f64::from(v) - max)).sum::<f64>());
    row.iter().map(|&v| f64::from(v) - lse).collect()
}

pub(crate) fn softmax(row: &[f32]) -> Vec<f64> {
    log_softmax(row).into_iter().map(libm::exp).collect()
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits.
///
/// `weight` scales the returned gradient only; the reported loss is
/// unweighted.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &[usize], weight: f32) -> (f64, Tensor) {
    let n = logits.rows();
    assert_eq!(n, targets.len());
    let k = logits.row_len();
    let mut grad = Tensor::zeros(&logits.shape);
    let mut loss = 0.0;
    let scale = weight / n as f32;
    for (i, &t) in targets.iter().enumerate() {
        let lp = log_softmax(logits.row(i));
        loss -= lp[t];
        let g = &mut grad.data[i * k..(i + 1) * k];
        for j in 0..k {
            let p = libm::exp(lp[j]) as f32;
            g[j] = scale * (p - if j == t { 1.0 } else { 0.0 });
        }
    }
    (loss / n as f64, grad)
}
