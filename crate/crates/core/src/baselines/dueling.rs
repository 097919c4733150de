//! Dueling aggregation `Q(s, a) = V(s) + A(s, a) - mean_a A(s, a)`.
//!
//! A dueling network's last layer emits `[V, A_0, ..., A_{n-1}]` per row.

use ndarray::Array2;

/// Maps raw `[V, A...]` rows to Q-values.
pub fn dueling_aggregate(raw: &Array2<f64>) -> Array2<f64> {
    let n = raw.ncols() - 1;
    let mut q = Array2::zeros((raw.nrows(), n));
    for (mut qrow, r) in q.outer_iter_mut().zip(raw.outer_iter()) {
        let value = r[0];
        let mean = r.iter().skip(1).sum::<f64>() / n as f64;
        for (a, qa) in qrow.iter_mut().enumerate() {
            *qa = value + r[a + 1] - mean;
        }
    }
    q
}

/// Pulls a gradient with respect to Q back to the raw `[V, A...]` outputs.
pub fn dueling_backward(grad_q: &Array2<f64>) -> Array2<f64> {
    let n = grad_q.ncols();
    let mut raw = Array2::zeros((grad_q.nrows(), n + 1));
    for (mut rrow, g) in raw.outer_iter_mut().zip(grad_q.outer_iter()) {
        let total: f64 = g.sum();
        rrow[0] = total;
        for a in 0..n {
            rrow[a + 1] = g[a] - total / n as f64;
        }
    }
    raw
}
