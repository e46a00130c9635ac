use crate::error::{Error, Result};
use crate::tensor::{softmax_row, Tensor};

/// Mean softmax cross-entropy over a `B × Q` batch of logits.
///
/// Returns the loss and its gradient w.r.t. the logits, `(softmax − onehot)/B`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [b, q] = *logits.shape() else {
        return Err(Error::shape(
            "softmax_cross_entropy",
            "rank",
            2,
            logits.rank(),
        ));
    };
    if labels.len() != b {
        return Err(Error::shape(
            "softmax_cross_entropy",
            "batch",
            b,
            labels.len(),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= q) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {q} classes"
        )));
    }
    let mut grad = vec![0.0; b * q];
    let mut loss = 0.0;
    for ((row, g), &y) in logits
        .data()
        .chunks_exact(q)
        .zip(grad.chunks_exact_mut(q))
        .zip(labels)
    {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - (row[y] - max);
        softmax_row(row, g);
        g[y] -= 1.0;
    }
    let inv_b = 1.0 / b as f64;
    grad.iter_mut().for_each(|g| *g *= inv_b);
    Ok((loss * inv_b, Tensor::new(&[b, q], grad)?))
}

/// Row-wise softmax of a `B × Q` tensor.
pub fn softmax(logits: &Tensor) -> Tensor {
    let q = *logits.shape().last().unwrap_or(&1);
    let mut out = vec![0.0; logits.len()];
    for (row, o) in logits.data().chunks_exact(q).zip(out.chunks_exact_mut(q)) {
        softmax_row(row, o);
    }
    Tensor::new(logits.shape(), out).expect("same shape")
}
