use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean cross-entropy of `softmax(logits)` against class indices.
///
/// Returns the loss and its gradient `(softmax - onehot) / N` in grad precision.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [n, k]: [usize; 2] = logits
        .shape()
        .try_into()
        .map_err(|_| Error::shape("softmax_cross_entropy", "logits must be (N, K)"))?;
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{} labels for {n} rows", labels.len()),
        ));
    }
    if n == 0 {
        return Err(Error::Empty("cross-entropy over an empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Invalid(format!("label {bad} out of range for {k} classes")));
    }
    let z = logits.to_f64_vec();
    let mut loss = 0.0;
    let mut grad = vec![0.0; n * k];
    for (r, &label) in labels.iter().enumerate() {
        let row = &z[r * k..(r + 1) * k];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        loss += lse - row[label];
        for (j, &v) in row.iter().enumerate() {
            let p = (v - lse).exp();
            grad[r * k + j] = (p - if j == label { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    let grad = Tensor::from_f64(&[n, k], &grad, logits.precision().grad_precision())?;
    Ok((loss / n as f64, grad))
}
