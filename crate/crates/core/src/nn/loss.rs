use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Row-wise softmax of `[B, K]` logits.
pub fn softmax<S: Scalar>(logits: &Tensor<S>) -> Result<Tensor<S>> {
    let (_, k) = logits.dims2()?;
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut sum = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v = *v / sum);
    }
    Tensor::from_vec(logits.shape(), out)
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy<S: Scalar>(
    logits: &Tensor<S>,
    labels: &[usize],
) -> Result<(S, Tensor<S>)> {
    let (b, k) = logits.dims2()?;
    if labels.len() != b {
        return Err(Error::shape(format!("{b} labels"), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Domain(format!("label {bad} outside [0, {k})")));
    }
    let mut grad = softmax(logits)?;
    let scale = S::one() / S::from_f64(b as f64);
    let mut loss = S::zero();
    for (i, (row, &y)) in grad.data_mut().chunks_mut(k).zip(labels).enumerate() {
        let z = &logits.data()[i * k..(i + 1) * k];
        let max = z.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
        loss += lse - z[y];
        row[y] -= S::one();
        row.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((loss * scale, grad))
}
