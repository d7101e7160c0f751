use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Row-wise softmax of `[N, C]` logits.
pub fn softmax<S: Scalar>(logits: &Tensor<S>) -> Tensor<S> {
    let mut out = logits.clone();
    let c = logits.cols();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut z = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v = *v / z;
        }
    }
    out
}

/// Mean cross-entropy of `[N, C]` logits against class indices, with the
/// gradient of that mean w.r.t. the logits.
pub fn softmax_cross_entropy<S: Scalar>(logits: &Tensor<S>, targets: &[usize]) -> Result<(S, Tensor<S>)> {
    if logits.rank() != 2 || logits.rows() != targets.len() {
        return Err(Error::shape(format!(
            "logits {:?} vs {} targets",
            logits.shape(),
            targets.len()
        )));
    }
    let (n, c) = (logits.rows(), logits.cols());
    if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::InvalidArgument(format!("target {bad} out of range for {c} classes")));
    }
    let mut grad = softmax(logits);
    let inv_n = S::of(1.0 / n as f64);
    let mut loss = S::zero();
    for (i, &t) in targets.iter().enumerate() {
        let row = &logits.data()[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
        loss += lse - row[t];
        let g = &mut grad.data_mut()[i * c..(i + 1) * c];
        g[t] -= S::one();
        g.iter_mut().for_each(|v| *v *= inv_n);
    }
    Ok((loss * inv_n, grad))
}
