use super::tensor::{Scalar, Tensor};
use crate::error::{HarError, Result};

/// Mean softmax cross-entropy over the batch, with the gradient w.r.t. the
/// logits. Accumulation is done in `f64`.
pub fn cross_entropy<F: Scalar>(logits: &Tensor<F>, labels: &[usize]) -> Result<(f64, Tensor<F>)> {
    let (n, c) = match *logits.shape() {
        [n, c] => (n, c),
        _ => {
            return Err(HarError::Shape(format!(
                "logits must be [n, classes], got {:?}",
                logits.shape()
            )))
        }
    };
    if labels.len() != n {
        return Err(HarError::Shape(format!("{n} logit rows but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(HarError::InvalidArgument(format!("label {bad} out of range for {c} classes")));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * c);
    for (row, &y) in logits.data().chunks(c).zip(labels) {
        let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() - (row[y].f64() - max);
        for (j, e) in exps.iter().enumerate() {
            let p = e / z;
            let t = if j == y { 1.0 } else { 0.0 };
            grad.push(F::of((p - t) / n as f64));
        }
    }
    Ok((loss / n as f64, Tensor::new(vec![n, c], grad)?))
}

/// Sum over columns of the mean binary cross-entropy with logits: column
/// `k` of `logits` is compared with column `k` of `targets`.
pub fn bce_with_logits<F: Scalar>(logits: &Tensor<F>, targets: &[f64]) -> Result<(f64, Tensor<F>)> {
    let n = logits.batch();
    if targets.len() != logits.len() || n == 0 {
        return Err(HarError::Shape(format!(
            "{} logits but {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(targets.len());
    for (v, &t) in logits.data().iter().zip(targets) {
        let x = v.f64();
        // log(1 + e^x) - t x, stable for both signs
        loss += x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
        let s = 1.0 / (1.0 + (-x).exp());
        grad.push(F::of((s - t) / n as f64));
    }
    Ok((loss / n as f64, Tensor::new(logits.shape().to_vec(), grad)?))
}

/// Row-wise index of the largest value, ties to the lowest index.
pub fn argmax<F: Scalar>(scores: &Tensor<F>) -> Vec<usize> {
    let c = scores.len() / scores.batch().max(1);
    scores
        .data()
        .chunks(c.max(1))
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
