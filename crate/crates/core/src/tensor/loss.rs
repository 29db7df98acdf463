use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LossOutput {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    /// Gradient of the mean loss with respect to the logits.
    pub grad: Tensor,
    /// Rows whose argmax (lowest index on ties) equals the label.
    pub correct: usize,
}

/// Softmax cross-entropy with mean reduction.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<LossOutput> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::Structural(format!(
            "logits {:?} do not match {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let (batch, classes) = (logits.shape()[0], logits.shape()[1]);
    let mut grad = vec![0.0; batch * classes];
    let mut total = 0.0;
    let mut correct = 0;
    for ((row, g), &label) in logits
        .data()
        .chunks_exact(classes)
        .zip(grad.chunks_exact_mut(classes))
        .zip(labels)
    {
        if label >= classes {
            return Err(Error::Structural(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        if argmax(row) == label {
            correct += 1;
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_sum = sum.ln() + max;
        total += log_sum - row[label];
        for (gi, &z) in g.iter_mut().zip(row) {
            *gi = (z - log_sum).exp() / batch as f64;
        }
        g[label] -= 1.0 / batch as f64;
    }
    Ok(LossOutput {
        loss: total / batch as f64,
        grad: Tensor::new(vec![batch, classes], grad)?,
        correct,
    })
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_loss_is_log_classes() {
        let logits = Tensor::zeros(&[2, 4]);
        let out = softmax_cross_entropy(&logits, &[0, 3]).unwrap();
        assert!((out.loss - 4f64.ln()).abs() < 1e-15);
        // ties resolve to class 0
        assert_eq!(out.correct, 1);
        let row_sums: Vec<f64> = out.grad.data().chunks(4).map(|r| r.iter().sum()).collect();
        assert!(row_sums.iter().all(|s| s.abs() < 1e-15));
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let data = vec![0.3, -1.2, 2.0, 0.7, 0.1, -0.4];
        let labels = [2, 0];
        let logits = Tensor::new(vec![2, 3], data.clone()).unwrap();
        let out = softmax_cross_entropy(&logits, &labels).unwrap();
        let h = 1e-6;
        for i in 0..data.len() {
            let mut plus = data.clone();
            plus[i] += h;
            let mut minus = data.clone();
            minus[i] -= h;
            let lp = softmax_cross_entropy(&Tensor::new(vec![2, 3], plus).unwrap(), &labels)
                .unwrap()
                .loss;
            let lm = softmax_cross_entropy(&Tensor::new(vec![2, 3], minus).unwrap(), &labels)
                .unwrap()
                .loss;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - out.grad.data()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn bad_label_rejected() {
        assert!(softmax_cross_entropy(&Tensor::zeros(&[1, 3]), &[3]).is_err());
        assert!(softmax_cross_entropy(&Tensor::zeros(&[2, 3]), &[0]).is_err());
    }
}
