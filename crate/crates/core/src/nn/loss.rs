use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch and its gradient.
///
/// `logits` is `(n, 1, 1, classes)`; `labels` holds one class index per image.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let s = logits.shape();
    if s.h != 1 || s.w != 1 {
        return Err(Error::Shape(format!("logits must be (n,1,1,classes), got {s}")));
    }
    if labels.len() != s.n {
        return Err(Error::Shape(format!("{} labels for a batch of {}", labels.len(), s.n)));
    }
    let classes = s.c;
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Label { label, classes });
    }
    let batch = s.n as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &label) in logits.data().chunks_exact(classes).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_denom = denom.ln();
        loss += log_denom - (row[label] - max);
        for (k, v) in row.iter().enumerate() {
            let p = (v - max).exp() / denom;
            grad.push((p - f64::from(u8::from(k == label))) / batch);
        }
    }
    Ok((loss / batch, Tensor::from_vec(s, grad)?))
}

/// Index of the largest logit per image.
pub fn argmax(logits: &Tensor) -> Vec<usize> {
    logits
        .data()
        .chunks_exact(logits.shape().c)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Fill, Shape4};

    #[test]
    fn uniform_logits_give_log_classes() {
        let logits = Tensor::new(Shape4::new(3, 1, 1, 7).unwrap(), Fill::Constant(0.3));
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 3, 6]).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn peaked_logits_give_small_loss() {
        let logits = Tensor::from_vec(Shape4::new(1, 1, 1, 3).unwrap(), vec![0.0, 20.0, 0.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!(loss < 1e-8);
        assert_eq!(argmax(&logits), vec![1]);
    }

    #[test]
    fn bad_labels() {
        let logits = Tensor::zeros(Shape4::new(2, 1, 1, 3).unwrap());
        assert_eq!(softmax_cross_entropy(&logits, &[0, 3]).unwrap_err(), Error::Label { label: 3, classes: 3 });
        assert!(matches!(softmax_cross_entropy(&logits, &[0]), Err(Error::Shape(_))));
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = Tensor::new(Shape4::new(4, 1, 1, 5).unwrap(), Fill::Normal { mean: 0.0, std: 2.0, seed: 8 });
        let (_, g) = softmax_cross_entropy(&logits, &[0, 1, 2, 4]).unwrap();
        for row in g.data().chunks_exact(5) {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }
}
