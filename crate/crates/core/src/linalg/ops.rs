//! Elementwise nonlinearities and the classification loss kernel.

use super::dense::check_same_shape;
use super::DenseMatrix;
use crate::error::{Error, Result};

pub fn relu(x: &DenseMatrix) -> DenseMatrix {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    DenseMatrix::from_vec(x.rows(), x.cols(), data).expect("same shape")
}

/// Gradient of ReLU: `dy` where `x > 0`, zero elsewhere (including at 0).
pub fn relu_backward(x: &DenseMatrix, dy: &DenseMatrix) -> Result<DenseMatrix> {
    check_same_shape("relu_backward", x, dy)?;
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
        .collect();
    DenseMatrix::from_vec(x.rows(), x.cols(), data)
}

/// Row-wise softmax, computed in f64 with row-max subtraction.
pub fn softmax_rows(logits: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let probs = softmax_row_f64(logits.row(i));
        for (o, p) in out.row_mut(i).iter_mut().zip(probs) {
            *o = p as f32;
        }
    }
    out
}

fn softmax_row_f64(row: &[f32]) -> Vec<f64> {
    let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Mean softmax cross-entropy over the rows selected by `mask`.
///
/// Returns the loss and its gradient with respect to the logits; unselected
/// rows receive a zero gradient.
pub fn softmax_cross_entropy(
    logits: &DenseMatrix,
    labels: &[Option<usize>],
    mask: &[bool],
) -> Result<(f64, DenseMatrix)> {
    let (n, c) = logits.shape();
    if labels.len() != n || mask.len() != n {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            left: logits.shape(),
            right: (labels.len(), mask.len()),
        });
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let mut grad = DenseMatrix::zeros(n, c);
    let mut total = 0.0f64;
    let inv = 1.0 / count as f64;
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let label = labels[i].ok_or(Error::MissingLabel { row: i })?;
        if label >= c {
            return Err(Error::LabelOutOfRange {
                row: i,
                label: label as i64,
                num_classes: c,
            });
        }
        let row = logits.row(i);
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let shifted: Vec<f64> = row.iter().map(|&v| v as f64 - max).collect();
        let log_z = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
        total += log_z - shifted[label];
        for (j, g) in grad.row_mut(i).iter_mut().enumerate() {
            let p = (shifted[j] - log_z).exp();
            let target = if j == label { 1.0 } else { 0.0 };
            *g = ((p - target) * inv) as f32;
        }
    }
    Ok((total * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_sign_case() {
        let x = DenseMatrix::from_rows(&[[-1.0, 2.0]]);
        assert_eq!(relu(&x), DenseMatrix::from_rows(&[[0.0, 2.0]]));
    }

    #[test]
    fn relu_backward_masks() {
        let x = DenseMatrix::from_rows(&[[-1.0, 2.0, 0.0]]);
        let dy = DenseMatrix::from_rows(&[[5.0, 5.0, 5.0]]);
        let out = relu_backward(&x, &dy).unwrap();
        assert_eq!(out, DenseMatrix::from_rows(&[[0.0, 5.0, 0.0]]));
    }

    #[test]
    fn relu_idempotent() {
        let x = DenseMatrix::from_fn(4, 3, |i, j| i as f32 - j as f32 * 1.5);
        assert_eq!(relu(&relu(&x)), relu(&x));
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let logits = DenseMatrix::zeros(3, 4);
        let labels = vec![Some(0), Some(3), Some(1)];
        let (loss, _) = softmax_cross_entropy(&logits, &labels, &[true; 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logits_give_zero_loss() {
        let logits = DenseMatrix::from_rows(&[[1000.0, 0.0, 0.0]]);
        let (loss, grad) = softmax_cross_entropy(&logits, &[Some(0)], &[true]).unwrap();
        assert!(loss < 1e-6);
        assert!(grad.is_finite());
    }

    #[test]
    fn masked_rows_get_zero_gradient() {
        let logits = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, -1.0]]);
        let (_, grad) =
            softmax_cross_entropy(&logits, &[Some(0), None], &[true, false]).unwrap();
        assert_eq!(grad.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn errors_on_empty_mask_and_bad_label() {
        let logits = DenseMatrix::zeros(2, 2);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[Some(0), Some(1)], &[false, false]),
            Err(Error::EmptyMask)
        ));
        assert!(matches!(
            softmax_cross_entropy(&logits, &[Some(2), Some(1)], &[true, false]),
            Err(Error::LabelOutOfRange { row: 0, .. })
        ));
        assert!(matches!(
            softmax_cross_entropy(&logits, &[None, Some(1)], &[true, true]),
            Err(Error::MissingLabel { row: 0 })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = DenseMatrix::from_fn(5, 4, |i, j| (i as f32 * 3.1 - j as f32 * 7.3).sin() * 20.0);
        let p = softmax_rows(&logits);
        for i in 0..5 {
            let s: f64 = p.row(i).iter().map(|&v| v as f64).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}
