//! Softmax cross-entropy over class logits, returning the mean loss and the
//! gradient w.r.t. the logits in one pass.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Returns `(mean loss, dlogits)` where `dlogits = (softmax - onehot) / N`.
///
/// Softmax is computed with per-row max subtraction; labels must lie in
/// `[0, K)` for a `N x K` logits tensor.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    if logits.rank() != 2 {
        return Err(Error::Shape(format!(
            "logits must be NxK, got {:?}",
            logits.shape()
        )));
    }
    let (n, k) = (logits.dim(0), logits.dim(1));
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Input(format!("label {bad} out of range [0, {k})")));
    }

    let inv_n = T::ONE / T::from_f64(n as f64);
    let mut dlogits = Tensor::zeros(&[n, k])?;
    let ld = logits.data();
    let dd = dlogits.data_mut();
    let mut loss = T::ZERO;
    for (i, &label) in labels.iter().enumerate() {
        let row = &ld[i * k..(i + 1) * k];
        let mut max = row[0];
        for &v in &row[1..] {
            max = max.maximum(v);
        }
        let mut denom = T::ZERO;
        let out = &mut dd[i * k..(i + 1) * k];
        for (o, &v) in out.iter_mut().zip(row) {
            let e = (v - max).exp();
            *o = e;
            denom += e;
        }
        let inv_denom = T::ONE / denom;
        for o in out.iter_mut() {
            *o *= inv_denom; // now the softmax probability
        }
        loss -= out[label].ln();
        out[label] -= T::ONE;
        for o in out.iter_mut() {
            *o *= inv_n;
        }
    }
    Ok((loss * inv_n, dlogits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn uniform_logits_cost_ln_k() {
        let logits = Tensor::<f32>::constant(&[2, 10], 0.3).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[4, 9]).unwrap();
        assert!((loss - 10.0f32.ln()).abs() < 1e-6, "loss {loss}");
        assert!((loss - 2.302585).abs() < 1e-5);
    }

    #[test]
    fn saturated_correct_class_costs_nothing() {
        let mut logits = Tensor::<f32>::zeros(&[1, 10]).unwrap();
        logits.data_mut()[3] = 1000.0;
        let (loss, _) = softmax_cross_entropy(&logits, &[3]).unwrap();
        assert!(loss.abs() < 1e-6);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let logits = Tensor::<f32>::zeros(&[1, 10]).unwrap();
        assert!(matches!(
            softmax_cross_entropy(&logits, &[10]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn rows_sum_to_one_and_loss_non_negative() {
        let mut rng = RngStream::new(12, "sm.rows");
        for _ in 0..20 {
            let logits = Tensor::<f32>::normal(&[5, 10], 2.0, &mut rng).unwrap();
            let labels: Vec<usize> = (0..5).map(|_| rng.below(10)).collect();
            let (loss, dlogits) = softmax_cross_entropy(&logits, &labels).unwrap();
            assert!(loss >= 0.0);
            for (i, row) in dlogits.data().chunks_exact(10).enumerate() {
                // dlogits rows are (p - onehot)/N, so they sum to zero and
                // recover the probabilities by undoing the shift and scale.
                let sum: f32 = row.iter().sum();
                assert!(sum.abs() < 1e-6);
                let p_sum: f32 = row
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| v * 5.0 + if j == labels[i] { 1.0 } else { 0.0 })
                    .sum();
                assert!((p_sum - 1.0).abs() < 1e-6);
            }
        }
    }

    /// Direct 64-bit formula plus finite differences, the stated oracle.
    #[test]
    fn matches_direct_formula_and_finite_differences() {
        let mut rng = RngStream::new(13, "sm.oracle");
        for _ in 0..20 {
            let logits = Tensor::<f64>::normal(&[4, 10], 1.5, &mut rng).unwrap();
            let labels: Vec<usize> = (0..4).map(|_| rng.below(10)).collect();
            let (loss, dlogits) = softmax_cross_entropy(&logits, &labels).unwrap();

            // Direct formula without max subtraction.
            let mut want = 0.0f64;
            for (i, &label) in labels.iter().enumerate() {
                let row: Vec<f64> = (0..10).map(|j| logits.at2(i, j)).collect();
                let denom: f64 = row.iter().map(|v| v.exp()).sum();
                want -= (row[label].exp() / denom).ln();
            }
            want /= 4.0;
            assert!(
                (loss - want).abs() / want.abs().max(1e-12) < 1e-6,
                "loss {loss} vs direct {want}"
            );

            let eps = 1e-6;
            for k in [0usize, 13, 27, 39] {
                let mut lp = logits.clone();
                let mut lm = logits.clone();
                lp.data_mut()[k] += eps;
                lm.data_mut()[k] -= eps;
                let (loss_p, _) = softmax_cross_entropy(&lp, &labels).unwrap();
                let (loss_m, _) = softmax_cross_entropy(&lm, &labels).unwrap();
                let num = (loss_p - loss_m) / (2.0 * eps);
                let a = dlogits.data()[k];
                assert!(
                    (num - a).abs() / num.abs().max(a.abs()).max(1e-10) < 1e-5,
                    "dlogits[{k}]: numeric {num} vs analytic {a}"
                );
            }
        }
    }
}
