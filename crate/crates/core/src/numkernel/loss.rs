use super::array::{DenseArray, Scalar};
use crate::error::{bail, Result};

/// Mean next-token log loss together with its gradient.
#[derive(Clone, Debug)]
pub struct CrossEntropy<F> {
    /// Mean of `−log softmax(logits)[target]`, accumulated in f64.
    pub loss: f64,
    /// `(softmax − onehot) / N`, same shape as the logits.
    pub dlogits: DenseArray<F>,
}

/// `targets` has one entry per row of `logits` (all leading axes flattened).
pub fn cross_entropy_logits<F: Scalar>(logits: &DenseArray<F>, targets: &[u32]) -> Result<CrossEntropy<F>> {
    let v = logits.last_dim();
    let n = logits.rows();
    if targets.len() != n {
        bail!(Dimension, "cross entropy: {n} rows but {} targets", targets.len());
    }
    if let Some(&bad) = targets.iter().find(|&&t| t as usize >= v) {
        bail!(Data, "target {bad} is outside the vocabulary of {v}");
    }
    logits.check_finite("logits")?;
    let inv_n = F::one() / F::from_usize(n).unwrap();
    let mut total = 0.0f64;
    let mut grad = vec![F::zero(); logits.len()];
    for ((row, grow), &target) in logits.data().chunks_exact(v).zip(grad.chunks_exact_mut(v)).zip(targets) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for (g, &z) in grow.iter_mut().zip(row) {
            *g = (z - max).exp();
            sum += *g;
        }
        let log_z = max + sum.ln();
        total += (log_z - row[target as usize]).as_f64();
        let inv_sum = F::one() / sum;
        for g in grow.iter_mut() {
            *g = *g * inv_sum * inv_n;
        }
        grow[target as usize] -= inv_n;
    }
    let loss = total / n as f64;
    if !loss.is_finite() {
        bail!(Numeric, "cross entropy is not finite");
    }
    Ok(CrossEntropy {
        loss,
        dlogits: DenseArray::new(logits.shape().to_vec(), grad)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, rel_err, seeded_normal, FD_STEP};

    #[test]
    fn uniform_logits_give_log_vocab() {
        let logits = DenseArray::<f64>::zeros(&[2, 3, 259]);
        let ce = cross_entropy_logits(&logits, &[0, 5, 258, 7, 100, 3]).unwrap();
        assert!((ce.loss - 259f64.ln()).abs() < 1e-12);
        assert!((ce.loss - 5.5568).abs() < 1e-4);
    }

    #[test]
    fn confident_correct_logits_give_zero_loss() {
        let mut logits = DenseArray::<f64>::zeros(&[1, 2, 11]);
        logits.data_mut()[4] = 100.0;
        logits.data_mut()[11 + 9] = 100.0;
        let ce = cross_entropy_logits(&logits, &[4, 9]).unwrap();
        assert!(ce.loss < 1e-40);
    }

    #[test]
    fn out_of_range_target_is_data_error() {
        let logits = DenseArray::<f64>::zeros(&[1, 1, 4]);
        assert!(matches!(cross_entropy_logits(&logits, &[4]), Err(crate::Error::Data(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = seeded_normal(31, &[1, 3, 11]);
        let targets = [2, 10, 0];
        let ce = cross_entropy_logits(&logits, &targets).unwrap();
        let numeric = central_difference(logits.data(), FD_STEP, |v| {
            cross_entropy_logits(&DenseArray::new(vec![1, 3, 11], v.to_vec()).unwrap(), &targets)
                .unwrap()
                .loss
        });
        assert!(rel_err(ce.dlogits.data(), &numeric) < 1e-7);
    }
}
