//! GELU in the tanh approximation used by GPT-2:
//! `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.

use super::array::{DenseArray, Scalar};
use crate::error::{bail, Result};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const CUBIC: f64 = 0.044715;

/// `tanh(u) = 1 − 2/(e^{2u} + 1)`; saturates cleanly at ±1 and is several
/// times cheaper than the libm routine.
fn tanh<F: Scalar>(u: F) -> F {
    let two = F::of(2.0);
    F::one() - two / ((two * u).exp() + F::one())
}

pub fn gelu_scalar<F: Scalar>(x: F) -> F {
    let half = F::of(0.5);
    let inner = F::of(SQRT_2_OVER_PI) * (x + F::of(CUBIC) * x * x * x);
    half * x * (F::one() + tanh(inner))
}

pub fn gelu_derivative<F: Scalar>(x: F) -> F {
    let half = F::of(0.5);
    let k = F::of(SQRT_2_OVER_PI);
    let c = F::of(CUBIC);
    let th = tanh(k * (x + c * x * x * x));
    let sech2 = F::one() - th * th;
    half * (F::one() + th) + half * x * sech2 * k * (F::one() + F::of(3.0) * c * x * x)
}

pub fn gelu<F: Scalar>(x: &DenseArray<F>) -> Result<DenseArray<F>> {
    let y = DenseArray::new(x.shape().to_vec(), x.data().iter().map(|&v| gelu_scalar(v)).collect())?;
    y.check_finite("gelu output")?;
    Ok(y)
}

pub fn gelu_backward<F: Scalar>(x: &DenseArray<F>, dy: &DenseArray<F>) -> Result<DenseArray<F>> {
    if x.shape() != dy.shape() {
        bail!(Dimension, "gelu backward: x {:?} vs dy {:?}", x.shape(), dy.shape());
    }
    let dx = DenseArray::new(
        x.shape().to_vec(),
        x.data()
            .iter()
            .zip(dy.data())
            .map(|(&v, &g)| g * gelu_derivative(v))
            .collect(),
    )?;
    dx.check_finite("gelu dx")?;
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::FD_STEP;

    #[test]
    fn fixed_points_and_asymptotes() {
        assert_eq!(gelu_scalar(0.0f64), 0.0);
        assert!((gelu_scalar(20.0f64) - 20.0).abs() < 1e-6);
        assert!(gelu_scalar(-20.0f64).abs() < 1e-6);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        for x in [-3.0f64, -1.0, 0.0, 1.0, 3.0] {
            let fd = (gelu_scalar(x + FD_STEP) - gelu_scalar(x - FD_STEP)) / (2.0 * FD_STEP);
            assert!((gelu_derivative(x) - fd).abs() < 1e-7, "x = {x}");
        }
    }

    #[test]
    fn nan_input_propagates_as_error() {
        let x = DenseArray::<f64>::new(vec![1], vec![f64::NAN]).unwrap();
        assert!(gelu(&x).is_err());
    }
}
