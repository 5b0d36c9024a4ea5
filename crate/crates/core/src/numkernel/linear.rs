use super::array::{ensure_finite, gemm, DenseArray, MatRef, Scalar};
use crate::error::{bail, Result};

/// Gradients of an affine map with respect to its input, weight and bias.
#[derive(Clone, Debug)]
pub struct LinearGrads<F> {
    pub dx: DenseArray<F>,
    pub dw: DenseArray<F>,
    pub db: DenseArray<F>,
}

/// `y = x·w + b` over the trailing axis of `x`. `w` is `[d_in, d_out]`.
pub fn linear<F: Scalar>(x: &DenseArray<F>, w: &DenseArray<F>, b: &DenseArray<F>) -> Result<DenseArray<F>> {
    let (d_in, d_out) = check_shapes(x, w, b)?;
    x.check_finite("linear input")?;
    let rows = x.rows();
    let mut out = vec![F::zero(); rows * d_out];
    linear_into(x.data(), rows, d_in, w.data(), b.data(), d_out, &mut out);
    ensure_finite(&out, "linear output")?;
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = d_out;
    DenseArray::new(shape, out)
}

/// Backward of [`linear`] for upstream gradient `dy` (same shape as the output).
pub fn linear_backward<F: Scalar>(
    x: &DenseArray<F>,
    w: &DenseArray<F>,
    dy: &DenseArray<F>,
) -> Result<LinearGrads<F>> {
    if w.shape().len() != 2 {
        bail!(Dimension, "linear weight must be 2-d, got {:?}", w.shape());
    }
    let (d_in, d_out) = (w.shape()[0], w.shape()[1]);
    if x.last_dim() != d_in || dy.last_dim() != d_out || dy.rows() != x.rows() {
        bail!(
            Dimension,
            "linear backward: x {:?}, w {:?}, dy {:?} disagree",
            x.shape(),
            w.shape(),
            dy.shape()
        );
    }
    dy.check_finite("linear upstream gradient")?;
    let mut dx = DenseArray::zeros(x.shape());
    let mut dw = DenseArray::zeros(w.shape());
    let mut db = DenseArray::zeros(&[d_out]);
    linear_backward_into(
        x.data(),
        x.rows(),
        d_in,
        w.data(),
        d_out,
        dy.data(),
        Some(dx.data_mut()),
        Some(dw.data_mut()),
        Some(db.data_mut()),
    );
    dx.check_finite("linear dx")?;
    dw.check_finite("linear dw")?;
    Ok(LinearGrads { dx, dw, db })
}

fn check_shapes<F: Scalar>(x: &DenseArray<F>, w: &DenseArray<F>, b: &DenseArray<F>) -> Result<(usize, usize)> {
    if w.shape().len() != 2 {
        bail!(Dimension, "linear weight must be 2-d, got {:?}", w.shape());
    }
    let (d_in, d_out) = (w.shape()[0], w.shape()[1]);
    if x.last_dim() != d_in {
        bail!(Dimension, "linear: input {:?} does not end in {d_in}", x.shape());
    }
    if b.shape() != [d_out] {
        bail!(Dimension, "linear: bias {:?} should be [{d_out}]", b.shape());
    }
    Ok((d_in, d_out))
}

/// `out[rows×d_out] = x[rows×d_in]·w + b`, overwriting `out`.
pub(crate) fn linear_into<F: Scalar>(
    x: &[F],
    rows: usize,
    d_in: usize,
    w: &[F],
    b: &[F],
    d_out: usize,
    out: &mut [F],
) {
    for row in out.chunks_exact_mut(d_out) {
        row.copy_from_slice(b);
    }
    gemm(
        rows,
        d_in,
        d_out,
        MatRef::rows(x, 0, d_in),
        MatRef::rows(w, 0, d_out),
        F::one(),
        out,
        0,
        d_out,
    );
}

/// Accumulates `dx += dy·wᵀ`, `dw += xᵀ·dy`, `db += Σ_rows dy` for whichever
/// outputs are requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward_into<F: Scalar>(
    x: &[F],
    rows: usize,
    d_in: usize,
    w: &[F],
    d_out: usize,
    dy: &[F],
    dx: Option<&mut [F]>,
    dw: Option<&mut [F]>,
    db: Option<&mut [F]>,
) {
    if let Some(dx) = dx {
        gemm(
            rows,
            d_out,
            d_in,
            MatRef::rows(dy, 0, d_out),
            MatRef::transposed(w, 0, d_out),
            F::one(),
            dx,
            0,
            d_in,
        );
    }
    if let Some(dw) = dw {
        gemm(
            d_in,
            rows,
            d_out,
            MatRef::transposed(x, 0, d_in),
            MatRef::rows(dy, 0, d_out),
            F::one(),
            dw,
            0,
            d_out,
        );
    }
    if let Some(db) = db {
        for row in dy.chunks_exact(d_out) {
            for (acc, &g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, rel_err, seeded_normal};

    #[test]
    fn identity_weight_passes_input_through() {
        let x = DenseArray::<f64>::from_f64(&[1, 2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let w = x.clone().reshape(&[2, 2]).unwrap();
        let b = DenseArray::zeros(&[2]);
        let y = linear(&x, &w, &b).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn hand_sum() {
        let x = DenseArray::<f64>::from_f64(&[1, 2], &[1.0, 2.0]).unwrap();
        let w = DenseArray::from_f64(&[2, 1], &[1.0, 1.0]).unwrap();
        let b = DenseArray::from_f64(&[1], &[3.0]).unwrap();
        assert_eq!(linear(&x, &w, &b).unwrap().data(), &[6.0]);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let x = DenseArray::<f64>::zeros(&[2, 3]);
        let w = DenseArray::zeros(&[2, 4]);
        let b = DenseArray::zeros(&[4]);
        assert!(matches!(linear(&x, &w, &b), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn non_finite_input_is_numeric_error() {
        let x = DenseArray::<f64>::from_f64(&[1, 2], &[f64::INFINITY, 0.0]).unwrap();
        let w = DenseArray::zeros(&[2, 1]);
        let b = DenseArray::zeros(&[1]);
        assert!(matches!(linear(&x, &w, &b), Err(crate::Error::Numeric(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (bsz, t, d_in, d_out) = (2, 3, 4, 5);
        let x = seeded_normal(7, &[bsz, t, d_in]);
        let w = seeded_normal(8, &[d_in, d_out]);
        let b = seeded_normal(9, &[d_out]);
        let r = seeded_normal(10, &[bsz, t, d_out]);
        let proj = |y: &DenseArray<f64>| y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>();
        let g = linear_backward(&x, &w, &r).unwrap();

        let fx = central_difference(x.data(), 1e-5, |v| {
            proj(&linear(&DenseArray::new(x.shape().to_vec(), v.to_vec()).unwrap(), &w, &b).unwrap())
        });
        let fw = central_difference(w.data(), 1e-5, |v| {
            proj(&linear(&x, &DenseArray::new(w.shape().to_vec(), v.to_vec()).unwrap(), &b).unwrap())
        });
        let fb = central_difference(b.data(), 1e-5, |v| {
            proj(&linear(&x, &w, &DenseArray::new(b.shape().to_vec(), v.to_vec()).unwrap()).unwrap())
        });
        assert!(rel_err(g.dx.data(), &fx) < 1e-6);
        assert!(rel_err(g.dw.data(), &fw) < 1e-6);
        assert!(rel_err(g.db.data(), &fb) < 1e-6);
    }
}
