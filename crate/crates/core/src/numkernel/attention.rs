use super::array::{ensure_finite, gemm, DenseArray, MatRef, Scalar};
use super::linear::{linear_backward_into, linear_into};
use crate::error::{bail, Result};

/// Weights of one multi-head causal self-attention sublayer.
///
/// `w_qkv` is `[D, 3D]` with the query, key and value projections laid out
/// side by side; head `h` owns columns `h·D/H .. (h+1)·D/H` of each third.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams<'a, F> {
    pub w_qkv: &'a DenseArray<F>,
    pub b_qkv: &'a DenseArray<F>,
    pub w_proj: &'a DenseArray<F>,
    pub b_proj: &'a DenseArray<F>,
    pub n_heads: usize,
}

/// Activations the backward pass needs.
#[derive(Clone, Debug)]
pub struct AttentionCache<F> {
    /// `[B, T, 3D]`
    pub qkv: DenseArray<F>,
    /// Row-stochastic, lower-triangular weights, `[B, H, T, T]`.
    pub weights: DenseArray<F>,
    /// Head outputs before the output projection, `[B, T, D]`.
    pub heads_out: DenseArray<F>,
}

#[derive(Clone, Debug)]
pub struct AttentionGrads<F> {
    pub dx: DenseArray<F>,
    pub dw_qkv: DenseArray<F>,
    pub db_qkv: DenseArray<F>,
    pub dw_proj: DenseArray<F>,
    pub db_proj: DenseArray<F>,
}

fn dims3<F: Scalar>(x: &DenseArray<F>, what: &str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [b, t, d] => Ok((b, t, d)),
        _ => bail!(Dimension, "{what}: expected [B, T, D], got {:?}", x.shape()),
    }
}

fn head_dim(d: usize, n_heads: usize) -> Result<usize> {
    if n_heads == 0 || d % n_heads != 0 {
        bail!(Config, "model width {d} is not divisible by {n_heads} heads");
    }
    Ok(d / n_heads)
}

/// Scaled dot-product attention with a causal mask over packed `[B, T, 3D]`
/// projections. Returns the head outputs `[B, T, D]` and the weights.
pub fn attention_core_forward<F: Scalar>(
    qkv: &DenseArray<F>,
    n_heads: usize,
) -> Result<(DenseArray<F>, DenseArray<F>)> {
    let (b, t, d3) = dims3(qkv, "attention")?;
    if d3 % 3 != 0 {
        bail!(Dimension, "packed qkv width {d3} is not a multiple of 3");
    }
    let d = d3 / 3;
    head_dim(d, n_heads)?;
    qkv.check_finite("attention input")?;
    let mut out = vec![F::zero(); b * t * d];
    let mut weights = vec![F::zero(); b * n_heads * t * t];
    attention_core_into(qkv.data(), b, t, d, n_heads, &mut out, &mut weights);
    ensure_finite(&out, "attention output")?;
    Ok((
        DenseArray::new(vec![b, t, d], out)?,
        DenseArray::new(vec![b, n_heads, t, t], weights)?,
    ))
}

/// Gradient with respect to the packed projections.
pub fn attention_core_backward<F: Scalar>(
    qkv: &DenseArray<F>,
    weights: &DenseArray<F>,
    dy: &DenseArray<F>,
    n_heads: usize,
) -> Result<DenseArray<F>> {
    let (b, t, d3) = dims3(qkv, "attention backward")?;
    let d = d3 / 3;
    if dy.shape() != [b, t, d] || weights.shape() != [b, n_heads, t, t] {
        bail!(Dimension, "attention backward: inconsistent shapes");
    }
    dy.check_finite("attention upstream gradient")?;
    let mut dqkv = DenseArray::zeros(qkv.shape());
    attention_core_backward_into(qkv.data(), weights.data(), dy.data(), b, t, d, n_heads, dqkv.data_mut());
    dqkv.check_finite("attention dqkv")?;
    Ok(dqkv)
}

pub(crate) fn attention_core_into<F: Scalar>(
    qkv: &[F],
    b: usize,
    t: usize,
    d: usize,
    n_heads: usize,
    out: &mut [F],
    weights: &mut [F],
) {
    let hd = d / n_heads;
    let scale = F::one() / F::from_usize(hd).unwrap().sqrt();
    let ld = 3 * d;
    for bi in 0..b {
        let base = bi * t * ld;
        for h in 0..n_heads {
            let q_off = base + h * hd;
            let k_off = q_off + d;
            let v_off = q_off + 2 * d;
            let w_off = (bi * n_heads + h) * t * t;
            gemm(
                t,
                hd,
                t,
                MatRef::rows(qkv, q_off, ld),
                MatRef::transposed(qkv, k_off, ld),
                F::zero(),
                weights,
                w_off,
                t,
            );
            for (row_idx, row) in weights[w_off..w_off + t * t].chunks_exact_mut(t).enumerate() {
                causal_softmax_row(row, row_idx, scale);
            }
            gemm(
                t,
                t,
                hd,
                MatRef::rows(weights, w_off, t),
                MatRef::rows(qkv, v_off, ld),
                F::zero(),
                out,
                bi * t * d + h * hd,
                d,
            );
        }
    }
}

/// Softmax of `scale·row[0..=pos]`; entries past `pos` become exact zeros.
fn causal_softmax_row<F: Scalar>(row: &mut [F], pos: usize, scale: F) {
    let (live, masked) = row.split_at_mut(pos + 1);
    let mut max = F::neg_infinity();
    for v in live.iter_mut() {
        *v = *v * scale;
        max = max.max(*v);
    }
    let mut sum = F::zero();
    for v in live.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = F::one() / sum;
    for v in live.iter_mut() {
        *v = *v * inv;
    }
    masked.iter_mut().for_each(|v| *v = F::zero());
}

/// Accumulates into `dqkv`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_core_backward_into<F: Scalar>(
    qkv: &[F],
    weights: &[F],
    dy: &[F],
    b: usize,
    t: usize,
    d: usize,
    n_heads: usize,
    dqkv: &mut [F],
) {
    let hd = d / n_heads;
    let scale = F::one() / F::from_usize(hd).unwrap().sqrt();
    let ld = 3 * d;
    let mut dscores = vec![F::zero(); t * t];
    for bi in 0..b {
        let base = bi * t * ld;
        for h in 0..n_heads {
            let q_off = base + h * hd;
            let k_off = q_off + d;
            let v_off = q_off + 2 * d;
            let w_off = (bi * n_heads + h) * t * t;
            let dy_off = bi * t * d + h * hd;
            // dP = dY·Vᵀ
            gemm(
                t,
                hd,
                t,
                MatRef::rows(dy, dy_off, d),
                MatRef::transposed(qkv, v_off, ld),
                F::zero(),
                &mut dscores,
                0,
                t,
            );
            // dV += Pᵀ·dY
            gemm(
                t,
                t,
                hd,
                MatRef::transposed(weights, w_off, t),
                MatRef::rows(dy, dy_off, d),
                F::one(),
                dqkv,
                v_off,
                ld,
            );
            // softmax backward, folded with the score scale
            let p = &weights[w_off..w_off + t * t];
            for (prow, drow) in p.chunks_exact(t).zip(dscores.chunks_exact_mut(t)) {
                let dot: F = prow.iter().zip(drow.iter()).map(|(&a, &g)| a * g).sum();
                for (g, &a) in drow.iter_mut().zip(prow) {
                    *g = a * (*g - dot) * scale;
                }
            }
            // dQ += dS·K, dK += dSᵀ·Q
            gemm(
                t,
                t,
                hd,
                MatRef::rows(&dscores, 0, t),
                MatRef::rows(qkv, k_off, ld),
                F::one(),
                dqkv,
                q_off,
                ld,
            );
            gemm(
                t,
                t,
                hd,
                MatRef::transposed(&dscores, 0, t),
                MatRef::rows(qkv, q_off, ld),
                F::one(),
                dqkv,
                k_off,
                ld,
            );
        }
    }
}

fn check_params<F: Scalar>(d: usize, p: &AttentionParams<'_, F>) -> Result<()> {
    head_dim(d, p.n_heads)?;
    if p.w_qkv.shape() != [d, 3 * d]
        || p.b_qkv.shape() != [3 * d]
        || p.w_proj.shape() != [d, d]
        || p.b_proj.shape() != [d]
    {
        bail!(Dimension, "attention parameters do not match width {d}");
    }
    Ok(())
}

/// Full attention sublayer: packed projection, causal attention, output projection.
pub fn causal_self_attention<F: Scalar>(
    x: &DenseArray<F>,
    p: &AttentionParams<'_, F>,
) -> Result<(DenseArray<F>, AttentionCache<F>)> {
    let (b, t, d) = dims3(x, "attention")?;
    check_params(d, p)?;
    x.check_finite("attention input")?;
    let rows = b * t;
    let mut qkv = vec![F::zero(); rows * 3 * d];
    linear_into(x.data(), rows, d, p.w_qkv.data(), p.b_qkv.data(), 3 * d, &mut qkv);
    let mut heads_out = vec![F::zero(); rows * d];
    let mut weights = vec![F::zero(); b * p.n_heads * t * t];
    attention_core_into(&qkv, b, t, d, p.n_heads, &mut heads_out, &mut weights);
    let mut y = vec![F::zero(); rows * d];
    linear_into(&heads_out, rows, d, p.w_proj.data(), p.b_proj.data(), d, &mut y);
    ensure_finite(&y, "attention output")?;
    Ok((
        DenseArray::new(vec![b, t, d], y)?,
        AttentionCache {
            qkv: DenseArray::new(vec![b, t, 3 * d], qkv)?,
            weights: DenseArray::new(vec![b, p.n_heads, t, t], weights)?,
            heads_out: DenseArray::new(vec![b, t, d], heads_out)?,
        },
    ))
}

pub fn causal_self_attention_backward<F: Scalar>(
    x: &DenseArray<F>,
    p: &AttentionParams<'_, F>,
    cache: &AttentionCache<F>,
    dy: &DenseArray<F>,
) -> Result<AttentionGrads<F>> {
    let (b, t, d) = dims3(x, "attention backward")?;
    check_params(d, p)?;
    if dy.shape() != x.shape() {
        bail!(Dimension, "attention backward: dy {:?} vs x {:?}", dy.shape(), x.shape());
    }
    dy.check_finite("attention upstream gradient")?;
    let rows = b * t;
    let mut dw_proj = DenseArray::zeros(&[d, d]);
    let mut db_proj = DenseArray::zeros(&[d]);
    let mut dheads = vec![F::zero(); rows * d];
    linear_backward_into(
        cache.heads_out.data(),
        rows,
        d,
        p.w_proj.data(),
        d,
        dy.data(),
        Some(&mut dheads),
        Some(dw_proj.data_mut()),
        Some(db_proj.data_mut()),
    );
    let mut dqkv = vec![F::zero(); rows * 3 * d];
    attention_core_backward_into(cache.qkv.data(), cache.weights.data(), &dheads, b, t, d, p.n_heads, &mut dqkv);
    let mut dx = DenseArray::zeros(x.shape());
    let mut dw_qkv = DenseArray::zeros(&[d, 3 * d]);
    let mut db_qkv = DenseArray::zeros(&[3 * d]);
    linear_backward_into(
        x.data(),
        rows,
        d,
        p.w_qkv.data(),
        3 * d,
        &dqkv,
        Some(dx.data_mut()),
        Some(dw_qkv.data_mut()),
        Some(db_qkv.data_mut()),
    );
    dx.check_finite("attention dx")?;
    Ok(AttentionGrads {
        dx,
        dw_qkv,
        db_qkv,
        dw_proj,
        db_proj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, rel_err, seeded_normal, FD_STEP};

    #[test]
    fn single_position_copies_value() {
        let qkv = seeded_normal(1, &[2, 1, 12]);
        let (out, w) = attention_core_forward(&qkv, 2).unwrap();
        assert!(w.data().iter().all(|&v| v == 1.0));
        for bi in 0..2 {
            assert_eq!(&out.data()[bi * 4..bi * 4 + 4], &qkv.data()[bi * 12 + 8..bi * 12 + 12]);
        }
    }

    #[test]
    fn single_position_sublayer_is_projected_value() {
        let d = 4;
        let x = seeded_normal(2, &[1, 1, d]);
        let w_qkv = seeded_normal(3, &[d, 3 * d]);
        let b_qkv = seeded_normal(4, &[3 * d]);
        let w_proj = seeded_normal(5, &[d, d]);
        let b_proj = seeded_normal(6, &[d]);
        let p = AttentionParams {
            w_qkv: &w_qkv,
            b_qkv: &b_qkv,
            w_proj: &w_proj,
            b_proj: &b_proj,
            n_heads: 2,
        };
        let (y, _) = causal_self_attention(&x, &p).unwrap();
        let qkv = crate::numkernel::linear(&x, &w_qkv, &b_qkv).unwrap();
        let v = DenseArray::new(vec![1, 1, d], qkv.data()[2 * d..].to_vec()).unwrap();
        let expect = crate::numkernel::linear(&v, &w_proj, &b_proj).unwrap();
        for (a, b) in y.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_scores_give_uniform_prefix_weights() {
        // zero queries make every pre-softmax score equal
        let mut qkv = seeded_normal(7, &[1, 5, 6]);
        for row in qkv.data_mut().chunks_mut(6) {
            row[..2].iter_mut().for_each(|v| *v = 0.0);
        }
        let (_, w) = attention_core_forward(&qkv, 1).unwrap();
        for (pos, row) in w.data().chunks(5).enumerate() {
            for (j, &p) in row.iter().enumerate() {
                let want = if j <= pos { 1.0 / (pos + 1) as f64 } else { 0.0 };
                assert!((p - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn weights_are_causal_distributions() {
        let qkv = seeded_normal(8, &[2, 7, 24]);
        let (_, w) = attention_core_forward(&qkv, 4).unwrap();
        for (r, row) in w.data().chunks(7).enumerate() {
            let pos = r % 7;
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row[pos + 1..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn indivisible_heads_is_config_error() {
        let qkv = seeded_normal(9, &[1, 2, 9]);
        assert!(matches!(attention_core_forward(&qkv, 2), Err(crate::Error::Config(_))));
    }

    #[test]
    fn sublayer_backward_matches_finite_differences() {
        let (b, t, d, h) = (1, 4, 8, 2);
        let x = seeded_normal(20, &[b, t, d]);
        let w_qkv = seeded_normal(21, &[d, 3 * d]).reshape(&[d, 3 * d]).unwrap();
        let mut w_qkv = w_qkv;
        w_qkv.data_mut().iter_mut().for_each(|v| *v *= 0.5);
        let b_qkv = seeded_normal(22, &[3 * d]);
        let w_proj = seeded_normal(23, &[d, d]);
        let b_proj = seeded_normal(24, &[d]);
        let r = seeded_normal(25, &[b, t, d]);
        let obj = |x: &DenseArray<f64>, wq: &DenseArray<f64>, wp: &DenseArray<f64>| {
            let p = AttentionParams {
                w_qkv: wq,
                b_qkv: &b_qkv,
                w_proj: wp,
                b_proj: &b_proj,
                n_heads: h,
            };
            let (y, _) = causal_self_attention(x, &p).unwrap();
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let p = AttentionParams {
            w_qkv: &w_qkv,
            b_qkv: &b_qkv,
            w_proj: &w_proj,
            b_proj: &b_proj,
            n_heads: h,
        };
        let (_, cache) = causal_self_attention(&x, &p).unwrap();
        let g = causal_self_attention_backward(&x, &p, &cache, &r).unwrap();
        let rebuild = |a: &DenseArray<f64>, v: &[f64]| DenseArray::new(a.shape().to_vec(), v.to_vec()).unwrap();
        let nx = central_difference(x.data(), FD_STEP, |v| obj(&rebuild(&x, v), &w_qkv, &w_proj));
        let nq = central_difference(w_qkv.data(), FD_STEP, |v| obj(&x, &rebuild(&w_qkv, v), &w_proj));
        let np = central_difference(w_proj.data(), FD_STEP, |v| obj(&x, &w_qkv, &rebuild(&w_proj, v)));
        assert!(rel_err(g.dx.data(), &nx) < 1e-5);
        assert!(rel_err(g.dw_qkv.data(), &nq) < 1e-5);
        assert!(rel_err(g.dw_proj.data(), &np) < 1e-5);
    }
}
