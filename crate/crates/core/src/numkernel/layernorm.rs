use super::array::{ensure_finite, DenseArray, Scalar};
use crate::error::{bail, Result};

/// GPT-2 layer-norm epsilon.
pub const LAYERNORM_EPS: f64 = 1e-5;

/// Per-row statistics saved by the forward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache<F> {
    pub mean: Vec<F>,
    pub rstd: Vec<F>,
}

#[derive(Clone, Debug)]
pub struct LayerNormGrads<F> {
    pub dx: DenseArray<F>,
    pub dgain: DenseArray<F>,
    pub dbias: DenseArray<F>,
}

/// Normalizes each row of the trailing axis to zero mean and unit variance,
/// then applies `gain` and `bias`.
pub fn layernorm<F: Scalar>(
    x: &DenseArray<F>,
    gain: &DenseArray<F>,
    bias: &DenseArray<F>,
    eps: F,
) -> Result<(DenseArray<F>, LayerNormCache<F>)> {
    let d = x.last_dim();
    if gain.shape() != [d] || bias.shape() != [d] {
        bail!(
            Dimension,
            "layernorm: gain {:?} / bias {:?} must be [{d}]",
            gain.shape(),
            bias.shape()
        );
    }
    if !(eps > F::zero()) {
        bail!(Config, "layernorm eps must be positive, got {eps}");
    }
    x.check_finite("layernorm input")?;
    let rows = x.rows();
    let mut out = vec![F::zero(); x.len()];
    let mut cache = LayerNormCache {
        mean: vec![F::zero(); rows],
        rstd: vec![F::zero(); rows],
    };
    layernorm_into(x.data(), d, gain.data(), bias.data(), eps, &mut out, &mut cache);
    ensure_finite(&out, "layernorm output")?;
    Ok((DenseArray::new(x.shape().to_vec(), out)?, cache))
}

pub fn layernorm_backward<F: Scalar>(
    x: &DenseArray<F>,
    gain: &DenseArray<F>,
    cache: &LayerNormCache<F>,
    dy: &DenseArray<F>,
) -> Result<LayerNormGrads<F>> {
    let d = x.last_dim();
    if dy.shape() != x.shape() || gain.shape() != [d] || cache.mean.len() != x.rows() {
        bail!(Dimension, "layernorm backward: inconsistent shapes");
    }
    dy.check_finite("layernorm upstream gradient")?;
    let mut dx = DenseArray::zeros(x.shape());
    let mut dgain = DenseArray::zeros(&[d]);
    let mut dbias = DenseArray::zeros(&[d]);
    layernorm_backward_into(
        x.data(),
        d,
        gain.data(),
        cache,
        dy.data(),
        Some(dx.data_mut()),
        Some(dgain.data_mut()),
        Some(dbias.data_mut()),
    );
    dx.check_finite("layernorm dx")?;
    Ok(LayerNormGrads { dx, dgain, dbias })
}

pub(crate) fn layernorm_into<F: Scalar>(
    x: &[F],
    d: usize,
    gain: &[F],
    bias: &[F],
    eps: F,
    out: &mut [F],
    cache: &mut LayerNormCache<F>,
) {
    let inv_d = F::one() / F::from_usize(d).unwrap();
    for (r, (row, orow)) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)).enumerate() {
        let mean = row.iter().copied().sum::<F>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let rstd = F::one() / (var + eps).sqrt();
        for ((o, &v), (&g, &b)) in orow.iter_mut().zip(row).zip(gain.iter().zip(bias)) {
            *o = (v - mean) * rstd * g + b;
        }
        cache.mean[r] = mean;
        cache.rstd[r] = rstd;
    }
}

/// Accumulates into the requested gradient buffers.
#[allow(clippy::too_many_arguments)]
pub(crate) fn layernorm_backward_into<F: Scalar>(
    x: &[F],
    d: usize,
    gain: &[F],
    cache: &LayerNormCache<F>,
    dy: &[F],
    mut dx: Option<&mut [F]>,
    mut dgain: Option<&mut [F]>,
    mut dbias: Option<&mut [F]>,
) {
    let inv_d = F::one() / F::from_usize(d).unwrap();
    let mut xhat = vec![F::zero(); d];
    for (r, (row, grow)) in x.chunks_exact(d).zip(dy.chunks_exact(d)).enumerate() {
        let (mean, rstd) = (cache.mean[r], cache.rstd[r]);
        for (h, &v) in xhat.iter_mut().zip(row) {
            *h = (v - mean) * rstd;
        }
        if let Some(dg) = dgain.as_deref_mut() {
            for ((acc, &g), &h) in dg.iter_mut().zip(grow).zip(&xhat) {
                *acc += g * h;
            }
        }
        if let Some(db) = dbias.as_deref_mut() {
            for (acc, &g) in db.iter_mut().zip(grow) {
                *acc += g;
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let mut mean_dxhat = F::zero();
            let mut mean_dxhat_xhat = F::zero();
            for ((&g, &gn), &h) in grow.iter().zip(gain).zip(&xhat) {
                let dxh = g * gn;
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * h;
            }
            mean_dxhat = mean_dxhat * inv_d;
            mean_dxhat_xhat = mean_dxhat_xhat * inv_d;
            let drow = &mut dx[r * d..(r + 1) * d];
            for (((o, &g), &gn), &h) in drow.iter_mut().zip(grow).zip(gain).zip(&xhat) {
                *o += rstd * (g * gn - mean_dxhat - h * mean_dxhat_xhat);
            }
        }
    }
}
