//! Central finite-difference oracle for checking hand-written backward passes.
//!
//! Nothing in here calls into a backward pass: the numeric gradient is built
//! from forward evaluations only.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::TokenGrid;
use crate::error::Result;
use crate::model::{backward, forward, init_model, BackwardSpec, GroupId, ModelConfig, ParameterStore};
use crate::numkernel::{
    attention_core_backward, attention_core_forward, causal_self_attention, causal_self_attention_backward,
    cross_entropy_logits, gelu, gelu_backward, layernorm, layernorm_backward, linear, linear_backward, AttentionParams,
    DenseArray, Precision, LAYERNORM_EPS,
};

/// Step used by every gradient check in the crate.
pub const FD_STEP: f64 = 1e-5;

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every coordinate `i`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`; zero when both vectors are zero.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Standard-normal array from a seeded stream.
pub fn seeded_normal(seed: u64, shape: &[usize]) -> DenseArray<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseArray::from_fn(shape, |_| StandardNormal.sample(&mut rng))
}

/// Relative error of one analytic gradient against finite differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub rel_err: f64,
}

fn rebuild(like: &DenseArray<f64>, v: &[f64]) -> DenseArray<f64> {
    DenseArray::new(like.shape().to_vec(), v.to_vec()).expect("same length")
}

fn dot(y: &DenseArray<f64>, r: &DenseArray<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn scaled(seed: u64, shape: &[usize], s: f64) -> DenseArray<f64> {
    let mut a = seeded_normal(seed, shape);
    a.data_mut().iter_mut().for_each(|v| *v *= s);
    a
}

fn push(out: &mut Vec<GradCheck>, name: &str, analytic: &DenseArray<f64>, numeric: &[f64]) {
    out.push(GradCheck {
        name: name.to_string(),
        rel_err: rel_err(analytic.data(), numeric),
    });
}

/// Every kernel's backward pass against finite differences of the scalar
/// `Σ y·r` for a random projection `r`. All inputs derive from `seed`.
pub fn check_kernels(seed: u64) -> Result<Vec<GradCheck>> {
    let s = seed * 100;
    let h = FD_STEP;
    let mut out = Vec::new();
    let (b, t, d) = (2, 4, 8);

    let x = seeded_normal(s + 1, &[b, t, d]);
    let w = seeded_normal(s + 2, &[d, 5]);
    let bias = seeded_normal(s + 3, &[5]);
    let r = seeded_normal(s + 4, &[b, t, 5]);
    let g = linear_backward(&x, &w, &r)?;
    push(&mut out, "linear.dx", &g.dx, &central_difference(x.data(), h, |v| dot(&linear(&rebuild(&x, v), &w, &bias).unwrap(), &r)));
    push(&mut out, "linear.dw", &g.dw, &central_difference(w.data(), h, |v| dot(&linear(&x, &rebuild(&w, v), &bias).unwrap(), &r)));
    push(&mut out, "linear.db", &g.db, &central_difference(bias.data(), h, |v| dot(&linear(&x, &w, &rebuild(&bias, v)).unwrap(), &r)));

    let gain = scaled(s + 5, &[d], 1.0);
    let beta = seeded_normal(s + 6, &[d]);
    let r = seeded_normal(s + 7, &[b, t, d]);
    let ln = |x: &DenseArray<f64>, g: &DenseArray<f64>, bb: &DenseArray<f64>| dot(&layernorm(x, g, bb, LAYERNORM_EPS).unwrap().0, &r);
    let (_, cache) = layernorm(&x, &gain, &beta, LAYERNORM_EPS)?;
    let g = layernorm_backward(&x, &gain, &cache, &r)?;
    push(&mut out, "layernorm.dx", &g.dx, &central_difference(x.data(), h, |v| ln(&rebuild(&x, v), &gain, &beta)));
    push(&mut out, "layernorm.dgain", &g.dgain, &central_difference(gain.data(), h, |v| ln(&x, &rebuild(&gain, v), &beta)));
    push(&mut out, "layernorm.dbias", &g.dbias, &central_difference(beta.data(), h, |v| ln(&x, &gain, &rebuild(&beta, v))));

    let z = scaled(s + 8, &[b, t, d], 2.0);
    let g = gelu_backward(&z, &r)?;
    push(&mut out, "gelu.dx", &g, &central_difference(z.data(), h, |v| dot(&gelu(&rebuild(&z, v)).unwrap(), &r)));

    let n_heads = 2;
    let qkv = seeded_normal(s + 9, &[b, t, 3 * d]);
    let (_, weights) = attention_core_forward(&qkv, n_heads)?;
    let g = attention_core_backward(&qkv, &weights, &r, n_heads)?;
    push(
        &mut out,
        "attention_core.dqkv",
        &g,
        &central_difference(qkv.data(), h, |v| dot(&attention_core_forward(&rebuild(&qkv, v), n_heads).unwrap().0, &r)),
    );

    let wq = scaled(s + 10, &[d, 3 * d], 0.5);
    let bq = seeded_normal(s + 11, &[3 * d]);
    let wp = seeded_normal(s + 12, &[d, d]);
    let bp = seeded_normal(s + 13, &[d]);
    let attn = |x: &DenseArray<f64>, wq: &DenseArray<f64>, bq: &DenseArray<f64>, wp: &DenseArray<f64>, bp: &DenseArray<f64>| {
        let p = AttentionParams { w_qkv: wq, b_qkv: bq, w_proj: wp, b_proj: bp, n_heads };
        dot(&causal_self_attention(x, &p).unwrap().0, &r)
    };
    let p = AttentionParams { w_qkv: &wq, b_qkv: &bq, w_proj: &wp, b_proj: &bp, n_heads };
    let (_, cache) = causal_self_attention(&x, &p)?;
    let g = causal_self_attention_backward(&x, &p, &cache, &r)?;
    push(&mut out, "attention.dx", &g.dx, &central_difference(x.data(), h, |v| attn(&rebuild(&x, v), &wq, &bq, &wp, &bp)));
    push(&mut out, "attention.dw_qkv", &g.dw_qkv, &central_difference(wq.data(), h, |v| attn(&x, &rebuild(&wq, v), &bq, &wp, &bp)));
    push(&mut out, "attention.db_qkv", &g.db_qkv, &central_difference(bq.data(), h, |v| attn(&x, &wq, &rebuild(&bq, v), &wp, &bp)));
    push(&mut out, "attention.dw_proj", &g.dw_proj, &central_difference(wp.data(), h, |v| attn(&x, &wq, &bq, &rebuild(&wp, v), &bp)));
    push(&mut out, "attention.db_proj", &g.db_proj, &central_difference(bp.data(), h, |v| attn(&x, &wq, &bq, &wp, &rebuild(&bp, v))));

    let logits = scaled(s + 14, &[b, t, 11], 2.0);
    let targets: Vec<u32> = (0..b * t).map(|i| ((i as u64 * 7 + seed) % 11) as u32).collect();
    let ce = cross_entropy_logits(&logits, &targets)?;
    push(
        &mut out,
        "cross_entropy.dlogits",
        &ce.dlogits,
        &central_difference(logits.data(), h, |v| cross_entropy_logits(&rebuild(&logits, v), &targets).unwrap().loss),
    );
    Ok(out)
}

/// Small 64-bit model (`D = 8`, two heads, vocabulary 11) used by the
/// composed check.
pub fn toy_config(layers: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        n_layers: layers,
        d_model: 8,
        n_heads: 2,
        context_len: 6,
        vocab_size: 11,
        precision: Precision::Verify64,
        init_seed: seed,
    }
}

/// Replaces every parameter with `0.5·N(0, 1)` noise so that gradients are
/// large enough for finite differences to resolve.
pub fn roughen(store: &mut ParameterStore<f64>, seed: u64) {
    for (gi, g) in store.groups_mut().enumerate() {
        for (pi, p) in g.params.iter_mut().enumerate() {
            let noise = seeded_normal(seed * 1000 + gi as u64 * 50 + pi as u64, p.buf.value.shape());
            for (v, n) in p.buf.value.data_mut().iter_mut().zip(noise.data()) {
                *v = 0.5 * n;
            }
        }
    }
}

/// Deterministic token grid over `vocab`.
pub fn token_grid(seed: u64, batch: usize, seq: usize, vocab: u32) -> TokenGrid {
    let ids = (0..batch * seq)
        .map(|i| ((i as u64 * 2654435761 + seed * 97) % vocab as u64) as u32)
        .collect();
    TokenGrid { batch, seq, ids }
}

/// Full forward and backward of a `layers`-deep toy model, checked on every
/// parameter array of every group.
pub fn check_composed_model(seed: u64, layers: usize) -> Result<Vec<GradCheck>> {
    let mut store = init_model::<f64>(&toy_config(layers, seed))?;
    roughen(&mut store, seed + 10);
    let inputs = token_grid(seed, 2, 4, 11);
    let targets = token_grid(seed + 5, 2, 4, 11).ids;
    let (logits, tape) = forward(&store, &inputs, layers)?;
    let ce = cross_entropy_logits(&logits, &targets)?;
    store.zero_grads();
    backward(&mut store, &tape, &ce.dlogits, BackwardSpec { grad_depth_lo: 1, train_embeddings_head: true })?;

    let mut out = Vec::new();
    let ids: Vec<GroupId> = store.groups().map(|g| g.id).collect();
    for id in ids {
        let group = store.group(id).expect("listed group");
        for (pi, p) in group.params.iter().enumerate() {
            let mut probe = store.clone();
            let numeric = central_difference(p.buf.value.data(), FD_STEP, |v| {
                probe.group_mut(id).expect("listed group").params[pi].buf.value.data_mut().copy_from_slice(v);
                let (l, _) = forward(&probe, &inputs, layers).expect("valid model");
                cross_entropy_logits(&l, &targets).expect("finite logits").loss
            });
            out.push(GradCheck {
                name: format!("{id}.{}", p.name),
                rel_err: rel_err(p.buf.grad.data(), &numeric),
            });
        }
    }
    Ok(out)
}
