use super::block_param as bp;
use super::store::{GroupId, ParamGroup, ParameterStore};
use crate::corpus::TokenGrid;
use crate::error::{bail, Result};
use crate::numkernel::{
    attention_core_backward_into, attention_core_into, ensure_finite, gelu_derivative, gelu_scalar, gemm, layernorm_backward_into,
    layernorm_into, linear_backward_into, linear_into, DenseArray, LayerNormCache, MatRef, Scalar, LAYERNORM_EPS,
};

struct BlockTape<F> {
    x_in: Vec<F>,
    ln1_out: Vec<F>,
    ln1: LayerNormCache<F>,
    qkv: Vec<F>,
    weights: Vec<F>,
    heads_out: Vec<F>,
    x_mid: Vec<F>,
    ln2_out: Vec<F>,
    ln2: LayerNormCache<F>,
    fc_pre: Vec<F>,
    fc_act: Vec<F>,
}

/// Activations of one forward pass, for the active blocks only.
pub struct ActivationTape<F> {
    batch: usize,
    seq: usize,
    tokens: Vec<u32>,
    blocks: Vec<BlockTape<F>>,
    top: Vec<F>,
    lnf: LayerNormCache<F>,
    normed_top: Vec<F>,
}

impl<F> ActivationTape<F> {
    /// Number of blocks the forward pass went through.
    pub fn depth(&self) -> usize {
        self.blocks.len()
    }
}

/// Which part of the network receives gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackwardSpec {
    /// Lowest block (from 1) whose parameters get gradient; backpropagation
    /// stops there.
    pub grad_depth_lo: usize,
    /// Whether the embeddings and the final norm accumulate gradient.
    pub train_embeddings_head: bool,
}

fn ln_cache<F: Scalar>(rows: usize) -> LayerNormCache<F> {
    LayerNormCache {
        mean: vec![F::zero(); rows],
        rstd: vec![F::zero(); rows],
    }
}

/// Runs blocks `1..=active_depth`, then the final norm and the tied head.
/// Returns logits `[B, T, V]`.
pub fn forward<F: Scalar>(
    store: &ParameterStore<F>,
    tokens: &TokenGrid,
    active_depth: usize,
) -> Result<(DenseArray<F>, ActivationTape<F>)> {
    let cfg = &store.config;
    if active_depth == 0 || active_depth > cfg.n_layers {
        bail!(Schedule, "active depth {active_depth} outside 1..={}", cfg.n_layers);
    }
    if tokens.seq > cfg.context_len {
        bail!(Dimension, "sequence length {} exceeds context {}", tokens.seq, cfg.context_len);
    }
    if let Some(&bad) = tokens.ids.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        bail!(Data, "token {bad} outside vocabulary of {}", cfg.vocab_size);
    }
    let (b, t, d, v) = (tokens.batch, tokens.seq, cfg.d_model, cfg.vocab_size);
    let rows = b * t;
    let eps = F::of(LAYERNORM_EPS);

    let wte = store.embed.value(0).data();
    let wpe = store.embed.value(1).data();
    let mut x = vec![F::zero(); rows * d];
    for (r, (&tok, out)) in tokens.ids.iter().zip(x.chunks_exact_mut(d)).enumerate() {
        let pos = r % t;
        let te = &wte[tok as usize * d..(tok as usize + 1) * d];
        let pe = &wpe[pos * d..(pos + 1) * d];
        for ((o, &a), &p) in out.iter_mut().zip(te).zip(pe) {
            *o = a + p;
        }
    }

    let mut blocks = Vec::with_capacity(active_depth);
    for group in &store.blocks[..active_depth] {
        let (tape, out) = block_forward(group, x, b, t, d, cfg.n_heads, eps);
        blocks.push(tape);
        x = out;
    }

    let mut lnf = ln_cache(rows);
    let mut normed_top = vec![F::zero(); rows * d];
    layernorm_into(
        &x,
        d,
        store.head.value(0).data(),
        store.head.value(1).data(),
        eps,
        &mut normed_top,
        &mut lnf,
    );
    let mut logits = vec![F::zero(); rows * v];
    gemm(
        rows,
        d,
        v,
        MatRef::rows(&normed_top, 0, d),
        MatRef::transposed(wte, 0, d),
        F::zero(),
        &mut logits,
        0,
        v,
    );
    ensure_finite(&logits, "logits")?;
    Ok((
        DenseArray::new(vec![b, t, v], logits)?,
        ActivationTape {
            batch: b,
            seq: t,
            tokens: tokens.ids.clone(),
            blocks,
            top: x,
            lnf,
            normed_top,
        },
    ))
}

fn block_forward<F: Scalar>(
    g: &ParamGroup<F>,
    x_in: Vec<F>,
    b: usize,
    t: usize,
    d: usize,
    heads: usize,
    eps: F,
) -> (BlockTape<F>, Vec<F>) {
    let rows = b * t;
    let val = |i: usize| g.value(i).data();

    let mut ln1 = ln_cache(rows);
    let mut ln1_out = vec![F::zero(); rows * d];
    layernorm_into(&x_in, d, val(bp::LN1_GAIN), val(bp::LN1_BIAS), eps, &mut ln1_out, &mut ln1);
    let mut qkv = vec![F::zero(); rows * 3 * d];
    linear_into(&ln1_out, rows, d, val(bp::QKV_W), val(bp::QKV_B), 3 * d, &mut qkv);
    let mut heads_out = vec![F::zero(); rows * d];
    let mut weights = vec![F::zero(); b * heads * t * t];
    attention_core_into(&qkv, b, t, d, heads, &mut heads_out, &mut weights);
    let mut x_mid = vec![F::zero(); rows * d];
    linear_into(&heads_out, rows, d, val(bp::ATTN_PROJ_W), val(bp::ATTN_PROJ_B), d, &mut x_mid);
    for (m, &r) in x_mid.iter_mut().zip(&x_in) {
        *m += r;
    }

    let mut ln2 = ln_cache(rows);
    let mut ln2_out = vec![F::zero(); rows * d];
    layernorm_into(&x_mid, d, val(bp::LN2_GAIN), val(bp::LN2_BIAS), eps, &mut ln2_out, &mut ln2);
    let mut fc_pre = vec![F::zero(); rows * 4 * d];
    linear_into(&ln2_out, rows, d, val(bp::FC_W), val(bp::FC_B), 4 * d, &mut fc_pre);
    let fc_act: Vec<F> = fc_pre.iter().map(|&v| gelu_scalar(v)).collect();
    let mut out = vec![F::zero(); rows * d];
    linear_into(&fc_act, rows, 4 * d, val(bp::MLP_PROJ_W), val(bp::MLP_PROJ_B), d, &mut out);
    for (o, &r) in out.iter_mut().zip(&x_mid) {
        *o += r;
    }

    (
        BlockTape {
            x_in,
            ln1_out,
            ln1,
            qkv,
            weights,
            heads_out,
            x_mid,
            ln2_out,
            ln2,
            fc_pre,
            fc_act,
        },
        out,
    )
}

/// Accumulates parameter gradients for blocks `grad_depth_lo..=tape.depth()`
/// (plus embeddings and final norm when requested). Blocks below
/// `grad_depth_lo` are not visited.
pub fn backward<F: Scalar>(
    store: &mut ParameterStore<F>,
    tape: &ActivationTape<F>,
    dlogits: &DenseArray<F>,
    spec: BackwardSpec,
) -> Result<()> {
    let depth = tape.depth();
    let cfg = store.config.clone();
    let (b, t, d, v) = (tape.batch, tape.seq, cfg.d_model, cfg.vocab_size);
    let rows = b * t;
    if spec.grad_depth_lo == 0 || spec.grad_depth_lo > depth {
        bail!(
            Schedule,
            "grad_depth_lo {} must lie in 1..={depth} (the tape's depth)",
            spec.grad_depth_lo
        );
    }
    if dlogits.shape() != [b, t, v] {
        bail!(Schedule, "dlogits {:?} do not match the tape [{b}, {t}, {v}]", dlogits.shape());
    }
    let dl = dlogits.data();

    // Each pass computes into zeroed buffers and is added to the running
    // accumulators once at the end, so accumulation is exactly additive.
    let mut touched: Vec<GroupId> = (spec.grad_depth_lo..=depth).map(GroupId::Block).collect();
    if spec.train_embeddings_head {
        touched.extend([GroupId::Embed, GroupId::Head]);
    }
    let saved: Vec<Vec<DenseArray<F>>> = touched
        .iter()
        .map(|&id| {
            let g = store.group_mut(id).expect("touched group exists");
            g.params
                .iter_mut()
                .map(|p| {
                    let zeros = DenseArray::zeros(p.buf.grad.shape());
                    std::mem::replace(&mut p.buf.grad, zeros)
                })
                .collect()
        })
        .collect();

    // tied head: logits = normed_top · wteᵀ
    let mut dnormed = vec![F::zero(); rows * d];
    {
        let wte = &mut store.embed.params[0].buf;
        gemm(
            rows,
            v,
            d,
            MatRef::rows(dl, 0, v),
            MatRef::rows(wte.value.data(), 0, d),
            F::zero(),
            &mut dnormed,
            0,
            d,
        );
        if spec.train_embeddings_head {
            gemm(
                v,
                rows,
                d,
                MatRef::transposed(dl, 0, v),
                MatRef::rows(&tape.normed_top, 0, d),
                F::one(),
                wte.grad.data_mut(),
                0,
                d,
            );
        }
    }

    let mut grad = vec![F::zero(); rows * d];
    {
        let (gain_p, bias_p) = store.head.params.split_at_mut(1);
        let gain = &mut gain_p[0].buf;
        let bias = &mut bias_p[0].buf;
        let (dg, db) = if spec.train_embeddings_head {
            (Some(gain.grad.data_mut()), Some(bias.grad.data_mut()))
        } else {
            (None, None)
        };
        layernorm_backward_into(&tape.top, d, gain.value.data(), &tape.lnf, &dnormed, Some(&mut grad), dg, db);
    }

    for j in (spec.grad_depth_lo..=depth).rev() {
        let need_dx = j > spec.grad_depth_lo || (j == 1 && spec.train_embeddings_head);
        block_backward(
            &mut store.blocks[j - 1],
            &tape.blocks[j - 1],
            &mut grad,
            b,
            t,
            d,
            cfg.n_heads,
            need_dx,
        );
    }

    if spec.grad_depth_lo == 1 && spec.train_embeddings_head {
        let (wte_p, wpe_p) = store.embed.params.split_at_mut(1);
        let dwte = wte_p[0].buf.grad.data_mut();
        let dwpe = wpe_p[0].buf.grad.data_mut();
        for (r, (&tok, g)) in tape.tokens.iter().zip(grad.chunks_exact(d)).enumerate() {
            let pos = r % t;
            let tok = tok as usize;
            for (acc, &x) in dwte[tok * d..(tok + 1) * d].iter_mut().zip(g) {
                *acc += x;
            }
            for (acc, &x) in dwpe[pos * d..(pos + 1) * d].iter_mut().zip(g) {
                *acc += x;
            }
        }
    }

    for (&id, old) in touched.iter().zip(saved) {
        let g = store.group_mut(id).expect("touched group exists");
        for (p, prev) in g.params.iter_mut().zip(old) {
            for (acc, &x) in p.buf.grad.data_mut().iter_mut().zip(prev.data()) {
                *acc += x;
            }
        }
    }
    Ok(())
}

/// On entry `grad` holds dL/d(block output); on exit dL/d(block input) when
/// `need_dx`, otherwise it is left in an unspecified state.
#[allow(clippy::too_many_arguments)]
fn block_backward<F: Scalar>(
    g: &mut ParamGroup<F>,
    tape: &BlockTape<F>,
    grad: &mut [F],
    b: usize,
    t: usize,
    d: usize,
    heads: usize,
    need_dx: bool,
) {
    let rows = b * t;
    let p = &mut g.params;

    // MLP branch
    let mut dact = vec![F::zero(); rows * 4 * d];
    linear_pair(p, bp::MLP_PROJ_W, |w, dw, db| {
        linear_backward_into(&tape.fc_act, rows, 4 * d, w, d, grad, Some(&mut dact), Some(dw), Some(db))
    });
    for (g, &x) in dact.iter_mut().zip(&tape.fc_pre) {
        *g = *g * gelu_derivative(x);
    }
    let mut dln2 = vec![F::zero(); rows * d];
    linear_pair(p, bp::FC_W, |w, dw, db| {
        linear_backward_into(&tape.ln2_out, rows, d, w, 4 * d, &dact, Some(&mut dln2), Some(dw), Some(db))
    });
    norm_backward(p, bp::LN2_GAIN, &tape.x_mid, &tape.ln2, &dln2, d, Some(&mut *grad));

    // attention branch; `grad` now holds dL/dx_mid
    let mut dheads = vec![F::zero(); rows * d];
    linear_pair(p, bp::ATTN_PROJ_W, |w, dw, db| {
        linear_backward_into(&tape.heads_out, rows, d, w, d, grad, Some(&mut dheads), Some(dw), Some(db))
    });
    let mut dqkv = vec![F::zero(); rows * 3 * d];
    attention_core_backward_into(&tape.qkv, &tape.weights, &dheads, b, t, d, heads, &mut dqkv);
    let mut dln1 = vec![F::zero(); rows * d];
    linear_pair(p, bp::QKV_W, |w, dw, db| {
        linear_backward_into(&tape.ln1_out, rows, d, w, 3 * d, &dqkv, Some(&mut dln1), Some(dw), Some(db))
    });
    norm_backward(
        p,
        bp::LN1_GAIN,
        &tape.x_in,
        &tape.ln1,
        &dln1,
        d,
        if need_dx { Some(grad) } else { None },
    );
}

/// Hands a weight's value plus the weight and bias gradient buffers (at
/// `w_idx` and `w_idx + 1`) to `f`.
fn linear_pair<F: Scalar>(
    params: &mut [super::Param<F>],
    w_idx: usize,
    f: impl FnOnce(&[F], &mut [F], &mut [F]),
) {
    let (w, rest) = params[w_idx..].split_first_mut().expect("weight present");
    let bias = &mut rest[0].buf;
    f(w.buf.value.data(), w.buf.grad.data_mut(), bias.grad.data_mut());
}

fn norm_backward<F: Scalar>(
    params: &mut [super::Param<F>],
    gain_idx: usize,
    x: &[F],
    cache: &LayerNormCache<F>,
    dy: &[F],
    d: usize,
    dx: Option<&mut [F]>,
) {
    let (gain, rest) = params[gain_idx..].split_first_mut().expect("gain present");
    layernorm_backward_into(
        x,
        d,
        gain.buf.value.data(),
        cache,
        dy,
        dx,
        Some(gain.buf.grad.data_mut()),
        Some(rest[0].buf.grad.data_mut()),
    );
}
