//! Times the pieces of one training step at a given model size.
//!
//! cargo run --release --example throughput -- [layers] [d_model] [batch] [seq]

use std::time::Instant;

use layerwise::corpus::{ingest_documents, synthetic, BatchSpec, Batcher};
use layerwise::model::{backward, forward, init_model, BackwardSpec, ModelConfig, ParameterStore};
use layerwise::numkernel::{
    attention_core_backward, attention_core_forward, cross_entropy_logits, gelu, gelu_backward, layernorm, linear, DenseArray,
    Precision,
};
use layerwise::optim::{register_new_groups, step, AdamWConfig, OptState};

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> layerwise::Result<()> {
    let (layers, d, b, t) = (arg(1, 8), arg(2, 128), arg(3, 32), arg(4, 256));
    let cfg = ModelConfig {
        n_layers: layers,
        d_model: d,
        n_heads: 4,
        context_len: t,
        vocab_size: 259,
        precision: Precision::Fast32,
        init_seed: 0,
    };

    let (m, k, n) = (b * t, d, 4 * d);
    let x = DenseArray::<f32>::from_fn(&[m, k], |i| (i % 7) as f32 * 0.1);
    let w = DenseArray::<f32>::from_fn(&[k, n], |i| (i % 5) as f32 * 0.01);
    let bias = DenseArray::<f32>::zeros(&[n]);
    let reps = 20;
    let t0 = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(linear(&x, &w, &bias)?);
    }
    let secs = t0.elapsed().as_secs_f64();
    println!("gemm {m}x{k}x{n}: {:.1} GFLOP/s", 2.0 * (m * k * n * reps) as f64 / secs / 1e9);

    let time = |label: &str, f: &mut dyn FnMut()| {
        let t0 = Instant::now();
        for _ in 0..3 {
            f();
        }
        println!("{label}: {:.1} ms", t0.elapsed().as_secs_f64() * 1e3 / 3.0);
    };
    let qkv = DenseArray::<f32>::from_fn(&[b, t, 3 * d], |i| ((i % 13) as f32 - 6.0) * 0.05);
    let dy = DenseArray::<f32>::from_fn(&[b, t, d], |i| ((i % 11) as f32 - 5.0) * 0.01);
    let (_, wts) = attention_core_forward(&qkv, 4)?;
    time("attention core forward", &mut || {
        std::hint::black_box(attention_core_forward(&qkv, 4).unwrap());
    });
    time("attention core backward", &mut || {
        std::hint::black_box(attention_core_backward(&qkv, &wts, &dy, 4).unwrap());
    });
    let h = DenseArray::<f32>::from_fn(&[b * t, 4 * d], |i| ((i % 13) as f32 - 6.0) * 0.1);
    time("gelu", &mut || {
        std::hint::black_box(gelu(&h).unwrap());
    });
    time("gelu backward", &mut || {
        std::hint::black_box(gelu_backward(&h, &h).unwrap());
    });
    let g = DenseArray::<f32>::from_fn(&[d], |_| 1.0);
    let z = DenseArray::<f32>::zeros(&[d]);
    time("layernorm", &mut || {
        std::hint::black_box(layernorm(&dy, &g, &z, 1e-5).unwrap());
    });

    let docs = synthetic::documents_with_size(0, 4 * b * t + 4096);
    let (train, _) = ingest_documents(&docs, 0.0, 0)?;
    let batcher = Batcher::new(&train, BatchSpec { batch_size: b, seq_len: t }, 0)?;
    let mut store: ParameterStore<f32> = init_model(&cfg)?;
    let mut opt = OptState::new();
    let ids: Vec<_> = store.groups().map(|g| g.id).collect();
    register_new_groups(&mut opt, &store, &ids)?;
    let ocfg = AdamWConfig::default();

    for s in 1..=3u64 {
        let batch = batcher.batch_at(s);
        store.zero_grads();
        let t0 = Instant::now();
        let (logits, tape) = forward(&store, &batch.inputs, layers)?;
        let t1 = Instant::now();
        let ce = cross_entropy_logits(&logits, &batch.targets.ids)?;
        let t2 = Instant::now();
        backward(&mut store, &tape, &ce.dlogits, BackwardSpec { grad_depth_lo: 1, train_embeddings_head: true })?;
        let t3 = Instant::now();
        step(&mut store, &mut opt, &ocfg, s)?;
        let t4 = Instant::now();
        println!(
            "step {s}: forward {:.3}s  loss {:.3}s  backward {:.3}s  optimizer {:.3}s  (loss {:.4})",
            (t1 - t0).as_secs_f64(),
            (t2 - t1).as_secs_f64(),
            (t3 - t2).as_secs_f64(),
            (t4 - t3).as_secs_f64(),
            ce.loss
        );
    }
    Ok(())
}
