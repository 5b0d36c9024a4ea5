//! Acceptance criteria, one PASS/FAIL line each.
//!
//! The full desk-scale comparison (criterion 7) runs only when asked for
//! with `--include-ignored`, `--ignored` or `LAYERWISE_DESK=1`; by default a
//! reduced-scale probe runs in its place and is reported as such.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use layerwise::cli::{execute, Cli};
use layerwise::corpus::{ingest_documents, synthetic, BatchSpec, Batcher};
use layerwise::cost::{
    baseline_cost, continual_tokens_to_match, incremental_cost_brute_force, incremental_cost_closed_form,
    meter_exact_schedule, CostParams, Rational,
};
use layerwise::gradcheck::{check_composed_model, check_kernels};
use layerwise::harness::{compare, run, run_suite, train_step, RunOptions, RunTrace, SuiteSpec, TrainConfig};
use layerwise::model::{init_model, GroupId, ModelConfig, ParameterStore};
use layerwise::numkernel::Precision;
use layerwise::optim::{register_new_groups, AdamWConfig, OptState};
use layerwise::schedule::{Mode, StagePlan};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn r(n: i128) -> Rational {
    Rational::from_integer(n)
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn cost_formulas() -> Outcome {
    let mut cases = 0;
    for layers in 1..=48usize {
        for stages in (1..=12).filter(|s| layers % s == 0) {
            for t in [1, 10_000] {
                let p = CostParams::new(layers, stages).unwrap();
                let bf = incremental_cost_brute_force(&p, r(t)).unwrap();
                let cf = incremental_cost_closed_form(&p, r(t)).unwrap();
                let metered = meter_exact_schedule(&p, Rational::new(1, 2), r(t), r(0)).unwrap().total();
                ensure(bf == cf && cf == metered, format!("L={layers} S={stages} T={t}: {bf} / {cf} / {metered}"))?;
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} (L, S, T_inc) cases agree exactly"))
}

fn dry_trace(dir: &Path, name: &str, layers: usize, regime: &str) -> RunTrace {
    let text = format!(
        r#"
out_dir = "{}"
[model]
n_layers = {layers}
d_model = 8
n_heads = 2
context_len = 8
[batch]
batch_size = 1
seq_len = 8
[data]
synthetic_bytes = 1000
[regime]
{regime}
"#,
        dir.join(name).display()
    );
    let cfg = TrainConfig::from_toml(&text).unwrap();
    run(&cfg, RunOptions { dry_run: true, ..Default::default() }).unwrap().trace
}

fn equal_compute_steps() -> Outcome {
    let dir = scratch("equal_compute");
    let mut found = Vec::new();
    for (stages, want) in [(4usize, 14_688i128), (8, 15_469), (12, 15_729)] {
        let args = ["layerwise", "cost", "--layers", "12", "--stages", &stages.to_string(), "--baseline-steps", "10000"];
        let text = execute(<Cli as clap::Parser>::try_parse_from(args).unwrap()).unwrap();
        ensure(text.contains(&format!("equal_compute_step = {want}")), format!("cost S={stages}:\n{text}"))?;

        // 12 layers do not split into 8 stages; T_cont does not depend on L, so use 24
        let layers = if 12 % stages == 0 { 12 } else { 24 };
        let base = dry_trace(&dir, &format!("base{layers}"), layers, "kind = \"baseline\"\nsteps = 10000");
        let inc = dry_trace(
            &dir,
            &format!("s{stages}"),
            layers,
            &format!("kind = \"incremental\"\nstages = {stages}\ninc_steps = 10000"),
        );
        let rep = compare(&base, &[(format!("S={stages}"), inc)], 10_000).unwrap();
        let step = rep.regimes[0].equal_compute_step;
        ensure(step == Some(want as u64), format!("compare S={stages} (L={layers}): {step:?}"))?;
        found.push(format!("S={stages}: {want}"));
    }
    Ok(format!("cost and compare both give {}", found.join(", ")))
}

fn continual_closed_form() -> Outcome {
    for stages in 1..=12usize {
        for layers in [stages, 2 * stages, 12] {
            let p = CostParams::new(layers, stages).unwrap();
            let t = r(10_000);
            let got = continual_tokens_to_match(&p, t).unwrap().t_cont;
            let closed = Rational::new(5, 8) * (r(1) - Rational::new(1, stages as i128)) * t;
            // C_inc + 2·T_cont·L·c = 2TLc, solved for T_cont
            let solved = (baseline_cost(&p, t) - incremental_cost_closed_form(&p, t).unwrap()) / (r(2) * r(layers as i128));
            ensure(got == closed && closed == solved, format!("S={stages} L={layers}: {got} {closed} {solved}"))?;
        }
    }
    let s1 = continual_tokens_to_match(&CostParams::new(12, 1).unwrap(), r(10_000)).unwrap().t_cont;
    ensure(s1 == r(0), format!("S=1 gives {s1}"))?;
    Ok("S = 1..12 match the budget equation exactly; S=1 gives 0".into())
}

fn gradients() -> Outcome {
    let (mut worst_kernel, mut worst_model) = (0.0f64, 0.0f64);
    let mut checked = 0;
    for seed in 0..5 {
        for c in check_kernels(seed).map_err(|e| e.to_string())? {
            ensure(c.rel_err < 1e-5, format!("seed {seed} {}: {:e}", c.name, c.rel_err))?;
            worst_kernel = worst_kernel.max(c.rel_err);
            checked += 1;
        }
        for c in check_composed_model(seed, 2).map_err(|e| e.to_string())? {
            ensure(c.rel_err < 1e-4, format!("seed {seed} {}: {:e}", c.name, c.rel_err))?;
            worst_model = worst_model.max(c.rel_err);
            checked += 1;
        }
    }
    Ok(format!("{checked} checks over 5 seeds; worst kernel {worst_kernel:.1e}, worst composed {worst_model:.1e}"))
}

fn snapshot(store: &ParameterStore<f32>, id: GroupId) -> Vec<u8> {
    store.group(id).unwrap().value_bytes()
}

fn freeze_soundness() -> Outcome {
    let cfg = ModelConfig {
        n_layers: 4,
        d_model: 16,
        n_heads: 2,
        context_len: 16,
        vocab_size: 259,
        precision: Precision::Fast32,
        init_seed: 11,
    };
    let plan = StagePlan::build(4, 2, 40, 0, Rational::new(1, 2)).unwrap();
    let (train, _) = ingest_documents(&synthetic::documents(3, 40), 0.0, 3).unwrap();
    let batcher = Batcher::new(&train, BatchSpec { batch_size: 2, seq_len: 16 }, 5).unwrap();
    let optim = AdamWConfig { warmup_steps: 0, ..AdamWConfig::default() };
    let mut store: ParameterStore<f32> = init_model(&cfg).unwrap();
    let mut opt = OptState::new();
    let stage2 = plan.bounds()[1].start;
    let step = |store: &mut ParameterStore<f32>, opt: &mut OptState<f32>, k: u64| {
        let added = plan.groups_added_at(k);
        register_new_groups(opt, store, &added).unwrap();
        let d = plan.directive_at(k);
        train_step(store, opt, &optim, &d, &batcher.batch_at(k), k + 1).unwrap();
        d
    };
    for k in 0..stage2 {
        step(&mut store, &mut opt, k);
    }
    let frozen = [GroupId::Embed, GroupId::Head, GroupId::Block(1), GroupId::Block(2)];
    let before: Vec<Vec<u8>> = frozen.iter().map(|&id| snapshot(&store, id)).collect();
    let moments_before: Vec<_> = frozen.iter().map(|id| opt.groups[id].clone()).collect();
    let new_before = snapshot(&store, GroupId::Block(3));
    for k in stage2..stage2 + 10 {
        let d = step(&mut store, &mut opt, k);
        ensure(d.mode == Mode::Phase1 { stage: 2 }, format!("step {k} ran {:?}", d.mode))?;
    }
    for (i, &id) in frozen.iter().enumerate() {
        ensure(snapshot(&store, id) == before[i], format!("{id} changed during phase 1"))?;
        ensure(opt.groups[&id] == moments_before[i], format!("{id} optimizer state changed"))?;
    }
    ensure(snapshot(&store, GroupId::Block(3)) != new_before, "new block did not train")?;
    Ok("embeddings, head and blocks 1-2 bit-identical over 10 phase-1 steps of stage 2; blocks 3-4 trained".into())
}

fn small_config(out: &Path, regime: &str, precision: &str) -> TrainConfig {
    let text = format!(
        r#"
seed = 4
out_dir = "{}"
eval_every = 20
val_batches = 2
checkpoint_every = 25

[model]
n_layers = 4
d_model = 16
n_heads = 2
context_len = 32
precision = "{precision}"

[optim]
warmup_steps = 10

[batch]
batch_size = 4
seq_len = 32

[data]
synthetic_bytes = 60000
synthetic_seed = 1

[regime]
{regime}
"#,
        out.display()
    );
    TrainConfig::from_toml(&text).unwrap()
}

fn degenerate_equivalence() -> Outcome {
    let dir = scratch("degenerate");
    let base = run(&small_config(&dir.join("base"), "kind = \"baseline\"\nsteps = 200", "verify64"), RunOptions::default())
        .map_err(|e| e.to_string())?
        .trace;
    let inc = run(
        &small_config(&dir.join("s1"), "kind = \"incremental\"\nstages = 1\ninc_steps = 200", "verify64"),
        RunOptions::default(),
    )
    .map_err(|e| e.to_string())?
    .trace;
    ensure(base.rows.len() == 200 && inc.rows.len() == 200, format!("{} vs {} rows", base.rows.len(), inc.rows.len()))?;
    let bits = |v: Option<f64>| v.map(f64::to_bits);
    for (a, b) in base.rows.iter().zip(&inc.rows) {
        ensure(
            bits(a.train_loss) == bits(b.train_loss) && bits(a.val_loss) == bits(b.val_loss) && a.cum_cost == b.cum_cost,
            format!("step {} differs: {:?} vs {:?}", a.step, a.train_loss, b.train_loss),
        )?;
    }
    Ok(format!("200 steps bit-identical, final train loss {:.6}", base.rows[199].train_loss.unwrap()))
}

fn determinism_and_resume() -> Outcome {
    let dir = scratch("determinism");
    let regime = "kind = \"incremental\"\nstages = 2\ninc_steps = 60";
    let read = |p: &PathBuf| fs::read(p.join("trace.csv")).unwrap();
    let mut notes = Vec::new();
    for precision in ["verify64", "fast32"] {
        let a = dir.join(format!("{precision}_a"));
        let b = dir.join(format!("{precision}_b"));
        let c = dir.join(format!("{precision}_c"));
        run(&small_config(&a, regime, precision), RunOptions::default()).map_err(|e| e.to_string())?;
        run(&small_config(&b, regime, precision), RunOptions::default()).map_err(|e| e.to_string())?;
        ensure(read(&a) == read(&b), format!("{precision}: repeated run differs"))?;

        let cfg = small_config(&c, regime, precision);
        let first = run(&cfg, RunOptions { stop_after: Some(40), ..Default::default() }).map_err(|e| e.to_string())?;
        ensure(first.steps_done == 40, "stop_after ignored")?;
        let second = run(&cfg, RunOptions { resume: true, ..Default::default() }).map_err(|e| e.to_string())?;
        ensure(second.resumed_from == Some(25), format!("resumed from {:?}", second.resumed_from))?;
        ensure(read(&a) == read(&c), format!("{precision}: resumed trace differs"))?;
        notes.push(format!("{precision} {} rows", second.trace.rows.len()));
    }
    Ok(format!("byte-identical reruns and kill at 40 / resume at 25 ({})", notes.join(", ")))
}

fn full_desk_requested() -> bool {
    std::env::args().any(|a| a == "--ignored" || a == "--include-ignored") || std::env::var_os("LAYERWISE_DESK").is_some()
}

fn desk_finding(full: bool) -> (Outcome, bool) {
    let root = std::env::var_os("LAYERWISE_OUT").map_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")), PathBuf::from);
    if full {
        let spec = SuiteSpec::desk(root.join("desk-suite"));
        let out = run_suite(&spec, |m| eprintln!("  {m}"));
        return match out {
            Ok(rep) if rep.holds() => (Ok(rep.to_text().trim_end().replace('\n', "; ")), true),
            Ok(rep) => (Err(rep.to_text().trim_end().replace('\n', "; ")), true),
            Err(e) => (Err(e.to_string()), true),
        };
    }
    let spec = SuiteSpec::reduced(root.join("reduced-suite"));
    let text = match run_suite(&spec, |_| {}) {
        Ok(rep) => {
            let per: Vec<String> = rep
                .verdicts()
                .iter()
                .map(|v| format!("S={} {}", v.stages, if v.holds() { "holds" } else { "does not hold" }))
                .collect();
            format!("reduced-scale probe (d=32, B=8, T_ctx=64, T=400): {}", per.join(", "))
        }
        Err(e) => format!("reduced-scale probe failed: {e}"),
    };
    (Err(format!("full desk scale not run (tens of CPU-hours on one core); {text}")), false)
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 6] = [
        ("cost-formula exactness", cost_formulas),
        ("equal-compute steps", equal_compute_steps),
        ("continual budget closed form", continual_closed_form),
        ("gradient correctness", gradients),
        ("freeze soundness", freeze_soundness),
        ("degenerate equivalence", degenerate_equivalence),
    ];
    let mut failed = 0;
    let line = |n: usize, name: &str, status: &str, detail: &str| println!("criterion {n} {name:<30} {status:<12} {detail}");
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        match res {
            Ok(d) => line(i + 1, name, "PASS", &d),
            Err(d) => {
                failed += 1;
                line(i + 1, name, "FAIL", &d)
            }
        }
    }
    let full = full_desk_requested();
    match desk_finding(full) {
        (Ok(d), _) => line(7, "desk-scale finding", "PASS", &d),
        (Err(d), true) => {
            failed += 1;
            line(7, "desk-scale finding", "FAIL", &d)
        }
        (Err(d), false) => line(7, "desk-scale finding", "NOT VERIFIED", &d),
    }
    let res = catch_unwind(AssertUnwindSafe(determinism_and_resume)).unwrap_or_else(|_| Err("panicked".into()));
    match res {
        Ok(d) => line(8, "determinism and resume", "PASS", &d),
        Err(d) => {
            failed += 1;
            line(8, "determinism and resume", "FAIL", &d)
        }
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
