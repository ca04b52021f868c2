//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use insnsim::dataset::*;
use insnsim::des::{self, ProcessorConfig};
use insnsim::predictor::*;
use insnsim::report::{cpi_error, mean_prediction_errors};
use insnsim::sim::*;
use insnsim::trace::*;
use insnsim::workload::*;

type Check = Result<String, String>;

const TRAINING: [(WorkloadKind, u64, usize); 3] = [
    (WorkloadKind::Mix, 20, 15_000),
    (WorkloadKind::PointerChase, 10, 10_000),
    (WorkloadKind::Branchy, 10, 12_000),
];
const UNSEEN: [WorkloadKind; 2] = [WorkloadKind::LoopKernel, WorkloadKind::Streaming];
const EVAL_LEN: usize = 100_000;
const EVAL_SEED: u64 = 99;
const MIN_SUB_TRACE: usize = 3_000;

fn train_options() -> TrainOptions {
    TrainOptions {
        epochs: 8,
        batch_size: 64,
        lr: 0.001,
        seed: 1,
        samples_per_epoch: Some(100_000),
        final_lr_ratio: 0.05,
    }
}

fn reference(kind: WorkloadKind, count: usize, seed: u64) -> des::DesResult {
    let prog = generate(&WorkloadSpec::preset(kind, count as u64, seed)).expect("workload");
    des::simulate(&prog, &ProcessorConfig::default()).expect("reference run")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn identity(r: &SimResult) -> Result<(), String> {
    ensure(r.total_cycles == r.sum_fetch + r.delta, || {
        format!("{} != {} + {}", r.total_cycles, r.sum_fetch, r.delta)
    })
}

fn tiny_model(seed: u64) -> CnnModel {
    let cfg = CnnConfig {
        input_channels: SLOTS_PER_INSTRUCTION,
        sequence_length: 16,
        conv_channels: vec![8, 8, 8],
        fc_hidden: 16,
        class_counts: [10, 10, 10],
    };
    CnnModel::new(cfg, FeatureLayout::new(12), Normalization::identity(), seed).unwrap()
}

fn c1_identity() -> Check {
    let mut runs = 0;
    for seed in 0..6 {
        let t = common::random_trace(3_000, seed);
        let oracle = OraclePredictor::new(&t);
        let model = CnnPredictor::new(tiny_model(seed));
        let preds: [&dyn LatencyPredictor; 2] = [&oracle, &model];
        for p in preds {
            for (max_context, per_cycle) in [(110, false), (12, false), (4, true)] {
                let cfg = SimConfig {
                    max_context,
                    per_cycle,
                    ..Default::default()
                };
                identity(&simulate(&t, p, &cfg).map_err(|e| e.to_string())?)?;
                let opts = ParallelOptions {
                    sub_traces: 7,
                    ..Default::default()
                };
                let par = simulate_parallel(&t, p, &cfg, &opts).map_err(|e| e.to_string())?;
                for part in &par.parts {
                    identity(part)?;
                }
                runs += 2;
            }
        }
    }
    Ok(format!("{runs} runs, oracle and model predictors"))
}

fn c2_oracle() -> Check {
    let mut worst = 0f64;
    for kind in WorkloadKind::ALL {
        let d = reference(kind, EVAL_LEN, 7);
        let r = simulate(&d.trace, &OraclePredictor::new(&d.trace), &SimConfig::default())
            .map_err(|e| e.to_string())?;
        identity(&r)?;
        let rel = (r.total_cycles as f64 - d.total_cycles as f64).abs() / d.total_cycles as f64;
        ensure(rel <= 0.005, || {
            format!("{kind}: {} vs {} cycles", r.total_cycles, d.total_cycles)
        })?;
        worst = worst.max(rel);
    }
    Ok(format!("5 workloads x {EVAL_LEN}, worst relative difference {:.4}%", worst * 100.0))
}

fn c3_context() -> Check {
    let traces = [
        reference(WorkloadKind::Mix, 10_000, 3).trace,
        reference(WorkloadKind::PointerChase, 10_000, 3).trace,
        common::random_trace(10_000, 3),
    ];
    let mut checked = 0;
    for t in &traces {
        let samples = build_samples(t, DEFAULT_MAX_CONTEXT).map_err(|e| e.to_string())?;
        for (i, s) in samples.iter().enumerate() {
            let want = common::brute_context(t, i, DEFAULT_MAX_CONTEXT);
            ensure(s.context == want, || format!("context of instruction {i} differs"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} contexts identical to the quadratic scan"))
}

fn c4_history() -> Check {
    use common::history_ref::*;
    check_lru_sets(3, 10_000);
    check_hierarchy(0..3, 10_000);
    check_bimode(11, 10_000);
    Ok("LRU sets, cache/TLB hierarchy with writebacks, bi-mode predictor: exact".into())
}

fn c5_gradients() -> Check {
    let cfg = common::nets::tiny_config();
    let mut worst = 0f64;
    for seed in 0..5 {
        let net = common::nets::random_net(&cfg, seed);
        let x = common::nets::random_input(cfg.input_width(), seed + 50);
        let label = LatencyTriple::new(seed as u32 % 5, 2 + seed as u32, 7);
        let scaling = LabelScaling {
            scale: [1.5, 2.0, 1.0],
            log: seed % 2 == 0,
            relative: false,
            max: [u32::MAX; 3],
        };
        worst = worst.max(gradient_check(&net, cfg.class_counts, &x, &label, &scaling));
    }
    ensure(worst < 1e-3, || format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.2e} over 5 seeds"))
}

struct Trained {
    dataset: Dataset,
    model: CnnModel,
}

fn c6_learning(out: &mut Option<Trained>) -> Check {
    let mut traces = Vec::new();
    for (kind, seeds, len) in TRAINING {
        for s in 0..seeds {
            traces.push(reference(kind, len, 11 + s).trace);
        }
    }
    let total: usize = traces.iter().map(Vec::len).sum();
    let refs: Vec<&[AnnotatedInstruction]> = traces.iter().map(Vec::as_slice).collect();
    let ds = Dataset::build(&refs, &BuildOptions::default()).map_err(|e| e.to_string())?;
    let outcome = train(&ds, &CnnConfig::c3(&ds.layout), &train_options()).map_err(|e| e.to_string())?;
    let test = ds.indices(Partition::Test);
    let preds = predict_samples(&outcome.model, &ds, &test, 256);
    let truth: Vec<LatencyTriple> = test.iter().map(|&s| ds.label(s)).collect();
    let latencies: Vec<LatencyTriple> = preds.iter().map(|p| p.latency).collect();
    let errs = mean_prediction_errors(&latencies, &truth).map_err(|e| e.to_string())?;
    let hits = preds
        .iter()
        .zip(&truth)
        .filter(|(p, t)| p.classes[0] == class_of(t.fetch, outcome.model.config.class_counts[0]))
        .count();
    let accuracy = hits as f64 / test.len() as f64;
    let detail = format!(
        "{total} instructions, {} samples, test accuracy {:.3}, errors F {:.3} E {:.3} S {:.3}",
        ds.len(),
        accuracy,
        errs[0],
        errs[1],
        errs[2]
    );
    *out = Some(Trained {
        dataset: ds,
        model: outcome.model,
    });
    ensure(total >= 500_000, || format!("only {total} instructions"))?;
    ensure(accuracy >= 0.8 && errs.iter().all(|&e| e <= 0.25), || detail.clone())?;
    Ok(detail)
}

struct Unseen {
    kind: WorkloadKind,
    trace: Vec<AnnotatedInstruction>,
    sequential: SimResult,
}

fn c7_unseen(trained: Option<&Trained>, out: &mut Vec<Unseen>) -> Check {
    let model = &trained.ok_or("no trained model")?.model;
    let predictor = CnnPredictor::new(model.clone());
    let mut parts = Vec::new();
    let mut failed = false;
    for kind in UNSEEN {
        let d = reference(kind, EVAL_LEN, EVAL_SEED);
        let r = simulate(&d.trace, &predictor, &SimConfig::default()).map_err(|e| e.to_string())?;
        identity(&r)?;
        let err = cpi_error(r.cpi, d.cpi).map_err(|e| e.to_string())?;
        failed |= err > 15.0;
        parts.push(format!("{kind} {:.3} vs {:.3} ({err:.1}%)", r.cpi, d.cpi));
        out.push(Unseen {
            kind,
            trace: d.trace,
            sequential: r,
        });
    }
    let detail = format!("CPI model vs reference: {}", parts.join(", "));
    ensure(!failed, || detail.clone())?;
    Ok(detail)
}

fn c8_parallel(trained: Option<&Trained>, unseen: &[Unseen]) -> Check {
    let model = &trained.ok_or("no trained model")?.model;
    ensure(!unseen.is_empty(), || "no unseen-workload runs".into())?;
    let predictor = CnnPredictor::new(model.clone());
    let cfg = SimConfig::default();
    let run = |t: &[AnnotatedInstruction], sub_traces, workers| {
        let opts = ParallelOptions {
            sub_traces,
            workers,
            ..Default::default()
        };
        simulate_parallel(t, &predictor, &cfg, &opts).map_err(|e| e.to_string())
    };
    let first = &unseen[0];
    let one = run(&first.trace, 1, 0)?;
    ensure(one.parts[0] == first.sequential && one.total_cycles == first.sequential.total_cycles, || {
        "K=1 differs from the sequential run".into()
    })?;
    let mut diffs = Vec::new();
    for u in unseen {
        let k = u.trace.len() / MIN_SUB_TRACE;
        let par = run(&u.trace, k, 0)?;
        ensure(par.plan.ranges().all(|r| r.len() >= MIN_SUB_TRACE), || "short sub-trace".into())?;
        let sum: u64 = par.parts.iter().map(|p| p.total_cycles).sum();
        ensure(sum == par.total_cycles, || "aggregate is not the sum of sub-traces".into())?;
        for p in &par.parts {
            identity(p)?;
        }
        let diff = (par.cpi / u.sequential.cpi - 1.0) * 100.0;
        diffs.push((u.kind, k, diff));
    }
    let prefix = &first.trace[..30_000];
    let base = run(prefix, 10, 1)?;
    for workers in 2..=8 {
        ensure(run(prefix, 10, workers)? == base, || format!("{workers} workers differ from 1"))?;
    }
    let detail = diffs
        .iter()
        .map(|(kind, k, d)| format!("{kind} K={k} {d:+.2}%"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(diffs.iter().all(|d| d.2.abs() <= 2.0), || detail.clone())?;
    Ok(format!("K=1 bit-exact, additive, workers 1..8 identical; {detail}"))
}

fn c9_round_trips(trained: Option<&Trained>) -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = reference(WorkloadKind::Mix, 10_000, 5);
    let path = dir.path().join("t.trace");
    write_trace(&path, &d.trace, ProcessorConfig::default().hash()).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    let back = read_trace(&path).map_err(|e| e.to_string())?;
    ensure(back == d.trace, || "trace records differ after reading".into())?;
    let again = dir.path().join("u.trace");
    write_trace(&again, &back, ProcessorConfig::default().hash()).map_err(|e| e.to_string())?;
    ensure(std::fs::read(&again).map_err(|e| e.to_string())? == bytes, || "trace bytes differ".into())?;

    let trained = trained.ok_or("no trained model")?;
    let ds_bytes = trained.dataset.to_bytes();
    let ds = Dataset::from_bytes(&ds_bytes).map_err(|e| e.to_string())?;
    ensure(ds == trained.dataset && ds.to_bytes() == ds_bytes, || "dataset round trip".into())?;
    let m_bytes = trained.model.to_bytes();
    let m = CnnModel::from_bytes(&m_bytes).map_err(|e| e.to_string())?;
    ensure(m == trained.model && m.to_bytes() == m_bytes, || "model round trip".into())?;

    let opts = TrainOptions {
        epochs: 2,
        samples_per_epoch: Some(2_000),
        ..train_options()
    };
    let config = CnnConfig::c3(&ds.layout);
    let a = train(&ds, &config, &opts).map_err(|e| e.to_string())?.model;
    let b = train(&ds, &config, &opts).map_err(|e| e.to_string())?.model;
    let same = a.net.params.iter().zip(&b.net.params).all(|(x, y)| x.to_bits() == y.to_bits());
    ensure(same && a.to_bytes() == b.to_bytes(), || "fixed-seed training is not reproducible".into())?;
    Ok(format!(
        "trace {} B, dataset {} B, model {} B; repeated training bit-identical",
        bytes.len(),
        ds_bytes.len(),
        m_bytes.len()
    ))
}

fn report(n: usize, name: &str, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(msg)
    });
    let secs = start.elapsed().as_secs_f64();
    match &result {
        Ok(d) => println!("PASS {n} {name}: {d} [{secs:.1}s]"),
        Err(d) => println!("FAIL {n} {name}: {d} [{secs:.1}s]"),
    }
    result.is_ok()
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= report(1, "cycle identity", c1_identity);
    ok &= report(2, "oracle equivalence", c2_oracle);
    ok &= report(3, "context reconstruction", c3_context);
    ok &= report(4, "history context", c4_history);
    ok &= report(5, "gradient check", c5_gradients);
    let mut trained = None;
    ok &= report(6, "learning", || c6_learning(&mut trained));
    let mut unseen = Vec::new();
    ok &= report(7, "unseen workloads", || c7_unseen(trained.as_ref(), &mut unseen));
    ok &= report(8, "parallel consistency", || c8_parallel(trained.as_ref(), &unseen));
    ok &= report(9, "round trips", || c9_round_trips(trained.as_ref()));
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
