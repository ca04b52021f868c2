mod common;

use common::brute_context;

use insnsim::dataset::*;
use insnsim::trace::*;
use proptest::prelude::*;

fn alu_record(fetch: u32, fetch_tick: u64, execution: u32) -> AnnotatedInstruction {
    AnnotatedInstruction {
        inst: StaticInstruction::new(0x1000, OpFeatures::of_class(OpClass::IntAlu)),
        history: HistoryFeatures {
            fetch_level: 1,
            ..Default::default()
        },
        truth: LatencyTriple::new(fetch, execution, 0),
        fetch_tick,
    }
}

#[test]
fn three_instruction_context() {
    let t = [alu_record(0, 0, 10), alu_record(1, 1, 10), alu_record(1, 2, 10)];
    let s = build_samples(&t, 110).unwrap();
    assert!(s[0].context.is_empty());
    let got: Vec<(usize, u64)> = s[2].context.iter().map(|c| (c.index, c.residence)).collect();
    assert_eq!(got, vec![(1, 0), (0, 1)]);
}

#[test]
fn membership_matches_quadratic_scan() {
    for (seed, max) in [(1, 110), (2, 110), (3, 7)] {
        let t = common::random_trace(10_000, seed);
        let samples = build_samples(&t, max).unwrap();
        for (i, s) in samples.iter().enumerate() {
            assert_eq!(s.target, i);
            assert_eq!(s.label, t[i].truth);
            assert_eq!(s.context, brute_context(&t, i, max), "seed {seed} target {i}");
        }
    }
}

#[test]
fn residences_do_not_decrease_with_age() {
    let t = common::random_trace(5000, 4);
    for s in build_samples(&t, 110).unwrap() {
        assert!(s.context.windows(2).all(|w| w[0].residence <= w[1].residence));
        assert!(s.context.windows(2).all(|w| w[0].index > w[1].index));
    }
}

/// Trace that repeats a short block, so steady-state samples recur.
fn periodic_trace(blocks: usize) -> Vec<AnnotatedInstruction> {
    let block = common::random_trace(7, 11);
    let mut out = Vec::new();
    let mut tick = 0;
    for b in 0..blocks {
        for (k, r) in block.iter().enumerate() {
            let mut r = *r;
            // A few planted variations keep some samples unique.
            if b % 5 == 3 && k == 2 {
                r.truth.execution += 1;
                if r.inst.is_store() {
                    r.truth.store += 1;
                }
            }
            if k == 0 {
                r.truth.fetch = 3;
            }
            tick += r.truth.fetch as u64;
            r.fetch_tick = tick;
            out.push(r);
        }
    }
    out
}

fn pairwise_unique(t: &[AnnotatedInstruction], samples: &[Sample]) -> usize {
    let layout = FeatureLayout::default();
    let norm = Normalization::identity();
    let encoded: Vec<(Vec<f32>, LatencyTriple)> = samples
        .iter()
        .map(|s| (encode(s, t, &layout, &norm), s.label))
        .collect();
    (0..encoded.len())
        .filter(|&i| (0..i).all(|j| encoded[j] != encoded[i]))
        .count()
}

#[test]
fn dedup_matches_pairwise_oracle() {
    let t = periodic_trace(60);
    let samples = build_samples(&t, 110).unwrap();
    let expected = pairwise_unique(&t, &samples);
    assert!(expected < samples.len() / 2, "planted duplicates expected");
    let kept = deduplicate(samples.clone(), &t);
    assert_eq!(kept.len(), expected);
    let ds = Dataset::build(&[&t], &BuildOptions::default()).unwrap();
    assert_eq!(ds.len(), expected);
    let plain = Dataset::build(
        &[&t],
        &BuildOptions {
            dedup: false,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(plain.len(), samples.len());
}

#[test]
fn dedup_trivial_cases() {
    let t = common::random_trace(300, 5);
    let samples = build_samples(&t, 110).unwrap();
    assert_eq!(deduplicate(samples.clone(), &t).len(), pairwise_unique(&t, &samples));
    let same = vec![samples[10].clone(); 6];
    assert_eq!(deduplicate(same, &t).len(), 1);
}

#[test]
fn flag_examples() {
    let op = |c| OpFeatures::of_class(c);
    let load = StaticInstruction::new(0x4000, op(OpClass::Load)).with_data(0x1040, 8);
    let store = StaticInstruction::new(0x4004, op(OpClass::Store)).with_data(0x1000, 8);
    assert_eq!(memory_dependency_flags(&load, &store, 64, 4096), [1, 0, 0, 1, 1]);
    assert_eq!(memory_dependency_flags(&load, &load, 64, 4096), [1; 5]);
    let a = StaticInstruction::new(0x4000, op(OpClass::IntAlu));
    let b = StaticInstruction::new(0x9000, op(OpClass::IntAlu));
    assert_eq!(memory_dependency_flags(&a, &b, 64, 4096), [0; 5]);
}

#[test]
fn empty_context_leaves_only_the_target_column() {
    let t = common::random_trace(1, 6);
    let s = &build_samples(&t, 110).unwrap()[0];
    let v = encode(s, &t, &FeatureLayout::default(), &Normalization::identity());
    assert_eq!(v.len(), 5550);
    assert!(v[SLOTS_PER_INSTRUCTION..].iter().all(|&x| x == 0.0));
    assert!(v[..SLOTS_PER_INSTRUCTION].iter().any(|&x| x != 0.0));
    assert!(v[RESIDENCE_SLOT..SLOTS_PER_INSTRUCTION].iter().all(|&x| x == 0.0));
}

#[test]
fn dataset_file_round_trip() {
    let a = common::random_trace(2000, 7);
    let b = common::random_trace(1500, 8);
    let ds = Dataset::build(&[&a, &b], &BuildOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.ds");
    ds.write(&path).unwrap();
    let back = Dataset::read(&path).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.to_bytes(), ds.to_bytes());
    assert!(Dataset::from_bytes(&ds.to_bytes()[..100]).is_err());
}

#[test]
fn split_is_roughly_90_5_5() {
    let t = common::random_trace(20_000, 9);
    let ds = Dataset::build(&[&t], &BuildOptions::default()).unwrap();
    let n = ds.len() as f64;
    let frac = |p| ds.indices(p).len() as f64 / n;
    assert!((frac(Partition::Train) - 0.90).abs() < 0.02);
    assert!((frac(Partition::Validation) - 0.05).abs() < 0.01);
    assert!((frac(Partition::Test) - 0.05).abs() < 0.01);
}

#[test]
fn dataset_samples_match_trace_samples() {
    let t = common::random_trace(3000, 10);
    let ds = Dataset::build(
        &[&t],
        &BuildOptions {
            dedup: false,
            ..Default::default()
        },
    )
    .unwrap();
    let samples = build_samples(&t, 110).unwrap();
    let mut a = vec![0.0; ds.layout.width()];
    for s in (0..ds.len()).step_by(37) {
        assert_eq!(ds.sample(s), samples[s]);
        ds.encode_into(s, &mut a);
        assert_eq!(a, encode(&samples[s], &t, &ds.layout, &ds.norm));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn denormalize_recovers_raw_features(seed in any::<u64>(), pick in 0usize..400) {
        let t = common::random_trace(400, seed);
        let ds = Dataset::build(&[&t], &BuildOptions { dedup: false, ..Default::default() }).unwrap();
        let s = ds.sample(pick);
        let scaled = encode(&s, &t, &ds.layout, &ds.norm);
        let raw = encode(&s, &t, &ds.layout, &Normalization::identity());
        let back = denormalize(&scaled, &ds.norm);
        for (x, y) in back.iter().zip(&raw) {
            prop_assert_eq!(x.round(), *y as f64);
            prop_assert!((x - *y as f64).abs() < 1e-3 * y.abs().max(1.0) as f64);
        }
    }

    #[test]
    fn context_is_a_subset_of_earlier_instructions(seed in any::<u64>(), max in 1usize..120) {
        let t = common::random_trace(600, seed);
        let samples = build_samples(&t, max).unwrap();
        for (i, s) in samples.iter().enumerate() {
            prop_assert!(s.context.len() <= max);
            prop_assert!(s.context.iter().all(|c| c.index < i));
        }
    }
}

#[test]
fn relative_targets_round_trip_on_reference_traces() {
    use insnsim::des::{simulate, ProcessorConfig};
    use insnsim::workload::*;
    let rel = LabelScaling {
        relative: true,
        ..LabelScaling::identity()
    };
    for kind in WorkloadKind::ALL {
        let prog = generate(&WorkloadSpec::preset(kind, 4000, 21)).unwrap();
        let t = simulate(&prog, &ProcessorConfig::default()).unwrap().trace;
        let ds = Dataset::build(&[&t], &BuildOptions { dedup: false, ..Default::default() }).unwrap();
        for s in 0..ds.len() {
            let truth = ds.label(s);
            let frontier = ds.frontier(s);
            // Commit never precedes the commit of an older in-flight instruction.
            assert!(truth.fetch as u64 + truth.execution as u64 >= frontier, "{kind:?} sample {s}");
            let heads = rel.targets(truth, frontier);
            let back = rel.latencies(heads.as_array(), frontier, ds.target(s).inst.is_store());
            assert_eq!(back, truth);
        }
    }
}

#[test]
fn frontier_is_latest_pending_commit() {
    let inst = StaticInstruction::new(0x1000, OpFeatures::of_class(OpClass::IntAlu));
    let h = HistoryFeatures::default();
    let col = |residence, execution| ContextColumn { inst: &inst, history: &h, residence, execution, store: 0 };
    assert_eq!(commit_frontier([]), 0);
    assert_eq!(commit_frontier([col(3, 2), col(5, 5)]), 0);
    assert_eq!(commit_frontier([col(0, 4), col(2, 9), col(6, 1)]), 7);
}
