use insnsim::des::*;
use insnsim::trace::*;
use insnsim::workload::*;

fn alu(pc: u64, srcs: &[u16], dsts: &[u16]) -> StaticInstruction {
    StaticInstruction::new(pc, OpFeatures::of_class(OpClass::IntAlu))
        .with_sources(srcs)
        .with_dests(dsts)
}

#[test]
fn identity_on_hand_trace() {
    let rec = AnnotatedInstruction {
        inst: alu(0x1000, &[1], &[2]),
        history: HistoryFeatures {
            fetch_level: 1,
            ..Default::default()
        },
        truth: LatencyTriple::new(2, 3, 0),
        fetch_tick: 2,
    };
    assert_eq!(total_time_identity(&[rec], 5), (2, 3));
    assert_eq!(total_time_identity(&[], 0), (0, 0));
}

#[test]
fn independent_ops_share_a_fetch_group() {
    let prog = [alu(0x1000, &[1], &[2]), alu(0x1004, &[3], &[4])];
    let r = simulate(&prog, &ProcessorConfig::default()).unwrap();
    assert_eq!(r.trace[1].truth.fetch, 0);
    assert_eq!(r.trace[0].fetch_tick, r.trace[1].fetch_tick);
}

#[test]
fn dependent_chain_of_four() {
    let cfg = ProcessorConfig {
        fetch_width: 4,
        ..Default::default()
    };
    let prog: Vec<_> = (0..4u16)
        .map(|k| alu(0x1000 + 4 * k as u64, &[k + 1], &[k + 2]))
        .collect();
    let r = simulate(&prog, &cfg).unwrap();
    let e: Vec<u32> = r.trace.iter().map(|t| t.truth.execution).collect();
    assert!(e.windows(2).all(|w| w[1] == w[0] + 1), "{e:?}");
}

#[test]
fn traces_satisfy_invariants_on_every_kind() {
    let cfg = ProcessorConfig::default();
    for kind in WorkloadKind::ALL {
        let prog = generate(&WorkloadSpec::preset(kind, 20_000, 3)).unwrap();
        let r = simulate(&prog, &cfg).unwrap();
        validate_trace(&r.trace).unwrap();
        assert_eq!(r.trace.len(), prog.len());
        assert!(r.trace.iter().zip(&prog).all(|(t, p)| t.inst == *p));
        let (sum, delta) = total_time_identity(&r.trace, r.total_cycles);
        assert_eq!(sum + delta, r.total_cycles);
        assert_eq!(r.total_cycles, r.trace.iter().map(|t| t.exit_tick()).max().unwrap());
        let s = &r.stats;
        assert!(s.max_rob <= cfg.rob_entries && s.max_iq <= cfg.iq_entries);
        assert!(s.max_lq <= cfg.lq_entries && s.max_sq <= cfg.sq_entries);
        assert!(s.max_commits_per_cycle <= cfg.commit_width);
    }
}

#[test]
fn faster_memory_never_slows_pointer_chase() {
    let prog = generate(&WorkloadSpec::preset(WorkloadKind::PointerChase, 20_000, 8)).unwrap();
    let slow = simulate(&prog, &ProcessorConfig::default()).unwrap();
    let fast = simulate(
        &prog,
        &ProcessorConfig {
            memory_latency_cycles: 50,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(fast.total_cycles <= slow.total_cycles);
    assert!(fast.total_cycles < slow.total_cycles * 9 / 10);
}

#[test]
fn deterministic_runs() {
    let prog = generate(&WorkloadSpec::preset(WorkloadKind::Mix, 10_000, 4)).unwrap();
    let cfg = ProcessorConfig::default();
    let a = simulate(&prog, &cfg).unwrap();
    let b = simulate(&prog, &cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.stats, b.stats);
}

#[test]
fn invalid_config_is_rejected() {
    let cfg = ProcessorConfig {
        commit_width: 0,
        ..Default::default()
    };
    assert!(simulate(&[alu(0, &[1], &[2])], &cfg).is_err());
}
