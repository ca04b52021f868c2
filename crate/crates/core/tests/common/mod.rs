#![allow(dead_code)]

pub mod history_ref;
pub mod nets;

use insnsim::trace::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Valid random trace with small, varied latencies.
pub fn random_trace(n: usize, seed: u64) -> Vec<AnnotatedInstruction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tick = 0u64;
    (0..n)
        .map(|i| {
            let class = OpClass::ALL[rng.random_range(0..OpClass::COUNT)];
            let pc = 0x40_0000 + 4 * rng.random_range(0..4096u64);
            let mut inst = StaticInstruction::new(pc, OpFeatures::of_class(class))
                .with_sources(&[rng.random_range(1..64), rng.random_range(0..64)])
                .with_dests(&[rng.random_range(1..64)]);
            if inst.op.is_memory() {
                let addr = 0x1000_0000 + 8 * rng.random_range(0..1u64 << 16);
                inst = inst.with_data(addr, 8);
            }
            let mut history = HistoryFeatures {
                fetch_level: rng.random_range(1..4),
                ..Default::default()
            };
            if inst.op.is_memory() {
                history.data_level = rng.random_range(1..4);
                history.data_writebacks[0] = rng.random_range(0..2);
            }
            if inst.is_branch() {
                history.branch_mispredict = rng.random_bool(0.1) as u16;
            }
            let fetch = if i == 0 || rng.random_bool(0.2) {
                rng.random_range(0..12)
            } else {
                rng.random_range(0..2)
            };
            let execution = if rng.random_bool(0.1) {
                rng.random_range(20..300)
            } else {
                rng.random_range(1..20)
            };
            let store = if inst.is_store() {
                execution + rng.random_range(0..40)
            } else {
                0
            };
            tick += fetch as u64;
            AnnotatedInstruction {
                inst,
                history,
                truth: LatencyTriple::new(fetch, execution, store),
                fetch_tick: tick,
            }
        })
        .collect()
}

/// Context by definition: earlier instructions still in flight when the
/// target is predicted, newest first.
pub fn brute_context(
    trace: &[AnnotatedInstruction],
    i: usize,
    max: usize,
) -> Vec<insnsim::dataset::ContextEntry> {
    if i == 0 {
        return Vec::new();
    }
    let now = trace[i - 1].fetch_tick;
    let mut out = Vec::new();
    for j in (0..i).rev() {
        if trace[j].exit_tick() > now {
            out.push(insnsim::dataset::ContextEntry {
                index: j,
                residence: now - trace[j].fetch_tick,
            });
        }
    }
    out.truncate(max);
    out
}
