//! Long-lived microarchitectural state simulated by table lookup: caches,
//! TLBs with a page-walk cache, and the branch predictor. There is no timing
//! here, only levels, flags and counts.

mod branch;
mod cache;

pub use branch::*;
pub use cache::*;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::trace::{HistoryFeatures, StaticInstruction};

/// Resolved direction and target of a branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchOutcome {
    pub taken: bool,
    pub target: u64,
}

impl BranchOutcome {
    /// Derives the outcome from the next instruction in program order.
    pub fn from_next(inst: &StaticInstruction, next_pc: Option<u64>) -> BranchOutcome {
        let fall_through = inst.pc + 4;
        let target = next_pc.unwrap_or(fall_through);
        BranchOutcome {
            taken: target != fall_through,
            target,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryConfig {
    pub cache: CacheConfig,
    pub branch: BranchConfig,
}

/// Complete history-context state of one core.
#[derive(Clone, Debug)]
pub struct HistoryState {
    pub caches: CacheHierarchy,
    pub branch: BranchPredictor,
}

impl HistoryState {
    pub fn new(cfg: &HistoryConfig) -> Result<HistoryState> {
        Ok(HistoryState {
            caches: CacheHierarchy::new(&cfg.cache)?,
            branch: BranchPredictor::new(&cfg.branch)?,
        })
    }

    /// Computes the history features of the next instruction in program
    /// order and advances the state past it.
    pub fn annotate(
        &mut self,
        inst: &StaticInstruction,
        outcome: Option<BranchOutcome>,
    ) -> HistoryFeatures {
        let mut h = HistoryFeatures::default();
        let f = self.caches.access(inst.pc, AccessKind::Ifetch);
        h.fetch_level = f.level as u16;
        h.fetch_walk_levels = f.walk_levels.map(u16::from);
        h.fetch_writebacks = [f.writebacks[0], f.writebacks[1] + f.writebacks[2]];

        if let Some(data) = inst.data.filter(|_| inst.op.is_memory()) {
            let kind = if inst.is_store() {
                AccessKind::Store
            } else {
                AccessKind::Load
            };
            let d = self.caches.access(data.addr, kind);
            h.data_level = d.level as u16;
            h.data_walk_levels = d.walk_levels.map(u16::from);
            h.data_writebacks = d.writebacks;
        }

        if inst.is_branch() {
            let outcome = outcome.unwrap_or(BranchOutcome {
                taken: false,
                target: inst.pc + 4,
            });
            let miss = self.branch.predict_and_update(
                inst.pc,
                inst.op.is_conditional,
                outcome.taken,
                outcome.target,
            );
            h.branch_mispredict = miss as u16;
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{OpClass, OpFeatures};

    #[test]
    fn plain_alu_with_warm_icache() {
        let mut st = HistoryState::new(&HistoryConfig::default()).unwrap();
        let inst = StaticInstruction::new(0x400000, OpFeatures::of_class(OpClass::IntAlu));
        st.annotate(&inst, None);
        let h = st.annotate(&inst, None);
        assert_eq!(
            h,
            HistoryFeatures {
                fetch_level: 1,
                ..Default::default()
            }
        );
    }

    #[test]
    fn load_hitting_l2() {
        let mut st = HistoryState::new(&HistoryConfig::default()).unwrap();
        let load = StaticInstruction::new(0x400000, OpFeatures::of_class(OpClass::Load))
            .with_data(0x1000_0000, 8);
        assert_eq!(st.annotate(&load, None).data_level, 3);
        // Evict the line from both L1D ways of its set, keeping it in L2.
        let sets = CacheConfig::default().l1d.sets(64) as u64;
        for k in 1..=2 {
            let other = load.with_data(0x1000_0000 + k * sets * 64, 8);
            st.annotate(&other, None);
        }
        assert_eq!(st.annotate(&load, None).data_level, 2);
    }
}
