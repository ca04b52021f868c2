use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchConfig {
    pub choice_entries: u32,
    pub direction_entries: u32,
    pub history_bits: u32,
    pub btb_entries: u32,
}

impl Default for BranchConfig {
    fn default() -> Self {
        BranchConfig {
            choice_entries: 8192,
            direction_entries: 8192,
            history_bits: 13,
            btb_entries: 4096,
        }
    }
}

impl BranchConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, n) in [
            ("choice_entries", self.choice_entries),
            ("direction_entries", self.direction_entries),
            ("btb_entries", self.btb_entries),
        ] {
            if n == 0 || !n.is_power_of_two() {
                return Err(Error::Config(format!("{name} must be a power of two, got {n}")));
            }
        }
        if self.history_bits > 32 {
            return Err(Error::Config("history_bits must be at most 32".into()));
        }
        Ok(())
    }
}

fn bump(counter: &mut u8, taken: bool) {
    if taken {
        *counter = (*counter + 1).min(3);
    } else {
        *counter = counter.saturating_sub(1);
    }
}

/// Bi-mode direction predictor plus a direct-mapped branch target buffer.
///
/// The choice table is indexed by PC; the two direction tables by PC xor
/// global history. The choice counter selects which direction table
/// provides the prediction.
#[derive(Clone, Debug)]
pub struct BranchPredictor {
    cfg: BranchConfig,
    choice: Vec<u8>,
    taken: Vec<u8>,
    not_taken: Vec<u8>,
    ghr: u32,
    btb: Vec<Option<(u64, u64)>>,
}

impl BranchPredictor {
    pub fn new(cfg: &BranchConfig) -> Result<BranchPredictor> {
        cfg.validate()?;
        Ok(BranchPredictor {
            cfg: *cfg,
            choice: vec![2; cfg.choice_entries as usize],
            taken: vec![2; cfg.direction_entries as usize],
            not_taken: vec![1; cfg.direction_entries as usize],
            ghr: 0,
            btb: vec![None; cfg.btb_entries as usize],
        })
    }

    fn history_mask(&self) -> u32 {
        if self.cfg.history_bits == 32 {
            u32::MAX
        } else {
            (1u32 << self.cfg.history_bits) - 1
        }
    }

    pub fn history(&self) -> u32 {
        self.ghr
    }

    pub fn choice_index(&self, pc: u64) -> usize {
        ((pc >> 2) & (self.cfg.choice_entries as u64 - 1)) as usize
    }

    pub fn direction_index(&self, pc: u64) -> usize {
        (((pc >> 2) ^ self.ghr as u64) & (self.cfg.direction_entries as u64 - 1)) as usize
    }

    fn btb_index(&self, pc: u64) -> usize {
        ((pc >> 2) & (self.cfg.btb_entries as u64 - 1)) as usize
    }

    /// Predicted target from the BTB, if the entry is tagged with `pc`.
    pub fn btb_target(&self, pc: u64) -> Option<u64> {
        match self.btb[self.btb_index(pc)] {
            Some((tag, target)) if tag == pc => Some(target),
            _ => None,
        }
    }

    /// Predicted direction for a conditional branch.
    pub fn predict_direction(&self, pc: u64) -> bool {
        let d = self.direction_index(pc);
        let counter = if self.choice[self.choice_index(pc)] >= 2 {
            self.taken[d]
        } else {
            self.not_taken[d]
        };
        counter >= 2
    }

    /// Predicts the branch, trains on the actual outcome and reports whether
    /// the prediction was wrong.
    pub fn predict_and_update(
        &mut self,
        pc: u64,
        conditional: bool,
        taken: bool,
        target: u64,
    ) -> bool {
        let predicted_taken = !conditional || self.predict_direction(pc);
        let predicted_target = self.btb_target(pc);
        let mispredict =
            predicted_taken != taken || (taken && predicted_target != Some(target));

        if conditional {
            let c = self.choice_index(pc);
            let d = self.direction_index(pc);
            let use_taken = self.choice[c] >= 2;
            let selected = if use_taken {
                &mut self.taken[d]
            } else {
                &mut self.not_taken[d]
            };
            let selected_right = (*selected >= 2) == taken;
            bump(selected, taken);
            // The choice table is left alone when it pointed the wrong way
            // but the selected table still got the direction right.
            if !(use_taken != taken && selected_right) {
                bump(&mut self.choice[c], taken);
            }
            self.ghr = ((self.ghr << 1) | taken as u32) & self.history_mask();
        }
        if taken {
            let i = self.btb_index(pc);
            self.btb[i] = Some((pc, target));
        }
        mispredict
    }

    pub fn counters(&self) -> (&[u8], &[u8], &[u8]) {
        (&self.choice, &self.taken, &self.not_taken)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cold_taken_branch_mispredicts() {
        let mut bp = BranchPredictor::new(&BranchConfig::default()).unwrap();
        assert!(bp.predict_and_update(0x400, true, true, 0x300));
    }

    #[test]
    fn repeated_taken_settles() {
        let mut bp = BranchPredictor::new(&BranchConfig::default()).unwrap();
        let flags: Vec<bool> = (0..10)
            .map(|_| bp.predict_and_update(0x400, true, true, 0x300))
            .collect();
        assert!(flags[2..].iter().all(|m| !m), "{flags:?}");
    }

    #[test]
    fn unconditional_with_warm_btb() {
        let mut bp = BranchPredictor::new(&BranchConfig::default()).unwrap();
        assert!(bp.predict_and_update(0x500, false, true, 0x800));
        assert!(!bp.predict_and_update(0x500, false, true, 0x800));
    }

    #[test]
    fn counters_stay_in_range() {
        let mut bp = BranchPredictor::new(&BranchConfig {
            choice_entries: 16,
            direction_entries: 16,
            history_bits: 4,
            btb_entries: 16,
        })
        .unwrap();
        let mut x = 12345u64;
        for _ in 0..5000 {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            bp.predict_and_update((x % 64) * 4, true, x & 1 == 1, 0x40);
        }
        let (c, t, n) = bp.counters();
        assert!(c.iter().chain(t).chain(n).all(|&v| v <= 3));
    }
}
