use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OP_FEATURES: usize = 13;
pub const SRC_REGS: usize = 8;
pub const DST_REGS: usize = 6;
pub const HISTORY_FEATURES: usize = 14;

/// Functional class of an instruction. The discriminant is the encoded
/// `op_class` feature value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[repr(u8)]
pub enum OpClass {
    IntAlu = 0,
    IntMult = 1,
    IntDiv = 2,
    FpAlu = 3,
    FpMult = 4,
    FpDiv = 5,
    Simd = 6,
    Load = 7,
    Store = 8,
    Branch = 9,
}

impl OpClass {
    pub const COUNT: usize = 10;

    pub const ALL: [OpClass; 10] = [
        OpClass::IntAlu,
        OpClass::IntMult,
        OpClass::IntDiv,
        OpClass::FpAlu,
        OpClass::FpMult,
        OpClass::FpDiv,
        OpClass::Simd,
        OpClass::Load,
        OpClass::Store,
        OpClass::Branch,
    ];

    pub fn from_code(code: u8) -> Option<OpClass> {
        OpClass::ALL.get(code as usize).copied()
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_fp(self) -> bool {
        matches!(self, OpClass::FpAlu | OpClass::FpMult | OpClass::FpDiv | OpClass::Simd)
    }
}

/// The thirteen operation features, in their canonical slot order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OpFeatures {
    pub op_class: OpClass,
    pub is_load: bool,
    pub is_store: bool,
    pub is_branch: bool,
    pub is_direct_branch: bool,
    pub is_indirect_branch: bool,
    pub is_conditional: bool,
    pub is_call: bool,
    pub is_return: bool,
    pub is_memory_barrier: bool,
    pub is_serializing: bool,
    pub is_fp: bool,
    pub simd_width: u8,
}

impl OpFeatures {
    /// Features for a plain instruction of the given class, with the class
    /// implied flags set.
    pub fn of_class(op_class: OpClass) -> OpFeatures {
        OpFeatures {
            op_class,
            is_load: op_class == OpClass::Load,
            is_store: op_class == OpClass::Store,
            is_branch: op_class == OpClass::Branch,
            is_direct_branch: false,
            is_indirect_branch: false,
            is_conditional: false,
            is_call: false,
            is_return: false,
            is_memory_barrier: false,
            is_serializing: false,
            is_fp: op_class.is_fp(),
            simd_width: if op_class == OpClass::Simd { 4 } else { 0 },
        }
    }

    pub fn to_array(&self) -> [u8; OP_FEATURES] {
        [
            self.op_class.code(),
            self.is_load as u8,
            self.is_store as u8,
            self.is_branch as u8,
            self.is_direct_branch as u8,
            self.is_indirect_branch as u8,
            self.is_conditional as u8,
            self.is_call as u8,
            self.is_return as u8,
            self.is_memory_barrier as u8,
            self.is_serializing as u8,
            self.is_fp as u8,
            self.simd_width,
        ]
    }

    pub fn from_array(raw: [u8; OP_FEATURES]) -> std::result::Result<OpFeatures, String> {
        let op_class =
            OpClass::from_code(raw[0]).ok_or_else(|| format!("unknown op_class {}", raw[0]))?;
        let flag = |slot: usize| -> std::result::Result<bool, String> {
            match raw[slot] {
                0 => Ok(false),
                1 => Ok(true),
                v => Err(format!("op feature slot {slot} must be 0/1, found {v}")),
            }
        };
        Ok(OpFeatures {
            op_class,
            is_load: flag(1)?,
            is_store: flag(2)?,
            is_branch: flag(3)?,
            is_direct_branch: flag(4)?,
            is_indirect_branch: flag(5)?,
            is_conditional: flag(6)?,
            is_call: flag(7)?,
            is_return: flag(8)?,
            is_memory_barrier: flag(9)?,
            is_serializing: flag(10)?,
            is_fp: flag(11)?,
            simd_width: raw[12],
        })
    }

    pub fn is_memory(&self) -> bool {
        self.is_load || self.is_store
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DataAccess {
    pub addr: u64,
    pub size: u16,
}

/// One executed instruction instance.
///
/// Register slots hold `r + 1` for architectural register `r`, and 0 for an
/// unused slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StaticInstruction {
    pub pc: u64,
    pub op: OpFeatures,
    pub src_regs: [u16; SRC_REGS],
    pub dst_regs: [u16; DST_REGS],
    pub data: Option<DataAccess>,
}

impl StaticInstruction {
    pub fn new(pc: u64, op: OpFeatures) -> StaticInstruction {
        StaticInstruction {
            pc,
            op,
            src_regs: [0; SRC_REGS],
            dst_regs: [0; DST_REGS],
            data: None,
        }
    }

    pub fn with_sources(mut self, regs: &[u16]) -> StaticInstruction {
        for (slot, &r) in self.src_regs.iter_mut().zip(regs) {
            *slot = r + 1;
        }
        self
    }

    pub fn with_dests(mut self, regs: &[u16]) -> StaticInstruction {
        for (slot, &r) in self.dst_regs.iter_mut().zip(regs) {
            *slot = r + 1;
        }
        self
    }

    pub fn with_data(mut self, addr: u64, size: u16) -> StaticInstruction {
        self.data = Some(DataAccess { addr, size });
        self
    }

    pub fn is_load(&self) -> bool {
        self.op.is_load
    }

    pub fn is_store(&self) -> bool {
        self.op.is_store
    }

    pub fn is_branch(&self) -> bool {
        self.op.is_branch
    }

    pub fn sources(&self) -> impl Iterator<Item = u16> + '_ {
        self.src_regs.iter().filter(|&&r| r != 0).map(|&r| r - 1)
    }

    pub fn dests(&self) -> impl Iterator<Item = u16> + '_ {
        self.dst_regs.iter().filter(|&&r| r != 0).map(|&r| r - 1)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let op = &self.op;
        if op.op_class == OpClass::Load && !op.is_load {
            return Err("load class without is_load".into());
        }
        if op.op_class == OpClass::Store && !op.is_store {
            return Err("store class without is_store".into());
        }
        if op.op_class == OpClass::Branch && !op.is_branch {
            return Err("branch class without is_branch".into());
        }
        if op.is_memory() != self.data.is_some() {
            return Err(format!(
                "data address presence ({}) disagrees with load/store flags",
                self.data.is_some()
            ));
        }
        Ok(())
    }
}

/// Long-lived microarchitectural state as seen by one instruction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct HistoryFeatures {
    pub branch_mispredict: u16,
    pub fetch_level: u16,
    pub fetch_walk_levels: [u16; 3],
    pub fetch_writebacks: [u16; 2],
    pub data_level: u16,
    pub data_walk_levels: [u16; 3],
    pub data_writebacks: [u16; 3],
}

impl HistoryFeatures {
    pub fn to_array(&self) -> [u16; HISTORY_FEATURES] {
        let mut out = [0u16; HISTORY_FEATURES];
        out[0] = self.branch_mispredict;
        out[1] = self.fetch_level;
        out[2..5].copy_from_slice(&self.fetch_walk_levels);
        out[5..7].copy_from_slice(&self.fetch_writebacks);
        out[7] = self.data_level;
        out[8..11].copy_from_slice(&self.data_walk_levels);
        out[11..14].copy_from_slice(&self.data_writebacks);
        out
    }

    pub fn from_array(raw: [u16; HISTORY_FEATURES]) -> HistoryFeatures {
        HistoryFeatures {
            branch_mispredict: raw[0],
            fetch_level: raw[1],
            fetch_walk_levels: [raw[2], raw[3], raw[4]],
            fetch_writebacks: [raw[5], raw[6]],
            data_level: raw[7],
            data_walk_levels: [raw[8], raw[9], raw[10]],
            data_writebacks: [raw[11], raw[12], raw[13]],
        }
    }

    pub fn validate(&self, inst: &StaticInstruction) -> std::result::Result<(), String> {
        if self.branch_mispredict > 1 {
            return Err("branch_mispredict must be 0/1".into());
        }
        if self.branch_mispredict == 1 && !inst.is_branch() {
            return Err("misprediction flag set on a non-branch".into());
        }
        if (self.data_level == 0) == inst.op.is_memory() {
            return Err(format!(
                "data_level {} inconsistent with memory flags",
                self.data_level
            ));
        }
        Ok(())
    }
}

/// Fetch, execution and store latencies in cycles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatencyTriple {
    pub fetch: u32,
    pub execution: u32,
    pub store: u32,
}

impl LatencyTriple {
    pub fn new(fetch: u32, execution: u32, store: u32) -> LatencyTriple {
        LatencyTriple {
            fetch,
            execution,
            store,
        }
    }

    pub fn as_array(&self) -> [u32; 3] {
        [self.fetch, self.execution, self.store]
    }

    pub fn validate(&self, is_store: bool) -> std::result::Result<(), String> {
        if self.execution < 1 {
            return Err("execution latency must be at least 1".into());
        }
        if is_store {
            if self.store < self.execution {
                return Err(format!(
                    "store latency {} below execution latency {}",
                    self.store, self.execution
                ));
            }
        } else if self.store != 0 {
            return Err(format!("non-store with store latency {}", self.store));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AnnotatedInstruction {
    pub inst: StaticInstruction,
    pub history: HistoryFeatures,
    pub truth: LatencyTriple,
    pub fetch_tick: u64,
}

impl AnnotatedInstruction {
    /// Tick at which the instruction leaves the machine: store completion for
    /// stores, retirement otherwise.
    pub fn exit_tick(&self) -> u64 {
        let span = if self.inst.is_store() {
            self.truth.store
        } else {
            self.truth.execution
        };
        self.fetch_tick + span as u64
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        self.inst.validate()?;
        self.history.validate(&self.inst)?;
        self.truth.validate(self.inst.is_store())
    }
}

/// Checks every record plus the fetch timestamp chain.
pub fn validate_trace(trace: &[AnnotatedInstruction]) -> Result<()> {
    let mut prev_tick = 0u64;
    for (index, rec) in trace.iter().enumerate() {
        rec.validate()
            .map_err(|reason| Error::Invariant { index, reason })?;
        if rec.fetch_tick != prev_tick + rec.truth.fetch as u64 {
            return Err(Error::Invariant {
                index,
                reason: format!(
                    "fetch_tick {} != previous {} + fetch latency {}",
                    rec.fetch_tick, prev_tick, rec.truth.fetch
                ),
            });
        }
        prev_tick = rec.fetch_tick;
    }
    Ok(())
}
