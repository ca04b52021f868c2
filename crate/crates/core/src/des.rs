//! Cycle-stepped out-of-order core used as ground truth.
//!
//! Each cycle runs four phases in this order: store write completion, in-order
//! commit, out-of-order issue, in-order fetch. Every instruction records three
//! timestamps: its fetch tick, its commit tick and (stores only) the tick its
//! memory write completes. Latencies are measured from the fetch tick.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::history::{BranchOutcome, HistoryConfig, HistoryState};
use crate::trace::{
    AnnotatedInstruction, HistoryFeatures, LatencyTriple, OpClass, StaticInstruction,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuSpec {
    pub count: u32,
    pub latency: u32,
    pub pipelined: bool,
}

impl FuSpec {
    pub const fn new(count: u32, latency: u32, pipelined: bool) -> FuSpec {
        FuSpec {
            count,
            latency,
            pipelined,
        }
    }
}

/// Functional units per op class. Load and store latencies only cover
/// address generation; memory time is added from the access level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuConfig {
    pub int_alu: FuSpec,
    pub int_mult: FuSpec,
    pub int_div: FuSpec,
    pub fp_alu: FuSpec,
    pub fp_mult: FuSpec,
    pub fp_div: FuSpec,
    pub simd: FuSpec,
    pub load: FuSpec,
    pub store: FuSpec,
    pub branch: FuSpec,
}

impl Default for FuConfig {
    fn default() -> Self {
        FuConfig {
            int_alu: FuSpec::new(6, 1, true),
            int_mult: FuSpec::new(2, 3, true),
            int_div: FuSpec::new(1, 12, false),
            fp_alu: FuSpec::new(4, 2, true),
            fp_mult: FuSpec::new(2, 4, true),
            fp_div: FuSpec::new(1, 12, false),
            simd: FuSpec::new(4, 2, true),
            load: FuSpec::new(2, 1, true),
            store: FuSpec::new(1, 1, true),
            branch: FuSpec::new(2, 1, true),
        }
    }
}

impl FuConfig {
    pub fn get(&self, class: OpClass) -> FuSpec {
        match class {
            OpClass::IntAlu => self.int_alu,
            OpClass::IntMult => self.int_mult,
            OpClass::IntDiv => self.int_div,
            OpClass::FpAlu => self.fp_alu,
            OpClass::FpMult => self.fp_mult,
            OpClass::FpDiv => self.fp_div,
            OpClass::Simd => self.simd,
            OpClass::Load => self.load,
            OpClass::Store => self.store,
            OpClass::Branch => self.branch,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessorConfig {
    pub fetch_width: u32,
    pub issue_width: u32,
    pub commit_width: u32,
    pub rob_entries: u32,
    pub iq_entries: u32,
    pub lq_entries: u32,
    pub sq_entries: u32,
    /// Cycles between fetch and the earliest possible issue.
    pub frontend_depth: u32,
    pub memory_latency_cycles: u32,
    /// Outstanding L1D misses allowed at once.
    pub mshr_entries: u32,
    pub deadlock_cycles: u64,
    pub units: FuConfig,
    pub history: HistoryConfig,
}

impl Default for ProcessorConfig {
    fn default() -> Self {
        ProcessorConfig {
            fetch_width: 3,
            issue_width: 8,
            commit_width: 8,
            rob_entries: 40,
            iq_entries: 32,
            lq_entries: 16,
            sq_entries: 16,
            frontend_depth: 3,
            memory_latency_cycles: 100,
            mshr_entries: 16,
            deadlock_cycles: 100_000,
            units: FuConfig::default(),
            history: HistoryConfig::default(),
        }
    }
}

impl ProcessorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fetch_width", self.fetch_width),
            ("issue_width", self.issue_width),
            ("commit_width", self.commit_width),
            ("rob_entries", self.rob_entries),
            ("iq_entries", self.iq_entries),
            ("lq_entries", self.lq_entries),
            ("sq_entries", self.sq_entries),
            ("mshr_entries", self.mshr_entries),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        for class in OpClass::ALL {
            let fu = self.units.get(class);
            if fu.count == 0 || fu.latency == 0 {
                return Err(Error::Config(format!(
                    "{class:?} units need a positive count and latency"
                )));
            }
        }
        if self.deadlock_cycles == 0 {
            return Err(Error::Config("deadlock_cycles must be positive".into()));
        }
        self.history.cache.validate()?;
        self.history.branch.validate()
    }

    /// Stable 64-bit digest of the configuration, stored in trace headers.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    /// Reads a config from JSON (`.json`) or TOML (anything else).
    pub fn load(path: impl AsRef<Path>) -> Result<ProcessorConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let cfg: ProcessorConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn level_latency(&self, level: u16) -> u32 {
        let c = &self.history.cache;
        match level {
            0 | 1 => c.l1d.latency_cycles,
            2 => c.l2.latency_cycles,
            _ => c.l2.latency_cycles + self.memory_latency_cycles,
        }
    }

    fn walk_cost(&self, levels: &[u16; 3]) -> u32 {
        let l2 = self.history.cache.l2.latency_cycles;
        levels
            .iter()
            .map(|&code| match code {
                0 => 0,
                1 => 1,
                2 => l2,
                _ => l2 + self.memory_latency_cycles,
            })
            .sum()
    }

    fn fetch_penalty(&self, h: &HistoryFeatures) -> u32 {
        let miss = match h.fetch_level {
            0 | 1 => 0,
            2 => self.history.cache.l2.latency_cycles,
            _ => self.history.cache.l2.latency_cycles + self.memory_latency_cycles,
        };
        miss + self.walk_cost(&h.fetch_walk_levels)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DesStats {
    pub instructions: u64,
    pub total_cycles: u64,
    pub cpi: f64,
    pub branches: u64,
    pub mispredicts: u64,
    pub mispredict_rate: f64,
    pub l1i_hit_rate: f64,
    pub l1d_hit_rate: f64,
    pub l2_hit_rate: f64,
    pub max_rob: u32,
    pub max_iq: u32,
    pub max_lq: u32,
    pub max_sq: u32,
    pub max_commits_per_cycle: u32,
}

impl DesStats {
    pub fn to_csv(&self) -> String {
        format!(
            "instructions,total_cycles,cpi,branches,mispredicts,mispredict_rate,l1i_hit_rate,l1d_hit_rate,l2_hit_rate\n\
             {},{},{:.6},{},{},{:.6},{:.6},{:.6},{:.6}\n",
            self.instructions,
            self.total_cycles,
            self.cpi,
            self.branches,
            self.mispredicts,
            self.mispredict_rate,
            self.l1i_hit_rate,
            self.l1d_hit_rate,
            self.l2_hit_rate,
        )
    }
}

#[derive(Clone, Debug)]
pub struct DesResult {
    pub trace: Vec<AnnotatedInstruction>,
    pub total_cycles: u64,
    pub cpi: f64,
    pub stats: DesStats,
}

/// Splits a run into accumulated fetch time and the drain after the last
/// fetch. Their sum is the total cycle count.
pub fn total_time_identity(trace: &[AnnotatedInstruction], total_cycles: u64) -> (u64, u64) {
    let sum_fetch: u64 = trace.iter().map(|r| r.truth.fetch as u64).sum();
    match trace.last() {
        Some(last) => (sum_fetch, total_cycles - last.fetch_tick),
        None => (0, 0),
    }
}

const NEVER: u64 = u64::MAX;

#[derive(Clone, Copy, Debug)]
struct Slot {
    history: HistoryFeatures,
    fetch: u64,
    issue: u64,
    complete: u64,
    commit: u64,
    store_done: u64,
    /// Older in-flight store forwarding to this load.
    forward_from: Option<usize>,
    producers: [u32; 8],
    nproducers: u8,
}

impl Slot {
    fn new() -> Slot {
        Slot {
            history: HistoryFeatures::default(),
            fetch: NEVER,
            issue: NEVER,
            complete: NEVER,
            commit: NEVER,
            store_done: NEVER,
            forward_from: None,
            producers: [0; 8],
            nproducers: 0,
        }
    }
}

struct Core<'a> {
    cfg: &'a ProcessorConfig,
    prog: &'a [StaticInstruction],
    slots: Vec<Slot>,
    history: HistoryState,
    tick: u64,

    next_fetch: usize,
    /// Index whose history has been computed but which is not yet fetched.
    annotated: Option<usize>,
    fetch_resume: u64,
    /// Mispredicted branch blocking fetch until it resolves.
    blocking_branch: Option<usize>,
    penalty_paid: Option<usize>,

    rob: VecDeque<usize>,
    iq: Vec<usize>,
    lq: u32,
    sq: VecDeque<usize>,
    last_writer: Vec<Option<usize>>,
    last_store_done: u64,
    /// Busy-until tick of every unpipelined unit instance per class.
    unpipelined_busy: Vec<Vec<u64>>,
    outstanding_misses: Vec<u64>,

    stats: DesStats,
    last_progress: u64,
}

fn word_of(addr: u64) -> u64 {
    addr >> 3
}

impl<'a> Core<'a> {
    fn new(prog: &'a [StaticInstruction], cfg: &'a ProcessorConfig) -> Result<Core<'a>> {
        let unpipelined_busy = OpClass::ALL
            .iter()
            .map(|&c| {
                let fu = cfg.units.get(c);
                if fu.pipelined {
                    Vec::new()
                } else {
                    vec![0; fu.count as usize]
                }
            })
            .collect();
        Ok(Core {
            cfg,
            prog,
            slots: vec![Slot::new(); prog.len()],
            history: HistoryState::new(&cfg.history)?,
            tick: 0,
            next_fetch: 0,
            annotated: None,
            fetch_resume: 0,
            blocking_branch: None,
            penalty_paid: None,
            rob: VecDeque::new(),
            iq: Vec::new(),
            lq: 0,
            sq: VecDeque::new(),
            last_writer: vec![None; 1 << 16],
            last_store_done: 0,
            unpipelined_busy,
            outstanding_misses: Vec::new(),
            stats: DesStats::default(),
            last_progress: 0,
        })
    }

    fn done(&self) -> bool {
        self.next_fetch == self.prog.len() && self.rob.is_empty() && self.sq.is_empty()
    }

    fn complete_stores(&mut self) {
        while let Some(&s) = self.sq.front() {
            let done = self.slots[s].store_done;
            if done == NEVER || done > self.tick {
                break;
            }
            self.sq.pop_front();
            self.last_progress = self.tick;
        }
    }

    fn commit(&mut self) {
        let mut commits = 0;
        while commits < self.cfg.commit_width {
            let Some(&i) = self.rob.front() else { break };
            if self.slots[i].complete > self.tick {
                break;
            }
            self.rob.pop_front();
            let inst = &self.prog[i];
            self.slots[i].commit = self.tick;
            if inst.is_load() {
                self.lq -= 1;
            }
            if inst.is_store() {
                let lat = self.cfg.level_latency(self.slots[i].history.data_level) as u64;
                let done = (self.tick + lat).max(self.last_store_done);
                self.slots[i].store_done = done;
                self.last_store_done = done;
            }
            commits += 1;
        }
        if commits > 0 {
            self.last_progress = self.tick;
            self.stats.max_commits_per_cycle = self.stats.max_commits_per_cycle.max(commits);
        }
    }

    fn operands_ready(&self, i: usize) -> bool {
        let s = &self.slots[i];
        let deps_ready = s.producers[..s.nproducers as usize]
            .iter()
            .all(|&p| self.slots[p as usize].complete <= self.tick);
        let forward_ready = s
            .forward_from
            .is_none_or(|st| self.slots[st].complete <= self.tick);
        deps_ready && forward_ready
    }

    fn execution_time(&self, i: usize) -> u64 {
        let inst = &self.prog[i];
        let s = &self.slots[i];
        let fu = self.cfg.units.get(inst.op.op_class).latency as u64;
        if inst.is_load() {
            if s.forward_from.is_some() {
                fu + self.cfg.level_latency(1) as u64
            } else {
                fu + self.cfg.walk_cost(&s.history.data_walk_levels) as u64
                    + self.cfg.level_latency(s.history.data_level) as u64
            }
        } else if inst.is_store() {
            fu + self.cfg.walk_cost(&s.history.data_walk_levels) as u64
        } else {
            fu
        }
    }

    fn issue(&mut self) {
        self.outstanding_misses.retain(|&done| done > self.tick);
        let mut issued = 0u32;
        let mut used = [0u32; OpClass::COUNT];
        let rob_head = self.rob.front().copied();
        let mut k = 0;
        while k < self.iq.len() && issued < self.cfg.issue_width {
            let i = self.iq[k];
            let inst = &self.prog[i];
            let class = inst.op.op_class;
            let fu = self.cfg.units.get(class);
            let s = &self.slots[i];
            let eligible = self.tick >= s.fetch + self.cfg.frontend_depth as u64
                && (!(inst.op.is_serializing || inst.op.is_memory_barrier)
                    || rob_head == Some(i))
                && self.operands_ready(i);
            let miss = inst.is_load() && s.forward_from.is_none() && s.history.data_level >= 2;
            let mshr_ok = !miss || (self.outstanding_misses.len() as u32) < self.cfg.mshr_entries;
            let unit = if fu.pipelined {
                (used[class.index()] < fu.count).then_some(usize::MAX)
            } else {
                self.unpipelined_busy[class.index()]
                    .iter()
                    .position(|&b| b <= self.tick)
            };
            match unit {
                Some(u) if eligible && mshr_ok => {
                    let lat = self.execution_time(i);
                    let s = &mut self.slots[i];
                    s.issue = self.tick;
                    s.complete = self.tick + lat;
                    if u != usize::MAX {
                        self.unpipelined_busy[class.index()][u] = self.tick + fu.latency as u64;
                    }
                    if miss {
                        self.outstanding_misses.push(self.tick + lat);
                    }
                    used[class.index()] += 1;
                    issued += 1;
                    self.iq.remove(k);
                }
                _ => k += 1,
            }
        }
        if issued > 0 {
            self.last_progress = self.tick;
        }
    }

    fn has_room(&self, inst: &StaticInstruction) -> bool {
        (self.rob.len() as u32) < self.cfg.rob_entries
            && (self.iq.len() as u32) < self.cfg.iq_entries
            && (!inst.is_load() || self.lq < self.cfg.lq_entries)
            && (!inst.is_store() || (self.sq.len() as u32) < self.cfg.sq_entries)
    }

    fn annotate(&mut self, i: usize) {
        if self.annotated == Some(i) {
            return;
        }
        let inst = &self.prog[i];
        let outcome = inst
            .is_branch()
            .then(|| BranchOutcome::from_next(inst, self.prog.get(i + 1).map(|n| n.pc)));
        self.slots[i].history = self.history.annotate(inst, outcome);
        self.annotated = Some(i);
    }

    fn fetch(&mut self) {
        if let Some(b) = self.blocking_branch {
            let done = self.slots[b].complete;
            if done == NEVER || self.tick <= done {
                return;
            }
            self.blocking_branch = None;
        }
        if self.tick < self.fetch_resume {
            return;
        }
        let line_shift = self.cfg.history.cache.line_size_bytes.trailing_zeros();
        let mut group_line = None;
        let mut fetched = 0;
        while fetched < self.cfg.fetch_width && self.next_fetch < self.prog.len() {
            let i = self.next_fetch;
            let inst = self.prog[i];
            let line = inst.pc >> line_shift;
            if group_line.is_some_and(|g| g != line) || !self.has_room(&inst) {
                break;
            }
            self.annotate(i);
            let penalty = self.cfg.fetch_penalty(&self.slots[i].history) as u64;
            if penalty > 0 && self.penalty_paid != Some(i) {
                if fetched == 0 {
                    self.fetch_resume = self.tick + penalty;
                    self.penalty_paid = Some(i);
                    self.last_progress = self.tick;
                }
                break;
            }
            self.place(i);
            fetched += 1;
            group_line = Some(line);
            let h = self.slots[i].history;
            if h.branch_mispredict == 1 {
                self.blocking_branch = Some(i);
                break;
            }
            if inst.is_branch() && self.prog.get(i + 1).is_some_and(|n| n.pc != inst.pc + 4) {
                break;
            }
        }
    }

    fn place(&mut self, i: usize) {
        let inst = self.prog[i];
        let slot = &mut self.slots[i];
        slot.fetch = self.tick;
        let mut n = 0;
        for r in inst.sources() {
            if let Some(p) = self.last_writer[r as usize] {
                if !slot.producers[..n].contains(&(p as u32)) {
                    slot.producers[n] = p as u32;
                    n += 1;
                }
            }
        }
        slot.nproducers = n as u8;
        if inst.is_load() {
            let word = word_of(inst.data.map_or(0, |d| d.addr));
            slot.forward_from = self
                .sq
                .iter()
                .rev()
                .copied()
                .find(|&s| word_of(self.prog[s].data.map_or(0, |d| d.addr)) == word);
            self.lq += 1;
        }
        if inst.is_store() {
            self.sq.push_back(i);
        }
        for r in inst.dests() {
            self.last_writer[r as usize] = Some(i);
        }
        self.rob.push_back(i);
        self.iq.push(i);
        self.next_fetch += 1;
        self.last_progress = self.tick;
        self.stats.max_rob = self.stats.max_rob.max(self.rob.len() as u32);
        self.stats.max_iq = self.stats.max_iq.max(self.iq.len() as u32);
        self.stats.max_lq = self.stats.max_lq.max(self.lq);
        self.stats.max_sq = self.stats.max_sq.max(self.sq.len() as u32);
    }

    fn run(&mut self) -> Result<()> {
        while !self.done() {
            self.complete_stores();
            self.commit();
            self.issue();
            self.fetch();
            if self.tick - self.last_progress > self.cfg.deadlock_cycles {
                return Err(Error::Deadlock {
                    tick: self.tick,
                    detail: format!(
                        "fetched {}/{}, rob {}, iq {}, sq {}",
                        self.next_fetch,
                        self.prog.len(),
                        self.rob.len(),
                        self.iq.len(),
                        self.sq.len()
                    ),
                });
            }
            if self.done() {
                break;
            }
            self.tick += 1;
        }
        Ok(())
    }
}

/// Runs `program` to completion and records per-instruction ground truth.
pub fn simulate(program: &[StaticInstruction], config: &ProcessorConfig) -> Result<DesResult> {
    config.validate()?;
    for (index, inst) in program.iter().enumerate() {
        inst.validate()
            .map_err(|reason| Error::Invariant { index, reason })?;
    }
    let mut core = Core::new(program, config)?;
    core.run()?;

    let mut trace = Vec::with_capacity(program.len());
    let mut prev_fetch = 0u64;
    let mut total = 0u64;
    let mut stats = std::mem::take(&mut core.stats);
    let (mut l1i, mut l1d, mut dacc, mut l2hit, mut l2acc) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for (inst, s) in program.iter().zip(&core.slots) {
        let execution = (s.commit - s.fetch) as u32;
        let store = if inst.is_store() {
            (s.store_done - s.fetch) as u32
        } else {
            0
        };
        let truth = LatencyTriple::new((s.fetch - prev_fetch) as u32, execution, store);
        prev_fetch = s.fetch;
        let rec = AnnotatedInstruction {
            inst: *inst,
            history: s.history,
            truth,
            fetch_tick: s.fetch,
        };
        total = total.max(rec.exit_tick());
        trace.push(rec);

        let h = &s.history;
        l1i += (h.fetch_level == 1) as u64;
        if h.fetch_level >= 2 {
            l2acc += 1;
            l2hit += (h.fetch_level == 2) as u64;
        }
        if inst.op.is_memory() {
            dacc += 1;
            l1d += (h.data_level == 1) as u64;
            if h.data_level >= 2 {
                l2acc += 1;
                l2hit += (h.data_level == 2) as u64;
            }
        }
        if inst.is_branch() {
            stats.branches += 1;
            stats.mispredicts += h.branch_mispredict as u64;
        }
    }
    let n = program.len() as u64;
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let cpi = ratio(total, n);
    stats.instructions = n;
    stats.total_cycles = total;
    stats.cpi = cpi;
    stats.mispredict_rate = ratio(stats.mispredicts, stats.branches);
    stats.l1i_hit_rate = ratio(l1i, n);
    stats.l1d_hit_rate = ratio(l1d, dacc);
    stats.l2_hit_rate = ratio(l2hit, l2acc);
    Ok(DesResult {
        trace,
        total_cycles: total,
        cpi,
        stats,
    })
}
