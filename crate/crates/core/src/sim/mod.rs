//! Trace-driven simulator: every trace instruction is fed through a latency
//! predictor, and two FIFO queues (processor, memory write) track what is
//! still in flight while the cycle counter advances by predicted fetch
//! latencies.

mod parallel;
mod predictors;

pub use parallel::*;
pub use predictors::*;

use std::collections::VecDeque;

use crate::dataset::ContextColumn;
use crate::error::{Error, Result};
use crate::report::{phase_cpi, PhaseWindow};
use crate::trace::{AnnotatedInstruction, HistoryFeatures, LatencyTriple, StaticInstruction};

/// One queued instruction with its predicted latencies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InFlight {
    pub index: usize,
    pub inst: StaticInstruction,
    pub history: HistoryFeatures,
    /// Value of the cycle counter when the instruction entered.
    pub enter_tick: u64,
    pub execution: u32,
    pub store: u32,
}

impl InFlight {
    pub fn residence(&self, now: u64) -> u64 {
        now - self.enter_tick
    }

    fn retire_tick(&self) -> u64 {
        self.enter_tick + self.execution as u64
    }

    fn write_done_tick(&self) -> u64 {
        self.enter_tick + self.store as u64
    }
}

/// What the predictor sees for one instruction.
#[derive(Clone, Debug)]
pub struct Query<'a> {
    /// Position of the instruction in the full trace.
    pub index: usize,
    pub target: &'a AnnotatedInstruction,
    /// Cycle counter value residences are measured against.
    pub now: u64,
    /// In-flight instructions, newest first.
    pub context: Vec<&'a InFlight>,
}

impl<'a> Query<'a> {
    pub fn columns(&self) -> impl Iterator<Item = ContextColumn<'a>> + '_ {
        self.context.iter().map(move |e| ContextColumn {
            inst: &e.inst,
            history: &e.history,
            residence: e.residence(self.now),
            execution: e.execution,
            store: e.store,
        })
    }
}

/// Produces latency triples for a batch of queries.
pub trait LatencyPredictor: Sync {
    fn predict(&self, queries: &[Query<'_>]) -> Result<Vec<LatencyTriple>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimConfig {
    /// Processor queue capacity and context truncation length.
    pub max_context: usize,
    /// Processor-queue retirements allowed per cycle.
    pub retire_bandwidth: u32,
    /// Instructions per phase-CPI window.
    pub window: u64,
    /// Advance one cycle at a time instead of jumping between retire events.
    pub per_cycle: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            max_context: crate::trace::DEFAULT_MAX_CONTEXT,
            retire_bandwidth: 8,
            window: 1_000_000,
            per_cycle: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_context == 0 || self.retire_bandwidth == 0 || self.window == 0 {
            return Err(Error::Config(
                "max_context, retire_bandwidth and window must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MachineState {
    cfg: SimConfig,
    pub processor_queue: VecDeque<InFlight>,
    pub memory_write_queue: VecDeque<InFlight>,
    pub cur_tick: u64,
    pub sum_fetch: u64,
    pub overflow_stall_cycles: u64,
    pub predictions: Vec<LatencyTriple>,
}

impl MachineState {
    pub fn new(cfg: SimConfig) -> MachineState {
        MachineState {
            cfg,
            processor_queue: VecDeque::new(),
            memory_write_queue: VecDeque::new(),
            cur_tick: 0,
            sum_fetch: 0,
            overflow_stall_cycles: 0,
            predictions: Vec::new(),
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn is_empty(&self) -> bool {
        self.processor_queue.is_empty() && self.memory_write_queue.is_empty()
    }

    /// Predictor input for the next instruction.
    pub fn query<'a>(&'a self, index: usize, target: &'a AnnotatedInstruction) -> Query<'a> {
        let context = self
            .processor_queue
            .iter()
            .rev()
            .chain(self.memory_write_queue.iter().rev())
            .take(self.cfg.max_context)
            .collect();
        Query {
            index,
            target,
            now: self.cur_tick,
            context,
        }
    }

    /// Retirement work of one cycle, at the current tick.
    fn retire_cycle(&mut self) {
        let now = self.cur_tick;
        let mut retired = 0;
        while retired < self.cfg.retire_bandwidth {
            match self.processor_queue.front() {
                Some(e) if e.retire_tick() <= now => {
                    let e = self.processor_queue.pop_front().unwrap();
                    if e.inst.is_store() {
                        self.memory_write_queue.push_back(e);
                    }
                    retired += 1;
                }
                _ => break,
            }
        }
        while self
            .memory_write_queue
            .front()
            .is_some_and(|e| e.write_done_tick() <= now)
        {
            self.memory_write_queue.pop_front();
        }
    }

    /// Earliest tick after the current one at which a retirement can happen.
    fn next_event(&self) -> Option<u64> {
        let pq = self.processor_queue.front().map(InFlight::retire_tick);
        let mwq = self.memory_write_queue.front().map(InFlight::write_done_tick);
        let t = match (pq, mwq) {
            (Some(a), Some(b)) => a.min(b),
            (a, b) => a.or(b)?,
        };
        Some(t.max(self.cur_tick + 1))
    }

    /// Moves the clock forward to `end`, retiring exactly as a cycle-by-cycle
    /// walk would.
    fn advance_to(&mut self, end: u64) {
        if self.cfg.per_cycle {
            while self.cur_tick < end {
                self.cur_tick += 1;
                self.retire_cycle();
            }
            return;
        }
        while let Some(t) = self.next_event().filter(|&t| t <= end) {
            self.cur_tick = t;
            self.retire_cycle();
        }
        self.cur_tick = end;
    }

    /// Applies a prediction for `target` and enqueues it.
    pub fn apply(
        &mut self,
        index: usize,
        target: &AnnotatedInstruction,
        pred: LatencyTriple,
    ) -> Result<()> {
        let fetch = pred.fetch as u64;
        if fetch > 0 {
            self.advance_to(self.cur_tick + fetch);
        }
        while self.processor_queue.len() >= self.cfg.max_context {
            let before = self.cur_tick;
            let next = if self.cfg.per_cycle {
                Some(before + 1)
            } else {
                self.processor_queue.front().map(|e| e.retire_tick().max(before + 1))
            };
            let Some(next) = next else {
                return Err(Error::Livelock {
                    tick: before,
                    detail: "processor queue full with nothing to retire".into(),
                });
            };
            self.advance_to(next);
            self.overflow_stall_cycles += self.cur_tick - before;
        }
        self.processor_queue.push_back(InFlight {
            index,
            inst: target.inst,
            history: target.history,
            enter_tick: self.cur_tick,
            execution: pred.execution,
            store: if target.inst.is_store() { pred.store } else { 0 },
        });
        self.sum_fetch += fetch;
        self.predictions.push(pred);
        Ok(())
    }

    /// Predicts and applies one instruction.
    pub fn step(
        &mut self,
        index: usize,
        target: &AnnotatedInstruction,
        predictor: &dyn LatencyPredictor,
    ) -> Result<LatencyTriple> {
        let pred = {
            let q = self.query(index, target);
            let mut out = predictor.predict(std::slice::from_ref(&q))?;
            if out.len() != 1 {
                return Err(Error::Predictor(format!(
                    "expected 1 prediction, got {}",
                    out.len()
                )));
            }
            out.pop().unwrap()
        };
        self.apply(index, target, pred)?;
        Ok(pred)
    }

    /// Runs the clock until both queues are empty and returns the cycles
    /// that took.
    pub fn drain(&mut self) -> Result<u64> {
        let start = self.cur_tick;
        while !self.is_empty() {
            let Some(t) = self.next_event() else {
                return Err(Error::Livelock {
                    tick: self.cur_tick,
                    detail: "queued entries with no retire event".into(),
                });
            };
            let before = (self.processor_queue.len(), self.memory_write_queue.len());
            self.advance_to(t);
            let after = (self.processor_queue.len(), self.memory_write_queue.len());
            if before == after && self.cur_tick - start > u32::MAX as u64 * 2 {
                return Err(Error::Livelock {
                    tick: self.cur_tick,
                    detail: "drain made no progress".into(),
                });
            }
        }
        Ok(self.cur_tick - start)
    }

    pub fn finish(mut self) -> Result<SimResult> {
        let drain = self.drain()?;
        Ok(SimResult::new(
            self.cur_tick,
            self.sum_fetch,
            drain,
            self.overflow_stall_cycles,
            self.predictions,
            self.cfg.window,
        ))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimResult {
    pub total_cycles: u64,
    pub instruction_count: u64,
    /// Zero when no instruction was simulated; see `cpi_defined`.
    pub cpi: f64,
    pub cpi_defined: bool,
    pub sum_fetch: u64,
    /// `total_cycles - sum_fetch`: drain plus queue-full stalls.
    pub delta: u64,
    pub drain_cycles: u64,
    pub overflow_stall_cycles: u64,
    pub windows: Vec<PhaseWindow>,
    pub predictions: Vec<LatencyTriple>,
}

impl SimResult {
    fn new(
        total: u64,
        sum_fetch: u64,
        drain: u64,
        overflow: u64,
        predictions: Vec<LatencyTriple>,
        window: u64,
    ) -> SimResult {
        let n = predictions.len() as u64;
        let fetch: Vec<u32> = predictions.iter().map(|p| p.fetch).collect();
        SimResult {
            total_cycles: total,
            instruction_count: n,
            cpi: if n == 0 { 0.0 } else { total as f64 / n as f64 },
            cpi_defined: n > 0,
            sum_fetch,
            delta: total - sum_fetch,
            drain_cycles: drain,
            overflow_stall_cycles: overflow,
            windows: phase_cpi(&fetch, window).unwrap_or_default(),
            predictions,
        }
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "total_cycles,instruction_count,cpi,cpi_defined,sum_fetch,delta,drain_cycles,overflow_stall_cycles\n\
             {},{},{:.6},{},{},{},{},{}\n",
            self.total_cycles,
            self.instruction_count,
            self.cpi,
            self.cpi_defined,
            self.sum_fetch,
            self.delta,
            self.drain_cycles,
            self.overflow_stall_cycles
        )
    }

    pub fn windows_csv(&self) -> String {
        crate::report::windows_csv(&self.windows)
    }
}

/// Steps every instruction of `trace` in order, then drains.
pub fn simulate(
    trace: &[AnnotatedInstruction],
    predictor: &dyn LatencyPredictor,
    cfg: &SimConfig,
) -> Result<SimResult> {
    simulate_range(trace, 0, predictor, cfg)
}

/// Like [`simulate`] for a slice starting at global index `offset`.
pub fn simulate_range(
    trace: &[AnnotatedInstruction],
    offset: usize,
    predictor: &dyn LatencyPredictor,
    cfg: &SimConfig,
) -> Result<SimResult> {
    cfg.validate()?;
    let mut state = MachineState::new(*cfg);
    for (k, rec) in trace.iter().enumerate() {
        state.step(offset + k, rec, predictor)?;
    }
    state.finish()
}
