//! Sub-trace parallel simulation. The trace is cut into contiguous pieces
//! that each run on a cold machine state; every round gathers one query per
//! unfinished piece so the predictor sees large batches.

use std::ops::Range;

use rayon::prelude::*;

use super::{LatencyPredictor, MachineState, Query, SimConfig, SimResult};
use crate::error::{Error, Result};
use crate::trace::{AnnotatedInstruction, LatencyTriple};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionPlan {
    /// Start index of each sub-trace plus the trace length at the end.
    pub bounds: Vec<usize>,
}

impl PartitionPlan {
    pub fn len(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self, k: usize) -> Range<usize> {
        self.bounds[k]..self.bounds[k + 1]
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.len()).map(|k| self.range(k))
    }
}

/// Splits `n` instructions into `k` contiguous sub-traces whose sizes
/// differ by at most one, larger ones first.
pub fn partition(n: usize, k: usize) -> Result<PartitionPlan> {
    if k == 0 {
        return Err(Error::InvalidArgument("sub-trace count must be positive".into()));
    }
    if k > n.max(1) {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} instructions into {k} sub-traces"
        )));
    }
    let (base, extra) = (n / k, n % k);
    let mut bounds = Vec::with_capacity(k + 1);
    let mut at = 0;
    bounds.push(0);
    for i in 0..k {
        at += base + usize::from(i < extra);
        bounds.push(at);
    }
    Ok(PartitionPlan { bounds })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParallelOptions {
    pub sub_traces: usize,
    /// Largest number of queries handed to the predictor in one call.
    pub batch_max: usize,
    /// Threads in the worker pool; 0 uses the rayon default.
    pub workers: usize,
}

impl Default for ParallelOptions {
    fn default() -> Self {
        ParallelOptions {
            sub_traces: 1,
            batch_max: 4096,
            workers: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParallelResult {
    pub plan: PartitionPlan,
    pub parts: Vec<SimResult>,
    /// Sum of the per-sub-trace totals.
    pub total_cycles: u64,
    pub instruction_count: u64,
    pub cpi: f64,
    pub rounds: u64,
}

impl ParallelResult {
    /// Predictions of every sub-trace concatenated in trace order.
    pub fn predictions(&self) -> Vec<LatencyTriple> {
        self.parts.iter().flat_map(|p| p.predictions.iter().copied()).collect()
    }

    pub fn fetch_series(&self) -> Vec<u32> {
        self.parts
            .iter()
            .flat_map(|p| p.predictions.iter().map(|l| l.fetch))
            .collect()
    }
}

pub fn simulate_parallel(
    trace: &[AnnotatedInstruction],
    predictor: &dyn LatencyPredictor,
    cfg: &SimConfig,
    opts: &ParallelOptions,
) -> Result<ParallelResult> {
    cfg.validate()?;
    if opts.batch_max == 0 {
        return Err(Error::InvalidArgument("batch_max must be positive".into()));
    }
    let plan = partition(trace.len(), opts.sub_traces)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run(trace, predictor, cfg, opts, plan))
}

fn run(
    trace: &[AnnotatedInstruction],
    predictor: &dyn LatencyPredictor,
    cfg: &SimConfig,
    opts: &ParallelOptions,
    plan: PartitionPlan,
) -> Result<ParallelResult> {
    let k = plan.len();
    let mut states: Vec<MachineState> = (0..k).map(|_| MachineState::new(*cfg)).collect();
    let mut cursor: Vec<usize> = plan.bounds[..k].to_vec();
    let mut rounds = 0;
    loop {
        let active: Vec<usize> = (0..k).filter(|&s| cursor[s] < plan.bounds[s + 1]).collect();
        if active.is_empty() {
            break;
        }
        rounds += 1;
        let mut preds = Vec::with_capacity(active.len());
        for group in active.chunks(opts.batch_max) {
            let queries: Vec<Query<'_>> = group
                .iter()
                .map(|&s| states[s].query(cursor[s], &trace[cursor[s]]))
                .collect();
            match predictor.predict(&queries) {
                Ok(p) if p.len() == queries.len() => preds.extend(p),
                Ok(p) => {
                    return Err(Error::SubTrace {
                        sub_trace: group[0],
                        source: Box::new(Error::Predictor(format!(
                            "expected {} predictions, got {}",
                            queries.len(),
                            p.len()
                        ))),
                    })
                }
                Err(e) => return Err(locate_failure(predictor, &queries, group, e)),
            }
        }
        let mut jobs: Vec<(&mut MachineState, usize, LatencyTriple)> = Vec::new();
        let mut it = active.iter().zip(preds).peekable();
        for (s, state) in states.iter_mut().enumerate() {
            if it.peek().is_some_and(|(&a, _)| a == s) {
                let (_, p) = it.next().unwrap();
                jobs.push((state, s, p));
            }
        }
        jobs.into_par_iter()
            .map(|(state, s, p)| {
                state
                    .apply(cursor[s], &trace[cursor[s]], p)
                    .map_err(|e| Error::SubTrace {
                        sub_trace: s,
                        source: Box::new(e),
                    })
            })
            .collect::<Result<Vec<()>>>()?;
        for &s in &active {
            cursor[s] += 1;
        }
    }
    let parts = states
        .into_par_iter()
        .enumerate()
        .map(|(s, st)| {
            st.finish().map_err(|e| Error::SubTrace {
                sub_trace: s,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let total_cycles = parts.iter().map(|p| p.total_cycles).sum();
    let instruction_count = trace.len() as u64;
    Ok(ParallelResult {
        plan,
        parts,
        total_cycles,
        instruction_count,
        cpi: if instruction_count == 0 {
            0.0
        } else {
            total_cycles as f64 / instruction_count as f64
        },
        rounds,
    })
}

/// Re-issues a failed batch query by query to name the failing sub-trace.
fn locate_failure(
    predictor: &dyn LatencyPredictor,
    queries: &[Query<'_>],
    group: &[usize],
    err: Error,
) -> Error {
    for (q, &s) in queries.iter().zip(group) {
        if let Err(e) = predictor.predict(std::slice::from_ref(q)) {
            return Error::SubTrace {
                sub_trace: s,
                source: Box::new(e),
            };
        }
    }
    Error::SubTrace {
        sub_trace: group[0],
        source: Box::new(err),
    }
}

/// One measured run for the throughput table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThroughputRun {
    pub sub_traces: usize,
    pub workers: usize,
    pub instructions: u64,
    pub seconds: f64,
}

impl ThroughputRun {
    pub fn mips(&self) -> Result<f64> {
        if self.seconds <= 0.0 || !self.seconds.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "run with {} sub-traces has non-positive duration",
                self.sub_traces
            )));
        }
        Ok(self.instructions as f64 / self.seconds / 1e6)
    }
}

/// CSV with instructions per second and speedup over the first run.
pub fn throughput_report(runs: &[ThroughputRun]) -> Result<String> {
    let mut out = String::from("sub_traces,workers,instructions,seconds,mips,speedup\n");
    let base = match runs.first() {
        Some(r) => r.mips()?,
        None => return Ok(out),
    };
    for r in runs {
        let mips = r.mips()?;
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.4}\n",
            r.sub_traces,
            r.workers,
            r.instructions,
            r.seconds,
            mips,
            mips / base
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_sizes() {
        let p = partition(10, 3).unwrap();
        assert_eq!(p.bounds, vec![0, 4, 7, 10]);
        assert!(partition(3, 4).is_err());
        assert!(partition(5, 0).is_err());
        assert_eq!(partition(0, 1).unwrap().bounds, vec![0, 0]);
    }

    #[test]
    fn zero_duration_is_rejected() {
        let r = ThroughputRun {
            sub_traces: 1,
            workers: 1,
            instructions: 10,
            seconds: 0.0,
        };
        assert!(throughput_report(&[r]).is_err());
    }
}
