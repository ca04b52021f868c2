use rayon::prelude::*;

use super::{LatencyPredictor, Query};
use crate::dataset::{commit_frontier, encode_into};
use crate::error::{Error, Result};
use crate::predictor::CnnModel;
use crate::trace::{AnnotatedInstruction, LatencyTriple};

/// Replays the recorded latencies of a trace.
#[derive(Clone, Debug)]
pub struct OraclePredictor {
    truth: Vec<LatencyTriple>,
}

impl OraclePredictor {
    pub fn new(trace: &[AnnotatedInstruction]) -> OraclePredictor {
        OraclePredictor {
            truth: trace.iter().map(|r| r.truth).collect(),
        }
    }
}

impl LatencyPredictor for OraclePredictor {
    fn predict(&self, queries: &[Query<'_>]) -> Result<Vec<LatencyTriple>> {
        queries
            .iter()
            .map(|q| {
                self.truth.get(q.index).copied().ok_or_else(|| {
                    Error::Predictor(format!(
                        "oracle has {} records, asked for index {}",
                        self.truth.len(),
                        q.index
                    ))
                })
            })
            .collect()
    }
}

/// Runs a trained model. Batches are cut into chunks of `chunk` queries
/// that are evaluated in parallel on the current rayon pool.
#[derive(Clone, Debug)]
pub struct CnnPredictor {
    pub model: CnnModel,
    pub chunk: usize,
}

impl CnnPredictor {
    pub fn new(model: CnnModel) -> CnnPredictor {
        CnnPredictor { model, chunk: 32 }
    }

    fn run_chunk(&self, queries: &[Query<'_>]) -> Vec<LatencyTriple> {
        let m = &self.model;
        let row = m.input_width();
        let w = m.layout.width();
        let mut x = vec![0.0f32; queries.len() * row];
        for (dst, q) in x.chunks_exact_mut(row).zip(queries) {
            encode_into(
                &m.layout,
                &m.norm,
                &q.target.inst,
                &q.target.history,
                q.columns(),
                &mut dst[..w],
            );
        }
        let mut ws = m.net.workspace(queries.len());
        let out = m.net.forward(&x, queries.len(), &mut ws);
        out.chunks_exact(m.config.output_width())
            .zip(queries)
            .map(|(o, q)| {
                let frontier = commit_frontier(q.columns().take(m.layout.max_context));
                m.decode(o, q.target.inst.is_store(), frontier).latency
            })
            .collect()
    }
}

impl LatencyPredictor for CnnPredictor {
    fn predict(&self, queries: &[Query<'_>]) -> Result<Vec<LatencyTriple>> {
        let chunk = self.chunk.max(1);
        let parts: Vec<Vec<LatencyTriple>> = if queries.len() <= chunk {
            vec![self.run_chunk(queries)]
        } else {
            queries.par_chunks(chunk).map(|c| self.run_chunk(c)).collect()
        };
        Ok(parts.into_iter().flatten().collect())
    }
}
