//! Supervised samples built from annotated traces.
//!
//! The context of instruction `i` is every earlier instruction still in
//! flight when the machine is about to fetch `i`, that is at the fetch tick
//! of `i - 1`: `{ j < i : exit_tick(j) > fetch_tick(i - 1) }`. Residences are
//! measured at that same tick. This is exactly the queue content the
//! trace-driven simulator holds when it builds the predictor input for `i`,
//! before the fetch latency of `i` is known.
//!
//! Samples are stored factored: every distinct trace record lives once in an
//! instruction table and a sample only keeps indices into it. Dense inputs
//! are materialized on demand, one mini-batch at a time.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::path::Path;

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::history::PAGE_BYTES;
use crate::trace::{
    decode_record, encode_record, validate_trace, AnnotatedInstruction, FeatureLayout,
    HistoryFeatures, LatencyTriple, StaticInstruction, EXECUTION_SLOT, FLAGS_OFFSET,
    HISTORY_OFFSET, OP_FEATURES, RECORD_BYTES, RESIDENCE_SLOT, SLOTS_PER_INSTRUCTION, SRC_OFFSET,
    SRC_REGS, STORE_SLOT,
};

/// Slots describing the instruction itself (op, registers, history).
pub const STATIC_SLOTS: usize = RESIDENCE_SLOT;
pub const LINE_BYTES: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ContextEntry {
    pub index: usize,
    pub residence: u64,
}

/// One instruction plus its in-flight context, newest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub target: usize,
    pub context: Vec<ContextEntry>,
    pub label: LatencyTriple,
}

/// Context index lists for every instruction, stored flat.
pub struct ContextIndex {
    /// Tick residences are measured at, per target.
    pub anchors: Vec<u64>,
    pub offsets: Vec<usize>,
    pub members: Vec<u32>,
}

impl ContextIndex {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn members(&self, i: usize) -> &[u32] {
        &self.members[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// Builds the context of every instruction in one pass over the trace.
pub fn build_context_index(
    trace: &[AnnotatedInstruction],
    max_context: usize,
) -> Result<ContextIndex> {
    validate_trace(trace)?;
    let mut anchors = Vec::with_capacity(trace.len());
    let mut offsets = Vec::with_capacity(trace.len() + 1);
    let mut members = Vec::new();
    let mut active: Vec<u32> = Vec::new();
    offsets.push(0);
    for i in 0..trace.len() {
        let anchor = if i == 0 { 0 } else { trace[i - 1].fetch_tick };
        if i > 0 {
            active.retain(|&j| trace[j as usize].exit_tick() > anchor);
        }
        members.extend(active.iter().rev().take(max_context));
        offsets.push(members.len());
        anchors.push(anchor);
        active.push(i as u32);
    }
    Ok(ContextIndex {
        anchors,
        offsets,
        members,
    })
}

/// One sample per instruction, context newest first and truncated to the
/// `max_context` most recent members.
pub fn build_samples(trace: &[AnnotatedInstruction], max_context: usize) -> Result<Vec<Sample>> {
    let idx = build_context_index(trace, max_context)?;
    Ok((0..trace.len())
        .map(|i| Sample {
            target: i,
            context: idx
                .members(i)
                .iter()
                .map(|&j| ContextEntry {
                    index: j as usize,
                    residence: idx.anchors[i] - trace[j as usize].fetch_tick,
                })
                .collect(),
            label: trace[i].truth,
        })
        .collect())
}

/// `[same PC line, same data address, same data line, same data page,
/// same PC page]`. Data flags are only set when both are memory ops.
pub fn memory_dependency_flags(
    target: &StaticInstruction,
    other: &StaticInstruction,
    line_size: u64,
    page_size: u64,
) -> [u8; 5] {
    let mut f = [0u8; 5];
    f[0] = (target.pc / line_size == other.pc / line_size) as u8;
    f[4] = (target.pc / page_size == other.pc / page_size) as u8;
    if target.op.is_memory() && other.op.is_memory() {
        if let (Some(a), Some(b)) = (target.data, other.data) {
            f[1] = (a.addr == b.addr) as u8;
            f[2] = (a.addr / line_size == b.addr / line_size) as u8;
            f[3] = (a.addr / page_size == b.addr / page_size) as u8;
        }
    }
    f
}

/// Op, register and history slots of one instruction.
pub fn static_features(inst: &StaticInstruction, history: &HistoryFeatures) -> [u16; STATIC_SLOTS] {
    let mut out = [0u16; STATIC_SLOTS];
    for (o, v) in out.iter_mut().zip(inst.op.to_array()) {
        *o = v as u16;
    }
    out[SRC_OFFSET..SRC_OFFSET + SRC_REGS].copy_from_slice(&inst.src_regs);
    out[SRC_OFFSET + SRC_REGS..HISTORY_OFFSET].copy_from_slice(&inst.dst_regs);
    out[HISTORY_OFFSET..STATIC_SLOTS].copy_from_slice(&history.to_array());
    debug_assert_eq!(OP_FEATURES, SRC_OFFSET);
    out
}

/// Everything the encoder needs to know about one context member.
#[derive(Clone, Copy, Debug)]
pub struct ContextColumn<'a> {
    pub inst: &'a StaticInstruction,
    pub history: &'a HistoryFeatures,
    pub residence: u64,
    pub execution: u32,
    pub store: u32,
}

/// Cycles from the query anchor until every context member that has not
/// committed yet will have committed.
pub fn commit_frontier<'a>(context: impl IntoIterator<Item = ContextColumn<'a>>) -> u64 {
    context
        .into_iter()
        .map(|c| (c.execution as u64).saturating_sub(c.residence))
        .max()
        .unwrap_or(0)
}

fn saturate(v: u64) -> u32 {
    v.min(u32::MAX as u64) as u32
}

/// Mapping between latencies and the values the three heads learn.
///
/// With `relative`, the execution head learns `F + E - frontier`, the gap
/// between this instruction's commit and the commit frontier of its context,
/// and the store head learns `S - E`. Head values then go through optional
/// `ln(1 + y)` and a per-head scale. Decoded head values are capped at `max`,
/// the largest target seen during fitting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelScaling {
    pub scale: [f32; 3],
    pub log: bool,
    pub relative: bool,
    pub max: [u32; 3],
}

impl LabelScaling {
    pub fn identity() -> LabelScaling {
        LabelScaling {
            scale: [1.0; 3],
            log: false,
            relative: false,
            max: [u32::MAX; 3],
        }
    }

    /// Head values for a latency triple.
    pub fn targets(&self, truth: LatencyTriple, frontier: u64) -> LatencyTriple {
        if !self.relative {
            return truth;
        }
        let commit = truth.fetch as u64 + truth.execution as u64;
        LatencyTriple::new(
            truth.fetch,
            saturate(commit.saturating_sub(frontier)),
            truth.store.saturating_sub(truth.execution),
        )
    }

    /// Latencies for decoded head values. Execution is at least one cycle;
    /// stores write no earlier than they commit and non-stores never write.
    pub fn latencies(&self, heads: [u32; 3], frontier: u64, is_store: bool) -> LatencyTriple {
        let [fetch, e, s] = heads;
        let execution = if self.relative {
            saturate((frontier + e as u64).saturating_sub(fetch as u64))
        } else {
            e
        }
        .max(1);
        let store = match (is_store, self.relative) {
            (false, _) => 0,
            (true, true) => execution.saturating_add(s),
            (true, false) => s.max(execution),
        };
        LatencyTriple::new(fetch, execution, store)
    }

    pub fn encode(&self, head: usize, latency: u32) -> f64 {
        let y = latency as f64;
        let y = if self.log { y.ln_1p() } else { y };
        y / self.scale[head] as f64
    }

    /// Cycles for a regression output, before rounding.
    pub fn decode(&self, head: usize, value: f64) -> f64 {
        let y = value * self.scale[head] as f64;
        let y = if self.log {
            // Keeps exp_m1 finite for absurd outputs.
            y.min(40.0).exp_m1()
        } else {
            y
        };
        y.min(self.max[head] as f64)
    }
}

/// Per-slot scale factors applied to inputs, and the label mapping for the
/// regression targets. Input scaling is divisive only, so zero padding stays
/// zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub slot_scale: Vec<f32>,
    pub labels: LabelScaling,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::identity()
    }
}

impl Normalization {
    pub fn identity() -> Normalization {
        Normalization {
            slot_scale: vec![1.0; SLOTS_PER_INSTRUCTION],
            labels: LabelScaling::identity(),
        }
    }

    fn forward(&self, slot: usize, v: f64) -> f64 {
        v / self.slot_scale[slot] as f64
    }

    fn inverse(&self, slot: usize, v: f64) -> f64 {
        v * self.slot_scale[slot] as f64
    }

    fn validate(&self) -> Result<()> {
        if self.slot_scale.len() != SLOTS_PER_INSTRUCTION {
            return Err(Error::Shape(format!(
                "normalization has {} slot scales, expected {SLOTS_PER_INSTRUCTION}",
                self.slot_scale.len()
            )));
        }
        if self
            .slot_scale
            .iter()
            .chain(&self.labels.scale)
            .any(|s| !(s.is_finite() && *s >= 1.0))
        {
            return Err(Error::Format("normalization scales must be finite and >= 1".into()));
        }
        Ok(())
    }

    pub(crate) fn write(&self, w: &mut ByteWriter) {
        w.f32s(&self.slot_scale);
        w.f32s(&self.labels.scale);
        w.u8(self.labels.log as u8);
        w.u8(self.labels.relative as u8);
        for m in self.labels.max {
            w.u32(m);
        }
    }

    pub(crate) fn read(r: &mut ByteReader<'_>) -> Result<Normalization> {
        let slot_scale = r.f32s()?;
        let scale: [f32; 3] = r
            .f32s()?
            .try_into()
            .map_err(|_| Error::Format("label scale must have 3 entries".into()))?;
        let log = match r.u8()? {
            0 => false,
            1 => true,
            v => return Err(Error::Format(format!("bad label transform flag {v}"))),
        };
        let relative = match r.u8()? {
            0 => false,
            1 => true,
            v => return Err(Error::Format(format!("bad relative label flag {v}"))),
        };
        let max = [r.u32()?, r.u32()?, r.u32()?];
        let n = Normalization {
            slot_scale,
            labels: LabelScaling {
                scale,
                log,
                relative,
                max,
            },
        };
        n.validate()?;
        Ok(n)
    }
}

/// Writes one predictor input (`layout.width()` values, column by column).
pub fn encode_into<'a>(
    layout: &FeatureLayout,
    norm: &Normalization,
    target: &StaticInstruction,
    target_history: &HistoryFeatures,
    context: impl IntoIterator<Item = ContextColumn<'a>>,
    out: &mut [f32],
) {
    assert_eq!(out.len(), layout.width());
    out.fill(0.0);
    let put = |col: &mut [f32], slot: usize, v: f64| {
        col[slot] = norm.forward(slot, v) as f32;
    };
    let (head, rest) = out.split_at_mut(SLOTS_PER_INSTRUCTION);
    for (slot, v) in static_features(target, target_history).into_iter().enumerate() {
        put(head, slot, v as f64);
    }
    for (col, c) in rest
        .chunks_exact_mut(SLOTS_PER_INSTRUCTION)
        .zip(context.into_iter().take(layout.max_context))
    {
        for (slot, v) in static_features(c.inst, c.history).into_iter().enumerate() {
            put(col, slot, v as f64);
        }
        put(col, RESIDENCE_SLOT, c.residence as f64);
        put(col, EXECUTION_SLOT, c.execution as f64);
        put(col, STORE_SLOT, c.store as f64);
        let flags = memory_dependency_flags(target, c.inst, LINE_BYTES, PAGE_BYTES);
        for (k, f) in flags.into_iter().enumerate() {
            put(col, FLAGS_OFFSET + k, f as f64);
        }
    }
}

/// Encodes a sample whose context refers to `trace`.
pub fn encode(
    sample: &Sample,
    trace: &[AnnotatedInstruction],
    layout: &FeatureLayout,
    norm: &Normalization,
) -> Vec<f32> {
    let mut out = vec![0.0; layout.width()];
    let t = &trace[sample.target];
    encode_into(
        layout,
        norm,
        &t.inst,
        &t.history,
        sample.context.iter().map(|c| {
            let r = &trace[c.index];
            ContextColumn {
                inst: &r.inst,
                history: &r.history,
                residence: c.residence,
                execution: r.truth.execution,
                store: r.truth.store,
            }
        }),
        &mut out,
    );
    out
}

/// Undoes the input scaling.
pub fn denormalize(encoded: &[f32], norm: &Normalization) -> Vec<f64> {
    encoded
        .iter()
        .enumerate()
        .map(|(k, &v)| norm.inverse(k % SLOTS_PER_INSTRUCTION, v as f64))
        .collect()
}

/// Keeps the first occurrence of every distinct `(input, label)` pair.
pub fn deduplicate(samples: Vec<Sample>, trace: &[AnnotatedInstruction]) -> Vec<Sample> {
    let keys: Vec<Vec<u64>> = samples.iter().map(|s| raw_key(s, trace)).collect();
    let keep = first_occurrences(&keys);
    samples
        .into_iter()
        .zip(keep)
        .filter_map(|(s, k)| k.then_some(s))
        .collect()
}

/// Marks the first occurrence of every distinct key; hash collisions are
/// resolved by exact comparison.
pub fn first_occurrences<K: Hash + Eq>(keys: &[K]) -> Vec<bool> {
    let mut seen: HashMap<u64, Vec<usize>> = HashMap::new();
    keys.iter()
        .enumerate()
        .map(|(i, k)| {
            let bucket = seen.entry(hash_of(k)).or_default();
            if bucket.iter().any(|&j| keys[j] == *k) {
                false
            } else {
                bucket.push(i);
                true
            }
        })
        .collect()
}

fn hash_of<K: Hash>(k: &K) -> u64 {
    let mut h = std::hash::DefaultHasher::new();
    k.hash(&mut h);
    h.finish()
}

/// Raw integer content of a sample: every populated input slot plus the label.
fn raw_key_parts<'a>(
    target: &AnnotatedInstruction,
    context: impl Iterator<Item = (u64, &'a AnnotatedInstruction)>,
    out: &mut Vec<u64>,
) {
    out.clear();
    out.extend(static_features(&target.inst, &target.history).map(u64::from));
    for (residence, r) in context {
        out.extend(static_features(&r.inst, &r.history).map(u64::from));
        out.extend([residence, r.truth.execution as u64, r.truth.store as u64]);
        let f = memory_dependency_flags(&target.inst, &r.inst, LINE_BYTES, PAGE_BYTES);
        out.extend(f.map(u64::from));
    }
    out.extend(target.truth.as_array().map(u64::from));
}

fn raw_key(s: &Sample, trace: &[AnnotatedInstruction]) -> Vec<u64> {
    let mut out = Vec::new();
    raw_key_parts(
        &trace[s.target],
        s.context.iter().map(|c| (c.residence, &trace[c.index])),
        &mut out,
    );
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Partition {
    Train = 0,
    Validation = 1,
    Test = 2,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Pseudo-random partition of sample `index` with percentages `ratios`.
pub fn partition_of(index: u64, ratios: [u32; 3]) -> Partition {
    let total: u32 = ratios.iter().sum();
    let r = (splitmix(index) % total as u64) as u32;
    if r < ratios[0] {
        Partition::Train
    } else if r < ratios[0] + ratios[1] {
        Partition::Validation
    } else {
        Partition::Test
    }
}

/// One stored sample: target row in the instruction table, the tick its
/// context residences are measured at, and a slice of the context arena.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StoredSample {
    pub target: u32,
    pub anchor: u64,
    pub ctx_start: u64,
    pub ctx_len: u32,
    pub partition: Partition,
}

#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub layout: FeatureLayout,
    pub dedup: bool,
    pub split: [u32; 3],
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            layout: FeatureLayout::default(),
            dedup: true,
            split: [90, 5, 5],
        }
    }
}

/// Samples from any number of traces with their split and scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub layout: FeatureLayout,
    pub norm: Normalization,
    pub instructions: Vec<AnnotatedInstruction>,
    pub samples: Vec<StoredSample>,
    pub context: Vec<u32>,
}

impl Dataset {
    pub fn build(traces: &[&[AnnotatedInstruction]], opts: &BuildOptions) -> Result<Dataset> {
        if opts.split.iter().sum::<u32>() == 0 {
            return Err(Error::Config("split ratios must not all be zero".into()));
        }
        let mut ds = Dataset {
            layout: opts.layout,
            norm: Normalization::identity(),
            instructions: Vec::new(),
            samples: Vec::new(),
            context: Vec::new(),
        };
        let mut seen: HashMap<u64, Vec<u32>> = HashMap::new();
        let mut key = Vec::new();
        let mut other = Vec::new();
        for trace in traces {
            let idx = build_context_index(trace, opts.layout.max_context)?;
            let base = ds.instructions.len() as u32;
            ds.instructions.extend_from_slice(trace);
            for i in 0..trace.len() {
                let anchor = idx.anchors[i];
                let members = idx.members(i);
                if opts.dedup {
                    raw_key_parts(
                        &trace[i],
                        members.iter().map(|&j| {
                            let r = &trace[j as usize];
                            (anchor - r.fetch_tick, r)
                        }),
                        &mut key,
                    );
                    let bucket = seen.entry(hash_of(&key)).or_default();
                    let dup = bucket.iter().any(|&s| {
                        ds.raw_key_into(s as usize, &mut other);
                        other == key
                    });
                    if dup {
                        continue;
                    }
                    bucket.push(ds.samples.len() as u32);
                }
                let ctx_start = ds.context.len() as u64;
                ds.context.extend(members.iter().map(|&j| base + j));
                let n = ds.samples.len() as u64;
                ds.samples.push(StoredSample {
                    target: base + i as u32,
                    anchor,
                    ctx_start,
                    ctx_len: members.len() as u32,
                    partition: partition_of(n, opts.split),
                });
            }
        }
        ds.norm = ds.fit_normalization();
        Ok(ds)
    }

    fn raw_key_into(&self, s: usize, out: &mut Vec<u64>) {
        let st = &self.samples[s];
        let t = &self.instructions[st.target as usize];
        raw_key_parts(
            t,
            self.members(s).iter().map(|&j| {
                let r = &self.instructions[j as usize];
                (st.anchor - r.fetch_tick, r)
            }),
            out,
        );
    }

    pub fn members(&self, s: usize) -> &[u32] {
        let st = &self.samples[s];
        &self.context[st.ctx_start as usize..st.ctx_start as usize + st.ctx_len as usize]
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label(&self, s: usize) -> LatencyTriple {
        self.instructions[self.samples[s].target as usize].truth
    }

    pub fn target(&self, s: usize) -> &AnnotatedInstruction {
        &self.instructions[self.samples[s].target as usize]
    }

    /// Commit frontier of the encoded context of sample `s`.
    pub fn frontier(&self, s: usize) -> u64 {
        let st = &self.samples[s];
        commit_frontier(self.members(s).iter().take(self.layout.max_context).map(|&j| {
            let r = &self.instructions[j as usize];
            ContextColumn {
                inst: &r.inst,
                history: &r.history,
                residence: st.anchor - r.fetch_tick,
                execution: r.truth.execution,
                store: r.truth.store,
            }
        }))
    }

    pub fn indices(&self, part: Partition) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&s| self.samples[s].partition == part)
            .collect()
    }

    pub fn sample(&self, s: usize) -> Sample {
        let st = &self.samples[s];
        Sample {
            target: st.target as usize,
            context: self
                .members(s)
                .iter()
                .map(|&j| ContextEntry {
                    index: j as usize,
                    residence: st.anchor - self.instructions[j as usize].fetch_tick,
                })
                .collect(),
            label: self.label(s),
        }
    }

    /// Dense, normalized input of sample `s`.
    pub fn encode_into(&self, s: usize, out: &mut [f32]) {
        let st = &self.samples[s];
        let t = &self.instructions[st.target as usize];
        encode_into(
            &self.layout,
            &self.norm,
            &t.inst,
            &t.history,
            self.members(s).iter().map(|&j| {
                let r = &self.instructions[j as usize];
                ContextColumn {
                    inst: &r.inst,
                    history: &r.history,
                    residence: st.anchor - r.fetch_tick,
                    execution: r.truth.execution,
                    store: r.truth.store,
                }
            }),
            out,
        );
    }

    /// Scale per slot = max(std, 1) over populated columns of training
    /// samples; per head = max(std, 1) of `ln(1 + target)` over training
    /// samples, with targets taken relative to the commit frontier.
    fn fit_normalization(&self) -> Normalization {
        let mut sum = [0f64; SLOTS_PER_INSTRUCTION];
        let mut sq = [0f64; SLOTS_PER_INSTRUCTION];
        let mut count = 0f64;
        let mut lsum = [0f64; 3];
        let mut lsq = [0f64; 3];
        let mut lcount = 0f64;
        let mut lmax = [0u32; 3];
        let mut col = vec![0f32; self.layout.width()];
        let ident = Normalization::identity();
        for s in 0..self.samples.len() {
            if self.samples[s].partition != Partition::Train {
                continue;
            }
            let st = &self.samples[s];
            let t = &self.instructions[st.target as usize];
            let populated = 1 + (st.ctx_len as usize).min(self.layout.max_context);
            encode_into(
                &self.layout,
                &ident,
                &t.inst,
                &t.history,
                self.members(s).iter().map(|&j| {
                    let r = &self.instructions[j as usize];
                    ContextColumn {
                        inst: &r.inst,
                        history: &r.history,
                        residence: st.anchor - r.fetch_tick,
                        execution: r.truth.execution,
                        store: r.truth.store,
                    }
                }),
                &mut col,
            );
            for c in col.chunks_exact(SLOTS_PER_INSTRUCTION).take(populated) {
                for k in 0..SLOTS_PER_INSTRUCTION {
                    let v = c[k] as f64;
                    sum[k] += v;
                    sq[k] += v * v;
                }
            }
            count += populated as f64;
            let relative = LabelScaling {
                relative: true,
                ..LabelScaling::identity()
            };
            let targets = relative.targets(t.truth, self.frontier(s));
            for (h, v) in targets.as_array().into_iter().enumerate() {
                lmax[h] = lmax[h].max(v);
                let v = (v as f64).ln_1p();
                lsum[h] += v;
                lsq[h] += v * v;
            }
            lcount += 1.0;
        }
        let scale = |s: f64, q: f64, n: f64| -> f32 {
            if n == 0.0 {
                return 1.0;
            }
            let mean = s / n;
            let var = (q / n - mean * mean).max(0.0);
            var.sqrt().max(1.0) as f32
        };
        Normalization {
            slot_scale: (0..SLOTS_PER_INSTRUCTION)
                .map(|k| scale(sum[k], sq[k], count))
                .collect(),
            labels: LabelScaling {
                scale: [0, 1, 2].map(|h| scale(lsum[h], lsq[h], lcount)),
                log: true,
                relative: true,
                max: if lcount == 0.0 { [u32::MAX; 3] } else { lmax },
            },
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(&DATASET_MAGIC);
        w.u32(DATASET_VERSION);
        w.u64(self.layout.max_context as u64);
        self.norm.write(&mut w);
        w.u64(self.instructions.len() as u64);
        let mut buf = [0u8; RECORD_BYTES];
        for r in &self.instructions {
            encode_record(r, &mut buf);
            w.bytes(&buf);
        }
        w.u64(self.samples.len() as u64);
        for s in &self.samples {
            w.u32(s.target);
            w.u64(s.anchor);
            w.u64(s.ctx_start);
            w.u32(s.ctx_len);
            w.u8(s.partition as u8);
        }
        w.u64(self.context.len() as u64);
        for &c in &self.context {
            w.u32(c);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
        let mut r = ByteReader::new(bytes);
        r.header(DATASET_MAGIC, DATASET_VERSION)?;
        let layout = FeatureLayout::new(r.u64()? as usize);
        let norm = Normalization::read(&mut r)?;
        let n = r.len(RECORD_BYTES)?;
        let mut instructions = Vec::with_capacity(n);
        for index in 0..n {
            let rec: &[u8; RECORD_BYTES] = r.take(RECORD_BYTES)?.try_into().unwrap();
            instructions.push(decode_record(rec, index)?);
        }
        let n = r.len(25)?;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let target = r.u32()?;
            let anchor = r.u64()?;
            let ctx_start = r.u64()?;
            let ctx_len = r.u32()?;
            let partition = match r.u8()? {
                0 => Partition::Train,
                1 => Partition::Validation,
                2 => Partition::Test,
                p => return Err(Error::Format(format!("unknown partition tag {p}"))),
            };
            samples.push(StoredSample {
                target,
                anchor,
                ctx_start,
                ctx_len,
                partition,
            });
        }
        let n = r.len(4)?;
        let mut context = Vec::with_capacity(n);
        for _ in 0..n {
            context.push(r.u32()?);
        }
        r.finish()?;
        let ds = Dataset {
            layout,
            norm,
            instructions,
            samples,
            context,
        };
        ds.check_refs()?;
        Ok(ds)
    }

    fn check_refs(&self) -> Result<()> {
        let n = self.instructions.len() as u32;
        for (index, s) in self.samples.iter().enumerate() {
            let end = s.ctx_start + s.ctx_len as u64;
            if s.target >= n || end > self.context.len() as u64 {
                return Err(Error::Invariant {
                    index,
                    reason: "sample refers outside the instruction table".into(),
                });
            }
            let members = self.members(index);
            if members.iter().any(|&j| {
                j >= n || self.instructions[j as usize].fetch_tick > s.anchor
            }) {
                return Err(Error::Invariant {
                    index,
                    reason: "context member fetched after the sample anchor".into(),
                });
            }
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Dataset> {
        Dataset::from_bytes(&std::fs::read(path)?)
    }
}

pub const DATASET_MAGIC: [u8; 4] = *b"SND1";
const DATASET_VERSION: u32 = 1;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{OpClass, OpFeatures};

    fn rec(fetch: u32, exec: u32, tick: u64) -> AnnotatedInstruction {
        AnnotatedInstruction {
            inst: StaticInstruction::new(0x1000, OpFeatures::of_class(OpClass::IntAlu)),
            history: HistoryFeatures {
                fetch_level: 1,
                ..Default::default()
            },
            truth: LatencyTriple::new(fetch, exec, 0),
            fetch_tick: tick,
        }
    }

    #[test]
    fn first_instruction_has_no_context() {
        let t = [rec(0, 10, 0), rec(1, 10, 1), rec(1, 10, 2)];
        let s = build_samples(&t, 110).unwrap();
        assert!(s[0].context.is_empty());
    }

    #[test]
    fn residences_measured_at_previous_fetch() {
        let t = [rec(0, 10, 0), rec(1, 10, 1), rec(1, 10, 2)];
        let s = build_samples(&t, 110).unwrap();
        let got: Vec<(usize, u64)> = s[2].context.iter().map(|c| (c.index, c.residence)).collect();
        assert_eq!(got, vec![(1, 0), (0, 1)]);
    }

    #[test]
    fn flags_address_arithmetic() {
        let load = StaticInstruction::new(0x400000, OpFeatures::of_class(OpClass::Load))
            .with_data(0x1040, 8);
        let store = StaticInstruction::new(0x400100, OpFeatures::of_class(OpClass::Store))
            .with_data(0x1000, 8);
        assert_eq!(memory_dependency_flags(&load, &store, 64, 4096), [0, 0, 0, 1, 1]);
        assert_eq!(memory_dependency_flags(&load, &load, 64, 4096), [1; 5]);
        let a = StaticInstruction::new(0x1000, OpFeatures::of_class(OpClass::IntAlu));
        let b = StaticInstruction::new(0x9000, OpFeatures::of_class(OpClass::IntAlu));
        assert_eq!(memory_dependency_flags(&a, &b, 64, 4096), [0; 5]);
    }

    #[test]
    fn empty_context_encodes_only_column_zero() {
        let t = [rec(3, 4, 3)];
        let s = build_samples(&t, 110).unwrap();
        let x = encode(&s[0], &t, &FeatureLayout::default(), &Normalization::identity());
        assert_eq!(x.len(), 5550);
        assert!(x[SLOTS_PER_INSTRUCTION..].iter().all(|&v| v == 0.0));
        assert!(x[RESIDENCE_SLOT..SLOTS_PER_INSTRUCTION].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dedup_identical() {
        let t = [rec(0, 1, 0), rec(5, 1, 5), rec(5, 1, 10), rec(5, 1, 15)];
        let s = build_samples(&t, 110).unwrap();
        assert_eq!(deduplicate(s, &t).len(), 2);
    }

    #[test]
    fn split_ratios_roughly_hold() {
        let mut c = [0usize; 3];
        for i in 0..100_000 {
            c[partition_of(i, [90, 5, 5]) as usize] += 1;
        }
        assert!((89_000..91_000).contains(&c[0]), "{c:?}");
        assert!((4_500..5_500).contains(&c[1]), "{c:?}");
    }
}
