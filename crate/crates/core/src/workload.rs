//! Deterministic synthetic instruction streams.
//!
//! A workload is produced in two phases. First a static "program" is laid out:
//! loop bodies whose slots are drawn from the op-class mix, closed by a
//! backward loop branch, with one closing jump per code region. Then that
//! program is walked dynamically, resolving branch outcomes and data
//! addresses, until the requested number of instructions has been emitted.
//! PCs advance by 4 bytes; control only leaves the fall-through path at
//! branch instructions.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{
    decode_static, encode_static, OpClass, OpFeatures, StaticInstruction, STATIC_BYTES,
};

pub const CODE_BASE: u64 = 0x0040_0000;
pub const DATA_BASE: u64 = 0x1000_0000;
const INST_BYTES: u64 = 4;
const LINE: u64 = 64;

const INT_REGS: u16 = 32;
const FP_BASE: u16 = 32;
const FP_REGS: u16 = 32;
/// Pointer register reserved for chase chains.
const CHASE_REG: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkloadKind {
    Mix,
    LoopKernel,
    PointerChase,
    Branchy,
    Streaming,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 5] = [
        WorkloadKind::Mix,
        WorkloadKind::LoopKernel,
        WorkloadKind::PointerChase,
        WorkloadKind::Branchy,
        WorkloadKind::Streaming,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::Mix => "mix",
            WorkloadKind::LoopKernel => "loop-kernel",
            WorkloadKind::PointerChase => "pointer-chase",
            WorkloadKind::Branchy => "branchy",
            WorkloadKind::Streaming => "streaming",
        }
    }

    pub fn parse(name: &str) -> Option<WorkloadKind> {
        WorkloadKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl std::fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub instruction_count: u64,
    pub seed: u64,
    pub memory_footprint_bytes: u64,
    pub branch_taken_bias: f64,
    pub dependency_density: f64,
    /// Weights in `OpClass` order: int-alu, int-mult, int-div, fp-alu,
    /// fp-mult, fp-div, simd, load, store, branch.
    pub op_class_mix: [f64; 10],
}

impl WorkloadSpec {
    /// A reasonable default spec for each kind.
    pub fn preset(kind: WorkloadKind, instruction_count: u64, seed: u64) -> WorkloadSpec {
        let (footprint, bias, density, mix) = match kind {
            WorkloadKind::Mix => (
                16 << 20,
                0.3,
                0.5,
                [0.38, 0.04, 0.01, 0.06, 0.05, 0.01, 0.04, 0.22, 0.10, 0.09],
            ),
            WorkloadKind::LoopKernel => (
                32 << 10,
                0.1,
                0.6,
                [0.35, 0.05, 0.01, 0.10, 0.08, 0.01, 0.05, 0.20, 0.10, 0.05],
            ),
            WorkloadKind::PointerChase => (
                64 << 20,
                0.2,
                0.5,
                [0.40, 0.03, 0.01, 0.03, 0.02, 0.00, 0.01, 0.30, 0.08, 0.12],
            ),
            WorkloadKind::Branchy => (
                256 << 10,
                0.6,
                0.5,
                [0.45, 0.03, 0.01, 0.02, 0.02, 0.00, 0.02, 0.15, 0.08, 0.22],
            ),
            WorkloadKind::Streaming => (
                8 << 20,
                0.1,
                0.4,
                [0.30, 0.02, 0.00, 0.10, 0.10, 0.00, 0.08, 0.25, 0.12, 0.03],
            ),
        };
        WorkloadSpec {
            kind,
            instruction_count,
            seed,
            memory_footprint_bytes: footprint,
            branch_taken_bias: bias,
            dependency_density: density,
            op_class_mix: mix,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.instruction_count < 1 {
            return Err(Error::Config("instruction_count must be at least 1".into()));
        }
        if self.op_class_mix.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("op_class_mix weights must be non-negative".into()));
        }
        let total: f64 = self.op_class_mix.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "op_class_mix must sum to 1, sums to {total}"
            )));
        }
        for (name, v) in [
            ("branch_taken_bias", self.branch_taken_bias),
            ("dependency_density", self.dependency_density),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        let mem_weight = self.op_class_mix[OpClass::Load.index()]
            + self.op_class_mix[OpClass::Store.index()];
        if mem_weight > 0.0 && self.memory_footprint_bytes < LINE {
            return Err(Error::Config(format!(
                "memory footprint of {} bytes cannot host loads/stores",
                self.memory_footprint_bytes
            )));
        }
        Ok(())
    }

    fn has_branches(&self) -> bool {
        self.op_class_mix[OpClass::Branch.index()] > 0.0
    }

    /// Reads a spec from JSON (`.json`) or TOML (anything else).
    pub fn load(path: impl AsRef<Path>) -> Result<WorkloadSpec> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let spec: WorkloadSpec = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug)]
enum Control {
    FallThrough,
    /// Backward conditional branch taken `trip - 1` times, then falls through.
    LoopBack { target: usize, trip: u32 },
    /// Forward conditional branch taken with probability `p`.
    Biased { target: usize, p: f64 },
    /// Forward conditional branch not taken on every `period`-th execution.
    Pattern { target: usize, period: u32 },
    Jump { target: usize },
    /// Indirect jump closing a region; hops to the next region once the
    /// current phase quota is used up.
    Dispatch { region: usize },
}

#[derive(Clone, Copy, Debug)]
enum MemPattern {
    Stream { base: u64, stride: u64, extent: u64 },
    Random { base: u64, extent: u64 },
    Chase { base: u64, lines_log2: u32 },
    Hot { addr: u64 },
}

#[derive(Clone, Debug)]
struct Slot {
    inst: StaticInstruction,
    control: Control,
    mem: Option<MemPattern>,
}

struct Region {
    start: usize,
}

/// Bijective scramble of `x` over `bits` bits (xorshift-multiply rounds).
fn permute(x: u64, bits: u32, key: u64) -> u64 {
    if bits == 0 {
        return 0;
    }
    let mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
    let mut v = (x ^ key) & mask;
    for round in 0..3u64 {
        v = v.wrapping_mul(0x9E37_79B9_7F4A_7C15 | 1 | (round << 1)) & mask;
        v ^= v >> (bits / 2).max(1);
        v = v.wrapping_add(key.rotate_left(17 * round as u32 + 5)) & mask;
    }
    v
}

struct Builder<'a> {
    spec: &'a WorkloadSpec,
    rng: ChaCha8Rng,
    code: Vec<Slot>,
    recent_dsts: Vec<u16>,
}

struct RegionShape {
    loops: usize,
    body: (usize, usize),
    trip: (u32, u32),
}

fn shape_of(kind: WorkloadKind) -> RegionShape {
    match kind {
        WorkloadKind::LoopKernel => RegionShape {
            loops: 6,
            body: (6, 24),
            trip: (8, 64),
        },
        WorkloadKind::Streaming => RegionShape {
            loops: 3,
            body: (12, 32),
            trip: (64, 512),
        },
        WorkloadKind::PointerChase => RegionShape {
            loops: 2,
            body: (6, 16),
            trip: (32, 256),
        },
        WorkloadKind::Branchy => RegionShape {
            loops: 8,
            body: (12, 40),
            trip: (4, 32),
        },
        WorkloadKind::Mix => unreachable!("mix is composed of other regions"),
    }
}

impl Builder<'_> {
    fn pc_of(index: usize) -> u64 {
        CODE_BASE + index as u64 * INST_BYTES
    }

    fn pick_class(&mut self, allow_branch: bool) -> OpClass {
        let mut weights = self.spec.op_class_mix;
        if !allow_branch {
            weights[OpClass::Branch.index()] = 0.0;
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return OpClass::IntAlu;
        }
        let mut x = self.rng.random::<f64>() * total;
        for class in OpClass::ALL {
            let w = weights[class.index()];
            if x < w {
                return class;
            }
            x -= w;
        }
        OpClass::ALL
            .into_iter()
            .rev()
            .find(|c| weights[c.index()] > 0.0)
            .unwrap()
    }

    fn pick_src(&mut self, fp: bool) -> u16 {
        if !self.recent_dsts.is_empty() && self.rng.random::<f64>() < self.spec.dependency_density
        {
            let i = self.rng.random_range(0..self.recent_dsts.len());
            return self.recent_dsts[i];
        }
        self.random_reg(fp)
    }

    fn random_reg(&mut self, fp: bool) -> u16 {
        if fp {
            FP_BASE + self.rng.random_range(0..FP_REGS)
        } else {
            // r0 stays unused and the chase pointer is never clobbered.
            self.rng.random_range(CHASE_REG + 1..INT_REGS)
        }
    }

    fn note_dst(&mut self, reg: u16) {
        self.recent_dsts.push(reg);
        if self.recent_dsts.len() > 4 {
            self.recent_dsts.remove(0);
        }
    }

    fn compute_slot(&mut self, class: OpClass) -> StaticInstruction {
        let fp = class.is_fp();
        let pc = Self::pc_of(self.code.len());
        let nsrc = if class == OpClass::Simd { 3 } else { 2 };
        let srcs: Vec<u16> = (0..nsrc).map(|_| self.pick_src(fp)).collect();
        let dst = self.random_reg(fp);
        self.note_dst(dst);
        StaticInstruction::new(pc, OpFeatures::of_class(class))
            .with_sources(&srcs)
            .with_dests(&[dst])
    }

    fn memory_slot(&mut self, class: OpClass, kind: WorkloadKind, mem: MemPattern) -> Slot {
        let pc = Self::pc_of(self.code.len());
        let op = OpFeatures::of_class(class);
        let inst = match (class, mem) {
            (OpClass::Load, MemPattern::Chase { .. }) => {
                StaticInstruction::new(pc, op).with_sources(&[CHASE_REG]).with_dests(&[CHASE_REG])
            }
            (OpClass::Load, _) => {
                let base = self.pick_src(false);
                let fp_dst = kind == WorkloadKind::Streaming && self.rng.random_bool(0.5);
                let dst = self.random_reg(fp_dst);
                self.note_dst(dst);
                StaticInstruction::new(pc, op).with_sources(&[base]).with_dests(&[dst])
            }
            _ => {
                let base = self.pick_src(false);
                let fp_data = self.rng.random_bool(0.3);
                let data = self.pick_src(fp_data);
                StaticInstruction::new(pc, op).with_sources(&[base, data])
            }
        }
        // Placeholder address; resolved per dynamic instance.
        .with_data(0, 8);
        Slot {
            inst,
            control: Control::FallThrough,
            mem: Some(mem),
        }
    }

    fn mem_pattern(
        &mut self,
        class: OpClass,
        kind: WorkloadKind,
        base: u64,
        extent: u64,
        stream_index: u64,
        streams: u64,
    ) -> MemPattern {
        let lines = (extent / LINE).max(1);
        match kind {
            WorkloadKind::LoopKernel => {
                if self.rng.random_bool(0.15) {
                    let line = self.rng.random_range(0..lines);
                    MemPattern::Hot {
                        addr: base + line * LINE,
                    }
                } else {
                    let span = (extent / streams.max(1)).max(LINE);
                    MemPattern::Stream {
                        base: base + (stream_index % streams.max(1)) * span,
                        stride: 8,
                        extent: span,
                    }
                }
            }
            WorkloadKind::Streaming => {
                let span = (extent / streams.max(1)).max(LINE);
                MemPattern::Stream {
                    base: base + (stream_index % streams.max(1)) * span,
                    stride: if self.rng.random_bool(0.5) { 8 } else { LINE },
                    extent: span,
                }
            }
            WorkloadKind::PointerChase => {
                if class == OpClass::Load {
                    MemPattern::Chase {
                        base,
                        lines_log2: 63 - lines.leading_zeros(),
                    }
                } else {
                    MemPattern::Random { base, extent }
                }
            }
            WorkloadKind::Branchy => {
                if self.rng.random_bool(0.3) {
                    let line = self.rng.random_range(0..lines.min(64));
                    MemPattern::Hot {
                        addr: base + line * LINE,
                    }
                } else {
                    MemPattern::Random { base, extent }
                }
            }
            WorkloadKind::Mix => unreachable!(),
        }
    }

    fn inner_branch(&mut self, kind: WorkloadKind, body_end: usize) -> Control {
        let here = self.code.len();
        // Skip 1..=3 instructions, never past the loop-back slot.
        let max_skip = (body_end - here).clamp(1, 3);
        let target = (here + 1 + self.rng.random_range(1..=max_skip)).min(body_end);
        let bias = self.spec.branch_taken_bias;
        if kind == WorkloadKind::Branchy {
            match self.rng.random_range(0..3) {
                0 => Control::Biased { target, p: 0.5 },
                1 => Control::Pattern {
                    target,
                    period: self.rng.random_range(2..=4),
                },
                _ => Control::Biased { target, p: bias },
            }
        } else {
            let jitter = self.rng.random_range(-0.05..0.05);
            Control::Biased {
                target,
                p: (bias + jitter).clamp(0.0, 1.0),
            }
        }
    }

    fn branch_slot(&mut self, control: Control) -> Slot {
        let pc = Self::pc_of(self.code.len());
        let mut op = OpFeatures::of_class(OpClass::Branch);
        let mut inst = StaticInstruction::new(pc, op);
        match control {
            Control::LoopBack { .. } | Control::Biased { .. } | Control::Pattern { .. } => {
                op.is_direct_branch = true;
                op.is_conditional = true;
                let a = self.pick_src(false);
                let b = self.pick_src(false);
                inst = inst.with_sources(&[a, b]);
            }
            Control::Jump { .. } => {
                op.is_direct_branch = true;
            }
            Control::Dispatch { .. } => {
                op.is_indirect_branch = true;
                let a = self.pick_src(false);
                inst = inst.with_sources(&[a]);
            }
            Control::FallThrough => unreachable!(),
        }
        inst.op = op;
        Slot {
            inst,
            control,
            mem: None,
        }
    }

    /// Lays out one region of `kind` and returns its first slot index.
    fn build_region(
        &mut self,
        kind: WorkloadKind,
        region: usize,
        base: u64,
        extent: u64,
        closing: Option<Control>,
        min_len: usize,
    ) -> usize {
        let shape = shape_of(kind);
        let start = self.code.len();
        let branches = self.spec.has_branches();
        let mut stream_index = 0u64;
        let streams = 8;
        let mut loops = 0;
        loop {
            if branches && loops >= shape.loops {
                break;
            }
            if !branches && self.code.len() - start >= min_len {
                break;
            }
            loops += 1;
            let body_start = self.code.len();
            let body_len = self.rng.random_range(shape.body.0..=shape.body.1);
            let body_end = body_start + body_len;
            while self.code.len() < body_end {
                let can_branch = branches && self.code.len() + 1 < body_end;
                let class = self.pick_class(can_branch);
                let slot = match class {
                    OpClass::Branch => {
                        let control = self.inner_branch(kind, body_end);
                        self.branch_slot(control)
                    }
                    OpClass::Load | OpClass::Store => {
                        let mem = self.mem_pattern(class, kind, base, extent, stream_index, streams);
                        stream_index += 1;
                        self.memory_slot(class, kind, mem)
                    }
                    _ => Slot {
                        inst: self.compute_slot(class),
                        control: Control::FallThrough,
                        mem: None,
                    },
                };
                self.code.push(slot);
            }
            if branches {
                let trip = self.rng.random_range(shape.trip.0..=shape.trip.1);
                let slot = self.branch_slot(Control::LoopBack {
                    target: body_start,
                    trip,
                });
                self.code.push(slot);
            }
        }
        let _ = region;
        if let Some(control) = closing {
            let slot = self.branch_slot(control);
            self.code.push(slot);
        }
        start
    }
}

struct Walker<'a> {
    code: &'a [Slot],
    regions: &'a [Region],
    rng: ChaCha8Rng,
    counters: Vec<u64>,
    chase_key: u64,
    chase_step: u64,
    phase_left: u64,
    region: usize,
}

impl Walker<'_> {
    fn resolve_addr(&mut self, slot_index: usize, mem: MemPattern) -> u64 {
        match mem {
            MemPattern::Stream {
                base,
                stride,
                extent,
            } => {
                let k = self.counters[slot_index];
                self.counters[slot_index] += 1;
                base + (k * stride) % extent
            }
            MemPattern::Random { base, extent } => {
                base + self.rng.random_range(0..(extent / 8).max(1)) * 8
            }
            MemPattern::Chase { base, lines_log2 } => {
                let line = permute(self.chase_step, lines_log2, self.chase_key);
                self.chase_step += 1;
                base + line * LINE
            }
            MemPattern::Hot { addr } => addr,
        }
    }

    fn next_slot(&mut self, index: usize) -> usize {
        match self.code[index].control {
            Control::FallThrough => index + 1,
            Control::LoopBack { target, trip } => {
                self.counters[index] += 1;
                if self.counters[index] < trip as u64 {
                    target
                } else {
                    self.counters[index] = 0;
                    index + 1
                }
            }
            Control::Biased { target, p } => {
                if self.rng.random_bool(p) {
                    target
                } else {
                    index + 1
                }
            }
            Control::Pattern { target, period } => {
                self.counters[index] += 1;
                if self.counters[index] % period as u64 == 0 {
                    index + 1
                } else {
                    target
                }
            }
            Control::Jump { target } => target,
            Control::Dispatch { region } => {
                if self.phase_left == 0 {
                    self.region = (region + 1) % self.regions.len();
                    self.phase_left = self.rng.random_range(2_000..8_000);
                } else {
                    self.region = region;
                }
                self.regions[self.region].start
            }
        }
    }
}

/// Generates exactly `spec.instruction_count` instructions.
pub fn generate(spec: &WorkloadSpec) -> Result<Vec<StaticInstruction>> {
    spec.validate()?;
    let count = spec.instruction_count as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let walk_seed = rng.random::<u64>();
    let chase_key = rng.random::<u64>();
    let mut b = Builder {
        spec,
        rng,
        code: Vec::new(),
        recent_dsts: Vec::new(),
    };

    let kinds: Vec<WorkloadKind> = match spec.kind {
        WorkloadKind::Mix => vec![
            WorkloadKind::LoopKernel,
            WorkloadKind::Streaming,
            WorkloadKind::PointerChase,
            WorkloadKind::Branchy,
        ],
        k => vec![k],
    };
    let footprint = spec.memory_footprint_bytes.max(LINE);
    let share = (footprint / kinds.len() as u64 / LINE).max(1) * LINE;
    let branches = spec.has_branches();
    let min_len = count.div_ceil(kinds.len());
    let mut regions = Vec::new();
    for (r, &kind) in kinds.iter().enumerate() {
        let closing = if !branches {
            None
        } else if kinds.len() > 1 {
            Some(Control::Dispatch { region: r })
        } else {
            Some(Control::Jump {
                target: b.code.len(),
            })
        };
        let base = DATA_BASE + r as u64 * share;
        let start = b.build_region(kind, r, base, share, closing, min_len);
        regions.push(Region { start });
    }

    let code = b.code;
    let mut walker = Walker {
        code: &code,
        regions: &regions,
        rng: ChaCha8Rng::seed_from_u64(walk_seed),
        counters: vec![0; code.len()],
        chase_key,
        chase_step: 0,
        phase_left: 4_000,
        region: 0,
    };
    let mut out = Vec::with_capacity(count);
    let mut index = 0usize;
    while out.len() < count {
        let slot = &code[index];
        let mut inst = slot.inst;
        if let Some(mem) = slot.mem {
            let addr = walker.resolve_addr(index, mem);
            inst.data = Some(crate::trace::DataAccess { addr, size: 8 });
        }
        out.push(inst);
        walker.phase_left = walker.phase_left.saturating_sub(1);
        index = walker.next_slot(index);
        if index >= code.len() {
            // Only reachable in branch-free programs, which are laid out at
            // full length.
            break;
        }
    }
    debug_assert_eq!(out.len(), count);
    Ok(out)
}

pub const PROGRAM_MAGIC: [u8; 4] = *b"SNP1";
const PROGRAM_VERSION: u32 = 1;

/// Program file: magic `SNP1`, version u32, count u64, then the static part
/// of each record exactly as laid out in trace files.
pub fn write_program(path: impl AsRef<Path>, program: &[StaticInstruction]) -> Result<()> {
    for (index, inst) in program.iter().enumerate() {
        inst.validate()
            .map_err(|reason| Error::Invariant { index, reason })?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&PROGRAM_MAGIC)?;
    w.write_all(&PROGRAM_VERSION.to_le_bytes())?;
    w.write_all(&(program.len() as u64).to_le_bytes())?;
    let mut buf = [0u8; STATIC_BYTES];
    for inst in program {
        encode_static(inst, &mut buf);
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_program(path: impl AsRef<Path>) -> Result<Vec<StaticInstruction>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; 16];
    if crate::trace::read_full(&mut r, &mut head)? < 16 {
        return Err(Error::Format("program file too short".into()));
    }
    let magic: [u8; 4] = head[0..4].try_into().unwrap();
    if magic != PROGRAM_MAGIC {
        return Err(Error::BadMagic {
            expected: PROGRAM_MAGIC,
            found: magic,
        });
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != PROGRAM_VERSION {
        return Err(Error::VersionMismatch {
            expected: PROGRAM_VERSION,
            found: version,
        });
    }
    let count = u64::from_le_bytes(head[8..16].try_into().unwrap());
    let mut out = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut buf = [0u8; STATIC_BYTES];
    for index in 0..count {
        match crate::trace::read_full(&mut r, &mut buf)? {
            STATIC_BYTES => out.push(decode_static(&buf, index as usize)?),
            0 => {
                return Err(Error::CountMismatch {
                    expected: count,
                    found: index,
                })
            }
            _ => return Err(Error::Truncated { index }),
        }
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes after last program record".into()));
    }
    Ok(out)
}
