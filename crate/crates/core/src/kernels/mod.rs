//! Warp-level benchmark traces and their functional execution.
//!
//! A trace is a list of SIMT instructions. Every instruction runs across all
//! threads; memory instructions expand into `threads / 16` operations, each a
//! [`LaneRequestSet`] whose lane `l` of operation `g` belongs to thread
//! `16 * g + l`. Compute instructions carry an opaque per-thread register
//! transform and a cycle cost in warp operations.

mod dft;
mod fft;
mod transpose;

pub use dft::{max_relative_error, reference_dft};
pub use fft::{
    fft_stage_count, gen_fft, gen_fft_with, twiddle, twiddle_table, FftDirection, TwiddleTable,
};
pub use transpose::{gen_transpose, gen_transpose_with};

use crate::mem_arch::{LaneRequestSet, LANES};
use crate::timing::InstrCategory;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::io::Write;
use std::sync::Arc;
use thiserror::Error;

/// Registers per thread (5-bit register index).
pub const REGISTERS: usize = 32;
pub const DEFAULT_THREADS: u32 = 256;

pub type Registers = [u32; REGISTERS];
pub type LaneFn = Arc<dyn Fn(&mut Registers) + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("matrix dimension {0} is not a positive multiple of 16")]
    BadDimension(u32),
    #[error("radix {radix} with {points} points is not supported")]
    BadFftShape { radix: u32, points: u32 },
    #[error("{threads} threads cannot run this kernel (needs {needed})")]
    BadThreads { threads: u32, needed: String },
    #[error("no calibrated op counts for {0}")]
    Uncalibrated(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error(
        "instruction {instr} op {op} lane {lane}: address {address} outside {words}-word memory"
    )]
    OutOfBounds {
        instr: usize,
        op: usize,
        lane: usize,
        address: u32,
        words: usize,
    },
    #[error("instruction {instr}: register r{reg} does not exist")]
    BadRegister { instr: usize, reg: usize },
    #[error("instruction {instr} op {op} lane {lane}: read of never-written register r{reg}")]
    UnwrittenRegister {
        instr: usize,
        op: usize,
        lane: usize,
        reg: usize,
    },
    #[error("instruction {instr} has {ops} operations, expected {expected}")]
    OpCount {
        instr: usize,
        ops: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ComputeCategory {
    FpOp,
    IntOp,
    ImmediateOp,
    OtherOp,
}

impl From<ComputeCategory> for InstrCategory {
    fn from(c: ComputeCategory) -> Self {
        match c {
            ComputeCategory::FpOp => InstrCategory::FpOp,
            ComputeCategory::IntOp => InstrCategory::IntOp,
            ComputeCategory::ImmediateOp => InstrCategory::ImmediateOp,
            ComputeCategory::OtherOp => InstrCategory::OtherOp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReadRole {
    Data,
    Twiddle,
}

#[derive(Clone)]
pub struct ComputeOp {
    pub category: ComputeCategory,
    /// Issue cost in warp operations.
    pub warp_ops: u64,
    /// Registers read and written, as bit masks.
    pub uses: u32,
    pub defs: u32,
    pub func: Option<LaneFn>,
}

impl fmt::Debug for ComputeOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ComputeOp")
            .field("category", &self.category)
            .field("warp_ops", &self.warp_ops)
            .field("uses", &format_args!("{:#x}", self.uses))
            .field("defs", &format_args!("{:#x}", self.defs))
            .field("func", &self.func.is_some())
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum Instruction {
    Compute(ComputeOp),
    Read {
        role: ReadRole,
        dest: u8,
        ops: Vec<LaneRequestSet>,
    },
    Write {
        src: u8,
        blocking: bool,
        ops: Vec<LaneRequestSet>,
    },
}

impl Instruction {
    pub fn category(&self) -> InstrCategory {
        match self {
            Instruction::Compute(c) => c.category.into(),
            Instruction::Read {
                role: ReadRole::Data,
                ..
            } => InstrCategory::Load,
            Instruction::Read {
                role: ReadRole::Twiddle,
                ..
            } => InstrCategory::TwiddleLoad,
            Instruction::Write { .. } => InstrCategory::Store,
        }
    }

    pub fn warp_ops(&self) -> u64 {
        match self {
            Instruction::Compute(c) => c.warp_ops,
            Instruction::Read { ops, .. } | Instruction::Write { ops, .. } => ops.len() as u64,
        }
    }

    pub fn memory_ops(&self) -> Option<&[LaneRequestSet]> {
        match self {
            Instruction::Compute(_) => None,
            Instruction::Read { ops, .. } | Instruction::Write { ops, .. } => Some(ops),
        }
    }
}

/// One warp operation of a trace, as seen by export and analysis tools.
#[derive(Debug, Clone, Copy)]
pub enum WarpOp<'a> {
    Compute {
        category: ComputeCategory,
    },
    Read {
        role: ReadRole,
        requests: &'a LaneRequestSet,
        dest: u8,
    },
    Write {
        requests: &'a LaneRequestSet,
        src: u8,
        blocking: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kernel", rename_all = "lowercase")]
pub enum KernelSpec {
    Transpose { n: u32 },
    Fft { radix: u32, points: u32 },
}

impl KernelSpec {
    pub fn label(&self) -> String {
        match self {
            KernelSpec::Transpose { n } => format!("transpose-{n}x{n}"),
            KernelSpec::Fft { radix, points } => format!("fft-r{radix}-{points}"),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenMode {
    /// Compute costs are the generator's own instruction counts.
    #[default]
    Native,
    /// Compute costs are replaced by the published per-category counts.
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub data_base: u32,
    pub twiddle_base: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub kernel: KernelSpec,
    pub data_words: usize,
    pub twiddle_words: usize,
    pub layout: Layout,
}

#[derive(Debug, Clone)]
pub struct KernelTrace {
    pub threads: u32,
    pub instructions: Vec<Instruction>,
    pub meta: TraceMeta,
}

/// Warp-operation counts per category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub fp: u64,
    pub int: u64,
    pub immediate: u64,
    pub other: u64,
    pub load: u64,
    pub store: u64,
    pub twiddle_load: u64,
}

impl OpCounts {
    pub fn get(&self, category: InstrCategory) -> u64 {
        match category {
            InstrCategory::FpOp => self.fp,
            InstrCategory::IntOp => self.int,
            InstrCategory::ImmediateOp => self.immediate,
            InstrCategory::OtherOp => self.other,
            InstrCategory::Load => self.load,
            InstrCategory::Store => self.store,
            InstrCategory::TwiddleLoad => self.twiddle_load,
        }
    }

    pub fn get_mut(&mut self, category: InstrCategory) -> &mut u64 {
        match category {
            InstrCategory::FpOp => &mut self.fp,
            InstrCategory::IntOp => &mut self.int,
            InstrCategory::ImmediateOp => &mut self.immediate,
            InstrCategory::OtherOp => &mut self.other,
            InstrCategory::Load => &mut self.load,
            InstrCategory::Store => &mut self.store,
            InstrCategory::TwiddleLoad => &mut self.twiddle_load,
        }
    }
}

/// Warp operations per category.
pub fn trace_summary(trace: &KernelTrace) -> OpCounts {
    let mut counts = OpCounts::default();
    for instr in &trace.instructions {
        *counts.get_mut(instr.category()) += instr.warp_ops();
    }
    counts
}

impl KernelTrace {
    pub fn ops_per_instruction(&self) -> usize {
        self.threads as usize / LANES
    }

    /// Memory words the trace needs (data plus twiddles).
    pub fn memory_words(&self) -> usize {
        self.meta.data_words + self.meta.twiddle_words
    }

    pub fn warp_ops(&self) -> impl Iterator<Item = (usize, WarpOp<'_>)> + '_ {
        self.instructions.iter().enumerate().flat_map(|(i, instr)| {
            let ops: Box<dyn Iterator<Item = WarpOp<'_>>> = match instr {
                Instruction::Compute(c) => {
                    let category = c.category;
                    Box::new((0..c.warp_ops).map(move |_| WarpOp::Compute { category }))
                }
                Instruction::Read { role, dest, ops } => {
                    Box::new(ops.iter().map(move |r| WarpOp::Read {
                        role: *role,
                        requests: r,
                        dest: *dest,
                    }))
                }
                Instruction::Write { src, blocking, ops } => {
                    Box::new(ops.iter().map(move |r| WarpOp::Write {
                        requests: r,
                        src: *src,
                        blocking: *blocking,
                    }))
                }
            };
            ops.map(move |op| (i, op))
        })
    }

    /// Replaces every compute cost with zero and prepends one padding
    /// instruction per category carrying `counts`.
    pub(crate) fn calibrate(&mut self, counts: &crate::reference::CommonOps) {
        for instr in &mut self.instructions {
            if let Instruction::Compute(c) = instr {
                c.warp_ops = 0;
            }
        }
        let padding = [
            (ComputeCategory::FpOp, counts.fp),
            (ComputeCategory::IntOp, counts.int),
            (ComputeCategory::ImmediateOp, counts.immediate),
            (ComputeCategory::OtherOp, counts.other),
        ];
        let pads = padding
            .into_iter()
            .filter(|(_, n)| *n > 0)
            .map(|(category, warp_ops)| {
                Instruction::Compute(ComputeOp {
                    category,
                    warp_ops,
                    uses: 0,
                    defs: 0,
                    func: None,
                })
            });
        self.instructions.splice(0..0, pads);
    }

    /// Writes one JSON record per warp operation.
    pub fn export_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (instr_index, op) in self.warp_ops() {
            let record = TraceRecord::new(instr_index, &op);
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// JSON-lines trace record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub instr_index: usize,
    /// `compute`, `read` or `write`.
    pub kind: String,
    /// `fp`, `int`, `immediate`, `other`, `load`, `twiddle_load` or `store`.
    pub category: String,
    pub addresses: [u32; LANES],
    pub active: [bool; LANES],
    /// Destination (read) or source (write) register.
    pub reg: Option<u8>,
    pub blocking: Option<bool>,
}

impl TraceRecord {
    fn new(instr_index: usize, op: &WarpOp<'_>) -> Self {
        let lanes = |r: &LaneRequestSet| {
            let addresses = std::array::from_fn(|l| r.lane(l).unwrap_or(0));
            let active = std::array::from_fn(|l| r.lane(l).is_some());
            (addresses, active)
        };
        match op {
            WarpOp::Compute { category } => Self {
                instr_index,
                kind: "compute".into(),
                category: InstrCategory::from(*category).name().into(),
                addresses: [0; LANES],
                active: [false; LANES],
                reg: None,
                blocking: None,
            },
            WarpOp::Read {
                role,
                requests,
                dest,
            } => {
                let (addresses, active) = lanes(requests);
                let category = match role {
                    ReadRole::Data => InstrCategory::Load,
                    ReadRole::Twiddle => InstrCategory::TwiddleLoad,
                };
                Self {
                    instr_index,
                    kind: "read".into(),
                    category: category.name().into(),
                    addresses,
                    active,
                    reg: Some(*dest),
                    blocking: None,
                }
            }
            WarpOp::Write {
                requests,
                src,
                blocking,
            } => {
                let (addresses, active) = lanes(requests);
                Self {
                    instr_index,
                    kind: "write".into(),
                    category: InstrCategory::Store.name().into(),
                    addresses,
                    active,
                    reg: Some(*src),
                    blocking: Some(*blocking),
                }
            }
        }
    }
}

/// Flat shared-memory contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharedMemoryImage {
    pub words: Vec<u32>,
    pub layout: Layout,
}

impl SharedMemoryImage {
    pub fn zeroed(words: usize) -> Self {
        Self {
            words: vec![0; words],
            layout: Layout {
                data_base: 0,
                twiddle_base: 0,
            },
        }
    }

    /// Row-major `n × n` matrix with `M[i][j] = i * n + j`.
    pub fn for_transpose(n: u32, words: usize) -> Self {
        let mut image = Self::zeroed(words);
        for (i, w) in image.words.iter_mut().take((n * n) as usize).enumerate() {
            *w = i as u32;
        }
        image
    }

    /// Interleaved (re, im) data at word 0 followed by the twiddle table.
    pub fn for_fft(
        radix: u32,
        points: u32,
        input: &[num_complex::Complex32],
        direction: FftDirection,
        words: usize,
    ) -> Result<Self, KernelError> {
        let table = twiddle_table(radix, points, direction)?;
        let twiddle_base = 2 * points;
        let mut image = Self::zeroed(words.max(twiddle_base as usize + table.words.len()));
        image.layout = Layout {
            data_base: 0,
            twiddle_base,
        };
        image.store_complex(0, input);
        image.words[twiddle_base as usize..twiddle_base as usize + table.words.len()]
            .copy_from_slice(&table.words);
        Ok(image)
    }

    pub fn store_complex(&mut self, base: usize, values: &[num_complex::Complex32]) {
        for (k, v) in values.iter().enumerate() {
            self.words[base + 2 * k] = v.re.to_bits();
            self.words[base + 2 * k + 1] = v.im.to_bits();
        }
    }

    pub fn load_complex(&self, base: usize, count: usize) -> Vec<num_complex::Complex32> {
        (0..count)
            .map(|k| {
                num_complex::Complex32::new(
                    f32::from_bits(self.words[base + 2 * k]),
                    f32::from_bits(self.words[base + 2 * k + 1]),
                )
            })
            .collect()
    }

    /// SHA-256 of the little-endian words, hex encoded.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for w in &self.words {
            hasher.update(w.to_le_bytes());
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Word-level access path used by the executor. Addresses are bounds
/// checked before they reach the port.
pub trait MemoryPort {
    fn words(&self) -> usize;
    fn read(&mut self, op: &LaneRequestSet) -> [Option<u32>; LANES];
    fn write(&mut self, op: &LaneRequestSet, data: &[Option<u32>; LANES]);
}

impl MemoryPort for SharedMemoryImage {
    fn words(&self) -> usize {
        self.words.len()
    }

    fn read(&mut self, op: &LaneRequestSet) -> [Option<u32>; LANES] {
        op.lanes().map(|a| a.map(|a| self.words[a as usize]))
    }

    fn write(&mut self, op: &LaneRequestSet, data: &[Option<u32>; LANES]) {
        // Ascending lane order: the highest lane wins on a duplicate address.
        for (lane, address) in op.active() {
            if let Some(value) = data[lane] {
                self.words[address as usize] = value;
            }
        }
    }
}

/// Per-thread register state while a trace runs.
struct ThreadState {
    regs: Vec<Registers>,
    written: Vec<u32>,
}

/// Runs `trace` instruction by instruction against `port`, calling
/// `observe` before each memory instruction executes.
pub fn execute_on<P: MemoryPort>(
    trace: &KernelTrace,
    port: &mut P,
    mut observe: impl FnMut(usize, &Instruction),
) -> Result<(), ExecError> {
    let threads = trace.threads as usize;
    let expected = trace.ops_per_instruction();
    let mut state = ThreadState {
        regs: vec![[0; REGISTERS]; threads],
        written: vec![0; threads],
    };
    for (instr, instruction) in trace.instructions.iter().enumerate() {
        match instruction {
            Instruction::Compute(c) => {
                let Some(func) = &c.func else { continue };
                for t in 0..threads {
                    let missing = c.uses & !state.written[t];
                    if missing != 0 {
                        return Err(ExecError::UnwrittenRegister {
                            instr,
                            op: t / LANES,
                            lane: t % LANES,
                            reg: missing.trailing_zeros() as usize,
                        });
                    }
                    func(&mut state.regs[t]);
                    state.written[t] |= c.defs;
                }
            }
            Instruction::Read { dest, ops, .. } | Instruction::Write { src: dest, ops, .. } => {
                let reg = *dest as usize;
                if reg >= REGISTERS {
                    return Err(ExecError::BadRegister { instr, reg });
                }
                if ops.len() != expected {
                    return Err(ExecError::OpCount {
                        instr,
                        ops: ops.len(),
                        expected,
                    });
                }
                let words = port.words();
                for (op, requests) in ops.iter().enumerate() {
                    if let Some((lane, address)) =
                        requests.active().find(|(_, a)| *a as usize >= words)
                    {
                        return Err(ExecError::OutOfBounds {
                            instr,
                            op,
                            lane,
                            address,
                            words,
                        });
                    }
                }
                observe(instr, instruction);
                let is_read = matches!(instruction, Instruction::Read { .. });
                for (op, requests) in ops.iter().enumerate() {
                    let base = op * LANES;
                    if is_read {
                        let data = port.read(requests);
                        for (lane, value) in data.iter().enumerate() {
                            if let Some(v) = value {
                                state.regs[base + lane][reg] = *v;
                                state.written[base + lane] |= 1 << reg;
                            }
                        }
                    } else {
                        let mut data = [None; LANES];
                        for (lane, _) in requests.active() {
                            let t = base + lane;
                            if state.written[t] & (1 << reg) == 0 {
                                return Err(ExecError::UnwrittenRegister {
                                    instr,
                                    op,
                                    lane,
                                    reg,
                                });
                            }
                            data[lane] = Some(state.regs[t][reg]);
                        }
                        port.write(requests, &data);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Runs the trace on a flat memory image and returns the final contents.
pub fn execute_functional(
    trace: &KernelTrace,
    mut memory: SharedMemoryImage,
) -> Result<SharedMemoryImage, ExecError> {
    execute_on(trace, &mut memory, |_, _| {})?;
    Ok(memory)
}

/// Small builder shared by the generators.
pub(crate) struct TraceBuilder {
    threads: u32,
    instructions: Vec<Instruction>,
}

impl TraceBuilder {
    pub(crate) fn new(threads: u32) -> Self {
        Self {
            threads,
            instructions: Vec::new(),
        }
    }

    /// `count` machine instructions of one category with no register effect.
    pub(crate) fn overhead(&mut self, category: ComputeCategory, count: u64) {
        self.compute(category, count, 0, 0, None);
    }

    pub(crate) fn compute(
        &mut self,
        category: ComputeCategory,
        count: u64,
        uses: u32,
        defs: u32,
        func: Option<LaneFn>,
    ) {
        if count == 0 && func.is_none() {
            return;
        }
        self.instructions.push(Instruction::Compute(ComputeOp {
            category,
            warp_ops: count * (self.threads as u64 / LANES as u64),
            uses,
            defs,
            func,
        }));
    }

    pub(crate) fn read(&mut self, role: ReadRole, dest: u8, ops: Vec<LaneRequestSet>) {
        self.instructions
            .push(Instruction::Read { role, dest, ops });
    }

    pub(crate) fn write(&mut self, src: u8, ops: Vec<LaneRequestSet>) {
        self.instructions.push(Instruction::Write {
            src,
            blocking: true,
            ops,
        });
    }

    pub(crate) fn finish(self, meta: TraceMeta) -> KernelTrace {
        KernelTrace {
            threads: self.threads,
            instructions: self.instructions,
            meta,
        }
    }
}

/// Register mask covering `r0..r(count-1)`.
pub(crate) fn reg_mask(count: usize) -> u32 {
    if count >= 32 {
        u32::MAX
    } else {
        (1u32 << count) - 1
    }
}
