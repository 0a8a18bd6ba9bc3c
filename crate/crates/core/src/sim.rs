//! Execution engine: walks a trace against a memory architecture, producing
//! the final memory image and a cycle breakdown.

use crate::kernels::{
    execute_on, ExecError, FftDirection, Instruction, KernelError, KernelSpec, KernelTrace,
    MemoryPort, ReadRole, SharedMemoryImage,
};
use crate::mem_arch::{build_schedule, BankedConfig, LaneRequestSet, LANES};
use crate::timing::{
    conflict_sum, cycles_to_microseconds, multiport_cycles, round_hundredths, ArchKind,
    InstrCategory, MemArchitecture, Overhead, TimingError, TimingParams,
};
use num_complex::Complex32;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Seed of the default FFT input signal.
pub const DEFAULT_INPUT_SEED: u64 = 0x5eed;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{arch} supports at most {capacity_kb} KB, {requested_kb} KB requested")]
    CapacityExceeded {
        arch: String,
        capacity_kb: u32,
        requested_kb: u32,
    },
    #[error("kernel needs {needed} words but {arch} holds {available}")]
    TraceTooLarge {
        arch: String,
        needed: usize,
        available: usize,
    },
    #[error("banked architecture has no bank configuration")]
    MissingBankConfig,
    #[error("bank efficiency needs a non-zero cycle count")]
    ZeroCycles,
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Timing(#[from] TimingError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Cycles per instruction category plus the overlap credit earned by
/// non-blocking writes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleBreakdown {
    pub fp: u64,
    pub int: u64,
    pub immediate: u64,
    pub other: u64,
    pub load: u64,
    pub store: u64,
    pub twiddle_load: u64,
    pub overlap_credit: u64,
    pub total: u64,
}

impl CycleBreakdown {
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

    fn get_mut(&mut self, category: InstrCategory) -> &mut u64 {
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

    pub fn category_sum(&self) -> u64 {
        InstrCategory::ALL.iter().map(|c| self.get(*c)).sum()
    }

    /// Compute-only cycles (fp + int + immediate + other).
    pub fn common(&self) -> u64 {
        self.fp + self.int + self.immediate + self.other
    }
}

/// Memory operation counts (16 requests each) per direction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemOps {
    pub load: u64,
    pub store: u64,
    pub twiddle_load: u64,
}

/// Percentages rounded to 0.1. Bank efficiencies exist only for banked
/// memories and only for directions the kernel uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Efficiencies {
    pub read_bank: Option<f64>,
    pub write_bank: Option<f64>,
    pub twiddle_bank: Option<f64>,
    pub compute: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub schema_version: u32,
    pub kernel: String,
    pub arch: String,
    pub cycles: CycleBreakdown,
    pub ops: MemOps,
    pub efficiencies: Efficiencies,
    pub time_us: f64,
    pub checksum: String,
}

pub struct SimOutcome {
    pub metrics: SimMetrics,
    pub memory: SharedMemoryImage,
}

/// `100 * num_ops / cycles`.
pub fn bank_efficiency(num_ops: u64, cycles: u64) -> Result<f64, SimError> {
    if cycles == 0 {
        return Err(SimError::ZeroCycles);
    }
    Ok(100.0 * num_ops as f64 / cycles as f64)
}

/// Share of total cycles spent on floating-point work; 0 for an empty run.
pub fn compute_efficiency(metrics: &SimMetrics) -> f64 {
    compute_share(metrics.cycles.fp, metrics.cycles.total)
}

fn compute_share(fp: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * fp as f64 / total as f64
    }
}

pub fn round_tenths(value: f64) -> f64 {
    (value * 10.0).round() / 10.0
}

/// Deterministic uniform input in [-1, 1) for both components.
pub fn random_signal(points: usize, seed: u64) -> Vec<Complex32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..points)
        .map(|_| Complex32::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

/// The starting memory the simulator uses for a kernel: the index matrix for
/// transposes, a seeded random signal plus twiddles for FFTs.
pub fn default_image(kernel: &KernelSpec, words: usize) -> Result<SharedMemoryImage, KernelError> {
    match *kernel {
        KernelSpec::Transpose { n } => Ok(SharedMemoryImage::for_transpose(n, words)),
        KernelSpec::Fft { radix, points } => SharedMemoryImage::for_fft(
            radix,
            points,
            &random_signal(points as usize, DEFAULT_INPUT_SEED),
            FftDirection::Forward,
            words,
        ),
    }
}

/// Per-bank storage; reads and writes go through the arbiter schedule.
struct BankedStore {
    config: BankedConfig,
    banks: Vec<Vec<u32>>,
}

impl BankedStore {
    fn new(config: BankedConfig, image: &SharedMemoryImage) -> Self {
        let mut banks = vec![vec![0; config.words_per_bank]; config.num_banks];
        for (address, &w) in image.words.iter().enumerate() {
            let a = address as u32;
            banks[config.mapping.bank_of(a)][config.mapping.local_index(a) as usize] = w;
        }
        Self { config, banks }
    }

    fn flatten(&self, layout: crate::kernels::Layout) -> SharedMemoryImage {
        let mut image = SharedMemoryImage::zeroed(self.config.total_words());
        image.layout = layout;
        for (address, w) in image.words.iter_mut().enumerate() {
            let a = address as u32;
            *w = self.banks[self.config.mapping.bank_of(a)]
                [self.config.mapping.local_index(a) as usize];
        }
        image
    }
}

impl MemoryPort for BankedStore {
    fn words(&self) -> usize {
        self.config.total_words()
    }

    fn read(&mut self, op: &LaneRequestSet) -> [Option<u32>; LANES] {
        let schedule = build_schedule(op, &self.config);
        let mapping = self.config.mapping;
        // Bank outputs by issue cycle, then routed to lanes by the output mux.
        let issued: Vec<Vec<Option<u32>>> = (0..schedule.duration() as usize)
            .map(|c| {
                schedule
                    .grants(c)
                    .iter()
                    .enumerate()
                    .map(|(bank, lane)| {
                        lane.map(|l| {
                            let a = op.lane(l as usize).expect("granted lane is active");
                            self.banks[bank][mapping.local_index(a) as usize]
                        })
                    })
                    .collect()
            })
            .collect();
        let latency = schedule.bank_latency() as usize;
        let mut out = [None; LANES];
        for cycle in 0..schedule.span() as usize {
            for (lane, bank) in schedule.output_mux(cycle).iter().enumerate() {
                if let Some(bank) = bank {
                    out[lane] = issued[cycle - latency][*bank as usize];
                }
            }
        }
        out
    }

    fn write(&mut self, op: &LaneRequestSet, data: &[Option<u32>; LANES]) {
        let schedule = build_schedule(op, &self.config);
        let mapping = self.config.mapping;
        for (_, bank, lane) in schedule.grant_list() {
            let a = op.lane(lane).expect("granted lane is active");
            if let Some(v) = data[lane] {
                self.banks[bank][mapping.local_index(a) as usize] = v;
            }
        }
    }
}

/// Replicated copies, one per read port; lane `l` reads copy `l % ports` and
/// every write is broadcast.
struct ReplicatedStore {
    copies: Vec<SharedMemoryImage>,
}

impl MemoryPort for ReplicatedStore {
    fn words(&self) -> usize {
        self.copies[0].words.len()
    }

    fn read(&mut self, op: &LaneRequestSet) -> [Option<u32>; LANES] {
        let ports = self.copies.len();
        let mut out = [None; LANES];
        for (lane, address) in op.active() {
            out[lane] = Some(self.copies[lane % ports].words[address as usize]);
        }
        out
    }

    fn write(&mut self, op: &LaneRequestSet, data: &[Option<u32>; LANES]) {
        for copy in &mut self.copies {
            copy.write(op, data);
        }
    }
}

fn check_capacity(arch: &MemArchitecture) -> Result<(), SimError> {
    let cap = arch.kind.capacity_kb();
    if arch.memory_kb > cap {
        return Err(SimError::CapacityExceeded {
            arch: arch.label(),
            capacity_kb: cap,
            requested_kb: arch.memory_kb,
        });
    }
    Ok(())
}

/// Overhead charged to the next instruction of a stream that has already
/// issued `*issued`, so that fractional overheads sum exactly.
fn marginal(overhead: Overhead, issued: &mut u64) -> u64 {
    let d = overhead.total(*issued + 1) - overhead.total(*issued);
    *issued += 1;
    d
}

/// Cycle accounting for the trace alone (no data movement).
pub fn time_trace(
    trace: &KernelTrace,
    arch: &MemArchitecture,
    params: &TimingParams,
) -> Result<(CycleBreakdown, MemOps), SimError> {
    let banked = match arch.kind {
        ArchKind::Banked => Some(arch.banked.ok_or(SimError::MissingBankConfig)?),
        _ => None,
    };
    let mut cycles = CycleBreakdown::default();
    let mut ops = MemOps::default();
    // Occupancy of the last non-blocking write still available to hide compute.
    let mut pending = 0u64;
    let (mut reads, mut writes) = (0u64, 0u64);
    for instr in &trace.instructions {
        match instr {
            Instruction::Compute(c) => {
                *cycles.get_mut(c.category.into()) += c.warp_ops;
                let hidden = pending.min(c.warp_ops);
                cycles.overlap_credit += hidden;
                pending -= hidden;
            }
            Instruction::Read {
                role, ops: reqs, ..
            } => {
                pending = 0;
                let cost = match &banked {
                    Some(config) => {
                        conflict_sum(reqs, &config.mapping)
                            + marginal(params.per_instruction_overhead_read, &mut reads)
                    }
                    None => multiport_cycles(reqs.len() as u64, params.multiport_read_ports)?,
                };
                let (category, count) = match role {
                    ReadRole::Data => (InstrCategory::Load, &mut ops.load),
                    ReadRole::Twiddle => (InstrCategory::TwiddleLoad, &mut ops.twiddle_load),
                };
                *count += reqs.len() as u64;
                *cycles.get_mut(category) += cost;
            }
            Instruction::Write {
                ops: reqs,
                blocking,
                ..
            } => {
                let n = reqs.len() as u64;
                let overhead = params.per_instruction_overhead_write;
                let cost = match (arch.kind, &banked) {
                    (ArchKind::Banked, Some(config)) => {
                        conflict_sum(reqs, &config.mapping) + marginal(overhead, &mut writes)
                    }
                    (ArchKind::MultiPort4R1WVb, _) => {
                        conflict_sum(reqs, &params.vb_mapping) + marginal(overhead, &mut writes)
                    }
                    (ArchKind::MultiPort4R2W, _) => {
                        multiport_cycles(n, params.multiport_write_ports_2w)?
                    }
                    _ => multiport_cycles(n, params.multiport_write_ports_1w)?,
                };
                ops.store += n;
                cycles.store += cost;
                pending = if *blocking { 0 } else { cost };
            }
        }
    }
    cycles.total = cycles.category_sum() - cycles.overlap_credit;
    Ok((cycles, ops))
}

/// Runs `trace` on `arch` starting from `memory`.
pub fn simulate(
    trace: &KernelTrace,
    memory: SharedMemoryImage,
    arch: &MemArchitecture,
    params: &TimingParams,
) -> Result<SimOutcome, SimError> {
    check_capacity(arch)?;
    let available = arch.memory_words();
    if trace.memory_words() > available || memory.words.len() > available {
        return Err(SimError::TraceTooLarge {
            arch: arch.label(),
            needed: trace.memory_words().max(memory.words.len()),
            available,
        });
    }
    if arch.kind == ArchKind::MultiPort4R1WVb {
        params
            .vb_mapping
            .validate(crate::mem_arch::address_bits_for(available))
            .map_err(TimingError::from)?;
    }
    let (cycles, ops) = time_trace(trace, arch, params)?;

    let layout = memory.layout;
    let mut padded = memory;
    padded.words.resize(available, 0);
    let memory = match arch.kind {
        ArchKind::Banked => {
            let config = arch.banked.ok_or(SimError::MissingBankConfig)?;
            let mut store = BankedStore::new(config, &padded);
            execute_on(trace, &mut store, |_, _| {})?;
            store.flatten(layout)
        }
        _ => {
            let mut store = ReplicatedStore {
                copies: vec![padded; params.multiport_read_ports.max(1) as usize],
            };
            execute_on(trace, &mut store, |_, _| {})?;
            store.copies.swap_remove(0)
        }
    };

    let banked_eff = |n: u64, c: u64| -> Result<Option<f64>, SimError> {
        if arch.kind != ArchKind::Banked || n == 0 {
            return Ok(None);
        }
        Ok(Some(round_tenths(bank_efficiency(n, c)?)))
    };
    let efficiencies = Efficiencies {
        read_bank: banked_eff(ops.load, cycles.load)?,
        write_bank: banked_eff(ops.store, cycles.store)?,
        twiddle_bank: banked_eff(ops.twiddle_load, cycles.twiddle_load)?,
        compute: round_tenths(compute_share(cycles.fp, cycles.total)),
    };
    let metrics = SimMetrics {
        schema_version: METRICS_SCHEMA_VERSION,
        kernel: trace.meta.kernel.label(),
        arch: arch.label(),
        cycles,
        ops,
        efficiencies,
        time_us: round_hundredths(cycles_to_microseconds(cycles.total, arch.clock_mhz)),
        checksum: memory.checksum(),
    };
    Ok(SimOutcome { metrics, memory })
}

/// Runs `trace` on `arch` from the kernel's default starting memory.
pub fn run(
    trace: &KernelTrace,
    arch: &MemArchitecture,
    params: &TimingParams,
) -> Result<SimMetrics, SimError> {
    check_capacity(arch)?;
    let image = default_image(&trace.meta.kernel, trace.memory_words())?;
    Ok(simulate(trace, image, arch, params)?.metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{execute_functional, gen_fft, gen_transpose, GenMode};
    use crate::mem_arch::BankMapping;

    fn params() -> TimingParams {
        TimingParams::default()
    }

    #[test]
    fn published_multiport_transpose_totals() {
        let t = gen_transpose(32, GenMode::Calibrated).unwrap();
        let m = run(&t, &MemArchitecture::multiport_4r1w(64), &params()).unwrap();
        assert_eq!(
            (m.cycles.load, m.cycles.store, m.cycles.total),
            (256, 1024, 1671)
        );
        assert_eq!(m.time_us, 2.17);
        let t = gen_transpose(64, GenMode::Calibrated).unwrap();
        let m = run(&t, &MemArchitecture::multiport_4r2w(64), &params()).unwrap();
        assert_eq!(m.cycles.total, 3431);
        assert_eq!(m.time_us, 5.72);
    }

    #[test]
    fn efficiency_formulas() {
        assert_eq!(round_tenths(bank_efficiency(64, 168).unwrap()), 38.1);
        assert_eq!(round_tenths(bank_efficiency(64, 106).unwrap()), 60.4);
        assert_eq!(round_tenths(bank_efficiency(64, 1054).unwrap()), 6.1);
        assert_eq!(bank_efficiency(7, 7).unwrap(), 100.0);
        assert!(matches!(bank_efficiency(1, 0), Err(SimError::ZeroCycles)));
        assert_eq!(round_tenths(compute_share(12384, 37214)), 33.3);
        assert_eq!(round_tenths(compute_share(13440, 86817)), 15.5);
        assert_eq!(compute_share(50, 50), 100.0);
    }

    #[test]
    fn capacity_and_size_errors() {
        let t = gen_transpose(32, GenMode::Native).unwrap();
        assert!(matches!(
            run(&t, &MemArchitecture::multiport_4r1w(128), &params()),
            Err(SimError::CapacityExceeded {
                capacity_kb: 112,
                ..
            })
        ));
        assert!(matches!(
            run(&t, &MemArchitecture::multiport_4r2w(256), &params()),
            Err(SimError::CapacityExceeded {
                capacity_kb: 224,
                ..
            })
        ));
        let big = gen_transpose(128, GenMode::Native).unwrap();
        assert!(matches!(
            run(&big, &MemArchitecture::multiport_4r1w(32), &params()),
            Err(SimError::TraceTooLarge { .. })
        ));
    }

    #[test]
    fn memory_matches_flat_execution_on_every_arch() {
        let trace = gen_fft(8, 512, GenMode::Native).unwrap();
        let start = default_image(&trace.meta.kernel, trace.memory_words()).unwrap();
        let mut want = execute_functional(&trace, start.clone()).unwrap();
        want.words.resize(16384, 0);
        let archs = [
            MemArchitecture::multiport_4r1w(64),
            MemArchitecture::multiport_4r2w(64),
            MemArchitecture::multiport_4r1w_vb(64),
            MemArchitecture::banked(BankMapping::lsb(4).unwrap(), 64).unwrap(),
            MemArchitecture::banked(BankMapping::bit_slice(2, 4).unwrap(), 64).unwrap(),
            MemArchitecture::banked(BankMapping::lsb(2).unwrap(), 64).unwrap(),
        ];
        for arch in archs {
            let out = simulate(&trace, start.clone(), &arch, &params()).unwrap();
            assert_eq!(out.memory.words, want.words, "{}", arch.label());
            assert_eq!(out.metrics.checksum, want.checksum());
        }
    }

    #[test]
    fn stream_costs_match_timing_functions() {
        use crate::timing::{banked_read_cycles, banked_write_cycles, vb_write_cycles};
        let trace = gen_fft(8, 4096, GenMode::Native).unwrap();
        let p = params();
        let reads: Vec<&[LaneRequestSet]> = trace
            .instructions
            .iter()
            .filter(|i| matches!(i, Instruction::Read { .. }))
            .map(|i| i.memory_ops().unwrap())
            .collect();
        let writes: Vec<&[LaneRequestSet]> = trace
            .instructions
            .iter()
            .filter(|i| matches!(i, Instruction::Write { .. }))
            .map(|i| i.memory_ops().unwrap())
            .collect();
        let arch = MemArchitecture::banked(BankMapping::lsb(3).unwrap(), 64).unwrap();
        let config = arch.banked.unwrap();
        let (c, _) = time_trace(&trace, &arch, &p).unwrap();
        assert_eq!(
            c.load + c.twiddle_load,
            banked_read_cycles(&reads, &config, &p)
        );
        assert_eq!(
            c.store,
            banked_write_cycles(&writes, &config, &p, true).cycles
        );
        let (c, _) = time_trace(&trace, &MemArchitecture::multiport_4r1w_vb(64), &p).unwrap();
        assert_eq!(c.store, vb_write_cycles(&writes, &p.vb_mapping, &p));
    }

    #[test]
    fn transpose_store_stream_overhead() {
        let t = gen_transpose(32, GenMode::Native).unwrap();
        let arch = MemArchitecture::banked(BankMapping::lsb(4).unwrap(), 64).unwrap();
        assert_eq!(run(&t, &arch, &params()).unwrap().cycles.store, 1054);
    }

    #[test]
    fn blocking_kernels_earn_no_credit() {
        let t = gen_transpose(64, GenMode::Native).unwrap();
        let arch = MemArchitecture::banked(BankMapping::lsb(4).unwrap(), 64).unwrap();
        let m = run(&t, &arch, &params()).unwrap();
        assert_eq!(m.cycles.overlap_credit, 0);
        assert_eq!(m.cycles.total, m.cycles.category_sum());
        assert_eq!(m.efficiencies.twiddle_bank, None);
        assert!(m.efficiencies.read_bank.is_some());
    }

    #[test]
    fn metrics_round_trip_json() {
        let t = gen_transpose(32, GenMode::Calibrated).unwrap();
        let m = run(&t, &MemArchitecture::multiport_4r1w(64), &params()).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<SimMetrics>(&text).unwrap(), m);
    }
}
