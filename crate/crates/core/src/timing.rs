//! Cycle accounting for memory instructions on each memory architecture.
//!
//! A memory instruction is `threads / 16` operations. On a banked memory the
//! controller issues operations back to back, each spaced by its worst bank
//! conflict, and pays a fixed per-instruction overhead (issue latency, bank
//! latency and writeback drain). Multi-port memories serialize the 16 requests
//! of every operation over their ports with no address dependence.

use crate::mem_arch::{
    conflict_profile, BankMapping, BankedConfig, ConfigError, LaneRequestSet, LANES,
};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

pub const CLOCK_MHZ: f64 = 771.0;
/// The 4R-2W memory runs its M20Ks in emulated true-dual-port mode.
pub const CLOCK_MHZ_4R2W: f64 = 600.0;

pub const KB_WORDS: usize = 1024 / crate::mem_arch::WORD_BYTES;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimingError {
    #[error("unsupported port count {0} (expected 1, 2 or 4)")]
    InvalidPorts(u32),
    #[error("invalid overhead `{0}` (expected an integer or `cycles/instructions`)")]
    InvalidOverhead(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchKind {
    MultiPort4R1W,
    MultiPort4R2W,
    MultiPort4R1WVb,
    Banked,
}

impl ArchKind {
    /// Largest shared memory the architecture can hold, in KB.
    pub fn capacity_kb(&self) -> u32 {
        match self {
            ArchKind::MultiPort4R1W | ArchKind::MultiPort4R1WVb => 112,
            ArchKind::MultiPort4R2W => 224,
            ArchKind::Banked => 448,
        }
    }

    pub fn is_multiport(&self) -> bool {
        !matches!(self, ArchKind::Banked)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemArchitecture {
    pub kind: ArchKind,
    pub banked: Option<BankedConfig>,
    pub clock_mhz: f64,
    pub memory_kb: u32,
}

impl MemArchitecture {
    pub fn multiport_4r1w(memory_kb: u32) -> Self {
        Self::multiport(ArchKind::MultiPort4R1W, memory_kb)
    }

    pub fn multiport_4r2w(memory_kb: u32) -> Self {
        Self::multiport(ArchKind::MultiPort4R2W, memory_kb)
    }

    pub fn multiport_4r1w_vb(memory_kb: u32) -> Self {
        Self::multiport(ArchKind::MultiPort4R1WVb, memory_kb)
    }

    fn multiport(kind: ArchKind, memory_kb: u32) -> Self {
        let clock_mhz = if kind == ArchKind::MultiPort4R2W {
            CLOCK_MHZ_4R2W
        } else {
            CLOCK_MHZ
        };
        Self {
            kind,
            banked: None,
            clock_mhz,
            memory_kb,
        }
    }

    pub fn banked(mapping: BankMapping, memory_kb: u32) -> Result<Self, ConfigError> {
        let config = BankedConfig::new(mapping, memory_kb as usize * KB_WORDS)?;
        Ok(Self {
            kind: ArchKind::Banked,
            banked: Some(config),
            clock_mhz: CLOCK_MHZ,
            memory_kb,
        })
    }

    pub fn memory_words(&self) -> usize {
        self.memory_kb as usize * KB_WORDS
    }

    /// Short identifier, e.g. `4r1w`, `banked16-lsb`, `banked8-offset2`.
    pub fn label(&self) -> String {
        match (self.kind, &self.banked) {
            (ArchKind::MultiPort4R1W, _) => "4r1w".into(),
            (ArchKind::MultiPort4R2W, _) => "4r2w".into(),
            (ArchKind::MultiPort4R1WVb, _) => "4r1w-vb".into(),
            (ArchKind::Banked, Some(c)) => format!("banked{}-{}", c.num_banks, c.mapping),
            (ArchKind::Banked, None) => "banked".into(),
        }
    }
}

/// Fixed cost per memory instruction, possibly fractional: `cycles` spread
/// over `per_instructions` instructions. The total for `n` instructions is
/// `floor(n * cycles / per_instructions)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "OverheadRepr", into = "String")]
pub struct Overhead {
    pub cycles: u32,
    pub per_instructions: u32,
}

impl Overhead {
    pub const fn per_instruction(cycles: u32) -> Self {
        Self {
            cycles,
            per_instructions: 1,
        }
    }

    pub fn total(&self, instructions: u64) -> u64 {
        instructions * self.cycles as u64 / self.per_instructions as u64
    }
}

impl fmt::Display for Overhead {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.per_instructions == 1 {
            write!(f, "{}", self.cycles)
        } else {
            write!(f, "{}/{}", self.cycles, self.per_instructions)
        }
    }
}

impl FromStr for Overhead {
    type Err = TimingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TimingError::InvalidOverhead(s.to_string());
        let (cycles, per) = match s.split_once('/') {
            Some((c, p)) => (c.trim(), p.trim()),
            None => (s.trim(), "1"),
        };
        let cycles = cycles.parse().map_err(|_| bad())?;
        let per_instructions: u32 = per.parse().map_err(|_| bad())?;
        if per_instructions == 0 {
            return Err(bad());
        }
        Ok(Self {
            cycles,
            per_instructions,
        })
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OverheadRepr {
    Int(u32),
    Text(String),
}

impl TryFrom<OverheadRepr> for Overhead {
    type Error = TimingError;

    fn try_from(value: OverheadRepr) -> Result<Self, Self::Error> {
        match value {
            OverheadRepr::Int(c) => Ok(Overhead::per_instruction(c)),
            OverheadRepr::Text(s) => s.parse(),
        }
    }
}

impl From<Overhead> for String {
    fn from(o: Overhead) -> String {
        o.to_string()
    }
}

/// Timing constants. The per-instruction overheads are calibration values:
///
/// * read: a conflict-free 32×32 transpose load stream (64 operations in four
///   instructions) measures 168 cycles on 16 banks, so each instruction adds
///   26 cycles on top of its conflict count (5 cycles of issue latency, 3 of
///   bank latency, 18 of writeback drain).
/// * write: the fully conflicting 32×32 store stream (1024 conflict cycles in
///   four instructions) measures 1054, i.e. 30 cycles per four instructions;
///   the 64×64 (120 per 16) and 128×128 (480 per 64) streams give the same
///   7.5 cycles per instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingParams {
    pub read_issue_latency: u32,
    pub bank_latency: u32,
    pub per_instruction_overhead_read: Overhead,
    pub per_instruction_overhead_write: Overhead,
    pub multiport_read_ports: u32,
    pub multiport_write_ports_1w: u32,
    pub multiport_write_ports_2w: u32,
    /// Sub-memory selector for 4R-1W-VB writes.
    pub vb_mapping: BankMapping,
}

/// Default 4R-1W-VB sub-memory selector: address bits [12:11], i.e. the four
/// quarters of an 8192-word dataset.
pub fn default_vb_mapping() -> BankMapping {
    BankMapping::bit_slice(11, 2).expect("static mapping")
}

impl Default for TimingParams {
    fn default() -> Self {
        Self {
            read_issue_latency: 5,
            bank_latency: crate::mem_arch::DEFAULT_BANK_LATENCY,
            per_instruction_overhead_read: Overhead::per_instruction(26),
            per_instruction_overhead_write: Overhead {
                cycles: 15,
                per_instructions: 2,
            },
            multiport_read_ports: 4,
            multiport_write_ports_1w: 1,
            multiport_write_ports_2w: 2,
            vb_mapping: default_vb_mapping(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstrCategory {
    FpOp,
    IntOp,
    ImmediateOp,
    OtherOp,
    Load,
    Store,
    TwiddleLoad,
}

impl InstrCategory {
    pub const ALL: [InstrCategory; 7] = [
        InstrCategory::FpOp,
        InstrCategory::IntOp,
        InstrCategory::ImmediateOp,
        InstrCategory::OtherOp,
        InstrCategory::Load,
        InstrCategory::Store,
        InstrCategory::TwiddleLoad,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            InstrCategory::FpOp => "fp",
            InstrCategory::IntOp => "int",
            InstrCategory::ImmediateOp => "immediate",
            InstrCategory::OtherOp => "other",
            InstrCategory::Load => "load",
            InstrCategory::Store => "store",
            InstrCategory::TwiddleLoad => "twiddle_load",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstrTiming {
    pub category: InstrCategory,
    pub cycles: u64,
}

/// Σ max_conflicts over the operations of one instruction.
pub fn conflict_sum(ops: &[LaneRequestSet], mapping: &BankMapping) -> u64 {
    ops.iter()
        .map(|op| conflict_profile(op, mapping).max_conflicts() as u64)
        .sum()
}

/// Cycles for a stream of read instructions on a banked memory.
pub fn banked_read_cycles(
    instructions: &[&[LaneRequestSet]],
    config: &BankedConfig,
    params: &TimingParams,
) -> u64 {
    let conflicts: u64 = instructions
        .iter()
        .map(|ops| conflict_sum(ops, &config.mapping))
        .sum();
    conflicts
        + params
            .per_instruction_overhead_read
            .total(instructions.len() as u64)
}

/// Banked write cost. `cycles` is the memory occupancy; a non-blocking write
/// releases the instruction pipeline after issue, so the caller may overlap
/// it with following compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteCost {
    pub cycles: u64,
    pub blocking: bool,
}

pub fn banked_write_cycles(
    instructions: &[&[LaneRequestSet]],
    config: &BankedConfig,
    params: &TimingParams,
    blocking: bool,
) -> WriteCost {
    let conflicts: u64 = instructions
        .iter()
        .map(|ops| conflict_sum(ops, &config.mapping))
        .sum();
    WriteCost {
        cycles: conflicts
            + params
                .per_instruction_overhead_write
                .total(instructions.len() as u64),
        blocking,
    }
}

/// Each 16-request operation serialized over `ports` ports.
pub fn multiport_cycles(num_operations: u64, ports: u32) -> Result<u64, TimingError> {
    match ports {
        1 | 2 | 4 => Ok(num_operations * (LANES as u64 / ports as u64)),
        other => Err(TimingError::InvalidPorts(other)),
    }
}

/// 4R-1W-VB writes: the replicated memory acts as four single-write-port
/// sub-memories chosen by `vb_mapping`, arbitrated like a 4-bank memory.
pub fn vb_write_cycles(
    instructions: &[&[LaneRequestSet]],
    vb_mapping: &BankMapping,
    params: &TimingParams,
) -> u64 {
    let conflicts: u64 = instructions
        .iter()
        .map(|ops| conflict_sum(ops, vb_mapping))
        .sum();
    conflicts
        + params
            .per_instruction_overhead_write
            .total(instructions.len() as u64)
}

pub fn cycles_to_microseconds(cycles: u64, clock_mhz: f64) -> f64 {
    cycles as f64 / clock_mhz
}

/// Rounds to two decimals (the 0.01 µs reporting resolution).
pub fn round_hundredths(value: f64) -> f64 {
    (value * 100.0).round() / 100.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mem_arch::BankMapping;
    use proptest::prelude::*;

    fn banked16() -> BankedConfig {
        BankedConfig::new(BankMapping::lsb(4).unwrap(), 16384).unwrap()
    }

    /// Reference: steps a clock one cycle at a time. Each instruction first
    /// pays its overhead, then the controller holds every operation at the
    /// banks until its conflicts resolve.
    fn stepped_read_oracle(
        instructions: &[Vec<LaneRequestSet>],
        mapping: &BankMapping,
        overhead: u64,
    ) -> u64 {
        let mut clock = 0u64;
        for ops in instructions {
            for _ in 0..overhead {
                clock += 1;
            }
            for op in ops {
                let mut per_bank = vec![0u32; mapping.num_banks()];
                for (_, a) in op.active() {
                    per_bank[mapping.bank_of(a)] += 1;
                }
                while per_bank.iter().any(|&c| c > 0) {
                    for c in per_bank.iter_mut() {
                        *c = c.saturating_sub(1);
                    }
                    clock += 1;
                }
            }
        }
        clock
    }

    #[test]
    fn conflict_free_instruction() {
        let ops: Vec<_> = (0..16)
            .map(|g| LaneRequestSet::from_fn(|l| 16 * g + l as u32))
            .collect();
        let p = TimingParams::default();
        assert_eq!(banked_read_cycles(&[&ops], &banked16(), &p), 16 + 26);
    }

    #[test]
    fn fully_conflicting_instruction() {
        let ops: Vec<_> = (0..16)
            .map(|g| LaneRequestSet::from_fn(|l| g + 16 * l as u32))
            .collect();
        let p = TimingParams::default();
        assert_eq!(banked_read_cycles(&[&ops], &banked16(), &p), 256 + 26);
    }

    #[test]
    fn transpose_32_store_stream() {
        // Four store instructions of 16 column operations, stride 32.
        let n = 32u32;
        let instrs: Vec<Vec<LaneRequestSet>> = (0..4)
            .map(|t| {
                let (ib, jb) = (t / 2, t % 2);
                (0..16)
                    .map(|g| LaneRequestSet::from_fn(|l| (16 * jb + l as u32) * n + 16 * ib + g))
                    .collect()
            })
            .collect();
        let refs: Vec<&[LaneRequestSet]> = instrs.iter().map(|v| v.as_slice()).collect();
        let zero = TimingParams {
            per_instruction_overhead_write: Overhead::per_instruction(0),
            ..Default::default()
        };
        assert_eq!(
            banked_write_cycles(&refs, &banked16(), &zero, true).cycles,
            1024
        );
        let cost = banked_write_cycles(&refs, &banked16(), &TimingParams::default(), true);
        assert_eq!(cost.cycles, 1054);
    }

    #[test]
    fn single_lane_and_inactive_writes() {
        let p = TimingParams::default();
        let mut one = LaneRequestSet::inactive();
        one.set(7, Some(99));
        assert_eq!(
            banked_write_cycles(&[&[one]], &banked16(), &p, true).cycles,
            1 + 7
        );
        let none = [LaneRequestSet::inactive()];
        assert_eq!(
            banked_write_cycles(&[&none], &banked16(), &p, false).cycles,
            7
        );
    }

    #[test]
    fn multiport_examples() {
        assert_eq!(multiport_cycles(64, 4), Ok(256));
        assert_eq!(multiport_cycles(64, 1), Ok(1024));
        assert_eq!(multiport_cycles(256, 2), Ok(2048));
        assert_eq!(multiport_cycles(0, 2), Ok(0));
        assert_eq!(multiport_cycles(10, 3), Err(TimingError::InvalidPorts(3)));
    }

    #[test]
    fn vb_best_and_worst_case() {
        let p = TimingParams {
            per_instruction_overhead_write: Overhead::per_instruction(0),
            ..Default::default()
        };
        let m = BankMapping::bit_slice(2, 2).unwrap();
        let spread = [LaneRequestSet::from_fn(|l| l as u32)];
        assert_eq!(vb_write_cycles(&[&spread], &m, &p), 4);
        let same = [LaneRequestSet::from_fn(|l| 16 * l as u32)];
        assert_eq!(vb_write_cycles(&[&same], &m, &p), 16);
    }

    #[test]
    fn microseconds() {
        assert_eq!(
            round_hundredths(cycles_to_microseconds(1671, CLOCK_MHZ)),
            2.17
        );
        assert_eq!(
            round_hundredths(cycles_to_microseconds(1159, CLOCK_MHZ_4R2W)),
            1.93
        );
        assert_eq!(cycles_to_microseconds(0, CLOCK_MHZ), 0.0);
    }

    #[test]
    fn transpose_32_multiport_totals_add_up() {
        let common = 256 + 129 + 6;
        let load = multiport_cycles(64, 4).unwrap();
        assert_eq!(common + load + multiport_cycles(64, 1).unwrap(), 1671);
        assert_eq!(common + load + multiport_cycles(64, 2).unwrap(), 1159);
    }

    #[test]
    fn overhead_parsing() {
        assert_eq!(
            "26".parse::<Overhead>().unwrap(),
            Overhead::per_instruction(26)
        );
        let o: Overhead = "15/2".parse().unwrap();
        assert_eq!(o.total(4), 30);
        assert_eq!(o.total(16), 120);
        assert_eq!(o.total(64), 480);
        assert!("15/0".parse::<Overhead>().is_err());
        assert!("x".parse::<Overhead>().is_err());
        assert_eq!(o.to_string(), "15/2");
    }

    #[test]
    fn params_from_toml() {
        let p: TimingParams = toml::from_str(
            "per_instruction_overhead_read = 30\nper_instruction_overhead_write = \"7/1\"\n",
        )
        .unwrap();
        assert_eq!(
            p.per_instruction_overhead_read,
            Overhead::per_instruction(30)
        );
        assert_eq!(
            p.per_instruction_overhead_write,
            Overhead::per_instruction(7)
        );
        assert_eq!(p.read_issue_latency, 5);
        assert!(toml::from_str::<TimingParams>("nope = 1").is_err());
    }

    #[test]
    fn arch_clocks_and_labels() {
        assert_eq!(MemArchitecture::multiport_4r1w(64).clock_mhz, 771.0);
        assert_eq!(MemArchitecture::multiport_4r2w(64).clock_mhz, 600.0);
        assert_eq!(MemArchitecture::multiport_4r1w_vb(64).clock_mhz, 771.0);
        let b = MemArchitecture::banked(BankMapping::bit_slice(2, 3).unwrap(), 64).unwrap();
        assert_eq!(b.clock_mhz, 771.0);
        assert_eq!(b.label(), "banked8-offset2");
        assert_eq!(b.banked.unwrap().words_per_bank, 2048);
        assert!(MemArchitecture::multiport_4r1w(64).banked.is_none());
    }

    fn random_instr() -> impl Strategy<Value = Vec<LaneRequestSet>> {
        prop::collection::vec(
            prop::array::uniform16(prop::option::weighted(0.9, 0u32..16384))
                .prop_map(LaneRequestSet::new),
            1..20,
        )
    }

    proptest! {
        #[test]
        fn matches_stepped_oracle(instrs in prop::collection::vec(random_instr(), 1..6), w in 2u32..=4, shift in 0u32..3) {
            let m = BankMapping::bit_slice(shift, w).unwrap();
            let config = BankedConfig::new(m, 16384).unwrap();
            let p = TimingParams::default();
            let refs: Vec<&[LaneRequestSet]> = instrs.iter().map(|v| v.as_slice()).collect();
            prop_assert_eq!(banked_read_cycles(&refs, &config, &p), stepped_read_oracle(&instrs, &m, 26));
        }

        #[test]
        fn adding_requests_never_decreases(instr in random_instr(), idx in 0usize..20, lane in 0usize..16, addr in 0u32..16384) {
            let config = banked16();
            let p = TimingParams::default();
            let before = banked_read_cycles(&[&instr], &config, &p);
            let mut more = instr.clone();
            let i = idx % more.len();
            if more[i].lane(lane).is_none() {
                more[i].set(lane, Some(addr));
            }
            prop_assert!(banked_read_cycles(&[&more], &config, &p) >= before);
        }

        #[test]
        fn port_scaling(ops in 0u64..100_000) {
            prop_assert_eq!(multiport_cycles(ops, 1).unwrap(), 2 * multiport_cycles(ops, 2).unwrap());
            prop_assert_eq!(multiport_cycles(ops, 2).unwrap(), 2 * multiport_cycles(ops, 4).unwrap());
        }
    }
}
