//! Bank arbitration for one 16-lane memory operation.
//!
//! Every operation carries up to 16 requests (one per lane). A bank mapping
//! turns each request address into a bank index; the resulting one-hot
//! lane × bank matrix gives per-bank conflict counts, and a carry-based
//! arbiter per bank serializes the conflicting lanes. The number of cycles an
//! operation occupies the banks is the largest per-bank count.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Number of SIMT lanes (scalar processors) issuing one request each per clock.
pub const LANES: usize = 16;
/// Largest supported bank count.
pub const MAX_BANKS: usize = 16;
/// Default word-address width.
pub const DEFAULT_ADDRESS_BITS: u32 = 16;
/// Memory banks are 32 bits wide.
pub const WORD_BYTES: usize = 4;
/// Read latency of a memory bank, in cycles.
pub const DEFAULT_BANK_LATENCY: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("bank index width {0} is not supported (expected 2, 3 or 4)")]
    UnsupportedWidth(u32),
    #[error("bank field [{shift}+{width}) exceeds the {address_bits}-bit address")]
    FieldOutOfRange {
        shift: u32,
        width: u32,
        address_bits: u32,
    },
    #[error("{total_words} words cannot be split evenly over {banks} banks")]
    UnevenBanks { total_words: usize, banks: usize },
    #[error("bank count {0} is not supported (expected 4, 8 or 16)")]
    UnsupportedBankCount(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MappingKind {
    /// Bank index is the low `width` bits of the address.
    LsbIndex,
    /// Bank index is `width` bits of the address starting at `shift`.
    BitSlice,
}

/// Function from a word address to a bank index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BankMapping {
    kind: MappingKind,
    shift: u32,
    width: u32,
}

impl BankMapping {
    pub fn lsb(width: u32) -> Result<Self, ConfigError> {
        Self::new(MappingKind::LsbIndex, 0, width)
    }

    pub fn bit_slice(shift: u32, width: u32) -> Result<Self, ConfigError> {
        Self::new(MappingKind::BitSlice, shift, width)
    }

    /// LSB mapping for `banks` banks.
    pub fn lsb_for_banks(banks: usize) -> Result<Self, ConfigError> {
        Self::lsb(width_for_banks(banks)?)
    }

    fn new(kind: MappingKind, shift: u32, width: u32) -> Result<Self, ConfigError> {
        if !(2..=4).contains(&width) {
            return Err(ConfigError::UnsupportedWidth(width));
        }
        let shift = match kind {
            MappingKind::LsbIndex => 0,
            MappingKind::BitSlice => shift,
        };
        let mapping = Self { kind, shift, width };
        mapping.validate(32)?;
        Ok(mapping)
    }

    /// Checks that the bank field fits in an `address_bits`-wide address.
    pub fn validate(&self, address_bits: u32) -> Result<(), ConfigError> {
        if self.shift + self.width > address_bits {
            return Err(ConfigError::FieldOutOfRange {
                shift: self.shift,
                width: self.width,
                address_bits,
            });
        }
        Ok(())
    }

    pub fn kind(&self) -> MappingKind {
        self.kind
    }

    pub fn shift(&self) -> u32 {
        self.shift
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn num_banks(&self) -> usize {
        1 << self.width
    }

    #[inline]
    pub fn bank_of(&self, address: u32) -> usize {
        ((address >> self.shift) & ((1 << self.width) - 1)) as usize
    }

    /// Word offset inside the bank: the address with the bank field removed.
    #[inline]
    pub fn local_index(&self, address: u32) -> u32 {
        let low = address & ((1 << self.shift) - 1);
        let high = address >> (self.shift + self.width);
        (high << self.shift) | low
    }

    /// Inverse of (`bank_of`, `local_index`).
    pub fn global_address(&self, bank: usize, local: u32) -> u32 {
        let low = local & ((1 << self.shift) - 1);
        let high = local >> self.shift;
        (high << (self.shift + self.width)) | ((bank as u32) << self.shift) | low
    }
}

impl fmt::Display for BankMapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            MappingKind::LsbIndex => write!(f, "lsb"),
            MappingKind::BitSlice => write!(f, "offset{}", self.shift),
        }
    }
}

pub fn width_for_banks(banks: usize) -> Result<u32, ConfigError> {
    match banks {
        4 => Ok(2),
        8 => Ok(3),
        16 => Ok(4),
        other => Err(ConfigError::UnsupportedBankCount(other)),
    }
}

/// Bank index for `address` under `mapping`.
pub fn map_bank(address: u32, mapping: &BankMapping) -> usize {
    mapping.bank_of(address)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankedConfig {
    pub num_banks: usize,
    pub mapping: BankMapping,
    pub words_per_bank: usize,
    pub bank_latency_cycles: u32,
}

impl BankedConfig {
    pub fn new(mapping: BankMapping, total_words: usize) -> Result<Self, ConfigError> {
        let num_banks = mapping.num_banks();
        if !total_words.is_multiple_of(num_banks) {
            return Err(ConfigError::UnevenBanks {
                total_words,
                banks: num_banks,
            });
        }
        let address_bits = address_bits_for(total_words);
        mapping.validate(address_bits)?;
        Ok(Self {
            num_banks,
            mapping,
            words_per_bank: total_words / num_banks,
            bank_latency_cycles: DEFAULT_BANK_LATENCY,
        })
    }

    pub fn total_words(&self) -> usize {
        self.words_per_bank * self.num_banks
    }
}

/// Address width needed for `total_words`, never less than the 16-bit default.
pub fn address_bits_for(total_words: usize) -> u32 {
    let needed = usize::BITS - total_words.saturating_sub(1).leading_zeros();
    needed.max(DEFAULT_ADDRESS_BITS)
}

/// One memory operation: 16 lane slots, each either inactive or carrying a
/// word address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct LaneRequestSet {
    lanes: [Option<u32>; LANES],
}

impl LaneRequestSet {
    pub fn new(lanes: [Option<u32>; LANES]) -> Self {
        Self { lanes }
    }

    pub fn inactive() -> Self {
        Self::default()
    }

    /// All 16 lanes active with the given addresses.
    pub fn full(addresses: [u32; LANES]) -> Self {
        Self {
            lanes: addresses.map(Some),
        }
    }

    /// Lane `l` active with address `f(l)`.
    pub fn from_fn(mut f: impl FnMut(usize) -> u32) -> Self {
        Self {
            lanes: std::array::from_fn(|l| Some(f(l))),
        }
    }

    pub fn lane(&self, lane: usize) -> Option<u32> {
        self.lanes[lane]
    }

    pub fn lanes(&self) -> &[Option<u32>; LANES] {
        &self.lanes
    }

    pub fn set(&mut self, lane: usize, address: Option<u32>) {
        self.lanes[lane] = address;
    }

    pub fn active_mask(&self) -> u16 {
        self.lanes
            .iter()
            .enumerate()
            .filter(|(_, a)| a.is_some())
            .fold(0u16, |m, (l, _)| m | (1 << l))
    }

    pub fn active_count(&self) -> u32 {
        self.active_mask().count_ones()
    }

    pub fn active(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.lanes
            .iter()
            .enumerate()
            .filter_map(|(l, a)| a.map(|a| (l, a)))
    }
}

/// Per-bank access counts for one operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictProfile {
    num_banks: usize,
    /// One-hot bank flags per lane (bit b set: lane addresses bank b).
    rows: [u16; LANES],
    per_bank_count: [u8; MAX_BANKS],
    max_conflicts: u32,
}

impl ConflictProfile {
    pub fn num_banks(&self) -> usize {
        self.num_banks
    }

    pub fn per_bank_count(&self) -> &[u8] {
        &self.per_bank_count[..self.num_banks]
    }

    pub fn max_conflicts(&self) -> u32 {
        self.max_conflicts
    }

    /// Row `lane` of the bank matrix.
    pub fn row(&self, lane: usize) -> u16 {
        self.rows[lane]
    }

    /// Column `bank` of the bank matrix: the set of lanes addressing it.
    pub fn column(&self, bank: usize) -> u16 {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, row)| *row & (1 << bank) != 0)
            .fold(0u16, |m, (l, _)| m | (1 << l))
    }

    pub fn is_set(&self, lane: usize, bank: usize) -> bool {
        self.rows[lane] & (1 << bank) != 0
    }
}

/// Builds the one-hot lane × bank matrix and pop-counts its columns.
pub fn conflict_profile(requests: &LaneRequestSet, mapping: &BankMapping) -> ConflictProfile {
    let num_banks = mapping.num_banks();
    let mut rows = [0u16; LANES];
    for (lane, address) in requests.active() {
        rows[lane] = 1 << mapping.bank_of(address);
    }
    let mut profile = ConflictProfile {
        num_banks,
        rows,
        per_bank_count: [0; MAX_BANKS],
        max_conflicts: 0,
    };
    for bank in 0..num_banks {
        profile.per_bank_count[bank] = profile.column(bank).count_ones() as u8;
    }
    profile.max_conflicts = profile.per_bank_count().iter().copied().max().unwrap_or(0) as u32;
    profile
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("arbiter stepped with no pending lanes")]
pub struct EmptyArbiter;

/// Pending-lane vector of one bank arbiter; bit i set means lane i still
/// needs the bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ArbiterState {
    pub pending: u16,
}

impl ArbiterState {
    pub fn new(pending: u16) -> Self {
        Self { pending }
    }

    pub fn is_idle(&self) -> bool {
        self.pending == 0
    }
}

/// One arbiter clock: subtract one from the pending vector, take the single
/// 1→0 transition as the granted lane and clear every 0→1 re-assertion.
pub fn arbiter_step(state: ArbiterState) -> Result<(usize, ArbiterState), EmptyArbiter> {
    if state.pending == 0 {
        return Err(EmptyArbiter);
    }
    let decremented = state.pending.wrapping_sub(1);
    let falling = state.pending & !decremented;
    let rising = !state.pending & decremented;
    let next = decremented & !rising;
    debug_assert_eq!(falling.count_ones(), 1);
    Ok((falling.trailing_zeros() as usize, ArbiterState::new(next)))
}

/// Bank → lane grants for every cycle of one operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessSchedule {
    num_banks: usize,
    bank_latency: u32,
    grants: Vec<[Option<u8>; MAX_BANKS]>,
}

impl AccessSchedule {
    /// Cycles the banks are busy with this operation.
    pub fn duration(&self) -> u32 {
        self.grants.len() as u32
    }

    pub fn num_banks(&self) -> usize {
        self.num_banks
    }

    pub fn bank_latency(&self) -> u32 {
        self.bank_latency
    }

    /// Input-mux control at `cycle`: lane granted to each bank.
    pub fn grants(&self, cycle: usize) -> &[Option<u8>] {
        &self.grants[cycle][..self.num_banks]
    }

    /// Every (cycle, bank, lane) grant in cycle then bank order.
    pub fn grant_list(&self) -> Vec<(u32, usize, usize)> {
        self.grants
            .iter()
            .enumerate()
            .flat_map(|(c, row)| {
                row[..self.num_banks]
                    .iter()
                    .enumerate()
                    .filter_map(move |(b, l)| l.map(|l| (c as u32, b, l as usize)))
            })
            .collect()
    }

    /// Output-mux control at `cycle`: the bank whose data returns to each
    /// lane. This is the input grant matrix delayed by the bank latency and
    /// transposed.
    pub fn output_mux(&self, cycle: usize) -> [Option<u8>; LANES] {
        let mut out = [None; LANES];
        let Some(issue) = cycle.checked_sub(self.bank_latency as usize) else {
            return out;
        };
        if let Some(row) = self.grants.get(issue) {
            for (bank, lane) in row[..self.num_banks].iter().enumerate() {
                if let Some(lane) = lane {
                    out[*lane as usize] = Some(bank as u8);
                }
            }
        }
        out
    }

    /// Writeback strobes at `cycle`: OR of each lane's output-mux row.
    pub fn writeback_mask(&self, cycle: usize) -> u16 {
        self.output_mux(cycle)
            .iter()
            .enumerate()
            .filter(|(_, b)| b.is_some())
            .fold(0u16, |m, (l, _)| m | (1 << l))
    }

    /// Cycles from first issue until the last writeback.
    pub fn span(&self) -> u32 {
        if self.grants.is_empty() {
            0
        } else {
            self.duration() + self.bank_latency
        }
    }
}

/// Runs one carry-based arbiter per bank in lockstep until every pending
/// vector drains.
pub fn build_schedule(requests: &LaneRequestSet, config: &BankedConfig) -> AccessSchedule {
    let profile = conflict_profile(requests, &config.mapping);
    schedule_from_profile(&profile, config.bank_latency_cycles)
}

pub fn schedule_from_profile(profile: &ConflictProfile, bank_latency: u32) -> AccessSchedule {
    let num_banks = profile.num_banks();
    let mut arbiters = [ArbiterState::default(); MAX_BANKS];
    for (bank, arbiter) in arbiters.iter_mut().enumerate().take(num_banks) {
        *arbiter = ArbiterState::new(profile.column(bank));
    }
    let mut grants = Vec::with_capacity(profile.max_conflicts() as usize);
    while arbiters[..num_banks].iter().any(|a| !a.is_idle()) {
        let mut row = [None; MAX_BANKS];
        for (bank, arbiter) in arbiters.iter_mut().enumerate().take(num_banks) {
            if let Ok((lane, next)) = arbiter_step(*arbiter) {
                row[bank] = Some(lane as u8);
                *arbiter = next;
            }
        }
        grants.push(row);
    }
    AccessSchedule {
        num_banks,
        bank_latency,
        grants,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lsb16() -> BankMapping {
        BankMapping::lsb(4).unwrap()
    }

    /// The 8-lane, 8-bank operation used to illustrate bank mapping: lane 0
    /// hits bank 0, lanes 1, 2 and 4 hit bank 1, two lanes hit bank 3 and
    /// bank 2 is idle.
    pub(crate) fn eight_lane_example() -> LaneRequestSet {
        let mut r = LaneRequestSet::inactive();
        let banks = [0u32, 1, 1, 3, 1, 5, 3, 7];
        for (lane, bank) in banks.iter().enumerate() {
            r.set(lane, Some(0x40 + bank));
        }
        r
    }

    #[test]
    fn map_bank_examples() {
        assert_eq!(map_bank(0x0013, &lsb16()), 3);
        assert_eq!(map_bank(0, &lsb16()), 0);
        assert_eq!(map_bank(0, &BankMapping::bit_slice(2, 4).unwrap()), 0);
        assert_eq!(map_bank(0x0013, &BankMapping::bit_slice(2, 4).unwrap()), 4);
    }

    #[test]
    fn bit_slice_matches_direct_extraction_for_all_addresses() {
        let m = BankMapping::bit_slice(2, 4).unwrap();
        for a in 0..=u16::MAX as u32 {
            let bits = [(a >> 2) & 1, (a >> 3) & 1, (a >> 4) & 1, (a >> 5) & 1];
            let direct = bits[0] | bits[1] << 1 | bits[2] << 2 | bits[3] << 3;
            assert_eq!(map_bank(a, &m) as u32, direct);
        }
    }

    #[test]
    fn mapping_rejects_bad_widths_and_fields() {
        assert_eq!(BankMapping::lsb(5), Err(ConfigError::UnsupportedWidth(5)));
        assert_eq!(BankMapping::lsb(1), Err(ConfigError::UnsupportedWidth(1)));
        let m = BankMapping::bit_slice(14, 4).unwrap();
        assert!(m.validate(16).is_err());
        assert!(m.validate(18).is_ok());
        assert!(BankMapping::lsb_for_banks(12).is_err());
    }

    #[test]
    fn banked_config_splits_words() {
        let c = BankedConfig::new(lsb16(), 16384).unwrap();
        assert_eq!(c.words_per_bank, 1024);
        assert_eq!(c.num_banks, 16);
        assert_eq!(c.bank_latency_cycles, 3);
        assert!(BankedConfig::new(lsb16(), 1000).is_err());
    }

    #[test]
    fn local_index_round_trips() {
        for m in [
            lsb16(),
            BankMapping::bit_slice(2, 4).unwrap(),
            BankMapping::bit_slice(11, 2).unwrap(),
        ] {
            for a in (0..1 << 16).step_by(7) {
                let (b, l) = (m.bank_of(a), m.local_index(a));
                assert_eq!(m.global_address(b, l), a);
            }
        }
    }

    #[test]
    fn eight_lane_profile() {
        let m = BankMapping::lsb(3).unwrap();
        let p = conflict_profile(&eight_lane_example(), &m);
        assert_eq!(p.per_bank_count()[0], 1);
        assert_eq!(p.per_bank_count()[1], 3);
        assert_eq!(p.per_bank_count()[2], 0);
        assert_eq!(p.per_bank_count()[3], 2);
        assert_eq!(p.max_conflicts(), 3);
        assert_eq!(p.column(1), 0b0001_0110);
    }

    #[test]
    fn perfect_spread_and_maximal_conflict() {
        let spread = LaneRequestSet::from_fn(|l| l as u32);
        let p = conflict_profile(&spread, &lsb16());
        assert!(p.per_bank_count().iter().all(|&c| c == 1));
        assert_eq!(p.max_conflicts(), 1);

        let same = LaneRequestSet::from_fn(|l| 5 + 16 * l as u32);
        let p = conflict_profile(&same, &lsb16());
        assert_eq!(p.per_bank_count()[5], 16);
        assert_eq!(p.max_conflicts(), 16);
    }

    #[test]
    fn inactive_rows_are_zero() {
        let mut r = LaneRequestSet::from_fn(|l| l as u32);
        r.set(3, None);
        let p = conflict_profile(&r, &lsb16());
        assert_eq!(p.row(3), 0);
        assert_eq!(p.per_bank_count()[3], 0);
        assert_eq!(
            p.per_bank_count().iter().map(|&c| c as u32).sum::<u32>(),
            15
        );
    }

    #[test]
    fn arbiter_walks_bank_one_of_example() {
        let s = ArbiterState::new(0b0001_0110);
        let (lane, s) = arbiter_step(s).unwrap();
        assert_eq!((lane, s.pending), (1, 0b0001_0100));
        let (lane, s) = arbiter_step(s).unwrap();
        assert_eq!((lane, s.pending), (2, 0b0001_0000));
        let (lane, s) = arbiter_step(s).unwrap();
        assert_eq!((lane, s.pending), (4, 0));
    }

    #[test]
    fn arbiter_single_and_empty() {
        let (lane, s) = arbiter_step(ArbiterState::new(1 << 9)).unwrap();
        assert_eq!((lane, s.pending), (9, 0));
        assert_eq!(arbiter_step(ArbiterState::new(0)), Err(EmptyArbiter));
    }

    #[test]
    fn arbiter_full_vector_serves_in_order() {
        let mut s = ArbiterState::new(0xFFFF);
        for expect in 0..16 {
            let (lane, next) = arbiter_step(s).unwrap();
            assert_eq!(lane, expect);
            s = next;
        }
        assert!(s.is_idle());
    }

    #[test]
    fn eight_lane_schedule() {
        let config = BankedConfig::new(BankMapping::lsb(3).unwrap(), 1024).unwrap();
        let s = build_schedule(&eight_lane_example(), &config);
        assert_eq!(s.duration(), 3);
        assert_eq!(s.grants(0)[0], Some(0));
        assert_eq!(s.grants(0)[1], Some(1));
        assert_eq!(s.grants(0)[3], Some(3));
        assert_eq!(s.grants(0)[2], None);
        assert_eq!(s.grants(1)[1], Some(2));
        assert_eq!(s.grants(2)[1], Some(4));
        assert_eq!(s.grants(1)[3], Some(6));
        // Data comes back three cycles after issue.
        assert_eq!(s.writeback_mask(2), 0);
        assert_eq!(s.output_mux(3)[1], Some(1));
        assert_eq!(s.writeback_mask(3), 0b1010_1011);
        assert_eq!(s.writeback_mask(5), 0b0001_0000);
        assert_eq!(s.span(), 6);
    }

    #[test]
    fn all_inactive_schedule_is_empty() {
        let config = BankedConfig::new(lsb16(), 1024).unwrap();
        let s = build_schedule(&LaneRequestSet::inactive(), &config);
        assert_eq!(s.duration(), 0);
        assert_eq!(s.span(), 0);
        assert!(s.grant_list().is_empty());
    }

    fn request_set() -> impl Strategy<Value = LaneRequestSet> {
        prop::array::uniform16(prop::option::weighted(0.85, 0u32..4096))
            .prop_map(LaneRequestSet::new)
    }

    fn mapping() -> impl Strategy<Value = BankMapping> {
        (2u32..=4, 0u32..=3, any::<bool>()).prop_map(|(w, s, lsb)| {
            if lsb {
                BankMapping::lsb(w).unwrap()
            } else {
                BankMapping::bit_slice(s, w).unwrap()
            }
        })
    }

    proptest! {
        #[test]
        fn conservation_and_bounds(r in request_set(), m in mapping()) {
            let p = conflict_profile(&r, &m);
            let active = r.active_count();
            let total: u32 = p.per_bank_count().iter().map(|&c| c as u32).sum();
            prop_assert_eq!(total, active);
            for lane in 0..LANES {
                let ones = p.row(lane).count_ones();
                prop_assert_eq!(ones, u32::from(r.lane(lane).is_some()));
            }
            if active > 0 {
                let banks = m.num_banks() as u32;
                prop_assert!(p.max_conflicts() >= active.div_ceil(banks));
                prop_assert!(p.max_conflicts() <= active);
            } else {
                prop_assert_eq!(p.max_conflicts(), 0);
            }
        }

        #[test]
        fn schedule_laws(r in request_set(), m in mapping()) {
            let config = BankedConfig::new(m, 1 << 16).unwrap();
            let s = build_schedule(&r, &config);
            let p = conflict_profile(&r, &m);
            prop_assert_eq!(s.duration(), p.max_conflicts());

            let mut served = 0u16;
            for c in 0..s.duration() as usize {
                let mut lanes_this_cycle = 0u16;
                for lane in s.grants(c).iter().flatten() {
                    let bit = 1u16 << lane;
                    prop_assert_eq!(lanes_this_cycle & bit, 0);
                    prop_assert_eq!(served & bit, 0);
                    lanes_this_cycle |= bit;
                }
                served |= lanes_this_cycle;
                // delayed + transposed output mux
                let out = s.output_mux(c + s.bank_latency() as usize);
                for (bank, lane) in s.grants(c).iter().enumerate() {
                    if let Some(lane) = lane {
                        prop_assert_eq!(out[*lane as usize], Some(bank as u8));
                    }
                }
                prop_assert_eq!(out.iter().filter(|b| b.is_some()).count() as u32, lanes_this_cycle.count_ones());
            }
            prop_assert_eq!(served, r.active_mask());
        }

        #[test]
        fn lsb_equals_bit_slice_at_zero(a in any::<u16>(), w in 2u32..=4) {
            let lsb = BankMapping::lsb(w).unwrap();
            let slice = BankMapping::bit_slice(0, w).unwrap();
            prop_assert_eq!(map_bank(a as u32, &lsb), map_bank(a as u32, &slice));
        }
    }
}
