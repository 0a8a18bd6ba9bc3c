//! ALM-equivalent area of the memory subsystem.

use super::ArchSpec;
use serde::{Deserialize, Serialize};

/// One logic-array sector.
pub const SECTOR_ALMS: u64 = 16640;
/// 16 SPs (430 ALMs each) plus instruction fetch/decode (233).
pub const CORE_LOGIC_ALMS: u64 = 16 * 430 + 233;
/// Multi-port read/write control plus its memory glue, valid up to 64 KB.
pub const MULTIPORT_BASE_ALMS: u64 = 700 + 131;
/// Size up to which a multi-port memory needs no extra pipelining.
pub const MULTIPORT_BASE_KB: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footprint {
    /// Placed area of the shared memory block.
    pub memory_alms: u64,
    /// Unconstrained logic outside that block: access controllers (banked
    /// only) and the core.
    pub logic_alms: u64,
}

impl Footprint {
    pub fn total_alms(&self) -> u64 {
        self.memory_alms + self.logic_alms
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{arch} supports at most {capacity_kb} KB, {requested_kb} KB requested")]
pub struct CapacityError {
    pub arch: String,
    pub capacity_kb: u32,
    pub requested_kb: u32,
}

/// Read plus write controller ALMs for a bank count.
fn controller_alms(banks: usize) -> u64 {
    match banks {
        16 => 789 + 1507,
        8 => 511 + 1094,
        _ => 342 + 811,
    }
}

pub fn footprint_estimate(arch: &ArchSpec, mem_kb: u32) -> Result<Footprint, CapacityError> {
    let capacity_kb = arch.kind().capacity_kb();
    if mem_kb > capacity_kb {
        return Err(CapacityError {
            arch: arch.to_string(),
            capacity_kb,
            requested_kb: mem_kb,
        });
    }
    Ok(match arch {
        ArchSpec::Banked(mapping) => {
            let banks = mapping.num_banks();
            Footprint {
                memory_alms: SECTOR_ALMS * banks as u64 / 16,
                logic_alms: controller_alms(banks) + CORE_LOGIC_ALMS,
            }
        }
        _ => {
            let memory_alms = if mem_kb <= MULTIPORT_BASE_KB {
                MULTIPORT_BASE_ALMS
            } else {
                // Linear pipelining growth up to a full sector at the cap.
                let frac =
                    (mem_kb - MULTIPORT_BASE_KB) as f64 / (capacity_kb - MULTIPORT_BASE_KB) as f64;
                MULTIPORT_BASE_ALMS
                    + ((SECTOR_ALMS - MULTIPORT_BASE_ALMS) as f64 * frac).round() as u64
            };
            Footprint {
                memory_alms,
                logic_alms: CORE_LOGIC_ALMS,
            }
        }
    })
}
