//! In-place N×N transpose of a row-major matrix of 32-bit words.
//!
//! The matrix is cut into 16×16 tiles. Each load operation reads 16
//! consecutive words of one tile row; the matching store writes them down a
//! column of the mirrored tile (stride `n`). Tiles are processed in rounds
//! that are closed under transposition (a diagonal tile alone, or an
//! off-diagonal pair), so every word of a round is in registers before any
//! store of that round overwrites it.

use super::{
    ComputeCategory, GenMode, KernelError, KernelSpec, KernelTrace, Layout, ReadRole, TraceBuilder,
    TraceMeta, DEFAULT_THREADS, REGISTERS,
};
use crate::mem_arch::{LaneRequestSet, LANES};

const TILE: u32 = 16;

pub fn gen_transpose(n: u32, mode: GenMode) -> Result<KernelTrace, KernelError> {
    gen_transpose_with(n, mode, DEFAULT_THREADS)
}

/// `threads` must divide 256 (one tile is 256 words).
pub fn gen_transpose_with(n: u32, mode: GenMode, threads: u32) -> Result<KernelTrace, KernelError> {
    if n == 0 || !n.is_multiple_of(TILE) {
        return Err(KernelError::BadDimension(n));
    }
    let tile_words = TILE * TILE;
    if threads == 0 || !threads.is_multiple_of(LANES as u32) || !tile_words.is_multiple_of(threads)
    {
        return Err(KernelError::BadThreads {
            threads,
            needed: "a multiple of 16 dividing 256".into(),
        });
    }
    let rows_per_instr = threads / TILE;
    let instrs_per_tile = (tile_words / threads) as usize;

    // Rounds of tiles closed under transposition, packed into 32 registers.
    let tiles_per_side = n / TILE;
    let mut rounds: Vec<Vec<(u32, u32)>> = vec![Vec::new()];
    for ib in 0..tiles_per_side {
        for jb in ib..tiles_per_side {
            let group = if ib == jb {
                vec![(ib, ib)]
            } else {
                vec![(ib, jb), (jb, ib)]
            };
            let used = rounds.last().map_or(0, |r| r.len()) * instrs_per_tile;
            if used + group.len() * instrs_per_tile > REGISTERS {
                rounds.push(Vec::new());
            }
            rounds.last_mut().expect("non-empty").extend(group);
        }
    }

    let mut b = TraceBuilder::new(threads);
    // Base address and matrix dimension, then per-thread row/column indices.
    b.overhead(ComputeCategory::ImmediateOp, 2);
    b.overhead(ComputeCategory::IntOp, 2);
    for round in &rounds {
        let mut reg = 0u8;
        let mut loaded = Vec::new();
        for &(ib, jb) in round {
            for chunk in 0..instrs_per_tile as u32 {
                let ops = (0..rows_per_instr)
                    .map(|g| {
                        let row = TILE * ib + chunk * rows_per_instr + g;
                        LaneRequestSet::from_fn(|l| row * n + TILE * jb + l as u32)
                    })
                    .collect();
                b.overhead(ComputeCategory::IntOp, 1);
                b.read(ReadRole::Data, reg, ops);
                loaded.push((ib, jb, chunk, reg));
                reg += 1;
            }
        }
        for (ib, jb, chunk, reg) in loaded {
            // Word (row, TILE*jb + l) goes to (TILE*jb + l, row).
            let ops = (0..rows_per_instr)
                .map(|g| {
                    let row = TILE * ib + chunk * rows_per_instr + g;
                    LaneRequestSet::from_fn(|l| (TILE * jb + l as u32) * n + row)
                })
                .collect();
            b.overhead(ComputeCategory::IntOp, 1);
            b.write(reg, ops);
        }
    }
    b.overhead(ComputeCategory::OtherOp, 1);

    let kernel = KernelSpec::Transpose { n };
    let mut trace = b.finish(TraceMeta {
        kernel,
        data_words: (n * n) as usize,
        twiddle_words: 0,
        layout: Layout {
            data_base: 0,
            twiddle_base: n * n,
        },
    });
    if mode == GenMode::Calibrated {
        let reference = crate::reference::transpose(n)
            .ok_or_else(|| KernelError::Uncalibrated(kernel.label()))?;
        trace.calibrate(&reference.common);
    }
    Ok(trace)
}
