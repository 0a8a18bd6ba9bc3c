//! Radix-4/8/16 Cooley-Tukey FFT, decimation in time, in place.
//!
//! Data is interleaved (re, im) at word 0; the twiddle table follows it.
//! Stage 0 reads natural-order input with stride N/R and stores each
//! butterfly's outputs to digit-reversed positions, so the reordering pass is
//! folded into the first stage's stores. Because every thread holds all of its
//! stage-0 inputs (2N/threads registers) before any thread stores, that stage
//! is safe in place. Later stages apply twiddles W_G^(j*m) fetched from the
//! table, then a radix-R butterfly, and write back to the same positions.

use super::{
    reg_mask, ComputeCategory, GenMode, KernelError, KernelSpec, KernelTrace, LaneFn, Layout,
    ReadRole, Registers, TraceBuilder, TraceMeta, DEFAULT_THREADS, REGISTERS,
};
use crate::mem_arch::{LaneRequestSet, LANES};
use num_complex::Complex32;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FftDirection {
    #[default]
    Forward,
    /// Conjugate twiddles, unscaled.
    Inverse,
}

impl FftDirection {
    fn sign(self) -> f64 {
        match self {
            FftDirection::Forward => -1.0,
            FftDirection::Inverse => 1.0,
        }
    }
}

/// `W_size^exponent` computed in double precision, rounded to FP32.
pub fn twiddle(size: u32, exponent: u64, direction: FftDirection) -> Complex32 {
    let e = exponent % size as u64;
    let angle = direction.sign() * 2.0 * PI * e as f64 / size as f64;
    Complex32::new(angle.cos() as f32, angle.sin() as f32)
}

/// Number of radix-R stages, or an error unless `points` is a power of
/// `radix` with at least one stage.
pub fn fft_stage_count(radix: u32, points: u32) -> Result<u32, KernelError> {
    let bad = KernelError::BadFftShape { radix, points };
    if !matches!(radix, 4 | 8 | 16) || points < radix {
        return Err(bad);
    }
    let mut stages = 0;
    let mut rest = points;
    while rest > 1 {
        if !rest.is_multiple_of(radix) {
            return Err(bad);
        }
        rest /= radix;
        stages += 1;
    }
    Ok(stages)
}

/// Interleaved complex FP32 twiddles, stage by stage (stage 0 needs none).
/// Stage `s` holds `R^s * (R-1)` entries ordered by butterfly column `j`,
/// then multiplier index `m = 1..R`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TwiddleTable {
    pub words: Vec<u32>,
    /// Word offset of each stage's block; entry 0 is unused.
    pub stage_offsets: Vec<usize>,
}

impl TwiddleTable {
    pub fn entries(&self) -> impl Iterator<Item = Complex32> + '_ {
        self.words
            .chunks_exact(2)
            .map(|c| Complex32::new(f32::from_bits(c[0]), f32::from_bits(c[1])))
    }

    fn word_index(&self, radix: u32, stage: usize, j: u32, m: u32) -> usize {
        self.stage_offsets[stage] + 2 * (j * (radix - 1) + m - 1) as usize
    }
}

pub fn twiddle_table(
    radix: u32,
    points: u32,
    direction: FftDirection,
) -> Result<TwiddleTable, KernelError> {
    let stages = fft_stage_count(radix, points)?;
    let mut words = Vec::new();
    let mut stage_offsets = vec![0];
    let mut span = radix;
    for _ in 1..stages {
        stage_offsets.push(words.len());
        let group = span * radix;
        for j in 0..span {
            for m in 1..radix {
                let w = twiddle(group, j as u64 * m as u64, direction);
                words.push(w.re.to_bits());
                words.push(w.im.to_bits());
            }
        }
        span = group;
    }
    Ok(TwiddleTable {
        words,
        stage_offsets,
    })
}

fn digit_reverse(mut value: u32, radix: u32, digits: u32) -> u32 {
    let mut out = 0;
    for _ in 0..digits {
        out = out * radix + value % radix;
        value /= radix;
    }
    out
}

/// Radix-2 passes inside one radix-R butterfly, as `(a, b, k)`: the two value
/// slots of each 2-point step and its multiplier index into W_R.
fn radix2_steps(radix: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    let mut steps = Vec::new();
    let mut size = 2;
    while size <= radix {
        let half = size / 2;
        let stride = radix / size;
        for start in (0..radix).step_by(size) {
            for i in 0..half {
                steps.push((start + i, start + i + half, i * stride));
            }
        }
        size *= 2;
    }
    steps.into_iter()
}

/// FP instructions of one radix-R butterfly: a 2-point step costs 4 adds,
/// plus a 6-instruction complex multiply unless its twiddle is 1 or ∓i.
pub(crate) fn butterfly_flops(radix: u32) -> u64 {
    let quarter = radix as usize / 4;
    radix2_steps(radix as usize)
        .map(|(_, _, k)| if k == 0 || k == quarter { 4 } else { 10 })
        .sum()
}

const CMUL_FLOPS: u64 = 6;

/// In-register R-point DFT on `values` (natural order in and out).
fn butterfly(values: &mut [Complex32], roots: &[Complex32]) {
    let r = values.len();
    let bits = r.trailing_zeros();
    for i in 0..r {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            values.swap(i, j);
        }
    }
    for (a, b, k) in radix2_steps(r) {
        let v = if k == 0 {
            values[b]
        } else {
            values[b] * roots[k]
        };
        let u = values[a];
        values[a] = u + v;
        values[b] = u - v;
    }
}

fn butterfly_fn(radix: u32, count: u32, direction: FftDirection) -> LaneFn {
    let roots: Vec<Complex32> = (0..radix)
        .map(|k| twiddle(radix, k as u64, direction))
        .collect();
    let r = radix as usize;
    Arc::new(move |regs: &mut Registers| {
        let mut values = [Complex32::new(0.0, 0.0); 16];
        for c in 0..count as usize {
            let base = 2 * c * r;
            for (m, v) in values[..r].iter_mut().enumerate() {
                *v = Complex32::new(
                    f32::from_bits(regs[base + 2 * m]),
                    f32::from_bits(regs[base + 2 * m + 1]),
                );
            }
            butterfly(&mut values[..r], &roots);
            for (k, v) in values[..r].iter().enumerate() {
                regs[base + 2 * k] = v.re.to_bits();
                regs[base + 2 * k + 1] = v.im.to_bits();
            }
        }
    })
}

/// `(r[x], r[x+1]) *= (r[0], r[1])`.
fn cmul_fn(x: usize) -> LaneFn {
    Arc::new(move |regs: &mut Registers| {
        let a = Complex32::new(f32::from_bits(regs[x]), f32::from_bits(regs[x + 1]));
        let w = Complex32::new(f32::from_bits(regs[0]), f32::from_bits(regs[1]));
        let p = a * w;
        regs[x] = p.re.to_bits();
        regs[x + 1] = p.im.to_bits();
    })
}

pub fn gen_fft(radix: u32, points: u32, mode: GenMode) -> Result<KernelTrace, KernelError> {
    gen_fft_with(radix, points, mode, FftDirection::Forward, None)
}

fn pick_threads(points: u32, butterflies: u32, requested: Option<u32>) -> Result<u32, KernelError> {
    let threads = requested.unwrap_or_else(|| DEFAULT_THREADS.max(points / 16).min(butterflies));
    let ok = threads > 0
        && threads.is_multiple_of(LANES as u32)
        && butterflies.is_multiple_of(threads)
        && (2 * points / threads) as usize <= REGISTERS;
    if ok {
        Ok(threads)
    } else {
        Err(KernelError::BadThreads {
            threads,
            needed: format!(
                "a multiple of 16 dividing {butterflies} and at least {}",
                points / 16
            ),
        })
    }
}

/// Generates the FFT trace. `threads` defaults to 256 (raised to N/16 for
/// larger transforms so stage 0 fits in 32 registers).
pub fn gen_fft_with(
    radix: u32,
    points: u32,
    mode: GenMode,
    direction: FftDirection,
    threads: Option<u32>,
) -> Result<KernelTrace, KernelError> {
    let stages = fft_stage_count(radix, points)?;
    let butterflies = points / radix;
    let threads = pick_threads(points, butterflies, threads)?;
    let table = twiddle_table(radix, points, direction)?;
    let per_thread = butterflies / threads;
    let ops_per_instr = threads / LANES as u32;
    let twiddle_base = 2 * points;
    let r = radix;

    // Operation g, lane l of round c belongs to butterfly 16g + l + c*threads.
    let ops_for = |c: u32, address: &dyn Fn(u32) -> u32| -> Vec<LaneRequestSet> {
        (0..ops_per_instr)
            .map(|g| {
                LaneRequestSet::from_fn(|l| address(LANES as u32 * g + l as u32 + c * threads))
            })
            .collect()
    };

    let mut b = TraceBuilder::new(threads);
    b.overhead(ComputeCategory::ImmediateOp, 3);

    // Stage 0: load everything, butterfly, store digit-reversed.
    let stride = points / r;
    b.overhead(ComputeCategory::IntOp, 2);
    for c in 0..per_thread {
        for m in 0..r {
            for part in 0..2 {
                let dest = (2 * (c * r + m) + part) as u8;
                b.read(
                    ReadRole::Data,
                    dest,
                    ops_for(c, &|q| 2 * (q + m * stride) + part),
                );
            }
        }
    }
    let live = reg_mask((2 * per_thread * r) as usize);
    b.compute(
        ComputeCategory::FpOp,
        per_thread as u64 * butterfly_flops(r),
        live,
        live,
        Some(butterfly_fn(r, per_thread, direction)),
    );
    b.overhead(ComputeCategory::IntOp, 2);
    for c in 0..per_thread {
        for m in 0..r {
            for part in 0..2 {
                let src = (2 * (c * r + m) + part) as u8;
                b.write(
                    src,
                    ops_for(c, &|q| 2 * (r * digit_reverse(q, r, stages - 1) + m) + part),
                );
            }
        }
    }
    b.overhead(ComputeCategory::OtherOp, 1);

    let mut span = r;
    for stage in 1..stages as usize {
        let group = span * r;
        let position = move |q: u32, m: u32| (q / span) * group + q % span + m * span;
        b.overhead(ComputeCategory::ImmediateOp, 1);
        for c in 0..per_thread {
            b.overhead(ComputeCategory::IntOp, 2);
            for m in 1..r {
                for part in 0..2u32 {
                    b.read(
                        ReadRole::Twiddle,
                        part as u8,
                        ops_for(c, &|q| {
                            twiddle_base + (table.word_index(r, stage, q % span, m) as u32) + part
                        }),
                    );
                }
                let x = 2 * m as usize;
                for part in 0..2u32 {
                    b.read(
                        ReadRole::Data,
                        (x as u32 + part) as u8,
                        ops_for(c, &|q| 2 * position(q, m) + part),
                    );
                }
                b.compute(
                    ComputeCategory::FpOp,
                    CMUL_FLOPS,
                    0b11 | (0b11 << x),
                    0b11 << x,
                    Some(cmul_fn(x)),
                );
            }
            for part in 0..2u32 {
                b.read(
                    ReadRole::Data,
                    part as u8,
                    ops_for(c, &|q| 2 * position(q, 0) + part),
                );
            }
            let live = reg_mask(2 * r as usize);
            b.compute(
                ComputeCategory::FpOp,
                butterfly_flops(r),
                live,
                live,
                Some(butterfly_fn(r, 1, direction)),
            );
            for k in 0..r {
                for part in 0..2u32 {
                    b.write(
                        (2 * k + part) as u8,
                        ops_for(c, &|q| 2 * position(q, k) + part),
                    );
                }
            }
        }
        b.overhead(ComputeCategory::OtherOp, 1);
        span = group;
    }

    let kernel = KernelSpec::Fft { radix, points };
    let mut trace = b.finish(TraceMeta {
        kernel,
        data_words: 2 * points as usize,
        twiddle_words: table.words.len(),
        layout: Layout {
            data_base: 0,
            twiddle_base,
        },
    });
    if mode == GenMode::Calibrated {
        let reference = crate::reference::fft(radix, points)
            .ok_or_else(|| KernelError::Uncalibrated(kernel.label()))?;
        trace.calibrate(&reference.common);
    }
    Ok(trace)
}
