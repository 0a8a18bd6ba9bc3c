//! Published benchmark results for the transpose and 4096-point FFT suites,
//! transcribed verbatim (including the values that do not add up).

use serde::Serialize;

/// Compute warp-operation counts of one benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CommonOps {
    pub fp: u64,
    pub int: u64,
    pub immediate: u64,
    pub other: u64,
}

impl CommonOps {
    pub fn total(&self) -> u64 {
        self.fp + self.int + self.immediate + self.other
    }
}

/// Architecture columns, in table order.
pub const TRANSPOSE_ARCHS: [&str; 8] = [
    "4r1w",
    "4r2w",
    "banked16-lsb",
    "banked16-offset2",
    "banked8-lsb",
    "banked8-offset2",
    "banked4-lsb",
    "banked4-offset2",
];

pub const FFT_ARCHS: [&str; 9] = [
    "4r1w",
    "4r2w",
    "4r1w-vb",
    "banked16-lsb",
    "banked16-offset2",
    "banked8-lsb",
    "banked8-offset2",
    "banked4-lsb",
    "banked4-offset2",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransposeRef {
    pub n: u32,
    pub common: CommonOps,
    pub ops: u64,
    pub load: [u64; 8],
    pub store: [u64; 8],
    pub total: [u64; 8],
    pub time_us: [f64; 8],
    /// Banked columns only (index 2..8).
    pub read_eff: [Option<f64>; 8],
    pub write_eff: [Option<f64>; 8],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FftRef {
    pub radix: u32,
    pub points: u32,
    pub common: CommonOps,
    pub data_ops: u64,
    pub twiddle_ops: u64,
    pub data_load: [u64; 9],
    pub twiddle_load: [u64; 9],
    pub store: [u64; 9],
    pub total: [u64; 9],
    pub time_us: [f64; 9],
    pub efficiency: [f64; 9],
    pub data_eff: [Option<f64>; 9],
    pub twiddle_eff: [Option<f64>; 9],
}

const NA: Option<f64> = None;

pub const TRANSPOSE: [TransposeRef; 3] = [
    TransposeRef {
        n: 32,
        common: CommonOps {
            fp: 0,
            int: 256,
            immediate: 129,
            other: 6,
        },
        ops: 64,
        load: [256, 256, 168, 106, 290, 166, 544, 288],
        store: [1024, 512, 1054, 1050, 1048, 1048, 1046, 1046],
        total: [1671, 1159, 1613, 1547, 1729, 1605, 1981, 1725],
        time_us: [2.17, 1.93, 2.09, 2.01, 2.24, 2.08, 2.57, 2.24],
        read_eff: [
            NA,
            NA,
            Some(38.1),
            Some(60.4),
            Some(22.1),
            Some(38.6),
            Some(11.8),
            Some(22.2),
        ],
        write_eff: [
            NA,
            NA,
            Some(6.1),
            Some(6.1),
            Some(6.1),
            Some(6.1),
            Some(6.1),
            Some(6.1),
        ],
    },
    TransposeRef {
        n: 64,
        common: CommonOps {
            fp: 0,
            int: 192,
            immediate: 161,
            other: 6,
        },
        ops: 256,
        load: [1024, 1024, 1184, 672, 2184, 1160, 4224, 2176],
        store: [4096, 2048, 4216, 4200, 4192, 4192, 4184, 4184],
        total: [5479, 3431, 5759, 5231, 6735, 5711, 8767, 6719],
        time_us: [7.1, 5.72, 7.46, 6.78, 8.74, 7.41, 11.37, 8.71],
        read_eff: [
            NA,
            NA,
            Some(21.6),
            Some(38.9),
            Some(11.7),
            Some(22.1),
            Some(6.1),
            Some(11.8),
        ],
        write_eff: [
            NA,
            NA,
            Some(6.1),
            Some(6.1),
            Some(6.1),
            Some(6.1),
            Some(6.1),
            Some(6.1),
        ],
    },
    TransposeRef {
        n: 128,
        common: CommonOps {
            fp: 0,
            int: 160,
            immediate: 129,
            other: 6,
        },
        ops: 1024,
        load: [4096, 4096, 8832, 4672, 16928, 8736, 16896, 16896],
        store: [16384, 8192, 16864, 16800, 16768, 16768, 16736, 16736],
        total: [20775, 12583, 25991, 21767, 33991, 25799, 34017, 34017],
        time_us: [26.95, 20.97, 33.71, 28.23, 44.09, 33.46, 44.12, 44.12],
        read_eff: [
            NA,
            NA,
            Some(11.6),
            Some(21.9),
            Some(6.0),
            Some(11.7),
            Some(6.1),
            Some(6.1),
        ],
        write_eff: [
            NA,
            NA,
            Some(6.1),
            Some(6.1),
            Some(6.1),
            Some(6.1),
            Some(6.1),
            Some(6.1),
        ],
    },
];

pub const FFT: [FftRef; 3] = [
    FftRef {
        radix: 4,
        points: 4096,
        common: CommonOps {
            fp: 13440,
            int: 2880,
            immediate: 1287,
            other: 244,
        },
        data_ops: 3072,
        twiddle_ops: 1920,
        data_load: [12228, 12228, 12228, 11200, 7104, 19248, 11120, 29440, 19200],
        twiddle_load: [7680, 7680, 7680, 24152, 21548, 27134, 24070, 29152, 27104],
        store: [49152, 24576, 24576, 10960, 6864, 19008, 10880, 29200, 18960],
        total: [
            86817, 62214, 62214, 64063, 53267, 80361, 63821, 105543, 82915,
        ],
        time_us: [
            112.60, 103.74, 80.69, 83.09, 69.09, 104.23, 82.78, 136.89, 107.54,
        ],
        efficiency: [15.5, 21.6, 21.6, 21.0, 25.2, 16.7, 21.1, 12.7, 16.2],
        data_eff: [
            NA,
            NA,
            NA,
            Some(28.0),
            Some(44.8),
            Some(16.2),
            Some(28.2),
            Some(10.5),
            Some(16.2),
        ],
        twiddle_eff: [
            NA,
            NA,
            NA,
            Some(7.9),
            Some(8.9),
            Some(7.1),
            Some(8.0),
            Some(6.6),
            Some(7.1),
        ],
    },
    FftRef {
        radix: 8,
        points: 4096,
        common: CommonOps {
            fp: 11840,
            int: 3456,
            immediate: 523,
            other: 108,
        },
        data_ops: 2048,
        twiddle_ops: 1344,
        data_load: [8192, 8192, 8192, 12624, 7425, 15424, 12448, 21504, 15320],
        twiddle_load: [5376, 5376, 5376, 16712, 13844, 18122, 16608, 20128, 18080],
        store: [32768, 16384, 20480, 12224, 7104, 15104, 12128, 21184, 15040],
        total: [
            62263, 45879, 49975, 57487, 44300, 64577, 57111, 78743, 65367,
        ],
        time_us: [
            80.76, 76.47, 64.82, 74.56, 57.46, 83.76, 74.07, 102.13, 84.78,
        ],
        efficiency: [19.0, 25.8, 23.7, 20.6, 26.7, 18.3, 20.7, 15.0, 18.1],
        data_eff: [
            NA,
            NA,
            NA,
            Some(16.8),
            Some(28.8),
            Some(13.6),
            Some(16.9),
            Some(9.7),
            Some(13.6),
        ],
        twiddle_eff: [
            NA,
            NA,
            NA,
            Some(8.0),
            Some(9.7),
            Some(7.4),
            Some(8.1),
            Some(6.7),
            Some(7.4),
        ],
    },
    FftRef {
        radix: 16,
        points: 4096,
        common: CommonOps {
            fp: 12384,
            int: 2192,
            immediate: 276,
            other: 90,
        },
        data_ops: 1536,
        twiddle_ops: 960,
        data_load: [6144, 6144, 6144, 12160, 11136, 13920, 12000, 17920, 13824],
        twiddle_load: [3840, 3840, 3840, 10888, 9848, 14876, 10780, 14272, 12244],
        store: [
            24576, 12228, 14336, 11680, 10652, 13440, 11520, 17440, 13344,
        ],
        total: [
            49442, 37214, 39262, 49670, 46578, 57177, 49242, 64483, 54354,
        ],
        time_us: [
            64.13, 62.02, 50.92, 64.53, 60.41, 74.16, 63.87, 83.64, 70.50,
        ],
        efficiency: [25.0, 33.3, 31.5, 24.9, 26.6, 21.7, 25.1, 19.2, 22.8],
        data_eff: [
            NA,
            NA,
            NA,
            Some(13.2),
            Some(14.4),
            Some(11.4),
            Some(13.3),
            Some(8.8),
            Some(11.5),
        ],
        twiddle_eff: [
            NA,
            NA,
            NA,
            Some(8.8),
            Some(9.7),
            Some(6.4),
            Some(8.9),
            Some(6.7),
            Some(7.8),
        ],
    },
];

pub fn transpose(n: u32) -> Option<&'static TransposeRef> {
    TRANSPOSE.iter().find(|t| t.n == n)
}

pub fn fft(radix: u32, points: u32) -> Option<&'static FftRef> {
    FFT.iter().find(|f| f.radix == radix && f.points == points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_columns_add_up() {
        // Common ops + load + store = total for every column except the two
        // 4-bank 128×128 columns, which are printed 90 cycles high.
        let mut mismatches = Vec::new();
        for t in &TRANSPOSE {
            for (col, arch) in TRANSPOSE_ARCHS.iter().enumerate() {
                let sum = t.common.total() + t.load[col] + t.store[col];
                if sum != t.total[col] {
                    mismatches.push((t.n, *arch, sum, t.total[col]));
                }
            }
        }
        assert_eq!(
            mismatches,
            vec![
                (128, "banked4-lsb", 33927, 34017),
                (128, "banked4-offset2", 33927, 34017)
            ]
        );
        assert_eq!(TRANSPOSE[0].common.total() + 256 + 1024, 1671);
    }

    #[test]
    fn transpose_times_follow_clock() {
        for t in &TRANSPOSE {
            for col in 0..8 {
                let mhz = if col == 1 { 600.0 } else { 771.0 };
                let us = t.total[col] as f64 / mhz;
                assert!((us - t.time_us[col]).abs() <= 0.011, "{} {}", t.n, col);
            }
        }
    }

    #[test]
    fn fft_op_counts() {
        for f in &FFT {
            let stages = (f.points as f64).log(f.radix as f64).round() as u64;
            let n = f.points as u64;
            let r = f.radix as u64;
            assert_eq!(f.data_ops, stages * 2 * n / 16);
            assert_eq!(f.twiddle_ops, (stages - 1) * (n / r) * (r - 1) * 2 / 16);
        }
    }

    #[test]
    fn fft_multiport_is_near_additive() {
        // Totals are slightly below the component sum.
        for f in &FFT {
            for col in 0..2 {
                let sum = f.common.total() + f.data_load[col] + f.twiddle_load[col] + f.store[col];
                let rel = (sum as f64 - f.total[col] as f64).abs() / f.total[col] as f64;
                assert!(
                    rel < 0.01,
                    "radix {} col {}: {} vs {}",
                    f.radix,
                    col,
                    sum,
                    f.total[col]
                );
            }
        }
    }
}
