//! Scenario matrices, area estimates, rendering and comparison against the
//! published tables.

mod compare;
mod footprint;

pub use compare::{
    compare_to_reference, emit_comparison, CellDelta, Comparison, ToleranceClass, ToleranceSummary,
};
pub use footprint::{footprint_estimate, CapacityError, Footprint, CORE_LOGIC_ALMS, SECTOR_ALMS};

use crate::kernels::{gen_fft, gen_transpose, GenMode, KernelError, KernelSpec, KernelTrace};
use crate::mem_arch::{BankMapping, ConfigError};
use crate::reference::{FFT_ARCHS, TRANSPOSE_ARCHS};
use crate::sim::{run, SimError, SimMetrics};
use crate::timing::{ArchKind, MemArchitecture, TimingParams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_MEM_KB: u32 = 64;

/// Architecture choice independent of memory size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ArchSpec {
    FourR1W,
    FourR2W,
    FourR1WVb,
    Banked(BankMapping),
}

impl ArchSpec {
    pub fn kind(&self) -> ArchKind {
        match self {
            ArchSpec::FourR1W => ArchKind::MultiPort4R1W,
            ArchSpec::FourR2W => ArchKind::MultiPort4R2W,
            ArchSpec::FourR1WVb => ArchKind::MultiPort4R1WVb,
            ArchSpec::Banked(_) => ArchKind::Banked,
        }
    }

    pub fn build(&self, mem_kb: u32) -> Result<MemArchitecture, ConfigError> {
        Ok(match self {
            ArchSpec::FourR1W => MemArchitecture::multiport_4r1w(mem_kb),
            ArchSpec::FourR2W => MemArchitecture::multiport_4r2w(mem_kb),
            ArchSpec::FourR1WVb => MemArchitecture::multiport_4r1w_vb(mem_kb),
            ArchSpec::Banked(mapping) => MemArchitecture::banked(*mapping, mem_kb)?,
        })
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArchSpec::FourR1W => f.write_str("4r1w"),
            ArchSpec::FourR2W => f.write_str("4r2w"),
            ArchSpec::FourR1WVb => f.write_str("4r1w-vb"),
            ArchSpec::Banked(m) => write!(f, "banked{}-{}", m.num_banks(), m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error(
    "unknown architecture `{0}` (expected 4r1w, 4r2w, 4r1w-vb, bankedN-lsb or bankedN-offsetS)"
)]
pub struct ParseArchError(String);

impl FromStr for ArchSpec {
    type Err = ParseArchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseArchError(s.to_string());
        match s {
            "4r1w" => return Ok(ArchSpec::FourR1W),
            "4r2w" => return Ok(ArchSpec::FourR2W),
            "4r1w-vb" => return Ok(ArchSpec::FourR1WVb),
            _ => {}
        }
        let rest = s.strip_prefix("banked").ok_or_else(err)?;
        let (banks, mapping) = rest.split_once('-').ok_or_else(err)?;
        let banks: usize = banks.parse().map_err(|_| err())?;
        let width = crate::mem_arch::width_for_banks(banks).map_err(|_| err())?;
        let mapping = if mapping == "lsb" {
            BankMapping::lsb(width)
        } else {
            let shift: u32 = mapping
                .strip_prefix("offset")
                .ok_or_else(err)?
                .parse()
                .map_err(|_| err())?;
            BankMapping::bit_slice(shift, width)
        }
        .map_err(|_| err())?;
        Ok(ArchSpec::Banked(mapping))
    }
}

impl TryFrom<String> for ArchSpec {
    type Error = ParseArchError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ArchSpec> for String {
    fn from(a: ArchSpec) -> String {
        a.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(flatten)]
    pub kernel: KernelSpec,
    pub arch: ArchSpec,
    pub mem_kb: u32,
    pub mode: GenMode,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Capacity(#[from] CapacityError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub fn generate(kernel: &KernelSpec, mode: GenMode) -> Result<KernelTrace, KernelError> {
    match *kernel {
        KernelSpec::Transpose { n } => gen_transpose(n, mode),
        KernelSpec::Fft { radix, points } => gen_fft(radix, points, mode),
    }
}

impl Scenario {
    pub fn run(&self, params: &TimingParams) -> Result<(SimMetrics, Footprint), ScenarioError> {
        let footprint = footprint_estimate(&self.arch, self.mem_kb)?;
        let arch = self.arch.build(self.mem_kb)?;
        let trace = generate(&self.kernel, self.mode)?;
        Ok((run(&trace, &arch, params)?, footprint))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: Scenario,
    pub metrics: Option<SimMetrics>,
    pub footprint: Option<Footprint>,
    /// Run time relative to the slowest scenario of the same kernel and mode.
    pub normalized: Option<f64>,
    /// The one scenario per group that the others are normalized against.
    pub baseline: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub rows: Vec<ReportRow>,
}

/// The published matrix: every transpose size and FFT radix on each of the
/// architectures its table lists, calibrated, at 64 KB.
pub fn default_matrix() -> Vec<Scenario> {
    let scenario = |kernel, arch: &str| Scenario {
        kernel,
        arch: arch.parse().expect("static label"),
        mem_kb: DEFAULT_MEM_KB,
        mode: GenMode::Calibrated,
    };
    let mut out = Vec::new();
    for n in [32, 64, 128] {
        out.extend(
            TRANSPOSE_ARCHS
                .iter()
                .map(|a| scenario(KernelSpec::Transpose { n }, a)),
        );
    }
    for radix in [4, 8, 16] {
        out.extend(FFT_ARCHS.iter().map(|a| {
            scenario(
                KernelSpec::Fft {
                    radix,
                    points: 4096,
                },
                a,
            )
        }));
    }
    out
}

/// Runs every scenario (in parallel); rows keep the input order and a failing
/// scenario only marks its own row.
pub fn run_matrix(scenarios: &[Scenario], params: &TimingParams) -> Report {
    let mut rows: Vec<ReportRow> = scenarios
        .par_iter()
        .map(|s| match s.run(params) {
            Ok((metrics, footprint)) => ReportRow {
                scenario: *s,
                metrics: Some(metrics),
                footprint: Some(footprint),
                normalized: None,
                baseline: false,
                error: None,
            },
            Err(e) => ReportRow {
                scenario: *s,
                metrics: None,
                footprint: None,
                normalized: None,
                baseline: false,
                error: Some(e.to_string()),
            },
        })
        .collect();
    normalize(&mut rows);
    Report {
        schema_version: REPORT_SCHEMA_VERSION,
        rows,
    }
}

fn seconds(row: &ReportRow) -> Option<f64> {
    let m = row.metrics.as_ref()?;
    let clock = row.scenario.arch.build(row.scenario.mem_kb).ok()?.clock_mhz;
    Some(m.cycles.total as f64 / clock)
}

fn normalize(rows: &mut [ReportRow]) {
    let mut groups: Vec<(KernelSpec, GenMode)> = Vec::new();
    for r in rows.iter() {
        let key = (r.scenario.kernel, r.scenario.mode);
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    for key in groups {
        let members: Vec<usize> = (0..rows.len())
            .filter(|&i| {
                (rows[i].scenario.kernel, rows[i].scenario.mode) == key && rows[i].metrics.is_some()
            })
            .collect();
        let times: Vec<f64> = members
            .iter()
            .map(|&i| seconds(&rows[i]).unwrap_or(0.0))
            .collect();
        let Some(slowest) = times.iter().copied().reduce(f64::max) else {
            continue;
        };
        if slowest <= 0.0 {
            continue;
        }
        // Ties go to the earliest row.
        let base = times
            .iter()
            .position(|&t| t == slowest)
            .expect("max is present");
        for (k, &i) in members.iter().enumerate() {
            rows[i].normalized = Some((times[k] / slowest * 1000.0).round() / 1000.0);
            rows[i].baseline = k == base;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown format `{0}` (expected table, csv or json)")]
pub struct ParseFormatError(String);

impl FromStr for Format {
    type Err = ParseFormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(Format::Table),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(ParseFormatError(other.to_string())),
        }
    }
}

pub const COLUMNS: [&str; 17] = [
    "kernel",
    "arch",
    "mem_kb",
    "mode",
    "common",
    "load",
    "twiddle_load",
    "store",
    "overlap",
    "total",
    "time_us",
    "read_eff",
    "write_eff",
    "twiddle_eff",
    "compute_eff",
    "normalized",
    "error",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cells(row: &ReportRow) -> Vec<String> {
    let s = &row.scenario;
    let mode = match s.mode {
        GenMode::Native => "native",
        GenMode::Calibrated => "calibrated",
    };
    let mut out = vec![
        s.kernel.label(),
        s.arch.to_string(),
        s.mem_kb.to_string(),
        mode.to_string(),
    ];
    match &row.metrics {
        Some(m) => {
            let c = &m.cycles;
            out.extend([
                c.common().to_string(),
                c.load.to_string(),
                c.twiddle_load.to_string(),
                c.store.to_string(),
                c.overlap_credit.to_string(),
                c.total.to_string(),
                format!("{:.2}", m.time_us),
                opt(m.efficiencies.read_bank),
                opt(m.efficiencies.write_bank),
                opt(m.efficiencies.twiddle_bank),
                m.efficiencies.compute.to_string(),
            ]);
        }
        None => out.extend(std::iter::repeat_n(String::new(), 11)),
    }
    out.push(opt(row.normalized));
    out.push(row.error.clone().unwrap_or_default());
    out
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("reading {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing {path}")]
    Toml {
        path: String,
        source: toml::de::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Renders a report. Column order is fixed by [`COLUMNS`].
pub fn emit(report: &Report, format: Format) -> Result<String, ReportError> {
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(COLUMNS)?;
            for row in &report.rows {
                w.write_record(cells(row))?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| csv::Error::from(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        Format::Table => {
            let body: Vec<Vec<String>> = report.rows.iter().map(cells).collect();
            Ok(render_table(&COLUMNS.map(String::from), &body))
        }
    }
}

/// Fixed-width text table: first column left aligned, others right aligned.
pub fn render_table(header: &[String], body: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |row: &[String]| {
        let parts: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i < 2 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    out += &(widths
        .iter()
        .map(|w| "-".repeat(*w))
        .collect::<Vec<_>>()
        .join("  ")
        + "\n");
    for row in body {
        out += &line(row);
    }
    out
}

/// Reads timing overrides from a TOML file; unspecified keys keep defaults.
pub fn load_params(path: &Path) -> Result<TimingParams, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    toml::from_str(&text).map_err(|source| ReportError::Toml {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arch_labels_round_trip() {
        for label in TRANSPOSE_ARCHS.iter().chain(FFT_ARCHS.iter()) {
            assert_eq!(label.parse::<ArchSpec>().unwrap().to_string(), *label);
        }
        assert_eq!(
            "banked8-offset3".parse::<ArchSpec>().unwrap().to_string(),
            "banked8-offset3"
        );
        for bad in [
            "banked5-lsb",
            "banked16",
            "banked16-offsetx",
            "8r1w",
            "banked16-offset30",
        ] {
            assert!(bad.parse::<ArchSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn default_matrix_shape() {
        let m = default_matrix();
        assert_eq!(m.len(), 51);
        assert_eq!(
            m.iter()
                .filter(|s| matches!(s.kernel, KernelSpec::Transpose { .. }))
                .count(),
            24
        );
    }

    #[test]
    fn empty_matrix() {
        let r = run_matrix(&[], &TimingParams::default());
        assert!(r.rows.is_empty());
        assert_eq!(emit(&r, Format::Csv).unwrap().lines().count(), 1);
    }

    #[test]
    fn failing_row_is_isolated() {
        let ok = Scenario {
            kernel: KernelSpec::Transpose { n: 32 },
            arch: ArchSpec::FourR1W,
            mem_kb: 64,
            mode: GenMode::Calibrated,
        };
        let too_big = Scenario { mem_kb: 128, ..ok };
        let r = run_matrix(&[ok, too_big, ok], &TimingParams::default());
        assert!(r.rows[0].metrics.is_some() && r.rows[2].metrics.is_some());
        assert!(r.rows[1].error.as_deref().unwrap().contains("112 KB"));
        assert_eq!(r.rows.iter().filter(|x| x.baseline).count(), 1);
        assert!(r.rows[0].baseline);
    }

    #[test]
    fn format_parsing() {
        assert_eq!("csv".parse::<Format>().unwrap(), Format::Csv);
        assert!("xml".parse::<Format>().is_err());
    }

    #[test]
    fn scenario_json() {
        let s = default_matrix()[30];
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<Scenario>(&text).unwrap(), s);
    }
}
