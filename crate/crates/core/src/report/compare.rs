//! Cell-by-cell deltas between a report and the published tables.

use super::{render_table, ArchSpec, Format, Report, ReportError};
use crate::kernels::KernelSpec;
use crate::reference::{self, FFT_ARCHS, TRANSPOSE_ARCHS};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceClass {
    /// Cycle counts equal; times within the 0.01 µs print resolution.
    Exact,
    /// Within 3% of the published value.
    Within3Pct,
    /// Shown for reference only.
    Informational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDelta {
    pub kernel: String,
    pub arch: String,
    pub column: String,
    pub ours: f64,
    pub paper: f64,
    pub abs_delta: f64,
    pub pct_delta: Option<f64>,
    pub class: ToleranceClass,
    /// `None` for informational cells.
    pub within: Option<bool>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceSummary {
    pub class: ToleranceClass,
    pub cells: usize,
    pub within: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub cells: Vec<CellDelta>,
    /// Report rows with no published counterpart.
    pub unmatched: Vec<String>,
    pub summary: Vec<ToleranceSummary>,
}

impl Comparison {
    /// True when every non-informational cell is within tolerance.
    pub fn all_within(&self) -> bool {
        self.cells.iter().all(|c| c.within != Some(false))
    }
}

fn cell(
    kernel: &str,
    arch: &str,
    column: &str,
    ours: f64,
    paper: f64,
    class: ToleranceClass,
    is_time: bool,
) -> CellDelta {
    let abs_delta = ours - paper;
    let pct_delta = (paper != 0.0).then(|| 100.0 * abs_delta / paper);
    let within = match class {
        ToleranceClass::Exact if is_time => Some(abs_delta.abs() <= 0.01 + 1e-9),
        ToleranceClass::Exact => Some(abs_delta == 0.0),
        ToleranceClass::Within3Pct => Some(pct_delta.map_or(abs_delta == 0.0, |p| p.abs() <= 3.0)),
        ToleranceClass::Informational => None,
    };
    CellDelta {
        kernel: kernel.into(),
        arch: arch.into(),
        column: column.into(),
        ours,
        paper,
        abs_delta,
        pct_delta,
        class,
        within,
        note: None,
    }
}

pub fn compare_to_reference(report: &Report) -> Comparison {
    use ToleranceClass::*;
    let mut cells = Vec::new();
    let mut unmatched = Vec::new();
    for row in &report.rows {
        let Some(m) = &row.metrics else { continue };
        let arch = row.scenario.arch.to_string();
        let kernel = row.scenario.kernel.label();
        let is_lsb = matches!(row.scenario.arch, ArchSpec::Banked(b) if b.kind() == crate::mem_arch::MappingKind::LsbIndex);
        let multiport = row.scenario.arch.kind().is_multiport();
        match row.scenario.kernel {
            KernelSpec::Transpose { n } => {
                let (Some(r), Some(col)) = (
                    reference::transpose(n),
                    TRANSPOSE_ARCHS.iter().position(|a| *a == arch),
                ) else {
                    unmatched.push(format!("{kernel} {arch}"));
                    continue;
                };
                let counts = if multiport { Exact } else { Informational };
                let store = if multiport {
                    Exact
                } else if is_lsb {
                    Within3Pct
                } else {
                    Informational
                };
                let c = &m.cycles;
                cells.push(cell(
                    &kernel,
                    &arch,
                    "load",
                    c.load as f64,
                    r.load[col] as f64,
                    counts,
                    false,
                ));
                cells.push(cell(
                    &kernel,
                    &arch,
                    "store",
                    c.store as f64,
                    r.store[col] as f64,
                    store,
                    false,
                ));
                cells.push(cell(
                    &kernel,
                    &arch,
                    "total",
                    c.total as f64,
                    r.total[col] as f64,
                    counts,
                    false,
                ));
                cells.push(cell(
                    &kernel,
                    &arch,
                    "time_us",
                    m.time_us,
                    r.time_us[col],
                    counts,
                    true,
                ));
                if let (Some(ours), Some(paper)) = (m.efficiencies.read_bank, r.read_eff[col]) {
                    cells.push(cell(
                        &kernel,
                        &arch,
                        "read_eff",
                        ours,
                        paper,
                        Informational,
                        false,
                    ));
                }
                if let (Some(ours), Some(paper)) = (m.efficiencies.write_bank, r.write_eff[col]) {
                    let class = if is_lsb { Within3Pct } else { Informational };
                    cells.push(cell(&kernel, &arch, "write_eff", ours, paper, class, false));
                }
            }
            KernelSpec::Fft { radix, points } => {
                let (Some(r), Some(col)) = (
                    reference::fft(radix, points),
                    FFT_ARCHS.iter().position(|a| *a == arch),
                ) else {
                    unmatched.push(format!("{kernel} {arch}"));
                    continue;
                };
                let vb = arch == "4r1w-vb";
                let reads = if multiport { Within3Pct } else { Informational };
                let rest = if multiport && !vb {
                    Within3Pct
                } else {
                    Informational
                };
                let c = &m.cycles;
                cells.push(cell(
                    &kernel,
                    &arch,
                    "data_load",
                    c.load as f64,
                    r.data_load[col] as f64,
                    reads,
                    false,
                ));
                cells.push(cell(
                    &kernel,
                    &arch,
                    "twiddle_load",
                    c.twiddle_load as f64,
                    r.twiddle_load[col] as f64,
                    reads,
                    false,
                ));
                cells.push(cell(
                    &kernel,
                    &arch,
                    "store",
                    c.store as f64,
                    r.store[col] as f64,
                    rest,
                    false,
                ));
                cells.push(cell(
                    &kernel,
                    &arch,
                    "total",
                    c.total as f64,
                    r.total[col] as f64,
                    rest,
                    false,
                ));
                cells.push(cell(
                    &kernel,
                    &arch,
                    "time_us",
                    m.time_us,
                    r.time_us[col],
                    rest,
                    false,
                ));
                cells.push(cell(
                    &kernel,
                    &arch,
                    "efficiency",
                    m.efficiencies.compute,
                    r.efficiency[col],
                    rest,
                    false,
                ));
                if let (Some(ours), Some(paper)) = (m.efficiencies.read_bank, r.data_eff[col]) {
                    let mut d = cell(
                        &kernel,
                        &arch,
                        "data_eff",
                        ours,
                        paper,
                        Informational,
                        false,
                    );
                    let implied = 100.0 * r.data_ops as f64 / r.data_load[col] as f64;
                    if (implied - paper).abs() > 0.05 {
                        d.note = Some(format!(
                            "published value is not data ops / load cycles ({implied:.1})"
                        ));
                    }
                    cells.push(d);
                }
                if let (Some(ours), Some(paper)) = (m.efficiencies.twiddle_bank, r.twiddle_eff[col])
                {
                    cells.push(cell(
                        &kernel,
                        &arch,
                        "twiddle_eff",
                        ours,
                        paper,
                        Informational,
                        false,
                    ));
                }
            }
        }
    }
    let summary = [Exact, Within3Pct, Informational]
        .into_iter()
        .map(|class| {
            let of_class: Vec<&CellDelta> = cells.iter().filter(|c| c.class == class).collect();
            ToleranceSummary {
                class,
                cells: of_class.len(),
                within: of_class.iter().filter(|c| c.within == Some(true)).count(),
            }
        })
        .collect();
    Comparison {
        cells,
        unmatched,
        summary,
    }
}

fn class_name(class: ToleranceClass) -> &'static str {
    match class {
        ToleranceClass::Exact => "exact",
        ToleranceClass::Within3Pct => "within_3pct",
        ToleranceClass::Informational => "informational",
    }
}

const COMPARISON_COLUMNS: [&str; 10] = [
    "kernel",
    "arch",
    "column",
    "ours",
    "paper",
    "abs_delta",
    "pct_delta",
    "class",
    "within",
    "note",
];

fn comparison_cells(c: &CellDelta) -> Vec<String> {
    vec![
        c.kernel.clone(),
        c.arch.clone(),
        c.column.clone(),
        c.ours.to_string(),
        c.paper.to_string(),
        format!("{:.2}", c.abs_delta),
        c.pct_delta.map(|p| format!("{p:.2}")).unwrap_or_default(),
        class_name(c.class).to_string(),
        c.within.map(|w| w.to_string()).unwrap_or_default(),
        c.note.clone().unwrap_or_default(),
    ]
}

/// Renders the per-cell deltas, followed (table only) by the class summary
/// and any unmatched rows.
pub fn emit_comparison(cmp: &Comparison, format: Format) -> Result<String, ReportError> {
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(cmp)? + "\n"),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(COMPARISON_COLUMNS)?;
            for c in &cmp.cells {
                w.write_record(comparison_cells(c))?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| csv::Error::from(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        Format::Table => {
            let body: Vec<Vec<String>> = cmp.cells.iter().map(comparison_cells).collect();
            let mut out = render_table(&COMPARISON_COLUMNS.map(String::from), &body);
            for s in &cmp.summary {
                out += &format!(
                    "{}: {} cells, {} within tolerance\n",
                    class_name(s.class),
                    s.cells,
                    s.within
                );
            }
            for u in &cmp.unmatched {
                out += &format!("unmatched: {u}\n");
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::GenMode;
    use crate::report::{run_matrix, Scenario};
    use crate::timing::TimingParams;

    #[test]
    fn multiport_transpose_is_exact() {
        let scenarios: Vec<Scenario> = [32, 64, 128]
            .into_iter()
            .flat_map(|n| {
                [ArchSpec::FourR1W, ArchSpec::FourR2W].map(|arch| Scenario {
                    kernel: KernelSpec::Transpose { n },
                    arch,
                    mem_kb: 64,
                    mode: GenMode::Calibrated,
                })
            })
            .collect();
        let cmp = compare_to_reference(&run_matrix(&scenarios, &TimingParams::default()));
        assert_eq!(cmp.cells.len(), 24);
        assert!(cmp
            .cells
            .iter()
            .all(|c| c.class == ToleranceClass::Exact && c.within == Some(true)));
        assert!(cmp
            .cells
            .iter()
            .filter(|c| c.column != "time_us")
            .all(|c| c.abs_delta == 0.0));
    }

    #[test]
    fn offsets_are_informational_and_unknown_rows_listed() {
        let s = |kernel, arch: &str| Scenario {
            kernel,
            arch: arch.parse().unwrap(),
            mem_kb: 64,
            mode: GenMode::Native,
        };
        let report = run_matrix(
            &[
                s(KernelSpec::Transpose { n: 32 }, "banked16-offset2"),
                s(KernelSpec::Transpose { n: 16 }, "4r1w"),
                s(KernelSpec::Transpose { n: 32 }, "4r1w-vb"),
            ],
            &TimingParams::default(),
        );
        let cmp = compare_to_reference(&report);
        assert!(cmp
            .cells
            .iter()
            .all(|c| c.class == ToleranceClass::Informational && c.within.is_none()));
        assert_eq!(
            cmp.unmatched,
            vec!["transpose-16x16 4r1w", "transpose-32x32 4r1w-vb"]
        );
    }

    #[test]
    fn data_efficiency_discrepancy_is_flagged() {
        let report = run_matrix(
            &[Scenario {
                kernel: KernelSpec::Fft {
                    radix: 16,
                    points: 4096,
                },
                arch: "banked16-lsb".parse().unwrap(),
                mem_kb: 64,
                mode: GenMode::Calibrated,
            }],
            &TimingParams::default(),
        );
        let cmp = compare_to_reference(&report);
        let d = cmp.cells.iter().find(|c| c.column == "data_eff").unwrap();
        assert!(d.note.as_deref().unwrap().contains("12.6"));
        let csv = emit_comparison(&cmp, Format::Csv).unwrap();
        assert_eq!(csv.lines().count(), cmp.cells.len() + 1);
        let table = emit_comparison(&cmp, Format::Table).unwrap();
        assert!(table.contains("informational: 8 cells, 0 within tolerance"));
    }
}
