use anyhow::{Context, Result};
use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{error::ErrorKind, Args, CommandFactory, Parser, Subcommand, ValueEnum};
use simt_membank::kernels::{GenMode, KernelSpec};
use simt_membank::mem_arch::{width_for_banks, BankMapping};
use simt_membank::report::{
    compare_to_reference, default_matrix, emit, emit_comparison, footprint_estimate, generate,
    load_params, render_table, run_matrix, ArchSpec, Format, Report, Scenario, DEFAULT_MEM_KB,
};
use simt_membank::timing::{Overhead, TimingParams};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Banked vs. multi-port shared memory simulator for a 16-lane SIMT core.
#[derive(Parser)]
#[command(name = "simt-membank", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one kernel on one architecture.
    Run(RunArgs),
    /// Simulate a list of scenarios.
    Matrix(MatrixArgs),
    /// Estimate the ALM footprint of an architecture.
    Footprint(FootprintArgs),
    /// Export a kernel's warp operations as JSON lines.
    Trace(TraceArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelKind {
    Transpose,
    Fft,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    #[value(name = "4r1w")]
    FourR1W,
    #[value(name = "4r2w")]
    FourR2W,
    #[value(name = "4r1w-vb")]
    FourR1WVb,
    Banked,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Native,
    Calibrated,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Table,
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::Table => Format::Table,
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long)]
    kernel: KernelKind,
    /// Matrix dimension (transpose).
    #[arg(long)]
    size: Option<u32>,
    /// FFT radix (4, 8 or 16).
    #[arg(long)]
    radix: Option<u32>,
    /// FFT length.
    #[arg(long, default_value_t = 4096)]
    points: u32,
    #[arg(long, value_enum, default_value = "native")]
    mode: ModeArg,
}

#[derive(Args)]
struct ArchArgs {
    #[arg(long)]
    arch: ArchArg,
    /// Bank count for `--arch banked`.
    #[arg(long, default_value = "16", value_parser = PossibleValuesParser::new(["4", "8", "16"]).map(|s| s.parse::<usize>().unwrap()))]
    banks: usize,
    /// `lsb` or `offset:<shift>`.
    #[arg(long, default_value = "lsb")]
    mapping: String,
    #[arg(long, default_value_t = DEFAULT_MEM_KB)]
    mem_kb: u32,
}

#[derive(Args)]
struct TimingArgs {
    /// TOML file of timing parameters; flags below take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Read overhead per instruction, `cycles` or `cycles/instructions`.
    #[arg(long)]
    read_overhead: Option<Overhead>,
    /// Write overhead per instruction, `cycles` or `cycles/instructions`.
    #[arg(long)]
    write_overhead: Option<Overhead>,
    /// 4R-1W-VB sub-memory selector, `offset:<shift>`.
    #[arg(long)]
    vb_mapping: Option<String>,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value = "table")]
    format: FormatArg,
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    timing: TimingArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct MatrixArgs {
    /// The published 51-scenario matrix.
    #[arg(long = "default", conflicts_with = "scenarios")]
    default_matrix: bool,
    /// JSON array of scenarios.
    #[arg(long)]
    scenarios: Option<PathBuf>,
    /// Append per-cell deltas against the published tables.
    #[arg(long)]
    compare_paper: bool,
    #[command(flatten)]
    timing: TimingArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct FootprintArgs {
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn usage_error(kind: ErrorKind, msg: impl std::fmt::Display) -> ! {
    Cli::command().error(kind, msg).exit()
}

fn parse_mapping(text: &str, width: u32) -> BankMapping {
    let mapping = if text == "lsb" {
        BankMapping::lsb(width)
    } else if let Some(shift) = text.strip_prefix("offset:").and_then(|s| s.parse().ok()) {
        BankMapping::bit_slice(shift, width)
    } else {
        usage_error(
            ErrorKind::InvalidValue,
            format!("invalid mapping `{text}` (expected lsb or offset:<shift>)"),
        )
    };
    mapping.unwrap_or_else(|e| usage_error(ErrorKind::InvalidValue, e))
}

impl KernelArgs {
    fn spec(&self) -> KernelSpec {
        match self.kernel {
            KernelKind::Transpose => {
                let n = self.size.unwrap_or_else(|| {
                    usage_error(
                        ErrorKind::MissingRequiredArgument,
                        "--kernel transpose needs --size",
                    )
                });
                KernelSpec::Transpose { n }
            }
            KernelKind::Fft => {
                let radix = self.radix.unwrap_or_else(|| {
                    usage_error(
                        ErrorKind::MissingRequiredArgument,
                        "--kernel fft needs --radix",
                    )
                });
                KernelSpec::Fft {
                    radix,
                    points: self.points,
                }
            }
        }
    }

    fn mode(&self) -> GenMode {
        match self.mode {
            ModeArg::Native => GenMode::Native,
            ModeArg::Calibrated => GenMode::Calibrated,
        }
    }
}

impl ArchArgs {
    fn spec(&self) -> ArchSpec {
        match self.arch {
            ArchArg::FourR1W => ArchSpec::FourR1W,
            ArchArg::FourR2W => ArchSpec::FourR2W,
            ArchArg::FourR1WVb => ArchSpec::FourR1WVb,
            ArchArg::Banked => {
                let width = width_for_banks(self.banks).expect("validated by clap");
                ArchSpec::Banked(parse_mapping(&self.mapping, width))
            }
        }
    }
}

impl TimingArgs {
    fn params(&self) -> Result<TimingParams> {
        let mut params = match &self.config {
            Some(path) => load_params(path)?,
            None => TimingParams::default(),
        };
        if let Some(o) = self.read_overhead {
            params.per_instruction_overhead_read = o;
        }
        if let Some(o) = self.write_overhead {
            params.per_instruction_overhead_write = o;
        }
        if let Some(m) = &self.vb_mapping {
            params.vb_mapping = parse_mapping(m, 2);
        }
        Ok(params)
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn finish_report(report: &Report, compare: bool, output: &OutputArgs) -> Result<ExitCode> {
    let format: Format = output.format.into();
    let text = if compare {
        let cmp = compare_to_reference(report);
        match format {
            Format::Json => {
                serde_json::to_string_pretty(
                    &serde_json::json!({ "report": report, "comparison": cmp }),
                )? + "\n"
            }
            // Two CSV blocks separated by a blank line.
            _ => emit(report, format)? + "\n" + &emit_comparison(&cmp, format)?,
        }
    } else {
        emit(report, format)?
    };
    write_output(output.out.as_deref(), &text)?;
    let failures: Vec<&str> = report
        .rows
        .iter()
        .filter_map(|r| r.error.as_deref())
        .collect();
    for f in &failures {
        eprintln!("error: {f}");
    }
    Ok(if failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn run_cmd(args: RunArgs) -> Result<ExitCode> {
    let scenario = Scenario {
        kernel: args.kernel.spec(),
        arch: args.arch.spec(),
        mem_kb: args.arch.mem_kb,
        mode: args.kernel.mode(),
    };
    let params = args.timing.params()?;
    finish_report(&run_matrix(&[scenario], &params), false, &args.output)
}

fn matrix_cmd(args: MatrixArgs) -> Result<ExitCode> {
    let scenarios = if args.default_matrix {
        default_matrix()
    } else if let Some(path) = &args.scenarios {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        usage_error(
            ErrorKind::MissingRequiredArgument,
            "matrix needs --default or --scenarios <PATH>",
        )
    };
    let params = args.timing.params()?;
    finish_report(
        &run_matrix(&scenarios, &params),
        args.compare_paper,
        &args.output,
    )
}

fn footprint_cmd(args: FootprintArgs) -> Result<ExitCode> {
    let arch = args.arch.spec();
    let f = match footprint_estimate(&arch, args.arch.mem_kb) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(1));
        }
    };
    let text = match args.output.format {
        FormatArg::Json => {
            serde_json::to_string_pretty(&serde_json::json!({
                "arch": arch.to_string(),
                "mem_kb": args.arch.mem_kb,
                "memory_alms": f.memory_alms,
                "logic_alms": f.logic_alms,
                "total_alms": f.total_alms(),
            }))? + "\n"
        }
        FormatArg::Csv => format!(
            "arch,mem_kb,memory_alms,logic_alms,total_alms\n{},{},{},{},{}\n",
            arch,
            args.arch.mem_kb,
            f.memory_alms,
            f.logic_alms,
            f.total_alms()
        ),
        FormatArg::Table => render_table(
            &["arch", "mem_kb", "memory_alms", "logic_alms", "total_alms"].map(String::from),
            &[vec![
                arch.to_string(),
                args.arch.mem_kb.to_string(),
                f.memory_alms.to_string(),
                f.logic_alms.to_string(),
                f.total_alms().to_string(),
            ]],
        ),
    };
    write_output(args.output.out.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

fn trace_cmd(args: TraceArgs) -> Result<ExitCode> {
    let trace = match generate(&args.kernel.spec(), args.kernel.mode()) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(1));
        }
    };
    match &args.out {
        Some(path) => {
            let file = std::fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))?;
            trace.export_jsonl(std::io::BufWriter::new(file))?;
        }
        None => trace.export_jsonl(std::io::stdout().lock())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run_cmd(a),
        Command::Matrix(a) => matrix_cmd(a),
        Command::Footprint(a) => footprint_cmd(a),
        Command::Trace(a) => trace_cmd(a),
    };
    result.unwrap_or_else(|e| {
        // A closed pipe (e.g. `| head`) is not a failure.
        if e.downcast_ref::<std::io::Error>()
            .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
        {
            return ExitCode::SUCCESS;
        }
        eprintln!("error: {e:#}");
        ExitCode::from(1)
    })
}
