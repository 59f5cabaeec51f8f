use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::Serialize;

use biskm::fixedpoint::{fit_normalizer, quantize, PrecisionLevel};
use biskm::harness::{
    centers_from_fractions, emit_report, gen_blobs, load_csv, seeded_centers, sweep_with_workers, write_csv,
    DatasetSource, HarnessError, InitCenters, PrecisionList, ReportFormat, SweepConfig,
};
use biskm::kmeans::{run, RunParams, StopReason};
use biskm::perfmodel::{estimate_iteration, HwParams, IterationEstimate};
use biskm::weave::{unweave, weave, WeavedMatrix};

#[derive(Parser)]
#[command(name = "biskm", version, about = "Any-precision bit-serial K-Means")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded Gaussian blobs as CSV.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the true labels, one per line.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Quantize a CSV and store it as a weaved .bisw file.
    Weave {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        header: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        hw: Option<PathBuf>,
    },
    /// Run K-Means on a .bisw file at one precision.
    Kmeans(KmeansArgs),
    /// Run K-Means at several precisions and report loss and modeled time.
    Sweep(SweepArgs),
    /// Print the modeled cost of one iteration as JSON.
    Model {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        d: u64,
        #[arg(long)]
        k: u64,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..=32))]
        precision: u32,
        #[arg(long)]
        hw: Option<PathBuf>,
    },
}

#[derive(Args)]
#[command(group(ArgGroup::new("init_source").required(true).args(["init", "seed"])))]
struct KmeansArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=32))]
    precision: u32,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// CSV of initial centers as fractions in [0, 1].
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    hw: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("init_source").required(true).args(["init", "seed"])))]
struct SweepArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    header: bool,
    #[arg(long, default_value = "4,6,8,12,16,32")]
    precisions: String,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// CSV of initial centers as fractions in [0, 1].
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    hw: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Dataset copies streamed by the modeled hardware.
    #[arg(long, default_value_t = 1)]
    duplicate: u64,
}

#[derive(Serialize)]
struct KmeansReport {
    schema: &'static str,
    tool_version: &'static str,
    n: usize,
    d: usize,
    k: usize,
    precision: u32,
    iterations: usize,
    converged: bool,
    stop_reason: StopReason,
    loss_trace: Vec<f64>,
    centers: Vec<Vec<f64>>,
    assignments: Vec<u32>,
    estimate: IterationEstimate,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::InvalidConfig(_) => Failure::Usage(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> Failure {
    Failure::Data(e.to_string())
}

fn read_hw(path: Option<&Path>) -> Result<HwParams, Failure> {
    let hw = match path {
        None => HwParams::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?
        }
    };
    hw.validate().map_err(data_err)?;
    Ok(hw)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(data_err)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn precision(bits: u32) -> PrecisionLevel {
    PrecisionLevel::new(bits).expect("validated by clap")
}

fn load_init(path: &Path) -> Result<Vec<Vec<f64>>, Failure> {
    let m = load_csv(path, false)?;
    Ok(m.iter_rows().map(<[f64]>::to_vec).collect())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData { n, d, k, seed, spread, out, labels } => {
            let (data, truth) = gen_blobs(n, d, k, seed, spread).map_err(Failure::from)?;
            write_csv(&out, &data)?;
            if let Some(path) = labels {
                let text: String = truth.iter().map(|l| format!("{l}\n")).collect();
                fs::write(&path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
            }
        }
        Command::Weave { input, header, out, hw } => {
            let hw = read_hw(hw.as_deref())?;
            let data = load_csv(&input, header)?;
            let norm = fit_normalizer(&data).map_err(data_err)?;
            let fixed = quantize(&data, &norm).map_err(data_err)?;
            let w = weave(&fixed, hw.layout()).map_err(data_err)?;
            w.save(&out).map_err(data_err)?;
        }
        Command::Kmeans(args) => {
            let hw = read_hw(args.hw.as_deref())?;
            let w = WeavedMatrix::load(&args.input).map_err(data_err)?;
            let p = precision(args.precision);
            let init = match (&args.init, args.seed) {
                (Some(path), _) => centers_from_fractions(&load_init(path)?)?,
                (None, Some(seed)) => seeded_centers(&unweave(&w, PrecisionLevel::FULL), args.k, seed)?,
                (None, None) => unreachable!("clap requires one init source"),
            };
            if init.k() != args.k {
                return Err(Failure::Usage(format!("{} initial centers for --k {}", init.k(), args.k)));
            }
            let params = RunParams { max_iters: args.max_iters, tol: args.tol, record_history: false };
            params.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let result = run(&w, &init, p, &params).map_err(data_err)?;
            if args.k > hw.max_clusters {
                eprintln!("warning: k = {} exceeds the {} modeled distance processors", args.k, hw.max_clusters);
            }
            let estimate = estimate_iteration(w.n() as u64, w.d() as u64, args.k as u64, p, &hw).map_err(data_err)?;
            let report = KmeansReport {
                schema: "biskm-kmeans/1",
                tool_version: env!("CARGO_PKG_VERSION"),
                n: w.n(),
                d: w.d(),
                k: args.k,
                precision: p.bits(),
                iterations: result.iterations,
                converged: result.converged,
                stop_reason: result.stop_reason,
                loss_trace: result.loss_trace,
                centers: result.centers.to_fractions(),
                assignments: result.assignments,
                estimate,
            };
            write_json(&args.report, &report)?;
        }
        Command::Sweep(args) => {
            let precisions: PrecisionList =
                args.precisions.parse().map_err(|e: HarnessError| Failure::Usage(e.to_string()))?;
            let init = match (&args.init, args.seed) {
                (Some(path), _) => InitCenters::Explicit(load_init(path)?),
                (None, Some(seed)) => InitCenters::Seeded(seed),
                (None, None) => unreachable!("clap requires one init source"),
            };
            let config = SweepConfig {
                precisions,
                k: args.k,
                max_iters: args.max_iters,
                tol: args.tol,
                init,
                hw: read_hw(args.hw.as_deref())?,
                dataset: DatasetSource::Csv { path: args.input.clone(), has_header: args.header },
                duplicate: args.duplicate,
            };
            if config.k > config.hw.max_clusters {
                eprintln!(
                    "warning: k = {} exceeds the {} modeled distance processors",
                    config.k, config.hw.max_clusters
                );
            }
            let (report, wall) = sweep_with_workers(&config, args.workers)?;
            emit_report(&report, ReportFormat::Json, &args.report)?;
            if let Some(csv) = &args.csv {
                emit_report(&report, ReportFormat::Csv, csv)?;
            }
            for (p, t) in &wall.per_precision_s {
                eprintln!("precision {p:>2}: {:.3} s wall-clock", t);
            }
            eprintln!("total: {:.3} s wall-clock", wall.total_s);
        }
        Command::Model { n, d, k, precision: bits, hw } => {
            let hw = read_hw(hw.as_deref())?;
            let est = estimate_iteration(n, d, k, precision(bits), &hw).map_err(data_err)?;
            if !est.hardware_faithful {
                eprintln!("warning: k = {k} exceeds the {} modeled distance processors", hw.max_clusters);
            }
            println!("{}", serde_json::to_string_pretty(&est).map_err(data_err)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
