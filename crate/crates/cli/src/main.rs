//! `otwb`: generate instances, solve them, benchmark methods and plot traces.
//!
//! Exit codes: 0 success (for `solve`, a certificate within `--eps`), 1 runtime error,
//! 2 `solve` finished without certifying `--eps`, 64 usage error.

mod bench;
mod methods;
mod svg;
mod trace;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use methods::{Flags, GammaArg, Method};
use otwb::instances::{self, Instance, PixelMetric};
use otwb::penalized::Penalty;

const EXIT_UNCERTIFIED: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "otwb", version, about = "Hybrid primal-dual solvers for optimal transport and barycenters")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a generated instance as JSON.
    Gen(GenArgs),
    /// Solve one instance; writes a JSON report and optionally a trace CSV and SVG plot.
    Solve(SolveArgs),
    /// Run several methods on several instances and write one CSV row per pair.
    Bench(BenchArgs),
    /// Render a trace CSV as a log-log SVG plot.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Gaussian,
    Random,
    Corner,
    ImagePair,
    GaussianWb,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Euclidean,
    Sqeuclidean,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    /// Support size (gaussian, random, gaussian-wb).
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Image side length (corner, image-pair); `n = npix²`.
    #[arg(long, default_value_t = 10)]
    npix: usize,
    /// Number of marginals (gaussian-wb).
    #[arg(long, default_value_t = 10)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Metric::Euclidean)]
    metric: Metric,
    /// Image files (PGM or CSV) for image-pair; random blobs when omitted.
    #[arg(long, requires = "image_b")]
    image_a: Option<PathBuf>,
    #[arg(long, requires = "image_a")]
    image_b: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a positive number")),
    }
}

fn unit_open(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        _ => Err(format!("`{s}` must lie in (0, 1)")),
    }
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Target certified accuracy.
    #[arg(long, default_value_t = 0.01, value_parser = positive, allow_hyphen_values = true)]
    eps: f64,
    /// Regularization weight: `auto` (eps/(4 ln n)) or a value.
    #[arg(long, default_value = "auto")]
    gamma: GammaArg,
    /// Multiplier of the default initial step ratio β₁.
    #[arg(long, value_parser = positive)]
    beta1_mult: Option<f64>,
    /// Linesearch shrink factor.
    #[arg(long, default_value_t = 0.99, value_parser = unit_open)]
    rho: f64,
    /// Scaled-entropy parameter for hpd-scaled and agd-scaled.
    #[arg(long, value_parser = unit_open)]
    delta: Option<f64>,
    /// Marginal penalty `quad:<eta>` or `tv:<alpha>`; switches to the unbalanced problem.
    #[arg(long, value_parser = |s: &str| s.parse::<Penalty>().map_err(|e| e.to_string()))]
    penalty: Option<Penalty>,
    /// Constrain plan rows to μ (same as the `-fm` method suffix).
    #[arg(long)]
    fixed_marginal: bool,
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
    /// Outer iterations between certificate evaluations (default ⌈√n⌉).
    #[arg(long)]
    gap_every: Option<usize>,
}

impl SolverArgs {
    fn flags(&self) -> Flags {
        Flags {
            eps: self.eps,
            gamma: self.gamma,
            beta1_mult: self.beta1_mult,
            rho: self.rho,
            delta: self.delta,
            penalty: self.penalty,
            fixed_marginal: self.fixed_marginal,
            max_iter: self.max_iter,
            gap_every: self.gap_every,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Instance JSON.
    input: PathBuf,
    #[arg(long, default_value = "gamma-hpd-ls-fm")]
    method: String,
    #[command(flatten)]
    solver: SolverArgs,
    /// Report path (stdout when omitted).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Include the final plan in the report (OT only).
    #[arg(long)]
    with_plan: bool,
    /// Accepted for interface uniformity; solves are deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    /// Instance JSON files.
    #[arg(required = true)]
    instances: Vec<PathBuf>,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',', default_value = "gamma-hpd-ls-fm")]
    methods: Vec<String>,
    /// Outer-iteration budget per run (overrides --max-iter).
    #[arg(long)]
    budget: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
    /// CSV path (stdout when omitted).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Trace CSV written by `solve --trace`.
    trace: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value = "convergence")]
    title: String,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<otwb::Error> for Failure {
    fn from(e: otwb::Error) -> Self {
        match e {
            otwb::Error::InvalidConfig(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<String> for Failure {
    fn from(e: String) -> Self {
        Failure::Runtime(e)
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn parse_method(name: &str) -> Result<Method, Failure> {
    name.parse().map_err(Failure::Usage)
}

fn cmd_gen(a: GenArgs) -> Result<u8, Failure> {
    let metric = match a.metric {
        Metric::Euclidean => PixelMetric::Euclidean,
        Metric::Sqeuclidean => PixelMetric::SquaredEuclidean,
    };
    let inst: Instance = match a.kind {
        Kind::Gaussian => instances::gen_gaussian_instance(a.n, a.seed)?.into(),
        Kind::Random => instances::gen_random_instance(a.n, a.seed)?.into(),
        Kind::Corner => instances::gen_corner_to_dense(a.npix, metric)?.into(),
        Kind::ImagePair => {
            let (ia, ib) = match (&a.image_a, &a.image_b) {
                (Some(pa), Some(pb)) => (instances::load_image(pa)?, instances::load_image(pb)?),
                _ => instances::gen_blob_images(a.npix, a.seed),
            };
            instances::ot_from_images(&ia, &ib, metric)?.into()
        }
        Kind::GaussianWb => instances::gen_gaussian_wb(a.m, a.n, a.seed)?.instance.into(),
    };
    instances::save_instance(&inst, &a.out)?;
    Ok(0)
}

fn cmd_solve(a: SolveArgs) -> Result<u8, Failure> {
    let method = parse_method(&a.method)?;
    let inst = instances::load_instance(&a.input)?;
    let out = methods::run(&a.method, method, &a.solver.flags(), &inst, a.with_plan)?;
    let json = serde_json::to_string_pretty(&out.report).expect("report serializes");
    match &a.report {
        Some(p) => write_file(p, &(json + "\n"))?,
        None => println!("{json}"),
    }
    if let Some(p) = &a.trace {
        trace::write_trace(p, &out.trace)?;
    }
    if let Some(p) = &a.svg {
        write_file(p, &svg::render(&out.trace, &a.method))?;
    }
    if out.report.certified {
        Ok(0)
    } else {
        eprintln!(
            "otwb: certificate {:.3e} above eps {:.3e} after {} iterations",
            out.report.gap_rounded, out.report.eps, out.report.iterations
        );
        Ok(EXIT_UNCERTIFIED)
    }
}

fn cmd_bench(a: BenchArgs) -> Result<u8, Failure> {
    let methods = a
        .methods
        .iter()
        .map(|m| parse_method(m).map(|p| (m.clone(), p)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut flags = a.solver.flags();
    if let Some(b) = a.budget {
        flags.max_iter = b;
    }
    let rows = bench::run_bench(&a.instances, &methods, &flags);
    bench::write_rows(a.out.as_deref(), &rows)?;
    Ok(0)
}

fn cmd_plot(a: PlotArgs) -> Result<u8, Failure> {
    let rows = trace::read_trace(&a.trace)?;
    write_file(&a.out, &svg::render(&rows, &a.title))?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    if let Ok(t) = std::env::var("OTWB_THREADS") {
        match t.parse::<usize>() {
            Ok(k) if k > 0 => {
                if let Err(e) = otwb::par::configure_threads(k) {
                    eprintln!("otwb: {e}");
                    return ExitCode::from(1);
                }
            }
            _ => {
                eprintln!("otwb: OTWB_THREADS must be a positive integer, got `{t}`");
                return ExitCode::from(EXIT_USAGE);
            }
        }
    }
    let result = match cli.cmd {
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Solve(a) => cmd_solve(a),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("otwb: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("otwb: {msg}");
            ExitCode::from(1)
        }
    }
}
