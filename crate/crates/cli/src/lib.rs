//! Command-line front end: fit, select-k, simulate, benchmark and classify.
//!
//! Exit codes: 0 on success, 2 for usage, configuration and I/O errors,
//! 3 when a fit fails.

pub mod data;
pub mod report;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use ellipse_gem::benchmark::{self, Method, MethodSummary, ReplicateResult};
use ellipse_gem::config::GemConfig;
use ellipse_gem::gem;
use ellipse_gem::model_selection::select_k;
use ellipse_gem::simdata::{sample_mixture, MeanKind, RadialKind, ScatterKind, SimDesign};

use report::{FitReport, GapReport, Metadata, SCHEMA_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FIT: i32 = 3;

/// A failure tagged with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_USAGE, error: error.into() }
    }

    fn fit(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_FIT, error: error.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Debug, Parser)]
#[command(name = "ellipse-gem", version, about = "Semiparametric elliptical-mixture clustering")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "ELLIPSE_GEM_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a K-component model to a CSV data matrix.
    Fit(FitArgs),
    /// Choose K with the gap one-standard-error rule.
    SelectK(SelectKArgs),
    /// Classify rows of a CSV file with a saved model.
    Classify(ClassifyArgs),
    /// Write simulated data sets and their true labels.
    Simulate(SimulateArgs),
    /// Compare GEM with baseline clusterers on simulated data.
    Benchmark(BenchmarkArgs),
}

/// Fit settings that can come from flags or a config file.
#[derive(Debug, Clone, Args)]
pub struct FitFlags {
    /// JSON file with any subset of the configuration fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Independent outer starts.
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    #[arg(long)]
    pub outer_tol: Option<f64>,
}

impl FitFlags {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self, k: Option<usize>, seed: Option<u64>) -> Result<GemConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read {}", path.display()))
                    .map_err(Failure::usage)?;
                serde_json::from_str::<GemConfig>(&text)
                    .with_context(|| format!("invalid config {}", path.display()))
                    .map_err(Failure::usage)?
            }
            None => GemConfig::default(),
        };
        if let Some(k) = k {
            cfg.k = k;
        }
        if let Some(v) = seed {
            cfg.seed = v;
        }
        if let Some(v) = self.starts {
            cfg.starts = v;
        }
        if let Some(v) = self.max_outer {
            cfg.max_outer = v;
        }
        if let Some(v) = self.outer_tol {
            cfg.outer_tol = v;
        }
        cfg.validate().context("invalid configuration").map_err(Failure::usage)?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Result JSON; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// One-based labels CSV.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub fit: FitFlags,
}

#[derive(Debug, Args)]
pub struct SelectKArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub k_min: usize,
    #[arg(long)]
    pub k_max: usize,
    /// Column-permutation reference samples.
    #[arg(long, default_value_t = 20)]
    pub b: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Gap table JSON; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub fit: FitFlags,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Result JSON written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Dist {
    Gaussian,
    T5,
    Laplace,
    Slash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScatterFlag {
    Ar,
    Cs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MeansFlag {
    Sparse,
    Dense,
}

#[derive(Debug, Clone, Args)]
pub struct DesignArgs {
    #[arg(long, value_enum, default_value_t = Dist::T5)]
    pub dist: Dist,
    #[arg(long, default_value_t = 100)]
    pub p: usize,
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    /// Signal strength of the mean design.
    #[arg(long, default_value_t = 1.5)]
    pub delta: f64,
    #[arg(long, value_enum, default_value_t = ScatterFlag::Ar)]
    pub scatter: ScatterFlag,
    /// Correlation parameter of the scatter matrix.
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    #[arg(long, value_enum, default_value_t = MeansFlag::Sparse)]
    pub means: MeansFlag,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl DesignArgs {
    pub fn design(&self) -> Result<SimDesign, Failure> {
        if self.reps == 0 {
            return Err(Failure::usage(anyhow::anyhow!("--reps must be at least 1")));
        }
        let design = SimDesign {
            n: self.n,
            p: self.p,
            k: 3,
            scatter: match self.scatter {
                ScatterFlag::Ar => ScatterKind::Ar(self.rho),
                ScatterFlag::Cs => ScatterKind::CompoundSymmetric(self.rho),
            },
            radial: match self.dist {
                Dist::Gaussian => RadialKind::Gaussian,
                Dist::T5 => RadialKind::StudentT(5.0),
                Dist::Laplace => RadialKind::Laplace,
                Dist::Slash => RadialKind::Slash(4.0),
            },
            means: match self.means {
                MeansFlag::Sparse => MeanKind::Sparse(self.delta),
                MeansFlag::Dense => MeanKind::DenseBlock(self.delta),
            },
            seed: self.seed,
        };
        design.validate().context("invalid design").map_err(Failure::usage)?;
        design.centers().context("invalid design").map_err(Failure::usage)?;
        Ok(design)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    /// Directory receiving X.csv and truth.csv (suffixed `_r` per replicate
    /// when more than one is requested).
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    /// Comma-separated subset of gem, kmeans, kmedian, sparse-kmedian, oracle.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub methods: Option<Vec<Method>>,
    /// Per-replicate CSV with a final row of means; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub fit: FitFlags,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::ALL
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| format!("unknown method '{s}'"))
}

/// Parses `args`, runs the command and returns the process exit code.
/// Errors are reported on standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    }
}

pub fn execute(cli: &Cli) -> CmdResult {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Failure::usage(anyhow::anyhow!("--threads must be at least 1")));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(Failure::usage)?;
    pool.install(|| match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::SelectK(a) => cmd_select_k(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    })
}

fn read_input(path: &Path) -> Result<nalgebra::DMatrix<f64>, Failure> {
    data::read_matrix(path).map_err(Failure::usage)
}

fn sink(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(data::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> CmdResult {
    let mut out = sink(path).map_err(Failure::usage)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(Failure::usage)?;
    writeln!(out).and_then(|_| out.flush()).map_err(Failure::usage)
}

pub fn cmd_fit(a: &FitArgs) -> CmdResult {
    let cfg = a.fit.resolve(a.k, a.seed)?;
    let x = read_input(&a.input)?;
    let fit = gem::fit(&x, &cfg).context("fit failed").map_err(Failure::fit)?;
    write_json(a.out.as_deref(), &FitReport::new(&fit, &cfg))?;
    if let Some(path) = &a.labels {
        data::write_labels(path, &fit.labels).map_err(Failure::usage)?;
    }
    Ok(())
}

pub fn cmd_select_k(a: &SelectKArgs) -> CmdResult {
    if a.k_min == 0 || a.k_min > a.k_max {
        return Err(Failure::usage(anyhow::anyhow!("need 1 <= --k-min <= --k-max")));
    }
    if a.b < 2 {
        return Err(Failure::usage(anyhow::anyhow!("--b must be at least 2 to estimate the reference spread")));
    }
    let cfg = a.fit.resolve(None, a.seed)?;
    let x = read_input(&a.input)?;
    let ks: Vec<usize> = (a.k_min..=a.k_max).collect();
    let table = select_k(&x, &ks, a.b, &cfg).context("gap selection failed").map_err(Failure::fit)?;
    let report = GapReport {
        schema_version: SCHEMA_VERSION,
        metadata: Metadata::now(),
        config: cfg,
        b: a.b,
        table,
    };
    write_json(a.out.as_deref(), &report)
}

pub fn cmd_classify(a: &ClassifyArgs) -> CmdResult {
    let text = std::fs::read_to_string(&a.model)
        .with_context(|| format!("cannot read {}", a.model.display()))
        .map_err(Failure::usage)?;
    let report: FitReport = serde_json::from_str(&text)
        .with_context(|| format!("invalid result file {}", a.model.display()))
        .map_err(Failure::usage)?;
    if report.schema_version != SCHEMA_VERSION {
        return Err(Failure::usage(anyhow::anyhow!("unsupported schema_version {}", report.schema_version)));
    }
    let model = report.model.to_model().map_err(Failure::usage)?;
    let x = read_input(&a.input)?;
    if x.ncols() != model.dim() {
        return Err(Failure::usage(anyhow::anyhow!(
            "input has {} columns, model expects {}",
            x.ncols(),
            model.dim()
        )));
    }
    let labels = gem::classify(&x, &model).map_err(Failure::fit)?;
    data::write_labels(&a.labels, &labels).map_err(Failure::usage)
}

pub fn cmd_simulate(a: &SimulateArgs) -> CmdResult {
    let base = a.design.design()?;
    for r in 0..a.design.reps {
        let design = SimDesign {
            seed: benchmark::replicate_seed(base.seed, r),
            ..base.clone()
        };
        let sample = sample_mixture(&design).map_err(Failure::usage)?;
        let suffix = if a.design.reps == 1 { String::new() } else { format!("_{}", r + 1) };
        data::write_matrix(&a.out_dir.join(format!("X{suffix}.csv")), &sample.x).map_err(Failure::usage)?;
        data::write_labels(&a.out_dir.join(format!("truth{suffix}.csv")), &sample.labels).map_err(Failure::usage)?;
    }
    Ok(())
}

pub fn cmd_benchmark(a: &BenchmarkArgs) -> CmdResult {
    let design = a.design.design()?;
    let cfg = a.fit.resolve(Some(design.k), None)?;
    let methods = a.methods.clone().unwrap_or_else(|| Method::ALL.to_vec());
    if methods.is_empty() {
        return Err(Failure::usage(anyhow::anyhow!("--methods is empty")));
    }
    let results = benchmark::run_benchmark(&design, a.design.reps, &methods, &cfg).map_err(Failure::fit)?;
    let summary = benchmark::summarize(&results);
    write_benchmark_csv(sink(a.out.as_deref()).map_err(Failure::usage)?, &methods, &results, &summary).map_err(Failure::usage)?;
    for s in &summary {
        eprintln!(
            "{:<15} accuracy {}  ari {}  failures {}",
            s.method.name(),
            fmt_opt(s.mean_accuracy),
            fmt_opt(s.mean_ari),
            s.failures
        );
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.4}"))
}

/// One row per replicate, `<method>_accuracy` and `<method>_ari` columns,
/// and a final `mean` row. Failed cells are empty.
pub fn write_benchmark_csv(
    out: impl Write,
    methods: &[Method],
    results: &[ReplicateResult],
    summary: &[MethodSummary],
) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["replicate".to_string(), "data_seed".to_string()];
    for m in methods {
        header.push(format!("{}_accuracy", m.name()));
        header.push(format!("{}_ari", m.name()));
    }
    w.write_record(&header)?;
    for r in results {
        let mut row = vec![(r.replicate + 1).to_string(), r.data_seed.to_string()];
        for m in methods {
            let s = r.scores.iter().find(|s| s.method == *m);
            row.push(s.and_then(|s| s.accuracy).map_or_else(String::new, |v| v.to_string()));
            row.push(s.and_then(|s| s.ari).map_or_else(String::new, |v| v.to_string()));
        }
        w.write_record(&row)?;
    }
    let mut row = vec!["mean".to_string(), String::new()];
    for m in methods {
        let s = summary.iter().find(|s| s.method == *m);
        row.push(s.and_then(|s| s.mean_accuracy).map_or_else(String::new, |v| v.to_string()));
        row.push(s.and_then(|s| s.mean_ari).map_or_else(String::new, |v| v.to_string()));
    }
    w.write_record(&row)?;
    w.flush()?;
    Ok(())
}
