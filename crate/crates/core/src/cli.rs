//! `strata-icer` command line: analyze, scan, suggest, simulate.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::clustering::{k_distance_profile, suggest_params, ClusteringError, SUGGEST_PERCENTILE};
use crate::dataset::{factor_matrix, load_dataset, write_dataset, FactorSchema, TrialDataset};
use crate::icer::{IcerValue, VarianceValue, WeightingMode, DEFAULT_EFF_FLOOR};
use crate::metrics::{centroid_scan, fit_covariance, standardize, Metric, DEFAULT_RIDGE, DEFAULT_SCAN_THRESHOLD};
use crate::pipeline::{run_pipeline, ParamChoice, PipelineConfig, PipelineError, StratifiedReport};
use crate::simulate::{simulate_trial, SimConfig, SimError};

pub const SEED_ENV: &str = "STRATA_ICER_SEED";

#[derive(Debug, Parser)]
#[command(name = "strata-icer", version, about = "Cluster-stratified ICER analysis for two-arm trials")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full stratified analysis and write the report.
    Analyze(AnalyzeArgs),
    /// Print each patient's distance to the factor centroid, largest first.
    Scan(ScanArgs),
    /// Suggest DBSCAN parameters and print the k-distance profile.
    Suggest(SuggestArgs),
    /// Generate a synthetic cohort and its ground truth.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    Euclidean,
    Mahalanobis,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::Mahalanobis => Metric::Mahalanobis,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WeightingArg {
    Paper,
    Renormalized,
}

impl From<WeightingArg> for WeightingMode {
    fn from(w: WeightingArg) -> Self {
        match w {
            WeightingArg::Paper => WeightingMode::PaperLiteral,
            WeightingArg::Renormalized => WeightingMode::Renormalized,
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "euclidean")]
    pub metric: MetricArg,
    /// Neighborhood radius on the standardized factor scale.
    #[arg(long, required_unless_present = "auto_params", conflicts_with = "auto_params")]
    pub eps: Option<f64>,
    /// Defaults to the number of factors plus one.
    #[arg(long, conflicts_with = "auto_params")]
    pub min_pts: Option<usize>,
    /// Pick eps and min-pts with the k-distance heuristic.
    #[arg(long)]
    pub auto_params: bool,
    /// Drop centroid outliers before clustering.
    #[arg(long)]
    pub scan: bool,
    #[arg(long, default_value_t = DEFAULT_SCAN_THRESHOLD)]
    pub scan_threshold: f64,
    #[arg(long, default_value_t = DEFAULT_RIDGE)]
    pub ridge: f64,
    #[arg(long, default_value_t = DEFAULT_EFF_FLOOR)]
    pub eff_floor: f64,
    #[arg(long, value_enum, default_value = "paper")]
    pub weighting: WeightingArg,
    /// Bootstrap replicates per cluster (0 disables).
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Fail instead of excluding clusters without a defined ICER.
    #[arg(long)]
    pub strict: bool,
    /// JSON report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-cluster CSV path.
    #[arg(long)]
    pub clusters_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "euclidean")]
    pub metric: MetricArg,
    #[arg(long, default_value_t = DEFAULT_SCAN_THRESHOLD)]
    pub scan_threshold: f64,
    #[arg(long, default_value_t = DEFAULT_RIDGE)]
    pub ridge: f64,
}

#[derive(Debug, Args)]
pub struct SuggestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "euclidean")]
    pub metric: MetricArg,
    #[arg(long, default_value_t = DEFAULT_RIDGE)]
    pub ridge: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Cohort CSV to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Ground-truth JSON; defaults to the output path with a `.truth.json` suffix.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Clustering(String),
    #[error("{0}")]
    Estimation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Clustering(_) => 2,
            CliError::Estimation(_) => 3,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let msg = e.to_string();
        match e {
            PipelineError::InvalidConfig(_) => CliError::Input(msg),
            PipelineError::Metrics(_) | PipelineError::Clustering(_) | PipelineError::AllNoise(_) => {
                CliError::Clustering(msg)
            }
            PipelineError::Icer(_) | PipelineError::ClusterExcluded { .. } => CliError::Estimation(msg),
        }
    }
}

fn input_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn read_dataset(path: &Path) -> Result<TrialDataset, CliError> {
    let file = File::open(path).map_err(|e| input_err(path, e))?;
    load_dataset(BufReader::new(file), &FactorSchema::AllRemaining).map_err(|e| input_err(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| input_err(path, e))
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Input(e.to_string())
}

impl AnalyzeArgs {
    pub fn pipeline_config(&self, m: usize) -> PipelineConfig {
        let params = match self.eps {
            Some(eps) if !self.auto_params => ParamChoice::Manual {
                eps,
                min_pts: self.min_pts.unwrap_or(m + 1),
            },
            _ => ParamChoice::Auto,
        };
        PipelineConfig {
            metric: self.metric.into(),
            params,
            scan_threshold: self.scan.then_some(self.scan_threshold),
            ridge: self.ridge,
            eff_floor: self.eff_floor,
            weighting: self.weighting.into(),
            bootstrap_replicates: self.bootstrap,
            seed: self.seed,
            strict: self.strict,
        }
    }
}

fn fmt_icer(v: &IcerValue) -> String {
    match v {
        IcerValue::Defined { value } => format!("{value:.4}"),
        IcerValue::Undefined { reason } => format!("undefined ({reason:?})"),
    }
}

fn fmt_sd(v: &VarianceValue) -> String {
    match v {
        VarianceValue::Available { value } => format!("{:.4}", value.sqrt()),
        VarianceValue::Unavailable { reason } => format!("n/a ({reason:?})"),
    }
}

fn print_summary(out: &mut impl Write, r: &StratifiedReport) -> std::io::Result<()> {
    writeln!(
        out,
        "clusters: {}  patients: {}  outliers discarded: {} (scan {}, noise {})",
        r.k, r.n, r.n_out, r.n_scan_flagged, r.n_noise
    )?;
    writeln!(
        out,
        "dbscan: eps = {:.6}, min_pts = {}, metric = {}{}",
        r.params.eps,
        r.params.min_pts,
        r.params.metric,
        if r.params_heuristic { " (heuristic)" } else { "" }
    )?;
    writeln!(out, "{:>8} {:>6} {:>6} {:>14} {:>12} {:>8}  status", "cluster", "n_e", "n_c", "icer", "sd", "weight")?;
    for (c, w) in r.clusters.iter().zip(&r.weights) {
        writeln!(
            out,
            "{:>8} {:>6} {:>6} {:>14} {:>12} {:>8.4}  valid",
            c.cluster_id,
            c.n_e,
            c.n_c,
            fmt_icer(&c.icer),
            fmt_sd(&c.variance),
            w
        )?;
    }
    for c in &r.excluded_clusters {
        writeln!(
            out,
            "{:>8} {:>6} {:>6} {:>14} {:>12} {:>8}  excluded: {:?}",
            c.cluster_id, c.n_e, c.n_c, "-", "-", "-", c.status
        )?;
    }
    writeln!(out, "overall ICER ({:?}): {:.4} +/- {}", r.weighting_mode, r.overall_icer, fmt_sd(&r.overall_var))?;
    writeln!(out, "naive ICER: {}", fmt_icer(&r.naive_icer))?;
    Ok(())
}

pub fn cmd_analyze(args: &AnalyzeArgs, out: &mut impl Write) -> Result<StratifiedReport, CliError> {
    let ds = read_dataset(&args.input)?;
    let cfg = args.pipeline_config(ds.m());
    let report = run_pipeline(&ds, &cfg)?;
    if let Some(path) = &args.report {
        let mut w = create(path)?;
        let json = report.to_json().map_err(|e| CliError::Input(e.to_string()))?;
        w.write_all(json.as_bytes()).map_err(io_err)?;
        w.write_all(b"\n").map_err(io_err)?;
        w.flush().map_err(io_err)?;
    }
    if let Some(path) = &args.clusters_csv {
        report
            .write_clusters_csv(create(path)?)
            .map_err(|e| input_err(path, e))?;
    }
    if report.params_heuristic {
        writeln!(out, "warning: DBSCAN parameters chosen heuristically; inspect `suggest` output").map_err(io_err)?;
    }
    print_summary(out, &report).map_err(io_err)?;
    Ok(report)
}

pub fn cmd_scan(args: &ScanArgs, out: &mut impl Write) -> Result<(), CliError> {
    let ds = read_dataset(&args.input)?;
    let (z, _) = standardize(&factor_matrix(&ds)).map_err(|e| CliError::Clustering(e.to_string()))?;
    let scan = centroid_scan(&z, args.metric.into(), args.scan_threshold, args.ridge)
        .map_err(|e| CliError::Clustering(e.to_string()))?;
    let mut order: Vec<usize> = (0..ds.n()).collect();
    order.sort_by(|&a, &b| scan.distances[b].total_cmp(&scan.distances[a]).then(a.cmp(&b)));
    writeln!(
        out,
        "# mean {:.6}  sd {:.6}  cutoff {:.6}  flagged {}",
        scan.mean,
        scan.sd,
        scan.mean + scan.threshold * scan.sd,
        scan.flagged_count()
    )
    .map_err(io_err)?;
    writeln!(out, "id,distance,flag").map_err(io_err)?;
    for i in order {
        writeln!(out, "{},{:.6},{}", ds.records()[i].id, scan.distances[i], scan.flags[i]).map_err(io_err)?;
    }
    Ok(())
}

pub fn cmd_suggest(args: &SuggestArgs, out: &mut impl Write) -> Result<(), CliError> {
    let ds = read_dataset(&args.input)?;
    let metric: Metric = args.metric.into();
    let cluster_err = |e: ClusteringError| CliError::Clustering(e.to_string());
    let (z, _) = standardize(&factor_matrix(&ds)).map_err(|e| CliError::Clustering(e.to_string()))?;
    let cov = match metric {
        Metric::Mahalanobis => Some(fit_covariance(&z, args.ridge).map_err(|e| CliError::Clustering(e.to_string()))?),
        Metric::Euclidean => None,
    };
    let params = suggest_params(&z, metric, cov.as_ref()).map_err(cluster_err)?;
    let profile = k_distance_profile(&z, params.min_pts, metric, cov.as_ref()).map_err(cluster_err)?;
    writeln!(out, "min_pts = {}", params.min_pts).map_err(io_err)?;
    writeln!(out, "eps = {}", params.eps).map_err(io_err)?;
    writeln!(out, "metric = {metric}").map_err(io_err)?;
    writeln!(
        out,
        "warning: heuristic (eps is the {:.0}th percentile of the {}-distance profile)",
        SUGGEST_PERCENTILE * 100.0,
        params.min_pts
    )
    .map_err(io_err)?;
    writeln!(out, "rank,k_distance").map_err(io_err)?;
    for (i, d) in profile.iter().enumerate() {
        writeln!(out, "{},{d:.6}", i + 1).map_err(io_err)?;
    }
    Ok(())
}

pub fn truth_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.truth.json"))
}

pub fn cmd_simulate(args: &SimulateArgs, out: &mut impl Write) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| input_err(&args.config, e))?;
    let cfg: SimConfig = serde_json::from_str(&text).map_err(|e| input_err(&args.config, e))?;
    let (ds, truth) = simulate_trial(&cfg).map_err(|e: SimError| input_err(&args.config, e))?;
    let mut w = create(&args.output)?;
    write_dataset(&ds, &mut w).map_err(|e| input_err(&args.output, e))?;
    w.flush().map_err(io_err)?;
    let truth_file = args.truth.clone().unwrap_or_else(|| truth_path(&args.output));
    let mut w = create(&truth_file)?;
    serde_json::to_writer_pretty(&mut w, &truth).map_err(|e| input_err(&truth_file, e))?;
    w.write_all(b"\n").map_err(io_err)?;
    w.flush().map_err(io_err)?;
    writeln!(out, "wrote {} patients to {}", ds.n(), args.output.display()).map_err(io_err)?;
    writeln!(out, "wrote ground truth to {}", truth_file.display()).map_err(io_err)?;
    for (s, (icer, w)) in truth.stratum_icers.iter().zip(&truth.stratum_weights).enumerate() {
        writeln!(out, "stratum {s}: weight {w}  true ICER {icer}").map_err(io_err)?;
    }
    writeln!(out, "true overall ICER: {}", truth.overall_icer).map_err(io_err)?;
    Ok(())
}

pub fn execute(cli: &Cli, out: &mut impl Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Analyze(a) => cmd_analyze(a, out).map(|_| ()),
        Command::Scan(a) => cmd_scan(a, out),
        Command::Suggest(a) => cmd_suggest(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
    }
}

/// Runs the CLI and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let first = e.to_string();
                let line = first.lines().next().unwrap_or("invalid arguments");
                eprintln!("error: {}", line.trim_start_matches("error: "));
                return 1;
            }
            let _ = e.print();
            return 0;
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(&cli, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            e.exit_code()
        }
    }
}
