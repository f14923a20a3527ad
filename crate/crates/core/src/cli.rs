//! Command-line front end.
//!
//! Every JSON payload carries `tool`, `version`, `seed` and a `config` echo
//! of the parsed flags; CSV outputs start with a `#` line holding the same
//! information. Output paths and thread counts are left out of the echo so
//! reruns of the same configuration produce byte-identical payloads.
//!
//! Exit codes: 0 success, 2 usage or domain error, 3 input data error,
//! 4 numeric failure. Failures print a one-line JSON error record to stderr.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::convergence::{self, Grid, ViewSpec};
use crate::data::{self, ClassSpec, Format, LabeledDataset, Standardization, SyntheticSpec};
use crate::error::{Error, Result};
use crate::forward::{self, SeedPolicy, TrajectorySweep};
use crate::merger::{self, EventProfile, MergerMetric};
use crate::probe::{self, WeightKind, WeightLaw};
use crate::schedule::NoiseSchedule;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

const TOOL: &str = "vpmerge";
const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "vpmerge", version, about = "Merger analysis for variance-preserving diffusion")]
pub struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "snake_case")]
pub enum Command {
    /// Predicted mixing step for a data dimension.
    Mixing(MixingArgs),
    /// Pairwise merge times, merger cascade and merger series.
    Analyze(AnalyzeArgs),
    /// Guidance windows from merge times and the convergence step.
    Windows(WindowsArgs),
    /// Normality-based convergence report.
    Converge(ConvergeArgs),
    /// Write a synthetic Gaussian-mixture dataset.
    Simulate(SimulateArgs),
    /// Linear-probe accuracy through the forward chain.
    Probe(ProbeArgs),
    /// Empirical characteristic-function distance between two datasets.
    Cf(CfArgs),
    /// Moment-TV inequality check for two 1-D densities.
    Tvcheck(TvcheckArgs),
    /// Time-weighted aggregation of per-step class logits.
    Aggregate(AggregateArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScheduleArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub beta0: f64,
    #[arg(long = "betaT", default_value_t = 0.02)]
    #[serde(rename = "betaT")]
    pub beta_t: f64,
    #[arg(long = "T", default_value_t = 1000)]
    #[serde(rename = "T")]
    pub horizon: usize,
}

impl ScheduleArgs {
    fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.beta0, self.beta_t, self.horizon)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatArg {
    Csv,
    Fvec1,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Scale every coordinate to zero mean and unit variance first.
    #[arg(long)]
    pub standardize: bool,
}

impl InputArgs {
    fn load(&self) -> Result<LabeledDataset> {
        let ds = load_any(&self.input, self.format)?;
        if self.standardize {
            data::standardize(&ds, Standardization::GlobalUnitVariance)
        } else {
            Ok(ds)
        }
    }
}

fn load_any(path: &Path, format: Option<FormatArg>) -> Result<LabeledDataset> {
    let format = match format {
        Some(FormatArg::Csv) => Format::Csv,
        Some(FormatArg::Fvec1) => Format::Fvec1,
        None => Format::from_path(path),
    };
    data::load_dataset(path, format)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub schedule: ScheduleArgs,
    /// Either a count of evenly spaced steps over [0, T] or an explicit comma list.
    #[arg(long, default_value = "101")]
    pub steps: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reuse one noise draw per sample across steps.
    #[arg(long)]
    pub shared_path: bool,
}

impl SweepArgs {
    fn steps(&self) -> Result<Vec<usize>> {
        parse_steps(&self.steps, self.schedule.horizon)
    }

    fn seeds(&self) -> SeedPolicy {
        SeedPolicy { base_seed: self.seed, shared_path: self.shared_path }
    }
}

pub fn parse_steps(spec: &str, horizon: usize) -> Result<Vec<usize>> {
    let spec = spec.trim();
    if spec.contains(',') {
        return spec
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|_| Error::domain(format!("invalid step {s:?}"))))
            .collect();
    }
    let count: usize = spec.parse().map_err(|_| Error::domain(format!("invalid step count {spec:?}")))?;
    forward::even_steps(horizon, count)
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricArg {
    TopEigen,
    Trace,
}

impl From<MetricArg> for MergerMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::TopEigen => MergerMetric::TopEigenAbs,
            MetricArg::Trace => MergerMetric::TraceL1,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MergerArgs {
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub order: u8,
    #[arg(long, value_enum, default_value = "top-eigen")]
    pub metric: MetricArg,
    /// Merge threshold, or "auto" for the largest step-0 class eigenvalue / 400.
    #[arg(long, default_value = "auto")]
    pub epsilon: String,
}

impl MergerArgs {
    fn epsilon(&self, sweep: &TrajectorySweep<'_>, partition: &data::EventPartition) -> Result<f64> {
        if self.epsilon.eq_ignore_ascii_case("auto") {
            return merger::default_epsilon_for(sweep, partition);
        }
        let e: f64 = self.epsilon.parse().map_err(|_| Error::domain(format!("invalid epsilon {:?}", self.epsilon)))?;
        if !(e > 0.0) {
            return Err(Error::domain("epsilon must be positive"));
        }
        Ok(e)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MixingArgs {
    #[arg(long)]
    pub dim: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub sweep: SweepArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub merger: MergerArgs,
    /// JSON output (stdout when omitted).
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Series CSV with columns pair_a,pair_b,step,value.
    #[arg(long)]
    #[serde(skip)]
    pub series: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
pub struct ViewArgs {
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Number of random projections; coordinates are used when omitted.
    #[arg(long)]
    pub projections: Option<usize>,
}

impl ViewArgs {
    fn spec(&self, seed: u64) -> ViewSpec {
        match self.projections {
            Some(count) => ViewSpec::RandomProjections { count, seed },
            None => ViewSpec::Coordinates,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WindowsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub sweep: SweepArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub merger: MergerArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub views: ViewArgs,
    /// Interpolation scale s for the eta schedule.
    #[arg(long, default_value_t = 1e-3)]
    pub eta_scale: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ConvergeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub sweep: SweepArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub views: ViewArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub classes: usize,
    #[arg(long)]
    pub dim: usize,
    /// Leading covariance eigenvalue per class; the remaining ones are 1.
    #[arg(long, value_delimiter = ',')]
    pub spectra: Vec<f64>,
    /// Per-class mean offset applied to every coordinate (default 0).
    #[arg(long, value_delimiter = ',')]
    pub means: Vec<f64>,
    #[arg(long)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output dataset; format from the extension.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProbeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub sweep: SweepArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub merger: MergerArgs,
    /// Class pair (dense indices).
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0usize, 1])]
    pub pair: Vec<usize>,
    /// Merge step of the pair; detected from the data when omitted.
    #[arg(long)]
    pub merge_step: Option<usize>,
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CfArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub freqs: usize,
    /// Frequency scale; 1/sqrt(d) when omitted.
    #[arg(long)]
    pub freq_scale: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TvcheckArgs {
    /// `normal:MU,SIGMA` or a CSV of `x,density` rows on a uniform grid.
    #[arg(long)]
    pub p: String,
    #[arg(long)]
    pub q: String,
    /// Grid `lo,hi,n` used for `normal:` densities.
    #[arg(long, allow_hyphen_values = true, default_value = "-10,10,100000")]
    pub grid: String,
    #[arg(long, default_value_t = 2)]
    pub order: u32,
    #[arg(long, default_value_t = 1.0)]
    pub c0: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightArg {
    Uniform,
    InverseSnr,
    Truncated,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AggregateArgs {
    /// CSV of `step,class,logit` rows.
    #[arg(long)]
    pub logits: PathBuf,
    #[arg(long, value_enum, default_value = "inverse-snr")]
    pub kind: WeightArg,
    #[arg(long)]
    pub t_start: usize,
    #[arg(long)]
    pub t_stop: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Domain(_) => EXIT_USAGE,
        Error::Parse { .. } | Error::Data(_) | Error::Io(_) => EXIT_DATA,
        Error::Degenerate(_) | Error::Numeric { .. } => EXIT_NUMERIC,
    }
}

fn error_record(kind: &str, message: &str, code: i32) -> String {
    json!({"error": kind, "message": message, "exit_code": code}).to_string()
}

/// Parses `args` (program name first), runs the subcommand and returns the exit status.
pub fn execute<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let msg = e.render().to_string();
            eprintln!("{}", error_record("usage", msg.lines().next().unwrap_or("invalid arguments"), EXIT_USAGE));
            return EXIT_USAGE;
        }
    };
    match run_with_threads(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", error_record(e.kind(), &e.to_string(), code));
            code
        }
    }
}

#[cfg(feature = "parallel")]
fn run_with_threads(cli: &Cli) -> Result<()> {
    match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::domain(format!("cannot build thread pool: {e}")))?
            .install(|| run(&cli.command)),
        None => run(&cli.command),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_with_threads(cli: &Cli) -> Result<()> {
    run(&cli.command)
}

fn envelope(cmd: &Command, seed: Option<u64>, body: Value) -> Value {
    let mut out = json!({
        "tool": TOOL,
        "version": VERSION,
        "seed": seed,
        "config": serde_json::to_value(cmd).expect("config serializes"),
    });
    if let (Value::Object(o), Value::Object(b)) = (&mut out, body) {
        o.extend(b);
    }
    out
}

fn provenance_line(cmd: &Command, seed: Option<u64>) -> String {
    format!(
        "# {TOOL} {VERSION} seed={} config={}",
        seed.map_or("none".to_string(), |s| s.to_string()),
        serde_json::to_string(cmd).expect("config serializes")
    )
}

fn emit_json(out: Option<&Path>, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json values serialize");
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            writeln!(w, "{text}")?;
            w.flush()?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn emit_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn schedule_json(s: &NoiseSchedule) -> Value {
    serde_json::to_value(s).expect("schedule serializes")
}

pub fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Mixing(a) => {
            let s = a.schedule.build()?;
            let pred = s.predict_mixing_step(a.dim)?;
            let body = json!({"schedule": schedule_json(&s), "prediction": pred});
            emit_json(a.out.as_deref(), &envelope(cmd, None, body))
        }
        Command::Analyze(a) => run_analyze(cmd, a),
        Command::Windows(a) => run_windows(cmd, a),
        Command::Converge(a) => {
            let ds = a.input.load()?;
            let s = a.sweep.schedule.build()?;
            let sw = forward::sweep(&ds, &s, &a.sweep.steps()?, a.sweep.seeds())?;
            let report = convergence::convergence_step(&sw, a.views.alpha, a.views.spec(a.sweep.seed))?;
            let body = json!({"schedule": schedule_json(&s), "report": report});
            let mut v = envelope(cmd, Some(a.sweep.seed), body);
            // Lift the report fields to the top level.
            if let Some(Value::Object(r)) = v.as_object_mut().and_then(|o| o.remove("report")) {
                v.as_object_mut().unwrap().extend(r);
            }
            emit_json(a.out.as_deref(), &v)
        }
        Command::Simulate(a) => {
            let spec = simulate_spec(a)?;
            let ds = data::synth_gaussian_mixture(&spec, a.seed)?;
            let format = Format::from_path(&a.out);
            data::save_dataset(&ds, &a.out, format)?;
            let body = json!({"samples": ds.count(), "dim": ds.dim(), "classes": ds.num_classes(), "format": format});
            emit_json(None, &envelope(cmd, Some(a.seed), body))
        }
        Command::Probe(a) => run_probe(cmd, a),
        Command::Cf(a) => {
            let da = load_any(&a.a, None)?;
            let db = load_any(&a.b, None)?;
            let cf = convergence::empirical_cf_distance(&da, &db, a.freqs, a.freq_scale, a.seed)?;
            emit_json(a.out.as_deref(), &envelope(cmd, Some(a.seed), json!({"cf": cf})))
        }
        Command::Tvcheck(a) => {
            let (grid, p, q) = tv_inputs(a)?;
            let report = convergence::moment_tv_check(&p, &q, &grid, a.order, a.c0)?;
            emit_json(a.out.as_deref(), &envelope(cmd, None, json!({"grid": grid, "report": report})))
        }
        Command::Aggregate(a) => {
            let s = a.schedule.build()?;
            let kind = match a.kind {
                WeightArg::Uniform => WeightKind::Uniform,
                WeightArg::InverseSnr => WeightKind::InverseSnr,
                WeightArg::Truncated => WeightKind::TruncatedInverseSnr,
            };
            if a.t_start > a.t_stop || a.t_stop > s.horizon() {
                return Err(Error::domain(format!("invalid window [{}, {}]", a.t_start, a.t_stop)));
            }
            let scores = probe::read_logits_csv(BufReader::new(File::open(&a.logits)?))?;
            // Weights live on the scored steps inside the window.
            let steps: Vec<usize> = scores.range(a.t_start..=a.t_stop).map(|(&t, _)| t).collect();
            if steps.is_empty() {
                return Err(Error::data("no scored steps inside the window"));
            }
            let snr = steps.iter().map(|&t| s.snr(t)).collect::<Result<Vec<_>>>()?;
            let law = WeightLaw::from_snr_values(kind, &steps, &snr)?;
            let probs = probe::weighted_score_aggregate(&scores, &law)?;
            emit_json(a.out.as_deref(), &envelope(cmd, None, json!({"probs": probs})))
        }
    }
}

fn simulate_spec(a: &SimulateArgs) -> Result<SyntheticSpec> {
    if a.classes == 0 || a.dim == 0 {
        return Err(Error::domain("classes and dim must be positive"));
    }
    let per_class = |v: &[f64], default: f64, name: &str| -> Result<Vec<f64>> {
        match v.len() {
            0 => Ok(vec![default; a.classes]),
            n if n == a.classes => Ok(v.to_vec()),
            n => Err(Error::domain(format!("--{name} has {n} values for {} classes", a.classes))),
        }
    };
    let leads = per_class(&a.spectra, 1.0, "spectra")?;
    let means = per_class(&a.means, 0.0, "means")?;
    let classes = leads
        .iter()
        .zip(&means)
        .enumerate()
        .map(|(k, (&lead, &m))| {
            if lead < 1.0 {
                return Err(Error::domain("leading eigenvalues must be at least 1"));
            }
            let mut spectrum = vec![1.0; a.dim];
            spectrum[0] = lead;
            Ok(ClassSpec { mean: vec![m; a.dim], spectrum, rotation_seed: a.seed.wrapping_add(k as u64), samples: a.n_per_class })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticSpec { classes })
}

fn run_analyze(cmd: &Command, a: &AnalyzeArgs) -> Result<()> {
    let ds = a.input.load()?;
    let s = a.sweep.schedule.build()?;
    let steps = a.sweep.steps()?;
    let sw = forward::sweep(&ds, &s, &steps, a.sweep.seeds())?;
    let partition = sw.partition();
    if partition.len() < 2 {
        return Err(Error::domain("analysis needs at least two classes"));
    }
    let eps = a.merger.epsilon(&sw, &partition)?;
    let metric: MergerMetric = a.merger.metric.into();
    let profile = EventProfile::build_until(&sw, partition.events(), a.merger.order, Default::default(), Some((metric, eps)))?;
    let merge = profile.merge_matrix(eps, metric)?;
    let cascade = merger::build_cascade(&merge)?;
    let body = json!({
        "schedule": schedule_json(&s),
        "steps": steps,
        "epsilon": eps,
        "metric": metric,
        "order": a.merger.order,
        "label_map": ds.label_map(),
        "merge_times": merge.rows(),
        "cascade": cascade,
    });
    if let Some(path) = &a.series {
        let mut text = provenance_line(cmd, Some(a.sweep.seed));
        text.push_str("\npair_a,pair_b,step,value\n");
        for i in 0..partition.len() {
            for j in i + 1..partition.len() {
                let series = profile.series(i, j, eps, metric)?;
                for (t, v) in series.steps.iter().zip(&series.values) {
                    text.push_str(&format!("{i},{j},{t},{v}\n"));
                }
            }
        }
        emit_text(Some(path), &text)?;
    }
    emit_json(a.out.as_deref(), &envelope(cmd, Some(a.sweep.seed), body))
}

fn run_windows(cmd: &Command, a: &WindowsArgs) -> Result<()> {
    let ds = a.input.load()?;
    let s = a.sweep.schedule.build()?;
    let steps = a.sweep.steps()?;
    let sw = forward::sweep(&ds, &s, &steps, a.sweep.seeds())?;
    let partition = sw.partition();
    if partition.len() < 2 {
        return Err(Error::domain("guidance windows need at least two classes"));
    }
    let eps = a.merger.epsilon(&sw, &partition)?;
    let merge = merger::pairwise_merge_times(&sw, &partition, a.merger.order, eps, a.merger.metric.into())?;
    let normality = convergence::convergence_step(&sw, a.views.alpha, a.views.spec(a.sweep.seed))?;
    let windows = merger::guidance_windows(&merge, normality.detected_step)?;
    let eta = merger::interpolation_schedule(&s, a.eta_scale)?;
    let body = json!({
        "schedule": schedule_json(&s),
        "epsilon": eps,
        "istar": windows.istar,
        "convergence_detected": normality.detected,
        "classes": windows.classes,
        "merge_times": merge.rows(),
        "eta": eta,
    });
    emit_json(a.out.as_deref(), &envelope(cmd, Some(a.sweep.seed), body))
}

fn run_probe(cmd: &Command, a: &ProbeArgs) -> Result<()> {
    let ds = a.input.load()?;
    let s = a.sweep.schedule.build()?;
    let sw = forward::sweep(&ds, &s, &a.sweep.steps()?, a.sweep.seeds())?;
    let partition = sw.partition();
    let (i, j) = (a.pair[0], a.pair[1]);
    if i == j || i >= partition.len() || j >= partition.len() {
        return Err(Error::domain(format!("invalid class pair {i},{j} for {} classes", partition.len())));
    }
    let merge_step = match a.merge_step {
        Some(m) => m,
        None => {
            let eps = a.merger.epsilon(&sw, &partition)?;
            merger::detect_series(&sw, partition.event(i), partition.event(j), a.merger.order, eps, a.merger.metric.into())?.istar
        }
    };
    let result = probe::probe_through_time(&sw, partition.event(i), partition.event(j), merge_step, a.split, a.sweep.seed)?;
    let mut text = provenance_line(cmd, Some(a.sweep.seed));
    text.push_str(&format!(" merge_step={merge_step}\nstep,accuracy,defined\n"));
    for p in &result.points {
        let acc = p.accuracy.map_or(String::new(), |v| v.to_string());
        text.push_str(&format!("{},{acc},{}\n", p.step, p.defined));
    }
    emit_text(a.out.as_deref(), &text)
}

fn tv_inputs(a: &TvcheckArgs) -> Result<(Grid, Vec<f64>, Vec<f64>)> {
    let parse_f = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::domain(format!("invalid number {s:?}")));
    let g: Vec<&str> = a.grid.split(',').collect();
    if g.len() != 3 {
        return Err(Error::domain("--grid expects lo,hi,n"));
    }
    let n: usize = g[2].trim().parse().map_err(|_| Error::domain("invalid grid size"))?;
    let mut grid = Grid::new(parse_f(g[0])?, parse_f(g[1])?, n)?;
    let mut file_grid: Option<Grid> = None;
    let mut density = |spec: &str| -> Result<Vec<f64>> {
        if let Some(rest) = spec.strip_prefix("normal:") {
            let v: Vec<&str> = rest.split(',').collect();
            if v.len() != 2 {
                return Err(Error::domain("normal densities are written normal:MU,SIGMA"));
            }
            let (mu, sigma) = (parse_f(v[0])?, parse_f(v[1])?);
            if !(sigma > 0.0) {
                return Err(Error::domain("sigma must be positive"));
            }
            let c = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            return Ok(grid.tabulate(|x| c * (-(x - mu).powi(2) / (2.0 * sigma * sigma)).exp()));
        }
        let (g2, p) = read_density_csv(Path::new(spec))?;
        match file_grid {
            Some(fg) if (fg.lo, fg.hi, fg.n) != (g2.lo, g2.hi, g2.n) => {
                return Err(Error::domain("both densities must share one grid"))
            }
            _ => file_grid = Some(g2),
        }
        Ok(p)
    };
    let p = density(&a.p)?;
    let q = density(&a.q)?;
    if let Some(fg) = file_grid {
        if p.len() != q.len() {
            return Err(Error::domain("densities have different lengths"));
        }
        grid = fg;
    }
    Ok((grid, p, q))
}

fn read_density_csv(path: &Path) -> Result<(Grid, Vec<f64>)> {
    use std::io::BufRead;
    let mut xs = Vec::new();
    let mut ps = Vec::new();
    for (lineno, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = lineno + 1;
        let mut it = line.split(',');
        let mut next = |what: &str| -> Result<f64> {
            it.next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse { row, message: format!("missing or invalid {what}") })
        };
        xs.push(next("x")?);
        ps.push(next("density")?);
    }
    if xs.len() < 2 {
        return Err(Error::data(format!("{}: need at least two grid points", path.display())));
    }
    let grid = Grid::new(xs[0], *xs.last().unwrap(), xs.len())?;
    let h = grid.step();
    if xs.iter().enumerate().any(|(i, &x)| (x - (grid.lo + i as f64 * h)).abs() > 1e-9 * h.max(1.0)) {
        return Err(Error::data(format!("{}: grid is not uniform", path.display())));
    }
    Ok((grid, ps))
}
