//! Subcommand definitions and their implementations.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use atm::atm::{cross_validate_m, fit_conditional, fit_fixed_total_degree, fit_linear_then_atm, FitTrace};
use atm::data::{
    default_names, gen_fig1_mixture, gen_gaussian, gen_lorenz96, gen_mog3, load_csv, write_csv, Dataset,
};
use atm::density::{negative_log_likelihood, sample_conditional};
use atm::quadrature::QuadSettings;
use atm::{
    AtmConfig, ObjectiveConfig, OptimOptions, Rectifier, SampleBatch, Standardization, TransportModel,
    UnivariateFamily,
};

use crate::document::{LoadedMap, MapDocument, Provenance};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "atm", version, about = "Density estimation with adaptive transport maps")]
pub struct Cli {
    /// Worker threads (defaults to the available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a map to a CSV of samples.
    Fit(FitArgs),
    /// Score a CSV under a fitted map.
    Eval(EvalArgs),
    /// Draw samples from a fitted map.
    Sample(SampleArgs),
    /// Map reference points back to data space.
    Invert(InvertArgs),
    /// Write synthetic data sets.
    Generate(GenerateArgs),
    /// Per-component table of selected degrees.
    Report(ReportArgs),
    /// Cross-validation curves without the final refit.
    Cv(CvArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyArg {
    Hermite,
    Linear,
}

impl From<FamilyArg> for UnivariateFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Hermite => UnivariateFamily::HermiteFunction,
            FamilyArg::Linear => UnivariateFamily::Linear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GArg {
    Softplus,
    Square,
}

impl From<GArg> for Rectifier {
    fn from(g: GArg) -> Self {
        match g {
            GArg::Softplus => Rectifier::Softplus,
            GArg::Square => Rectifier::Square,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// CSV file of samples, one row per sample.
    #[arg(long)]
    pub input: PathBuf,
    /// The first line holds data rather than column names.
    #[arg(long)]
    pub no_header: bool,
    /// Take the natural log of every value before anything else.
    #[arg(long)]
    pub log_transform: bool,
}

impl InputArgs {
    fn load(&self) -> CliResult<Dataset> {
        Ok(load_csv(&self.input, !self.no_header, self.log_transform)?)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitOptions {
    /// Largest number of features per component (default ⌈√n⌉).
    #[arg(long)]
    pub max_features: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, value_enum, default_value_t = FamilyArg::Hermite)]
    pub family: FamilyArg,
    #[arg(long, value_enum, default_value_t = GArg::Softplus)]
    pub g: GArg,
    /// Number of leading columns treated as conditioning variables.
    #[arg(long, default_value_t = 0)]
    pub conditional_split: usize,
    /// Fit a linear map first and an adaptive map on its output.
    #[arg(long)]
    pub linear_first: bool,
    /// Skip selection and use every index of total degree at most this value.
    #[arg(long)]
    pub total_degree: Option<u32>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Weight of the squared coefficient norm.
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub grad_tol: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub quad_tol: f64,
    /// Stop the feature sweep after this many steps without a better validation score.
    #[arg(long)]
    pub patience: Option<usize>,
}

impl FitOptions {
    pub fn config(&self) -> CliResult<AtmConfig> {
        if self.linear_first && self.g == GArg::Square {
            return Err(CliError::Usage("--g square cannot be combined with --linear-first".into()));
        }
        if self.linear_first && self.total_degree.is_some() {
            return Err(CliError::Usage("--total-degree cannot be combined with --linear-first".into()));
        }
        let cfg = AtmConfig {
            max_features: self.max_features,
            folds: self.folds,
            family: self.family.into(),
            rectifier: self.g.into(),
            objective: ObjectiveConfig::new(self.l2)?,
            optim: OptimOptions {
                grad_tol: self.grad_tol,
                max_iters: self.max_iters,
                ..Default::default()
            },
            quad: QuadSettings::with_rel_tol(self.quad_tol),
            seed: self.seed,
            patience: self.patience,
        };
        if self.folds < 2 {
            return Err(atm::Error::Config(format!("fold count must be at least 2, got {}", self.folds)).into());
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub options: FitOptions,
    /// Where to write the map document.
    #[arg(long)]
    pub output: PathBuf,
    /// Where to write the fit trace (standard output when omitted).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Score in standardized coordinates instead of the original ones.
    #[arg(long)]
    pub no_std_adjust: bool,
    /// Include one negative log-likelihood per row.
    #[arg(long)]
    pub per_sample: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Values of the conditioning variables, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub given: Vec<f64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct InvertArgs {
    #[arg(long)]
    pub map: PathBuf,
    /// Reference points; conditional maps expect the conditioning columns first.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub no_header: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Mog3,
    Fig1,
    Lorenz96,
    Gauss,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub target: Target,
    #[arg(long)]
    pub n: usize,
    /// Dimension for lorenz96 (default 20) and gauss (default 2).
    #[arg(long)]
    pub dim: Option<usize>,
    /// Runge-Kutta steps for lorenz96.
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 8.0)]
    pub forcing: f64,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    /// Correlation between every pair of gauss coordinates.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub rho: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub options: FitOptions,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct IterationJson {
    pub alpha: Vec<u32>,
    pub score: f64,
    pub train_objective: f64,
    pub converged: bool,
}

#[derive(Debug, Serialize)]
pub struct TraceJson {
    pub component: usize,
    pub stage: &'static str,
    pub chosen_m: usize,
    pub stopped_early: bool,
    pub mean_validation: Vec<f64>,
    pub iterations: Vec<IterationJson>,
}

impl TraceJson {
    fn new(t: &FitTrace, stage: &'static str) -> Self {
        TraceJson {
            component: t.component,
            stage,
            chosen_m: t.chosen_m,
            stopped_early: t.stopped_early,
            mean_validation: t.mean_validation.clone(),
            iterations: t
                .iterations
                .iter()
                .map(|r| IterationJson {
                    alpha: r.index.degrees().to_vec(),
                    score: r.score,
                    train_objective: r.train_objective,
                    converged: r.optimizer_converged,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub samples: usize,
    pub conditional_split: usize,
    pub mean_nll: f64,
    pub std_adjusted: bool,
    pub log_scale: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
pub struct CvComponent {
    pub component: usize,
    pub chosen_m: usize,
    pub stopped_early: bool,
    pub mean_validation: Vec<f64>,
    pub validation: Vec<Vec<f64>>,
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| CliError::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

fn json_bytes<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn csv_bytes(names: &[String], batch: &SampleBatch) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv(&mut buf, names, batch)?;
    Ok(buf)
}

pub fn load_document(path: &Path) -> CliResult<MapDocument> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    MapDocument::from_json(&text)
}

fn load_map(path: &Path) -> CliResult<(MapDocument, LoadedMap)> {
    let doc = load_document(path)?;
    let map = doc.to_map()?;
    Ok((doc, map))
}

fn check_columns(found: usize, expected: usize) -> CliResult<()> {
    if found != expected {
        return Err(atm::Error::Dimension { expected, got: found }.into());
    }
    Ok(())
}

/// Fits a map as requested; returns the document and the trace report.
pub fn fit_document(data: &SampleBatch, options: &FitOptions) -> CliResult<(MapDocument, Vec<TraceJson>)> {
    let cfg = options.config()?;
    let split = options.conditional_split;
    let provenance = Provenance {
        seed: options.seed,
        config: serde_json::to_value(options)?,
    };
    if options.linear_first {
        let (map, traces) = fit_linear_then_atm(data, split, &cfg)?;
        let report = traces
            .linear
            .iter()
            .map(|t| TraceJson::new(t, "linear"))
            .chain(traces.adaptive.iter().map(|t| TraceJson::new(t, "adaptive")))
            .collect();
        return Ok((MapDocument::from_composed(&map, cfg.quad, provenance)?, report));
    }
    let (map, traces, stage) = match options.total_degree {
        Some(p) => {
            let (m, t) = fit_fixed_total_degree(data, p, split, &cfg)?;
            (m, t, "total_degree")
        }
        None => {
            let (m, t) = fit_conditional(data, split, &cfg)?;
            (m, t, "adaptive")
        }
    };
    let report = traces.iter().map(|t| TraceJson::new(t, stage)).collect();
    Ok((MapDocument::from_map(&map, cfg.quad, provenance), report))
}

fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    // Flag conflicts are reported before any file is read.
    args.options.config()?;
    let data = args.input.load()?;
    let (doc, report) = fit_document(&data.samples, &args.options)?;
    write_output(Some(&args.output), doc.to_json()?.as_bytes())?;
    write_output(args.trace.as_deref(), &json_bytes(&report)?)
}

pub fn eval_report(map: &dyn TransportModel, data: &SampleBatch, adjust: bool, per_sample: bool) -> CliResult<EvalReport> {
    check_columns(data.dim(), map.dim())?;
    let r = negative_log_likelihood(map, data, adjust)?;
    let shift = if adjust { r.log_scale } else { 0.0 };
    Ok(EvalReport {
        samples: data.len(),
        conditional_split: map.conditional_split(),
        mean_nll: r.mean_nll,
        std_adjusted: r.std_adjusted,
        log_scale: r.log_scale,
        values: per_sample.then(|| r.values.iter().map(|v| shift - v).collect()),
    })
}

fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let (_, map) = load_map(&args.map)?;
    let data = args.input.load()?;
    let report = eval_report(map.model(), &data.samples, !args.no_std_adjust, args.per_sample)?;
    write_output(args.output.as_deref(), &json_bytes(&report)?)
}

fn cmd_sample(args: &SampleArgs) -> CliResult<()> {
    let (doc, map) = load_map(&args.map)?;
    let model = map.model();
    check_columns(args.given.len(), model.conditional_split())?;
    let batch = sample_conditional(model, &args.given, args.count, args.seed)?;
    let names = default_names(doc.dimension)[doc.conditional_split..].to_vec();
    write_output(args.output.as_deref(), &csv_bytes(&names, &batch)?)
}

fn cmd_invert(args: &InvertArgs) -> CliResult<()> {
    let (doc, map) = load_map(&args.map)?;
    let model = map.model();
    let data = load_csv(&args.input, !args.no_header, false)?.samples;
    check_columns(data.dim(), model.dim())?;
    let split = model.conditional_split();
    let out = data.map_rows(model.dim(), |row| {
        let mut full = row[..split].to_vec();
        full.extend(model.invert_given(&row[..split], &row[split..])?);
        Ok(full)
    })?;
    write_output(args.output.as_deref(), &csv_bytes(&default_names(doc.dimension), &out)?)
}

fn generate(args: &GenerateArgs) -> CliResult<Dataset> {
    let fixed = |d: usize| -> CliResult<()> {
        match args.dim {
            Some(g) if g != d => Err(CliError::Usage(format!("this target has dimension {d}, got --dim {g}"))),
            _ => Ok(()),
        }
    };
    match args.target {
        Target::Mog3 => {
            fixed(3)?;
            Ok(gen_mog3(args.n, args.seed))
        }
        Target::Fig1 => {
            fixed(1)?;
            Ok(gen_fig1_mixture(args.n, args.seed))
        }
        Target::Lorenz96 => Ok(gen_lorenz96(
            args.n,
            args.dim.unwrap_or(20),
            args.forcing,
            args.dt,
            args.steps,
            args.seed,
        )?),
        Target::Gauss => {
            let d = args.dim.unwrap_or(2);
            let cov: Vec<Vec<f64>> = (0..d)
                .map(|i| (0..d).map(|j| if i == j { 1.0 } else { args.rho }).collect())
                .collect();
            Ok(gen_gaussian(args.n, &cov, args.seed)?)
        }
    }
}

fn cmd_generate(args: &GenerateArgs) -> CliResult<()> {
    let data = generate(args)?;
    let names = default_names(data.dim());
    write_output(args.output.as_deref(), &csv_bytes(&names, &data.samples)?)
}

/// Maximum degree of each variable among the selected features of each component.
pub fn degree_report(map: &LoadedMap) -> String {
    let stage = map.last_stage();
    let d = stage.dim();
    let mut out = String::from("component,features");
    for name in default_names(d) {
        out.push(',');
        out.push_str(&name);
    }
    out.push('\n');
    for (c, row) in stage.components().iter().zip(stage.degree_table()) {
        out.push_str(&format!("{},{}", c.dim(), c.expansion().len()));
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

fn cmd_report(args: &ReportArgs) -> CliResult<()> {
    let (_, map) = load_map(&args.map)?;
    write_output(args.output.as_deref(), degree_report(&map).as_bytes())
}

fn cmd_cv(args: &CvArgs) -> CliResult<()> {
    let cfg = args.options.config()?;
    if args.options.linear_first || args.options.total_degree.is_some() {
        return Err(CliError::Usage(
            "cv runs the adaptive sweep; --linear-first and --total-degree do not apply".into(),
        ));
    }
    let data = args.input.load()?.samples;
    let split = args.options.conditional_split;
    if split >= data.dim() {
        return Err(atm::Error::Config(format!(
            "conditional split {split} leaves no variables out of {}",
            data.dim()
        ))
        .into());
    }
    cfg.validate(data.len())?;
    let z = Standardization::fit(&data)?.apply(&data)?;
    let report = (split + 1..=data.dim())
        .map(|k| {
            let cv = cross_validate_m(&z.leading_columns(k)?, &cfg)?;
            Ok(CvComponent {
                component: k,
                chosen_m: cv.chosen_m,
                stopped_early: cv.stopped_early,
                mean_validation: cv.mean_validation,
                validation: cv.validation,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    write_output(args.output.as_deref(), &json_bytes(&report)?)
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> CliResult<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker threads: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Invert(a) => cmd_invert(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Report(a) => cmd_report(a),
        Command::Cv(a) => cmd_cv(a),
    })
}
