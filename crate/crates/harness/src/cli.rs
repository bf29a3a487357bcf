//! The `shapley` command line.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use shapley_core::knn::explained_variance_ratio;
use shapley_core::procedure::resolve_moments;
use shapley_core::rng::{stream, Domain};
use shapley_core::{
    run_procedure, DataSample, EstimatorKind,
    ExactBackend, GivenDataBackend, InputModel, LinearGaussianModel, Procedure, ProcedureConfig,
    ShapleyReport, Subsampling, Variant,
};

use crate::client::{ClientError, ExternalModel};
use crate::config::{load_gaussian, ConfigError};
use crate::csv_io::{load_csv, CsvError, Schema};
use crate::experiment::{
    draw_gaussian_sample, run_experiment, write_runs_csv, write_summary_json, EstimatorSpec,
    ExperimentConfig, ExperimentError, Fixture, Mode, SCHEMA_VERSION,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "shapley", version, about = "Shapley effects for models with dependent inputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the Shapley effects once.
    Estimate(EstimateArgs),
    /// Replicate an estimator matrix and report quadratic risks.
    Experiment(ExperimentArgs),
    /// Print the closed-form effects of a linear-Gaussian fixture.
    Oracle(OracleArgs),
    /// Estimate Var(E(Y|X)) / Var(Y) from a sample with outputs.
    Ratio(RatioArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    GivenData,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProcedureArg {
    Subset,
    RandomPerm,
    ExactPerm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Mc,
    Pf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Mix,
    Knn,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exact => Mode::Exact,
            ModeArg::GivenData => Mode::GivenData,
        }
    }
}

impl From<ProcedureArg> for Procedure {
    fn from(p: ProcedureArg) -> Self {
        match p {
            ProcedureArg::Subset => Procedure::Subset,
            ProcedureArg::RandomPerm => Procedure::RandomPermutation,
            ProcedureArg::ExactPerm => Procedure::ExactPermutation,
        }
    }
}

impl From<EstimatorArg> for EstimatorKind {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Mc => EstimatorKind::DoubleMc,
            EstimatorArg::Pf => EstimatorKind::PickFreeze,
        }
    }
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Mix => Variant::Mix,
            VariantArg::Knn => Variant::Knn,
        }
    }
}

/// Where inputs, outputs and the model come from.
#[derive(Debug, Args)]
struct SourceArgs {
    /// CSV file of observed inputs, with a header row.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Column of `--data` holding precomputed outputs.
    #[arg(long)]
    output_col: Option<String>,
    /// Comma-separated categorical columns of `--data`.
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<String>,
    /// Use raw continuous coordinates in neighbour distances.
    #[arg(long)]
    no_standardize: bool,
    /// Linear-Gaussian fixture (TOML).
    #[arg(long)]
    gaussian_config: Option<PathBuf>,
    /// Shell command evaluating the model over the line protocol.
    #[arg(long)]
    model_cmd: Option<String>,
    /// Points per request to `--model-cmd`.
    #[arg(long, default_value_t = crate::client::DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    /// Seconds to wait for each batch of replies.
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
    /// Draw a sample of this size from the Gaussian fixture instead of `--data`.
    #[arg(long)]
    sample_size: Option<usize>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "subset")]
    procedure: ProcedureArg,
    #[arg(long, value_enum, default_value = "mc")]
    estimator: EstimatorArg,
    /// Given-data variant; knn unless set.
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Total evaluation budget.
    #[arg(long)]
    ntot: Option<u64>,
    /// Number of random permutations; overrides the budget.
    #[arg(long)]
    m: Option<u64>,
    /// Inner sample size of the double Monte-Carlo estimator.
    #[arg(long, default_value_t = 3)]
    ni: usize,
    /// Accuracy of each estimate along a permutation.
    #[arg(long = "no", default_value_t = 1)]
    n_o: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pilot size for output moments when they are not known.
    #[arg(long, default_value_t = shapley_core::exact::DEFAULT_PILOT_SIZE)]
    pilot: u64,
    /// Anchor subsampling in given-data mode.
    #[arg(long, value_enum, default_value = "auto")]
    subsampling: SubsamplingArg,
    /// Run on one thread.
    #[arg(long)]
    sequential: bool,
    /// Write the report as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    source: SourceArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SubsamplingArg {
    Auto,
    With,
    Without,
}

impl From<SubsamplingArg> for Subsampling {
    fn from(s: SubsamplingArg) -> Self {
        match s {
            SubsamplingArg::Auto => Subsampling::Auto,
            SubsamplingArg::With => Subsampling::WithReplacement,
            SubsamplingArg::Without => Subsampling::WithoutReplacement,
        }
    }
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    /// Comma-separated labels such as ss_MC,spr_PF or ss_MC_knn; by default
    /// both procedures with both estimators (and both variants in
    /// given-data mode).
    #[arg(long, value_delimiter = ',')]
    estimators: Vec<String>,
    #[arg(long)]
    ntot: u64,
    #[arg(long, default_value_t = 3)]
    ni: usize,
    #[arg(long, default_value_t = 100)]
    replications: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = shapley_core::exact::DEFAULT_PILOT_SIZE)]
    pilot: u64,
    /// Skip risks, e.g. when no closed-form effects exist.
    #[arg(long)]
    no_risks: bool,
    #[arg(long)]
    sequential: bool,
    /// Directory receiving runs.csv and summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    source: SourceArgs,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long)]
    gaussian_config: PathBuf,
    /// Write the effects as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RatioArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    output_col: String,
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<String>,
    #[arg(long)]
    no_standardize: bool,
    /// Number of anchor rows.
    #[arg(long, default_value_t = 1000)]
    anchors: u64,
    #[arg(long, default_value_t = 3)]
    ni: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// A failure with its exit status.
#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) => m,
        }
    }
}

fn config(m: impl Into<String>) -> Failure {
    Failure::Config(m.into())
}

impl From<shapley_core::Error> for Failure {
    fn from(e: shapley_core::Error) -> Self {
        use shapley_core::Error as E;
        match e {
            E::Dimension { .. }
            | E::InvalidArgument(_)
            | E::KindMismatch { .. }
            | E::DegenerateVariance(_)
            | E::MissingOutputs
            | E::MissingModel
            | E::TooManyPermutations { .. } => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<CsvError> for Failure {
    fn from(e: CsvError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(m) => Failure::Config(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status. Results go to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_CONFIG
                }
            };
        }
    };
    let result = match cli.command {
        Command::Estimate(a) => estimate(a, out),
        Command::Experiment(a) => experiment(a, out),
        Command::Oracle(a) => oracle(a, out),
        Command::Ratio(a) => ratio(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let kind = if f.code() == EXIT_CONFIG { "configuration error" } else { "error" };
            let _ = writeln!(err, "shapley: {kind}: {}", f.message());
            f.code()
        }
    }
}

struct Sources {
    gaussian: Option<LinearGaussianModel>,
    data: Option<DataSample>,
    external: Option<ExternalModel>,
}

impl Sources {
    fn load(a: &SourceArgs) -> Result<Self, Failure> {
        if a.data.is_some() && a.sample_size.is_some() {
            return Err(config("--data and --sample-size are exclusive"));
        }
        if a.data.is_none() && (a.output_col.is_some() || !a.categorical.is_empty()) {
            return Err(config("--output-col and --categorical describe --data, which is missing"));
        }
        if a.sample_size.is_some() && a.gaussian_config.is_none() {
            return Err(config("--sample-size draws from --gaussian-config, which is missing"));
        }
        let gaussian = a.gaussian_config.as_deref().map(load_gaussian).transpose()?;
        let data = match &a.data {
            Some(path) => {
                let mut schema = Schema::new().with_categorical(a.categorical.clone());
                schema.output = a.output_col.clone();
                schema.standardize = !a.no_standardize;
                Some(load_csv(path, &schema)?)
            }
            None => None,
        };
        if let (Some(g), Some(d)) = (&gaussian, &data) {
            if g.p() != d.p() {
                return Err(config(format!(
                    "the Gaussian fixture has {} inputs but the data has {}",
                    g.p(),
                    d.p()
                )));
            }
        }
        let external = match &a.model_cmd {
            Some(cmd) => {
                let p = data
                    .as_ref()
                    .map(DataSample::p)
                    .or(gaussian.as_ref().map(LinearGaussianModel::p))
                    .ok_or_else(|| config("--model-cmd needs --data or --gaussian-config to fix the dimension"))?;
                if a.batch_size == 0 {
                    return Err(config("--batch-size must be positive"));
                }
                if !(a.timeout.is_finite() && a.timeout > 0.0) {
                    return Err(config("--timeout must be a positive number of seconds"));
                }
                Some(
                    ExternalModel::spawn(cmd, p)?
                        .with_batch_size(a.batch_size)
                        .with_timeout(Duration::from_secs_f64(a.timeout)),
                )
            }
            None => None,
        };
        Ok(Sources {
            gaussian,
            data,
            external,
        })
    }

    /// The external model if given, else the Gaussian fixture.
    fn model(&self) -> Option<&dyn InputModel> {
        match (&self.external, &self.gaussian) {
            (Some(e), _) => Some(e),
            (None, Some(g)) => Some(g),
            (None, None) => None,
        }
    }

    fn names(&self, p: usize) -> Vec<String> {
        match &self.data {
            Some(d) => d.names().to_vec(),
            None => (1..=p).map(|i| format!("X{i}")).collect(),
        }
    }
}

#[derive(Serialize)]
struct ReportFile<'a> {
    schema_version: u32,
    mode: Mode,
    inputs: Vec<String>,
    #[serde(flatten)]
    report: &'a ShapleyReport,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn estimate(a: EstimateArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let sources = Sources::load(&a.source)?;
    let mode = Mode::from(a.mode);
    let estimator = EstimatorKind::from(a.estimator);
    let procedure = Procedure::from(a.procedure);
    if estimator == EstimatorKind::DoubleMc && a.ni < 2 {
        return Err(config("--ni must be at least 2"));
    }
    let n_inner = match estimator {
        EstimatorKind::DoubleMc => a.ni,
        EstimatorKind::PickFreeze => 2,
    };
    let ntot = match (procedure, a.ntot, a.m) {
        (Procedure::Subset, None, _) => return Err(config("the subset procedure needs --ntot")),
        (Procedure::RandomPermutation, None, None) => return Err(config("the random-permutation procedure needs --ntot or --m")),
        (_, Some(n), _) => n,
        (_, None, _) => 0,
    };
    if a.m.is_some() && procedure != Procedure::RandomPermutation {
        return Err(config("--m applies to the random-permutation procedure only"));
    }
    if a.n_o == 0 {
        return Err(config("--no must be at least 1"));
    }
    let mut pc = ProcedureConfig::new(procedure, ntot, a.seed);
    pc.permutations = a.m;
    pc.n_o = a.n_o;
    pc.parallel = !a.sequential;

    let drawn;
    let report = match mode {
        Mode::Exact => {
            if a.variant.is_some() {
                return Err(config("--variant applies to --mode given-data only"));
            }
            let g = sources
                .gaussian
                .as_ref()
                .ok_or_else(|| config("exact mode samples inputs from --gaussian-config, which is missing"))?;
            let model = sources.model().expect("gaussian present");
            let moments = resolve_moments(model, g, a.pilot, a.seed)?;
            let backend = ExactBackend::new(model, g, estimator, n_inner, moments)?;
            run_procedure(&backend, &pc)?
        }
        Mode::GivenData => {
            let sample = match (&sources.data, &sources.gaussian, a.source.sample_size) {
                (Some(d), _, _) => d,
                (None, Some(g), Some(n)) => {
                    drawn = draw_gaussian_sample(g, n, a.seed)?;
                    &drawn
                }
                _ => return Err(config("given-data mode needs --data, or --gaussian-config with --sample-size")),
            };
            let variant = a.variant.map_or(Variant::Knn, Variant::from);
            let model = match variant {
                Variant::Mix => Some(sources.model().ok_or_else(|| {
                    config("--variant mix evaluates the model: give --model-cmd or --gaussian-config")
                })?),
                Variant::Knn => {
                    if sample.outputs().is_none() {
                        return Err(config("--variant knn reuses stored outputs: give --output-col"));
                    }
                    None
                }
            };
            let backend = GivenDataBackend::new(sample, model, estimator, variant, n_inner)?
                .with_subsampling(a.subsampling.into());
            run_procedure(&backend, &pc)?
        }
    };

    let names = sources.names(report.effects.len());
    print_report(out, &report, &names)?;
    if let Some(path) = &a.out {
        let file = ReportFile {
            schema_version: SCHEMA_VERSION,
            mode,
            inputs: names,
            report: &report,
        };
        write_json(&file, path)?;
    }
    Ok(())
}

fn print_report(out: &mut dyn Write, r: &ShapleyReport, names: &[String]) -> std::io::Result<()> {
    writeln!(out, "procedure       {}", r.procedure)?;
    writeln!(out, "estimator       {}", r.estimator)?;
    writeln!(out, "seed            {}", r.seed)?;
    let width = names.iter().map(String::len).max().unwrap_or(0).max(6);
    for (name, e) in names.iter().zip(&r.effects) {
        writeln!(out, "  {name:<width$}  {e:.6}")?;
    }
    writeln!(out, "  {:<width$}  {:.6}", "sum", r.sum())?;
    writeln!(out, "requested cost  {}", r.requested_cost)?;
    writeln!(out, "realized cost   {}", r.realized_cost)?;
    writeln!(out, "evaluations     {}", r.evaluations)?;
    if r.setup_cost > 0 {
        writeln!(out, "setup cost      {}", r.setup_cost)?;
    }
    if let Some(m) = r.permutations {
        writeln!(out, "permutations    {m}")?;
    }
    for w in &r.warnings {
        writeln!(out, "warning: {w}")?;
    }
    writeln!(out, "wall time       {:.3}s", r.wall_time.as_secs_f64())
}

fn experiment(a: ExperimentArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let sources = Sources::load(&a.source)?;
    let mode = Mode::from(a.mode);
    let estimators = if a.estimators.is_empty() {
        match mode {
            Mode::Exact => EstimatorSpec::matrix(&[None]),
            Mode::GivenData => EstimatorSpec::matrix(&[Some(Variant::Mix), Some(Variant::Knn)]),
        }
    } else {
        a.estimators
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<EstimatorSpec>, _>>()?
    };
    let mut cfg = ExperimentConfig::new(mode, estimators, a.ntot, a.replications, a.seed);
    cfg.n_inner = a.ni;
    cfg.pilot = a.pilot;
    cfg.sample_size = a.source.sample_size;
    cfg.risks = !a.no_risks;
    cfg.parallel = !a.sequential;
    let fixture = Fixture {
        gaussian: sources.gaussian.as_ref(),
        data: sources.data.as_ref(),
        model: sources.external.as_ref().map(|e| e as &dyn InputModel),
    };
    let result = run_experiment(&cfg, &fixture)?;
    let s = &result.summary;
    writeln!(out, "{} replications, budget {}, seed {}", s.replications, s.ntot, s.seed)?;
    writeln!(out, "{:<16} {:>12} {:>12} {:>14}", "estimator", "risk", "median", "realized cost")?;
    for e in &s.estimators {
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4e}"));
        writeln!(
            out,
            "{:<16} {:>12} {:>12} {:>14.1}",
            e.label,
            fmt(e.summed_risk),
            fmt(e.median_squared_error),
            e.mean_realized_cost
        )?;
    }
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        write_runs_csv(&result.runs, &dir.join("runs.csv"))?;
        write_summary_json(s, &dir.join("summary.json"))?;
        writeln!(out, "wrote {} and {}", dir.join("runs.csv").display(), dir.join("summary.json").display())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleFile {
    schema_version: u32,
    var_y: f64,
    effects: Vec<f64>,
}

fn oracle(a: OracleArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let g = load_gaussian(&a.gaussian_config)?;
    let effects = g.theoretical_shapley()?;
    writeln!(out, "var_y  {}", g.var_y())?;
    for (i, e) in effects.iter().enumerate() {
        writeln!(out, "  X{:<4} {e:.10}", i + 1)?;
    }
    writeln!(out, "  sum   {:.10}", effects.iter().sum::<f64>())?;
    if let Some(path) = &a.out {
        write_json(
            &OracleFile {
                schema_version: SCHEMA_VERSION,
                var_y: g.var_y(),
                effects,
            },
            path,
        )?;
    }
    Ok(())
}

fn ratio(a: RatioArgs, out: &mut dyn Write) -> Result<(), Failure> {
    if a.ni < 2 {
        return Err(config("--ni must be at least 2"));
    }
    let mut schema = Schema::new()
        .with_output(a.output_col.clone())
        .with_categorical(a.categorical.clone());
    schema.standardize = !a.no_standardize;
    let sample = load_csv(&a.data, &schema)?;
    let mut rng = stream(a.seed, Domain::Diagnostic, 0, 0);
    let r = explained_variance_ratio(&sample, a.anchors, a.ni, &mut rng)?;
    writeln!(out, "explained variance ratio  {r:.4}")?;
    writeln!(out, "rows {}, anchors {}, neighbours {}", sample.n(), a.anchors.min(sample.n() as u64), a.ni)?;
    Ok(())
}
