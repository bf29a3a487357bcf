//! Replicated runs of an estimator matrix and their quadratic risks.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use shapley_core::par::try_map;
use shapley_core::procedure::resolve_moments;
use shapley_core::rng::{derive_seed, stream, Domain};
use shapley_core::{
    run_procedure, ConditionalSampler, DataSample, EstimatorKind, ExactBackend, GivenDataBackend,
    InputModel, LinearGaussianModel, Procedure, ProcedureConfig, ShapleyReport, Subsampling,
    Variant,
};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] shapley_core::Error),

    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Inputs sampled exactly from their (conditional) distributions.
    Exact,
    /// Conditional draws replaced by nearest neighbours in an observed sample.
    GivenData,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Exact => "exact",
            Mode::GivenData => "given-data",
        })
    }
}

/// One entry of the estimator matrix, e.g. `ss_MC`, `spr_PF_knn` or
/// `spr_MC_No10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub procedure: Procedure,
    pub estimator: EstimatorKind,
    pub variant: Option<Variant>,
    pub n_o: u64,
}

impl EstimatorSpec {
    pub fn new(procedure: Procedure, estimator: EstimatorKind, variant: Option<Variant>) -> Self {
        EstimatorSpec {
            procedure,
            estimator,
            variant,
            n_o: 1,
        }
    }

    pub fn with_n_o(mut self, n_o: u64) -> Self {
        self.n_o = n_o;
        self
    }

    /// Both procedures with both estimators, for the given variant.
    pub fn matrix(variants: &[Option<Variant>]) -> Vec<Self> {
        let mut out = Vec::new();
        for &variant in variants {
            for procedure in [Procedure::Subset, Procedure::RandomPermutation] {
                for estimator in [EstimatorKind::DoubleMc, EstimatorKind::PickFreeze] {
                    out.push(EstimatorSpec::new(procedure, estimator, variant));
                }
            }
        }
        out
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.procedure {
            Procedure::Subset => "ss",
            Procedure::RandomPermutation => "spr",
            Procedure::ExactPermutation => "sep",
        };
        write!(f, "{prefix}_{}", self.estimator)?;
        if let Some(v) = self.variant {
            write!(f, "_{v}")?;
        }
        if self.n_o != 1 {
            write!(f, "_No{}", self.n_o)?;
        }
        Ok(())
    }
}

impl FromStr for EstimatorSpec {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ExperimentError::Config(format!("unrecognised estimator label {s:?}"));
        let mut parts = s.trim().split('_');
        let procedure = match parts.next() {
            Some("ss") => Procedure::Subset,
            Some("spr") => Procedure::RandomPermutation,
            Some("sep") => Procedure::ExactPermutation,
            _ => return Err(bad()),
        };
        let estimator = match parts.next() {
            Some("MC") => EstimatorKind::DoubleMc,
            Some("PF") => EstimatorKind::PickFreeze,
            _ => return Err(bad()),
        };
        let mut spec = EstimatorSpec::new(procedure, estimator, None);
        for part in parts {
            match part {
                "mix" if spec.variant.is_none() => spec.variant = Some(Variant::Mix),
                "knn" if spec.variant.is_none() => spec.variant = Some(Variant::Knn),
                _ => match part.strip_prefix("No").and_then(|n| n.parse().ok()) {
                    Some(n) if n > 0 => spec.n_o = n,
                    _ => return Err(bad()),
                },
            }
        }
        Ok(spec)
    }
}

/// What the experiment runs on. The model defaults to the Gaussian fixture
/// when one is given.
#[derive(Clone, Copy, Default)]
pub struct Fixture<'a> {
    pub gaussian: Option<&'a LinearGaussianModel>,
    pub data: Option<&'a DataSample>,
    pub model: Option<&'a dyn InputModel>,
}

impl<'a> Fixture<'a> {
    pub fn gaussian(model: &'a LinearGaussianModel) -> Self {
        Fixture {
            gaussian: Some(model),
            ..Default::default()
        }
    }

    fn model(&self) -> Option<&'a dyn InputModel> {
        self.model
            .or_else(|| self.gaussian.map(|g| g as &dyn InputModel))
    }

    /// Closed-form effects, known when the model is the Gaussian fixture itself.
    pub fn oracle(&self) -> Result<Option<Vec<f64>>, ExperimentError> {
        match (self.gaussian, self.model) {
            (Some(g), None) => Ok(Some(g.theoretical_shapley()?)),
            _ => Ok(None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub estimators: Vec<EstimatorSpec>,
    pub ntot: u64,
    pub n_inner: usize,
    pub replications: usize,
    pub seed: u64,
    /// Size of the sample drawn afresh for every replication in given-data
    /// mode on a Gaussian fixture.
    pub sample_size: Option<usize>,
    /// Pilot size for output moments when the model does not know them.
    pub pilot: u64,
    pub subsampling: Subsampling,
    pub risks: bool,
    pub parallel: bool,
}

impl ExperimentConfig {
    pub fn new(mode: Mode, estimators: Vec<EstimatorSpec>, ntot: u64, replications: usize, seed: u64) -> Self {
        ExperimentConfig {
            mode,
            estimators,
            ntot,
            n_inner: shapley_core::exact::DEFAULT_INNER_SIZE,
            replications,
            seed,
            sample_size: None,
            pilot: shapley_core::exact::DEFAULT_PILOT_SIZE,
            subsampling: Subsampling::Auto,
            risks: true,
            parallel: true,
        }
    }
}

/// One estimator in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub replication: usize,
    pub label: String,
    pub report: ShapleyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub label: String,
    /// `Σ_i mean_r (η̂_i - η_i)²`.
    pub summed_risk: Option<f64>,
    pub risk_by_input: Option<Vec<f64>>,
    /// Median over replications of `Σ_i (η̂_i - η_i)²`.
    pub median_squared_error: Option<f64>,
    pub mean_effects: Vec<f64>,
    pub requested_cost: u64,
    pub mean_realized_cost: f64,
    pub mean_evaluations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSummary {
    pub schema_version: u32,
    pub mode: Mode,
    pub replications: usize,
    pub seed: u64,
    pub ntot: u64,
    pub oracle: Option<Vec<f64>>,
    pub estimators: Vec<EstimatorSummary>,
}

impl RiskSummary {
    pub fn get(&self, label: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.label == label)
    }
}

pub struct ExperimentOutput {
    pub summary: RiskSummary,
    /// Replication-major, estimators in matrix order within a replication.
    pub runs: Vec<RunRecord>,
    pub wall_time: Duration,
}

/// `n` joint draws of the Gaussian inputs with outputs `βᵀx`.
pub fn draw_gaussian_sample(
    model: &LinearGaussianModel,
    n: usize,
    seed: u64,
) -> Result<DataSample, shapley_core::Error> {
    let p = model.p();
    let mut rng = stream(seed, Domain::Sample, 0, 0);
    let mut rows = vec![0.0; n * p];
    for x in rows.chunks_exact_mut(p) {
        model.sample_joint(x, &mut rng)?;
    }
    let mut ys = vec![0.0; n];
    model.evaluate_batch(&rows, &mut ys)?;
    DataSample::continuous(p, rows)?.with_outputs(ys)
}

fn check(config: &ExperimentConfig, fixture: &Fixture<'_>, oracle: Option<&[f64]>) -> Result<(), ExperimentError> {
    let fail = |m: String| Err(ExperimentError::Config(m));
    if config.estimators.is_empty() {
        return fail("the estimator matrix is empty".into());
    }
    if config.replications == 0 {
        return fail("at least one replication is needed".into());
    }
    if config.risks && oracle.is_none() {
        return fail("risks need closed-form effects, available only for a Gaussian fixture evaluated directly".into());
    }
    for spec in &config.estimators {
        match (config.mode, spec.variant) {
            (Mode::Exact, Some(v)) => return fail(format!("variant {v} applies to given-data mode only")),
            (Mode::GivenData, None) => return fail(format!("{spec} needs a variant (mix or knn) in given-data mode")),
            (Mode::GivenData, Some(Variant::Mix)) if fixture.model().is_none() => {
                return fail(format!("{spec} needs a model to evaluate"))
            }
            _ => {}
        }
    }
    match config.mode {
        Mode::Exact if fixture.gaussian.is_none() => fail("exact mode needs a Gaussian input distribution".into()),
        Mode::Exact if fixture.model().is_none() => fail("exact mode needs a model".into()),
        Mode::GivenData if fixture.data.is_none() && (fixture.gaussian.is_none() || config.sample_size.is_none()) => {
            fail("given-data mode needs a data file, or a Gaussian fixture and a sample size".into())
        }
        _ => Ok(()),
    }
}

/// Runs every estimator of the matrix `replications` times. Replication `r`
/// uses seed `derive(seed, r)`; estimator `e` within it uses
/// `derive(derive(seed, r), e)`, so results do not depend on scheduling.
pub fn run_experiment(config: &ExperimentConfig, fixture: &Fixture<'_>) -> Result<ExperimentOutput, ExperimentError> {
    let started = std::time::Instant::now();
    let oracle = if config.risks { fixture.oracle()? } else { None };
    check(config, fixture, oracle.as_deref())?;
    let model = fixture.model();
    let parallel = config.parallel && model.is_none_or(|m| m.concurrent());

    // Exact mode shares one set of output moments across replications.
    let moments = match (config.mode, model, fixture.gaussian) {
        (Mode::Exact, Some(m), Some(g)) => Some(resolve_moments(m, g, config.pilot, config.seed)?),
        _ => None,
    };

    let reps: Vec<usize> = (0..config.replications).collect();
    let per_rep = try_map(&reps, parallel, |&r| -> Result<Vec<RunRecord>, ExperimentError> {
        let rep_seed = derive_seed(config.seed, Domain::Replication, r as u64);
        let drawn;
        let sample = match (config.mode, fixture.data, fixture.gaussian, config.sample_size) {
            (Mode::GivenData, Some(d), _, _) => Some(d),
            (Mode::GivenData, None, Some(g), Some(n)) => {
                drawn = draw_gaussian_sample(g, n, rep_seed)?;
                Some(&drawn)
            }
            _ => None,
        };
        config
            .estimators
            .iter()
            .enumerate()
            .map(|(e, spec)| {
                let seed = derive_seed(rep_seed, Domain::Estimator, e as u64);
                let mut pc = ProcedureConfig::new(spec.procedure, config.ntot, seed);
                pc.n_o = spec.n_o;
                pc.parallel = parallel;
                let n_inner = match spec.estimator {
                    EstimatorKind::DoubleMc => config.n_inner,
                    EstimatorKind::PickFreeze => 2,
                };
                let report = match (sample, spec.variant) {
                    (Some(s), Some(variant)) => {
                        let m = if variant == Variant::Mix { model } else { None };
                        let backend = GivenDataBackend::new(s, m, spec.estimator, variant, n_inner)?
                            .with_subsampling(config.subsampling);
                        run_procedure(&backend, &pc)?
                    }
                    _ => {
                        let (m, g) = (model.expect("checked"), fixture.gaussian.expect("checked"));
                        let sampler: &dyn ConditionalSampler = g;
                        let backend =
                            ExactBackend::new(m, sampler, spec.estimator, n_inner, moments.expect("exact mode"))?;
                        run_procedure(&backend, &pc)?
                    }
                };
                Ok(RunRecord {
                    replication: r,
                    label: spec.label(),
                    report,
                })
            })
            .collect()
    })?;
    let runs: Vec<RunRecord> = per_rep.into_iter().flatten().collect();
    let summary = summarize(config, oracle, &runs);
    Ok(ExperimentOutput {
        summary,
        runs,
        wall_time: started.elapsed(),
    })
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn summarize(config: &ExperimentConfig, oracle: Option<Vec<f64>>, runs: &[RunRecord]) -> RiskSummary {
    let estimators = config
        .estimators
        .iter()
        .map(|spec| {
            let label = spec.label();
            let mine: Vec<&ShapleyReport> = runs.iter().filter(|r| r.label == label).map(|r| &r.report).collect();
            let n = mine.len() as f64;
            let p = mine[0].effects.len();
            let mean_effects = (0..p).map(|i| mine.iter().map(|r| r.effects[i]).sum::<f64>() / n).collect();
            let (risk_by_input, median_squared_error) = match &oracle {
                Some(eta) => {
                    let by_input: Vec<f64> = (0..p)
                        .map(|i| mine.iter().map(|r| (r.effects[i] - eta[i]).powi(2)).sum::<f64>() / n)
                        .collect();
                    let per_run = mine
                        .iter()
                        .map(|r| r.effects.iter().zip(eta).map(|(a, b)| (a - b).powi(2)).sum())
                        .collect();
                    (Some(by_input), Some(median(per_run)))
                }
                None => (None, None),
            };
            EstimatorSummary {
                label,
                summed_risk: risk_by_input.as_ref().map(|r| r.iter().sum()),
                risk_by_input,
                median_squared_error,
                mean_effects,
                requested_cost: config.ntot,
                mean_realized_cost: mine.iter().map(|r| r.realized_cost as f64).sum::<f64>() / n,
                mean_evaluations: mine.iter().map(|r| r.evaluations as f64).sum::<f64>() / n,
            }
        })
        .collect();
    RiskSummary {
        schema_version: SCHEMA_VERSION,
        mode: config.mode,
        replications: config.replications,
        seed: config.seed,
        ntot: config.ntot,
        oracle,
        estimators,
    }
}

/// One row per replication and estimator: seed, costs and the effects.
pub fn write_runs_csv(runs: &[RunRecord], path: &Path) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    let p = runs.first().map_or(0, |r| r.report.effects.len());
    let mut header: Vec<String> = ["replication", "estimator", "seed", "requested_cost", "realized_cost", "evaluations"]
        .map(String::from)
        .to_vec();
    header.extend((1..=p).map(|i| format!("eta_{i}")));
    w.write_record(&header)?;
    for run in runs {
        let r = &run.report;
        let mut row = vec![
            run.replication.to_string(),
            run.label.clone(),
            r.seed.to_string(),
            r.requested_cost.to_string(),
            r.realized_cost.to_string(),
            r.evaluations.to_string(),
        ];
        row.extend(r.effects.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| ExperimentError::Write {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

pub fn write_summary_json(summary: &RiskSummary, path: &Path) -> Result<(), ExperimentError> {
    let text = serde_json::to_string_pretty(summary)?;
    std::fs::write(path, text + "\n").map_err(|source| ExperimentError::Write {
        path: path.display().to_string(),
        source,
    })
}
