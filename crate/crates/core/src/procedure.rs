//! The subset and permutation procedures that turn per-subset estimates
//! `Ŵ_u` into Shapley effects under a total evaluation budget.

use std::fmt;
use std::time::{Duration, Instant};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::allocation::{allocate_subset_budget, AllocationPlan};
use crate::error::{Error, Result};
use crate::exact::{self, Estimate, DEFAULT_INNER_SIZE};
use crate::model::{ConditionalSampler, InputModel, Moments};
use crate::par::try_map;
use crate::permutation::{factorial, Permutation};
use crate::rng::{stream, Domain};
use crate::shapley::shapley_from_subsets;
use crate::subset::SubsetIndex;
use crate::table::{check_var, ConditionalElementTable, ElementKind};

/// Largest `p` accepted by the exact-permutation procedure.
pub const MAX_EXACT_PERMUTATION_DIM: usize = 8;

/// Permutation chains processed per parallel batch.
const PERMUTATION_BATCH: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Procedure {
    Subset,
    RandomPermutation,
    ExactPermutation,
}

impl fmt::Display for Procedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Procedure::Subset => "subset",
            Procedure::RandomPermutation => "random-perm",
            Procedure::ExactPermutation => "exact-perm",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    /// Double Monte-Carlo, estimates `E_u`.
    DoubleMc,
    /// Pick-and-Freeze, estimates `V_u`.
    PickFreeze,
}

impl EstimatorKind {
    pub fn element_kind(self) -> ElementKind {
        match self {
            EstimatorKind::DoubleMc => ElementKind::ExpectationOfConditionalVariance,
            EstimatorKind::PickFreeze => ElementKind::VarianceOfConditionalExpectation,
        }
    }

    /// Evaluations per unit of accuracy.
    pub fn cost_unit(self, n_inner: usize) -> u64 {
        match self {
            EstimatorKind::DoubleMc => n_inner as u64,
            EstimatorKind::PickFreeze => 2,
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::DoubleMc => "MC",
            EstimatorKind::PickFreeze => "PF",
        })
    }
}

/// A source of conditional-element estimates at a requested accuracy.
pub trait ConditionalElementEstimator: Sync {
    fn dim(&self) -> usize;

    fn kind(&self) -> ElementKind;

    /// `κ`: nominal cost of one unit of accuracy.
    fn cost_unit(&self) -> u64;

    fn var_y(&self) -> f64;

    /// Short label for reports, e.g. `MC` or `PF-knn`.
    fn label(&self) -> String;

    /// `Ŵ_u` at accuracy `n_u` for a nonempty proper `u`.
    fn estimate(&self, u: SubsetIndex, n_u: u64, rng: &mut dyn RngCore) -> Result<Estimate>;

    /// Whether `estimate` may run on several threads at once.
    fn parallel_safe(&self) -> bool {
        true
    }

    /// Evaluations spent outside the procedure, e.g. on output moments.
    fn setup_cost(&self) -> u64 {
        0
    }
}

/// `E(Y)` and `Var(Y)` from the model when it knows them, otherwise from a
/// pilot sample of `pilot` joint draws.
pub fn resolve_moments(
    model: &dyn InputModel,
    sampler: &dyn ConditionalSampler,
    pilot: u64,
    seed: u64,
) -> Result<Moments> {
    if let Some(m) = model.known_moments() {
        return Ok(m);
    }
    exact::estimate_moments(model, sampler, pilot, &mut stream(seed, Domain::Moments, 0, 0))
}

/// Estimators for a model whose inputs can be sampled exactly.
pub struct ExactBackend<'a> {
    model: &'a dyn InputModel,
    sampler: &'a dyn ConditionalSampler,
    estimator: EstimatorKind,
    n_inner: usize,
    moments: Moments,
}

impl<'a> ExactBackend<'a> {
    pub fn new(
        model: &'a dyn InputModel,
        sampler: &'a dyn ConditionalSampler,
        estimator: EstimatorKind,
        n_inner: usize,
        moments: Moments,
    ) -> Result<Self> {
        if model.dim() != sampler.dim() {
            return Err(Error::InvalidArgument(format!(
                "model has dimension {} but sampler has {}",
                model.dim(),
                sampler.dim()
            )));
        }
        if estimator == EstimatorKind::DoubleMc && n_inner < 2 {
            return Err(Error::DegenerateVariance(n_inner));
        }
        check_var(moments.var)?;
        Ok(ExactBackend {
            model,
            sampler,
            estimator,
            n_inner,
            moments,
        })
    }

    /// Double Monte-Carlo with the default inner size.
    pub fn double_mc(
        model: &'a dyn InputModel,
        sampler: &'a dyn ConditionalSampler,
        moments: Moments,
    ) -> Result<Self> {
        Self::new(model, sampler, EstimatorKind::DoubleMc, DEFAULT_INNER_SIZE, moments)
    }

    pub fn pick_freeze(
        model: &'a dyn InputModel,
        sampler: &'a dyn ConditionalSampler,
        moments: Moments,
    ) -> Result<Self> {
        Self::new(model, sampler, EstimatorKind::PickFreeze, 2, moments)
    }
}

impl ConditionalElementEstimator for ExactBackend<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn kind(&self) -> ElementKind {
        self.estimator.element_kind()
    }

    fn cost_unit(&self) -> u64 {
        self.estimator.cost_unit(self.n_inner)
    }

    fn var_y(&self) -> f64 {
        self.moments.var
    }

    fn label(&self) -> String {
        self.estimator.to_string()
    }

    fn estimate(&self, u: SubsetIndex, n_u: u64, rng: &mut dyn RngCore) -> Result<Estimate> {
        match self.estimator {
            EstimatorKind::DoubleMc => {
                exact::estimate_eu_double_mc(self.model, self.sampler, u, n_u, self.n_inner, rng)
            }
            EstimatorKind::PickFreeze => exact::estimate_vu_pick_freeze(
                self.model,
                self.sampler,
                u,
                n_u,
                self.moments.mean,
                rng,
            ),
        }
    }

    fn parallel_safe(&self) -> bool {
        self.model.concurrent()
    }

    fn setup_cost(&self) -> u64 {
        self.moments.cost
    }
}

/// Procedure choice and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcedureConfig {
    pub procedure: Procedure,
    /// Requested total cost. For the random-permutation procedure it sets
    /// `M = ntot / (κ N_O (p-1))` unless `permutations` is given.
    pub ntot: u64,
    pub permutations: Option<u64>,
    /// Accuracy of each estimate along a permutation.
    pub n_o: u64,
    pub seed: u64,
    /// Allow data-parallel scheduling when the backend permits it.
    pub parallel: bool,
}

impl ProcedureConfig {
    pub fn new(procedure: Procedure, ntot: u64, seed: u64) -> Self {
        ProcedureConfig {
            procedure,
            ntot,
            permutations: None,
            n_o: 1,
            seed,
            parallel: true,
        }
    }
}

/// Outcome of one procedure run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport {
    pub effects: Vec<f64>,
    pub procedure: Procedure,
    pub estimator: String,
    pub kind: ElementKind,
    pub seed: u64,
    pub requested_cost: u64,
    /// `κ Σ N_u` for the subset procedure, `κ M N_O (p-1)` or
    /// `κ p! N_O (p-1)` for the permutation procedures.
    pub realized_cost: u64,
    /// Model evaluations actually made by the estimators; zero for
    /// estimators that reuse stored outputs.
    pub evaluations: u64,
    /// Evaluations spent before the procedure, on output moments.
    pub setup_cost: u64,
    pub permutations: Option<u64>,
    pub n_o: Option<u64>,
    pub allocation: Option<AllocationPlan>,
    pub table: Option<ConditionalElementTable>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl ShapleyReport {
    pub fn sum(&self) -> f64 {
        self.effects.iter().sum()
    }
}

fn negative_effect_warnings(effects: &[f64]) -> Vec<String> {
    effects
        .iter()
        .enumerate()
        .filter(|(_, &e)| e < 0.0)
        .map(|(i, e)| format!("estimated effect of input {} is negative ({e:.3e})", i + 1))
        .collect()
}

/// Runs the configured procedure.
pub fn run_procedure(
    backend: &dyn ConditionalElementEstimator,
    config: &ProcedureConfig,
) -> Result<ShapleyReport> {
    match config.procedure {
        Procedure::Subset => run_subset_procedure(backend, config.ntot, config.seed, config.parallel),
        Procedure::RandomPermutation => {
            let m = match config.permutations {
                Some(m) => m,
                None => permutations_for_budget(backend, config.ntot, config.n_o)?,
            };
            let mut report =
                run_random_permutation_procedure(backend, m, config.n_o, config.seed, config.parallel)?;
            report.requested_cost = config.ntot;
            Ok(report)
        }
        Procedure::ExactPermutation => {
            let mut report =
                run_exact_permutation_procedure(backend, config.n_o, config.seed, config.parallel)?;
            report.requested_cost = config.ntot;
            Ok(report)
        }
    }
}

/// `M = ntot / (κ N_O (p-1))`, at least 1.
pub fn permutations_for_budget(
    backend: &dyn ConditionalElementEstimator,
    ntot: u64,
    n_o: u64,
) -> Result<u64> {
    let p = backend.dim();
    if p < 2 || n_o == 0 {
        return Err(Error::InvalidArgument(format!(
            "permutation procedures need p >= 2 and N_O >= 1 (p = {p}, N_O = {n_o})"
        )));
    }
    Ok((ntot / (backend.cost_unit() * n_o * (p as u64 - 1))).max(1))
}

/// Estimates every nonempty proper `W_u` once at the accuracy of the
/// allocation plan and aggregates with the subset formula.
pub fn run_subset_procedure(
    backend: &dyn ConditionalElementEstimator,
    ntot: u64,
    seed: u64,
    parallel: bool,
) -> Result<ShapleyReport> {
    let start = Instant::now();
    let p = backend.dim();
    let var_y = backend.var_y();
    check_var(var_y)?;
    let plan = allocate_subset_budget(p, backend.cost_unit(), ntot)?;
    let subsets: Vec<SubsetIndex> = SubsetIndex::proper(p).collect();
    let estimates = try_map(&subsets, parallel && backend.parallel_safe(), |&u| {
        let mut rng = stream(seed, Domain::Subset, u.bits() as u64, 0);
        backend.estimate(u, plan.accuracy(u), &mut rng)
    })?;
    let mut table = ConditionalElementTable::new(p, backend.kind(), var_y)?
        .with_cost_unit(backend.cost_unit());
    let mut evaluations = 0;
    for (&u, est) in subsets.iter().zip(&estimates) {
        table.set(u, est.value, plan.accuracy(u))?;
        evaluations += est.evaluations;
    }
    let effects = shapley_from_subsets(&table)?;
    let mut warnings = negative_effect_warnings(&effects);
    if plan.floored {
        warnings.push(format!(
            "budget {ntot} is below {} (one unit per subset); accuracies floored at 1",
            plan.kappa * ((1u64 << p) - 2)
        ));
    }
    if plan.forced_over {
        warnings.push(format!(
            "realized cost {} exceeds the requested {ntot}",
            plan.realized
        ));
    }
    Ok(ShapleyReport {
        effects,
        procedure: Procedure::Subset,
        estimator: backend.label(),
        kind: backend.kind(),
        seed,
        requested_cost: ntot,
        realized_cost: plan.realized,
        evaluations,
        setup_cost: backend.setup_cost(),
        permutations: None,
        n_o: None,
        allocation: Some(plan),
        table: Some(table),
        warnings,
        wall_time: start.elapsed(),
    })
}

/// The estimates produced while walking one permutation.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationWalk {
    /// `Ŵ` of the growing prefix at each position; the last is `Var(Y)`.
    pub estimates: Vec<f64>,
    /// The previous value subtracted at each position: zero first, then the
    /// estimate of the position before.
    pub previous: Vec<f64>,
    /// Increment credited to each input, indexed by input.
    pub increments: Vec<f64>,
    pub evaluations: u64,
}

/// Walks `sigma` once, estimating each prefix `W` a single time at accuracy
/// `n_o` and reusing it as the base of the next increment.
pub fn walk_permutation(
    backend: &dyn ConditionalElementEstimator,
    sigma: &Permutation,
    n_o: u64,
    rng: &mut dyn RngCore,
) -> Result<PermutationWalk> {
    let p = backend.dim();
    if sigma.len() != p {
        return Err(Error::InvalidArgument(format!(
            "permutation of length {} for dimension {p}",
            sigma.len()
        )));
    }
    let var_y = backend.var_y();
    let mut walk = PermutationWalk {
        estimates: Vec::with_capacity(p),
        previous: Vec::with_capacity(p),
        increments: vec![0.0; p],
        evaluations: 0,
    };
    let mut prefix = SubsetIndex::EMPTY;
    let mut prev_c = 0.0;
    for (pos, &i) in sigma.order().iter().enumerate() {
        prefix = prefix.with(i);
        let c = if pos + 1 == p {
            var_y
        } else {
            let est = backend.estimate(prefix, n_o, rng)?;
            walk.evaluations += est.evaluations;
            est.value
        };
        walk.estimates.push(c);
        walk.previous.push(prev_c);
        walk.increments[i] = c - prev_c;
        prev_c = c;
    }
    Ok(walk)
}

fn check_permutation_args(p: usize, n_o: u64) -> Result<()> {
    if p < 2 {
        return Err(Error::InvalidArgument(format!(
            "permutation procedures need p >= 2, got {p}"
        )));
    }
    if n_o == 0 {
        return Err(Error::InvalidArgument("N_O must be at least 1".into()));
    }
    Ok(())
}

/// Sums the increments of chains `0..count`, each produced by `chain`, in
/// index order so the result does not depend on scheduling.
fn sum_chains<F>(p: usize, count: u64, parallel: bool, chain: F) -> Result<(Vec<f64>, u64)>
where
    F: Fn(u64) -> Result<PermutationWalk> + Sync + Send,
{
    let mut sums = vec![0.0; p];
    let mut evaluations = 0;
    let mut start = 0;
    while start < count {
        let end = (start + PERMUTATION_BATCH).min(count);
        let ids: Vec<u64> = (start..end).collect();
        for walk in try_map(&ids, parallel, |&m| chain(m))? {
            for (s, d) in sums.iter_mut().zip(&walk.increments) {
                *s += d;
            }
            evaluations += walk.evaluations;
        }
        start = end;
    }
    Ok((sums, evaluations))
}

/// Averages the increments along `m` i.i.d. uniform permutations, each
/// prefix estimated at accuracy `n_o`. Costs `κ m n_o (p-1)`.
pub fn run_random_permutation_procedure(
    backend: &dyn ConditionalElementEstimator,
    m: u64,
    n_o: u64,
    seed: u64,
    parallel: bool,
) -> Result<ShapleyReport> {
    let start = Instant::now();
    let p = backend.dim();
    check_var(backend.var_y())?;
    check_permutation_args(p, n_o)?;
    if m == 0 {
        return Err(Error::InvalidArgument("at least one permutation is required".into()));
    }
    let (sums, evaluations) = sum_chains(p, m, parallel && backend.parallel_safe(), |k| {
        let mut rng = stream(seed, Domain::Permutation, k, 0);
        let sigma = Permutation::random(p, &mut rng);
        walk_permutation(backend, &sigma, n_o, &mut rng)
    })?;
    let norm = m as f64 * backend.var_y();
    let effects: Vec<f64> = sums.iter().map(|s| s / norm).collect();
    let realized = backend.cost_unit() * m * n_o * (p as u64 - 1);
    Ok(ShapleyReport {
        warnings: negative_effect_warnings(&effects),
        effects,
        procedure: Procedure::RandomPermutation,
        estimator: backend.label(),
        kind: backend.kind(),
        seed,
        requested_cost: realized,
        realized_cost: realized,
        evaluations,
        setup_cost: backend.setup_cost(),
        permutations: Some(m),
        n_o: Some(n_o),
        allocation: None,
        table: None,
        wall_time: start.elapsed(),
    })
}

/// Walks all `p!` permutations once each. Refused above
/// [`MAX_EXACT_PERMUTATION_DIM`].
pub fn run_exact_permutation_procedure(
    backend: &dyn ConditionalElementEstimator,
    n_o: u64,
    seed: u64,
    parallel: bool,
) -> Result<ShapleyReport> {
    let start = Instant::now();
    let p = backend.dim();
    check_var(backend.var_y())?;
    check_permutation_args(p, n_o)?;
    let count = factorial(p);
    let realized = backend.cost_unit() * count * n_o * (p as u64 - 1);
    if p > MAX_EXACT_PERMUTATION_DIM {
        return Err(Error::TooManyPermutations {
            p,
            permutations: count,
            evaluations: realized,
        });
    }
    let perms: Vec<Permutation> = Permutation::all(p).collect();
    let (sums, evaluations) = sum_chains(p, count, parallel && backend.parallel_safe(), |k| {
        let mut rng = stream(seed, Domain::ExactPermutation, k, 0);
        walk_permutation(backend, &perms[k as usize], n_o, &mut rng)
    })?;
    let norm = count as f64 * backend.var_y();
    let effects: Vec<f64> = sums.iter().map(|s| s / norm).collect();
    Ok(ShapleyReport {
        warnings: negative_effect_warnings(&effects),
        effects,
        procedure: Procedure::ExactPermutation,
        estimator: backend.label(),
        kind: backend.kind(),
        seed,
        requested_cost: realized,
        realized_cost: realized,
        evaluations,
        setup_cost: backend.setup_cost(),
        permutations: Some(count),
        n_o: Some(n_o),
        allocation: None,
        table: None,
        wall_time: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CountingModel, EvalBudget, FnModel};
    use crate::oracle::LinearGaussianModel;
    use crate::shapley::shapley_from_subsets;
    use nalgebra::DMatrix;

    /// Returns the exact values of a table, charging `κ n_u` nominal evaluations.
    struct TableBackend(ConditionalElementTable);

    impl ConditionalElementEstimator for TableBackend {
        fn dim(&self) -> usize {
            self.0.p()
        }
        fn kind(&self) -> ElementKind {
            self.0.kind()
        }
        fn cost_unit(&self) -> u64 {
            3
        }
        fn var_y(&self) -> f64 {
            self.0.var_y()
        }
        fn label(&self) -> String {
            "table".into()
        }
        fn estimate(&self, u: SubsetIndex, n_u: u64, _: &mut dyn RngCore) -> Result<Estimate> {
            Ok(Estimate {
                value: self.0.value(u)?,
                evaluations: 3 * n_u,
            })
        }
    }

    fn fixture3() -> LinearGaussianModel {
        let g = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.5, 2.0, -0.3, 0.2, -0.3, 1.5]);
        LinearGaussianModel::new(vec![1.0, 1.0, 1.0], vec![0.0; 3], g).unwrap()
    }

    fn independent2() -> LinearGaussianModel {
        LinearGaussianModel::new(vec![1.0, 1.0], vec![0.0; 2], DMatrix::identity(2, 2)).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn subset_procedure_on_independent_pair() {
        let m = independent2();
        let backend = ExactBackend::double_mc(&m, &m, m.known_moments().unwrap()).unwrap();
        let r = run_subset_procedure(&backend, 6000, 11, true).unwrap();
        assert!(close(&r.effects, &[0.5, 0.5], 0.05), "{:?}", r.effects);
        assert!((r.sum() - 1.0).abs() < 1e-10);
        assert_eq!(r.evaluations, r.realized_cost);
    }

    #[test]
    fn subset_procedure_on_correlated_triple() {
        let m = fixture3();
        let truth = m.theoretical_shapley().unwrap();
        for est in [EstimatorKind::DoubleMc, EstimatorKind::PickFreeze] {
            let backend = ExactBackend::new(&m, &m, est, 3, m.known_moments().unwrap()).unwrap();
            let r = run_subset_procedure(&backend, 30_000, 5, true).unwrap();
            assert!(close(&r.effects, &truth, 0.05), "{est}: {:?} vs {truth:?}", r.effects);
        }
    }

    #[test]
    fn constant_model_is_rejected() {
        let f = FnModel::new(2, |_: &[f64]| 1.0);
        let m = independent2();
        let moments = Moments { mean: 1.0, var: 0.0, cost: 0 };
        assert!(matches!(
            ExactBackend::double_mc(&f, &m, moments),
            Err(Error::InvalidVariance(_))
        ));
    }

    #[test]
    fn realized_cost_matches_the_counter() {
        let m = fixture3();
        let budget = EvalBudget::unlimited();
        let counted = CountingModel::new(&m, &budget);
        for est in [EstimatorKind::DoubleMc, EstimatorKind::PickFreeze] {
            let before = budget.spent();
            let backend =
                ExactBackend::new(&counted, &m, est, 3, m.known_moments().unwrap()).unwrap();
            let r = run_subset_procedure(&backend, 1000, 1, true).unwrap();
            assert_eq!(budget.spent() - before, r.realized_cost);
            assert_eq!(r.realized_cost, r.allocation.as_ref().unwrap().realized);

            let before = budget.spent();
            let r = run_random_permutation_procedure(&backend, 37, 1, 2, true).unwrap();
            assert_eq!(budget.spent() - before, r.realized_cost);
            assert_eq!(r.realized_cost, backend.cost_unit() * 37 * 2);
        }
    }

    #[test]
    fn permutation_budget_for_ten_inputs() {
        let p = 10;
        let m = LinearGaussianModel::new(vec![1.0; p], vec![0.0; p], DMatrix::identity(p, p)).unwrap();
        let backend = ExactBackend::double_mc(&m, &m, m.known_moments().unwrap()).unwrap();
        let mut config = ProcedureConfig::new(Procedure::RandomPermutation, 54_000, 3);
        assert_eq!(permutations_for_budget(&backend, 54_000, 1).unwrap(), 2000);
        config.parallel = false;
        let r = run_procedure(&backend, &config).unwrap();
        assert_eq!(r.permutations, Some(2000));
        assert_eq!(r.realized_cost, 54_000);
        assert_eq!(r.evaluations, 54_000);
    }

    #[test]
    fn pair_permutations_telescope() {
        let m = independent2();
        let backend = ExactBackend::pick_freeze(&m, &m, m.known_moments().unwrap()).unwrap();
        let r = run_random_permutation_procedure(&backend, 5, 1, 9, false).unwrap();
        assert!((r.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn walk_reuses_each_estimate_bit_for_bit() {
        let m = fixture3();
        let backend = ExactBackend::double_mc(&m, &m, m.known_moments().unwrap()).unwrap();
        let mut rng = stream(1, Domain::Diagnostic, 0, 0);
        for _ in 0..20 {
            let sigma = Permutation::random(3, &mut rng);
            let walk = walk_permutation(&backend, &sigma, 1, &mut rng).unwrap();
            assert_eq!(walk.previous[0], 0.0);
            for pos in 1..3 {
                assert_eq!(walk.previous[pos].to_bits(), walk.estimates[pos - 1].to_bits());
            }
            assert_eq!(walk.estimates[2], m.var_y());
            assert_eq!(walk.evaluations, 3 * 2);
            let total: f64 = walk.increments.iter().sum();
            assert!((total - m.var_y()).abs() < 1e-12);
        }
    }

    #[test]
    fn random_permutation_on_correlated_triple() {
        let m = fixture3();
        let truth = m.theoretical_shapley().unwrap();
        let backend = ExactBackend::double_mc(&m, &m, m.known_moments().unwrap()).unwrap();
        let r = run_random_permutation_procedure(&backend, 10_000, 1, 21, true).unwrap();
        assert!(close(&r.effects, &truth, 0.05), "{:?} vs {truth:?}", r.effects);
    }

    #[test]
    fn exact_permutation_on_correlated_triple() {
        let m = fixture3();
        let truth = m.theoretical_shapley().unwrap();
        let backend = ExactBackend::double_mc(&m, &m, m.known_moments().unwrap()).unwrap();
        let r = run_exact_permutation_procedure(&backend, 500, 8, true).unwrap();
        assert_eq!(r.permutations, Some(6));
        assert!(close(&r.effects, &truth, 0.05), "{:?} vs {truth:?}", r.effects);
    }

    #[test]
    fn exact_permutation_pair_cost() {
        let m = independent2();
        let backend = ExactBackend::double_mc(&m, &m, m.known_moments().unwrap()).unwrap();
        let r = run_exact_permutation_procedure(&backend, 1, 0, false).unwrap();
        assert_eq!(r.permutations, Some(2));
        assert_eq!(r.realized_cost, 2 * 3);
        assert_eq!(r.evaluations, 2 * 3);
    }

    #[test]
    fn exact_inputs_reproduce_the_subset_formula() {
        let m = fixture3();
        for kind in [
            ElementKind::VarianceOfConditionalExpectation,
            ElementKind::ExpectationOfConditionalVariance,
        ] {
            let table = m.table(kind).unwrap();
            let want = shapley_from_subsets(&table).unwrap();
            let backend = TableBackend(table);
            let got = run_exact_permutation_procedure(&backend, 1, 0, true).unwrap();
            assert!(close(&got.effects, &want, 1e-14));
            let got = run_subset_procedure(&backend, 100, 0, true).unwrap();
            assert_eq!(got.effects, want);
        }
    }

    #[test]
    fn exact_permutation_refuses_large_dimensions() {
        let p = 9;
        let m = LinearGaussianModel::new(vec![1.0; p], vec![0.0; p], DMatrix::identity(p, p)).unwrap();
        let backend = ExactBackend::double_mc(&m, &m, m.known_moments().unwrap()).unwrap();
        match run_exact_permutation_procedure(&backend, 1, 0, false) {
            Err(Error::TooManyPermutations { permutations, evaluations, .. }) => {
                assert_eq!(permutations, 362_880);
                assert_eq!(evaluations, 362_880 * 3 * 8);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_permutations_is_an_error() {
        let m = independent2();
        let backend = ExactBackend::double_mc(&m, &m, m.known_moments().unwrap()).unwrap();
        assert!(run_random_permutation_procedure(&backend, 0, 1, 0, false).is_err());
    }

    #[test]
    fn parallel_and_sequential_runs_agree() {
        let m = fixture3();
        let backend = ExactBackend::pick_freeze(&m, &m, m.known_moments().unwrap()).unwrap();
        let a = run_subset_procedure(&backend, 3000, 4, true).unwrap();
        let b = run_subset_procedure(&backend, 3000, 4, false).unwrap();
        assert_eq!(a.effects, b.effects);
        let a = run_random_permutation_procedure(&backend, 300, 1, 4, true).unwrap();
        let b = run_random_permutation_procedure(&backend, 300, 1, 4, false).unwrap();
        assert_eq!(a.effects, b.effects);
    }

    #[test]
    fn pilot_moments_when_the_model_has_none() {
        let m = independent2();
        let f = FnModel::new(2, |x: &[f64]| x[0] + x[1]);
        let moments = resolve_moments(&f, &m, 20_000, 3).unwrap();
        assert_eq!(moments.cost, 20_000);
        assert!((moments.var - 2.0).abs() < 0.1);
        let known = resolve_moments(&m, &m, 20_000, 3).unwrap();
        assert_eq!(known.cost, 0);
        assert_eq!(known.var, 2.0);
    }
}
