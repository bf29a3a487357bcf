//! Shapley effects for models with dependent inputs.
//!
//! Conditional elements `W_u` (either `V_u = Var(E(Y|X_u))` or
//! `E_u = E(Var(Y|X_{-u}))`) are estimated per subset, by exact conditional
//! sampling or by nearest neighbours in an observed sample, and aggregated
//! into Shapley effects by the subset or the random-permutation procedure.

pub mod allocation;
pub mod error;
pub mod exact;
pub mod knn;
pub mod model;
pub mod oracle;
pub mod par;
pub mod permutation;
pub mod procedure;
pub mod rng;
pub mod shapley;
pub mod subset;
pub mod table;

pub use allocation::{allocate_optimal_given_variances, allocate_subset_budget, AllocationPlan};
pub use error::{Error, Result};
pub use exact::{estimate_eu_double_mc, estimate_moments, estimate_vu_pick_freeze, Estimate};
pub use knn::{ColumnKind, DataSample, GivenDataBackend, Subsampling, Variant};
pub use model::{ConditionalSampler, CountingModel, EvalBudget, FnModel, InputModel, Moments};
pub use oracle::LinearGaussianModel;
pub use permutation::Permutation;
pub use procedure::{
    run_exact_permutation_procedure, run_procedure, run_random_permutation_procedure,
    run_subset_procedure, ConditionalElementEstimator, EstimatorKind, ExactBackend, Procedure,
    ProcedureConfig, ShapleyReport,
};
pub use shapley::{
    convert_table, shapley_from_permutations, shapley_from_subsets, sobol_indices, PermutationSet,
};
pub use subset::SubsetIndex;
pub use table::{ConditionalElementTable, ElementKind};
