//! Model and sampler abstractions, plus evaluation accounting.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subset::SubsetIndex;

/// A model `Y = f(X)` over `p` inputs.
pub trait InputModel: Sync {
    fn dim(&self) -> usize;

    fn evaluate(&self, x: &[f64]) -> Result<f64>;

    /// Evaluates `out.len()` points stored row-major in `points`.
    fn evaluate_batch(&self, points: &[f64], out: &mut [f64]) -> Result<()> {
        let p = self.dim();
        debug_assert_eq!(points.len(), p * out.len());
        for (x, y) in points.chunks_exact(p).zip(out.iter_mut()) {
            *y = self.evaluate(x)?;
        }
        Ok(())
    }

    /// Whether `evaluate` may be called from several threads at once.
    /// Schedulers run everything sequentially when this is false.
    fn concurrent(&self) -> bool {
        true
    }

    /// Exact `E(Y)` and `Var(Y)`, when the model knows them.
    fn known_moments(&self) -> Option<Moments> {
        None
    }
}

/// Exact conditional sampling of the input vector.
pub trait ConditionalSampler: Sync {
    fn dim(&self) -> usize;

    /// Overwrites the coordinates of `x` outside `given` with a draw of
    /// `X_{-given}` conditionally on `X_given = x_given`. Successive calls are
    /// independent given the conditioning value.
    fn sample_conditional(
        &self,
        given: SubsetIndex,
        x: &mut [f64],
        rng: &mut dyn RngCore,
    ) -> Result<()>;

    fn sample_joint(&self, x: &mut [f64], rng: &mut dyn RngCore) -> Result<()> {
        self.sample_conditional(SubsetIndex::EMPTY, x, rng)
    }
}

/// Output moments and the evaluations spent estimating them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub var: f64,
    pub cost: u64,
}

/// Running count of model evaluations with an optional hard limit.
#[derive(Debug, Default)]
pub struct EvalBudget {
    spent: AtomicU64,
    limit: Option<u64>,
}

impl EvalBudget {
    pub fn unlimited() -> Self {
        EvalBudget::default()
    }

    pub fn with_limit(limit: u64) -> Self {
        EvalBudget {
            spent: AtomicU64::new(0),
            limit: Some(limit),
        }
    }

    pub fn spent(&self) -> u64 {
        self.spent.load(Ordering::SeqCst)
    }

    pub fn limit(&self) -> Option<u64> {
        self.limit
    }

    /// Reserves `n` evaluations, failing without side effects past the limit.
    pub fn charge(&self, n: u64) -> Result<()> {
        match self.limit {
            None => {
                self.spent.fetch_add(n, Ordering::SeqCst);
                Ok(())
            }
            Some(limit) => self
                .spent
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |s| {
                    s.checked_add(n).filter(|&t| t <= limit)
                })
                .map(|_| ())
                .map_err(|spent| Error::BudgetExceeded {
                    spent,
                    requested: n,
                    limit,
                }),
        }
    }
}

/// Wraps a model and charges one evaluation per point to a budget.
pub struct CountingModel<'a> {
    inner: &'a dyn InputModel,
    budget: &'a EvalBudget,
}

impl<'a> CountingModel<'a> {
    pub fn new(inner: &'a dyn InputModel, budget: &'a EvalBudget) -> Self {
        CountingModel { inner, budget }
    }
}

impl InputModel for CountingModel<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.budget.charge(1)?;
        self.inner.evaluate(x)
    }

    fn evaluate_batch(&self, points: &[f64], out: &mut [f64]) -> Result<()> {
        self.budget.charge(out.len() as u64)?;
        self.inner.evaluate_batch(points, out)
    }

    fn concurrent(&self) -> bool {
        self.inner.concurrent()
    }

    fn known_moments(&self) -> Option<Moments> {
        self.inner.known_moments()
    }
}

/// A model backed by a plain function.
pub struct FnModel<F> {
    p: usize,
    f: F,
}

impl<F> FnModel<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    pub fn new(p: usize, f: F) -> Self {
        FnModel { p, f }
    }
}

impl<F> InputModel for FnModel<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.p
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        Ok((self.f)(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_refuses_past_limit_without_spending() {
        let b = EvalBudget::with_limit(10);
        b.charge(6).unwrap();
        assert!(matches!(b.charge(5), Err(Error::BudgetExceeded { spent: 6, .. })));
        assert_eq!(b.spent(), 6);
        b.charge(4).unwrap();
        assert_eq!(b.spent(), 10);
    }

    #[test]
    fn counting_model_counts_each_point() {
        let m = FnModel::new(2, |x: &[f64]| x[0] + x[1]);
        let budget = EvalBudget::unlimited();
        let c = CountingModel::new(&m, &budget);
        assert_eq!(c.evaluate(&[1.0, 2.0]).unwrap(), 3.0);
        let mut out = [0.0; 3];
        c.evaluate_batch(&[1.0, 1.0, 2.0, 2.0, 3.0, 3.0], &mut out).unwrap();
        assert_eq!(out, [2.0, 4.0, 6.0]);
        assert_eq!(budget.spent(), 4);
    }
}
