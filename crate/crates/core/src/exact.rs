//! Conditional-element estimators for the case where the input distribution
//! can be sampled exactly, conditionals included.
//!
//! Both estimators are plain Monte-Carlo averages of i.i.d. terms and are
//! unbiased (the Pick-and-Freeze one given the exact `E(Y)`).

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConditionalSampler, InputModel, Moments};
use crate::subset::SubsetIndex;

/// Default inner sample size of the double Monte-Carlo estimator.
pub const DEFAULT_INNER_SIZE: usize = 3;

/// Default number of evaluations used to estimate `E(Y)` and `Var(Y)`.
pub const DEFAULT_PILOT_SIZE: u64 = 10_000;

const CHUNK: usize = 1024;

/// One estimate of a conditional element and the model evaluations it used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub evaluations: u64,
}

pub(crate) fn check_proper(u: SubsetIndex, p: usize) -> Result<()> {
    if !u.is_proper(p) {
        return Err(Error::InvalidArgument(format!(
            "subset {u} must be nonempty and proper in dimension {p}"
        )));
    }
    Ok(())
}

fn check_dims(model: &dyn InputModel, sampler: &dyn ConditionalSampler) -> Result<usize> {
    let p = model.dim();
    if sampler.dim() != p {
        return Err(Error::InvalidArgument(format!(
            "model has dimension {p} but sampler has {}",
            sampler.dim()
        )));
    }
    Ok(p)
}

/// Unbiased sample variance (divisor `n - 1`).
pub(crate) fn sample_variance(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (n - 1.0)
}

/// Double Monte-Carlo estimate of `E_u = E(Var(Y | X_{-u}))`: `n_u` outer
/// draws of `X_{-u}`, each followed by `n_inner` conditional draws of `X_u`.
/// Costs exactly `n_inner * n_u` evaluations.
pub fn estimate_eu_double_mc(
    model: &dyn InputModel,
    sampler: &dyn ConditionalSampler,
    u: SubsetIndex,
    n_u: u64,
    n_inner: usize,
    rng: &mut dyn RngCore,
) -> Result<Estimate> {
    let p = check_dims(model, sampler)?;
    check_proper(u, p)?;
    if n_inner < 2 {
        return Err(Error::DegenerateVariance(n_inner));
    }
    if n_u == 0 {
        return Err(Error::InvalidArgument("accuracy N_u must be positive".into()));
    }
    let given = u.complement(p);
    let mut outer = vec![0.0; p];
    let mut total = 0.0;
    let mut remaining = n_u as usize;
    while remaining > 0 {
        let m = remaining.min(CHUNK);
        let mut points = Vec::with_capacity(m * n_inner * p);
        for _ in 0..m {
            sampler.sample_joint(&mut outer, rng)?;
            for _ in 0..n_inner {
                let start = points.len();
                points.extend_from_slice(&outer);
                sampler.sample_conditional(given, &mut points[start..], rng)?;
            }
        }
        let mut ys = vec![0.0; m * n_inner];
        model.evaluate_batch(&points, &mut ys)?;
        total += ys.chunks_exact(n_inner).map(sample_variance).sum::<f64>();
        remaining -= m;
    }
    Ok(Estimate {
        value: total / n_u as f64,
        evaluations: n_u * n_inner as u64,
    })
}

/// Pick-and-Freeze estimate of `V_u = Var(E(Y | X_u))`: mean of
/// `f(X_u, X_{-u}^1) f(X_u, X_{-u}^2)` minus `mean_y²`, with the two
/// complements drawn independently given `X_u`. Costs exactly `2 n_u`
/// evaluations.
pub fn estimate_vu_pick_freeze(
    model: &dyn InputModel,
    sampler: &dyn ConditionalSampler,
    u: SubsetIndex,
    n_u: u64,
    mean_y: f64,
    rng: &mut dyn RngCore,
) -> Result<Estimate> {
    let p = check_dims(model, sampler)?;
    check_proper(u, p)?;
    if n_u == 0 {
        return Err(Error::InvalidArgument("accuracy N_u must be positive".into()));
    }
    let mut base = vec![0.0; p];
    let mut total = 0.0;
    let mut remaining = n_u as usize;
    while remaining > 0 {
        let m = remaining.min(CHUNK);
        let mut points = Vec::with_capacity(m * 2 * p);
        for _ in 0..m {
            sampler.sample_joint(&mut base, rng)?;
            for _ in 0..2 {
                let start = points.len();
                points.extend_from_slice(&base);
                sampler.sample_conditional(u, &mut points[start..], rng)?;
            }
        }
        let mut ys = vec![0.0; 2 * m];
        model.evaluate_batch(&points, &mut ys)?;
        total += ys.chunks_exact(2).map(|pair| pair[0] * pair[1]).sum::<f64>();
        remaining -= m;
    }
    Ok(Estimate {
        value: total / n_u as f64 - mean_y * mean_y,
        evaluations: 2 * n_u,
    })
}

/// Empirical mean and unbiased variance of `f(X)` over `n` joint draws.
pub fn estimate_moments(
    model: &dyn InputModel,
    sampler: &dyn ConditionalSampler,
    n: u64,
    rng: &mut dyn RngCore,
) -> Result<Moments> {
    let p = check_dims(model, sampler)?;
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "moment estimation needs at least 2 draws, got {n}"
        )));
    }
    let mut ys = Vec::with_capacity(n as usize);
    let mut x = vec![0.0; p];
    let mut remaining = n as usize;
    while remaining > 0 {
        let m = remaining.min(CHUNK);
        let mut points = Vec::with_capacity(m * p);
        for _ in 0..m {
            sampler.sample_joint(&mut x, rng)?;
            points.extend_from_slice(&x);
        }
        let start = ys.len();
        ys.resize(start + m, 0.0);
        model.evaluate_batch(&points, &mut ys[start..])?;
        remaining -= m;
    }
    let mean = ys.iter().sum::<f64>() / n as f64;
    Ok(Moments {
        mean,
        var: sample_variance(&ys),
        cost: n,
    })
}
