//! Per-subset accuracies `N_u` for the subset procedure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subset::{check_dim, Binomials, SubsetIndex};

/// Rescaling passes used to bring the realized cost close to the request.
pub const ADJUST_ITERATIONS: usize = 20;

/// Accuracies of every nonempty proper subset and the resulting cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub p: usize,
    pub kappa: u64,
    pub requested: u64,
    /// `N_u` indexed by subset mask; zero at the empty and the full set.
    pub accuracies: Vec<u64>,
    /// `κ Σ_u N_u`.
    pub realized: u64,
    /// `N_u` from the rounding formula applied to the requested budget,
    /// before any rescaling.
    pub formula: Vec<u64>,
    pub formula_realized: u64,
    /// The budget fed to the rounding formula to obtain `accuracies`.
    pub effective_ntot: f64,
    /// The request is below `κ (2^p - 2)`, so `N_u ≥ 1` floors dominate.
    pub floored: bool,
    /// No accuracy vector reaches a cost at or below the request.
    pub forced_over: bool,
}

impl AllocationPlan {
    pub fn accuracy(&self, u: SubsetIndex) -> u64 {
        self.accuracies[u.index()]
    }

    pub fn formula_accuracy(&self, u: SubsetIndex) -> u64 {
        self.formula[u.index()]
    }

    /// Accuracy of subsets of size `k`, `0 < k < p`.
    pub fn accuracy_by_size(&self, k: usize) -> u64 {
        self.accuracies[(1usize << k) - 1]
    }
}

fn check_p(p: usize) -> Result<()> {
    check_dim(p)?;
    if p < 2 {
        return Err(Error::InvalidArgument(format!(
            "the subset procedure needs p >= 2, got {p}"
        )));
    }
    Ok(())
}

fn check_kappa(kappa: u64) -> Result<()> {
    if kappa == 0 {
        return Err(Error::InvalidArgument("cost unit must be positive".into()));
    }
    Ok(())
}

/// `max(1, Round(ntot / (κ C(p,k) (p-1))))` for every size `k` in `1..p`;
/// entry `k` of the result, entry 0 unused.
fn sizes_for(ntot: f64, p: usize, kappa: u64, binom: &Binomials) -> Vec<u64> {
    let mut sizes = vec![0; p];
    for (k, n) in sizes.iter_mut().enumerate().skip(1) {
        let x = ntot / kappa as f64 / binom.get(p, k) as f64 / (p - 1) as f64;
        *n = (x.round() as u64).max(1);
    }
    sizes
}

fn cost_of(sizes: &[u64], p: usize, kappa: u64, binom: &Binomials) -> u64 {
    kappa * (1..p).map(|k| binom.get(p, k) * sizes[k]).sum::<u64>()
}

/// (cost, effective budget, sizes)
type Candidate = (u64, f64, Vec<u64>);

#[derive(Default)]
struct Candidates {
    /// Largest cost not above the request.
    under: Option<Candidate>,
    /// Smallest cost above it.
    over: Option<Candidate>,
}

impl Candidates {
    fn offer(&mut self, requested: u64, c: Candidate) {
        if c.0 <= requested {
            if self.under.as_ref().is_none_or(|b| c.0 > b.0) {
                self.under = Some(c);
            }
        } else if self.over.as_ref().is_none_or(|b| c.0 < b.0) {
            self.over = Some(c);
        }
    }
}

fn expand(sizes: &[u64], p: usize) -> Vec<u64> {
    SubsetIndex::all(p)
        .map(|u| if u.is_proper(p) { sizes[u.len()] } else { 0 })
        .collect()
}

/// Accuracies from the size-symmetric rounding heuristic, with the budget fed
/// to the formula rescaled so the realized cost approaches `ntot`.
///
/// Among the candidates visited, the largest cost not above `ntot` wins. When
/// rescaling never lands at or below the request, a bisection on the budget
/// looks for one; only if even the all-ones floor exceeds `ntot` is the
/// cheapest candidate kept and `forced_over` set.
pub fn allocate_subset_budget(p: usize, kappa: u64, ntot: u64) -> Result<AllocationPlan> {
    check_p(p)?;
    check_kappa(kappa)?;
    let binom = Binomials::new(p);
    let requested = ntot;
    let floor_cost = kappa * ((1u64 << p) - 2);
    let formula = sizes_for(ntot as f64, p, kappa, &binom);
    let formula_realized = cost_of(&formula, p, kappa, &binom);

    let mut best = Candidates::default();
    let consider = |best: &mut Candidates, eff: f64| {
        let sizes = sizes_for(eff, p, kappa, &binom);
        let cost = cost_of(&sizes, p, kappa, &binom);
        best.offer(requested, (cost, eff, sizes));
        cost
    };

    let mut eff = ntot as f64;
    let mut cost = consider(&mut best, eff);
    for _ in 0..ADJUST_ITERATIONS {
        if cost == requested || cost == 0 {
            break;
        }
        let next = eff * requested as f64 / cost as f64;
        if next == eff {
            break;
        }
        eff = next;
        cost = consider(&mut best, eff);
    }

    if best.under.is_none() && floor_cost <= requested {
        // The realized cost is nondecreasing in the effective budget.
        let (mut lo, mut hi) = (0.0, best.over.as_ref().map_or(ntot as f64, |o| o.1));
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if consider(&mut best, mid) <= requested {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }

    let Candidates { under, over } = best;
    let forced_over = under.is_none();
    let (realized, effective_ntot, sizes) = under.or(over).expect("at least one candidate");
    Ok(AllocationPlan {
        p,
        kappa,
        requested,
        accuracies: expand(&sizes, p),
        realized,
        formula: expand(&formula, p),
        formula_realized,
        effective_ntot,
        floored: requested < floor_cost,
        forced_over,
    })
}

/// The variance-optimal relaxed allocation for known per-unit variances of
/// the subset estimators, and its rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalAllocation {
    /// Real-valued `N_u*` by subset mask, summing to `ntot / κ`.
    pub relaxed: Vec<f64>,
    /// `max(1, Round(N_u*))`.
    pub rounded: AllocationPlan,
}

/// `N_u* ∝ sqrt((p-k)! k! (p-k-1)! (k-1)! Var_u)` with `k = |u|`, scaled so
/// that `κ Σ_u N_u* = ntot`. `variances` is indexed by subset mask; its
/// entries at the empty and full set are ignored.
pub fn allocate_optimal_given_variances(
    p: usize,
    kappa: u64,
    ntot: u64,
    variances: &[f64],
) -> Result<OptimalAllocation> {
    check_p(p)?;
    check_kappa(kappa)?;
    if variances.len() != 1 << p {
        return Err(Error::InvalidArgument(format!(
            "expected {} variances, got {}",
            1usize << p,
            variances.len()
        )));
    }
    let fact: Vec<f64> = (0..=p)
        .scan(1.0, |acc, k| {
            if k > 0 {
                *acc *= k as f64;
            }
            Some(*acc)
        })
        .collect();
    let mut weights = vec![0.0; 1 << p];
    for u in SubsetIndex::proper(p) {
        let var = variances[u.index()];
        if !(var > 0.0 && var.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "variance of subset {u} must be positive and finite, got {var}"
            )));
        }
        let k = u.len();
        weights[u.index()] = (fact[p - k] * fact[k] * fact[p - k - 1] * fact[k - 1] * var).sqrt();
    }
    let total: f64 = weights.iter().sum();
    let scale = ntot as f64 / kappa as f64 / total;
    let relaxed: Vec<f64> = weights.iter().map(|w| w * scale).collect();
    let accuracies: Vec<u64> = SubsetIndex::all(p)
        .map(|u| {
            if u.is_proper(p) {
                (relaxed[u.index()].round() as u64).max(1)
            } else {
                0
            }
        })
        .collect();
    let realized = kappa * accuracies.iter().sum::<u64>();
    let floor_cost = kappa * ((1u64 << p) - 2);
    Ok(OptimalAllocation {
        rounded: AllocationPlan {
            p,
            kappa,
            requested: ntot,
            formula: accuracies.clone(),
            formula_realized: realized,
            accuracies,
            realized,
            effective_ntot: ntot as f64,
            floored: ntot < floor_cost,
            forced_over: realized > ntot,
        },
        relaxed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_inputs_small_budget() {
        let plan = allocate_subset_budget(3, 3, 54).unwrap();
        for u in SubsetIndex::proper(3) {
            assert_eq!(plan.accuracy(u), 3);
        }
        assert_eq!(plan.realized, 54);
        assert!(!plan.floored && !plan.forced_over);
    }

    #[test]
    fn ten_inputs_formula_values() {
        let plan = allocate_subset_budget(10, 3, 54_000).unwrap();
        assert_eq!(plan.formula[0b1], 200);
        assert_eq!(plan.formula[0b11111], 8);
        assert!(plan.realized <= 54_000);
        assert!(54_000 - plan.realized <= 3 * 1022);
        let sum: u64 = plan.accuracies.iter().sum();
        assert_eq!(plan.realized, 3 * sum);
    }

    #[test]
    fn two_inputs_symmetric_split() {
        let plan = allocate_subset_budget(2, 2, 8).unwrap();
        assert_eq!(plan.accuracies, vec![0, 2, 2, 0]);
        assert_eq!(plan.realized, 8);
    }

    #[test]
    fn nine_inputs_lands_below_request() {
        let plan = allocate_subset_budget(9, 3, 50_000).unwrap();
        assert!(plan.formula_realized > 50_000);
        assert!(plan.realized < 50_000);
        assert_eq!(plan.realized % 3, 0);
    }

    #[test]
    fn tiny_budget_is_floored_and_forced() {
        let plan = allocate_subset_budget(4, 3, 10).unwrap();
        assert!(plan.floored && plan.forced_over);
        assert!(plan.accuracies.iter().skip(1).take(14).all(|&n| n == 1));
        assert_eq!(plan.realized, 3 * 14);
    }

    #[test]
    fn budget_exactly_at_floor_is_met() {
        let plan = allocate_subset_budget(4, 3, 42).unwrap();
        assert!(!plan.floored && !plan.forced_over);
        assert_eq!(plan.realized, 42);
    }

    #[test]
    fn rejects_single_input() {
        assert!(allocate_subset_budget(1, 3, 100).is_err());
    }

    #[test]
    fn accuracies_depend_only_on_size() {
        let plan = allocate_subset_budget(6, 2, 12_345).unwrap();
        for u in SubsetIndex::proper(6) {
            assert_eq!(plan.accuracy(u), plan.accuracy_by_size(u.len()));
        }
    }

    #[test]
    fn optimal_two_inputs_equal_variances() {
        let opt = allocate_optimal_given_variances(2, 3, 600, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((opt.relaxed[1] - 100.0).abs() < 1e-9);
        assert!((opt.relaxed[2] - 100.0).abs() < 1e-9);
        assert_eq!(opt.rounded.realized, 600);
    }

    #[test]
    fn optimal_sums_to_budget_and_scales_by_root_variance() {
        let p = 4;
        let equal = vec![1.0; 1 << p];
        let mut bumped = equal.clone();
        bumped[0b0101] = 2.0;
        let a = allocate_optimal_given_variances(p, 3, 3000, &equal).unwrap();
        let b = allocate_optimal_given_variances(p, 3, 3000, &bumped).unwrap();
        let total: f64 = a.relaxed.iter().sum();
        assert!((3.0 * total - 3000.0).abs() < 1e-9);
        let ratio = (b.relaxed[0b0101] / b.relaxed[0b0011]) / (a.relaxed[0b0101] / a.relaxed[0b0011]);
        assert!((ratio - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn optimal_equal_variances_closed_form() {
        // With equal variances the factorial weight reduces exactly to
        // C(p,k)^{-1/2} C(p,k-1)^{-1/2} ((p-k)(p-k+1))^{-1/2}, i.e.
        // 1 / (C(p,k) sqrt(k (p-k))) up to a constant.
        for p in 2..=12 {
            let binom = Binomials::new(p);
            let opt = allocate_optimal_given_variances(p, 2, 1_000_000, &vec![1.0; 1 << p]).unwrap();
            let compact = |k: usize| 1.0 / (binom.get(p, k) as f64 * ((k * (p - k)) as f64).sqrt());
            let pascal = |k: usize| {
                ((binom.get(p, k) * binom.get(p, k - 1)) as f64).powf(-0.5)
                    * (((p - k) * (p - k + 1)) as f64).powf(-0.5)
            };
            let by_size = |k: usize| opt.relaxed[(1 << k) - 1];
            for k in 1..p {
                let got = by_size(k) / by_size(1);
                assert!((got / (compact(k) / compact(1)) - 1.0).abs() < 1e-12, "p={p} k={k}");
                assert!((got / (pascal(k) / pascal(1)) - 1.0).abs() < 1e-12, "p={p} k={k}");
            }
        }
    }

    #[test]
    fn optimal_rejects_nonpositive_variance() {
        let mut v = vec![1.0; 8];
        v[3] = 0.0;
        assert!(allocate_optimal_given_variances(3, 3, 100, &v).is_err());
    }
}
