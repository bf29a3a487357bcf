//! Exact aggregation of a conditional-element table into Shapley effects.
//!
//! Both formulas are linear in the table and normalized by `Var(Y)`. Neither
//! clips negative effects: small negative values are estimation noise and
//! are left for the reporting layer to flag.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::permutation::Permutation;
use crate::subset::{Binomials, SubsetIndex};
use crate::table::{check_var, ConditionalElementTable, ElementKind};

/// Largest `p` for which [`PermutationSet::All`] is enumerated.
pub const MAX_ENUMERATED_DIM: usize = 10;

/// Shapley effects through the sum over subsets `u ⊆ -i`:
/// `η_i = (1 / (p Var(Y))) Σ_u C(p-1, |u|)^{-1} (W_{u∪{i}} - W_u)`.
pub fn shapley_from_subsets(table: &ConditionalElementTable) -> Result<Vec<f64>> {
    check_var(table.var_y())?;
    let w = table.dense_values()?;
    let p = table.p();
    let binom = Binomials::new(p);
    let weights: Vec<f64> = (0..p).map(|k| 1.0 / binom.get(p - 1, k) as f64).collect();
    let norm = p as f64 * table.var_y();
    let effects = (0..p)
        .map(|i| {
            let bit = 1usize << i;
            let mut acc = 0.0;
            for u in 0..w.len() {
                if u & bit == 0 {
                    let k = (u as u32).count_ones() as usize;
                    acc += weights[k] * (w[u | bit] - w[u]);
                }
            }
            acc / norm
        })
        .collect();
    Ok(effects)
}

/// The permutations to average over in [`shapley_from_permutations`].
#[derive(Debug, Clone, Copy)]
pub enum PermutationSet<'a> {
    /// All `p!` orderings.
    All,
    List(&'a [Permutation]),
}

/// Shapley effects as the average of `W_{P_i(σ)∪{i}} - W_{P_i(σ)}` over
/// permutations. With [`PermutationSet::All`] this equals
/// [`shapley_from_subsets`].
pub fn shapley_from_permutations(
    table: &ConditionalElementTable,
    perms: PermutationSet<'_>,
) -> Result<Vec<f64>> {
    check_var(table.var_y())?;
    let w = table.dense_values()?;
    let p = table.p();
    let mut sums = vec![0.0; p];
    let mut count = 0u64;
    let mut walk = |order: &[usize]| {
        let mut prefix = 0usize;
        for &i in order {
            let next = prefix | (1 << i);
            sums[i] += w[next] - w[prefix];
            prefix = next;
        }
        count += 1;
    };
    match perms {
        PermutationSet::All => {
            if p > MAX_ENUMERATED_DIM {
                return Err(Error::InvalidArgument(format!(
                    "enumerating all permutations is limited to p <= {MAX_ENUMERATED_DIM}"
                )));
            }
            for s in Permutation::all(p) {
                walk(s.order());
            }
        }
        PermutationSet::List(list) => {
            if list.is_empty() {
                return Err(Error::InvalidArgument("empty permutation list".into()));
            }
            for s in list {
                if s.len() != p {
                    return Err(Error::InvalidArgument(format!(
                        "permutation of length {} for dimension {p}",
                        s.len()
                    )));
                }
                walk(s.order());
            }
        }
    }
    let norm = count as f64 * table.var_y();
    Ok(sums.into_iter().map(|s| s / norm).collect())
}

/// Sobol indices of every group, indexed by subset mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolIndices {
    /// `S_u = (1/Var(Y)) Σ_{v⊆u} (-1)^{|u|-|v|} V_v`.
    pub interaction: Vec<f64>,
    /// `S_u^{cl} = V_u / Var(Y)`.
    pub closed: Vec<f64>,
}

impl SobolIndices {
    pub fn interaction(&self, u: SubsetIndex) -> f64 {
        self.interaction[u.index()]
    }

    pub fn closed(&self, u: SubsetIndex) -> f64 {
        self.closed[u.index()]
    }
}

/// Sobol indices from a `V` table. An `E` table is converted first only when
/// `convert` is set.
pub fn sobol_indices(table: &ConditionalElementTable, convert: bool) -> Result<SobolIndices> {
    let converted;
    let table = match table.kind() {
        ElementKind::VarianceOfConditionalExpectation => table,
        ElementKind::ExpectationOfConditionalVariance if convert => {
            converted = table.convert()?;
            &converted
        }
        ElementKind::ExpectationOfConditionalVariance => {
            return Err(Error::KindMismatch {
                expected: "V",
                found: "E",
            })
        }
    };
    check_var(table.var_y())?;
    let var_y = table.var_y();
    let closed: Vec<f64> = table.dense_values()?.into_iter().map(|v| v / var_y).collect();
    // Möbius inversion over the subset lattice, one coordinate at a time.
    let mut interaction = closed.clone();
    for i in 0..table.p() {
        let bit = 1usize << i;
        for u in 0..interaction.len() {
            if u & bit != 0 {
                interaction[u] -= interaction[u ^ bit];
            }
        }
    }
    Ok(SobolIndices {
        interaction,
        closed,
    })
}

/// Converts between `V` and `E` tables (`V_u = Var(Y) - E_{-u}`).
pub fn convert_table(table: &ConditionalElementTable) -> Result<ConditionalElementTable> {
    table.convert()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::ElementKind::*;

    fn table2(v1: f64, v2: f64) -> ConditionalElementTable {
        let mut t = ConditionalElementTable::new(2, VarianceOfConditionalExpectation, 1.0).unwrap();
        t.set(SubsetIndex::singleton(0), v1, 1).unwrap();
        t.set(SubsetIndex::singleton(1), v2, 1).unwrap();
        t
    }

    #[test]
    fn symmetric_pair_splits_evenly() {
        let eta = shapley_from_subsets(&table2(0.5, 0.5)).unwrap();
        assert_eq!(eta, vec![0.5, 0.5]);
    }

    #[test]
    fn asymmetric_pair_by_hand() {
        // η_1 = ½[(0.3 - 0) + (1 - 0.7)] = 0.3
        let eta = shapley_from_subsets(&table2(0.3, 0.7)).unwrap();
        assert!((eta[0] - 0.3).abs() < 1e-15);
        assert!((eta[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn single_input_gets_everything() {
        let t = ConditionalElementTable::new(1, ExpectationOfConditionalVariance, 4.0).unwrap();
        assert_eq!(shapley_from_permutations(&t, PermutationSet::All).unwrap(), vec![1.0]);
        assert_eq!(shapley_from_subsets(&t).unwrap(), vec![1.0]);
    }

    #[test]
    fn single_permutation_is_a_telescoping_chain() {
        let t = ConditionalElementTable::from_fn(3, VarianceOfConditionalExpectation, 2.0, |u| {
            0.1 + 0.2 * u.bits() as f64
        })
        .unwrap();
        let perm = [Permutation::identity(3)];
        let eta = shapley_from_permutations(&t, PermutationSet::List(&perm)).unwrap();
        let w = |bits: u32| t.get(SubsetIndex::from_bits(bits)).unwrap();
        assert_eq!(eta[0], (w(0b001) - 0.0) / 2.0);
        assert_eq!(eta[1], (w(0b011) - w(0b001)) / 2.0);
        assert_eq!(eta[2], (w(0b111) - w(0b011)) / 2.0);
    }

    #[test]
    fn empty_permutation_list_is_rejected() {
        let t = table2(0.3, 0.7);
        assert!(matches!(
            shapley_from_permutations(&t, PermutationSet::List(&[])),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn incomplete_table_is_rejected() {
        let mut t = ConditionalElementTable::new(2, VarianceOfConditionalExpectation, 1.0).unwrap();
        t.set(SubsetIndex::singleton(0), 0.2, 1).unwrap();
        assert!(matches!(
            shapley_from_subsets(&t),
            Err(Error::IncompleteTable(_))
        ));
        assert!(matches!(
            shapley_from_permutations(&t, PermutationSet::All),
            Err(Error::IncompleteTable(_))
        ));
    }

    #[test]
    fn sobol_singletons_and_empty_set() {
        let s = sobol_indices(&table2(0.3, 0.7), false).unwrap();
        assert_eq!(s.interaction(SubsetIndex::EMPTY), 0.0);
        assert_eq!(s.interaction(SubsetIndex::singleton(0)), 0.3);
        assert_eq!(s.closed(SubsetIndex::singleton(0)), 0.3);
        // S_12 = 1 - 0.7 - 0.3 + 0
        assert!(s.interaction(SubsetIndex::full(2)).abs() < 1e-15);
    }

    #[test]
    fn sobol_rejects_e_tables_without_conversion() {
        let e = table2(0.3, 0.7).convert().unwrap();
        assert!(matches!(
            sobol_indices(&e, false),
            Err(Error::KindMismatch { .. })
        ));
        let s = sobol_indices(&e, true).unwrap();
        assert!((s.closed(SubsetIndex::singleton(1)) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn mobius_matches_direct_alternating_sum() {
        let p = 5;
        let t = ConditionalElementTable::from_fn(p, VarianceOfConditionalExpectation, 3.0, |u| {
            ((u.bits() * 37 % 11) as f64) / 5.0
        })
        .unwrap();
        let s = sobol_indices(&t, false).unwrap();
        for u in SubsetIndex::all(p) {
            let direct: f64 = u
                .subsets()
                .map(|v| {
                    let sign = if (u.len() - v.len()) % 2 == 0 { 1.0 } else { -1.0 };
                    sign * t.get(v).unwrap()
                })
                .sum::<f64>()
                / 3.0;
            assert!((s.interaction(u) - direct).abs() < 1e-12, "{u}");
        }
    }
}
