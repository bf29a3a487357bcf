use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subset::{check_dim, SubsetIndex};

/// Which family of conditional elements a table holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementKind {
    /// `V_u = Var(E(Y | X_u))`.
    #[serde(rename = "V")]
    VarianceOfConditionalExpectation,
    /// `E_u = E(Var(Y | X_{-u}))`.
    #[serde(rename = "E")]
    ExpectationOfConditionalVariance,
}

impl ElementKind {
    pub fn other(self) -> Self {
        match self {
            ElementKind::VarianceOfConditionalExpectation => {
                ElementKind::ExpectationOfConditionalVariance
            }
            ElementKind::ExpectationOfConditionalVariance => {
                ElementKind::VarianceOfConditionalExpectation
            }
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ElementKind::VarianceOfConditionalExpectation => "V",
            ElementKind::ExpectationOfConditionalVariance => "E",
        }
    }
}

/// Estimated conditional elements `W_u` over all `2^p` subsets, with the
/// accuracy `N_u` behind each estimate.
///
/// `W_∅ = 0` and `W_{[1:p]} = Var(Y)` are pinned at construction and cannot
/// be overwritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalElementTable {
    p: usize,
    kind: ElementKind,
    var_y: f64,
    cost_unit: u64,
    values: Vec<Option<f64>>,
    accuracies: Vec<u64>,
}

impl ConditionalElementTable {
    pub fn new(p: usize, kind: ElementKind, var_y: f64) -> Result<Self> {
        check_dim(p)?;
        check_var(var_y)?;
        let n = 1usize << p;
        let mut values = vec![None; n];
        values[0] = Some(0.0);
        values[n - 1] = Some(var_y);
        Ok(ConditionalElementTable {
            p,
            kind,
            var_y,
            cost_unit: 1,
            values,
            accuracies: vec![0; n],
        })
    }

    /// Builds a complete table from a function of the nonempty proper subsets.
    pub fn from_fn(
        p: usize,
        kind: ElementKind,
        var_y: f64,
        mut f: impl FnMut(SubsetIndex) -> f64,
    ) -> Result<Self> {
        let mut table = Self::new(p, kind, var_y)?;
        for u in SubsetIndex::proper(p) {
            table.set(u, f(u), 1)?;
        }
        Ok(table)
    }

    pub fn with_cost_unit(mut self, kappa: u64) -> Self {
        self.cost_unit = kappa;
        self
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn kind(&self) -> ElementKind {
        self.kind
    }

    pub fn var_y(&self) -> f64 {
        self.var_y
    }

    /// Model evaluations per elementary estimate (κ).
    pub fn cost_unit(&self) -> u64 {
        self.cost_unit
    }

    pub fn set(&mut self, u: SubsetIndex, value: f64, accuracy: u64) -> Result<()> {
        if !u.is_proper(self.p) {
            return Err(Error::InvalidArgument(format!(
                "W_{u} is pinned and cannot be set"
            )));
        }
        if accuracy == 0 {
            return Err(Error::InvalidArgument("accuracy must be positive".into()));
        }
        self.values[u.index()] = Some(value);
        self.accuracies[u.index()] = accuracy;
        Ok(())
    }

    pub fn get(&self, u: SubsetIndex) -> Option<f64> {
        self.values.get(u.index()).copied().flatten()
    }

    pub fn value(&self, u: SubsetIndex) -> Result<f64> {
        self.get(u).ok_or(Error::IncompleteTable(u))
    }

    pub fn accuracy(&self, u: SubsetIndex) -> u64 {
        self.accuracies[u.index()]
    }

    /// Fails with the first missing subset, if any.
    pub fn check_complete(&self) -> Result<()> {
        match self.values.iter().position(Option::is_none) {
            Some(i) => Err(Error::IncompleteTable(SubsetIndex::from_bits(i as u32))),
            None => Ok(()),
        }
    }

    /// Dense values indexed by mask; requires a complete table.
    pub fn dense_values(&self) -> Result<Vec<f64>> {
        self.check_complete()?;
        Ok(self.values.iter().map(|v| v.unwrap_or(0.0)).collect())
    }

    /// Total nominal cost `κ Σ_u N_u`.
    pub fn total_cost(&self) -> u64 {
        self.cost_unit * self.accuracies.iter().sum::<u64>()
    }

    /// Switches between `V` and `E` tables using `V_u = Var(Y) - E_{-u}`.
    pub fn convert(&self) -> Result<Self> {
        self.check_complete()?;
        let n = self.values.len();
        let mut values = vec![None; n];
        let mut accuracies = vec![0; n];
        for u in SubsetIndex::all(self.p) {
            let c = u.complement(self.p);
            values[u.index()] = Some(self.var_y - self.values[c.index()].unwrap_or(0.0));
            accuracies[u.index()] = self.accuracies[c.index()];
        }
        // Keep the pinned ends exact rather than `var_y - var_y`.
        values[0] = Some(0.0);
        values[n - 1] = Some(self.var_y);
        Ok(ConditionalElementTable {
            p: self.p,
            kind: self.kind.other(),
            var_y: self.var_y,
            cost_unit: self.cost_unit,
            values,
            accuracies,
        })
    }
}

pub(crate) fn check_var(var_y: f64) -> Result<()> {
    if !(var_y.is_finite() && var_y > 0.0) {
        return Err(Error::InvalidVariance(var_y));
    }
    Ok(())
}
