//! Given-data estimation: conditional draws are replaced by nearest
//! neighbours in an observed i.i.d. sample of the inputs.

mod estimators;
mod index;

pub use estimators::{
    draw_anchors, estimate_eu_mc_knn, estimate_eu_mc_mix, estimate_vu_pf_knn, estimate_vu_pf_mix,
    explained_variance_ratio, GivenDataBackend, Subsampling, Variant,
};
pub use index::{build_knn_index, KnnIndex, LEAF_SIZE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::sample_variance;
use crate::model::Moments;
use crate::subset::check_dim;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    /// Real-valued; distance `|a - b|` after scaling.
    Continuous,
    /// Category codes; distance 0 when equal, 1 otherwise.
    Categorical,
}

/// Affine map `(x - shift) / scale` applied to a continuous column before
/// distances are taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub shift: f64,
    pub scale: f64,
}

impl Scaling {
    pub const IDENTITY: Scaling = Scaling { shift: 0.0, scale: 1.0 };
}

/// `N` observed input rows, optionally with the model output of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSample {
    p: usize,
    rows: Vec<f64>,
    kinds: Vec<ColumnKind>,
    names: Vec<String>,
    /// Label of each category code, for categorical columns read from text.
    categories: Vec<Option<Vec<String>>>,
    outputs: Option<Vec<f64>>,
    output_name: Option<String>,
    standardize: bool,
    scaling: Vec<Scaling>,
    /// Row-major rows after scaling; what the neighbour search sees.
    scaled: Vec<f64>,
}

impl DataSample {
    /// `rows` holds `N x p` values row-major. Continuous columns are
    /// standardized by their sample standard deviation.
    pub fn new(p: usize, rows: Vec<f64>, kinds: Vec<ColumnKind>) -> Result<Self> {
        check_dim(p)?;
        if kinds.len() != p {
            return Err(Error::InvalidArgument(format!(
                "{} column kinds for {p} columns",
                kinds.len()
            )));
        }
        if rows.is_empty() || !rows.len().is_multiple_of(p) {
            return Err(Error::InvalidArgument(format!(
                "{} values do not form rows of {p} columns",
                rows.len()
            )));
        }
        if let Some(i) = rows.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value in row {}, column {}",
                i / p + 1,
                i % p + 1
            )));
        }
        let mut s = DataSample {
            p,
            rows,
            kinds,
            names: (1..=p).map(|i| format!("x{i}")).collect(),
            categories: vec![None; p],
            outputs: None,
            output_name: None,
            standardize: true,
            scaling: Vec::new(),
            scaled: Vec::new(),
        };
        s.rescale();
        Ok(s)
    }

    /// All-continuous sample.
    pub fn continuous(p: usize, rows: Vec<f64>) -> Result<Self> {
        Self::new(p, rows, vec![ColumnKind::Continuous; p])
    }

    pub fn with_outputs(mut self, outputs: Vec<f64>) -> Result<Self> {
        if outputs.len() != self.n() {
            return Err(Error::InvalidArgument(format!(
                "{} outputs for {} rows",
                outputs.len(),
                self.n()
            )));
        }
        if outputs.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidArgument("non-finite output value".into()));
        }
        self.outputs = Some(outputs);
        Ok(self)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p {
            return Err(Error::InvalidArgument(format!(
                "{} names for {} columns",
                names.len(),
                self.p
            )));
        }
        self.names = names;
        Ok(self)
    }

    pub fn with_output_name(mut self, name: impl Into<String>) -> Self {
        self.output_name = Some(name.into());
        self
    }

    /// Labels of the codes `0, 1, ...` of a categorical column.
    pub fn with_categories(mut self, column: usize, labels: Vec<String>) -> Result<Self> {
        if self.kinds.get(column) != Some(&ColumnKind::Categorical) {
            return Err(Error::InvalidArgument(format!(
                "column {} is not categorical",
                column + 1
            )));
        }
        self.categories[column] = Some(labels);
        Ok(self)
    }

    /// Turns standardization of continuous columns on or off.
    pub fn standardized(mut self, on: bool) -> Self {
        self.standardize = on;
        self.rescale();
        self
    }

    fn rescale(&mut self) {
        let n = self.n();
        self.scaling = (0..self.p)
            .map(|c| {
                if self.kinds[c] == ColumnKind::Categorical || !self.standardize || n < 2 {
                    return Scaling::IDENTITY;
                }
                let col: Vec<f64> = (0..n).map(|r| self.rows[r * self.p + c]).collect();
                let shift = col.iter().sum::<f64>() / n as f64;
                let sd = sample_variance(&col).sqrt();
                Scaling {
                    shift,
                    scale: if sd > 0.0 { sd } else { 1.0 },
                }
            })
            .collect();
        self.scaled = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let s = self.scaling[i % self.p];
                (x - s.shift) / s.scale
            })
            .collect();
    }

    pub fn n(&self) -> usize {
        self.rows.len() / self.p
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub(crate) fn scaled(&self) -> &[f64] {
        &self.scaled
    }

    pub fn kinds(&self) -> &[ColumnKind] {
        &self.kinds
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn categories(&self, column: usize) -> Option<&[String]> {
        self.categories[column].as_deref()
    }

    pub fn outputs(&self) -> Option<&[f64]> {
        self.outputs.as_deref()
    }

    pub fn output_name(&self) -> Option<&str> {
        self.output_name.as_deref()
    }

    pub fn is_standardized(&self) -> bool {
        self.standardize
    }

    pub fn scaling(&self) -> &[Scaling] {
        &self.scaling
    }

    /// Empirical mean and unbiased variance of the output column.
    pub fn output_moments(&self) -> Result<Moments> {
        let ys = self.outputs.as_deref().ok_or(Error::MissingOutputs)?;
        if ys.len() < 2 {
            return Err(Error::InvalidArgument("output moments need two rows".into()));
        }
        Ok(Moments {
            mean: ys.iter().sum::<f64>() / ys.len() as f64,
            var: sample_variance(ys),
            cost: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardizes_continuous_columns_only() {
        let s = DataSample::new(
            2,
            vec![0.0, 1.0, 2.0, 0.0, 4.0, 1.0],
            vec![ColumnKind::Continuous, ColumnKind::Categorical],
        )
        .unwrap();
        assert_eq!(s.n(), 3);
        assert_eq!(s.scaling()[0], Scaling { shift: 2.0, scale: 2.0 });
        assert_eq!(s.scaling()[1], Scaling::IDENTITY);
        assert_eq!(s.scaled()[2], 0.0);
        let raw = s.clone().standardized(false);
        assert_eq!(raw.scaled(), raw.rows());
    }

    #[test]
    fn constant_column_keeps_unit_scale() {
        let s = DataSample::continuous(1, vec![3.0, 3.0, 3.0]).unwrap();
        assert_eq!(s.scaling()[0].scale, 1.0);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(DataSample::continuous(2, vec![1.0, 2.0, 3.0]).is_err());
        assert!(DataSample::continuous(2, vec![]).is_err());
        assert!(DataSample::continuous(1, vec![f64::NAN]).is_err());
        let s = DataSample::continuous(1, vec![1.0, 2.0]).unwrap();
        assert!(s.clone().with_outputs(vec![1.0]).is_err());
        assert!(s.with_categories(0, vec![]).is_err());
    }

    #[test]
    fn output_moments_need_outputs() {
        let s = DataSample::continuous(1, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(s.output_moments(), Err(Error::MissingOutputs)));
        let m = s.with_outputs(vec![1.0, 2.0, 3.0]).unwrap().output_moments().unwrap();
        assert_eq!((m.mean, m.var), (2.0, 1.0));
    }
}
