use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::index::{build_knn_index, KnnIndex};
use super::DataSample;
use crate::error::{Error, Result};
use crate::exact::{check_proper, sample_variance, Estimate};
use crate::model::{InputModel, Moments};
use crate::procedure::{ConditionalElementEstimator, EstimatorKind};
use crate::subset::SubsetIndex;
use crate::table::{check_var, ElementKind};

/// Queries with fewer anchors than this scan linearly instead of building
/// a tree that would not be reused.
const LINEAR_QUERY_LIMIT: u64 = 32;

/// How the anchor rows `s(1), ..., s(N_u)` are drawn from `1..N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subsampling {
    /// Without replacement when `N_u <= N`, with replacement otherwise.
    #[default]
    Auto,
    WithReplacement,
    WithoutReplacement,
}

/// Whether recombined points are evaluated by the model or only stored
/// outputs are used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Mix,
    Knn,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Mix => "mix",
            Variant::Knn => "knn",
        })
    }
}

/// `n_u` anchor rows out of `n`.
pub fn draw_anchors(
    n: usize,
    n_u: u64,
    subsampling: Subsampling,
    rng: &mut dyn RngCore,
) -> Result<Vec<usize>> {
    if n_u == 0 {
        return Err(Error::InvalidArgument("accuracy N_u must be positive".into()));
    }
    let n_u = n_u as usize;
    let without = match subsampling {
        Subsampling::Auto => n_u <= n,
        Subsampling::WithReplacement => false,
        Subsampling::WithoutReplacement => {
            if n_u > n {
                return Err(Error::InvalidArgument(format!(
                    "cannot draw {n_u} anchors without replacement from {n} rows"
                )));
            }
            true
        }
    };
    if without {
        let mut rows: Vec<usize> = (0..n).collect();
        for t in 0..n_u {
            let j = rng.random_range(t..n);
            rows.swap(t, j);
        }
        rows.truncate(n_u);
        Ok(rows)
    } else {
        Ok((0..n_u).map(|_| rng.random_range(0..n)).collect())
    }
}

fn check_sample_size(sample: &DataSample, k: usize) -> Result<()> {
    if sample.n() < k {
        return Err(Error::InvalidArgument(format!(
            "{k} neighbours requested from a sample of {} rows",
            sample.n()
        )));
    }
    Ok(())
}

fn check_model(sample: &DataSample, model: &dyn InputModel) -> Result<()> {
    if model.dim() != sample.p() {
        return Err(Error::InvalidArgument(format!(
            "model has dimension {} but the sample has {} columns",
            model.dim(),
            sample.p()
        )));
    }
    Ok(())
}

/// `x` with the coordinates in `cols` taken from `donor`.
fn recombine(base: &[f64], donor: &[f64], cols: SubsetIndex, out: &mut Vec<f64>) {
    let start = out.len();
    out.extend_from_slice(base);
    for i in cols.iter() {
        out[start + i] = donor[i];
    }
}

#[allow(clippy::too_many_arguments)]
fn eu_mc_mix(
    sample: &DataSample,
    index: &KnnIndex<'_>,
    model: &dyn InputModel,
    u: SubsetIndex,
    n_u: u64,
    n_inner: usize,
    subsampling: Subsampling,
    rng: &mut dyn RngCore,
) -> Result<Estimate> {
    let anchors = draw_anchors(sample.n(), n_u, subsampling, rng)?;
    let mut points = Vec::with_capacity(anchors.len() * n_inner * sample.p());
    for &s in &anchors {
        for k in index.neighbours(s, n_inner, rng)? {
            recombine(sample.row(s), sample.row(k), u, &mut points);
        }
    }
    let mut ys = vec![0.0; anchors.len() * n_inner];
    model.evaluate_batch(&points, &mut ys)?;
    let total: f64 = ys.chunks_exact(n_inner).map(sample_variance).sum();
    Ok(Estimate {
        value: total / n_u as f64,
        evaluations: n_u * n_inner as u64,
    })
}

fn eu_mc_knn(
    sample: &DataSample,
    index: &KnnIndex<'_>,
    n_u: u64,
    n_inner: usize,
    subsampling: Subsampling,
    rng: &mut dyn RngCore,
) -> Result<Estimate> {
    let ys = sample.outputs().ok_or(Error::MissingOutputs)?;
    let anchors = draw_anchors(sample.n(), n_u, subsampling, rng)?;
    let mut total = 0.0;
    let mut buf = Vec::with_capacity(n_inner);
    for &s in &anchors {
        buf.clear();
        buf.extend(index.neighbours(s, n_inner, rng)?.into_iter().map(|k| ys[k]));
        total += sample_variance(&buf);
    }
    Ok(Estimate {
        value: total / n_u as f64,
        evaluations: 0,
    })
}

#[allow(clippy::too_many_arguments)]
fn vu_pf_mix(
    sample: &DataSample,
    index: &KnnIndex<'_>,
    model: &dyn InputModel,
    u: SubsetIndex,
    n_u: u64,
    subsampling: Subsampling,
    mean_y: f64,
    rng: &mut dyn RngCore,
) -> Result<Estimate> {
    let anchors = draw_anchors(sample.n(), n_u, subsampling, rng)?;
    let stored = sample.outputs();
    let per = if stored.is_some() { 1 } else { 2 };
    let mut points = Vec::with_capacity(anchors.len() * per * sample.p());
    let mut firsts = Vec::with_capacity(anchors.len());
    for &s in &anchors {
        let nb = index.neighbours(s, 2, rng)?;
        let (k1, k2) = (nb[0], nb[1]);
        match stored {
            Some(ys) => firsts.push(ys[k1]),
            None => points.extend_from_slice(sample.row(k1)),
        }
        recombine(sample.row(k2), sample.row(k1), u, &mut points);
    }
    let mut ys = vec![0.0; anchors.len() * per];
    model.evaluate_batch(&points, &mut ys)?;
    let total: f64 = if stored.is_some() {
        firsts.iter().zip(&ys).map(|(a, b)| a * b).sum()
    } else {
        ys.chunks_exact(2).map(|pair| pair[0] * pair[1]).sum()
    };
    Ok(Estimate {
        value: total / n_u as f64 - mean_y * mean_y,
        evaluations: ys.len() as u64,
    })
}

fn vu_pf_knn(
    sample: &DataSample,
    index: &KnnIndex<'_>,
    n_u: u64,
    subsampling: Subsampling,
    mean_y: f64,
    rng: &mut dyn RngCore,
) -> Result<Estimate> {
    let ys = sample.outputs().ok_or(Error::MissingOutputs)?;
    let anchors = draw_anchors(sample.n(), n_u, subsampling, rng)?;
    let mut total = 0.0;
    for &s in &anchors {
        let nb = index.neighbours(s, 2, rng)?;
        total += ys[nb[0]] * ys[nb[1]];
    }
    Ok(Estimate {
        value: total / n_u as f64 - mean_y * mean_y,
        evaluations: 0,
    })
}

/// Double Monte-Carlo estimate of `E_u` from a sample: neighbours of each
/// anchor in the `-u` columns donate their `u` coordinates, and the model is
/// evaluated at the recombined points. Costs `n_inner * n_u` evaluations.
#[allow(clippy::too_many_arguments)]
pub fn estimate_eu_mc_mix(
    sample: &DataSample,
    model: &dyn InputModel,
    u: SubsetIndex,
    n_u: u64,
    n_inner: usize,
    subsampling: Subsampling,
    rng: &mut dyn RngCore,
) -> Result<Estimate> {
    check_proper(u, sample.p())?;
    check_model(sample, model)?;
    if n_inner < 2 {
        return Err(Error::DegenerateVariance(n_inner));
    }
    check_sample_size(sample, n_inner)?;
    let index = build_knn_index(sample, u.complement(sample.p()))?;
    eu_mc_mix(sample, &index, model, u, n_u, n_inner, subsampling, rng)
}

/// Like [`estimate_eu_mc_mix`] but the variance is taken over the stored
/// outputs of the neighbours; no model evaluations.
pub fn estimate_eu_mc_knn(
    sample: &DataSample,
    u: SubsetIndex,
    n_u: u64,
    n_inner: usize,
    subsampling: Subsampling,
    rng: &mut dyn RngCore,
) -> Result<Estimate> {
    check_proper(u, sample.p())?;
    if sample.outputs().is_none() {
        return Err(Error::MissingOutputs);
    }
    if n_inner < 2 {
        return Err(Error::DegenerateVariance(n_inner));
    }
    check_sample_size(sample, n_inner)?;
    let index = build_knn_index(sample, u.complement(sample.p()))?;
    eu_mc_knn(sample, &index, n_u, n_inner, subsampling, rng)
}

/// Pick-and-Freeze estimate of `V_u` from a sample: with `k1, k2` the two
/// nearest rows to an anchor in the `u` columns, averages
/// `f(X^{k1}) f(X_u^{k1}, X_{-u}^{k2})` and subtracts `mean_y²`. The first
/// factor is read from the stored outputs when present, so the cost is
/// `n_u` or `2 n_u` evaluations.
pub fn estimate_vu_pf_mix(
    sample: &DataSample,
    model: &dyn InputModel,
    u: SubsetIndex,
    n_u: u64,
    subsampling: Subsampling,
    mean_y: f64,
    rng: &mut dyn RngCore,
) -> Result<Estimate> {
    check_proper(u, sample.p())?;
    check_model(sample, model)?;
    check_sample_size(sample, 2)?;
    let index = build_knn_index(sample, u)?;
    vu_pf_mix(sample, &index, model, u, n_u, subsampling, mean_y, rng)
}

/// Pick-and-Freeze from stored outputs only: mean of `y_{k1} y_{k2}` minus
/// `mean_y²`.
pub fn estimate_vu_pf_knn(
    sample: &DataSample,
    u: SubsetIndex,
    n_u: u64,
    subsampling: Subsampling,
    mean_y: f64,
    rng: &mut dyn RngCore,
) -> Result<Estimate> {
    check_proper(u, sample.p())?;
    if sample.outputs().is_none() {
        return Err(Error::MissingOutputs);
    }
    check_sample_size(sample, 2)?;
    let index = build_knn_index(sample, u)?;
    vu_pf_knn(sample, &index, n_u, subsampling, mean_y, rng)
}

/// `1 - Ê_∅ / Var(Y)`, where `Ê_∅` is the knn double Monte-Carlo estimate
/// with neighbours taken in all columns. Close to 1 when the output is a
/// deterministic function of the inputs. Not clipped to `[0, 1]`.
pub fn explained_variance_ratio(
    sample: &DataSample,
    n_anchor: u64,
    n_inner: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let var_y = sample.output_moments()?.var;
    check_var(var_y)?;
    if n_inner < 2 {
        return Err(Error::DegenerateVariance(n_inner));
    }
    check_sample_size(sample, n_inner)?;
    let index = build_knn_index(sample, SubsetIndex::full(sample.p()))?;
    let e = eu_mc_knn(sample, &index, n_anchor, n_inner, Subsampling::Auto, rng)?;
    Ok(1.0 - e.value / var_y)
}

/// Given-data estimators behind the procedure interface, with neighbour
/// indices built once per column set and shared across calls.
pub struct GivenDataBackend<'a> {
    sample: &'a DataSample,
    model: Option<&'a dyn InputModel>,
    estimator: EstimatorKind,
    variant: Variant,
    n_inner: usize,
    subsampling: Subsampling,
    moments: Moments,
    indices: RwLock<HashMap<u32, Arc<KnnIndex<'a>>>>,
}

impl<'a> GivenDataBackend<'a> {
    /// The mix variant needs `model`; the knn variant needs stored outputs.
    /// Output moments come from the stored outputs, or from evaluating the
    /// model on every sample row when there are none (counted as setup cost).
    pub fn new(
        sample: &'a DataSample,
        model: Option<&'a dyn InputModel>,
        estimator: EstimatorKind,
        variant: Variant,
        n_inner: usize,
    ) -> Result<Self> {
        if let Some(m) = model {
            check_model(sample, m)?;
        }
        if variant == Variant::Mix && model.is_none() {
            return Err(Error::MissingModel);
        }
        if variant == Variant::Knn && sample.outputs().is_none() {
            return Err(Error::MissingOutputs);
        }
        let needed = match estimator {
            EstimatorKind::DoubleMc => {
                if n_inner < 2 {
                    return Err(Error::DegenerateVariance(n_inner));
                }
                n_inner
            }
            EstimatorKind::PickFreeze => 2,
        };
        check_sample_size(sample, needed)?;
        let moments = match (sample.outputs(), model) {
            (Some(_), _) => sample.output_moments()?,
            (None, Some(m)) => {
                let mut ys = vec![0.0; sample.n()];
                m.evaluate_batch(sample.rows(), &mut ys)?;
                if ys.len() < 2 {
                    return Err(Error::InvalidArgument("output moments need two rows".into()));
                }
                Moments {
                    mean: ys.iter().sum::<f64>() / ys.len() as f64,
                    var: sample_variance(&ys),
                    cost: ys.len() as u64,
                }
            }
            (None, None) => return Err(Error::MissingOutputs),
        };
        check_var(moments.var)?;
        Ok(GivenDataBackend {
            sample,
            model,
            estimator,
            variant,
            n_inner,
            subsampling: Subsampling::Auto,
            moments,
            indices: RwLock::default(),
        })
    }

    pub fn with_subsampling(mut self, subsampling: Subsampling) -> Self {
        self.subsampling = subsampling;
        self
    }

    pub fn moments(&self) -> Moments {
        self.moments
    }

    fn index(&self, v: SubsetIndex, n_u: u64) -> Result<Arc<KnnIndex<'a>>> {
        if let Some(i) = self.indices.read().expect("index cache").get(&v.bits()) {
            return Ok(Arc::clone(i));
        }
        if n_u < LINEAR_QUERY_LIMIT {
            return Ok(Arc::new(KnnIndex::linear(self.sample, v)?));
        }
        let built = Arc::new(build_knn_index(self.sample, v)?);
        let mut cache = self.indices.write().expect("index cache");
        Ok(Arc::clone(cache.entry(v.bits()).or_insert(built)))
    }
}

impl ConditionalElementEstimator for GivenDataBackend<'_> {
    fn dim(&self) -> usize {
        self.sample.p()
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
        format!("{}-{}", self.estimator, self.variant)
    }

    fn estimate(&self, u: SubsetIndex, n_u: u64, rng: &mut dyn RngCore) -> Result<Estimate> {
        let p = self.sample.p();
        check_proper(u, p)?;
        let (s, sub, mean) = (self.sample, self.subsampling, self.moments.mean);
        match (self.estimator, self.variant) {
            (EstimatorKind::DoubleMc, Variant::Mix) => {
                let index = self.index(u.complement(p), n_u)?;
                let model = self.model.ok_or(Error::MissingModel)?;
                eu_mc_mix(s, &index, model, u, n_u, self.n_inner, sub, rng)
            }
            (EstimatorKind::DoubleMc, Variant::Knn) => {
                let index = self.index(u.complement(p), n_u)?;
                eu_mc_knn(s, &index, n_u, self.n_inner, sub, rng)
            }
            (EstimatorKind::PickFreeze, Variant::Mix) => {
                let index = self.index(u, n_u)?;
                let model = self.model.ok_or(Error::MissingModel)?;
                vu_pf_mix(s, &index, model, u, n_u, sub, mean, rng)
            }
            (EstimatorKind::PickFreeze, Variant::Knn) => {
                let index = self.index(u, n_u)?;
                vu_pf_knn(s, &index, n_u, sub, mean, rng)
            }
        }
    }

    fn parallel_safe(&self) -> bool {
        self.model.is_none_or(|m| m.concurrent())
    }

    fn setup_cost(&self) -> u64 {
        self.moments.cost
    }
}
