//! Linear model of Gaussian inputs, `Y = βᵀX` with `X ~ N(μ, Γ)`.
//!
//! Conditional variances are closed-form Schur complements, so every `V_u`,
//! `E_u` and Shapley effect is available exactly. The same conditioning
//! algebra drives an exact conditional sampler.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{ConditionalSampler, InputModel, Moments};
use crate::shapley::shapley_from_subsets;
use crate::subset::{check_dim, SubsetIndex};
use crate::table::{check_var, ConditionalElementTable, ElementKind};

/// Relative eigenvalue cutoff of the pseudo-inverse.
const PINV_RTOL: f64 = 1e-10;
/// Relative tolerance on negative eigenvalues before a block is rejected.
const PSD_RTOL: f64 = 1e-8;
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug)]
pub struct LinearGaussianModel {
    beta: DVector<f64>,
    mu: DVector<f64>,
    gamma: DMatrix<f64>,
    var_y: f64,
    factors: RwLock<HashMap<u32, Arc<ConditionalFactor>>>,
}

impl Clone for LinearGaussianModel {
    fn clone(&self) -> Self {
        LinearGaussianModel {
            beta: self.beta.clone(),
            mu: self.mu.clone(),
            gamma: self.gamma.clone(),
            var_y: self.var_y,
            factors: RwLock::default(),
        }
    }
}

/// Precomputed law of `X_t | X_v`: mean `μ_t + K (x_v - μ_v)`, covariance `L Lᵀ`.
#[derive(Debug)]
struct ConditionalFactor {
    given: Vec<usize>,
    target: Vec<usize>,
    /// `|t| x |v|`, row-major.
    gain: Vec<f64>,
    /// `|t| x |t|`, row-major.
    root: Vec<f64>,
}

impl LinearGaussianModel {
    pub fn new(beta: Vec<f64>, mu: Vec<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        let p = beta.len();
        check_dim(p)?;
        if mu.len() != p || gamma.nrows() != p || gamma.ncols() != p {
            return Err(Error::InvalidArgument(format!(
                "inconsistent shapes: beta {p}, mu {}, gamma {}x{}",
                mu.len(),
                gamma.nrows(),
                gamma.ncols()
            )));
        }
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidArgument("covariance has non-finite entries".into()));
        }
        let scale = gamma.amax().max(1.0);
        if (&gamma - gamma.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(Error::InvalidArgument("covariance is not symmetric".into()));
        }
        let beta = DVector::from_vec(beta);
        let var_y = (beta.transpose() * &gamma * &beta)[(0, 0)];
        check_var(var_y)?;
        Ok(LinearGaussianModel {
            beta,
            mu: DVector::from_vec(mu),
            gamma,
            var_y,
            factors: RwLock::default(),
        })
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        self.beta.as_slice()
    }

    pub fn mu(&self) -> &[f64] {
        self.mu.as_slice()
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn var_y(&self) -> f64 {
        self.var_y
    }

    pub fn mean_y(&self) -> f64 {
        self.beta.dot(&self.mu)
    }

    /// `Var(Y | X_u = x_u)`, which does not depend on `x_u`.
    pub fn conditional_variance(&self, u: SubsetIndex) -> Result<f64> {
        let p = self.p();
        if u.is_empty() {
            return Ok(self.var_y);
        }
        let t = u.complement(p);
        if t.is_empty() {
            return Ok(0.0);
        }
        let (given, target) = (u.to_vec(), t.to_vec());
        let pinv = pseudo_inverse(&self.block(&given, &given))?;
        let cross = self.block(&target, &given);
        let schur = self.block(&target, &target) - &cross * pinv * cross.transpose();
        let b = DVector::from_iterator(target.len(), target.iter().map(|&i| self.beta[i]));
        Ok((b.transpose() * schur * b)[(0, 0)].max(0.0))
    }

    /// `V_u = Var(Y) - Var(Y | X_u)`.
    pub fn v(&self, u: SubsetIndex) -> Result<f64> {
        Ok(self.var_y - self.conditional_variance(u)?)
    }

    /// `E_u = Var(Y | X_{-u})`.
    pub fn e(&self, u: SubsetIndex) -> Result<f64> {
        self.conditional_variance(u.complement(self.p()))
    }

    pub fn table(&self, kind: ElementKind) -> Result<ConditionalElementTable> {
        let mut table = ConditionalElementTable::new(self.p(), kind, self.var_y)?;
        for u in SubsetIndex::proper(self.p()) {
            let w = match kind {
                ElementKind::VarianceOfConditionalExpectation => self.v(u)?,
                ElementKind::ExpectationOfConditionalVariance => self.e(u)?,
            };
            table.set(u, w, 1)?;
        }
        Ok(table)
    }

    /// Exact Shapley effects via the `V` table.
    pub fn theoretical_shapley(&self) -> Result<Vec<f64>> {
        shapley_from_subsets(&self.table(ElementKind::VarianceOfConditionalExpectation)?)
    }

    /// `n` draws of `X_target` given `X_given = given_values` (values listed
    /// in increasing index order of `given`).
    pub fn sample_conditional_block(
        &self,
        given: SubsetIndex,
        given_values: &[f64],
        target: SubsetIndex,
        n: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Vec<f64>>> {
        let p = self.p();
        if !target.intersection(given).is_empty() {
            return Err(Error::InvalidArgument(format!(
                "target {target} overlaps conditioning set {given}"
            )));
        }
        if given_values.len() != given.len() || !given.union(target).is_subset_of(SubsetIndex::full(p)) {
            return Err(Error::InvalidArgument("conditioning values do not match".into()));
        }
        let mut x = vec![0.0; p];
        for (i, &v) in given.iter().zip(given_values) {
            x[i] = v;
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            self.sample_conditional(given, &mut x, rng)?;
            out.push(target.iter().map(|i| x[i]).collect());
        }
        Ok(out)
    }

    fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| self.gamma[(rows[r], cols[c])])
    }

    fn factor(&self, given: SubsetIndex) -> Result<Arc<ConditionalFactor>> {
        if let Some(f) = self.factors.read().expect("factor cache").get(&given.bits()) {
            return Ok(Arc::clone(f));
        }
        let f = Arc::new(self.build_factor(given)?);
        self.factors
            .write()
            .expect("factor cache")
            .insert(given.bits(), Arc::clone(&f));
        Ok(f)
    }

    fn build_factor(&self, given: SubsetIndex) -> Result<ConditionalFactor> {
        let p = self.p();
        let (v, t) = (given.to_vec(), given.complement(p).to_vec());
        let cross = self.block(&t, &v);
        let (gain, schur) = if v.is_empty() {
            (DMatrix::zeros(t.len(), 0), self.block(&t, &t))
        } else {
            let gain = &cross * pseudo_inverse(&self.block(&v, &v))?;
            let schur = self.block(&t, &t) - &gain * cross.transpose();
            (gain, schur)
        };
        let root = psd_root(&schur)?;
        Ok(ConditionalFactor {
            given: v,
            target: t,
            gain: row_major(&gain),
            root: row_major(&root),
        })
    }
}

impl InputModel for LinearGaussianModel {
    fn dim(&self) -> usize {
        self.p()
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        Ok(self.beta.iter().zip(x).map(|(b, x)| b * x).sum())
    }

    fn known_moments(&self) -> Option<Moments> {
        Some(Moments {
            mean: self.mean_y(),
            var: self.var_y,
            cost: 0,
        })
    }
}

impl ConditionalSampler for LinearGaussianModel {
    fn dim(&self) -> usize {
        self.p()
    }

    fn sample_conditional(
        &self,
        given: SubsetIndex,
        x: &mut [f64],
        rng: &mut dyn RngCore,
    ) -> Result<()> {
        let f = self.factor(given)?;
        let (nt, nv) = (f.target.len(), f.given.len());
        let mut z = [0.0f64; crate::subset::MAX_DIM];
        for zi in z.iter_mut().take(nt) {
            *zi = rng.sample(StandardNormal);
        }
        let mut dev = [0.0f64; crate::subset::MAX_DIM];
        for (k, &i) in f.given.iter().enumerate() {
            dev[k] = x[i] - self.mu[i];
        }
        for (r, &i) in f.target.iter().enumerate() {
            let mut xi = self.mu[i];
            let g = &f.gain[r * nv..(r + 1) * nv];
            xi += g.iter().zip(&dev[..nv]).map(|(a, b)| a * b).sum::<f64>();
            let l = &f.root[r * nt..(r + 1) * nt];
            xi += l.iter().zip(&z[..nt]).map(|(a, b)| a * b).sum::<f64>();
            x[i] = xi;
        }
        Ok(())
    }
}

/// `Γ = AᵀA` with i.i.d. standard normal entries of `A`.
pub fn random_spd_covariance(p: usize, rng: &mut dyn RngCore) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let g = a.transpose() * &a;
    // Exact symmetry; the product is symmetric only up to rounding.
    DMatrix::from_fn(p, p, |i, j| if i <= j { g[(i, j)] } else { g[(j, i)] })
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

fn check_psd(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> Result<f64> {
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &l| a.min(l));
    if !min.is_finite() || min < -PSD_RTOL * max.max(f64::MIN_POSITIVE) {
        return Err(Error::Singular { min_eigenvalue: min });
    }
    Ok(max)
}

/// Symmetric pseudo-inverse with relative cutoff `PINV_RTOL * λ_max`.
fn pseudo_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let max = check_psd(&eig)?;
    let cutoff = PINV_RTOL * max;
    let inv = eig
        .eigenvalues
        .map(|l| if l > cutoff && l > 0.0 { 1.0 / l } else { 0.0 });
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose())
}

/// `L` with `L Lᵀ = m` for a positive semi-definite `m`.
fn psd_root(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.is_empty() {
        return Ok(m.clone());
    }
    let eig = SymmetricEigen::new(m.clone());
    check_psd(&eig)?;
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    fn bivariate(rho: f64) -> LinearGaussianModel {
        LinearGaussianModel::new(
            vec![1.0, 1.0],
            vec![0.0, 0.0],
            DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn independent_conditional_variance() {
        let m = bivariate(0.0);
        assert!((m.conditional_variance(SubsetIndex::singleton(0)).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(m.conditional_variance(SubsetIndex::full(2)).unwrap(), 0.0);
        assert_eq!(m.conditional_variance(SubsetIndex::EMPTY).unwrap(), 2.0);
    }

    #[test]
    fn correlated_conditional_variance_is_schur_complement() {
        for rho in [-0.8, 0.3, 0.5, 0.95] {
            let m = bivariate(rho);
            let got = m.conditional_variance(SubsetIndex::singleton(0)).unwrap();
            assert!((got - (1.0 - rho * rho)).abs() < 1e-12, "rho {rho}: {got}");
        }
    }

    #[test]
    fn identity_covariance_gives_equal_effects() {
        for p in [1, 3, 6] {
            let m = LinearGaussianModel::new(vec![1.0; p], vec![0.0; p], DMatrix::identity(p, p))
                .unwrap();
            for eta in m.theoretical_shapley().unwrap() {
                assert!((eta - 1.0 / p as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_pair_is_split_evenly_for_any_correlation() {
        for rho in [-0.5, 0.0, 0.7] {
            let eta = bivariate(rho).theoretical_shapley().unwrap();
            assert!((eta[0] - 0.5).abs() < 1e-12 && (eta[1] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_asymmetric_or_degenerate_models() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.3, 1.0]);
        assert!(LinearGaussianModel::new(vec![1.0, 1.0], vec![0.0, 0.0], g).is_err());
        let g = DMatrix::identity(2, 2);
        assert!(matches!(
            LinearGaussianModel::new(vec![0.0, 0.0], vec![0.0, 0.0], g),
            Err(Error::InvalidVariance(_))
        ));
    }

    #[test]
    fn random_covariance_is_symmetric_psd_and_reproducible() {
        let g = random_spd_covariance(6, &mut stream(9, Domain::Sample, 0, 0));
        let h = random_spd_covariance(6, &mut stream(9, Domain::Sample, 0, 0));
        assert_eq!(g, h);
        assert!((&g - g.transpose()).amax() <= 1e-12);
        let eig = SymmetricEigen::new(g.clone());
        assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-10));
        let one = random_spd_covariance(1, &mut stream(1, Domain::Sample, 0, 0));
        assert!(one[(0, 0)] >= 0.0);
    }

    #[test]
    fn marginal_sampler_when_nothing_is_given() {
        let m = bivariate(0.5);
        let mut rng = stream(4, Domain::Sample, 0, 0);
        let draws = m
            .sample_conditional_block(SubsetIndex::EMPTY, &[], SubsetIndex::full(2), 50_000, &mut rng)
            .unwrap();
        let n = draws.len() as f64;
        let cov01 = draws.iter().map(|d| d[0] * d[1]).sum::<f64>() / n;
        assert!((cov01 - 0.5).abs() < 0.03, "{cov01}");
    }

    #[test]
    fn conditional_draws_match_gaussian_conditioning() {
        // X2 | X1 = 2 ~ N(1, 0.75) for unit variances and ρ = 0.5.
        let m = bivariate(0.5);
        let mut rng = stream(5, Domain::Sample, 0, 0);
        let n = 20_000;
        let draws = m
            .sample_conditional_block(
                SubsetIndex::singleton(0),
                &[2.0],
                SubsetIndex::singleton(1),
                n,
                &mut rng,
            )
            .unwrap();
        let xs: Vec<f64> = draws.iter().map(|d| d[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = crate::exact::sample_variance(&xs);
        assert!((mean - 1.0).abs() < 3.0 * (0.75f64 / n as f64).sqrt(), "{mean}");
        assert!((var - 0.75).abs() < 0.03, "{var}");
    }

    #[test]
    fn identity_covariance_conditional_is_marginal() {
        let m = LinearGaussianModel::new(vec![1.0; 3], vec![1.0, 2.0, 3.0], DMatrix::identity(3, 3))
            .unwrap();
        let mut rng = stream(6, Domain::Sample, 0, 0);
        let n = 20_000;
        let draws = m
            .sample_conditional_block(
                SubsetIndex::singleton(0),
                &[100.0],
                SubsetIndex::from_indices([1, 2]),
                n,
                &mut rng,
            )
            .unwrap();
        let mean1 = draws.iter().map(|d| d[0]).sum::<f64>() / n as f64;
        let mean2 = draws.iter().map(|d| d[1]).sum::<f64>() / n as f64;
        assert!((mean1 - 2.0).abs() < 0.03 && (mean2 - 3.0).abs() < 0.03);
    }

    #[test]
    fn overlapping_target_is_rejected() {
        let m = bivariate(0.1);
        let mut rng = stream(1, Domain::Sample, 0, 0);
        assert!(m
            .sample_conditional_block(
                SubsetIndex::singleton(0),
                &[0.0],
                SubsetIndex::full(2),
                1,
                &mut rng
            )
            .is_err());
    }

    #[test]
    fn singular_covariance_conditions_through_pseudo_inverse() {
        // X2 = X1 exactly; conditioning on both is fine and Y | X1 is deterministic.
        let g = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let m = LinearGaussianModel::new(vec![1.0, 1.0, 1.0], vec![0.0; 3], g).unwrap();
        let cv = m.conditional_variance(SubsetIndex::from_indices([0, 1])).unwrap();
        assert!((cv - 1.0).abs() < 1e-9, "{cv}");
        let cv = m.conditional_variance(SubsetIndex::singleton(0)).unwrap();
        assert!((cv - 1.0).abs() < 1e-9, "{cv}");
    }
}
