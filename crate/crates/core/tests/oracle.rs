use nalgebra::DMatrix;
use shapley_core::rng::{stream, Domain};
use shapley_core::{
    shapley_from_subsets, ConditionalElementTable, ConditionalSampler, ElementKind,
    LinearGaussianModel, SubsetIndex,
};

fn diag_dominant_p3() -> LinearGaussianModel {
    let g = DMatrix::from_row_slice(3, 3, &[3.0, 0.6, -0.4, 0.6, 2.5, 0.8, -0.4, 0.8, 2.0]);
    LinearGaussianModel::new(vec![1.0, 2.0, 3.0], vec![0.0; 3], g).unwrap()
}

/// Shapley effects from an `E` table built by conditioning on `-u` directly,
/// without going through `V`.
fn shapley_via_e_table(m: &LinearGaussianModel) -> Vec<f64> {
    let p = m.p();
    let e = ConditionalElementTable::from_fn(p, ElementKind::ExpectationOfConditionalVariance, m.var_y(), |u| {
        m.conditional_variance(u.complement(p)).unwrap()
    })
    .unwrap();
    shapley_from_subsets(&e).unwrap()
}

#[test]
fn v_and_e_routes_agree() {
    let m = diag_dominant_p3();
    let a = m.theoretical_shapley().unwrap();
    let b = shapley_via_e_table(&m);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-10);
    }
    assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-10);
}

#[test]
fn converted_e_table_equals_v_table() {
    let m = diag_dominant_p3();
    let v = m.table(ElementKind::VarianceOfConditionalExpectation).unwrap();
    let e = m.table(ElementKind::ExpectationOfConditionalVariance).unwrap();
    let c = e.convert().unwrap();
    for u in SubsetIndex::all(3) {
        assert!((c.value(u).unwrap() - v.value(u).unwrap()).abs() < 1e-10);
    }
}

#[test]
fn conditional_sampler_covariance_matches_schur_complement() {
    let m = diag_dominant_p3();
    let given = SubsetIndex::singleton(0);
    let n = 100_000;
    let mut rng = stream(12, Domain::Sample, 0, 0);
    let draws = m
        .sample_conditional_block(given, &[1.5], SubsetIndex::from_indices([1, 2]), n, &mut rng)
        .unwrap();
    let g = m.gamma();
    // Γ_tt - Γ_tv Γ_vv^{-1} Γ_vt for t = {2,3}, v = {1}.
    let schur = DMatrix::from_fn(2, 2, |r, c| g[(r + 1, c + 1)] - g[(r + 1, 0)] * g[(c + 1, 0)] / g[(0, 0)]);
    let mean = [0, 1].map(|k| draws.iter().map(|d| d[k]).sum::<f64>() / n as f64);
    let cov = DMatrix::from_fn(2, 2, |r, c| {
        draws.iter().map(|d| (d[r] - mean[r]) * (d[c] - mean[c])).sum::<f64>() / (n - 1) as f64
    });
    let rel = (&cov - &schur).norm() / schur.norm();
    assert!(rel < 0.05, "relative Frobenius error {rel}");
    for k in 0..2 {
        let want = g[(k + 1, 0)] / g[(0, 0)] * 1.5;
        assert!((mean[k] - want).abs() < 0.02, "{} vs {want}", mean[k]);
    }
}

#[test]
fn trait_sampler_keeps_the_given_coordinates() {
    let m = diag_dominant_p3();
    let mut rng = stream(13, Domain::Sample, 0, 0);
    let mut x = [0.7, -1.0, 2.0];
    m.sample_conditional(SubsetIndex::from_indices([0, 2]), &mut x, &mut rng).unwrap();
    assert_eq!((x[0], x[2]), (0.7, 2.0));
    assert_ne!(x[1], -1.0);
}
