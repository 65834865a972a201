//! The numerical core instantiated at `f32`: looser tolerances, same
//! structure. Double precision remains the supported default; this
//! exercises the scalar abstraction end to end.

use covgrow::bspline::{make_basis, penalty_matrix};
use covgrow::design::{
    assemble, BoundaryConstraint, Covariance, CovariateBasis, CovariateData, Dataset, GTermSpec,
    Individual, ModelSpec, ParametricBasis,
};
use covgrow::selection::{SelectionConfig, SelectionMethod, Sigma2Spec};

#[test]
fn single_precision_pipeline() {
    let interior: Vec<f32> = vec![0.25, 0.5, 0.75];
    let basis = make_basis(&interior, (0.0f32, 1.0f32), 4).unwrap();
    assert_eq!(basis.num_basis(), 7);

    // partition of unity at single precision
    for i in 0..200 {
        let t = i as f32 / 199.0;
        let band = basis.eval(t, 0).unwrap();
        let sum: f32 = band.values.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6, "t = {t}, sum = {sum}");
    }

    let pen = penalty_matrix(&basis, 2).unwrap();
    let ones = ndarray::Array1::<f32>::ones(basis.num_basis());
    let scale: f32 = pen.matrix.iter().map(|v| v.abs()).fold(0.0, f32::max);
    assert!(pen.quad_form(&ones).abs() < 1e-4 * scale);

    // a small fit
    let mut state = 9u64;
    let mut rng = move || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 11) as f32) / ((1u64 << 53) as f32)
    };
    let mut individuals = Vec::new();
    for i in 0..4 {
        let times: Vec<f32> = (0..15).map(|p| p as f32 / 14.0).collect();
        let q = 1.5 + 3.0 * rng();
        let responses: Vec<f32> = times
            .iter()
            .map(|t| (3.0 * t).sin() + 0.5 * q.ln() * t + 0.05 * (rng() - 0.5))
            .collect();
        individuals.push(
            Individual::new(
                format!("id{i}"),
                times,
                responses,
                Covariance::Diagonal(vec![1.0f32; 15]),
                CovariateData::Fixed(vec![q]),
            )
            .unwrap(),
        );
    }
    let ds = Dataset::new(individuals, vec!["q".into()]).unwrap();
    let gbasis = CovariateBasis::build(&ds, &[GTermSpec::Log("q".into())]).unwrap();
    let pbasis = ParametricBasis::build(&ds, &[]).unwrap();
    let model = ModelSpec {
        basis,
        gbasis,
        pbasis,
        gamma: 2,
        boundary: BoundaryConstraint::Free,
    };
    let sys = assemble(&ds, &model).unwrap();
    let config = SelectionConfig::<f32> {
        method: SelectionMethod::Fixed(vec![0.005, 0.005]),
        sigma2: Sigma2Spec::Known(0.01),
        ..SelectionConfig::default()
    };
    let fit = covgrow::selection::select(&sys, &config).unwrap();
    assert!(fit.gcv.is_finite());
    assert!(fit.trace_a > 0.0 && fit.trace_a < sys.n_total() as f32);
    // fitted values stay near the data at mild smoothing
    let fitted = sys.fitted_block(0, &fit.coefficients);
    for (f, y) in fitted.iter().zip(&ds.individuals()[0].responses) {
        assert!((f - y).abs() < 0.3, "{f} vs {y}");
    }
}
