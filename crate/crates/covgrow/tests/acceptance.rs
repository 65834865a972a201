//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its measured figures (run with `--nocapture` to see them).
//!
//! Every tolerance is pinned here in code. Statistical checks are seeded
//! and therefore deterministic.

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use ndarray::{Array1, Array2};

use covgrow::bspline::{make_basis, penalty_matrix, SplineBasis};
use covgrow::design::{
    assemble, AssembledSystem, BoundaryConstraint, Covariance, CovariateBasis, CovariateData,
    Dataset, GTermSpec, HTermSpec, Individual, ModelSpec, ParametricBasis,
};
use covgrow::linalg::sym_eigen_desc;
use covgrow::selection::{
    gcv_score, lambda_fixed_point, risk, risk_gradient, risk_hat, risk_hat_gradient,
    sigma2_hat, LambdaGrid, QWeight, SelectionConfig, SelectionMethod, Sigma2Spec,
};
use covgrow::sim::{
    simulate, BetaSpec, CovDistribution, Lcg, NamedShape, SigmaProfile, SimDesign, TruthShape,
};
use covgrow::solver::{
    expected_error, influence_trace, posterior_covariance, predict, solve_penalized, Diagnostics,
    FitResult, Ridge,
};

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

fn gauss_jordan_inverse(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = Array2::<f64>::eye(n);
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if m[(r, col)].abs() > m[(piv, col)].abs() {
                piv = r;
            }
        }
        for c in 0..n {
            m.swap((col, c), (piv, c));
            inv.swap((col, c), (piv, c));
        }
        let d = m[(col, col)];
        for c in 0..n {
            m[(col, c)] /= d;
            inv[(col, c)] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[(r, col)];
                for c in 0..n {
                    let mv = m[(col, c)];
                    let iv = inv[(col, c)];
                    m[(r, c)] -= f * mv;
                    inv[(r, c)] -= f * iv;
                }
            }
        }
    }
    inv
}

fn rel_norm(got: &[f64], want: &[f64]) -> f64 {
    let num: f64 = got
        .iter()
        .zip(want)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den: f64 = want.iter().map(|b| b * b).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

/// Random covariate growth-curve system for the oracle checks:
/// `N_T <= 50`, `K <= 8`, `L <= 2`, moderately conditioned.
fn random_system(seed: u64) -> (Dataset<f64>, ModelSpec<f64>, AssembledSystem<f64>) {
    let mut rng = Lcg::new(seed);
    let l_terms = (rng.next_u64() % 3) as usize; // L in {0, 1, 2}
    let with_intercepts = rng.next_u64() % 2 == 0;
    let n_ind = 3 + (rng.next_u64() % 3) as usize;
    let interior = 1 + (rng.next_u64() % 3) as usize; // K in 5..=7
    let k = interior + 4;
    // keep enough data for an invertible unpenalized fit
    let p_max = k * (l_terms + 1) + if with_intercepts { n_ind } else { 0 };
    let n_per = ((p_max + 12) / n_ind + 1).min(50 / n_ind);
    let mut individuals = Vec::new();
    for i in 0..n_ind {
        let times: Vec<f64> = (0..n_per)
            .map(|p| ((p as f64 + 0.6 * rng.uniform()) / n_per as f64).clamp(0.0, 1.0))
            .collect();
        let q = 1.5 + 3.0 * rng.uniform();
        let dose = 0.5 + rng.uniform();
        let responses: Vec<f64> = times
            .iter()
            .map(|t| {
                (2.8 * t).sin() + 0.5 * q.ln() * (1.6 * t + 0.3).cos() + 0.3 * dose * t
                    + 0.25 * (rng.uniform() - 0.5)
            })
            .collect();
        let vars = vec![0.6 + 0.8 * rng.uniform(); n_per];
        individuals.push(
            Individual::new(
                format!("id{i}"),
                times,
                responses,
                Covariance::Diagonal(vars),
                CovariateData::Fixed(vec![q, dose]),
            )
            .unwrap(),
        );
    }
    let ds = Dataset::new(individuals, vec!["q".into(), "dose".into()]).unwrap();
    let knots: Vec<f64> = (1..=interior)
        .map(|i| i as f64 / (interior + 1) as f64)
        .collect();
    let basis = make_basis(&knots, (0.0, 1.0), 4).unwrap();
    let g_specs: Vec<GTermSpec> = match l_terms {
        0 => vec![],
        1 => vec![GTermSpec::Log("q".into())],
        _ => vec![GTermSpec::Log("q".into()), GTermSpec::Linear("dose".into())],
    };
    let h_specs: Vec<HTermSpec> = if with_intercepts {
        vec![HTermSpec::PerIndividualIntercept]
    } else {
        vec![]
    };
    let gbasis = CovariateBasis::build(&ds, &g_specs).unwrap();
    let pbasis = ParametricBasis::build(&ds, &h_specs).unwrap();
    let model = ModelSpec {
        basis,
        gbasis,
        pbasis,
        gamma: 2,
        boundary: BoundaryConstraint::Free,
    };
    let sys = assemble(&ds, &model).unwrap();
    (ds, model, sys)
}

/// Dense design, weight, and ridge matrices of a system, built through
/// the model-level design blocks (independent of the banded assembly).
fn dense_pieces(
    ds: &Dataset<f64>,
    model: &ModelSpec<f64>,
    sys: &AssembledSystem<f64>,
    lambdas: &[f64],
) -> (Array2<f64>, Array2<f64>, Array1<f64>, Array2<f64>) {
    let lay = sys.layout();
    let n_t = sys.n_total();
    let p = lay.p_dim();
    let mut x = Array2::<f64>::zeros((n_t, p));
    let mut sig_inv = Array2::<f64>::zeros((n_t, n_t));
    let mut y = Array1::<f64>::zeros(n_t);
    let mut row0 = 0;
    for (i, ind) in ds.individuals().iter().enumerate() {
        let (np, pr) = covgrow::design::individual_design(
            ind,
            i,
            &model.basis,
            &model.gbasis,
            &model.pbasis,
        )
        .unwrap();
        let vars = match &ind.covariance {
            Covariance::Diagonal(v) => v.clone(),
            _ => unreachable!(),
        };
        for pt in 0..ind.len() {
            for c in 0..np.ncols() {
                x[(row0 + pt, c)] = np[(pt, c)];
            }
            let h_full: Vec<f64> = (0..pr.ncols()).map(|j| pr[(pt, j)]).collect();
            let h_red = sys.reparam().reduce_row(&h_full);
            for (jj, &hv) in h_red.iter().enumerate() {
                x[(row0 + pt, lay.spline_dim() + jj)] = hv;
            }
            sig_inv[(row0 + pt, row0 + pt)] = sys.sigma_scale() / vars[pt];
            y[row0 + pt] = ind.responses[pt];
        }
        row0 += ind.len();
    }
    let m = sys.ridge_matrix(lambdas).to_dense();
    (x, sig_inv, y, m)
}

// ---------------------------------------------------------------------------
// criterion 1
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_basis_suite() {
    let start = Instant::now();
    let mut rng = Lcg::new(101);

    let mut worst_unity = 0.0f64;
    let mut worst_fd = 0.0f64;
    let mut worst_quad = 0.0f64;
    for &(interior, a, b) in &[(4usize, 0.0, 1.0), (7, -2.0, 3.0), (10, 0.0, 0.5)] {
        let knots: Vec<f64> = (1..=interior)
            .map(|i| a + (b - a) * i as f64 / (interior + 1) as f64)
            .collect();
        let basis = make_basis(&knots, (a, b), 4).unwrap();

        // partition of unity at 1000 uniform points
        for i in 0..1000 {
            let t = a + (b - a) * i as f64 / 999.0;
            let band = basis.eval(t, 0).unwrap();
            let sum: f64 = band.values.iter().sum();
            worst_unity = worst_unity.max((sum - 1.0).abs());
        }

        // derivatives against central differences of one order lower
        let h = 1e-6 * (b - a);
        for i in 0..60 {
            let t = a + (b - a) * (0.02 + 0.96 * i as f64 / 59.0);
            if basis.knots().iter().any(|&kt| (kt - t).abs() < 8.0 * h) {
                continue;
            }
            for deriv in [1usize, 2] {
                let lower = deriv - 1;
                let dp = basis.dense_row(t + h, lower).unwrap();
                let dm = basis.dense_row(t - h, lower).unwrap();
                let dv = basis.dense_row(t, deriv).unwrap();
                for kk in 0..basis.num_basis() {
                    let fd = (dp[kk] - dm[kk]) / (2.0 * h);
                    let scale = dv[kk].abs().max(1.0 / (b - a).powi(deriv as i32));
                    worst_fd = worst_fd.max((fd - dv[kk]).abs() / scale);
                }
            }
        }

        for gamma in [2usize, 3] {
            let pen = penalty_matrix(&basis, gamma).unwrap();
            // spectral rank is K - gamma
            let (vals, _) = sym_eigen_desc(&pen.matrix);
            let rank = vals.iter().filter(|&&v| v > 1e-10 * vals[0]).count();
            assert_eq!(rank, basis.num_basis() - gamma, "gamma {gamma}");

            // quadratic form equals the integrated squared derivative
            // (fine composite Simpson per knot interval as the oracle)
            for _ in 0..2 {
                let alpha = Array1::from_vec(
                    (0..basis.num_basis())
                        .map(|_| rng.uniform() - 0.5)
                        .collect(),
                );
                let qf = pen.quad_form(&alpha);
                let mut integral = 0.0;
                for w in basis.knots().windows(2) {
                    if w[1] > w[0] {
                        let m = 64;
                        let width = w[1] - w[0];
                        let f = |t: f64| {
                            let row = basis.dense_row(t.min(w[1] - width * 1e-12), gamma).unwrap();
                            let v: f64 =
                                row.iter().zip(alpha.iter()).map(|(r, x)| r * x).sum();
                            v * v
                        };
                        let mut acc = f(w[0]) + f(w[1]);
                        for s in 1..m {
                            let t = w[0] + width * s as f64 / m as f64;
                            acc += if s % 2 == 1 { 4.0 } else { 2.0 } * f(t);
                        }
                        integral += acc * width / (3.0 * m as f64);
                    }
                }
                worst_quad = worst_quad.max((qf - integral).abs() / integral.abs());
            }
        }
    }

    assert!(worst_unity < 1e-12, "partition of unity: {worst_unity:e}");
    assert!(worst_fd < 1e-5, "derivative agreement: {worst_fd:e}");
    assert!(worst_quad < 1e-8, "quadratic form: {worst_quad:e}");
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "runtime {elapsed:.2}s");
    println!(
        "criterion 1 (basis suite): PASS — unity {worst_unity:.2e}, derivatives {worst_fd:.2e}, \
         quadratic form {worst_quad:.2e}, {elapsed:.2}s"
    );
}

// ---------------------------------------------------------------------------
// criterion 2
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_oracle_equivalence() {
    let start = Instant::now();
    let mut worst = [0.0f64; 5]; // solve, trace, gcv, posterior, se
    for trial in 0..20u64 {
        let (ds, model, sys) = random_system(1000 + trial);
        let lay = sys.layout();
        let mut rng = Lcg::new(7000 + trial);
        let lambdas: Vec<f64> = (0..lay.l_count)
            .map(|_| 10f64.powf(-1.5 + 3.0 * rng.uniform()))
            .collect();
        let sigma2 = 0.2 + rng.uniform();

        let (x, sig_inv, y, m) = dense_pieces(&ds, &model, &sys, &lambdas);
        let g = gauss_jordan_inverse(&m);
        let rhs = x.t().dot(&sig_inv).dot(&y);

        // banded solve vs dense normal equations
        let got = solve_penalized(&sys, &lambdas).unwrap();
        let want = g.dot(&rhs);
        worst[0] = worst[0].max(rel_norm(got.as_slice().unwrap(), want.as_slice().unwrap()));

        // influence trace vs trace of the explicit influence matrix
        let a_mat = x.dot(&g).dot(&x.t()).dot(&sig_inv);
        let tr_want: f64 = (0..sys.n_total()).map(|i| a_mat[(i, i)]).sum();
        let tr_got = influence_trace(&sys, &lambdas).unwrap();
        worst[1] = worst[1].max((tr_got - tr_want).abs() / tr_want.abs());

        // GCV vs brute force from the explicit influence matrix
        let resid = &y - &a_mat.dot(&y);
        let wrss = resid.dot(&sig_inv.dot(&resid));
        let n = sys.n_total() as f64;
        let v_want = (wrss / n) / (1.0 - tr_want / n).powi(2);
        let v_got = gcv_score(&sys, &lambdas).unwrap();
        worst[2] = worst[2].max((v_got - v_want).abs() / v_want.abs());

        // posterior covariance vs a plain dense inverse of C + S_c
        let cov_got = posterior_covariance(&sys, &lambdas, sigma2).unwrap();
        let cov_want = g.mapv(|v| v * sigma2);
        worst[3] = worst[3].max(rel_norm(
            cov_got.as_slice().unwrap(),
            cov_want.as_slice().unwrap(),
        ));

        // plug-in standard errors vs the dense row quadratic form
        let fit_coeffs = got.clone();
        let (alpha, beta) = sys.expand_coefficients(&fit_coeffs);
        let fit = FitResult {
            alpha,
            beta,
            lambdas: lambdas.clone(),
            sigma2,
            trace_a: tr_got,
            gcv: v_got,
            coefficients: fit_coeffs.clone(),
            diagnostics: Diagnostics {
                method: "fixed".into(),
                weighted_rss: wrss,
                iterations: 0,
                converged: true,
                lambda_path: vec![],
                notes: vec![],
            },
        };
        // dense expected-error matrix with the fitted coefficients
        let s_c_alpha = sys.sc_apply(&lambdas, &fit_coeffs);
        let u = g.dot(&s_c_alpha);
        let c_dense = sys.c().to_dense();
        let gcg = g.dot(&c_dense).dot(&g);
        let mut total = gcg.mapv(|v| v * sigma2);
        for a in 0..lay.p_dim() {
            for b in 0..lay.p_dim() {
                total[(a, b)] += u[a] * u[b];
            }
        }
        let ind = &ds.individuals()[0];
        let times: Vec<f64> = (0..10).map(|i| 0.05 + 0.9 * i as f64 / 9.0).collect();
        let preds = predict(&sys, &fit, &times, &ind.covariates, Some(&ind.id)).unwrap();
        for (pi, pt) in preds.iter().enumerate() {
            let row = sys
                .design_row(times[pi], &ind.covariates, Some(0), pi)
                .unwrap();
            let se_want = row.dot(&total.dot(&row)).max(0.0).sqrt();
            worst[4] = worst[4].max((pt.se - se_want).abs() / se_want.abs());
        }
    }
    for (name, w) in ["solve", "trace", "gcv", "posterior", "se"]
        .iter()
        .zip(&worst)
    {
        assert!(*w < 1e-9, "{name}: {w:e}");
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "runtime {elapsed:.2}s");
    println!(
        "criterion 2 (oracle equivalence, 20 systems): PASS — worst rel errors \
         solve {:.1e}, trace {:.1e}, gcv {:.1e}, posterior {:.1e}, se {:.1e}, {elapsed:.2}s",
        worst[0], worst[1], worst[2], worst[3], worst[4]
    );
}

// ---------------------------------------------------------------------------
// criterion 3
// ---------------------------------------------------------------------------

/// System with genuine curvature in every temporal function so the risk
/// minimum is interior.
fn curved_system(seed: u64) -> AssembledSystem<f64> {
    let mut rng = Lcg::new(seed);
    let mut individuals = Vec::new();
    for i in 0..6 {
        let times: Vec<f64> = (0..18)
            .map(|p| ((p as f64 + 0.5 * rng.uniform()) / 18.0).clamp(0.0, 1.0))
            .collect();
        let q = 1.5 + 3.0 * rng.uniform();
        let responses: Vec<f64> = times
            .iter()
            .map(|t| {
                (3.0 * t).sin()
                    + q.ln() * 0.8 * (2.5 * t + 1.0).sin()
                    + 0.3 * (rng.uniform() - 0.5)
            })
            .collect();
        individuals.push(
            Individual::new(
                format!("id{i}"),
                times,
                responses,
                Covariance::Diagonal(vec![1.0; 18]),
                CovariateData::Fixed(vec![q]),
            )
            .unwrap(),
        );
    }
    let ds = Dataset::new(individuals, vec!["q".into()]).unwrap();
    let basis = make_basis(&[0.25, 0.5, 0.75], (0.0, 1.0), 4).unwrap();
    let gbasis = CovariateBasis::build(&ds, &[GTermSpec::Log("q".into())]).unwrap();
    let pbasis = ParametricBasis::build(&ds, &[]).unwrap();
    let model = ModelSpec {
        basis,
        gbasis,
        pbasis,
        gamma: 2,
        boundary: BoundaryConstraint::Free,
    };
    assemble(&ds, &model).unwrap()
}

#[test]
fn criterion_3_risk_calculus() {
    let start = Instant::now();
    let mut worst_exact = 0.0f64;
    let mut worst_empirical = 0.0f64;
    for trial in 0..4u64 {
        let sys = curved_system(3000 + trial);
        let p = sys.layout().p_dim();
        let l_count = sys.layout().l_count;
        let mut rng = Lcg::new(4000 + trial);
        let truth = Array1::from_vec((0..p).map(|_| rng.uniform() - 0.5).collect());
        let sigma2 = 0.1 + 0.3 * rng.uniform();
        for _ in 0..5 {
            let lambdas: Vec<f64> = (0..l_count)
                .map(|_| 10f64.powf(-2.5 + 3.0 * rng.uniform()))
                .collect();
            // central differences with one Richardson refinement, so
            // truncation does not eat the comparison budget
            let central = |f: &dyn Fn(&[f64]) -> f64, l: usize, h: f64| -> f64 {
                let mut lp = lambdas.clone();
                lp[l] += h;
                let mut lm = lambdas.clone();
                lm[l] -= h;
                0.5 * (f(&lp) - f(&lm)) / (2.0 * h)
            };
            let richardson = |f: &dyn Fn(&[f64]) -> f64, l: usize| -> f64 {
                // a generous step keeps cancellation noise down; the
                // Richardson combination removes its truncation error
                let h = 1e-2 * lambdas[l];
                let d1 = central(f, l, h);
                let d2 = central(f, l, 0.5 * h);
                (4.0 * d2 - d1) / 3.0
            };
            // exact risk gradient vs finite differences of the exact risk
            let grad =
                risk_gradient(&sys, &lambdas, QWeight::PredictiveC, &truth, sigma2).unwrap();
            let risk_f = |l: &[f64]| risk(&sys, l, QWeight::PredictiveC, &truth, sigma2).unwrap();
            for l in 0..l_count {
                let fd = richardson(&risk_f, l);
                worst_exact = worst_exact.max((grad[l] - fd).abs() / fd.abs());
            }
            // empirical risk-estimate gradient vs differences of its scalar
            let grad = risk_hat_gradient(&sys, &lambdas, sigma2).unwrap();
            let rhat_f = |l: &[f64]| risk_hat(&sys, l, sigma2).unwrap();
            for l in 0..l_count {
                let fd = richardson(&rhat_f, l);
                worst_empirical = worst_empirical.max((grad[l] - fd).abs() / fd.abs());
            }
        }
    }
    assert!(worst_exact < 1e-5, "exact gradient: {worst_exact:e}");
    assert!(
        worst_empirical < 1e-5,
        "empirical gradient: {worst_empirical:e}"
    );

    // converged fixed points satisfy the stationarity condition
    let mut worst_stationarity = 0.0f64;
    for trial in 0..3u64 {
        let sys = curved_system(5000 + trial);
        let sigma2 = sigma2_hat(&sys).unwrap();
        let config = SelectionConfig {
            method: SelectionMethod::RiskFixedPoint,
            max_iter: 800,
            ..SelectionConfig::default()
        };
        let fp = lambda_fixed_point(&sys, &config, sigma2).unwrap();
        assert!(fp.converged, "trial {trial}: {:?}", fp.notes);
        let grad = risk_hat_gradient(&sys, &fp.lambdas, sigma2).unwrap();
        let ridge = Ridge::new(&sys, &fp.lambdas).unwrap();
        let g = ridge.g_dense();
        let cg = sys.c().mul_dense(&g);
        let gcg = g.dot(&cg);
        for l in 0..sys.layout().l_count {
            let scale = sigma2 * sys.penalty_trace_block(l, &gcg);
            worst_stationarity = worst_stationarity.max(grad[l].abs() / scale.abs());
        }
    }
    assert!(
        worst_stationarity < 1e-6,
        "stationarity: {worst_stationarity:e}"
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "runtime {elapsed:.2}s");
    println!(
        "criterion 3 (risk calculus): PASS — gradients {worst_exact:.1e}/{worst_empirical:.1e}, \
         stationarity {worst_stationarity:.1e}, {elapsed:.2}s"
    );
}

// ---------------------------------------------------------------------------
// criterion 4
// ---------------------------------------------------------------------------

fn sigma2_replicate_design() -> (SplineBasis<f64>, SimDesign<f64>) {
    let basis = make_basis(
        &[0.2, 0.4, 0.6, 0.8],
        (0.0, 1.0),
        4,
    )
    .unwrap();
    let design = SimDesign {
        individuals: 10,
        points: 20,
        time_jitter: 0.3,
        noise_sd: 0.2,
        sigma_profile: SigmaProfile::Flat,
        covariates: vec![("q".into(), CovDistribution::LogUniform(1.5, 6.0))],
        shapes: vec![
            TruthShape::Named(NamedShape::Peak),
            TruthShape::Named(NamedShape::Sigmoid),
        ],
        beta: BetaSpec::None,
        g_terms: vec![GTermSpec::Log("q".into())],
        h_terms: vec![],
    };
    (basis, design)
}

#[test]
fn criterion_4_monte_carlo_statistics() {
    let start = Instant::now();

    // (a) the variance estimate is unbiased to 5% over 400 replicates
    let (basis, design) = sigma2_replicate_design();
    let sigma2_true = 0.04;
    let mut mean_s2 = 0.0;
    let mut df_seen = 0.0;
    for rep in 0..400u64 {
        let (ds, _) = simulate(&basis, &design, 40_000 + rep).unwrap();
        let gbasis = CovariateBasis::build(&ds, &design.g_terms).unwrap();
        let pbasis = ParametricBasis::build(&ds, &design.h_terms).unwrap();
        let model = ModelSpec {
            basis: basis.clone(),
            gbasis,
            pbasis,
            gamma: 2,
            boundary: BoundaryConstraint::Free,
        };
        let sys = assemble(&ds, &model).unwrap();
        mean_s2 += sigma2_hat(&sys).unwrap();
        df_seen = sys.n_total() as f64 - sys.layout().p_dim() as f64;
    }
    mean_s2 /= 400.0;
    let rel_bias = (mean_s2 - sigma2_true).abs() / sigma2_true;
    assert!(rel_bias < 0.05, "sigma2 bias {rel_bias:.3} (mean {mean_s2:.5})");
    assert!(df_seen > 150.0, "degrees of freedom {df_seen}");

    // (b) the expected-error matrix matches the empirical coefficient
    //     error covariance within 3 Monte Carlo standard errors
    let toy_basis = make_basis(&[0.35, 0.65], (0.0, 1.0), 4).unwrap(); // K = 6
    let mut rng = Lcg::new(8080);
    let times: Vec<f64> = (0..30)
        .map(|p| ((p as f64 + 0.5 * rng.uniform()) / 30.0).clamp(0.0, 1.0))
        .collect();
    let truth_alpha =
        covgrow::sim::shape_coefficients(&toy_basis, NamedShape::Peak).unwrap();
    let mu: Vec<f64> = times
        .iter()
        .map(|&t| {
            let row = toy_basis.dense_row(t, 0).unwrap();
            row.iter().zip(&truth_alpha).map(|(r, a)| r * a).sum()
        })
        .collect();
    let sigma = 0.3;
    let sigma2 = sigma * sigma;
    let lambdas = [0.05];
    let build = |responses: Vec<f64>| -> AssembledSystem<f64> {
        let ind = Individual::new(
            "a",
            times.clone(),
            responses,
            Covariance::Diagonal(vec![1.0; times.len()]),
            CovariateData::Fixed(vec![]),
        )
        .unwrap();
        let ds = Dataset::new(vec![ind], vec![]).unwrap();
        let gbasis = CovariateBasis::build(&ds, &[]).unwrap();
        let pbasis = ParametricBasis::build(&ds, &[]).unwrap();
        let model = ModelSpec {
            basis: toy_basis.clone(),
            gbasis,
            pbasis,
            gamma: 2,
            boundary: BoundaryConstraint::Free,
        };
        assemble(&ds, &model).unwrap()
    };
    let sys0 = build(mu.clone());
    let p = sys0.layout().p_dim();
    assert_eq!(p, 6);
    let truth_vec = Array1::from_vec(truth_alpha.clone());
    let theory = expected_error(&sys0, &lambdas, &truth_vec, sigma2)
        .unwrap()
        .total();
    let reps = 2000;
    let mut sum = Array2::<f64>::zeros((p, p));
    let mut sum_sq = Array2::<f64>::zeros((p, p));
    for _ in 0..reps {
        let responses: Vec<f64> = mu.iter().map(|&m| m + sigma * rng.normal()).collect();
        let sys = build(responses);
        let alpha_hat = solve_penalized(&sys, &lambdas).unwrap();
        let e: Vec<f64> = alpha_hat
            .iter()
            .zip(&truth_alpha)
            .map(|(a, t)| a - t)
            .collect();
        for a in 0..p {
            for b in 0..p {
                let prod = e[a] * e[b];
                sum[(a, b)] += prod;
                sum_sq[(a, b)] += prod * prod;
            }
        }
    }
    let mut worst_z = 0.0f64;
    for a in 0..p {
        for b in 0..p {
            let mean = sum[(a, b)] / reps as f64;
            let var = (sum_sq[(a, b)] / reps as f64 - mean * mean).max(0.0);
            let se = (var / reps as f64).sqrt().max(1e-14);
            let z = (mean - theory[(a, b)]).abs() / se;
            worst_z = worst_z.max(z);
        }
    }
    assert!(worst_z < 3.0, "worst z-score {worst_z:.2}");

    // (c) the GCV-selected smoothing loses at most 50% median predictive
    //     loss against the risk-oracle smoothing
    let basis_c = make_basis(&[0.25, 0.5, 0.75], (0.0, 1.0), 4).unwrap(); // K = 7
    let design_c = SimDesign {
        individuals: 8,
        points: 21,
        time_jitter: 0.2,
        noise_sd: 0.15,
        sigma_profile: SigmaProfile::Flat,
        covariates: vec![("q".into(), CovDistribution::LogUniform(1.5, 6.0))],
        shapes: vec![
            TruthShape::Named(NamedShape::Peak),
            TruthShape::Named(NamedShape::Sigmoid),
        ],
        beta: BetaSpec::PerIdNormal(0.3),
        g_terms: vec![GTermSpec::Log("q".into())],
        h_terms: vec![HTermSpec::PerIndividualIntercept],
    };
    let grid = LambdaGrid {
        min: 1e-8,
        max: 1e8,
        points_per_decade: 4,
    };
    let config = SelectionConfig {
        method: SelectionMethod::GcvGrid,
        grid,
        sigma2: Sigma2Spec::Known(design_c.noise_sd * design_c.noise_sd),
        ..SelectionConfig::default()
    };
    let mut gcv_losses = Vec::new();
    let mut oracle_losses = Vec::new();
    let mut oracle_lambda: Option<Vec<f64>> = None;
    for rep in 0..100u64 {
        let (ds, truth) = simulate(&basis_c, &design_c, 90_000 + 37 * rep).unwrap();
        let gbasis = CovariateBasis::build(&ds, &design_c.g_terms).unwrap();
        let pbasis = ParametricBasis::build(&ds, &design_c.h_terms).unwrap();
        let model = ModelSpec {
            basis: basis_c.clone(),
            gbasis,
            pbasis,
            gamma: 2,
            boundary: BoundaryConstraint::Free,
        };
        let sys = assemble(&ds, &model).unwrap();
        let truth_reduced = sys.reduce_coefficients(&truth.alpha, &truth.beta).unwrap();
        // designs are replicate-specific (jittered times and covariates),
        // so pick the oracle smoothing on the first replicate's risk
        // surface and reuse it — the design distribution is identical
        let sigma2 = design_c.noise_sd * design_c.noise_sd;
        let lam_oracle = match &oracle_lambda {
            Some(l) => l.clone(),
            None => {
                let mut best = (f64::INFINITY, vec![1.0, 1.0]);
                let axis = config.grid.points();
                for &l0 in &axis {
                    for &l1 in &axis {
                        let r =
                            risk(&sys, &[l0, l1], QWeight::PredictiveC, &truth_reduced, sigma2)
                                .unwrap();
                        if r < best.0 {
                            best = (r, vec![l0, l1]);
                        }
                    }
                }
                oracle_lambda = Some(best.1.clone());
                best.1
            }
        };
        let loss = |lambdas: &[f64]| -> f64 {
            let a = solve_penalized(&sys, lambdas).unwrap();
            let e = &a - &truth_reduced;
            sys.c().mul_vec(&e).dot(&e)
        };
        let fit = covgrow::selection::select(&sys, &config).unwrap();
        gcv_losses.push(loss(&fit.lambdas));
        oracle_losses.push(loss(&lam_oracle));
    }
    let median = |v: &mut Vec<f64>| -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let med_gcv = median(&mut gcv_losses);
    let med_oracle = median(&mut oracle_losses);
    let ratio = med_gcv / med_oracle;
    assert!(
        ratio <= 1.5,
        "median GCV loss {med_gcv:.4} vs oracle {med_oracle:.4} (ratio {ratio:.3})"
    );

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 600.0, "runtime {elapsed:.1}s");
    println!(
        "criterion 4 (Monte Carlo): PASS — sigma2 bias {rel_bias:.4}, worst z {worst_z:.2}, \
         GCV/oracle loss ratio {ratio:.3}, {elapsed:.1}s"
    );
}

// ---------------------------------------------------------------------------
// criterion 5
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_separable_appendix() {
    let start = Instant::now();
    let mut worst_equal = 0.0f64;
    let mut worst_ortho = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = Lcg::new(6000 + seed);
        let n_ind = 3 + (seed % 5) as usize;
        let n_per = 8 + (seed % 4) as usize;
        let times: Vec<f64> = (0..n_per).map(|p| p as f64 / (n_per - 1) as f64).collect();
        let mut individuals = Vec::new();
        for i in 0..n_ind {
            let q = 1.0 + 4.0 * rng.uniform();
            let responses: Vec<f64> = times
                .iter()
                .map(|&t| {
                    (2.0 * t + 0.3).sin() + 0.4 * q.ln() * (1.0 - t) + 0.1 * (rng.uniform() - 0.5)
                })
                .collect();
            individuals.push(
                Individual::new(
                    format!("id{i}"),
                    times.clone(),
                    responses,
                    Covariance::Diagonal(vec![1.0; n_per]),
                    CovariateData::Fixed(vec![q]),
                )
                .unwrap(),
            );
        }
        let ds = Dataset::new(individuals, vec!["q".into()]).unwrap();
        let basis = make_basis(&[1.0 / 3.0, 2.0 / 3.0], (0.0, 1.0), 4).unwrap();
        let gbasis = CovariateBasis::build(&ds, &[GTermSpec::Log("q".into())]).unwrap();
        let pen = penalty_matrix(&basis, 2).unwrap();
        let lam = 10f64.powf(-3.0 + 4.0 * rng.uniform());
        let us =
            covgrow::separable::from_dataset(&ds, &basis, &gbasis, &pen, vec![lam, lam]).unwrap();

        let oto = us.o.t().dot(&us.o);
        for a in 0..oto.nrows() {
            for b in 0..oto.ncols() {
                let want = if a == b { 1.0 } else { 0.0 };
                worst_ortho = worst_ortho.max((oto[(a, b)] - want).abs());
            }
        }

        let full = covgrow::separable::solve_multivariate(&us).unwrap();
        let sep = covgrow::separable::solve_separable(&us).unwrap();
        assert!(sep.matches_tensor_model);
        let scale = full.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (a, b) in full.iter().zip(sep.alpha.iter()) {
            worst_equal = worst_equal.max((a - b).abs() / scale);
        }
    }
    assert!(worst_equal < 1e-8, "equal-lambda equivalence: {worst_equal:e}");
    assert!(worst_ortho < 1e-12, "orthogonality: {worst_ortho:e}");
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "runtime {elapsed:.2}s");
    println!(
        "criterion 5 (uniform-design solver, 20 designs): PASS — equivalence {worst_equal:.1e}, \
         orthogonality {worst_ortho:.1e}, {elapsed:.2}s"
    );
}

// ---------------------------------------------------------------------------
// criterion 6
// ---------------------------------------------------------------------------

fn profile_design() -> SimDesign<f64> {
    SimDesign {
        individuals: 40,
        points: 61,
        time_jitter: 0.0,
        noise_sd: 0.05,
        sigma_profile: SigmaProfile::Flat,
        covariates: vec![("q".into(), CovDistribution::LogUniform(1.5, 6.0))],
        shapes: vec![
            TruthShape::Named(NamedShape::Peak),
            TruthShape::Named(NamedShape::Sigmoid),
        ],
        beta: BetaSpec::PerIdNormal(0.3),
        g_terms: vec![GTermSpec::Log("q".into())],
        h_terms: vec![HTermSpec::PerIndividualIntercept],
    }
}

#[test]
fn criterion_6_knot_insensitivity() {
    let start = Instant::now();
    let design = profile_design();
    // simulate on the 14-function basis; fit with 14 and with 46
    let interior_14: Vec<f64> = (1..=10).map(|i| i as f64 / 11.0).collect();
    let basis_14 = make_basis(&interior_14, (0.0, 1.0), 4).unwrap();
    assert_eq!(basis_14.num_basis(), 14);
    let (ds, _) = simulate(&basis_14, &design, 2026).unwrap();

    let interior_46: Vec<f64> = (1..=42).map(|i| i as f64 / 43.0).collect();
    let basis_46 = make_basis(&interior_46, (0.0, 1.0), 4).unwrap();
    assert_eq!(basis_46.num_basis(), 46);

    let config = SelectionConfig {
        method: SelectionMethod::RiskFixedPointSimplified,
        max_iter: 600,
        ..SelectionConfig::default()
    };
    let mut fits = Vec::new();
    for basis in [basis_14, basis_46] {
        let gbasis = CovariateBasis::build(&ds, &design.g_terms).unwrap();
        let pbasis = ParametricBasis::build(&ds, &design.h_terms).unwrap();
        let model = ModelSpec {
            basis,
            gbasis,
            pbasis,
            gamma: 3,
            boundary: BoundaryConstraint::Free,
        };
        let sys = assemble(&ds, &model).unwrap();
        let fit = covgrow::selection::select(&sys, &config).unwrap();
        fits.push((sys, fit));
    }

    // fitted curves at interior grid points, normalized by curve range
    let grid: Vec<f64> = (0..200)
        .map(|i| i as f64 / 199.0)
        .filter(|&t| (0.05..=0.95).contains(&t))
        .collect();
    let mut sq_sum = 0.0;
    let mut count = 0usize;
    for ind in ds.individuals() {
        let p14 = predict(&fits[0].0, &fits[0].1, &grid, &ind.covariates, Some(&ind.id)).unwrap();
        let p46 = predict(&fits[1].0, &fits[1].1, &grid, &ind.covariates, Some(&ind.id)).unwrap();
        let lo = p14.iter().map(|p| p.mean).fold(f64::INFINITY, f64::min);
        let hi = p14.iter().map(|p| p.mean).fold(f64::NEG_INFINITY, f64::max);
        let range = (hi - lo).max(1e-12);
        for (a, b) in p14.iter().zip(&p46) {
            sq_sum += ((a.mean - b.mean) / range).powi(2);
            count += 1;
        }
    }
    let rms = (sq_sum / count as f64).sqrt();
    assert!(rms < 0.02, "relative RMS difference {rms:.4}");
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "runtime {elapsed:.1}s");
    println!(
        "criterion 6 (knot insensitivity, 14 vs 46): PASS — relative RMS {rms:.4} \
         (lambdas {:?} / {:?}), {elapsed:.1}s",
        fits[0].1.lambdas, fits[1].1.lambdas
    );
}

// ---------------------------------------------------------------------------
// criterion 7
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_end_to_end() {
    let start = Instant::now();
    let dir = std::env::temp_dir().join(format!("covgrow-accept-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let binary = env!("CARGO_BIN_EXE_covgrow");
    let run = |args: &[&str]| -> (i32, String) {
        let out = Command::new(binary).args(args).output().expect("spawn");
        (
            out.status.code().unwrap_or(-1),
            String::from_utf8_lossy(&out.stderr).into_owned(),
        )
    };
    let path = |name: &str| -> PathBuf { dir.join(name) };

    // noiseless round trip through the binary
    let noiseless_cfg = "
domain = [0, 1]
order = 4
gamma = 3
knots = quantile:10
g_terms = log:q
h_terms = per_id_intercept
selection = fixed:0,0
sim_individuals = 40
sim_points = 61
sim_time_jitter = 0
sim_noise_sd = 0
sim_f0 = peak
sim_f1 = sigmoid
sim_beta = per_id_normal:0.3
sim_cov_q = loguniform:1.5:6
";
    std::fs::write(path("noiseless.cfg"), noiseless_cfg).unwrap();
    let (code, err) = run(&[
        "simulate",
        "--config",
        path("noiseless.cfg").to_str().unwrap(),
        "--out",
        path("noiseless.csv").to_str().unwrap(),
        "--seed",
        "7",
    ]);
    assert_eq!(code, 0, "{err}");
    let (code, err) = run(&[
        "fit",
        "--data",
        path("noiseless.csv").to_str().unwrap(),
        "--config",
        path("noiseless.cfg").to_str().unwrap(),
        "--out",
        path("noiseless_fit").to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let truth = std::fs::read_to_string(path("noiseless.truth.csv")).unwrap();
    let (alpha_true, beta_true) = covgrow::io::read_coefficients::<f64>(&truth).unwrap();
    let fitted = std::fs::read_to_string(path("noiseless_fit/coef.csv")).unwrap();
    let (alpha_hat, beta_hat) = covgrow::io::read_coefficients::<f64>(&fitted).unwrap();
    let scale = alpha_true.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for (a, b) in alpha_true.iter().zip(alpha_hat.iter()) {
        worst = worst.max((a - b).abs() / scale);
    }
    for (a, b) in beta_true.iter().zip(beta_hat.iter()) {
        worst = worst.max((a - b).abs() / scale);
    }
    assert!(worst < 1e-8, "coefficient recovery {worst:e}");

    // prediction at the measurement points reproduces the data
    let (code, err) = run(&[
        "predict",
        "--data",
        path("noiseless.csv").to_str().unwrap(),
        "--config",
        path("noiseless.cfg").to_str().unwrap(),
        "--out",
        path("noiseless_pred").to_str().unwrap(),
        "--at-data",
    ]);
    assert_eq!(code, 0, "{err}");
    let curves = std::fs::read_to_string(path("noiseless_pred/curves.csv")).unwrap();
    let rows = covgrow::io::read_curves::<f64>(&curves).unwrap();
    let ds = covgrow::io::read_dataset::<f64>(path("noiseless.csv")).unwrap();
    let mut iter = rows.iter();
    let mut worst_pred = 0.0f64;
    for ind in ds.individuals() {
        for p in 0..ind.len() {
            let row = iter.next().unwrap();
            worst_pred = worst_pred.max((row.fit - ind.responses[p]).abs());
        }
    }
    assert!(worst_pred < 1e-8, "prediction recovery {worst_pred:e}");

    // the full noisy fit with smoothing selection stays under ten seconds
    let noisy_cfg = noiseless_cfg
        .replace("sim_noise_sd = 0\n", "sim_noise_sd = 0.05\n")
        .replace(
            "selection = fixed:0,0",
            "selection = risk-fixed-point-simplified\nmax_iter = 600",
        );
    std::fs::write(path("noisy.cfg"), noisy_cfg).unwrap();
    let (code, err) = run(&[
        "simulate",
        "--config",
        path("noisy.cfg").to_str().unwrap(),
        "--out",
        path("noisy.csv").to_str().unwrap(),
        "--seed",
        "8",
    ]);
    assert_eq!(code, 0, "{err}");
    let fit_start = Instant::now();
    let (code, err) = run(&[
        "fit",
        "--data",
        path("noisy.csv").to_str().unwrap(),
        "--config",
        path("noisy.cfg").to_str().unwrap(),
        "--out",
        path("noisy_fit").to_str().unwrap(),
    ]);
    let fit_elapsed = fit_start.elapsed().as_secs_f64();
    assert_eq!(code, 0, "{err}");
    assert!(fit_elapsed < 10.0, "selection fit took {fit_elapsed:.2}s");
    let summary = std::fs::read_to_string(path("noisy_fit/summary.txt")).unwrap();
    let kv = covgrow::io::read_summary(&summary);
    assert!(kv.iter().any(|(k, v)| k == "converged" && v == "true"));
    assert!(kv
        .iter()
        .any(|(k, v)| k == "basis_functions" && v == "14"));
    assert!(kv
        .iter()
        .any(|(k, v)| k == "parametric_terms" && v == "40"));

    let elapsed = start.elapsed().as_secs_f64();
    println!(
        "criterion 7 (end to end): PASS — recovery {worst:.1e}/{worst_pred:.1e}, \
         selection fit {fit_elapsed:.2}s, total {elapsed:.1}s"
    );
}
