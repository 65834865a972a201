//! Penalized solve, influence trace, posterior covariance, expected-error
//! matrices, and prediction with plug-in error bands.
//!
//! The ridge inverse `G = (C + S_c)^{-1}` is never materialized as an
//! explicit inverse of an explicit inverse chain; every quantity goes
//! through the symmetric factorization of `C + S_c`, which stays banded
//! (plus border) whenever the assembly does. Small ill-conditioned
//! systems are the motivating failure mode here, so factorizations fail
//! loudly instead of regularizing silently.

use ndarray::{Array1, Array2};

use crate::design::{AssembledSystem, CovariateData};
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen_desc, SpdFactor, SpdMatrix};
use crate::scalar::Real;

/// A factored penalized system at a fixed smoothing vector.
pub struct Ridge<'a, F: Real> {
    pub system: &'a AssembledSystem<F>,
    pub lambdas: Vec<F>,
    pub factor: SpdFactor<F>,
    alpha: Array1<F>,
}

impl<'a, F: Real> Ridge<'a, F> {
    pub fn new(system: &'a AssembledSystem<F>, lambdas: &[F]) -> Result<Self> {
        let l_count = system.layout().l_count;
        if lambdas.len() != l_count {
            return Err(Error::LambdaCount {
                got: lambdas.len(),
                expected: l_count,
            });
        }
        for &l in lambdas {
            if !(l >= F::zero()) {
                return Err(Error::NegativeLambda(format!("{l}")));
            }
        }
        // A design with more coefficients than observations has no
        // unpenalized fit; reject before factoring garbage.
        if lambdas.iter().all(|&l| l == F::zero())
            && system.layout().p_dim() > system.n_total()
        {
            return Err(Error::Unidentifiable(format!(
                "{} coefficients with only {} observations and no penalty",
                system.layout().p_dim(),
                system.n_total()
            )));
        }
        let matrix = system.ridge_matrix(lambdas);
        let factor = matrix.cholesky().map_err(|e| match e {
            Error::NotPositiveDefinite { index, pivot } => Error::Unidentifiable(format!(
                "penalized system is singular at column {} (pivot {pivot}); \
                 the data do not determine all coefficients",
                system.column_label(index)
            )),
            other => other,
        })?;
        let alpha = factor.solve_vec(system.rhs());
        Ok(Ridge {
            system,
            lambdas: lambdas.to_vec(),
            factor,
            alpha,
        })
    }

    /// Coefficient estimate in system coordinates.
    pub fn coefficients(&self) -> Array1<F> {
        self.alpha.clone()
    }

    /// Dense `G = (C + S_c)^{-1}`.
    pub fn g_dense(&self) -> Array2<F> {
        self.factor.inverse(self.system.layout().p_dim())
    }

    /// `tr A_c = tr(G C)` without forming the influence matrix.
    pub fn influence_trace(&self) -> F {
        let g = self.g_dense();
        self.system.c().trace_dot(&g)
    }
}

/// Solves `(C + S_c(lambda)) a = X^T Sigma^{-1} Y`.
pub fn solve_penalized<F: Real>(system: &AssembledSystem<F>, lambdas: &[F]) -> Result<Array1<F>> {
    Ok(Ridge::new(system, lambdas)?.coefficients())
}

/// Effective degrees of freedom `tr A_c(lambda)`.
pub fn influence_trace<F: Real>(system: &AssembledSystem<F>, lambdas: &[F]) -> Result<F> {
    Ok(Ridge::new(system, lambdas)?.influence_trace())
}

/// Bayesian posterior covariance of the coefficients, combining the
/// unpenalized information matrix with the generalized inverse of the
/// penalty. Requires an invertible `C`; the generalized inverse keeps
/// eigenvalues above `1e-10` of the largest.
pub fn posterior_covariance<F: Real>(
    system: &AssembledSystem<F>,
    lambdas: &[F],
    sigma2: F,
) -> Result<Array2<F>> {
    let l_count = system.layout().l_count;
    if lambdas.len() != l_count {
        return Err(Error::LambdaCount {
            got: lambdas.len(),
            expected: l_count,
        });
    }
    let p = system.layout().p_dim();
    let mut s_c = Array2::<F>::zeros((p, p));
    for l in 0..l_count {
        if lambdas[l] != F::zero() {
            let sl = system.penalty_dense(l);
            for a in 0..p {
                for b in 0..p {
                    s_c[(a, b)] += lambdas[l] * sl[(a, b)];
                }
            }
        }
    }
    posterior_covariance_parts(system.c(), &s_c, sigma2)
}

/// Core of the posterior covariance: `sigma^2 (C^{-1} combined with the
/// pseudo-inverse of S_c)`, evaluated through the eigendecomposition of
/// the penalty and one inversion of `C`.
pub fn posterior_covariance_parts<F: Real>(
    c: &SpdMatrix<F>,
    s_c: &Array2<F>,
    sigma2: F,
) -> Result<Array2<F>> {
    let p = c.dim();
    let c_factor = c.cholesky().map_err(|e| match e {
        Error::NotPositiveDefinite { index, pivot } => Error::NotPositiveDefinite {
            index,
            pivot: format!("{pivot} (unpenalized information matrix is singular)"),
        },
        other => other,
    })?;
    let c_inv = c_factor.inverse(p);
    let (vals, vecs) = sym_eigen_desc(s_c);
    let thresh = F::of(1e-10) * vals[0].max(F::zero());
    let rank = vals.iter().filter(|&&v| v > thresh).count();
    let mut cov = if rank == 0 {
        c_inv
    } else {
        // Rank-r downdate of C^{-1} through the retained penalty modes.
        let mut u = Array2::<F>::zeros((p, rank));
        for r in 0..rank {
            for i in 0..p {
                u[(i, r)] = vecs[(i, r)];
            }
        }
        let m = c_inv.dot(&u); // C^{-1} U
        let mut t = u.t().dot(&m); // U^T C^{-1} U + D^{-1}
        for r in 0..rank {
            t[(r, r)] += F::one() / vals[r];
        }
        let t_factor = crate::linalg::dense_cholesky(&t)?;
        let t_inv = t_factor.inverse(rank);
        let correction = m.dot(&t_inv).dot(&m.t());
        let mut out = c_inv;
        for a in 0..p {
            for b in 0..p {
                out[(a, b)] -= correction[(a, b)];
            }
        }
        out
    };
    // enforce exact symmetry
    for a in 0..p {
        for b in 0..a {
            let v = (cov[(a, b)] + cov[(b, a)]) * F::of(0.5);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok(cov.mapv(|x| x * sigma2))
}

/// Sampling expected error of the coefficient estimate: a variance part
/// `sigma^2 G C G` and a squared-bias part `(G S_c a)(G S_c a)^T`.
pub struct ExpectedError<F> {
    pub variance: Array2<F>,
    pub bias: Array2<F>,
}

impl<F: Real> ExpectedError<F> {
    pub fn total(&self) -> Array2<F> {
        let mut t = self.variance.clone();
        for (tv, bv) in t.iter_mut().zip(self.bias.iter()) {
            *tv += *bv;
        }
        t
    }
}

pub fn expected_error<F: Real>(
    system: &AssembledSystem<F>,
    lambdas: &[F],
    alpha_true: &Array1<F>,
    sigma2: F,
) -> Result<ExpectedError<F>> {
    if alpha_true.len() != system.layout().p_dim() {
        return Err(Error::DimensionMismatch(format!(
            "truth vector has {} entries, system has {}",
            alpha_true.len(),
            system.layout().p_dim()
        )));
    }
    let ridge = Ridge::new(system, lambdas)?;
    let g = ridge.g_dense();
    let cg = system.c().mul_dense(&g);
    let gcg = g.dot(&cg);
    let variance = gcg.mapv(|x| x * sigma2);
    let u = ridge
        .factor
        .solve_vec(&system.sc_apply(lambdas, alpha_true));
    let p = u.len();
    let mut bias = Array2::zeros((p, p));
    for a in 0..p {
        for b in 0..p {
            bias[(a, b)] = u[a] * u[b];
        }
    }
    Ok(ExpectedError { variance, bias })
}

// ---------------------------------------------------------------------------
// Fit result and prediction
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct Diagnostics<F> {
    pub method: String,
    pub weighted_rss: F,
    pub iterations: usize,
    pub converged: bool,
    pub lambda_path: Vec<Vec<F>>,
    pub notes: Vec<String>,
}

/// A fitted model: spline coefficients per temporal function, parametric
/// coefficients, the selected smoothing vector, and fit diagnostics.
#[derive(Clone, Debug)]
pub struct FitResult<F> {
    /// `K x (L+1)` spline coefficients in model coordinates.
    pub alpha: Array2<F>,
    /// Parametric coefficients in model coordinates.
    pub beta: Array1<F>,
    /// Smoothing parameters (variance scale already absorbed).
    pub lambdas: Vec<F>,
    pub sigma2: F,
    pub trace_a: F,
    pub gcv: F,
    /// Coefficients in system coordinates (identifiability and boundary
    /// reductions applied); the vector actually solved for.
    pub coefficients: Array1<F>,
    pub diagnostics: Diagnostics<F>,
}

#[derive(Clone, Copy, Debug)]
pub struct PredictPoint<F> {
    pub time: F,
    pub mean: F,
    pub se: F,
}

/// Mean curve and plug-in standard errors at arbitrary times. The
/// standard error is the square root of the row quadratic form of the
/// expected-error matrix with the fitted coefficients substituted for
/// the truth.
pub fn predict<F: Real>(
    system: &AssembledSystem<F>,
    fit: &FitResult<F>,
    times: &[F],
    covariates: &CovariateData<F>,
    individual: Option<&str>,
) -> Result<Vec<PredictPoint<F>>> {
    let individual_idx = match individual {
        None => None,
        Some(id) => Some(
            system
                .ids()
                .iter()
                .position(|x| x == id)
                .ok_or_else(|| Error::UnknownCovariate(format!("individual id `{id}`")))?,
        ),
    };
    if let CovariateData::TimeVarying(m) = covariates {
        if m.nrows() != times.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} covariate rows for {} prediction times",
                m.nrows(),
                times.len()
            )));
        }
    }
    let ridge = Ridge::new(system, &fit.lambdas)?;
    let sc_alpha = system.sc_apply(&fit.lambdas, &fit.coefficients);
    let mut out = Vec::with_capacity(times.len());
    for (p, &t) in times.iter().enumerate() {
        let row = system.design_row(t, covariates, individual_idx, p)?;
        let mean = row.dot(&fit.coefficients);
        let z = ridge.factor.solve_vec(&row);
        let var = fit.sigma2 * system.c().mul_vec(&z).dot(&z);
        let bias = z.dot(&sc_alpha);
        let se = (var + bias * bias).max(F::zero()).sqrt();
        out.push(PredictPoint { time: t, mean, se });
    }
    Ok(out)
}
