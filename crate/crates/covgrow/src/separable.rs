//! Solvers for uniform temporal designs, where every individual shares the
//! same measurement times.
//!
//! With a shared design the model becomes a matrix equation in the
//! coefficient matrix. The tensor-product system could not be separated as
//! written, but rotating the covariate space by the eigenvectors of
//! `U U^T` decouples it into `L + 1` independent single-curve problems.
//! The rotation changes the penalty unless all smoothing parameters are
//! equal, so the separable solution solves a different model in general;
//! with equal smoothing the two solutions coincide exactly.
//!
//! The parametric part is assumed absent here.

use ndarray::{Array1, Array2};

use crate::design::{CovariateBasis, Covariance, Dataset};
use crate::bspline::{PenaltyMatrix, SplineBasis};
use crate::error::{Error, Result};
use crate::linalg::{dense_cholesky, forward_substitute, sym_eigen_desc};
use crate::scalar::Real;

/// Uniform-design system: shared temporal design `X`, data matrix `Y`
/// (one column per individual), covariate data matrix `U` with columns
/// `(1, g_1(u_i), ..., g_L(u_i))`, one penalty per temporal function, and
/// the eigenfactors of `U U^T`.
#[derive(Clone, Debug)]
pub struct UniformSystem<F> {
    pub x: Array2<F>,
    pub y: Array2<F>,
    pub u: Array2<F>,
    pub penalty: Array2<F>,
    pub lambdas: Vec<F>,
    /// Orthonormal eigenvectors of `U U^T`, eigenvalues descending.
    pub o: Array2<F>,
    /// Eigenvalues of `U U^T`, nonnegative and nonincreasing.
    pub d: Array1<F>,
    /// `X^T Sigma^{-1} X`.
    w: Array2<F>,
    /// `X^T Sigma^{-1} Y`.
    xty: Array2<F>,
}

/// Exact check that all individuals share one time vector.
pub fn check_uniform<F: Real>(dataset: &Dataset<F>) -> bool {
    let mut iter = dataset.individuals().iter();
    let first = match iter.next() {
        Some(i) => &i.times,
        None => return true,
    };
    iter.all(|i| i.times.len() == first.len() && i.times.iter().zip(first).all(|(a, b)| a == b))
}

impl<F: Real> UniformSystem<F> {
    /// Builds the system from raw matrices. `sigma` is the shared
    /// within-individual covariance (`None` for the identity).
    pub fn new(
        x: Array2<F>,
        y: Array2<F>,
        u: Array2<F>,
        sigma: Option<Array2<F>>,
        penalty: Array2<F>,
        lambdas: Vec<F>,
    ) -> Result<Self> {
        let n = x.nrows();
        let k = x.ncols();
        let n_ind = y.ncols();
        if y.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "data matrix has {} rows, design has {n}",
                y.nrows()
            )));
        }
        if u.ncols() != n_ind {
            return Err(Error::DimensionMismatch(format!(
                "covariate matrix has {} columns for {n_ind} individuals",
                u.ncols()
            )));
        }
        if penalty.nrows() != k || penalty.ncols() != k {
            return Err(Error::DimensionMismatch("penalty dimension".into()));
        }
        if lambdas.len() != u.nrows() {
            return Err(Error::LambdaCount {
                got: lambdas.len(),
                expected: u.nrows(),
            });
        }
        // whiten by the shared covariance factor
        let (wx, wy) = match &sigma {
            None => (x.clone(), y.clone()),
            Some(s) => {
                if s.nrows() != n || s.ncols() != n {
                    return Err(Error::DimensionMismatch("covariance dimension".into()));
                }
                let l = lower_factor(s)?;
                let mut wx = x.clone();
                let mut wy = y.clone();
                for c in 0..k {
                    let mut col: Vec<F> = (0..n).map(|r| wx[(r, c)]).collect();
                    forward_substitute(&l, &mut col);
                    for r in 0..n {
                        wx[(r, c)] = col[r];
                    }
                }
                for c in 0..n_ind {
                    let mut col: Vec<F> = (0..n).map(|r| wy[(r, c)]).collect();
                    forward_substitute(&l, &mut col);
                    for r in 0..n {
                        wy[(r, c)] = col[r];
                    }
                }
                (wx, wy)
            }
        };
        let w = wx.t().dot(&wx);
        let xty = wx.t().dot(&wy);
        let uut = u.dot(&u.t());
        let (d, o) = sym_eigen_desc(&uut);
        Ok(UniformSystem {
            x,
            y,
            u,
            penalty,
            lambdas,
            o,
            d,
            w,
            xty,
        })
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn l_count(&self) -> usize {
        self.u.nrows()
    }

    /// Smallest relative gap between consecutive eigenvalues of `U U^T`;
    /// a tiny gap means the rotation is not unique, which affects the
    /// rotated coefficients but not the equal-smoothing fit.
    pub fn min_relative_gap(&self) -> F {
        let scale = self.d[0].max(F::min_positive_value());
        let mut gap = F::infinity();
        for i in 1..self.d.len() {
            gap = gap.min((self.d[i - 1] - self.d[i]).abs() / scale);
        }
        gap
    }
}

fn lower_factor<F: Real>(m: &Array2<F>) -> Result<Array2<F>> {
    let n = m.nrows();
    let mut l = Array2::<F>::zeros((n, n));
    for j in 0..n {
        let mut s = m[(j, j)];
        for k in 0..j {
            let v = l[(j, k)];
            s -= v * v;
        }
        if !(s > F::zero()) {
            return Err(Error::NotPositiveDefinite {
                index: j,
                pivot: format!("{s:e}"),
            });
        }
        let d = s.sqrt();
        l[(j, j)] = d;
        for r in (j + 1)..n {
            let mut s = m[(r, j)];
            for k in 0..j {
                s -= l[(r, k)] * l[(j, k)];
            }
            l[(r, j)] = s / d;
        }
    }
    Ok(l)
}

/// Builds a [`UniformSystem`] from a dataset with a shared time vector.
/// The within-individual covariance must be identical across individuals;
/// the parametric basis is assumed empty.
pub fn from_dataset<F: Real>(
    dataset: &Dataset<F>,
    basis: &SplineBasis<F>,
    gbasis: &CovariateBasis<F>,
    penalty: &PenaltyMatrix<F>,
    lambdas: Vec<F>,
) -> Result<UniformSystem<F>> {
    if dataset.individuals().is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !check_uniform(dataset) {
        return Err(Error::NotUniform);
    }
    let first = &dataset.individuals()[0];
    let n = first.len();
    let n_ind = dataset.individuals().len();
    let shared_sigma = dataset.individuals().iter().all(|i| {
        match (&i.covariance, &first.covariance) {
            (Covariance::Diagonal(a), Covariance::Diagonal(b)) => a == b,
            (Covariance::Dense(a), Covariance::Dense(b)) => a == b,
            _ => false,
        }
    });
    if !shared_sigma {
        return Err(Error::DimensionMismatch(
            "uniform-design solver needs one shared covariance".into(),
        ));
    }
    let k = basis.num_basis();
    let mut x = Array2::zeros((n, k));
    for (p, &t) in first.times.iter().enumerate() {
        let row = basis.dense_row(t, 0)?;
        for c in 0..k {
            x[(p, c)] = row[c];
        }
    }
    let mut y = Array2::zeros((n, n_ind));
    for (i, ind) in dataset.individuals().iter().enumerate() {
        for p in 0..n {
            y[(p, i)] = ind.responses[p];
        }
    }
    let l_count = gbasis.l_count();
    let mut u = Array2::zeros((l_count, n_ind));
    for (i, ind) in dataset.individuals().iter().enumerate() {
        let g = gbasis.eval_vector(&ind.covariates, Some(i), 0);
        for l in 0..l_count {
            u[(l, i)] = g[l];
        }
    }
    let sigma = match &first.covariance {
        Covariance::Diagonal(v) => {
            if v.iter().all(|&x| x == F::one()) {
                None
            } else {
                let mut s = Array2::zeros((n, n));
                for p in 0..n {
                    s[(p, p)] = v[p];
                }
                Some(s)
            }
        }
        Covariance::Dense(m) => Some(m.clone()),
    };
    UniformSystem::new(x, y, u, sigma, penalty.matrix.clone(), lambdas)
}

/// Solves the full tensor system `W a UU^T + S a Lambda = X^T Sigma^{-1} Y U^T`
/// over all `(L+1) K` coefficients at once.
pub fn solve_multivariate<F: Real>(us: &UniformSystem<F>) -> Result<Array2<F>> {
    let k = us.k();
    let l_count = us.l_count();
    let dim = k * l_count;
    let uut = us.u.dot(&us.u.t());
    let mut m = Array2::<F>::zeros((dim, dim));
    for l in 0..l_count {
        for l2 in 0..l_count {
            let c = uut[(l, l2)];
            for a in 0..k {
                for b in 0..k {
                    let mut v = c * us.w[(a, b)];
                    if l == l2 {
                        v += us.lambdas[l] * us.penalty[(a, b)];
                    }
                    m[(l * k + a, l2 * k + b)] += v;
                }
            }
        }
    }
    let rhs_mat = us.xty.dot(&us.u.t()); // K x (L+1)
    let mut rhs = vec![F::zero(); dim];
    for l in 0..l_count {
        for a in 0..k {
            rhs[l * k + a] = rhs_mat[(a, l)];
        }
    }
    let factor = dense_cholesky(&m)?;
    factor.solve_in_place(&mut rhs);
    let mut alpha = Array2::zeros((k, l_count));
    for l in 0..l_count {
        for a in 0..k {
            alpha[(a, l)] = rhs[l * k + a];
        }
    }
    Ok(alpha)
}

/// Solution of the separable model obtained by rotating the covariate
/// space by the eigenvectors of `U U^T`. Identical to the tensor solution
/// when all smoothing parameters are equal; otherwise the rotation turns
/// the scalar penalties into a matrix-valued penalty and the model
/// genuinely differs.
#[derive(Clone, Debug)]
pub struct SeparableSolution<F> {
    pub alpha: Array2<F>,
    /// True when the solution solves the same model as the tensor system.
    pub matches_tensor_model: bool,
}

pub fn solve_separable<F: Real>(us: &UniformSystem<F>) -> Result<SeparableSolution<F>> {
    let k = us.k();
    let l_count = us.l_count();
    // rotated right-hand side: X^T Sigma^{-1} Y U^T O
    let rhs_rot = us.xty.dot(&us.u.t()).dot(&us.o);
    let mut alpha_rot = Array2::<F>::zeros((k, l_count));
    for l in 0..l_count {
        let mut m = us.penalty.mapv(|v| v * us.lambdas[l]);
        for a in 0..k {
            for b in 0..k {
                m[(a, b)] += us.d[l] * us.w[(a, b)];
            }
        }
        let factor = dense_cholesky(&m).map_err(|e| match e {
            Error::NotPositiveDefinite { index, pivot } => Error::NotPositiveDefinite {
                index,
                pivot: format!("{pivot} (rotated sub-problem {l})"),
            },
            other => other,
        })?;
        let mut col: Vec<F> = (0..k).map(|a| rhs_rot[(a, l)]).collect();
        factor.solve_in_place(&mut col);
        for a in 0..k {
            alpha_rot[(a, l)] = col[a];
        }
    }
    let alpha = alpha_rot.dot(&us.o.t());
    let equal = us
        .lambdas
        .windows(2)
        .all(|w| w[0] == w[1]);
    Ok(SeparableSolution {
        alpha,
        matches_tensor_model: equal || l_count == 1,
    })
}
