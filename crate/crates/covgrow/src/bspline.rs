//! Clamped B-spline bases: evaluation with derivatives and roughness
//! penalty Gram matrices.
//!
//! The basis is clamped (order-fold repeated boundary knots), so a basis
//! with `m` interior knots has `K = m + order` functions, at most `order`
//! of which are nonzero at any point. Evaluation outside the domain is an
//! error; growth-curve prediction outside the observed range is undefined.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct SplineBasis<F> {
    order: usize,
    knots: Vec<F>,
    num_basis: usize,
    domain: (F, F),
}

/// Nonzero band of basis-function (derivative) values at one point:
/// `values[a]` belongs to basis function `first + a`.
#[derive(Clone, Debug)]
pub struct BandValues<F> {
    pub first: usize,
    pub values: Vec<F>,
}

/// Builds a clamped basis from strictly increasing interior knots.
pub fn make_basis<F: Real>(
    interior: &[F],
    domain: (F, F),
    order: usize,
) -> Result<SplineBasis<F>> {
    if order < 2 {
        return Err(Error::OrderTooSmall(order));
    }
    let (a, b) = domain;
    if !(a < b) {
        return Err(Error::InvalidDomain(format!("{a}"), format!("{b}")));
    }
    for w in interior.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::KnotsNotIncreasing);
        }
    }
    for &t in interior {
        if !(t > a && t < b) {
            return Err(Error::KnotOutsideDomain(
                format!("{t}"),
                format!("{a}"),
                format!("{b}"),
            ));
        }
    }
    let num_basis = interior.len() + order;
    let mut knots = Vec::with_capacity(num_basis + order);
    knots.extend(std::iter::repeat(a).take(order));
    knots.extend_from_slice(interior);
    knots.extend(std::iter::repeat(b).take(order));
    Ok(SplineBasis {
        order,
        knots,
        num_basis,
        domain,
    })
}

impl<F: Real> SplineBasis<F> {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_basis(&self) -> usize {
        self.num_basis
    }

    pub fn domain(&self) -> (F, F) {
        self.domain
    }

    pub fn knots(&self) -> &[F] {
        &self.knots
    }

    pub fn interior_count(&self) -> usize {
        self.num_basis - self.order
    }

    fn check_in_domain(&self, t: F) -> Result<()> {
        let (a, b) = self.domain;
        if t < a || t > b || t.is_nan() {
            return Err(Error::OutOfDomain(
                format!("{t}"),
                format!("{a}"),
                format!("{b}"),
            ));
        }
        Ok(())
    }

    /// Index `mu` of the nonempty knot span containing `t`.
    fn span_of(&self, t: F) -> usize {
        let idx = self.knots.partition_point(|&k| k <= t);
        idx.saturating_sub(1).clamp(self.order - 1, self.num_basis - 1)
    }

    /// Values of the (at most `order`) nonzero basis functions at `t`,
    /// differentiated `deriv` times.
    pub fn eval(&self, t: F, deriv: usize) -> Result<BandValues<F>> {
        self.check_in_domain(t)?;
        if deriv >= self.order {
            return Err(Error::DerivTooHigh {
                deriv,
                order: self.order,
            });
        }
        let (first, ders) = self.eval_all_derivs(t, deriv);
        Ok(BandValues {
            first,
            values: ders.into_iter().nth(deriv).unwrap(),
        })
    }

    /// All derivative orders `0..=max_deriv` of the nonzero band at `t`.
    /// Standard triangular-table recurrence for B-spline derivatives.
    fn eval_all_derivs(&self, t: F, max_deriv: usize) -> (usize, Vec<Vec<F>>) {
        let p = self.order - 1;
        let span = self.span_of(t);
        let u = &self.knots;
        let n = max_deriv.min(p);

        let mut ndu = vec![vec![F::zero(); p + 1]; p + 1];
        let mut left = vec![F::zero(); p + 1];
        let mut right = vec![F::zero(); p + 1];
        ndu[0][0] = F::one();
        for j in 1..=p {
            left[j] = t - u[span + 1 - j];
            right[j] = u[span + j] - t;
            let mut saved = F::zero();
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = vec![vec![F::zero(); p + 1]; max_deriv + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        if n > 0 {
            let mut a = [vec![F::zero(); p + 1], vec![F::zero(); p + 1]];
            for r in 0..=p {
                let (mut s1, mut s2) = (0usize, 1usize);
                a[0].iter_mut().for_each(|v| *v = F::zero());
                a[1].iter_mut().for_each(|v| *v = F::zero());
                a[0][0] = F::one();
                for k in 1..=n {
                    let mut d = F::zero();
                    let rk = r as isize - k as isize;
                    let pk = p - k;
                    if r >= k {
                        a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                        d = a[s2][0] * ndu[rk as usize][pk];
                    }
                    let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                    let j2 = if r <= pk + 1 { k - 1 } else { p - r };
                    for j in j1..=j2 {
                        let col = (rk + j as isize) as usize;
                        a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][col];
                        d += a[s2][j] * ndu[col][pk];
                    }
                    if r <= pk {
                        a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                        d += a[s2][k] * ndu[r][pk];
                    }
                    ders[k][r] = d;
                    std::mem::swap(&mut s1, &mut s2);
                }
            }
            let mut factor = F::of_usize(p);
            for (k, row) in ders.iter_mut().enumerate().skip(1).take(n) {
                for v in row.iter_mut() {
                    *v *= factor;
                }
                factor *= F::of_usize(p - k);
            }
        }
        (span + 1 - self.order, ders)
    }

    /// Full row of all `K` basis values at `t` (zeros outside the band).
    pub fn dense_row(&self, t: F, deriv: usize) -> Result<Vec<F>> {
        let band = self.eval(t, deriv)?;
        let mut row = vec![F::zero(); self.num_basis];
        for (a, &v) in band.values.iter().enumerate() {
            row[band.first + a] = v;
        }
        Ok(row)
    }

    /// Greville abscissae; the coefficient vector that reproduces
    /// `f(t) = t` exactly.
    pub fn greville(&self) -> Vec<F> {
        let p = self.order - 1;
        let inv = F::one() / F::of_usize(p);
        (0..self.num_basis)
            .map(|k| {
                let mut s = F::zero();
                for j in 1..=p {
                    s += self.knots[k + j];
                }
                s * inv
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Roughness penalty
// ---------------------------------------------------------------------------

/// Gram matrix of `gamma`-th basis derivatives: `S[k, k'] = integral of
/// B_k^(gamma) B_k'^(gamma)` over the domain. Symmetric, PSD, banded with
/// `S[k, k'] = 0` for `|k - k'| >= order`; its null space is spanned by
/// the coefficient vectors of polynomials of degree below `gamma`.
#[derive(Clone, Debug)]
pub struct PenaltyMatrix<F> {
    pub gamma: usize,
    pub matrix: Array2<F>,
    pub bandwidth: usize,
}

/// Nodes and weights of `n`-point Gauss-Legendre quadrature on [-1, 1],
/// found by Newton iteration on the Legendre polynomial.
pub fn gauss_legendre<F: Real>(n: usize) -> (Vec<F>, Vec<F>) {
    assert!(n >= 1);
    let mut nodes = vec![F::zero(); n];
    let mut weights = vec![F::zero(); n];
    let pi = F::of(std::f64::consts::PI);
    let nf = F::of_usize(n);
    for i in 0..n {
        let mut x = (pi * (F::of_usize(i) + F::of(0.75)) / (nf + F::of(0.5))).cos();
        let mut dp = F::one();
        for _ in 0..100 {
            // Legendre recurrence for P_n and its derivative at x.
            let mut p0 = F::one();
            let mut p1 = x;
            for k in 2..=n {
                let kf = F::of_usize(k);
                let p2 = ((F::of(2.0) * kf - F::one()) * x * p1 - (kf - F::one()) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { F::one() } else { p0 };
            dp = nf * (x * pn - pm) / (x * x - F::one());
            let dx = pn / dp;
            x -= dx;
            if dx.abs() <= F::epsilon() * (F::one() + x.abs()) {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = F::of(2.0) / ((F::one() - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Exact penalty Gram matrix by per-interval Gauss-Legendre quadrature.
/// The integrand is piecewise polynomial of degree `2(order - 1 - gamma)`
/// on each knot interval, so the node count below integrates it exactly.
pub fn penalty_matrix<F: Real>(basis: &SplineBasis<F>, gamma: usize) -> Result<PenaltyMatrix<F>> {
    let order = basis.order();
    if gamma < 2 || gamma > order - 1 {
        return Err(Error::GammaOutOfRange {
            gamma,
            max: order - 1,
        });
    }
    let k = basis.num_basis();
    let n_gl = (2 * (order - 1 - gamma) + 1).div_ceil(2).max(1);
    let (nodes, weights) = gauss_legendre::<F>(n_gl);
    let mut s = Array2::<F>::zeros((k, k));
    let half = F::of(0.5);
    for span in (order - 1)..k {
        let lo = basis.knots[span];
        let hi = basis.knots[span + 1];
        if !(hi > lo) {
            continue;
        }
        let mid = half * (lo + hi);
        let scale = half * (hi - lo);
        for (&x, &w) in nodes.iter().zip(&weights) {
            let t = mid + scale * x;
            let band = basis.eval(t, gamma)?;
            let wq = w * scale;
            for a in 0..band.values.len() {
                for b in 0..band.values.len() {
                    s[(band.first + a, band.first + b)] += wq * band.values[a] * band.values[b];
                }
            }
        }
    }
    Ok(PenaltyMatrix {
        gamma,
        matrix: s,
        bandwidth: order - 1,
    })
}

impl<F: Real> PenaltyMatrix<F> {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `alpha^T S alpha`, the integrated squared `gamma`-th derivative.
    pub fn quad_form(&self, alpha: &Array1<F>) -> F {
        self.matrix.dot(alpha).dot(alpha)
    }
}

// ---------------------------------------------------------------------------
// Optional linear-end reparameterization
// ---------------------------------------------------------------------------

/// Reparameterization that removes the curvature of the two outermost
/// basis functions, forcing the fitted spline to be linear at the domain
/// endpoints. Maps `K - 2` reduced coefficients to `K` full ones.
#[derive(Clone, Debug)]
pub struct LinearEndTransform<F> {
    z: Array2<F>,
}

pub fn linear_end_transform<F: Real>(basis: &SplineBasis<F>) -> Result<LinearEndTransform<F>> {
    let k = basis.num_basis();
    let order = basis.order();
    if order < 3 || k < 3 {
        return Err(Error::BoundaryConstraint(format!(
            "needs order >= 3 and K >= 3, got order {order}, K {k}"
        )));
    }
    let (a, b) = basis.domain();
    let da = basis.dense_row(a, 2)?;
    let db = basis.dense_row(b, 2)?;
    // Express (alpha_0, alpha_{K-1}) from the curvature constraints at the
    // two endpoints and the remaining coefficients.
    let m00 = da[0];
    let m01 = da[k - 1];
    let m10 = db[0];
    let m11 = db[k - 1];
    let det = m00 * m11 - m01 * m10;
    let scale = (m00.abs() + m01.abs()) * (m10.abs() + m11.abs());
    if det.abs() <= F::epsilon() * scale.max(F::min_positive_value()) {
        return Err(Error::BoundaryConstraint(
            "endpoint curvature constraints are not independent".to_string(),
        ));
    }
    let mut z = Array2::<F>::zeros((k, k - 2));
    for r in 0..(k - 2) {
        let m = r + 1;
        z[(m, r)] = F::one();
        let rhs0 = -da[m];
        let rhs1 = -db[m];
        z[(0, r)] = (rhs0 * m11 - m01 * rhs1) / det;
        z[(k - 1, r)] = (m00 * rhs1 - rhs0 * m10) / det;
    }
    Ok(LinearEndTransform { z })
}

impl<F: Real> LinearEndTransform<F> {
    pub fn full_dim(&self) -> usize {
        self.z.nrows()
    }

    pub fn reduced_dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn expand(&self, reduced: &Array1<F>) -> Array1<F> {
        self.z.dot(reduced)
    }

    /// Row of reduced basis values from a full row.
    pub fn reduce_row(&self, full: &[F]) -> Vec<F> {
        let k = self.full_dim();
        assert_eq!(full.len(), k);
        (0..self.reduced_dim())
            .map(|c| (0..k).map(|r| full[r] * self.z[(r, c)]).sum())
            .collect()
    }

    /// `Z^T S Z`, the penalty in reduced coordinates.
    pub fn reduce_penalty(&self, s: &Array2<F>) -> Array2<F> {
        self.z.t().dot(s).dot(&self.z)
    }
}
