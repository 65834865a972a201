//! Dense and banded symmetric linear algebra kernels.
//!
//! The cross-product matrix of the penalized regression is symmetric
//! positive definite with a banded spline block and (optionally) a dense
//! border of parametric columns. Everything here is sized for systems of
//! a few hundred unknowns, so the dense fallbacks are plain loops rather
//! than blocked kernels.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Records the largest factorization dimension seen on the current thread.
/// Used by structural tests that assert a solver path never factors a
/// matrix above a given size.
pub mod probe {
    use std::cell::Cell;

    thread_local! {
        static MAX_FACTOR_DIM: Cell<usize> = const { Cell::new(0) };
    }

    pub fn reset() {
        MAX_FACTOR_DIM.with(|c| c.set(0));
    }

    pub fn max_factor_dim() -> usize {
        MAX_FACTOR_DIM.with(|c| c.get())
    }

    pub(crate) fn record(dim: usize) {
        MAX_FACTOR_DIM.with(|c| c.set(c.get().max(dim)));
    }
}

// Pivot floor for Cholesky: rounding noise is proportional to the largest
// diagonal magnitude eliminated against. No dimension factor — heavily
// penalized systems legitimately carry pivots only a few decades above
// this floor, and rank verification is done spectrally at assembly.
fn spd_pivot_tolerance<F: Real>(max_diag: F) -> F {
    F::epsilon() * max_diag
}

// ---------------------------------------------------------------------------
// Symmetric banded storage
// ---------------------------------------------------------------------------

/// Symmetric banded matrix, lower storage: entry `(i + d, i)` of band `d`
/// lives at `data[d * n + i]` for `0 <= d <= hbw`.
#[derive(Clone, Debug)]
pub struct SymBanded<F> {
    n: usize,
    hbw: usize,
    data: Vec<F>,
}

impl<F: Real> SymBanded<F> {
    pub fn zeros(n: usize, hbw: usize) -> Self {
        let hbw = hbw.min(n.saturating_sub(1));
        SymBanded {
            n,
            hbw,
            data: vec![F::zero(); (hbw + 1) * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.hbw
    }

    pub fn get(&self, a: usize, b: usize) -> F {
        let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
        let d = hi - lo;
        if d > self.hbw {
            F::zero()
        } else {
            self.data[d * self.n + lo]
        }
    }

    /// Adds `v` to the symmetric entry `(a, b)`. Panics if the entry lies
    /// outside the stored band; callers are responsible for the layout.
    pub fn add(&mut self, a: usize, b: usize, v: F) {
        let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
        let d = hi - lo;
        assert!(d <= self.hbw, "entry ({a}, {b}) outside band {}", self.hbw);
        self.data[d * self.n + lo] += v;
    }

    pub fn to_dense(&self) -> Array2<F> {
        let mut m = Array2::zeros((self.n, self.n));
        for d in 0..=self.hbw {
            for i in 0..self.n.saturating_sub(d) {
                let v = self.data[d * self.n + i];
                m[(i + d, i)] = v;
                m[(i, i + d)] = v;
            }
        }
        m
    }

    pub fn mul_vec(&self, x: &Array1<F>) -> Array1<F> {
        assert_eq!(x.len(), self.n);
        let mut y = Array1::zeros(self.n);
        for i in 0..self.n {
            let mut acc = self.data[i] * x[i];
            let lo = i.saturating_sub(self.hbw);
            for j in lo..i {
                acc += self.data[(i - j) * self.n + j] * x[j];
            }
            let hi = (i + self.hbw).min(self.n - 1);
            for j in (i + 1)..=hi {
                acc += self.data[(j - i) * self.n + i] * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// Lower-triangular Cholesky factor, kept in banded storage.
    pub fn cholesky(&self) -> Result<BandedChol<F>> {
        probe::record(self.n);
        let n = self.n;
        let hbw = self.hbw;
        let mut l = self.data.clone();
        let max_diag = (0..n)
            .map(|i| self.data[i].abs())
            .fold(F::zero(), F::max);
        let tol = spd_pivot_tolerance(max_diag);
        for j in 0..n {
            let lo = j.saturating_sub(hbw);
            let mut s = l[j];
            for k in lo..j {
                let v = l[(j - k) * n + k];
                s -= v * v;
            }
            if !(s > tol) {
                return Err(Error::NotPositiveDefinite {
                    index: j,
                    pivot: format!("{s:e}"),
                });
            }
            let ljj = s.sqrt();
            l[j] = ljj;
            let hi = (j + hbw).min(n - 1);
            for i in (j + 1)..=hi {
                let lo_i = i.saturating_sub(hbw);
                let mut s = l[(i - j) * n + j];
                for k in lo_i.max(lo)..j {
                    s -= l[(i - k) * n + k] * l[(j - k) * n + k];
                }
                l[(i - j) * n + j] = s / ljj;
            }
        }
        Ok(BandedChol { n, hbw, l })
    }
}

/// Banded lower Cholesky factor.
#[derive(Clone, Debug)]
pub struct BandedChol<F> {
    n: usize,
    hbw: usize,
    l: Vec<F>,
}

impl<F: Real> BandedChol<F> {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Solves `L y = b` in place.
    pub fn forward(&self, x: &mut [F]) {
        let n = self.n;
        for i in 0..n {
            let lo = i.saturating_sub(self.hbw);
            let mut s = x[i];
            for k in lo..i {
                s -= self.l[(i - k) * n + k] * x[k];
            }
            x[i] = s / self.l[i];
        }
    }

    /// Solves `L^T y = b` in place.
    pub fn backward(&self, x: &mut [F]) {
        let n = self.n;
        for ii in 0..n {
            let i = n - 1 - ii;
            let hi = (i + self.hbw).min(n - 1);
            let mut s = x[i];
            for k in (i + 1)..=hi {
                s -= self.l[(k - i) * n + i] * x[k];
            }
            x[i] = s / self.l[i];
        }
    }

    pub fn solve_in_place(&self, x: &mut [F]) {
        self.forward(x);
        self.backward(x);
    }
}

// ---------------------------------------------------------------------------
// Dense symmetric positive definite
// ---------------------------------------------------------------------------

pub fn dense_cholesky<F: Real>(a: &Array2<F>) -> Result<DenseChol<F>> {
    dense_cholesky_with_floor(a, F::zero())
}

/// Dense Cholesky with an absolute pivot floor. The floor matters when `a`
/// is a Schur complement: cancellation noise scales with the magnitudes
/// subtracted while forming it, not with its own entries.
pub fn dense_cholesky_with_floor<F: Real>(a: &Array2<F>, floor: F) -> Result<DenseChol<F>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    probe::record(n);
    let mut l = Array2::<F>::zeros((n, n));
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(F::zero(), F::max);
    let tol = spd_pivot_tolerance(max_diag).max(floor);
    for j in 0..n {
        let mut s = a[(j, j)];
        for k in 0..j {
            let v = l[(j, k)];
            s -= v * v;
        }
        if !(s > tol) {
            return Err(Error::NotPositiveDefinite {
                index: j,
                pivot: format!("{s:e}"),
            });
        }
        let ljj = s.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(DenseChol { l })
}

#[derive(Clone, Debug)]
pub struct DenseChol<F> {
    l: Array2<F>,
}

impl<F: Real> DenseChol<F> {
    pub fn n(&self) -> usize {
        self.l.nrows()
    }

    pub fn forward(&self, x: &mut [F]) {
        let n = self.n();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.l[(i, k)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
    }

    pub fn backward(&self, x: &mut [F]) {
        let n = self.n();
        for ii in 0..n {
            let i = n - 1 - ii;
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
    }

    pub fn solve_in_place(&self, x: &mut [F]) {
        self.forward(x);
        self.backward(x);
    }

    pub fn inverse(&self, n: usize) -> Array2<F> {
        assert_eq!(n, self.n());
        let mut out = Array2::zeros((n, n));
        let mut col = vec![F::zero(); n];
        for c in 0..n {
            for v in col.iter_mut() {
                *v = F::zero();
            }
            col[c] = F::one();
            self.solve_in_place(&mut col);
            for r in 0..n {
                out[(r, c)] = col[r];
            }
        }
        out
    }
}

/// Solves `L z = b` for a dense lower-triangular factor given as a full
/// matrix (used for whitening observation blocks by a covariance factor).
pub fn forward_substitute<F: Real>(l: &Array2<F>, x: &mut [F]) {
    let n = l.nrows();
    assert_eq!(x.len(), n);
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
}

// ---------------------------------------------------------------------------
// Banded block with dense border
// ---------------------------------------------------------------------------

/// Symmetric matrix `[A B; B^T D]` with banded `A` and a dense border.
#[derive(Clone, Debug)]
pub struct Bordered<F> {
    pub band: SymBanded<F>,
    /// `ns x j` coupling block.
    pub coupling: Array2<F>,
    /// `j x j` symmetric corner.
    pub corner: Array2<F>,
}

impl<F: Real> Bordered<F> {
    pub fn zeros(ns: usize, hbw: usize, j: usize) -> Self {
        Bordered {
            band: SymBanded::zeros(ns, hbw),
            coupling: Array2::zeros((ns, j)),
            corner: Array2::zeros((j, j)),
        }
    }

    pub fn dim(&self) -> usize {
        self.band.n() + self.corner.nrows()
    }

    fn ns(&self) -> usize {
        self.band.n()
    }

    pub fn get(&self, a: usize, b: usize) -> F {
        let ns = self.ns();
        match (a < ns, b < ns) {
            (true, true) => self.band.get(a, b),
            (true, false) => self.coupling[(a, b - ns)],
            (false, true) => self.coupling[(b, a - ns)],
            (false, false) => self.corner[(a - ns, b - ns)],
        }
    }

    pub fn add(&mut self, a: usize, b: usize, v: F) {
        let ns = self.ns();
        match (a < ns, b < ns) {
            (true, true) => self.band.add(a, b, v),
            (true, false) => self.coupling[(a, b - ns)] += v,
            (false, true) => self.coupling[(b, a - ns)] += v,
            (false, false) => {
                self.corner[(a - ns, b - ns)] += v;
                if a != b {
                    self.corner[(b - ns, a - ns)] += v;
                }
            }
        }
    }

    pub fn cholesky(&self) -> Result<BorderedChol<F>> {
        let ns = self.ns();
        let j = self.corner.nrows();
        let lb = self.band.cholesky()?;
        // W = L_A^{-1} B, one forward solve per border column.
        let mut w = self.coupling.clone();
        for c in 0..j {
            let mut col: Vec<F> = (0..ns).map(|r| w[(r, c)]).collect();
            lb.forward(&mut col);
            for r in 0..ns {
                w[(r, c)] = col[r];
            }
        }
        // Schur complement D - W^T W.
        let mut schur = self.corner.clone();
        // Elimination noise in the Schur pivots scales with the largest
        // diagonal anywhere in the matrix, not with the Schur entries.
        let mut subtracted = (0..ns)
            .map(|i| self.band.get(i, i).abs())
            .fold(F::zero(), F::max);
        for a in 0..j {
            let mut wtw = F::zero();
            for r in 0..ns {
                wtw += w[(r, a)] * w[(r, a)];
            }
            subtracted = subtracted.max(self.corner[(a, a)].abs()).max(wtw);
        }
        for a in 0..j {
            for b in 0..j {
                let mut s = schur[(a, b)];
                for r in 0..ns {
                    s -= w[(r, a)] * w[(r, b)];
                }
                schur[(a, b)] = s;
            }
        }
        let ls = if j > 0 {
            let floor = spd_pivot_tolerance(subtracted);
            Some(dense_cholesky_with_floor(&schur, floor)?)
        } else {
            None
        };
        Ok(BorderedChol { lb, w, ls })
    }
}

#[derive(Clone, Debug)]
pub struct BorderedChol<F> {
    lb: BandedChol<F>,
    w: Array2<F>,
    ls: Option<DenseChol<F>>,
}

impl<F: Real> BorderedChol<F> {
    pub fn solve_in_place(&self, x: &mut [F]) {
        let ns = self.lb.n();
        let j = self.w.ncols();
        // Forward: L_A z1 = b1; L_S z2 = b2 - W^T z1.
        self.lb.forward(&mut x[..ns]);
        for c in 0..j {
            let mut s = x[ns + c];
            for r in 0..ns {
                s -= self.w[(r, c)] * x[r];
            }
            x[ns + c] = s;
        }
        if let Some(ls) = &self.ls {
            ls.forward(&mut x[ns..]);
            ls.backward(&mut x[ns..]);
        }
        // Backward: L_A^T x1 = z1 - W x2.
        for r in 0..ns {
            let mut s = x[r];
            for c in 0..j {
                s -= self.w[(r, c)] * x[ns + c];
            }
            x[r] = s;
        }
        self.lb.backward(&mut x[..ns]);
    }
}

// ---------------------------------------------------------------------------
// Unified SPD interface
// ---------------------------------------------------------------------------

/// Symmetric positive (semi)definite matrix in either banded-with-border or
/// dense storage. The two variants share one factor/solve interface so the
/// solver layer never branches on storage.
#[derive(Clone, Debug)]
pub enum SpdMatrix<F> {
    Bordered(Bordered<F>),
    Dense(Array2<F>),
}

impl<F: Real> SpdMatrix<F> {
    pub fn dim(&self) -> usize {
        match self {
            SpdMatrix::Bordered(b) => b.dim(),
            SpdMatrix::Dense(m) => m.nrows(),
        }
    }

    pub fn get(&self, a: usize, b: usize) -> F {
        match self {
            SpdMatrix::Bordered(m) => m.get(a, b),
            SpdMatrix::Dense(m) => m[(a, b)],
        }
    }

    pub fn add_sym(&mut self, a: usize, b: usize, v: F) {
        match self {
            SpdMatrix::Bordered(m) => m.add(a, b, v),
            SpdMatrix::Dense(m) => {
                m[(a, b)] += v;
                if a != b {
                    m[(b, a)] += v;
                }
            }
        }
    }

    pub fn to_dense(&self) -> Array2<F> {
        match self {
            SpdMatrix::Bordered(m) => {
                let n = m.dim();
                let mut out = Array2::zeros((n, n));
                for a in 0..n {
                    for b in 0..n {
                        out[(a, b)] = m.get(a, b);
                    }
                }
                out
            }
            SpdMatrix::Dense(m) => m.clone(),
        }
    }

    pub fn mul_vec(&self, x: &Array1<F>) -> Array1<F> {
        match self {
            SpdMatrix::Bordered(m) => {
                let ns = m.band.n();
                let j = m.corner.nrows();
                let x1 = x.slice(ndarray::s![..ns]).to_owned();
                let mut y = Array1::zeros(ns + j);
                let y1 = m.band.mul_vec(&x1);
                for r in 0..ns {
                    let mut s = y1[r];
                    for c in 0..j {
                        s += m.coupling[(r, c)] * x[ns + c];
                    }
                    y[r] = s;
                }
                for c in 0..j {
                    let mut s = F::zero();
                    for r in 0..ns {
                        s += m.coupling[(r, c)] * x[r];
                    }
                    for c2 in 0..j {
                        s += m.corner[(c, c2)] * x[ns + c2];
                    }
                    y[ns + c] = s;
                }
                y
            }
            SpdMatrix::Dense(m) => m.dot(x),
        }
    }

    pub fn mul_dense(&self, x: &Array2<F>) -> Array2<F> {
        match self {
            SpdMatrix::Bordered(_) => {
                let n = self.dim();
                assert_eq!(x.nrows(), n);
                let mut out = Array2::zeros((n, x.ncols()));
                for c in 0..x.ncols() {
                    let col = x.column(c).to_owned();
                    let y = self.mul_vec(&col);
                    out.column_mut(c).assign(&y);
                }
                out
            }
            SpdMatrix::Dense(m) => m.dot(x),
        }
    }

    /// `tr(M G)` for an arbitrary dense `G` of matching dimension.
    pub fn trace_dot(&self, g: &Array2<F>) -> F {
        let n = self.dim();
        assert_eq!(g.nrows(), n);
        match self {
            SpdMatrix::Bordered(m) => {
                let ns = m.band.n();
                let j = m.corner.nrows();
                let mut acc = F::zero();
                let hbw = m.band.half_bandwidth();
                for i in 0..ns {
                    acc += m.band.get(i, i) * g[(i, i)];
                    let hi = (i + hbw).min(ns - 1);
                    for a in (i + 1)..=hi {
                        let v = m.band.get(a, i);
                        if v != F::zero() {
                            acc += v * (g[(i, a)] + g[(a, i)]);
                        }
                    }
                }
                for r in 0..ns {
                    for c in 0..j {
                        let v = m.coupling[(r, c)];
                        acc += v * (g[(ns + c, r)] + g[(r, ns + c)]);
                    }
                }
                for a in 0..j {
                    for b in 0..j {
                        acc += m.corner[(a, b)] * g[(ns + b, ns + a)];
                    }
                }
                acc
            }
            SpdMatrix::Dense(m) => {
                let mut acc = F::zero();
                for a in 0..n {
                    for b in 0..n {
                        acc += m[(a, b)] * g[(b, a)];
                    }
                }
                acc
            }
        }
    }

    pub fn cholesky(&self) -> Result<SpdFactor<F>> {
        match self {
            SpdMatrix::Bordered(m) => Ok(SpdFactor::Bordered(m.cholesky()?)),
            SpdMatrix::Dense(m) => Ok(SpdFactor::Dense(dense_cholesky(m)?)),
        }
    }
}

#[derive(Clone, Debug)]
pub enum SpdFactor<F> {
    Bordered(BorderedChol<F>),
    Dense(DenseChol<F>),
}

impl<F: Real> SpdFactor<F> {
    pub fn solve_in_place(&self, x: &mut [F]) {
        match self {
            SpdFactor::Bordered(f) => f.solve_in_place(x),
            SpdFactor::Dense(f) => f.solve_in_place(x),
        }
    }

    pub fn solve_vec(&self, b: &Array1<F>) -> Array1<F> {
        let mut x: Vec<F> = b.to_vec();
        self.solve_in_place(&mut x);
        Array1::from_vec(x)
    }

    pub fn solve_dense(&self, b: &Array2<F>) -> Array2<F> {
        let mut out = Array2::zeros(b.dim());
        for c in 0..b.ncols() {
            let mut col: Vec<F> = b.column(c).to_vec();
            self.solve_in_place(&mut col);
            for r in 0..b.nrows() {
                out[(r, c)] = col[r];
            }
        }
        out
    }

    /// Inverse by solving against the identity; only sensible for the
    /// moderate dimensions this crate works at.
    pub fn inverse(&self, n: usize) -> Array2<F> {
        let mut out = Array2::zeros((n, n));
        let mut col = vec![F::zero(); n];
        for c in 0..n {
            for v in col.iter_mut() {
                *v = F::zero();
            }
            col[c] = F::one();
            self.solve_in_place(&mut col);
            for r in 0..n {
                out[(r, c)] = col[r];
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Dense LU with partial pivoting (small general systems)
// ---------------------------------------------------------------------------

/// Solves a small dense general system in place, returning the solution.
/// Used for interpolation collocation systems that are not symmetric.
pub fn lu_solve<F: Real>(a: &Array2<F>, b: &Array1<F>) -> Result<Array1<F>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    assert_eq!(n, b.len());
    let mut m = a.clone();
    let mut x: Vec<F> = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        let mut best = m[(col, col)].abs();
        for r in (col + 1)..n {
            let v = m[(r, col)].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if !(best > F::zero()) {
            return Err(Error::DimensionMismatch(format!(
                "singular collocation system at column {col}"
            )));
        }
        if piv != col {
            for c in 0..n {
                let t = m[(col, c)];
                m[(col, c)] = m[(piv, c)];
                m[(piv, c)] = t;
            }
            x.swap(col, piv);
        }
        let d = m[(col, col)];
        for r in (col + 1)..n {
            let f = m[(r, col)] / d;
            if f != F::zero() {
                for c in (col + 1)..n {
                    let v = m[(col, c)];
                    m[(r, c)] -= f * v;
                }
                let t = x[col];
                x[r] -= f * t;
            }
            m[(r, col)] = F::zero();
        }
    }
    for ii in 0..n {
        let i = n - 1 - ii;
        let mut s = x[i];
        for c in (i + 1)..n {
            s -= m[(i, c)] * x[c];
        }
        x[i] = s / m[(i, i)];
    }
    Ok(Array1::from_vec(x))
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition (cyclic Jacobi)
// ---------------------------------------------------------------------------

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations,
/// eigenvalues sorted descending, eigenvectors as columns with the first
/// significant component of each made positive.
pub fn sym_eigen_desc<F: Real>(m: &Array2<F>) -> (Array1<F>, Array2<F>) {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    let mut a = m.clone();
    let mut v = Array2::<F>::eye(n);
    if n > 1 {
        let frob: F = a.iter().map(|&x| x * x).sum::<F>().sqrt();
        let target = F::epsilon() * frob.max(F::min_positive_value());
        for _sweep in 0..100 {
            let mut off = F::zero();
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[(p, q)] * a[(p, q)];
                }
            }
            if off.sqrt() <= target {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq.abs() <= target / F::of_usize(n * n) {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (F::of(2.0) * apq);
                    let t = {
                        let s = if theta >= F::zero() {
                            F::one()
                        } else {
                            -F::one()
                        };
                        s / (theta.abs() + (theta * theta + F::one()).sqrt())
                    };
                    let c = F::one() / (t * t + F::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[(j, j)]
            .partial_cmp(&a[(i, i)])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut vals = Array1::zeros(n);
    let mut vecs = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vals[dst] = a[(src, src)];
        let mut max_abs = F::zero();
        for r in 0..n {
            max_abs = max_abs.max(v[(r, src)].abs());
        }
        let thresh = max_abs * F::epsilon().sqrt();
        let mut flip = false;
        for r in 0..n {
            let x = v[(r, src)];
            if x.abs() > thresh {
                flip = x < F::zero();
                break;
            }
        }
        for r in 0..n {
            let x = v[(r, src)];
            vecs[(r, dst)] = if flip { -x } else { x };
        }
    }
    (vals, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn seeded(seed: u64) -> impl FnMut() -> f64 {
        let mut state = seed ^ 0x9E37_79B9_7F4A_7C15;
        move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64) * (1.0 / ((1u64 << 53) as f64))
        }
    }

    fn random_spd(n: usize, hbw: usize, rng: &mut impl FnMut() -> f64) -> SymBanded<f64> {
        // A = B^T B + n*I restricted to the band, built band-consistently.
        let mut m = SymBanded::zeros(n, hbw);
        for i in 0..n {
            m.add(i, i, 2.0 * n as f64 + rng());
            for d in 1..=hbw.min(n - 1 - i) {
                m.add(i + d, i, rng() - 0.5);
            }
        }
        m
    }

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

    #[test]
    fn banded_cholesky_solves() {
        let mut rng = seeded(7);
        for &(n, hbw) in &[(1usize, 0usize), (5, 2), (12, 3), (30, 7)] {
            let m = random_spd(n, hbw, &mut rng);
            let f = m.cholesky().unwrap();
            let b = Array1::from_vec((0..n).map(|i| (i as f64).sin() + 1.0).collect());
            let mut x: Vec<f64> = b.to_vec();
            f.solve_in_place(&mut x);
            let x = Array1::from_vec(x);
            let r = m.mul_vec(&x) - &b;
            let rel = r.iter().map(|v| v.abs()).fold(0.0, f64::max)
                / b.iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(rel < 1e-12, "residual {rel}");
        }
    }

    #[test]
    fn bordered_matches_dense_inverse() {
        let mut rng = seeded(11);
        let ns = 10;
        let j = 3;
        let mut m = Bordered::zeros(ns, 3, j);
        m.band = random_spd(ns, 3, &mut rng);
        for r in 0..ns {
            for c in 0..j {
                m.coupling[(r, c)] = rng() - 0.5;
            }
        }
        for a in 0..j {
            m.corner[(a, a)] = 5.0 + rng();
            for b in 0..a {
                let v = rng() - 0.5;
                m.corner[(a, b)] = v;
                m.corner[(b, a)] = v;
            }
        }
        let sm = SpdMatrix::Bordered(m);
        let f = sm.cholesky().unwrap();
        let dense = sm.to_dense();
        let inv = gauss_jordan_inverse(&dense);
        let got = f.inverse(ns + j);
        for a in 0..ns + j {
            for b in 0..ns + j {
                assert_abs_diff_eq!(got[(a, b)], inv[(a, b)], epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn not_spd_reported() {
        let mut m = SymBanded::<f64>::zeros(3, 1);
        m.add(0, 0, 1.0);
        m.add(1, 1, 1.0);
        m.add(2, 2, 1.0);
        m.add(1, 0, 2.0); // makes the 2x2 leading minor negative
        match m.cholesky() {
            Err(Error::NotPositiveDefinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn jacobi_reconstructs_and_is_orthogonal() {
        let mut rng = seeded(23);
        for n in [1usize, 2, 5, 9, 17] {
            let mut a = Array2::<f64>::zeros((n, n));
            for i in 0..n {
                for k in 0..=i {
                    let v = rng() - 0.5;
                    a[(i, k)] = v;
                    a[(k, i)] = v;
                }
            }
            let (vals, vecs) = sym_eigen_desc(&a);
            // descending
            for i in 1..n {
                assert!(vals[i - 1] >= vals[i] - 1e-12);
            }
            // V^T V = I
            let vtv = vecs.t().dot(&vecs);
            for i in 0..n {
                for k in 0..n {
                    let want = if i == k { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(vtv[(i, k)], want, epsilon = 1e-12);
                }
            }
            // V diag(vals) V^T = A
            let mut rec = Array2::<f64>::zeros((n, n));
            for i in 0..n {
                for k in 0..n {
                    let mut s = 0.0;
                    for e in 0..n {
                        s += vecs[(i, e)] * vals[e] * vecs[(k, e)];
                    }
                    rec[(i, k)] = s;
                }
            }
            for i in 0..n {
                for k in 0..n {
                    assert_abs_diff_eq!(rec[(i, k)], a[(i, k)], epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn lu_solves_nonsymmetric() {
        let a = ndarray::arr2(&[[0.0, 2.0, 1.0], [1.0, 1.0, 0.5], [3.0, -1.0, 2.0]]);
        let x_true = ndarray::arr1(&[1.0, -2.0, 0.5]);
        let b = a.dot(&x_true);
        let x = lu_solve(&a, &b).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(x[i], x_true[i], epsilon = 1e-13);
        }
    }

    #[test]
    fn probe_tracks_factor_dims() {
        probe::reset();
        let mut rng = seeded(3);
        let m = random_spd(6, 2, &mut rng);
        m.cholesky().unwrap();
        assert_eq!(probe::max_factor_dim(), 6);
        let d = Array2::<f64>::eye(4) * 3.0;
        dense_cholesky(&d).unwrap();
        assert_eq!(probe::max_factor_dim(), 6);
        probe::reset();
        dense_cholesky(&d).unwrap();
        assert_eq!(probe::max_factor_dim(), 4);
    }
}
