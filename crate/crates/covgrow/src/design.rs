//! Dataset model, covariate and parametric term bases, and assembly of the
//! concatenated penalized regression system.
//!
//! Each individual contributes a block of rows `B_k(t_p) g_l(u, i)` for the
//! nonparametric part plus parametric columns `h_j(t, u, i)`. Coefficients
//! are ordered with the basis index outermost and the function index
//! innermost (`col = (L+1) k + l`), which keeps the cross-product matrix
//! banded when covariates are time independent; parametric columns form a
//! dense border. Time-dependent covariates, dense within-individual
//! covariances, and the linear-end constraint fall back to dense storage.

use ndarray::{Array1, Array2};

use crate::bspline::{
    linear_end_transform, make_basis, penalty_matrix, LinearEndTransform, SplineBasis,
};
use crate::error::{Error, Result};
use crate::linalg::{
    dense_cholesky, forward_substitute, sym_eigen_desc, Bordered, SpdMatrix,
};
use crate::scalar::Real;

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// Within-individual covariance, known up to the global scale sigma^2.
#[derive(Clone, Debug)]
pub enum Covariance<F> {
    /// Per-point variances (the common case).
    Diagonal(Vec<F>),
    /// Full symmetric positive definite matrix.
    Dense(Array2<F>),
}

/// Covariate values for one individual: fixed in time or one row per
/// measurement.
#[derive(Clone, Debug)]
pub enum CovariateData<F> {
    Fixed(Vec<F>),
    TimeVarying(Array2<F>),
}

impl<F: Real> CovariateData<F> {
    pub fn width(&self) -> usize {
        match self {
            CovariateData::Fixed(v) => v.len(),
            CovariateData::TimeVarying(m) => m.ncols(),
        }
    }

    pub fn value(&self, p: usize, col: usize) -> F {
        match self {
            CovariateData::Fixed(v) => v[col],
            CovariateData::TimeVarying(m) => m[(p, col)],
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, CovariateData::Fixed(_))
    }
}

#[derive(Clone, Debug)]
pub struct Individual<F> {
    pub id: String,
    pub times: Vec<F>,
    pub responses: Vec<F>,
    pub covariance: Covariance<F>,
    pub covariates: CovariateData<F>,
}

impl<F: Real> Individual<F> {
    pub fn new(
        id: impl Into<String>,
        times: Vec<F>,
        responses: Vec<F>,
        covariance: Covariance<F>,
        covariates: CovariateData<F>,
    ) -> Result<Self> {
        let id = id.into();
        let n = times.len();
        let fail = |detail: String| Error::InvalidIndividual {
            id: id.clone(),
            detail,
        };
        if n == 0 {
            return Err(fail("no observations".into()));
        }
        if responses.len() != n {
            return Err(fail(format!(
                "{} responses for {} times",
                responses.len(),
                n
            )));
        }
        match &covariance {
            Covariance::Diagonal(v) => {
                if v.len() != n {
                    return Err(fail(format!("{} variances for {} times", v.len(), n)));
                }
                if v.iter().any(|&x| !(x > F::zero())) {
                    return Err(fail("variances must be positive".into()));
                }
            }
            Covariance::Dense(m) => {
                if m.nrows() != n || m.ncols() != n {
                    return Err(fail("covariance shape mismatch".into()));
                }
                dense_cholesky(m).map_err(|_| fail("covariance is not positive definite".into()))?;
            }
        }
        if let CovariateData::TimeVarying(m) = &covariates {
            if m.nrows() != n {
                return Err(fail("covariate rows do not match times".into()));
            }
        }
        Ok(Individual {
            id,
            times,
            responses,
            covariance,
            covariates,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Dataset<F> {
    individuals: Vec<Individual<F>>,
    covariate_names: Vec<String>,
}

impl<F: Real> Dataset<F> {
    pub fn new(individuals: Vec<Individual<F>>, covariate_names: Vec<String>) -> Result<Self> {
        let m = covariate_names.len();
        for ind in &individuals {
            if ind.covariates.width() != m {
                return Err(Error::InvalidIndividual {
                    id: ind.id.clone(),
                    detail: format!(
                        "{} covariates, dataset declares {m}",
                        ind.covariates.width()
                    ),
                });
            }
        }
        for (i, a) in individuals.iter().enumerate() {
            for b in &individuals[i + 1..] {
                if a.id == b.id {
                    return Err(Error::InvalidIndividual {
                        id: a.id.clone(),
                        detail: "duplicate id".into(),
                    });
                }
            }
        }
        Ok(Dataset {
            individuals,
            covariate_names,
        })
    }

    pub fn individuals(&self) -> &[Individual<F>] {
        &self.individuals
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.individuals.iter().position(|i| i.id == id)
    }

    pub fn n_total(&self) -> usize {
        self.individuals.iter().map(|i| i.len()).sum()
    }

    pub fn pooled_times(&self) -> Vec<F> {
        let mut t: Vec<F> = self
            .individuals
            .iter()
            .flat_map(|i| i.times.iter().copied())
            .collect();
        t.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        t
    }
}

// ---------------------------------------------------------------------------
// Covariate basis g_l and parametric basis h_j
// ---------------------------------------------------------------------------

/// Declarative covariate term; `PerIndividual` expands to one indicator
/// per individual at build time.
#[derive(Clone, Debug, PartialEq)]
pub enum GTermSpec {
    Linear(String),
    Quadratic(String),
    Log(String),
    PerIndividual,
}

#[derive(Clone, Debug)]
enum GTerm<F> {
    Linear { col: usize, center: F },
    Quadratic { col: usize, center: F, level: F },
    Log { col: usize, center: F },
    Indicator { individual: usize },
}

/// The covariate functions multiplying the temporal functions. The
/// constant term for the mean curve is implicit; `term_count` is the
/// number of additional functions `L`.
#[derive(Clone, Debug)]
pub struct CovariateBasis<F> {
    terms: Vec<GTerm<F>>,
    labels: Vec<String>,
}

/// Mean over individuals of a covariate column (time-varying data is
/// averaged over every row). Continuous terms are centered about this.
fn covariate_mean<F: Real>(dataset: &Dataset<F>, col: usize, map: impl Fn(F) -> F) -> F {
    let mut sum = F::zero();
    let mut count = 0usize;
    for ind in dataset.individuals() {
        match &ind.covariates {
            CovariateData::Fixed(v) => {
                sum += map(v[col]);
                count += 1;
            }
            CovariateData::TimeVarying(m) => {
                for p in 0..m.nrows() {
                    sum += map(m[(p, col)]);
                    count += 1;
                }
            }
        }
    }
    sum / F::of_usize(count.max(1))
}

impl<F: Real> CovariateBasis<F> {
    pub fn build(dataset: &Dataset<F>, specs: &[GTermSpec]) -> Result<Self> {
        let mut terms = Vec::new();
        let mut labels = Vec::new();
        for spec in specs {
            match spec {
                GTermSpec::Linear(name) => {
                    let col = dataset.covariate_index(name)?;
                    let center = covariate_mean(dataset, col, |x| x);
                    terms.push(GTerm::Linear { col, center });
                    labels.push(format!("lin:{name}"));
                }
                GTermSpec::Quadratic(name) => {
                    let col = dataset.covariate_index(name)?;
                    let center = covariate_mean(dataset, col, |x| x);
                    let level =
                        covariate_mean(dataset, col, |x| (x - center) * (x - center));
                    terms.push(GTerm::Quadratic { col, center, level });
                    labels.push(format!("quad:{name}"));
                }
                GTermSpec::Log(name) => {
                    let col = dataset.covariate_index(name)?;
                    let positive = dataset.individuals().iter().all(|ind| match &ind.covariates {
                        CovariateData::Fixed(v) => v[col] > F::zero(),
                        CovariateData::TimeVarying(m) => {
                            (0..m.nrows()).all(|p| m[(p, col)] > F::zero())
                        }
                    });
                    if !positive {
                        return Err(Error::LogRequiresPositive(name.clone()));
                    }
                    let center = covariate_mean(dataset, col, |x| x.ln());
                    terms.push(GTerm::Log { col, center });
                    labels.push(format!("log:{name}"));
                }
                GTermSpec::PerIndividual => {
                    for (i, ind) in dataset.individuals().iter().enumerate() {
                        terms.push(GTerm::Indicator { individual: i });
                        labels.push(format!("id:{}", ind.id));
                    }
                }
            }
        }
        Ok(CovariateBasis { terms, labels })
    }

    /// Number of covariate functions `L` beyond the implicit constant.
    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn l_count(&self) -> usize {
        self.terms.len() + 1
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// `(1, g_1, ..., g_L)` evaluated for one measurement row.
    pub fn eval_vector(
        &self,
        cov: &CovariateData<F>,
        individual: Option<usize>,
        p: usize,
    ) -> Vec<F> {
        let mut g = Vec::with_capacity(self.terms.len() + 1);
        g.push(F::one());
        for term in &self.terms {
            let v = match term {
                GTerm::Linear { col, center } => cov.value(p, *col) - *center,
                GTerm::Quadratic { col, center, level } => {
                    let d = cov.value(p, *col) - *center;
                    d * d - *level
                }
                GTerm::Log { col, center } => cov.value(p, *col).ln() - *center,
                GTerm::Indicator { individual: i } => {
                    if individual == Some(*i) {
                        F::one()
                    } else {
                        F::zero()
                    }
                }
            };
            g.push(v);
        }
        g
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum HTermSpec {
    Intercept,
    PerIndividualIntercept,
    Linear(String),
}

#[derive(Clone, Debug)]
enum HTerm {
    Intercept,
    IndividualIntercept { individual: usize },
    Linear { col: usize },
}

/// Parametric part of the model: known functions with free coefficients.
#[derive(Clone, Debug)]
pub struct ParametricBasis {
    terms: Vec<HTerm>,
    labels: Vec<String>,
}

impl ParametricBasis {
    pub fn build<F: Real>(dataset: &Dataset<F>, specs: &[HTermSpec]) -> Result<Self> {
        let mut terms = Vec::new();
        let mut labels = Vec::new();
        for spec in specs {
            match spec {
                HTermSpec::Intercept => {
                    terms.push(HTerm::Intercept);
                    labels.push("intercept".to_string());
                }
                HTermSpec::PerIndividualIntercept => {
                    for (i, ind) in dataset.individuals().iter().enumerate() {
                        terms.push(HTerm::IndividualIntercept { individual: i });
                        labels.push(format!("intercept:{}", ind.id));
                    }
                }
                HTermSpec::Linear(name) => {
                    let col = dataset.covariate_index(name)?;
                    terms.push(HTerm::Linear { col });
                    labels.push(format!("lin:{name}"));
                }
            }
        }
        Ok(ParametricBasis { terms, labels })
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    fn per_individual_group(&self) -> Vec<usize> {
        self.terms
            .iter()
            .enumerate()
            .filter(|(_, t)| matches!(t, HTerm::IndividualIntercept { .. }))
            .map(|(j, _)| j)
            .collect()
    }

    fn intercept_cols(&self) -> Vec<usize> {
        self.terms
            .iter()
            .enumerate()
            .filter(|(_, t)| matches!(t, HTerm::Intercept))
            .map(|(j, _)| j)
            .collect()
    }

    pub fn eval_row<F: Real>(
        &self,
        cov: &CovariateData<F>,
        individual: Option<usize>,
        p: usize,
    ) -> Vec<F> {
        self.terms
            .iter()
            .map(|t| match t {
                HTerm::Intercept => F::one(),
                HTerm::IndividualIntercept { individual: i } => {
                    if individual == Some(*i) {
                        F::one()
                    } else {
                        F::zero()
                    }
                }
                HTerm::Linear { col } => cov.value(p, *col),
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Model specification
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryConstraint {
    Free,
    LinearEnds,
}

#[derive(Clone, Debug)]
pub struct ModelSpec<F> {
    pub basis: SplineBasis<F>,
    pub gbasis: CovariateBasis<F>,
    pub pbasis: ParametricBasis,
    pub gamma: usize,
    pub boundary: BoundaryConstraint,
}

/// Interior knot placement rules.
#[derive(Clone, Debug)]
pub enum KnotRule<F> {
    /// Interior knots at quantiles of the pooled measurement times.
    Quantile(usize),
    /// Interior knots at the per-position mean measurement times; requires
    /// every individual to have the same number of observations.
    Typical,
    Explicit(Vec<F>),
}

/// Chooses interior knots from the data and builds the basis.
pub fn basis_from_rule<F: Real>(
    dataset: &Dataset<F>,
    rule: &KnotRule<F>,
    domain: (F, F),
    order: usize,
) -> Result<SplineBasis<F>> {
    let interior: Vec<F> = match rule {
        KnotRule::Explicit(v) => v.clone(),
        KnotRule::Quantile(count) => {
            let pooled = dataset.pooled_times();
            if pooled.is_empty() {
                return Err(Error::EmptyDataset);
            }
            let n = pooled.len();
            let mut ks = Vec::with_capacity(*count);
            for i in 1..=*count {
                let q = F::of_usize(i) / F::of_usize(count + 1);
                let pos = q * F::of_usize(n - 1);
                let lo = pos.floor().to_usize().unwrap_or(0).min(n - 1);
                let hi = (lo + 1).min(n - 1);
                let frac = pos - F::of_usize(lo);
                ks.push(pooled[lo] * (F::one() - frac) + pooled[hi] * frac);
            }
            dedup_strict(ks)
        }
        KnotRule::Typical => {
            let n0 = dataset
                .individuals()
                .first()
                .ok_or(Error::EmptyDataset)?
                .len();
            if dataset.individuals().iter().any(|i| i.len() != n0) {
                return Err(Error::Config(
                    "typical knots need equal observation counts per individual".into(),
                ));
            }
            let nf = F::of_usize(dataset.individuals().len());
            let means: Vec<F> = (0..n0)
                .map(|p| {
                    dataset
                        .individuals()
                        .iter()
                        .map(|i| i.times[p])
                        .sum::<F>()
                        / nf
                })
                .collect();
            let (a, b) = domain;
            dedup_strict(
                means
                    .into_iter()
                    .filter(|&t| t > a && t < b)
                    .collect::<Vec<_>>(),
            )
        }
    };
    make_basis(&interior, domain, order)
}

fn dedup_strict<F: Real>(mut v: Vec<F>) -> Vec<F> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    v.dedup_by(|a, b| *a <= *b);
    v
}

// ---------------------------------------------------------------------------
// Column layout
// ---------------------------------------------------------------------------

/// Column layout of the concatenated system: spline coefficients
/// interleaved (`col = l_count * k + l`), parametric columns appended.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    /// Coefficients per temporal function in system coordinates
    /// (`K`, or `K - 2` under the linear-end constraint).
    pub k: usize,
    /// Coefficients per temporal function in model coordinates.
    pub k_full: usize,
    pub l_count: usize,
    /// Parametric columns in system coordinates.
    pub j: usize,
    /// Parametric columns in model coordinates.
    pub j_model: usize,
    /// Half-bandwidth of the spline block of the cross-product matrix.
    pub hbw: usize,
}

impl Layout {
    pub fn spline_dim(&self) -> usize {
        self.k * self.l_count
    }

    pub fn p_dim(&self) -> usize {
        self.spline_dim() + self.j
    }

    #[inline]
    pub fn col(&self, k: usize, l: usize) -> usize {
        self.l_count * k + l
    }
}

// ---------------------------------------------------------------------------
// Parametric reparameterization for identifiability
// ---------------------------------------------------------------------------

/// Reduction of the parametric coefficients applied when they are
/// confounded with the penalty null space of the temporal functions.
///
/// Per-individual intercepts can absorb any per-individual constant shift,
/// and a constant added to the function `f_l` shifts individual `i` by
/// exactly `g_l(u_i)`. The feasible subspace therefore constrains the
/// intercept group to be orthogonal to every time-constant covariate
/// function value vector (the `l = 0` case is the sum-to-zero
/// constraint); a lone global intercept is dropped outright. The map is
/// stored as an orthonormal `j_model x j_reduced` matrix and the full
/// coefficient vector is recovered after the solve.
#[derive(Clone, Debug)]
pub struct Reparam<F> {
    q: Option<Array2<F>>,
    note: String,
}

impl<F> Default for Reparam<F> {
    fn default() -> Self {
        Reparam {
            q: None,
            note: String::new(),
        }
    }
}

impl<F: Real> Reparam<F> {
    pub fn is_identity(&self) -> bool {
        self.q.is_none()
    }

    pub fn describe(&self) -> &str {
        &self.note
    }

    pub fn reduced_dim(&self, j_model: usize) -> usize {
        self.q.as_ref().map(|q| q.ncols()).unwrap_or(j_model)
    }

    pub fn reduce_row(&self, full: &[F]) -> Vec<F> {
        match &self.q {
            None => full.to_vec(),
            Some(q) => (0..q.ncols())
                .map(|c| (0..full.len()).map(|r| full[r] * q[(r, c)]).sum())
                .collect(),
        }
    }

    pub fn expand(&self, reduced: &[F], j_model: usize) -> Vec<F> {
        match &self.q {
            None => {
                assert_eq!(reduced.len(), j_model);
                reduced.to_vec()
            }
            Some(q) => (0..j_model)
                .map(|r| (0..q.ncols()).map(|c| q[(r, c)] * reduced[c]).sum())
                .collect(),
        }
    }

    /// Orthogonal projection of a full coefficient vector onto the
    /// feasible subspace; identity when no constraint is active.
    pub fn project_beta(&self, beta: &[F]) -> Vec<F> {
        match &self.q {
            None => beta.to_vec(),
            Some(_) => {
                let reduced = self.reduce_row(beta);
                self.expand(&reduced, beta.len())
            }
        }
    }

    /// Maps a full coefficient vector into reduced coordinates, verifying
    /// it lies in the feasible subspace.
    pub fn reduce_beta(&self, beta: &[F]) -> Result<Vec<F>> {
        let reduced = self.reduce_row(beta);
        let back = self.expand(&reduced, beta.len());
        let scale = beta.iter().map(|b| b.abs()).fold(F::zero(), F::max);
        let tol = F::of(1e-8) * scale.max(F::one());
        for (b, r) in beta.iter().zip(&back) {
            if (*b - *r).abs() > tol {
                return Err(Error::DimensionMismatch(
                    "parametric coefficients violate the identifiability constraint".into(),
                ));
            }
        }
        Ok(reduced)
    }
}

/// Builds the reparameterization that restores identifiability when
/// intercept terms are confounded with the unpenalized constants of the
/// temporal functions. Identity when no intercept structure is present.
pub fn identifiability_reparam<F: Real>(
    dataset: &Dataset<F>,
    gbasis: &CovariateBasis<F>,
    pbasis: &ParametricBasis,
) -> Reparam<F> {
    let j = pbasis.term_count();
    let drops = pbasis.intercept_cols();
    let group = pbasis.per_individual_group();
    if drops.is_empty() && group.len() < 2 {
        return Reparam::default();
    }

    // Constraint directions in the full coefficient space.
    let mut constraints: Vec<Vec<F>> = Vec::new();
    let mut constrained_l = 0usize;
    if group.len() >= 2 {
        for l in 0..gbasis.l_count() {
            // Only time-constant covariate functions can be absorbed by
            // the intercepts.
            let mut values = Vec::with_capacity(group.len());
            let mut constant = true;
            for (i, ind) in dataset.individuals().iter().enumerate() {
                let v0 = gbasis.eval_vector(&ind.covariates, Some(i), 0)[l];
                if !ind.covariates.is_fixed() {
                    for p in 1..ind.len() {
                        let vp = gbasis.eval_vector(&ind.covariates, Some(i), p)[l];
                        if (vp - v0).abs() > F::of(1e-12) * (F::one() + v0.abs()) {
                            constant = false;
                            break;
                        }
                    }
                }
                if !constant {
                    break;
                }
                values.push(v0);
            }
            if constant {
                let mut c = vec![F::zero(); j];
                for (gi, &col) in group.iter().enumerate() {
                    c[col] = values[gi];
                }
                constraints.push(c);
                constrained_l += 1;
            }
        }
    }

    // Start from the unit vectors of the kept columns, project out the
    // constraints, and orthonormalize (modified Gram-Schmidt).
    let mut basis: Vec<Vec<F>> = Vec::new();
    let mut ortho_constraints: Vec<Vec<F>> = Vec::new();
    for c in &constraints {
        let mut v = c.clone();
        for oc in &ortho_constraints {
            let dot: F = v.iter().zip(oc).map(|(&a, &b)| a * b).sum();
            for (vi, &oi) in v.iter_mut().zip(oc) {
                *vi -= dot * oi;
            }
        }
        let norm: F = v.iter().map(|&x| x * x).sum::<F>().sqrt();
        if norm > F::of(1e-10) {
            for vi in v.iter_mut() {
                *vi /= norm;
            }
            ortho_constraints.push(v);
        }
    }
    for col in 0..j {
        if drops.contains(&col) {
            continue;
        }
        let mut v = vec![F::zero(); j];
        v[col] = F::one();
        if group.contains(&col) {
            for oc in &ortho_constraints {
                let dot: F = v.iter().zip(oc).map(|(&a, &b)| a * b).sum();
                for (vi, &oi) in v.iter_mut().zip(oc) {
                    *vi -= dot * oi;
                }
            }
        }
        for b in &basis {
            let dot: F = v.iter().zip(b).map(|(&a, &b)| a * b).sum();
            for (vi, &bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
        let norm: F = v.iter().map(|&x| x * x).sum::<F>().sqrt();
        if norm > F::of(1e-8) {
            for vi in v.iter_mut() {
                *vi /= norm;
            }
            basis.push(v);
        }
    }

    let reduced = basis.len();
    let mut q = Array2::zeros((j, reduced));
    for (c, b) in basis.iter().enumerate() {
        for (r, &v) in b.iter().enumerate() {
            q[(r, c)] = v;
        }
    }
    let mut notes = Vec::new();
    if !drops.is_empty() {
        notes.push(format!("dropped {} global intercept column(s)", drops.len()));
    }
    if constrained_l > 0 {
        notes.push(format!(
            "constrained {} per-individual intercepts orthogonal to {} covariate function(s)",
            group.len(),
            constrained_l
        ));
    }
    Reparam {
        q: Some(q),
        note: notes.join("; "),
    }
}

// ---------------------------------------------------------------------------
// Assembled system
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
enum RowStore<F> {
    /// Nonzero spline band per row, all rows sharing one band width.
    Banded { first: Vec<usize>, vals: Array2<F> },
    Dense(Array2<F>),
}

#[derive(Clone, Debug)]
enum CovFactor<F> {
    /// Standard deviations (square roots of normalized variances).
    Diag(Vec<F>),
    /// Lower Cholesky factor of the normalized covariance.
    Dense(Array2<F>),
}

#[derive(Clone, Debug)]
struct IndBlock<F> {
    times: Vec<F>,
    y: Vec<F>,
    rows: RowStore<F>,
    param: Array2<F>,
    whiten: CovFactor<F>,
    raw_sd: Vec<F>,
}

/// The concatenated ridge system: cross-product matrix, right-hand side,
/// penalty blocks, and everything needed to evaluate fits and residuals.
#[derive(Clone, Debug)]
pub struct AssembledSystem<F> {
    model: ModelSpec<F>,
    ids: Vec<String>,
    blocks: Vec<IndBlock<F>>,
    layout: Layout,
    c: SpdMatrix<F>,
    rhs: Array1<F>,
    y_wnorm2: F,
    penalty: Array2<F>,
    penalty_bandwidth: usize,
    reparam: Reparam<F>,
    boundary_z: Option<LinearEndTransform<F>>,
    repaired: bool,
    sigma_scale: F,
    n_total: usize,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AssemblyOptions {
    /// Forces dense storage even when the banded layout applies; used to
    /// cross-check the two code paths.
    pub force_dense: bool,
}

/// Design blocks for one individual in model coordinates: the
/// `n_i x K(L+1)` nonparametric block and the `n_i x J` parametric block.
pub fn individual_design<F: Real>(
    ind: &Individual<F>,
    ind_idx: usize,
    basis: &SplineBasis<F>,
    gbasis: &CovariateBasis<F>,
    pbasis: &ParametricBasis,
) -> Result<(Array2<F>, Array2<F>)> {
    let n = ind.len();
    let l_count = gbasis.l_count();
    let k = basis.num_basis();
    let j = pbasis.term_count();
    if ind.covariates.width() == 0 && gbasis.term_count() > 0 {
        let needs_cols = gbasis.labels().iter().any(|l| !l.starts_with("id:"));
        if needs_cols {
            return Err(Error::DimensionMismatch(format!(
                "individual {} has no covariate columns",
                ind.id
            )));
        }
    }
    let mut nonparam = Array2::zeros((n, k * l_count));
    let mut param = Array2::zeros((n, j));
    // Fixed covariates: evaluate the covariate functions once and tensor
    // them with the temporal band. Time-dependent covariates re-evaluate
    // per measurement.
    let fixed_g = if ind.covariates.is_fixed() {
        Some(gbasis.eval_vector(&ind.covariates, Some(ind_idx), 0))
    } else {
        None
    };
    for p in 0..n {
        let band = basis.eval(ind.times[p], 0)?;
        let g = match &fixed_g {
            Some(g) => g.clone(),
            None => gbasis.eval_vector(&ind.covariates, Some(ind_idx), p),
        };
        for (a, &bv) in band.values.iter().enumerate() {
            let kk = band.first + a;
            for (l, &gv) in g.iter().enumerate() {
                nonparam[(p, l_count * kk + l)] = bv * gv;
            }
        }
        let h = pbasis.eval_row(&ind.covariates, Some(ind_idx), p);
        for (jj, &hv) in h.iter().enumerate() {
            param[(p, jj)] = hv;
        }
    }
    Ok((nonparam, param))
}

pub fn assemble<F: Real>(dataset: &Dataset<F>, model: &ModelSpec<F>) -> Result<AssembledSystem<F>> {
    assemble_with(dataset, model, AssemblyOptions::default())
}

pub fn assemble_with<F: Real>(
    dataset: &Dataset<F>,
    model: &ModelSpec<F>,
    options: AssemblyOptions,
) -> Result<AssembledSystem<F>> {
    if dataset.individuals().is_empty() {
        return Err(Error::EmptyDataset);
    }
    // First try the model as declared; on a singular cross-product matrix,
    // retry with the intercept reparameterization before giving up.
    let plain = build_core(dataset, model, Reparam::default(), options)?;
    match check_identifiable(&plain) {
        Ok(()) => Ok(plain),
        Err(first_failure) => {
            let candidate = identifiability_reparam(dataset, &model.gbasis, &model.pbasis);
            if candidate.is_identity() {
                return Err(unidentifiable_error(&plain, first_failure));
            }
            let mut repaired = build_core(dataset, model, candidate, options)?;
            match check_identifiable(&repaired) {
                Ok(()) => {
                    repaired.repaired = true;
                    Ok(repaired)
                }
                Err(failure) => Err(unidentifiable_error(&repaired, failure)),
            }
        }
    }
}

/// Spectral identifiability check of `C + sum_l S_l`: the smallest
/// eigenvalue must clear `1e-10` of the largest. Storage-independent and
/// robust to the wide dynamic range between data and penalty scales.
fn check_identifiable<F: Real>(sys: &AssembledSystem<F>) -> Result<()> {
    let ones = vec![F::one(); sys.layout.l_count];
    let dense = sys.ridge_matrix(&ones).to_dense();
    let (vals, _) = sym_eigen_desc(&dense);
    let p = dense.nrows();
    let smallest = vals[p - 1];
    let largest = vals[0];
    if smallest > F::of(1e-10) * largest {
        Ok(())
    } else {
        Err(Error::NotPositiveDefinite {
            index: p - 1,
            pivot: format!("{smallest:e} (largest eigenvalue {largest:e})"),
        })
    }
}

fn unidentifiable_error<F: Real>(sys: &AssembledSystem<F>, cause: Error) -> Error {
    // Report the direction along which the system is flat.
    let ones = vec![F::one(); sys.layout.l_count];
    let dense = sys.ridge_matrix(&ones).to_dense();
    let (_, vecs) = sym_eigen_desc(&dense);
    let p = dense.nrows();
    let null = vecs.column(p - 1);
    let mut entries: Vec<(usize, F)> = null
        .iter()
        .enumerate()
        .map(|(i, &v)| (i, v))
        .collect();
    entries.sort_by(|a, b| {
        b.1.abs()
            .partial_cmp(&a.1.abs())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let labels: Vec<String> = entries
        .iter()
        .take(4)
        .map(|(i, v)| format!("{} = {:.3e}", sys.column_label(*i), v))
        .collect();
    Error::Unidentifiable(format!(
        "cross-product matrix plus penalties is singular ({cause}); \
         null direction dominated by {}",
        labels.join(", ")
    ))
}

fn build_core<F: Real>(
    dataset: &Dataset<F>,
    model: &ModelSpec<F>,
    reparam: Reparam<F>,
    options: AssemblyOptions,
) -> Result<AssembledSystem<F>> {
    let k_full = model.basis.num_basis();
    let l_count = model.gbasis.l_count();
    let j_model = model.pbasis.term_count();
    let order = model.basis.order();

    let boundary_z = match model.boundary {
        BoundaryConstraint::Free => None,
        BoundaryConstraint::LinearEnds => Some(linear_end_transform(&model.basis)?),
    };
    let k = boundary_z
        .as_ref()
        .map(|z| z.reduced_dim())
        .unwrap_or(k_full);
    let j = reparam.reduced_dim(j_model);
    let layout = Layout {
        k,
        k_full,
        l_count,
        j,
        j_model,
        hbw: l_count * order - 1,
    };

    // Reduced penalty for one temporal function.
    let pen = penalty_matrix(&model.basis, model.gamma)?;
    let (penalty, penalty_bandwidth) = match &boundary_z {
        Some(z) => (z.reduce_penalty(&pen.matrix), z.reduced_dim().saturating_sub(1)),
        None => (pen.matrix, pen.bandwidth),
    };

    // Normalize the covariance blocks to unit mean diagonal; the global
    // variance scale is carried by sigma^2.
    let mut diag_sum = F::zero();
    let mut diag_count = 0usize;
    for ind in dataset.individuals() {
        match &ind.covariance {
            Covariance::Diagonal(v) => {
                for &x in v {
                    diag_sum += x;
                    diag_count += 1;
                }
            }
            Covariance::Dense(m) => {
                for i in 0..m.nrows() {
                    diag_sum += m[(i, i)];
                    diag_count += 1;
                }
            }
        }
    }
    let sigma_scale = diag_sum / F::of_usize(diag_count.max(1));

    let banded_ok = !options.force_dense
        && boundary_z.is_none()
        && dataset.individuals().iter().all(|i| {
            i.covariates.is_fixed() && matches!(i.covariance, Covariance::Diagonal(_))
        });

    let spline_dim = layout.spline_dim();
    let mut c = if banded_ok {
        SpdMatrix::Bordered(Bordered::zeros(spline_dim, layout.hbw, j))
    } else {
        SpdMatrix::Dense(Array2::zeros((layout.p_dim(), layout.p_dim())))
    };
    let mut rhs = Array1::<F>::zeros(layout.p_dim());
    let mut y_wnorm2 = F::zero();
    let mut blocks = Vec::with_capacity(dataset.individuals().len());
    let mut ids = Vec::with_capacity(dataset.individuals().len());
    let (dom_a, dom_b) = model.basis.domain();

    for (i, ind) in dataset.individuals().iter().enumerate() {
        for &t in &ind.times {
            if t < dom_a || t > dom_b {
                return Err(Error::OutOfDomain(
                    format!("{t} (individual {})", ind.id),
                    format!("{dom_a}"),
                    format!("{dom_b}"),
                ));
            }
        }
        let n = ind.len();
        let band_len = l_count * order;
        let whiten = match &ind.covariance {
            Covariance::Diagonal(v) => {
                CovFactor::Diag(v.iter().map(|&x| (x / sigma_scale).sqrt()).collect())
            }
            Covariance::Dense(m) => {
                let norm = m.mapv(|x| x / sigma_scale);
                let l = dense_lower_factor(&norm).map_err(|_| Error::InvalidIndividual {
                    id: ind.id.clone(),
                    detail: "covariance is not positive definite".into(),
                })?;
                CovFactor::Dense(l)
            }
        };
        let raw_sd: Vec<F> = match &ind.covariance {
            Covariance::Diagonal(v) => v.iter().map(|&x| x.sqrt()).collect(),
            Covariance::Dense(m) => (0..n).map(|r| m[(r, r)].sqrt()).collect(),
        };

        // Fixed covariate vector evaluated once; time-varying per point.
        let fixed_g = if ind.covariates.is_fixed() {
            Some(model.gbasis.eval_vector(&ind.covariates, Some(i), 0))
        } else {
            None
        };

        let mut param = Array2::zeros((n, j));
        let rows = if banded_ok {
            let mut first = vec![0usize; n];
            let mut vals = Array2::zeros((n, band_len));
            let g = fixed_g.as_ref().expect("banded requires fixed covariates");
            for p in 0..n {
                let band = model.basis.eval(ind.times[p], 0)?;
                first[p] = l_count * band.first;
                for (a, &bv) in band.values.iter().enumerate() {
                    for (l, &gv) in g.iter().enumerate() {
                        vals[(p, a * l_count + l)] = bv * gv;
                    }
                }
                let h_full = model.pbasis.eval_row(&ind.covariates, Some(i), p);
                let h_red = reparam.reduce_row(&h_full);
                for (jj, &hv) in h_red.iter().enumerate() {
                    param[(p, jj)] = hv;
                }
            }
            RowStore::Banded { first, vals }
        } else {
            let mut dense = Array2::zeros((n, spline_dim));
            for p in 0..n {
                let band = model.basis.eval(ind.times[p], 0)?;
                let g = match &fixed_g {
                    Some(g) => g.clone(),
                    None => model.gbasis.eval_vector(&ind.covariates, Some(i), p),
                };
                match &boundary_z {
                    None => {
                        for (a, &bv) in band.values.iter().enumerate() {
                            let kk = band.first + a;
                            for (l, &gv) in g.iter().enumerate() {
                                dense[(p, layout.col(kk, l))] = bv * gv;
                            }
                        }
                    }
                    Some(z) => {
                        let mut full = vec![F::zero(); k_full];
                        for (a, &bv) in band.values.iter().enumerate() {
                            full[band.first + a] = bv;
                        }
                        let red = z.reduce_row(&full);
                        for (kk, &bv) in red.iter().enumerate() {
                            for (l, &gv) in g.iter().enumerate() {
                                dense[(p, layout.col(kk, l))] = bv * gv;
                            }
                        }
                    }
                }
                let h_full = model.pbasis.eval_row(&ind.covariates, Some(i), p);
                let h_red = reparam.reduce_row(&h_full);
                for (jj, &hv) in h_red.iter().enumerate() {
                    param[(p, jj)] = hv;
                }
            }
            RowStore::Dense(dense)
        };

        let block = IndBlock {
            times: ind.times.clone(),
            y: ind.responses.clone(),
            rows,
            param,
            whiten,
            raw_sd,
        };
        accumulate_block(&block, &layout, &mut c, &mut rhs, &mut y_wnorm2);
        blocks.push(block);
        ids.push(ind.id.clone());
    }

    Ok(AssembledSystem {
        model: model.clone(),
        ids,
        blocks,
        layout,
        c,
        rhs,
        y_wnorm2,
        penalty,
        penalty_bandwidth,
        reparam,
        boundary_z,
        repaired: false,
        sigma_scale,
        n_total: dataset.n_total(),
    })
}

/// Dense lower Cholesky factor as a full matrix.
fn dense_lower_factor<F: Real>(m: &Array2<F>) -> Result<Array2<F>> {
    let n = m.nrows();
    let mut l = Array2::<F>::zeros((n, n));
    for jcol in 0..n {
        let mut s = m[(jcol, jcol)];
        for kk in 0..jcol {
            let v = l[(jcol, kk)];
            s -= v * v;
        }
        if !(s > F::zero()) {
            return Err(Error::NotPositiveDefinite {
                index: jcol,
                pivot: format!("{s:e}"),
            });
        }
        let d = s.sqrt();
        l[(jcol, jcol)] = d;
        for r in (jcol + 1)..n {
            let mut s = m[(r, jcol)];
            for kk in 0..jcol {
                s -= l[(r, kk)] * l[(jcol, kk)];
            }
            l[(r, jcol)] = s / d;
        }
    }
    Ok(l)
}

fn accumulate_block<F: Real>(
    block: &IndBlock<F>,
    layout: &Layout,
    c: &mut SpdMatrix<F>,
    rhs: &mut Array1<F>,
    y_wnorm2: &mut F,
) {
    let n = block.y.len();
    let spline_dim = layout.spline_dim();
    match (&block.rows, &block.whiten) {
        (RowStore::Banded { first, vals }, CovFactor::Diag(sd)) => {
            let band_len = vals.ncols();
            for p in 0..n {
                let w = F::one() / sd[p];
                let wy = block.y[p] * w;
                *y_wnorm2 += wy * wy;
                let base = first[p];
                for a in 0..band_len {
                    let xa = vals[(p, a)] * w;
                    if xa == F::zero() {
                        continue;
                    }
                    let ca = base + a;
                    rhs[ca] += xa * wy;
                    for b in 0..=a {
                        let xb = vals[(p, b)] * w;
                        if xb != F::zero() {
                            c.add_sym(ca, base + b, xa * xb);
                        }
                    }
                    for jj in 0..layout.j {
                        let hj = block.param[(p, jj)] * w;
                        if hj != F::zero() {
                            c.add_sym(ca, spline_dim + jj, xa * hj);
                        }
                    }
                }
                for jj in 0..layout.j {
                    let hj = block.param[(p, jj)] * w;
                    if hj == F::zero() {
                        continue;
                    }
                    rhs[spline_dim + jj] += hj * wy;
                    for j2 in 0..=jj {
                        let h2 = block.param[(p, j2)] * w;
                        if h2 != F::zero() {
                            c.add_sym(spline_dim + jj, spline_dim + j2, hj * h2);
                        }
                    }
                }
            }
        }
        _ => {
            // Dense path: whiten the full block and take cross products.
            let p_dim = layout.p_dim();
            let mut w = Array2::<F>::zeros((n, p_dim));
            for p in 0..n {
                match &block.rows {
                    RowStore::Dense(d) => {
                        for cidx in 0..spline_dim {
                            w[(p, cidx)] = d[(p, cidx)];
                        }
                    }
                    RowStore::Banded { first, vals } => {
                        for a in 0..vals.ncols() {
                            w[(p, first[p] + a)] = vals[(p, a)];
                        }
                    }
                }
                for jj in 0..layout.j {
                    w[(p, spline_dim + jj)] = block.param[(p, jj)];
                }
            }
            let mut wy: Vec<F> = block.y.clone();
            match &block.whiten {
                CovFactor::Diag(sd) => {
                    for p in 0..n {
                        let iw = F::one() / sd[p];
                        for cidx in 0..p_dim {
                            w[(p, cidx)] *= iw;
                        }
                        wy[p] *= iw;
                    }
                }
                CovFactor::Dense(l) => {
                    for cidx in 0..p_dim {
                        let mut col: Vec<F> = (0..n).map(|p| w[(p, cidx)]).collect();
                        forward_substitute(l, &mut col);
                        for p in 0..n {
                            w[(p, cidx)] = col[p];
                        }
                    }
                    forward_substitute(l, &mut wy);
                }
            }
            for p in 0..n {
                *y_wnorm2 += wy[p] * wy[p];
                for a in 0..p_dim {
                    let xa = w[(p, a)];
                    if xa == F::zero() {
                        continue;
                    }
                    rhs[a] += xa * wy[p];
                    for b in 0..=a {
                        let xb = w[(p, b)];
                        if xb != F::zero() {
                            c.add_sym(a, b, xa * xb);
                        }
                    }
                }
            }
        }
    }
}

impl<F: Real> AssembledSystem<F> {
    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn model(&self) -> &ModelSpec<F> {
        &self.model
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn c(&self) -> &SpdMatrix<F> {
        &self.c
    }

    pub fn rhs(&self) -> &Array1<F> {
        &self.rhs
    }

    pub fn y_weighted_norm2(&self) -> F {
        self.y_wnorm2
    }

    pub fn penalty(&self) -> &Array2<F> {
        &self.penalty
    }

    pub fn sigma_scale(&self) -> F {
        self.sigma_scale
    }

    pub fn was_repaired(&self) -> bool {
        self.repaired
    }

    pub fn reparam(&self) -> &Reparam<F> {
        &self.reparam
    }

    pub fn is_banded(&self) -> bool {
        matches!(self.c, SpdMatrix::Bordered(_))
    }

    pub fn column_label(&self, col: usize) -> String {
        let spline_dim = self.layout.spline_dim();
        if col < spline_dim {
            let k = col / self.layout.l_count;
            let l = col % self.layout.l_count;
            format!("alpha[k={k}, l={l}]")
        } else {
            let reduced = col - spline_dim;
            if self.reparam.is_identity() {
                format!("beta[{}]", self.model.pbasis.labels()[reduced])
            } else {
                format!("beta[reduced column {reduced}]")
            }
        }
    }

    /// Ridge matrix `C + sum_l lambda_l S_l`.
    pub fn ridge_matrix(&self, lambdas: &[F]) -> SpdMatrix<F> {
        let mut m = self.c.clone();
        self.add_penalties(&mut m, lambdas);
        m
    }

    pub fn add_penalties(&self, m: &mut SpdMatrix<F>, lambdas: &[F]) {
        assert_eq!(lambdas.len(), self.layout.l_count);
        let bw = self.penalty_bandwidth;
        for l in 0..self.layout.l_count {
            let lam = lambdas[l];
            if lam == F::zero() {
                continue;
            }
            for k in 0..self.layout.k {
                let lo = k.saturating_sub(bw);
                for k2 in lo..=k {
                    let v = self.penalty[(k, k2)];
                    if v != F::zero() {
                        m.add_sym(self.layout.col(k, l), self.layout.col(k2, l), lam * v);
                    }
                }
            }
        }
    }

    /// `S_l x` with the penalty embedded in block `l`.
    pub fn penalty_apply(&self, l: usize, x: &Array1<F>) -> Array1<F> {
        let mut y = Array1::zeros(self.layout.p_dim());
        for k in 0..self.layout.k {
            let mut acc = F::zero();
            let lo = k.saturating_sub(self.penalty_bandwidth);
            let hi = (k + self.penalty_bandwidth).min(self.layout.k - 1);
            for k2 in lo..=hi {
                acc += self.penalty[(k, k2)] * x[self.layout.col(k2, l)];
            }
            y[self.layout.col(k, l)] = acc;
        }
        y
    }

    /// `sum_l lambda_l S_l x`.
    pub fn sc_apply(&self, lambdas: &[F], x: &Array1<F>) -> Array1<F> {
        let mut y = Array1::zeros(self.layout.p_dim());
        for l in 0..self.layout.l_count {
            if lambdas[l] == F::zero() {
                continue;
            }
            let sl = self.penalty_apply(l, x);
            for i in 0..y.len() {
                y[i] += lambdas[l] * sl[i];
            }
        }
        y
    }

    /// `x^T S_l y`.
    pub fn penalty_quad(&self, l: usize, x: &Array1<F>, y: &Array1<F>) -> F {
        let sx = self.penalty_apply(l, x);
        sx.dot(y)
    }

    /// `tr(S_l M)` for dense `M`.
    pub fn penalty_trace_block(&self, l: usize, m: &Array2<F>) -> F {
        let mut acc = F::zero();
        for k in 0..self.layout.k {
            let lo = k.saturating_sub(self.penalty_bandwidth);
            let hi = (k + self.penalty_bandwidth).min(self.layout.k - 1);
            for k2 in lo..=hi {
                let v = self.penalty[(k, k2)];
                if v != F::zero() {
                    acc += v * m[(self.layout.col(k2, l), self.layout.col(k, l))];
                }
            }
        }
        acc
    }

    /// `S_l M` for dense `M`: rows outside block `l` are zero.
    pub fn penalty_mul_dense(&self, l: usize, m: &Array2<F>) -> Array2<F> {
        let p = self.layout.p_dim();
        assert_eq!(m.nrows(), p);
        let mut out = Array2::zeros((p, m.ncols()));
        for k in 0..self.layout.k {
            let lo = k.saturating_sub(self.penalty_bandwidth);
            let hi = (k + self.penalty_bandwidth).min(self.layout.k - 1);
            let row = self.layout.col(k, l);
            for k2 in lo..=hi {
                let v = self.penalty[(k, k2)];
                if v != F::zero() {
                    let src = self.layout.col(k2, l);
                    for c in 0..m.ncols() {
                        out[(row, c)] += v * m[(src, c)];
                    }
                }
            }
        }
        out
    }

    /// Dense embedding of `S_l`; diagnostics and small-system work only.
    pub fn penalty_dense(&self, l: usize) -> Array2<F> {
        let p = self.layout.p_dim();
        let mut m = Array2::zeros((p, p));
        for k in 0..self.layout.k {
            for k2 in 0..self.layout.k {
                let v = self.penalty[(k, k2)];
                if v != F::zero() {
                    m[(self.layout.col(k, l), self.layout.col(k2, l))] = v;
                }
            }
        }
        m
    }

    /// Fitted values for one individual at its own measurement times.
    pub fn fitted_block(&self, idx: usize, alpha_c: &Array1<F>) -> Vec<F> {
        let block = &self.blocks[idx];
        let n = block.y.len();
        let spline_dim = self.layout.spline_dim();
        let mut out = vec![F::zero(); n];
        for p in 0..n {
            let mut acc = F::zero();
            match &block.rows {
                RowStore::Banded { first, vals } => {
                    for a in 0..vals.ncols() {
                        acc += vals[(p, a)] * alpha_c[first[p] + a];
                    }
                }
                RowStore::Dense(d) => {
                    for cidx in 0..spline_dim {
                        acc += d[(p, cidx)] * alpha_c[cidx];
                    }
                }
            }
            for jj in 0..self.layout.j {
                let h = block.param[(p, jj)];
                if h != F::zero() {
                    acc += h * alpha_c[spline_dim + jj];
                }
            }
            out[p] = acc;
        }
        out
    }

    pub fn block_times(&self, idx: usize) -> &[F] {
        &self.blocks[idx].times
    }

    pub fn block_responses(&self, idx: usize) -> &[F] {
        &self.blocks[idx].y
    }

    pub fn block_raw_sd(&self, idx: usize) -> &[F] {
        &self.blocks[idx].raw_sd
    }

    /// Weighted residual sum of squares `(Y - X a)^T Sigma^{-1} (Y - X a)`.
    pub fn weighted_rss(&self, alpha_c: &Array1<F>) -> F {
        let mut total = F::zero();
        for (idx, block) in self.blocks.iter().enumerate() {
            let fitted = self.fitted_block(idx, alpha_c);
            let mut r: Vec<F> = block
                .y
                .iter()
                .zip(&fitted)
                .map(|(&y, &f)| y - f)
                .collect();
            match &block.whiten {
                CovFactor::Diag(sd) => {
                    for (ri, s) in r.iter_mut().zip(sd) {
                        *ri /= *s;
                    }
                }
                CovFactor::Dense(l) => forward_substitute(l, &mut r),
            }
            total += r.iter().map(|&x| x * x).sum::<F>();
        }
        total
    }

    /// `Y^T Sigma^{-1} (Y - X a)`, reconstructable from assembled pieces.
    pub fn residual_inner(&self, alpha_c: &Array1<F>) -> F {
        self.y_wnorm2 - self.rhs.dot(alpha_c)
    }

    /// Penalized objective at an arbitrary coefficient vector.
    pub fn objective(&self, alpha_c: &Array1<F>, lambdas: &[F]) -> F {
        let mut obj = self.weighted_rss(alpha_c);
        for l in 0..self.layout.l_count {
            obj += lambdas[l] * self.penalty_quad(l, alpha_c, alpha_c);
        }
        obj
    }

    /// Design row in system coordinates for a prediction point.
    pub fn design_row(
        &self,
        t: F,
        cov: &CovariateData<F>,
        individual: Option<usize>,
        p: usize,
    ) -> Result<Array1<F>> {
        let band = self.model.basis.eval(t, 0)?;
        let g = self.model.gbasis.eval_vector(cov, individual, p);
        let mut row = Array1::zeros(self.layout.p_dim());
        match &self.boundary_z {
            None => {
                for (a, &bv) in band.values.iter().enumerate() {
                    let kk = band.first + a;
                    for (l, &gv) in g.iter().enumerate() {
                        row[self.layout.col(kk, l)] = bv * gv;
                    }
                }
            }
            Some(z) => {
                let mut full = vec![F::zero(); self.layout.k_full];
                for (a, &bv) in band.values.iter().enumerate() {
                    full[band.first + a] = bv;
                }
                let red = z.reduce_row(&full);
                for (kk, &bv) in red.iter().enumerate() {
                    for (l, &gv) in g.iter().enumerate() {
                        row[self.layout.col(kk, l)] = bv * gv;
                    }
                }
            }
        }
        let h_full = self.model.pbasis.eval_row(cov, individual, p);
        let h_red = self.reparam.reduce_row(&h_full);
        let spline_dim = self.layout.spline_dim();
        for (jj, &hv) in h_red.iter().enumerate() {
            row[spline_dim + jj] = hv;
        }
        Ok(row)
    }

    /// Expands a system coefficient vector into the model-coordinate
    /// spline matrix (`K x (L+1)`) and parametric vector.
    pub fn expand_coefficients(&self, alpha_c: &Array1<F>) -> (Array2<F>, Array1<F>) {
        let lay = self.layout;
        let mut alpha = Array2::zeros((lay.k_full, lay.l_count));
        for l in 0..lay.l_count {
            let reduced =
                Array1::from_vec((0..lay.k).map(|k| alpha_c[lay.col(k, l)]).collect());
            match &self.boundary_z {
                None => {
                    for k in 0..lay.k_full {
                        alpha[(k, l)] = reduced[k];
                    }
                }
                Some(z) => {
                    let full = z.expand(&reduced);
                    for k in 0..lay.k_full {
                        alpha[(k, l)] = full[k];
                    }
                }
            }
        }
        let reduced_beta: Vec<F> = (0..lay.j)
            .map(|jj| alpha_c[lay.spline_dim() + jj])
            .collect();
        let beta = Array1::from_vec(self.reparam.expand(&reduced_beta, lay.j_model));
        (alpha, beta)
    }

    /// Maps model-coordinate coefficients into system coordinates;
    /// fails if they violate an active constraint.
    pub fn reduce_coefficients(&self, alpha: &Array2<F>, beta: &Array1<F>) -> Result<Array1<F>> {
        let lay = self.layout;
        if alpha.nrows() != lay.k_full || alpha.ncols() != lay.l_count {
            return Err(Error::DimensionMismatch(format!(
                "alpha is {}x{}, expected {}x{}",
                alpha.nrows(),
                alpha.ncols(),
                lay.k_full,
                lay.l_count
            )));
        }
        if beta.len() != lay.j_model {
            return Err(Error::LambdaCount {
                got: beta.len(),
                expected: lay.j_model,
            });
        }
        if self.boundary_z.is_some() {
            return Err(Error::DimensionMismatch(
                "cannot inject coefficients under the linear-end constraint".into(),
            ));
        }
        let mut out = Array1::zeros(lay.p_dim());
        for k in 0..lay.k {
            for l in 0..lay.l_count {
                out[lay.col(k, l)] = alpha[(k, l)];
            }
        }
        let beta_vec: Vec<F> = beta.to_vec();
        let reduced = self.reparam.reduce_beta(&beta_vec)?;
        for (jj, v) in reduced.into_iter().enumerate() {
            out[lay.spline_dim() + jj] = v;
        }
        Ok(out)
    }
}
