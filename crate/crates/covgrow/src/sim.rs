//! Synthetic dataset generation with a recorded truth.
//!
//! Simulated temporal functions are spline coefficient vectors on the
//! model basis (named shapes are collocated onto the basis at the
//! Greville abscissae), so noiseless data can be recovered exactly by an
//! unpenalized fit. Per-individual intercepts are projected onto the
//! identifiable subspace before data are generated; the recorded truth is
//! then the representative the fit can actually reach. Everything is
//! driven by a small deterministic generator so a seed pins the dataset
//! byte for byte across platforms.

use ndarray::{Array1, Array2};

use crate::bspline::SplineBasis;
use crate::design::{
    identifiability_reparam, Covariance, CovariateBasis, CovariateData, Dataset, GTermSpec,
    HTermSpec, Individual, ParametricBasis,
};
use crate::error::{Error, Result};
use crate::linalg::lu_solve;
use crate::scalar::Real;

/// Small linear-congruential generator with a Box-Muller normal sampler;
/// deterministic and platform independent.
#[derive(Clone, Copy, Debug)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Lcg {
            state: seed ^ 0x9E37_79B9_7F4A_7C15,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self
            .state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        self.state
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64) * (1.0 / ((1u64 << 53) as f64))
    }

    /// Standard normal deviate.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform().clamp(1e-12, 1.0 - 1e-12);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Named temporal shapes on the normalized domain coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NamedShape {
    Flat,
    Ramp,
    Sigmoid,
    Peak,
    Parabola,
}

impl NamedShape {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "flat" => Some(NamedShape::Flat),
            "ramp" => Some(NamedShape::Ramp),
            "sigmoid" => Some(NamedShape::Sigmoid),
            "peak" => Some(NamedShape::Peak),
            "parabola" => Some(NamedShape::Parabola),
            _ => None,
        }
    }

    /// Value at the normalized coordinate `s` in `[0, 1]`.
    pub fn value(&self, s: f64) -> f64 {
        match self {
            NamedShape::Flat => 1.0,
            NamedShape::Ramp => 0.2 + 0.6 * s,
            NamedShape::Sigmoid => 1.0 / (1.0 + (-8.0 * (s - 0.5)).exp()),
            NamedShape::Peak => 0.2 + (-((s - 0.4) / 0.22).powi(2)).exp(),
            NamedShape::Parabola => 1.0 - 0.85 * (2.0 * s - 1.0).powi(2),
        }
    }
}

#[derive(Clone, Debug)]
pub enum TruthShape<F> {
    Coefficients(Vec<F>),
    Named(NamedShape),
}

#[derive(Clone, Debug)]
pub enum BetaSpec<F> {
    None,
    Values(Vec<F>),
    /// Independent normals with the given standard deviation for each
    /// per-individual intercept.
    PerIdNormal(F),
}

#[derive(Clone, Debug)]
pub enum CovDistribution<F> {
    Uniform(F, F),
    LogUniform(F, F),
    Normal(F, F),
}

#[derive(Clone, Copy, Debug)]
pub enum SigmaProfile<F> {
    Flat,
    /// Standard deviation grows linearly toward the domain boundaries by
    /// the given factor.
    Boundary(F),
}

#[derive(Clone, Debug)]
pub struct SimDesign<F> {
    pub individuals: usize,
    pub points: usize,
    /// Relative jitter of each measurement time within its grid cell.
    pub time_jitter: F,
    pub noise_sd: F,
    pub sigma_profile: SigmaProfile<F>,
    pub covariates: Vec<(String, CovDistribution<F>)>,
    /// One shape per temporal function (`L + 1` entries).
    pub shapes: Vec<TruthShape<F>>,
    pub beta: BetaSpec<F>,
    pub g_terms: Vec<GTermSpec>,
    pub h_terms: Vec<HTermSpec>,
}

/// True coefficients behind a simulated dataset.
#[derive(Clone, Debug)]
pub struct Truth<F> {
    pub alpha: Array2<F>,
    pub beta: Array1<F>,
}

/// Collocates a named shape onto the basis: solves the interpolation
/// system at the Greville abscissae.
pub fn shape_coefficients<F: Real>(basis: &SplineBasis<F>, shape: NamedShape) -> Result<Vec<F>> {
    let k = basis.num_basis();
    let (a, b) = basis.domain();
    let width = b - a;
    let sites = basis.greville();
    let mut m = Array2::<F>::zeros((k, k));
    let mut rhs = Array1::<F>::zeros(k);
    for (r, &t) in sites.iter().enumerate() {
        let t = t.max(a).min(b);
        let row = basis.dense_row(t, 0)?;
        for c in 0..k {
            m[(r, c)] = row[c];
        }
        let s = ((t - a) / width).to_f64().unwrap_or(0.0);
        rhs[r] = F::of(shape.value(s));
    }
    let sol = lu_solve(&m, &rhs)?;
    Ok(sol.to_vec())
}

/// Generates a dataset and its truth. The same seed always produces the
/// same dataset.
pub fn simulate<F: Real>(
    basis: &SplineBasis<F>,
    design: &SimDesign<F>,
    seed: u64,
) -> Result<(Dataset<F>, Truth<F>)> {
    if design.individuals == 0 || design.points == 0 {
        return Err(Error::Config("simulation needs individuals and points".into()));
    }
    let l_count = design.g_terms.iter().fold(1usize, |acc, t| {
        acc + match t {
            GTermSpec::PerIndividual => design.individuals,
            _ => 1,
        }
    });
    if design.shapes.len() != l_count {
        return Err(Error::Config(format!(
            "{} truth shapes for {} temporal functions",
            design.shapes.len(),
            l_count
        )));
    }
    let mut rng = Lcg::new(seed);
    let (a, b) = basis.domain();
    let width = b - a;
    let k = basis.num_basis();

    // truth coefficients
    let mut alpha = Array2::<F>::zeros((k, l_count));
    for (l, shape) in design.shapes.iter().enumerate() {
        let coeffs = match shape {
            TruthShape::Coefficients(c) => {
                if c.len() != k {
                    return Err(Error::Config(format!(
                        "truth coefficients for function {l} have {} entries, basis has {k}",
                        c.len()
                    )));
                }
                c.clone()
            }
            TruthShape::Named(s) => shape_coefficients(basis, *s)?,
        };
        for (kk, &v) in coeffs.iter().enumerate() {
            alpha[(kk, l)] = v;
        }
    }

    // covariates per individual
    let m_cov = design.covariates.len();
    let mut cov_values = vec![vec![F::zero(); m_cov]; design.individuals];
    for vals in cov_values.iter_mut() {
        for (c, (_, dist)) in design.covariates.iter().enumerate() {
            let u = rng.uniform();
            vals[c] = match dist {
                CovDistribution::Uniform(lo, hi) => *lo + (*hi - *lo) * F::of(u),
                CovDistribution::LogUniform(lo, hi) => {
                    let ln = lo.ln() + (hi.ln() - lo.ln()) * F::of(u);
                    ln.exp()
                }
                CovDistribution::Normal(mu, sd) => *mu + *sd * F::of(rng.normal()),
            };
        }
    }

    // measurement times
    let mut times_all = Vec::with_capacity(design.individuals);
    for _ in 0..design.individuals {
        let mut times = Vec::with_capacity(design.points);
        for p in 0..design.points {
            let base = if design.points == 1 {
                F::of(0.5)
            } else {
                F::of_usize(p) / F::of_usize(design.points - 1)
            };
            let cell = F::one() / F::of_usize(design.points.max(2) - 1);
            let jitter = design.time_jitter * cell * F::of(2.0 * rng.uniform() - 1.0);
            let s = (base + jitter).max(F::zero()).min(F::one());
            times.push(a + width * s);
        }
        times.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
        times_all.push(times);
    }

    // a covariate-only dataset fixes the centering constants
    let covariate_names: Vec<String> =
        design.covariates.iter().map(|(n, _)| n.clone()).collect();
    let shell: Vec<Individual<F>> = (0..design.individuals)
        .map(|i| {
            Individual::new(
                format!("id{i}"),
                times_all[i].clone(),
                vec![F::zero(); design.points],
                Covariance::Diagonal(vec![F::one(); design.points]),
                CovariateData::Fixed(cov_values[i].clone()),
            )
        })
        .collect::<Result<_>>()?;
    let shell = Dataset::new(shell, covariate_names.clone())?;
    let gbasis = CovariateBasis::build(&shell, &design.g_terms)?;
    let pbasis = ParametricBasis::build(&shell, &design.h_terms)?;
    let j = pbasis.term_count();

    // parametric truth, projected onto the identifiable subspace
    let mut beta: Vec<F> = match &design.beta {
        BetaSpec::None => vec![F::zero(); j],
        BetaSpec::Values(v) => {
            if v.len() != j {
                return Err(Error::Config(format!(
                    "{} parametric truth values for {} terms",
                    v.len(),
                    j
                )));
            }
            v.clone()
        }
        BetaSpec::PerIdNormal(sd) => {
            let mut out = Vec::with_capacity(j);
            for _ in 0..j {
                out.push(*sd * F::of(rng.normal()));
            }
            out
        }
    };
    let reparam = identifiability_reparam(&shell, &gbasis, &pbasis);
    beta = reparam.project_beta(&beta);

    // responses
    let mid = a + width * F::of(0.5);
    let half = width * F::of(0.5);
    let mut individuals = Vec::with_capacity(design.individuals);
    for i in 0..design.individuals {
        let cov = CovariateData::Fixed(cov_values[i].clone());
        let g = gbasis.eval_vector(&cov, Some(i), 0);
        let mut responses = Vec::with_capacity(design.points);
        let mut sds = Vec::with_capacity(design.points);
        for (p, &t) in times_all[i].iter().enumerate() {
            let band = basis.eval(t, 0)?;
            let mut mu = F::zero();
            for (off, &bv) in band.values.iter().enumerate() {
                let kk = band.first + off;
                for (l, &gv) in g.iter().enumerate() {
                    mu += bv * alpha[(kk, l)] * gv;
                }
            }
            let h = pbasis.eval_row(&cov, Some(i), p);
            for (jj, &hv) in h.iter().enumerate() {
                mu += hv * beta[jj];
            }
            let profile = match design.sigma_profile {
                SigmaProfile::Flat => F::one(),
                SigmaProfile::Boundary(factor) => {
                    let d = ((t - mid) / half).abs();
                    F::one() + (factor - F::one()) * d
                }
            };
            let sd = design.noise_sd * profile;
            let y = mu + sd * F::of(rng.normal());
            responses.push(y);
            // the recorded column keeps the weighting meaningful for
            // noiseless runs
            sds.push(if sd > F::zero() { sd } else { F::one() });
        }
        individuals.push(Individual::new(
            format!("id{i}"),
            times_all[i].clone(),
            responses,
            Covariance::Diagonal(sds.iter().map(|&s| s * s).collect()),
            CovariateData::Fixed(cov_values[i].clone()),
        )?);
    }
    let dataset = Dataset::new(individuals, covariate_names)?;
    Ok((
        dataset,
        Truth {
            alpha,
            beta: Array1::from_vec(beta),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bspline::make_basis;
    use approx::assert_abs_diff_eq;

    fn design_l1() -> SimDesign<f64> {
        SimDesign {
            individuals: 6,
            points: 12,
            time_jitter: 0.3,
            noise_sd: 0.05,
            sigma_profile: SigmaProfile::Flat,
            covariates: vec![("q".into(), CovDistribution::LogUniform(1.5, 6.0))],
            shapes: vec![
                TruthShape::Named(NamedShape::Parabola),
                TruthShape::Named(NamedShape::Ramp),
            ],
            beta: BetaSpec::PerIdNormal(0.3),
            g_terms: vec![GTermSpec::Log("q".into())],
            h_terms: vec![HTermSpec::PerIndividualIntercept],
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let basis = make_basis(&[0.3, 0.6], (0.0, 1.0), 4).unwrap();
        let d = design_l1();
        let (ds1, t1) = simulate(&basis, &d, 99).unwrap();
        let (ds2, t2) = simulate(&basis, &d, 99).unwrap();
        for (a, b) in ds1.individuals().iter().zip(ds2.individuals()) {
            assert_eq!(a.times, b.times);
            assert_eq!(a.responses, b.responses);
        }
        assert_eq!(t1.alpha, t2.alpha);
        assert_eq!(t1.beta, t2.beta);
        let (ds3, _) = simulate(&basis, &d, 100).unwrap();
        assert_ne!(
            ds1.individuals()[0].responses,
            ds3.individuals()[0].responses
        );
    }

    #[test]
    fn named_shapes_are_collocated_exactly() {
        let basis = make_basis(&[0.25, 0.5, 0.75], (0.0, 2.0), 4).unwrap();
        // the parabola is a quadratic: representable exactly by a cubic
        // spline, so collocation reproduces it everywhere
        let coeffs = shape_coefficients(&basis, NamedShape::Parabola).unwrap();
        for i in 0..50 {
            let t = 2.0 * i as f64 / 49.0;
            let row = basis.dense_row(t, 0).unwrap();
            let got: f64 = row.iter().zip(&coeffs).map(|(r, c)| r * c).sum();
            let want = NamedShape::Parabola.value(t / 2.0);
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn truth_beta_is_identifiable() {
        let basis = make_basis(&[0.5], (0.0, 1.0), 4).unwrap();
        let d = design_l1();
        let (ds, truth) = simulate(&basis, &d, 7).unwrap();
        // orthogonal to the ones vector and the covariate function values
        let gbasis = CovariateBasis::build(&ds, &d.g_terms).unwrap();
        for l in 0..2 {
            let mut dot = 0.0;
            for (i, ind) in ds.individuals().iter().enumerate() {
                let g = gbasis.eval_vector(&ind.covariates, Some(i), 0);
                dot += truth.beta[i] * g[l];
            }
            assert_abs_diff_eq!(dot, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn noise_variance_matches_request() {
        // law of large numbers on the generator itself
        let mut rng = Lcg::new(12345);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let z = rng.normal();
            sum += z;
            sum2 += z * z;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert!((var - 1.0).abs() < 0.02, "var = {var}");
        assert!(mean.abs() < 0.02, "mean = {mean}");
    }

    #[test]
    fn boundary_sigma_profile_increases_outward() {
        let basis = make_basis(&[0.5], (0.0, 1.0), 4).unwrap();
        let mut d = design_l1();
        d.sigma_profile = SigmaProfile::Boundary(3.0);
        d.time_jitter = 0.0;
        let (ds, _) = simulate(&basis, &d, 3).unwrap();
        let ind = &ds.individuals()[0];
        let vars = match &ind.covariance {
            Covariance::Diagonal(v) => v.clone(),
            _ => unreachable!(),
        };
        // edges noisier than the center
        let center = vars[vars.len() / 2];
        assert!(vars[0] > 2.0 * center);
        assert!(*vars.last().unwrap() > 2.0 * center);
    }

    #[test]
    fn shape_count_is_validated() {
        let basis = make_basis(&[0.5], (0.0, 1.0), 4).unwrap();
        let mut d = design_l1();
        d.shapes.pop();
        assert!(matches!(simulate(&basis, &d, 1), Err(Error::Config(_))));
    }
}
