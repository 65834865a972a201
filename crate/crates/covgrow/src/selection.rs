//! Data-driven choice of the smoothing parameters.
//!
//! Two families of criteria are implemented. Generalized cross-validation
//! scores a fit by its weighted residual sum of squares inflated by the
//! effective degrees of freedom. The risk route estimates the expected
//! coefficient loss directly: its half-gradient in each smoothing
//! parameter is a weighted goodness-of-fit statistic, and setting it to
//! zero yields a fixed-point update that is iterated cyclically. Minima
//! are searched in log lambda; the profiles are often shallow, so
//! absolute-lambda tolerances would be meaningless.

use ndarray::{Array1, Array2};

use crate::design::AssembledSystem;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::solver::{Diagnostics, FitResult, Ridge};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Weight matrix of the risk functional.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QWeight {
    /// `Q = C`: predictive risk.
    PredictiveC,
    /// `Q = sum_l S_l`: risk in the penalized derivative.
    PenaltySum,
}

#[derive(Clone, Copy, Debug)]
pub struct LambdaGrid<F> {
    pub min: F,
    pub max: F,
    pub points_per_decade: usize,
}

impl<F: Real> Default for LambdaGrid<F> {
    fn default() -> Self {
        LambdaGrid {
            min: F::of(1e-8),
            max: F::of(1e8),
            points_per_decade: 4,
        }
    }
}

impl<F: Real> LambdaGrid<F> {
    /// Log-spaced grid, inclusive of both ends.
    pub fn points(&self) -> Vec<F> {
        let lo = self.min.log10();
        let hi = self.max.log10();
        let steps = ((hi - lo) * F::of_usize(self.points_per_decade))
            .round()
            .to_usize()
            .unwrap_or(0);
        let mut out = Vec::with_capacity(steps + 1);
        for i in 0..=steps {
            let e = lo + (hi - lo) * F::of_usize(i) / F::of_usize(steps.max(1));
            out.push(F::of(10.0).powf(e));
        }
        out
    }

    /// Log-grid spacing in decades.
    pub fn step_decades(&self) -> F {
        F::one() / F::of_usize(self.points_per_decade)
    }
}

#[derive(Clone, Debug)]
pub enum Sigma2Spec<F> {
    Known(F),
    Estimate,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SelectionMethod<F> {
    GcvGrid,
    RiskFixedPoint,
    /// Fixed point with the cross-penalty coupling term dropped.
    RiskFixedPointSimplified,
    /// No selection: fit at the given smoothing vector.
    Fixed(Vec<F>),
}

#[derive(Clone, Debug)]
pub struct SelectionConfig<F> {
    pub method: SelectionMethod<F>,
    pub q: QWeight,
    pub grid: LambdaGrid<F>,
    /// Ties `lambda_1 = ... = lambda_L`, leaving `lambda_0` free.
    pub tie_lambdas: bool,
    /// Relative lambda change declaring the fixed point converged.
    pub tol: F,
    pub max_iter: usize,
    pub sigma2: Sigma2Spec<F>,
    /// Fall back to the GCV grid when the fixed point does not converge.
    pub fallback: bool,
    /// Starting point for the fixed point; default is the mean diagonal
    /// of the cross-product matrix on every coordinate.
    pub initial: Option<Vec<F>>,
}

impl<F: Real> Default for SelectionConfig<F> {
    fn default() -> Self {
        SelectionConfig {
            method: SelectionMethod::GcvGrid,
            q: QWeight::PredictiveC,
            grid: LambdaGrid::default(),
            tie_lambdas: false,
            tol: F::of(1e-4),
            max_iter: 100,
            sigma2: Sigma2Spec::Estimate,
            fallback: true,
            initial: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Scores
// ---------------------------------------------------------------------------

struct Eval<F> {
    wrss: F,
    trace: F,
}

fn evaluate<F: Real>(system: &AssembledSystem<F>, lambdas: &[F]) -> Result<Eval<F>> {
    let ridge = Ridge::new(system, lambdas)?;
    let alpha = ridge.coefficients();
    let wrss = system.weighted_rss(&alpha);
    let trace = ridge.influence_trace();
    Ok(Eval { wrss, trace })
}

/// Generalized cross-validation score
/// `V = (wrss / N) / (1 - tr A / N)^2`.
pub fn gcv_score<F: Real>(system: &AssembledSystem<F>, lambdas: &[F]) -> Result<F> {
    let n = F::of_usize(system.n_total());
    let ev = evaluate(system, lambdas)?;
    let denom = F::one() - ev.trace / n;
    if !(denom > F::zero()) {
        return Err(Error::GcvDegenerate {
            trace: format!("{}", ev.trace),
            n: system.n_total(),
        });
    }
    Ok(ev.wrss / n / (denom * denom))
}

/// Variance scale estimated from the unpenalized fit:
/// weighted residual sum of squares over `N_T - tr A(0)`.
pub fn sigma2_hat<F: Real>(system: &AssembledSystem<F>) -> Result<F> {
    let n = system.n_total();
    let p = system.layout().p_dim();
    if n <= p {
        return Err(Error::SigmaDenominator(format!(
            "{}",
            F::of_usize(n) - F::of_usize(p)
        )));
    }
    let zeros = vec![F::zero(); system.layout().l_count];
    let ev = evaluate(system, &zeros)?;
    let denom = F::of_usize(n) - ev.trace;
    if !(denom > F::zero()) {
        return Err(Error::SigmaDenominator(format!("{denom}")));
    }
    Ok(ev.wrss / denom)
}

fn check_truth_len<F: Real>(system: &AssembledSystem<F>, alpha_true: &Array1<F>) -> Result<()> {
    if alpha_true.len() != system.layout().p_dim() {
        return Err(Error::DimensionMismatch(format!(
            "truth vector has {} entries, system has {}",
            alpha_true.len(),
            system.layout().p_dim()
        )));
    }
    Ok(())
}

fn q_apply<F: Real>(system: &AssembledSystem<F>, q: QWeight, v: &Array1<F>) -> Array1<F> {
    match q {
        QWeight::PredictiveC => system.c().mul_vec(v),
        QWeight::PenaltySum => {
            let mut out = Array1::zeros(v.len());
            for l in 0..system.layout().l_count {
                let sv = system.penalty_apply(l, v);
                for i in 0..out.len() {
                    out[i] += sv[i];
                }
            }
            out
        }
    }
}

fn q_trace_dot<F: Real>(system: &AssembledSystem<F>, q: QWeight, m: &Array2<F>) -> F {
    match q {
        QWeight::PredictiveC => system.c().trace_dot(m),
        QWeight::PenaltySum => (0..system.layout().l_count)
            .map(|l| system.penalty_trace_block(l, m))
            .sum(),
    }
}

/// Exact risk `tr(Q E[(a_hat - a)(a_hat - a)^T])` for a known truth:
/// variance plus squared-bias contributions.
pub fn risk<F: Real>(
    system: &AssembledSystem<F>,
    lambdas: &[F],
    q: QWeight,
    alpha_true: &Array1<F>,
    sigma2: F,
) -> Result<F> {
    check_truth_len(system, alpha_true)?;
    let ridge = Ridge::new(system, lambdas)?;
    let g = ridge.g_dense();
    let cg = system.c().mul_dense(&g);
    let gcg = g.dot(&cg);
    let u = ridge
        .factor
        .solve_vec(&system.sc_apply(lambdas, alpha_true));
    Ok(sigma2 * q_trace_dot(system, q, &gcg) + u.dot(&q_apply(system, q, &u)))
}

/// Half-gradient of the exact risk in each smoothing parameter.
pub fn risk_gradient<F: Real>(
    system: &AssembledSystem<F>,
    lambdas: &[F],
    q: QWeight,
    alpha_true: &Array1<F>,
    sigma2: F,
) -> Result<Vec<F>> {
    check_truth_len(system, alpha_true)?;
    let ridge = Ridge::new(system, lambdas)?;
    let g = ridge.g_dense();
    let cg = system.c().mul_dense(&g);
    let gcg = g.dot(&cg);
    let u = ridge
        .factor
        .solve_vec(&system.sc_apply(lambdas, alpha_true));
    let gca = ridge.factor.solve_vec(&system.c().mul_vec(alpha_true));
    let l_count = system.layout().l_count;
    let mut out = Vec::with_capacity(l_count);
    for l in 0..l_count {
        // bias part: u^T Q G S_l (G C a)
        let a3 = system.penalty_apply(l, &gca);
        let a4 = ridge.factor.solve_vec(&a3);
        let bias_term = u.dot(&q_apply(system, q, &a4));
        // variance part: tr(Q G S_l G C G)
        let x = system.penalty_mul_dense(l, &gcg);
        let gx = ridge.factor.solve_dense(&x);
        let var_term = q_trace_dot(system, q, &gx);
        out.push(bias_term - sigma2 * var_term);
    }
    Ok(out)
}

/// Unbiased estimate of the predictive risk (up to a constant):
/// `wrss + 2 sigma^2 tr A - sigma^2 N_T`.
pub fn risk_hat<F: Real>(system: &AssembledSystem<F>, lambdas: &[F], sigma2: F) -> Result<F> {
    let ev = evaluate(system, lambdas)?;
    Ok(ev.wrss + F::of(2.0) * sigma2 * ev.trace - sigma2 * F::of_usize(system.n_total()))
}

/// Half-gradient of the empirical risk estimate, restricted to the
/// predictive weight: `(S_c a)^T G (S_l a) - sigma^2 tr(G S_l G C)`
/// per smoothing parameter. A zero vector characterizes the selected
/// smoothing.
pub fn risk_hat_gradient<F: Real>(
    system: &AssembledSystem<F>,
    lambdas: &[F],
    sigma2: F,
) -> Result<Vec<F>> {
    let ridge = Ridge::new(system, lambdas)?;
    let alpha = ridge.coefficients();
    let g = ridge.g_dense();
    let cg = system.c().mul_dense(&g);
    let gcg = g.dot(&cg);
    let sc_a = system.sc_apply(lambdas, &alpha);
    let l_count = system.layout().l_count;
    let mut out = Vec::with_capacity(l_count);
    for l in 0..l_count {
        let v = system.penalty_apply(l, &alpha);
        let w = ridge.factor.solve_vec(&v);
        let quad = sc_a.dot(&w);
        let tr = system.penalty_trace_block(l, &gcg);
        out.push(quad - sigma2 * tr);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Fixed-point iteration
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct FixedPointResult<F> {
    pub lambdas: Vec<F>,
    pub iterations: usize,
    pub converged: bool,
    pub path: Vec<Vec<F>>,
    pub notes: Vec<String>,
}

fn lambda_groups(l_count: usize, tie: bool) -> Vec<Vec<usize>> {
    if tie && l_count > 1 {
        vec![vec![0], (1..l_count).collect()]
    } else {
        (0..l_count).map(|l| vec![l]).collect()
    }
}

fn expand_groups<F: Real>(groups: &[Vec<usize>], values: &[F], l_count: usize) -> Vec<F> {
    let mut out = vec![F::zero(); l_count];
    for (g, &v) in groups.iter().zip(values) {
        for &l in g {
            out[l] = v;
        }
    }
    out
}

/// Cyclic fixed-point iteration on the stationarity condition of the
/// empirical risk estimate. Each sweep updates one smoothing group from
/// the trace and quadratic-form statistics at the current fit, clamping
/// to the grid bounds; a vanishing denominator means the data carry no
/// signal in that penalty and pins the group at the grid maximum.
pub fn lambda_fixed_point<F: Real>(
    system: &AssembledSystem<F>,
    config: &SelectionConfig<F>,
    sigma2: F,
) -> Result<FixedPointResult<F>> {
    let l_count = system.layout().l_count;
    let simplified = matches!(config.method, SelectionMethod::RiskFixedPointSimplified);
    let groups = lambda_groups(l_count, config.tie_lambdas);
    let p = system.layout().p_dim();

    // Default start: the mean diagonal of C on every coordinate, which is
    // the unit smoothing after standardizing C to unit average diagonal.
    let mut lambdas: Vec<F> = match &config.initial {
        Some(init) => {
            if init.len() != l_count {
                return Err(Error::LambdaCount {
                    got: init.len(),
                    expected: l_count,
                });
            }
            init.clone()
        }
        None => {
            let mean_diag =
                (0..p).map(|i| system.c().get(i, i)).sum::<F>() / F::of_usize(p);
            vec![mean_diag; l_count]
        }
    };
    for l in lambdas.iter_mut() {
        *l = l.max(config.grid.min).min(config.grid.max);
    }

    // Scale against which the curvature quadratic forms are judged to be
    // numerically zero (data exactly in the penalty null space).
    let penalty_frob: F = {
        let s = system.penalty();
        s.iter().map(|&x| x * x).sum::<F>().sqrt()
    };

    let mut notes = Vec::new();
    let mut path = vec![lambdas.clone()];
    let mut converged = false;
    let mut iterations = 0;
    let mut clamped = vec![false; groups.len()];
    let mut pinned = vec![false; groups.len()];

    for iter in 0..config.max_iter {
        iterations = iter + 1;
        let previous = lambdas.clone();
        for (gi, group) in groups.iter().enumerate() {
            let ridge = Ridge::new(system, &lambdas)?;
            let alpha = ridge.coefficients();
            let g = ridge.g_dense();
            let cg = system.c().mul_dense(&g);
            let gcg = g.dot(&cg);
            // quadratic forms q[l2][l] = (S_l2 a)^T G (S_l a)
            let vs: Vec<Array1<F>> = (0..l_count)
                .map(|l| system.penalty_apply(l, &alpha))
                .collect();
            let ws: Vec<Array1<F>> = vs.iter().map(|v| ridge.factor.solve_vec(v)).collect();
            let traces: Vec<F> = (0..l_count)
                .map(|l| system.penalty_trace_block(l, &gcg))
                .collect();
            let mut numerator = F::zero();
            let mut denominator = F::zero();
            let mut signal = F::zero();
            for &l in group {
                numerator += sigma2 * traces[l];
                if !simplified {
                    for l2 in 0..l_count {
                        if !group.contains(&l2) {
                            numerator -= lambdas[l2] * vs[l2].dot(&ws[l]);
                        }
                    }
                }
                for &l2 in group {
                    denominator += vs[l2].dot(&ws[l]);
                }
                signal += vs[l].dot(&vs[l]);
            }
            let alpha_norm = alpha.dot(&alpha).sqrt();
            let null_thresh = F::of(10.0) * F::epsilon() * penalty_frob * alpha_norm;
            let current = lambdas[group[0]];
            let at_max = current >= config.grid.max * F::of(1.0 - 1e-12);
            let new_lambda = if pinned[gi] {
                config.grid.max
            } else if signal.sqrt() <= null_thresh || !(denominator > F::zero()) {
                notes.push(format!(
                    "group {gi}: null signal in the penalty, smoothing pinned at the grid maximum"
                ));
                pinned[gi] = true;
                clamped[gi] = true;
                config.grid.max
            } else {
                let raw = numerator / denominator;
                if at_max && !(raw > config.grid.max * F::of(1e-4)) {
                    // At the grid maximum every statistic in the update has
                    // collapsed towards zero and a many-decade jump is
                    // numerical noise, not an interior pull: the risk
                    // minimum sits on the boundary.
                    notes.push(format!(
                        "group {gi}: risk minimum at the smoothing grid maximum"
                    ));
                    pinned[gi] = true;
                    clamped[gi] = true;
                    config.grid.max
                } else {
                    let clipped = raw.max(config.grid.min).min(config.grid.max);
                    clamped[gi] = clipped != raw;
                    clipped
                }
            };

            for &l in group {
                lambdas[l] = new_lambda;
            }
        }
        path.push(lambdas.clone());
        let rel_change = previous
            .iter()
            .zip(&lambdas)
            .map(|(&a, &b)| (a - b).abs() / a.max(F::min_positive_value()))
            .fold(F::zero(), F::max);
        if rel_change < config.tol {
            // The smoothing has settled; accept once the interior
            // coordinates are also stationary points of the risk
            // estimate, otherwise keep sweeping.
            let grad = risk_hat_gradient(system, &lambdas, sigma2)?;
            let ridge = Ridge::new(system, &lambdas)?;
            let g = ridge.g_dense();
            let cg = system.c().mul_dense(&g);
            let gcg = g.dot(&cg);
            let mut stationary = true;
            for (gi, group) in groups.iter().enumerate() {
                if clamped[gi] {
                    continue;
                }
                for &l in group {
                    let scale = sigma2 * system.penalty_trace_block(l, &gcg);
                    if grad[l].abs() > F::of(1e-6) * scale.abs().max(F::min_positive_value()) {
                        stationary = false;
                    }
                }
            }
            if stationary {
                converged = true;
                break;
            }
        }
    }

    if !converged {
        notes.push(format!(
            "fixed point did not converge within {} iterations",
            config.max_iter
        ));
    }

    Ok(FixedPointResult {
        lambdas,
        iterations,
        converged,
        path,
        notes,
    })
}

// ---------------------------------------------------------------------------
// Grid scan
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ScanPoint<F> {
    pub lambdas: Vec<F>,
    pub gcv: Option<F>,
    pub risk_hat: Option<F>,
    pub trace: F,
}

/// Evaluates the selection criteria over the tensor grid of smoothing
/// groups (at most two free groups). Points where the unpenalized model
/// is degenerate report no score.
pub fn grid_scan<F: Real>(
    system: &AssembledSystem<F>,
    config: &SelectionConfig<F>,
    sigma2: Option<F>,
) -> Result<Vec<ScanPoint<F>>> {
    let l_count = system.layout().l_count;
    let groups = lambda_groups(l_count, config.tie_lambdas);
    if groups.len() > 2 {
        return Err(Error::Config(format!(
            "grid scan supports at most two free smoothing groups, got {} \
             (tie the non-mean smoothing parameters)",
            groups.len()
        )));
    }
    let axis = config.grid.points();
    let n = F::of_usize(system.n_total());
    let mut out = Vec::new();
    let mut scan_point = |values: &[F]| -> Result<()> {
        let lambdas = expand_groups(&groups, values, l_count);
        let ev = evaluate(system, &lambdas)?;
        let denom = F::one() - ev.trace / n;
        let gcv = if denom > F::zero() {
            Some(ev.wrss / n / (denom * denom))
        } else {
            None
        };
        let risk_hat = sigma2
            .map(|s2| ev.wrss + F::of(2.0) * s2 * ev.trace - s2 * n);
        out.push(ScanPoint {
            lambdas,
            gcv,
            risk_hat,
            trace: ev.trace,
        });
        Ok(())
    };
    match groups.len() {
        1 => {
            for &a in &axis {
                scan_point(&[a])?;
            }
        }
        _ => {
            for &a in &axis {
                for &b in &axis {
                    scan_point(&[a, b])?;
                }
            }
        }
    }
    Ok(out)
}

/// Smallest lambda attaining the minimal GCV within `1e-12` relative.
fn scan_minimizer<F: Real>(scan: &[ScanPoint<F>]) -> Result<Vec<F>> {
    let mut min_v: Option<F> = None;
    for pt in scan {
        if let Some(v) = pt.gcv {
            min_v = Some(match min_v {
                None => v,
                Some(m) => m.min(v),
            });
        }
    }
    let min_v = min_v.ok_or_else(|| Error::GcvDegenerate {
        trace: "every grid point".into(),
        n: 0,
    })?;
    let tol = min_v.abs() * F::of(1e-12);
    for pt in scan {
        if let Some(v) = pt.gcv {
            if v <= min_v + tol {
                return Ok(pt.lambdas.clone());
            }
        }
    }
    unreachable!("minimum exists but no point attains it");
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

/// Full selection pipeline: resolves the variance scale, picks the
/// smoothing vector by the configured method, solves at the selection,
/// and packages coefficients with diagnostics.
pub fn select<F: Real>(
    system: &AssembledSystem<F>,
    config: &SelectionConfig<F>,
) -> Result<FitResult<F>> {
    let l_count = system.layout().l_count;
    let sigma2 = match &config.sigma2 {
        Sigma2Spec::Known(v) => {
            if !(*v > F::zero()) {
                return Err(Error::InvalidSigma(format!("{v}")));
            }
            *v
        }
        Sigma2Spec::Estimate => sigma2_hat(system)?,
    };

    let mut notes: Vec<String> = Vec::new();
    if system.was_repaired() {
        notes.push(format!("identifiability: {}", system.reparam().describe()));
    }
    let mut path: Vec<Vec<F>> = Vec::new();
    let mut iterations = 0usize;
    let mut converged = true;
    let mut method_name;

    let lambdas: Vec<F> = match &config.method {
        SelectionMethod::Fixed(v) => {
            method_name = "fixed".to_string();
            if v.len() != l_count {
                return Err(Error::LambdaCount {
                    got: v.len(),
                    expected: l_count,
                });
            }
            v.clone()
        }
        SelectionMethod::GcvGrid => {
            method_name = "gcv-grid".to_string();
            let scan = grid_scan(system, config, Some(sigma2))?;
            scan_minimizer(&scan)?
        }
        SelectionMethod::RiskFixedPoint | SelectionMethod::RiskFixedPointSimplified => {
            method_name = match config.method {
                SelectionMethod::RiskFixedPointSimplified => {
                    "risk-fixed-point-simplified".to_string()
                }
                _ => "risk-fixed-point".to_string(),
            };
            let fp = lambda_fixed_point(system, config, sigma2)?;
            iterations = fp.iterations;
            path = fp.path.clone();
            notes.extend(fp.notes.clone());
            if fp.converged {
                fp.lambdas
            } else if config.fallback {
                notes.push("falling back to the GCV grid".to_string());
                method_name.push_str("+gcv-fallback");
                converged = true;
                let scan = grid_scan(system, config, Some(sigma2))?;
                scan_minimizer(&scan)?
            } else {
                return Err(Error::SelectionDidNotConverge(config.max_iter));
            }
        }
    };

    let ridge = Ridge::new(system, &lambdas)?;
    let coefficients = ridge.coefficients();
    let wrss = system.weighted_rss(&coefficients);
    let trace = ridge.influence_trace();
    let n = F::of_usize(system.n_total());
    let denom = F::one() - trace / n;
    let gcv = if denom > F::zero() {
        wrss / n / (denom * denom)
    } else {
        notes.push("influence trace reaches the observation count; GCV undefined".into());
        F::infinity()
    };
    let (alpha, beta) = system.expand_coefficients(&coefficients);
    Ok(FitResult {
        alpha,
        beta,
        lambdas,
        sigma2,
        trace_a: trace,
        gcv,
        coefficients,
        diagnostics: Diagnostics {
            method: method_name,
            weighted_rss: wrss,
            iterations,
            converged,
            lambda_path: path,
            notes,
        },
    })
}
