//! Plain key-value model configuration files.
//!
//! One `key = value` pair per line; `#` starts a comment. Unknown keys
//! are errors so typos surface immediately. The same file carries the
//! model, the selection settings, and (for the simulator) the truth
//! specification under `sim_*` keys.

use std::path::Path;

use crate::design::{
    basis_from_rule, BoundaryConstraint, CovariateBasis, Dataset, GTermSpec, HTermSpec, KnotRule,
    ModelSpec, ParametricBasis,
};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::selection::{QWeight, SelectionConfig, SelectionMethod, Sigma2Spec};
use crate::sim::{
    BetaSpec, CovDistribution, NamedShape, SigmaProfile, SimDesign, TruthShape,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ResponseTransform {
    None,
    Log,
}

#[derive(Clone, Debug)]
pub struct ModelConfig<F> {
    pub domain: (F, F),
    pub order: usize,
    pub gamma: usize,
    pub knots: KnotRule<F>,
    pub response_transform: ResponseTransform,
    pub time_dependent: bool,
    pub boundary: BoundaryConstraint,
    pub g_terms: Vec<GTermSpec>,
    pub h_terms: Vec<HTermSpec>,
    pub covariance_file: Option<String>,
    pub selection: SelectionConfig<F>,
    pub sim: SimSettings<F>,
}

/// Raw simulation keys; validated when a design is actually requested.
#[derive(Clone, Debug)]
pub struct SimSettings<F> {
    pub individuals: Option<usize>,
    pub points: Option<usize>,
    pub time_jitter: Option<F>,
    pub noise_sd: Option<F>,
    pub shapes: Vec<(usize, TruthShape<F>)>,
    pub beta: Option<BetaSpec<F>>,
    pub covariates: Vec<(String, CovDistribution<F>)>,
    pub sigma_profile: Option<SigmaProfile<F>>,
}

impl<F> Default for SimSettings<F> {
    fn default() -> Self {
        SimSettings {
            individuals: None,
            points: None,
            time_jitter: None,
            noise_sd: None,
            shapes: Vec::new(),
            beta: None,
            covariates: Vec::new(),
            sigma_profile: None,
        }
    }
}

pub fn read_config<F: Real>(path: impl AsRef<Path>) -> Result<ModelConfig<F>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text, &path.display().to_string())
}

fn err(path: &str, line: usize, detail: impl Into<String>) -> Error {
    Error::FileFormat {
        path: path.to_string(),
        line,
        detail: detail.into(),
    }
}

fn parse_scalar<F: Real>(path: &str, line: usize, value: &str, what: &str) -> Result<F> {
    F::parse(value).ok_or_else(|| err(path, line, format!("invalid {what} `{value}`")))
}

fn parse_bool(path: &str, line: usize, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(err(path, line, format!("expected true/false, got `{value}`"))),
    }
}

fn parse_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn parse_config_str<F: Real>(text: &str, path: &str) -> Result<ModelConfig<F>> {
    let mut domain: Option<(F, F)> = None;
    let mut cfg = ModelConfig {
        domain: (F::zero(), F::one()),
        order: 4,
        gamma: 3,
        knots: KnotRule::Quantile(10),
        response_transform: ResponseTransform::None,
        time_dependent: false,
        boundary: BoundaryConstraint::Free,
        g_terms: Vec::new(),
        h_terms: Vec::new(),
        covariance_file: None,
        selection: SelectionConfig::default(),
        sim: SimSettings::default(),
    };

    for (line_idx, raw) in text.lines().enumerate() {
        let line_no = line_idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(path, line_no, "expected `key = value`"))?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "domain" => {
                let inner = value
                    .strip_prefix('[')
                    .and_then(|v| v.strip_suffix(']'))
                    .unwrap_or(value);
                let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
                if parts.len() != 2 {
                    return Err(err(path, line_no, "domain must be `[a, b]`"));
                }
                let a = parse_scalar(path, line_no, parts[0], "domain bound")?;
                let b = parse_scalar(path, line_no, parts[1], "domain bound")?;
                domain = Some((a, b));
            }
            "order" => {
                cfg.order = value
                    .parse()
                    .map_err(|_| err(path, line_no, "invalid order"))?;
            }
            "gamma" => {
                cfg.gamma = value
                    .parse()
                    .map_err(|_| err(path, line_no, "invalid gamma"))?;
            }
            "knots" => {
                cfg.knots = if value == "typical" {
                    KnotRule::Typical
                } else if let Some(n) = value.strip_prefix("quantile:") {
                    KnotRule::Quantile(
                        n.parse()
                            .map_err(|_| err(path, line_no, "invalid quantile count"))?,
                    )
                } else if let Some(list) = value.strip_prefix("explicit:") {
                    let ks: Result<Vec<F>> = list
                        .split_whitespace()
                        .map(|s| parse_scalar(path, line_no, s, "knot"))
                        .collect();
                    KnotRule::Explicit(ks?)
                } else {
                    return Err(err(
                        path,
                        line_no,
                        "knots must be `quantile:<n>`, `typical`, or `explicit:<t1> <t2> ...`",
                    ));
                };
            }
            "response_transform" => {
                cfg.response_transform = match value {
                    "none" => ResponseTransform::None,
                    "log" => ResponseTransform::Log,
                    _ => return Err(err(path, line_no, "response_transform: none or log")),
                };
            }
            "time_dependent" => cfg.time_dependent = parse_bool(path, line_no, value)?,
            "boundary" => {
                cfg.boundary = match value {
                    "free" => BoundaryConstraint::Free,
                    "linear-ends" => BoundaryConstraint::LinearEnds,
                    _ => return Err(err(path, line_no, "boundary: free or linear-ends")),
                };
            }
            "g_terms" => {
                cfg.g_terms = parse_list(value)
                    .into_iter()
                    .map(|term| parse_g_term(path, line_no, &term))
                    .collect::<Result<_>>()?;
            }
            "h_terms" => {
                cfg.h_terms = parse_list(value)
                    .into_iter()
                    .map(|term| parse_h_term(path, line_no, &term))
                    .collect::<Result<_>>()?;
            }
            "covariance_file" => cfg.covariance_file = Some(value.to_string()),
            "selection" => {
                cfg.selection.method = if value == "gcv-grid" {
                    SelectionMethod::GcvGrid
                } else if value == "risk-fixed-point" {
                    SelectionMethod::RiskFixedPoint
                } else if value == "risk-fixed-point-simplified" {
                    SelectionMethod::RiskFixedPointSimplified
                } else if let Some(list) = value.strip_prefix("fixed:") {
                    let ls: Result<Vec<F>> = list
                        .split(',')
                        .map(|s| parse_scalar(path, line_no, s.trim(), "lambda"))
                        .collect();
                    SelectionMethod::Fixed(ls?)
                } else {
                    return Err(err(
                        path,
                        line_no,
                        "selection: gcv-grid, risk-fixed-point, \
                         risk-fixed-point-simplified, or fixed:<l0,l1,...>",
                    ));
                };
            }
            "q_weight" => {
                cfg.selection.q = match value {
                    "C" => QWeight::PredictiveC,
                    "S" => QWeight::PenaltySum,
                    _ => return Err(err(path, line_no, "q_weight: C or S")),
                };
            }
            "lambda_min" => cfg.selection.grid.min = parse_scalar(path, line_no, value, "lambda_min")?,
            "lambda_max" => cfg.selection.grid.max = parse_scalar(path, line_no, value, "lambda_max")?,
            "points_per_decade" => {
                cfg.selection.grid.points_per_decade = value
                    .parse()
                    .map_err(|_| err(path, line_no, "invalid points_per_decade"))?;
            }
            "tie_lambdas" => cfg.selection.tie_lambdas = parse_bool(path, line_no, value)?,
            "tol" => cfg.selection.tol = parse_scalar(path, line_no, value, "tol")?,
            "max_iter" => {
                cfg.selection.max_iter = value
                    .parse()
                    .map_err(|_| err(path, line_no, "invalid max_iter"))?;
            }
            "fallback" => cfg.selection.fallback = parse_bool(path, line_no, value)?,
            "initial_lambda" => {
                let ls: Result<Vec<F>> = value
                    .split(',')
                    .map(|s| parse_scalar(path, line_no, s.trim(), "initial lambda"))
                    .collect();
                cfg.selection.initial = Some(ls?);
            }
            "sigma2" => {
                cfg.selection.sigma2 = if value == "estimate" {
                    Sigma2Spec::Estimate
                } else if let Some(v) = value.strip_prefix("known:") {
                    Sigma2Spec::Known(parse_scalar(path, line_no, v, "sigma2")?)
                } else {
                    return Err(err(path, line_no, "sigma2: estimate or known:<value>"));
                };
            }
            "sim_individuals" => {
                cfg.sim.individuals = Some(
                    value
                        .parse()
                        .map_err(|_| err(path, line_no, "invalid sim_individuals"))?,
                );
            }
            "sim_points" => {
                cfg.sim.points = Some(
                    value
                        .parse()
                        .map_err(|_| err(path, line_no, "invalid sim_points"))?,
                );
            }
            "sim_time_jitter" => {
                cfg.sim.time_jitter = Some(parse_scalar(path, line_no, value, "sim_time_jitter")?);
            }
            "sim_noise_sd" => {
                cfg.sim.noise_sd = Some(parse_scalar(path, line_no, value, "sim_noise_sd")?);
            }
            "sim_beta" => {
                cfg.sim.beta = Some(if value == "none" {
                    BetaSpec::None
                } else if let Some(sd) = value.strip_prefix("per_id_normal:") {
                    BetaSpec::PerIdNormal(parse_scalar(path, line_no, sd, "sim_beta sd")?)
                } else if let Some(list) = value.strip_prefix("values:") {
                    let vs: Result<Vec<F>> = list
                        .split(',')
                        .map(|s| parse_scalar(path, line_no, s.trim(), "sim_beta value"))
                        .collect();
                    BetaSpec::Values(vs?)
                } else {
                    return Err(err(
                        path,
                        line_no,
                        "sim_beta: none, per_id_normal:<sd>, or values:<v1,...>",
                    ));
                });
            }
            "sim_sigma_profile" => {
                cfg.sim.sigma_profile = Some(if value == "flat" {
                    SigmaProfile::Flat
                } else if let Some(f) = value.strip_prefix("boundary:") {
                    SigmaProfile::Boundary(parse_scalar(path, line_no, f, "boundary factor")?)
                } else {
                    return Err(err(path, line_no, "sim_sigma_profile: flat or boundary:<f>"));
                });
            }
            _ => {
                if let Some(rest) = key.strip_prefix("sim_f") {
                    let l: usize = rest
                        .parse()
                        .map_err(|_| err(path, line_no, format!("unknown key `{key}`")))?;
                    let shape = if let Some(list) = value.strip_prefix("coeffs:") {
                        let cs: Result<Vec<F>> = list
                            .split(',')
                            .map(|s| parse_scalar(path, line_no, s.trim(), "coefficient"))
                            .collect();
                        TruthShape::Coefficients(cs?)
                    } else if let Some(named) = NamedShape::from_name(value) {
                        TruthShape::Named(named)
                    } else {
                        return Err(err(
                            path,
                            line_no,
                            format!("unknown shape `{value}` (flat, ramp, sigmoid, peak, parabola, coeffs:...)"),
                        ));
                    };
                    cfg.sim.shapes.push((l, shape));
                } else if let Some(name) = key.strip_prefix("sim_cov_") {
                    let parts: Vec<&str> = value.split(':').collect();
                    let dist = match parts.as_slice() {
                        ["uniform", a, b] => CovDistribution::Uniform(
                            parse_scalar(path, line_no, a, "bound")?,
                            parse_scalar(path, line_no, b, "bound")?,
                        ),
                        ["loguniform", a, b] => CovDistribution::LogUniform(
                            parse_scalar(path, line_no, a, "bound")?,
                            parse_scalar(path, line_no, b, "bound")?,
                        ),
                        ["normal", mu, sd] => CovDistribution::Normal(
                            parse_scalar(path, line_no, mu, "mean")?,
                            parse_scalar(path, line_no, sd, "sd")?,
                        ),
                        _ => {
                            return Err(err(
                                path,
                                line_no,
                                "covariate distribution: uniform:<a>:<b>, \
                                 loguniform:<a>:<b>, or normal:<mu>:<sd>",
                            ))
                        }
                    };
                    cfg.sim.covariates.push((name.to_string(), dist));
                } else {
                    return Err(err(path, line_no, format!("unknown key `{key}`")));
                }
            }
        }
    }

    cfg.domain = domain.ok_or_else(|| err(path, 1, "missing required key `domain`"))?;
    Ok(cfg)
}

fn parse_g_term(path: &str, line: usize, term: &str) -> Result<GTermSpec> {
    if term == "per_id" {
        return Ok(GTermSpec::PerIndividual);
    }
    if let Some(col) = term.strip_prefix("lin:") {
        return Ok(GTermSpec::Linear(col.to_string()));
    }
    if let Some(col) = term.strip_prefix("quad:") {
        return Ok(GTermSpec::Quadratic(col.to_string()));
    }
    if let Some(col) = term.strip_prefix("log:") {
        return Ok(GTermSpec::Log(col.to_string()));
    }
    Err(err(
        path,
        line,
        format!("unknown covariate term `{term}` (lin:, quad:, log:, per_id)"),
    ))
}

fn parse_h_term(path: &str, line: usize, term: &str) -> Result<HTermSpec> {
    match term {
        "intercept" => Ok(HTermSpec::Intercept),
        "per_id_intercept" => Ok(HTermSpec::PerIndividualIntercept),
        _ => {
            if let Some(col) = term.strip_prefix("lin:") {
                Ok(HTermSpec::Linear(col.to_string()))
            } else {
                Err(err(
                    path,
                    line,
                    format!("unknown parametric term `{term}` (intercept, per_id_intercept, lin:)"),
                ))
            }
        }
    }
}

impl<F: Real> ModelConfig<F> {
    /// Builds the model against a dataset (knot rules need the data).
    pub fn build_model(&self, dataset: &Dataset<F>) -> Result<ModelSpec<F>> {
        let basis = basis_from_rule(dataset, &self.knots, self.domain, self.order)?;
        let gbasis = CovariateBasis::build(dataset, &self.g_terms)?;
        let pbasis = ParametricBasis::build(dataset, &self.h_terms)?;
        if !self.time_dependent {
            for ind in dataset.individuals() {
                if !ind.covariates.is_fixed() {
                    return Err(Error::InvalidIndividual {
                        id: ind.id.clone(),
                        detail: "covariates vary in time but the model does not declare \
                                 time_dependent = true"
                            .into(),
                    });
                }
            }
        }
        Ok(ModelSpec {
            basis,
            gbasis,
            pbasis,
            gamma: self.gamma,
            boundary: self.boundary,
        })
    }

    /// Assembles the simulation design; requires all `sim_*` keys that
    /// have no default.
    pub fn sim_design(&self) -> Result<SimDesign<F>> {
        let need = |name: &str| Error::Config(format!("simulation needs `{name}`"));
        let individuals = self.sim.individuals.ok_or_else(|| need("sim_individuals"))?;
        let points = self.sim.points.ok_or_else(|| need("sim_points"))?;
        if self
            .g_terms
            .iter()
            .any(|t| matches!(t, GTermSpec::PerIndividual))
        {
            return Err(Error::Config(
                "simulation does not support per_id covariate terms".into(),
            ));
        }
        let l_count = self.g_terms.len() + 1;
        let mut shapes: Vec<Option<TruthShape<F>>> = vec![None; l_count];
        for (l, shape) in &self.sim.shapes {
            if *l >= l_count {
                return Err(Error::Config(format!(
                    "sim_f{l} given but the model has {l_count} temporal functions"
                )));
            }
            shapes[*l] = Some(shape.clone());
        }
        let shapes: Vec<TruthShape<F>> = shapes
            .into_iter()
            .enumerate()
            .map(|(l, s)| s.ok_or_else(|| need(&format!("sim_f{l}"))))
            .collect::<Result<_>>()?;
        Ok(SimDesign {
            individuals,
            points,
            time_jitter: self.sim.time_jitter.unwrap_or_else(F::zero),
            noise_sd: self.sim.noise_sd.unwrap_or_else(F::zero),
            sigma_profile: self.sim.sigma_profile.unwrap_or(SigmaProfile::Flat),
            covariates: self.sim.covariates.clone(),
            shapes,
            beta: self.sim.beta.clone().unwrap_or(BetaSpec::None),
            g_terms: self.g_terms.clone(),
            h_terms: self.h_terms.clone(),
        })
    }
}
