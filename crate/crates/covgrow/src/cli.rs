//! Command-line pipeline: `fit`, `predict`, `simulate`, and `gcv-scan`.
//!
//! Everything here is a thin orchestration over the library; the command
//! functions are public so integration tests can drive them without
//! spawning a process. Outputs are deterministic: rerunning a command on
//! identical inputs reproduces every file byte for byte.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::design::{assemble, AssembledSystem, Covariance, Dataset, ModelSpec};
use crate::error::{Error, Result};
use crate::io::{
    self, config::ModelConfig, output, CurveRow, ResidualRow, ResponseTransform, SummaryContext,
};
use crate::selection::{self, LambdaGrid};
use crate::sim;
use crate::solver::{predict, FitResult};

const USAGE: &str = "covgrow <fit|predict|simulate|gcv-scan> [flags]\n\
  fit       --data <csv> --config <cfg> --out <dir> [--grid <points>]\n\
  predict   --data <csv> --config <cfg> --out <dir> [--grid <points>] [--at-data]\n\
  simulate  --config <cfg> --out <csv> [--seed <n>]\n\
  gcv-scan  --data <csv> --config <cfg> --out <dir> [--grid <min:max:per-decade>]";

pub fn run(args: &[String]) -> Result<()> {
    let command = args.first().ok_or_else(|| Error::Usage(USAGE.into()))?;
    let flags = Flags::parse(&args[1..])?;
    match command.as_str() {
        "fit" => cmd_fit(
            &flags.require("--data")?,
            &flags.require("--config")?,
            &flags.require("--out")?,
            flags.grid_points()?,
        ),
        "predict" => cmd_predict(
            &flags.require("--data")?,
            &flags.require("--config")?,
            &flags.require("--out")?,
            flags.grid_points()?,
            flags.at_data,
        ),
        "simulate" => cmd_simulate(
            &flags.require("--config")?,
            &flags.require("--out")?,
            flags.seed,
        ),
        "gcv-scan" => cmd_gcv_scan(
            &flags.require("--data")?,
            &flags.require("--config")?,
            &flags.require("--out")?,
            flags.value("--grid"),
        ),
        other => Err(Error::Usage(format!("unknown command `{other}`\n{USAGE}"))),
    }
}

struct Flags {
    values: Vec<(String, String)>,
    at_data: bool,
    seed: u64,
}

impl Flags {
    fn parse(args: &[String]) -> Result<Flags> {
        let mut values = Vec::new();
        let mut at_data = false;
        let mut seed = 0u64;
        let mut i = 0;
        while i < args.len() {
            match args[i].as_str() {
                "--at-data" => {
                    at_data = true;
                    i += 1;
                }
                "--seed" => {
                    let v = args
                        .get(i + 1)
                        .ok_or_else(|| Error::Usage("--seed needs a value".into()))?;
                    seed = v
                        .parse()
                        .map_err(|_| Error::Usage(format!("invalid seed `{v}`")))?;
                    i += 2;
                }
                flag @ ("--data" | "--config" | "--out" | "--grid") => {
                    let v = args
                        .get(i + 1)
                        .ok_or_else(|| Error::Usage(format!("{flag} needs a value")))?;
                    values.push((flag.to_string(), v.clone()));
                    i += 2;
                }
                other => {
                    return Err(Error::Usage(format!("unknown flag `{other}`\n{USAGE}")));
                }
            }
        }
        Ok(Flags {
            values,
            at_data,
            seed,
        })
    }

    fn value(&self, flag: &str) -> Option<String> {
        self.values
            .iter()
            .find(|(k, _)| k == flag)
            .map(|(_, v)| v.clone())
    }

    fn require(&self, flag: &str) -> Result<PathBuf> {
        self.value(flag)
            .map(PathBuf::from)
            .ok_or_else(|| Error::Usage(format!("missing {flag}\n{USAGE}")))
    }

    fn grid_points(&self) -> Result<usize> {
        match self.value("--grid") {
            None => Ok(200),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Usage(format!("invalid grid size `{v}`"))),
        }
    }
}

/// Loads dataset and config, applies the response transform and any
/// covariance overrides, and assembles the system.
fn load_pipeline(
    data: &Path,
    config: &Path,
) -> Result<(ModelConfig<f64>, Dataset<f64>, ModelSpec<f64>, AssembledSystem<f64>)> {
    let cfg: ModelConfig<f64> = io::read_config(config)?;
    let mut ds: Dataset<f64> = io::read_dataset(data)?;
    if cfg.response_transform == ResponseTransform::Log {
        ds = transform_log(ds, data)?;
    }
    if let Some(cov_path) = &cfg.covariance_file {
        let base = config.parent().unwrap_or(Path::new("."));
        let overrides = io::read_covariance_overrides(base.join(cov_path), &ds)?;
        ds = io::apply_covariance_overrides(ds, overrides)?;
    }
    let model = cfg.build_model(&ds)?;
    let sys = assemble(&ds, &model)?;
    Ok((cfg, ds, model, sys))
}

fn transform_log(ds: Dataset<f64>, data: &Path) -> Result<Dataset<f64>> {
    let names = ds.covariate_names().to_vec();
    let individuals = ds
        .individuals()
        .iter()
        .map(|ind| {
            let responses: Result<Vec<f64>> = ind
                .responses
                .iter()
                .map(|&y| {
                    if y > 0.0 {
                        Ok(y.ln())
                    } else {
                        Err(Error::FileFormat {
                            path: data.display().to_string(),
                            line: 0,
                            detail: format!(
                                "response {y} of individual {} is not positive; \
                                 the log transform needs positive responses",
                                ind.id
                            ),
                        })
                    }
                })
                .collect();
            crate::design::Individual::new(
                ind.id.clone(),
                ind.times.clone(),
                responses?,
                ind.covariance.clone(),
                ind.covariates.clone(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(individuals, names)
}

fn create_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn fit_outputs(
    sys: &AssembledSystem<f64>,
    ds: &Dataset<f64>,
    fit: &FitResult<f64>,
    out: &Path,
    grid_points: usize,
    write_all: bool,
    at_data: bool,
) -> Result<()> {
    create_out_dir(out)?;
    if write_all {
        let file = fs::File::create(out.join("coef.csv"))?;
        output::write_coefficients(BufWriter::new(file), &fit.alpha, &fit.beta)?;

        let layout = sys.layout();
        let ctx = SummaryContext {
            n_observations: sys.n_total(),
            n_individuals: ds.individuals().len(),
            basis_functions: layout.k_full,
            temporal_functions: layout.l_count,
            parametric_terms: layout.j_model,
            repaired: sys.was_repaired(),
            extra_notes: &[],
        };
        let file = fs::File::create(out.join("summary.txt"))?;
        output::write_summary(BufWriter::new(file), fit, &ctx)?;

        let mut rows = Vec::new();
        for (i, ind) in ds.individuals().iter().enumerate() {
            let fitted = sys.fitted_block(i, &fit.coefficients);
            for p in 0..ind.len() {
                rows.push(ResidualRow {
                    id: ind.id.clone(),
                    t: ind.times[p],
                    y: ind.responses[p],
                    fit: fitted[p],
                    residual: ind.responses[p] - fitted[p],
                    sigma: match &ind.covariance {
                        Covariance::Diagonal(v) => v[p].sqrt(),
                        Covariance::Dense(m) => m[(p, p)].sqrt(),
                    },
                });
            }
        }
        let file = fs::File::create(out.join("residuals.csv"))?;
        output::write_residuals(BufWriter::new(file), &rows)?;
    }

    // Curves with plug-in standard errors: a uniform grid for individuals
    // with fixed covariates, the observed times otherwise (time-varying
    // covariates have no values between measurements).
    let (a, b) = sys.model().basis.domain();
    let mut rows: Vec<CurveRow<f64>> = Vec::new();
    for ind in ds.individuals() {
        let times: Vec<f64> = if at_data || !ind.covariates.is_fixed() {
            ind.times.clone()
        } else {
            (0..grid_points)
                .map(|i| a + (b - a) * i as f64 / (grid_points.max(2) - 1) as f64)
                .collect()
        };
        let points = predict(sys, fit, &times, &ind.covariates, Some(&ind.id))?;
        for pt in points {
            rows.push(CurveRow {
                id: ind.id.clone(),
                t: pt.time,
                fit: pt.mean,
                se: pt.se,
            });
        }
    }
    let file = fs::File::create(out.join("curves.csv"))?;
    output::write_curves(BufWriter::new(file), &rows)?;
    Ok(())
}

pub fn cmd_fit(data: &Path, config: &Path, out: &Path, grid_points: usize) -> Result<()> {
    let (cfg, ds, _model, sys) = load_pipeline(data, config)?;
    let fit = selection::select(&sys, &cfg.selection)?;
    fit_outputs(&sys, &ds, &fit, out, grid_points, true, false)
}

pub fn cmd_predict(
    data: &Path,
    config: &Path,
    out: &Path,
    grid_points: usize,
    at_data: bool,
) -> Result<()> {
    let (cfg, ds, _model, sys) = load_pipeline(data, config)?;
    let fit = selection::select(&sys, &cfg.selection)?;
    fit_outputs(&sys, &ds, &fit, out, grid_points, false, at_data)
}

pub fn cmd_simulate(config: &Path, out: &Path, seed: u64) -> Result<()> {
    let cfg: ModelConfig<f64> = io::read_config(config)?;
    let design = cfg.sim_design()?;
    // The basis is built from the deterministic base time grid so a
    // subsequent fit with the same knot rule reconstructs it exactly
    // (guaranteed when the time jitter is zero).
    let (a, b) = cfg.domain;
    let base_times: Vec<f64> = (0..design.points)
        .map(|p| {
            if design.points == 1 {
                0.5 * (a + b)
            } else {
                a + (b - a) * p as f64 / (design.points - 1) as f64
            }
        })
        .collect();
    // One shell individual per simulated one, so quantile knots over the
    // pooled times agree with a later fit on the simulated data.
    let shell_individuals = (0..design.individuals)
        .map(|i| {
            crate::design::Individual::new(
                format!("grid{i}"),
                base_times.clone(),
                vec![0.0; design.points],
                Covariance::Diagonal(vec![1.0; design.points]),
                crate::design::CovariateData::Fixed(vec![]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let shell = Dataset::new(shell_individuals, vec![])?;
    let basis = crate::design::basis_from_rule(&shell, &cfg.knots, cfg.domain, cfg.order)?;
    let (ds, truth) = sim::simulate(&basis, &design, seed)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let file = fs::File::create(out)?;
    io::write_dataset(&ds, BufWriter::new(file))?;
    let truth_path = out.with_extension("truth.csv");
    let file = fs::File::create(truth_path)?;
    output::write_coefficients(BufWriter::new(file), &truth.alpha, &truth.beta)?;
    Ok(())
}

pub fn cmd_gcv_scan(
    data: &Path,
    config: &Path,
    out: &Path,
    grid_override: Option<String>,
) -> Result<()> {
    let (mut cfg, _ds, _model, sys) = load_pipeline(data, config)?;
    if let Some(spec) = grid_override {
        cfg.selection.grid = parse_grid_spec(&spec)?;
    }
    let sigma2 = match &cfg.selection.sigma2 {
        selection::Sigma2Spec::Known(v) => Some(*v),
        selection::Sigma2Spec::Estimate => selection::sigma2_hat(&sys).ok(),
    };
    let scan = selection::grid_scan(&sys, &cfg.selection, sigma2)?;
    create_out_dir(out)?;
    let file = fs::File::create(out.join("scan.csv"))?;
    output::write_scan(BufWriter::new(file), &scan, sys.layout().l_count)?;
    Ok(())
}

fn parse_grid_spec(spec: &str) -> Result<LambdaGrid<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Usage(format!(
            "grid spec must be min:max:per-decade, got `{spec}`"
        )));
    }
    let min: f64 = parts[0]
        .parse()
        .map_err(|_| Error::Usage("invalid grid minimum".into()))?;
    let max: f64 = parts[1]
        .parse()
        .map_err(|_| Error::Usage("invalid grid maximum".into()))?;
    let ppd: usize = parts[2]
        .parse()
        .map_err(|_| Error::Usage("invalid points per decade".into()))?;
    if !(min > 0.0 && max > min && ppd > 0) {
        return Err(Error::Usage("grid bounds must be positive and increasing".into()));
    }
    Ok(LambdaGrid {
        min,
        max,
        points_per_decade: ppd,
    })
}

/// Writes the error to stderr and maps it to the process exit code.
pub fn report(err: &Error, mut sink: impl Write) -> i32 {
    let _ = writeln!(sink, "error: {err}");
    err.exit_code()
}
