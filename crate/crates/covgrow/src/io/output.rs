//! Writers and readers for the fit outputs.
//!
//! All files are comma-separated, UTF-8, LF, numbers written with full
//! round-trip precision so re-running a fit reproduces the bytes exactly.
//! Every writer has a matching reader used by the pipeline itself.

use std::io::Write;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::selection::ScanPoint;
use crate::solver::FitResult;

fn fmt_err(what: &str, line: usize, detail: impl Into<String>) -> Error {
    Error::FileFormat {
        path: what.to_string(),
        line,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// Coefficients (also used for simulation truth files)
// ---------------------------------------------------------------------------

pub fn write_coefficients<F: Real>(
    mut w: impl Write,
    alpha: &Array2<F>,
    beta: &Array1<F>,
) -> Result<()> {
    writeln!(w, "kind,row,col,value")?;
    for k in 0..alpha.nrows() {
        for l in 0..alpha.ncols() {
            writeln!(w, "alpha,{k},{l},{}", alpha[(k, l)].format_full())?;
        }
    }
    for j in 0..beta.len() {
        writeln!(w, "beta,{j},0,{}", beta[j].format_full())?;
    }
    Ok(())
}

pub fn read_coefficients<F: Real>(text: &str) -> Result<(Array2<F>, Array1<F>)> {
    let mut alpha_entries = Vec::new();
    let mut beta_entries = Vec::new();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| fmt_err("coef", 1, "empty"))?;
    if header.trim() != "kind,row,col,value" {
        return Err(fmt_err("coef", 1, "bad header"));
    }
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(fmt_err("coef", line_no, "expected 4 fields"));
        }
        let row: usize = f[1]
            .parse()
            .map_err(|_| fmt_err("coef", line_no, "bad row"))?;
        let col: usize = f[2]
            .parse()
            .map_err(|_| fmt_err("coef", line_no, "bad col"))?;
        let value = F::parse(f[3]).ok_or_else(|| fmt_err("coef", line_no, "bad value"))?;
        match f[0] {
            "alpha" => alpha_entries.push((row, col, value)),
            "beta" => beta_entries.push((row, value)),
            other => return Err(fmt_err("coef", line_no, format!("unknown kind `{other}`"))),
        }
    }
    let k = alpha_entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
    let l = alpha_entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
    let mut alpha = Array2::zeros((k, l));
    for (r, c, v) in alpha_entries {
        alpha[(r, c)] = v;
    }
    let j = beta_entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
    let mut beta = Array1::zeros(j);
    for (r, v) in beta_entries {
        beta[r] = v;
    }
    Ok((alpha, beta))
}

// ---------------------------------------------------------------------------
// Curves and residuals
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow<F> {
    pub id: String,
    pub t: F,
    pub fit: F,
    pub se: F,
}

pub fn write_curves<F: Real>(mut w: impl Write, rows: &[CurveRow<F>]) -> Result<()> {
    writeln!(w, "id,t,fit,se")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            r.id,
            r.t.format_full(),
            r.fit.format_full(),
            r.se.format_full()
        )?;
    }
    Ok(())
}

pub fn read_curves<F: Real>(text: &str) -> Result<Vec<CurveRow<F>>> {
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| fmt_err("curves", 1, "empty"))?;
    if header.trim() != "id,t,fit,se" {
        return Err(fmt_err("curves", 1, "bad header"));
    }
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(fmt_err("curves", idx + 1, "expected 4 fields"));
        }
        let parse =
            |s: &str| F::parse(s).ok_or_else(|| fmt_err("curves", idx + 1, "bad number"));
        out.push(CurveRow {
            id: f[0].to_string(),
            t: parse(f[1])?,
            fit: parse(f[2])?,
            se: parse(f[3])?,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualRow<F> {
    pub id: String,
    pub t: F,
    pub y: F,
    pub fit: F,
    pub residual: F,
    pub sigma: F,
}

pub fn write_residuals<F: Real>(mut w: impl Write, rows: &[ResidualRow<F>]) -> Result<()> {
    writeln!(w, "id,t,y,fit,residual,sigma")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.id,
            r.t.format_full(),
            r.y.format_full(),
            r.fit.format_full(),
            r.residual.format_full(),
            r.sigma.format_full()
        )?;
    }
    Ok(())
}

pub fn read_residuals<F: Real>(text: &str) -> Result<Vec<ResidualRow<F>>> {
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| fmt_err("residuals", 1, "empty"))?;
    if header.trim() != "id,t,y,fit,residual,sigma" {
        return Err(fmt_err("residuals", 1, "bad header"));
    }
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(fmt_err("residuals", idx + 1, "expected 6 fields"));
        }
        let parse =
            |s: &str| F::parse(s).ok_or_else(|| fmt_err("residuals", idx + 1, "bad number"));
        out.push(ResidualRow {
            id: f[0].to_string(),
            t: parse(f[1])?,
            y: parse(f[2])?,
            fit: parse(f[3])?,
            residual: parse(f[4])?,
            sigma: parse(f[5])?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Selection scan
// ---------------------------------------------------------------------------

pub fn write_scan<F: Real>(mut w: impl Write, scan: &[ScanPoint<F>], l_count: usize) -> Result<()> {
    for l in 0..l_count {
        write!(w, "lambda_{l},")?;
    }
    writeln!(w, "V,r_hat,trace_a")?;
    for pt in scan {
        for l in 0..l_count {
            write!(w, "{},", pt.lambdas[l].format_full())?;
        }
        let v = pt
            .gcv
            .map(|x| x.format_full())
            .unwrap_or_default();
        let r = pt
            .risk_hat
            .map(|x| x.format_full())
            .unwrap_or_default();
        writeln!(w, "{v},{r},{}", pt.trace.format_full())?;
    }
    Ok(())
}

pub fn read_scan<F: Real>(text: &str) -> Result<Vec<ScanPoint<F>>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| fmt_err("scan", 1, "empty"))?;
    let cols: Vec<&str> = header.split(',').collect();
    let l_count = cols.iter().filter(|c| c.starts_with("lambda_")).count();
    if l_count == 0 || cols.len() != l_count + 3 {
        return Err(fmt_err("scan", 1, "bad header"));
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(fmt_err("scan", idx + 1, "field count"));
        }
        let parse = |s: &str| F::parse(s).ok_or_else(|| fmt_err("scan", idx + 1, "bad number"));
        let lambdas: Result<Vec<F>> = f[..l_count].iter().map(|s| parse(s)).collect();
        let gcv = if f[l_count].is_empty() {
            None
        } else {
            Some(parse(f[l_count])?)
        };
        let risk_hat = if f[l_count + 1].is_empty() {
            None
        } else {
            Some(parse(f[l_count + 1])?)
        };
        out.push(ScanPoint {
            lambdas: lambdas?,
            gcv,
            risk_hat,
            trace: parse(f[l_count + 2])?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Summary
// ---------------------------------------------------------------------------

pub struct SummaryContext<'a> {
    pub n_observations: usize,
    pub n_individuals: usize,
    pub basis_functions: usize,
    pub temporal_functions: usize,
    pub parametric_terms: usize,
    pub repaired: bool,
    pub extra_notes: &'a [String],
}

pub fn write_summary<F: Real>(
    mut w: impl Write,
    fit: &FitResult<F>,
    ctx: &SummaryContext<'_>,
) -> Result<()> {
    writeln!(w, "method: {}", fit.diagnostics.method)?;
    for (l, lam) in fit.lambdas.iter().enumerate() {
        writeln!(w, "lambda_{l}: {}", lam.format_full())?;
    }
    writeln!(w, "sigma2: {}", fit.sigma2.format_full())?;
    writeln!(w, "trace_a: {}", fit.trace_a.format_full())?;
    writeln!(w, "gcv: {}", fit.gcv.format_full())?;
    writeln!(
        w,
        "weighted_rss: {}",
        fit.diagnostics.weighted_rss.format_full()
    )?;
    writeln!(w, "converged: {}", fit.diagnostics.converged)?;
    writeln!(w, "iterations: {}", fit.diagnostics.iterations)?;
    writeln!(w, "n_observations: {}", ctx.n_observations)?;
    writeln!(w, "n_individuals: {}", ctx.n_individuals)?;
    writeln!(w, "basis_functions: {}", ctx.basis_functions)?;
    writeln!(w, "temporal_functions: {}", ctx.temporal_functions)?;
    writeln!(w, "parametric_terms: {}", ctx.parametric_terms)?;
    writeln!(w, "identifiability_repaired: {}", ctx.repaired)?;
    for note in fit
        .diagnostics
        .notes
        .iter()
        .chain(ctx.extra_notes.iter())
    {
        writeln!(w, "note: {note}")?;
    }
    Ok(())
}

/// Key-value view of a summary file.
pub fn read_summary(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| {
            l.split_once(':')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}
