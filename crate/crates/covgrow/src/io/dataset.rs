//! Delimited dataset files.
//!
//! Comma-separated, UTF-8, LF line endings, header row. Columns: `id`,
//! `t`, `y`, optionally `sigma` (per-point standard deviation, default
//! 1), then covariate columns. Rows are grouped by id in order of first
//! appearance; covariates must be constant within an id unless the model
//! declares them time dependent.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::design::{Covariance, CovariateData, Dataset, Individual};
use crate::error::{Error, Result};
use crate::scalar::Real;

fn format_err(path: &str, line: usize, detail: impl Into<String>) -> Error {
    Error::FileFormat {
        path: path.to_string(),
        line,
        detail: detail.into(),
    }
}

pub fn read_dataset<F: Real>(path: impl AsRef<Path>) -> Result<Dataset<F>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    read_dataset_str(&text, &path.display().to_string())
}

pub fn read_dataset_str<F: Real>(text: &str, path: &str) -> Result<Dataset<F>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| format_err(path, 1, "empty file"))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.len() < 3 || columns[0] != "id" || columns[1] != "t" || columns[2] != "y" {
        return Err(format_err(
            path,
            1,
            "header must start with `id,t,y[,sigma]` followed by covariate columns",
        ));
    }
    let has_sigma = columns.get(3) == Some(&"sigma");
    let cov_start = if has_sigma { 4 } else { 3 };
    let covariate_names: Vec<String> =
        columns[cov_start..].iter().map(|s| s.to_string()).collect();
    let m = covariate_names.len();

    struct Group<F> {
        id: String,
        times: Vec<F>,
        responses: Vec<F>,
        variances: Vec<F>,
        covariates: Vec<Vec<F>>,
    }
    let mut groups: Vec<Group<F>> = Vec::new();

    for (line_idx, line) in lines {
        let line_no = line_idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(format_err(
                path,
                line_no,
                format!("{} fields, header has {}", fields.len(), columns.len()),
            ));
        }
        let id = fields[0].to_string();
        if id.is_empty() {
            return Err(format_err(path, line_no, "empty id"));
        }
        let parse = |field: &str, name: &str| -> Result<F> {
            F::parse(field)
                .filter(|v| v.is_finite())
                .ok_or_else(|| format_err(path, line_no, format!("invalid {name} `{field}`")))
        };
        let t = parse(fields[1], "t")?;
        let y = parse(fields[2], "y")?;
        let sd = if has_sigma {
            let s = parse(fields[3], "sigma")?;
            if !(s > F::zero()) {
                return Err(format_err(path, line_no, "sigma must be positive"));
            }
            s
        } else {
            F::one()
        };
        let mut covs = Vec::with_capacity(m);
        for (c, name) in covariate_names.iter().enumerate() {
            covs.push(parse(fields[cov_start + c], name)?);
        }
        let group = match groups.iter_mut().find(|g| g.id == id) {
            Some(g) => g,
            None => {
                groups.push(Group {
                    id,
                    times: Vec::new(),
                    responses: Vec::new(),
                    variances: Vec::new(),
                    covariates: Vec::new(),
                });
                groups.last_mut().unwrap()
            }
        };
        group.times.push(t);
        group.responses.push(y);
        group.variances.push(sd * sd);
        group.covariates.push(covs);
    }
    if groups.is_empty() {
        return Err(format_err(path, 2, "no data rows"));
    }

    let mut individuals = Vec::with_capacity(groups.len());
    for g in groups {
        let n = g.times.len();
        let constant = g
            .covariates
            .iter()
            .all(|row| row == &g.covariates[0]);
        let covariates = if constant {
            CovariateData::Fixed(g.covariates[0].clone())
        } else {
            let mut mt = Array2::zeros((n, m));
            for (p, row) in g.covariates.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    mt[(p, c)] = v;
                }
            }
            CovariateData::TimeVarying(mt)
        };
        individuals.push(Individual::new(
            g.id,
            g.times,
            g.responses,
            Covariance::Diagonal(g.variances),
            covariates,
        )?);
    }
    Dataset::new(individuals, covariate_names)
}

pub fn write_dataset<F: Real>(dataset: &Dataset<F>, mut w: impl Write) -> Result<()> {
    let names = dataset.covariate_names();
    write!(w, "id,t,y,sigma")?;
    for n in names {
        write!(w, ",{n}")?;
    }
    writeln!(w)?;
    for ind in dataset.individuals() {
        let sds: Vec<F> = match &ind.covariance {
            Covariance::Diagonal(v) => v.iter().map(|&x| x.sqrt()).collect(),
            Covariance::Dense(mm) => (0..ind.len()).map(|p| mm[(p, p)].sqrt()).collect(),
        };
        for p in 0..ind.len() {
            write!(
                w,
                "{},{},{},{}",
                ind.id,
                ind.times[p].format_full(),
                ind.responses[p].format_full(),
                sds[p].format_full()
            )?;
            for c in 0..names.len() {
                write!(w, ",{}", ind.covariates.value(p, c).format_full())?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Optional per-individual dense covariance override file: columns
/// `id,row,col,value` with zero-based indices within the individual;
/// missing entries are zero and the matrix is symmetrized.
pub fn read_covariance_overrides<F: Real>(
    path: impl AsRef<Path>,
    dataset: &Dataset<F>,
) -> Result<Vec<(String, Array2<F>)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let pathstr = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| format_err(&pathstr, 1, "empty file"))?;
    if header.trim() != "id,row,col,value" {
        return Err(format_err(&pathstr, 1, "header must be `id,row,col,value`"));
    }
    let mut out: Vec<(String, Array2<F>)> = Vec::new();
    for (line_idx, line) in lines {
        let line_no = line_idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(format_err(&pathstr, line_no, "expected 4 fields"));
        }
        let id = fields[0];
        let idx = dataset
            .index_of(id)
            .ok_or_else(|| format_err(&pathstr, line_no, format!("unknown id `{id}`")))?;
        let n = dataset.individuals()[idx].len();
        let row: usize = fields[1]
            .parse()
            .map_err(|_| format_err(&pathstr, line_no, "invalid row index"))?;
        let col: usize = fields[2]
            .parse()
            .map_err(|_| format_err(&pathstr, line_no, "invalid col index"))?;
        if row >= n || col >= n {
            return Err(format_err(
                &pathstr,
                line_no,
                format!("index out of range for individual `{id}` with {n} points"),
            ));
        }
        let value = F::parse(fields[3])
            .ok_or_else(|| format_err(&pathstr, line_no, "invalid value"))?;
        let entry = match out.iter_mut().find(|(eid, _)| eid == id) {
            Some((_, m)) => m,
            None => {
                out.push((id.to_string(), Array2::zeros((n, n))));
                &mut out.last_mut().unwrap().1
            }
        };
        entry[(row, col)] = value;
        entry[(col, row)] = value;
    }
    Ok(out)
}

/// Applies covariance overrides, returning a dataset with dense blocks
/// for the listed individuals.
pub fn apply_covariance_overrides<F: Real>(
    dataset: Dataset<F>,
    overrides: Vec<(String, Array2<F>)>,
) -> Result<Dataset<F>> {
    let names = dataset.covariate_names().to_vec();
    let mut individuals: Vec<Individual<F>> = dataset.individuals().to_vec();
    for (id, m) in overrides {
        let idx = individuals
            .iter()
            .position(|i| i.id == id)
            .expect("validated above");
        let old = &individuals[idx];
        individuals[idx] = Individual::new(
            old.id.clone(),
            old.times.clone(),
            old.responses.clone(),
            Covariance::Dense(m),
            old.covariates.clone(),
        )?;
    }
    Dataset::new(individuals, names)
}
