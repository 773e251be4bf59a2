//! File formats: panels and time-indexed matrices as CSV with one row per
//! period, parameters as TOML.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DfmError, Result};
use crate::montecarlo::fmt_f64;
use crate::panel::{DfmParams, IdioCov, Panel};

/// Writes an `k × T` matrix as CSV with one row per period.
pub fn write_time_matrix(path: &Path, columns: &[String], m: &DMatrix<f64>) -> Result<()> {
    if columns.len() != m.nrows() {
        return Err(DfmError::Shape(format!(
            "{} column names for a matrix with {} rows",
            columns.len(),
            m.nrows()
        )));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(columns)?;
    for t in 0..m.ncols() {
        w.write_record(m.column(t).iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn series_names(prefix: &str, k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("{prefix}{i}")).collect()
}

pub fn write_panel(path: &Path, panel: &Panel) -> Result<()> {
    write_time_matrix(path, &series_names("x", panel.n()), panel.data())
}

/// Reads a CSV with one row per period into a `k × T` matrix. A first row
/// that does not parse as numbers is taken as a header.
pub fn read_time_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| DfmError::Parse {
            line: e.position().map_or(k + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(k + 1, |p| p.line() as usize);
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(|s| s.parse::<f64>()).collect();
        match parsed {
            Ok(v) => {
                if let Some(bad) = v.iter().position(|x| !x.is_finite()) {
                    return Err(DfmError::Parse {
                        line,
                        message: format!("non-finite value in column {}", bad + 1),
                    });
                }
                rows.push(v)
            }
            Err(_) if k == 0 => continue,
            Err(e) => {
                let col = rec.iter().position(|s| s.parse::<f64>().is_err()).unwrap_or(0);
                return Err(DfmError::Parse {
                    line,
                    message: format!("column {}: {e}", col + 1),
                });
            }
        }
    }
    if rows.is_empty() {
        return Err(DfmError::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    let k = rows[0].len();
    Ok(DMatrix::from_fn(k, rows.len(), |i, t| rows[t][i]))
}

pub fn read_panel(path: &Path) -> Result<Panel> {
    Panel::new(read_time_matrix(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamsFile {
    n: usize,
    r: usize,
    q: usize,
    /// Row-major `n × r`.
    loadings: Vec<Vec<f64>>,
    transition: Vec<Vec<f64>>,
    shock_loading: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    idio_var: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    idio_cov: Option<Vec<Vec<f64>>>,
    idio_ar: Vec<f64>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(DfmError::Shape(format!("{what} must be {nrows} x {ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn params_to_toml(p: &DfmParams) -> String {
    let (idio_var, idio_cov) = match &p.idio_cov {
        IdioCov::Diagonal(d) => (Some(d.iter().cloned().collect()), None),
        IdioCov::Full(m) => (None, Some(rows_of(m))),
    };
    let f = ParamsFile {
        n: p.n(),
        r: p.r(),
        q: p.q(),
        loadings: rows_of(&p.loadings),
        transition: rows_of(&p.transition),
        shock_loading: rows_of(&p.shock_loading),
        idio_var,
        idio_cov,
        idio_ar: p.idio_ar.iter().cloned().collect(),
    };
    toml::to_string(&f).expect("parameters are serializable")
}

pub fn params_from_toml(text: &str) -> Result<DfmParams> {
    let f: ParamsFile = toml::from_str(text).map_err(|e| DfmError::Parse {
        line: e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(1),
        message: e.message().to_string(),
    })?;
    let idio_cov = match (f.idio_var, f.idio_cov) {
        (Some(v), None) if v.len() == f.n => IdioCov::Diagonal(DVector::from_vec(v)),
        (None, Some(m)) => IdioCov::Full(from_rows(&m, f.n, f.n, "idio_cov")?),
        _ => {
            return Err(DfmError::InvalidParams(
                "exactly one of idio_var (length n) or idio_cov must be given".into(),
            ))
        }
    };
    if f.idio_ar.len() != f.n {
        return Err(DfmError::Shape("idio_ar must have length n".into()));
    }
    let p = DfmParams {
        loadings: from_rows(&f.loadings, f.n, f.r, "loadings")?,
        transition: from_rows(&f.transition, f.r, f.r, "transition")?,
        shock_loading: from_rows(&f.shock_loading, f.r, f.q, "shock_loading")?,
        idio_cov,
        idio_ar: DVector::from_vec(f.idio_ar),
    };
    p.check_shapes()?;
    Ok(p)
}

pub fn write_params(path: &Path, p: &DfmParams) -> Result<()> {
    fs::write(path, params_to_toml(p))?;
    Ok(())
}

pub fn read_params(path: &Path) -> Result<DfmParams> {
    params_from_toml(&fs::read_to_string(path)?)
}

/// One value per line, full precision.
pub fn write_vector(path: &Path, header: &str, v: &[f64]) -> Result<()> {
    let mut s = format!("{header}\n");
    for x in v {
        s.push_str(&fmt_f64(*x));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{draw_dgp, DgpConfig};
    use crate::panel::ModelDims;

    #[test]
    fn panel_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let d = draw_dgp(&DgpConfig::new(ModelDims::new(7, 11, 2, 1).unwrap(), 3)).unwrap();
        write_panel(&path, &d.panel).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 12);
        assert!(text.starts_with("x1,x2,"));
        let back = read_panel(&path).unwrap();
        assert_eq!(back.data(), d.panel.data());
    }

    #[test]
    fn headerless_and_bad_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        fs::write(&path, "1,2\n3,4\n5,6\n").unwrap();
        assert_eq!(read_panel(&path).unwrap().data().shape(), (2, 3));
        fs::write(&path, "a,b\n1,2\n3,oops\n").unwrap();
        match read_panel(&path) {
            Err(DfmError::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("column 2"));
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
        fs::write(&path, "1,2\n3\n").unwrap();
        assert!(matches!(read_panel(&path), Err(DfmError::Parse { line: 2, .. })));
    }

    #[test]
    fn params_round_trip() {
        let d = draw_dgp(&DgpConfig::new(ModelDims::new(5, 10, 2, 1).unwrap(), 4)).unwrap();
        let back = params_from_toml(&params_to_toml(&d.params)).unwrap();
        assert_eq!(back, d.params);
        let mut full = d.params.clone();
        full.idio_cov = IdioCov::Full(d.params.idio_cov.to_dense());
        assert_eq!(params_from_toml(&params_to_toml(&full)).unwrap(), full);
    }
}
