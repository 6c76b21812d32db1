//! CSV datasets and JSON fit reports.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::dpd::{CensoringMeasure, QuadratureConfig};
use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::hazard::{BaselineSpec, Family};
use crate::inference::DiagnosticRow;
use crate::model::{Dataset, Observation, Theta};

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        line,
        reason: e.to_string(),
    }
}

/// Reads `time,status,covariates...`; `τ` is the largest time.
pub fn ingest_csv(path: &Path) -> Result<Dataset> {
    ingest_reader(File::open(path)?)
}

pub fn ingest_reader<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 2 || cols[0] != "time" || cols[1] != "status" {
        return Err(Error::Parse {
            line: 1,
            reason: format!("header must start with time,status (got {})", cols.join(",")),
        });
    }
    let names: Vec<String> = cols[2..].iter().map(|s| s.to_string()).collect();
    let width = cols.len();
    let mut observations = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let fail = |reason: String| Error::Parse { line, reason };
        if record.len() != width {
            return Err(fail(format!("expected {width} fields, found {}", record.len())));
        }
        let number = |i: usize| -> Result<f64> {
            let field = &record[i];
            if field.is_empty() {
                return Err(fail(format!("missing value in column '{}'", cols[i])));
            }
            let v: f64 = field
                .parse()
                .map_err(|_| fail(format!("'{field}' in column '{}' is not a number", cols[i])))?;
            if !v.is_finite() {
                return Err(fail(format!("non-finite value in column '{}'", cols[i])));
            }
            Ok(v)
        };
        let time = number(0)?;
        if time <= 0.0 {
            return Err(fail(format!("time must be positive, got {time}")));
        }
        let event = match &record[1] {
            "1" => true,
            "0" => false,
            other => return Err(fail(format!("status must be 0 or 1, got '{other}'"))),
        };
        let covariates = (2..width).map(number).collect::<Result<Vec<_>>>()?;
        observations.push(Observation::new(time, event, covariates).map_err(|e| fail(e.to_string()))?);
    }
    if observations.is_empty() {
        return Err(Error::Parse {
            line: 1,
            reason: "no data rows".into(),
        });
    }
    Dataset::new(observations, names.len())?.with_covariate_names(names)
}

/// 17 significant digits, enough to reproduce every `f64` exactly.
fn canonical(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string(), "status".to_string()];
    header.extend(data.covariate_names().iter().cloned());
    w.write_record(&header).map_err(csv_error)?;
    for o in data.observations() {
        let mut row = vec![canonical(o.time), o.status().to_string()];
        row.extend(o.covariates.iter().map(|v| canonical(*v)));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_diagnostics_csv<W: Write>(rows: &[DiagnosticRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    if rows.is_empty() {
        w.write_record([
            "index",
            "time",
            "status",
            "cox_snell",
            "martingale",
            "deviance",
            "influence_norm",
            "outlier_flag",
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Machine-readable summary of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cutpoints: Vec<f64>,
    pub alpha: f64,
    pub measure: CensoringMeasure,
    pub nodes: usize,
    pub covariates: Vec<String>,
    pub estimates: IndexMap<String, f64>,
    pub standard_errors: Option<IndexMap<String, f64>>,
    /// Row-major `(q+p) × (q+p)`.
    pub covariance: Option<Vec<f64>>,
    pub objective_value: f64,
    pub estimating_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n: usize,
    pub n_events: usize,
    pub tau: f64,
}

impl FitReport {
    pub fn new(spec: &BaselineSpec, data: &Dataset, fit: &FitResult, cfg: &QuadratureConfig) -> Self {
        let names = Theta::parameter_names(fit.theta_hat.q(), fit.theta_hat.p());
        let estimates = names.iter().cloned().zip(fit.theta_hat.stacked()).collect();
        let standard_errors = fit
            .standard_errors
            .as_ref()
            .map(|se| names.iter().cloned().zip(se.iter().copied()).collect());
        let covariance = fit.covariance.as_ref().map(|m| {
            let d = m.nrows();
            (0..d)
                .flat_map(|i| (0..d).map(move |j| (i, j)))
                .map(|(i, j)| m[(i, j)])
                .collect()
        });
        FitReport {
            family: spec.family(),
            cutpoints: spec.cutpoints().to_vec(),
            alpha: fit.alpha,
            measure: cfg.measure,
            nodes: cfg.nodes,
            covariates: data.covariate_names().to_vec(),
            estimates,
            standard_errors,
            covariance,
            objective_value: fit.objective_value,
            estimating_norm: fit.estimating_norm,
            converged: fit.converged,
            iterations: fit.iterations,
            n: data.n(),
            n_events: data.n_events(),
            tau: data.tau(),
        }
    }

    pub fn baseline(&self) -> Result<BaselineSpec> {
        BaselineSpec::new(self.family, self.cutpoints.clone())
    }

    pub fn quadrature(&self) -> Result<QuadratureConfig> {
        Ok(QuadratureConfig::new(self.nodes)?.with_measure(self.measure))
    }

    pub fn theta(&self) -> Result<Theta> {
        let q = self.baseline()?.dim_gamma();
        let values: Vec<f64> = self.estimates.values().copied().collect();
        if values.len() != q + self.covariates.len() {
            return Err(Error::Dimension {
                expected: q + self.covariates.len(),
                got: values.len(),
            });
        }
        Theta::from_stacked(q, &values)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid fit report: {e}")))
    }
}
