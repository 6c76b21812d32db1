//! Sandwich covariance, influence diagnostics and residuals.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dpd::{all_observation_terms, estimating_function, observation_terms, QuadratureConfig};
use crate::error::{Error, Result};
use crate::hazard::BaselineSpec;
use crate::model::{linear_predictor, Dataset, Observation, Theta};

/// Ĵ with a reciprocal condition number below this is treated as singular.
const MIN_RECIPROCAL_CONDITION: f64 = 1e-9;

/// Default influence flag: norm above this multiple of the median norm.
pub const DEFAULT_INFLUENCE_MULTIPLE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfluenceRecord {
    pub index: usize,
    pub contribution: Vec<f64>,
    pub norm: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRecord {
    pub index: usize,
    pub cox_snell: f64,
    pub martingale: f64,
    pub deviance: f64,
    pub outlier: bool,
}

/// `(L̂₁ᵢ, L̂₂ᵢ)`: the summand of the estimating function for one observation.
pub fn per_observation_contribution(
    spec: &BaselineSpec,
    theta: &Theta,
    obs: &Observation,
    alpha: f64,
    tau: f64,
    cfg: &QuadratureConfig,
) -> Result<Vec<f64>> {
    Ok(observation_terms(spec, theta, obs, alpha, tau, cfg)?.0)
}

/// All contributions in dataset order.
pub fn contributions(
    spec: &BaselineSpec,
    data: &Dataset,
    theta: &Theta,
    alpha: f64,
    cfg: &QuadratureConfig,
) -> Result<Vec<Vec<f64>>> {
    Ok(all_observation_terms(spec, data, theta, alpha, cfg)?
        .into_iter()
        .map(|(c, _)| c)
        .collect())
}

/// `Ĵ = −∇u_n^{(α)}(θ)` by central differences, symmetrised.
pub fn jacobian(
    spec: &BaselineSpec,
    data: &Dataset,
    theta: &Theta,
    alpha: f64,
    cfg: &QuadratureConfig,
) -> Result<DMatrix<f64>> {
    let base = theta.stacked();
    let d = base.len();
    let q = theta.q();
    let mut j = DMatrix::zeros(d, d);
    for k in 0..d {
        let mut h = 1e-5 * base[k].abs().max(1.0);
        if k < q {
            h = h.min(0.5 * base[k]);
        }
        let shifted = |delta: f64| -> Result<Vec<f64>> {
            let mut s = base.clone();
            s[k] += delta;
            let th = Theta::from_stacked(q, &s)?;
            Ok(estimating_function(spec, data, &th, alpha, cfg)?.stacked())
        };
        let up = shifted(h)?;
        let down = shifted(-h)?;
        for r in 0..d {
            j[(r, k)] = -(up[r] - down[r]) / (2.0 * h);
        }
    }
    Ok(symmetrize(&j))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn checked_inverse(j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sv = j.clone().singular_values();
    let largest = sv.max();
    let smallest = sv.min();
    if !(smallest > MIN_RECIPROCAL_CONDITION * largest) {
        return Err(Error::NearSingular {
            condition: if smallest > 0.0 {
                largest / smallest
            } else {
                f64::INFINITY
            },
        });
    }
    j.clone().try_inverse().ok_or(Error::NearSingular {
        condition: largest / smallest,
    })
}

/// `(1/n) Ĵ⁻¹ K̂ Ĵ⁻¹` with `K̂ = (1/n) Σ L̂ᵢL̂ᵢᵀ`.
pub fn sandwich_covariance(
    spec: &BaselineSpec,
    data: &Dataset,
    theta: &Theta,
    alpha: f64,
    cfg: &QuadratureConfig,
) -> Result<DMatrix<f64>> {
    let j_inv = checked_inverse(&jacobian(spec, data, theta, alpha, cfg)?)?;
    let n = data.n() as f64;
    let d = theta.dim();
    let mut k = DMatrix::zeros(d, d);
    for c in contributions(spec, data, theta, alpha, cfg)? {
        let v = DVector::from_vec(c);
        k += &v * v.transpose();
    }
    k /= n;
    Ok(symmetrize(&(&j_inv * k * &j_inv)) / n)
}

/// `Îᵢ = Ĵ⁻¹ L̂ᵢ`, flagged above `3 ×` the median norm.
pub fn influence_diagnostics(
    spec: &BaselineSpec,
    data: &Dataset,
    theta: &Theta,
    alpha: f64,
    cfg: &QuadratureConfig,
) -> Result<Vec<InfluenceRecord>> {
    influence_diagnostics_with_threshold(spec, data, theta, alpha, cfg, DEFAULT_INFLUENCE_MULTIPLE)
}

pub fn influence_diagnostics_with_threshold(
    spec: &BaselineSpec,
    data: &Dataset,
    theta: &Theta,
    alpha: f64,
    cfg: &QuadratureConfig,
    median_multiple: f64,
) -> Result<Vec<InfluenceRecord>> {
    let j_inv = checked_inverse(&jacobian(spec, data, theta, alpha, cfg)?)?;
    let mut records: Vec<InfluenceRecord> = contributions(spec, data, theta, alpha, cfg)?
        .into_iter()
        .enumerate()
        .map(|(index, c)| {
            let v = &j_inv * DVector::from_vec(c);
            InfluenceRecord {
                index,
                norm: v.norm(),
                contribution: v.iter().copied().collect(),
                flagged: false,
            }
        })
        .collect();
    let mut norms: Vec<f64> = records.iter().map(|r| r.norm).collect();
    let cutoff = median_multiple * median(&mut norms);
    for r in &mut records {
        r.flagged = r.norm > cutoff;
    }
    Ok(records)
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n.is_multiple_of(2) {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    } else {
        v[n / 2]
    }
}

/// Cox–Snell `rᵢ = Λ(xᵢ)e^{βᵀzᵢ}`, martingale `δᵢ − rᵢ` and deviance residuals;
/// outliers fall outside `[−2, 2]`.
pub fn cox_snell_residuals(spec: &BaselineSpec, data: &Dataset, theta: &Theta) -> Result<Vec<ResidualRecord>> {
    data.observations()
        .iter()
        .enumerate()
        .map(|(index, o)| {
            let r = spec.cum_hazard(&theta.gamma, o.time)? * linear_predictor(theta, &o.covariates)?.exp();
            let delta = if o.event { 1.0 } else { 0.0 };
            let m = delta - r;
            let deviance = deviance_residual(m, delta);
            Ok(ResidualRecord {
                index,
                cox_snell: r,
                martingale: m,
                deviance,
                outlier: deviance.abs() > 2.0,
            })
        })
        .collect()
}

fn deviance_residual(m: f64, delta: f64) -> f64 {
    let log_term = if delta > 0.0 { delta * (delta - m).ln() } else { 0.0 };
    if m == 0.0 {
        return 0.0;
    }
    m.signum() * (-2.0 * (m + log_term)).max(0.0).sqrt()
}

/// One row of the diagnostics export.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub index: usize,
    pub time: f64,
    pub status: u8,
    pub cox_snell: f64,
    pub martingale: f64,
    pub deviance: f64,
    pub influence_norm: f64,
    pub outlier_flag: bool,
}

/// Residuals joined with influence norms. The outlier flag is the deviance rule.
pub fn diagnostics(
    spec: &BaselineSpec,
    data: &Dataset,
    theta: &Theta,
    alpha: f64,
    cfg: &QuadratureConfig,
) -> Result<Vec<DiagnosticRow>> {
    let residuals = cox_snell_residuals(spec, data, theta)?;
    let influence = influence_diagnostics(spec, data, theta, alpha, cfg)?;
    Ok(residuals
        .into_iter()
        .zip(influence)
        .zip(data.observations())
        .map(|((r, i), o)| DiagnosticRow {
            index: r.index,
            time: o.time,
            status: o.status(),
            cox_snell: r.cox_snell,
            martingale: r.martingale,
            deviance: r.deviance,
            influence_norm: i.norm,
            outlier_flag: r.outlier,
        })
        .collect())
}
