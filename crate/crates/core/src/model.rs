//! The fully parametric Cox model `λ(t | z) = λ(t, γ)·exp(βᵀz)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hazard::{BaselineSpec, GammaVector};

/// Full parameter vector `θ = (γ, β)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub gamma: GammaVector,
    pub beta: Vec<f64>,
}

impl Theta {
    pub fn new(gamma: GammaVector, beta: Vec<f64>) -> Result<Self> {
        if let Some(b) = beta.iter().find(|b| !b.is_finite()) {
            return Err(Error::Domain(format!("beta components must be finite, got {b}")));
        }
        Ok(Theta { gamma, beta })
    }

    /// Builds θ from a stacked `(γ, β)` slice with `q` baseline components.
    pub fn from_stacked(q: usize, values: &[f64]) -> Result<Self> {
        if values.len() < q {
            return Err(Error::Dimension {
                expected: q,
                got: values.len(),
            });
        }
        Theta::new(GammaVector::new(values[..q].to_vec())?, values[q..].to_vec())
    }

    pub fn q(&self) -> usize {
        self.gamma.len()
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn dim(&self) -> usize {
        self.q() + self.p()
    }

    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.gamma.as_slice().to_vec();
        v.extend_from_slice(&self.beta);
        v
    }

    /// Parameter labels `gamma_1..q, beta_1..p`.
    pub fn parameter_names(q: usize, p: usize) -> Vec<String> {
        (1..=q)
            .map(|k| format!("gamma_{k}"))
            .chain((1..=p).map(|k| format!("beta_{k}")))
            .collect()
    }
}

/// One right-censored observation `(x, δ, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    /// `δ = 1`: the event was observed at `time`; otherwise censored.
    pub event: bool,
    pub covariates: Vec<f64>,
}

impl Observation {
    pub fn new(time: f64, event: bool, covariates: Vec<f64>) -> Result<Self> {
        if !(time.is_finite() && time > 0.0) {
            return Err(Error::Domain(format!("observation time must be > 0, got {time}")));
        }
        if let Some(z) = covariates.iter().find(|z| !z.is_finite()) {
            return Err(Error::Domain(format!("covariates must be finite, got {z}")));
        }
        Ok(Observation {
            time,
            event,
            covariates,
        })
    }

    pub fn status(&self) -> u8 {
        u8::from(self.event)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    p: usize,
    tau: f64,
    covariate_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset with `τ` equal to the largest observed time.
    pub fn new(observations: Vec<Observation>, p: usize) -> Result<Self> {
        if let Some((i, o)) = observations.iter().enumerate().find(|(_, o)| o.covariates.len() != p) {
            return Err(Error::Usage(format!(
                "observation {i} has {} covariates, dataset declares p = {p}",
                o.covariates.len()
            )));
        }
        let tau = observations.iter().map(|o| o.time).fold(0.0, f64::max);
        Ok(Dataset {
            observations,
            p,
            tau,
            covariate_names: (1..=p).map(|k| format!("z{k}")).collect(),
        })
    }

    /// Overrides the observation-window end; must cover every observed time.
    pub fn with_tau(mut self, tau: f64) -> Result<Self> {
        let max_time = self.max_time();
        if !(tau >= max_time) || tau.is_nan() {
            return Err(Error::Usage(format!(
                "tau = {tau} is smaller than the largest observed time {max_time}"
            )));
        }
        self.tau = tau;
        Ok(self)
    }

    pub fn with_covariate_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p {
            return Err(Error::Dimension {
                expected: self.p,
                got: names.len(),
            });
        }
        self.covariate_names = names;
        Ok(self)
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.observations.iter().filter(|o| o.event).count()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn max_time(&self) -> f64 {
        self.observations.iter().map(|o| o.time).fold(0.0, f64::max)
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Copy keeping only the observations for which `keep(index)` holds.
    /// `τ` is carried over unchanged.
    pub fn filter_indices(&self, keep: impl Fn(usize) -> bool) -> Dataset {
        Dataset {
            observations: self
                .observations
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(*i))
                .map(|(_, o)| o.clone())
                .collect(),
            p: self.p,
            tau: self.tau,
            covariate_names: self.covariate_names.clone(),
        }
    }
}

/// `βᵀz`; zero when there are no covariates.
pub fn linear_predictor(theta: &Theta, z: &[f64]) -> Result<f64> {
    if z.len() != theta.p() {
        return Err(Error::Dimension {
            expected: theta.p(),
            got: z.len(),
        });
    }
    Ok(dot(&theta.beta, z))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `S(t | z) = exp(-Λ(t, γ)·exp(βᵀz))`.
pub fn conditional_survival(spec: &BaselineSpec, theta: &Theta, z: &[f64], t: f64) -> Result<f64> {
    let eta = linear_predictor(theta, z)?;
    Ok((-spec.cum_hazard(&theta.gamma, t)? * eta.exp()).exp())
}

/// Per-observation log-likelihood contribution
/// `δ·(log λ(x, γ) + βᵀz) − Λ(x, γ)·exp(βᵀz)`.
pub fn log_density(spec: &BaselineSpec, theta: &Theta, obs: &Observation) -> Result<f64> {
    let eta = linear_predictor(theta, &obs.covariates)?;
    let cum = spec.cum_hazard(&theta.gamma, obs.time)?;
    let mut ll = -cum * eta.exp();
    if obs.event {
        ll += spec.hazard_rate(&theta.gamma, obs.time)?.ln() + eta;
    }
    Ok(ll)
}

/// Gradient of [`log_density`] in `θ = (γ, β)`.
pub fn score(spec: &BaselineSpec, theta: &Theta, obs: &Observation) -> Result<Vec<f64>> {
    spec.check_gamma(&theta.gamma)?;
    let terms = PointTerms::at(spec, theta, obs)?;
    let mut out = vec![0.0; theta.dim()];
    terms.score_into(&obs.covariates, &mut out);
    Ok(out)
}

/// Model quantities at an observation's own time, shared by the likelihood
/// score and the DPD estimating function.
#[derive(Debug, Clone)]
pub(crate) struct PointTerms {
    pub event: bool,
    pub eta: f64,
    pub risk: f64,
    pub log_hazard: f64,
    pub cum: f64,
    pub psi: Vec<f64>,
    pub big_psi: Vec<f64>,
}

impl PointTerms {
    pub fn at(spec: &BaselineSpec, theta: &Theta, obs: &Observation) -> Result<Self> {
        let eta = linear_predictor(theta, &obs.covariates)?;
        let g = theta.gamma.as_slice();
        let t = obs.time;
        let q = theta.q();
        let mut psi = vec![0.0; q];
        let mut big_psi = vec![0.0; q];
        spec.cum_hazard_grad_into(g, t, &mut big_psi);
        let log_hazard = if obs.event {
            spec.log_hazard_grad_into(g, t, &mut psi);
            spec.log_hazard_unchecked(g, t)
        } else {
            0.0
        };
        Ok(PointTerms {
            event: obs.event,
            eta,
            risk: eta.exp(),
            log_hazard,
            cum: spec.cum_hazard_unchecked(g, t),
            psi,
            big_psi,
        })
    }

    /// `log S(x | z)`.
    pub fn log_survival(&self) -> f64 {
        -self.cum * self.risk
    }

    pub fn score_into(&self, z: &[f64], out: &mut [f64]) {
        let q = self.psi.len();
        let d = if self.event { 1.0 } else { 0.0 };
        for ((o, psi), big_psi) in out[..q].iter_mut().zip(&self.psi).zip(&self.big_psi) {
            *o = d * psi - big_psi * self.risk;
        }
        let s = d - self.cum * self.risk;
        for (o, zj) in out[q..].iter_mut().zip(z) {
            *o = zj * s;
        }
    }
}
