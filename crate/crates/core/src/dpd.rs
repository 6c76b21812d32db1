//! Density power divergence objective and estimating equations.
//!
//! For tuning parameter `α > 0` the estimator minimises
//!
//! ```text
//! H(θ) = (1/n) Σᵢ [ ∫ f_{i,θ}^{1+α} − (1+α)/α · f_{i,θ}(xᵢ, δᵢ)^α ]
//! ```
//!
//! and its root form is `u(θ) = −∇H(θ)/(1+α) = (1/n) Σᵢ [ f_{i,θ}(xᵢ,δᵢ)^α·uᵢ − ξᵢ ]`
//! with `uᵢ` the likelihood score and `ξᵢ = ∫ uᵢ f_{i,θ}^{1+α}`. At `α = 0` the
//! estimating function is the plain likelihood score.
//!
//! The per-observation model "density" is `f(s, 1) = λ(s)e^{βᵀz}S(s)` on the
//! event branch. How the censored branch enters is selected by
//! [`CensoringMeasure`]. Integrals run over `[0, τ]`: exponential baselines use
//! closed forms, every other family a fixed Gauss–Legendre rule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hazard::{BaselineSpec, Family};
use crate::model::{linear_predictor, Dataset, Observation, PointTerms, Theta};
use crate::quadrature::GaussLegendre;

/// Dominating measure for the censored branch of the observation density.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CensoringMeasure {
    /// Censored points carry no model density: `∫f^{1+α}` covers the event
    /// branch only and censored observations contribute `−ξᵢ` alone.
    /// Fisher consistent at the model when nothing is censored.
    #[default]
    EventOnly,
    /// Censored branch `f(s, 0) = S(s)` under Lebesgue measure on `[0, τ]`.
    /// Not Fisher consistent: the extra `∫ Ψ e^{βᵀz} S^{1+α}` term biases the
    /// estimating equation even without censoring.
    Lebesgue,
}

impl std::str::FromStr for CensoringMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "event-only" => Ok(CensoringMeasure::EventOnly),
            "lebesgue" => Ok(CensoringMeasure::Lebesgue),
            other => Err(Error::Usage(format!(
                "unknown censoring measure '{other}' (expected event-only or lebesgue)"
            ))),
        }
    }
}

impl std::fmt::Display for CensoringMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CensoringMeasure::EventOnly => "event-only",
            CensoringMeasure::Lebesgue => "lebesgue",
        })
    }
}

pub const DEFAULT_NODES: usize = 200;
pub const MIN_NODES: usize = 16;

/// Integration settings for the per-observation integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureConfig {
    pub nodes: usize,
    /// Use the exponential-baseline closed forms when available.
    pub closed_form: bool,
    pub measure: CensoringMeasure,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            nodes: DEFAULT_NODES,
            closed_form: true,
            measure: CensoringMeasure::default(),
        }
    }
}

impl QuadratureConfig {
    pub fn new(nodes: usize) -> Result<Self> {
        if nodes < MIN_NODES {
            return Err(Error::Usage(format!(
                "quadrature needs at least {MIN_NODES} nodes, got {nodes}"
            )));
        }
        Ok(QuadratureConfig {
            nodes,
            ..Default::default()
        })
    }

    pub fn with_measure(mut self, measure: CensoringMeasure) -> Self {
        self.measure = measure;
        self
    }

    /// Same settings but always integrating numerically.
    pub fn quadrature_only(mut self) -> Self {
        self.closed_form = false;
        self
    }
}

/// Result of [`estimating_function`].
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatingValue {
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    /// `H_{n,α}(θ)`; only defined for `α > 0`.
    pub objective: Option<f64>,
}

impl EstimatingValue {
    pub fn stacked(&self) -> Vec<f64> {
        self.u1.iter().chain(&self.u2).copied().collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.u1.iter().chain(&self.u2).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `∫f^{1+α}` and `ξ = ∫u f^{1+α}` for one covariate vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationIntegrals {
    pub density_power: f64,
    pub xi_gamma: Vec<f64>,
    pub xi_beta: Vec<f64>,
}

// Λ(s)·(1+α)·e^{βᵀz} level beyond which S^{1+α} < e^{-50} and the integrands
// are negligible.
const TRUNCATION_LEVEL: f64 = 50.0;

/// `∫₀^τ f^{1+α}` summed over both branches of the observation density.
pub fn density_power_integral(
    spec: &BaselineSpec,
    theta: &Theta,
    z: &[f64],
    alpha: f64,
    tau: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    Ok(observation_integrals(spec, theta, z, alpha, tau, cfg)?.density_power)
}

/// `(ξ⁽¹⁾, ξ⁽²⁾)`, the γ- and β-blocks of `∫ u f^{1+α}`.
pub fn xi_terms(
    spec: &BaselineSpec,
    theta: &Theta,
    z: &[f64],
    alpha: f64,
    tau: f64,
    cfg: &QuadratureConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let r = observation_integrals(spec, theta, z, alpha, tau, cfg)?;
    Ok((r.xi_gamma, r.xi_beta))
}

pub fn observation_integrals(
    spec: &BaselineSpec,
    theta: &Theta,
    z: &[f64],
    alpha: f64,
    tau: f64,
    cfg: &QuadratureConfig,
) -> Result<ObservationIntegrals> {
    spec.check_gamma(&theta.gamma)?;
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::Usage(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    if !(tau >= 0.0) {
        return Err(Error::Usage(format!("tau must be >= 0, got {tau}")));
    }
    let eta = linear_predictor(theta, z)?;
    let out = if cfg.closed_form && spec.family() == Family::Exponential {
        exponential_closed_form(theta.gamma.as_slice()[0], eta, z, alpha, tau, cfg.measure)
    } else {
        quadrature_integrals(spec, theta, eta, z, alpha, tau, cfg)?
    };
    let finite = out.density_power.is_finite() && out.xi_gamma.iter().chain(&out.xi_beta).all(|v| v.is_finite());
    if !finite {
        return Err(Error::Integration {
            index: None,
            reason: format!(
                "non-finite integral (density power {}, alpha {alpha}, tau {tau}, eta {eta})",
                out.density_power
            ),
        });
    }
    Ok(out)
}

/// `∫₀^τ e^{-a s} ds`.
fn exp_moment0(a: f64, tau: f64) -> f64 {
    if tau.is_infinite() {
        1.0 / a
    } else {
        -(-a * tau).exp_m1() / a
    }
}

/// `∫₀^τ s e^{-a s} ds = (1 − e^{-x}(1 + x))/a²` with `x = aτ`.
fn exp_moment1(a: f64, tau: f64) -> f64 {
    if tau.is_infinite() {
        return 1.0 / (a * a);
    }
    let x = a * tau;
    let g = if x < 0.05 {
        // Σ_{k≥2} (−1)^k (k−1) x^k / k!
        let mut term = x * x / 2.0;
        let mut sum = term;
        for k in 3..20 {
            let kf = k as f64;
            term *= -x / kf;
            sum += term * (kf - 1.0);
        }
        sum
    } else {
        -(-x).exp_m1() - x * (-x).exp()
    };
    g / (a * a)
}

fn exponential_closed_form(
    gamma: f64,
    eta: f64,
    z: &[f64],
    alpha: f64,
    tau: f64,
    measure: CensoringMeasure,
) -> ObservationIntegrals {
    if tau == 0.0 {
        return ObservationIntegrals {
            density_power: 0.0,
            xi_gamma: vec![0.0],
            xi_beta: vec![0.0; z.len()],
        };
    }
    let risk = eta.exp();
    let rate = gamma * risk;
    let a = (1.0 + alpha) * rate;
    let i0 = exp_moment0(a, tau);
    let i1 = exp_moment1(a, tau);
    let peak = ((1.0 + alpha) * rate.ln()).exp();
    let event_mass = peak * i0;
    let (cens_mass, cens_i1) = match measure {
        CensoringMeasure::EventOnly => (0.0, 0.0),
        CensoringMeasure::Lebesgue => (i0, i1),
    };
    let xi_gamma = event_mass / gamma - peak * risk * i1 - risk * cens_i1;
    let xi_beta_scalar = event_mass - peak * rate * i1 - rate * cens_i1;
    ObservationIntegrals {
        density_power: event_mass + cens_mass,
        xi_gamma: vec![xi_gamma],
        xi_beta: z.iter().map(|zj| zj * xi_beta_scalar).collect(),
    }
}

fn quadrature_integrals(
    spec: &BaselineSpec,
    theta: &Theta,
    eta: f64,
    z: &[f64],
    alpha: f64,
    tau: f64,
    cfg: &QuadratureConfig,
) -> Result<ObservationIntegrals> {
    let g = theta.gamma.as_slice();
    let q = g.len();
    let risk = eta.exp();
    let ap1 = 1.0 + alpha;
    let mut acc = ObservationIntegrals {
        density_power: 0.0,
        xi_gamma: vec![0.0; q],
        xi_beta: vec![0.0; z.len()],
    };
    // Beyond Λ(s) = level the integrands are below e^{-50} of their scale.
    let level = TRUNCATION_LEVEL / (ap1 * risk);
    let end = if level.is_finite() {
        tau.min(spec.inverse_cum_hazard_unchecked(g, level))
    } else {
        tau
    };
    if !(end > 0.0) {
        return Ok(acc);
    }
    if end.is_infinite() {
        return Err(Error::Integration {
            index: None,
            reason: "unbounded integration window".into(),
        });
    }

    let rule = GaussLegendre::cached(cfg.nodes);
    let lebesgue = cfg.measure == CensoringMeasure::Lebesgue;
    let mut psi = vec![0.0; q];
    let mut big_psi = vec![0.0; q];
    let mut beta_scalar = 0.0;
    let mut add = |s: f64, w: f64, acc: &mut ObservationIntegrals| {
        let cum = spec.cum_hazard_unchecked(g, s);
        spec.log_hazard_grad_into(g, s, &mut psi);
        spec.cum_hazard_grad_into(g, s, &mut big_psi);
        let log_surv = -ap1 * cum * risk;
        let event = (ap1 * (spec.log_hazard_unchecked(g, s) + eta) + log_surv).exp();
        let cens = if lebesgue { log_surv.exp() } else { 0.0 };
        acc.density_power += w * (event + cens);
        for k in 0..q {
            acc.xi_gamma[k] += w * (psi[k] * event - (event + cens) * big_psi[k] * risk);
        }
        beta_scalar += w * (event - (event + cens) * cum * risk);
    };

    match spec.family() {
        Family::Weibull => {
            // s = end·u^m flattens the s^{(k-1)(1+α)} and log s behaviour at 0.
            let shape = g[1];
            let lowest = ((shape - 1.0) * ap1).min(0.0);
            if lowest <= -1.0 {
                return Err(Error::Integration {
                    index: None,
                    reason: format!("Weibull shape {shape} with alpha {alpha} makes the integrand non-integrable at 0"),
                });
            }
            let m = 3.0 / (1.0 + lowest);
            for (u, w) in rule.mapped(0.0, 1.0) {
                let s = end * u.powf(m);
                let jac = end * m * u.powf(m - 1.0);
                add(s, w * jac, &mut acc);
            }
        }
        _ => {
            let mut lo = 0.0;
            let breaks = spec.cutpoints().iter().copied().filter(|&c| c < end);
            for hi in breaks.chain(std::iter::once(end)) {
                for (s, w) in rule.mapped(lo, hi) {
                    add(s, w, &mut acc);
                }
                lo = hi;
            }
        }
    }
    for (x, zj) in acc.xi_beta.iter_mut().zip(z) {
        *x = zj * beta_scalar;
    }
    Ok(acc)
}

/// Per-observation summand of the estimating function together with its
/// objective contribution (`H` term for `α > 0`, `−log f` for `α = 0`).
pub(crate) fn observation_terms(
    spec: &BaselineSpec,
    theta: &Theta,
    obs: &Observation,
    alpha: f64,
    tau: f64,
    cfg: &QuadratureConfig,
) -> Result<(Vec<f64>, f64)> {
    if !(alpha >= 0.0) {
        return Err(Error::Usage(format!("alpha must be >= 0, got {alpha}")));
    }
    let terms = PointTerms::at(spec, theta, obs)?;
    let mut contribution = vec![0.0; theta.dim()];
    terms.score_into(&obs.covariates, &mut contribution);
    if alpha == 0.0 {
        let log_f = if terms.event { terms.log_hazard + terms.eta } else { 0.0 } + terms.log_survival();
        return Ok((contribution, -log_f));
    }
    // f(xᵢ, δᵢ)^α
    let weight = match (terms.event, cfg.measure) {
        (true, _) => (alpha * (terms.log_hazard + terms.eta + terms.log_survival())).exp(),
        (false, CensoringMeasure::Lebesgue) => (alpha * terms.log_survival()).exp(),
        (false, CensoringMeasure::EventOnly) => 0.0,
    };
    let integrals = observation_integrals(spec, theta, &obs.covariates, alpha, tau, cfg)?;
    let q = theta.q();
    for (k, c) in contribution.iter_mut().enumerate() {
        let xi = if k < q {
            integrals.xi_gamma[k]
        } else {
            integrals.xi_beta[k - q]
        };
        *c = weight * *c - xi;
    }
    let objective = integrals.density_power - (1.0 + alpha) / alpha * weight;
    Ok((contribution, objective))
}

// Below this size the per-observation loop stays on the calling thread.
const PARALLEL_MIN_OBS: usize = 256;

/// Per-observation `(contribution, objective term)` pairs in dataset order.
pub(crate) fn all_observation_terms(
    spec: &BaselineSpec,
    data: &Dataset,
    theta: &Theta,
    alpha: f64,
    cfg: &QuadratureConfig,
) -> Result<Vec<(Vec<f64>, f64)>> {
    if theta.p() != data.p() {
        return Err(Error::Dimension {
            expected: data.p(),
            got: theta.p(),
        });
    }
    let tau = data.tau();
    let one = |(i, o): (usize, &Observation)| {
        observation_terms(spec, theta, o, alpha, tau, cfg).map_err(|e| e.at_observation(i))
    };
    if data.n() >= PARALLEL_MIN_OBS {
        data.observations().par_iter().enumerate().map(one).collect()
    } else {
        data.observations().iter().enumerate().map(one).collect()
    }
}

/// Objective value and estimating function in one pass; the objective is
/// `H_{n,α}` for `α > 0` and the mean negative log-likelihood at `α = 0`.
pub(crate) fn evaluate(
    spec: &BaselineSpec,
    data: &Dataset,
    theta: &Theta,
    alpha: f64,
    cfg: &QuadratureConfig,
) -> Result<(f64, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::Usage("dataset is empty".into()));
    }
    let terms = all_observation_terms(spec, data, theta, alpha, cfg)?;
    let n = data.n() as f64;
    let mut u = vec![0.0; theta.dim()];
    let mut objective = 0.0;
    for (c, h) in &terms {
        for (acc, v) in u.iter_mut().zip(c) {
            *acc += v;
        }
        objective += h;
    }
    u.iter_mut().for_each(|v| *v /= n);
    Ok((objective / n, u))
}

/// `H_{n,α}(θ)`; requires `α > 0` (use the likelihood path at `α = 0`).
pub fn dpd_objective(
    spec: &BaselineSpec,
    data: &Dataset,
    theta: &Theta,
    alpha: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Usage(format!(
            "the DPD objective needs alpha > 0 (got {alpha}); use the maximum-likelihood fit for alpha = 0"
        )));
    }
    Ok(evaluate(spec, data, theta, alpha, cfg)?.0)
}

/// `u_n^{(α)}(θ)`, the average of the per-observation estimating summands.
pub fn estimating_function(
    spec: &BaselineSpec,
    data: &Dataset,
    theta: &Theta,
    alpha: f64,
    cfg: &QuadratureConfig,
) -> Result<EstimatingValue> {
    let (objective, u) = evaluate(spec, data, theta, alpha, cfg)?;
    let q = theta.q();
    Ok(EstimatingValue {
        u1: u[..q].to_vec(),
        u2: u[q..].to_vec(),
        objective: (alpha > 0.0).then_some(objective),
    })
}

/// Mean log-likelihood `(1/n) Σ log f_{i,θ}(xᵢ, δᵢ)`.
pub fn mean_log_likelihood(spec: &BaselineSpec, data: &Dataset, theta: &Theta) -> Result<f64> {
    let cfg = QuadratureConfig::default();
    Ok(-evaluate(spec, data, theta, 0.0, &cfg)?.0)
}
