//! Maximum likelihood and minimum DPD fits.

use nalgebra::DMatrix;

use crate::dpd::{evaluate, QuadratureConfig};
use crate::error::{Error, Result};
use crate::hazard::{BaselineSpec, Family, GammaVector};
use crate::inference::sandwich_covariance;
use crate::model::{Dataset, Theta};
use crate::optim::{minimize, Point, Settings};

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Convergence threshold on `‖u_n^{(α)}(θ)‖_∞`.
    pub gradient_tolerance: f64,
    /// Smallest step (in the log-γ, β coordinates) before the search stops.
    pub step_tolerance: f64,
    pub max_iterations: usize,
    pub quadrature: QuadratureConfig,
    /// Starting value; defaults to moment estimates for the MLE and to the MLE
    /// for `α > 0`.
    pub init: Option<Theta>,
    pub compute_covariance: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-10,
            max_iterations: 500,
            quadrature: QuadratureConfig::default(),
            init: None,
            compute_covariance: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: Theta,
    pub alpha: f64,
    /// `H_{n,α}(θ̂)` for `α > 0`, mean negative log-likelihood at `α = 0`.
    pub objective_value: f64,
    /// `‖u_n^{(α)}(θ̂)‖_∞`.
    pub estimating_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub covariance: Option<DMatrix<f64>>,
    pub standard_errors: Option<Vec<f64>>,
    /// Objective at the starting value and after each accepted step.
    pub objective_trace: Vec<f64>,
}

pub fn fit_mle(spec: &BaselineSpec, data: &Dataset, opts: &FitOptions) -> Result<FitResult> {
    check_options(opts)?;
    check_data(spec, data)?;
    check_init(spec, data, opts.init.as_ref())?;
    if data.n_events() == 0 {
        return Err(Error::Degenerate(
            "no events in the data; the likelihood has no finite maximiser".into(),
        ));
    }
    fit_with_fallback(spec, data, 0.0, opts, opts.init.clone())
}

pub fn fit_mdpde(spec: &BaselineSpec, data: &Dataset, alpha: f64, opts: &FitOptions) -> Result<FitResult> {
    check_alpha(alpha)?;
    if alpha == 0.0 {
        return fit_mle(spec, data, opts);
    }
    check_options(opts)?;
    check_data(spec, data)?;
    check_init(spec, data, opts.init.as_ref())?;
    let init = match &opts.init {
        Some(t) => Some(t.clone()),
        None if data.n_events() > 0 => {
            let mle_opts = FitOptions {
                compute_covariance: false,
                ..opts.clone()
            };
            fit_mle(spec, data, &mle_opts)
                .ok()
                .filter(|f| f.converged)
                .map(|f| f.theta_hat)
        }
        None => None,
    };
    fit_with_fallback(spec, data, alpha, opts, init)
}

/// Fits each `α` of an ascending grid in order, starting every fit from the
/// previous converged one. A failed entry does not stop the path.
pub fn fit_path(
    spec: &BaselineSpec,
    data: &Dataset,
    alphas: &[f64],
    opts: &FitOptions,
) -> Result<Vec<Result<FitResult>>> {
    for &a in alphas {
        check_alpha(a)?;
    }
    if alphas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Usage("alpha grid must be ascending".into()));
    }
    let mut out = Vec::with_capacity(alphas.len());
    let mut warm = opts.init.clone();
    for &alpha in alphas {
        let step = FitOptions {
            init: warm.clone(),
            ..opts.clone()
        };
        let fit = fit_mdpde(spec, data, alpha, &step);
        if let Ok(f) = &fit {
            if f.converged {
                warm = Some(f.theta_hat.clone());
            }
        }
        out.push(fit);
    }
    Ok(out)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha >= 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::Usage(format!("alpha must be finite and >= 0, got {alpha}")))
    }
}

fn check_options(opts: &FitOptions) -> Result<()> {
    if !(opts.gradient_tolerance > 0.0 && opts.step_tolerance > 0.0) {
        return Err(Error::Usage("tolerances must be strictly positive".into()));
    }
    Ok(())
}

fn check_data(spec: &BaselineSpec, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Usage("dataset is empty".into()));
    }
    if let Some(last) = spec.cutpoints().last() {
        if *last >= data.tau() {
            return Err(Error::Usage(format!(
                "last cutpoint {last} lies beyond the follow-up end {}",
                data.tau()
            )));
        }
    }
    Ok(())
}

fn check_init(spec: &BaselineSpec, data: &Dataset, init: Option<&Theta>) -> Result<()> {
    let Some(t) = init else { return Ok(()) };
    if t.q() != spec.dim_gamma() {
        return Err(Error::Dimension {
            expected: spec.dim_gamma(),
            got: t.q(),
        });
    }
    if t.p() != data.p() {
        return Err(Error::Dimension {
            expected: data.p(),
            got: t.p(),
        });
    }
    Ok(())
}

/// Occurrence/exposure starting values with `β = 0`.
pub fn moment_start(spec: &BaselineSpec, data: &Dataset) -> Theta {
    let exposure: f64 = data.observations().iter().map(|o| o.time).sum();
    let overall = (data.n_events().max(1) as f64) / exposure;
    let gamma = match spec.family() {
        Family::Exponential => vec![overall],
        Family::Weibull => vec![overall, 1.0],
        Family::PiecewiseConstant => {
            let q = spec.dim_gamma();
            let mut events = vec![0.0; q];
            let mut time = vec![0.0; q];
            let cuts = spec.cutpoints();
            for o in data.observations() {
                let mut lo = 0.0;
                for k in 0..q {
                    let hi = cuts.get(k).copied().unwrap_or(f64::INFINITY);
                    time[k] += (o.time.min(hi) - lo).max(0.0);
                    if o.event && o.time >= lo && o.time < hi {
                        events[k] += 1.0;
                    }
                    lo = hi;
                }
            }
            events
                .iter()
                .zip(&time)
                .map(|(e, t)| if *e > 0.0 && *t > 0.0 { e / t } else { overall })
                .collect()
        }
    };
    let gamma = GammaVector::new(gamma).expect("moment estimates are positive and finite");
    Theta::new(gamma, vec![0.0; data.p()]).expect("beta has the data dimension")
}

fn fit_with_fallback(
    spec: &BaselineSpec,
    data: &Dataset,
    alpha: f64,
    opts: &FitOptions,
    init: Option<Theta>,
) -> Result<FitResult> {
    let fallback = moment_start(spec, data);
    let first = match &init {
        Some(t) => run(spec, data, alpha, opts, t),
        None => run(spec, data, alpha, opts, &fallback),
    };
    let best = match first {
        Ok(fit) if fit.converged => fit,
        first if init.is_some() => {
            let second = run(spec, data, alpha, opts, &fallback);
            match (first, second) {
                (Ok(a), Ok(b)) => {
                    if b.converged || b.estimating_norm < a.estimating_norm {
                        b
                    } else {
                        a
                    }
                }
                (Ok(a), Err(_)) => a,
                (Err(_), Ok(b)) => b,
                (Err(e), Err(_)) => return Err(e),
            }
        }
        other => other?,
    };
    finish(spec, data, opts, best)
}

fn finish(spec: &BaselineSpec, data: &Dataset, opts: &FitOptions, mut fit: FitResult) -> Result<FitResult> {
    if opts.compute_covariance && fit.converged {
        if let Ok(v) = sandwich_covariance(spec, data, &fit.theta_hat, fit.alpha, &opts.quadrature) {
            fit.standard_errors = Some(v.diagonal().iter().map(|d| d.max(0.0).sqrt()).collect());
            fit.covariance = Some(v);
        }
    }
    Ok(fit)
}

fn to_theta(q: usize, x: &[f64]) -> Result<Theta> {
    let stacked: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(k, v)| if k < q { v.exp() } else { *v })
        .collect();
    Theta::from_stacked(q, &stacked)
}

fn run(spec: &BaselineSpec, data: &Dataset, alpha: f64, opts: &FitOptions, start: &Theta) -> Result<FitResult> {
    if start.q() != spec.dim_gamma() {
        return Err(Error::Dimension {
            expected: spec.dim_gamma(),
            got: start.q(),
        });
    }
    if start.p() != data.p() {
        return Err(Error::Dimension {
            expected: data.p(),
            got: start.p(),
        });
    }
    let q = start.q();
    let x0: Vec<f64> = start
        .stacked()
        .iter()
        .enumerate()
        .map(|(k, v)| if k < q { v.ln() } else { *v })
        .collect();
    let eval = |x: &[f64]| -> Result<Point> {
        let theta = to_theta(q, x)?;
        let (f, u) = evaluate(spec, data, &theta, alpha, &opts.quadrature)?;
        // ∂F/∂θ = −(1+α)u; γ-coordinates are on the log scale.
        let stacked = theta.stacked();
        let grad = u
            .iter()
            .enumerate()
            .map(|(k, uk)| {
                let g = -(1.0 + alpha) * uk;
                if k < q {
                    g * stacked[k]
                } else {
                    g
                }
            })
            .collect();
        let root_norm = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(Point { f, grad, root_norm })
    };
    let settings = Settings {
        tolerance: opts.gradient_tolerance,
        step_tolerance: opts.step_tolerance,
        max_iterations: opts.max_iterations,
        max_step: 2.0,
    };
    let out = minimize(x0, eval, &settings)?;
    Ok(FitResult {
        theta_hat: to_theta(q, &out.x)?,
        alpha,
        objective_value: out.point.f,
        estimating_norm: out.point.root_norm,
        converged: out.converged,
        iterations: out.iterations,
        covariance: None,
        standard_errors: None,
        objective_trace: out.trace,
    })
}
