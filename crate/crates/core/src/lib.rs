//! Robust estimation for fully parametric proportional hazards models.
//!
//! The conditional hazard is `λ(t | z) = λ(t; γ) exp(βᵀz)` with an exponential,
//! Weibull or piecewise-constant baseline. [`fit_mdpde`] minimises the density
//! power divergence for a tuning parameter `α ≥ 0` (`α = 0` is the MLE);
//! [`inference`] adds sandwich standard errors, influence and residual
//! diagnostics, and [`simulate`] runs seeded Monte Carlo studies.
//!
//! ```
//! use coxdpd::{fit_mdpde, BaselineSpec, Dataset, FitOptions, Observation};
//!
//! let data = Dataset::new(
//!     vec![
//!         Observation::new(0.8, true, vec![0.2])?,
//!         Observation::new(1.7, true, vec![-0.4])?,
//!         Observation::new(2.5, false, vec![1.1])?,
//!         Observation::new(0.4, true, vec![0.9])?,
//!     ],
//!     1,
//! )?;
//! let fit = fit_mdpde(&BaselineSpec::exponential(), &data, 0.3, &FitOptions::default())?;
//! assert!(fit.converged);
//! # Ok::<(), coxdpd::Error>(())
//! ```

// `!(x >= 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dpd;
pub mod error;
pub mod estimator;
pub mod hazard;
pub mod inference;
pub mod io;
pub mod model;
mod optim;
pub mod quadrature;
pub mod simulate;

pub use dpd::{CensoringMeasure, EstimatingValue, QuadratureConfig};
pub use error::{Error, Result};
pub use estimator::{fit_mdpde, fit_mle, fit_path, FitOptions, FitResult};
pub use hazard::{BaselineSpec, Family, GammaVector};
pub use model::{Dataset, Observation, Theta};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/divergence.md")]
    mod divergence {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
