//! Parametric baseline hazard families.
//!
//! Every family provides the hazard `λ(t, γ)`, the cumulative hazard
//! `Λ(t, γ)`, and the two gradient quantities used throughout the estimating
//! equations:
//!
//! - `ψ(t) = ∂/∂γ log λ(t, γ)`
//! - `Ψ(t) = ∫₀ᵗ ∂/∂γ λ(s, γ) ds = ∂/∂γ Λ(t, γ)`
//!
//! All of them are analytic. The piecewise-constant family uses right-open
//! intervals `[c_{k-1}, c_k)` with `c_0 = 0`; the last interval is unbounded.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Exponential,
    Weibull,
    #[serde(rename = "piecewise")]
    PiecewiseConstant,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Exponential => "exponential",
            Family::Weibull => "weibull",
            Family::PiecewiseConstant => "piecewise",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exponential" => Ok(Family::Exponential),
            "weibull" => Ok(Family::Weibull),
            "piecewise" => Ok(Family::PiecewiseConstant),
            other => Err(Error::Usage(format!(
                "unknown baseline family '{other}' (expected exponential, weibull or piecewise)"
            ))),
        }
    }
}

/// Parses an ascending comma-separated list of cutpoints, e.g. `"1,2.5,4"`.
pub fn parse_cutpoints(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::Usage(format!("invalid cutpoint '{}'", tok.trim())))
        })
        .collect()
}

/// A baseline hazard family together with its fixed structural settings.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSpec {
    family: Family,
    cutpoints: Vec<f64>,
}

impl BaselineSpec {
    pub fn exponential() -> Self {
        BaselineSpec {
            family: Family::Exponential,
            cutpoints: Vec::new(),
        }
    }

    pub fn weibull() -> Self {
        BaselineSpec {
            family: Family::Weibull,
            cutpoints: Vec::new(),
        }
    }

    /// Piecewise-constant hazard with `cutpoints.len() + 1` levels.
    pub fn piecewise(cutpoints: Vec<f64>) -> Result<Self> {
        if cutpoints.iter().any(|c| !c.is_finite() || *c <= 0.0) {
            return Err(Error::Domain(
                "piecewise cutpoints must be finite and strictly positive".into(),
            ));
        }
        if cutpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("piecewise cutpoints must be strictly increasing".into()));
        }
        Ok(BaselineSpec {
            family: Family::PiecewiseConstant,
            cutpoints,
        })
    }

    pub fn new(family: Family, cutpoints: Vec<f64>) -> Result<Self> {
        match family {
            Family::Exponential | Family::Weibull if !cutpoints.is_empty() => Err(Error::Usage(format!(
                "cutpoints only apply to the piecewise family, not {family}"
            ))),
            Family::Exponential => Ok(Self::exponential()),
            Family::Weibull => Ok(Self::weibull()),
            Family::PiecewiseConstant => Self::piecewise(cutpoints),
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn cutpoints(&self) -> &[f64] {
        &self.cutpoints
    }

    /// Number of baseline parameters `q`.
    pub fn dim_gamma(&self) -> usize {
        match self.family {
            Family::Exponential => 1,
            Family::Weibull => 2,
            Family::PiecewiseConstant => self.cutpoints.len() + 1,
        }
    }

    pub fn hazard_rate(&self, gamma: &GammaVector, t: f64) -> Result<f64> {
        self.check(gamma, t)?;
        let g = gamma.as_slice();
        Ok(match self.family {
            Family::Exponential => g[0],
            Family::Weibull => {
                let (scale, shape) = (g[0], g[1]);
                if t == 0.0 {
                    if shape < 1.0 {
                        return Err(Error::Singularity { shape });
                    } else if shape == 1.0 {
                        scale
                    } else {
                        0.0
                    }
                } else {
                    scale * shape * t.powf(shape - 1.0)
                }
            }
            Family::PiecewiseConstant => g[self.interval_of(t)],
        })
    }

    pub fn cum_hazard(&self, gamma: &GammaVector, t: f64) -> Result<f64> {
        self.check(gamma, t)?;
        Ok(self.cum_hazard_unchecked(gamma.as_slice(), t))
    }

    /// `ψ(t)`, the gradient of `log λ(t, γ)` in `γ`.
    pub fn log_hazard_grad(&self, gamma: &GammaVector, t: f64) -> Result<Vec<f64>> {
        self.check(gamma, t)?;
        if self.family == Family::Weibull && t <= 0.0 {
            return Err(Error::Domain(
                "Weibull log-hazard gradient needs t > 0 (log t undefined)".into(),
            ));
        }
        let mut out = vec![0.0; self.dim_gamma()];
        self.log_hazard_grad_into(gamma.as_slice(), t, &mut out);
        Ok(out)
    }

    /// `Ψ(t)`, the gradient of `Λ(t, γ)` in `γ`.
    pub fn cum_hazard_grad(&self, gamma: &GammaVector, t: f64) -> Result<Vec<f64>> {
        self.check(gamma, t)?;
        let mut out = vec![0.0; self.dim_gamma()];
        self.cum_hazard_grad_into(gamma.as_slice(), t, &mut out);
        Ok(out)
    }

    /// Solves `Λ(t, γ) = h` for `t`.
    pub fn inverse_cum_hazard(&self, gamma: &GammaVector, h: f64) -> Result<f64> {
        self.check_gamma(gamma)?;
        if !(h >= 0.0) {
            return Err(Error::Domain(format!("cumulative hazard level must be >= 0, got {h}")));
        }
        Ok(self.inverse_cum_hazard_unchecked(gamma.as_slice(), h))
    }

    pub(crate) fn check_gamma(&self, gamma: &GammaVector) -> Result<()> {
        if gamma.len() != self.dim_gamma() {
            return Err(Error::Dimension {
                expected: self.dim_gamma(),
                got: gamma.len(),
            });
        }
        Ok(())
    }

    fn check(&self, gamma: &GammaVector, t: f64) -> Result<()> {
        self.check_gamma(gamma)?;
        if !(t >= 0.0) || t.is_infinite() {
            return Err(Error::Domain(format!("time must be finite and >= 0, got {t}")));
        }
        Ok(())
    }

    fn interval_of(&self, t: f64) -> usize {
        self.cutpoints.partition_point(|&c| c <= t)
    }

    // Length of [c_{k-1}, c_k) ∩ [0, t].
    fn occupancy(&self, k: usize, t: f64) -> f64 {
        let lo = if k == 0 { 0.0 } else { self.cutpoints[k - 1] };
        let hi = self.cutpoints.get(k).copied().unwrap_or(f64::INFINITY);
        (t.min(hi) - lo).max(0.0)
    }

    // The unchecked variants below are the quadrature inner loop: callers
    // guarantee dimensions and t > 0 (t >= 0 for the cumulative quantities).

    pub(crate) fn log_hazard_unchecked(&self, g: &[f64], t: f64) -> f64 {
        match self.family {
            Family::Exponential => g[0].ln(),
            Family::Weibull => g[0].ln() + g[1].ln() + (g[1] - 1.0) * t.ln(),
            Family::PiecewiseConstant => g[self.interval_of(t)].ln(),
        }
    }

    pub(crate) fn cum_hazard_unchecked(&self, g: &[f64], t: f64) -> f64 {
        match self.family {
            Family::Exponential => g[0] * t,
            Family::Weibull => {
                if t == 0.0 {
                    0.0
                } else {
                    g[0] * t.powf(g[1])
                }
            }
            Family::PiecewiseConstant => g
                .iter()
                .enumerate()
                .map(|(k, level)| level * self.occupancy(k, t))
                .sum(),
        }
    }

    pub(crate) fn log_hazard_grad_into(&self, g: &[f64], t: f64, out: &mut [f64]) {
        match self.family {
            Family::Exponential => out[0] = 1.0 / g[0],
            Family::Weibull => {
                out[0] = 1.0 / g[0];
                out[1] = 1.0 / g[1] + t.ln();
            }
            Family::PiecewiseConstant => {
                out.iter_mut().for_each(|v| *v = 0.0);
                let k = self.interval_of(t);
                out[k] = 1.0 / g[k];
            }
        }
    }

    pub(crate) fn cum_hazard_grad_into(&self, g: &[f64], t: f64, out: &mut [f64]) {
        match self.family {
            Family::Exponential => out[0] = t,
            Family::Weibull => {
                if t == 0.0 {
                    out[0] = 0.0;
                    out[1] = 0.0;
                } else {
                    let tk = t.powf(g[1]);
                    out[0] = tk;
                    out[1] = g[0] * tk * t.ln();
                }
            }
            Family::PiecewiseConstant => {
                for (k, v) in out.iter_mut().enumerate() {
                    *v = self.occupancy(k, t);
                }
            }
        }
    }

    pub(crate) fn inverse_cum_hazard_unchecked(&self, g: &[f64], h: f64) -> f64 {
        match self.family {
            Family::Exponential => h / g[0],
            Family::Weibull => (h / g[0]).powf(1.0 / g[1]),
            Family::PiecewiseConstant => {
                let mut remaining = h;
                let mut lo = 0.0;
                for (k, level) in g.iter().enumerate() {
                    match self.cutpoints.get(k) {
                        Some(&hi) => {
                            let mass = level * (hi - lo);
                            if remaining <= mass {
                                return lo + remaining / level;
                            }
                            remaining -= mass;
                            lo = hi;
                        }
                        None => return lo + remaining / level,
                    }
                }
                unreachable!("piecewise levels always end with an unbounded interval")
            }
        }
    }
}

/// Strictly positive baseline parameters `γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct GammaVector(Vec<f64>);

impl GammaVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("gamma must have at least one component".into()));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Domain(format!(
                "gamma components must be finite and > 0, got {bad}"
            )));
        }
        Ok(GammaVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for GammaVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        GammaVector::new(v)
    }
}

impl From<GammaVector> for Vec<f64> {
    fn from(g: GammaVector) -> Self {
        g.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn gv(v: &[f64]) -> GammaVector {
        GammaVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn hazard_rate_examples() {
        let exp = BaselineSpec::exponential();
        let wei = BaselineSpec::weibull();
        assert_eq!(exp.hazard_rate(&gv(&[1.0]), 5.0).unwrap(), 1.0);
        assert_relative_eq!(wei.hazard_rate(&gv(&[2.0, 3.0]), 2.0).unwrap(), 24.0);
        for t in [0.0, 0.3, 7.0] {
            assert_relative_eq!(wei.hazard_rate(&gv(&[1.7, 1.0]), t).unwrap(), 1.7);
        }
    }

    #[test]
    fn weibull_at_zero() {
        let wei = BaselineSpec::weibull();
        assert_eq!(wei.hazard_rate(&gv(&[2.0, 3.0]), 0.0).unwrap(), 0.0);
        assert!(matches!(
            wei.hazard_rate(&gv(&[2.0, 0.5]), 0.0),
            Err(Error::Singularity { .. })
        ));
        assert!(wei.log_hazard_grad(&gv(&[2.0, 3.0]), 0.0).is_err());
    }

    #[test]
    fn cum_hazard_examples() {
        let exp = BaselineSpec::exponential();
        let wei = BaselineSpec::weibull();
        let pw = BaselineSpec::piecewise(vec![1.0, 2.0]).unwrap();
        assert_relative_eq!(exp.cum_hazard(&gv(&[1.0]), 2.0).unwrap(), 2.0);
        assert_relative_eq!(wei.cum_hazard(&gv(&[2.0, 3.0]), 2.0).unwrap(), 16.0);
        assert_eq!(exp.cum_hazard(&gv(&[3.0]), 0.0).unwrap(), 0.0);
        assert_eq!(wei.cum_hazard(&gv(&[2.0, 0.5]), 0.0).unwrap(), 0.0);
        assert_eq!(pw.cum_hazard(&gv(&[1.0, 2.0, 3.0]), 0.0).unwrap(), 0.0);
        // 1·1 + 2·1 + 3·0.5
        assert_relative_eq!(pw.cum_hazard(&gv(&[1.0, 2.0, 3.0]), 2.5).unwrap(), 4.5);
    }

    #[test]
    fn gradient_examples() {
        let exp = BaselineSpec::exponential();
        let wei = BaselineSpec::weibull();
        assert_eq!(exp.log_hazard_grad(&gv(&[2.0]), 9.0).unwrap(), vec![0.5]);
        let g = wei.log_hazard_grad(&gv(&[2.0, 3.0]), 2.0).unwrap();
        assert_relative_eq!(g[0], 0.5);
        assert_relative_eq!(g[1], 1.0 / 3.0 + 2f64.ln());
        assert_relative_eq!(g[1], 1.02648, epsilon = 1e-5);
        let g = wei.log_hazard_grad(&gv(&[2.0, 3.0]), 1.0).unwrap();
        assert_relative_eq!(g[1], 1.0 / 3.0);

        assert_eq!(exp.cum_hazard_grad(&gv(&[0.4]), 3.0).unwrap(), vec![3.0]);
        let g = wei.cum_hazard_grad(&gv(&[2.0, 3.0]), 2.0).unwrap();
        assert_relative_eq!(g[0], 8.0);
        assert_relative_eq!(g[1], 16.0 * 2f64.ln());
        assert_relative_eq!(g[1], 11.0904, epsilon = 1e-4);
        assert_eq!(wei.cum_hazard_grad(&gv(&[2.0, 3.0]), 0.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn piecewise_right_open_intervals() {
        let pw = BaselineSpec::piecewise(vec![1.0, 2.0]).unwrap();
        let g = gv(&[0.5, 2.0, 4.0]);
        assert_eq!(pw.dim_gamma(), 3);
        assert_eq!(pw.hazard_rate(&g, 0.0).unwrap(), 0.5);
        assert_eq!(pw.hazard_rate(&g, 1.0).unwrap(), 2.0);
        assert_eq!(pw.hazard_rate(&g, 1.999).unwrap(), 2.0);
        assert_eq!(pw.hazard_rate(&g, 2.0).unwrap(), 4.0);
        assert_eq!(pw.log_hazard_grad(&g, 1.5).unwrap(), vec![0.0, 0.5, 0.0]);
        assert_eq!(pw.cum_hazard_grad(&g, 2.5).unwrap(), vec![1.0, 1.0, 0.5]);
    }

    #[test]
    fn invalid_inputs() {
        assert!(GammaVector::new(vec![1.0, 0.0]).is_err());
        assert!(GammaVector::new(vec![-1.0]).is_err());
        assert!(BaselineSpec::piecewise(vec![2.0, 1.0]).is_err());
        assert!(BaselineSpec::piecewise(vec![0.0, 1.0]).is_err());
        let exp = BaselineSpec::exponential();
        assert!(exp.hazard_rate(&gv(&[1.0]), -1.0).is_err());
        assert!(matches!(
            exp.hazard_rate(&gv(&[1.0, 2.0]), 1.0),
            Err(Error::Dimension { expected: 1, got: 2 })
        ));
        assert!("lognormal".parse::<Family>().is_err());
        assert_eq!("Weibull".parse::<Family>().unwrap(), Family::Weibull);
        assert_eq!(parse_cutpoints("1, 2.5,4").unwrap(), vec![1.0, 2.5, 4.0]);
    }

    #[test]
    fn inverse_cum_hazard_roundtrip() {
        let pw = BaselineSpec::piecewise(vec![1.0, 2.0]).unwrap();
        let specs = [
            (BaselineSpec::exponential(), gv(&[1.3])),
            (BaselineSpec::weibull(), gv(&[0.7, 2.2])),
            (pw, gv(&[0.5, 2.0, 4.0])),
        ];
        for (spec, g) in &specs {
            for t in [0.0, 0.2, 1.0, 1.7, 2.0, 5.5] {
                let h = spec.cum_hazard(g, t).unwrap();
                assert_relative_eq!(spec.inverse_cum_hazard(g, h).unwrap(), t, epsilon = 1e-12);
            }
        }
    }

    // Random admissible (spec, γ, t) draws for the derivative checks.
    fn family_case() -> impl Strategy<Value = (BaselineSpec, Vec<f64>, f64)> {
        prop_oneof![
            (0.05f64..5.0, 0.05f64..10.0).prop_map(|(g, t)| (BaselineSpec::exponential(), vec![g], t)),
            (0.05f64..5.0, 0.3f64..4.0, 0.05f64..5.0).prop_map(|(a, b, t)| (BaselineSpec::weibull(), vec![a, b], t)),
            (0.05f64..5.0, 0.05f64..5.0, 0.05f64..5.0, 0.05f64..6.0)
                // keep t away from the cutpoints 1 and 2.5 where Λ has kinks
                .prop_filter("away from cutpoints", |(_, _, _, t)| {
                    (t - 1.0).abs() > 1e-3 && (t - 2.5).abs() > 1e-3
                })
                .prop_map(|(a, b, c, t)| { (BaselineSpec::piecewise(vec![1.0, 2.5]).unwrap(), vec![a, b, c], t) }),
        ]
    }

    fn central_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6 * x.abs().max(1e-3);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-8)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn cum_hazard_derivative_is_hazard((spec, g, t) in family_case()) {
            let g = gv(&g);
            let num = central_diff(|s| spec.cum_hazard(&g, s).unwrap(), t);
            let lam = spec.hazard_rate(&g, t).unwrap();
            prop_assert!(close(num, lam, 1e-6), "{num} vs {lam}");
        }

        #[test]
        fn log_hazard_grad_matches_fd((spec, g, t) in family_case()) {
            let psi = spec.log_hazard_grad(&gv(&g), t).unwrap();
            for k in 0..g.len() {
                let num = central_diff(|v| {
                    let mut gg = g.clone();
                    gg[k] = v;
                    spec.hazard_rate(&gv(&gg), t).unwrap().ln()
                }, g[k]);
                prop_assert!(close(num, psi[k], 1e-6), "k={k}: {num} vs {}", psi[k]);
            }
        }

        #[test]
        fn cum_hazard_grad_matches_fd((spec, g, t) in family_case()) {
            let big_psi = spec.cum_hazard_grad(&gv(&g), t).unwrap();
            for k in 0..g.len() {
                let num = central_diff(|v| {
                    let mut gg = g.clone();
                    gg[k] = v;
                    spec.cum_hazard(&gv(&gg), t).unwrap()
                }, g[k]);
                prop_assert!(close(num, big_psi[k], 1e-6), "k={k}: {num} vs {}", big_psi[k]);
            }
        }

        #[test]
        fn cum_hazard_nondecreasing((spec, g, _t) in family_case(),
                                    mut grid in proptest::collection::vec(0.0f64..20.0, 2..40)) {
            grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let g = gv(&g);
            let vals: Vec<f64> = grid.iter().map(|&t| spec.cum_hazard(&g, t).unwrap()).collect();
            prop_assert!(vals.windows(2).all(|w| w[1] >= w[0]));
        }
    }
}
