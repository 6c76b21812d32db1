//! Data generation under the parametric Cox model and the replicated
//! bias/MSE study.
//!
//! Every random quantity comes from its own ChaCha stream keyed by
//! `(seed, replicate, purpose)`, so a dataset depends only on those three
//! values and never on thread scheduling.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit_path, FitOptions};
use crate::hazard::{BaselineSpec, Family};
use crate::model::{linear_predictor, Dataset, Observation, Theta};

/// Mean and standard deviation of the contaminating covariate law.
pub const CONTAMINATION_MEAN: f64 = 1.0;
pub const CONTAMINATION_SD: f64 = 2.0;

/// Covariate draws used to calibrate the censoring window.
pub const CALIBRATION_DRAWS: usize = 100_000;

/// Share of failed fits above which a study cell is flagged.
pub const NONCONVERGENCE_FLAG: f64 = 0.2;

#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Purpose {
    Covariates = 0,
    Lifetimes = 1,
    Censoring = 2,
    Contamination = 3,
    Calibration = 4,
}

/// Independent stream for one `(seed, replicate, purpose)` triple.
fn stream(seed: u64, replicate: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate.wrapping_mul(8).wrapping_add(purpose as u64));
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDesign {
    pub n: usize,
    pub baseline: BaselineSpec,
    pub theta_true: Theta,
    /// Target marginal censoring proportion.
    pub censor_target: f64,
    /// Share of observations whose covariates are replaced.
    pub contamination_eps: f64,
    pub seed: u64,
}

impl SimDesign {
    pub fn p(&self) -> usize {
        self.theta_true.p()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Usage(format!("need n >= 2, got {}", self.n)));
        }
        if !(0.0..1.0).contains(&self.censor_target) {
            return Err(Error::Usage(format!(
                "censoring target must lie in [0, 1), got {}",
                self.censor_target
            )));
        }
        if !(0.0..1.0).contains(&self.contamination_eps) {
            return Err(Error::Usage(format!(
                "contamination proportion must lie in [0, 1), got {}",
                self.contamination_eps
            )));
        }
        if self.theta_true.q() != self.baseline.dim_gamma() {
            return Err(Error::Dimension {
                expected: self.baseline.dim_gamma(),
                got: self.theta_true.q(),
            });
        }
        Ok(())
    }
}

/// `Λ⁻¹(e / e^{βᵀz})` for a given unit-exponential draw `e`.
pub fn lifetime_from_exponential(spec: &BaselineSpec, theta: &Theta, z: &[f64], e: f64) -> Result<f64> {
    let risk = linear_predictor(theta, z)?.exp();
    spec.inverse_cum_hazard(&theta.gamma, e / risk)
}

/// Lifetime with conditional hazard `λ(t)e^{βᵀz}` by inverse transform.
pub fn sample_lifetime<R: Rng + ?Sized>(spec: &BaselineSpec, theta: &Theta, z: &[f64], rng: &mut R) -> Result<f64> {
    let e: f64 = Exp1.sample(rng);
    lifetime_from_exponential(spec, theta, z, e)
}

fn standard_normal_vec<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Vec<f64> {
    (0..p).map(|_| StandardNormal.sample(rng)).collect()
}

/// Upper end `c_max` of the uniform censoring law achieving the target
/// marginal censoring proportion on the uncontaminated design; `+∞` for a
/// zero target.
pub fn calibrate_censoring(design: &SimDesign) -> Result<f64> {
    design.validate()?;
    let target = design.censor_target;
    if target == 0.0 {
        return Ok(f64::INFINITY);
    }
    let spec = &design.baseline;
    let theta = &design.theta_true;
    let mut rng = stream(design.seed, u64::MAX / 8, Purpose::Calibration);

    // P(T > C | c) = E[min(T, c)]/c. Exponential baselines use the exact
    // conditional value (1 − e^{−rc})/(rc); otherwise T is drawn once per z.
    let exponential = spec.family() == Family::Exponential;
    let mut draws = Vec::with_capacity(CALIBRATION_DRAWS);
    for _ in 0..CALIBRATION_DRAWS {
        let z = standard_normal_vec(design.p(), &mut rng);
        let v = if exponential {
            theta.gamma.as_slice()[0] * linear_predictor(theta, &z)?.exp()
        } else {
            sample_lifetime(spec, theta, &z, &mut rng)?
        };
        draws.push(v);
    }
    let censored_share = |c: f64| -> f64 {
        let total: f64 = if exponential {
            draws
                .iter()
                .map(|r| {
                    let x = r * c;
                    if x < 1e-8 {
                        1.0 - 0.5 * x
                    } else {
                        -(-x).exp_m1() / x
                    }
                })
                .sum()
        } else {
            draws.iter().map(|t| t.min(c) / c).sum()
        };
        total / draws.len() as f64
    };

    // Share falls from 1 towards 0 as c grows.
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut doublings = 0;
    while censored_share(hi) > target {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 200 || !hi.is_finite() {
            return Err(Error::Calibration(format!(
                "censoring proportion stays above {target} for every window"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if censored_share(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    let c = 0.5 * (lo + hi);
    if (censored_share(c) - target).abs() > 0.005 {
        return Err(Error::Calibration(format!(
            "could not reach censoring proportion {target} (got {})",
            censored_share(c)
        )));
    }
    Ok(c)
}

/// One generated replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub dataset: Dataset,
    /// Indices whose covariates were replaced, in increasing order.
    pub contaminated: Vec<usize>,
}

/// Replicate `replicate` of the design with a known censoring window.
pub fn generate_sample(design: &SimDesign, c_max: f64, replicate: u64) -> Result<Sample> {
    design.validate()?;
    let p = design.p();
    let mut cov_rng = stream(design.seed, replicate, Purpose::Covariates);
    let mut life_rng = stream(design.seed, replicate, Purpose::Lifetimes);
    let mut cens_rng = stream(design.seed, replicate, Purpose::Censoring);
    let mut obs = Vec::with_capacity(design.n);
    for _ in 0..design.n {
        let z = standard_normal_vec(p, &mut cov_rng);
        let t = sample_lifetime(&design.baseline, &design.theta_true, &z, &mut life_rng)?;
        let (time, event) = if c_max.is_finite() {
            // (0, c_max], never exactly zero
            let c = (1.0 - cens_rng.random::<f64>()) * c_max;
            if t <= c {
                (t, true)
            } else {
                (c, false)
            }
        } else {
            (t, true)
        };
        obs.push((time, event, z));
    }

    let k = (design.contamination_eps * design.n as f64).round() as usize;
    let mut contaminated = Vec::new();
    if k > 0 {
        let mut rng = stream(design.seed, replicate, Purpose::Contamination);
        contaminated = rand::seq::index::sample(&mut rng, design.n, k).into_vec();
        contaminated.sort_unstable();
        let law = Normal::new(CONTAMINATION_MEAN, CONTAMINATION_SD).expect("valid normal law");
        for &i in &contaminated {
            for v in obs[i].2.iter_mut() {
                *v = law.sample(&mut rng);
            }
        }
    }
    let observations = obs
        .into_iter()
        .map(|(t, d, z)| Observation::new(t, d, z))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sample {
        dataset: Dataset::new(observations, p)?,
        contaminated,
    })
}

/// Replicate `replicate` of the design, calibrating the censoring window first.
pub fn generate_dataset(design: &SimDesign, replicate: u64) -> Result<Dataset> {
    let c_max = calibrate_censoring(design)?;
    Ok(generate_sample(design, c_max, replicate)?.dataset)
}

/// Monte Carlo study grid, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n_list: Vec<usize>,
    pub censor_list: Vec<f64>,
    pub eps_list: Vec<f64>,
    pub alpha_list: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub family: Family,
    pub theta_true: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutpoints: Option<Vec<f64>>,
}

const STUDY_KEYS: &[&str] = &[
    "n_list",
    "censor_list",
    "eps_list",
    "alpha_list",
    "replicates",
    "seed",
    "family",
    "theta_true",
    "cutpoints",
];

impl StudyConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let unknown: BTreeSet<&str> = table
            .keys()
            .map(String::as_str)
            .filter(|k| !STUDY_KEYS.contains(k))
            .collect();
        if !unknown.is_empty() {
            let list: Vec<&str> = unknown.into_iter().collect();
            return Err(Error::Config(format!("unknown keys: {}", list.join(", "))));
        }
        let cfg: StudyConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn baseline(&self) -> Result<BaselineSpec> {
        BaselineSpec::new(self.family, self.cutpoints.clone().unwrap_or_default())
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn theta(&self) -> Result<Theta> {
        let q = self.baseline()?.dim_gamma();
        if self.theta_true.len() < q {
            return Err(Error::Config(format!(
                "theta_true needs at least {q} baseline values, got {}",
                self.theta_true.len()
            )));
        }
        Theta::from_stacked(q, &self.theta_true).map_err(|e| Error::Config(e.to_string()))
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        for (name, list) in [
            ("n_list", self.n_list.is_empty()),
            ("censor_list", self.censor_list.is_empty()),
            ("eps_list", self.eps_list.is_empty()),
            ("alpha_list", self.alpha_list.is_empty()),
        ] {
            if list {
                return bad(format!("{name} is empty"));
            }
        }
        if let Some(n) = self.n_list.iter().find(|&&n| n < 2) {
            return bad(format!("sample size {n} is below 2"));
        }
        if let Some(c) = self.censor_list.iter().find(|c| !(0.0..1.0).contains(*c)) {
            return bad(format!("censoring proportion {c} outside [0, 1)"));
        }
        if let Some(e) = self.eps_list.iter().find(|e| !(0.0..1.0).contains(*e)) {
            return bad(format!("contamination proportion {e} outside [0, 1)"));
        }
        if let Some(a) = self.alpha_list.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
            return bad(format!("alpha {a} must be finite and >= 0"));
        }
        self.theta()?;
        Ok(())
    }
}

/// Bias and MSE for one `(n, censoring, ε, α)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub n: usize,
    pub censoring: f64,
    pub eps: f64,
    pub alpha: f64,
    pub parameters: Vec<String>,
    pub bias: Vec<f64>,
    pub mse: Vec<f64>,
    pub replicates: usize,
    pub n_converged: usize,
    /// More than 20% of the fits failed.
    pub flagged: bool,
    /// Censored share over all replicates of the cell.
    pub realized_censoring: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub cells: Vec<CellResult>,
}

#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub parallel: bool,
    pub fit: FitOptions,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            parallel: true,
            fit: FitOptions {
                compute_covariance: false,
                ..FitOptions::default()
            },
        }
    }
}

struct ReplicateOutcome {
    censored: usize,
    /// One entry per α: the estimate if the fit converged.
    estimates: Vec<Option<Vec<f64>>>,
}

pub fn run_study(config: &StudyConfig, options: &StudyOptions) -> Result<StudyResult> {
    config.validate()?;
    let baseline = config.baseline()?;
    let theta_true = config.theta()?;
    let truth = theta_true.stacked();
    let names = Theta::parameter_names(theta_true.q(), theta_true.p());
    let mut cells = Vec::new();

    for &censoring in &config.censor_list {
        let c_max = calibrate_censoring(&SimDesign {
            n: config.n_list[0],
            baseline: baseline.clone(),
            theta_true: theta_true.clone(),
            censor_target: censoring,
            contamination_eps: 0.0,
            seed: config.seed,
        })?;
        for &n in &config.n_list {
            for &eps in &config.eps_list {
                let design = SimDesign {
                    n,
                    baseline: baseline.clone(),
                    theta_true: theta_true.clone(),
                    censor_target: censoring,
                    contamination_eps: eps,
                    seed: config.seed,
                };
                let one = |r: usize| -> Result<ReplicateOutcome> {
                    let sample = generate_sample(&design, c_max, r as u64)?;
                    let data = &sample.dataset;
                    let censored = data.n() - data.n_events();
                    let estimates = match fit_path(&baseline, data, &config.alpha_list, &options.fit) {
                        Ok(fits) => fits
                            .into_iter()
                            .map(|f| f.ok().filter(|f| f.converged).map(|f| f.theta_hat.stacked()))
                            .collect(),
                        Err(_) => vec![None; config.alpha_list.len()],
                    };
                    Ok(ReplicateOutcome { censored, estimates })
                };
                let outcomes: Vec<ReplicateOutcome> = if options.parallel {
                    (0..config.replicates).into_par_iter().map(one).collect::<Result<_>>()?
                } else {
                    (0..config.replicates).map(one).collect::<Result<_>>()?
                };
                let censored: usize = outcomes.iter().map(|o| o.censored).sum();
                let realized_censoring = censored as f64 / (n * config.replicates) as f64;

                for (a_idx, &alpha) in config.alpha_list.iter().enumerate() {
                    let mut sum = vec![0.0; truth.len()];
                    let mut sq = vec![0.0; truth.len()];
                    let mut converged = 0;
                    for est in outcomes.iter().filter_map(|o| o.estimates[a_idx].as_ref()) {
                        converged += 1;
                        for k in 0..truth.len() {
                            let err = est[k] - truth[k];
                            sum[k] += err;
                            sq[k] += err * err;
                        }
                    }
                    let denom = converged.max(1) as f64;
                    let (bias, mse) = if converged == 0 {
                        (vec![f64::NAN; truth.len()], vec![f64::NAN; truth.len()])
                    } else {
                        (
                            sum.iter().map(|s| s / denom).collect(),
                            sq.iter().map(|s| s / denom).collect(),
                        )
                    };
                    let failed = config.replicates - converged;
                    cells.push(CellResult {
                        n,
                        censoring,
                        eps,
                        alpha,
                        parameters: names.clone(),
                        bias,
                        mse,
                        replicates: config.replicates,
                        n_converged: converged,
                        flagged: failed as f64 > NONCONVERGENCE_FLAG * config.replicates as f64,
                        realized_censoring,
                    });
                }
            }
        }
    }
    Ok(StudyResult { cells })
}

/// Which table of a [`StudyResult`] to export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Bias,
    Mse,
}

impl StudyResult {
    /// CSV with columns `n, censoring, eps, alpha, parameter, value, n_converged`.
    pub fn write_csv<W: std::io::Write>(&self, stat: Statistic, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["n", "censoring", "eps", "alpha", "parameter", "value", "n_converged"])
            .map_err(csv_err)?;
        for cell in &self.cells {
            let values = match stat {
                Statistic::Bias => &cell.bias,
                Statistic::Mse => &cell.mse,
            };
            for (name, v) in cell.parameters.iter().zip(values) {
                w.write_record([
                    cell.n.to_string(),
                    cell.censoring.to_string(),
                    cell.eps.to_string(),
                    cell.alpha.to_string(),
                    name.clone(),
                    v.to_string(),
                    cell.n_converged.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hazard::GammaVector;
    use approx::assert_relative_eq;

    fn design(censor: f64, eps: f64, n: usize) -> SimDesign {
        SimDesign {
            n,
            baseline: BaselineSpec::exponential(),
            theta_true: Theta::new(GammaVector::new(vec![1.0]).unwrap(), vec![2.0, -2.0]).unwrap(),
            censor_target: censor,
            contamination_eps: eps,
            seed: 42,
        }
    }

    #[test]
    fn deterministic_transform() {
        let th = Theta::new(GammaVector::new(vec![1.0]).unwrap(), vec![]).unwrap();
        let t = lifetime_from_exponential(&BaselineSpec::exponential(), &th, &[], 2f64.ln()).unwrap();
        assert_relative_eq!(t, 2f64.ln());
    }

    #[test]
    fn unit_exponential_mean() {
        let th = Theta::new(GammaVector::new(vec![1.0]).unwrap(), vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| sample_lifetime(&BaselineSpec::exponential(), &th, &[], &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn zero_target_means_no_censoring() {
        assert_eq!(calibrate_censoring(&design(0.0, 0.0, 10)).unwrap(), f64::INFINITY);
        let s = generate_sample(&design(0.0, 0.0, 50), f64::INFINITY, 0).unwrap();
        assert_eq!(s.dataset.n_events(), 50);
    }

    #[test]
    fn more_censoring_needs_shorter_window() {
        let c5 = calibrate_censoring(&design(0.05, 0.0, 10)).unwrap();
        let c10 = calibrate_censoring(&design(0.10, 0.0, 10)).unwrap();
        assert!(c10 < c5);
    }

    #[test]
    fn contamination_count_and_determinism() {
        let d = design(0.05, 0.1, 50);
        let a = generate_sample(&d, 10.0, 3).unwrap();
        let b = generate_sample(&d, 10.0, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.contaminated.len(), 5);
        let clean = generate_sample(&design(0.05, 0.0, 50), 10.0, 3).unwrap();
        for (i, (x, y)) in clean
            .dataset
            .observations()
            .iter()
            .zip(a.dataset.observations())
            .enumerate()
        {
            assert_eq!(x.time, y.time);
            assert_eq!(x.event, y.event);
            assert_eq!(x.covariates == y.covariates, !a.contaminated.contains(&i));
        }
    }

    #[test]
    fn unknown_config_keys_are_all_reported() {
        let text = r#"
            n_list = [50]
            censor_list = [0.05]
            eps_list = [0.0]
            alpha_list = [0.0]
            replicates = 2
            seed = 1
            family = "exponential"
            theta_true = [1.0, 2.0]
            colour = "red"
            bogus = 3
        "#;
        let err = StudyConfig::from_toml_str(text).unwrap_err().to_string();
        assert!(err.contains("bogus") && err.contains("colour"), "{err}");
    }

    #[test]
    fn single_replicate_bias_is_the_error() {
        let cfg = StudyConfig {
            n_list: vec![60],
            censor_list: vec![0.05],
            eps_list: vec![0.0],
            alpha_list: vec![0.0, 0.2],
            replicates: 1,
            seed: 5,
            family: Family::Exponential,
            theta_true: vec![1.0, 0.5],
            cutpoints: None,
        };
        let res = run_study(&cfg, &StudyOptions::default()).unwrap();
        assert_eq!(res.cells.len(), 2);
        for c in &res.cells {
            for (b, m) in c.bias.iter().zip(&c.mse) {
                assert_relative_eq!(b * b, *m, max_relative = 1e-12);
            }
        }
    }
}
