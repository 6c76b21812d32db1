use coxdpd::simulate::{
    calibrate_censoring, generate_sample, run_study, sample_lifetime, SimDesign, Statistic, StudyConfig, StudyOptions,
};
use coxdpd::{BaselineSpec, Error, GammaVector, Theta};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn exp_design(n: usize, censor: f64, eps: f64, seed: u64) -> SimDesign {
    SimDesign {
        n,
        baseline: BaselineSpec::exponential(),
        theta_true: Theta::new(GammaVector::new(vec![1.0]).unwrap(), vec![2.0, -2.0]).unwrap(),
        censor_target: censor,
        contamination_eps: eps,
        seed,
    }
}

/// One-sample Kolmogorov–Smirnov statistic against a continuous cdf.
fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn unit_weibull_lifetimes_are_standard_exponential() {
    let spec = BaselineSpec::weibull();
    let theta = Theta::new(GammaVector::new(vec![1.0, 1.0]).unwrap(), vec![]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let n = 10_000;
    let xs: Vec<f64> = (0..n)
        .map(|_| sample_lifetime(&spec, &theta, &[], &mut rng).unwrap())
        .collect();
    let d = ks_statistic(xs, |t| 1.0 - (-t).exp());
    // 1% critical value 1.628/√n.
    assert!(d < 1.628 / (n as f64).sqrt(), "KS {d}");
}

#[test]
fn lifetimes_follow_the_proportional_hazard() {
    let spec = BaselineSpec::weibull();
    let theta = Theta::new(GammaVector::new(vec![0.5, 2.0]).unwrap(), vec![0.7]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let z = [1.3];
    let n = 10_000;
    let xs: Vec<f64> = (0..n)
        .map(|_| sample_lifetime(&spec, &theta, &z, &mut rng).unwrap())
        .collect();
    let risk = (0.7f64 * 1.3).exp();
    let d = ks_statistic(xs, |t| 1.0 - (-0.5 * t * t * risk).exp());
    assert!(d < 1.628 / (n as f64).sqrt(), "KS {d}");
}

#[test]
fn five_percent_censoring_is_realized() {
    let design = exp_design(100_000, 0.05, 0.0, 53);
    let c = calibrate_censoring(&design).unwrap();
    let data = generate_sample(&design, c, 0).unwrap().dataset;
    let share = 1.0 - data.n_events() as f64 / data.n() as f64;
    assert!((0.04..=0.06).contains(&share), "{share}");
}

#[test]
fn realized_censoring_tracks_target_across_designs() {
    for (target, family) in [(0.1, BaselineSpec::exponential()), (0.3, BaselineSpec::weibull())] {
        let gamma = if family.dim_gamma() == 1 {
            vec![1.0]
        } else {
            vec![1.0, 1.5]
        };
        let design = SimDesign {
            n: 200,
            baseline: family,
            theta_true: Theta::new(GammaVector::new(gamma).unwrap(), vec![2.0, -2.0]).unwrap(),
            censor_target: target,
            contamination_eps: 0.0,
            seed: 54,
        };
        let c = calibrate_censoring(&design).unwrap();
        let mut censored = 0;
        for r in 0..100 {
            let d = generate_sample(&design, c, r).unwrap().dataset;
            censored += d.n() - d.n_events();
        }
        let share = censored as f64 / 20_000.0;
        assert!((share - target).abs() <= 0.01, "target {target}: {share}");
    }
}

#[test]
fn contamination_replaces_the_requested_count() {
    let design = exp_design(200, 0.0, 0.1, 55);
    let s = generate_sample(&design, f64::INFINITY, 3).unwrap();
    assert_eq!(s.contaminated.len(), 20);
    assert!(s.contaminated.windows(2).all(|w| w[0] < w[1]));
    let clean = generate_sample(&exp_design(200, 0.0, 0.0, 55), f64::INFINITY, 3).unwrap();
    for (i, (a, b)) in s
        .dataset
        .observations()
        .iter()
        .zip(clean.dataset.observations())
        .enumerate()
    {
        assert_eq!(a.covariates == b.covariates, !s.contaminated.contains(&i));
        assert_eq!(a.time, b.time);
    }
}

#[test]
fn replicates_use_independent_streams() {
    let design = exp_design(50, 0.1, 0.0, 56);
    let c = calibrate_censoring(&design).unwrap();
    let a = generate_sample(&design, c, 0).unwrap();
    let b = generate_sample(&design, c, 1).unwrap();
    assert_ne!(a.dataset, b.dataset);
    assert_eq!(a, generate_sample(&design, c, 0).unwrap());
}

fn study_toml(replicates: usize) -> String {
    format!(
        r#"
n_list = [60]
censor_list = [0.05]
eps_list = [0.0, 0.1]
alpha_list = [0.0, 0.3]
replicates = {replicates}
seed = 57
family = "exponential"
theta_true = [1.0, 2.0, -2.0]
"#
    )
}

#[test]
fn study_reports_mse_no_smaller_than_squared_bias() {
    let cfg = StudyConfig::from_toml_str(&study_toml(40)).unwrap();
    let result = run_study(&cfg, &StudyOptions::default()).unwrap();
    assert_eq!(result.cells.len(), 4);
    for cell in &result.cells {
        assert_eq!(cell.n_converged, 40);
        for (b, m) in cell.bias.iter().zip(&cell.mse) {
            assert!(*m >= b * b, "{m} < {b}^2");
        }
    }
    let mut out = Vec::new();
    result.write_csv(Statistic::Mse, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 1 + 4 * 3);
    assert!(text.starts_with("n,censoring,eps,alpha,parameter,value,n_converged"));
}

#[test]
fn study_is_identical_serial_and_parallel() {
    let cfg = StudyConfig::from_toml_str(&study_toml(8)).unwrap();
    let par = run_study(&cfg, &StudyOptions::default()).unwrap();
    let serial = run_study(
        &cfg,
        &StudyOptions {
            parallel: false,
            ..StudyOptions::default()
        },
    )
    .unwrap();
    assert_eq!(par, serial);
}

#[test]
fn study_config_rejects_unknown_and_invalid_keys() {
    let text = study_toml(5) + "replicate = 3\nextra = 1\n";
    match StudyConfig::from_toml_str(&text) {
        Err(Error::Config(msg)) => assert!(msg.contains("extra") && msg.contains("replicate"), "{msg}"),
        other => panic!("{other:?}"),
    }
    let bad = study_toml(5).replace("[0.05]", "[1.5]");
    assert!(matches!(StudyConfig::from_toml_str(&bad), Err(Error::Config(_))));
    let bad = study_toml(5).replace("[1.0, 2.0, -2.0]", "[]");
    assert!(matches!(StudyConfig::from_toml_str(&bad), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn samples_are_valid(seed in any::<u64>(), n in 2usize..200, censor in 0.0f64..0.6, eps in 0.0f64..0.5) {
        let design = exp_design(n, censor, eps, seed);
        let c = calibrate_censoring(&design).unwrap();
        let s = generate_sample(&design, c, seed % 7).unwrap();
        prop_assert_eq!(s.dataset.n(), n);
        prop_assert_eq!(s.contaminated.len(), (eps * n as f64).round() as usize);
        for o in s.dataset.observations() {
            prop_assert!(o.time > 0.0 && o.time.is_finite());
            prop_assert!(o.covariates.iter().all(|v| v.is_finite()));
        }
    }
}
