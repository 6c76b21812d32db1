use std::fs::File;

use coxdpd::io::{ingest_csv, write_csv, FitReport};
use coxdpd::{fit_mdpde, BaselineSpec, Dataset, Error, FitOptions, Observation, QuadratureConfig};
use proptest::prelude::*;
use tempfile::TempDir;

fn observation() -> impl Strategy<Value = (f64, bool, Vec<f64>)> {
    (
        1e-300f64..1e300,
        any::<bool>(),
        prop::collection::vec(
            prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL,
            3,
        ),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip_is_exact(rows in prop::collection::vec(observation(), 1..30)) {
        let obs: Vec<Observation> = rows
            .into_iter()
            .map(|(t, e, z)| Observation::new(t, e, z).unwrap())
            .collect();
        let data = Dataset::new(obs, 3).unwrap();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&data, File::create(&path).unwrap()).unwrap();
        prop_assert_eq!(ingest_csv(&path).unwrap(), data);
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    assert!(matches!(ingest_csv(&dir.path().join("absent.csv")), Err(Error::Io(_))));
}

#[test]
fn rejects_malformed_files() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("time,status\n", 1),
        ("time,status,z\n1,1,0\n2,0\n", 3),
        ("time,status,z\n1,1,0\n2,0,NaN\n", 3),
        ("time,status,z\n1,1,0\n2,0,inf\n", 3),
        ("time,status\n1,yes\n", 2),
        ("time,status\n-1,1\n", 2),
        ("status,time\n1,1\n", 1),
    ];
    for (text, line) in cases {
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, text).unwrap();
        match ingest_csv(&path) {
            Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
            other => panic!("{text:?}: {other:?}"),
        }
    }
}

#[test]
fn report_round_trips_and_rebuilds_the_fit() {
    let obs = vec![
        Observation::new(0.8, true, vec![0.2]).unwrap(),
        Observation::new(1.7, true, vec![-0.4]).unwrap(),
        Observation::new(2.5, false, vec![1.1]).unwrap(),
        Observation::new(0.4, true, vec![0.9]).unwrap(),
        Observation::new(1.2, true, vec![0.0]).unwrap(),
    ];
    let data = Dataset::new(obs, 1).unwrap();
    let spec = BaselineSpec::piecewise(vec![1.0]).unwrap();
    let cfg = QuadratureConfig::new(64).unwrap();
    let opts = FitOptions {
        quadrature: cfg.clone(),
        ..FitOptions::default()
    };
    let fit = fit_mdpde(&spec, &data, 0.2, &opts).unwrap();
    let report = FitReport::new(&spec, &data, &fit, &cfg);
    let back = FitReport::from_json(&report.to_json().unwrap()).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.baseline().unwrap(), spec);
    assert_eq!(back.quadrature().unwrap(), cfg);
    assert_eq!(back.theta().unwrap(), fit.theta_hat);
    let keys: Vec<&String> = report.estimates.keys().collect();
    assert_eq!(keys, ["gamma_1", "gamma_2", "beta_1"]);
    assert_eq!(report.covariance.as_ref().map(Vec::len), Some(9));
}
