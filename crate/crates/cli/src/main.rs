//! `coxdpd`: robust fitting of parametric Cox models from the command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 non-convergence.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use coxdpd::estimator::moment_start;
use coxdpd::hazard::parse_cutpoints;
use coxdpd::inference::diagnostics;
use coxdpd::io::{ingest_csv, write_csv, write_diagnostics_csv, FitReport};
use coxdpd::simulate::{run_study, Statistic, StudyConfig, StudyOptions};
use coxdpd::{
    fit_mdpde, fit_path, BaselineSpec, CensoringMeasure, Dataset, Error, Family, FitOptions, FitResult, GammaVector,
    QuadratureConfig, Result, Theta,
};

const DEFAULT_ALPHAS: &str = "0,0.05,0.1,0.2,0.3,0.4,0.5";

#[derive(Debug, Parser)]
#[command(
    name = "coxdpd",
    version,
    about = "Minimum density power divergence fits for parametric Cox models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one model and write a JSON report.
    Fit(FitArgs),
    /// Fit over a grid of α values.
    Path(PathArgs),
    /// Residuals and influence for a fitted model.
    Diagnose(DiagnoseArgs),
    /// Run a Monte Carlo study from a TOML config.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// CSV with columns time,status,covariates...
    #[arg(long)]
    data: PathBuf,
    /// Baseline hazard: exponential, weibull or piecewise.
    #[arg(long, default_value = "exponential")]
    family: Family,
    /// Interior cutpoints for the piecewise baseline, e.g. "1,2.5".
    #[arg(long, default_value = "")]
    cutpoints: String,
    /// End of follow-up; defaults to the largest observed time.
    #[arg(long)]
    tau: Option<f64>,
    /// Starting baseline parameters, comma separated.
    #[arg(long, allow_negative_numbers = true)]
    gamma_init: Option<String>,
    /// Starting regression coefficients, comma separated.
    #[arg(long, allow_negative_numbers = true)]
    beta_init: Option<String>,
    /// Gauss-Legendre nodes per integral.
    #[arg(long, default_value_t = coxdpd::dpd::DEFAULT_NODES)]
    nodes: usize,
    /// Dominating measure for censored observations: event-only or lebesgue.
    #[arg(long, default_value = "event-only")]
    measure: CensoringMeasure,
    #[arg(long, default_value_t = 500)]
    max_iterations: usize,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Robustness tuning parameter; 0 gives the MLE.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    alpha: f64,
    /// Report path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PathArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Ascending comma-separated α grid.
    #[arg(long, default_value = DEFAULT_ALPHAS, allow_negative_numbers = true)]
    alphas: String,
    /// Directory for the per-α reports and path.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    /// JSON report written by `fit` or `path`.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Diagnostics CSV path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the dataset without flagged observations here.
    #[arg(long)]
    drop_outliers_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for bias.csv and mse.csv.
    #[arg(long)]
    out_dir: PathBuf,
    /// Run replicates on one thread.
    #[arg(long)]
    serial: bool,
}

enum Outcome {
    Done,
    NotConverged,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Path(a) => cmd_path(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Usage(_)) {
                eprintln!("\nFor more information, try '--help'.");
            }
            ExitCode::from(1)
        }
    }
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::Usage(format!("invalid {what} value '{}'", tok.trim())))
        })
        .collect()
}

struct Model {
    spec: BaselineSpec,
    data: Dataset,
    options: FitOptions,
}

impl ModelArgs {
    fn load(&self) -> Result<Model> {
        let spec = BaselineSpec::new(self.family, parse_cutpoints(&self.cutpoints)?)?;
        let mut data = ingest_csv(&self.data)?;
        if let Some(tau) = self.tau {
            data = data.with_tau(tau)?;
        }
        let init = match (&self.gamma_init, &self.beta_init) {
            (None, None) => None,
            (gamma, beta) => {
                let gamma = match gamma {
                    Some(g) => GammaVector::new(parse_list(g, "--gamma-init")?)?,
                    None => moment_start(&spec, &data).gamma,
                };
                let beta = match beta {
                    Some(b) => parse_list(b, "--beta-init")?,
                    None => vec![0.0; data.p()],
                };
                Some(Theta::new(gamma, beta)?)
            }
        };
        let options = FitOptions {
            quadrature: QuadratureConfig::new(self.nodes)?.with_measure(self.measure),
            max_iterations: self.max_iterations,
            init,
            ..FitOptions::default()
        };
        Ok(Model { spec, data, options })
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_report(model: &Model, fit: &FitResult, out: Option<&Path>) -> Result<()> {
    let report = FitReport::new(&model.spec, &model.data, fit, &model.options.quadrature);
    let mut w = output(out)?;
    writeln!(w, "{}", report.to_json()?)?;
    w.flush()?;
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<Outcome> {
    let model = args.model.load()?;
    let fit = fit_mdpde(&model.spec, &model.data, args.alpha, &model.options)?;
    write_report(&model, &fit, args.out.as_deref())?;
    if fit.converged {
        Ok(Outcome::Done)
    } else {
        eprintln!(
            "warning: no convergence after {} iterations (estimating norm {:.3e})",
            fit.iterations, fit.estimating_norm
        );
        Ok(Outcome::NotConverged)
    }
}

fn cmd_path(args: PathArgs) -> Result<Outcome> {
    let model = args.model.load()?;
    let alphas = parse_list(&args.alphas, "--alphas")?;
    let fits = fit_path(&model.spec, &model.data, &alphas, &model.options)?;
    fs::create_dir_all(&args.out_dir)?;

    let names = Theta::parameter_names(model.spec.dim_gamma(), model.data.p());
    let mut summary = csv::Writer::from_path(args.out_dir.join("path.csv")).map_err(|e| Error::Io(e.to_string()))?;
    let mut header = vec!["alpha", "converged", "objective_value", "estimating_norm"];
    header.extend(names.iter().map(String::as_str));
    summary.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;

    let mut all_converged = true;
    for (alpha, fit) in alphas.iter().zip(fits) {
        let mut row = vec![alpha.to_string()];
        match fit {
            Ok(fit) => {
                let file = args.out_dir.join(format!("fit_alpha_{alpha}.json"));
                write_report(&model, &fit, Some(&file))?;
                all_converged &= fit.converged;
                row.push(fit.converged.to_string());
                row.push(fit.objective_value.to_string());
                row.push(fit.estimating_norm.to_string());
                row.extend(fit.theta_hat.stacked().iter().map(f64::to_string));
            }
            Err(e) => {
                eprintln!("warning: alpha {alpha}: {e}");
                all_converged = false;
                row.push("false".into());
                row.extend(std::iter::repeat_n("NaN".to_string(), 2 + names.len()));
            }
        }
        summary.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
    }
    summary.flush()?;
    Ok(if all_converged {
        Outcome::Done
    } else {
        Outcome::NotConverged
    })
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<Outcome> {
    let report = FitReport::from_json(&fs::read_to_string(&args.report)?)?;
    let spec = report.baseline()?;
    let cfg = report.quadrature()?;
    let theta = report.theta()?;
    let data = ingest_csv(&args.data)?;
    if data.n() != report.n || data.p() != report.covariates.len() {
        return Err(Error::Usage(format!(
            "data has n = {}, p = {} but the report was fitted with n = {}, p = {}",
            data.n(),
            data.p(),
            report.n,
            report.covariates.len()
        )));
    }
    let data = data.with_tau(report.tau)?;
    let rows = diagnostics(&spec, &data, &theta, report.alpha, &cfg)?;
    write_diagnostics_csv(&rows, output(args.out.as_deref())?)?;

    if let Some(path) = args.drop_outliers_out {
        let kept = data.filter_indices(|i| !rows[i].outlier_flag);
        write_csv(&kept, BufWriter::new(File::create(&path)?))?;
        eprintln!("dropped {} of {} observations", data.n() - kept.n(), data.n());
    }
    Ok(Outcome::Done)
}

fn cmd_simulate(args: SimulateArgs) -> Result<Outcome> {
    let mut config = StudyConfig::from_path(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let options = StudyOptions {
        parallel: !args.serial,
        ..StudyOptions::default()
    };
    let start = Instant::now();
    let result = run_study(&config, &options)?;
    fs::create_dir_all(&args.out_dir)?;
    result.write_csv(
        Statistic::Bias,
        BufWriter::new(File::create(args.out_dir.join("bias.csv"))?),
    )?;
    result.write_csv(
        Statistic::Mse,
        BufWriter::new(File::create(args.out_dir.join("mse.csv"))?),
    )?;
    println!("cells: {}", result.cells.len());
    println!("runtime: {:.2}s", start.elapsed().as_secs_f64());
    for cell in result.cells.iter().filter(|c| c.flagged) {
        eprintln!(
            "warning: n={} censoring={} eps={} alpha={}: only {} of {} fits converged",
            cell.n, cell.censoring, cell.eps, cell.alpha, cell.n_converged, cell.replicates
        );
    }
    Ok(Outcome::Done)
}
