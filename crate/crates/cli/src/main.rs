//! `mberglg` command-line tool: fit, residuals, simulate, mc-study, pmf.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mberglg::io::{load_dataset, write_envelope, write_long_table, write_residuals, FitArtifact};
use mberglg::mberglg::joint_log_pmf;
use mberglg::montecarlo::{derive_seed, run_study, simulate, summarize_report, ReportFormat};
use mberglg::numerics::{ks_distance, normal_cdf};
use mberglg::residuals::{envelope_coverage, quantile_residuals, simulate_envelope};
use mberglg::{fit_model, Convention, FitConfig, FitReport, MCScenarioConfig, ModelKind, ModelSpec, Precision, SimulateConfig};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Exit status when a fit stops short of convergence.
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "mberglg", version, about = "Clustered binary regression with a log-gamma random intercept")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a long-format CSV file.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Model spec JSON: response, subject, covariates, intercept.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = "mberglg", value_parser = parse_model)]
        model: ModelKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where the JSON fit report goes.
        #[arg(long)]
        out: PathBuf,
        /// Exit 0 even when the optimizer did not converge.
        #[arg(long)]
        allow_nonconverged: bool,
    },
    /// Randomized quantile residuals and, optionally, a simulated envelope.
    Residuals {
        /// JSON written by `fit`.
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "dunn-smyth", value_parser = parse_convention)]
        convention: Convention,
        /// Number of simulated replicates for the envelope (≥ 19).
        #[arg(long)]
        envelope: Option<usize>,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for residuals.csv and envelope.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a long-format CSV from the generative model.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a Monte Carlo study; writes mc_report.csv and mc_report.json.
    McStudy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Joint probability of one cluster outcome.
    Pmf {
        /// Conditional means exp(xβ), comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        mu: Vec<f64>,
        #[arg(long)]
        phi: f64,
        /// Responses (0/1), comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        y: Vec<u8>,
    },
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: mberglg::Error| e.to_string())
}

fn parse_convention(s: &str) -> std::result::Result<Convention, String> {
    s.parse().map_err(|e: mberglg::Error| e.to_string())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn format_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.4}"))
}

fn print_table(report: &FitReport) {
    let width = report.parameter_names.iter().map(String::len).max().unwrap_or(0).max(9);
    println!("{:<width$} {:>10} {:>10} {:>9} {:>9}", "", "Estimate", "Std. error", "z", "p-value");
    for (k, name) in report.parameter_names.iter().enumerate() {
        println!(
            "{name:<width$} {:>10} {:>10} {:>9} {:>9}",
            format_cell(Some(report.estimates[k])),
            format_cell(report.se[k]),
            format_cell(report.wald_z[k]),
            format_cell(report.p_values[k]),
        );
    }
    println!(
        "{:<width$} {:>10} {:>10}",
        "lambda",
        format_cell(Some(report.lambda_hat)),
        format_cell(report.se_lambda)
    );
    println!(
        "log-likelihood {:.4}, AIC {:.4}, {} iterations, converged: {}",
        report.loglik, report.aic, report.iterations, report.converged
    );
    for w in &report.warnings {
        println!("warning: {w}");
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Fit { data, spec, model, seed, out, allow_nonconverged } => {
            let spec = ModelSpec::from_json_file(&spec).with_context(|| format!("reading spec {}", spec.display()))?;
            let dataset = load_dataset(&data, &spec).with_context(|| format!("loading {}", data.display()))?;
            let cfg = FitConfig { seed, ..FitConfig::default() };
            let report = fit_model(&dataset, model, &cfg)?;
            print_table(&report);
            let converged = report.converged;
            write_file(&out, &(FitArtifact { spec, report }.to_json()? + "\n"))?;
            if !converged && !allow_nonconverged {
                eprintln!("fit did not converge (pass --allow-nonconverged to accept)");
                return Ok(EXIT_NOT_CONVERGED);
            }
        }
        Command::Residuals { fit, data, convention, envelope, level, seed, out } => {
            let text = fs::read_to_string(&fit).with_context(|| format!("reading {}", fit.display()))?;
            let artifact = FitArtifact::from_json(&text)?;
            let dataset = load_dataset(&data, &artifact.spec).with_context(|| format!("loading {}", data.display()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let residuals = quantile_residuals(&artifact.report, &dataset, &mut rng, convention)?;
            fs::create_dir_all(&out)?;
            write_residuals(fs::File::create(out.join("residuals.csv"))?, &residuals.records)?;
            println!("{} residuals, KS vs N(0,1) = {:.4}", residuals.records.len(), ks_distance(&residuals.values(), normal_cdf));
            if let Some(k) = envelope {
                let bands = simulate_envelope(&artifact.report, &dataset, k, level, derive_seed(seed, &[1]), convention)?;
                let observed = residuals.sorted_values();
                write_envelope(fs::File::create(out.join("envelope.csv"))?, &bands, &observed)?;
                println!("envelope: {k} replicates, coverage {:.4} at level {level}", envelope_coverage(&bands, &observed));
            }
        }
        Command::Simulate { config, out } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let cfg: SimulateConfig = serde_json::from_str(&text).context("parsing simulate config")?;
            let table = simulate(&cfg)?;
            write_long_table(fs::File::create(&out)?, &table, &cfg.response, &cfg.subject)?;
        }
        Command::McStudy { config, out } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let cfg = MCScenarioConfig::from_json(&text)?;
            let report = run_study(&cfg)?;
            fs::create_dir_all(&out)?;
            write_file(&out.join("mc_report.csv"), &summarize_report(&report, ReportFormat::Csv)?)?;
            write_file(&out.join("mc_report.json"), &(summarize_report(&report, ReportFormat::Json)? + "\n"))?;
        }
        Command::Pmf { mu, phi, y } => {
            if mu.len() != y.len() {
                bail!("--mu has {} values but --y has {}", mu.len(), y.len());
            }
            let log_pmf = joint_log_pmf(&y, &mu, Precision::new(phi)?)?;
            let value = serde_json::json!({ "mu": mu, "phi": phi, "y": y, "log_pmf": log_pmf, "pmf": log_pmf.exp() });
            println!("{value}");
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
