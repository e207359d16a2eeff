mod commands;
mod manifest;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::manifest::{manifest_path, write_atomic};

#[derive(Debug, Parser)]
#[command(
    name = "scaleup",
    version,
    about = "Survey and cCFR incidence estimation"
)]
pub struct Cli {
    /// Write the primary table here instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for every random draw; overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Abort on the first malformed input row instead of skipping it.
    #[arg(long, global = true)]
    pub strict: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Prevalence series from survey responses.
    Estimate(EstimateArgs),
    /// Delay-corrected CFR and true-case series from official counts.
    Ccfr(CcfrArgs),
    /// Date-aligned table of survey, cCFR and official series.
    Compare(CompareArgs),
    /// Synthetic responses and estimator experiments.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Region,
    Country,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Responses CSV: date,country,region,reach,count.
    pub responses: PathBuf,
    #[arg(long, value_enum, default_value = "region")]
    pub method: MethodArg,
    /// Minimum responses per region-mode window.
    #[arg(long, default_value_t = 300)]
    pub a_min: usize,
    /// Minimum responses per country-mode block.
    #[arg(long, default_value_t = 30)]
    pub amin_country: usize,
    #[arg(long, default_value_t = 1.96)]
    pub z: f64,
    #[arg(long, default_value_t = 0.3)]
    pub ratio_cap: f64,
    /// Region table CSV: country,region,population. Defaults to the
    /// built-in table of the country.
    #[arg(long)]
    pub regions: Option<PathBuf>,
    /// Country to estimate; required when the file holds several.
    #[arg(long)]
    pub country: Option<String>,
    /// Divide estimates by this symptomatic fraction.
    #[arg(long)]
    pub scale_symptomatic: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CcfrArgs {
    /// Official series CSV: date,country,new_cases,new_deaths.
    pub series: PathBuf,
    #[arg(long, default_value_t = 1023)]
    pub baseline_deaths: u64,
    #[arg(long, default_value_t = 74130)]
    pub baseline_cases: u64,
    #[arg(long, default_value_t = 13.0)]
    pub delay_mean: f64,
    #[arg(long, default_value_t = 12.7)]
    pub delay_sd: f64,
    /// Number of daily delay bins; 1 gives the naive CFR.
    #[arg(long, default_value_t = 120)]
    pub delay_horizon: usize,
    #[arg(long, default_value_t = 1.96)]
    pub z: f64,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Output of `estimate`.
    #[arg(long)]
    pub survey: PathBuf,
    /// Output of `ccfr`.
    #[arg(long)]
    pub ccfr: PathBuf,
    /// Official series CSV for the cumulative reported column.
    #[arg(long)]
    pub official: Option<PathBuf>,
    /// National population; defaults to the built-in table of `--country`.
    #[arg(long)]
    pub population: Option<u64>,
    #[arg(long)]
    pub country: Option<String>,
    #[arg(long)]
    pub scale_symptomatic: Option<f64>,
    /// Constant reference prevalence, e.g. from a serology study.
    #[arg(long)]
    pub serology_reference: Option<f64>,
    #[arg(long)]
    pub from: Option<String>,
    #[arg(long)]
    pub to: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentArg {
    Coverage,
    Bias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Stratified,
    Pooled,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario TOML file.
    pub scenario: PathBuf,
    /// Responses per draw or per trial; defaults to the scenario value or 300.
    #[arg(long)]
    pub n: Option<usize>,
    /// Response date; defaults to the scenario value or 2020-04-15.
    #[arg(long)]
    pub date: Option<String>,
    /// Also write the simulated responses here (with `--experiment`).
    #[arg(long)]
    pub responses: Option<PathBuf>,
    /// Write per-region true prevalence here.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Run an experiment; the primary output becomes its summary.
    #[arg(long, value_enum)]
    pub experiment: Option<ExperimentArg>,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Estimator checked by the coverage experiment.
    #[arg(long, value_enum, default_value = "stratified")]
    pub estimator: EstimatorArg,
    /// Bias factor toward the highest-prevalence region, used by the bias
    /// experiment when the scenario carries no bias weights.
    #[arg(long, default_value_t = 10.0)]
    pub bias_factor: f64,
}

/// Everything a command produces, held in memory until the run succeeds.
pub struct Output {
    pub primary: Vec<u8>,
    pub extra: Vec<(PathBuf, Vec<u8>)>,
    pub manifest: manifest::RunManifest,
}

fn run(cli: &Cli) -> Result<()> {
    let output = match &cli.command {
        Command::Estimate(a) => commands::estimate(cli, a)?,
        Command::Ccfr(a) => commands::ccfr(cli, a)?,
        Command::Compare(a) => commands::compare(cli, a)?,
        Command::Simulate(a) => commands::simulate(cli, a)?,
    };
    let manifest = output.manifest.to_json()?;
    for (path, bytes) in &output.extra {
        write_atomic(path, bytes)?;
        write_atomic(&manifest_path(path), &manifest)?;
    }
    match &cli.out {
        Some(path) => {
            write_atomic(path, &output.primary)?;
            write_atomic(&manifest_path(path), &manifest)?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(&output.primary)?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
