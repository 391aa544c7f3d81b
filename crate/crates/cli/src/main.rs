//! `bdi`: border disparity analytics over polygon geounits.
//!
//! Subcommands mirror the pipeline stages so intermediate artifacts stay
//! inspectable: `fetch` downloads an ACS attribute extract, `contiguity`
//! emits the queen weights, `bdi` computes the per-unit indices, `analyze`
//! runs the full pipeline, and `regress` refits models on a saved
//! place_summary.csv.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use bdi_core::acs::{fetch_acs_extract, AcsRequest};
use bdi_core::pipeline::{
    run_analyze, run_bdi, run_contiguity, run_regress, ConfigOverrides, PipelineConfig, RunSummary,
};

#[derive(Parser)]
#[command(name = "bdi", version, about = "Border disparity analytics for polygon geounits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline: ingest, contiguity, indices, aggregation,
    /// regression, and all outputs.
    Analyze(RunArgs),
    /// Build and emit the row-normalized queen contiguity weights only.
    Contiguity(RunArgs),
    /// Compute per-unit indices (bdi.csv, bdi.geojson, diagnostics) only.
    Bdi(RunArgs),
    /// Fit the configured regressions against an existing place_summary.csv.
    Regress {
        #[command(flatten)]
        run: RunArgs,
        /// Path to a place_summary.csv; defaults to <output_dir>/place_summary.csv.
        #[arg(long)]
        place_summary: Option<PathBuf>,
    },
    /// Download an ACS 5-year block-group extract as an attribute CSV.
    Fetch(FetchArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Override the configured RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the coordinate snap tolerance in meters.
    #[arg(long)]
    snap_tolerance: Option<f64>,
    /// Override the analyzed attribute (herfindahl or percent_<group>).
    #[arg(long)]
    attribute: Option<String>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FetchArgs {
    /// ACS API base, e.g. https://api.census.gov/data/2016/acs/acs5
    #[arg(long)]
    acs_endpoint: String,
    /// Environment variable holding the API key (optional).
    #[arg(long)]
    acs_key_env: Option<String>,
    /// Three-digit county code; repeat for several counties.
    #[arg(long = "county", required = true)]
    counties: Vec<String>,
    /// Two-digit state FIPS code.
    #[arg(long)]
    state: String,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    fn load(&self) -> anyhow::Result<PipelineConfig> {
        if let Some(threads) = self.threads {
            bdi_core::par::configure_threads(threads);
        }
        let mut config = PipelineConfig::from_path(&self.config)
            .with_context(|| format!("loading config {}", self.config.display()))?;
        config.apply_overrides(&ConfigOverrides {
            seed: self.seed,
            snap_tolerance: self.snap_tolerance,
            attribute: self.attribute.clone(),
            output_dir: self.out.clone(),
        });
        Ok(config)
    }
}

fn report(summary: &RunSummary) {
    for path in &summary.outputs {
        println!("wrote {}", path.display());
    }
    for (key, value) in &summary.counts {
        println!("{key}: {value}");
    }
}

fn run() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Analyze(args) => report(&run_analyze(&args.load()?)?),
        Command::Contiguity(args) => report(&run_contiguity(&args.load()?)?),
        Command::Bdi(args) => report(&run_bdi(&args.load()?)?),
        Command::Regress { run, place_summary } => {
            let config = run.load()?;
            let path = place_summary
                .unwrap_or_else(|| config.output_dir.join("place_summary.csv"));
            report(&run_regress(&config, &path)?);
        }
        Command::Fetch(args) => {
            let api_key = match &args.acs_key_env {
                Some(var) => Some(std::env::var(var).with_context(|| {
                    format!("credential environment variable {var} is not set")
                })?),
                None => None,
            };
            let request = AcsRequest {
                endpoint: args.acs_endpoint,
                api_key,
                state: args.state,
                counties: args.counties,
            };
            let rows = fetch_acs_extract(&request, &args.out)?;
            println!("wrote {} ({rows} rows)", args.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
