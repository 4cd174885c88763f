//! Command-line front end: argument grammar, config-file merging, and the
//! exit-code contract (0 success, 2 validation failure, 3 numerical failure,
//! 64 usage error).

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use config::Settings;
use error::CliResult;

#[derive(Parser)]
#[command(
    name = "hpanel",
    version,
    about = "Three-dimensional panels with global, country, and industry factor structures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic panel from the benchmark simulation design
    Simulate(CommonArgs),
    /// Fit block coefficients and factors to a panel CSV
    Estimate(CommonArgs),
    /// Choose every factor count with the eigenvalue-ratio criterion
    #[command(name = "select-factors")]
    SelectFactors(CommonArgs),
    /// Dependent wild bootstrap confidence intervals for the coefficients
    Bootstrap(CommonArgs),
    /// Split-panel jackknife bias correction for mean-group coefficients
    Jackknife(CommonArgs),
    /// Run the simulation study and emit the three result tables
    #[command(name = "reproduce-tables")]
    ReproduceTables(CommonArgs),
}

#[derive(Args, Default)]
struct CommonArgs {
    /// Flat key=value settings file; command-line flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input panel CSV (header i,j,t,y,x1,...,xd)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of countries
    #[arg(long = "L")]
    l: Option<usize>,
    /// Number of industries
    #[arg(long = "N")]
    n: Option<usize>,
    /// Number of time periods
    #[arg(long = "T")]
    t: Option<usize>,
    /// Number of regressors (simulated designs)
    #[arg(long = "d")]
    d: Option<usize>,
    /// Master seed; every derived stream is reproducible from it
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo replications
    #[arg(long = "R")]
    r: Option<usize>,
    /// Upper bound for factor-count selection
    #[arg(long = "d-max")]
    d_max: Option<usize>,
    /// Convergence threshold of the alternating fit
    #[arg(long)]
    tol: Option<f64>,
    /// Sweep budget of the alternating fit
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    /// Bootstrap replications
    #[arg(long = "B")]
    b: Option<usize>,
    /// Bootstrap multiplier block length; defaults to floor(1.75 T^(1/3))
    #[arg(long)]
    bandwidth: Option<usize>,
    /// Two-sided miscoverage level of bootstrap intervals
    #[arg(long)]
    alpha: Option<f64>,
    /// Factor counts as global,country,industry; entries may be `auto`
    #[arg(long)]
    counts: Option<String>,
    /// Select every factor count before estimating
    #[arg(long = "auto-counts")]
    auto_counts: bool,
    /// Mean-group axis for the jackknife: country or industry
    #[arg(long)]
    axis: Option<String>,
    /// Jackknife a single unit index instead of every unit
    #[arg(long)]
    unit: Option<usize>,
    /// Output directory (created if missing)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker thread count; results do not depend on it
    #[arg(long)]
    workers: Option<usize>,
}

impl CommonArgs {
    fn to_settings(&self) -> Settings {
        Settings {
            data: self.data.clone(),
            l: self.l,
            n: self.n,
            t: self.t,
            d: self.d,
            seed: self.seed,
            r: self.r,
            d_max: self.d_max,
            tol: self.tol,
            max_iter: self.max_iter,
            b: self.b,
            bandwidth: self.bandwidth,
            alpha: self.alpha,
            counts: self.counts.clone(),
            auto_counts: self.auto_counts,
            axis: self.axis.clone(),
            unit: self.unit,
            out: self.out.clone(),
            workers: self.workers,
        }
    }

    fn settings(&self) -> CliResult<Settings> {
        let flags = self.to_settings();
        Ok(match &self.config {
            Some(path) => flags.or(Settings::from_file(path)?),
            None => flags,
        })
    }
}

/// Runs one command from raw arguments (without the program name) and
/// returns the process exit code.
pub fn run_command(args: &[String]) -> i32 {
    let mut argv = Vec::with_capacity(args.len() + 1);
    argv.push("hpanel".to_string());
    argv.extend_from_slice(args);
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = e.print();
            return code;
        }
    };
    let (runner, args): (fn(&Settings) -> CliResult<()>, &CommonArgs) = match &cli.command {
        Command::Simulate(a) => (commands::simulate, a),
        Command::Estimate(a) => (commands::estimate, a),
        Command::SelectFactors(a) => (commands::select_factors, a),
        Command::Bootstrap(a) => (commands::bootstrap, a),
        Command::Jackknife(a) => (commands::jackknife, a),
        Command::ReproduceTables(a) => (commands::reproduce_tables, a),
    };
    let outcome = args.settings().and_then(|settings| runner(&settings));
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
