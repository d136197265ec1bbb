//! `oscmix`: simulate, fit, summarize, evaluate and export dependence
//! measures for Dirichlet-process mixtures of AR(2) oscillations.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oscmix_core::summary::Criterion;

use config::{absolute, resolve, sampling_rate, Flags, Method};
use error::CliError;

/// Environment variable holding the default worker-thread count.
const THREADS_ENV: &str = "OSCMIX_THREADS";

#[derive(Parser)]
#[command(
    name = "oscmix",
    version,
    about = "Spectral estimation with mixtures of latent AR(2) oscillations"
)]
struct Cli {
    /// Worker threads (default: $OSCMIX_THREADS, else all cores). Does not affect results.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file whose values override the flags.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory (default: the working directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Rate {
    /// Sampling rate in Hz, needed for Hz and band reporting.
    #[arg(long)]
    sampling_rate: Option<f64>,

    /// EEG defaults: 256 Hz unless --sampling-rate is given.
    #[arg(long)]
    eeg_preset: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario: series CSV, true spectrum grid and manifest.
    Simulate {
        /// `ar2mix`, `misspec`, or a scenario TOML file.
        #[arg(long)]
        scenario: Option<String>,
        /// Series length.
        #[arg(long = "T")]
        len: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        grid_points: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the sampler: one trace file per chain.
    Fit {
        /// Series CSV, one column per channel.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Keep every n-th sweep.
        #[arg(long)]
        thin: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Fit the series as given instead of standardizing each channel.
        #[arg(long)]
        no_standardize: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Filter, cluster and tabulate chain traces.
    Summarize {
        /// Trace files or directories of `chain_*.csv` files.
        #[arg(long, num_args = 1..)]
        traces: Vec<PathBuf>,
        #[arg(long)]
        burnin: Option<usize>,
        /// Keep sweeps whose log-likelihood exceeds this pooled quantile.
        #[arg(long)]
        quantile: Option<f64>,
        /// Clusters below this maximum channel weight are left out of the band table and model.
        #[arg(long)]
        min_weight: Option<f64>,
        /// Task label for the band table.
        #[arg(long)]
        task: Option<String>,
        #[arg(long, value_enum)]
        criterion: Option<CriterionArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        grid_points: Option<usize>,
        #[command(flatten)]
        rate: Rate,
        #[command(flatten)]
        common: Common,
    },
    /// Integrated absolute error of the estimator and baselines over replicates.
    Evaluate {
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long = "T")]
        len: Option<usize>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, value_delimiter = ',')]
        methods: Vec<MethodArg>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        burnin: Option<usize>,
        #[arg(long)]
        grid_points: Option<usize>,
        #[arg(long)]
        baseline_halfwidth: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Coherence and partial directed coherence grids of a fitted model.
    Measures {
        /// Model JSON, e.g. `model.json` from `summarize`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Channel pairs as `m:l`, comma separated (default: all pairs).
        #[arg(long, value_delimiter = ',', value_parser = parse_pair)]
        pairs: Vec<[usize; 2]>,
        #[arg(long)]
        grid_points: Option<usize>,
        #[command(flatten)]
        rate: Rate,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CriterionArg {
    Icl,
    Bic,
}

impl From<CriterionArg> for Criterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::Icl => Criterion::Icl,
            CriterionArg::Bic => Criterion::Bic,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum MethodArg {
    Mbmard,
    Periodogram,
    Truth,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Mbmard => Method::Mbmard,
            MethodArg::Periodogram => Method::Periodogram,
            MethodArg::Truth => Method::Truth,
        }
    }
}

fn parse_pair(text: &str) -> Result<[usize; 2], String> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| format!("expected m:l, got {text:?}"))?;
    let parse = |s: &str| s.trim().parse::<usize>().map_err(|e| format!("{s:?}: {e}"));
    Ok([parse(a)?, parse(b)?])
}

fn path_flag(path: Option<PathBuf>) -> Result<Option<PathBuf>, CliError> {
    path.map(|p| absolute(&p)).transpose()
}

/// The output directory defaults to the working directory.
fn out_flag(path: Option<PathBuf>) -> Result<Option<PathBuf>, CliError> {
    path_flag(Some(path.unwrap_or_else(|| PathBuf::from("."))))
}

fn configure_threads(flag: Option<usize>) -> Result<(), CliError> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.parse()
                    .map_err(|_| CliError::Usage(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads(cli.threads)?;
    let mut flags = Flags::default();
    match cli.command {
        Command::Simulate {
            scenario,
            len,
            seed,
            grid_points,
            common,
        } => {
            flags
                .set("scenario", scenario)
                .set("T", len)
                .set("seed", seed)
                .set("grid_points", grid_points)
                .set("out", out_flag(common.out)?);
            commands::simulate(&resolve(flags, common.config.as_deref())?)
        }
        Command::Fit {
            data,
            chains,
            iterations,
            thin,
            seed,
            no_standardize,
            common,
        } => {
            flags
                .set("data", path_flag(data)?)
                .set("chains", chains)
                .set("seed", seed)
                .set("standardize", no_standardize.then_some(false))
                .set("sampler.iterations", iterations)
                .set("sampler.thin", thin)
                .set("out", out_flag(common.out)?);
            commands::fit(&resolve(flags, common.config.as_deref())?)
        }
        Command::Summarize {
            traces,
            burnin,
            quantile,
            min_weight,
            task,
            criterion,
            seed,
            grid_points,
            rate,
            common,
        } => {
            let traces = traces.iter().map(|p| absolute(p)).collect::<Result<Vec<_>, _>>()?;
            flags
                .set("traces", (!traces.is_empty()).then_some(traces))
                .set("burnin", burnin)
                .set("quantile", quantile)
                .set("min_weight", min_weight)
                .set("task", task)
                .set("criterion", criterion.map(Criterion::from))
                .set("seed", seed)
                .set("grid_points", grid_points)
                .set("sampling_rate", sampling_rate(rate.sampling_rate, rate.eeg_preset))
                .set("out", out_flag(common.out)?);
            commands::summarize(&resolve(flags, common.config.as_deref())?)
        }
        Command::Evaluate {
            scenario,
            len,
            replicates,
            seed,
            methods,
            chains,
            iterations,
            burnin,
            grid_points,
            baseline_halfwidth,
            common,
        } => {
            let methods: Vec<Method> = methods.into_iter().map(Method::from).collect();
            flags
                .set("scenario", scenario)
                .set("T", len)
                .set("replicates", replicates)
                .set("seed", seed)
                .set("methods", (!methods.is_empty()).then_some(methods))
                .set("chains", chains)
                .set("sampler.iterations", iterations)
                .set("burnin", burnin)
                .set("grid_points", grid_points)
                .set("baseline_halfwidth", baseline_halfwidth)
                .set("out", out_flag(common.out)?);
            commands::evaluate(&resolve(flags, common.config.as_deref())?)
        }
        Command::Measures {
            model,
            pairs,
            grid_points,
            rate,
            common,
        } => {
            flags
                .set("model", path_flag(model)?)
                .set("pairs", (!pairs.is_empty()).then_some(pairs))
                .set("grid_points", grid_points)
                .set("sampling_rate", sampling_rate(rate.sampling_rate, rate.eeg_preset))
                .set("out", out_flag(common.out)?);
            commands::measures(&resolve(flags, common.config.as_deref())?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("oscmix: error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
