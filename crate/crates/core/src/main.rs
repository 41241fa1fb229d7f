use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use smoothed_bandit::harness::lower_bound::{run_lower_bound, LowerBoundArgs, Which};
use smoothed_bandit::harness::sweep::{run_and_write, SweepConfig};
use smoothed_bandit::harness::verify::{verify_and_write, VerifyConfig};
use smoothed_bandit::harness::{simulate, ExperimentConfig, HarnessError, HarnessResult};

#[derive(Parser)]
#[command(
    name = "smoothed-bandit",
    version,
    about = "Greedy linear contextual bandits under smoothed adversaries"
)]
struct Cli {
    /// Run seeds one after another instead of on the thread pool.
    #[arg(long, global = true)]
    serial: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Instance {
    WarmStartSigma,
    BetaNorm,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment and write traces plus summary.json.
    Simulate {
        config: PathBuf,
        /// Output directory; overrides `outputs.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate margin and diversity over a grid of perturbation settings.
    VerifyConditions { config: PathBuf },
    /// Run a base experiment across values of one parameter.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a seed battery on one of the lower-bound instances.
    LowerBound {
        instance: Instance,
        #[arg(long)]
        n: Option<usize>,
        /// Horizon.
        #[arg(long)]
        rho: Option<usize>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        first_seed: Option<u64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        warm_start: Option<usize>,
        /// Fraction of the instance scale counted as high regret.
        #[arg(long)]
        threshold: Option<f64>,
    },
}

fn print<T: Serialize>(value: &T) -> HarnessResult<()> {
    println!("{}", serde_json::to_string_pretty(value).expect("reports serialise"));
    Ok(())
}

fn run(cli: Cli) -> HarnessResult<()> {
    let parallel = !cli.serial;
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            print(&simulate(&cfg, out.as_deref(), parallel)?)
        }
        Command::VerifyConditions { config } => print(&verify_and_write(&VerifyConfig::load(&config)?)?),
        Command::Sweep { config, out } => {
            let cfg = SweepConfig::load(&config)?;
            print(&run_and_write(&cfg, out.as_deref(), parallel)?)
        }
        Command::LowerBound {
            instance,
            n,
            rho,
            seeds,
            first_seed,
            eps,
            sigma,
            warm_start,
            threshold,
        } => {
            let which = match instance {
                Instance::WarmStartSigma => Which::WarmStartSigma,
                Instance::BetaNorm => Which::BetaNorm,
            };
            let d = LowerBoundArgs::defaults(which);
            let args = LowerBoundArgs {
                which,
                n: n.unwrap_or(d.n),
                rho: rho.unwrap_or(d.rho),
                seeds: seeds.unwrap_or(d.seeds),
                first_seed: first_seed.unwrap_or(d.first_seed),
                eps: eps.unwrap_or(d.eps),
                sigma: sigma.or(d.sigma),
                warm_start: warm_start.or(d.warm_start),
                threshold_factor: threshold.unwrap_or(d.threshold_factor),
            };
            // Bad overrides are configuration errors, not run failures.
            args.instance().map_err(HarnessError::Config)?;
            print(&run_lower_bound(&args, parallel)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            match &e {
                HarnessError::Config(inner) => eprintln!("configuration error: {inner}"),
                other => eprintln!("error: {other}"),
            }
            ExitCode::from(code as u8)
        }
    }
}
