use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridclear::config::{Config, Overrides};
use gridclear::run::{execute, Experiment, Manifest};
use gridclear::CliError;
use gridclear_core::metrics::SweepParam;

#[derive(Parser)]
#[command(name = "gridclear", version, about = "Decentralized grid market-clearing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Price iteration on a known, disturbance-free horizon.
    Deterministic(Common),
    /// Look-ahead clearing along one sampled disturbance path.
    Stochastic(Common),
    /// Thermostat demand with myopic dispatch along one sampled path.
    Baseline(Common),
    /// All schemes on a batch of seeded populations.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Retention coefficient of every agent.
        #[arg(long)]
        a: Option<f64>,
        /// Number of seeds, counting up from --seed.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// One parameter swept over a grid of values.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Parameter to sweep: `a` or `w`.
        #[arg(long, value_parser = parse_param)]
        param: Option<SweepParam>,
        /// Comma-separated grid.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Checks a configuration without running anything.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Repeats the run recorded in a manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Initial step size of the price update.
    #[arg(long)]
    step_size: Option<f64>,
    /// Balance tolerance on the largest per-period imbalance.
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    lookahead: Option<usize>,
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    nonneg_prices: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            max_iters: self.max_iters,
            step_size: self.step_size,
            tolerance: self.tolerance,
            lookahead: self.lookahead,
            parallel: self.parallel,
            nonneg_prices: self.nonneg_prices,
            ..Overrides::default()
        }
    }
}

fn parse_param(s: &str) -> Result<SweepParam, String> {
    match s {
        "a" => Ok(SweepParam::A),
        "w" => Ok(SweepParam::W),
        _ => Err(format!("unknown sweep parameter `{s}` (expected a or w)")),
    }
}

fn load(path: Option<&Path>) -> Result<Config, CliError> {
    match path {
        Some(p) => Config::load(p).map_err(CliError::Config),
        None => Ok(Config::default()),
    }
}

fn run_experiment(experiment: Experiment, config: &Config, out_dir: &Path) -> Result<(), CliError> {
    let art = execute(experiment, config)?;
    art.write(out_dir)?;
    print!("{}", art.report);
    println!("wrote {} files to {}", art.files.len(), out_dir.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let (experiment, common, mut extra) = match cli.command {
        Command::Deterministic(c) => (Experiment::Deterministic, c, Overrides::default()),
        Command::Stochastic(c) => (Experiment::Stochastic, c, Overrides::default()),
        Command::Baseline(c) => (Experiment::Baseline, c, Overrides::default()),
        Command::Compare { common, a, seeds } => (
            Experiment::Compare,
            common,
            Overrides {
                compare_a: a,
                compare_seeds: seeds,
                ..Overrides::default()
            },
        ),
        Command::Sweep {
            common,
            param,
            values,
            seeds,
        } => (
            Experiment::Sweep,
            common,
            Overrides {
                sweep_param: param,
                sweep_values: values,
                sweep_seeds: seeds,
                ..Overrides::default()
            },
        ),
        Command::Validate { config } => {
            let c = load(config.as_deref())?;
            let v = c.violations();
            if !v.is_empty() {
                return Err(CliError::Config(v));
            }
            println!("configuration is valid");
            return Ok(());
        }
        Command::Rerun { manifest, out_dir } => {
            let m = Manifest::load(&manifest)?;
            return run_experiment(m.subcommand, &m.config, &out_dir);
        }
    };
    let mut config = load(common.config.as_deref())?;
    let base = common.overrides();
    extra.seed = base.seed;
    config.apply(&base);
    config.apply(&extra);
    run_experiment(experiment, &config, &common.out_dir)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprint!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
