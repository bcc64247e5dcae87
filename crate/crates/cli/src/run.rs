//! Subcommand execution. Every run builds its output files in memory and
//! only touches the output directory once it has succeeded.

use std::fmt::Write as _;
use std::path::Path;

use gridclear_core::metrics::{compare, derive_seed, mean_std, sweep, write_summary, Scheme, PATH_STREAM};
use gridclear_core::{
    baseline_rollout, clear_market, mpc_clear, price_variance, Error, Population, PriceSchedule,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{seed_list, Config};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Deterministic,
    Stochastic,
    Baseline,
    Compare,
    Sweep,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Deterministic => "deterministic",
            Experiment::Stochastic => "stochastic",
            Experiment::Baseline => "baseline",
            Experiment::Compare => "compare",
            Experiment::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub subcommand: Experiment,
    pub seed: u64,
    pub config_sha256: String,
    pub version: String,
    pub config: Config,
}

impl Manifest {
    pub fn new(subcommand: Experiment, config: &Config) -> Self {
        let digest = Sha256::digest(config.to_toml().as_bytes());
        Self {
            subcommand,
            seed: config.seed,
            config_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        let m: Manifest = toml::from_str(&text).map_err(|e| CliError::Config(vec![format!("manifest: {e}")]))?;
        let again = Manifest::new(m.subcommand, &m.config);
        if again.config_sha256 != m.config_sha256 {
            return Err(CliError::Config(vec!["manifest config does not match its hash".into()]));
        }
        if m.seed != m.config.seed {
            return Err(CliError::Config(vec!["manifest seed differs from its config".into()]));
        }
        Ok(m)
    }
}

/// Files produced by one run, in write order, plus a human-readable report.
pub struct Artifacts {
    pub files: Vec<(&'static str, Vec<u8>)>,
    pub report: String,
}

impl Artifacts {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes).map_err(io)?;
        }
        Ok(())
    }
}

fn run_err(e: Error) -> CliError {
    CliError::Run(e.to_string())
}

fn csv(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut out = Vec::new();
    f(&mut out).expect("writing to memory");
    out
}

fn population(config: &Config) -> Result<Population, CliError> {
    match &config.population.explicit {
        Some(p) => Ok(p.clone()),
        None => config.scenario().population(config.seed).map_err(run_err),
    }
}

fn trajectories(
    pop: &Population,
    prices: &[f64],
    controls: &[Vec<f64>],
    injections: &[Vec<f64>],
    states: &[Vec<f64>],
) -> Vec<u8> {
    let mut s = String::from("agent,kind,t,price,control,injection,state\n");
    let m = pop.m();
    for i in 0..pop.n() {
        let kind = if i < m { "consumer" } else { "supplier" };
        for t in 0..prices.len() {
            writeln!(
                s,
                "{i},{kind},{},{},{},{},{}",
                t + 1,
                prices[t],
                controls[i][t],
                injections[i][t],
                states[i][t + 1]
            )
            .unwrap();
        }
    }
    s.into_bytes()
}

fn summary_line(scheme: &str, seed: u64, welfare: f64, prices: &[f64], converged: bool, clipped: usize) -> Vec<u8> {
    let var = price_variance(prices).map(|v| v.to_string()).unwrap_or_default();
    format!(
        "scheme,seed,welfare,price_variance,converged,clipped_periods,error\n{scheme},{seed},{welfare},{var},{converged},{clipped},\n"
    )
    .into_bytes()
}

pub fn execute(experiment: Experiment, config: &Config) -> Result<Artifacts, CliError> {
    let v = config.violations();
    if !v.is_empty() {
        return Err(CliError::Config(v));
    }
    let mut art = match experiment {
        Experiment::Deterministic => deterministic(config)?,
        Experiment::Stochastic => stochastic(config)?,
        Experiment::Baseline => baseline(config)?,
        Experiment::Compare => compare_run(config)?,
        Experiment::Sweep => sweep_run(config)?,
    };
    let manifest = toml::to_string(&Manifest::new(experiment, config)).expect("manifest serializes");
    art.files.push(("manifest.toml", manifest.into_bytes()));
    Ok(art)
}

fn deterministic(config: &Config) -> Result<Artifacts, CliError> {
    let pop = population(config)?;
    let lambda0 = PriceSchedule::constant(config.horizon, config.lambda0);
    let out = clear_market(&pop, &pop.initial, &lambda0, &config.market).map_err(run_err)?;

    let mut imb = String::from("iteration,max_abs_imbalance\n");
    let mut dr = String::from("iteration,dr_norm\n");
    for r in &out.iterate_log {
        writeln!(imb, "{},{}", r.iteration, r.imbalance_norm).unwrap();
        writeln!(dr, "{},{}", r.iteration, r.dr_norm).unwrap();
    }
    let controls: Vec<Vec<f64>> = out.bids.iter().map(|b| b.controls.clone()).collect();
    let injections: Vec<Vec<f64>> = out.bids.iter().map(|b| b.injections.clone()).collect();
    let last = out.iterate_log.last().map_or(f64::NAN, |r| r.imbalance_norm);
    let report = format!(
        "deterministic: {:?} after {} iterations, max imbalance {:.3e}, welfare {:.6}\n",
        out.status, out.iterations, last, out.social_welfare
    );
    Ok(Artifacts {
        files: vec![
            ("prices_per_iteration.csv", csv(|w| out.write_iterate_log(w))),
            ("imbalance.csv", imb.into_bytes()),
            ("dr_norm.csv", dr.into_bytes()),
            ("trajectories.csv", trajectories(&pop, &out.prices.lambda, &controls, &injections, &out.states)),
            (
                "summary.csv",
                summary_line("iterative", config.seed, out.social_welfare, &out.prices.lambda, out.converged(), 0),
            ),
        ],
        report,
    })
}

fn stochastic(config: &Config) -> Result<Artifacts, CliError> {
    let pop = population(config)?;
    let spec = config.disturbance_spec();
    let lambda0 = PriceSchedule::constant(config.horizon, config.lambda0);
    let path_seed = derive_seed(config.seed, &[PATH_STREAM]);
    let out = mpc_clear(&pop, &pop.initial, &spec, &lambda0, config.lookahead, &config.market, path_seed)
        .map_err(run_err)?;

    let mut imb = String::from("t,outcome,w,v,imbalance\n");
    for t in 0..config.horizon {
        let d = out.disturbances[t];
        writeln!(imb, "{},{},{},{},{}", t + 1, out.path[t], d.w, d.v, out.imbalance[t]).unwrap();
    }
    let mut dr = String::from("window,iteration,dr_norm\n");
    for w in &out.windows {
        for r in &w.iterate_log {
            writeln!(dr, "{},{},{}", w.start + 1, r.iteration, r.dr_norm).unwrap();
        }
    }
    let scheme = if config.lookahead == config.horizon { "iterative" } else { "mpc" };
    let cleared = out.windows.iter().filter(|w| !w.reused).count();
    let report = format!(
        "stochastic: k = {}, {} windows cleared, all converged: {}, welfare {:.6}\n",
        config.lookahead,
        cleared,
        out.all_converged(),
        out.welfare
    );
    Ok(Artifacts {
        files: vec![
            ("prices_per_iteration.csv", csv(|w| out.write_iterate_log(w))),
            ("imbalance.csv", imb.into_bytes()),
            ("dr_norm.csv", dr.into_bytes()),
            ("trajectories.csv", trajectories(&pop, &out.prices, &out.controls, &out.injections, &out.states)),
            (
                "summary.csv",
                summary_line(scheme, config.seed, out.welfare, &out.prices, out.all_converged(), 0),
            ),
        ],
        report,
    })
}

fn baseline(config: &Config) -> Result<Artifacts, CliError> {
    let pop = population(config)?;
    let spec = config.disturbance_spec();
    let path = spec.sample_path(config.horizon, derive_seed(config.seed, &[PATH_STREAM]));
    let realized = spec.realize(&path);
    let out = baseline_rollout(&pop, &pop.initial, &realized, &config.baseline).map_err(run_err)?;

    let mut imb = String::from("t,demand,imbalance,clipped\n");
    for t in 0..config.horizon {
        let net: f64 = out.injections.iter().map(|inj| inj[t]).sum();
        writeln!(imb, "{},{},{},{}", t + 1, out.demand[t], net, out.clipped[t]).unwrap();
    }
    let clipped = out.clipped.iter().filter(|&&c| c).count();
    let report = format!(
        "baseline: welfare {:.6}, {} of {} periods clipped\n",
        out.welfare, clipped, config.horizon
    );
    Ok(Artifacts {
        files: vec![
            ("imbalance.csv", imb.into_bytes()),
            ("trajectories.csv", trajectories(&pop, &out.prices, &out.controls, &out.injections, &out.states)),
            ("summary.csv", summary_line("baseline", config.seed, out.welfare, &out.prices, true, clipped)),
        ],
        report,
    })
}

fn compare_run(config: &Config) -> Result<Artifacts, CliError> {
    let mut scenario = config.scenario();
    if let Some(a) = config.compare.a {
        scenario.sampling.a = a;
    }
    let seeds = seed_list(config.seed, config.compare.seeds);
    let rows = compare(&scenario, &config.compare.schemes, &seeds, config.market.parallel);

    let mut report = String::new();
    let mut means = Vec::new();
    for &scheme in &config.compare.schemes {
        let welfare: Vec<f64> = rows
            .iter()
            .filter(|r| r.scheme == scheme)
            .filter_map(|r| r.run.as_ref().ok().map(|run| run.welfare))
            .collect();
        let failures = seeds.len() - welfare.len();
        let (mean, std) = mean_std(&welfare);
        writeln!(report, "{:<10} mean welfare {mean:.6} (std {std:.6}, {failures} failed)", scheme.name()).unwrap();
        means.push((scheme, mean));
    }
    let base = means.iter().find(|(s, _)| *s == Scheme::Baseline).map(|m| m.1);
    if let Some(b) = base {
        for (s, m) in means.iter().filter(|(s, _)| *s != Scheme::Baseline) {
            writeln!(report, "{} / baseline welfare ratio {:.4}", s.name(), m / b).unwrap();
        }
    }
    Ok(Artifacts {
        files: vec![("summary.csv", csv(|w| write_summary(&rows, w)))],
        report,
    })
}

fn sweep_run(config: &Config) -> Result<Artifacts, CliError> {
    let seeds = seed_list(config.seed, config.sweep.seeds);
    let table = sweep(
        &config.scenario(),
        config.seed,
        config.sweep.param,
        &config.sweep.values,
        &config.sweep.schemes,
        &seeds,
        config.market.parallel,
    )
    .map_err(run_err)?;
    let mut report = String::new();
    for r in table.rows.iter().filter(|r| r.metric == "price_variance") {
        writeln!(
            report,
            "{} = {:<6} {:<10} mean price variance {:.6} ({} runs, {} failed)",
            r.param.name(),
            r.value,
            r.scheme.name(),
            r.mean,
            r.runs,
            r.failures
        )
        .unwrap();
    }
    Ok(Artifacts {
        files: vec![("sweep.csv", csv(|w| table.write_csv(w)))],
        report,
    })
}
