//! Comparison metrics and parameter sweeps over the three schemes.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{sample_population_with, Population, SamplingSpec};
use crate::baseline::{baseline_rollout, BaselineSettings};
use crate::error::{Error, Result};
use crate::market::ClearSettings;
use crate::optimizer::PriceSchedule;
use crate::stochastic::{mpc_rollout, DisturbanceSpec};

/// Population variance (divisor `len`).
pub fn price_variance(prices: &[f64]) -> Result<f64> {
    if prices.len() < 2 {
        return Err(Error::TooShort { len: prices.len() });
    }
    let n = prices.len() as f64;
    let mean = prices.iter().sum::<f64>() / n;
    Ok(prices.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n)
}

/// Sum of stage utilities over agents and periods, without payments.
/// `states[i]` holds `x(0..T)` and `controls[i]` holds `u(1..T)`.
pub fn total_utility(population: &Population, controls: &[Vec<f64>], states: &[Vec<f64>]) -> Result<f64> {
    let agents = population.agents();
    if controls.len() != agents.len() || states.len() != agents.len() {
        return Err(Error::InvalidInput(format!(
            "trajectories for {} / {} agents, population has {}",
            controls.len(),
            states.len(),
            agents.len()
        )));
    }
    let mut total = 0.0;
    for (a, (u, x)) in agents.iter().zip(controls.iter().zip(states)) {
        if x.len() != u.len() + 1 {
            return Err(Error::HorizonMismatch {
                expected: u.len() + 1,
                found: x.len(),
            });
        }
        total += u.iter().zip(&x[1..]).map(|(&u, &x)| a.stage_utility(x, u)).sum::<f64>();
    }
    Ok(total)
}

/// `sum_{i,t} lambda(t) * injection_i(t)`.
pub fn payments(prices: &[f64], injections: &[Vec<f64>]) -> f64 {
    injections
        .iter()
        .map(|inj| inj.iter().zip(prices).map(|(u, p)| u * p).sum::<f64>())
        .sum()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a stream seed from a base seed and integer coordinates:
/// `h = splitmix64(base)`, then `h = splitmix64(h ^ c)` for each coordinate.
pub fn derive_seed(base: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(splitmix64(base), |h, &c| splitmix64(h ^ c))
}

/// Coordinate tag of the disturbance-path stream.
pub const PATH_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Full-horizon price iteration, re-cleared as disturbances are revealed.
    Iterative,
    /// Look-ahead clearing with the configured window.
    Mpc,
    Baseline,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Iterative, Scheme::Mpc, Scheme::Baseline];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Iterative => "iterative",
            Scheme::Mpc => "mpc",
            Scheme::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    /// Common retention coefficient of all agents.
    A,
    /// Magnitude of the two-point consumer disturbance.
    W,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::A => "a",
            SweepParam::W => "w",
        }
    }

    fn tag(&self) -> u64 {
        match self {
            SweepParam::A => 1,
            SweepParam::W => 2,
        }
    }
}

/// Everything needed to run one scheme on one seeded instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub m: usize,
    pub n: usize,
    pub horizon: usize,
    pub sampling: SamplingSpec,
    /// `w = ±w_mag` and `v = ±v_mag` with probability one half each, i.i.d.
    pub w_mag: f64,
    pub v_mag: f64,
    pub lookahead: usize,
    pub lambda0: f64,
    pub clear: ClearSettings,
    pub baseline: BaselineSettings,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            m: 5,
            n: 10,
            horizon: 10,
            sampling: SamplingSpec::default(),
            w_mag: 0.0,
            v_mag: 0.0,
            lookahead: 3,
            lambda0: 0.0,
            clear: ClearSettings::default(),
            baseline: BaselineSettings::default(),
        }
    }
}

impl Scenario {
    pub fn disturbance(&self) -> DisturbanceSpec {
        DisturbanceSpec::symmetric(self.w_mag, self.v_mag)
    }

    pub fn population(&self, seed: u64) -> Result<Population> {
        sample_population_with(self.m, self.n, seed, &self.sampling)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeRun {
    pub welfare: f64,
    pub prices: Vec<f64>,
    /// Every clearing window converged (always true for the baseline).
    pub converged: bool,
    /// Baseline periods clipped by the fallback.
    pub clipped: usize,
}

impl SchemeRun {
    pub fn price_variance(&self) -> Result<f64> {
        price_variance(&self.prices)
    }
}

/// Runs `scheme` on `population` along the disturbance path drawn from `path_seed`.
pub fn run_scheme(
    scenario: &Scenario,
    population: &Population,
    path_seed: u64,
    scheme: Scheme,
) -> Result<SchemeRun> {
    let spec = scenario.disturbance();
    let path = spec.sample_path(scenario.horizon, path_seed);
    let lambda0 = PriceSchedule::constant(scenario.horizon, scenario.lambda0);
    let x0 = &population.initial;
    match scheme {
        Scheme::Iterative | Scheme::Mpc => {
            let k = if scheme == Scheme::Iterative {
                scenario.horizon
            } else {
                scenario.lookahead.min(scenario.horizon)
            };
            let out = mpc_rollout(population, x0, &spec, &path, &lambda0, k, &scenario.clear)?;
            Ok(SchemeRun {
                welfare: out.welfare,
                converged: out.all_converged(),
                prices: out.prices,
                clipped: 0,
            })
        }
        Scheme::Baseline => {
            let out = baseline_rollout(population, x0, &spec.realize(&path), &scenario.baseline)?;
            Ok(SchemeRun {
                welfare: out.welfare,
                converged: true,
                clipped: out.clipped.iter().filter(|&&c| c).count(),
                prices: out.prices,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub seed: u64,
    pub run: std::result::Result<SchemeRun, Error>,
}

/// Runs every scheme on the population sampled from each seed; all schemes
/// of a seed share one disturbance path.
pub fn compare(scenario: &Scenario, schemes: &[Scheme], seeds: &[u64], parallel: bool) -> Vec<SummaryRow> {
    let jobs: Vec<(u64, Scheme)> = seeds
        .iter()
        .flat_map(|&s| schemes.iter().map(move |&sc| (s, sc)))
        .collect();
    let one = |&(seed, scheme): &(u64, Scheme)| SummaryRow {
        scheme,
        seed,
        run: scenario
            .population(seed)
            .and_then(|pop| run_scheme(scenario, &pop, derive_seed(seed, &[PATH_STREAM]), scheme)),
    };
    if parallel {
        jobs.par_iter().map(one).collect()
    } else {
        jobs.iter().map(one).collect()
    }
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "scheme,seed,welfare,price_variance,converged,clipped_periods,error")?;
    for r in rows {
        match &r.run {
            Ok(run) => {
                let var = run.price_variance().map(|v| v.to_string()).unwrap_or_default();
                writeln!(
                    out,
                    "{},{},{},{},{},{},",
                    r.scheme.name(),
                    r.seed,
                    run.welfare,
                    var,
                    run.converged,
                    run.clipped
                )?;
            }
            Err(e) => writeln!(out, "{},{},,,,,\"{}\"", r.scheme.name(), r.seed, e.to_string().replace('"', "'"))?,
        }
    }
    Ok(())
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub scheme: Scheme,
    pub metric: &'static str,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Per-cell errors as `(value, scheme, seed, message)`.
    pub errors: Vec<(f64, Scheme, u64, String)>,
}

impl SweepTable {
    pub fn get(&self, value: f64, scheme: Scheme, metric: &str) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.value == value && r.scheme == scheme && r.metric == metric)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "param,value,scheme,metric,mean,std,runs,failures")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.param.name(),
                r.value,
                r.scheme.name(),
                r.metric,
                r.mean,
                r.std,
                r.runs,
                r.failures
            )?;
        }
        Ok(())
    }
}

/// Sweeps one parameter over `grid`. The population is sampled once from
/// `population_seed`; each seed in `seeds` drives the disturbance path of a
/// run, shared by all schemes at that grid point. Cell failures are recorded.
pub fn sweep(
    scenario: &Scenario,
    population_seed: u64,
    param: SweepParam,
    grid: &[f64],
    schemes: &[Scheme],
    seeds: &[u64],
    parallel: bool,
) -> Result<SweepTable> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("sweep grid is empty".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one seed".into()));
    }
    let base = scenario.population(population_seed)?;
    let cells: Vec<(usize, Scheme, u64)> = (0..grid.len())
        .flat_map(|g| schemes.iter().flat_map(move |&sc| seeds.iter().map(move |&s| (g, sc, s))))
        .collect();
    let one = |&(g, scheme, seed): &(usize, Scheme, u64)| {
        let value = grid[g];
        let mut sc = scenario.clone();
        let pop = match param {
            SweepParam::A => {
                sc.sampling.a = value;
                base.with_retention(value)
            }
            SweepParam::W => {
                sc.w_mag = value;
                base.clone()
            }
        };
        let path_seed = derive_seed(seed, &[PATH_STREAM, param.tag(), value.to_bits()]);
        run_scheme(&sc, &pop, path_seed, scheme)
    };
    let results: Vec<Result<SchemeRun>> = if parallel {
        cells.par_iter().map(one).collect()
    } else {
        cells.iter().map(one).collect()
    };

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let per_cell = seeds.len();
    for (g, &value) in grid.iter().enumerate() {
        for (si, &scheme) in schemes.iter().enumerate() {
            let start = (g * schemes.len() + si) * per_cell;
            let mut welfare = Vec::new();
            let mut variance = Vec::new();
            let mut failures = 0;
            for (j, r) in results[start..start + per_cell].iter().enumerate() {
                match r.as_ref().map_err(|e| e.clone()).and_then(|run| Ok((run.welfare, run.price_variance()?))) {
                    Ok((w, v)) => {
                        welfare.push(w);
                        variance.push(v);
                    }
                    Err(e) => {
                        failures += 1;
                        errors.push((value, scheme, seeds[j], e.to_string()));
                    }
                }
            }
            for (metric, vals) in [("welfare", &welfare), ("price_variance", &variance)] {
                let (mean, std) = mean_std(vals);
                rows.push(SweepRow {
                    param,
                    value,
                    scheme,
                    metric,
                    mean,
                    std,
                    runs: vals.len(),
                    failures,
                });
            }
        }
    }
    Ok(SweepTable { rows, errors })
}
