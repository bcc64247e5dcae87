//! Experiment configuration: a TOML file, overridden by command-line flags.

use std::path::Path;

use gridclear_core::metrics::{Scenario, Scheme, SweepParam};
use gridclear_core::{BaselineSettings, ClearSettings, DisturbanceSpec, Population, SamplingSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub horizon: usize,
    pub lookahead: usize,
    /// Initial price in every period.
    pub lambda0: f64,
    pub population: PopulationConfig,
    pub market: ClearSettings,
    pub disturbance: DisturbanceConfig,
    pub baseline: BaselineSettings,
    pub compare: CompareConfig,
    pub sweep: SweepConfig,
}

impl Default for Config {
    fn default() -> Self {
        let scenario = Scenario::default();
        Self {
            seed: 1,
            horizon: scenario.horizon,
            lookahead: scenario.lookahead,
            lambda0: scenario.lambda0,
            population: PopulationConfig::default(),
            market: scenario.clear,
            disturbance: DisturbanceConfig::default(),
            baseline: scenario.baseline,
            compare: CompareConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    /// Number of consumers.
    pub m: usize,
    /// Total number of agents.
    pub n: usize,
    pub sampling: SamplingSpec,
    /// Fixed agents. When present, nothing is sampled for single runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explicit: Option<Population>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            m: 5,
            n: 10,
            sampling: SamplingSpec::default(),
            explicit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceConfig {
    /// Consumer disturbance `±w_mag`, probability one half each.
    pub w_mag: f64,
    /// Supplier disturbance `±v_mag`, independent of `w`.
    pub v_mag: f64,
    /// Arbitrary finite support, used by `stochastic` and `baseline` instead
    /// of the magnitudes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub custom: Option<DisturbanceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    /// Retention coefficient forced on every agent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    /// Seeds `seed, seed + 1, ...`, one population and path each.
    pub seeds: usize,
    pub schemes: Vec<Scheme>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            a: None,
            seeds: 10,
            schemes: Scheme::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub param: SweepParam,
    pub values: Vec<f64>,
    /// Path seeds `seed, seed + 1, ...`; the population comes from `seed`.
    pub seeds: usize,
    pub schemes: Vec<Scheme>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            param: SweepParam::A,
            values: vec![1.0, 2.0, 3.0],
            seeds: 10,
            schemes: Scheme::ALL.to_vec(),
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_iters: Option<usize>,
    pub step_size: Option<f64>,
    pub tolerance: Option<f64>,
    pub lookahead: Option<usize>,
    pub parallel: bool,
    pub nonneg_prices: bool,
    pub compare_a: Option<f64>,
    pub compare_seeds: Option<usize>,
    pub sweep_param: Option<SweepParam>,
    pub sweep_values: Option<Vec<f64>>,
    pub sweep_seeds: Option<usize>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, Vec<String>> {
        toml::from_str(text).map_err(|e| vec![format!("schema: {}", e.to_string().trim_end())])
    }

    pub fn load(path: &Path) -> Result<Self, Vec<String>> {
        let text = std::fs::read_to_string(path).map_err(|e| vec![format!("cannot read {}: {e}", path.display())])?;
        Self::parse(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(k) = o.max_iters {
            self.market.max_iters = k;
        }
        if let Some(a) = o.step_size {
            self.market.rule = self.market.rule.with_alpha0(a);
        }
        if let Some(t) = o.tolerance {
            self.market.tol_balance = t;
        }
        if let Some(k) = o.lookahead {
            self.lookahead = k;
        }
        if o.parallel {
            self.market.parallel = true;
        }
        if o.nonneg_prices {
            self.market.nonneg_prices = true;
        }
        if let Some(a) = o.compare_a {
            self.compare.a = Some(a);
        }
        if let Some(n) = o.compare_seeds {
            self.compare.seeds = n;
        }
        if let Some(p) = o.sweep_param {
            self.sweep.param = p;
        }
        if let Some(v) = &o.sweep_values {
            self.sweep.values = v.clone();
        }
        if let Some(n) = o.sweep_seeds {
            self.sweep.seeds = n;
        }
    }

    /// Every schema-level and physical problem, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.seed > i64::MAX as u64 {
            out.push(format!("seed {} exceeds {}", self.seed, i64::MAX));
        }
        if self.horizon < 2 {
            out.push(format!("horizon = {} must be at least 2", self.horizon));
        }
        if self.lookahead == 0 || self.lookahead > self.horizon {
            out.push(format!("lookahead = {} must lie in 1..={}", self.lookahead, self.horizon));
        }
        if !self.lambda0.is_finite() {
            out.push("lambda0 must be finite".into());
        }
        let p = &self.population;
        if p.m == 0 || p.n <= p.m {
            out.push(format!("population needs m >= 1 and n > m (m = {}, n = {})", p.m, p.n));
        }
        out.extend(p.sampling.violations());
        if let Some(pop) = &p.explicit {
            out.extend(pop.violations());
            if pop.m() != p.m || pop.n() != p.n {
                out.push(format!(
                    "explicit population has m = {}, n = {} but m = {}, n = {} is configured",
                    pop.m(),
                    pop.n(),
                    p.m,
                    p.n
                ));
            }
        }
        out.extend(self.market.violations());
        let d = &self.disturbance;
        for (name, v) in [("w_mag", d.w_mag), ("v_mag", d.v_mag)] {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(format!("disturbance {name} = {v} must be finite and nonnegative"));
            }
        }
        if let Some(spec) = &d.custom {
            out.extend(spec.violations().into_iter().map(|v| format!("custom disturbance: {v}")));
        }
        if let Some(a) = self.compare.a {
            if !a.is_finite() {
                out.push("compare.a must be finite".into());
            }
        }
        if self.compare.seeds == 0 || self.sweep.seeds == 0 {
            out.push("seed counts must be at least 1".into());
        }
        if self.compare.schemes.is_empty() || self.sweep.schemes.is_empty() {
            out.push("scheme lists must not be empty".into());
        }
        if self.sweep.values.is_empty() {
            out.push("sweep.values is empty".into());
        }
        if self.sweep.values.iter().any(|v| !v.is_finite()) {
            out.push("sweep.values must be finite".into());
        }
        if self.sweep.param == SweepParam::W && self.sweep.values.iter().any(|&v| v < 0.0) {
            out.push("sweep over w needs nonnegative magnitudes".into());
        }
        out
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            m: self.population.m,
            n: self.population.n,
            horizon: self.horizon,
            sampling: self.population.sampling.clone(),
            w_mag: self.disturbance.w_mag,
            v_mag: self.disturbance.v_mag,
            lookahead: self.lookahead,
            lambda0: self.lambda0,
            clear: self.market,
            baseline: self.baseline,
        }
    }

    /// Disturbance law of single runs.
    pub fn disturbance_spec(&self) -> DisturbanceSpec {
        match &self.disturbance.custom {
            Some(spec) => spec.clone(),
            None => DisturbanceSpec::symmetric(self.disturbance.w_mag, self.disturbance.v_mag),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

pub fn seed_list(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base.wrapping_add(i)).collect()
}
