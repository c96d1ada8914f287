//! Experiment configuration: benchmark regimes, methods and resolved parameters.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use stiffsplit::controller::{ControlSignal, ControllerConfig};
use stiffsplit::integrators::IntegratorOptions;
use stiffsplit::vectorfields::DEFAULT_PROPENSITY_FLOOR;
use stiffsplit::{parse_network, Network, TruncationPairs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Method {
    #[serde(rename = "ssa")]
    Ssa,
    #[serde(rename = "em")]
    Em,
    #[serde(rename = "split-fixed")]
    SplitFixed,
    #[serde(rename = "fs-mse-pi")]
    FsMsePi,
    #[serde(rename = "ilie-pi")]
    IliePi,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ssa, Method::Em, Method::SplitFixed, Method::FsMsePi, Method::IliePi];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ssa => "ssa",
            Method::Em => "em",
            Method::SplitFixed => "split-fixed",
            Method::FsMsePi => "fs-mse-pi",
            Method::IliePi => "ilie-pi",
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, Method::FsMsePi | Method::IliePi)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}` (expected ssa, em, split-fixed, fs-mse-pi or ilie-pi)"))
    }
}

/// Parses a comma separated method list, keeping the first occurrence order.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let m: Method = part.parse().map_err(anyhow::Error::msg)?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        bail!("method list is empty");
    }
    Ok(out)
}

#[derive(Deserialize)]
struct RegimeExtras {
    name: Option<String>,
    initial_state: Option<Vec<f64>>,
    t_end: Option<f64>,
    macro_steps: Option<usize>,
}

/// One network with its initial state, horizon and macro-step budget.
#[derive(Clone, Debug)]
pub struct Regime {
    pub label: String,
    pub source: PathBuf,
    pub network: Network,
    pub initial_state: Vec<f64>,
    pub t_end: f64,
    pub macro_steps: usize,
}

impl Regime {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text, path)
    }

    pub fn from_json(text: &str, source: &Path) -> Result<Self> {
        let network: Network = parse_network(text).with_context(|| format!("parsing {}", source.display()))?;
        let extras: RegimeExtras = serde_json::from_str(text)?;
        let label = extras.name.unwrap_or_else(|| {
            source
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "network".into())
        });
        let initial_state = extras
            .initial_state
            .with_context(|| format!("{} has no initial_state", source.display()))?;
        if initial_state.len() != network.n_species() {
            bail!(
                "{}: initial_state has {} entries for {} species",
                source.display(),
                initial_state.len(),
                network.n_species()
            );
        }
        Ok(Self {
            label,
            source: source.to_path_buf(),
            network,
            initial_state,
            t_end: extras.t_end.unwrap_or(2e-2),
            macro_steps: extras.macro_steps.unwrap_or(1000),
        })
    }

    /// Directory-safe form of the label.
    pub fn dir_name(&self) -> String {
        self.label
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
            .collect()
    }
}

/// Resolves `k5=0.1` to `<dir>/k5_0.1.json`; anything else is taken as a path.
pub fn resolve_benchmark(spec: &str, dir: &Path) -> PathBuf {
    match spec.split_once('=') {
        Some((key, value)) if !spec.ends_with(".json") => dir.join(format!("{key}_{value}.json")),
        _ => PathBuf::from(spec),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ControllerSettings {
    pub theta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub r_max: f64,
    pub n_max: usize,
    pub dt_min: Option<f64>,
    pub dt_max: Option<f64>,
    pub retry_limit: usize,
    pub signal: ControlSignal,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        let base = ControllerConfig::<f64>::new(1.0, 1.0);
        Self {
            theta: base.theta,
            alpha: base.alpha,
            beta: base.beta,
            r_max: base.r_max,
            n_max: base.n_max,
            dt_min: None,
            dt_max: None,
            retry_limit: base.retry_limit,
            signal: base.signal,
        }
    }
}

impl ControllerSettings {
    pub fn config(&self, epsilon: f64, t_end: f64) -> ControllerConfig<f64> {
        let mut cfg = ControllerConfig::new(epsilon, t_end);
        cfg.theta = self.theta;
        cfg.alpha = self.alpha;
        cfg.beta = self.beta;
        cfg.r_max = self.r_max;
        cfg.n_max = self.n_max;
        cfg.retry_limit = self.retry_limit;
        cfg.signal = self.signal;
        if let Some(v) = self.dt_min {
            cfg.dt_min = v;
        }
        if let Some(v) = self.dt_max {
            cfg.dt_max = v;
        }
        cfg
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentPlan {
    pub regimes: Vec<Regime>,
    pub methods: Vec<Method>,
    pub paths: usize,
    pub reps: usize,
    pub seed: u64,
    /// Overrides the regime horizon.
    pub t_end: Option<f64>,
    /// Overrides the regime macro-step budget.
    pub steps: Option<usize>,
    /// Fixed step for em and split-fixed; defaults to horizon / steps.
    pub dt: Option<f64>,
    pub substeps: usize,
    /// Tolerance for the adaptive methods; calibrated per method when absent.
    pub epsilon: Option<f64>,
    pub controller: ControllerSettings,
    pub truncation_pairs: TruncationPairs,
    pub options: IntegratorOptions,
    pub propensity_floor: f64,
    pub pilot_paths: usize,
    pub trace: bool,
    pub out: PathBuf,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl ExperimentPlan {
    pub fn new(regimes: Vec<Regime>, out: PathBuf) -> Self {
        Self {
            regimes,
            methods: Method::ALL.to_vec(),
            paths: 10_000,
            reps: 10,
            seed: 42,
            t_end: None,
            steps: None,
            dt: None,
            substeps: 4,
            epsilon: None,
            controller: ControllerSettings::default(),
            truncation_pairs: TruncationPairs::All,
            options: IntegratorOptions::default(),
            propensity_floor: DEFAULT_PROPENSITY_FLOOR,
            pilot_paths: 100,
            trace: false,
            out,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.regimes.is_empty() {
            bail!("no benchmark regime given");
        }
        if self.paths < 2 {
            bail!("need at least 2 paths per repetition");
        }
        if self.reps < 1 {
            bail!("need at least 1 repetition");
        }
        if let Some(t) = self.t_end {
            if !(t > 0.0 && t.is_finite()) {
                bail!("horizon must be positive");
            }
        }
        if self.substeps == 0 {
            bail!("substeps must be at least 1");
        }
        if !(self.propensity_floor > 0.0) {
            bail!("propensity floor must be positive");
        }
        if self.pilot_paths == 0 {
            bail!("pilot ensemble needs at least 1 path");
        }
        if let Some(e) = self.epsilon {
            self.controller.config(e, 1.0).validate()?;
        }
        Ok(())
    }

    pub fn horizon(&self, regime: &Regime) -> f64 {
        self.t_end.unwrap_or(regime.t_end)
    }

    pub fn step_budget(&self, regime: &Regime) -> usize {
        self.steps.unwrap_or(regime.macro_steps)
    }

    pub fn fixed_dt(&self, regime: &Regime) -> f64 {
        self.dt.unwrap_or_else(|| self.horizon(regime) / self.step_budget(regime) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("rk4".parse::<Method>().is_err());
        assert_eq!(parse_methods("em, ssa,em").unwrap(), vec![Method::Em, Method::Ssa]);
    }

    #[test]
    fn benchmark_shorthand() {
        let dir = Path::new("benchmarks");
        assert_eq!(resolve_benchmark("k5=0.1", dir), dir.join("k5_0.1.json"));
        assert_eq!(resolve_benchmark("my/net.json", dir), PathBuf::from("my/net.json"));
    }
}
