use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use semiclassical::models::{make_model, ModelHamiltonian, PhasePoint};

/// Experiment description; unknown keys are rejected.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_id")]
    pub id: String,
    pub model: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Center of the initial coherent state; zeros when omitted.
    pub center_q: Option<Vec<f64>>,
    pub center_p: Option<Vec<f64>>,
    pub hbar_list: Vec<f64>,
    pub t: Option<f64>,
    pub t_schedule: Option<Vec<f64>>,
    /// Oracle step; chosen from the grid when omitted.
    pub dt: Option<f64>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Breakdown window as a fraction of the Ehrenfest time.
    pub window: Option<f64>,
    #[serde(default = "default_observations")]
    pub observations: usize,
    /// Relative slack on the breakdown slope interval.
    #[serde(default = "default_slack")]
    pub slack: f64,
    #[serde(default = "default_lyapunov_time")]
    pub lyapunov_time: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub switch_fraction: Option<f64>,
    pub final_fraction: Option<f64>,
    pub steps: Option<usize>,
    /// Seconds before remaining points are skipped.
    #[serde(default = "default_budget")]
    pub wall_budget: f64,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub q_margin: Option<f64>,
    pub p_margin: Option<f64>,
    pub dx_over_sqrt_hbar: Option<f64>,
    pub max_points: Option<usize>,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Order0,
    #[serde(rename = "orderN")]
    OrderN,
    Segmented,
    Hybrid,
    Oracle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Order0 => "order0",
            Method::OrderN => "orderN",
            Method::Segmented => "segmented",
            Method::Hybrid => "hybrid",
            Method::Oracle => "oracle",
        }
    }
}

fn default_id() -> String {
    "run".into()
}
fn default_order() -> usize {
    1
}
fn default_methods() -> Vec<Method> {
    vec![Method::Order0]
}
fn default_threshold() -> f64 {
    0.25
}
fn default_observations() -> usize {
    120
}
fn default_slack() -> f64 {
    0.3
}
fn default_lyapunov_time() -> f64 {
    3.0
}
fn default_alpha() -> f64 {
    0.05
}
fn default_budget() -> f64 {
    600.0
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Parsed config with its source text hash and the model it names.
pub struct Loaded {
    pub config: ExperimentConfig,
    pub hash: String,
    pub model: ModelHamiltonian,
}

impl Loaded {
    pub fn center(&self) -> PhasePoint {
        let d = self.model.d;
        let q = self.config.center_q.clone().unwrap_or_else(|| vec![0.0; d]);
        let p = self.config.center_p.clone().unwrap_or_else(|| vec![0.0; d]);
        PhasePoint::new(q, p)
    }

    pub fn sizing(&self) -> semiclassical::oracle::sizing::GridSizing {
        let mut s = semiclassical::oracle::sizing::GridSizing::default();
        let g = &self.config.grid;
        if let Some(v) = g.q_margin {
            s.q_margin = v;
        }
        if let Some(v) = g.p_margin {
            s.p_margin = v;
        }
        if let Some(v) = g.dx_over_sqrt_hbar {
            s.dx_over_sqrt_hbar = v;
        }
        if let Some(v) = g.max_points {
            s.max_points = v;
        }
        s
    }

    pub fn oracle(&self) -> semiclassical::oracle::split_step::SplitStepOptions {
        semiclassical::oracle::split_step::SplitStepOptions { dt: self.config.dt, ..Default::default() }
    }

    /// Propagation times: the schedule if given, else the single `t`.
    pub fn times(&self) -> Result<Vec<f64>, ConfigError> {
        match (&self.config.t_schedule, self.config.t) {
            (Some(_), Some(_)) => Err(bad("give either t or t_schedule, not both")),
            (Some(s), None) => Ok(s.clone()),
            (None, Some(t)) => Ok(vec![t]),
            (None, None) => Err(bad("missing t or t_schedule")),
        }
    }
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn load(path: &Path, slope_requested: bool) -> Result<Loaded, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    parse(&text, slope_requested)
}

pub fn parse(text: &str, slope_requested: bool) -> Result<Loaded, ConfigError> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
    let model = make_model(&config.model, &config.params).map_err(|e| bad(e.to_string()))?;
    validate(&config, &model, slope_requested)?;
    Ok(Loaded { hash: sha256_hex(text), config, model })
}

fn validate(c: &ExperimentConfig, model: &ModelHamiltonian, slope_requested: bool) -> Result<(), ConfigError> {
    if c.hbar_list.is_empty() {
        return Err(bad("hbar_list is empty"));
    }
    if let Some(h) = c.hbar_list.iter().find(|&&h| !(h > 0.0 && h < 1.0)) {
        return Err(bad(format!("hbar = {h} outside (0, 1)")));
    }
    if slope_requested && c.hbar_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(bad("hbar_list must be strictly decreasing when a slope is requested"));
    }
    for (name, v) in [("center_q", &c.center_q), ("center_p", &c.center_p)] {
        if let Some(v) = v {
            if v.len() != model.d {
                return Err(bad(format!("{name} has {} entries, model dimension is {}", v.len(), model.d)));
            }
        }
    }
    if let Some(t) = c.t {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(bad("t must be finite and nonnegative"));
        }
    }
    if let Some(s) = &c.t_schedule {
        if s.is_empty() || s.iter().any(|t| !(*t >= 0.0)) || s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(bad("t_schedule must be nonempty, nonnegative and increasing"));
        }
    }
    if let Some(dt) = c.dt {
        if !(dt > 0.0) {
            return Err(bad("dt must be positive"));
        }
    }
    if c.methods.is_empty() {
        return Err(bad("methods is empty"));
    }
    if !(c.threshold > 0.0) || c.observations == 0 || !(c.wall_budget > 0.0) {
        return Err(bad("threshold, observations and wall_budget must be positive"));
    }
    if let Some(w) = c.window {
        if !(w > 0.0) {
            return Err(bad("window must be positive"));
        }
    }
    Ok(())
}
