//! Experiment configuration: TOML text, `--set key=value` overrides and
//! validation.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use tdmf_core::simulator::Variant;
use toml::{Table, Value};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    pub ensemble: EnsembleSpec,
    #[serde(default)]
    pub learner: LearnerSpec,
    #[serde(default)]
    pub nongauss: NongaussSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::Sim, Variant::Dmft]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnsembleSpec {
    Powerlaw {
        #[serde(default = "d_n")]
        n: usize,
        #[serde(default = "d_horizon")]
        horizon: usize,
        #[serde(default = "d_a")]
        a: f64,
        #[serde(default = "d_b")]
        b: f64,
    },
    Gridworld {
        #[serde(default = "d_side")]
        side: usize,
        #[serde(default = "d_bandwidth")]
        bandwidth: f64,
        #[serde(default = "d_horizon")]
        horizon: usize,
        #[serde(default)]
        reward: RewardMap,
        #[serde(default = "d_draws")]
        estimation_trajectories: usize,
    },
    Hypercube {
        #[serde(default = "d_cube_n")]
        n: usize,
        #[serde(default = "d_cube_t")]
        horizon: usize,
        /// Defaults to all ones.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reward_weights: Option<Vec<f64>>,
    },
    /// Saved `.ens.json` / `.ens.bin` container; features are sampled from
    /// its Gaussian surrogate.
    File { path: PathBuf, reward_weights: Vec<f64> },
}

fn d_n() -> usize {
    300
}
fn d_horizon() -> usize {
    50
}
fn d_a() -> f64 {
    1.2
}
fn d_b() -> f64 {
    1.1
}
fn d_side() -> usize {
    17
}
fn d_bandwidth() -> f64 {
    0.75
}
fn d_draws() -> usize {
    tdmf_core::features::DEFAULT_ESTIMATION_TRAJECTORIES
}
fn d_cube_n() -> usize {
    10
}
fn d_cube_t() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
pub enum RewardMap {
    /// Unit reward on one cell.
    Sparse { goal: [usize; 2] },
    /// Gaussian bump `exp(−|s − c|² / (2 width²))`.
    Gaussian { center: [f64; 2], width: f64 },
    /// Explicit per-state values, row-major.
    Values { values: Vec<f64> },
}

impl Default for RewardMap {
    fn default() -> Self {
        RewardMap::Gaussian { center: [12.0, 12.0], width: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSpec {
    pub gamma: f64,
    pub batch: usize,
    /// Theory variants drop every `1/B` term.
    pub infinite_batch: bool,
    pub eta0: f64,
    pub chi: f64,
    pub n_steps: usize,
    pub seeds: usize,
    pub w0: W0Policy,
    pub shaping: ShapingSpec,
    /// Reward noise variance `σ²`, the same at every transition.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action_noise: Option<f64>,
}

impl Default for LearnerSpec {
    fn default() -> Self {
        LearnerSpec {
            gamma: 0.9,
            batch: 10,
            infinite_batch: false,
            eta0: 0.5,
            chi: 0.0,
            n_steps: 500,
            seeds: 20,
            w0: W0Policy::Zero,
            shaping: ShapingSpec::None,
            action_noise: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum W0Policy {
    Zero,
    /// Start at the TD fixed point.
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum ShapingSpec {
    None,
    /// `w_φ = β w_TD`.
    Scale {
        beta: f64,
    },
    /// `w_TD + w_φ` keeps the norm of `w_TD` and is turned toward the top
    /// eigenvector of `Σ̄` by the fraction `theta` of the angle between them.
    Rotate {
        theta: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NongaussModel {
    Wick,
    Hypercube,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NongaussSpec {
    pub model: NongaussModel,
    /// Contract an explicit fourth-moment tensor instead of the closed form.
    pub explicit_tensor: bool,
}

impl Default for NongaussSpec {
    fn default() -> Self {
        NongaussSpec { model: NongaussModel::Wick, explicit_tensor: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Dotted path of a scalar field, e.g. `learner.batch`.
    pub parameter: String,
    pub values: Vec<Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// Fraction of the final iterations used for log-log slope fits.
    pub fit_window: f64,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { dir: PathBuf::from("out"), fit_window: 0.25 }
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
pub fn parse_value(value: &str) -> Value {
    match format!("v = {value}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(value.into())),
        Err(_) => Value::String(value.into()),
    }
}

/// Sets a dotted path, creating intermediate tables.
pub fn set_path(table: &mut Table, path: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!("malformed key {path:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(CliError::config(format!("{path}: {p} is not a table"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn get_path<'a>(table: &'a Table, path: &str) -> Option<&'a Value> {
    let mut parts = path.split('.');
    let mut cur = table.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

/// Copies the first table on `path` that is missing from `table` out of
/// `defaults`, so a nested override lands on a complete table.
fn fill_parent(table: &mut Table, defaults: &Table, path: &str) {
    let parts: Vec<&str> = path.split('.').collect();
    let (mut cur, mut def) = (table, defaults);
    for p in &parts[..parts.len().saturating_sub(1)] {
        let Some(Value::Table(d)) = def.get(*p) else { return };
        if !cur.contains_key(*p) {
            cur.insert(p.to_string(), Value::Table(d.clone()));
            return;
        }
        let Some(Value::Table(c)) = cur.get_mut(*p) else { return };
        (cur, def) = (c, d);
    }
}

/// Applies `key=value` overrides to raw TOML.
pub fn apply_overrides(table: &mut Table, overrides: &[String]) -> Result<(), CliError> {
    let defaults = Value::Table(table.clone()).try_into::<ExperimentConfig>().ok().map(|c| c.to_table());
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("override {o:?} is not of the form key=value")))?;
        if let Some(d) = &defaults {
            fill_parent(table, d, k.trim());
        }
        set_path(table, k.trim(), parse_value(v.trim()))?;
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_table(table: Table) -> Result<Self, CliError> {
        let cfg: ExperimentConfig =
            Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: Table = text.parse().map_err(|e: toml::de::Error| CliError::config(e.to_string()))?;
        apply_overrides(&mut table, overrides)?;
        Self::from_table(table)
    }

    pub fn to_table(&self) -> Table {
        match Value::try_from(self) {
            Ok(Value::Table(t)) => t,
            _ => unreachable!("configuration serializes to a table"),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    /// Copy with `path` replaced by `value`, revalidated.
    pub fn with_value(&self, path: &str, value: Value) -> Result<Self, CliError> {
        let mut t = self.to_table();
        set_path(&mut t, path, value)?;
        Self::from_table(t)
    }

    pub fn ensemble_dims(&self) -> Option<(usize, usize)> {
        match &self.ensemble {
            EnsembleSpec::Powerlaw { n, horizon, .. } => Some((*n, *horizon)),
            EnsembleSpec::Gridworld { side, horizon, .. } => Some((side * side, *horizon)),
            EnsembleSpec::Hypercube { n, horizon, .. } => Some((*n, *horizon)),
            EnsembleSpec::File { .. } => None,
        }
    }

    /// Every violated constraint, reported together.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut errs = Vec::new();
        let l = &self.learner;
        if !(0.0..1.0).contains(&l.gamma) {
            errs.push(format!("learner.gamma must lie in [0, 1), got {}", l.gamma));
        }
        if l.batch == 0 {
            errs.push("learner.batch must be at least 1".into());
        }
        if !(l.eta0 >= 0.0 && l.eta0.is_finite()) {
            errs.push(format!("learner.eta0 must be non-negative, got {}", l.eta0));
        }
        if !(l.chi >= 0.0 && l.chi.is_finite()) {
            errs.push(format!("learner.chi must be non-negative, got {}", l.chi));
        }
        if l.n_steps == 0 {
            errs.push("learner.n_steps must be at least 1".into());
        }
        if l.seeds == 0 && self.variants.iter().any(|v| v.is_simulation()) {
            errs.push("learner.seeds must be at least 1 for simulation variants".into());
        }
        if let Some(s) = l.action_noise {
            if !(s >= 0.0 && s.is_finite()) {
                errs.push(format!("learner.action_noise must be non-negative, got {s}"));
            }
        }
        match l.shaping {
            ShapingSpec::Scale { beta } if !beta.is_finite() => errs.push("learner.shaping.beta must be finite".into()),
            ShapingSpec::Rotate { theta } if !theta.is_finite() => {
                errs.push("learner.shaping.theta must be finite".into())
            }
            _ => {}
        }
        if self.variants.is_empty() {
            errs.push("variants must not be empty".into());
        }
        if l.infinite_batch && self.variants.iter().any(|v| v.is_simulation()) {
            errs.push("learner.infinite_batch applies to theory variants only".into());
        }
        match &self.ensemble {
            EnsembleSpec::Powerlaw { n, horizon, a, b } => {
                if *n == 0 || *horizon == 0 {
                    errs.push("ensemble.n and ensemble.horizon must be positive".into());
                }
                if !(*a > 0.0) || !(*b > 0.0) {
                    errs.push("ensemble.a and ensemble.b must be positive".into());
                }
            }
            EnsembleSpec::Gridworld { side, bandwidth, horizon, reward, estimation_trajectories } => {
                if *side == 0 || *horizon == 0 {
                    errs.push("ensemble.side and ensemble.horizon must be positive".into());
                }
                if !(*bandwidth > 0.0 && bandwidth.is_finite()) {
                    errs.push(format!("ensemble.bandwidth must be positive, got {bandwidth}"));
                }
                if *estimation_trajectories < 2 {
                    errs.push("ensemble.estimation_trajectories must be at least 2".into());
                }
                match reward {
                    RewardMap::Sparse { goal } if goal[0] >= *side || goal[1] >= *side => {
                        errs.push(format!("ensemble.reward.goal {goal:?} is outside the grid"))
                    }
                    RewardMap::Gaussian { width, .. } if !(*width > 0.0) => {
                        errs.push("ensemble.reward.width must be positive".into())
                    }
                    RewardMap::Values { values } if values.len() != side * side => errs.push(format!(
                        "ensemble.reward.values has {} entries, expected {}",
                        values.len(),
                        side * side
                    )),
                    _ => {}
                }
            }
            EnsembleSpec::Hypercube { n, horizon, reward_weights } => {
                if *n == 0 || *horizon == 0 {
                    errs.push("ensemble.n and ensemble.horizon must be positive".into());
                }
                if let Some(w) = reward_weights {
                    if w.len() != *n {
                        errs.push(format!("ensemble.reward_weights has {} entries, expected {n}", w.len()));
                    }
                }
            }
            EnsembleSpec::File { reward_weights, .. } => {
                if reward_weights.is_empty() {
                    errs.push("ensemble.reward_weights is required for file ensembles".into());
                }
            }
        }
        let decoupled = matches!(self.ensemble, EnsembleSpec::Powerlaw { .. } | EnsembleSpec::Hypercube { .. });
        if let Some((n, horizon)) = self.ensemble_dims() {
            let small = n * (horizon + 1) <= tdmf_core::theory::MAX_TENSOR_DIM;
            if self.variants.contains(&Variant::Nongauss) {
                if self.nongauss.explicit_tensor && !small {
                    errs.push(format!(
                        "nongauss with an explicit tensor needs N(T+1) <= {}, got {}",
                        tdmf_core::theory::MAX_TENSOR_DIM,
                        n * (horizon + 1)
                    ));
                }
                if !decoupled && !small {
                    errs.push(
                        "nongauss needs a closed-family (power-law or hypercube) ensemble or small N(T+1)".into(),
                    );
                }
            }
            if self.nongauss.model == NongaussModel::Hypercube
                && self.variants.contains(&Variant::Nongauss)
                && !matches!(self.ensemble, EnsembleSpec::Hypercube { .. })
            {
                errs.push("nongauss.model = hypercube requires a hypercube ensemble".into());
            }
        }
        if self.variants.contains(&Variant::Closedform) {
            let ok = matches!(&self.ensemble, EnsembleSpec::Hypercube { horizon: 1, reward_weights, .. }
                if reward_weights.as_ref().is_none_or(|w| w.iter().all(|v| *v == 1.0)))
                && l.gamma == 0.0
                && l.chi == 0.0
                && l.w0 == W0Policy::Zero
                && l.shaping == ShapingSpec::None
                && l.action_noise.is_none()
                && !l.infinite_batch;
            if !ok {
                errs.push(
                    "closedform needs a hypercube ensemble with horizon 1 and unit reward weights, gamma 0, chi 0, w0 zero, no shaping or noise"
                        .into(),
                );
            }
        }
        if !(self.output.fit_window > 0.0 && self.output.fit_window <= 1.0) {
            errs.push(format!("output.fit_window must lie in (0, 1], got {}", self.output.fit_window));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                errs.push("sweep.values must not be empty".into());
            }
            let mut probe = self.clone();
            probe.sweep = None;
            match get_path(&probe.to_table(), &s.parameter) {
                None => errs.push(format!("sweep.parameter {:?} does not name a configuration field", s.parameter)),
                Some(Value::Table(_)) | Some(Value::Array(_)) => {
                    errs.push(format!("sweep.parameter {:?} is not a scalar field", s.parameter))
                }
                Some(_) if s.parameter.starts_with("sweep.") => {
                    errs.push("sweep.parameter cannot name the sweep block".into())
                }
                Some(_) => {}
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(errs))
        }
    }
}
