//! Builds ensembles and sources from a configuration, runs the requested
//! variants and writes their artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use tdmf_core::features::{
    gaussian_reward, load_ensemble, sparse_reward, GaussianSurrogate, HypercubeProcess, PowerLawProcess,
};
use tdmf_core::rng::derive_seed;
use tdmf_core::simulator::{eta_trace, run_td_variant, ValueTarget};
use tdmf_core::theory::{CurveOptions, FourthMomentTensor};
use tdmf_core::*;
use toml::Value;

type Result<T, E = CliError> = std::result::Result<T, E>;

use crate::config::{EnsembleSpec, ExperimentConfig, NongaussModel, RewardMap, ShapingSpec, W0Policy};
use crate::error::CliError;
use crate::output::{aggregate_csv, curve_csv, late_slope, loglog_slope, write_atomic, write_json};

/// What a single (non-sweep) run computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Theory,
    Compare,
    Spectral,
    FixedPoint,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Theory => "theory",
            Command::Compare => "compare",
            Command::Spectral => "spectral",
            Command::FixedPoint => "fixed-point",
        }
    }

    /// Variants this command runs from the configured list.
    pub fn variants(&self, cfg: &ExperimentConfig) -> Vec<Variant> {
        let pick = |sim: bool, fallback: Variant| {
            let v: Vec<Variant> = cfg.variants.iter().copied().filter(|v| v.is_simulation() == sim).collect();
            if v.is_empty() {
                vec![fallback]
            } else {
                v
            }
        };
        match self {
            Command::Simulate => pick(true, Variant::Sim),
            Command::Theory => pick(false, Variant::Dmft),
            Command::Compare => cfg.variants.clone(),
            Command::Spectral | Command::FixedPoint => Vec::new(),
        }
    }
}

pub struct Setup {
    pub ensemble: FeatureEnsemble,
    pub w_r: Vec<f64>,
    pub source: TrajectorySource,
}

pub fn build_setup(cfg: &ExperimentConfig) -> Result<Setup, CliError> {
    Ok(match &cfg.ensemble {
        EnsembleSpec::Powerlaw { n, horizon, a, b } => {
            let (ensemble, w_r) = build_powerlaw_ensemble(*n, *horizon, *a, *b)?;
            let source = TrajectorySource::PowerLawOu(PowerLawProcess::new(*n, *horizon, *a, *b)?);
            Setup { ensemble, w_r, source }
        }
        EnsembleSpec::Gridworld { side, bandwidth, horizon, reward, estimation_trajectories } => {
            let reward = match reward {
                RewardMap::Sparse { goal } => sparse_reward(*side, (goal[0], goal[1])),
                RewardMap::Gaussian { center, width } => gaussian_reward(*side, (center[0], center[1]), *width),
                RewardMap::Values { values } => values.clone(),
            };
            let grid = GridWorld::new(GridWorldSpec::new(*side, *bandwidth, *horizon, reward))?;
            let w_r = grid.reward_weights()?;
            let source = TrajectorySource::GridDiffusion(grid);
            let seed = derive_seed(cfg.master_seed, "ensemble", 0);
            let ensemble = estimate_ensemble(&source, *estimation_trajectories, seed)?;
            Setup { ensemble, w_r, source }
        }
        EnsembleSpec::Hypercube { n, horizon, reward_weights } => {
            let w_r = reward_weights.clone().unwrap_or_else(|| vec![1.0; *n]);
            let ensemble = hypercube_ensemble(*n, *horizon)?;
            let source = TrajectorySource::HypercubeIid(HypercubeProcess::new(*n, *horizon, w_r.clone())?);
            Setup { ensemble, w_r, source }
        }
        EnsembleSpec::File { path, reward_weights } => {
            let ensemble = load_ensemble(path)?;
            let source =
                TrajectorySource::GaussianSurrogate(GaussianSurrogate::new(&ensemble, reward_weights.clone())?);
            Setup { ensemble, w_r: reward_weights.clone(), source }
        }
    })
}

/// Shaping potential weights `w_φ` for the configured mode.
pub fn shaping_vector(spec: &ShapingSpec, problem: &TheoryProblem<'_>) -> Result<Option<Vec<f64>>, CliError> {
    match *spec {
        ShapingSpec::None => Ok(None),
        ShapingSpec::Scale { beta } => Ok(Some(problem.w_td.iter().map(|w| beta * w).collect())),
        ShapingSpec::Rotate { theta } => {
            let w = &problem.w_td;
            let norm = linalg::norm(w);
            if norm == 0.0 {
                return Err(CliError::config("rotation shaping needs a nonzero TD fixed point"));
            }
            let (_, vecs) = linalg::sym_eigen(problem.reduced.sigma_bar.as_ref())?;
            let n = w.len();
            let top: Vec<f64> = (0..n).map(|i| vecs[(i, n - 1)]).collect();
            let u1: Vec<f64> = w.iter().map(|x| x / norm).collect();
            let sign = if linalg::dot(&top, &u1) < 0.0 { -1.0 } else { 1.0 };
            let e: Vec<f64> = top.iter().map(|x| sign * x).collect();
            let along = linalg::dot(&e, &u1);
            let perp: Vec<f64> = e.iter().zip(&u1).map(|(a, b)| a - along * b).collect();
            let pn = linalg::norm(&perp);
            if pn < 1e-12 {
                return Ok(Some(vec![0.0; n]));
            }
            let u2: Vec<f64> = perp.iter().map(|x| x / pn).collect();
            let angle = theta * pn.atan2(along);
            let (s, c) = angle.sin_cos();
            Ok(Some((0..n).map(|i| norm * (c * u1[i] + s * u2[i]) - w[i]).collect()))
        }
    }
}

pub fn learner_config(cfg: &ExperimentConfig, problem: &TheoryProblem<'_>) -> Result<LearnerConfig, CliError> {
    let l = &cfg.learner;
    let mut c = LearnerConfig::new(l.gamma, l.batch, l.n_steps, EtaSchedule { eta0: l.eta0, chi: l.chi });
    if l.infinite_batch {
        c.batch = BatchSize::Infinite;
    }
    c.w0 = match l.w0 {
        W0Policy::Zero => None,
        W0Policy::Target => Some(problem.w_td.clone()),
    };
    c.shaping = shaping_vector(&l.shaping, problem)?;
    c.action_noise = l.action_noise.map(|s| vec![s; problem.horizon()]);
    Ok(c)
}

#[derive(Debug)]
pub struct RunResult {
    pub curves: Vec<LearningCurve>,
    pub w_td: Vec<f64>,
    pub shaping: Option<Vec<f64>>,
}

fn nongauss_model(cfg: &ExperimentConfig, setup: &Setup) -> Result<FourthMomentModel, CliError> {
    Ok(match (cfg.nongauss.model, cfg.nongauss.explicit_tensor) {
        (NongaussModel::Wick, false) => FourthMomentModel::GaussianWick,
        (NongaussModel::Hypercube, false) => FourthMomentModel::HypercubeIid,
        (NongaussModel::Wick, true) => {
            FourthMomentModel::ExplicitTensor(FourthMomentTensor::gaussian(&setup.ensemble)?)
        }
        (NongaussModel::Hypercube, true) => FourthMomentModel::ExplicitTensor(FourthMomentTensor::hypercube(
            setup.ensemble.dim(),
            setup.ensemble.horizon(),
        )?),
    })
}

/// Seeds of one simulation variant; streams never depend on other variants.
pub fn variant_seeds(master: u64, variant: Variant, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| derive_seed(master, variant.name(), i)).collect()
}

fn simulate(
    variant: Variant,
    config: &LearnerConfig,
    source: &TrajectorySource,
    target: &ValueTarget<'_>,
    seeds: &[u64],
) -> Result<LearningCurve, CliError> {
    let chunk = seeds.len().div_ceil(rayon::current_num_threads().max(1)).max(1);
    let parts = seeds
        .par_chunks(chunk)
        .map(|s| run_td_variant(variant, config, source, target, s))
        .collect::<tdmf_core::Result<Vec<_>>>()?;
    let traces = parts.into_iter().flat_map(|c| c.traces).collect();
    Ok(LearningCurve::from_traces(variant, eta_trace(&config.schedule, config.n_steps)?, traces))
}

pub fn run_variants(cfg: &ExperimentConfig, setup: &Setup, variants: &[Variant]) -> Result<RunResult, CliError> {
    let problem = TheoryProblem::new(&setup.ensemble, setup.w_r.clone(), cfg.learner.gamma)?;
    let config = learner_config(cfg, &problem)?;
    let target = ValueTarget { reduced: &problem.reduced, w_td: &problem.w_td };
    let opts = CurveOptions::default();
    let mut curves = Vec::with_capacity(variants.len());
    for &v in variants {
        let curve = match v {
            Variant::Sim => {
                simulate(v, &config, &setup.source, &target, &variant_seeds(cfg.master_seed, v, cfg.learner.seeds))?
            }
            Variant::Surrogate => {
                let source =
                    TrajectorySource::GaussianSurrogate(GaussianSurrogate::new(&setup.ensemble, setup.w_r.clone())?);
                simulate(v, &config, &source, &target, &variant_seeds(cfg.master_seed, v, cfg.learner.seeds))?
            }
            Variant::Dmft => dmft_curve(&problem, &config, &opts)?.curve,
            Variant::Direct => direct_recurrence_curve(&problem, &config, &opts)?.curve,
            Variant::Nongauss => nongaussian_curve(&nongauss_model(cfg, setup)?, &problem, &config, &opts)?.curve,
            Variant::Closedform => {
                let etas = eta_trace(&config.schedule, config.n_steps)?;
                let values = (0..=config.n_steps)
                    .map(|n| hypercube_closed_form(problem.dim(), cfg.learner.batch, cfg.learner.eta0, n).0)
                    .collect();
                LearningCurve::deterministic(v, etas, values, Vec::new())
            }
        };
        curves.push(curve);
    }
    Ok(RunResult { curves, w_td: problem.w_td.clone(), shaping: config.shaping.clone() })
}

#[derive(Serialize)]
struct VariantMeta {
    variant: Variant,
    file: String,
    seeds: Vec<u64>,
    diverged_seeds: Vec<u64>,
    diverged: bool,
    initial_value_error: f64,
    final_value_error: Option<f64>,
    late_slope: Option<f64>,
}

fn base_meta(cfg: &ExperimentConfig, command: &str, setup: &Setup) -> serde_json::Map<String, serde_json::Value> {
    let mut m = serde_json::Map::new();
    m.insert("format".into(), json!("tdmf-run"));
    m.insert("version".into(), json!(1));
    m.insert("name".into(), json!(cfg.name));
    m.insert("command".into(), json!(command));
    m.insert("tool_version".into(), json!(concat!("tdmf ", env!("CARGO_PKG_VERSION"))));
    m.insert("master_seed".into(), json!(cfg.master_seed));
    m.insert("n".into(), json!(setup.ensemble.dim()));
    m.insert("horizon".into(), json!(setup.ensemble.horizon()));
    m.insert("representation".into(), json!(setup.ensemble.representation()));
    m.insert("config".into(), serde_json::to_value(cfg).unwrap_or_default());
    m
}

pub fn write_run(
    dir: &Path,
    cfg: &ExperimentConfig,
    command: Command,
    setup: &Setup,
    result: &RunResult,
) -> Result<(), CliError> {
    let mut variants = Vec::new();
    for c in &result.curves {
        let file = format!("curve_{}.csv", c.variant);
        write_atomic(&dir.join(&file), curve_csv(c).as_bytes())?;
        let alive_to_end = c.traces.iter().all(|t| t.diverged_at.is_none());
        variants.push(VariantMeta {
            variant: c.variant,
            file,
            seeds: c.traces.iter().filter_map(|t| t.seed).collect(),
            diverged_seeds: c.diverged_seeds(),
            diverged: !alive_to_end,
            initial_value_error: c.mean[0],
            final_value_error: alive_to_end.then(|| *c.mean.last().expect("non-empty curve")),
            late_slope: late_slope(c, cfg.output.fit_window),
        });
    }
    write_atomic(&dir.join("aggregate.csv"), aggregate_csv(&result.curves).as_bytes())?;
    let mut meta = base_meta(cfg, command.name(), setup);
    meta.insert("w_td_norm".into(), json!(linalg::norm(&result.w_td)));
    meta.insert("shaping_norm".into(), json!(result.shaping.as_deref().map(linalg::norm)));
    meta.insert("variants".into(), serde_json::to_value(variants).unwrap_or_default());
    meta.insert("aggregate".into(), json!("aggregate.csv"));
    write_json(&dir.join("meta.json"), &meta)
}

/// Headline number of one sub-run for the sweep summary.
#[derive(Clone, Debug, Serialize)]
pub struct Headline {
    pub variant: String,
    pub value: Option<f64>,
    pub slope: Option<f64>,
}

pub fn run_single(cfg: &ExperimentConfig, command: Command, dir: &Path) -> Result<Vec<Headline>, CliError> {
    let setup = build_setup(cfg)?;
    match command {
        Command::Spectral => {
            let problem = TheoryProblem::new(&setup.ensemble, setup.w_r.clone(), cfg.learner.gamma)?;
            let report = spectral_report(&problem.reduced.a, &problem.w_td, cfg.learner.eta0)?;
            write_atomic(&dir.join("spectral.csv"), report.to_csv().as_bytes())?;
            let mut meta = base_meta(cfg, command.name(), &setup);
            meta.insert("eta".into(), json!(report.eta));
            meta.insert("eigenvector_condition".into(), json!(report.eigenvector_condition));
            meta.insert("conjugate_pair_defect".into(), json!(report.conjugate_pair_defect()));
            meta.insert("spectral".into(), json!("spectral.csv"));
            write_json(&dir.join("meta.json"), &meta)?;
            Ok(vec![Headline {
                variant: "spectral".into(),
                value: report.cumulative_power.first().copied(),
                slope: None,
            }])
        }
        Command::FixedPoint => {
            let problem = TheoryProblem::new(&setup.ensemble, setup.w_r.clone(), cfg.learner.gamma)?;
            let batch =
                if cfg.learner.infinite_batch { BatchSize::Infinite } else { BatchSize::Finite(cfg.learner.batch) };
            let fp = fixed_point_plateau(&problem, cfg.learner.eta0, batch)?;
            write_json(
                &dir.join("fixed_point.json"),
                &json!({
                    "loss": fp.loss,
                    "iterations": fp.iterations,
                    "eta": fp.eta,
                    "batch": fp.batch,
                    "gamma": cfg.learner.gamma,
                }),
            )?;
            let mut meta = base_meta(cfg, command.name(), &setup);
            meta.insert("fixed_point".into(), json!("fixed_point.json"));
            write_json(&dir.join("meta.json"), &meta)?;
            Ok(vec![Headline { variant: "fixedpoint".into(), value: Some(fp.loss), slope: None }])
        }
        _ => {
            let variants = command.variants(cfg);
            let result = run_variants(cfg, &setup, &variants)?;
            write_run(dir, cfg, command, &setup, &result)?;
            Ok(result
                .curves
                .iter()
                .map(|c| {
                    let alive = c.traces.iter().all(|t| t.diverged_at.is_none());
                    Headline {
                        variant: c.variant.name().into(),
                        value: alive.then(|| *c.mean.last().expect("non-empty curve")),
                        slope: late_slope(c, cfg.output.fit_window),
                    }
                })
                .collect())
        }
    }
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One sub-run per sweep value in `dir/sweep_NNN`, then `summary.csv`
/// (`sweep_value,plateau_or_final_loss,fit_slope,variant,status`).
pub fn run_sweep(cfg: &ExperimentConfig, command: Command, dir: &Path) -> Result<(), CliError> {
    let sweep = cfg.sweep.clone().ok_or_else(|| CliError::config("sweep needs a [sweep] block"))?;
    let mut base = cfg.clone();
    base.sweep = None;
    let outcomes: Vec<(String, Result<Vec<Headline>, CliError>)> = sweep
        .values
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let label = value_label(v);
            let sub = dir.join(format!("sweep_{i:03}"));
            let res = base.with_value(&sweep.parameter, v.clone()).and_then(|c| {
                write_atomic(&sub.join("config.toml"), c.to_toml().as_bytes())?;
                run_single(&c, command, &sub)
            });
            (label, res)
        })
        .collect();

    let mut csv = String::from("sweep_value,plateau_or_final_loss,fit_slope,variant,status\n");
    let mut series: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut failed = 0;
    let mut points = Vec::new();
    for (i, (label, res)) in outcomes.iter().enumerate() {
        match res {
            Ok(heads) => {
                for h in heads {
                    csv.push_str(&format!("{label},{},{},{},ok\n", fmt_opt(h.value), fmt_opt(h.slope), h.variant));
                    if let (Ok(x), Some(y)) = (label.parse::<f64>(), h.value) {
                        let e = series.entry(h.variant.clone()).or_default();
                        e.0.push(x);
                        e.1.push(y);
                    }
                }
                points.push(json!({ "index": i, "value": label, "dir": format!("sweep_{i:03}"), "status": "ok" }));
            }
            Err(e) => {
                failed += 1;
                let msg = e.to_string().replace([',', '\n'], ";");
                csv.push_str(&format!("{label},,,,error: {msg}\n"));
                points.push(json!({ "index": i, "value": label, "dir": format!("sweep_{i:03}"), "status": "error", "error": e.to_string() }));
            }
        }
    }
    write_atomic(&dir.join("summary.csv"), csv.as_bytes())?;
    let slopes: BTreeMap<String, Option<f64>> =
        series.iter().map(|(k, (x, y))| (k.clone(), loglog_slope(x, y))).collect();
    write_json(
        &dir.join("meta.json"),
        &json!({
            "format": "tdmf-sweep",
            "version": 1,
            "name": cfg.name,
            "command": command.name(),
            "tool_version": concat!("tdmf ", env!("CARGO_PKG_VERSION")),
            "parameter": sweep.parameter,
            "points": points,
            "summary": "summary.csv",
            "sweep_slope": slopes,
            "config": serde_json::to_value(cfg).unwrap_or_default(),
        }),
    )?;
    if failed > 0 {
        return Err(CliError::PartialSweep { failed, total: outcomes.len() });
    }
    Ok(())
}

/// Writes the resolved configuration to `dir/config.toml`, then runs a
/// sweep when the config has a `[sweep]` block and a single run otherwise.
pub fn run_experiment(cfg: &ExperimentConfig, command: Command, dir: &Path) -> Result<(), CliError> {
    write_atomic(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    if cfg.sweep.is_some() {
        run_sweep(cfg, command, dir)
    } else {
        run_single(cfg, command, dir).map(|_| ())
    }
}
