//! Stochastic batched online TD(0).

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, config, Result};
use crate::features::Projector;
use crate::features::{Accumulator, Episode, ReducedMatrices, TrajectorySource};
use crate::{linalg, rng};

/// Runs whose value error exceeds this are stopped and flagged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// `η_n = η₀ n^{−χ}` for iterations `n ≥ 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaSchedule {
    pub eta0: f64,
    #[serde(default)]
    pub chi: f64,
}

impl EtaSchedule {
    pub fn constant(eta0: f64) -> Self {
        EtaSchedule { eta0, chi: 0.0 }
    }

    pub fn eta_at(&self, n: usize) -> Result<f64> {
        if n == 0 {
            return config("learning-rate schedule is indexed from n = 1");
        }
        Ok(self.eta0 * (n as f64).powf(-self.chi))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 >= 0.0 && self.eta0.is_finite()) {
            return config(format!("eta0 must be non-negative, got {}", self.eta0));
        }
        if !(self.chi >= 0.0 && self.chi.is_finite()) {
            return config(format!("chi must be non-negative, got {}", self.chi));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchSize {
    Finite(usize),
    /// Noise-free limit; only meaningful for the theory curves.
    Infinite,
}

impl BatchSize {
    pub fn as_f64(&self) -> f64 {
        match self {
            BatchSize::Finite(b) => *b as f64,
            BatchSize::Infinite => f64::INFINITY,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub batch: BatchSize,
    pub n_steps: usize,
    pub schedule: EtaSchedule,
    /// Initial weights; zero when `None`.
    pub w0: Option<Vec<f64>>,
    /// Potential weights `w_φ` for reward shaping `φ(s) = ψ(s)·w_φ`.
    pub shaping: Option<Vec<f64>>,
    /// Per-transition reward noise variances `σ_t²`, length `T`.
    pub action_noise: Option<Vec<f64>>,
}

impl LearnerConfig {
    pub fn new(gamma: f64, batch: usize, n_steps: usize, schedule: EtaSchedule) -> Self {
        LearnerConfig {
            gamma,
            batch: BatchSize::Finite(batch),
            n_steps,
            schedule,
            w0: None,
            shaping: None,
            action_noise: None,
        }
    }

    pub fn validate(&self, n: usize, horizon: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return config(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if self.batch == BatchSize::Finite(0) {
            return config("batch size must be at least 1");
        }
        self.schedule.validate()?;
        if let Some(w0) = &self.w0 {
            check_len("w0", w0.len(), n)?;
        }
        if let Some(p) = &self.shaping {
            check_len("shaping weights", p.len(), n)?;
        }
        if let Some(s) = &self.action_noise {
            check_len("action noise variances", s.len(), horizon)?;
            if s.iter().any(|v| !(*v >= 0.0)) {
                return config("action noise variances must be non-negative");
            }
        }
        Ok(())
    }

    pub fn initial_weights(&self, n: usize) -> Vec<f64> {
        self.w0.clone().unwrap_or_else(|| vec![0.0; n])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Sim,
    Surrogate,
    Dmft,
    Direct,
    Nongauss,
    Closedform,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::Sim, Variant::Surrogate, Variant::Dmft, Variant::Direct, Variant::Nongauss, Variant::Closedform];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Sim => "sim",
            Variant::Surrogate => "surrogate",
            Variant::Dmft => "dmft",
            Variant::Direct => "direct",
            Variant::Nongauss => "nongauss",
            Variant::Closedform => "closedform",
        }
    }

    pub fn is_simulation(&self) -> bool {
        matches!(self, Variant::Sim | Variant::Surrogate)
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct SeedTrace {
    pub seed: Option<u64>,
    /// `L_0 ..= L_n`; shorter than `n_steps + 1` only when diverged.
    pub values: Vec<f64>,
    pub diverged_at: Option<usize>,
    pub final_weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LearningCurve {
    pub variant: Variant,
    /// Step size that produced iterate `n`; entry 0 is 0.
    pub etas: Vec<f64>,
    pub traces: Vec<SeedTrace>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl LearningCurve {
    /// Aggregates traces; at each iteration only seeds still running count.
    pub fn from_traces(variant: Variant, etas: Vec<f64>, traces: Vec<SeedTrace>) -> Self {
        let len = etas.len();
        let mut mean = vec![f64::NAN; len];
        let mut stderr = vec![f64::NAN; len];
        for n in 0..len {
            let vals: Vec<f64> = traces.iter().filter_map(|t| t.values.get(n).copied()).collect();
            if vals.is_empty() {
                continue;
            }
            let k = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / k;
            mean[n] = m;
            stderr[n] = if vals.len() > 1 {
                (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
            } else {
                0.0
            };
        }
        LearningCurve { variant, etas, traces, mean, stderr }
    }

    pub fn deterministic(variant: Variant, etas: Vec<f64>, values: Vec<f64>, final_weights: Vec<f64>) -> Self {
        let trace = SeedTrace { seed: None, values, diverged_at: None, final_weights };
        LearningCurve::from_traces(variant, etas, vec![trace])
    }

    pub fn diverged_seeds(&self) -> Vec<u64> {
        self.traces.iter().filter(|t| t.diverged_at.is_some()).filter_map(|t| t.seed).collect()
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Step sizes for iterations `0..=n_steps`, with 0 at index 0.
pub fn eta_trace(schedule: &EtaSchedule, n_steps: usize) -> Result<Vec<f64>> {
    let mut etas = vec![0.0];
    for n in 1..=n_steps {
        etas.push(schedule.eta_at(n)?);
    }
    Ok(etas)
}

/// TD errors `Δ(t) = r(t) + γ V̂(t+1) − V̂(t)` for `t < T`.
fn td_errors(ep: &Episode, rewards: &[f64], proj: &mut Projector<'_>, gamma: f64) -> Vec<f64> {
    let v = ep.values(proj);
    (0..v.len() - 1).map(|t| rewards[t] + gamma * v[t + 1] - v[t]).collect()
}

/// One semi-gradient step `w′ = w + η/(TB) Σ_{μ,t} Δ^μ(t) ψ^μ(t)` using the
/// episodes' own rewards. Returns `w′` and the TD errors per episode.
pub fn td_update_step(w: &[f64], batch: &[Episode], eta: f64, gamma: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let rewards: Vec<&[f64]> = batch.iter().map(|e| e.rewards.as_slice()).collect();
    td_update_with_rewards(w, batch, &rewards, eta, gamma)
}

fn td_update_with_rewards(
    w: &[f64],
    batch: &[Episode],
    rewards: &[&[f64]],
    eta: f64,
    gamma: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if batch.is_empty() {
        return config("TD step needs at least one episode");
    }
    let times = batch[0].times();
    for ep in batch {
        check_len("episode feature dimension", ep.dim(), w.len())?;
        check_len("episode length", ep.times(), times)?;
    }
    let mut proj = Projector::new(w);
    let mut acc = Accumulator::new(w.len());
    let mut errors = Vec::with_capacity(batch.len());
    for (ep, r) in batch.iter().zip(rewards) {
        let d = td_errors(ep, r, &mut proj, gamma);
        ep.accumulate(&d, &mut acc);
        errors.push(d);
    }
    let scale = eta / ((times - 1) * batch.len()) as f64;
    let g = acc.finish();
    Ok((w.iter().zip(g).map(|(wi, gi)| wi + scale * gi).collect(), errors))
}

/// Potential-based shaping with `φ(t) = ψ(t)·w_φ`:
/// `r̃(0) = r(0) − γφ(1)` and `r̃(t) = r(t) + φ(t) − γφ(t+1)` for `0 < t < T`.
/// The entry at `t = T` is left unchanged (it never enters a TD error).
pub fn reshape_rewards(rewards: &[f64], potentials: &[f64], gamma: f64) -> Vec<f64> {
    let last = rewards.len() - 1;
    rewards
        .iter()
        .enumerate()
        .map(|(t, &r)| {
            if t == last {
                r
            } else if t == 0 {
                r - gamma * potentials[1]
            } else {
                r + potentials[t] - gamma * potentials[t + 1]
            }
        })
        .collect()
}

/// `(1/N)(w − w★)ᵀ Σ̄ (w − w★)`, plus `(1/T) Σ_t σ_t²` with action noise.
pub fn value_error(w: &[f64], reduced: &ReducedMatrices, w_star: &[f64], action_noise: Option<&[f64]>) -> f64 {
    let d = linalg::sub(w, w_star);
    let n = w.len() as f64;
    let reducible = linalg::quad(reduced.sigma_bar.as_ref(), &d, &d) / n;
    reducible + noise_floor(action_noise)
}

pub fn noise_floor(action_noise: Option<&[f64]>) -> f64 {
    action_noise.map_or(0.0, |s| s.iter().sum::<f64>() / s.len() as f64)
}

/// Measures value error against a target `w★` under `Σ̄`.
#[derive(Clone, Debug)]
pub struct ValueTarget<'a> {
    pub reduced: &'a ReducedMatrices,
    pub w_td: &'a [f64],
}

/// Runs TD independently per seed with fresh batches each iteration.
///
/// With shaping, rewards are reshaped before each step and the error is
/// measured against `w_TD + w_φ`.
pub fn run_td(
    config: &LearnerConfig,
    source: &TrajectorySource,
    target: &ValueTarget<'_>,
    seeds: &[u64],
) -> Result<LearningCurve> {
    run_td_variant(Variant::Sim, config, source, target, seeds)
}

pub fn run_td_variant(
    variant: Variant,
    config: &LearnerConfig,
    source: &TrajectorySource,
    target: &ValueTarget<'_>,
    seeds: &[u64],
) -> Result<LearningCurve> {
    let n = source.dim();
    let horizon = source.horizon();
    config.validate(n, horizon)?;
    check_len("w_TD", target.w_td.len(), n)?;
    if seeds.is_empty() {
        return crate::error::config("run_td needs at least one seed");
    }
    let BatchSize::Finite(b) = config.batch else {
        return crate::error::config("simulation needs a finite batch size");
    };
    let etas = eta_trace(&config.schedule, config.n_steps)?;
    let w_star = match &config.shaping {
        Some(p) => linalg::add(target.w_td, p),
        None => target.w_td.to_vec(),
    };
    let noise = config.action_noise.as_deref();
    let traces = seeds
        .iter()
        .map(|&seed| {
            let mut rng = rng::stream(seed);
            let mut w = config.initial_weights(n);
            let mut values = vec![value_error(&w, target.reduced, &w_star, noise)];
            let mut diverged_at = None;
            for (step, &eta) in etas.iter().enumerate().skip(1) {
                let batch: Vec<Episode> = (0..b).map(|_| source.sample_episode(&mut rng)).collect();
                let rewards: Vec<Vec<f64>> = batch.iter().map(|ep| episode_rewards(ep, config, &mut rng)).collect();
                let views: Vec<&[f64]> = rewards.iter().map(|r| r.as_slice()).collect();
                w = td_update_with_rewards(&w, &batch, &views, eta, config.gamma)?.0;
                let l = value_error(&w, target.reduced, &w_star, noise);
                if !(l <= DIVERGENCE_THRESHOLD) {
                    diverged_at = Some(step);
                    break;
                }
                values.push(l);
            }
            Ok(SeedTrace { seed: Some(seed), values, diverged_at, final_weights: w })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LearningCurve::from_traces(variant, etas, traces))
}

fn episode_rewards<R: Rng + ?Sized>(ep: &Episode, config: &LearnerConfig, rng: &mut R) -> Vec<f64> {
    let mut r = match &config.shaping {
        Some(wp) => {
            let phi = ep.values(&mut Projector::new(wp));
            reshape_rewards(&ep.rewards, &phi, config.gamma)
        }
        None => ep.rewards.clone(),
    };
    if let Some(s) = &config.action_noise {
        for (ri, v) in r.iter_mut().zip(s) {
            *ri += v.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
    }
    r
}

/// Average of `(V(s_t) − ψ(s_t)·w)²` over `t < T` of fresh grid episodes,
/// against exact tabular values `V`.
pub fn empirical_value_error<R: Rng + ?Sized>(
    w: &[f64],
    source: &TrajectorySource,
    values: &[f64],
    n_episodes: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for _ in 0..n_episodes {
        let ep = source.sample_episode(rng);
        let Some(states) = ep.states() else {
            return config("empirical evaluation needs a state-based source");
        };
        let v_hat = ep.values(&mut Projector::new(w));
        for t in 0..ep.times() - 1 {
            total += (values[states[t] as usize] - v_hat[t]).powi(2);
            count += 1;
        }
    }
    Ok(total / count.max(1) as f64)
}
