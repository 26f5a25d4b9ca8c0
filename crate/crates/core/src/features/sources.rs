//! Trajectory sources and the episode representation consumed by the TD step.

use std::sync::Arc;

use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{FeatureEnsemble, GridWorld, SampledMoments, SecondMoment};
use crate::error::{check_len, config, numerical, Result};
use crate::{linalg, rng};

/// Features of one sampled episode, `T + 1` vectors of length `N`.
#[derive(Clone, Debug)]
pub enum EpisodeFeatures {
    /// Row `t` is `ψ(t)`.
    Dense(Mat<f64>),
    /// `ψ(t)` is row `states[t]` of a shared state -> feature table.
    Indexed { table: Arc<Mat<f64>>, states: Vec<u32> },
    /// `ψ(t) = offset · μ(t) + Σ_i coeffs[i] · ψ(s_t^i)` over the paths of a
    /// sampled ensemble.
    Mixture { moments: Arc<SampledMoments>, mean: Arc<Mat<f64>>, offset: f64, coeffs: Vec<f64> },
}

#[derive(Clone, Debug)]
pub struct Episode {
    pub features: EpisodeFeatures,
    pub rewards: Vec<f64>,
}

impl Episode {
    pub fn times(&self) -> usize {
        self.rewards.len()
    }

    pub fn dim(&self) -> usize {
        match &self.features {
            EpisodeFeatures::Dense(m) => m.ncols(),
            EpisodeFeatures::Indexed { table, .. } => table.ncols(),
            EpisodeFeatures::Mixture { mean, .. } => mean.ncols(),
        }
    }

    pub fn states(&self) -> Option<&[u32]> {
        match &self.features {
            EpisodeFeatures::Indexed { states, .. } => Some(states),
            _ => None,
        }
    }

    pub fn feature(&self, t: usize) -> Vec<f64> {
        match &self.features {
            EpisodeFeatures::Dense(m) => (0..m.ncols()).map(|k| m[(t, k)]).collect(),
            EpisodeFeatures::Indexed { table, states } => {
                let s = states[t] as usize;
                (0..table.ncols()).map(|k| table[(s, k)]).collect()
            }
            EpisodeFeatures::Mixture { moments, mean, offset, coeffs } => {
                let table = moments.table();
                let mut out: Vec<f64> = (0..mean.ncols()).map(|k| offset * mean[(t, k)]).collect();
                for (&s, &c) in moments.states_at(t).iter().zip(coeffs) {
                    for (k, o) in out.iter_mut().enumerate() {
                        *o += c * table[(s as usize, k)];
                    }
                }
                out
            }
        }
    }

    pub fn to_dense(&self) -> Mat<f64> {
        if let EpisodeFeatures::Dense(m) = &self.features {
            return m.clone();
        }
        let rows: Vec<Vec<f64>> = (0..self.times()).map(|t| self.feature(t)).collect();
        Mat::from_fn(self.times(), self.dim(), |t, k| rows[t][k])
    }

    /// `V̂(t) = ψ(t) · w` for every time point.
    pub fn values(&self, proj: &mut Projector<'_>) -> Vec<f64> {
        match &self.features {
            EpisodeFeatures::Dense(m) => linalg::matvec(m.as_ref(), proj.w),
            EpisodeFeatures::Indexed { table, states } => {
                let u = proj.project(table);
                states.iter().map(|&s| u[s as usize]).collect()
            }
            EpisodeFeatures::Mixture { moments, mean, offset, coeffs } => {
                let mw = proj.project_mean(mean).to_vec();
                let u = proj.project(moments.table());
                (0..mean.nrows())
                    .map(|t| {
                        let mut v = offset * mw[t];
                        for (&s, &c) in moments.states_at(t).iter().zip(coeffs) {
                            v += c * u[s as usize];
                        }
                        v
                    })
                    .collect()
            }
        }
    }

    /// Adds `Σ_t weights[t] · ψ(t)` (over `t < weights.len()`) into `acc`.
    pub fn accumulate(&self, weights: &[f64], acc: &mut Accumulator) {
        match &self.features {
            EpisodeFeatures::Dense(m) => {
                for (t, &d) in weights.iter().enumerate() {
                    for (k, o) in acc.dense.iter_mut().enumerate() {
                        *o += d * m[(t, k)];
                    }
                }
            }
            EpisodeFeatures::Indexed { table, states } => {
                let slot = acc.code_slot(table);
                for (&d, &s) in weights.iter().zip(states) {
                    slot[s as usize] += d;
                }
            }
            EpisodeFeatures::Mixture { moments, mean, offset, coeffs } => {
                for (t, &d) in weights.iter().enumerate() {
                    let c = d * offset;
                    for (k, o) in acc.dense.iter_mut().enumerate() {
                        *o += c * mean[(t, k)];
                    }
                }
                let slot = acc.code_slot(moments.table());
                for (t, &d) in weights.iter().enumerate() {
                    for (&s, &c) in moments.states_at(t).iter().zip(coeffs) {
                        slot[s as usize] += d * c;
                    }
                }
            }
        }
    }
}

fn key<T>(a: &Arc<T>) -> usize {
    Arc::as_ptr(a) as *const u8 as usize
}

/// Caches `table · w` per shared table for the duration of one TD step.
pub struct Projector<'a> {
    w: &'a [f64],
    tables: Vec<(usize, Vec<f64>)>,
    means: Vec<(usize, Vec<f64>)>,
}

impl<'a> Projector<'a> {
    pub fn new(w: &'a [f64]) -> Self {
        Projector { w, tables: Vec::new(), means: Vec::new() }
    }

    fn project(&mut self, table: &Arc<Mat<f64>>) -> &[f64] {
        let k = key(table);
        if let Some(i) = self.tables.iter().position(|(p, _)| *p == k) {
            return &self.tables[i].1;
        }
        self.tables.push((k, linalg::matvec(table.as_ref().as_ref(), self.w)));
        &self.tables.last().expect("just pushed").1
    }

    fn project_mean(&mut self, mean: &Arc<Mat<f64>>) -> &[f64] {
        let k = key(mean);
        if let Some(i) = self.means.iter().position(|(p, _)| *p == k) {
            return &self.means[i].1;
        }
        self.means.push((k, linalg::matvec(mean.as_ref().as_ref(), self.w)));
        &self.means.last().expect("just pushed").1
    }
}

/// Accumulates feature-space sums, keeping table-backed episodes in state
/// space until [`finish`](Self::finish).
pub struct Accumulator {
    dense: Vec<f64>,
    coded: Vec<(Arc<Mat<f64>>, Vec<f64>)>,
}

impl Accumulator {
    pub fn new(n: usize) -> Self {
        Accumulator { dense: vec![0.0; n], coded: Vec::new() }
    }

    fn code_slot(&mut self, table: &Arc<Mat<f64>>) -> &mut Vec<f64> {
        let k = key(table);
        let i = match self.coded.iter().position(|(t, _)| key(t) == k) {
            Some(i) => i,
            None => {
                self.coded.push((table.clone(), vec![0.0; table.nrows()]));
                self.coded.len() - 1
            }
        };
        &mut self.coded[i].1
    }

    pub fn finish(self) -> Vec<f64> {
        let mut out = self.dense;
        for (table, code) in self.coded {
            let v = linalg::matvec_t(table.as_ref().as_ref(), &code);
            for (o, x) in out.iter_mut().zip(v) {
                *o += x;
            }
        }
        out
    }
}

/// Stationary AR(1) modes with variance `k^{−a}` and lag correlation
/// `exp(−1/τ_k)`, `τ_k = 10/(k + 1)`.
#[derive(Clone, Debug)]
pub struct PowerLawProcess {
    horizon: usize,
    std: Vec<f64>,
    rho: Vec<f64>,
    reward_weights: Vec<f64>,
}

impl PowerLawProcess {
    pub fn new(n: usize, horizon: usize, a: f64, b: f64) -> Result<Self> {
        if n == 0 || horizon == 0 {
            return config("power-law process needs N >= 1 and T >= 1");
        }
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return config(format!("power-law exponents must be positive, got a={a}, b={b}"));
        }
        let modes = (1..=n).map(|k| k as f64);
        Ok(PowerLawProcess {
            horizon,
            std: modes.clone().map(|k| k.powf(-a).sqrt()).collect(),
            rho: modes.clone().map(|k| (-(k + 1.0) / 10.0).exp()).collect(),
            reward_weights: modes.map(|k| k.powf(-b)).collect(),
        })
    }

    pub fn reward_weights(&self) -> &[f64] {
        &self.reward_weights
    }
}

#[derive(Clone, Debug)]
pub struct HypercubeProcess {
    n: usize,
    horizon: usize,
    reward_weights: Vec<f64>,
}

impl HypercubeProcess {
    pub fn new(n: usize, horizon: usize, reward_weights: Vec<f64>) -> Result<Self> {
        if n == 0 || horizon == 0 {
            return config("hypercube process needs N >= 1 and T >= 1");
        }
        check_len("hypercube reward weights", reward_weights.len(), n)?;
        Ok(HypercubeProcess { n, horizon, reward_weights })
    }
}

/// Uniform draw from a fixed list of episodes.
#[derive(Clone, Debug)]
pub struct FiniteSource {
    episodes: Vec<Episode>,
}

impl FiniteSource {
    pub fn new(episodes: Vec<(Mat<f64>, Vec<f64>)>) -> Result<Self> {
        let Some((first, _)) = episodes.first() else {
            return config("finite source needs at least one episode");
        };
        let (times, n) = (first.nrows(), first.ncols());
        if times < 2 {
            return config("episodes need at least two time points");
        }
        let mut out = Vec::with_capacity(episodes.len());
        for (f, r) in episodes {
            if f.nrows() != times || f.ncols() != n {
                return config("finite source episodes must share one shape");
            }
            check_len("episode rewards", r.len(), times)?;
            out.push(Episode { features: EpisodeFeatures::Dense(f), rewards: r });
        }
        Ok(FiniteSource { episodes: out })
    }
}

#[derive(Clone, Debug)]
enum SurrogateLaw {
    /// Independent zero-mean modes; `x_k = L_k g`.
    Modes(Vec<Mat<f64>>),
    /// Joint law over the time-major flattening `a = t·N + k`: `x = μ + F g`.
    Joint { mean: Vec<f64>, factor: Mat<f64> },
    /// `ψ = μ + n^{−1/2} Σ_i g_i (ψ^i − μ)` over the stored paths.
    Mixture { moments: Arc<SampledMoments>, mean: Arc<Mat<f64>> },
}

/// Jointly Gaussian features whose mean is `μ` and whose raw second moment
/// is the ensemble's `Σ` (covariance `Σ − μμᵀ`).
#[derive(Clone, Debug)]
pub struct GaussianSurrogate {
    n: usize,
    horizon: usize,
    reward_weights: Vec<f64>,
    law: SurrogateLaw,
}

const FACTOR_TOL: f64 = 1e-10;

fn psd_factor(cov: &Mat<f64>, what: impl Fn(usize) -> String) -> Result<Mat<f64>> {
    let (vals, vecs) = linalg::sym_eigen(cov.as_ref())?;
    let scale = vals.iter().map(|v| v.abs()).fold(1.0, f64::max);
    for (i, &v) in vals.iter().enumerate() {
        if v < -FACTOR_TOL * scale {
            let dominant =
                (0..vecs.nrows()).max_by(|&a, &b| vecs[(a, i)].abs().total_cmp(&vecs[(b, i)].abs())).unwrap_or(0);
            return numerical(format!("covariance is not PSD: eigenvalue {v:e} in {}", what(dominant)));
        }
    }
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 0.0).collect();
    Ok(Mat::from_fn(cov.nrows(), keep.len(), |r, c| vecs[(r, keep[c])] * vals[keep[c]].sqrt()))
}

impl GaussianSurrogate {
    pub fn new(ensemble: &FeatureEnsemble, reward_weights: Vec<f64>) -> Result<Self> {
        let n = ensemble.dim();
        let times = ensemble.times();
        check_len("surrogate reward weights", reward_weights.len(), n)?;
        let mean = ensemble.mean();
        let zero_mean = (0..times).all(|t| (0..n).all(|k| mean[(t, k)] == 0.0));
        let law = match ensemble.second() {
            SecondMoment::Sampled(s) => {
                SurrogateLaw::Mixture { moments: Arc::new(s.clone()), mean: Arc::new(mean.clone()) }
            }
            SecondMoment::Decoupled(_) if zero_mean => {
                let mut factors = Vec::with_capacity(n);
                for k in 0..n {
                    let cov = Mat::from_fn(times, times, |x, y| ensemble.kernel(k, x, y).unwrap_or(0.0));
                    factors.push(psd_factor(&cov, |_| format!("mode {k}"))?);
                }
                SurrogateLaw::Modes(factors)
            }
            _ => {
                let d = times * n;
                let mut cov = Mat::zeros(d, d);
                for x in 0..times {
                    for y in 0..times {
                        let b = ensemble.block(x, y);
                        for i in 0..n {
                            for j in 0..n {
                                cov[(x * n + i, y * n + j)] = b[(i, j)] - mean[(x, i)] * mean[(y, j)];
                            }
                        }
                    }
                }
                linalg::symmetrize(&mut cov);
                let factor = psd_factor(&cov, |a| format!("block Σ({0},{0}), feature {1}", a / n, a % n))?;
                let flat = (0..d).map(|a| mean[(a / n, a % n)]).collect();
                SurrogateLaw::Joint { mean: flat, factor }
            }
        };
        Ok(GaussianSurrogate { n, horizon: ensemble.horizon(), reward_weights, law })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> EpisodeFeatures {
        let times = self.horizon + 1;
        match &self.law {
            SurrogateLaw::Modes(factors) => {
                let mut m = Mat::zeros(times, self.n);
                for (k, l) in factors.iter().enumerate() {
                    let g: Vec<f64> = (0..l.ncols()).map(|_| rng.sample(StandardNormal)).collect();
                    let x = linalg::matvec(l.as_ref(), &g);
                    for t in 0..times {
                        m[(t, k)] = x[t];
                    }
                }
                EpisodeFeatures::Dense(m)
            }
            SurrogateLaw::Joint { mean, factor } => {
                let g: Vec<f64> = (0..factor.ncols()).map(|_| rng.sample(StandardNormal)).collect();
                let x = linalg::matvec(factor.as_ref(), &g);
                EpisodeFeatures::Dense(Mat::from_fn(times, self.n, |t, k| mean[t * self.n + k] + x[t * self.n + k]))
            }
            SurrogateLaw::Mixture { moments, mean } => {
                let scale = 1.0 / (moments.n_paths() as f64).sqrt();
                let coeffs: Vec<f64> =
                    (0..moments.n_paths()).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
                let offset = 1.0 - coeffs.iter().sum::<f64>();
                EpisodeFeatures::Mixture { moments: moments.clone(), mean: mean.clone(), offset, coeffs }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum TrajectorySource {
    GridDiffusion(GridWorld),
    GaussianSurrogate(GaussianSurrogate),
    PowerLawOu(PowerLawProcess),
    HypercubeIid(HypercubeProcess),
    Finite(FiniteSource),
}

fn linear_rewards(features: &EpisodeFeatures, w: &[f64], times: usize) -> Vec<f64> {
    let ep = Episode { features: features.clone(), rewards: vec![0.0; times] };
    ep.values(&mut Projector::new(w))
}

impl TrajectorySource {
    pub fn dim(&self) -> usize {
        match self {
            TrajectorySource::GridDiffusion(g) => g.dim(),
            TrajectorySource::GaussianSurrogate(s) => s.n,
            TrajectorySource::PowerLawOu(p) => p.std.len(),
            TrajectorySource::HypercubeIid(h) => h.n,
            TrajectorySource::Finite(f) => f.episodes[0].dim(),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            TrajectorySource::GridDiffusion(g) => g.spec().horizon,
            TrajectorySource::GaussianSurrogate(s) => s.horizon,
            TrajectorySource::PowerLawOu(p) => p.horizon,
            TrajectorySource::HypercubeIid(h) => h.horizon,
            TrajectorySource::Finite(f) => f.episodes[0].times() - 1,
        }
    }

    pub fn sample_episode<R: Rng + ?Sized>(&self, rng: &mut R) -> Episode {
        let times = self.horizon() + 1;
        match self {
            TrajectorySource::GridDiffusion(g) => {
                let states = g.sample_path(rng);
                let rewards = states.iter().map(|&s| g.spec().reward[s as usize]).collect();
                Episode { features: EpisodeFeatures::Indexed { table: g.table().clone(), states }, rewards }
            }
            TrajectorySource::GaussianSurrogate(s) => {
                let features = s.sample(rng);
                let rewards = linear_rewards(&features, &s.reward_weights, times);
                Episode { features, rewards }
            }
            TrajectorySource::PowerLawOu(p) => {
                let n = p.std.len();
                let mut m = Mat::zeros(times, n);
                for k in 0..n {
                    let (sd, rho) = (p.std[k], p.rho[k]);
                    let innov = sd * (1.0 - rho * rho).sqrt();
                    let mut x = sd * rng.sample::<f64, _>(StandardNormal);
                    m[(0, k)] = x;
                    for t in 1..times {
                        x = rho * x + innov * rng.sample::<f64, _>(StandardNormal);
                        m[(t, k)] = x;
                    }
                }
                let features = EpisodeFeatures::Dense(m);
                let rewards = linear_rewards(&features, &p.reward_weights, times);
                Episode { features, rewards }
            }
            TrajectorySource::HypercubeIid(h) => {
                let m = Mat::from_fn(times, h.n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
                let features = EpisodeFeatures::Dense(m);
                let rewards = linear_rewards(&features, &h.reward_weights, times);
                Episode { features, rewards }
            }
            TrajectorySource::Finite(f) => f.episodes[rng.random_range(0..f.episodes.len())].clone(),
        }
    }
}

/// Empirical moments from `n_traj` sampled episodes. Grid sources keep the
/// sampled state paths (see [`SampledMoments`]); all others are densified.
pub fn estimate_ensemble(source: &TrajectorySource, n_traj: usize, seed: u64) -> Result<FeatureEnsemble> {
    if n_traj == 0 {
        return config("estimate_ensemble needs at least one trajectory");
    }
    let mut rng = rng::stream(seed);
    let times = source.horizon() + 1;
    if let TrajectorySource::GridDiffusion(g) = source {
        let mut paths = vec![0u32; times * n_traj];
        for i in 0..n_traj {
            for (t, s) in g.sample_path(&mut rng).into_iter().enumerate() {
                paths[t * n_traj + i] = s;
            }
        }
        return FeatureEnsemble::sampled(SampledMoments::new(g.table().clone(), paths, n_traj)?);
    }
    let n = source.dim();
    let d = times * n;
    let mut gram = Mat::<f64>::zeros(d, d);
    let mut sum = vec![0.0; d];
    const CHUNK: usize = 256;
    let mut done = 0;
    while done < n_traj {
        let rows = CHUNK.min(n_traj - done);
        let mut x = Mat::<f64>::zeros(rows, d);
        for r in 0..rows {
            let f = source.sample_episode(&mut rng).to_dense();
            for t in 0..times {
                for k in 0..n {
                    x[(r, t * n + k)] = f[(t, k)];
                    sum[t * n + k] += f[(t, k)];
                }
            }
        }
        gram += x.transpose() * &x;
        done += rows;
    }
    let inv = 1.0 / n_traj as f64;
    linalg::symmetrize(&mut gram);
    let mean = Mat::from_fn(times, n, |t, k| sum[t * n + k] * inv);
    let blocks = (0..times * times)
        .map(|r| {
            let (x, y) = (r / times, r % times);
            Mat::from_fn(n, n, |i, j| gram[(x * n + i, y * n + j)] * inv)
        })
        .collect();
    FeatureEnsemble::dense(mean, blocks)
}
