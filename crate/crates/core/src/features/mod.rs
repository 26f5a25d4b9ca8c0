//! Feature ensembles (first and second moments of episodic features),
//! trajectory sources, and the reduced matrices Σ̄, Σ̄₊, A.
//!
//! Second moments are stored non-centered: `Σ(x, y) = E[ψ(x) ψ(y)ᵀ]`.

mod grid;
mod io;
mod sources;

use std::sync::Arc;

use faer::{Mat, MatRef};

use crate::error::{check_len, config, Error, Result};
use crate::linalg;

pub use grid::{gaussian_reward, place_cell_features, sparse_reward, GridWorld, GridWorldSpec};
pub use io::{load_ensemble, save_ensemble};
pub use sources::{
    estimate_ensemble, Accumulator, Episode, EpisodeFeatures, FiniteSource, GaussianSurrogate, HypercubeProcess,
    PowerLawProcess, Projector, TrajectorySource,
};

/// Default number of sampled trajectories used by [`estimate_ensemble`].
pub const DEFAULT_ESTIMATION_TRAJECTORIES: usize = 5000;

/// Empirical moments kept as the visited-state paths of `n_paths` episodes
/// together with the state -> feature table. `Σ(x, y)` is the average of
/// `ψ(s_x) ψ(s_y)ᵀ` over paths and is never materialized.
#[derive(Clone, Debug)]
pub struct SampledMoments {
    table: Arc<Mat<f64>>,
    /// Time-major: the state of path `i` at time `t` is `paths[t * n_paths + i]`.
    paths: Vec<u32>,
    n_paths: usize,
}

impl SampledMoments {
    pub fn new(table: Arc<Mat<f64>>, paths: Vec<u32>, n_paths: usize) -> Result<Self> {
        if n_paths == 0 || !paths.len().is_multiple_of(n_paths) {
            return config("sampled moments need a whole number of paths");
        }
        let s = table.nrows() as u32;
        if paths.iter().any(|&p| p >= s) {
            return config("sampled path refers to a state outside the feature table");
        }
        Ok(SampledMoments { table, paths, n_paths })
    }

    pub fn table(&self) -> &Arc<Mat<f64>> {
        &self.table
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn times(&self) -> usize {
        self.paths.len() / self.n_paths
    }

    pub fn states_at(&self, t: usize) -> &[u32] {
        &self.paths[t * self.n_paths..(t + 1) * self.n_paths]
    }

    pub fn paths(&self) -> &[u32] {
        &self.paths
    }

    /// `X[i, t] = u[s_t^i]` for a state-space vector `u`.
    fn gather(&self, u: &[f64]) -> Mat<f64> {
        let times = self.times();
        let mut x = Mat::zeros(self.n_paths, times);
        for t in 0..times {
            let states = self.states_at(t);
            let col = x.col_mut(t);
            let col = col.try_as_col_major_mut().expect("owned column is contiguous").as_slice_mut();
            for (c, &s) in col.iter_mut().zip(states) {
                *c = u[s as usize];
            }
        }
        x
    }

    /// Empirical state occupation `p̂_t(s)`.
    pub fn occupation(&self, t: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.table.nrows()];
        let w = 1.0 / self.n_paths as f64;
        for &s in self.states_at(t) {
            p[s as usize] += w;
        }
        p
    }
}

#[derive(Clone, Debug)]
pub enum SecondMoment {
    /// Blocks `Σ(x, y)` at index `x * (T + 1) + y`.
    Dense(Vec<Mat<f64>>),
    /// `Σ_kl(x, y) = δ_kl c_k(x, y)`; column `k` holds `c_k` at row `x * (T + 1) + y`.
    Decoupled(Mat<f64>),
    Sampled(SampledMoments),
}

#[derive(Clone, Debug)]
pub struct FeatureEnsemble {
    n: usize,
    horizon: usize,
    mean: Mat<f64>,
    second: SecondMoment,
}

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;

impl FeatureEnsemble {
    /// Dense ensemble from `(T + 1)²` blocks in row-major `(x, y)` order.
    pub fn dense(mean: Mat<f64>, blocks: Vec<Mat<f64>>) -> Result<Self> {
        let times = mean.nrows();
        let n = mean.ncols();
        if times < 2 || n == 0 {
            return config("dense ensemble needs N >= 1 and at least two time points");
        }
        check_len("dense blocks", blocks.len(), times * times)?;
        for b in &blocks {
            if b.nrows() != n || b.ncols() != n {
                return Err(Error::Dimension(format!("block is {}x{}, expected {n}x{n}", b.nrows(), b.ncols())));
            }
        }
        let ens = FeatureEnsemble { n, horizon: times - 1, mean, second: SecondMoment::Dense(blocks) };
        ens.check_invariants()?;
        Ok(ens)
    }

    /// Decoupled ensemble from per-mode kernels, column `k` = `c_k(x, y)`.
    pub fn decoupled(mean: Mat<f64>, kernels: Mat<f64>) -> Result<Self> {
        let times = mean.nrows();
        let n = mean.ncols();
        if times < 2 || n == 0 {
            return config("decoupled ensemble needs N >= 1 and at least two time points");
        }
        if kernels.nrows() != times * times || kernels.ncols() != n {
            return Err(Error::Dimension(format!(
                "kernel table is {}x{}, expected {}x{n}",
                kernels.nrows(),
                kernels.ncols(),
                times * times
            )));
        }
        let ens = FeatureEnsemble { n, horizon: times - 1, mean, second: SecondMoment::Decoupled(kernels) };
        ens.check_invariants()?;
        Ok(ens)
    }

    pub fn sampled(moments: SampledMoments) -> Result<Self> {
        let times = moments.times();
        if times < 2 {
            return config("sampled ensemble needs at least two time points");
        }
        let n = moments.table.ncols();
        let mut mean = Mat::zeros(times, n);
        for t in 0..times {
            let p = moments.occupation(t);
            let mu = linalg::matvec_t(moments.table.as_ref().as_ref(), &p);
            for k in 0..n {
                mean[(t, k)] = mu[k];
            }
        }
        Ok(FeatureEnsemble { n, horizon: times - 1, mean, second: SecondMoment::Sampled(moments) })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of TD transitions `T`.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of time points `T + 1`.
    pub fn times(&self) -> usize {
        self.horizon + 1
    }

    pub fn mean(&self) -> &Mat<f64> {
        &self.mean
    }

    pub fn second(&self) -> &SecondMoment {
        &self.second
    }

    pub fn is_decoupled(&self) -> bool {
        matches!(self.second, SecondMoment::Decoupled(_))
    }

    pub fn representation(&self) -> &'static str {
        match self.second {
            SecondMoment::Dense(_) => "dense",
            SecondMoment::Decoupled(_) => "decoupled",
            SecondMoment::Sampled(_) => "sampled",
        }
    }

    fn idx(&self, x: usize, y: usize) -> usize {
        x * self.times() + y
    }

    /// `c_k(x, y)`; only for decoupled ensembles.
    pub fn kernel(&self, k: usize, x: usize, y: usize) -> Option<f64> {
        match &self.second {
            SecondMoment::Decoupled(c) => Some(c[(self.idx(x, y), k)]),
            _ => None,
        }
    }

    /// The `N × N` block `Σ(x, y)`.
    pub fn block(&self, x: usize, y: usize) -> Mat<f64> {
        match &self.second {
            SecondMoment::Dense(b) => b[self.idx(x, y)].clone(),
            SecondMoment::Decoupled(c) => {
                let r = self.idx(x, y);
                Mat::from_fn(self.n, self.n, |i, j| if i == j { c[(r, i)] } else { 0.0 })
            }
            SecondMoment::Sampled(s) => {
                let ns = s.table.nrows();
                let mut counts = Mat::<f64>::zeros(ns, ns);
                let w = 1.0 / s.n_paths as f64;
                for (&a, &b) in s.states_at(x).iter().zip(s.states_at(y)) {
                    counts[(a as usize, b as usize)] += w;
                }
                s.table.transpose() * &counts * s.table.as_ref()
            }
        }
    }

    /// Materializes all `(T + 1)²` blocks.
    pub fn densify(&self) -> FeatureEnsemble {
        let times = self.times();
        let blocks = (0..times * times).map(|r| self.block(r / times, r % times)).collect();
        FeatureEnsemble {
            n: self.n,
            horizon: self.horizon,
            mean: self.mean.clone(),
            second: SecondMoment::Dense(blocks),
        }
    }

    /// Exchange symmetry, equal-time PSD and positive decoupled kernels.
    pub fn check_invariants(&self) -> Result<()> {
        let times = self.times();
        match &self.second {
            SecondMoment::Dense(blocks) => {
                let scale = blocks.iter().map(|b| linalg::max_abs(b.as_ref())).fold(1.0, f64::max);
                for x in 0..times {
                    for y in x..times {
                        let a = &blocks[self.idx(x, y)];
                        let b = &blocks[self.idx(y, x)];
                        for i in 0..self.n {
                            for j in 0..self.n {
                                if (a[(i, j)] - b[(j, i)]).abs() > SYMMETRY_TOL * scale {
                                    return config(format!("exchange symmetry violated at Σ({x},{y})[{i},{j}]"));
                                }
                            }
                        }
                    }
                    let lo = linalg::min_sym_eigenvalue(blocks[self.idx(x, x)].as_ref())?;
                    if lo < -PSD_TOL * scale {
                        return config(format!("equal-time block Σ({x},{x}) has eigenvalue {lo:e}"));
                    }
                }
            }
            SecondMoment::Decoupled(c) => {
                for k in 0..self.n {
                    for x in 0..times {
                        if c[(self.idx(x, x), k)] <= 0.0 {
                            return config(format!("decoupled kernel c_{k}({x},{x}) must be positive"));
                        }
                        for y in 0..x {
                            if c[(self.idx(x, y), k)] != c[(self.idx(y, x), k)] {
                                return config(format!("decoupled kernel c_{k} is not symmetric at ({x},{y})"));
                            }
                        }
                    }
                }
            }
            SecondMoment::Sampled(_) => {}
        }
        Ok(())
    }

    /// `out(x, y) = E[ψ(x)ᵀ G ψ(y)] = Σ_ij G_ij Σ_ij(x, y)`.
    pub fn contract(&self, g: MatRef<'_, f64>) -> Mat<f64> {
        let times = self.times();
        match &self.second {
            SecondMoment::Dense(blocks) => Mat::from_fn(times, times, |x, y| {
                let b = &blocks[self.idx(x, y)];
                let mut s = 0.0;
                for j in 0..self.n {
                    for i in 0..self.n {
                        s += g[(i, j)] * b[(i, j)];
                    }
                }
                s
            }),
            SecondMoment::Decoupled(_) => {
                let d: Vec<f64> = (0..self.n).map(|k| g[(k, k)]).collect();
                self.contract_diag(&d)
            }
            SecondMoment::Sampled(s) => {
                let h = s.table.as_ref() * g * s.table.transpose();
                sampled_gather(s, h.as_ref())
            }
        }
    }

    /// [`contract`](Self::contract) for a diagonal `G = diag(d)`.
    pub fn contract_diag(&self, d: &[f64]) -> Mat<f64> {
        let times = self.times();
        match &self.second {
            SecondMoment::Decoupled(c) => {
                let v = linalg::matvec(c.as_ref(), d);
                Mat::from_fn(times, times, |x, y| v[x * times + y])
            }
            SecondMoment::Dense(blocks) => Mat::from_fn(times, times, |x, y| {
                let b = &blocks[self.idx(x, y)];
                (0..self.n).map(|k| d[k] * b[(k, k)]).sum()
            }),
            SecondMoment::Sampled(s) => {
                let h = Mat::from_fn(s.table.nrows(), s.table.nrows(), |a, b| {
                    (0..self.n).map(|k| s.table[(a, k)] * d[k] * s.table[(b, k)]).sum()
                });
                sampled_gather(s, h.as_ref())
            }
        }
    }

    /// `out(x, y) = aᵀ Σ(x, y) b`.
    pub fn bilinear(&self, a: &[f64], b: &[f64]) -> Mat<f64> {
        let t = self.bilinear_set(&[a, b]);
        t.get(0, 1).clone()
    }

    /// All pairwise tables `aᵢᵀ Σ(x, y) aⱼ` for a small set of vectors.
    pub fn bilinear_set(&self, vecs: &[&[f64]]) -> BilinearTables {
        let m = vecs.len();
        let times = self.times();
        let mut tables = vec![Mat::zeros(times, times); m * m];
        match &self.second {
            SecondMoment::Decoupled(c) => {
                let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect();
                let w = Mat::from_fn(self.n, pairs.len(), |k, p| vecs[pairs[p].0][k] * vecs[pairs[p].1][k]);
                let v = c * &w;
                for (p, &(i, j)) in pairs.iter().enumerate() {
                    let t = Mat::from_fn(times, times, |x, y| v[(x * times + y, p)]);
                    tables[j * m + i] = t.clone();
                    tables[i * m + j] = t;
                }
            }
            SecondMoment::Dense(blocks) => {
                for x in 0..times {
                    for y in 0..times {
                        let b = &blocks[self.idx(x, y)];
                        let sb: Vec<Vec<f64>> = vecs.iter().map(|v| linalg::matvec(b.as_ref(), v)).collect();
                        for i in 0..m {
                            for j in 0..m {
                                tables[i * m + j][(x, y)] = linalg::dot(vecs[i], &sb[j]);
                            }
                        }
                    }
                }
            }
            SecondMoment::Sampled(s) => {
                let mut x = Mat::zeros(s.n_paths, m * times);
                for (i, v) in vecs.iter().enumerate() {
                    let u = linalg::matvec(s.table.as_ref().as_ref(), v);
                    let xi = s.gather(&u);
                    x.as_mut().submatrix_mut(0, i * times, s.n_paths, times).copy_from(&xi);
                }
                let g = x.transpose() * &x * faer::Scale(1.0 / s.n_paths as f64);
                for i in 0..m {
                    for j in 0..m {
                        tables[i * m + j] = g.as_ref().submatrix(i * times, j * times, times, times).to_owned();
                    }
                }
            }
        }
        BilinearTables { m, tables }
    }

    /// `Σ_{x,y} W(x, y) Σ(x, y)` as an `N × N` matrix.
    pub fn weighted_sum(&self, w: MatRef<'_, f64>) -> Mat<f64> {
        match &self.second {
            SecondMoment::Dense(blocks) => {
                let times = self.times();
                let mut out = Mat::zeros(self.n, self.n);
                for x in 0..times {
                    for y in 0..times {
                        let c = w[(x, y)];
                        if c == 0.0 {
                            continue;
                        }
                        let b = &blocks[self.idx(x, y)];
                        for j in 0..self.n {
                            for i in 0..self.n {
                                out[(i, j)] += c * b[(i, j)];
                            }
                        }
                    }
                }
                out
            }
            SecondMoment::Decoupled(_) => linalg::diag(&self.weighted_sum_diag(w)),
            SecondMoment::Sampled(s) => {
                let k = sampled_scatter(s, w);
                s.table.transpose() * &k * s.table.as_ref()
            }
        }
    }

    /// Diagonal of [`weighted_sum`](Self::weighted_sum).
    pub fn weighted_sum_diag(&self, w: MatRef<'_, f64>) -> Vec<f64> {
        let times = self.times();
        match &self.second {
            SecondMoment::Decoupled(c) => {
                let flat: Vec<f64> = (0..times * times).map(|r| w[(r / times, r % times)]).collect();
                linalg::matvec_t(c.as_ref(), &flat)
            }
            SecondMoment::Dense(blocks) => {
                let mut out = vec![0.0; self.n];
                for x in 0..times {
                    for y in 0..times {
                        let c = w[(x, y)];
                        let b = &blocks[self.idx(x, y)];
                        for (k, o) in out.iter_mut().enumerate() {
                            *o += c * b[(k, k)];
                        }
                    }
                }
                out
            }
            SecondMoment::Sampled(s) => {
                let k = sampled_scatter(s, w);
                let kt = &k * s.table.as_ref();
                (0..self.n).map(|j| (0..s.table.nrows()).map(|a| s.table[(a, j)] * kt[(a, j)]).sum()).collect()
            }
        }
    }
}

/// `out(x, y) = mean_i H[s_x^i, s_y^i]`.
fn sampled_gather(s: &SampledMoments, h: MatRef<'_, f64>) -> Mat<f64> {
    let times = s.times();
    let w = 1.0 / s.n_paths as f64;
    Mat::from_fn(times, times, |x, y| {
        let mut acc = 0.0;
        for (&a, &b) in s.states_at(x).iter().zip(s.states_at(y)) {
            acc += h[(a as usize, b as usize)];
        }
        acc * w
    })
}

/// `K[a, b] = mean_i Σ_{x,y: s_x^i = a, s_y^i = b} W(x, y)`.
fn sampled_scatter(s: &SampledMoments, w: MatRef<'_, f64>) -> Mat<f64> {
    let times = s.times();
    let ns = s.table.nrows();
    let mut k = Mat::<f64>::zeros(ns, ns);
    let scale = 1.0 / s.n_paths as f64;
    for x in 0..times {
        for y in 0..times {
            let c = w[(x, y)] * scale;
            if c == 0.0 {
                continue;
            }
            for (&a, &b) in s.states_at(x).iter().zip(s.states_at(y)) {
                k[(a as usize, b as usize)] += c;
            }
        }
    }
    k
}

/// Pairwise tables returned by [`FeatureEnsemble::bilinear_set`].
#[derive(Clone, Debug)]
pub struct BilinearTables {
    m: usize,
    tables: Vec<Mat<f64>>,
}

impl BilinearTables {
    pub fn get(&self, i: usize, j: usize) -> &Mat<f64> {
        &self.tables[i * self.m + j]
    }
}

/// `Σ̄`, `Σ̄₊` and `A = Σ̄ − γ Σ̄₊`, averaged over transitions `t = 0..T`.
#[derive(Clone, Debug)]
pub struct ReducedMatrices {
    pub sigma_bar: Mat<f64>,
    pub sigma_plus: Mat<f64>,
    pub a: Mat<f64>,
    pub gamma: f64,
    /// Set when the ensemble is decoupled and every matrix is diagonal.
    pub diagonal: bool,
}

impl ReducedMatrices {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

pub fn reduced_matrices(ensemble: &FeatureEnsemble, gamma: f64) -> Result<ReducedMatrices> {
    if !(0.0..1.0).contains(&gamma) {
        return config(format!("gamma must lie in [0, 1), got {gamma}"));
    }
    let times = ensemble.times();
    let t = ensemble.horizon() as f64;
    let w_bar = Mat::from_fn(times, times, |x, y| if x == y && x + 1 < times { 1.0 / t } else { 0.0 });
    let w_plus = Mat::from_fn(times, times, |x, y| if y == x + 1 { 1.0 / t } else { 0.0 });
    let (sigma_bar, sigma_plus) = if ensemble.is_decoupled() {
        (
            linalg::diag(&ensemble.weighted_sum_diag(w_bar.as_ref())),
            linalg::diag(&ensemble.weighted_sum_diag(w_plus.as_ref())),
        )
    } else {
        let mut sb = ensemble.weighted_sum(w_bar.as_ref());
        linalg::symmetrize(&mut sb);
        (sb, ensemble.weighted_sum(w_plus.as_ref()))
    };
    let a = Mat::from_fn(sigma_bar.nrows(), sigma_bar.ncols(), |i, j| sigma_bar[(i, j)] - gamma * sigma_plus[(i, j)]);
    Ok(ReducedMatrices { sigma_bar, sigma_plus, a, gamma, diagonal: ensemble.is_decoupled() })
}

/// Decoupled power-law ensemble `c_k(t, t′) = k^{−a} exp(−|t − t′| / τ_k)`,
/// `τ_k = 10 / (k + 1)`, with reward weights `w_{R,k} = k^{−b}` (modes `k = 1..N`).
pub fn build_powerlaw_ensemble(n: usize, horizon: usize, a: f64, b: f64) -> Result<(FeatureEnsemble, Vec<f64>)> {
    if n == 0 || horizon == 0 {
        return config("power-law ensemble needs N >= 1 and T >= 1");
    }
    if !(a > 0.0 && a.is_finite()) || !(b > 0.0 && b.is_finite()) {
        return config(format!("power-law exponents must be positive, got a={a}, b={b}"));
    }
    let times = horizon + 1;
    let kernels = Mat::from_fn(times * times, n, |r, k| {
        let (x, y) = (r / times, r % times);
        let mode = (k + 1) as f64;
        let tau = 10.0 / (mode + 1.0);
        mode.powf(-a) * (-(x.abs_diff(y) as f64) / tau).exp()
    });
    let w_r = (1..=n).map(|k| (k as f64).powf(-b)).collect();
    Ok((FeatureEnsemble::decoupled(Mat::zeros(times, n), kernels)?, w_r))
}

/// Ensemble of i.i.d. ±1 features: `Σ(t, t′) = δ_{tt′} I`, zero mean.
pub fn hypercube_ensemble(n: usize, horizon: usize) -> Result<FeatureEnsemble> {
    if n == 0 || horizon == 0 {
        return config("hypercube ensemble needs N >= 1 and T >= 1");
    }
    let times = horizon + 1;
    let kernels = Mat::from_fn(times * times, n, |r, _| if r / times == r % times { 1.0 } else { 0.0 });
    FeatureEnsemble::decoupled(Mat::zeros(times, n), kernels)
}
