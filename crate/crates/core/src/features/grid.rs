//! Square grid world under a uniform random diffusion policy, featurized by
//! Gaussian place cells.

use std::sync::Arc;

use faer::Mat;
use rand::Rng;

use crate::error::{check_len, config, numerical, Result};
use crate::linalg;

/// Moves: up, down, left, right. A move off the grid leaves the agent in place.
const MOVES: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

#[derive(Clone, Debug)]
pub struct GridWorldSpec {
    pub side: usize,
    pub start: (usize, usize),
    /// Place-cell bandwidth σ_pc in grid units.
    pub bandwidth: f64,
    /// Place-cell centers as (row, column) coordinates.
    pub centers: Vec<(f64, f64)>,
    pub horizon: usize,
    /// Tabular reward `R(s)`, indexed by `row * side + column`.
    pub reward: Vec<f64>,
}

impl GridWorldSpec {
    /// Start at the center, one place cell per grid cell.
    pub fn new(side: usize, bandwidth: f64, horizon: usize, reward: Vec<f64>) -> Self {
        let centers = (0..side * side).map(|s| ((s / side) as f64, (s % side) as f64)).collect();
        GridWorldSpec { side, start: (side / 2, side / 2), bandwidth, centers, horizon, reward }
    }

    pub fn n_states(&self) -> usize {
        self.side * self.side
    }

    fn validate(&self) -> Result<()> {
        if self.side == 0 {
            return config("grid side must be positive");
        }
        if self.start.0 >= self.side || self.start.1 >= self.side {
            return config("grid start state lies outside the grid");
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return config(format!("place-cell bandwidth must be positive, got {}", self.bandwidth));
        }
        if self.centers.is_empty() {
            return config("grid needs at least one place cell");
        }
        if self.horizon == 0 {
            return config("grid episode horizon must be positive");
        }
        check_len("grid reward map", self.reward.len(), self.n_states())
    }
}

/// `ψ_i = exp(−‖x(state) − c_i‖² / (2σ²))`.
pub fn place_cell_features(state: (usize, usize), spec: &GridWorldSpec) -> Result<Vec<f64>> {
    if state.0 >= spec.side || state.1 >= spec.side {
        return config(format!("state {state:?} is outside the {0}x{0} grid", spec.side));
    }
    let inv = 1.0 / (2.0 * spec.bandwidth * spec.bandwidth);
    let (r, c) = (state.0 as f64, state.1 as f64);
    Ok(spec.centers.iter().map(|&(cr, cc)| (-((r - cr).powi(2) + (c - cc).powi(2)) * inv).exp()).collect())
}

/// One unit of reward at `goal`, zero elsewhere.
pub fn sparse_reward(side: usize, goal: (usize, usize)) -> Vec<f64> {
    let mut r = vec![0.0; side * side];
    r[goal.0 * side + goal.1] = 1.0;
    r
}

/// Smooth Gaussian reward bump of the given width around `center`.
pub fn gaussian_reward(side: usize, center: (f64, f64), width: f64) -> Vec<f64> {
    (0..side * side)
        .map(|s| {
            let (r, c) = ((s / side) as f64, (s % side) as f64);
            (-((r - center.0).powi(2) + (c - center.1).powi(2)) / (2.0 * width * width)).exp()
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct GridWorld {
    spec: GridWorldSpec,
    table: Arc<Mat<f64>>,
}

impl GridWorld {
    pub fn new(spec: GridWorldSpec) -> Result<Self> {
        spec.validate()?;
        let ns = spec.n_states();
        let mut table = Mat::zeros(ns, spec.centers.len());
        for s in 0..ns {
            let psi = place_cell_features((s / spec.side, s % spec.side), &spec)?;
            for (k, v) in psi.into_iter().enumerate() {
                table[(s, k)] = v;
            }
        }
        Ok(GridWorld { spec, table: Arc::new(table) })
    }

    pub fn spec(&self) -> &GridWorldSpec {
        &self.spec
    }

    pub fn n_states(&self) -> usize {
        self.spec.n_states()
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    /// State -> feature table, one row per state.
    pub fn table(&self) -> &Arc<Mat<f64>> {
        &self.table
    }

    pub fn start_index(&self) -> usize {
        self.spec.start.0 * self.spec.side + self.spec.start.1
    }

    fn neighbor(&self, s: usize, m: usize) -> usize {
        let side = self.spec.side as i64;
        let (r, c) = ((s as i64) / side, (s as i64) % side);
        let (dr, dc) = MOVES[m];
        let (nr, nc) = (r + dr, c + dc);
        if nr < 0 || nr >= side || nc < 0 || nc >= side {
            s
        } else {
            (nr * side + nc) as usize
        }
    }

    pub fn step<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        self.neighbor(s, rng.random_range(0..MOVES.len()))
    }

    /// Visited states `s_0..s_T` of one episode.
    pub fn sample_path<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u32> {
        let mut s = self.start_index();
        let mut path = Vec::with_capacity(self.spec.horizon + 1);
        path.push(s as u32);
        for _ in 0..self.spec.horizon {
            s = self.step(s, rng);
            path.push(s as u32);
        }
        path
    }

    /// Row-stochastic transition matrix `Π(s, s′)`.
    pub fn transition_matrix(&self) -> Mat<f64> {
        let ns = self.n_states();
        let mut p = Mat::zeros(ns, ns);
        for s in 0..ns {
            for m in 0..MOVES.len() {
                p[(s, self.neighbor(s, m))] += 1.0 / MOVES.len() as f64;
            }
        }
        p
    }

    /// Exact state marginals `p_t` for `t = 0..=T` by propagating the chain.
    pub fn marginals(&self) -> Vec<Vec<f64>> {
        let ns = self.n_states();
        let mut p = vec![0.0; ns];
        p[self.start_index()] = 1.0;
        let mut out = vec![p.clone()];
        for _ in 0..self.spec.horizon {
            let mut next = vec![0.0; ns];
            for (s, &ps) in p.iter().enumerate() {
                if ps == 0.0 {
                    continue;
                }
                for m in 0..MOVES.len() {
                    next[self.neighbor(s, m)] += ps / MOVES.len() as f64;
                }
            }
            out.push(next.clone());
            p = next;
        }
        out
    }

    /// Least-squares reward weights: `argmin ‖Ψ w − R‖` (minimum norm).
    pub fn reward_weights(&self) -> Result<Vec<f64>> {
        lstsq(&self.table, &self.spec.reward)
    }

    /// Infinite-horizon discounted values `V = (I − γΠ)⁻¹ R`.
    pub fn tabular_values(&self, gamma: f64) -> Vec<f64> {
        let pi = self.transition_matrix();
        let ns = self.n_states();
        let m = Mat::from_fn(ns, ns, |i, j| (if i == j { 1.0 } else { 0.0 }) - gamma * pi[(i, j)]);
        linalg::solve(m.as_ref(), &self.spec.reward)
    }
}

/// Minimum-norm least squares through the thin SVD.
pub(crate) fn lstsq(a: &Mat<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let svd = match a.thin_svd() {
        Ok(s) => s,
        Err(e) => return numerical(format!("least-squares SVD failed: {e:?}")),
    };
    let s = svd.S().column_vector();
    let k = s.nrows();
    let smax = (0..k).map(|i| s[i]).fold(0.0, f64::max);
    let cutoff = smax * 1e-12 * a.nrows().max(a.ncols()) as f64;
    let utb = linalg::matvec_t(svd.U(), b);
    let coef: Vec<f64> = (0..k).map(|i| if s[i] > cutoff { utb[i] / s[i] } else { 0.0 }).collect();
    Ok(linalg::matvec(svd.V(), &coef))
}
