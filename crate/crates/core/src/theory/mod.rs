//! Deterministic learning-curve recursions for the first two moments of the
//! TD iterates: the mean-field recursion, the direct recurrence that keeps
//! the cross-time term, the exact fourth-moment recursion, and plateau fixed
//! points.
//!
//! All recursions track `δ = ⟨w⟩ − w★` and `M = ⟨(w − w★)(w − w★)ᵀ⟩` with
//! `w★ = w_TD + w_φ`. For a fixed weight vector the TD error is
//! `Δ(t) = uᵀψ(t) + vᵀψ(t+1)` with `u = r − d`, `v = γ(q + d)`,
//! `r = w_R − w_TD`, `q = w_TD` and `d = w − w★`; averaging products of
//! `u, v` over the Gaussian weight law only needs `δ` and `M`.

mod fixed_point;
mod fourth;

use faer::Mat;

use crate::error::{check_len, config, Error, Result};
use crate::features::{reduced_matrices, FeatureEnsemble, ReducedMatrices};
use crate::linalg;
use crate::simulator::{
    eta_trace, noise_floor, BatchSize, LearnerConfig, LearningCurve, SeedTrace, Variant, DIVERGENCE_THRESHOLD,
};
use crate::spectral::td_fixed_point;

pub use fixed_point::{fixed_point_plateau, FixedPoint};
pub use fourth::{FourthMomentModel, FourthMomentTensor, MAX_TENSOR_DIM};

/// Largest `T²N²` for which dense cross-time terms are precomputed (256 MiB).
pub const MAX_DENSE_CROSS_ENTRIES: usize = 1 << 25;

const INVARIANT_TOL: f64 = 1e-10;

/// Ensemble, reduced matrices, reward weights and the TD fixed point.
#[derive(Clone, Debug)]
pub struct TheoryProblem<'a> {
    pub ensemble: &'a FeatureEnsemble,
    pub reduced: ReducedMatrices,
    pub w_r: Vec<f64>,
    pub w_td: Vec<f64>,
}

impl<'a> TheoryProblem<'a> {
    pub fn new(ensemble: &'a FeatureEnsemble, w_r: Vec<f64>, gamma: f64) -> Result<Self> {
        check_len("w_R", w_r.len(), ensemble.dim())?;
        let reduced = reduced_matrices(ensemble, gamma)?;
        let w_td = td_fixed_point(&reduced, &w_r)
            .map_err(|e| Error::Numerical(format!("{e}; inspect A with the spectral report")))?;
        Ok(TheoryProblem { ensemble, reduced, w_r, w_td })
    }

    pub fn dim(&self) -> usize {
        self.ensemble.dim()
    }

    pub fn horizon(&self) -> usize {
        self.ensemble.horizon()
    }

    pub fn gamma(&self) -> f64 {
        self.reduced.gamma
    }

    pub fn diagonal(&self) -> bool {
        self.reduced.diagonal
    }
}

/// Second moment of `w − w★`. Decoupled ensembles keep only the diagonal,
/// which evolves autonomously and fully determines the loss.
#[derive(Clone, Debug)]
pub enum MomentMatrix {
    Dense(Mat<f64>),
    Diagonal(Vec<f64>),
}

impl MomentMatrix {
    pub fn diagonal_values(&self) -> Vec<f64> {
        match self {
            MomentMatrix::Dense(m) => (0..m.nrows()).map(|i| m[(i, i)]).collect(),
            MomentMatrix::Diagonal(d) => d.clone(),
        }
    }

    pub fn to_dense(&self) -> Mat<f64> {
        match self {
            MomentMatrix::Dense(m) => m.clone(),
            MomentMatrix::Diagonal(d) => linalg::diag(d),
        }
    }

    fn max_abs(&self) -> f64 {
        match self {
            MomentMatrix::Dense(m) => linalg::max_abs(m.as_ref()),
            MomentMatrix::Diagonal(d) => d.iter().fold(0.0, |a, v| a.max(v.abs())),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MomentState {
    pub mean_w: Vec<f64>,
    pub m: MomentMatrix,
    /// `Q(t, t′) = ⟨Δ(t)Δ(t′)⟩` at this state, `T × T`.
    pub q: Mat<f64>,
    pub n: usize,
}

/// Which recursion to iterate.
#[derive(Clone, Copy, Debug)]
pub enum Recursion<'m> {
    Dmft,
    Direct,
    NonGaussian(&'m FourthMomentModel),
}

#[derive(Clone, Debug, Default)]
pub struct CurveOptions {
    /// Keep every `MomentState`; memory grows as `n_steps · N²`.
    pub record_states: bool,
}

#[derive(Clone, Debug)]
pub struct TheoryRun {
    pub curve: LearningCurve,
    pub states: Vec<MomentState>,
    pub final_state: MomentState,
}

/// Constant per-pair quantities of the cross-time term:
/// `F_{xy}(d) = f_{xy} + P_{xy} d` with `f_{xy} = Σ(x,y) r + γΣ(x,y+1) q` and
/// `P_{xy} = γΣ(x,y+1) − Σ(x,y)`, for `x, y < T`.
enum Cross {
    Dense { f: Vec<Vec<f64>>, p: Vec<Mat<f64>>, fbar: Vec<f64>, pbar: Mat<f64> },
    Diagonal { f: Vec<Vec<f64>>, p: Vec<Vec<f64>>, fbar: Vec<f64>, pbar: Vec<f64> },
}

pub(crate) struct Engine<'p, 'a> {
    problem: &'p TheoryProblem<'a>,
    batch: BatchSize,
    noise: Option<Vec<f64>>,
    w_star: Vec<f64>,
    r: Vec<f64>,
    q: Vec<f64>,
    diagonal: bool,
    cross: Option<Cross>,
    recursion: Recursion<'p>,
}

fn pad(q: &Mat<f64>, times: usize) -> Mat<f64> {
    Mat::from_fn(times, times, |x, y| if x + 1 < times && y + 1 < times { q[(x, y)] } else { 0.0 })
}

fn check_table(name: &str, q: &mut Mat<f64>, n: usize) -> Result<()> {
    let scale = linalg::max_abs(q.as_ref()).max(1e-300);
    if !scale.is_finite() {
        return Err(Error::Numerical(format!("{name} is not finite at iteration {n}")));
    }
    if linalg::max_asymmetry(q.as_ref()) > 1e-8 * scale.max(1.0) {
        return Err(Error::Numerical(format!("{name} lost symmetry at iteration {n}")));
    }
    linalg::symmetrize(q);
    for i in 0..q.nrows() {
        if q[(i, i)] < -INVARIANT_TOL * scale.max(1.0) {
            return Err(Error::Numerical(format!("{name} has negative diagonal {:e} at iteration {n}", q[(i, i)])));
        }
    }
    Ok(())
}

impl<'p, 'a> Engine<'p, 'a> {
    pub(crate) fn new(
        problem: &'p TheoryProblem<'a>,
        batch: BatchSize,
        shaping: Option<&[f64]>,
        noise: Option<&[f64]>,
        recursion: Recursion<'p>,
    ) -> Result<Self> {
        let n = problem.dim();
        if let Some(s) = shaping {
            check_len("shaping weights", s.len(), n)?;
        }
        if let Some(s) = noise {
            check_len("action noise variances", s.len(), problem.horizon())?;
        }
        if batch == BatchSize::Finite(0) {
            return config("batch size must be at least 1");
        }
        let w_star = match shaping {
            Some(p) => linalg::add(&problem.w_td, p),
            None => problem.w_td.clone(),
        };
        let diagonal = problem.diagonal();
        let mut engine = Engine {
            problem,
            batch,
            noise: noise.map(|s| s.to_vec()),
            w_star,
            r: linalg::sub(&problem.w_r, &problem.w_td),
            q: problem.w_td.clone(),
            diagonal,
            cross: None,
            recursion,
        };
        match recursion {
            Recursion::Dmft => {}
            Recursion::Direct
            | Recursion::NonGaussian(FourthMomentModel::GaussianWick | FourthMomentModel::HypercubeIid) => {
                engine.cross = Some(engine.build_cross()?);
            }
            Recursion::NonGaussian(FourthMomentModel::ExplicitTensor(t)) => {
                if t.dim() != n || t.times() != problem.ensemble.times() {
                    return config("fourth-moment tensor shape does not match the ensemble");
                }
                engine.diagonal = false;
            }
        }
        Ok(engine)
    }

    fn build_cross(&self) -> Result<Cross> {
        let e = self.problem.ensemble;
        let (n, t_len) = (e.dim(), e.horizon());
        let gamma = self.problem.gamma();
        if self.diagonal {
            let mut f: Vec<Vec<f64>> = Vec::with_capacity(t_len * t_len);
            let mut p: Vec<Vec<f64>> = Vec::with_capacity(t_len * t_len);
            for x in 0..t_len {
                for y in 0..t_len {
                    let c = |k: usize, a: usize, b: usize| e.kernel(k, a, b).expect("decoupled");
                    f.push((0..n).map(|k| c(k, x, y) * self.r[k] + gamma * c(k, x, y + 1) * self.q[k]).collect());
                    p.push((0..n).map(|k| gamma * c(k, x, y + 1) - c(k, x, y)).collect());
                }
            }
            let fbar = (0..n).map(|k| (0..t_len).map(|x| f[x * t_len + x][k]).sum()).collect();
            let pbar = (0..n).map(|k| (0..t_len).map(|x| p[x * t_len + x][k]).sum()).collect();
            return Ok(Cross::Diagonal { f, p, fbar, pbar });
        }
        if t_len * t_len * n * n > MAX_DENSE_CROSS_ENTRIES {
            return config(format!(
                "cross-time terms for a non-decoupled ensemble need T²N² <= {MAX_DENSE_CROSS_ENTRIES}, got T={t_len}, N={n}"
            ));
        }
        let mut f = Vec::with_capacity(t_len * t_len);
        let mut p = Vec::with_capacity(t_len * t_len);
        for x in 0..t_len {
            for y in 0..t_len {
                let s0 = e.block(x, y);
                let s1 = e.block(x, y + 1);
                let v = linalg::add(
                    &linalg::matvec(s0.as_ref(), &self.r),
                    &linalg::matvec(s1.as_ref(), &self.q).iter().map(|v| gamma * v).collect::<Vec<_>>(),
                );
                f.push(v);
                p.push(Mat::from_fn(n, n, |i, j| gamma * s1[(i, j)] - s0[(i, j)]));
            }
        }
        let mut fbar = vec![0.0; n];
        let mut pbar = Mat::zeros(n, n);
        for x in 0..t_len {
            fbar = linalg::add(&fbar, &f[x * t_len + x]);
            pbar += &p[x * t_len + x];
        }
        Ok(Cross::Dense { f, p, fbar, pbar })
    }

    fn inv_batch(&self) -> f64 {
        match self.batch {
            BatchSize::Finite(b) => 1.0 / b as f64,
            BatchSize::Infinite => 0.0,
        }
    }

    pub(crate) fn initial_state(&self, w0: &[f64]) -> Result<MomentState> {
        check_len("w0", w0.len(), self.problem.dim())?;
        let d = linalg::sub(w0, &self.w_star);
        let m = if self.diagonal {
            MomentMatrix::Diagonal(d.iter().map(|v| v * v).collect())
        } else {
            MomentMatrix::Dense(Mat::from_fn(d.len(), d.len(), |i, j| d[i] * d[j]))
        };
        self.state(w0.to_vec(), m, 0)
    }

    pub(crate) fn state(&self, mean_w: Vec<f64>, m: MomentMatrix, n: usize) -> Result<MomentState> {
        let delta = linalg::sub(&mean_w, &self.w_star);
        let q = self.q_table(&delta, &m, n)?;
        Ok(MomentState { mean_w, m, q, n })
    }

    /// `Q(t,t′) = G_uu(t,t′) + G_uv(t,t′+1) + G_uv(t′,t+1) + G_vv(t+1,t′+1)`
    /// (+ `δ_{tt′} σ_t²`), with `G_ab(x,y) = E[aᵀ Σ(x,y) b]`.
    fn q_table(&self, delta: &[f64], m: &MomentMatrix, n: usize) -> Result<Mat<f64>> {
        let mut q = self.q_raw(delta, m);
        check_table("Q", &mut q, n)?;
        Ok(q)
    }

    pub(crate) fn q_raw(&self, delta: &[f64], m: &MomentMatrix) -> Mat<f64> {
        let e = self.problem.ensemble;
        let gamma = self.problem.gamma();
        let t_len = e.horizon();
        let b = e.bilinear_set(&[&self.r, &self.q, delta]);
        let (rr, rq, rd) = (b.get(0, 0), b.get(0, 1), b.get(0, 2));
        let (qq, qd) = (b.get(1, 1), b.get(1, 2));
        let (dr, dq) = (b.get(2, 0), b.get(2, 1));
        let cm = match m {
            MomentMatrix::Dense(m) => e.contract(m.as_ref()),
            MomentMatrix::Diagonal(d) => e.contract_diag(d),
        };
        let guu = |x: usize, y: usize| rr[(x, y)] - rd[(x, y)] - dr[(x, y)] + cm[(x, y)];
        let guv = |x: usize, y: usize| gamma * (rq[(x, y)] + rd[(x, y)] - dq[(x, y)] - cm[(x, y)]);
        let gvv = |x: usize, y: usize| gamma * gamma * (qq[(x, y)] + qd[(x, y)] + dq[(x, y)] + cm[(x, y)]);
        let mut q = Mat::from_fn(t_len, t_len, |t, s| guu(t, s) + guv(t, s + 1) + guv(s, t + 1) + gvv(t + 1, s + 1));
        if let Some(sig) = &self.noise {
            for t in 0..t_len {
                q[(t, t)] += sig[t];
            }
        }
        q
    }

    pub(crate) fn loss(&self, m: &MomentMatrix) -> f64 {
        let sb = &self.problem.reduced.sigma_bar;
        let n = self.problem.dim() as f64;
        let reducible = match m {
            MomentMatrix::Dense(m) => linalg::trace_product(sb.as_ref(), m.as_ref()),
            MomentMatrix::Diagonal(d) => d.iter().enumerate().map(|(k, v)| sb[(k, k)] * v).sum(),
        };
        reducible / n + noise_floor(self.noise.as_deref())
    }

    /// `E_w[Σ_{tt′} F_{tt′} F_{t′t}ᵀ]` (dense) or its diagonal.
    fn cross_sum(&self, delta: &[f64], m: &MomentMatrix) -> MomentMatrix {
        let t_len = self.problem.horizon();
        match (self.cross.as_ref().expect("cross terms prepared"), m) {
            (Cross::Diagonal { f, p, .. }, MomentMatrix::Diagonal(md)) => {
                let n = md.len();
                let mut out = vec![0.0; n];
                for x in 0..t_len {
                    for y in 0..t_len {
                        let (a, b) = (x * t_len + y, y * t_len + x);
                        for k in 0..n {
                            let ga = f[a][k] + p[a][k] * delta[k];
                            let gb = f[b][k] + p[b][k] * delta[k];
                            out[k] += ga * gb + p[a][k] * p[b][k] * (md[k] - delta[k] * delta[k]);
                        }
                    }
                }
                MomentMatrix::Diagonal(out)
            }
            (Cross::Dense { f, p, .. }, m) => {
                let md = m.to_dense();
                let n = md.nrows();
                let centered = Mat::from_fn(n, n, |i, j| md[(i, j)] - delta[i] * delta[j]);
                let mut out = Mat::<f64>::zeros(n, n);
                for x in 0..t_len {
                    for y in 0..t_len {
                        let (a, b) = (x * t_len + y, y * t_len + x);
                        let ga = linalg::add(&f[a], &linalg::matvec(p[a].as_ref(), delta));
                        let gb = linalg::add(&f[b], &linalg::matvec(p[b].as_ref(), delta));
                        out += &p[a] * &centered * p[b].transpose();
                        for j in 0..n {
                            for i in 0..n {
                                out[(i, j)] += ga[i] * gb[j];
                            }
                        }
                    }
                }
                MomentMatrix::Dense(out)
            }
            (Cross::Diagonal { .. }, MomentMatrix::Dense(_)) => unreachable!("diagonal cross terms with dense moments"),
        }
    }

    /// `E_w[(Σ_t F_tt)(Σ_t F_tt)ᵀ]` (dense) or its diagonal.
    fn same_time_sum(&self, delta: &[f64], m: &MomentMatrix) -> MomentMatrix {
        match (self.cross.as_ref().expect("cross terms prepared"), m) {
            (Cross::Diagonal { fbar, pbar, .. }, MomentMatrix::Diagonal(md)) => MomentMatrix::Diagonal(
                (0..md.len())
                    .map(|k| {
                        let g = fbar[k] + pbar[k] * delta[k];
                        g * g + pbar[k] * pbar[k] * (md[k] - delta[k] * delta[k])
                    })
                    .collect(),
            ),
            (Cross::Dense { fbar, pbar, .. }, m) => {
                let md = m.to_dense();
                let n = md.nrows();
                let centered = Mat::from_fn(n, n, |i, j| md[(i, j)] - delta[i] * delta[j]);
                let g = linalg::add(fbar, &linalg::matvec(pbar.as_ref(), delta));
                let mut out = pbar * &centered * pbar.transpose();
                for j in 0..n {
                    for i in 0..n {
                        out[(i, j)] += g[i] * g[j];
                    }
                }
                MomentMatrix::Dense(out)
            }
            (Cross::Diagonal { .. }, MomentMatrix::Dense(_)) => unreachable!("diagonal cross terms with dense moments"),
        }
    }

    /// `E[u uᵀ]`, `E[u vᵀ]`, `E[v vᵀ]` as dense matrices.
    fn weight_moments(&self, delta: &[f64], m: &Mat<f64>) -> [Mat<f64>; 3] {
        let (r, q) = (&self.r, &self.q);
        let g = self.problem.gamma();
        let n = r.len();
        [
            Mat::from_fn(n, n, |i, j| r[i] * r[j] - r[i] * delta[j] - delta[i] * r[j] + m[(i, j)]),
            Mat::from_fn(n, n, |i, j| g * (r[i] * q[j] + r[i] * delta[j] - delta[i] * q[j] - m[(i, j)])),
            Mat::from_fn(n, n, |i, j| g * g * (q[i] * q[j] + q[i] * delta[j] + delta[i] * q[j] + m[(i, j)])),
        ]
    }

    /// `E[g gᵀ]` with `g = Σ_t Δ(t) ψ(t)` contracted against an explicit tensor.
    fn tensor_gradient_moment(&self, t4: &FourthMomentTensor, delta: &[f64], m: &Mat<f64>) -> Mat<f64> {
        let n = self.problem.dim();
        let t_len = self.problem.horizon();
        let [euu, euv, evv] = self.weight_moments(delta, m);
        let mut out = Mat::<f64>::zeros(n, n);
        for t in 0..t_len {
            for s in 0..t_len {
                // (time of a, time of b, coefficient matrix, transposed?)
                let combos: [(usize, usize, &Mat<f64>, bool); 4] =
                    [(t, s, &euu, false), (t, s + 1, &euv, false), (t + 1, s, &euv, true), (t + 1, s + 1, &evv, false)];
                for (ta, tb, coef, tr) in combos {
                    for k in 0..n {
                        for l in 0..n {
                            let c = if tr { coef[(l, k)] } else { coef[(k, l)] };
                            if c == 0.0 {
                                continue;
                            }
                            let (a, b) = (ta * n + k, tb * n + l);
                            for i in 0..n {
                                for j in 0..n {
                                    out[(i, j)] += c * t4.get(a, t * n + i, b, s * n + j);
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// One step of the selected recursion at step size `eta`.
    pub(crate) fn step(&self, state: &MomentState, eta: f64) -> Result<MomentState> {
        let delta = linalg::sub(&state.mean_w, &self.w_star);
        let a = &self.problem.reduced.a;
        let n = self.problem.dim();
        let t_len = self.problem.horizon() as f64;
        let times = self.problem.ensemble.times();
        let inv_b = self.inv_batch();
        let noise_scale = eta * eta * inv_b / (t_len * t_len);
        let next_n = state.n + 1;

        let ad = linalg::matvec(a.as_ref(), &delta);
        let new_delta: Vec<f64> = delta.iter().zip(&ad).map(|(d, x)| d - eta * x).collect();
        let mean_w = linalg::add(&self.w_star, &new_delta);

        let qpad = pad(&state.q, times);
        let m = if self.diagonal {
            let MomentMatrix::Diagonal(md) = &state.m else {
                return config("diagonal recursion received a dense moment matrix");
            };
            let ak: Vec<f64> = (0..n).map(|k| a[(k, k)]).collect();
            let mut next: Vec<f64> = (0..n).map(|k| (1.0 - eta * ak[k]).powi(2) * md[k]).collect();
            if inv_b > 0.0 {
                let mut extra = self.problem.ensemble.weighted_sum_diag(qpad.as_ref());
                match self.recursion {
                    Recursion::Dmft => {}
                    Recursion::Direct => {
                        let MomentMatrix::Diagonal(x) = self.cross_sum(&delta, &state.m) else { unreachable!() };
                        for k in 0..n {
                            extra[k] += x[k];
                        }
                    }
                    Recursion::NonGaussian(model) => {
                        let MomentMatrix::Diagonal(x) = self.cross_sum(&delta, &state.m) else { unreachable!() };
                        let MomentMatrix::Diagonal(s) = self.same_time_sum(&delta, &state.m) else { unreachable!() };
                        for k in 0..n {
                            extra[k] += x[k] + s[k];
                            // remove the (η²/B) A M Aᵀ part already inside (I − ηA) M (I − ηA)ᵀ
                            extra[k] -= t_len * t_len * ak[k] * ak[k] * md[k];
                        }
                        if matches!(model, FourthMomentModel::HypercubeIid) {
                            for k in 0..n {
                                let euu = self.r[k] * self.r[k] - 2.0 * self.r[k] * delta[k] + md[k];
                                extra[k] -= 2.0 * t_len * euu;
                            }
                        }
                    }
                }
                for k in 0..n {
                    next[k] += noise_scale * extra[k];
                }
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("M is not finite at iteration {next_n}")));
            }
            let scale = next.iter().fold(1.0f64, |s, v| s.max(v.abs()));
            if let Some(v) = next.iter().find(|v| **v < -INVARIANT_TOL * scale) {
                return Err(Error::Numerical(format!("M has negative diagonal {v:e} at iteration {next_n}")));
            }
            MomentMatrix::Diagonal(next)
        } else {
            let md = state.m.to_dense();
            let k = Mat::from_fn(n, n, |i, j| (if i == j { 1.0 } else { 0.0 }) - eta * a[(i, j)]);
            let mut next = &k * &md * k.transpose();
            if inv_b > 0.0 {
                let extra = match self.recursion {
                    Recursion::Dmft => self.problem.ensemble.weighted_sum(qpad.as_ref()),
                    Recursion::Direct => {
                        let MomentMatrix::Dense(x) = self.cross_sum(&delta, &state.m) else { unreachable!() };
                        self.problem.ensemble.weighted_sum(qpad.as_ref()) + x
                    }
                    Recursion::NonGaussian(model) => {
                        let ama = a * &md * a.transpose();
                        let egg = match model {
                            FourthMomentModel::ExplicitTensor(t4) => self.tensor_gradient_moment(t4, &delta, &md),
                            _ => {
                                let MomentMatrix::Dense(x) = self.cross_sum(&delta, &state.m) else { unreachable!() };
                                let MomentMatrix::Dense(s) = self.same_time_sum(&delta, &state.m) else {
                                    unreachable!()
                                };
                                let mut w = self.problem.ensemble.weighted_sum(qpad.as_ref()) + x + s;
                                if matches!(model, FourthMomentModel::HypercubeIid) {
                                    let [euu, _, _] = self.weight_moments(&delta, &md);
                                    for i in 0..n {
                                        w[(i, i)] -= 2.0 * t_len * euu[(i, i)];
                                    }
                                }
                                w
                            }
                        };
                        egg - ama * faer::Scale(t_len * t_len)
                    }
                };
                next += extra * faer::Scale(noise_scale);
            }
            let scale = linalg::max_abs(next.as_ref()).max(1.0);
            if !scale.is_finite() {
                return Err(Error::Numerical(format!("M is not finite at iteration {next_n}")));
            }
            if linalg::max_asymmetry(next.as_ref()) > 1e-8 * scale {
                return Err(Error::Numerical(format!("M lost symmetry at iteration {next_n}")));
            }
            linalg::symmetrize(&mut next);
            if let Some(i) = (0..n).find(|&i| next[(i, i)] < -INVARIANT_TOL * scale) {
                return Err(Error::Numerical(format!(
                    "M has negative diagonal {:e} at iteration {next_n}",
                    next[(i, i)]
                )));
            }
            MomentMatrix::Dense(next)
        };
        self.state(mean_w, m, next_n)
    }
}

fn run(
    problem: &TheoryProblem<'_>,
    config: &LearnerConfig,
    recursion: Recursion<'_>,
    variant: Variant,
    opts: &CurveOptions,
) -> Result<TheoryRun> {
    config.validate(problem.dim(), problem.horizon())?;
    let engine =
        Engine::new(problem, config.batch, config.shaping.as_deref(), config.action_noise.as_deref(), recursion)?;
    let etas = eta_trace(&config.schedule, config.n_steps)?;
    let mut state = engine.initial_state(&config.initial_weights(problem.dim()))?;
    let mut values = vec![engine.loss(&state.m)];
    let mut states = Vec::new();
    let mut diverged_at = None;
    for (step, &eta) in etas.iter().enumerate().skip(1) {
        let next = engine.step(&state, eta)?;
        let l = engine.loss(&next.m);
        if opts.record_states {
            states.push(std::mem::replace(&mut state, next));
        } else {
            state = next;
        }
        if !(l <= DIVERGENCE_THRESHOLD) {
            diverged_at = Some(step);
            break;
        }
        values.push(l);
    }
    if opts.record_states {
        states.push(state.clone());
    }
    let trace = SeedTrace { seed: None, values, diverged_at, final_weights: state.mean_w.clone() };
    Ok(TheoryRun { curve: LearningCurve::from_traces(variant, etas, vec![trace]), states, final_state: state })
}

/// One mean-field step: `⟨w⟩′ = ⟨w⟩ + ηA(w★ − ⟨w⟩)` and
/// `M′ = (I − ηA) M (I − ηA)ᵀ + η²/(B T²) Σ_{tt′} Q(t,t′) Σ(t,t′)`.
pub fn dmft_step(
    state: &MomentState,
    problem: &TheoryProblem<'_>,
    eta: f64,
    batch: BatchSize,
    shaping: Option<&[f64]>,
    action_noise: Option<&[f64]>,
) -> Result<MomentState> {
    if !(eta > 0.0) {
        return config(format!("step size must be positive, got {eta}"));
    }
    let engine = Engine::new(problem, batch, shaping, action_noise, Recursion::Dmft)?;
    let consistent =
        matches!((&state.m, engine.diagonal), (MomentMatrix::Diagonal(_), true) | (MomentMatrix::Dense(_), false));
    if !consistent {
        return config("moment matrix representation does not match the ensemble");
    }
    engine.step(state, eta)
}

/// Initial state `⟨w₀⟩ = w0`, `M₀ = (w0 − w★)(w0 − w★)ᵀ`.
pub fn initial_moment_state(
    problem: &TheoryProblem<'_>,
    w0: &[f64],
    batch: BatchSize,
    shaping: Option<&[f64]>,
    action_noise: Option<&[f64]>,
) -> Result<MomentState> {
    Engine::new(problem, batch, shaping, action_noise, Recursion::Dmft)?.initial_state(w0)
}

pub fn dmft_curve(problem: &TheoryProblem<'_>, config: &LearnerConfig, opts: &CurveOptions) -> Result<TheoryRun> {
    run(problem, config, Recursion::Dmft, Variant::Dmft, opts)
}

/// Mean-field recursion plus `η²/(B T²) Σ_{tt′} E_w[F_{tt′} F_{t′t}ᵀ]`,
/// `F_{xy} = ⟨Δ(y) ψ(x)⟩` at fixed weights.
pub fn direct_recurrence_curve(
    problem: &TheoryProblem<'_>,
    config: &LearnerConfig,
    opts: &CurveOptions,
) -> Result<TheoryRun> {
    run(problem, config, Recursion::Direct, Variant::Direct, opts)
}

/// Exact second-moment recursion
/// `M′ = M − ηAM − ηMAᵀ + η²(1 − 1/B) AMAᵀ + η²/(B T²) E[g gᵀ]`.
pub fn nongaussian_curve(
    model: &FourthMomentModel,
    problem: &TheoryProblem<'_>,
    config: &LearnerConfig,
    opts: &CurveOptions,
) -> Result<TheoryRun> {
    run(problem, config, Recursion::NonGaussian(model), Variant::Nongauss, opts)
}

/// `([(1−η)² + η²(N−1)/B]ⁿ, [(1−η)² + η²(N+1)/B]ⁿ)`: hypercube and Gaussian
/// losses for `T = 1`, `γ = 0`, `A = I`, normalized to `L₀ = 1`.
pub fn hypercube_closed_form(n_dim: usize, batch: usize, eta: f64, n: usize) -> (f64, f64) {
    let (nd, b) = (n_dim as f64, batch as f64);
    let base = (1.0 - eta).powi(2);
    let exp = n as i32;
    ((base + eta * eta * (nd - 1.0) / b).powi(exp), (base + eta * eta * (nd + 1.0) / b).powi(exp))
}
