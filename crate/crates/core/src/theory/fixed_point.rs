use faer::Mat;
use serde::Serialize;

use super::{pad, Engine, MomentMatrix, Recursion, TheoryProblem};
use crate::error::{config, numerical, Result};
use crate::linalg;
use crate::simulator::BatchSize;

const POLISH_TOL: f64 = 1e-12;
const MAX_POLISH: usize = 1_000_000;
/// Above this dimension the dense fixed point is found by iteration alone.
const MAX_DIRECT_DENSE: usize = 24;

#[derive(Clone, Debug, Serialize)]
pub struct FixedPoint {
    #[serde(skip)]
    pub m: MomentMatrix,
    pub loss: f64,
    pub iterations: usize,
    pub eta: f64,
    pub batch: Option<usize>,
}

impl<'p, 'a> Engine<'p, 'a> {
    /// Mean-field map at `⟨w⟩ = w★`, without invariant checks so that it can
    /// be applied to indefinite basis matrices.
    fn affine_map(&self, m: &MomentMatrix, eta: f64) -> MomentMatrix {
        let zero = vec![0.0; self.problem.dim()];
        let a = &self.problem.reduced.a;
        let t_len = self.problem.horizon() as f64;
        let scale = eta * eta * self.inv_batch() / (t_len * t_len);
        let qpad = pad(&self.q_raw(&zero, m), self.problem.ensemble.times());
        match m {
            MomentMatrix::Diagonal(d) => {
                let extra = if scale > 0.0 {
                    self.problem.ensemble.weighted_sum_diag(qpad.as_ref())
                } else {
                    vec![0.0; d.len()]
                };
                MomentMatrix::Diagonal(
                    (0..d.len()).map(|k| (1.0 - eta * a[(k, k)]).powi(2) * d[k] + scale * extra[k]).collect(),
                )
            }
            MomentMatrix::Dense(md) => {
                let n = md.nrows();
                let k = Mat::from_fn(n, n, |i, j| (if i == j { 1.0 } else { 0.0 }) - eta * a[(i, j)]);
                let mut next = &k * md * k.transpose();
                if scale > 0.0 {
                    next += self.problem.ensemble.weighted_sum(qpad.as_ref()) * faer::Scale(scale);
                }
                MomentMatrix::Dense(next)
            }
        }
    }
}

fn max_diff(a: &MomentMatrix, b: &MomentMatrix) -> f64 {
    match (a, b) {
        (MomentMatrix::Diagonal(x), MomentMatrix::Diagonal(y)) => {
            x.iter().zip(y).fold(0.0, |s, (p, q)| s.max((p - q).abs()))
        }
        _ => {
            let (x, y) = (a.to_dense(), b.to_dense());
            linalg::max_abs((x - y).as_ref())
        }
    }
}

/// Stationary second moment of the constant-step mean-field recursion with
/// the mean pinned at `w★`, and the loss it implies.
pub fn fixed_point_plateau(problem: &TheoryProblem<'_>, eta: f64, batch: BatchSize) -> Result<FixedPoint> {
    if !(eta > 0.0) {
        return config(format!("step size must be positive, got {eta}"));
    }
    let n = problem.dim();
    let a = &problem.reduced.a;
    let k = Mat::from_fn(n, n, |i, j| (if i == j { 1.0 } else { 0.0 }) - eta * a[(i, j)]);
    let rho = linalg::spectral_radius(k.as_ref())?;
    if rho >= 1.0 {
        return numerical(format!(
            "mean dynamics do not contract at eta = {eta}: spectral radius of I - eta A is {rho:.6}"
        ));
    }
    let engine = Engine::new(problem, batch, None, None, Recursion::Dmft)?;
    let zero =
        if engine.diagonal { MomentMatrix::Diagonal(vec![0.0; n]) } else { MomentMatrix::Dense(Mat::zeros(n, n)) };
    let b = engine.affine_map(&zero, eta);

    let mut m = match (&b, engine.diagonal) {
        (MomentMatrix::Diagonal(bd), true) => {
            let cols: Vec<Vec<f64>> = (0..n)
                .map(|j| {
                    let mut e = vec![0.0; n];
                    e[j] = 1.0;
                    let MomentMatrix::Diagonal(col) = engine.affine_map(&MomentMatrix::Diagonal(e), eta) else {
                        unreachable!()
                    };
                    col
                })
                .collect();
            let jac = Mat::from_fn(n, n, |i, j| (if i == j { 1.0 } else { 0.0 }) - (cols[j][i] - bd[i]));
            MomentMatrix::Diagonal(linalg::solve(jac.as_ref(), bd))
        }
        (MomentMatrix::Dense(bm), false) if n <= MAX_DIRECT_DENSE => {
            let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
            let p = pairs.len();
            let mut system = Mat::<f64>::zeros(p, p);
            for (c, &(i, j)) in pairs.iter().enumerate() {
                let mut e = Mat::<f64>::zeros(n, n);
                e[(i, j)] = 1.0;
                e[(j, i)] = 1.0;
                let MomentMatrix::Dense(col) = engine.affine_map(&MomentMatrix::Dense(e), eta) else { unreachable!() };
                for (r, &(x, y)) in pairs.iter().enumerate() {
                    let unit = if r == c { 1.0 } else { 0.0 };
                    system[(r, c)] = unit - (col[(x, y)] - bm[(x, y)]);
                }
            }
            let rhs: Vec<f64> = pairs.iter().map(|&(x, y)| bm[(x, y)]).collect();
            let coef = linalg::solve(system.as_ref(), &rhs);
            let mut out = Mat::zeros(n, n);
            for (c, &(i, j)) in pairs.iter().enumerate() {
                out[(i, j)] = coef[c];
                out[(j, i)] = coef[c];
            }
            MomentMatrix::Dense(out)
        }
        _ => zero,
    };

    let mut iterations = 0;
    loop {
        let next = engine.affine_map(&m, eta);
        let change = max_diff(&next, &m);
        m = next;
        iterations += 1;
        if change < POLISH_TOL * (1.0 + m_scale(&m)) {
            break;
        }
        if iterations >= MAX_POLISH {
            return numerical(format!(
                "plateau iteration did not settle after {MAX_POLISH} steps (last change {change:e})"
            ));
        }
        if !m_scale(&m).is_finite() {
            return numerical("plateau iteration diverged");
        }
    }
    let loss = engine.loss(&m);
    Ok(FixedPoint {
        m,
        loss,
        iterations,
        eta,
        batch: match batch {
            BatchSize::Finite(b) => Some(b),
            BatchSize::Infinite => None,
        },
    })
}

fn m_scale(m: &MomentMatrix) -> f64 {
    m.max_abs()
}
