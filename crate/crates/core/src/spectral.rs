//! Fixed points and eigen-analysis of the TD operator `A`.

use std::fmt::Write as _;

use faer::c64;
use faer::linalg::solvers::Solve;
use faer::Mat;
use serde::Serialize;

use crate::error::{check_len, config, numerical, Result};
use crate::features::ReducedMatrices;
use crate::linalg;

/// Largest condition number accepted for `A` and for the eigenvector matrix.
pub const MAX_CONDITION: f64 = 1e12;
const RESIDUAL_TOL: f64 = 1e-10;
const IMAG_TOL: f64 = 1e-10;

/// Solves `A w_TD = Σ̄ w_R`.
pub fn td_fixed_point(reduced: &ReducedMatrices, w_r: &[f64]) -> Result<Vec<f64>> {
    check_len("w_R", w_r.len(), reduced.dim())?;
    let a = reduced.a.as_ref();
    let rhs = linalg::matvec(reduced.sigma_bar.as_ref(), w_r);
    if reduced.diagonal {
        let n = reduced.dim();
        let diag: Vec<f64> = (0..n).map(|k| a[(k, k)]).collect();
        let hi = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let lo = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if lo == 0.0 || hi / lo > MAX_CONDITION {
            return numerical(format!("A is singular or ill-conditioned (cond = {:e})", hi / lo));
        }
        return Ok(rhs.iter().zip(&diag).map(|(b, d)| b / d).collect());
    }
    let cond = linalg::condition_number(a)?;
    if !(cond <= MAX_CONDITION) {
        return numerical(format!("A is singular or ill-conditioned (cond = {cond:e})"));
    }
    Ok(linalg::solve(a, &rhs))
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralMode {
    pub re_lambda: f64,
    pub im_lambda: f64,
    pub timescale: f64,
    pub phase: f64,
    pub power: f64,
    pub cumulative_power: f64,
}

#[derive(Clone, Debug)]
pub struct SpectralReport {
    /// Ordered by descending real part, ties by descending imaginary part.
    pub eigenvalues: Vec<c64>,
    /// Unit-norm right eigenvectors, one per column.
    pub eigenvectors: Mat<c64>,
    /// `w_TD = Σ_k w_k u_k`.
    pub coefficients: Vec<c64>,
    pub eta: f64,
    /// `|1 − ηλ_k|`.
    pub timescales: Vec<f64>,
    /// `Arg(1 − ηλ_k)`.
    pub phases: Vec<f64>,
    /// `|w_k|² / Σ_ℓ |w_ℓ|²`.
    pub power: Vec<f64>,
    /// `C(k) = Σ_{ℓ≤k} power_ℓ`.
    pub cumulative_power: Vec<f64>,
    pub eigenvector_condition: f64,
}

fn complex_solve(u: &Mat<c64>, b: &[c64]) -> Vec<c64> {
    let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    let x = u.partial_piv_lu().solve(rhs);
    (0..b.len()).map(|i| x[(i, 0)]).collect()
}

pub fn spectral_report(a: &Mat<f64>, w_td: &[f64], eta: f64) -> Result<SpectralReport> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return config(format!("spectral report needs a square matrix, got {}x{}", a.nrows(), a.ncols()));
    }
    check_len("w_TD", w_td.len(), n)?;
    if !eta.is_finite() || eta < 0.0 {
        return config(format!("step size must be non-negative, got {eta}"));
    }
    let eig = match a.eigen() {
        Ok(e) => e,
        Err(e) => return numerical(format!("eigendecomposition failed: {e:?}")),
    };
    let s = eig.S().column_vector();
    let raw_u = eig.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        let (x, y) = (s[i], s[j]);
        y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im))
    });
    let eigenvalues: Vec<c64> = order.iter().map(|&i| s[i]).collect();
    let eigenvectors = Mat::from_fn(n, n, |r, c| {
        let col = order[c];
        let nrm = (0..n).map(|k| raw_u[(k, col)].norm_sqr()).sum::<f64>().sqrt();
        raw_u[(r, col)] / nrm
    });

    let a_c = Mat::from_fn(n, n, |i, j| c64::new(a[(i, j)], 0.0));
    let av = &a_c * &eigenvectors;
    for k in 0..n {
        let res = (0..n).map(|i| (av[(i, k)] - eigenvalues[k] * eigenvectors[(i, k)]).norm_sqr()).sum::<f64>().sqrt();
        if res > RESIDUAL_TOL * (1.0 + eigenvalues[k].norm()) {
            return numerical(format!("eigenpair {k} has residual {res:e}"));
        }
    }
    let sv = match eigenvectors.singular_values() {
        Ok(v) => v,
        Err(e) => return numerical(format!("eigenvector conditioning failed: {e:?}")),
    };
    let hi = sv.iter().cloned().fold(0.0, f64::max);
    let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let eigenvector_condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(eigenvector_condition <= MAX_CONDITION) {
        return numerical(format!("A is defective or nearly so: eigenvector condition {eigenvector_condition:e}"));
    }

    let target: Vec<c64> = w_td.iter().map(|&v| c64::new(v, 0.0)).collect();
    let coefficients = complex_solve(&eigenvectors, &target);
    let total: f64 = coefficients.iter().map(|c| c.norm_sqr()).sum();
    let power: Vec<f64> = coefficients.iter().map(|c| if total > 0.0 { c.norm_sqr() / total } else { 0.0 }).collect();
    let mut acc = 0.0;
    let mut cumulative_power: Vec<f64> = power
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    if total > 0.0 {
        // pin the last entry against rounding
        cumulative_power[n - 1] = 1.0;
        for c in &mut cumulative_power {
            *c = c.min(1.0);
        }
    }
    let factors: Vec<c64> = eigenvalues.iter().map(|l| c64::new(1.0, 0.0) - *l * eta).collect();
    Ok(SpectralReport {
        timescales: factors.iter().map(|f| f.norm()).collect(),
        phases: factors.iter().map(|f| f.arg()).collect(),
        eigenvalues,
        eigenvectors,
        coefficients,
        eta,
        power,
        cumulative_power,
        eigenvector_condition,
    })
}

impl SpectralReport {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn modes(&self) -> Vec<SpectralMode> {
        (0..self.dim())
            .map(|k| SpectralMode {
                re_lambda: self.eigenvalues[k].re,
                im_lambda: self.eigenvalues[k].im,
                timescale: self.timescales[k],
                phase: self.phases[k],
                power: self.power[k],
                cumulative_power: self.cumulative_power[k],
            })
            .collect()
    }

    /// `k,re_lambda,im_lambda,timescale,power,cumulative_power` with `k` the
    /// 1-based mode rank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,re_lambda,im_lambda,timescale,power,cumulative_power\n");
        for (k, m) in self.modes().iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                k + 1,
                m.re_lambda,
                m.im_lambda,
                m.timescale,
                m.power,
                m.cumulative_power
            );
        }
        out
    }

    /// Largest mismatch between the spectrum and its complex conjugate.
    pub fn conjugate_pair_defect(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|l| self.eigenvalues.iter().map(|m| (m - l.conj()).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    }
}

/// `⟨w_n⟩ = w_TD + Σ_k (1 − ηλ_k)ⁿ c_k u_k` with `c` the eigen-coefficients of
/// `w₀ − w_TD`, at the report's step size.
pub fn mean_weight_modes(report: &SpectralReport, n: usize, w0: &[f64], w_td: &[f64]) -> Result<Vec<f64>> {
    let dim = report.dim();
    check_len("w0", w0.len(), dim)?;
    check_len("w_TD", w_td.len(), dim)?;
    if n == 0 {
        return Ok(w0.to_vec());
    }
    let dev: Vec<c64> = w0.iter().zip(w_td).map(|(a, b)| c64::new(a - b, 0.0)).collect();
    let c = complex_solve(&report.eigenvectors, &dev);
    let exp = i32::try_from(n).map_err(|_| crate::Error::Config(format!("iteration {n} out of range")))?;
    let scaled: Vec<c64> =
        (0..dim).map(|k| (c64::new(1.0, 0.0) - report.eigenvalues[k] * report.eta).powi(exp) * c[k]).collect();
    let scale = linalg::norm(w0).max(linalg::norm(w_td)).max(1.0);
    let mut out = Vec::with_capacity(dim);
    for (i, w) in w_td.iter().enumerate() {
        let z: c64 = (0..dim).map(|k| report.eigenvectors[(i, k)] * scaled[k]).sum();
        if z.im.abs() > IMAG_TOL * scale {
            return numerical(format!("mean mode sum has imaginary residue {:e} in coordinate {i}", z.im));
        }
        out.push(w + z.re);
    }
    Ok(out)
}

/// Finite MDP under a fixed policy.
#[derive(Clone, Debug)]
pub struct TabularMDP {
    /// Row-stochastic `|S| × |S|`.
    pub pi: Mat<f64>,
    /// State-visit distribution.
    pub p: Vec<f64>,
    /// Features, `N × |S|`.
    pub psi: Mat<f64>,
    pub r: Vec<f64>,
    pub gamma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TabularCase {
    /// `N < |S|`: projected fixed point in weight space.
    Underparameterized,
    /// `N ≥ |S|`: kernel solve in state space.
    Overparameterized,
}

#[derive(Clone, Debug, Serialize)]
pub struct TabularSolution {
    pub case: TabularCase,
    pub w_td: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
    pub v_hat: Vec<f64>,
    pub v_true: Vec<f64>,
    /// `Σ_s p(s) (V̂(s) − V(s))²`.
    pub irreducible_error: f64,
}

impl TabularMDP {
    pub fn validate(&self) -> Result<()> {
        let s = self.pi.nrows();
        if s == 0 || self.pi.ncols() != s {
            return config("transition matrix must be square and non-empty");
        }
        check_len("visit distribution", self.p.len(), s)?;
        check_len("reward vector", self.r.len(), s)?;
        check_len("feature columns", self.psi.ncols(), s)?;
        if !(0.0..1.0).contains(&self.gamma) {
            return config(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        for i in 0..s {
            let row: f64 = (0..s).map(|j| self.pi[(i, j)]).sum();
            if (row - 1.0).abs() > 1e-10 || (0..s).any(|j| self.pi[(i, j)] < 0.0) {
                return config(format!("transition row {i} is not a distribution (sum {row})"));
            }
        }
        let total: f64 = self.p.iter().sum();
        if (total - 1.0).abs() > 1e-10 || self.p.iter().any(|v| *v < 0.0) {
            return config(format!("visit distribution must be a probability vector (sum {total})"));
        }
        Ok(())
    }
}

fn checked_solve(m: &Mat<f64>, b: &[f64], what: &str) -> Result<Vec<f64>> {
    let cond = linalg::condition_number(m.as_ref())?;
    if !(cond <= MAX_CONDITION) {
        return numerical(format!("{what} is singular or ill-conditioned (cond = {cond:e})"));
    }
    Ok(linalg::solve(m.as_ref(), b))
}

pub fn tabular_fixed_point(mdp: &TabularMDP) -> Result<TabularSolution> {
    mdp.validate()?;
    let s = mdp.pi.nrows();
    let n = mdp.psi.nrows();
    let g = mdp.gamma;
    let resolvent = Mat::from_fn(s, s, |i, j| (if i == j { 1.0 } else { 0.0 }) - g * mdp.pi[(i, j)]);
    let v_true = checked_solve(&resolvent, &mdp.r, "I - gamma Pi")?;
    let (case, w_td, alpha, v_hat) = if n < s {
        // Ψ diag(p) (I − γΠ) Ψᵀ w = Ψ diag(p) R
        let dp_res = Mat::from_fn(s, s, |i, j| mdp.p[i] * resolvent[(i, j)]);
        let lhs = &mdp.psi * &dp_res * mdp.psi.transpose();
        let pr: Vec<f64> = (0..s).map(|i| mdp.p[i] * mdp.r[i]).collect();
        let rhs = linalg::matvec(mdp.psi.as_ref(), &pr);
        let w = checked_solve(&lhs, &rhs, "projected TD matrix")?;
        let v_hat = linalg::matvec_t(mdp.psi.as_ref(), &w);
        (TabularCase::Underparameterized, Some(w), None, v_hat)
    } else {
        // diag(p) (I − γΠ) K α = diag(p) R
        let k = mdp.psi.transpose() * &mdp.psi;
        let lhs = Mat::from_fn(s, s, |i, j| mdp.p[i] * resolvent[(i, j)]) * &k;
        let rhs: Vec<f64> = (0..s).map(|i| mdp.p[i] * mdp.r[i]).collect();
        let alpha = checked_solve(&lhs, &rhs, "kernel TD system")?;
        let v_hat = linalg::matvec(k.as_ref(), &alpha);
        (TabularCase::Overparameterized, None, Some(alpha), v_hat)
    };
    let irreducible_error = (0..s).map(|i| mdp.p[i] * (v_hat[i] - v_true[i]).powi(2)).sum();
    Ok(TabularSolution { case, w_td, alpha, v_hat, v_true, irreducible_error })
}
