use crate::error::{check_len, config, Result};
use crate::features::FeatureEnsemble;

/// Largest `N·(T+1)` accepted for an explicit fourth-moment tensor.
pub const MAX_TENSOR_DIM: usize = 64;

/// Law of the feature fourth moments `E[ψ_a ψ_b ψ_c ψ_d]`.
#[derive(Clone, Debug)]
pub enum FourthMomentModel {
    /// Explicit tensor over the time-major coordinates `a = t·N + k`.
    ExplicitTensor(FourthMomentTensor),
    /// Isserlis pairing of the ensemble's raw second moments (exact for
    /// zero-mean Gaussian features).
    GaussianWick,
    /// i.i.d. ±1 coordinates: the Wick result plus the fourth cumulant −2 on
    /// the fully coincident index.
    HypercubeIid,
}

#[derive(Clone, Debug)]
pub struct FourthMomentTensor {
    n: usize,
    times: usize,
    values: Vec<f64>,
}

impl FourthMomentTensor {
    pub fn new(n: usize, times: usize, values: Vec<f64>) -> Result<Self> {
        let d = n * times;
        if d == 0 || d > MAX_TENSOR_DIM {
            return config(format!("explicit fourth-moment tensor needs 1 <= N(T+1) <= {MAX_TENSOR_DIM}, got {d}"));
        }
        check_len("fourth-moment tensor", values.len(), d.pow(4))?;
        let t = FourthMomentTensor { n, times, values };
        t.check_symmetry(1e-12)?;
        Ok(t)
    }

    /// Wick tensor `S_ab S_cd + S_ac S_bd + S_ad S_bc` from the raw second moments.
    pub fn gaussian(ensemble: &FeatureEnsemble) -> Result<Self> {
        let (n, times) = (ensemble.dim(), ensemble.times());
        let d = n * times;
        if d > MAX_TENSOR_DIM {
            return config(format!("explicit fourth-moment tensor needs N(T+1) <= {MAX_TENSOR_DIM}, got {d}"));
        }
        let mut s = vec![0.0; d * d];
        for x in 0..times {
            for y in 0..times {
                let b = ensemble.block(x, y);
                for i in 0..n {
                    for j in 0..n {
                        s[(x * n + i) * d + y * n + j] = b[(i, j)];
                    }
                }
            }
        }
        let mut values = vec![0.0; d.pow(4)];
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    for e in 0..d {
                        values[((a * d + b) * d + c) * d + e] =
                            s[a * d + b] * s[c * d + e] + s[a * d + c] * s[b * d + e] + s[a * d + e] * s[b * d + c];
                    }
                }
            }
        }
        FourthMomentTensor::new(n, times, values)
    }

    /// Moments of i.i.d. ±1 coordinates by direct counting: the product of
    /// four coordinates has expectation 1 when every coordinate occurs an
    /// even number of times and 0 otherwise.
    pub fn hypercube(n: usize, horizon: usize) -> Result<Self> {
        let times = horizon + 1;
        let d = n * times;
        if d == 0 || d > MAX_TENSOR_DIM {
            return config(format!("explicit fourth-moment tensor needs 1 <= N(T+1) <= {MAX_TENSOR_DIM}, got {d}"));
        }
        let mut values = vec![0.0; d.pow(4)];
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    for e in 0..d {
                        let idx = [a, b, c, e];
                        let even = idx.iter().all(|x| idx.iter().filter(|y| *y == x).count() % 2 == 0);
                        if even {
                            values[((a * d + b) * d + c) * d + e] = 1.0;
                        }
                    }
                }
            }
        }
        FourthMomentTensor::new(n, times, values)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn times(&self) -> usize {
        self.times
    }

    pub fn get(&self, a: usize, b: usize, c: usize, e: usize) -> f64 {
        let d = self.n * self.times;
        self.values[((a * d + b) * d + c) * d + e]
    }

    /// Invariance under the adjacent transpositions, which generate all
    /// permutations of the four slots.
    pub fn check_symmetry(&self, tol: f64) -> Result<()> {
        let d = self.n * self.times;
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    for e in 0..d {
                        let v = self.get(a, b, c, e);
                        for (w, name) in [
                            (self.get(b, a, c, e), "(12)"),
                            (self.get(a, c, b, e), "(23)"),
                            (self.get(a, b, e, c), "(34)"),
                        ] {
                            if (v - w).abs() > tol * (1.0 + v.abs()) {
                                return config(format!(
                                    "fourth-moment tensor breaks symmetry {name} at ({a},{b},{c},{e})"
                                ));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
