#![allow(dead_code)]

use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;
use tdmf_core::rng::stream;
use tdmf_core::FeatureEnsemble;

/// N = 1, T = 1 with Σ(0,0) = Σ(1,1) = 1 and Σ(0,1) = 0.5.
pub fn scalar_ensemble() -> FeatureEnsemble {
    let b = |v: f64| Mat::from_fn(1, 1, |_, _| v);
    FeatureEnsemble::dense(Mat::zeros(2, 1), vec![b(1.0), b(0.5), b(0.5), b(1.0)]).unwrap()
}

/// Random episodes `ψ(t) = ρ ψ(t−1) + z_t + shift`, mixed by a fixed random matrix.
pub fn random_episodes(n: usize, horizon: usize, count: usize, shift: f64, seed: u64) -> Vec<Mat<f64>> {
    let mut rng = stream(seed);
    let mix = Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.3 * rng.sample::<f64, _>(StandardNormal) });
    (0..count)
        .map(|_| {
            let mut raw = Mat::<f64>::zeros(horizon + 1, n);
            for k in 0..n {
                let mut x: f64 = rng.sample(StandardNormal);
                for t in 0..=horizon {
                    if t > 0 {
                        x = 0.6 * x + 0.8 * rng.sample::<f64, _>(StandardNormal);
                    }
                    raw[(t, k)] = x;
                }
            }
            Mat::from_fn(horizon + 1, n, |t, i| (0..n).map(|k| raw[(t, k)] * mix[(i, k)]).sum::<f64>() + shift)
        })
        .collect()
}

/// Exact ensemble of the uniform law over the given episodes.
pub fn ensemble_of(episodes: &[Mat<f64>]) -> FeatureEnsemble {
    let (times, n) = (episodes[0].nrows(), episodes[0].ncols());
    let c = episodes.len() as f64;
    let mean = Mat::from_fn(times, n, |t, k| episodes.iter().map(|e| e[(t, k)]).sum::<f64>() / c);
    let blocks = (0..times * times)
        .map(|r| {
            let (x, y) = (r / times, r % times);
            Mat::from_fn(n, n, |i, j| episodes.iter().map(|e| e[(x, i)] * e[(y, j)]).sum::<f64>() / c)
        })
        .collect();
    FeatureEnsemble::dense(mean, blocks).unwrap()
}

pub fn random_dense(n: usize, horizon: usize, shift: f64, seed: u64) -> FeatureEnsemble {
    ensemble_of(&random_episodes(n, horizon, 400, shift, seed))
}

pub fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / (1.0 + x.abs().max(y.abs()))).fold(0.0, f64::max)
}
