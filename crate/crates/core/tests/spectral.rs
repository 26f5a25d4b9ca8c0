mod common;

use common::*;
use faer::{c64, Mat};
use rand::Rng;
use tdmf_core::rng::stream;
use tdmf_core::spectral::{TabularCase, TabularMDP};
use tdmf_core::theory::CurveOptions;
use tdmf_core::*;

fn random_matrix(n: usize, seed: u64) -> Mat<f64> {
    let v = random_vec(n * n, seed);
    Mat::from_fn(n, n, |i, j| v[i * n + j] / (n as f64).sqrt() + if i == j { 1.0 } else { 0.0 })
}

#[test]
fn mode_sum_equals_matrix_power() {
    for seed in 0..5 {
        let n = 6;
        let a = random_matrix(n, 100 + seed);
        let w = random_vec(n, 200 + seed);
        let eta = 0.3;
        let r = spectral_report(&a, &w, eta).unwrap();
        assert!(r.conjugate_pair_defect() < 1e-10);
        let k = Mat::from_fn(n, n, |i, j| (if i == j { 1.0 } else { 0.0 }) - eta * a[(i, j)]);
        let mut direct = w.clone();
        for step in 0..=50usize {
            let modes: Vec<c64> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|m| {
                            (c64::new(1.0, 0.0) - r.eigenvalues[m] * eta).powi(step as i32)
                                * r.coefficients[m]
                                * r.eigenvectors[(i, m)]
                        })
                        .sum()
                })
                .collect();
            for i in 0..n {
                assert!((modes[i].re - direct[i]).abs() < 1e-8 && modes[i].im.abs() < 1e-8, "seed {seed} step {step}");
            }
            direct = linalg::matvec(k.as_ref(), &direct);
        }
    }
}

#[test]
fn mean_modes_match_recursion() {
    let ens = random_dense(8, 2, 0.2, 31);
    let p = TheoryProblem::new(&ens, random_vec(8, 32), 0.7).unwrap();
    let eta = 0.1;
    let mut c = LearnerConfig::new(0.7, 2, 25, EtaSchedule::constant(eta));
    let w0 = random_vec(8, 33);
    c.w0 = Some(w0.clone());
    let run = dmft_curve(&p, &c, &CurveOptions::default()).unwrap();
    let r = spectral_report(&p.reduced.a, &p.w_td, eta).unwrap();
    let w25 = mean_weight_modes(&r, 25, &w0, &p.w_td).unwrap();
    assert!(max_rel_diff(&w25, &run.final_state.mean_w) < 1e-8);
    assert_eq!(mean_weight_modes(&r, 0, &w0, &p.w_td).unwrap(), w0);
    let far = mean_weight_modes(&r, 100_000, &w0, &p.w_td).unwrap();
    assert!(max_rel_diff(&far, &p.w_td) < 1e-10);
}

#[test]
fn fixed_point_residual_on_random_instances() {
    for seed in 0..5 {
        let ens = random_dense(6, 3, 0.3, 40 + seed);
        let w_r = random_vec(6, 50 + seed);
        let reduced = reduced_matrices(&ens, 0.8).unwrap();
        let w = td_fixed_point(&reduced, &w_r).unwrap();
        let lhs = linalg::matvec(reduced.a.as_ref(), &w);
        let rhs = linalg::matvec(reduced.sigma_bar.as_ref(), &w_r);
        assert!(linalg::norm(&linalg::sub(&lhs, &rhs)) <= 1e-10 * linalg::norm(&rhs));
    }
}

#[test]
fn singular_a_is_rejected() {
    let blocks = (0..4).map(|_| Mat::from_fn(2, 2, |i, j| if i == 0 && j == 0 { 1.0 } else { 0.0 })).collect();
    let ens = FeatureEnsemble::dense(Mat::zeros(2, 2), blocks).unwrap();
    let reduced = reduced_matrices(&ens, 0.5).unwrap();
    assert!(td_fixed_point(&reduced, &[1.0, 1.0]).is_err());
    assert!(TheoryProblem::new(&ens, vec![1.0, 1.0], 0.5).is_err());
}

#[test]
fn overparameterized_tabular_is_exact() {
    let mut rng = stream(60);
    for _ in 0..5 {
        let (s, n) = (5, 7);
        let pi = {
            let raw = Mat::from_fn(s, s, |_, _| rng.random::<f64>() + 0.05);
            let rows: Vec<f64> = (0..s).map(|i| (0..s).map(|j| raw[(i, j)]).sum()).collect();
            Mat::from_fn(s, s, |i, j| raw[(i, j)] / rows[i])
        };
        let mdp = TabularMDP {
            pi,
            p: vec![0.2; s],
            psi: Mat::from_fn(n, s, |_, _| rng.random::<f64>() - 0.5),
            r: (0..s).map(|_| rng.random::<f64>()).collect(),
            gamma: 0.9,
        };
        let sol = tabular_fixed_point(&mdp).unwrap();
        assert_eq!(sol.case, TabularCase::Overparameterized);
        let gap = sol.v_hat.iter().zip(&sol.v_true).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap <= 1e-8, "gap {gap}");
    }
}

#[test]
fn csv_has_expected_columns() {
    let r = spectral_report(&linalg::diag(&[0.5, 0.25]), &[1.0, 1.0], 1.0).unwrap();
    let csv = r.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "k,re_lambda,im_lambda,timescale,power,cumulative_power");
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[0], 1.0);
    assert!((first[1] - 0.5).abs() < 1e-15 && (first[3] - 0.5).abs() < 1e-15);
    assert_eq!(csv.lines().count(), 3);
}
