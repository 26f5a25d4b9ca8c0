mod common;

use common::*;
use faer::Mat;
use proptest::prelude::*;
use tdmf_core::features::EpisodeFeatures;
use tdmf_core::theory::CurveOptions;
use tdmf_core::*;

fn episode(n: usize, times: usize, vals: &[f64], rewards: &[f64]) -> Episode {
    Episode {
        features: EpisodeFeatures::Dense(Mat::from_fn(times, n, |t, k| vals[t * n + k])),
        rewards: rewards.to_vec(),
    }
}

fn episodes(n: usize, times: usize, count: usize) -> impl Strategy<Value = Vec<Episode>> {
    proptest::collection::vec(
        (proptest::collection::vec(-2.0f64..2.0, n * times), proptest::collection::vec(-1.0f64..1.0, times)),
        count,
    )
    .prop_map(move |eps| eps.iter().map(|(v, r)| episode(n, times, v, r)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batch_step_is_mean_of_single_steps(
        eps in episodes(3, 4, 5),
        w in proptest::collection::vec(-1.0f64..1.0, 3),
        eta in 0.0f64..1.0,
        gamma in 0.0f64..0.99,
    ) {
        let (batch, _) = td_update_step(&w, &eps, eta, gamma).unwrap();
        let mut avg = [0.0; 3];
        for ep in &eps {
            let (single, _) = td_update_step(&w, std::slice::from_ref(ep), eta, gamma).unwrap();
            for k in 0..3 {
                avg[k] += (single[k] - w[k]) / eps.len() as f64;
            }
        }
        for k in 0..3 {
            prop_assert!((batch[k] - w[k] - avg[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn step_is_affine_in_rewards_and_weights(
        eps in episodes(2, 3, 3),
        w in proptest::collection::vec(-1.0f64..1.0, 2),
        scale in -3.0f64..3.0,
        gamma in 0.0f64..0.99,
    ) {
        // scaling rewards and weights together scales the increment
        let eta = 0.3;
        let (base, _) = td_update_step(&w, &eps, eta, gamma).unwrap();
        let scaled_eps: Vec<Episode> = eps.iter().map(|e| Episode {
            features: e.features.clone(),
            rewards: e.rewards.iter().map(|r| r * scale).collect(),
        }).collect();
        let ws: Vec<f64> = w.iter().map(|x| x * scale).collect();
        let (scaled, _) = td_update_step(&ws, &scaled_eps, eta, gamma).unwrap();
        for k in 0..2 {
            prop_assert!((scaled[k] - ws[k] - scale * (base[k] - w[k])).abs() < 1e-10);
        }
    }

    #[test]
    fn shaping_telescopes(
        rewards in proptest::collection::vec(-1.0f64..1.0, 2..8),
        phi_seed in proptest::collection::vec(-2.0f64..2.0, 8),
        gamma in 0.0f64..0.99,
    ) {
        let t_len = rewards.len() - 1;
        let phi = &phi_seed[..rewards.len()];
        let shaped = reshape_rewards(&rewards, phi, gamma);
        let disc = |r: &[f64]| (0..t_len).map(|t| gamma.powi(t as i32) * r[t]).sum::<f64>();
        let lhs = disc(&shaped) - disc(&rewards);
        prop_assert!((lhs + gamma.powi(t_len as i32) * phi[t_len]).abs() < 1e-12);
    }

    #[test]
    fn cumulative_power_is_monotone_and_permutation_invariant(
        diag in proptest::collection::vec(0.1f64..3.0, 5),
        off in proptest::collection::vec(-0.1f64..0.1, 25),
        w in proptest::collection::vec(-1.0f64..1.0, 5),
        shift in 0usize..5,
    ) {
        let n = 5;
        let a = Mat::from_fn(n, n, |i, j| if i == j { diag[i] } else { off[i * n + j] });
        let Ok(r) = spectral_report(&a, &w, 0.1) else { return Ok(()); };
        for k in 1..n {
            prop_assert!(r.cumulative_power[k] >= r.cumulative_power[k - 1] - 1e-15);
        }
        if w.iter().any(|v| *v != 0.0) {
            prop_assert_eq!(r.cumulative_power[n - 1], 1.0);
        }
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let pa = Mat::from_fn(n, n, |i, j| a[(perm[i], perm[j])]);
        let pw: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
        let rp = spectral_report(&pa, &pw, 0.1).unwrap();
        for k in 0..n {
            prop_assert!((r.cumulative_power[k] - rp.cumulative_power[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn moment_matrix_stays_symmetric_psd(
        seed in 0u64..1000,
        gamma in 0.0f64..0.9,
        batch in 1usize..8,
        eta in 0.01f64..0.2,
    ) {
        let ens = random_dense(3, 2, 0.3, seed);
        let p = TheoryProblem::new(&ens, random_vec(3, seed + 1), gamma).unwrap();
        let mut c = LearnerConfig::new(gamma, batch, 20, EtaSchedule::constant(eta));
        c.w0 = Some(random_vec(3, seed + 2));
        let run = direct_recurrence_curve(&p, &c, &CurveOptions { record_states: true }).unwrap();
        for s in &run.states {
            let m = s.m.to_dense();
            prop_assert_eq!(linalg::max_asymmetry(m.as_ref()), 0.0);
            let lo = linalg::min_sym_eigenvalue(m.as_ref()).unwrap();
            prop_assert!(lo > -1e-10 * (1.0 + linalg::max_abs(m.as_ref())));
        }
        prop_assert!(run.curve.mean.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn infinite_batch_mean_is_independent_of_batch(
        seed in 0u64..1000,
        batch in 1usize..20,
    ) {
        let ens = random_dense(3, 2, 0.1, seed);
        let p = TheoryProblem::new(&ens, random_vec(3, seed + 5), 0.5).unwrap();
        let a = LearnerConfig::new(0.5, batch, 15, EtaSchedule::constant(0.1));
        let mut b = a.clone();
        b.batch = BatchSize::Infinite;
        let ra = dmft_curve(&p, &a, &CurveOptions::default()).unwrap();
        let rb = dmft_curve(&p, &b, &CurveOptions::default()).unwrap();
        prop_assert_eq!(ra.final_state.mean_w, rb.final_state.mean_w);
        prop_assert!(ra.curve.mean.iter().zip(&rb.curve.mean).all(|(x, y)| x >= &(y - 1e-15)));
    }
}
