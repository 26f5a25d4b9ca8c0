mod common;

use common::*;
use faer::Mat;
use tdmf_core::features::{FiniteSource, GaussianSurrogate, PowerLawProcess};
use tdmf_core::rng::stream;
use tdmf_core::simulator::ValueTarget;
use tdmf_core::spectral::{tabular_fixed_point, TabularMDP};
use tdmf_core::theory::{initial_moment_state, CurveOptions};
use tdmf_core::*;

fn td_errors(ep: &Episode, w: &[f64], gamma: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..ep.times()).map(|t| linalg::dot(&ep.feature(t), w)).collect();
    (0..ep.times() - 1).map(|t| ep.rewards[t] + gamma * v[t + 1] - v[t]).collect()
}

#[test]
fn q_table_matches_sampled_td_errors() {
    let (n, horizon, gamma) = (3, 3, 0.7);
    let ens = random_dense(n, horizon, 0.4, 21);
    let w_r = random_vec(n, 22);
    let w0 = random_vec(n, 23);
    let p = TheoryProblem::new(&ens, w_r.clone(), gamma).unwrap();
    let state = initial_moment_state(&p, &w0, BatchSize::Finite(1), None, None).unwrap();
    let source = TrajectorySource::GaussianSurrogate(GaussianSurrogate::new(&ens, w_r).unwrap());
    let mut rng = stream(24);
    let count = 40_000;
    let mut sum = Mat::<f64>::zeros(horizon, horizon);
    let mut sq = Mat::<f64>::zeros(horizon, horizon);
    for _ in 0..count {
        let d = td_errors(&source.sample_episode(&mut rng), &w0, gamma);
        for t in 0..horizon {
            for s in 0..horizon {
                sum[(t, s)] += d[t] * d[s];
                sq[(t, s)] += (d[t] * d[s]).powi(2);
            }
        }
    }
    let c = count as f64;
    for t in 0..horizon {
        for s in 0..horizon {
            let mean = sum[(t, s)] / c;
            let se = ((sq[(t, s)] / c - mean * mean) / c).sqrt();
            assert!((mean - state.q[(t, s)]).abs() < 4.0 * se, "Q({t},{s}): {mean} vs {}", state.q[(t, s)]);
        }
    }
}

#[test]
fn surrogate_reproduces_moments() {
    let ens = random_dense(3, 2, 0.5, 25);
    let source = TrajectorySource::GaussianSurrogate(GaussianSurrogate::new(&ens, vec![1.0; 3]).unwrap());
    let est = estimate_ensemble(&source, 40_000, 26).unwrap();
    for x in 0..3 {
        for y in 0..3 {
            let (a, b) = (ens.block(x, y), est.block(x, y));
            let scale = (0..3).map(|i| ens.block(x, x)[(i, i)]).fold(0.0, f64::max);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((a[(i, j)] - b[(i, j)]).abs() < 0.04 * scale, "Σ({x},{y})[{i},{j}]");
                }
            }
        }
    }
}

#[test]
fn grid_moments_match_markov_chain() {
    let spec = GridWorldSpec::new(3, 1.0, 4, vec![0.0; 9]);
    let grid = GridWorld::new(spec).unwrap();
    let table = grid.table().clone();
    let pi = grid.transition_matrix();
    let marg = grid.marginals();
    let source = TrajectorySource::GridDiffusion(grid);
    let est = estimate_ensemble(&source, 30_000, 27).unwrap();
    let mut power = vec![Mat::<f64>::identity(9, 9)];
    for k in 1..5 {
        power.push(&power[k - 1] * &pi);
    }
    for x in 0..5 {
        for y in x..5 {
            let dp = Mat::from_fn(9, 9, |i, j| if i == j { marg[x][i] } else { 0.0 });
            let exact = table.transpose() * &dp * &power[y - x] * table.as_ref();
            let got = est.block(x, y);
            for i in 0..9 {
                for j in 0..9 {
                    assert!((exact[(i, j)] - got[(i, j)]).abs() < 0.03, "Σ({x},{y})[{i},{j}]");
                }
            }
        }
    }
}

#[test]
fn simulation_tracks_direct_recurrence() {
    let (n, horizon, gamma) = (12, 5, 0.6);
    let (ens, w_r) = build_powerlaw_ensemble(n, horizon, 1.2, 0.8).unwrap();
    let p = TheoryProblem::new(&ens, w_r, gamma).unwrap();
    let source = TrajectorySource::PowerLawOu(PowerLawProcess::new(n, horizon, 1.2, 0.8).unwrap());
    let config = LearnerConfig::new(gamma, 4, 60, EtaSchedule::constant(0.3));
    let seeds: Vec<u64> = (0..400).collect();
    let target = ValueTarget { reduced: &p.reduced, w_td: &p.w_td };
    let sim = run_td(&config, &source, &target, &seeds).unwrap();
    let theory = direct_recurrence_curve(&p, &config, &CurveOptions::default()).unwrap();
    for step in [0, 5, 10, 20, 40, 60] {
        let (s, t, se) = (sim.mean[step], theory.curve.mean[step], sim.stderr[step]);
        assert!((s - t).abs() < 4.0 * se + 1e-12, "step {step}: sim {s} ± {se}, theory {t}");
    }
}

#[test]
fn deterministic_episode_converges_to_tabular_weights() {
    let gamma = 0.5;
    let features = Mat::from_fn(2, 1, |_, _| 1.0);
    let source = TrajectorySource::Finite(FiniteSource::new(vec![(features, vec![1.0, 0.0])]).unwrap());
    let mdp = TabularMDP {
        pi: Mat::from_fn(2, 2, |_, j| if j == 1 { 1.0 } else { 0.0 }),
        p: vec![1.0, 0.0],
        psi: Mat::from_fn(1, 2, |_, _| 1.0),
        r: vec![1.0, 0.0],
        gamma,
    };
    let expected = tabular_fixed_point(&mdp).unwrap().w_td.unwrap();
    let reduced = ReducedMatrices {
        sigma_bar: linalg::diag(&[1.0]),
        sigma_plus: linalg::diag(&[1.0]),
        a: linalg::diag(&[0.5]),
        gamma,
        diagonal: true,
    };
    let target = ValueTarget { reduced: &reduced, w_td: &expected };
    let config = LearnerConfig::new(gamma, 1, 200, EtaSchedule::constant(0.5));
    let run = run_td(&config, &source, &target, &[1]).unwrap();
    assert!((run.traces[0].final_weights[0] - expected[0]).abs() < 1e-8);
    assert!((expected[0] - 2.0).abs() < 1e-12);
}

#[test]
fn hypercube_simulation_matches_closed_form() {
    let n = 10;
    let source =
        TrajectorySource::HypercubeIid(tdmf_core::features::HypercubeProcess::new(n, 1, vec![1.0; n]).unwrap());
    let ens = hypercube_ensemble(n, 1).unwrap();
    let p = TheoryProblem::new(&ens, vec![1.0; n], 0.0).unwrap();
    let config = LearnerConfig::new(0.0, 2, 20, EtaSchedule::constant(0.2));
    let seeds: Vec<u64> = (0..1000).collect();
    let target = ValueTarget { reduced: &p.reduced, w_td: &p.w_td };
    let sim = run_td(&config, &source, &target, &seeds).unwrap();
    for step in [1, 5, 10, 20] {
        let (h, _) = hypercube_closed_form(n, 2, 0.2, step);
        assert!((sim.mean[step] - h).abs() < 4.0 * sim.stderr[step], "step {step}: {} vs {h}", sim.mean[step]);
    }
}
