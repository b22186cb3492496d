mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use srhc_core::basis::{BasisFamily, BasisKind};
use srhc_core::lqg::riccati_recursion;
use srhc_core::model::{build_cost_blocks, build_lifted_dynamics, CostBlocks, SystemModel};
use srhc_core::moments::{monte_carlo_moments, Moments, StageMoments};
use srhc_core::noise::NoiseSpec;
use srhc_core::optimizer::{assemble_qp, solve, SolverOptions};
use srhc_core::policy::{ConstraintSpec, NormKind};
use srhc_core::simulator::*;
use srhc_core::stats::mean_std;

/// `x0ᵀP_0x0 + Σ_t tr(P_{t+1}Σ)` for zero-mean noise.
fn lqg_expected_cost(sys: &SystemModel, cost: &CostBlocks, horizon: usize, x0: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let p = riccati_recursion(sys, cost, horizon).unwrap().value;
    x0.dot(&(&p[0] * x0)) + (1..=horizon).map(|t| (&p[t] * cov).trace()).sum::<f64>()
}

/// Moments of the map `e = w`, which makes disturbance feedback span all
/// causal linear state feedback.
fn identity_moments(cov: &DMatrix<f64>, horizon: usize) -> Moments {
    let n = cov.nrows();
    let stage = StageMoments {
        e_mean: DVector::zeros(n),
        e_second: cov.clone(),
        we_cross: cov.clone(),
        w_mean: DVector::zeros(n),
        w_second: cov.clone(),
        samples: u64::MAX,
        errors: None,
    };
    Moments::from_stage(stage, horizon).unwrap()
}

fn example_cost(n: usize) -> StageCost {
    StageCost::new(DMatrix::identity(n, n) * 3.0, DMatrix::identity(1, 1), DMatrix::identity(n, n) * 3.0).unwrap()
}

#[test]
fn unconstrained_optimum_with_full_noise_feedback_is_the_lqg_cost() {
    let mut r = rng(77);
    for i in 0..25 {
        let n = r.random_range(1..=3);
        let m = r.random_range(1..=2);
        let horizon = r.random_range(1..=6);
        let sys = SystemModel::new(random_matrix(&mut r, n, n, 0.9), random_matrix(&mut r, n, m, 1.0)).unwrap();
        let q: Vec<DMatrix<f64>> = (0..=horizon).map(|_| random_spd(&mut r, n, 0.2)).collect();
        let rr: Vec<DMatrix<f64>> = (0..horizon).map(|_| random_spd(&mut r, m, 0.2)).collect();
        let cost = build_cost_blocks(q, rr).unwrap();
        let cov = random_spd(&mut r, n, 0.1);
        let x0 = random_vector(&mut r, n, 3.0);
        // Only the shape of the basis matters here; the moments are exact.
        let basis = BasisFamily::new(BasisKind::Saturation, n).unwrap();
        let lifted = build_lifted_dynamics(&sys, horizon).unwrap();
        let moments = identity_moments(&cov, horizon);
        let spec = ConstraintSpec::rowwise_inf(1e9).unwrap();
        let qp = assemble_qp(&lifted, &cost, &moments, &basis, &x0, &spec).unwrap();
        let report = solve(&qp.problem(), &SolverOptions::default()).unwrap();
        assert!(report.certified(), "instance {i}");
        let expected = lqg_expected_cost(&sys, &cost, horizon, &x0, &cov);
        assert!(rel_err(report.objective, expected) <= 1e-8, "instance {i}: {} vs {expected}", report.objective);
    }
}

#[test]
fn simulated_lqg_cost_matches_riccati_value() {
    let sys = stable_plant();
    let cov = stable_plant_noise_cov();
    let cost = example_cost(3);
    let horizon = 20;
    let x0 = DVector::from_vec(vec![5.0, -3.0, 2.0]);
    let noise = NoiseSpec::zero_mean_gaussian(cov.clone()).unwrap();
    let batch = run_receding_horizon(&sys, &cost, &ControllerKind::Lqg { horizon }, &noise, &x0, horizon, 40_000, 5).unwrap();
    let stats = aggregate(&batch).unwrap();
    let expected = lqg_expected_cost(&sys, &cost.blocks(horizon).unwrap(), horizon, &x0, &cov);
    let se = stats.std_cost / (stats.used as f64).sqrt();
    assert!((stats.mean_cost - expected).abs() <= 4.0 * se, "{} vs {expected} (se {se})", stats.mean_cost);
}

#[test]
fn lqg_is_no_worse_than_the_sigmoid_policy_unconstrained() {
    let sys = stable_plant();
    let cov = stable_plant_noise_cov();
    let cost = example_cost(3);
    let horizon = 50;
    let noise = NoiseSpec::zero_mean_gaussian(cov).unwrap();
    let basis = BasisFamily::new(BasisKind::ScaledSigmoid { alpha: 0.2, beta: 0.04 }, 3).unwrap();
    let moments = monte_carlo_moments(&basis, &noise, horizon, 100_000, 9).unwrap();
    let ours = PreparedController::new(
        &sys,
        &cost,
        ControllerKind::RhcPolicy {
            horizon,
            control_horizon: horizon,
            spec: ConstraintSpec::rowwise_inf(1e9).unwrap(),
            basis,
            moments,
            options: SolverOptions::default(),
        },
    )
    .unwrap();
    let lqg = PreparedController::new(&sys, &cost, ControllerKind::Lqg { horizon }).unwrap();
    let mut r = rng(31);
    for _ in 0..3 {
        let x0 = DVector::from_fn(3, |_, _| r.random_range(-100.0..100.0));
        let a = run_prepared(&lqg, &noise, &x0, horizon, 100, 12).unwrap();
        let b = run_prepared(&ours, &noise, &x0, horizon, 100, 12).unwrap();
        assert_eq!(b.flagged(), 0);
        let diff: Vec<f64> = a
            .realizations
            .iter()
            .zip(&b.realizations)
            .map(|(x, y)| x.path.cumulative_cost - y.path.cumulative_cost)
            .collect();
        let (mean, std) = mean_std(&diff);
        let se = std / (diff.len() as f64).sqrt();
        assert!(mean <= 3.0 * se, "x0 = {x0:?}: mean difference {mean}, se {se}");
        let ratio = paired_cost_ratio(&a, &b).unwrap();
        let (mr, _) = mean_std(&ratio);
        assert!(mr > 0.9 && mr < 1.01, "ratio {mr}");
    }
}

fn bounded_policy(horizon: usize, control_horizon: usize, u_max: f64) -> (SystemModel, StageCost, NoiseSpec, ControllerKind) {
    let sys = stable_plant();
    let cov = stable_plant_noise_cov();
    let noise = NoiseSpec::zero_mean_gaussian(cov).unwrap();
    let basis = BasisFamily::new(BasisKind::ScaledSigmoid { alpha: 0.2, beta: 0.04 }, 3).unwrap();
    let moments = monte_carlo_moments(&basis, &noise, horizon, 20_000, 3).unwrap();
    let kind = ControllerKind::RhcPolicy {
        horizon,
        control_horizon,
        spec: ConstraintSpec::rowwise_inf(u_max).unwrap(),
        basis,
        moments,
        options: SolverOptions::default(),
    };
    (sys, example_cost(3), noise, kind)
}

#[test]
fn restarting_at_a_segment_boundary_reproduces_the_suffix() {
    let (sys, cost, noise, kind) = bounded_policy(5, 2, 3.0);
    let prepared = PreparedController::new(&sys, &cost, kind).unwrap();
    let x0 = DVector::from_vec(vec![10.0, -10.0, 10.0]);
    let batch = run_prepared(&prepared, &noise, &x0, 20, 4, 8).unwrap();
    let sampler = noise.sampler().unwrap();
    for real in &batch.realizations {
        let w = sampler.path(8, real.stream, 20);
        for k in [1usize, 3, 7] {
            let t = 2 * k;
            let tail = prepared.simulate_path(&real.path.states[t], t, &w[t..]).unwrap();
            assert_eq!(&tail.states[..], &real.path.states[t..]);
            assert_eq!(&tail.inputs[..], &real.path.inputs[t..]);
            assert_eq!(&tail.stage_costs[..], &real.path.stage_costs[t..]);
        }
    }
}

#[test]
fn recorded_inputs_respect_hard_bounds_exactly() {
    let x0 = DVector::from_vec(vec![40.0, -40.0, 40.0]);
    let (sys, cost, noise, kind) = bounded_policy(6, 2, 2.5);
    let controllers = [
        kind,
        ControllerKind::CeMpc { horizon: 6, control_horizon: 1, bound: 2.5, options: SolverOptions::default() },
        ControllerKind::SaturatedLqg { horizon: 6, bound: 2.5 },
    ];
    for c in &controllers {
        let batch = run_receding_horizon(&sys, &cost, c, &noise, &x0, 30, 20, 1).unwrap();
        let (p, u) = c.input_bound().unwrap();
        assert_eq!(p, NormKind::Inf);
        assert!(batch.max_input_norm(NormKind::Inf) <= u, "{}", c.label());
        assert!(batch.max_input_norm(NormKind::Inf) >= 0.99 * u, "{} never saturates", c.label());
    }
}

#[test]
fn final_partial_segment_is_truncated() {
    let (sys, cost, noise, kind) = bounded_policy(4, 3, 5.0);
    let x0 = DVector::from_vec(vec![1.0, 2.0, 3.0]);
    let batch = run_receding_horizon(&sys, &cost, &kind, &noise, &x0, 7, 3, 2).unwrap();
    for real in &batch.realizations {
        assert_eq!(real.path.solves, 3);
        assert_eq!(real.path.inputs.len(), 7);
        assert_eq!(real.path.states.len(), 8);
        assert_eq!(real.path.stage_costs.len(), 8);
    }
}

#[test]
fn identical_seeds_give_identical_batches() {
    let (sys, cost, noise, kind) = bounded_policy(4, 2, 3.0);
    let x0 = DVector::from_vec(vec![3.0, 0.0, -3.0]);
    let a = run_receding_horizon(&sys, &cost, &kind, &noise, &x0, 12, 6, 21).unwrap();
    let b = run_receding_horizon(&sys, &cost, &kind, &noise, &x0, 12, 6, 21).unwrap();
    assert_eq!(a, b);
    let ratio = paired_cost_ratio(&a, &b).unwrap();
    assert!(ratio.iter().all(|&v| v == 1.0));
    let c = run_receding_horizon(&sys, &cost, &kind, &noise, &x0, 12, 6, 22).unwrap();
    assert_ne!(a.realizations[0].path.states, c.realizations[0].path.states);
    assert!(paired_cost_ratio(&a, &c).is_err());
}

#[test]
fn noiseless_rest_is_preserved_by_every_controller() {
    let sys = stable_plant();
    let noise = NoiseSpec::zero_mean_gaussian(DMatrix::zeros(3, 3)).unwrap();
    let basis = BasisFamily::new(BasisKind::Saturation, 3).unwrap();
    let kind = ControllerKind::RhcPolicy {
        horizon: 4,
        control_horizon: 2,
        spec: ConstraintSpec::rowwise_inf(3.0).unwrap(),
        moments: monte_carlo_moments(&basis, &noise, 4, 10_000, 1).unwrap(),
        basis,
        options: SolverOptions::default(),
    };
    let cost = example_cost(3);
    let x0 = DVector::zeros(3);
    for c in [
        kind,
        ControllerKind::CeMpc { horizon: 4, control_horizon: 2, bound: 1.0, options: SolverOptions::default() },
        ControllerKind::Lqg { horizon: 4 },
        ControllerKind::SaturatedLqg { horizon: 4, bound: 1.0 },
    ] {
        let batch = run_receding_horizon(&sys, &cost, &c, &noise, &x0, 9, 2, 0).unwrap();
        for real in &batch.realizations {
            assert!(real.path.states.iter().all(|x| x.iter().all(|&v| v == 0.0)), "{}", c.label());
            assert!(real.path.inputs.iter().all(|u| u.iter().all(|&v| v == 0.0)), "{}", c.label());
            assert_eq!(real.path.cumulative_cost, 0.0);
        }
    }
}

#[test]
fn flagged_realizations_are_excluded_from_aggregates() {
    let sys = stable_plant();
    let noise = NoiseSpec::zero_mean_gaussian(stable_plant_noise_cov()).unwrap();
    let kind = ControllerKind::CeMpc {
        horizon: 8,
        control_horizon: 2,
        bound: 1.0,
        options: SolverOptions { max_iter: 1, ..SolverOptions::default() },
    };
    let x0 = DVector::from_vec(vec![30.0, -30.0, 30.0]);
    let batch = run_receding_horizon(&sys, &example_cost(3), &kind, &noise, &x0, 6, 5, 3).unwrap();
    if batch.flagged() == batch.realizations.len() {
        assert!(aggregate(&batch).is_err());
    } else {
        let stats = aggregate(&batch).unwrap();
        assert_eq!(stats.used + stats.flagged, 5);
    }
    assert!(batch.flagged() > 0);
}
