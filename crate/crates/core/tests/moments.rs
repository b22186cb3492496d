mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use srhc_core::basis::{eval_basis, BasisFamily, BasisKind};
use srhc_core::moments::{estimate_stage_moments, monte_carlo_moments, StageMoments};
use srhc_core::noise::{sample_noise, NoiseSpec};
use srhc_core::special;

fn within(got: f64, want: f64, se: f64, k: f64) -> bool {
    (got - want).abs() <= k * se
}

fn scalar_moments(kind: BasisKind, sigma: f64, samples: u64, seed: u64) -> StageMoments {
    let basis = BasisFamily::new(kind, 1).unwrap();
    let noise = NoiseSpec::zero_mean_gaussian(DMatrix::from_element(1, 1, sigma * sigma)).unwrap();
    estimate_stage_moments(&basis, &noise, samples, seed).unwrap()
}

#[test]
fn sigmoid_closed_form_matches_monte_carlo() {
    let standard = BasisKind::ScaledSigmoid { alpha: 1.0, beta: 1.0 };
    for (sigma, samples) in [(0.5, 1_000_000), (1.0, 10_000_000), (2.0, 1_000_000)] {
        let mc = scalar_moments(standard.clone(), sigma, samples, 17);
        let se = mc.errors.as_ref().unwrap();
        let (second, cross) = special::closed_form_sigmoid_moments(&[sigma]).unwrap();
        assert!(within(mc.e_second[(0, 0)], second[0], se.e_second[(0, 0)], 4.0), "σ = {sigma}");
        assert!(within(mc.we_cross[(0, 0)], cross[0], se.we_cross[(0, 0)], 4.0), "σ = {sigma}");
    }
}

#[test]
fn saturation_closed_form_matches_monte_carlo() {
    for sigma in [0.5, 1.0, 2.0] {
        let mc = scalar_moments(BasisKind::Saturation, sigma, 1_000_000, 23);
        let se = mc.errors.as_ref().unwrap();
        let (second, cross) = special::closed_form_saturation_moments(&[sigma]).unwrap();
        assert!(within(mc.e_second[(0, 0)], second[0], se.e_second[(0, 0)], 4.0), "σ = {sigma}");
        assert!(within(mc.we_cross[(0, 0)], cross[0], se.we_cross[(0, 0)], 4.0), "σ = {sigma}");
    }
}

#[test]
fn uniform_sine_closed_form_matches_monte_carlo() {
    let (modes, a) = (3, 2.0);
    let basis = BasisFamily::new(BasisKind::FourierSine { modes, a }, 1).unwrap();
    let noise = NoiseSpec::uniform_box(a, 1).unwrap();
    let mc = estimate_stage_moments(&basis, &noise, 1_000_000, 3).unwrap();
    let se = mc.errors.as_ref().unwrap();
    let (block, cross) = special::closed_form_uniform_sine_moments(modes, a, 1).unwrap();
    for i in 0..modes {
        assert!(within(mc.we_cross[(0, i)], cross[i], se.we_cross[(0, i)], 4.0));
        for j in 0..modes {
            assert!(within(mc.e_second[(i, j)], block[i][j], se.e_second[(i, j)].max(1e-12), 4.0));
        }
    }
}

#[test]
fn noise_covariance_is_recovered() {
    let cov = stable_plant_noise_cov();
    let basis = BasisFamily::new(BasisKind::ScaledSigmoid { alpha: 0.2, beta: 0.04 }, 3).unwrap();
    let noise = NoiseSpec::zero_mean_gaussian(cov.clone()).unwrap();
    let mc = estimate_stage_moments(&basis, &noise, 1_000_000, 99).unwrap();
    let se = mc.errors.as_ref().unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!(within(mc.w_second[(i, j)], cov[(i, j)], se.w_second[(i, j)], 4.0), "({i}, {j})");
        }
    }
    // Odd basis under symmetric noise has zero mean.
    for i in 0..3 {
        assert!(mc.e_mean[i].abs() <= 3.0 * se.e_mean[i]);
    }
}

#[test]
fn saturation_moments_at_unit_sigma_through_public_estimator() {
    let basis = BasisFamily::new(BasisKind::Saturation, 1).unwrap();
    let noise = NoiseSpec::zero_mean_gaussian(DMatrix::identity(1, 1)).unwrap();
    let m = monte_carlo_moments(&basis, &noise, 4, 1_000_000, 8).unwrap();
    let se = m.stage.errors.as_ref().unwrap();
    let (second, cross) = special::closed_form_saturation_moments(&[1.0]).unwrap();
    for t in 0..3 {
        assert!(within(m.sigma_e[(t, t)], second[0], se.e_second[(0, 0)], 4.0));
        assert!(within(m.sigma_e_prime[(t, t)], cross[0], se.we_cross[(0, 0)], 4.0));
    }
}

#[test]
fn estimates_are_bit_identical_for_equal_seeds() {
    let basis = BasisFamily::new(BasisKind::Saturation, 3).unwrap();
    let noise = NoiseSpec::zero_mean_gaussian(stable_plant_noise_cov()).unwrap();
    let a = monte_carlo_moments(&basis, &noise, 5, 200_000, 4).unwrap();
    let b = monte_carlo_moments(&basis, &noise, 5, 200_000, 4).unwrap();
    assert_eq!(a, b);
    let c = monte_carlo_moments(&basis, &noise, 5, 200_000, 5).unwrap();
    assert_ne!(a.sigma_e, c.sigma_e);
}

#[test]
fn estimates_do_not_depend_on_thread_count() {
    let basis = BasisFamily::new(BasisKind::ScaledSigmoid { alpha: 1.0, beta: 1.0 }, 2).unwrap();
    let noise = NoiseSpec::zero_mean_gaussian(DMatrix::identity(2, 2)).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| estimate_stage_moments(&basis, &noise, 100_000, 12).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn lifted_moments_are_block_diagonal_tiles() {
    let basis = BasisFamily::new(BasisKind::Saturation, 2).unwrap();
    let noise = NoiseSpec::zero_mean_gaussian(DMatrix::identity(2, 2)).unwrap();
    let m = monte_carlo_moments(&basis, &noise, 4, 20_000, 1).unwrap();
    let d = 2;
    for i in 0..3 {
        let diag = m.sigma_e.view((i * d, i * d), (d, d));
        assert_eq!(diag.into_owned(), m.stage.e_second);
    }
    let sym = &m.sigma_e - m.sigma_e.transpose();
    assert_eq!(sym.amax(), 0.0);
    assert!(nalgebra::SymmetricEigen::new(m.sigma_e.clone()).eigenvalues.min() >= -1e-12);
}

#[test]
fn gaussian_sampler_covariance() {
    let cov = stable_plant_noise_cov();
    let mean = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let noise = NoiseSpec::gaussian(mean.clone(), cov.clone()).unwrap();
    let mut r = rng(77);
    let n = 1_000_000;
    let mut sum = DVector::zeros(3);
    let mut outer = DMatrix::zeros(3, 3);
    let mut outer_sq = DMatrix::zeros(3, 3);
    for _ in 0..n {
        let w = sample_noise(&noise, &mut r).unwrap() - &mean;
        let o = &w * w.transpose();
        outer_sq += o.component_mul(&o);
        outer += o;
        sum += w;
    }
    let nf = n as f64;
    for i in 0..3 {
        for j in 0..3 {
            let m = outer[(i, j)] / nf;
            let se = ((outer_sq[(i, j)] / nf - m * m) / nf).sqrt();
            assert!(within(m, cov[(i, j)], se, 4.0), "({i}, {j})");
        }
        let se_mean = (cov[(i, i)] / nf).sqrt();
        assert!(within(sum[i] / nf, 0.0, se_mean, 4.0));
    }
}

#[test]
fn uniform_sampler_stays_in_box_and_is_centred() {
    let noise = NoiseSpec::uniform_box(1.0, 2).unwrap();
    let mut r = rng(3);
    let n = 100_000;
    let mut sum = [0.0; 2];
    for _ in 0..n {
        let w = sample_noise(&noise, &mut r).unwrap();
        for i in 0..2 {
            assert!(w[i].abs() <= 1.0);
            sum[i] += w[i];
        }
    }
    let se = (1.0 / 3.0 / n as f64).sqrt();
    assert!(sum.iter().all(|s| (s / n as f64).abs() <= 4.0 * se));
}

fn basis_kinds() -> impl Strategy<Value = BasisKind> {
    prop_oneof![
        (0.01f64..5.0, 0.01f64..5.0).prop_map(|(alpha, beta)| BasisKind::ScaledSigmoid { alpha, beta }),
        Just(BasisKind::Saturation),
        (1usize..5, 0.1f64..10.0).prop_map(|(modes, a)| BasisKind::FourierSine { modes, a }),
    ]
}

proptest! {
    #[test]
    fn basis_outputs_are_bounded_and_odd(
        kind in basis_kinds(),
        w in proptest::collection::vec(-1e3f64..1e3, 6),
    ) {
        let basis = BasisFamily::new(kind, 2).unwrap();
        let e = eval_basis(&basis, &w, 4).unwrap();
        let neg: Vec<f64> = w.iter().map(|v| -v).collect();
        let e_neg = eval_basis(&basis, &neg, 4).unwrap();
        let bound = basis.component_bound();
        for (a, b) in e.iter().zip(e_neg.iter()) {
            prop_assert!(a.abs() <= bound);
            prop_assert_eq!(*a, -*b);
        }
    }
}
