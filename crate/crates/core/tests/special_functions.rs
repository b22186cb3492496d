//! Special functions and the Gaussian integral identities against
//! double-exponential quadrature written independently here.

use std::f64::consts::PI;

use srhc_core::special::{self, gaussian};

/// `∫_a^b f` by tanh-sinh.
fn tanh_sinh<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let (c, h) = (0.5 * (b - a), 1.0 / 128.0);
    let mut sum = 0.0;
    for k in -1024i32..=1024 {
        let s = k as f64 * h;
        let u = 0.5 * PI * s.sinh();
        let x = u.tanh();
        let wgt = 0.5 * PI * s.cosh() / u.cosh().powi(2);
        if wgt < 1e-300 || (1.0 - x.abs()) == 0.0 {
            continue;
        }
        sum += wgt * f(a + c * (1.0 + x));
    }
    c * h * sum
}

/// `∫_a^∞ f` by exp-sinh.
fn exp_sinh<F: Fn(f64) -> f64>(f: F, a: f64) -> f64 {
    let h = 1.0 / 128.0;
    let mut sum = 0.0;
    for k in -800i32..=600 {
        let s = k as f64 * h;
        let e = (0.5 * PI * s.sinh()).exp();
        if !e.is_finite() || e > 1e300 {
            continue;
        }
        let v = f(a + e);
        if v.is_finite() {
            sum += v * e * 0.5 * PI * s.cosh();
        }
    }
    h * sum
}

fn density(sigma: f64) -> impl Fn(f64) -> f64 {
    move |t| (-t * t / (2.0 * sigma * sigma)).exp() / ((2.0 * PI).sqrt() * sigma)
}

#[test]
fn oracle_reproduces_known_integrals() {
    assert!((tanh_sinh(|t| t * t, 0.0, 1.0) - 1.0 / 3.0).abs() < 1e-14);
    assert!((exp_sinh(|t| (-t).exp(), 0.0) - 1.0).abs() < 1e-13);
    assert!((exp_sinh(|t| (-t * t).exp(), 0.0) - PI.sqrt() / 2.0).abs() < 1e-13);
}

#[test]
fn erf_and_erfc_agree_with_quadrature() {
    let c = 2.0 / PI.sqrt();
    for i in 0..=60 {
        let z = -3.0 + 0.1 * i as f64;
        let erf = c * tanh_sinh(|t| (-t * t).exp(), 0.0, z);
        assert!((special::erf(z) - erf).abs() < 1e-10, "erf({z})");
        assert!((special::erfc(z) - (1.0 - erf)).abs() < 1e-10, "erfc({z})");
    }
    for z in [2.0, 4.0, 6.0, 9.0] {
        let tail = c * exp_sinh(|t| (-t * t).exp(), z);
        assert!((special::erfc(z) - tail).abs() < 1e-10 * tail.max(1e-300) + 1e-300);
    }
    assert!((special::erfc(1.0) - 0.15729920705028513).abs() < 1e-15);
}

#[test]
fn erfcx_matches_scaled_tail() {
    for z in [0.1, 1.0, 3.0, 4.9, 5.1, 10.0, 30.0] {
        let oracle = 2.0 / PI.sqrt() * exp_sinh(|t| (z * z - t * t).exp(), z);
        assert!((special::erfcx(z) - oracle).abs() < 1e-12 * oracle, "erfcx({z})");
    }
}

#[test]
fn incomplete_gamma_agrees_with_quadrature() {
    for a in [0.5, 1.0, 1.5, 2.5, 4.0] {
        for z in [0.1, 0.5, 1.0, 2.0, 8.0] {
            let oracle = exp_sinh(|t| t.powf(a - 1.0) * (-t).exp(), z);
            let got = special::inc_gamma(a, z).unwrap();
            assert!((got - oracle).abs() < 1e-10, "Γ({a}, {z}): {got} vs {oracle}");
        }
    }
    assert!(special::inc_gamma(-1.0, 1.0).is_err());
    assert!(special::inc_gamma(1.0, -1.0).is_err());
}

#[test]
fn confluent_u_agrees_with_integral_definition() {
    for (a, b) in [(0.5, 0.0), (0.5, 1.0), (1.0, 0.0), (1.5, 0.5), (2.0, 3.0)] {
        let gamma_a = exp_sinh(|t| t.powf(a - 1.0) * (-t).exp(), 0.0);
        for z in [0.05, 0.5, 2.0, 8.0, 32.0] {
            let oracle = exp_sinh(|t| (-z * t).exp() * t.powf(a - 1.0) * (1.0 + t).powf(b - a - 1.0), 0.0) / gamma_a;
            let got = special::confluent_u(a, b, z).unwrap();
            assert!((got - oracle).abs() < 1e-10 * oracle.max(1.0), "U({a},{b},{z}): {got} vs {oracle}");
        }
    }
    let u = special::confluent_u(0.5, 0.0, 2.0).unwrap();
    assert!((u - 0.5548132113060852).abs() < 1e-9);
    assert!(special::confluent_u(0.5, 0.0, 0.0).is_err());
}

#[test]
fn sinc_and_gamma() {
    assert_eq!(special::sinc(0.0), 1.0);
    assert!((special::sinc(PI)).abs() < 1e-16);
    assert!((special::gamma(0.5) - PI.sqrt()).abs() < 1e-13);
    assert!((special::gamma(5.0) - 24.0).abs() < 1e-11);
}

const SIGMAS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// High-precision values of the five Gaussian integrals, one row per `σ`:
/// upper tail beyond 1, `t²/(1+t²)` on the half line, `t²` on `[0, 1]`,
/// `t` beyond 1, `t²/√(1+t²)` on the half line.
const REFERENCE: [[f64; 5]; 5] = [
    [3.1671241833119921e-5, 0.026695234172878659, 0.031214562990944209, 3.3457556441221338e-5, 0.028834860222589551],
    [0.022750131948179207, 0.078630770711945527, 0.092316983756361172, 0.026995483256594026, 0.098078046001604432],
    [0.15865525393145705, 0.17216022879060076, 0.099374021549399599, 0.24197072451914335, 0.28244542362282911],
    [0.3085375387259869, 0.28090888588657691, 0.061719191567453459, 0.70413065352859896, 0.69018342276426146],
    [0.40129367431707628, 0.37027192801828415, 0.03262874371538276, 1.5466724672113968, 1.5116795983331663],
];

fn identities(sigma: f64) -> [f64; 5] {
    [
        gaussian::tail_mass(sigma).unwrap(),
        gaussian::rational_second_moment(sigma).unwrap(),
        gaussian::truncated_second_moment(sigma).unwrap(),
        gaussian::tail_first_moment(sigma).unwrap(),
        gaussian::sqrt_rational_moment(sigma).unwrap(),
    ]
}

#[test]
fn gaussian_identities_match_quadrature() {
    for &s in &SIGMAS {
        let p = density(s);
        let oracle = [
            exp_sinh(&p, 1.0),
            exp_sinh(|t| t * t / (1.0 + t * t) * p(t), 0.0),
            tanh_sinh(|t| t * t * p(t), 0.0, 1.0),
            exp_sinh(|t| t * p(t), 1.0),
            exp_sinh(|t| t * t / (1.0 + t * t).sqrt() * p(t), 0.0),
        ];
        for (k, (got, want)) in identities(s).iter().zip(oracle).enumerate() {
            assert!((got - want).abs() < 1e-8, "identity {k} at σ = {s}: {got} vs {want}");
        }
    }
}

#[test]
fn gaussian_identities_match_reference_values() {
    for (row, &s) in SIGMAS.iter().enumerate() {
        for (k, got) in identities(s).iter().enumerate() {
            let want = REFERENCE[row][k];
            assert!((got - want).abs() < 1e-12 * want.max(1.0), "identity {k} at σ = {s}: {got} vs {want}");
        }
    }
}

#[test]
fn upper_tail_uses_complementary_erf() {
    // ½(1 + erf(1/(√2σ))) is the mass below 1, not above it.
    for &s in &SIGMAS {
        let below = 0.5 * (1.0 + special::erf(1.0 / (2f64.sqrt() * s)));
        let tail = gaussian::tail_mass(s).unwrap();
        assert!((below + tail - 1.0).abs() < 1e-15);
        assert!((below - exp_sinh(density(s), 1.0)).abs() > 1e-3);
    }
}

#[test]
fn sigmoid_closed_form_at_unit_sigma() {
    let (second, cross) = special::closed_form_sigmoid_moments(&[1.0]).unwrap();
    let formula = (2.0 * PI).sqrt() - PI * (0.5f64).exp() * special::erfc(1.0 / 2f64.sqrt());
    // Normalised by the density prefactor the expression is E[φ²].
    assert!((second[0] - formula / (2.0 * PI).sqrt()).abs() < 1e-14);
    let u = special::confluent_u(0.5, 0.0, 0.5).unwrap();
    assert!((cross[0] - u / 2f64.sqrt()).abs() < 1e-14);
}

#[test]
fn closed_forms_vanish_as_sigma_shrinks() {
    let (s2, c2) = special::closed_form_sigmoid_moments(&[1e-3]).unwrap();
    let (s3, c3) = special::closed_form_saturation_moments(&[1e-3]).unwrap();
    for v in [s2[0], c2[0], s3[0], c3[0]] {
        assert!(v.abs() < 1e-5, "{v}");
    }
    assert!(special::closed_form_sigmoid_moments(&[0.0]).is_err());
    assert!(special::closed_form_saturation_moments(&[-1.0]).is_err());
}

#[test]
fn saturation_second_moment_is_at_most_one() {
    for i in 1..200 {
        let s = 0.05 * i as f64;
        let (second, cross) = special::closed_form_saturation_moments(&[s]).unwrap();
        assert!(second[0] <= 1.0 && second[0] > 0.0);
        assert!(cross[0] >= second[0] - 1e-15, "E[w sat w] ≥ E[sat²]");
    }
}

#[test]
fn uniform_sine_cross_moment_against_quadrature() {
    let a = 2.0;
    let (block, cross) = special::closed_form_uniform_sine_moments(3, a, 1).unwrap();
    for nu in 1..=3 {
        let oracle = 2f64.sqrt() * tanh_sinh(|t| t * (PI * nu as f64 * t / a).sin(), -a, a) / (2.0 * a);
        assert!((cross[nu - 1] - oracle).abs() < 1e-10);
        for mu in 1..=3 {
            let want = if mu == nu { 1.0 } else { 0.0 };
            assert!((block[nu - 1][mu - 1] - want).abs() < 1e-15);
        }
    }
}
