//! Special functions and the Gaussian integrals behind the closed-form
//! basis moments.
//!
//! `erf` and `erfc` come from `libm`, the gamma functions from `statrs`.
//! `erf` uses the standard weight `e^{-t²}`.

use std::f64::consts::PI;

use statrs::function::gamma as st_gamma;

use crate::error::{Error, Result};
use crate::quadrature::integrate;

pub fn erf(z: f64) -> f64 {
    libm::erf(z)
}

pub fn erfc(z: f64) -> f64 {
    libm::erfc(z)
}

/// Scaled complementary error function `e^{z²} erfc(z)`.
pub fn erfcx(z: f64) -> f64 {
    if z < 0.0 {
        return 2.0 * (z * z).exp() - erfcx(-z);
    }
    if z < 5.0 {
        return (z * z).exp() * erfc(z);
    }
    // Continued fraction e^{z²}erfc(z) = (1/√π) / (z + (1/2)/(z + 1/(z + (3/2)/(z + …)))),
    // evaluated bottom-up.
    let mut tail = z;
    for k in (1..=60).rev() {
        tail = z + (k as f64 * 0.5) / tail;
    }
    1.0 / (PI.sqrt() * tail)
}

pub fn gamma(a: f64) -> f64 {
    st_gamma::gamma(a)
}

/// Upper incomplete gamma `Γ(a, z) = ∫_z^∞ t^{a-1} e^{-t} dt`.
pub fn inc_gamma(a: f64, z: f64) -> Result<f64> {
    if !(a > 0.0) || !(z > 0.0) {
        return Err(Error::Domain {
            function: "inc_gamma",
            detail: format!("need a > 0 and z > 0, got a = {a}, z = {z}"),
        });
    }
    st_gamma::checked_gamma_ui(a, z).map_err(|e| Error::Domain {
        function: "inc_gamma",
        detail: e.to_string(),
    })
}

pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Tricomi confluent hypergeometric function from its integral
/// representation `U(a,b,z) = Γ(a)⁻¹ ∫₀^∞ e^{-zt} t^{a-1} (1+t)^{b-a-1} dt`.
///
/// With `t = s^{1/a}` the weight `t^{a-1} dt` becomes `ds / a`, which removes
/// the endpoint singularity for `a < 1`.
pub fn confluent_u(a: f64, b: f64, z: f64) -> Result<f64> {
    if !(a > 0.0) || !(z > 0.0) || !b.is_finite() {
        return Err(Error::Domain {
            function: "confluent_u",
            detail: format!("need a > 0, z > 0, finite b; got a = {a}, b = {b}, z = {z}"),
        });
    }
    let c = b - a - 1.0;
    let inv_a = 1.0 / a;
    let weight = |t: f64| (-z * t).exp() * (1.0 + t).powf(c);
    // Truncate where e^{-zt} < 1e-16, extended while a growing power factor
    // keeps the tail relevant.
    let mut t_max = 16.0 * 10f64.ln() / z;
    while weight(t_max) * t_max.powf(a) > 1e-16 * weight(0.0).max(1e-300) && t_max < 1e8 {
        t_max *= 2.0;
    }
    let s_max = t_max.powf(a);
    let f = |s: f64| weight(s.powf(inv_a));
    // Split at s = 1 so the region near the origin is resolved separately.
    let knot = s_max.min(1.0);
    let tol = 1e-15;
    let value = integrate(f, 0.0, knot, tol) + integrate(f, knot, s_max, tol);
    Ok(value / gamma(a + 1.0))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            function: "gaussian moment",
            detail: format!("standard deviation must be positive, got {sigma}"),
        })
    }
}

/// Integrals of the zero-mean Gaussian density with standard deviation `σ`.
///
/// Each function returns `∫ g(t) p_σ(t) dt` over the stated range, where
/// `p_σ(t) = e^{-t²/(2σ²)} / (√(2π) σ)`.
pub mod gaussian {
    use super::*;

    fn norm(sigma: f64) -> f64 {
        1.0 / ((2.0 * PI).sqrt() * sigma)
    }

    fn z(sigma: f64) -> f64 {
        1.0 / (2f64.sqrt() * sigma)
    }

    /// `∫_1^∞ p_σ(t) dt = erfc(1/(√2σ)) / 2`.
    pub fn tail_mass(sigma: f64) -> Result<f64> {
        check_sigma(sigma)?;
        Ok(0.5 * erfc(z(sigma)))
    }

    /// `∫_0^∞ t²/(1+t²) p_σ(t) dt = ½ (1 − √π z erfcx(z))`, `z = 1/(√2σ)`.
    pub fn rational_second_moment(sigma: f64) -> Result<f64> {
        check_sigma(sigma)?;
        let z = z(sigma);
        Ok(0.5 * (1.0 - PI.sqrt() * z * erfcx(z)))
    }

    /// `∫_0^1 t² p_σ(t) dt = n (√(π/2) σ³ erf(z) − σ² e^{-1/(2σ²)})`.
    pub fn truncated_second_moment(sigma: f64) -> Result<f64> {
        check_sigma(sigma)?;
        let s2 = sigma * sigma;
        Ok(norm(sigma)
            * ((PI / 2.0).sqrt() * s2 * sigma * erf(z(sigma)) - s2 * (-0.5 / s2).exp()))
    }

    /// `∫_1^∞ t p_σ(t) dt = σ/√(2π) · Γ(1, 1/(2σ²))`.
    pub fn tail_first_moment(sigma: f64) -> Result<f64> {
        check_sigma(sigma)?;
        Ok(sigma / (2.0 * PI).sqrt() * inc_gamma(1.0, 0.5 / (sigma * sigma))?)
    }

    /// `∫_0^∞ t²/√(1+t²) p_σ(t) dt = σ/(2√2) · U(½, 0, 1/(2σ²))`.
    pub fn sqrt_rational_moment(sigma: f64) -> Result<f64> {
        check_sigma(sigma)?;
        Ok(sigma / (2.0 * 2f64.sqrt()) * confluent_u(0.5, 0.0, 0.5 / (sigma * sigma))?)
    }
}

/// `E[φ(w)²]` and `E[w φ(w)]` for `φ(t) = t/√(1+t²)` and `w ~ N(0, σ²)`,
/// one pair per entry of `sigmas`.
pub fn closed_form_sigmoid_moments(sigmas: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut second = Vec::with_capacity(sigmas.len());
    let mut cross = Vec::with_capacity(sigmas.len());
    for &s in sigmas {
        second.push(2.0 * gaussian::rational_second_moment(s)?);
        cross.push(2.0 * gaussian::sqrt_rational_moment(s)?);
    }
    Ok((second, cross))
}

/// `E[sat(w)²]` and `E[w sat(w)]` for `sat(t) = sgn(t) min(|t|, 1)` and
/// `w ~ N(0, σ²)`.
pub fn closed_form_saturation_moments(sigmas: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut second = Vec::with_capacity(sigmas.len());
    let mut cross = Vec::with_capacity(sigmas.len());
    for &s in sigmas {
        let inner = gaussian::truncated_second_moment(s)?;
        second.push(2.0 * inner + 2.0 * gaussian::tail_mass(s)?);
        cross.push(2.0 * inner + 2.0 * gaussian::tail_first_moment(s)?);
    }
    Ok((second, cross))
}

/// Moments of `e^ν(t) = √(2/n) sin(πνt/a)` for `t` uniform on `[-a, a]`.
///
/// Returns the `M×M` matrix `E[e^ν e^μ]` for one noise component and the
/// vector `E[t e^ν]`.
pub fn closed_form_uniform_sine_moments(
    modes: usize,
    a: f64,
    n: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if modes == 0 || !(a > 0.0) || n == 0 {
        return Err(Error::InvalidArgument(
            "need at least one mode, a > 0 and n ≥ 1".into(),
        ));
    }
    let scale = 2.0 / n as f64;
    let second = (1..=modes)
        .map(|nu| {
            (1..=modes)
                .map(|mu| {
                    let (d, s) = ((nu as f64 - mu as f64) * PI, (nu + mu) as f64 * PI);
                    scale * 0.5 * (sinc(d) - sinc(s))
                })
                .collect()
        })
        .collect();
    let cross = (1..=modes)
        .map(|nu| {
            let sign = if nu % 2 == 1 { 1.0 } else { -1.0 };
            scale.sqrt() * a * sign / (PI * nu as f64)
        })
        .collect();
    Ok((second, cross))
}
