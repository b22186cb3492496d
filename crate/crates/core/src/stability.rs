//! Mean-square boundedness certificate for Schur-stable plants under bounded
//! receding-horizon control.
//!
//! For each offset `ℓ = 1..=N_c` inside a segment, `P_ℓ` solves
//! `(Āˡ)ᵀ P_ℓ Āˡ − P_ℓ = −I`. With `|u_{t,i}| ≤ U` the conditional drift obeys
//!
//! `E[x_ℓᵀ P_ℓ x_ℓ | x] ≤ xᵀP_ℓx − ‖x‖² + 2 c₁ ‖x‖∞ + c₂`,
//!
//! which contracts by `ρ_ℓ = 1 − (1−ζ)/λ_max(P_ℓ)` once
//! `‖x‖∞ ≥ r_ℓ = (c₁ + √(c₁² + ζ c₂))/ζ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{discrete_lyapunov, entrywise_l1, lambda_max, lambda_min, matrix_power, spectral_radius};
use crate::model::SystemModel;
use crate::moments::{Moments, StageMoments};
use crate::simulator::{PreparedController, TrajectoryBatch};
use crate::stats::mean_std;

pub const ZETA_GRID: usize = 32;

pub fn solve_discrete_lyapunov(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    discrete_lyapunov(m)
}

#[derive(Debug, Clone)]
pub struct CertificateInput<'a> {
    pub sys: &'a SystemModel,
    pub control_horizon: usize,
    /// Bound on every input component.
    pub u_max: f64,
    /// Component bound of the basis; with `moments` it bounds the feedback
    /// rows by `‖Υ_r‖₁ ≤ U/φ_max` (row-wise ∞ constraint).
    pub phi_max: f64,
    /// Stage noise mean.
    pub noise_mean: DVector<f64>,
    /// Stage noise second moment `E[w wᵀ]`.
    pub noise_second: DMatrix<f64>,
    /// Basis moments for the tighter cross term, valid only under the
    /// row-wise ∞ constraint; pointwise bounds alone are used when absent.
    pub moments: Option<&'a StageMoments>,
    pub x0: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetConstants {
    pub ell: usize,
    pub p: DMatrix<f64>,
    pub lyapunov_residual: f64,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub c1: f64,
    pub c2: f64,
    pub zeta: f64,
    pub r: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub offsets: Vec<OffsetConstants>,
    /// `max_ℓ ρ_ℓ`
    pub rho: f64,
    /// `max_ℓ r_ℓ`
    pub r_prime: f64,
    /// `max_ℓ λ_max(P_ℓ)`
    pub lambda_bar: f64,
    /// `min_ℓ λ_min(P_ℓ)`
    pub lambda_under: f64,
    /// `ρ λ̄ / λ_min(P_{N_c})`
    pub rho_prime: f64,
    /// One-segment bound on `E[V(x_{N_c})]` from inside `‖x‖∞ ≤ r_{N_c}`.
    pub b: f64,
    /// `max_ℓ` bound on `E[x_ℓᵀP_ℓx_ℓ]` from inside `‖x‖∞ ≤ r′`.
    pub b_prime: f64,
    pub v_x0: f64,
    /// Bound on `sup_t E‖x_t‖²`.
    pub sup_bound: f64,
    /// Grid minimiser of the bound over a common `ζ`.
    pub best_zeta: f64,
    pub best_sup_bound: f64,
}

struct OffsetData {
    ell: usize,
    p: DMatrix<f64>,
    residual: f64,
    lmax: f64,
    lmin: f64,
    lmax_fpf: f64,
    c1: f64,
    c2: f64,
}

fn offset_data(input: &CertificateInput<'_>, ell: usize) -> Result<OffsetData> {
    let sys = input.sys;
    let (n, m) = (sys.n(), sys.m());
    let f = matrix_power(sys.a_bar(), ell);
    let p = discrete_lyapunov(&f)?;
    let residual = (f.transpose() * &p * &f - &p + DMatrix::identity(n, n)).norm();

    // B_ℓ = [Ā^{ℓ-1}B̄ … B̄], D_ℓ = [Ā^{ℓ-1} … I]
    let mut b_l = DMatrix::zeros(n, ell * m);
    let mut d_l = DMatrix::zeros(n, ell * n);
    for j in 0..ell {
        let pw = matrix_power(sys.a_bar(), ell - 1 - j);
        b_l.view_mut((0, j * m), (n, m)).copy_from(&(&pw * sys.b_bar()));
        d_l.view_mut((0, j * n), (n, n)).copy_from(&pw);
    }
    let mu = DVector::from_iterator(ell * n, (0..ell).flat_map(|_| input.noise_mean.iter().copied()));
    let mut second = DMatrix::zeros(ell * n, ell * n);
    let outer = &input.noise_mean * input.noise_mean.transpose();
    for i in 0..ell {
        for j in 0..ell {
            let blk = if i == j { &input.noise_second } else { &outer };
            second.view_mut((i * n, j * n), (n, n)).copy_from(blk);
        }
    }

    let u = input.u_max;
    let ftp = f.transpose() * &p;
    let c1 = entrywise_l1(&(&ftp * &b_l)) * u + (&ftp * &d_l * &mu).abs().sum();

    let w = b_l.transpose() * &p * &b_l;
    let k = b_l.transpose() * &p * &d_l;
    let quad_u = entrywise_l1(&w) * u * u;
    // E[uᵀK w] ≤ U Σ_r E|(K w)_r| ≤ U Σ_r √((K E[wwᵀ] Kᵀ)_rr)
    let kwk = &k * &second * k.transpose();
    let cross_pointwise: f64 = (0..kwk.nrows()).map(|r| kwk[(r, r)].max(0.0).sqrt()).sum::<f64>() * u;
    let cross = match input.moments {
        Some(stage) if ell == 1 || input.phi_max > 0.0 => {
            // E[u_r (Kw)_r] = η_r (Kμ)_r + θ_r·(KΛ₂)_r with |η_r| + φ_max‖θ_r‖₁ ≤ U.
            let km = &k * &mu;
            let kl = if ell > 1 {
                &k * Moments::from_stage(stage.clone(), ell)?.sigma_e_prime
            } else {
                DMatrix::zeros(k.nrows(), 0)
            };
            let by_moments: f64 = (0..k.nrows())
                .map(|r| {
                    let fb = if kl.ncols() > 0 { kl.row(r).amax() / input.phi_max } else { 0.0 };
                    u * km[r].abs().max(fb)
                })
                .sum();
            by_moments.min(cross_pointwise)
        }
        _ => cross_pointwise,
    };
    let noise = (d_l.transpose() * &p * &d_l).dot(&second);
    let c2 = quad_u + 2.0 * cross + noise;

    Ok(OffsetData {
        ell,
        lmax: lambda_max(&p),
        lmin: lambda_min(&p),
        lmax_fpf: lambda_max(&(f.transpose() * &p * &f)),
        p,
        residual,
        c1,
        c2,
    })
}

fn radius(c1: f64, c2: f64, zeta: f64) -> f64 {
    (c1 + (c1 * c1 + c2 * zeta).sqrt()) / zeta
}

fn assemble(data: &[OffsetData], zeta: f64, x0: &DVector<f64>, n: usize) -> StabilityCertificate {
    let offsets: Vec<OffsetConstants> = data
        .iter()
        .map(|o| OffsetConstants {
            ell: o.ell,
            p: o.p.clone(),
            lyapunov_residual: o.residual,
            lambda_max: o.lmax,
            lambda_min: o.lmin,
            c1: o.c1,
            c2: o.c2,
            zeta,
            r: radius(o.c1, o.c2, zeta),
            rho: 1.0 - (1.0 - zeta) / o.lmax,
        })
        .collect();
    let last = data.last().expect("at least one offset");
    let last_c = offsets.last().unwrap();
    let rho = offsets.iter().map(|o| o.rho).fold(0.0, f64::max);
    let r_prime = offsets.iter().map(|o| o.r).fold(0.0, f64::max);
    let lambda_bar = data.iter().map(|o| o.lmax).fold(0.0, f64::max);
    let lambda_under = data.iter().map(|o| o.lmin).fold(f64::INFINITY, f64::min);
    let inside = |o: &OffsetData, r: f64| o.lmax_fpf * n as f64 * r * r + 2.0 * o.c1 * r + o.c2;
    let b = inside(last, last_c.r);
    let b_prime = data.iter().map(|o| inside(o, r_prime)).fold(0.0, f64::max);
    let v_x0 = x0.dot(&(&last.p * x0));
    let rho_prime = rho * lambda_bar / last.lmin;
    // E V(x_{kN_c}) ≤ V(x₀) + b/(1−ρ_{N_c}); inside a segment
    // E‖x_{kN_c+ℓ}‖² ≤ (ρ_ℓ λ_max(P_ℓ) E V(x_{kN_c})/λ_min(P_{N_c}) + b′)/λ_min(P_ℓ).
    let segment = v_x0 + b / (1.0 - last_c.rho);
    let sup_bound = x0.norm_squared().max((rho_prime * segment + b_prime) / lambda_under);
    StabilityCertificate {
        offsets,
        rho,
        r_prime,
        lambda_bar,
        lambda_under,
        rho_prime,
        b,
        b_prime,
        v_x0,
        sup_bound,
        best_zeta: zeta,
        best_sup_bound: sup_bound,
    }
}

/// Certificate with `ζ` applied to every offset; the grid minimiser over
/// `ζ ∈ (0, 1)` is reported alongside.
pub fn certificate(input: &CertificateInput<'_>, zeta: f64) -> Result<StabilityCertificate> {
    let sys = input.sys;
    let rho = spectral_radius(sys.a_bar());
    if rho >= 1.0 {
        return Err(Error::NotSchurStable { spectral_radius: rho });
    }
    if input.control_horizon == 0 {
        return Err(Error::InvalidArgument("control horizon must be at least 1".into()));
    }
    if !(input.u_max >= 0.0) {
        return Err(Error::InvalidArgument("input bound must be nonnegative".into()));
    }
    check_dim("noise mean", sys.n(), input.noise_mean.len())?;
    check_dim("noise second moment", sys.n(), input.noise_second.nrows())?;
    check_dim("initial state", sys.n(), input.x0.len())?;
    let data: Vec<OffsetData> = (1..=input.control_horizon)
        .map(|ell| offset_data(input, ell))
        .collect::<Result<_>>()?;
    // λ_max(P_ℓ) ≥ 1, so the admissible interval for ζ is (0, 1).
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::InvalidArgument(format!("ζ must lie in (0, 1), got {zeta}")));
    }
    let mut cert = assemble(&data, zeta, &input.x0, sys.n());
    for o in &cert.offsets {
        if !(o.rho > 0.0 && o.rho < 1.0) || !o.r.is_finite() {
            return Err(Error::InvalidCertificate(format!("offset {} has ρ = {}", o.ell, o.rho)));
        }
    }
    let (mut best_zeta, mut best) = (zeta, cert.sup_bound);
    for i in 1..=ZETA_GRID {
        let z = i as f64 / (ZETA_GRID + 1) as f64;
        let c = assemble(&data, z, &input.x0, sys.n());
        if c.sup_bound < best {
            best = c.sup_bound;
            best_zeta = z;
        }
    }
    cert.best_zeta = best_zeta;
    cert.best_sup_bound = best;
    Ok(cert)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMoment {
    /// Mean of `‖x_t‖²` over realizations.
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub running_sup: Vec<f64>,
}

pub fn empirical_second_moment(batch: &TrajectoryBatch) -> Result<EmpiricalMoment> {
    let used: Vec<_> = batch.usable().collect();
    if used.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let steps = used[0].path.states.len();
    let (mut mean, mut std_error, mut running_sup) = (Vec::new(), Vec::new(), Vec::new());
    let mut sup = f64::NEG_INFINITY;
    for t in 0..steps {
        let v: Vec<f64> = used.iter().map(|r| r.path.states[t].norm_squared()).collect();
        let (m, s) = mean_std(&v);
        sup = sup.max(m);
        mean.push(m);
        std_error.push(s / (v.len() as f64).sqrt());
        running_sup.push(sup);
    }
    Ok(EmpiricalMoment {
        mean,
        std_error,
        running_sup,
    })
}

/// Monte Carlo estimate of `E[x_ℓᵀ P x_ℓ | x_0 = x]` for a controller started
/// at a segment boundary: (mean, standard error).
pub fn conditional_drift(
    controller: &PreparedController,
    noise: &crate::noise::NoiseSpec,
    p: &DMatrix<f64>,
    ell: usize,
    x: &DVector<f64>,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    use rayon::prelude::*;
    if ell == 0 || samples == 0 {
        return Err(Error::InvalidArgument("drift needs ℓ ≥ 1 and at least one sample".into()));
    }
    let sampler = noise.sampler()?;
    let first = controller.plan(x)?;
    let values: Vec<Result<f64>> = (0..samples as u64)
        .into_par_iter()
        .map(|s| {
            let w = sampler.path(seed, s, ell);
            let path = controller.simulate_with_first_plan(x, 0, &w, first.as_ref())?;
            let xl = &path.states[ell];
            Ok(xl.dot(&(p * xl)))
        })
        .collect();
    let values: Vec<f64> = values.into_iter().collect::<Result<_>>()?;
    let (m, s) = mean_std(&values);
    Ok((m, s / (samples as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn lyapunov_trivial_cases() {
        let p = solve_discrete_lyapunov(&DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(p, DMatrix::identity(2, 2));
    }

    #[test]
    fn noiseless_unforced_bound_is_contraction_only() {
        let sys = SystemModel::new(dmatrix![0.5], dmatrix![1.0]).unwrap();
        let x0 = DVector::from_vec(vec![2.0]);
        let input = CertificateInput {
            sys: &sys,
            control_horizon: 1,
            u_max: 0.0,
            phi_max: 1.0,
            noise_mean: DVector::zeros(1),
            noise_second: DMatrix::zeros(1, 1),
            moments: None,
            x0: x0.clone(),
        };
        let c = certificate(&input, 0.5).unwrap();
        assert_eq!(c.offsets[0].c1, 0.0);
        assert_eq!(c.offsets[0].c2, 0.0);
        assert_eq!(c.b, 0.0);
        assert_eq!(c.b_prime, 0.0);
        let expect = (c.rho_prime * c.v_x0 / c.lambda_under).max(4.0);
        assert!((c.sup_bound - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn scalar_constants_by_hand() {
        // Ā = 0.5, B̄ = 1, N_c = 1, U = 1, Σ_w = 1, ζ = 0.5:
        // P = 4/3, c₁ = |0.5·4/3·1|·1 = 2/3, c₂ = (4/3)·1 + 2·1·√(4/3·1·4/3) + 4/3 = 16/3.
        let sys = SystemModel::new(dmatrix![0.5], dmatrix![1.0]).unwrap();
        let input = CertificateInput {
            sys: &sys,
            control_horizon: 1,
            u_max: 1.0,
            phi_max: 1.0,
            noise_mean: DVector::zeros(1),
            noise_second: DMatrix::identity(1, 1),
            moments: None,
            x0: DVector::zeros(1),
        };
        let c = certificate(&input, 0.5).unwrap();
        let o = &c.offsets[0];
        assert!((o.p[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
        assert!((o.c1 - 2.0 / 3.0).abs() < 1e-14);
        assert!((o.c2 - 16.0 / 3.0).abs() < 1e-13);
        let r = (2.0 / 3.0 + (4.0f64 / 9.0 + 8.0 / 3.0).sqrt()) / 0.5;
        assert!((o.r - r).abs() < 1e-13);
        assert!((o.rho - (1.0 - 0.5 / (4.0 / 3.0))).abs() < 1e-15);
        assert!(c.sup_bound.is_finite() && c.sup_bound > 0.0);
    }

    #[test]
    fn unstable_plant_is_refused() {
        let sys = SystemModel::new(dmatrix![1.0, 1.0; 0.0, 1.0], dmatrix![0.0; 1.0]).unwrap();
        let input = CertificateInput {
            sys: &sys,
            control_horizon: 1,
            u_max: 1.0,
            phi_max: 1.0,
            noise_mean: DVector::zeros(2),
            noise_second: DMatrix::identity(2, 2),
            moments: None,
            x0: DVector::zeros(2),
        };
        assert!(matches!(certificate(&input, 0.5), Err(Error::NotSchurStable { .. })));
    }
}
