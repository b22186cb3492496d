//! Euclidean projections onto the per-stage constraint sets.

use nalgebra::DMatrix;

use crate::policy::{ConstraintSpec, ConstraintVariant, NormKind, StageContext};

/// Projection of `v` onto `{x : Σ wᵢ|xᵢ| ≤ r}`. Entries with zero weight are
/// unconstrained. Thresholds are found by a stable sort of `|vᵢ|/wᵢ`.
pub fn project_weighted_l1(v: &[f64], w: &[f64], r: f64) -> Vec<f64> {
    debug_assert_eq!(v.len(), w.len());
    let total: f64 = v.iter().zip(w).map(|(x, w)| w * x.abs()).sum();
    if total <= r {
        return v.to_vec();
    }
    let mut order: Vec<usize> = (0..v.len()).filter(|&i| w[i] > 0.0).collect();
    order.sort_by(|&i, &j| (v[j].abs() / w[j]).total_cmp(&(v[i].abs() / w[i])));
    let (mut s1, mut s2) = (0.0, 0.0);
    let mut lambda = 0.0;
    for &i in &order {
        let ratio = v[i].abs() / w[i];
        let next_s1 = s1 + w[i] * v[i].abs();
        let next_s2 = s2 + w[i] * w[i];
        let candidate = (next_s1 - r) / next_s2;
        if ratio <= candidate && s2 > 0.0 {
            break;
        }
        s1 = next_s1;
        s2 = next_s2;
        lambda = candidate;
    }
    let lambda = lambda.max(0.0);
    v.iter()
        .zip(w)
        .map(|(&x, &w)| {
            if w > 0.0 {
                x.signum() * (x.abs() - lambda * w).max(0.0)
            } else {
                x
            }
        })
        .collect()
}

fn project_l1(v: &[f64], r: f64) -> Vec<f64> {
    project_weighted_l1(v, &vec![1.0; v.len()], r)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Minimiser of a convex function on `[lo, hi]` by golden-section search,
/// compared against both endpoints.
fn golden_section<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a) > 1e-15 * (hi - lo).max(f64::MIN_POSITIVE) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    [(lo, f(lo)), (hi, f(hi)), (mid, f(mid))]
        .into_iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap()
        .0
}

fn rows(z: &DMatrix<f64>) -> Vec<Vec<f64>> {
    z.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Projection of the stage block `Z = [η_t | Θ_t]` onto the stage set of
/// `spec`. The energy bound is not part of the stage set.
pub fn project_stage(z: &DMatrix<f64>, spec: &ConstraintSpec, ctx: &StageContext) -> DMatrix<f64> {
    let u = spec.u_max;
    if spec.stage_lhs(ctx, z.as_view()) <= u {
        return z.clone();
    }
    let (m, k) = (z.nrows(), z.ncols());
    let mut out = z.clone();
    match (spec.variant, spec.p) {
        (ConstraintVariant::RowwiseInf, _) => {
            let mut w = vec![ctx.phi_max; k];
            w[0] = 1.0;
            for (i, row) in rows(z).iter().enumerate() {
                let p = project_weighted_l1(row, &w, u);
                for (j, v) in p.into_iter().enumerate() {
                    out[(i, j)] = v;
                }
            }
        }
        (ConstraintVariant::Generic, NormKind::Inf) => {
            let eta: Vec<f64> = z.column(0).iter().copied().collect();
            let thetas: Vec<Vec<f64>> = rows(&z.columns(1, k - 1).into_owned());
            let bound = ctx.bound;
            if k == 1 || bound == 0.0 {
                for i in 0..m {
                    out[(i, 0)] = eta[i].clamp(-u, u);
                }
            } else {
                let cost = |a: f64| {
                    let r = (u - a) / bound;
                    let e: f64 = eta.iter().map(|x| (x.abs() - a).max(0.0).powi(2)).sum();
                    e + thetas.iter().map(|t| dist2(t, &project_l1(t, r))).sum::<f64>()
                };
                let a = golden_section(cost, 0.0, u);
                let r = (u - a) / bound;
                for i in 0..m {
                    out[(i, 0)] = eta[i].clamp(-a, a);
                    for (j, v) in project_l1(&thetas[i], r).into_iter().enumerate() {
                        out[(i, j + 1)] = v;
                    }
                }
            }
        }
        (ConstraintVariant::Generic, NormKind::One) => {
            let eta: Vec<f64> = z.column(0).iter().copied().collect();
            let cols: Vec<Vec<f64>> = (1..k).map(|j| z.column(j).iter().copied().collect()).collect();
            let kappa = spec.one_norm_factor(ctx);
            if k == 1 || kappa == 0.0 {
                out.set_column(0, &nalgebra::DVector::from_vec(project_l1(&eta, u)));
            } else {
                let cost = |b: f64| {
                    let r = b / kappa;
                    dist2(&eta, &project_l1(&eta, u - b))
                        + cols.iter().map(|c| dist2(c, &project_l1(c, r))).sum::<f64>()
                };
                let b = golden_section(cost, 0.0, u);
                out.set_column(0, &nalgebra::DVector::from_vec(project_l1(&eta, u - b)));
                for (j, c) in cols.iter().enumerate() {
                    out.set_column(j + 1, &nalgebra::DVector::from_vec(project_l1(c, b / kappa)));
                }
            }
        }
        (ConstraintVariant::Generic, NormKind::Two) => {
            let r = u / spec.two_norm_factor(ctx);
            out *= r / z.norm();
        }
        (ConstraintVariant::Orthonormal, _) => {
            let c = ((ctx.horizon - 1) as f64).sqrt();
            let (ne, nt) = (z.column(0).norm(), z.columns(1, k - 1).norm());
            let p = project_weighted_l1(&[ne, nt], &[1.0, c], u);
            let se = if ne > 0.0 { p[0] / ne } else { 0.0 };
            let st = if nt > 0.0 { p[1] / nt } else { 0.0 };
            out.column_mut(0).scale_mut(se);
            out.columns_mut(1, k - 1).scale_mut(st);
        }
        (ConstraintVariant::FiniteDim, _) => {
            let r = u / (ctx.horizon as f64).sqrt();
            out *= r / z.norm();
        }
    }
    tighten(out, spec, ctx)
}

/// Removes rounding excess so the exact feasibility check passes.
fn tighten(mut z: DMatrix<f64>, spec: &ConstraintSpec, ctx: &StageContext) -> DMatrix<f64> {
    let mut factor: f64 = 1.0;
    loop {
        let lhs = spec.stage_lhs(ctx, z.as_view());
        if lhs <= spec.u_max {
            return z;
        }
        factor = factor.next_down();
        z *= factor;
    }
}
