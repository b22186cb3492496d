//! The convex program for `(η, Θ)` and its solver.
//!
//! With `X = [η | Θ]` (`Nm × (1+E)`, `E = (N−1)d`) the expected cost is
//!
//! `f(X) = tr(Xᵀ H X M) + 2⟨C, X⟩ + c`
//!
//! where `H = BᵀQB + R`, `M = E[[1; 𝔢][1; 𝔢]ᵀ]`,
//! `C = BᵀQ (A x₀ [1, μ_𝔢ᵀ] + D [μ_w, Σ′_𝔢])` and
//! `c = x₀ᵀAᵀQAx₀ + 2x₀ᵀAᵀQDμ_w + tr(DᵀQDΣ_w)`.
//! Only the causal entries of `Θ` are variables.

pub mod projection;

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisFamily;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{lambda_min, symmetrize};
use crate::model::{CostBlocks, LiftedModel};
use crate::moments::Moments;
use crate::policy::{check_feasible, scale_to_feasible, ConstraintSpec, PolicyParams, StageContext};

pub use projection::{project_stage, project_weighted_l1};

/// The `x₀`-independent part of the program for one horizon.
#[derive(Debug, Clone)]
pub struct QpTemplate {
    h: DMatrix<f64>,
    mmat: DMatrix<f64>,
    /// `BᵀQA`
    g_x: DMatrix<f64>,
    /// `BᵀQD [μ_w, Σ′_𝔢]`
    c_w: DMatrix<f64>,
    /// `[1, μ_𝔢ᵀ]`
    mean_row: DMatrix<f64>,
    aqa: DMatrix<f64>,
    /// `AᵀQDμ_w`
    aqd_mu: DVector<f64>,
    noise_const: f64,
    spec: ConstraintSpec,
    basis: BasisFamily,
    horizon: usize,
    m: usize,
    /// Basis entries per stage that enter `Θ` (0 for open-loop programs).
    d_eff: usize,
    lipschitz: f64,
}

impl QpTemplate {
    pub fn new(
        lifted: &LiftedModel,
        cost: &CostBlocks,
        moments: &Moments,
        basis: &BasisFamily,
        spec: &ConstraintSpec,
    ) -> Result<Self> {
        let (horizon, n, m) = (lifted.horizon(), lifted.n(), lifted.m());
        check_dim("cost horizon", horizon, cost.horizon())?;
        check_dim("moment horizon", horizon, moments.horizon)?;
        check_dim("moment noise dimension", n, moments.stage.noise_dim())?;
        check_dim("basis noise dimension", n, basis.noise_dim())?;
        check_dim("moment basis dimension", basis.dim_per_noise(), moments.stage.basis_dim())?;
        spec.check_basis(basis)?;
        let d = basis.dim_per_noise();
        let e = (horizon - 1) * d;

        let mut mmat = DMatrix::zeros(1 + e, 1 + e);
        mmat[(0, 0)] = 1.0;
        mmat.view_mut((0, 1), (1, e)).copy_from(&moments.mu_e.transpose());
        mmat.view_mut((1, 0), (e, 1)).copy_from(&moments.mu_e);
        mmat.view_mut((1, 1), (e, e)).copy_from(&moments.sigma_e);
        let mmat = symmetrize(&mmat);
        let min_eig = lambda_min(&mmat);
        if min_eig < -1e-8 * mmat.trace() {
            return Err(Error::NotPsd {
                min_eigenvalue: min_eig,
                trace: mmat.trace(),
            });
        }

        let btq = lifted.b.transpose() * &cost.q;
        let btqd = &btq * &lifted.d;
        let mut wcol = DMatrix::zeros(horizon * n, 1 + e);
        wcol.set_column(0, &moments.mu_w);
        wcol.columns_mut(1, e).copy_from(&moments.sigma_e_prime);
        let c_w = &btqd * wcol;

        let mut mean_row = DMatrix::zeros(1, 1 + e);
        mean_row[(0, 0)] = 1.0;
        mean_row.view_mut((0, 1), (1, e)).copy_from(&moments.mu_e.transpose());

        let atq = lifted.a.transpose() * &cost.q;
        let dqd = lifted.d.transpose() * &cost.q * &lifted.d;
        let noise_const = dqd.dot(&moments.sigma_w);

        Self::finish(Self {
            h: symmetrize(&(&btq * &lifted.b + &cost.r)),
            mmat,
            g_x: &btq * &lifted.a,
            c_w,
            mean_row,
            aqa: symmetrize(&(&atq * &lifted.a)),
            aqd_mu: &atq * &lifted.d * &moments.mu_w,
            noise_const,
            spec: spec.clone(),
            basis: basis.clone(),
            horizon,
            m,
            d_eff: d,
            lipschitz: 0.0,
        })
    }

    /// Deterministic program over `η` alone, with noise set to zero.
    pub fn open_loop(
        lifted: &LiftedModel,
        cost: &CostBlocks,
        basis: &BasisFamily,
        spec: &ConstraintSpec,
    ) -> Result<Self> {
        let (horizon, m) = (lifted.horizon(), lifted.m());
        check_dim("cost horizon", horizon, cost.horizon())?;
        spec.check_basis(basis)?;
        let btq = lifted.b.transpose() * &cost.q;
        let atq = lifted.a.transpose() * &cost.q;
        Self::finish(Self {
            h: symmetrize(&(&btq * &lifted.b + &cost.r)),
            mmat: DMatrix::from_element(1, 1, 1.0),
            g_x: &btq * &lifted.a,
            c_w: DMatrix::zeros(horizon * m, 1),
            mean_row: DMatrix::from_element(1, 1, 1.0),
            aqa: symmetrize(&(&atq * &lifted.a)),
            aqd_mu: DVector::zeros(lifted.n()),
            noise_const: 0.0,
            spec: spec.clone(),
            basis: basis.clone(),
            horizon,
            m,
            d_eff: 0,
            lipschitz: 0.0,
        })
    }

    fn finish(mut self) -> Result<Self> {
        self.lipschitz = estimate_lipschitz(&self);
        Ok(self)
    }

    pub fn instantiate(&self, x0: &DVector<f64>) -> Result<QpProblem<'_>> {
        check_dim("initial state", self.g_x.ncols(), x0.len())?;
        let gx = &self.g_x * x0;
        let c = &gx * &self.mean_row + &self.c_w;
        let constant = x0.dot(&(&self.aqa * x0)) + 2.0 * x0.dot(&self.aqd_mu) + self.noise_const;
        Ok(QpProblem {
            template: self,
            c,
            constant,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn spec(&self) -> &ConstraintSpec {
        &self.spec
    }

    pub fn basis(&self) -> &BasisFamily {
        &self.basis
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn moment_kernel(&self) -> &DMatrix<f64> {
        &self.mmat
    }

    pub fn is_open_loop(&self) -> bool {
        self.d_eff == 0
    }

    fn cols(&self) -> usize {
        self.mmat.nrows()
    }

    /// Zeroes every non-causal entry of `x`.
    fn mask(&self, x: &mut DMatrix<f64>) {
        let cols = self.cols();
        for r in 0..x.nrows() {
            let free = 1 + (r / self.m) * self.d_eff;
            for c in free..cols {
                x[(r, c)] = 0.0;
            }
        }
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut p = &self.h * x * &self.mmat;
        self.mask(&mut p);
        p
    }

    fn project(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for t in 0..self.horizon {
            let k = 1 + t * self.d_eff;
            let z = x.view((t * self.m, 0), (self.m, k)).into_owned();
            let ctx = self.stage_context(t);
            out.view_mut((t * self.m, 0), (self.m, k))
                .copy_from(&project_stage(&z, &self.spec, &ctx));
        }
        out
    }

    fn stage_context(&self, t: usize) -> StageContext {
        let mut ctx = StageContext::new(&self.basis, self.horizon, t);
        ctx.d = self.d_eff;
        ctx
    }

    fn to_params(&self, x: &DMatrix<f64>) -> Result<PolicyParams> {
        let d = self.basis.dim_per_noise();
        let full = if self.d_eff == d {
            x.clone()
        } else {
            let mut full = DMatrix::zeros(x.nrows(), 1 + (self.horizon - 1) * d);
            full.set_column(0, &x.column(0));
            full
        };
        PolicyParams::from_combined(&full, self.basis.clone(), self.horizon, self.m)
    }
}

fn estimate_lipschitz(t: &QpTemplate) -> f64 {
    let (rows, cols) = (t.h.nrows(), t.cols());
    let mut v = DMatrix::from_fn(rows, cols, |i, j| 1.0 + ((i * 7 + j * 13) % 11) as f64 / 11.0);
    t.mask(&mut v);
    let mut lambda = 0.0;
    for _ in 0..60 {
        let norm = v.norm();
        if norm == 0.0 {
            break;
        }
        v /= norm;
        let w = t.apply(&v);
        lambda = v.dot(&w);
        v = w;
    }
    2.0 * lambda.max(f64::MIN_POSITIVE)
}

/// One instance of the program at a given initial state.
#[derive(Debug, Clone)]
pub struct QpProblem<'a> {
    template: &'a QpTemplate,
    c: DMatrix<f64>,
    constant: f64,
}

/// Standalone program that owns its template.
#[derive(Debug, Clone)]
pub struct OwnedQp {
    pub template: QpTemplate,
    pub x0: DVector<f64>,
}

impl OwnedQp {
    pub fn problem(&self) -> QpProblem<'_> {
        self.template.instantiate(&self.x0).expect("dimensions checked on assembly")
    }
}

pub fn assemble_qp(
    lifted: &LiftedModel,
    cost: &CostBlocks,
    moments: &Moments,
    basis: &BasisFamily,
    x0: &DVector<f64>,
    spec: &ConstraintSpec,
) -> Result<OwnedQp> {
    let template = QpTemplate::new(lifted, cost, moments, basis, spec)?;
    template.instantiate(x0)?;
    Ok(OwnedQp {
        template,
        x0: x0.clone(),
    })
}

impl QpProblem<'_> {
    pub fn template(&self) -> &QpTemplate {
        self.template
    }

    pub fn linear_term(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// Objective at `X = [η | Θ]` given `P = mask(H X M)`.
    fn value_with(&self, x: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
        x.dot(p) + 2.0 * self.c.dot(x) + self.constant
    }

    fn masked_c(&self) -> DMatrix<f64> {
        let mut c = self.c.clone();
        self.template.mask(&mut c);
        c
    }

    pub fn value_combined(&self, x: &DMatrix<f64>) -> f64 {
        let mut x = x.clone();
        self.template.mask(&mut x);
        let p = self.template.apply(&x);
        self.value_with(&x, &p)
    }

    pub fn value(&self, params: &PolicyParams) -> f64 {
        let mut x = params.to_combined();
        if self.template.d_eff == 0 {
            x = x.columns(0, 1).into_owned();
        }
        self.value_combined(&x)
    }

    /// Gradient with respect to the causal entries (others zero).
    pub fn gradient_combined(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = x.clone();
        self.template.mask(&mut x);
        (self.template.apply(&x) + self.masked_c()) * 2.0
    }

    fn grad_from(&self, p: &DMatrix<f64>, cm: &DMatrix<f64>) -> DMatrix<f64> {
        (p + cm) * 2.0
    }

    /// Masked conjugate gradient on `mask(H X M) = −mask(C)`.
    fn unconstrained(&self, max_iter: usize) -> (DMatrix<f64>, bool) {
        let t = self.template;
        let b = -self.masked_c();
        let mut x = DMatrix::zeros(b.nrows(), b.ncols());
        let mut r = b.clone();
        let mut p = r.clone();
        let mut rr = r.norm_squared();
        let target = 1e-26 * b.norm_squared().max(f64::MIN_POSITIVE);
        if rr <= target {
            return (x, true);
        }
        for _ in 0..max_iter {
            let ap = t.apply(&p);
            let pap = p.dot(&ap);
            if pap <= 0.0 {
                return (x, false);
            }
            let alpha = rr / pap;
            x += &p * alpha;
            r -= &ap * alpha;
            let rr_new = r.norm_squared();
            if rr_new <= target {
                return (x, true);
            }
            p = &r + &p * (rr_new / rr);
            rr = rr_new;
        }
        (x, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative fixed-point residual for termination.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative KKT residual required for certification.
    pub kkt_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50_000,
            kkt_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    /// Stationarity verified to tolerance.
    Certified,
    /// Iteration limit reached; best feasible iterate returned.
    MaxIterations,
    /// Energy bound active: stage-constrained optimum scaled radially into
    /// the energy set. Feasible but not certified optimal.
    Fallback,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub params: PolicyParams,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub fixed_point_residual: f64,
    pub projection_count: usize,
    pub wall_time: Duration,
    pub status: SolveStatus,
}

impl SolveReport {
    pub fn certified(&self) -> bool {
        self.status == SolveStatus::Certified
    }
}

pub fn solve(qp: &QpProblem<'_>, options: &SolverOptions) -> Result<SolveReport> {
    solve_inner(qp, options, None)
}

/// Projected-gradient run started from `initial` (projected first), without
/// the unconstrained shortcut.
pub fn solve_from(qp: &QpProblem<'_>, options: &SolverOptions, initial: &PolicyParams) -> Result<SolveReport> {
    let mut x = initial.to_combined();
    if qp.template.d_eff == 0 {
        x = x.columns(0, 1).into_owned();
    }
    check_dim("initial point rows", qp.c.nrows(), x.nrows())?;
    check_dim("initial point columns", qp.c.ncols(), x.ncols())?;
    solve_inner(qp, options, Some(x))
}

fn solve_inner(qp: &QpProblem<'_>, options: &SolverOptions, initial: Option<DMatrix<f64>>) -> Result<SolveReport> {
    let start = Instant::now();
    let t = qp.template;
    let spec = &t.spec;
    let cm = qp.masked_c();
    let scale_base = (2.0 * cm.norm()).max(1.0);
    let relative_kkt = |g: &DMatrix<f64>, r: f64| r / scale_base.max(g.norm());

    // Unconstrained optimum first: when it is feasible it is the answer.
    let (xu, converged) = match &initial {
        Some(x) => (x.clone(), false),
        None => qp.unconstrained(20 * (t.h.nrows() * t.cols()).max(50)),
    };
    let pu = t.apply(&xu);
    let gu = qp.grad_from(&pu, &cm);
    if converged {
        let params = t.to_params(&xu)?;
        if check_feasible(&params, spec)?.feasible {
            let kkt = relative_kkt(&gu, gu.norm());
            if kkt <= options.kkt_tol {
                return Ok(SolveReport {
                    objective: qp.value_with(&xu, &pu),
                    params,
                    iterations: 0,
                    kkt_residual: kkt,
                    fixed_point_residual: 0.0,
                    projection_count: 0,
                    wall_time: start.elapsed(),
                    status: SolveStatus::Certified,
                });
            }
        }
    }

    // Accelerated projected gradient with function-value restart.
    let mut projections = 0usize;
    let zero = DMatrix::zeros(xu.nrows(), xu.ncols());
    let warm = t.project(&xu);
    projections += 1;
    let pw = t.apply(&warm);
    let (mut x, mut px) = if initial.is_some() || qp.value_with(&warm, &pw) <= qp.constant {
        (warm, pw)
    } else {
        (zero.clone(), zero.clone())
    };
    let mut fx = qp.value_with(&x, &px);
    let (mut best, mut best_p, mut best_f) = (x.clone(), px.clone(), fx);
    let mut x_prev: DMatrix<f64>;
    let mut px_prev: DMatrix<f64>;
    let mut y = x.clone();
    let mut py = px.clone();
    let mut momentum = 1.0f64;
    let mut lip = t.lipschitz;
    let mut status = SolveStatus::MaxIterations;
    let (mut fp_res, mut kkt_res) = (f64::INFINITY, f64::INFINITY);
    let mut iterations = 0;

    while iterations < options.max_iter {
        iterations += 1;
        let gy = qp.grad_from(&py, &cm);
        let fy = qp.value_with(&y, &py);
        let (xn, pn) = loop {
            let xn = t.project(&(&y - &gy / lip));
            projections += 1;
            let pn = t.apply(&xn);
            let diff = &xn - &y;
            let model = fy + gy.dot(&diff) + 0.5 * lip * diff.norm_squared();
            if qp.value_with(&xn, &pn) <= model + 1e-12 * (1.0 + fy.abs()) {
                break (xn, pn);
            }
            lip *= 2.0;
        };
        let fxn = qp.value_with(&xn, &pn);
        if fxn > fx && y != x {
            // Momentum overshoot: restart from the last accepted point.
            y = x.clone();
            py = px.clone();
            momentum = 1.0;
            continue;
        }
        let step = &y - &xn;
        fp_res = step.norm() / xn.norm().max(1.0);
        let gn = qp.grad_from(&pn, &cm);
        kkt_res = relative_kkt(&gn, (&gn - &gy + &step * lip).norm());

        // A plain gradient step is always accepted; it can only increase
        // the objective by rounding.
        x_prev = std::mem::replace(&mut x, xn);
        px_prev = std::mem::replace(&mut px, pn);
        fx = fxn;
        if fx < best_f {
            best_f = fx;
            best.copy_from(&x);
            best_p.copy_from(&px);
        }
        if fp_res < options.tol && kkt_res <= options.kkt_tol {
            status = SolveStatus::Certified;
            best = x.clone();
            best_p = px.clone();
            break;
        }
        let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / next;
        y = &x + (&x - &x_prev) * beta;
        py = &px + (&px - &px_prev) * beta;
        momentum = next;
    }

    let mut params = t.to_params(&best)?;
    let mut objective = qp.value_with(&best, &best_p);
    if !check_feasible(&params, spec)?.feasible {
        // Only the energy bound can be violated here.
        params = scale_to_feasible(&params, spec)?;
        objective = qp.value(&params);
        status = SolveStatus::Fallback;
    }
    Ok(SolveReport {
        params,
        objective,
        iterations,
        kkt_residual: kkt_res,
        fixed_point_residual: fp_res,
        projection_count: projections,
        wall_time: start.elapsed(),
        status,
    })
}
