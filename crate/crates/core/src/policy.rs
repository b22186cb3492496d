//! Policies `u = η + Θ 𝔢(w)` and their constraint sets.
//!
//! Per stage the pair `(η_t, Θ_t)` is handled as one `m × (1 + t·d)` block
//! `Z = [η_t | Θ_t]`, where only the first `t·d` columns of `Θ_t` may be
//! nonzero.

use nalgebra::{DMatrix, DMatrixView, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisFamily;
use crate::error::{check_dim, Error, Result};
use crate::linalg::is_spd;
use crate::model::SystemModel;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    eta: DVector<f64>,
    theta: DMatrix<f64>,
    basis: BasisFamily,
    horizon: usize,
    m: usize,
}

impl PolicyParams {
    pub fn new(
        eta: DVector<f64>,
        theta: DMatrix<f64>,
        basis: BasisFamily,
        horizon: usize,
        m: usize,
    ) -> Result<Self> {
        if horizon == 0 || m == 0 {
            return Err(Error::InvalidArgument("horizon and input dimension must be positive".into()));
        }
        let d = basis.dim_per_noise();
        check_dim("open-loop part", horizon * m, eta.len())?;
        check_dim("feedback rows", horizon * m, theta.nrows())?;
        check_dim("feedback columns", (horizon - 1) * d, theta.ncols())?;
        for t in 0..horizon {
            let free = t * d;
            for r in t * m..(t + 1) * m {
                if (free..theta.ncols()).any(|c| theta[(r, c)] != 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "feedback block of stage {t} acts on noise from stage ≥ {t}; the policy must be causal"
                    )));
                }
            }
        }
        Ok(Self {
            eta,
            theta,
            basis,
            horizon,
            m,
        })
    }

    pub fn zeros(basis: BasisFamily, horizon: usize, m: usize) -> Result<Self> {
        let d = basis.dim_per_noise();
        Self::new(
            DVector::zeros(horizon * m),
            DMatrix::zeros(horizon * m, horizon.saturating_sub(1) * d),
            basis,
            horizon,
            m,
        )
    }

    /// From `X = [η | Θ]`.
    pub fn from_combined(x: &DMatrix<f64>, basis: BasisFamily, horizon: usize, m: usize) -> Result<Self> {
        if x.ncols() == 0 {
            return Err(Error::DimensionMismatch {
                what: "combined policy columns",
                expected: 1,
                found: 0,
            });
        }
        Self::new(
            x.column(0).into_owned(),
            x.columns(1, x.ncols() - 1).into_owned(),
            basis,
            horizon,
            m,
        )
    }

    /// `X = [η | Θ]`.
    pub fn to_combined(&self) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.eta.len(), 1 + self.theta.ncols());
        x.set_column(0, &self.eta);
        x.columns_mut(1, self.theta.ncols()).copy_from(&self.theta);
        x
    }

    pub fn eta(&self) -> &DVector<f64> {
        &self.eta
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn basis(&self) -> &BasisFamily {
        &self.basis
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.basis.dim_per_noise()
    }

    /// Stage block `[η_t | Θ_t]` restricted to its causal columns.
    pub fn stage_block(&self, t: usize) -> DMatrix<f64> {
        let (m, k) = (self.m, t * self.d());
        let mut z = DMatrix::zeros(m, 1 + k);
        z.set_column(0, &self.eta.rows(t * m, m));
        z.columns_mut(1, k).copy_from(&self.theta.view((t * m, 0), (m, k)));
        z
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            eta: &self.eta * factor,
            theta: &self.theta * factor,
            ..self.clone()
        }
    }

    /// `u = η + Θ 𝔢(w)` for `w = (w_0, …, w_{N-2})`.
    pub fn control_sequence(&self, w: &[f64]) -> Result<DVector<f64>> {
        let e = crate::basis::eval_basis(&self.basis, w, self.horizon)?;
        Ok(&self.eta + &self.theta * e)
    }

    /// Input at stage `t` given `𝔢` of the first `t` noises (at least `t·d`
    /// entries; extra entries are ignored).
    pub fn control_at(&self, t: usize, e_prefix: &[f64]) -> DVector<f64> {
        let (m, k) = (self.m, t * self.d());
        let mut u = self.eta.rows(t * m, m).into_owned();
        if k > 0 {
            let e = DVector::from_column_slice(&e_prefix[..k]);
            u += self.theta.view((t * m, 0), (m, k)) * e;
        }
        u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    One,
    Two,
    Inf,
}

impl NormKind {
    pub fn of(&self, v: &[f64]) -> f64 {
        match self {
            Self::One => v.iter().map(|x| x.abs()).sum(),
            Self::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Self::Inf => v.iter().map(|x| x.abs()).fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintVariant {
    /// Induced-norm bounds valid for any bounded basis.
    Generic,
    /// Per-row bound `|η_{t,i}| + φ_max ‖Θ_{t,i}‖₁ ≤ U`.
    RowwiseInf,
    /// `‖η_t‖₂ + √(N−1) ‖Θ_t‖_F ≤ U` for orthonormal bases. The argument
    /// behind it goes through the L² inner product, so it bounds the
    /// root-mean-square input rather than every realization.
    Orthonormal,
    /// `‖[η_t Θ_t]‖_F ≤ U / √N` for orthonormal bases; a root-mean-square
    /// bound like [`ConstraintVariant::Orthonormal`].
    FiniteDim,
}

/// How many basis entries enter the `p = 1` and `p = 2` generic bounds and
/// the energy bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CountRule {
    /// Stage index `t` times `ℰ` (`p = 1`), `1 + ℰt` (`p = 2`), `‖S‖∞ ℰ`
    /// (energy). Only sound when each stage noise yields a single entry.
    AsPrinted,
    /// Counts all `t·d` entries: `ℰ t d`, `1 + ℰ² t d`, `ℰ √((N−1)d)`.
    #[default]
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBound {
    pub s: DMatrix<f64>,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub p: NormKind,
    pub u_max: f64,
    pub variant: ConstraintVariant,
    pub energy: Option<EnergyBound>,
    #[serde(default)]
    pub count: CountRule,
}

impl ConstraintSpec {
    pub fn new(p: NormKind, u_max: f64, variant: ConstraintVariant) -> Result<Self> {
        if !(u_max > 0.0) {
            return Err(Error::InvalidArgument(format!("input bound must be positive, got {u_max}")));
        }
        let ok = match variant {
            ConstraintVariant::Generic => true,
            ConstraintVariant::RowwiseInf => p == NormKind::Inf,
            ConstraintVariant::Orthonormal | ConstraintVariant::FiniteDim => p == NormKind::Two,
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "constraint variant {variant:?} is not defined for the {p:?} norm"
            )));
        }
        Ok(Self {
            p,
            u_max,
            variant,
            energy: None,
            count: CountRule::default(),
        })
    }

    /// Row-wise ∞ bound, the default for bounded inputs.
    pub fn rowwise_inf(u_max: f64) -> Result<Self> {
        Self::new(NormKind::Inf, u_max, ConstraintVariant::RowwiseInf)
    }

    pub fn with_energy(mut self, s: DMatrix<f64>, beta: f64) -> Result<Self> {
        if !(beta > 0.0) || !is_spd(&s) {
            return Err(Error::InvalidArgument(
                "energy bound needs β > 0 and a symmetric positive definite weight".into(),
            ));
        }
        self.energy = Some(EnergyBound { s, beta });
        Ok(self)
    }

    pub fn with_count(mut self, count: CountRule) -> Self {
        self.count = count;
        self
    }

    /// Basis compatibility of the variant.
    pub fn check_basis(&self, basis: &BasisFamily) -> Result<()> {
        match self.variant {
            ConstraintVariant::Orthonormal | ConstraintVariant::FiniteDim if !basis.is_orthonormal() => {
                Err(Error::VariantBasisMismatch {
                    variant: format!("{:?}", self.variant),
                    basis: basis.label().to_string(),
                })
            }
            _ => Ok(()),
        }
    }

    /// Stage functional for the block `Z = [η_t | Θ_t]`; the stage is
    /// feasible iff the value is at most `u_max`.
    pub fn stage_lhs(&self, ctx: &StageContext, z: DMatrixView<f64>) -> f64 {
        let eta = z.column(0);
        let theta = z.columns(1, z.ncols() - 1);
        let row_l1 = |i: usize| theta.row(i).iter().map(|v| v.abs()).sum::<f64>();
        match (self.variant, self.p) {
            (ConstraintVariant::RowwiseInf, _) => (0..z.nrows())
                .map(|i| eta[i].abs() + ctx.phi_max * row_l1(i))
                .fold(0.0, f64::max),
            (ConstraintVariant::Generic, NormKind::Inf) => {
                eta.amax() + ctx.bound * (0..z.nrows()).map(row_l1).fold(0.0, f64::max)
            }
            (ConstraintVariant::Generic, NormKind::One) => {
                let col_max = theta
                    .column_iter()
                    .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
                    .fold(0.0, f64::max);
                eta.iter().map(|v| v.abs()).sum::<f64>() + self.one_norm_factor(ctx) * col_max
            }
            (ConstraintVariant::Generic, NormKind::Two) => z.norm() * self.two_norm_factor(ctx),
            (ConstraintVariant::Orthonormal, _) => {
                eta.norm() + ((ctx.horizon - 1) as f64).sqrt() * theta.norm()
            }
            (ConstraintVariant::FiniteDim, _) => z.norm() * (ctx.horizon as f64).sqrt(),
        }
    }

    /// Multiplier of the largest column sum in the generic `p = 1` bound.
    pub fn one_norm_factor(&self, ctx: &StageContext) -> f64 {
        let t = ctx.stage as f64;
        match self.count {
            CountRule::AsPrinted => ctx.bound * t,
            CountRule::Corrected => ctx.bound * t * ctx.d as f64,
        }
    }

    /// Multiplier of `‖[η_t Θ_t]‖_F` in the generic `p = 2` bound.
    pub fn two_norm_factor(&self, ctx: &StageContext) -> f64 {
        let t = ctx.stage as f64;
        match self.count {
            CountRule::AsPrinted => (1.0 + ctx.bound * t).sqrt(),
            CountRule::Corrected => (1.0 + ctx.bound * ctx.bound * t * ctx.d as f64).sqrt(),
        }
    }

    /// Multiplier `k` in `‖η‖_S + k ‖Θ‖_S ≤ β`.
    pub fn energy_factor(&self, bound: f64, horizon: usize, d: usize) -> Option<f64> {
        let e = self.energy.as_ref()?;
        Some(match self.count {
            CountRule::AsPrinted => {
                let inf = e
                    .s
                    .row_iter()
                    .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
                    .fold(0.0, f64::max);
                inf * bound
            }
            CountRule::Corrected => bound * (((horizon - 1) * d) as f64).sqrt(),
        })
    }

    /// `‖η‖_S + k ‖Θ‖_S` for the full policy.
    pub fn energy_lhs(&self, eta: &DVector<f64>, theta: &DMatrix<f64>, bound: f64, horizon: usize, d: usize) -> Option<f64> {
        let e = self.energy.as_ref()?;
        let k = self.energy_factor(bound, horizon, d)?;
        let eta_s = eta.dot(&(&e.s * eta)).max(0.0).sqrt();
        let theta_s = theta.dot(&(&e.s * theta)).max(0.0).sqrt();
        Some(eta_s + k * theta_s)
    }
}

/// Per-stage data the constraint functionals depend on.
#[derive(Debug, Clone, Copy)]
pub struct StageContext {
    pub stage: usize,
    pub horizon: usize,
    pub d: usize,
    /// `ℰ`
    pub bound: f64,
    pub phi_max: f64,
}

impl StageContext {
    pub fn new(basis: &BasisFamily, horizon: usize, stage: usize) -> Self {
        Self {
            stage,
            horizon,
            d: basis.dim_per_noise(),
            bound: basis.vector_bound(),
            phi_max: basis.component_bound(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// `U − lhs` per stage.
    pub stage_slack: Vec<f64>,
    /// `β − lhs` when an energy bound is present.
    pub energy_slack: Option<f64>,
}

pub fn check_feasible(params: &PolicyParams, spec: &ConstraintSpec) -> Result<FeasibilityReport> {
    spec.check_basis(&params.basis)?;
    let stage_slack: Vec<f64> = (0..params.horizon)
        .map(|t| {
            let ctx = StageContext::new(&params.basis, params.horizon, t);
            spec.u_max - spec.stage_lhs(&ctx, params.stage_block(t).as_view())
        })
        .collect();
    let energy_slack = match &spec.energy {
        Some(e) => {
            check_dim("energy weight", params.eta.len(), e.s.nrows())?;
            let lhs = spec
                .energy_lhs(&params.eta, &params.theta, params.basis.vector_bound(), params.horizon, params.d())
                .expect("energy present");
            Some(e.beta - lhs)
        }
        None => None,
    };
    let feasible = stage_slack.iter().all(|&s| s >= 0.0) && energy_slack.is_none_or(|s| s >= 0.0);
    Ok(FeasibilityReport {
        feasible,
        stage_slack,
        energy_slack,
    })
}

/// Largest `t ∈ [0, 1]` (up to the last representable step) such that
/// `t · params` is feasible.
pub fn scale_to_feasible(params: &PolicyParams, spec: &ConstraintSpec) -> Result<PolicyParams> {
    let report = check_feasible(params, spec)?;
    if report.feasible {
        return Ok(params.clone());
    }
    let mut t: f64 = 1.0;
    for s in &report.stage_slack {
        let lhs = spec.u_max - s;
        if lhs > spec.u_max {
            t = t.min(spec.u_max / lhs);
        }
    }
    if let (Some(s), Some(e)) = (report.energy_slack, &spec.energy) {
        let lhs = e.beta - s;
        if lhs > e.beta {
            t = t.min(e.beta / lhs);
        }
    }
    // All functionals are absolutely homogeneous; step down past rounding.
    loop {
        let candidate = params.scaled(t);
        if check_feasible(&candidate, spec)?.feasible {
            return Ok(candidate);
        }
        t = if t > 1e-300 { t.next_down() } else { 0.0 };
        if t == 0.0 {
            return Ok(params.scaled(0.0));
        }
    }
}

/// `w_i = x_{i+1} − Ā x_i − B̄ u_i`.
pub fn reconstruct_noise(
    sys: &SystemModel,
    states: &[DVector<f64>],
    inputs: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    check_dim("number of states", inputs.len() + 1, states.len())?;
    let mut out = Vec::with_capacity(inputs.len());
    for (i, u) in inputs.iter().enumerate() {
        check_dim("state", sys.n(), states[i].len())?;
        check_dim("input", sys.m(), u.len())?;
        out.push(&states[i + 1] - sys.a_bar() * &states[i] - sys.b_bar() * u);
    }
    Ok(out)
}
