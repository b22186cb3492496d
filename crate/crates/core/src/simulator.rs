//! Closed-loop receding-horizon simulation.
//!
//! Every `N_c` steps the controller measures the state and, if it optimises,
//! re-solves its program; inside a segment the feedback acts on noises
//! reconstructed from the measured states.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisFamily, BasisKind};
use crate::error::{check_dim, Error, Result};
use crate::linalg::is_spd;
use crate::lqg::riccati_lqg;
use crate::model::{build_lifted_dynamics, CostBlocks, SystemModel};
use crate::moments::Moments;
use crate::noise::NoiseSpec;
use crate::optimizer::{solve, QpTemplate, SolverOptions};
use crate::policy::{ConstraintSpec, PolicyParams};
use crate::stats::{compensated_sum, mean_std};

/// Time-invariant stage weights plus a terminal weight.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_terminal: DMatrix<f64>,
}

impl StageCost {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, q_terminal: DMatrix<f64>) -> Result<Self> {
        for (what, m) in [("state weight", &q), ("input weight", &r), ("terminal weight", &q_terminal)] {
            if !is_spd(m) {
                return Err(Error::NotPositiveDefinite { what, index: 0 });
            }
        }
        check_dim("terminal weight", q.nrows(), q_terminal.nrows())?;
        Ok(Self { q, r, q_terminal })
    }

    pub fn blocks(&self, horizon: usize) -> Result<CostBlocks> {
        CostBlocks::stationary(&self.q, &self.r, &self.q_terminal, horizon)
    }

    fn stage(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        x.dot(&(&self.q * x)) + u.dot(&(&self.r * u))
    }

    fn terminal(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.q_terminal * x))
    }
}

#[derive(Debug, Clone)]
pub enum ControllerKind {
    /// The stochastic policy `u = η + Θ𝔢(w)` re-optimised every `N_c` steps.
    RhcPolicy {
        horizon: usize,
        control_horizon: usize,
        spec: ConstraintSpec,
        basis: BasisFamily,
        moments: Moments,
        options: SolverOptions,
    },
    /// Certainty-equivalent MPC: future noise set to zero, no feedback term,
    /// `|u_{t,i}| ≤ bound`.
    CeMpc {
        horizon: usize,
        control_horizon: usize,
        bound: f64,
        options: SolverOptions,
    },
    /// Unconstrained finite-horizon LQG; at time `t` the gain `K_{t mod N}`.
    Lqg { horizon: usize },
    /// LQG input clipped to `[-bound, bound]` componentwise.
    SaturatedLqg { horizon: usize, bound: f64 },
}

impl ControllerKind {
    pub fn label(&self) -> String {
        match self {
            Self::RhcPolicy { horizon, control_horizon, .. } => format!("rhc-policy(N={horizon},Nc={control_horizon})"),
            Self::CeMpc { horizon, control_horizon, .. } => format!("ce-mpc(N={horizon},Nc={control_horizon})"),
            Self::Lqg { horizon } => format!("lqg(N={horizon})"),
            Self::SaturatedLqg { horizon, .. } => format!("saturated-lqg(N={horizon})"),
        }
    }

    /// Componentwise input bound honoured by construction, if any.
    pub fn input_bound(&self) -> Option<(crate::policy::NormKind, f64)> {
        match self {
            Self::RhcPolicy { spec, .. } => Some((spec.p, spec.u_max)),
            Self::CeMpc { bound, .. } | Self::SaturatedLqg { bound, .. } => {
                Some((crate::policy::NormKind::Inf, *bound))
            }
            Self::Lqg { .. } => None,
        }
    }
}

enum Law {
    Optimising { template: QpTemplate, control_horizon: usize, options: SolverOptions },
    Linear { gains: Vec<DMatrix<f64>>, clip: Option<f64> },
}

/// A controller with its horizon-dependent data precomputed.
pub struct PreparedController {
    sys: SystemModel,
    cost: StageCost,
    kind: ControllerKind,
    law: Law,
}

impl PreparedController {
    pub fn new(sys: &SystemModel, cost: &StageCost, kind: ControllerKind) -> Result<Self> {
        check_dim("state weight", sys.n(), cost.q.nrows())?;
        check_dim("input weight", sys.m(), cost.r.nrows())?;
        let law = match &kind {
            ControllerKind::RhcPolicy { horizon, control_horizon, spec, basis, moments, options } => {
                check_control_horizon(*horizon, *control_horizon)?;
                let lifted = build_lifted_dynamics(sys, *horizon)?;
                let blocks = cost.blocks(*horizon)?;
                let moments = if moments.horizon == *horizon {
                    moments.clone()
                } else {
                    moments.with_horizon(*horizon)?
                };
                Law::Optimising {
                    template: QpTemplate::new(&lifted, &blocks, &moments, basis, spec)?,
                    control_horizon: *control_horizon,
                    options: *options,
                }
            }
            ControllerKind::CeMpc { horizon, control_horizon, bound, options } => {
                check_control_horizon(*horizon, *control_horizon)?;
                let lifted = build_lifted_dynamics(sys, *horizon)?;
                let blocks = cost.blocks(*horizon)?;
                let basis = BasisFamily::new(BasisKind::Saturation, sys.n())?;
                let spec = ConstraintSpec::rowwise_inf(*bound)?;
                Law::Optimising {
                    template: QpTemplate::open_loop(&lifted, &blocks, &basis, &spec)?,
                    control_horizon: *control_horizon,
                    options: *options,
                }
            }
            ControllerKind::Lqg { horizon } => Law::Linear {
                gains: riccati_lqg(sys, &cost.blocks(*horizon)?, *horizon)?,
                clip: None,
            },
            ControllerKind::SaturatedLqg { horizon, bound } => {
                if !(*bound > 0.0) {
                    return Err(Error::InvalidArgument("saturation bound must be positive".into()));
                }
                Law::Linear {
                    gains: riccati_lqg(sys, &cost.blocks(*horizon)?, *horizon)?,
                    clip: Some(*bound),
                }
            }
        };
        Ok(Self {
            sys: sys.clone(),
            cost: cost.clone(),
            kind,
            law,
        })
    }

    pub fn kind(&self) -> &ControllerKind {
        &self.kind
    }

    /// Steps between re-measurements (1 for static feedback).
    pub fn segment_length(&self) -> usize {
        match &self.law {
            Law::Optimising { control_horizon, .. } => *control_horizon,
            Law::Linear { .. } => 1,
        }
    }

    /// Policy the controller would apply from state `x` (optimising kinds).
    pub fn plan(&self, x: &DVector<f64>) -> Result<Option<(PolicyParams, bool)>> {
        match &self.law {
            Law::Optimising { template, options, .. } => {
                let qp = template.instantiate(x)?;
                let report = solve(&qp, options)?;
                let ok = report.certified();
                Ok(Some((report.params, ok)))
            }
            Law::Linear { .. } => Ok(None),
        }
    }

    /// Runs from `x_start` at absolute time `t_start` through the given noise.
    /// For optimising controllers `t_start` must be a segment boundary.
    pub fn simulate_path(
        &self,
        x_start: &DVector<f64>,
        t_start: usize,
        noise: &[DVector<f64>],
    ) -> Result<PathResult> {
        self.simulate_with_first_plan(x_start, t_start, noise, None)
    }

    /// As [`simulate_path`](Self::simulate_path), reusing `first`, the plan
    /// computed by [`plan`](Self::plan) at `x_start`, for the first segment.
    pub(crate) fn simulate_with_first_plan(
        &self,
        x_start: &DVector<f64>,
        t_start: usize,
        noise: &[DVector<f64>],
        first: Option<&(PolicyParams, bool)>,
    ) -> Result<PathResult> {
        check_dim("initial state", self.sys.n(), x_start.len())?;
        let steps = noise.len();
        let mut states = Vec::with_capacity(steps + 1);
        let mut inputs = Vec::with_capacity(steps);
        let mut stage_costs = Vec::with_capacity(steps + 1);
        let mut certified = true;
        let mut solves = 0usize;
        states.push(x_start.clone());
        match &self.law {
            Law::Linear { gains, clip } => {
                for (k, w) in noise.iter().enumerate() {
                    let x = &states[k];
                    let mut u = &gains[(t_start + k) % gains.len()] * x;
                    if let Some(b) = clip {
                        u.apply(|v| *v = v.clamp(-b, *b));
                    }
                    stage_costs.push(self.cost.stage(x, &u));
                    let next = self.sys.step(x, &u, w);
                    inputs.push(u);
                    states.push(next);
                }
            }
            Law::Optimising { template, control_horizon, options } => {
                let d = template.basis().dim_per_noise();
                let mut k = 0;
                while k < steps {
                    let params = match first.filter(|_| k == 0) {
                        Some((params, ok)) => {
                            certified &= ok;
                            params.clone()
                        }
                        None => {
                            let qp = template.instantiate(&states[k])?;
                            let report = solve(&qp, options)?;
                            certified &= report.certified();
                            report.params
                        }
                    };
                    solves += 1;
                    let seg = (*control_horizon).min(steps - k);
                    let mut e_prefix: Vec<f64> = Vec::with_capacity(seg * d);
                    for l in 0..seg {
                        if l > 0 {
                            let i = k + l;
                            let w_hat = &states[i] - self.sys.a_bar() * &states[i - 1]
                                - self.sys.b_bar() * &inputs[i - 1];
                            let e = template.basis().eval_stage(w_hat.as_slice())?;
                            e_prefix.extend(e.iter());
                        }
                        let u = params.control_at(l, &e_prefix);
                        let x = &states[k + l];
                        stage_costs.push(self.cost.stage(x, &u));
                        let next = self.sys.step(x, &u, &noise[k + l]);
                        inputs.push(u);
                        states.push(next);
                    }
                    k += seg;
                }
            }
        }
        stage_costs.push(self.cost.terminal(&states[steps]));
        let cumulative_cost = compensated_sum(stage_costs.iter().copied());
        Ok(PathResult {
            states,
            inputs,
            stage_costs,
            cumulative_cost,
            certified,
            solves,
        })
    }
}

fn check_control_horizon(horizon: usize, control_horizon: usize) -> Result<()> {
    if control_horizon == 0 || control_horizon > horizon {
        return Err(Error::InvalidArgument(format!(
            "control horizon must satisfy 1 ≤ N_c ≤ N, got N_c = {control_horizon}, N = {horizon}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    /// `x_0 … x_T`
    pub states: Vec<DVector<f64>>,
    /// `u_0 … u_{T-1}`
    pub inputs: Vec<DVector<f64>>,
    /// `T` stage costs followed by the terminal cost.
    pub stage_costs: Vec<f64>,
    pub cumulative_cost: f64,
    /// All solves along the path were certified.
    pub certified: bool,
    pub solves: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub stream: u64,
    pub path: PathResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub controller: String,
    pub seed: u64,
    pub horizon: usize,
    pub realizations: Vec<Realization>,
}

impl TrajectoryBatch {
    /// Realizations whose solves were all certified.
    pub fn usable(&self) -> impl Iterator<Item = &Realization> {
        self.realizations.iter().filter(|r| r.path.certified)
    }

    pub fn flagged(&self) -> usize {
        self.realizations.iter().filter(|r| !r.path.certified).count()
    }

    /// Largest componentwise input magnitude, and largest stage `p`-norm.
    pub fn max_input_norm(&self, p: crate::policy::NormKind) -> f64 {
        self.realizations
            .iter()
            .flat_map(|r| r.path.inputs.iter())
            .map(|u| p.of(u.as_slice()))
            .fold(0.0, f64::max)
    }

    pub fn input_count(&self) -> usize {
        self.realizations.iter().map(|r| r.path.inputs.len()).sum()
    }
}

/// Simulates `realizations` independent noise paths of length `T` from `x0`.
/// Realization `i` draws its noise from stream `i` of `seed`, so batches with
/// equal seeds share noise paths.
#[allow(clippy::too_many_arguments)]
pub fn run_receding_horizon(
    sys: &SystemModel,
    cost: &StageCost,
    controller: &ControllerKind,
    noise: &NoiseSpec,
    x0: &DVector<f64>,
    horizon: usize,
    realizations: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    let prepared = PreparedController::new(sys, cost, controller.clone())?;
    run_prepared(&prepared, noise, x0, horizon, realizations, seed)
}

pub fn run_prepared(
    prepared: &PreparedController,
    noise: &NoiseSpec,
    x0: &DVector<f64>,
    horizon: usize,
    realizations: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    check_dim("noise dimension", prepared.sys.n(), noise.dim())?;
    let sampler = noise.sampler()?;
    // Every realization starts from the same state, so the first solve is shared.
    let first = if horizon > 0 { prepared.plan(x0)? } else { None };
    let runs: Vec<Result<Realization>> = (0..realizations as u64)
        .into_par_iter()
        .map(|stream| {
            let w = sampler.path(seed, stream, horizon);
            Ok(Realization {
                stream,
                path: prepared.simulate_with_first_plan(x0, 0, &w, first.as_ref())?,
            })
        })
        .collect();
    Ok(TrajectoryBatch {
        controller: prepared.kind.label(),
        seed,
        horizon,
        realizations: runs.into_iter().collect::<Result<_>>()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub used: usize,
    pub flagged: usize,
    pub mean_cost: f64,
    pub std_cost: f64,
    /// Mean of `‖x_t‖²`, `t = 0..=T`.
    pub mean_state_sq: Vec<f64>,
    /// Mean and standard deviation of the running cost `Σ_{s<t}` stage cost,
    /// `t = 1..=T` (the last entry includes the terminal cost).
    pub mean_running_cost: Vec<f64>,
    pub std_running_cost: Vec<f64>,
}

pub fn aggregate(batch: &TrajectoryBatch) -> Result<BatchStats> {
    let used: Vec<&Realization> = batch.usable().collect();
    if used.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let costs: Vec<f64> = used.iter().map(|r| r.path.cumulative_cost).collect();
    let (mean_cost, std_cost) = mean_std(&costs);
    let steps = used[0].path.inputs.len();
    let mean_state_sq = (0..=steps)
        .map(|t| {
            let v: Vec<f64> = used.iter().map(|r| r.path.states[t].norm_squared()).collect();
            mean_std(&v).0
        })
        .collect();
    let running: Vec<Vec<f64>> = used
        .iter()
        .map(|r| {
            let c = &r.path.stage_costs;
            let mut acc = Vec::with_capacity(steps);
            for t in 1..=steps {
                let upto = if t == steps { c.len() } else { t };
                acc.push(compensated_sum(c[..upto].iter().copied()));
            }
            acc
        })
        .collect();
    let (mut mean_running_cost, mut std_running_cost) = (Vec::with_capacity(steps), Vec::with_capacity(steps));
    for t in 0..steps {
        let v: Vec<f64> = running.iter().map(|r| r[t]).collect();
        let (m, s) = mean_std(&v);
        mean_running_cost.push(m);
        std_running_cost.push(s);
    }
    Ok(BatchStats {
        used: used.len(),
        flagged: batch.flagged(),
        mean_cost,
        std_cost,
        mean_state_sq,
        mean_running_cost,
        std_running_cost,
    })
}

/// Per-realization ratio `numerator / denominator` of cumulative costs for
/// two batches driven by the same noise paths. Realizations flagged in either
/// batch are skipped.
pub fn paired_cost_ratio(numerator: &TrajectoryBatch, denominator: &TrajectoryBatch) -> Result<Vec<f64>> {
    if numerator.seed != denominator.seed
        || numerator.realizations.len() != denominator.realizations.len()
        || numerator.horizon != denominator.horizon
    {
        return Err(Error::SeedMismatch);
    }
    let mut out = Vec::new();
    for (a, b) in numerator.realizations.iter().zip(&denominator.realizations) {
        if a.stream != b.stream {
            return Err(Error::SeedMismatch);
        }
        if a.path.certified && b.path.certified {
            out.push(a.path.cumulative_cost / b.path.cumulative_cost);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(out)
}
