//! Experiment orchestration: moments, closed-loop batches, comparisons,
//! certificates and artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use srhc_core::model::build_lifted_dynamics;
use srhc_core::moments::{Moments, StageMoments};
use srhc_core::optimizer::{solve, QpTemplate, SolveStatus};
use srhc_core::policy::{ConstraintVariant, NormKind};
use srhc_core::simulator::{aggregate, paired_cost_ratio, run_prepared, PreparedController, TrajectoryBatch};
use srhc_core::stability::{certificate, empirical_second_moment, CertificateInput, StabilityCertificate};
use srhc_core::stats::mean_std;

use crate::cache::{load_or_build, CacheDescriptor, CacheOutcome};
use crate::config::{ControllerConfig, ControllerType, Experiment};
use crate::error::{io_err, CliError, Result};
use crate::output::{append_trajectory_rows, line_plot_svg, trajectory_header, write_file, Series};

pub const SUMMARY_FILE: &str = "summary.json";
pub const FAILED_FILE: &str = "FAILED";
pub const CERTIFICATE_FILE: &str = "certificate.txt";

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Artifact directory.
    pub out_dir: PathBuf,
    /// Where moment caches live; the artifact directory when `None`.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentsRef {
    pub file: String,
    pub key: String,
    pub cache_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSummary {
    pub name: String,
    pub label: String,
    pub csv: String,
    pub realizations: usize,
    pub used: usize,
    pub flagged: usize,
    pub mean_cost: f64,
    pub std_cost: f64,
    pub solves: usize,
    /// Largest `‖u_t‖∞` over all recorded inputs.
    pub max_input_inf: f64,
    /// `(norm, bound)` the controller guarantees, if any.
    pub input_bound: Option<(NormKind, f64)>,
    /// Recorded inputs whose norm exceeds the bound.
    pub bound_violations: usize,
    pub input_count: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub numerator: String,
    pub denominator: String,
    pub pairs: usize,
    /// Mean and standard deviation of the per-realization cost ratio.
    pub mean_ratio: f64,
    pub std_ratio: f64,
    /// `mean cost(numerator) / mean cost(denominator)`.
    pub mean_cost_ratio: f64,
    /// `100 (1 − mean cost(denominator) / mean cost(numerator))`.
    pub savings_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub controller: String,
    pub control_horizon: usize,
    /// Diagnostic when no certificate applies.
    pub refused: Option<String>,
    pub sup_bound: Option<f64>,
    pub best_sup_bound: Option<f64>,
    pub best_zeta: Option<f64>,
    pub max_lyapunov_residual: Option<f64>,
    /// `sup_t` of the empirical `E‖x_t‖²` for the first initial state.
    pub empirical_sup: Option<f64>,
    pub holds: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub description: String,
    pub steps: usize,
    pub draws: usize,
    pub realizations_per_draw: usize,
    pub seed: u64,
    pub moments: Option<MomentsRef>,
    pub controllers: Vec<ControllerSummary>,
    pub comparisons: Vec<ComparisonSummary>,
    pub certificates: Vec<CertificateSummary>,
    pub plots: Vec<String>,
    pub wall_seconds: f64,
}

impl ExperimentSummary {
    pub fn controller(&self, name: &str) -> Option<&ControllerSummary> {
        self.controllers.iter().find(|c| c.name == name)
    }

    pub fn comparison(&self, numerator: &str, denominator: &str) -> Option<&ComparisonSummary> {
        self.comparisons
            .iter()
            .find(|c| c.numerator == numerator && c.denominator == denominator)
    }
}

/// Loads (or estimates and stores) the stage moments the experiment needs.
pub fn experiment_moments(exp: &Experiment, cache_dir: &Path) -> Result<Option<(MomentsRef, StageMoments)>> {
    let Some(horizon) = exp.moment_horizon() else {
        return Ok(None);
    };
    let descriptor = CacheDescriptor {
        basis: exp.basis.clone(),
        noise: exp.noise.clone(),
        horizon,
        samples: exp.config.moments.samples,
        seed: exp.config.moments.seed,
    };
    let (path, moments, outcome) = load_or_build(cache_dir, &descriptor)?;
    let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Some((
        MomentsRef {
            file,
            key: descriptor.key()?,
            cache_hit: outcome == CacheOutcome::Hit,
        },
        moments,
    )))
}

/// Runs every controller of the experiment and writes the artifacts. On
/// failure the artifacts written so far are kept next to a `FAILED` marker.
pub fn run_experiment(exp: &Experiment, opts: &RunOptions) -> Result<ExperimentSummary> {
    let dir = &opts.out_dir;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let marker = dir.join(FAILED_FILE);
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(io_err(&marker))?;
    }
    match run_inner(exp, opts) {
        Ok(summary) => Ok(summary),
        Err(e) => {
            let _ = std::fs::write(&marker, format!("{e}\n"));
            Err(e)
        }
    }
}

fn run_inner(exp: &Experiment, opts: &RunOptions) -> Result<ExperimentSummary> {
    let start = Instant::now();
    let dir = &opts.out_dir;
    let cache_dir = opts.cache_dir.as_deref().unwrap_or(dir);
    let moments = experiment_moments(exp, cache_dir)?;
    let stage = moments.as_ref().map(|(_, m)| m);
    let sim = &exp.config.simulation;
    let (n, m) = (exp.sys.n(), exp.sys.m());

    let mut summaries = Vec::new();
    let mut batches: Vec<Vec<TrajectoryBatch>> = Vec::new();
    for c in &exp.config.controllers {
        let t0 = Instant::now();
        let kind = exp.controller_kind(c, stage)?;
        let prepared = PreparedController::new(&exp.sys, &exp.cost, kind.clone())?;
        let per_draw: Vec<TrajectoryBatch> = exp
            .x0
            .par_iter()
            .enumerate()
            .map(|(i, x0)| run_prepared(&prepared, &exp.noise, x0, sim.steps, sim.realizations, draw_seed(sim.seed, i)))
            .collect::<srhc_core::Result<_>>()?;
        let mut csv = trajectory_header(n, m);
        for (i, batch) in per_draw.iter().enumerate() {
            append_trajectory_rows(&mut csv, i, batch, m);
        }
        let csv_name = format!("{}.csv", c.name);
        write_file(&dir.join(&csv_name), &csv)?;
        let merged = merge(&per_draw);
        let bound = kind.input_bound();
        let bound_violations = bound.map_or(0, |(p, u)| {
            merged
                .realizations
                .iter()
                .flat_map(|r| r.path.inputs.iter())
                .filter(|v| p.of(v.as_slice()) > u)
                .count()
        });
        let (used, flagged, mean_cost, std_cost) = match aggregate(&merged) {
            Ok(s) => (s.used, s.flagged, s.mean_cost, s.std_cost),
            Err(srhc_core::Error::EmptyBatch) => (0, merged.flagged(), f64::NAN, f64::NAN),
            Err(e) => return Err(e.into()),
        };
        summaries.push(ControllerSummary {
            name: c.name.clone(),
            label: kind.label(),
            csv: csv_name,
            realizations: merged.realizations.len(),
            used,
            flagged,
            mean_cost,
            std_cost,
            solves: merged.realizations.iter().map(|r| r.path.solves).sum(),
            max_input_inf: merged.max_input_norm(NormKind::Inf),
            input_bound: bound,
            bound_violations,
            input_count: merged.input_count(),
            wall_seconds: t0.elapsed().as_secs_f64(),
        });
        log::info!("{}: mean cost {mean_cost:.6e} ({flagged} flagged)", c.name);
        batches.push(per_draw);
    }

    let mut comparisons = Vec::new();
    for cmp in &exp.config.comparisons {
        let i = index_of(exp, &cmp.numerator);
        let j = index_of(exp, &cmp.denominator);
        let mut ratios = Vec::new();
        for (a, b) in batches[i].iter().zip(&batches[j]) {
            match paired_cost_ratio(a, b) {
                Ok(r) => ratios.extend(r),
                Err(srhc_core::Error::EmptyBatch) => {}
                Err(e) => return Err(e.into()),
            }
        }
        let (mean_ratio, std_ratio) = if ratios.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&ratios) };
        let (ci, cj) = (summaries[i].mean_cost, summaries[j].mean_cost);
        comparisons.push(ComparisonSummary {
            numerator: cmp.numerator.clone(),
            denominator: cmp.denominator.clone(),
            pairs: ratios.len(),
            mean_ratio,
            std_ratio,
            mean_cost_ratio: ci / cj,
            savings_percent: 100.0 * (1.0 - cj / ci),
        });
    }

    let plots = write_plots(exp, dir, &batches)?;

    let mut certificates = Vec::new();
    if let Some(cfg) = &exp.config.certificate {
        for (c, per_draw) in exp.config.controllers.iter().zip(&batches) {
            if c.kind != ControllerType::RhcPolicy {
                continue;
            }
            let mut s = certify_controller(exp, c, stage, &exp.x0[0], cfg.zeta)?;
            if let (Some(bound), Ok(emp)) = (s.sup_bound, empirical_second_moment(&per_draw[0])) {
                let sup = emp.running_sup.last().copied().unwrap_or(f64::NAN);
                s.empirical_sup = Some(sup);
                s.holds = Some(bound >= sup);
            }
            certificates.push(s);
        }
        write_file(&dir.join(CERTIFICATE_FILE), &certificate_report(&certificates))?;
    }

    let summary = ExperimentSummary {
        name: exp.config.name.clone(),
        description: exp.config.description.clone(),
        steps: sim.steps,
        draws: exp.x0.len(),
        realizations_per_draw: sim.realizations,
        seed: sim.seed,
        moments: moments.map(|(r, _)| r),
        controllers: summaries,
        comparisons,
        certificates,
        plots,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    write_file(&dir.join(SUMMARY_FILE), &serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Seed of the noise paths for initial state number `draw`.
pub fn draw_seed(seed: u64, draw: usize) -> u64 {
    seed.wrapping_add(draw as u64)
}

fn index_of(exp: &Experiment, name: &str) -> usize {
    exp.config.controllers.iter().position(|c| c.name == name).unwrap_or(0)
}

fn merge(batches: &[TrajectoryBatch]) -> TrajectoryBatch {
    let first = &batches[0];
    TrajectoryBatch {
        controller: first.controller.clone(),
        seed: first.seed,
        horizon: first.horizon,
        realizations: batches.iter().flat_map(|b| b.realizations.iter().cloned()).collect(),
    }
}

fn write_plots(exp: &Experiment, dir: &Path, batches: &[Vec<TrajectoryBatch>]) -> Result<Vec<String>> {
    let mut mean = Vec::new();
    let mut std = Vec::new();
    let mut second = Vec::new();
    for (c, per_draw) in exp.config.controllers.iter().zip(batches) {
        let Ok(stats) = aggregate(&merge(per_draw)) else { continue };
        mean.push(Series { label: c.name.clone(), values: stats.mean_running_cost });
        std.push(Series { label: c.name.clone(), values: stats.std_running_cost });
        second.push(Series { label: c.name.clone(), values: stats.mean_state_sq[1..].to_vec() });
    }
    let name = &exp.config.name;
    let plots = [
        ("cost_mean.svg", format!("{name}: average cost"), "average cumulative cost", mean),
        ("cost_std.svg", format!("{name}: standard deviation of cost"), "std of cumulative cost", std),
        ("state_second_moment.svg", format!("{name}: mean squared state norm"), "E‖x_t‖²", second),
    ];
    let mut files = Vec::new();
    for (file, title, y, series) in plots {
        write_file(&dir.join(file), &line_plot_svg(&title, "t", y, &series))?;
        files.push(file.to_string());
    }
    Ok(files)
}

/// Mean-square certificate for one `rhc-policy` controller. Plants that are
/// not Schur stable and root-mean-square constraint variants are reported as
/// refused rather than as errors.
pub fn certify_controller(
    exp: &Experiment,
    c: &ControllerConfig,
    stage: Option<&StageMoments>,
    x0: &DVector<f64>,
    zeta: f64,
) -> Result<CertificateSummary> {
    let nc = c.control_horizon.unwrap_or(c.horizon);
    let mut s = CertificateSummary {
        controller: c.name.clone(),
        control_horizon: nc,
        refused: None,
        sup_bound: None,
        best_sup_bound: None,
        best_zeta: None,
        max_lyapunov_residual: None,
        empirical_sup: None,
        holds: None,
    };
    match compute_certificate(exp, nc, stage, x0, zeta) {
        Ok(cert) => {
            s.sup_bound = Some(cert.sup_bound);
            s.best_sup_bound = Some(cert.best_sup_bound);
            s.best_zeta = Some(cert.best_zeta);
            s.max_lyapunov_residual = Some(cert.offsets.iter().map(|o| o.lyapunov_residual).fold(0.0, f64::max));
        }
        Err(CliError::Numeric(e @ srhc_core::Error::NotSchurStable { .. })) => s.refused = Some(e.to_string()),
        Err(CliError::Config(reason)) => s.refused = Some(reason),
        Err(e) => return Err(e),
    }
    Ok(s)
}

pub fn compute_certificate(
    exp: &Experiment,
    control_horizon: usize,
    stage: Option<&StageMoments>,
    x0: &DVector<f64>,
    zeta: f64,
) -> Result<StabilityCertificate> {
    let variant = exp.spec.variant;
    if matches!(variant, ConstraintVariant::Orthonormal | ConstraintVariant::FiniteDim) {
        return Err(CliError::Config(format!(
            "the {variant:?} constraint bounds the root-mean-square input only; the certificate needs pointwise bounds"
        )));
    }
    let input = CertificateInput {
        sys: &exp.sys,
        control_horizon,
        u_max: exp.spec.u_max,
        phi_max: exp.basis.component_bound(),
        noise_mean: exp.noise.mean(),
        noise_second: exp.noise.second_moment(),
        moments: stage.filter(|_| variant == ConstraintVariant::RowwiseInf),
        x0: x0.clone(),
    };
    Ok(certificate(&input, zeta)?)
}

pub fn certificate_report(certs: &[CertificateSummary]) -> String {
    let mut out = String::from("mean-square boundedness certificates\n");
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6e}"));
    for c in certs {
        let _ = writeln!(out, "\ncontroller {} (N_c = {})", c.controller, c.control_horizon);
        if let Some(reason) = &c.refused {
            let _ = writeln!(out, "  refused: {reason}");
            continue;
        }
        let _ = writeln!(out, "  sup_t E|x_t|^2 bound      {}", opt(c.sup_bound));
        let _ = writeln!(out, "  best bound over zeta      {} (zeta = {})", opt(c.best_sup_bound), opt(c.best_zeta));
        let _ = writeln!(out, "  max Lyapunov residual     {}", opt(c.max_lyapunov_residual));
        let _ = writeln!(out, "  empirical sup             {}", opt(c.empirical_sup));
        if let Some(h) = c.holds {
            let _ = writeln!(out, "  bound holds               {}", if h { "yes" } else { "NO" });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub controller: String,
    pub x0: Vec<f64>,
    pub status: SolveStatus,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub eta: Vec<f64>,
    /// Row-major `Θ`, `N m × (N−1) d`.
    pub theta: Vec<Vec<f64>>,
    pub wall_seconds: f64,
}

/// Solves the finite-horizon program of the first `rhc-policy` controller at `x0`.
pub fn solve_once(exp: &Experiment, stage: &StageMoments, x0: &DVector<f64>) -> Result<SolveSummary> {
    let c = exp
        .config
        .controllers
        .iter()
        .find(|c| c.kind == ControllerType::RhcPolicy)
        .ok_or_else(|| CliError::Config("no rhc-policy controller to solve for".into()))?;
    if x0.len() != exp.sys.n() {
        return Err(CliError::Config(format!("x0 has {} entries, expected {}", x0.len(), exp.sys.n())));
    }
    let lifted = build_lifted_dynamics(&exp.sys, c.horizon)?;
    let blocks = exp.cost.blocks(c.horizon)?;
    let moments = Moments::from_stage(stage.clone(), c.horizon)?;
    let template = QpTemplate::new(&lifted, &blocks, &moments, &exp.basis, &exp.spec)?;
    let qp = template.instantiate(x0)?;
    let report = solve(&qp, &exp.options)?;
    let theta = report.params.theta();
    Ok(SolveSummary {
        controller: c.name.clone(),
        x0: x0.iter().copied().collect(),
        status: report.status,
        objective: report.objective,
        iterations: report.iterations,
        kkt_residual: report.kkt_residual,
        eta: report.params.eta().iter().copied().collect(),
        theta: (0..theta.nrows()).map(|i| theta.row(i).iter().copied().collect()).collect(),
        wall_seconds: report.wall_time.as_secs_f64(),
    })
}
