//! Experiment configuration files.
//!
//! Physically meaningful quantities (input bounds, horizons, weights, the
//! plant and the noise) must be written out; only Monte Carlo sample counts,
//! seeds and solver tolerances have defaults.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use srhc_core::basis::{BasisFamily, BasisKind};
use srhc_core::model::SystemModel;
use srhc_core::noise::NoiseSpec;
use srhc_core::optimizer::SolverOptions;
use srhc_core::policy::{ConstraintSpec, ConstraintVariant, CountRule, NormKind};
use srhc_core::simulator::{ControllerKind, StageCost};

use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub system: SystemConfig,
    pub cost: CostConfig,
    pub noise: NoiseConfig,
    pub basis: BasisKind,
    pub constraint: ConstraintConfig,
    #[serde(default)]
    pub moments: MomentsConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    pub simulation: SimulationConfig,
    #[serde(rename = "controller")]
    pub controllers: Vec<ControllerConfig>,
    #[serde(default, rename = "comparison")]
    pub comparisons: Vec<ComparisonConfig>,
    pub certificate: Option<CertificateConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub q_terminal: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseConfig {
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    UniformBox { a: f64, n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    pub s: Vec<Vec<f64>>,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub p: NormKind,
    pub u_max: f64,
    pub variant: ConstraintVariant,
    #[serde(default)]
    pub count: CountRule,
    pub energy: Option<EnergyConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    #[serde(default = "default_samples")]
    pub samples: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_samples() -> u64 {
    1_000_000
}

impl Default for MomentsConfig {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_kkt_tol")]
    pub kkt_tol: f64,
}

fn default_tol() -> f64 {
    SolverOptions::default().tol
}

fn default_max_iter() -> usize {
    SolverOptions::default().max_iter
}

fn default_kkt_tol() -> f64 {
    SolverOptions::default().kkt_tol
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            tol: o.tol,
            max_iter: o.max_iter,
            kkt_tol: o.kkt_tol,
        }
    }
}

impl From<SolverConfig> for SolverOptions {
    fn from(c: SolverConfig) -> Self {
        SolverOptions {
            tol: c.tol,
            max_iter: c.max_iter,
            kkt_tol: c.kkt_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Simulation length `T`.
    pub steps: usize,
    /// Noise realizations per initial state.
    pub realizations: usize,
    #[serde(default)]
    pub seed: u64,
    /// A single initial state; exclusive with `x0_draws`.
    pub x0: Option<Vec<f64>>,
    pub x0_draws: Option<X0Draws>,
}

/// Initial states drawn uniformly from the cube `[low, high]^n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct X0Draws {
    pub count: usize,
    pub low: f64,
    pub high: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerType {
    RhcPolicy,
    CeMpc,
    Lqg,
    SaturatedLqg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub name: String,
    pub kind: ControllerType,
    /// Optimisation horizon `N` (for LQG, the Riccati horizon).
    pub horizon: usize,
    /// `N_c`, required for optimising controllers.
    pub control_horizon: Option<usize>,
    /// Componentwise input bound for `ce-mpc` and `saturated-lqg`.
    pub bound: Option<f64>,
}

/// Paired comparison of two controllers, reported as
/// `cost(numerator) / cost(denominator)` per realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonConfig {
    pub numerator: String,
    pub denominator: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateConfig {
    #[serde(default = "default_zeta")]
    pub zeta: f64,
}

fn default_zeta() -> f64 {
    0.5
}

/// A validated configuration with the numerical objects built.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub sys: SystemModel,
    pub cost: StageCost,
    pub noise: NoiseSpec,
    pub basis: BasisFamily,
    pub spec: ConstraintSpec,
    pub options: SolverOptions,
    pub x0: Vec<DVector<f64>>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|source| CliError::Parse {
            path: origin.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text, path)
    }

    /// Checks cross-references and builds the numerical objects. Every
    /// failure here is a configuration error.
    pub fn validate(self) -> Result<Experiment> {
        let bad = |what: &str, e: srhc_core::Error| CliError::Config(format!("{what}: {e}"));
        let sys = SystemModel::new(matrix("system.a", &self.system.a)?, matrix("system.b", &self.system.b)?)
            .map_err(|e| bad("system", e))?;
        let cost = StageCost::new(
            matrix("cost.q", &self.cost.q)?,
            matrix("cost.r", &self.cost.r)?,
            matrix("cost.q_terminal", &self.cost.q_terminal)?,
        )
        .map_err(|e| bad("cost", e))?;
        if cost.q.nrows() != sys.n() || cost.r.nrows() != sys.m() {
            return Err(CliError::Config(format!(
                "cost weights are {}×{} and {}×{}, the plant has n = {}, m = {}",
                cost.q.nrows(),
                cost.q.ncols(),
                cost.r.nrows(),
                cost.r.ncols(),
                sys.n(),
                sys.m()
            )));
        }
        let noise = match &self.noise {
            NoiseConfig::Gaussian { mean, cov } => {
                NoiseSpec::gaussian(DVector::from_vec(mean.clone()), matrix("noise.cov", cov)?)
            }
            NoiseConfig::UniformBox { a, n } => NoiseSpec::uniform_box(*a, *n),
        }
        .map_err(|e| bad("noise", e))?;
        if noise.dim() != sys.n() {
            return Err(CliError::Config(format!(
                "noise dimension {} differs from state dimension {}",
                noise.dim(),
                sys.n()
            )));
        }
        let basis = BasisFamily::new(self.basis.clone(), sys.n()).map_err(|e| bad("basis", e))?;
        let c = &self.constraint;
        let mut spec = ConstraintSpec::new(c.p, c.u_max, c.variant)
            .map_err(|e| bad("constraint", e))?
            .with_count(c.count);
        if let Some(energy) = &c.energy {
            spec = spec
                .with_energy(matrix("constraint.energy.s", &energy.s)?, energy.beta)
                .map_err(|e| bad("constraint.energy", e))?;
        }
        spec.check_basis(&basis).map_err(|e| bad("constraint", e))?;
        let options = SolverOptions::from(self.solver);
        if !(options.tol > 0.0 && options.kkt_tol > 0.0) || options.max_iter == 0 {
            return Err(CliError::Config("solver tolerances and iteration limit must be positive".into()));
        }
        if self.moments.samples < srhc_core::moments::MIN_SAMPLES {
            return Err(CliError::Config(format!(
                "moments.samples must be at least {}",
                srhc_core::moments::MIN_SAMPLES
            )));
        }
        let x0 = self.initial_states(sys.n())?;
        self.check_controllers()?;
        if let Some(cert) = &self.certificate {
            if !(cert.zeta > 0.0 && cert.zeta < 1.0) {
                return Err(CliError::Config(format!("certificate.zeta must lie in (0, 1), got {}", cert.zeta)));
            }
        }
        Ok(Experiment {
            config: self,
            sys,
            cost,
            noise,
            basis,
            spec,
            options,
            x0,
        })
    }

    fn initial_states(&self, n: usize) -> Result<Vec<DVector<f64>>> {
        let sim = &self.simulation;
        if sim.steps == 0 || sim.realizations == 0 {
            return Err(CliError::Config("simulation.steps and simulation.realizations must be positive".into()));
        }
        match (&sim.x0, &sim.x0_draws) {
            (Some(x0), None) => {
                if x0.len() != n {
                    return Err(CliError::Config(format!("simulation.x0 has {} entries, expected {n}", x0.len())));
                }
                Ok(vec![DVector::from_vec(x0.clone())])
            }
            (None, Some(d)) => {
                if d.count == 0 || !(d.low < d.high) || !d.low.is_finite() || !d.high.is_finite() {
                    return Err(CliError::Config("simulation.x0_draws needs count ≥ 1 and low < high".into()));
                }
                // Uniform box noise on [-a, a]^n, shifted to [low, high]^n.
                let half = 0.5 * (d.high - d.low);
                let centre = 0.5 * (d.high + d.low);
                let sampler = NoiseSpec::uniform_box(half, n)
                    .and_then(|s| s.sampler())
                    .map_err(|e| CliError::Config(format!("simulation.x0_draws: {e}")))?;
                Ok(sampler
                    .path(d.seed, 0, d.count)
                    .into_iter()
                    .map(|w| w.add_scalar(centre))
                    .collect())
            }
            _ => Err(CliError::Config("give exactly one of simulation.x0 and simulation.x0_draws".into())),
        }
    }

    fn check_controllers(&self) -> Result<()> {
        if self.controllers.is_empty() {
            return Err(CliError::Config("at least one [[controller]] is required".into()));
        }
        for (i, c) in self.controllers.iter().enumerate() {
            if c.name.is_empty() || !c.name.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '-' || ch == '_') {
                return Err(CliError::Config(format!(
                    "controller name {:?} must be non-empty and use only letters, digits, '-' and '_'",
                    c.name
                )));
            }
            if self.controllers[..i].iter().any(|o| o.name == c.name) {
                return Err(CliError::Config(format!("duplicate controller name {:?}", c.name)));
            }
            if c.horizon == 0 {
                return Err(CliError::Config(format!("controller {}: horizon must be positive", c.name)));
            }
            let optimising = matches!(c.kind, ControllerType::RhcPolicy | ControllerType::CeMpc);
            match c.control_horizon {
                Some(nc) if optimising && (nc == 0 || nc > c.horizon) => {
                    return Err(CliError::Config(format!(
                        "controller {}: control_horizon must lie in 1..={}",
                        c.name, c.horizon
                    )))
                }
                None if optimising => {
                    return Err(CliError::Config(format!("controller {}: control_horizon is required", c.name)))
                }
                Some(_) if !optimising => {
                    return Err(CliError::Config(format!("controller {}: control_horizon is not used by {:?}", c.name, c.kind)))
                }
                _ => {}
            }
            let bounded = matches!(c.kind, ControllerType::CeMpc | ControllerType::SaturatedLqg);
            match c.bound {
                Some(b) if bounded && !(b > 0.0 && b.is_finite()) => {
                    return Err(CliError::Config(format!("controller {}: bound must be positive", c.name)))
                }
                None if bounded => return Err(CliError::Config(format!("controller {}: bound is required", c.name))),
                Some(_) if !bounded => {
                    return Err(CliError::Config(format!(
                        "controller {}: bound does not apply; rhc-policy uses [constraint]",
                        c.name
                    )))
                }
                _ => {}
            }
        }
        for cmp in &self.comparisons {
            for name in [&cmp.numerator, &cmp.denominator] {
                if !self.controllers.iter().any(|c| &c.name == name) {
                    return Err(CliError::Config(format!("comparison refers to unknown controller {name:?}")));
                }
            }
        }
        Ok(())
    }
}

impl Experiment {
    /// Largest horizon among the `rhc-policy` controllers.
    pub fn moment_horizon(&self) -> Option<usize> {
        self.config
            .controllers
            .iter()
            .filter(|c| c.kind == ControllerType::RhcPolicy)
            .map(|c| c.horizon)
            .max()
    }

    /// Builds the simulator descriptor; `moments` is required for `rhc-policy`.
    pub fn controller_kind(
        &self,
        c: &ControllerConfig,
        moments: Option<&srhc_core::moments::StageMoments>,
    ) -> Result<ControllerKind> {
        Ok(match c.kind {
            ControllerType::RhcPolicy => {
                let stage = moments.ok_or_else(|| CliError::Config("rhc-policy needs moments".into()))?;
                ControllerKind::RhcPolicy {
                    horizon: c.horizon,
                    control_horizon: c.control_horizon.unwrap_or(c.horizon),
                    spec: self.spec.clone(),
                    basis: self.basis.clone(),
                    moments: srhc_core::moments::Moments::from_stage(stage.clone(), c.horizon)?,
                    options: self.options,
                }
            }
            ControllerType::CeMpc => ControllerKind::CeMpc {
                horizon: c.horizon,
                control_horizon: c.control_horizon.unwrap_or(c.horizon),
                bound: c.bound.unwrap_or(f64::INFINITY),
                options: self.options,
            },
            ControllerType::Lqg => ControllerKind::Lqg { horizon: c.horizon },
            ControllerType::SaturatedLqg => ControllerKind::SaturatedLqg {
                horizon: c.horizon,
                bound: c.bound.unwrap_or(f64::INFINITY),
            },
        })
    }
}

fn matrix(what: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(CliError::Config(format!("{what} must be a non-empty rectangular array of rows")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::Config(format!("{what} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}
