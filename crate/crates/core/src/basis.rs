//! Bounded basis functions applied to past noise vectors.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BasisKind {
    /// `ξ ↦ αξ/√(1+βξ²)` applied to each noise component.
    ScaledSigmoid { alpha: f64, beta: f64 },
    /// `ξ ↦ sgn(ξ) min(|ξ|, 1)`.
    Saturation,
    /// `e^ν(w) = √(2/n) sin(πν w / a)`, `ν = 1..=modes`, for noise on `[-a, a]`.
    FourierSine { modes: usize, a: f64 },
    /// Piecewise-linear functions on shared knots, held constant outside the
    /// knot range. Each entry of `values` is one function.
    CustomTabulated {
        knots: Vec<f64>,
        values: Vec<Vec<f64>>,
        orthonormal: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisFamily {
    kind: BasisKind,
    noise_dim: usize,
}

impl BasisFamily {
    pub fn new(kind: BasisKind, noise_dim: usize) -> Result<Self> {
        if noise_dim == 0 {
            return Err(Error::InvalidArgument("noise dimension must be positive".into()));
        }
        match &kind {
            BasisKind::ScaledSigmoid { alpha, beta } => {
                if !(*alpha > 0.0 && *beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
                    return Err(Error::InvalidArgument(
                        "sigmoid parameters must be positive and finite".into(),
                    ));
                }
            }
            BasisKind::Saturation => {}
            BasisKind::FourierSine { modes, a } => {
                if *modes == 0 || !(*a > 0.0 && a.is_finite()) {
                    return Err(Error::InvalidArgument(
                        "Fourier sine basis needs modes ≥ 1 and a > 0".into(),
                    ));
                }
            }
            BasisKind::CustomTabulated { knots, values, .. } => {
                if knots.len() < 2 || values.is_empty() {
                    return Err(Error::InvalidArgument(
                        "tabulated basis needs at least two knots and one function".into(),
                    ));
                }
                if !knots.windows(2).all(|w| w[0] < w[1]) {
                    return Err(Error::InvalidArgument(
                        "tabulated knots must be strictly increasing".into(),
                    ));
                }
                for v in values {
                    check_dim("tabulated values", knots.len(), v.len())?;
                    if !v.iter().all(|x| x.is_finite()) {
                        return Err(Error::NonFinite("tabulated basis values"));
                    }
                }
            }
        }
        Ok(Self { kind, noise_dim })
    }

    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    /// Number of basis functions applied to each noise component.
    pub fn functions_per_component(&self) -> usize {
        match &self.kind {
            BasisKind::ScaledSigmoid { .. } | BasisKind::Saturation => 1,
            BasisKind::FourierSine { modes, .. } => *modes,
            BasisKind::CustomTabulated { values, .. } => values.len(),
        }
    }

    /// Length of `𝔢(w_i)` for a single stage noise `w_i`.
    pub fn dim_per_noise(&self) -> usize {
        self.noise_dim * self.functions_per_component()
    }

    /// Supremum of the absolute value of any component.
    pub fn component_bound(&self) -> f64 {
        match &self.kind {
            BasisKind::ScaledSigmoid { alpha, beta } => alpha / beta.sqrt(),
            BasisKind::Saturation => 1.0,
            BasisKind::FourierSine { .. } => (2.0 / self.noise_dim as f64).sqrt(),
            BasisKind::CustomTabulated { values, .. } => values
                .iter()
                .flatten()
                .map(|v| v.abs())
                .fold(0.0, f64::max),
        }
    }

    /// Bound `ℰ` on every entry of `𝔢(w)`; all kinds here bound entries
    /// componentwise, so this equals [`Self::component_bound`].
    pub fn vector_bound(&self) -> f64 {
        self.component_bound()
    }

    pub fn is_odd(&self) -> bool {
        !matches!(self.kind, BasisKind::CustomTabulated { .. })
    }

    pub fn is_orthonormal(&self) -> bool {
        match &self.kind {
            BasisKind::FourierSine { .. } => true,
            BasisKind::CustomTabulated { orthonormal, .. } => *orthonormal,
            _ => false,
        }
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            BasisKind::ScaledSigmoid { .. } => "scaled-sigmoid",
            BasisKind::Saturation => "saturation",
            BasisKind::FourierSine { .. } => "fourier-sine",
            BasisKind::CustomTabulated { .. } => "custom-tabulated",
        }
    }

    /// Writes `𝔢(w_i)` for one stage noise into `out` (length `dim_per_noise`).
    /// Layout is function-major: `[f¹(w); f²(w); …]`, each block of length `n`.
    pub fn eval_stage_into(&self, w: &[f64], out: &mut [f64]) {
        let n = self.noise_dim;
        debug_assert_eq!(w.len(), n);
        debug_assert_eq!(out.len(), self.dim_per_noise());
        match &self.kind {
            BasisKind::ScaledSigmoid { alpha, beta } => {
                for (o, &x) in out.iter_mut().zip(w) {
                    *o = alpha * x / (1.0 + beta * x * x).sqrt();
                }
            }
            BasisKind::Saturation => {
                for (o, &x) in out.iter_mut().zip(w) {
                    *o = x.clamp(-1.0, 1.0);
                }
            }
            BasisKind::FourierSine { modes, a } => {
                let c = (2.0 / n as f64).sqrt();
                for nu in 0..*modes {
                    let k = std::f64::consts::PI * (nu + 1) as f64 / a;
                    for (o, &x) in out[nu * n..(nu + 1) * n].iter_mut().zip(w) {
                        *o = c * (k * x).sin();
                    }
                }
            }
            BasisKind::CustomTabulated { knots, values, .. } => {
                for (f, table) in values.iter().enumerate() {
                    for (o, &x) in out[f * n..(f + 1) * n].iter_mut().zip(w) {
                        *o = interpolate(knots, table, x);
                    }
                }
            }
        }
    }

    pub fn eval_stage(&self, w: &[f64]) -> Result<DVector<f64>> {
        check_dim("stage noise", self.noise_dim, w.len())?;
        let mut out = DVector::zeros(self.dim_per_noise());
        self.eval_stage_into(w, out.as_mut_slice());
        Ok(out)
    }

    /// `𝔢(w)` for stacked noise `w = (w_0, …, w_{k-1})`, any `k ≥ 0`.
    pub fn eval(&self, w: &[f64]) -> Result<DVector<f64>> {
        let n = self.noise_dim;
        if !w.len().is_multiple_of(n) {
            return Err(Error::DimensionMismatch {
                what: "stacked noise",
                expected: n * (w.len() / n + 1),
                found: w.len(),
            });
        }
        let d = self.dim_per_noise();
        let stages = w.len() / n;
        let mut out = DVector::zeros(stages * d);
        for i in 0..stages {
            self.eval_stage_into(&w[i * n..(i + 1) * n], &mut out.as_mut_slice()[i * d..(i + 1) * d]);
        }
        Ok(out)
    }
}

/// `eval_basis`: `w` must hold exactly `N − 1` stage noises.
pub fn eval_basis(basis: &BasisFamily, w: &[f64], horizon: usize) -> Result<DVector<f64>> {
    check_dim(
        "stacked noise",
        horizon.saturating_sub(1) * basis.noise_dim(),
        w.len(),
    )?;
    basis.eval(w)
}

fn interpolate(knots: &[f64], values: &[f64], x: f64) -> f64 {
    let last = knots.len() - 1;
    if x <= knots[0] {
        return values[0];
    }
    if x >= knots[last] {
        return values[last];
    }
    let j = knots.partition_point(|&k| k <= x) - 1;
    let s = (x - knots[j]) / (knots[j + 1] - knots[j]);
    values[j] + s * (values[j + 1] - values[j])
}
