//! Stage noise distributions and seeded sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand::SeedableRng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::psd_factor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseSpec {
    Gaussian { mean: DVector<f64>, cov: DMatrix<f64> },
    /// Independent components uniform on `[-a, a]`.
    UniformBox { a: f64, n: usize },
}

impl NoiseSpec {
    pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_dim("noise covariance rows", mean.len(), cov.nrows())?;
        check_dim("noise covariance columns", mean.len(), cov.ncols())?;
        if !mean.iter().chain(cov.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("noise parameters"));
        }
        if cov != cov.transpose() {
            return Err(Error::InvalidArgument("noise covariance must be symmetric".into()));
        }
        psd_factor(&cov)?;
        Ok(Self::Gaussian { mean, cov })
    }

    pub fn zero_mean_gaussian(cov: DMatrix<f64>) -> Result<Self> {
        Self::gaussian(DVector::zeros(cov.nrows()), cov)
    }

    pub fn uniform_box(a: f64, n: usize) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) || n == 0 {
            return Err(Error::InvalidArgument(
                "uniform noise needs a > 0 and n ≥ 1".into(),
            ));
        }
        Ok(Self::UniformBox { a, n })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian { mean, .. } => mean.len(),
            Self::UniformBox { n, .. } => *n,
        }
    }

    pub fn mean(&self) -> DVector<f64> {
        match self {
            Self::Gaussian { mean, .. } => mean.clone(),
            Self::UniformBox { n, .. } => DVector::zeros(*n),
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        match self {
            Self::Gaussian { cov, .. } => cov.clone(),
            Self::UniformBox { a, n } => DMatrix::identity(*n, *n) * (a * a / 3.0),
        }
    }

    /// `E[w wᵀ]`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let mu = self.mean();
        self.covariance() + &mu * mu.transpose()
    }

    pub fn is_symmetric_about_zero(&self) -> bool {
        self.mean().iter().all(|&v| v == 0.0)
    }

    pub fn sampler(&self) -> Result<NoiseSampler> {
        let factor = match self {
            Self::Gaussian { cov, .. } => Some(psd_factor(cov)?),
            Self::UniformBox { .. } => None,
        };
        Ok(NoiseSampler {
            spec: self.clone(),
            factor,
        })
    }
}

/// A noise spec with its covariance factor precomputed.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    spec: NoiseSpec,
    factor: Option<DMatrix<f64>>,
}

impl NoiseSampler {
    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// Draws one stage vector into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match (&self.spec, &self.factor) {
            (NoiseSpec::Gaussian { mean, .. }, Some(f)) => {
                let n = mean.len();
                let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = mean[i];
                    for (j, zj) in z.iter().enumerate() {
                        acc += f[(i, j)] * zj;
                    }
                    *o = acc;
                }
            }
            (NoiseSpec::UniformBox { a, .. }, _) => {
                for o in out.iter_mut() {
                    let u: f64 = rng.sample(Open01);
                    *o = a * (2.0 * u - 1.0);
                }
            }
            _ => unreachable!("gaussian sampler always carries a factor"),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.sample_into(rng, out.as_mut_slice());
        out
    }

    /// Noise path `w_0 … w_{len-1}` for stream `stream` of `seed`.
    pub fn path(&self, seed: u64, stream: u64, len: usize) -> Vec<DVector<f64>> {
        let mut rng = stream_rng(seed, stream);
        (0..len).map(|_| self.sample(&mut rng)).collect()
    }
}

/// Convenience wrapper: one stage draw.
pub fn sample_noise<R: Rng + ?Sized>(noise: &NoiseSpec, rng: &mut R) -> Result<DVector<f64>> {
    Ok(noise.sampler()?.sample(rng))
}

/// Independent generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
