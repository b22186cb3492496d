//! Moment matrices of the basis and the noise.
//!
//! Stage noises are i.i.d., so every lifted matrix is tiled from one stage's
//! moments: diagonal blocks carry the joint second moments and off-diagonal
//! blocks carry products of means.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisFamily;
use crate::error::{check_dim, Error, Result};
use crate::linalg::symmetrize;
use crate::noise::{stream_rng, NoiseSpec};

pub const MIN_SAMPLES: u64 = 10_000;
const BATCH: u64 = 4096;

/// Per-entry standard errors of the Monte Carlo means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageErrors {
    pub e_mean: DVector<f64>,
    pub e_second: DMatrix<f64>,
    pub we_cross: DMatrix<f64>,
    pub w_mean: DVector<f64>,
    pub w_second: DMatrix<f64>,
}

/// Moments for a single stage noise `w` and its image `e = 𝔢(w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMoments {
    /// `E[e]`
    pub e_mean: DVector<f64>,
    /// `E[e eᵀ]`
    pub e_second: DMatrix<f64>,
    /// `E[w eᵀ]`
    pub we_cross: DMatrix<f64>,
    /// `E[w]`
    pub w_mean: DVector<f64>,
    /// `E[w wᵀ]`
    pub w_second: DMatrix<f64>,
    pub samples: u64,
    pub errors: Option<StageErrors>,
}

impl StageMoments {
    pub fn noise_dim(&self) -> usize {
        self.w_mean.len()
    }

    pub fn basis_dim(&self) -> usize {
        self.e_mean.len()
    }

    fn validate(&self) -> Result<()> {
        let (n, d) = (self.noise_dim(), self.basis_dim());
        check_dim("basis second moment", d, self.e_second.nrows())?;
        check_dim("basis second moment", d, self.e_second.ncols())?;
        check_dim("cross moment rows", n, self.we_cross.nrows())?;
        check_dim("cross moment columns", d, self.we_cross.ncols())?;
        check_dim("noise second moment", n, self.w_second.nrows())?;
        check_dim("noise second moment", n, self.w_second.ncols())?;
        Ok(())
    }
}

/// Lifted moments for horizon `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub stage: StageMoments,
    pub horizon: usize,
    /// `E[𝔢(w)𝔢(w)ᵀ]`, `(N−1)d` square.
    pub sigma_e: DMatrix<f64>,
    /// `E[w 𝔢(w)ᵀ]`, `Nn × (N−1)d`.
    pub sigma_e_prime: DMatrix<f64>,
    pub mu_e: DVector<f64>,
    pub mu_w: DVector<f64>,
    /// `E[w wᵀ]`, `Nn` square.
    pub sigma_w: DMatrix<f64>,
}

impl Moments {
    pub fn from_stage(stage: StageMoments, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        stage.validate()?;
        let (n, d) = (stage.noise_dim(), stage.basis_dim());
        let k = horizon - 1;
        let ee_off = &stage.e_mean * stage.e_mean.transpose();
        let we_off = &stage.w_mean * stage.e_mean.transpose();
        let ww_off = &stage.w_mean * stage.w_mean.transpose();

        let mut sigma_e = DMatrix::zeros(k * d, k * d);
        for i in 0..k {
            for j in 0..k {
                let block = if i == j { &stage.e_second } else { &ee_off };
                sigma_e.view_mut((i * d, j * d), (d, d)).copy_from(block);
            }
        }
        let mut sigma_e_prime = DMatrix::zeros(horizon * n, k * d);
        for j in 0..horizon {
            for i in 0..k {
                let block = if i == j { &stage.we_cross } else { &we_off };
                sigma_e_prime.view_mut((j * n, i * d), (n, d)).copy_from(block);
            }
        }
        let mut sigma_w = DMatrix::zeros(horizon * n, horizon * n);
        for i in 0..horizon {
            for j in 0..horizon {
                let block = if i == j { &stage.w_second } else { &ww_off };
                sigma_w.view_mut((i * n, j * n), (n, n)).copy_from(block);
            }
        }
        let mu_e = DVector::from_iterator(k * d, (0..k).flat_map(|_| stage.e_mean.iter().copied()));
        let mu_w = DVector::from_iterator(
            horizon * n,
            (0..horizon).flat_map(|_| stage.w_mean.iter().copied()),
        );
        Ok(Self {
            stage,
            horizon,
            sigma_e,
            sigma_e_prime,
            mu_e,
            mu_w,
            sigma_w,
        })
    }

    /// Moments for a shorter horizon from the same stage statistics.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        Self::from_stage(self.stage.clone(), horizon)
    }
}

#[derive(Clone)]
struct Acc {
    count: u64,
    e: Vec<f64>,
    ee: Vec<f64>,
    we: Vec<f64>,
    w: Vec<f64>,
    ww: Vec<f64>,
    e2: Vec<f64>,
    ee2: Vec<f64>,
    we2: Vec<f64>,
    w2: Vec<f64>,
    ww2: Vec<f64>,
}

impl Acc {
    fn new(n: usize, d: usize) -> Self {
        Self {
            count: 0,
            e: vec![0.0; d],
            ee: vec![0.0; d * d],
            we: vec![0.0; n * d],
            w: vec![0.0; n],
            ww: vec![0.0; n * n],
            e2: vec![0.0; d],
            ee2: vec![0.0; d * d],
            we2: vec![0.0; n * d],
            w2: vec![0.0; n],
            ww2: vec![0.0; n * n],
        }
    }

    fn push(&mut self, w: &[f64], e: &[f64]) {
        let (n, d) = (w.len(), e.len());
        self.count += 1;
        for i in 0..d {
            self.e[i] += e[i];
            self.e2[i] += e[i] * e[i];
            for j in 0..d {
                let p = e[i] * e[j];
                self.ee[i * d + j] += p;
                self.ee2[i * d + j] += p * p;
            }
        }
        for i in 0..n {
            self.w[i] += w[i];
            self.w2[i] += w[i] * w[i];
            for j in 0..d {
                let p = w[i] * e[j];
                self.we[i * d + j] += p;
                self.we2[i * d + j] += p * p;
            }
            for j in 0..n {
                let p = w[i] * w[j];
                self.ww[i * n + j] += p;
                self.ww2[i * n + j] += p * p;
            }
        }
    }

    fn merge(mut self, other: &Acc) -> Acc {
        self.count += other.count;
        for (a, b) in [
            (&mut self.e, &other.e),
            (&mut self.ee, &other.ee),
            (&mut self.we, &other.we),
            (&mut self.w, &other.w),
            (&mut self.ww, &other.ww),
            (&mut self.e2, &other.e2),
            (&mut self.ee2, &other.ee2),
            (&mut self.we2, &other.we2),
            (&mut self.w2, &other.w2),
            (&mut self.ww2, &other.ww2),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self
    }
}

/// Pairwise reduction in a fixed order.
fn tree_reduce(mut parts: Vec<Acc>) -> Acc {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a.merge(&b)),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop().expect("at least one batch")
}

fn mean_and_error(sum: &[f64], sq: &[f64], count: u64) -> (Vec<f64>, Vec<f64>) {
    let n = count as f64;
    sum.iter()
        .zip(sq)
        .map(|(&s, &q)| {
            let m = s / n;
            let var = ((q - n * m * m) / (n - 1.0)).max(0.0);
            (m, (var / n).sqrt())
        })
        .unzip()
}

/// Clips tiny negative eigenvalues of the basis covariance; rejects larger
/// violations.
fn repair_second_moment(second: DMatrix<f64>, mean: &DVector<f64>) -> Result<DMatrix<f64>> {
    let outer = mean * mean.transpose();
    let cov = symmetrize(&(&second - &outer));
    if cov.is_empty() {
        return Ok(second);
    }
    let eig = SymmetricEigen::new(cov.clone());
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return Ok(symmetrize(&second));
    }
    let trace = cov.trace();
    if min < -1e-8 * trace.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
            trace,
        });
    }
    let clipped = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0)));
    let repaired = &eig.eigenvectors * clipped * eig.eigenvectors.transpose();
    Ok(symmetrize(&(repaired + outer)))
}

/// Monte Carlo estimate of one stage's moments.
///
/// Samples are drawn in fixed-size batches, each on its own generator stream,
/// and batches are combined pairwise in index order, so the result does not
/// depend on the number of worker threads.
pub fn estimate_stage_moments(
    basis: &BasisFamily,
    noise: &NoiseSpec,
    samples: u64,
    seed: u64,
) -> Result<StageMoments> {
    check_dim("basis noise dimension", noise.dim(), basis.noise_dim())?;
    if samples < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SAMPLES} Monte Carlo samples, got {samples}"
        )));
    }
    let sampler = noise.sampler()?;
    let (n, d) = (basis.noise_dim(), basis.dim_per_noise());
    let batches = samples.div_ceil(BATCH);
    let parts: Vec<Acc> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b);
            let count = BATCH.min(samples - b * BATCH);
            let mut acc = Acc::new(n, d);
            let mut w = vec![0.0; n];
            let mut e = vec![0.0; d];
            for _ in 0..count {
                sampler.sample_into(&mut rng, &mut w);
                basis.eval_stage_into(&w, &mut e);
                acc.push(&w, &e);
            }
            acc
        })
        .collect();
    let acc = tree_reduce(parts);

    let (e_mean, se_e) = mean_and_error(&acc.e, &acc.e2, acc.count);
    let (ee, se_ee) = mean_and_error(&acc.ee, &acc.ee2, acc.count);
    let (we, se_we) = mean_and_error(&acc.we, &acc.we2, acc.count);
    let (w_mean, se_w) = mean_and_error(&acc.w, &acc.w2, acc.count);
    let (ww, se_ww) = mean_and_error(&acc.ww, &acc.ww2, acc.count);

    let e_mean = DVector::from_vec(e_mean);
    // Accumulators are row-major.
    let row_major = |r, c, v: Vec<f64>| DMatrix::from_row_slice(r, c, &v);
    let e_second = repair_second_moment(row_major(d, d, ee), &e_mean)?;
    Ok(StageMoments {
        e_second,
        we_cross: row_major(n, d, we),
        w_mean: DVector::from_vec(w_mean),
        w_second: symmetrize(&row_major(n, n, ww)),
        e_mean,
        samples,
        errors: Some(StageErrors {
            e_mean: DVector::from_vec(se_e),
            e_second: row_major(d, d, se_ee),
            we_cross: row_major(n, d, se_we),
            w_mean: DVector::from_vec(se_w),
            w_second: row_major(n, n, se_ww),
        }),
    })
}

pub fn monte_carlo_moments(
    basis: &BasisFamily,
    noise: &NoiseSpec,
    horizon: usize,
    samples: u64,
    seed: u64,
) -> Result<Moments> {
    Moments::from_stage(estimate_stage_moments(basis, noise, samples, seed)?, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisKind;

    #[test]
    fn degenerate_noise_has_zero_moments() {
        let basis = BasisFamily::new(BasisKind::Saturation, 2).unwrap();
        let noise = NoiseSpec::zero_mean_gaussian(DMatrix::zeros(2, 2)).unwrap();
        let m = monte_carlo_moments(&basis, &noise, 3, MIN_SAMPLES, 0).unwrap();
        assert!(m.sigma_e.iter().all(|&v| v == 0.0));
        assert!(m.stage.errors.as_ref().unwrap().e_second.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tiling_follows_independence() {
        let stage = StageMoments {
            e_mean: DVector::from_vec(vec![0.5]),
            e_second: DMatrix::from_element(1, 1, 1.0),
            we_cross: DMatrix::from_element(1, 1, 2.0),
            w_mean: DVector::from_vec(vec![3.0]),
            w_second: DMatrix::from_element(1, 1, 10.0),
            samples: 0,
            errors: None,
        };
        let m = Moments::from_stage(stage, 3).unwrap();
        assert_eq!(m.sigma_e, nalgebra::dmatrix![1.0, 0.25; 0.25, 1.0]);
        assert_eq!(
            m.sigma_e_prime,
            nalgebra::dmatrix![2.0, 1.5; 1.5, 2.0; 1.5, 1.5]
        );
        assert_eq!(m.sigma_w[(0, 0)], 10.0);
        assert_eq!(m.sigma_w[(0, 2)], 9.0);
        assert_eq!(m.mu_w.len(), 3);
        assert_eq!(m.mu_e.len(), 2);
    }

    #[test]
    fn horizon_one_has_empty_basis_blocks() {
        let basis = BasisFamily::new(BasisKind::Saturation, 1).unwrap();
        let noise = NoiseSpec::zero_mean_gaussian(DMatrix::identity(1, 1)).unwrap();
        let m = monte_carlo_moments(&basis, &noise, 1, MIN_SAMPLES, 0).unwrap();
        assert_eq!(m.sigma_e.shape(), (0, 0));
        assert_eq!(m.sigma_e_prime.shape(), (1, 0));
    }

    #[test]
    fn rejects_too_few_samples() {
        let basis = BasisFamily::new(BasisKind::Saturation, 1).unwrap();
        let noise = NoiseSpec::zero_mean_gaussian(DMatrix::identity(1, 1)).unwrap();
        assert!(monte_carlo_moments(&basis, &noise, 2, 100, 0).is_err());
    }

    #[test]
    fn repair_clips_tiny_negative_and_rejects_large() {
        let mean = DVector::zeros(2);
        let tiny = nalgebra::dmatrix![1.0, 1.0; 1.0, 1.0 - 1e-12];
        let fixed = repair_second_moment(tiny, &mean).unwrap();
        assert!(SymmetricEigen::new(fixed).eigenvalues.min() >= -1e-15);
        let bad = nalgebra::dmatrix![1.0, 0.0; 0.0, -0.5];
        assert!(repair_second_moment(bad, &mean).is_err());
    }
}
