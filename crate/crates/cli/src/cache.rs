//! On-disk store for Monte Carlo stage moments.
//!
//! A cache file records the descriptor it was built from, a key derived from
//! that descriptor, and the SHA-256 of the payload text. Loading checks both.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use srhc_core::basis::BasisFamily;
use srhc_core::moments::{estimate_stage_moments, StageMoments};
use srhc_core::noise::NoiseSpec;

use crate::error::{io_err, CliError, Result};

pub const FORMAT: &str = "srhc-moments/1";

/// Everything the moments depend on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheDescriptor {
    pub basis: BasisFamily,
    pub noise: NoiseSpec,
    pub horizon: usize,
    pub samples: u64,
    pub seed: u64,
}

impl CacheDescriptor {
    pub fn key(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }

    pub fn file_name(&self) -> Result<String> {
        Ok(format!("moments-{}.json", &self.key()?[..16]))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheFile {
    format: String,
    key: String,
    descriptor: CacheDescriptor,
    payload_sha256: String,
    /// Serialized [`StageMoments`], kept as text so the hash is over exact bytes.
    payload: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheOutcome {
    Hit,
    Built,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Loads a cache file, refusing it if it is malformed or does not match
/// `expected` (when given).
pub fn load(path: &Path, expected: Option<&CacheDescriptor>) -> Result<(CacheDescriptor, StageMoments)> {
    let refuse = |reason: String| CliError::Cache {
        path: path.to_path_buf(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let file: CacheFile = serde_json::from_str(&text).map_err(|e| refuse(format!("not a moment cache ({e})")))?;
    if file.format != FORMAT {
        return Err(refuse(format!("unknown format {:?}", file.format)));
    }
    let key = file.descriptor.key()?;
    if key != file.key {
        return Err(refuse("stored key does not match the stored descriptor".into()));
    }
    if let Some(want) = expected {
        if want.key()? != key {
            return Err(refuse(
                "descriptor differs from the configuration (basis, noise, horizon, samples or seed changed)".into(),
            ));
        }
    }
    if sha256_hex(file.payload.as_bytes()) != file.payload_sha256 {
        return Err(refuse("payload hash mismatch; the file is corrupted".into()));
    }
    let moments: StageMoments =
        serde_json::from_str(&file.payload).map_err(|e| refuse(format!("payload does not parse ({e})")))?;
    if moments.noise_dim() != file.descriptor.noise.dim()
        || moments.basis_dim() != file.descriptor.basis.dim_per_noise()
        || moments.samples != file.descriptor.samples
    {
        return Err(refuse("payload dimensions disagree with the descriptor".into()));
    }
    Ok((file.descriptor, moments))
}

pub fn store(path: &Path, descriptor: &CacheDescriptor, moments: &StageMoments) -> Result<()> {
    let payload = serde_json::to_string(moments)?;
    let file = CacheFile {
        format: FORMAT.into(),
        key: descriptor.key()?,
        descriptor: descriptor.clone(),
        payload_sha256: sha256_hex(payload.as_bytes()),
        payload,
    };
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, text).map_err(io_err(path))
}

/// Returns the cached moments for `descriptor` from `dir`, estimating and
/// storing them on a miss. A file that exists but fails verification is an
/// error rather than a miss.
pub fn load_or_build(dir: &Path, descriptor: &CacheDescriptor) -> Result<(PathBuf, StageMoments, CacheOutcome)> {
    let path = dir.join(descriptor.file_name()?);
    if path.exists() {
        let (_, moments) = load(&path, Some(descriptor))?;
        log::info!("moment cache hit: {}", path.display());
        return Ok((path, moments, CacheOutcome::Hit));
    }
    log::info!("moment cache miss; estimating with {} samples", descriptor.samples);
    let moments = estimate_stage_moments(&descriptor.basis, &descriptor.noise, descriptor.samples, descriptor.seed)?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    store(&path, descriptor, &moments)?;
    Ok((path, moments, CacheOutcome::Built))
}

/// Human-readable summary of a cache file.
pub fn inspect(path: &Path) -> Result<String> {
    let (d, m) = load(path, None)?;
    let mut out = String::new();
    let _ = writeln!(out, "moment cache {}", path.display());
    let _ = writeln!(out, "  key            {}", d.key()?);
    let _ = writeln!(out, "  basis          {} ({} entries per stage)", d.basis.label(), m.basis_dim());
    let _ = writeln!(out, "  noise dim      {}", m.noise_dim());
    let _ = writeln!(out, "  horizon        {}", d.horizon);
    let _ = writeln!(out, "  samples        {} (seed {})", d.samples, d.seed);
    let mut eig: Vec<f64> = m.e_second.clone().symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let lead: Vec<String> = eig.iter().take(5).map(|v| format!("{v:.6e}")).collect();
    let _ = writeln!(out, "  E[e eᵀ] leading eigenvalues  {}", lead.join(" "));
    let _ = writeln!(out, "  E[e]           {}", fmt_vec(m.e_mean.as_slice()));
    let _ = writeln!(out, "  E[w]           {}", fmt_vec(m.w_mean.as_slice()));
    if let Some(err) = &m.errors {
        let _ = writeln!(out, "  max std error  E[e eᵀ] {:.3e}  E[w eᵀ] {:.3e}  E[e] {:.3e}  E[w wᵀ] {:.3e}",
            err.e_second.amax(), err.we_cross.amax(), err.e_mean.amax(), err.w_second.amax());
    }
    Ok(out)
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(" ")
}
