//! The persisted monitor model: PCA projection, post-PCA reference
//! features, calibrated estimators per distance kind, and the selected
//! window size. Serialized as versioned JSON with full float round-trip
//! precision; writes go through a temp file and atomic rename so a failed
//! save never leaves a partial model behind.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distances::DistanceKind;
use crate::error::{Error, Result};
use crate::estimator::UncertaintyEstimator;
use crate::features::{read_features_csv, FeatureMatrix, PcaModel};
use crate::resampling::RngSeed;

pub const FORMAT_VERSION: u32 = 1;

/// Reference features either embedded in the model or referenced by path
/// with a content digest that is verified on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "storage", rename_all = "snake_case")]
pub enum ReferenceStore {
    Embedded { matrix: FeatureMatrix },
    ByPath { path: String, sha256: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorModel {
    pub format_version: u32,
    pub pca: PcaModel,
    pub reference_features: ReferenceStore,
    pub estimators: BTreeMap<DistanceKind, UncertaintyEstimator>,
    /// Operational window size (n* from power analysis, or the calibration
    /// batch size).
    pub window: usize,
    pub created_with_seed: RngSeed,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl MonitorModel {
    /// Materialize the post-PCA reference features used by the monitor.
    ///
    /// Embedded references are stored already projected. Path-stored
    /// references point at the raw training CSV (relative paths resolve
    /// against `base_dir`); the file digest is verified, then the rows are
    /// projected through the bundled PCA.
    pub fn operational_reference(&self, base_dir: &Path) -> Result<FeatureMatrix> {
        match &self.reference_features {
            ReferenceStore::Embedded { matrix } => {
                if matrix.cols() != self.pca.output_dim() {
                    return Err(Error::DimensionMismatch {
                        expected: self.pca.output_dim(),
                        got: matrix.cols(),
                    });
                }
                Ok(matrix.clone())
            }
            ReferenceStore::ByPath { path, sha256 } => {
                let candidate = Path::new(path);
                let full = if candidate.is_absolute() {
                    candidate.to_path_buf()
                } else {
                    base_dir.join(candidate)
                };
                let bytes = std::fs::read(&full)?;
                let found = sha256_hex(&bytes);
                if !found.eq_ignore_ascii_case(sha256) {
                    return Err(Error::DigestMismatch {
                        path: full.display().to_string(),
                        expected: sha256.clone(),
                        found,
                    });
                }
                let raw = read_features_csv(&full)?;
                crate::features::pca_transform(&self.pca, &raw)
            }
        }
    }

    /// Serialize with full round-trip precision and atomically rename into
    /// place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
        let mut temp = match dir {
            Some(dir) => tempfile::NamedTempFile::new_in(dir)?,
            None => tempfile::NamedTempFile::new_in(".")?,
        };
        temp.write_all(json.as_bytes())?;
        temp.write_all(b"\n")?;
        temp.flush()?;
        temp.persist(path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }

    /// Load and validate a model file. The format version is checked before
    /// full decoding so newer files fail with a clear message.
    pub fn load(path: &Path) -> Result<MonitorModel> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: 1,
                message: "missing or non-integer format_version".into(),
            })?;
        if found != FORMAT_VERSION as u64 {
            return Err(Error::VersionMismatch {
                found: found as u32,
                supported: FORMAT_VERSION,
            });
        }
        let model: MonitorModel = serde_json::from_value(value).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            message: format!("invalid model: {e} (known distance kinds: ks, cvm, ad, ws, dts, es)"),
        })?;
        if model.window == 0 {
            return Err(Error::InvalidConfig("model window must be positive".into()));
        }
        for (key, estimator) in &model.estimators {
            if *key != estimator.kind {
                return Err(Error::InvalidConfig(format!(
                    "estimator stored under {key} declares kind {}",
                    estimator.kind
                )));
            }
        }
        Ok(model)
    }
}
