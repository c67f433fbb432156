//! Pipeline manifest: one JSON document declaring the model population,
//! the brain data and every parameter. All randomness flows from `seed`.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hemodynamics::HrfParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Vision,
    Audio,
    Language,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Vision, Modality::Audio, Modality::Language];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Vision => "vision",
            Modality::Audio => "audio",
            Modality::Language => "language",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vision" => Ok(Modality::Vision),
            "audio" => Ok(Modality::Audio),
            "language" => Ok(Modality::Language),
            other => Err(Error::Manifest(format!(
                "unknown modality {other:?} (expected vision, audio or language)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRef {
    pub stimulus: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: String,
    pub modality: Modality,
    /// Brain entry this model is aligned to; defaults to the first one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brain: Option<String>,
    pub trajectories: Vec<TrajectoryRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusEvent {
    pub stimulus: String,
    /// Seconds from scan start.
    pub onset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrainEntry {
    pub id: String,
    /// NFT1 tensor with dims `[R, T]`.
    pub roi_timeseries: PathBuf,
    /// Repetition time in seconds.
    pub tr: f64,
    pub atlas: PathBuf,
    pub events: Vec<StimulusEvent>,
}

fn default_svd_rel_tol() -> f64 {
    1e-10
}
fn default_ridge_grid() -> Vec<f64> {
    (-3..=5).map(|e| 10f64.powi(e)).collect()
}
fn default_cv_folds() -> usize {
    5
}
fn default_n_permutations() -> usize {
    999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_pca_components() -> usize {
    2
}
fn default_design() -> String {
    "sample-and-hold".into()
}
fn default_scorer() -> String {
    "cv".into()
}
fn default_metric() -> String {
    "cosine".into()
}
fn default_scheme() -> String {
    "random".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SilhouetteSpace {
    #[default]
    Raw,
    Pca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default = "default_svd_rel_tol")]
    pub svd_rel_tol: f64,
    #[serde(default = "default_ridge_grid")]
    pub ridge_grid: Vec<f64>,
    #[serde(default = "default_cv_folds")]
    pub cv_folds: usize,
    #[serde(default = "default_n_permutations")]
    pub n_permutations: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub hrf: HrfParams,
    /// Registered stimulus-design name.
    #[serde(default = "default_design")]
    pub stimulus_design: String,
    /// Registered alignment-scorer name.
    #[serde(default = "default_scorer")]
    pub scorer: String,
    /// Registered distance-metric name used by PERMANOVA and silhouette.
    #[serde(default = "default_metric")]
    pub distance_metric: String,
    /// Registered permutation-scheme name.
    #[serde(default = "default_scheme")]
    pub permutation_scheme: String,
    #[serde(default = "default_pca_components")]
    pub pca_components: usize,
    #[serde(default)]
    pub silhouette_space: SilhouetteSpace,
    /// Use the sample (M - 1) rather than population (M) divisor for sigma.
    #[serde(default)]
    pub sample_std: bool,
    /// z-score all modality SNCI maps jointly instead of per modality.
    #[serde(default)]
    pub joint_zscore: bool,
}

impl Default for Params {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all params have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub models: Vec<ModelEntry>,
    pub brain: Vec<BrainEntry>,
    #[serde(default)]
    pub params: Params,
    pub seed: u64,
}

/// A manifest whose relative paths were resolved against its own directory.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: Manifest,
    pub root: PathBuf,
    /// Hex SHA-256 of the manifest bytes.
    pub hash: String,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)
            .map_err(|e| Error::Manifest(format!("invalid JSON: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    /// Structural checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Manifest("no models declared".into()));
        }
        if self.brain.is_empty() {
            return Err(Error::Manifest("no brain entries declared".into()));
        }
        let p = &self.params;
        if p.n_permutations < 1 {
            return Err(Error::Manifest("n_permutations must be >= 1".into()));
        }
        if !(p.svd_rel_tol > 0.0 && p.svd_rel_tol < 1.0) {
            return Err(Error::Manifest(format!(
                "svd_rel_tol {} outside (0, 1)",
                p.svd_rel_tol
            )));
        }
        if p.ridge_grid.is_empty() || p.ridge_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::Manifest("ridge_grid must be nonempty and nonnegative".into()));
        }
        if p.cv_folds < 2 {
            return Err(Error::Manifest("cv_folds must be >= 2".into()));
        }
        if !(p.epsilon > 0.0) {
            return Err(Error::Manifest("epsilon must be > 0".into()));
        }
        p.hrf.validate()?;

        let mut brain_ids = HashSet::new();
        for b in &self.brain {
            if !brain_ids.insert(b.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate brain id {:?}", b.id)));
            }
            if !(b.tr > 0.0) || !b.tr.is_finite() {
                return Err(Error::Manifest(format!("brain {:?}: TR must be > 0", b.id)));
            }
            if b.events.is_empty() {
                return Err(Error::Manifest(format!("brain {:?}: no events", b.id)));
            }
        }
        let mut model_ids = HashSet::new();
        for m in &self.models {
            if !model_ids.insert(m.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate model id {:?}", m.id)));
            }
            let brain = self.brain_for(m)?;
            let have: BTreeSet<&str> = m.trajectories.iter().map(|t| t.stimulus.as_str()).collect();
            if have.len() != m.trajectories.len() {
                return Err(Error::Manifest(format!(
                    "model {:?}: duplicate stimulus ids",
                    m.id
                )));
            }
            if let Some(missing) = brain.events.iter().find(|e| !have.contains(e.stimulus.as_str())) {
                return Err(Error::Manifest(format!(
                    "model {:?} has no trajectory for stimulus {:?} of brain {:?}",
                    m.id, missing.stimulus, brain.id
                )));
            }
        }
        Ok(())
    }

    pub fn brain_for(&self, model: &ModelEntry) -> Result<&BrainEntry> {
        match &model.brain {
            None => Ok(&self.brain[0]),
            Some(id) => self.brain.iter().find(|b| &b.id == id).ok_or_else(|| {
                Error::Manifest(format!("model {:?} references unknown brain {id:?}", model.id))
            }),
        }
    }

    /// Every file path the manifest references, in declaration order.
    pub fn referenced_paths(&self) -> Vec<&Path> {
        let mut out = Vec::new();
        for m in &self.models {
            out.extend(m.trajectories.iter().map(|t| t.path.as_path()));
        }
        for b in &self.brain {
            out.push(b.roi_timeseries.as_path());
            out.push(b.atlas.as_path());
        }
        out
    }

    fn resolve(&mut self, root: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        };
        for m in &mut self.models {
            for t in &mut m.trajectories {
                fix(&mut t.path);
            }
        }
        for b in &mut self.brain {
            fix(&mut b.roi_timeseries);
            fix(&mut b.atlas);
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LoadedManifest> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| Error::Manifest(format!("{} is not UTF-8", path.display())))?;
        let mut manifest = Manifest::from_json(text)?;
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        manifest.resolve(&root);
        if let Some(missing) = manifest.referenced_paths().into_iter().find(|p| !p.exists()) {
            return Err(Error::Manifest(format!(
                "referenced file does not exist: {}",
                missing.display()
            )));
        }
        Ok(LoadedManifest {
            manifest,
            root,
            hash: hex::encode(Sha256::digest(&bytes)),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

impl LoadedManifest {
    /// Replaces the run parameters. The hash changes with them, so stage
    /// records written under other parameters are not reused.
    pub fn with_params(mut self, params: Params) -> Result<Self> {
        if params == self.manifest.params {
            return Ok(self);
        }
        self.manifest.params = params;
        self.manifest.validate()?;
        let mut h = Sha256::new();
        h.update(self.hash.as_bytes());
        h.update(serde_json::to_vec(&self.manifest.params).expect("params serialize"));
        self.hash = hex::encode(h.finalize());
        Ok(self)
    }
}
