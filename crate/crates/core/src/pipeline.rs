//! Stage orchestration: `dmd -> hrf -> encode -> snci -> stats`.
//!
//! Each stage reads the previous stage's persisted outputs, so any suffix of
//! the chain can be rerun on its own. A `stage.json` under each intermediate
//! directory records the manifest hash the outputs were computed from;
//! downstream stages refuse intermediates from a different manifest.
//!
//! Output layout under the run directory:
//!
//! ```text
//! intermediate/dmd/<model>.nft        [S, D] z vectors, one row per stimulus
//! intermediate/dmd/<model>.json       stimulus order and fallbacks
//! intermediate/hrf/<model>.{nft,json} convolved [T, D] feature series
//! intermediate/snci/snci.{nft,json}   [G, R] SNCI maps
//! results/spectra/<model>.json        with emit_spectra
//! results/alignment/<model>.csv       roi_index,score
//! results/alignment_matrix.{nft,json} [M, R] alignment matrix and its index
//! results/snci_<modality>.csv         roi_index,mu,sigma,snci,snci_z
//! results/pca.csv, results/pca.svg
//! results/permanova.json, results/silhouette.json
//! results/network_means.csv, results/anova.csv
//! run_report.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::atlas::{AtlasTable, Network};
use crate::consistency::{snci_map_with, write_snci_csv, zscore_across_rois, ModalityGroup, StdConvention};
use crate::depth_dynamics::{trajectory_to_z, EmbeddingTrajectory, Fallback, SpectrumReport};
use crate::encoding::{alignment_vector, scorer_registry, CvConfig, RoiTimeSeries};
use crate::error::{Error, Result};
use crate::geometry::anova::{two_way_anova, SsType};
use crate::geometry::distance::{distance_contrast, distance_matrix, metric_registry, DistanceContrast};
use crate::geometry::networks::{aggregate_networks, write_network_means_csv, NetworkAssignment};
use crate::geometry::pca::{pca_embed, PcaEmbedding};
use crate::geometry::permutation::{permanova, scheme_registry, silhouette, PermanovaResult, SilhouetteResult};
use crate::hemodynamics::{convolve_hrf, design_registry, with_suffix, FeatureSeries};
use crate::manifest::{BrainEntry, LoadedManifest, Manifest, Modality, ModelEntry, SilhouetteSpace};
use crate::registry::{Named, Registry};
use crate::tensor_store::{read_tensor, read_tensor_with, write_tensor, ReadOptions};

pub const STAGE_ORDER: [&str; 5] = ["dmd", "hrf", "encode", "snci", "stats"];
pub const PARTIAL_MARKER: &str = ".partial";
pub const REPORT_FILE: &str = "run_report.json";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stages to run; empty runs all of them. Always executed in canonical order.
    pub stages: Vec<String>,
    /// Overrides the manifest seed.
    pub seed: Option<u64>,
    /// Escalate warnings to errors.
    pub strict: bool,
    pub emit_spectra: bool,
    pub allow_nonfinite: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningKind {
    DegenerateTrajectory,
    QuarantinedInput,
    SkippedFold,
    DegenerateRoi,
    SingletonModality,
    ConstantMap,
    ClampedParameter,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Warning {
    pub stage: &'static str,
    pub kind: WarningKind,
    pub entity: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InventoryEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub manifest_sha256: String,
    pub seed: u64,
    pub stages: Vec<&'static str>,
    pub timings: Vec<StageTiming>,
    pub warnings: Vec<Warning>,
    /// Every file written by this run except the report itself, sorted by path.
    pub inventory: Vec<InventoryEntry>,
}

/// Mutable state shared by the stages of one run.
pub struct StageContext<'a> {
    pub loaded: &'a LoadedManifest,
    pub opts: &'a RunOptions,
    pub seed: u64,
    pub out: PathBuf,
    stage: &'static str,
    warnings: Vec<Warning>,
    written: Vec<PathBuf>,
}

impl<'a> StageContext<'a> {
    pub fn manifest(&self) -> &Manifest {
        &self.loaded.manifest
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out.join(rel)
    }

    pub fn warn(&mut self, kind: WarningKind, entity: impl Into<String>, message: impl Into<String>) {
        let w = Warning {
            stage: self.stage,
            kind,
            entity: entity.into(),
            message: message.into(),
        };
        log::warn!("[{}] {}: {}", w.stage, w.entity, w.message);
        self.warnings.push(w);
    }

    fn mkdir_for(&self, rel: &Path) -> Result<PathBuf> {
        let full = self.path(rel);
        if let Some(parent) = full.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(full)
    }

    /// Registers a file written by the current stage.
    pub fn track(&mut self, rel: impl Into<PathBuf>) {
        self.written.push(rel.into());
    }

    pub fn write_bytes(&mut self, rel: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
        let rel = rel.as_ref();
        let full = self.mkdir_for(rel)?;
        std::fs::write(&full, bytes).map_err(|e| Error::io(&full, e))?;
        self.track(rel);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: impl AsRef<Path>, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(rel, text.as_bytes())
    }

    pub fn write_nft(&mut self, rel: impl AsRef<Path>, dims: &[usize], values: &[f64]) -> Result<()> {
        let rel = rel.as_ref();
        let full = self.mkdir_for(rel)?;
        write_tensor(&full, dims, values)?;
        self.track(rel);
        Ok(())
    }

    /// Runs `write` against the absolute path of `rel` and tracks it.
    pub fn write_with(&mut self, rel: impl AsRef<Path>, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        let rel = rel.as_ref();
        let full = self.mkdir_for(rel)?;
        write(&full)?;
        self.track(rel);
        Ok(())
    }

    fn read_opts(&self) -> ReadOptions {
        ReadOptions {
            allow_nonfinite: self.opts.allow_nonfinite,
        }
    }

    /// Marks this stage's intermediates as computed from the current manifest.
    fn seal(&mut self, dir: &str) -> Result<()> {
        let stamp = StageStamp {
            stage: self.stage.to_string(),
            manifest_sha256: self.loaded.hash.clone(),
        };
        self.write_json(Path::new("intermediate").join(dir).join("stage.json"), &stamp)
    }

    /// Fails unless `upstream` ran against the current manifest.
    fn require(&self, upstream: &str) -> Result<()> {
        let rel = Path::new("intermediate").join(upstream).join("stage.json");
        let full = self.path(&rel);
        let text = std::fs::read_to_string(&full).map_err(|_| {
            Error::Validation(format!(
                "missing {}: run stage {upstream} first",
                full.display()
            ))
        })?;
        let stamp: StageStamp = serde_json::from_str(&text)?;
        if stamp.manifest_sha256 != self.loaded.hash {
            return Err(Error::Validation(format!(
                "intermediates of stage {upstream} in {} were computed from manifest {}, not {}; rerun stage {upstream}",
                self.out.display(),
                stamp.manifest_sha256,
                self.loaded.hash
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StageStamp {
    stage: String,
    manifest_sha256: String,
}

pub trait Stage: Named + Send + Sync {
    fn run(&self, ctx: &mut StageContext) -> Result<()>;
}

pub fn stage_registry() -> Registry<dyn Stage> {
    Registry::<dyn Stage>::new("pipeline stage")
        .with(Arc::new(DmdStage))
        .with(Arc::new(HrfStage))
        .with(Arc::new(EncodeStage))
        .with(Arc::new(SnciStage))
        .with(Arc::new(StatsStage))
}

/// Parses a comma-separated stage list such as `"hrf,encode"`.
pub fn parse_stage_filter(spec: &str) -> Result<Vec<String>> {
    let stages: Vec<String> = spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    if let Some(bad) = stages.iter().find(|s| !STAGE_ORDER.contains(&s.as_str())) {
        return Err(Error::Config(format!(
            "unknown stage {bad:?}; stages are {}",
            STAGE_ORDER.join(", ")
        )));
    }
    Ok(stages)
}

fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

fn rel_string(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Runs the selected stages. On failure the run directory keeps whatever
/// was written and gains a `.partial` marker naming the failing stage.
pub fn run_pipeline(loaded: &LoadedManifest, out: &Path, opts: &RunOptions) -> Result<RunReport> {
    for s in &opts.stages {
        if !STAGE_ORDER.contains(&s.as_str()) {
            return Err(Error::Config(format!(
                "unknown stage {s:?}; stages are {}",
                STAGE_ORDER.join(", ")
            )));
        }
    }
    // faer splits its kernels by the rayon pool size, which changes rounding.
    // Work is already parallel across models and ROIs, so keep faer sequential.
    faer::set_global_parallelism(faer::Par::Seq);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let marker = out.join(PARTIAL_MARKER);
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    let registry = stage_registry();
    let selected: Vec<&'static str> = STAGE_ORDER
        .iter()
        .copied()
        .filter(|s| opts.stages.is_empty() || opts.stages.iter().any(|f| f == s))
        .collect();
    let mut ctx = StageContext {
        loaded,
        opts,
        seed: opts.seed.unwrap_or(loaded.manifest.seed),
        out: out.to_path_buf(),
        stage: "init",
        warnings: Vec::new(),
        written: Vec::new(),
    };
    let mut timings = Vec::new();
    for &name in &selected {
        let stage = registry.get(name)?;
        ctx.stage = name;
        let before = ctx.warnings.len();
        let start = Instant::now();
        log::info!("stage {name}");
        let outcome = stage.run(&mut ctx).and_then(|()| {
            if opts.strict && ctx.warnings.len() > before {
                let w = &ctx.warnings[before];
                Err(Error::Strict(format!(
                    "{} warning(s); first: {}: {}",
                    ctx.warnings.len() - before,
                    w.entity,
                    w.message
                )))
            } else {
                Ok(())
            }
        });
        if let Err(e) = outcome {
            let note = format!("failed in stage {name}: {e}\n");
            // best effort: the stage error is what matters
            let _ = std::fs::write(&marker, note);
            return Err(Error::Stage {
                stage: name,
                source: Box::new(e),
            });
        }
        timings.push(StageTiming {
            stage: name,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let mut written = ctx.written.clone();
    written.sort();
    written.dedup();
    let inventory = written
        .iter()
        .map(|rel| {
            let (sha256, bytes) = sha256_file(&out.join(rel))?;
            Ok(InventoryEntry {
                path: rel_string(rel),
                sha256,
                bytes,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = RunReport {
        manifest_sha256: loaded.hash.clone(),
        seed: ctx.seed,
        stages: selected,
        timings,
        warnings: ctx.warnings,
        inventory,
    };
    let path = out.join(REPORT_FILE);
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

/// Summary of a successful input check.
#[derive(Debug, Clone, Serialize)]
pub struct InputSummary {
    pub manifest_sha256: String,
    pub models: usize,
    pub trajectories: usize,
    pub brains: Vec<BrainSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BrainSummary {
    pub id: String,
    pub rois: usize,
    pub volumes: usize,
}

/// Reads every referenced file and checks shapes without computing anything.
pub fn validate_inputs(loaded: &LoadedManifest, allow_nonfinite: bool) -> Result<InputSummary> {
    let m = &loaded.manifest;
    let opts = ReadOptions { allow_nonfinite };
    let mut brains = Vec::new();
    for b in &m.brain {
        let (rois, volumes) = brain_shape(b, opts)?;
        let atlas = AtlasTable::load(&b.atlas)?;
        if atlas.len() != rois {
            return Err(Error::Validation(format!(
                "brain {:?}: atlas {} has {} ROIs, time series has {rois}",
                b.id,
                b.atlas.display(),
                atlas.len()
            )));
        }
        brains.push(BrainSummary {
            id: b.id.clone(),
            rois,
            volumes,
        });
    }
    let mut trajectories = 0;
    for model in &m.models {
        let mut dim = None;
        for t in &model.trajectories {
            let tensor = read_tensor_with(&t.path, opts)?;
            if tensor.dims.len() != 2 {
                return Err(Error::Validation(format!(
                    "{}: trajectory must be [L, D], got {:?}",
                    t.path.display(),
                    tensor.dims
                )));
            }
            if *dim.get_or_insert(tensor.dims[1]) != tensor.dims[1] {
                return Err(Error::Validation(format!(
                    "model {:?}: {} has D={}, other trajectories have D={}",
                    model.id,
                    t.path.display(),
                    tensor.dims[1],
                    dim.unwrap()
                )));
            }
            trajectories += 1;
        }
    }
    Ok(InputSummary {
        manifest_sha256: loaded.hash.clone(),
        models: m.models.len(),
        trajectories,
        brains,
    })
}

fn brain_shape(b: &BrainEntry, opts: ReadOptions) -> Result<(usize, usize)> {
    let t = read_tensor_with(&b.roi_timeseries, opts)?;
    if t.dims.len() != 2 {
        return Err(Error::Validation(format!(
            "{}: ROI time series must be [R, T], got {:?}",
            b.roi_timeseries.display(),
            t.dims
        )));
    }
    Ok((t.dims[0], t.dims[1]))
}

fn model_file(model: &ModelEntry, ext: &str) -> String {
    format!("{}.{ext}", model.id)
}

#[derive(Debug, Serialize, Deserialize)]
struct ZIndex {
    model: String,
    modality: Modality,
    /// Row order of the z tensor.
    stimuli: Vec<String>,
    fallbacks: BTreeMap<String, Fallback>,
    /// Dropped because their trajectory held non-finite values.
    quarantined: Vec<String>,
}

#[derive(Debug, Default)]
pub struct DmdStage;

impl Named for DmdStage {
    fn name(&self) -> &'static str {
        "dmd"
    }
}

impl Stage for DmdStage {
    fn run(&self, ctx: &mut StageContext) -> Result<()> {
        let tol = ctx.manifest().params.svd_rel_tol;
        let opts = ctx.read_opts();
        let models = ctx.manifest().models.clone();
        for model in &models {
            let loaded: Vec<(String, Result<Option<EmbeddingTrajectory>>)> = model
                .trajectories
                .par_iter()
                .map(|t| {
                    let r = read_tensor_with(&t.path, opts).and_then(|tensor| {
                        if tensor.quarantined {
                            Ok(None)
                        } else {
                            EmbeddingTrajectory::from_tensor(&t.stimulus, &tensor).map(Some)
                        }
                    });
                    (t.stimulus.clone(), r)
                })
                .collect();
            let mut trajs = Vec::new();
            let mut quarantined = Vec::new();
            for (stim, r) in loaded {
                match r.map_err(|e| Error::Validation(format!("model {:?}, stimulus {stim:?}: {e}", model.id)))? {
                    Some(t) => trajs.push(t),
                    None => quarantined.push(stim),
                }
            }
            for s in &quarantined {
                ctx.warn(
                    WarningKind::QuarantinedInput,
                    format!("{}/{s}", model.id),
                    "trajectory has non-finite values; stimulus dropped",
                );
            }
            if trajs.is_empty() {
                return Err(Error::Validation(format!("model {:?}: no usable trajectories", model.id)));
            }
            let dim = trajs[0].dim();
            if let Some(t) = trajs.iter().find(|t| t.dim() != dim) {
                return Err(Error::Validation(format!(
                    "model {:?}: stimulus {:?} has D={}, expected {dim}",
                    model.id,
                    t.stimulus_id(),
                    t.dim()
                )));
            }
            let fits = trajs
                .par_iter()
                .map(|t| trajectory_to_z(t, tol))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Validation(format!("model {:?}: {e}", model.id)))?;
            let mut values = Vec::with_capacity(trajs.len() * dim);
            let mut fallbacks = BTreeMap::new();
            let mut spectra: Vec<SpectrumReport> = Vec::new();
            for (t, fit) in trajs.iter().zip(&fits) {
                values.extend_from_slice(fit.z());
                if let Some(f) = fit.representation.fallback {
                    fallbacks.insert(t.stimulus_id().to_string(), f);
                }
                if ctx.opts.emit_spectra {
                    spectra.push(fit.report(t.stimulus_id()));
                }
            }
            for (stim, f) in &fallbacks {
                ctx.warn(
                    WarningKind::DegenerateTrajectory,
                    format!("{}/{stim}", model.id),
                    format!("{f:?}; z falls back to the depth average"),
                );
            }
            let dir = Path::new("intermediate/dmd");
            ctx.write_nft(dir.join(model_file(model, "nft")), &[trajs.len(), dim], &values)?;
            let index = ZIndex {
                model: model.id.clone(),
                modality: model.modality,
                stimuli: trajs.iter().map(|t| t.stimulus_id().to_string()).collect(),
                fallbacks,
                quarantined,
            };
            ctx.write_json(dir.join(model_file(model, "json")), &index)?;
            if ctx.opts.emit_spectra {
                ctx.write_json(Path::new("results/spectra").join(model_file(model, "json")), &spectra)?;
            }
        }
        ctx.seal("dmd")
    }
}

fn read_z(ctx: &StageContext, model: &ModelEntry) -> Result<(ZIndex, Vec<Vec<f64>>)> {
    let dir = ctx.path("intermediate/dmd");
    let json = dir.join(model_file(model, "json"));
    let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let index: ZIndex = serde_json::from_str(&text)?;
    let t = read_tensor(dir.join(model_file(model, "nft")))?;
    if t.dims.len() != 2 || t.dims[0] != index.stimuli.len() {
        return Err(Error::Validation(format!(
            "model {:?}: z tensor dims {:?} disagree with its index",
            model.id, t.dims
        )));
    }
    let rows = t.rows().map(<[f64]>::to_vec).collect();
    Ok((index, rows))
}

#[derive(Debug, Default)]
pub struct HrfStage;

impl Named for HrfStage {
    fn name(&self) -> &'static str {
        "hrf"
    }
}

impl Stage for HrfStage {
    fn run(&self, ctx: &mut StageContext) -> Result<()> {
        ctx.require("dmd")?;
        let params = ctx.manifest().params.clone();
        let design = design_registry().get(&params.stimulus_design)?;
        let opts = ctx.read_opts();
        let mut volumes_of = BTreeMap::new();
        for b in &ctx.manifest().brain {
            volumes_of.insert(b.id.clone(), brain_shape(b, opts)?.1);
        }
        let models = ctx.manifest().models.clone();
        for model in &models {
            let brain = ctx.manifest().brain_for(model)?.clone();
            let (index, rows) = read_z(ctx, model)?;
            let by_stim: BTreeMap<&str, &Vec<f64>> =
                index.stimuli.iter().map(String::as_str).zip(&rows).collect();
            let mut events: Vec<(f64, &Vec<f64>)> = brain
                .events
                .iter()
                .filter_map(|e| by_stim.get(e.stimulus.as_str()).map(|z| (e.onset, *z)))
                .collect();
            events.sort_by(|a, b| a.0.total_cmp(&b.0));
            if events.is_empty() {
                return Err(Error::Validation(format!(
                    "model {:?}: none of brain {:?}'s events has a usable z vector",
                    model.id, brain.id
                )));
            }
            let onsets: Vec<f64> = events.iter().map(|e| e.0).collect();
            let z: Vec<Vec<f64>> = events.iter().map(|e| e.1.clone()).collect();
            let series = design
                .design(&onsets, &z, brain.tr, volumes_of[&brain.id])
                .map_err(|e| Error::Validation(format!("model {:?}: {e}", model.id)))?;
            let convolved = convolve_hrf(&series, &params.hrf)?;
            let stem = Path::new("intermediate/hrf").join(&model.id);
            let full_stem = ctx.path(&stem);
            ctx.write_with(with_suffix(&stem, "nft"), |_| convolved.save(&full_stem))?;
            ctx.track(with_suffix(&stem, "json"));
        }
        ctx.seal("hrf")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixIndexEntry {
    pub id: String,
    pub modality: Modality,
}

/// Row index of `results/alignment_matrix.nft`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentMatrixIndex {
    pub manifest_sha256: String,
    pub rows: Vec<MatrixIndexEntry>,
    pub rois: usize,
    pub scorer: String,
    pub cv_folds: usize,
    pub ridge_grid: Vec<f64>,
}

fn load_brain(b: &BrainEntry, opts: ReadOptions, ctx: &mut StageContext) -> Result<RoiTimeSeries> {
    let mut t = read_tensor_with(&b.roi_timeseries, opts)?;
    if t.dims.len() != 2 {
        return Err(Error::Validation(format!(
            "{}: ROI time series must be [R, T], got {:?}",
            b.roi_timeseries.display(),
            t.dims
        )));
    }
    if t.quarantined {
        let cols = t.dims[1];
        for r in 0..t.dims[0] {
            let row = &mut t.values[r * cols..(r + 1) * cols];
            if row.iter().any(|v| !v.is_finite()) {
                row.iter_mut().for_each(|v| *v = 0.0);
                ctx.warn(
                    WarningKind::QuarantinedInput,
                    format!("{}/roi{r}", b.id),
                    "ROI has non-finite values; scored as constant",
                );
            }
        }
    }
    RoiTimeSeries::from_tensor(&t, b.tr)
}

#[derive(Debug, Default)]
pub struct EncodeStage;

impl Named for EncodeStage {
    fn name(&self) -> &'static str {
        "encode"
    }
}

impl Stage for EncodeStage {
    fn run(&self, ctx: &mut StageContext) -> Result<()> {
        ctx.require("hrf")?;
        let params = ctx.manifest().params.clone();
        let scorer = scorer_registry().get(&params.scorer)?;
        let cfg = CvConfig {
            folds: params.cv_folds,
            lambda_grid: params.ridge_grid.clone(),
        };
        let opts = ctx.read_opts();
        let mut brains = BTreeMap::new();
        for b in ctx.manifest().brain.clone() {
            let ts = load_brain(&b, opts, ctx)?;
            brains.insert(b.id.clone(), ts);
        }
        let rois: Vec<usize> = brains.values().map(RoiTimeSeries::num_rois).collect();
        if rois.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Validation(
                "brain entries differ in ROI count; alignment vectors would not be comparable".into(),
            ));
        }
        let r = rois[0];
        let models = ctx.manifest().models.clone();
        let mut matrix = Vec::with_capacity(models.len() * r);
        let mut rows = Vec::new();
        for model in &models {
            let brain_id = ctx.manifest().brain_for(model)?.id.clone();
            let features = FeatureSeries::load(&ctx.path(Path::new("intermediate/hrf").join(&model.id)))?;
            let outcome = alignment_vector(&model.id, model.modality, &features, &brains[&brain_id], &cfg, scorer.as_ref())?;
            for (roi, o) in outcome.per_roi.iter().enumerate() {
                if o.degenerate {
                    ctx.warn(
                        WarningKind::DegenerateRoi,
                        format!("{}/roi{roi}", model.id),
                        "no fold could be fit; score set to 0",
                    );
                } else if !o.skipped_folds.is_empty() {
                    ctx.warn(
                        WarningKind::SkippedFold,
                        format!("{}/roi{roi}", model.id),
                        format!("skipped folds {:?}", o.skipped_folds),
                    );
                }
            }
            let v = outcome.vector;
            ctx.write_with(Path::new("results/alignment").join(model_file(model, "csv")), |p| v.write_csv(p))?;
            matrix.extend_from_slice(&v.scores);
            rows.push(MatrixIndexEntry {
                id: model.id.clone(),
                modality: model.modality,
            });
        }
        ctx.write_nft("results/alignment_matrix.nft", &[models.len(), r], &matrix)?;
        let index = AlignmentMatrixIndex {
            manifest_sha256: ctx.loaded.hash.clone(),
            rows,
            rois: r,
            scorer: params.scorer.clone(),
            cv_folds: params.cv_folds,
            ridge_grid: params.ridge_grid.clone(),
        };
        ctx.write_json("results/alignment_matrix.json", &index)?;
        ctx.seal("encode")
    }
}

/// Alignment matrix rows with their model ids and modalities.
pub struct AlignmentMatrix {
    pub index: AlignmentMatrixIndex,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_alignment_matrix(out: &Path) -> Result<AlignmentMatrix> {
    let json = out.join("results/alignment_matrix.json");
    let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let index: AlignmentMatrixIndex = serde_json::from_str(&text)?;
    let t = read_tensor(out.join("results/alignment_matrix.nft"))?;
    if t.dims != [index.rows.len(), index.rois] {
        return Err(Error::Validation(format!(
            "alignment matrix dims {:?} disagree with its index ({} x {})",
            t.dims,
            index.rows.len(),
            index.rois
        )));
    }
    let rows = t.rows().map(<[f64]>::to_vec).collect();
    Ok(AlignmentMatrix { index, rows })
}

fn modalities_present(rows: &[MatrixIndexEntry]) -> Vec<Modality> {
    let mut m: Vec<Modality> = rows.iter().map(|r| r.modality).collect();
    m.sort();
    m.dedup();
    m
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SnciIndex {
    modalities: Vec<Modality>,
    rois: usize,
}

#[derive(Debug, Default)]
pub struct SnciStage;

impl Named for SnciStage {
    fn name(&self) -> &'static str {
        "snci"
    }
}

impl Stage for SnciStage {
    fn run(&self, ctx: &mut StageContext) -> Result<()> {
        ctx.require("encode")?;
        let params = ctx.manifest().params.clone();
        let am = read_alignment_matrix(&ctx.out)?;
        let convention = if params.sample_std {
            StdConvention::Sample
        } else {
            StdConvention::Population
        };
        let modalities = modalities_present(&am.index.rows);
        let mut maps = Vec::new();
        for &m in &modalities {
            let (ids, scores): (Vec<String>, Vec<Vec<f64>>) = am
                .index
                .rows
                .iter()
                .zip(&am.rows)
                .filter(|(e, _)| e.modality == m)
                .map(|(e, s)| (e.id.clone(), s.clone()))
                .unzip();
            let group = ModalityGroup::new(m, ids, scores)?;
            let map = snci_map_with(&group, params.epsilon, convention)?;
            if map.single_model {
                ctx.warn(
                    WarningKind::SingletonModality,
                    m.name(),
                    "one model only; sigma is zero and SNCI = sigmoid(mu / epsilon)",
                );
            }
            maps.push(map);
        }
        let z_maps: Vec<Vec<f64>> = if params.joint_zscore {
            let all: Vec<f64> = maps.iter().flat_map(|m| m.snci.clone()).collect();
            let z = zscore_across_rois(&all)?;
            if z.constant {
                ctx.warn(WarningKind::ConstantMap, "all", "SNCI is constant across ROIs; z-scores set to 0");
            }
            z.values.chunks(am.index.rois).map(<[f64]>::to_vec).collect()
        } else {
            let mut out = Vec::new();
            for map in &maps {
                let z = zscore_across_rois(&map.snci)?;
                if z.constant {
                    ctx.warn(
                        WarningKind::ConstantMap,
                        map.modality.name(),
                        "SNCI is constant across ROIs; z-scores set to 0",
                    );
                }
                out.push(z.values);
            }
            out
        };
        for (map, z) in maps.iter().zip(&z_maps) {
            let rel = format!("results/snci_{}.csv", map.modality);
            ctx.write_with(rel, |p| write_snci_csv(map, z, p))?;
        }
        let flat: Vec<f64> = maps.iter().flat_map(|m| m.snci.clone()).collect();
        ctx.write_nft("intermediate/snci/snci.nft", &[maps.len(), am.index.rois], &flat)?;
        ctx.write_json(
            "intermediate/snci/snci.json",
            &SnciIndex {
                modalities,
                rois: am.index.rois,
            },
        )?;
        ctx.seal("snci")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PermanovaReport {
    pub metric: &'static str,
    pub labels: Vec<String>,
    pub model_ids: Vec<String>,
    #[serde(flatten)]
    pub result: PermanovaResult,
    pub distance_contrast: DistanceContrast,
}

#[derive(Debug, Clone, Serialize)]
pub struct SilhouetteReport {
    pub metric: &'static str,
    pub space: SilhouetteSpace,
    pub model_ids: Vec<String>,
    #[serde(flatten)]
    pub result: SilhouetteResult,
}

#[derive(Debug, Default)]
pub struct StatsStage;

impl Named for StatsStage {
    fn name(&self) -> &'static str {
        "stats"
    }
}

impl Stage for StatsStage {
    fn run(&self, ctx: &mut StageContext) -> Result<()> {
        ctx.require("encode")?;
        ctx.require("snci")?;
        let params = ctx.manifest().params.clone();
        let am = read_alignment_matrix(&ctx.out)?;
        let modalities = modalities_present(&am.index.rows);
        if modalities.len() < 2 {
            return Err(Error::Validation(format!(
                "the statistics need at least 2 modalities, found {}",
                modalities.len()
            )));
        }
        let ids: Vec<String> = am.index.rows.iter().map(|r| r.id.clone()).collect();
        let labels: Vec<usize> = am
            .index
            .rows
            .iter()
            .map(|r| modalities.binary_search(&r.modality).unwrap())
            .collect();
        let label_names: Vec<String> = am.index.rows.iter().map(|r| r.modality.to_string()).collect();

        let m = am.rows.len();
        let max_k = (m - 1).min(am.index.rois);
        let mut k = params.pca_components;
        if k > max_k {
            ctx.warn(
                WarningKind::ClampedParameter,
                "pca_components",
                format!("{k} components requested, at most {max_k} available"),
            );
            k = max_k;
        }
        let pca = pca_embed(&am.rows, k)?;
        ctx.write_with("results/pca.csv", |p| write_pca_csv(&pca, &am.index.rows, p))?;
        let svg = pca_svg(&pca, &am.index.rows);
        ctx.write_bytes("results/pca.svg", svg.as_bytes())?;

        let metric = metric_registry().get(&params.distance_metric)?;
        let scheme = scheme_registry().get(&params.permutation_scheme)?;
        let d = distance_matrix(&ids, &am.rows, metric.as_ref())?;
        let perm = permanova(&d, &labels, params.n_permutations, ctx.seed, scheme.as_ref())?;
        let contrast = distance_contrast(&d, &labels)?;
        ctx.write_json(
            "results/permanova.json",
            &PermanovaReport {
                metric: metric.name(),
                labels: label_names,
                model_ids: ids.clone(),
                result: perm,
                distance_contrast: contrast,
            },
        )?;

        let sil_d = match params.silhouette_space {
            SilhouetteSpace::Raw => d,
            SilhouetteSpace::Pca => distance_matrix(&ids, &pca.coordinates, metric.as_ref())?,
        };
        let sil = silhouette(&sil_d, &labels, params.n_permutations, ctx.seed, scheme.as_ref())?;
        ctx.write_json(
            "results/silhouette.json",
            &SilhouetteReport {
                metric: metric.name(),
                space: params.silhouette_space,
                model_ids: ids,
                result: sil,
            },
        )?;

        let snci = read_tensor(ctx.path("intermediate/snci/snci.nft"))?;
        let snci_index: SnciIndex = {
            let p = ctx.path("intermediate/snci/snci.json");
            serde_json::from_str(&std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?
        };
        let brain = ctx.manifest().brain[0].clone();
        let atlas = AtlasTable::load(&brain.atlas)?;
        if atlas.len() != snci_index.rois {
            return Err(Error::Validation(format!(
                "atlas {} has {} ROIs, SNCI maps have {}",
                brain.atlas.display(),
                atlas.len(),
                snci_index.rois
            )));
        }
        let assignment = NetworkAssignment::from_atlas(&atlas);
        let mut means = Vec::new();
        let mut obs: Vec<(f64, Modality, Network)> = Vec::new();
        for (g, &modality) in snci_index.modalities.iter().enumerate() {
            let values = snci.row(g);
            means.push((modality.to_string(), aggregate_networks(values, &assignment)?));
            obs.extend(
                values
                    .iter()
                    .zip(assignment.labels())
                    .map(|(&v, &n)| (v, modality, n)),
            );
        }
        if means.iter().all(|(_, m)| m.is_empty()) {
            return Err(Error::Validation("no network means to report".into()));
        }
        ctx.write_with("results/network_means.csv", |p| write_network_means_csv(&means, p))?;
        let table = two_way_anova(&obs, SsType::II)?;
        ctx.write_with("results/anova.csv", |p| table.write_csv(p))?;
        ctx.seal("stats")
    }
}

/// `model_id,modality,pc1,pc2,...`
pub fn write_pca_csv(pca: &PcaEmbedding, rows: &[MatrixIndexEntry], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let k = pca.components.len();
    let mut header = vec!["model_id".to_string(), "modality".to_string()];
    header.extend((1..=k).map(|i| format!("pc{i}")));
    w.write_record(&header)?;
    for (r, coords) in rows.iter().zip(&pca.coordinates) {
        let mut rec = vec![r.id.clone(), r.modality.to_string()];
        rec.extend(coords.iter().map(|&c| crate::encoding::fmt_f64(c)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn modality_color(m: Modality) -> &'static str {
    match m {
        Modality::Vision => "#1b9e77",
        Modality::Audio => "#d95f02",
        Modality::Language => "#7570b3",
    }
}

/// Scatter of the first two components, one colour per modality.
pub fn pca_svg(pca: &PcaEmbedding, rows: &[MatrixIndexEntry]) -> String {
    let (w, h, pad) = (640.0, 480.0, 60.0);
    let xy: Vec<(f64, f64)> = pca
        .coordinates
        .iter()
        .map(|c| (c[0], c.get(1).copied().unwrap_or(0.0)))
        .collect();
    let span = |f: fn(&(f64, f64)) -> f64| {
        let lo = xy.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = xy.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        let half = ((hi - lo) / 2.0).max(1e-12) * 1.1;
        let mid = (hi + lo) / 2.0;
        (mid - half, mid + half)
    };
    let (x0, x1) = span(|p| p.0);
    let (y0, y1) = span(|p| p.1);
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let ratio = |i: usize| pca.explained_variance_ratio.get(i).copied().unwrap_or(0.0) * 100.0;
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - pad,
        w - pad,
        h - pad
    ));
    s.push_str(&format!(
        "<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - pad
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">PC1 ({:.1}%)</text>\n",
        w / 2.0,
        h - pad / 3.0,
        ratio(0)
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\" transform=\"rotate(-90 {} {})\">PC2 ({:.1}%)</text>\n",
        pad / 3.0,
        h / 2.0,
        pad / 3.0,
        h / 2.0,
        ratio(1)
    ));
    for (r, &(x, y)) in rows.iter().zip(&xy) {
        s.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"5\" fill=\"{}\" fill-opacity=\"0.8\"><title>{}</title></circle>\n",
            sx(x),
            sy(y),
            modality_color(r.modality),
            r.id
        ));
    }
    let present = modalities_present(rows);
    for (i, m) in present.iter().enumerate() {
        let y = pad + 18.0 * i as f64;
        s.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{y}\" r=\"5\" fill=\"{}\"/>\n<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{m}</text>\n",
            w - pad - 70.0,
            modality_color(*m),
            w - pad - 60.0,
            y + 4.0
        ));
    }
    s.push_str("</svg>\n");
    s
}
