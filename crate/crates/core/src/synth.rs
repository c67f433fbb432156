//! Synthetic trajectories, brains and model populations with known ground
//! truth, plus a writer for complete on-disk workspaces.
//!
//! Every generator is a pure function of its spec and seed. Random draws come
//! from ChaCha substreams keyed by `(seed, tag, index)`, so any piece can be
//! regenerated independently and in any order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use faer::Mat;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::atlas::{AtlasRow, AtlasTable, Hemisphere, Network};
use crate::depth_dynamics::EmbeddingTrajectory;
use crate::encoding::RoiTimeSeries;
use crate::error::{Error, Result};
use crate::hemodynamics::{convolve_hrf, FeatureSeries, HrfParams, SampleAndHold, StimulusDesign};
use crate::manifest::{BrainEntry, Manifest, Modality, ModelEntry, Params, StimulusEvent, TrajectoryRef};
use crate::tensor_store::write_tensor;

/// Independent generator for `(seed, tag, index)`.
pub fn substream(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let key: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

fn normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Random `n x n` orthogonal matrix (Q factor of a Gaussian matrix).
pub fn random_orthogonal(n: usize, seed: u64) -> Mat<f64> {
    let mut rng = substream(seed, "orthogonal", n as u64);
    let g = normals(&mut rng, n * n);
    Mat::from_fn(n, n, |i, j| g[i * n + j]).qr().compute_Q()
}

/// Quarter-turn multiples give exact zeros instead of `6e-17`.
fn exact_sin_cos(deg: f64) -> (f64, f64) {
    let (s, c) = deg.to_radians().sin_cos();
    let snap = |v: f64| if v.abs() < 4.0 * f64::EPSILON { 0.0 } else { v };
    (snap(s), snap(c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub layers: usize,
    /// One 1x1 block per entry.
    pub real_eigenvalues: Vec<f64>,
    /// `(modulus, angle in degrees)` per 2x2 rotation block, giving the
    /// conjugate pair `modulus * exp(+-i angle)`.
    pub rotations: Vec<(f64, f64)>,
    /// First layer in block coordinates; length `D`.
    pub initial: Vec<f64>,
    /// Added to every layer after the linear recursion; empty means zero.
    #[serde(default)]
    pub offset: Vec<f64>,
    /// Orthogonal change of basis `Q` with `A = Q B Q^T`; `None` keeps `A`
    /// block diagonal.
    #[serde(default)]
    pub mixing_seed: Option<u64>,
}

impl TrajectorySpec {
    pub fn dim(&self) -> usize {
        self.real_eigenvalues.len() + 2 * self.rotations.len()
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        let mut out: Vec<Complex64> = self
            .real_eigenvalues
            .iter()
            .map(|&l| Complex64::new(l, 0.0))
            .collect();
        for &(r, deg) in &self.rotations {
            let (s, c) = exact_sin_cos(deg);
            out.push(Complex64::new(r * c, r * s));
            out.push(Complex64::new(r * c, -r * s));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::Config("trajectory spec needs at least one eigenvalue".into()));
        }
        if self.layers < 1 {
            return Err(Error::Config("trajectory spec needs at least one layer".into()));
        }
        if self.initial.len() != d {
            return Err(Error::Config(format!(
                "initial state has length {}, generator dimension is {d}",
                self.initial.len()
            )));
        }
        if !self.offset.is_empty() && self.offset.len() != d {
            return Err(Error::Config(format!(
                "offset has length {}, generator dimension is {d}",
                self.offset.len()
            )));
        }
        let biggest = self.eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max);
        if biggest > 10.0 && self.layers > 30 {
            return Err(Error::Config(format!(
                "eigenvalue magnitude {biggest} over {} layers would overflow",
                self.layers
            )));
        }
        Ok(())
    }

    /// Block-diagonal generator `B`, row-major.
    fn block_operator(&self) -> Vec<f64> {
        let d = self.dim();
        let mut b = vec![0.0; d * d];
        let nr = self.real_eigenvalues.len();
        for (i, &l) in self.real_eigenvalues.iter().enumerate() {
            b[i * d + i] = l;
        }
        for (k, &(r, deg)) in self.rotations.iter().enumerate() {
            let (s, c) = exact_sin_cos(deg);
            let i = nr + 2 * k;
            b[i * d + i] = r * c;
            b[i * d + i + 1] = -r * s;
            b[(i + 1) * d + i] = r * s;
            b[(i + 1) * d + i + 1] = r * c;
        }
        b
    }
}

#[derive(Debug, Clone)]
pub struct SynthTrajectory {
    pub trajectory: EmbeddingTrajectory,
    /// Exact spectrum of the generator, reals first, then conjugate pairs.
    pub eigenvalues: Vec<Complex64>,
    /// `A_true`, row-major `D x D`.
    pub operator: Vec<f64>,
}

fn matvec(a: &[f64], x: &[f64]) -> Vec<f64> {
    let d = x.len();
    (0..d)
        .map(|i| a[i * d..(i + 1) * d].iter().zip(x).map(|(p, q)| p * q).sum())
        .collect()
}

/// `x_1 = Q initial`, `x_{l+1} = A x_l`, every layer shifted by `offset`.
pub fn gen_linear_trajectory(stimulus_id: &str, spec: &TrajectorySpec) -> Result<SynthTrajectory> {
    spec.validate()?;
    let d = spec.dim();
    let b = spec.block_operator();
    let mut layers = Vec::with_capacity(spec.layers);
    let mut u = spec.initial.clone();
    for l in 0..spec.layers {
        if l > 0 {
            u = matvec(&b, &u);
        }
        layers.push(u.clone());
    }
    let operator = match spec.mixing_seed {
        None => {
            if !spec.offset.is_empty() {
                for x in &mut layers {
                    x.iter_mut().zip(&spec.offset).for_each(|(v, o)| *v += o);
                }
            }
            b
        }
        Some(seed) => {
            let q = random_orthogonal(d, seed);
            for x in &mut layers {
                let mixed: Vec<f64> = (0..d)
                    .map(|i| (0..d).map(|j| q[(i, j)] * x[j]).sum::<f64>())
                    .collect();
                *x = mixed;
                if !spec.offset.is_empty() {
                    x.iter_mut().zip(&spec.offset).for_each(|(v, o)| *v += o);
                }
            }
            let bm = Mat::from_fn(d, d, |i, j| b[i * d + j]);
            let a = &q * &bm * q.transpose();
            (0..d * d).map(|k| a[(k / d, k % d)]).collect()
        }
    };
    Ok(SynthTrajectory {
        trajectory: EmbeddingTrajectory::new(stimulus_id, layers)?,
        eigenvalues: spec.eigenvalues(),
        operator,
    })
}

/// Seeded `N(0, 1)` readout weights, one `dim`-vector per ROI.
pub fn random_readout(rois: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..rois)
        .map(|r| normals(&mut substream(seed, "readout", r as u64), dim))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SynthBrain {
    pub rois: RoiTimeSeries,
    pub weights: Vec<Vec<f64>>,
}

/// `y_r(t) = w_r . f(t) + sigma * noise`; `features` should already be
/// convolved. ROI `r` draws its noise from substream `r`.
pub fn gen_roi_responses(
    features: &FeatureSeries,
    weights: &[Vec<f64>],
    noise_sigma: f64,
    seed: u64,
) -> Result<SynthBrain> {
    if !(noise_sigma >= 0.0) {
        return Err(Error::Config(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let (t_len, d) = (features.num_volumes(), features.dim());
    if let Some(r) = weights.iter().position(|w| w.len() != d) {
        return Err(Error::Config(format!(
            "readout of ROI {r} has length {}, features have {d}",
            weights[r].len()
        )));
    }
    let mut values = Vec::with_capacity(weights.len() * t_len);
    for (r, w) in weights.iter().enumerate() {
        let mut rng = substream(seed, "roi-noise", r as u64);
        for t in 0..t_len {
            let signal: f64 = features.row(t).iter().zip(w).map(|(f, c)| f * c).sum();
            let eps: f64 = rng.sample(StandardNormal);
            values.push(signal + noise_sigma * eps);
        }
    }
    Ok(SynthBrain {
        rois: RoiTimeSeries::new(features.tr, weights.len(), t_len, values)?,
        weights: weights.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub modalities: usize,
    pub models_per_modality: usize,
    pub rois: usize,
    /// Angle between any two centroids, degrees in `(0, 90]`.
    pub separation_deg: f64,
    /// Per-entry standard deviation around the centroid.
    pub dispersion: f64,
    /// Largest centroid entry.
    pub level: f64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            modalities: 2,
            models_per_modality: 5,
            rois: 50,
            separation_deg: 60.0,
            dispersion: 0.01,
            level: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModalityClusters {
    pub vectors: Vec<Vec<f64>>,
    /// Modality index of each vector; members are contiguous.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Fraction of entries moved by clipping to `[0, 1]`.
    pub clipped_fraction: f64,
}

fn centroid_shape(rois: usize, groups: usize, g: usize, t: f64) -> Vec<f64> {
    (0..rois)
        .map(|r| if r * groups / rois == g { 1.0 } else { t })
        .collect()
}

fn angle_deg(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Centroid `g` is `level` on its own block of ROIs and `level * t`
/// elsewhere; `t` is solved by bisection for the requested angle between
/// centroids 0 and 1 (all pairs agree when blocks have equal size).
pub fn gen_modality_clusters(spec: &PopulationSpec, seed: u64) -> Result<ModalityClusters> {
    let g = spec.modalities;
    if g < 2 {
        return Err(Error::Config(format!("need at least 2 modalities, got {g}")));
    }
    if spec.models_per_modality < 1 || spec.rois < g {
        return Err(Error::Config(format!(
            "need >= 1 model per modality and >= {g} ROIs"
        )));
    }
    if !(spec.separation_deg > 0.0 && spec.separation_deg <= 90.0) {
        return Err(Error::Config(format!(
            "separation must lie in (0, 90] degrees, got {}",
            spec.separation_deg
        )));
    }
    if !(spec.dispersion >= 0.0) || !(spec.level > 0.0 && spec.level <= 1.0) {
        return Err(Error::Config("dispersion must be >= 0 and level in (0, 1]".into()));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let a = angle_deg(
            &centroid_shape(spec.rois, g, 0, mid),
            &centroid_shape(spec.rois, g, 1, mid),
        );
        if a > spec.separation_deg {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let centroids: Vec<Vec<f64>> = (0..g)
        .map(|k| {
            centroid_shape(spec.rois, g, k, t)
                .into_iter()
                .map(|v| v * spec.level)
                .collect()
        })
        .collect();
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    let mut clipped = 0usize;
    for (k, c) in centroids.iter().enumerate() {
        for m in 0..spec.models_per_modality {
            let idx = (k * spec.models_per_modality + m) as u64;
            let mut rng = substream(seed, "population", idx);
            let v: Vec<f64> = c
                .iter()
                .map(|&x| {
                    let raw = x + spec.dispersion * rng.sample::<f64, _>(StandardNormal);
                    let v = raw.clamp(0.0, 1.0);
                    if v != raw {
                        clipped += 1;
                    }
                    v
                })
                .collect();
            vectors.push(v);
            labels.push(k);
        }
    }
    let total = vectors.len() * spec.rois;
    let clipped_fraction = clipped as f64 / total as f64;
    if clipped_fraction > 0.5 {
        return Err(Error::Config(format!(
            "dispersion {} clips {:.0}% of entries to [0, 1]",
            spec.dispersion,
            100.0 * clipped_fraction
        )));
    }
    Ok(ModalityClusters {
        vectors,
        labels,
        centroids,
        clipped_fraction,
    })
}

/// A complete synthetic study: per-modality latent stimulus features drive
/// both the model trajectories (through their layer offsets) and the ROIs
/// of the networks assigned to that modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkspaceSpec {
    pub seed: u64,
    pub modalities: Vec<Modality>,
    pub models_per_modality: usize,
    pub stimuli: usize,
    pub layers: usize,
    /// Embedding dimension; at least 3.
    pub dim: usize,
    pub latent_dim: usize,
    pub rois: usize,
    pub tr: f64,
    /// Seconds between consecutive stimulus onsets.
    pub stimulus_interval: f64,
    /// Noise standard deviation relative to a unit-variance ROI signal.
    pub brain_noise: f64,
    /// Per-stimulus offset noise of each model, relative to the latent scale.
    pub model_noise: f64,
}

impl Default for WorkspaceSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            modalities: Modality::ALL.to_vec(),
            models_per_modality: 10,
            stimuli: 40,
            layers: 12,
            dim: 16,
            latent_dim: 3,
            rois: 70,
            tr: 1.0,
            stimulus_interval: 6.0,
            brain_noise: 0.5,
            model_noise: 0.3,
        }
    }
}

impl WorkspaceSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = self.modalities.clone();
        seen.sort();
        seen.dedup();
        if self.modalities.is_empty() || seen.len() != self.modalities.len() {
            return Err(Error::Config("modalities must be nonempty and distinct".into()));
        }
        let checks = [
            (self.models_per_modality >= 1, "models_per_modality >= 1"),
            (self.stimuli >= 2, "stimuli >= 2"),
            (self.layers >= 1, "layers >= 1"),
            (self.dim >= 3, "dim >= 3"),
            (self.latent_dim >= 1, "latent_dim >= 1"),
            (self.rois >= Network::ALL.len(), "rois >= 7"),
            (self.tr > 0.0, "tr > 0"),
            (self.stimulus_interval > 0.0, "stimulus_interval > 0"),
            (self.brain_noise >= 0.0, "brain_noise >= 0"),
            (self.model_noise >= 0.0, "model_noise >= 0"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, what)) => Err(Error::Config(format!("workspace spec requires {what}"))),
            None => Ok(()),
        }
    }

    pub fn volumes(&self) -> usize {
        ((self.stimuli as f64 * self.stimulus_interval) / self.tr).ceil() as usize
    }

    pub fn onsets(&self) -> Vec<f64> {
        (0..self.stimuli)
            .map(|i| i as f64 * self.stimulus_interval)
            .collect()
    }

    /// Modality whose latent features drive each network.
    pub fn network_modalities(&self) -> BTreeMap<Network, Modality> {
        use Modality::*;
        let preferred = [Vision, Audio, Vision, Audio, Language, Language, Language];
        let mut fallback = self.modalities.iter().cycle();
        Network::ALL
            .iter()
            .zip(preferred)
            .map(|(&n, p)| {
                let m = if self.modalities.contains(&p) {
                    p
                } else {
                    *fallback.next().expect("modalities nonempty")
                };
                (n, m)
            })
            .collect()
    }

    pub fn atlas(&self) -> Result<AtlasTable> {
        let rows = (0..self.rois)
            .map(|r| {
                let network = Network::ALL[r * Network::ALL.len() / self.rois];
                let hemisphere = if r % 2 == 0 { Hemisphere::L } else { Hemisphere::R };
                AtlasRow {
                    roi_index: r,
                    roi_name: format!("{hemisphere:?}H_{network}_{r}"),
                    network,
                    hemisphere,
                }
            })
            .collect();
        AtlasTable::new(rows)
    }

    pub fn stimulus_id(i: usize) -> String {
        format!("stim{i:03}")
    }

    pub fn model_id(modality: Modality, k: usize) -> String {
        format!("{modality}{k:02}")
    }

    fn latent(&self, modality: Modality, stim: usize) -> Vec<f64> {
        let mut rng = substream(self.seed, &format!("latent/{modality}"), stim as u64);
        normals(&mut rng, self.latent_dim)
    }

    /// Layer dynamics of one model; the offset is filled in per stimulus.
    fn model_dynamics(&self, modality: Modality, k: usize) -> TrajectorySpec {
        let d = self.dim;
        let nr = d - 2;
        let real_eigenvalues = (0..nr)
            .map(|i| 0.3 + 0.55 * i as f64 / (nr.max(2) - 1) as f64)
            .collect();
        let tag = format!("model/{modality}");
        let mut rng = substream(self.seed, &tag, k as u64);
        TrajectorySpec {
            layers: self.layers,
            real_eigenvalues,
            rotations: vec![(1.0, 15.0 + 5.0 * (k % 5) as f64)],
            initial: normals(&mut rng, d),
            offset: Vec::new(),
            mixing_seed: Some(rng.random()),
        }
    }

    fn model_readout(&self, modality: Modality, k: usize) -> Vec<f64> {
        let mut rng = substream(self.seed, &format!("embed/{modality}"), k as u64);
        let scale = 1.0 / (self.latent_dim as f64).sqrt();
        normals(&mut rng, self.dim * self.latent_dim)
            .into_iter()
            .map(|v| v * scale)
            .collect()
    }

    pub fn trajectory(&self, modality: Modality, k: usize, stim: usize) -> Result<SynthTrajectory> {
        let mut spec = self.model_dynamics(modality, k);
        let p = self.model_readout(modality, k);
        let s = self.latent(modality, stim);
        let idx = (k * self.stimuli + stim) as u64;
        let mut rng = substream(self.seed, &format!("model-noise/{modality}"), idx);
        spec.offset = (0..self.dim)
            .map(|i| {
                let signal: f64 = (0..self.latent_dim).map(|j| p[i * self.latent_dim + j] * s[j]).sum();
                signal + self.model_noise * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        gen_linear_trajectory(&Self::stimulus_id(stim), &spec)
    }

    /// Convolved latent features of every modality side by side, `T x (G k)`.
    fn latent_features(&self, hrf: &HrfParams) -> Result<FeatureSeries> {
        let onsets = self.onsets();
        let z: Vec<Vec<f64>> = (0..self.stimuli)
            .map(|s| {
                self.modalities
                    .iter()
                    .flat_map(|&m| self.latent(m, s))
                    .collect()
            })
            .collect();
        let design = SampleAndHold.design(&onsets, &z, self.tr, self.volumes())?;
        convolve_hrf(&design, hrf)
    }

    /// ROI responses and their true readouts (zero outside the ROI's modality block).
    pub fn brain(&self, hrf: &HrfParams) -> Result<SynthBrain> {
        let atlas = self.atlas()?;
        let features = self.latent_features(hrf)?;
        let assign = self.network_modalities();
        let k = self.latent_dim;
        let raw = random_readout(self.rois, k, self.seed);
        let weights: Vec<Vec<f64>> = atlas
            .rows()
            .iter()
            .zip(&raw)
            .map(|(row, w)| {
                let g = self
                    .modalities
                    .iter()
                    .position(|&m| m == assign[&row.network])
                    .expect("assigned modality is listed");
                let mut full = vec![0.0; k * self.modalities.len()];
                full[g * k..(g + 1) * k].copy_from_slice(w);
                // unit-variance signal so that brain_noise is a noise-to-signal ratio
                let sig: Vec<f64> = (0..features.num_volumes())
                    .map(|t| features.row(t).iter().zip(&full).map(|(f, c)| f * c).sum())
                    .collect();
                let mean = sig.iter().sum::<f64>() / sig.len() as f64;
                let sd = (sig.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / sig.len() as f64).sqrt();
                if sd > 0.0 {
                    full.iter_mut().for_each(|v| *v /= sd);
                }
                full
            })
            .collect();
        gen_roi_responses(&features, &weights, self.brain_noise, self.seed)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WorkspaceTruth {
    pub spec: WorkspaceSpec,
    pub network_modality: BTreeMap<Network, Modality>,
    pub volumes: usize,
}

#[derive(Debug, Clone)]
pub struct WrittenWorkspace {
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
    pub files: Vec<PathBuf>,
}

/// Writes `manifest.json`, `atlas.csv`, `brain/roi_timeseries.nft`,
/// `trajectories/<model>/<stimulus>.nft` and `truth.json` under `dir`.
/// All manifest paths are relative to `dir`.
pub fn write_workspace(spec: &WorkspaceSpec, dir: &Path, params: Params) -> Result<WrittenWorkspace> {
    spec.validate()?;
    let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    mkdir(dir)?;
    let mut files = Vec::new();

    let atlas = spec.atlas()?;
    let atlas_rel = PathBuf::from("atlas.csv");
    atlas.write(dir.join(&atlas_rel))?;
    files.push(atlas_rel.clone());

    let brain = spec.brain(&params.hrf)?;
    let brain_rel = PathBuf::from("brain/roi_timeseries.nft");
    mkdir(&dir.join("brain"))?;
    write_tensor(
        dir.join(&brain_rel),
        &[brain.rois.num_rois(), brain.rois.num_volumes()],
        brain.rois.values(),
    )?;
    files.push(brain_rel.clone());

    let mut models = Vec::new();
    for &m in &spec.modalities {
        for k in 0..spec.models_per_modality {
            let id = WorkspaceSpec::model_id(m, k);
            let model_dir = PathBuf::from("trajectories").join(&id);
            mkdir(&dir.join(&model_dir))?;
            let mut trajectories = Vec::with_capacity(spec.stimuli);
            for s in 0..spec.stimuli {
                let t = spec.trajectory(m, k, s)?.trajectory;
                let rel = model_dir.join(format!("{}.nft", WorkspaceSpec::stimulus_id(s)));
                let values: Vec<f64> = (0..t.num_layers()).flat_map(|l| t.layer(l).to_vec()).collect();
                write_tensor(dir.join(&rel), &[t.num_layers(), t.dim()], &values)?;
                files.push(rel.clone());
                trajectories.push(TrajectoryRef {
                    stimulus: WorkspaceSpec::stimulus_id(s),
                    path: rel,
                });
            }
            models.push(ModelEntry {
                id,
                modality: m,
                brain: None,
                trajectories,
            });
        }
    }

    let manifest = Manifest {
        models,
        brain: vec![BrainEntry {
            id: "synthetic".into(),
            roi_timeseries: brain_rel,
            tr: spec.tr,
            atlas: atlas_rel,
            events: spec
                .onsets()
                .into_iter()
                .enumerate()
                .map(|(i, onset)| StimulusEvent {
                    stimulus: WorkspaceSpec::stimulus_id(i),
                    onset,
                })
                .collect(),
        }],
        params,
        seed: spec.seed,
    };
    manifest.validate()?;
    let manifest_path = dir.join("manifest.json");
    std::fs::write(&manifest_path, manifest.to_json()).map_err(|e| Error::io(&manifest_path, e))?;
    files.push(PathBuf::from("manifest.json"));

    let truth = WorkspaceTruth {
        spec: spec.clone(),
        network_modality: spec.network_modalities(),
        volumes: spec.volumes(),
    };
    let truth_path = dir.join("truth.json");
    std::fs::write(&truth_path, serde_json::to_string_pretty(&truth)?)
        .map_err(|e| Error::io(&truth_path, e))?;
    files.push(PathBuf::from("truth.json"));

    Ok(WrittenWorkspace {
        manifest_path,
        manifest,
        files,
    })
}
