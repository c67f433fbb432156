//! Canonical double-gamma HRF and stimulus designs on the volume grid.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::registry::{Named, Registry};
use crate::tensor_store::{check_finite, read_tensor, write_tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HrfParams {
    pub peak_delay: f64,
    pub undershoot_delay: f64,
    pub peak_dispersion: f64,
    pub undershoot_dispersion: f64,
    pub undershoot_ratio: f64,
    pub duration: f64,
    pub dt: f64,
}

impl Default for HrfParams {
    fn default() -> Self {
        Self {
            peak_delay: 6.0,
            undershoot_delay: 16.0,
            peak_dispersion: 1.0,
            undershoot_dispersion: 1.0,
            undershoot_ratio: 1.0 / 6.0,
            duration: 32.0,
            dt: 0.1,
        }
    }
}

impl HrfParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("peak_delay", self.peak_delay),
            ("undershoot_delay", self.undershoot_delay),
            ("peak_dispersion", self.peak_dispersion),
            ("undershoot_dispersion", self.undershoot_dispersion),
            ("duration", self.duration),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("hrf.{name} must be > 0, got {v}")));
            }
        }
        if !(self.undershoot_ratio >= 0.0) || !self.undershoot_ratio.is_finite() {
            return Err(Error::Config(format!(
                "hrf.undershoot_ratio must be >= 0, got {}",
                self.undershoot_ratio
            )));
        }
        if self.duration < self.undershoot_delay {
            return Err(Error::Config(format!(
                "hrf.duration {} shorter than undershoot_delay {}",
                self.duration, self.undershoot_delay
            )));
        }
        Ok(())
    }

    fn samples(&self) -> usize {
        (self.duration / self.dt + 1e-9).floor() as usize + 1
    }
}

/// Gamma density with shape `delay / dispersion` and scale `dispersion`.
fn gamma_bump(t: f64, delay: f64, dispersion: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let shape = delay / dispersion;
    let x = t / dispersion;
    ((shape - 1.0) * x.ln() - x - ln_gamma(shape)).exp() / dispersion
}

/// Unnormalized double-gamma response at time `t` seconds.
pub fn hrf_value(p: &HrfParams, t: f64) -> f64 {
    gamma_bump(t, p.peak_delay, p.peak_dispersion)
        - p.undershoot_ratio * gamma_bump(t, p.undershoot_delay, p.undershoot_dispersion)
}

/// Kernel sampled at `0, dt, 2dt, ..` up to `duration`, scaled so its
/// positive peak is 1.
pub fn canonical_hrf(p: &HrfParams) -> Result<Vec<f64>> {
    p.validate()?;
    let mut h: Vec<f64> = (0..p.samples()).map(|j| hrf_value(p, j as f64 * p.dt)).collect();
    let peak = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::Config("hrf has no positive lobe".into()));
    }
    h.iter_mut().for_each(|v| *v /= peak);
    Ok(h)
}

/// Averages the fine-grid kernel within each `[k TR, (k+1) TR)` bin.
pub fn hrf_at_tr(p: &HrfParams, tr: f64) -> Result<Vec<f64>> {
    if !(tr > 0.0) {
        return Err(Error::Config(format!("TR must be > 0, got {tr}")));
    }
    if tr > p.duration {
        return Err(Error::Config(format!(
            "TR {tr} s exceeds HRF duration {} s",
            p.duration
        )));
    }
    if p.dt > tr {
        return Err(Error::Config(format!(
            "hrf.dt {} s exceeds TR {tr} s",
            p.dt
        )));
    }
    let fine = canonical_hrf(p)?;
    let bin_of = |j: usize| ((j as f64 * p.dt) / tr + 1e-9).floor() as usize;
    let bins = bin_of(fine.len() - 1) + 1;
    let mut sum = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for (j, v) in fine.iter().enumerate() {
        let b = bin_of(j);
        sum[b] += v;
        count[b] += 1;
    }
    Ok(sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect())
}

/// `<stem>.<ext>`, keeping any dots already in the stem.
pub fn with_suffix(stem: &Path, ext: &str) -> std::path::PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    s.into()
}

/// A `T x D` feature time series on the volume grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    pub tr: f64,
    volumes: usize,
    dim: usize,
    /// Row-major `[T, D]`.
    values: Vec<f64>,
    pub convolved: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SeriesSidecar {
    tr: f64,
    convolved: bool,
}

impl FeatureSeries {
    pub fn new(tr: f64, volumes: usize, dim: usize, values: Vec<f64>, convolved: bool) -> Result<Self> {
        if !(tr > 0.0) {
            return Err(Error::Validation(format!("TR must be > 0, got {tr}")));
        }
        if volumes < 2 {
            return Err(Error::Validation(format!(
                "feature series needs at least 2 volumes, got {volumes}"
            )));
        }
        if values.len() != volumes * dim {
            return Err(Error::Validation(format!(
                "{} values for a {volumes}x{dim} series",
                values.len()
            )));
        }
        check_finite(&values)?;
        Ok(Self {
            tr,
            volumes,
            dim,
            values,
            convolved,
        })
    }

    pub fn zeros(tr: f64, volumes: usize, dim: usize) -> Result<Self> {
        Self::new(tr, volumes, dim, vec![0.0; volumes * dim], false)
    }

    pub fn num_volumes(&self) -> usize {
        self.volumes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn get(&self, t: usize, d: usize) -> f64 {
        self.values[t * self.dim + d]
    }

    pub fn column(&self, d: usize) -> Vec<f64> {
        (0..self.volumes).map(|t| self.get(t, d)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Writes `<stem>.nft` (dims `[T, D]`) and `<stem>.json` (TR, convolved flag).
    pub fn save(&self, stem: &Path) -> Result<()> {
        write_tensor(with_suffix(stem, "nft"), &[self.volumes, self.dim], &self.values)?;
        let side = SeriesSidecar {
            tr: self.tr,
            convolved: self.convolved,
        };
        let json_path = with_suffix(stem, "json");
        std::fs::write(&json_path, serde_json::to_string_pretty(&side)?)
            .map_err(|e| Error::io(&json_path, e))
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let t = read_tensor(with_suffix(stem, "nft"))?;
        if t.dims.len() != 2 {
            return Err(Error::Validation(format!(
                "feature series must be [T, D], got {:?}",
                t.dims
            )));
        }
        let json_path = with_suffix(stem, "json");
        let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let side: SeriesSidecar = serde_json::from_str(&text)?;
        Self::new(side.tr, t.dims[0], t.dims[1], t.values, side.convolved)
    }
}

/// Causal convolution of every feature column with the TR-resampled kernel,
/// truncated to the original number of volumes.
pub fn convolve_hrf(series: &FeatureSeries, p: &HrfParams) -> Result<FeatureSeries> {
    if series.convolved {
        return Err(Error::Validation("series is already convolved".into()));
    }
    let kernel = hrf_at_tr(p, series.tr)?;
    let (t_len, d) = (series.volumes, series.dim);
    let mut out = vec![0.0; t_len * d];
    for t in 0..t_len {
        let taps = kernel.len().min(t + 1);
        let row = &mut out[t * d..(t + 1) * d];
        for (k, h) in kernel.iter().enumerate().take(taps) {
            let src = series.row(t - k);
            for (o, s) in row.iter_mut().zip(src) {
                *o += h * s;
            }
        }
    }
    FeatureSeries::new(series.tr, t_len, d, out, true)
}

/// How discrete stimulus onsets become a volume-by-volume design.
pub trait StimulusDesign: Named + Send + Sync {
    fn design(&self, onsets: &[f64], z: &[Vec<f64>], tr: f64, volumes: usize) -> Result<FeatureSeries>;
}

fn validate_events(onsets: &[f64], z: &[Vec<f64>], tr: f64, volumes: usize) -> Result<usize> {
    if onsets.is_empty() {
        return Err(Error::Validation("no stimulus onsets".into()));
    }
    if onsets.len() != z.len() {
        return Err(Error::Validation(format!(
            "{} onsets but {} z vectors",
            onsets.len(),
            z.len()
        )));
    }
    if !(tr > 0.0) {
        return Err(Error::Validation(format!("TR must be > 0, got {tr}")));
    }
    let end = volumes as f64 * tr;
    let outside: Vec<String> = onsets
        .iter()
        .enumerate()
        .filter(|(_, &o)| !(o >= 0.0 && o < end))
        .map(|(i, o)| format!("#{i}={o}"))
        .collect();
    if !outside.is_empty() {
        return Err(Error::Validation(format!(
            "onsets outside scan [0, {end}) s: {}",
            outside.join(", ")
        )));
    }
    if let Some(i) = onsets.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::Validation(format!(
            "onsets must be nondecreasing (onset #{} < #{i})",
            i + 1
        )));
    }
    let dim = z[0].len();
    if z.iter().any(|v| v.len() != dim) {
        return Err(Error::Validation("z vectors differ in length".into()));
    }
    Ok(dim)
}

/// Volume `t` holds the z of the latest onset at or before `t * TR`;
/// volumes before the first onset are zero.
#[derive(Debug, Default)]
pub struct SampleAndHold;

impl Named for SampleAndHold {
    fn name(&self) -> &'static str {
        "sample-and-hold"
    }
}

impl StimulusDesign for SampleAndHold {
    fn design(&self, onsets: &[f64], z: &[Vec<f64>], tr: f64, volumes: usize) -> Result<FeatureSeries> {
        let dim = validate_events(onsets, z, tr, volumes)?;
        let mut values = vec![0.0; volumes * dim];
        let mut next = 0;
        let mut current: Option<usize> = None;
        for t in 0..volumes {
            let time = t as f64 * tr;
            while next < onsets.len() && onsets[next] <= time + 1e-9 * tr {
                current = Some(next);
                next += 1;
            }
            if let Some(i) = current {
                values[t * dim..(t + 1) * dim].copy_from_slice(&z[i]);
            }
        }
        FeatureSeries::new(tr, volumes, dim, values, false)
    }
}

/// Each z is added to the single volume containing its onset.
#[derive(Debug, Default)]
pub struct Impulse;

impl Named for Impulse {
    fn name(&self) -> &'static str {
        "impulse"
    }
}

impl StimulusDesign for Impulse {
    fn design(&self, onsets: &[f64], z: &[Vec<f64>], tr: f64, volumes: usize) -> Result<FeatureSeries> {
        let dim = validate_events(onsets, z, tr, volumes)?;
        let mut values = vec![0.0; volumes * dim];
        for (o, v) in onsets.iter().zip(z) {
            let t = ((o / tr) + 1e-9).floor() as usize;
            let t = t.min(volumes - 1);
            for (dst, s) in values[t * dim..(t + 1) * dim].iter_mut().zip(v) {
                *dst += s;
            }
        }
        FeatureSeries::new(tr, volumes, dim, values, false)
    }
}

pub fn design_registry() -> Registry<dyn StimulusDesign> {
    Registry::<dyn StimulusDesign>::new("stimulus design")
        .with(Arc::new(SampleAndHold))
        .with(Arc::new(Impulse))
}

/// Sample-and-hold design of `z_vectors` onto `volumes` scans.
pub fn align_to_volumes(
    onsets: &[f64],
    z_vectors: &[Vec<f64>],
    tr: f64,
    volumes: usize,
) -> Result<FeatureSeries> {
    SampleAndHold.design(onsets, z_vectors, tr, volumes)
}
