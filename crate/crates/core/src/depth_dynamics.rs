//! Depth-wise dynamics of layer embeddings.
//!
//! A trajectory `x_1, ..., x_L` of layer embeddings is treated as a discrete
//! dynamical system. Depth-shifted snapshot matrices are centered with the
//! mean of the first `L - 1` layers, a reduced linear operator is fit in the
//! span of the leading left singular vectors, and the mode whose eigenvalue
//! has modulus closest to one is used to summarize the stimulus:
//!
//! ```text
//! z = (phi^T x_bar / |phi|^2) phi + mu
//! ```
//!
//! where `x_bar` averages all `L` layers and `mu` is the centering mean.
//! Degenerate inputs (fewer than three layers, numerically constant
//! trajectories, eigensolver failure) fall back to `z = x_bar`.

use faer::linalg::solvers::Eigen;
use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_store::{check_finite, Tensor};

/// Singular values below this multiple of `max(1, |X1|_F)` count as zero.
pub const ZERO_FLOOR: f64 = 1e-14;
pub const DEFAULT_SVD_REL_TOL: f64 = 1e-10;
/// Two distances to the unit circle closer than this are treated as tied.
pub const TIE_TOL: f64 = 1e-12;
const REAL_PART_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTrajectory {
    stimulus_id: String,
    layers: usize,
    dim: usize,
    /// Row-major `[L, D]`.
    values: Vec<f64>,
}

impl EmbeddingTrajectory {
    pub fn new(stimulus_id: impl Into<String>, layers: Vec<Vec<f64>>) -> Result<Self> {
        let dim = layers.first().map_or(0, Vec::len);
        if let Some((l, bad)) = layers.iter().enumerate().find(|(_, v)| v.len() != dim) {
            return Err(Error::Validation(format!(
                "layer {l} has dimension {}, expected {dim}",
                bad.len()
            )));
        }
        let n = layers.len();
        Self::from_flat(stimulus_id, n, dim, layers.concat())
    }

    pub fn from_flat(
        stimulus_id: impl Into<String>,
        layers: usize,
        dim: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let stimulus_id = stimulus_id.into();
        if layers < 2 {
            return Err(Error::Validation(format!(
                "trajectory {stimulus_id:?} has {layers} layers (need at least 2)"
            )));
        }
        if dim == 0 {
            return Err(Error::Validation(format!(
                "trajectory {stimulus_id:?} has zero embedding dimension"
            )));
        }
        if values.len() != layers * dim {
            return Err(Error::Validation(format!(
                "trajectory {stimulus_id:?}: {} values for {layers}x{dim}",
                values.len()
            )));
        }
        check_finite(&values)?;
        Ok(Self {
            stimulus_id,
            layers,
            dim,
            values,
        })
    }

    /// Builds a trajectory from an NFT1 tensor with dims `[L, D]`.
    pub fn from_tensor(stimulus_id: impl Into<String>, t: &Tensor) -> Result<Self> {
        if t.dims.len() != 2 {
            return Err(Error::Validation(format!(
                "trajectory tensor must be [L, D], got dims {:?}",
                t.dims
            )));
        }
        Self::from_flat(stimulus_id, t.dims[0], t.dims[1], t.values.clone())
    }

    pub fn stimulus_id(&self) -> &str {
        &self.stimulus_id
    }

    pub fn num_layers(&self) -> usize {
        self.layers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Embedding at 0-based layer `l`.
    pub fn layer(&self, l: usize) -> &[f64] {
        &self.values[l * self.dim..(l + 1) * self.dim]
    }

    /// Mean over all `L` layers.
    pub fn depth_average(&self) -> Vec<f64> {
        mean_of_layers(self, 0..self.layers)
    }

    pub fn map_values(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i % self.dim, v))
            .collect();
        Self {
            values,
            ..self.clone()
        }
    }
}

fn mean_of_layers(traj: &EmbeddingTrajectory, range: std::ops::Range<usize>) -> Vec<f64> {
    let n = range.len() as f64;
    let mut acc = vec![0.0; traj.dim];
    for l in range {
        for (a, v) in acc.iter_mut().zip(traj.layer(l)) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Depth-shifted snapshot matrices and their centered forms.
#[derive(Debug, Clone)]
pub struct SnapshotPair {
    /// `D x (L-1)`, columns `x_1 .. x_{L-1}`.
    pub x1: Mat<f64>,
    /// `D x (L-1)`, columns `x_2 .. x_L`.
    pub x2: Mat<f64>,
    /// Mean of the columns of `x1`.
    pub mu: Vec<f64>,
    pub x1c: Mat<f64>,
    pub x2c: Mat<f64>,
}

pub fn build_snapshots(traj: &EmbeddingTrajectory) -> Result<SnapshotPair> {
    let l = traj.num_layers();
    if l < 3 {
        return Err(Error::DegenerateTrajectory { layers: l });
    }
    let d = traj.dim();
    let n = l - 1;
    let x1 = Mat::from_fn(d, n, |i, j| traj.layer(j)[i]);
    let x2 = Mat::from_fn(d, n, |i, j| traj.layer(j + 1)[i]);
    let mu = mean_of_layers(traj, 0..n);
    let x1c = Mat::from_fn(d, n, |i, j| x1[(i, j)] - mu[i]);
    let x2c = Mat::from_fn(d, n, |i, j| x2[(i, j)] - mu[i]);
    Ok(SnapshotPair {
        x1,
        x2,
        mu,
        x1c,
        x2c,
    })
}

/// Reduced-order operator and its eigen-spectrum.
#[derive(Debug, Clone)]
pub struct DmdSpectrum {
    pub rank: usize,
    /// `D x r` leading left singular vectors of the centered `X1`.
    pub u: Mat<f64>,
    pub sigma: Vec<f64>,
    /// `(L-1) x r` leading right singular vectors.
    pub v: Mat<f64>,
    /// `r x r` reduced operator `U^T X2c V Sigma^-1`.
    pub a_tilde: Mat<f64>,
    pub eigenvalues: Vec<Complex64>,
    /// `r x r`, eigenvectors of `a_tilde` as columns.
    pub reduced_eigenvectors: Mat<Complex64>,
    /// `D x r`, unit-norm lifted modes `U w_i` as columns.
    pub modes: Mat<Complex64>,
}

impl DmdSpectrum {
    pub fn mode(&self, i: usize) -> Vec<Complex64> {
        (0..self.modes.nrows()).map(|k| self.modes[(k, i)]).collect()
    }
}

pub fn fit_dmd(snap: &SnapshotPair, svd_rel_tol: f64) -> Result<DmdSpectrum> {
    if !(svd_rel_tol > 0.0 && svd_rel_tol < 1.0) {
        return Err(Error::Config(format!(
            "svd_rel_tol {svd_rel_tol} outside (0, 1)"
        )));
    }
    let (d, n) = (snap.x1c.nrows(), snap.x1c.ncols());
    if snap.x2c.nrows() != d || snap.x2c.ncols() != n {
        return Err(Error::Validation("snapshot shapes differ".into()));
    }
    let floor = ZERO_FLOOR * snap.x1.norm_l2().max(1.0);
    let svd = snap
        .x1c
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let sigma_max = if s.nrows() > 0 { s[0] } else { 0.0 };
    if !(sigma_max >= floor) {
        return Err(Error::ZeroDynamics { floor });
    }
    let cutoff = (svd_rel_tol * sigma_max).max(floor);
    let rank = (0..s.nrows()).take_while(|&i| s[i] >= cutoff).count();
    let sigma: Vec<f64> = (0..rank).map(|i| s[i]).collect();
    let u = svd.U().subcols(0, rank).to_owned();
    let v = svd.V().subcols(0, rank).to_owned();

    // U^T X2c V Sigma^-1
    let projected = u.transpose() * &snap.x2c * &v;
    let a_tilde = Mat::from_fn(rank, rank, |i, j| projected[(i, j)] / sigma[j]);

    let evd = Eigen::new_from_real(a_tilde.as_ref())
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let eigenvalues: Vec<Complex64> = {
        let s = evd.S().column_vector();
        (0..rank).map(|i| s[i]).collect()
    };
    let w = evd.U().to_owned();

    let mut modes = Mat::<Complex64>::zeros(d, rank);
    for k in 0..rank {
        let mut norm2 = 0.0;
        for i in 0..d {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..rank {
                acc += w[(j, k)] * u[(i, j)];
            }
            modes[(i, k)] = acc;
            norm2 += acc.norm_sqr();
        }
        let norm = norm2.sqrt();
        if norm > 0.0 {
            for i in 0..d {
                modes[(i, k)] /= norm;
            }
        }
    }

    Ok(DmdSpectrum {
        rank,
        u,
        sigma,
        v,
        a_tilde,
        eigenvalues,
        reduced_eigenvectors: w,
        modes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StableMode {
    /// Index into the spectrum's eigenvalues.
    pub index: usize,
    pub eigenvalue: Complex64,
    /// Real unit vector in embedding space.
    pub direction: Vec<f64>,
}

/// Orders candidate eigenvalues: nearer the unit circle first, then larger
/// modulus, then nonnegative imaginary part.
fn more_stable(a: Complex64, b: Complex64) -> bool {
    let (ma, mb) = (a.norm(), b.norm());
    let (da, db) = ((ma - 1.0).abs(), (mb - 1.0).abs());
    if (da - db).abs() > TIE_TOL {
        return da < db;
    }
    if (ma - mb).abs() > TIE_TOL {
        return ma > mb;
    }
    a.im >= 0.0 && b.im < 0.0
}

/// Index of the eigenvalue a stable-mode selection picks.
pub fn select_stable_index(eigenvalues: &[Complex64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &lam) in eigenvalues.iter().enumerate() {
        match best {
            Some(b) if !more_stable(lam, eigenvalues[b]) => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Rotates a complex vector so its leading largest-magnitude entry is real
/// and positive. Fixes the arbitrary phase an eigensolver returns.
pub fn canonical_phase(v: &[Complex64]) -> Vec<Complex64> {
    let max = v.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return v.to_vec();
    }
    let pivot = v
        .iter()
        .position(|c| c.norm() >= (1.0 - 1e-8) * max)
        .expect("max attained");
    let rot = v[pivot].conj() / v[pivot].norm();
    v.iter().map(|c| c * rot).collect()
}

/// Real unit direction for a (possibly complex) mode.
pub fn real_direction(mode: &[Complex64]) -> Result<Vec<f64>> {
    let v = canonical_phase(mode);
    let re: Vec<f64> = v.iter().map(|c| c.re).collect();
    let re_norm = norm(&re);
    let (mut dir, n) = if re_norm >= REAL_PART_FLOOR {
        (re, re_norm)
    } else {
        let im: Vec<f64> = v.iter().map(|c| c.im).collect();
        let n = norm(&im);
        (im, n)
    };
    if n < REAL_PART_FLOOR {
        return Err(Error::Numerical("stable mode has vanishing norm".into()));
    }
    dir.iter_mut().for_each(|x| *x /= n);
    Ok(dir)
}

pub fn select_stable_mode(spec: &DmdSpectrum) -> Result<StableMode> {
    let index = select_stable_index(&spec.eigenvalues)
        .ok_or_else(|| Error::Validation("empty spectrum".into()))?;
    Ok(StableMode {
        index,
        eigenvalue: spec.eigenvalues[index],
        direction: real_direction(&spec.mode(index))?,
    })
}

/// Why the stable representation fell back to the depth average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    DegenerateTrajectory,
    ZeroDynamics,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StableRepresentation {
    pub x_bar: Vec<f64>,
    pub mu: Vec<f64>,
    pub stable_mode: Option<Vec<f64>>,
    pub stable_eigenvalue: Option<Complex64>,
    pub z: Vec<f64>,
    pub fallback: Option<Fallback>,
}

/// Projects the depth average onto `mode` and adds back `mu`.
pub fn stable_representation(
    traj: &EmbeddingTrajectory,
    mode: &[f64],
    mu: &[f64],
) -> Result<StableRepresentation> {
    let d = traj.dim();
    if mode.len() != d || mu.len() != d {
        return Err(Error::Validation(format!(
            "dimension mismatch: trajectory D={d}, mode {}, mu {}",
            mode.len(),
            mu.len()
        )));
    }
    let x_bar = traj.depth_average();
    let n2 = dot(mode, mode);
    if !(n2 > 0.0) {
        return Err(Error::Validation("stable mode is zero".into()));
    }
    let coef = dot(mode, &x_bar) / n2;
    let z = mode.iter().zip(mu).map(|(p, m)| coef * p + m).collect();
    Ok(StableRepresentation {
        x_bar,
        mu: mu.to_vec(),
        stable_mode: Some(mode.to_vec()),
        stable_eigenvalue: None,
        z,
        fallback: None,
    })
}

fn fallback_representation(traj: &EmbeddingTrajectory, reason: Fallback) -> StableRepresentation {
    let x_bar = traj.depth_average();
    StableRepresentation {
        mu: x_bar.clone(),
        z: x_bar.clone(),
        x_bar,
        stable_mode: None,
        stable_eigenvalue: None,
        fallback: Some(reason),
    }
}

/// Full result for one stimulus.
#[derive(Debug, Clone)]
pub struct DepthDynamics {
    pub representation: StableRepresentation,
    pub spectrum: Option<DmdSpectrum>,
    pub selected: Option<usize>,
}

impl DepthDynamics {
    pub fn z(&self) -> &[f64] {
        &self.representation.z
    }

    pub fn report(&self, stimulus: &str) -> SpectrumReport {
        SpectrumReport {
            stimulus: stimulus.to_string(),
            rank: self.spectrum.as_ref().map_or(0, |s| s.rank),
            singular_values: self
                .spectrum
                .as_ref()
                .map(|s| s.sigma.clone())
                .unwrap_or_default(),
            eigenvalues: self
                .spectrum
                .as_ref()
                .map(|s| s.eigenvalues.iter().map(|c| [c.re, c.im]).collect())
                .unwrap_or_default(),
            selected: self.selected,
            fallback: self.representation.fallback,
        }
    }
}

/// JSON-serializable summary of one fitted spectrum.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub stimulus: String,
    pub rank: usize,
    pub singular_values: Vec<f64>,
    /// `[re, im]` pairs.
    pub eigenvalues: Vec<[f64; 2]>,
    pub selected: Option<usize>,
    pub fallback: Option<Fallback>,
}

/// Snapshot construction, operator fit, stable-mode selection and
/// projection for one trajectory. Degeneracies fall back to `z = x_bar`.
pub fn trajectory_to_z(traj: &EmbeddingTrajectory, svd_rel_tol: f64) -> Result<DepthDynamics> {
    let snap = match build_snapshots(traj) {
        Ok(s) => s,
        Err(Error::DegenerateTrajectory { .. }) => {
            return Ok(DepthDynamics {
                representation: fallback_representation(traj, Fallback::DegenerateTrajectory),
                spectrum: None,
                selected: None,
            })
        }
        Err(e) => return Err(e),
    };
    let spectrum = match fit_dmd(&snap, svd_rel_tol) {
        Ok(s) => s,
        Err(e @ (Error::ZeroDynamics { .. } | Error::Numerical(_))) => {
            let reason = if matches!(e, Error::ZeroDynamics { .. }) {
                Fallback::ZeroDynamics
            } else {
                Fallback::NumericalFailure
            };
            return Ok(DepthDynamics {
                representation: fallback_representation(traj, reason),
                spectrum: None,
                selected: None,
            });
        }
        Err(e) => return Err(e),
    };
    let stable = match select_stable_mode(&spectrum) {
        Ok(s) => s,
        Err(Error::Numerical(_)) => {
            return Ok(DepthDynamics {
                representation: fallback_representation(traj, Fallback::NumericalFailure),
                spectrum: Some(spectrum),
                selected: None,
            })
        }
        Err(e) => return Err(e),
    };
    let mut representation = stable_representation(traj, &stable.direction, &snap.mu)?;
    representation.stable_eigenvalue = Some(stable.eigenvalue);
    Ok(DepthDynamics {
        representation,
        spectrum: Some(spectrum),
        selected: Some(stable.index),
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rotation_trajectory(layers: usize) -> EmbeddingTrajectory {
        let mut x = vec![1.0, 0.0];
        let mut rows = Vec::new();
        for _ in 0..layers {
            rows.push(x.clone());
            x = vec![-x[1], x[0]];
        }
        EmbeddingTrajectory::new("rot", rows).unwrap()
    }

    #[test]
    fn snapshots_scalar_ramp() {
        let t = EmbeddingTrajectory::new("s", vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]])
            .unwrap();
        let s = build_snapshots(&t).unwrap();
        let row = |m: &Mat<f64>| (0..m.ncols()).map(|j| m[(0, j)]).collect::<Vec<_>>();
        assert_eq!(row(&s.x1), [1.0, 2.0, 3.0]);
        assert_eq!(row(&s.x2), [2.0, 3.0, 4.0]);
        assert_eq!(s.mu, [2.0]);
        assert_eq!(row(&s.x1c), [-1.0, 0.0, 1.0]);
        assert_eq!(row(&s.x2c), [0.0, 1.0, 2.0]);
    }

    #[test]
    fn constant_trajectory_centers_to_zero() {
        let t = EmbeddingTrajectory::new("c", vec![vec![3.0, -1.0]; 5]).unwrap();
        let s = build_snapshots(&t).unwrap();
        assert_eq!(s.mu, [3.0, -1.0]);
        assert_eq!(s.x1c.norm_l2(), 0.0);
        assert_eq!(s.x2c.norm_l2(), 0.0);
        assert!(matches!(fit_dmd(&s, 1e-10), Err(Error::ZeroDynamics { .. })));
        let dd = trajectory_to_z(&t, 1e-10).unwrap();
        assert_eq!(dd.z(), [3.0, -1.0]);
        assert_eq!(dd.representation.fallback, Some(Fallback::ZeroDynamics));
    }

    #[test]
    fn two_layers_fall_back_to_average() {
        let t = EmbeddingTrajectory::new("two", vec![vec![1.0, 4.0], vec![3.0, 0.0]]).unwrap();
        assert!(matches!(
            build_snapshots(&t),
            Err(Error::DegenerateTrajectory { layers: 2 })
        ));
        let dd = trajectory_to_z(&t, 1e-10).unwrap();
        assert_eq!(dd.z(), [2.0, 2.0]);
        assert_eq!(dd.representation.fallback, Some(Fallback::DegenerateTrajectory));
    }

    #[test]
    fn rejects_short_and_nonfinite() {
        assert!(EmbeddingTrajectory::new("x", vec![vec![1.0]]).is_err());
        assert!(EmbeddingTrajectory::new("x", vec![vec![1.0], vec![f64::NAN]]).is_err());
        assert!(EmbeddingTrajectory::new("x", vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn quarter_turn_rotation_spectrum() {
        let t = rotation_trajectory(9);
        let s = build_snapshots(&t).unwrap();
        assert_eq!(s.mu, [0.0, 0.0]);
        let spec = fit_dmd(&s, 1e-10).unwrap();
        assert_eq!(spec.rank, 2);
        let mut ims: Vec<f64> = spec.eigenvalues.iter().map(|l| l.im).collect();
        ims.sort_by(f64::total_cmp);
        for lam in &spec.eigenvalues {
            assert!(lam.re.abs() < 1e-10);
            assert!((lam.norm() - 1.0).abs() < 1e-10);
        }
        assert!((ims[0] + 1.0).abs() < 1e-10 && (ims[1] - 1.0).abs() < 1e-10);
        for k in 0..spec.rank {
            let n: f64 = spec.mode(k).iter().map(|c| c.norm_sqr()).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        // positive-imaginary member of the conjugate pair
        let stable = select_stable_mode(&spec).unwrap();
        assert!(stable.eigenvalue.im > 0.0);
    }

    #[test]
    fn selection_rule() {
        let pick = |ev: &[Complex64]| select_stable_index(ev).unwrap();
        assert_eq!(pick(&[c(0.5, 0.0), c(0.9, 0.0), c(1.3, 0.0)]), 1);
        assert_eq!(pick(&[c(0.7, 0.0), c(0.8, -0.6), c(0.8, 0.6)]), 2);
        assert_eq!(pick(&[c(0.8, 0.6), c(0.8, -0.6), c(0.7, 0.0)]), 0);
        assert_eq!(pick(&[c(0.9, 0.0), c(1.1, 0.0)]), 1);
        assert_eq!(pick(&[c(1.1, 0.0), c(0.9, 0.0)]), 0);
        assert_eq!(select_stable_index(&[]), None);
    }

    #[test]
    fn projection_formula() {
        let t = EmbeddingTrajectory::new("p", vec![vec![3.0, 4.0], vec![3.0, 4.0]]).unwrap();
        let r = stable_representation(&t, &[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(r.z, [4.0, 1.0]);
        let r = stable_representation(&t, &[0.8, -0.6], &[1.0, 1.0]).unwrap();
        // x_bar orthogonal to the mode
        assert!((r.z[0] - 1.0).abs() < 1e-15 && (r.z[1] - 1.0).abs() < 1e-15);
        assert!(stable_representation(&t, &[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn purely_imaginary_mode_uses_imaginary_part() {
        let mode = [c(0.0, 0.6), c(0.0, 0.8)];
        let d = real_direction(&mode).unwrap();
        // canonical phase makes the largest entry real positive
        assert!((d[0] - 0.6).abs() < 1e-12 && (d[1] - 0.8).abs() < 1e-12);
    }
}
