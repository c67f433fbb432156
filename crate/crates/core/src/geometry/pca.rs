use faer::Mat;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaEmbedding {
    pub mean: Vec<f64>,
    /// `k` orthonormal directions in `R^R`.
    pub components: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
    /// `M x k` coordinates of the centered inputs.
    pub coordinates: Vec<Vec<f64>>,
}

/// Principal components of the rows of `c` (one alignment vector per row).
/// Each component is signed so that its largest-magnitude loading is positive.
pub fn pca_embed(c: &[Vec<f64>], k: usize) -> Result<PcaEmbedding> {
    let m = c.len();
    if m < 2 {
        return Err(Error::Validation(format!("PCA needs at least 2 rows, got {m}")));
    }
    let r = c[0].len();
    if c.iter().any(|row| row.len() != r) {
        return Err(Error::Validation("PCA rows differ in length".into()));
    }
    let max_k = (m - 1).min(r);
    if k < 1 || k > max_k {
        return Err(Error::Validation(format!(
            "component count {k} outside 1..={max_k}"
        )));
    }
    let mean: Vec<f64> = (0..r)
        .map(|j| c.iter().map(|row| row[j]).sum::<f64>() / m as f64)
        .collect();
    let centered = Mat::from_fn(m, r, |i, j| c[i][j] - mean[j]);
    let svd = centered
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("PCA SVD failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let total: f64 = (0..s.nrows()).map(|i| s[i] * s[i]).sum();
    if !(total > 0.0) {
        return Err(Error::Validation("PCA input has zero variance".into()));
    }
    let v = svd.V();
    let mut components = Vec::with_capacity(k);
    for comp in 0..k {
        let mut dir: Vec<f64> = (0..r).map(|j| v[(j, comp)]).collect();
        let max = dir.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let pivot = dir
            .iter()
            .position(|x| x.abs() >= (1.0 - 1e-8) * max)
            .unwrap_or(0);
        if dir[pivot] < 0.0 {
            dir.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(dir);
    }
    let explained_variance_ratio = (0..k).map(|i| s[i] * s[i] / total).collect();
    let coordinates = (0..m)
        .map(|i| {
            components
                .iter()
                .map(|dir| (0..r).map(|j| centered[(i, j)] * dir[j]).sum())
                .collect()
        })
        .collect();
    Ok(PcaEmbedding {
        mean,
        components,
        explained_variance_ratio,
        coordinates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_points() {
        let dir = [0.3, -0.5, 0.8];
        let pts: Vec<Vec<f64>> = [0.0, 1.0, 2.5, -1.0, 4.0]
            .iter()
            .map(|t| dir.iter().map(|d| 1.0 + t * d).collect())
            .collect();
        let p = pca_embed(&pts, 2).unwrap();
        assert!(p.explained_variance_ratio[0] >= 1.0 - 1e-10);
        // sign convention: largest loading (0.8) positive
        assert!(p.components[0][2] > 0.0);
    }

    #[test]
    fn two_points() {
        let p = pca_embed(&[vec![0.0, 0.0], vec![3.0, 4.0]], 1).unwrap();
        assert!((p.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        assert!((p.components[0][0] - 0.6).abs() < 1e-12);
        assert!((p.components[0][1] - 0.8).abs() < 1e-12);
        assert!((p.coordinates[1][0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn component_range() {
        let pts = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]];
        assert!(pca_embed(&pts, 0).is_err());
        assert!(pca_embed(&pts, 3).is_err());
        assert!(pca_embed(&pts, 2).is_ok());
    }
}
