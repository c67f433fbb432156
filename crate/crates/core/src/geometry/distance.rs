use std::sync::Arc;

use serde::Serialize;

use crate::depth_dynamics::{dot, norm};
use crate::error::{Error, Result};
use crate::registry::{Named, Registry};

/// Symmetric, zero-diagonal pairwise distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
    metric: &'static str,
}

impl DistanceMatrix {
    /// Validates symmetry, zero diagonal and nonnegativity.
    pub fn from_values(n: usize, values: Vec<f64>, metric: &'static str) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Validation(format!(
                "{} entries for a {n}x{n} distance matrix",
                values.len()
            )));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::Validation(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let (a, b) = (values[i * n + j], values[j * n + i]);
                if !(a >= 0.0) || (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                    return Err(Error::Validation(format!(
                        "entries ({i},{j}) = {a} and ({j},{i}) = {b} break symmetry or nonnegativity"
                    )));
                }
            }
        }
        Ok(Self { n, values, metric })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn metric(&self) -> &'static str {
        self.metric
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            n: self.n,
            values: self.values.iter().map(|v| v * alpha).collect(),
            metric: self.metric,
        }
    }

    /// Rows and columns reordered so that entry `(i, j)` is `(order[i], order[j])`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let n = order.len();
        let values = (0..n * n)
            .map(|k| self.get(order[k / n], order[k % n]))
            .collect();
        Self {
            n,
            values,
            metric: self.metric,
        }
    }
}

pub trait DistanceMetric: Named + Send + Sync {
    fn distance(&self, a: &[f64], b: &[f64]) -> f64;

    /// Rejects inputs the metric is undefined on; `ids` name the offenders.
    fn check(&self, _ids: &[String], _vectors: &[Vec<f64>]) -> Result<()> {
        Ok(())
    }
}

/// `1 - cos(angle)`, in `[0, 2]`.
#[derive(Debug, Default)]
pub struct Cosine;

impl Named for Cosine {
    fn name(&self) -> &'static str {
        "cosine"
    }
}

impl DistanceMetric for Cosine {
    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        if a == b {
            return 0.0;
        }
        let c = dot(a, b) / (norm(a) * norm(b));
        (1.0 - c).clamp(0.0, 2.0)
    }

    fn check(&self, ids: &[String], vectors: &[Vec<f64>]) -> Result<()> {
        match vectors.iter().position(|v| !(norm(v) > 0.0)) {
            Some(i) => Err(Error::Validation(format!(
                "cosine distance undefined for zero vector of {:?}",
                ids[i]
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Default)]
pub struct Euclidean;

impl Named for Euclidean {
    fn name(&self) -> &'static str {
        "euclidean"
    }
}

impl DistanceMetric for Euclidean {
    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }
}

pub fn metric_registry() -> Registry<dyn DistanceMetric> {
    Registry::<dyn DistanceMetric>::new("distance metric")
        .with(Arc::new(Cosine))
        .with(Arc::new(Euclidean))
}

pub fn distance_matrix(ids: &[String], vectors: &[Vec<f64>], metric: &dyn DistanceMetric) -> Result<DistanceMatrix> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::Validation(format!("need at least 2 vectors, got {n}")));
    }
    if ids.len() != n {
        return Err(Error::Validation("one id per vector required".into()));
    }
    let dim = vectors[0].len();
    if let Some(i) = vectors.iter().position(|v| v.len() != dim) {
        return Err(Error::Validation(format!(
            "vector of {:?} has length {}, expected {dim}",
            ids[i],
            vectors[i].len()
        )));
    }
    metric.check(ids, vectors)?;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let d = metric.distance(&vectors[i], &vectors[j]);
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix {
        n,
        values,
        metric: metric.name(),
    })
}

pub fn cosine_distance_matrix(vectors: &[Vec<f64>]) -> Result<DistanceMatrix> {
    let ids: Vec<String> = (0..vectors.len()).map(|i| format!("#{i}")).collect();
    distance_matrix(&ids, vectors, &Cosine)
}

/// Mean within-group and between-group distances over unordered pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceContrast {
    pub metric: &'static str,
    pub intra_mean: f64,
    pub inter_mean: f64,
    pub intra_pairs: usize,
    pub inter_pairs: usize,
}

pub fn distance_contrast(d: &DistanceMatrix, labels: &[usize]) -> Result<DistanceContrast> {
    if labels.len() != d.len() {
        return Err(Error::Validation("one label per distance-matrix row".into()));
    }
    let (mut intra, mut inter) = (0.0, 0.0);
    let (mut ni, mut nb) = (0usize, 0usize);
    for i in 0..d.len() {
        for j in 0..i {
            if labels[i] == labels[j] {
                intra += d.get(i, j);
                ni += 1;
            } else {
                inter += d.get(i, j);
                nb += 1;
            }
        }
    }
    if ni == 0 || nb == 0 {
        return Err(Error::Validation(
            "distance contrast needs both within- and between-group pairs".into(),
        ));
    }
    Ok(DistanceContrast {
        metric: d.metric,
        intra_mean: intra / ni as f64,
        inter_mean: inter / nb as f64,
        intra_pairs: ni,
        inter_pairs: nb,
    })
}
