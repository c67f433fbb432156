//! Signal-to-noise consistency of alignment scores within a modality.

use std::path::Path;

use serde::Serialize;

use crate::encoding::fmt_f64;
use crate::error::{Error, Result};
use crate::manifest::Modality;

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Alignment scores of every model of one modality, `M x R`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityGroup {
    pub modality: Modality,
    pub model_ids: Vec<String>,
    /// One alignment vector per model.
    pub scores: Vec<Vec<f64>>,
}

impl ModalityGroup {
    pub fn new(modality: Modality, model_ids: Vec<String>, scores: Vec<Vec<f64>>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Validation(format!("modality {modality}: no models")));
        }
        if model_ids.len() != scores.len() {
            return Err(Error::Validation(format!(
                "modality {modality}: {} ids for {} score vectors",
                model_ids.len(),
                scores.len()
            )));
        }
        let r = scores[0].len();
        if scores.iter().any(|s| s.len() != r) {
            return Err(Error::Validation(format!(
                "modality {modality}: alignment vectors differ in length"
            )));
        }
        if let Some((m, v)) = scores
            .iter()
            .enumerate()
            .flat_map(|(m, s)| s.iter().map(move |v| (m, *v)))
            .find(|(_, v)| !(0.0..=1.0).contains(v))
        {
            return Err(Error::Validation(format!(
                "modality {modality}: model {:?} has score {v} outside [0, 1]",
                model_ids[m]
            )));
        }
        Ok(Self {
            modality,
            model_ids,
            scores,
        })
    }

    pub fn num_models(&self) -> usize {
        self.scores.len()
    }

    pub fn num_rois(&self) -> usize {
        self.scores[0].len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StdConvention {
    /// Divisor `M`.
    #[default]
    Population,
    /// Divisor `M - 1`; falls back to `M` for a single model.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnciMap {
    pub modality: Modality,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub epsilon: f64,
    pub snci: Vec<f64>,
    /// Only one model in the group: sigma is identically zero.
    pub single_model: bool,
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn snci_map(group: &ModalityGroup, epsilon: f64) -> Result<SnciMap> {
    snci_map_with(group, epsilon, StdConvention::Population)
}

pub fn snci_map_with(group: &ModalityGroup, epsilon: f64, convention: StdConvention) -> Result<SnciMap> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Config(format!("epsilon must be > 0, got {epsilon}")));
    }
    let m = group.num_models();
    let single_model = m == 1;
    if single_model {
        log::warn!(
            "modality {}: a single model; SNCI reduces to sigmoid(mu / epsilon)",
            group.modality
        );
    }
    let divisor = match convention {
        StdConvention::Sample if m > 1 => (m - 1) as f64,
        _ => m as f64,
    };
    let r = group.num_rois();
    let mut mu = vec![0.0; r];
    let mut sigma = vec![0.0; r];
    for roi in 0..r {
        let mean = group.scores.iter().map(|s| s[roi]).sum::<f64>() / m as f64;
        let ss = group.scores.iter().map(|s| (s[roi] - mean).powi(2)).sum::<f64>();
        mu[roi] = mean;
        sigma[roi] = (ss / divisor).sqrt();
    }
    let snci = mu
        .iter()
        .zip(&sigma)
        .map(|(m, s)| logistic(m / (s + epsilon)))
        .collect();
    Ok(SnciMap {
        modality: group.modality,
        mu,
        sigma,
        epsilon,
        snci,
        single_model,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZScored {
    pub values: Vec<f64>,
    /// Input had zero spread; all outputs are 0.
    pub constant: bool,
}

/// Standardizes to mean 0 and population standard deviation 1.
pub fn zscore_across_rois(values: &[f64]) -> Result<ZScored> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Validation(format!("z-scoring needs at least 2 ROIs, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let sd = var.sqrt();
    if !(sd > 0.0) || values.iter().all(|&v| v == values[0]) {
        return Ok(ZScored {
            values: vec![0.0; n],
            constant: true,
        });
    }
    Ok(ZScored {
        values: values.iter().map(|v| (v - mean) / sd).collect(),
        constant: false,
    })
}

/// `roi_index,mu,sigma,snci,snci_z`
pub fn write_snci_csv(map: &SnciMap, z: &[f64], path: &Path) -> Result<()> {
    if z.len() != map.snci.len() {
        return Err(Error::Validation("z-scored map length mismatch".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["roi_index", "mu", "sigma", "snci", "snci_z"])?;
    for r in 0..map.snci.len() {
        w.write_record([
            r.to_string(),
            fmt_f64(map.mu[r]),
            fmt_f64(map.sigma[r]),
            fmt_f64(map.snci[r]),
            fmt_f64(z[r]),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(scores: Vec<Vec<f64>>) -> ModalityGroup {
        let ids = (0..scores.len()).map(|i| format!("m{i}")).collect();
        ModalityGroup::new(Modality::Audio, ids, scores).unwrap()
    }

    #[test]
    fn zero_variance_saturates() {
        let g = group(vec![vec![0.5, 0.5]; 4]);
        let m = snci_map(&g, 1e-8).unwrap();
        assert_eq!(m.sigma, [0.0, 0.0]);
        assert!(m.snci.iter().all(|&s| s >= 1.0 - 1e-9));
    }

    #[test]
    fn zero_mean_is_half() {
        let m = snci_map(&group(vec![vec![0.0]; 3]), 1e-8).unwrap();
        assert_eq!(m.snci, [0.5]);
    }

    #[test]
    fn two_model_arithmetic() {
        let m = snci_map(&group(vec![vec![0.2], vec![0.4]]), 1e-8).unwrap();
        assert!((m.mu[0] - 0.3).abs() < 1e-15);
        assert!((m.sigma[0] - 0.1).abs() < 1e-15);
        assert!((m.snci[0] - 0.95257).abs() < 1e-5);
    }

    #[test]
    fn single_model_flagged() {
        let m = snci_map(&group(vec![vec![0.1, 0.0]]), 1e-8).unwrap();
        assert!(m.single_model);
        assert_eq!(m.snci[1], 0.5);
    }

    #[test]
    fn sample_convention() {
        let g = group(vec![vec![0.2], vec![0.4]]);
        let m = snci_map_with(&g, 1e-8, StdConvention::Sample).unwrap();
        assert!((m.sigma[0] - 0.02f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_scores_rejected() {
        let err = ModalityGroup::new(Modality::Vision, vec!["a".into()], vec![vec![1.5]]);
        assert!(err.is_err());
        assert!(snci_map(&group(vec![vec![0.1]]), 0.0).is_err());
    }

    #[test]
    fn zscore_cases() {
        assert_eq!(zscore_across_rois(&[1.0, 3.0]).unwrap().values, [-1.0, 1.0]);
        let c = zscore_across_rois(&[0.7; 3]).unwrap();
        assert!(c.constant);
        assert_eq!(c.values, [0.0; 3]);
        assert!(zscore_across_rois(&[1.0]).is_err());
    }
}
