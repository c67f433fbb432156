use std::path::Path;

use serde::Serialize;

use crate::atlas::{AtlasTable, Network};
use crate::encoding::fmt_f64;
use crate::error::{Error, Result};

/// Network label of each ROI, indexed by ROI.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkAssignment {
    labels: Vec<Network>,
}

impl NetworkAssignment {
    pub fn new(labels: Vec<Network>) -> Self {
        Self { labels }
    }

    pub fn from_atlas(atlas: &AtlasTable) -> Self {
        Self::new(atlas.networks())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[Network] {
        &self.labels
    }

    pub fn counts(&self) -> [usize; 7] {
        let mut c = [0; 7];
        for n in &self.labels {
            c[n.index()] += 1;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkMean {
    pub network: Network,
    pub n_rois: usize,
    pub mean: f64,
}

/// Mean of `values` within each network, in canonical network order.
/// Networks with no ROIs are omitted.
pub fn aggregate_networks(values: &[f64], assignment: &NetworkAssignment) -> Result<Vec<NetworkMean>> {
    if values.len() != assignment.len() {
        return Err(Error::Validation(format!(
            "{} values but {} ROIs carry a network assignment",
            values.len(),
            assignment.len()
        )));
    }
    let mut sum = [0.0; 7];
    let counts = assignment.counts();
    for (v, n) in values.iter().zip(assignment.labels()) {
        sum[n.index()] += v;
    }
    Ok(Network::ALL
        .iter()
        .filter(|n| counts[n.index()] > 0)
        .map(|&network| NetworkMean {
            network,
            n_rois: counts[network.index()],
            mean: sum[network.index()] / counts[network.index()] as f64,
        })
        .collect())
}

/// `modality,network,n_rois,mean`, one block per labelled series.
pub fn write_network_means_csv(rows: &[(String, Vec<NetworkMean>)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["modality", "network", "n_rois", "mean"])?;
    for (label, means) in rows {
        for m in means {
            w.write_record([
                label.clone(),
                m.network.to_string(),
                m.n_rois.to_string(),
                fmt_f64(m.mean),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
