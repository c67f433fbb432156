//! Geometry of the alignment space: PCA, pairwise distances, permutation
//! tests, network aggregation and two-way ANOVA.

pub mod anova;
pub mod distance;
pub mod networks;
pub mod pca;
pub mod permutation;

pub use anova::{two_way_anova, AnovaRow, AnovaTable, SsType};
pub use distance::{
    cosine_distance_matrix, distance_contrast, distance_matrix, metric_registry, DistanceContrast,
    DistanceMatrix, DistanceMetric,
};
pub use networks::{aggregate_networks, NetworkAssignment, NetworkMean};
pub use pca::{pca_embed, PcaEmbedding};
pub use permutation::{
    permanova, scheme_registry, silhouette, PermanovaResult, PermutationScheme, SilhouetteResult,
};
