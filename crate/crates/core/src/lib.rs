//! Hierarchical person re-identification.
//!
//! Gallery subjects are grouped by part-wise color histograms with k-means; a
//! probe is compared by a part-based Siamese network only against members of
//! its nearest color clusters.

pub mod cluster;
pub mod dataset;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod matcher;
pub mod scalar;
pub mod siamese;
pub mod silhouette;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Working precision of the default pipeline.
pub type Real = f32;

pub type Silhouette = silhouette::NormalizedSilhouette<Real>;
pub type Descriptor = descriptor::ColorDescriptor<Real>;
pub type Features = descriptor::FeatureMatrix<Real>;
pub type Clusters = cluster::ClusterModel<Real>;
pub type Model = siamese::SiameseModel<Real>;

pub type Silhouette64 = silhouette::NormalizedSilhouette<f64>;
pub type Descriptor64 = descriptor::ColorDescriptor<f64>;
pub type Features64 = descriptor::FeatureMatrix<f64>;
pub type Clusters64 = cluster::ClusterModel<f64>;
pub type Model64 = siamese::SiameseModel<f64>;
