//! Topological and geometric signatures of embedding point clouds.

pub mod cloud;
pub mod clustering;
pub mod dimension;
pub mod diversity;
pub mod error;
pub mod homology;
pub mod io;
pub mod learn;
pub mod linalg;
pub mod retrieval;
pub mod signature;
pub mod synthetic;

pub use cloud::{knn, pairwise_distances, DistanceMatrix, Metric, PointCloud, SampleSpec};
pub use error::{Result, UtsError};
