//! Geometric and combinatorial tools for evaluating and organizing
//! structure-from-motion reconstructions.
//!
//! - [`geometry`]: poses, camera centers, scenes and synthetic scene generation.
//! - [`horn`]: least-squares similarity alignment of point sets.
//! - [`maa`]: registration accuracy scoring and reconstruction merging.
//! - [`metrics`]: pairwise image distances and distance matrices.
//! - [`ordering`]: view ordering by TSP and match-count chaining.
//! - [`pairs`]: pair proposal from global descriptors and match tables.
//! - [`io`]: readers and writers for every file format the toolkit exchanges.

pub mod geometry;
pub mod horn;
pub mod io;
pub mod maa;
pub mod metrics;
pub mod ordering;
pub mod pairs;

pub use geometry::{camera_center, synthesize_scene, validate_rotation, Layout, Pose, RotationMatrix, Scene};
pub use horn::{fit_similarity, residuals, Correspondences, SimilarityTransform};
pub use maa::{best_registration, maa, merge_reconstructions, MaaReport, RegistrationResult};
pub use metrics::{build_distance_matrix, DistanceMatrix, GrayImage, Metric, MetricConfig};
pub use ordering::{chain_order, tsp_exact, tsp_heuristic, Tour};
pub use pairs::{build_similarity_graph, mst, propose_pairs, DescriptorSet, MatchTable, SimilarityGraph};
