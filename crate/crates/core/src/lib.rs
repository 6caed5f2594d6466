//! Probabilistic sphere embeddings in hyperbolic space, with multi-hop path
//! reasoning over a user/tag/item graph for interpretable recommendation.
//!
//! Each entity (user, item, tag) is embedded as a sphere in the Poincaré
//! ball: a center, an uncertainty radius, and a per-entity negative
//! curvature. Pairwise affinity is a Gaussian kernel over the geodesic
//! distance measured under a radius-weighted blend of the two entities'
//! curvatures. Recommendation scores are max-product path scores found by
//! beam search over user -> tag -> ... -> item chains, so every score comes
//! with a reasoning path that can be rendered as an explanation.
//!
//! Module map:
//!
//! | module      | contents                                               |
//! |-------------|--------------------------------------------------------|
//! | [`geometry`]| Poincaré ball primitives: distance, exp/log maps       |
//! | [`sphere`]  | sphere parameters, the model table, the pair kernel    |
//! | [`graph`]   | user/tag/item adjacency built from interactions        |
//! | [`reasoning`]| beam search, pair scoring, recommendation, explanation |
//! | [`data`]    | TSV ingest, chronological split, eval instances, synth |
//! | [`metrics`] | ranking, calibration, diversity, trace statistics      |
//! | [`train`]   | margin loss, analytic gradients, Riemannian Adam       |
//! | [`config`]  | run configuration, dotted-key files, config hashing    |
//! | [`cli`]     | command implementations behind the `manifoldmind` binary|

pub mod cli;
pub mod config;
pub mod data;
pub mod geometry;
pub mod graph;
pub mod metrics;
pub mod reasoning;
pub mod sphere;
pub mod train;

pub use config::RunConfig;
pub use geometry::Curvature;
pub use sphere::{EntityId, EntityKind, Model, ProbabilisticSphere};
