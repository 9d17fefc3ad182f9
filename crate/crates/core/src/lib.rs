//! Clustered proactive caching for small-cell networks.
//!
//! Users are grouped by the shape of their content popularity profiles, each
//! group gets a share of the small base stations, and the resulting hit
//! probability is evaluated in closed form and by simulation.

pub mod allocation;
pub mod clustering;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod hit;
pub mod network;
pub mod selection;

pub use allocation::{optimize_fractions, Allocation, HitObjective, Method};
pub use clustering::{adaptive_cluster, AdaptiveClustering, ClusterModel, ClusteringOptions};
pub use error::{Error, Result, Stage};
pub use experiment::{run_pipeline, ExperimentSpec};
pub use geometry::{sample_ppp, Point, PointSet, Region};
pub use hit::{analytic_hit, analytic_hit_exact, monte_carlo_hit, CachePlacement, HitReport, Scheme};
pub use network::{generate_profiles, NetworkConfig, PlantedScenario, PopularityProfile, SearchRange};
pub use selection::{aic, log_likelihood, LikelihoodForm, ModelScore};
