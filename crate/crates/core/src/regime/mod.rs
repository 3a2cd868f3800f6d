//! Regime markers: drift and tipping point, two-state HMM, transition
//! hazards, trajectory clustering and threshold-crossing counts.

mod cluster;
mod drift;
mod flips;
mod hazards;
mod hmm;

pub use cluster::{
    cluster_trajectories, cut_tree, silhouette, ward_linkage, ClusterAnalysis, ClusterFit, Merge,
    Silhouette,
};
pub use drift::{fit_drift, DriftConfig, DriftFit};
pub use flips::{multi_flip_stats, FlipStats};
pub use hazards::{count_hazards, from_counts as hazards_from_counts, HazardCounts};
pub use hmm::{fit_hmm2, HmmConfig, HmmFit, TransitionSource};
