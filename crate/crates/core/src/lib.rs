//! Exact solvers for two planar fence-enclosure problems.
//!
//! * unit-disk fencing: partition points into clusters minimising
//!   `η · #clusters + Σ perimeter(hull)`;
//! * k-cluster fencing: minimise the perimeter sum over at most `k` clusters.
//!
//! The brute-force [`oracle`] is the ground truth every other module is
//! tested against.

pub mod best_curve;
pub mod cli;
pub mod cluster_union;
pub mod decompose;
pub mod disk_fencing;
pub mod geometry;
pub mod kcluster_dp;
pub mod oracle;
