//! Scan-matching odometry for GPS-denied waterway navigation.
//!
//! An autonomous surface vehicle loses GPS under bridges and picks up
//! multipath ghosts next to walls and locks. This crate estimates the
//! vehicle's relative motion from consecutive LiDAR sweeps and splices that
//! odometry into the GPS track so the position estimate stays continuous
//! through the gaps. Two registration paths are provided:
//!
//! * [`registration`] — the full 6-D chain: FPFH feature matching, RANSAC
//!   correspondence rejection, sample-consensus initial alignment and ICP
//!   refinement.
//! * [`planar`] — a reduced 3-DoF matcher that projects sweeps onto the x-y
//!   plane and registers the resulting images with a yaw sweep plus
//!   phase correlation, trading precision for speed.
//!
//! [`navfusion`] parses NMEA fixes, gates them against HDOP and the
//! odometry-predicted position, and switches between GPS and dead reckoning.
//! [`sim`] generates synthetic canal scenes with ground truth so the whole
//! pipeline can be validated end to end, and [`pipeline`] orchestrates runs,
//! metrics and benchmarks over simulated datasets.

pub mod cloud_io;
pub mod config;
pub mod features;
pub mod geometry;
pub mod metrics;
pub mod navfusion;
pub mod pipeline;
pub mod planar;
pub mod plot;
pub mod preprocess;
pub mod registration;
pub mod sim;

pub use geometry::{Point3, PointCloud, PosedTransform, RigidTransform};

/// Derives an independent child seed from a master seed, SplitMix64-style.
///
/// Used everywhere a parallel loop needs its own deterministic RNG stream:
/// per-scan raycasting, per-pair registration, per-fix GPS corruption.
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
