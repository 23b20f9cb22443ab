//! Scan conditioning ahead of registration: range cropping, voxel
//! downsampling, statistical outlier removal, and the anomalous-scan gate
//! that drops sweeps from a momentarily blinded sensor.

use crate::features::NeighborIndex;
use crate::geometry::{Point3, PointCloud};
use nalgebra::Vector3;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("outlier removal needs more than k={k} points, cloud has {size}")]
    TooFewPoints { size: usize, k: usize },
}

/// Knobs for the conditioning stage.
///
/// Defaults target an HDL-32E-class sensor on a canal: self-returns inside
/// 1 m and anything past 80 m are cropped, the grid leaf is 0.3 m, and the
/// scan-size floor of 6,000 points marks the regime below which matching
/// mostly fails.
#[derive(Debug, Clone)]
pub struct PreprocessConfig {
    pub min_range: f64,
    pub max_range: f64,
    pub voxel_leaf: f64,
    pub sor_k: usize,
    pub sor_stddev_mult: f64,
    /// Accept a scan only when `min(prev, cur) / max(prev, cur)` is at least
    /// this ratio; in `(0, 1]`.
    pub anomaly_ratio: f64,
    pub min_points: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            min_range: 1.0,
            max_range: 80.0,
            voxel_leaf: 0.3,
            sor_k: 16,
            sor_stddev_mult: 1.5,
            anomaly_ratio: 0.5,
            min_points: 6000,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.min_range >= 0.0 && self.min_range < self.max_range) {
            return Err(format!("need 0 <= min_range < max_range, got {} / {}", self.min_range, self.max_range));
        }
        if self.voxel_leaf <= 0.0 {
            return Err("voxel_leaf must be positive".into());
        }
        if self.sor_k < 1 {
            return Err("sor_k must be at least 1".into());
        }
        if !(self.anomaly_ratio > 0.0 && self.anomaly_ratio <= 1.0) {
            return Err("anomaly_ratio must be in (0, 1]".into());
        }
        Ok(())
    }
}

/// Keeps points whose range from the sensor origin lies in
/// `[min_range, max_range]`; order preserved.
pub fn crop_range(cloud: &PointCloud, cfg: &PreprocessConfig) -> PointCloud {
    let points = cloud
        .points
        .iter()
        .filter(|p| {
            let r = p.range();
            r >= cfg.min_range && r <= cfg.max_range
        })
        .copied()
        .collect();
    PointCloud { points, stamp: cloud.stamp, frame_id: cloud.frame_id.clone() }
}

/// One output point per occupied cell of the axis-aligned grid with cell
/// size `leaf`: the centroid of the cell's members, intensity averaged.
///
/// Cell keys come from flooring `coordinate / leaf`, so a point exactly on a
/// boundary belongs to the higher-index cell. Output is ordered by cell key,
/// which makes the operation deterministic.
pub fn voxel_downsample(cloud: &PointCloud, leaf: f64) -> PointCloud {
    assert!(leaf > 0.0, "voxel leaf must be positive");
    let mut cells: HashMap<(i64, i64, i64), (Vector3<f64>, f64, usize)> = HashMap::new();
    for p in &cloud.points {
        let key = (
            (p.x / leaf).floor() as i64,
            (p.y / leaf).floor() as i64,
            (p.z / leaf).floor() as i64,
        );
        let entry = cells.entry(key).or_insert((Vector3::zeros(), 0.0, 0));
        entry.0 += p.position();
        entry.1 += p.intensity;
        entry.2 += 1;
    }
    let mut keys: Vec<_> = cells.keys().copied().collect();
    keys.sort_unstable();
    let points = keys
        .into_iter()
        .map(|k| {
            let (sum, isum, count) = cells[&k];
            let n = count as f64;
            Point3::from_position(sum / n, isum / n)
        })
        .collect();
    PointCloud { points, stamp: cloud.stamp, frame_id: cloud.frame_id.clone() }
}

/// Removes points whose mean distance to their `k` nearest neighbors exceeds
/// the global mean by more than `stddev_mult` standard deviations.
pub fn remove_statistical_outliers(
    cloud: &PointCloud,
    k: usize,
    stddev_mult: f64,
) -> Result<PointCloud, PreprocessError> {
    assert!(k >= 1, "sor k must be at least 1");
    if cloud.len() <= k {
        return Err(PreprocessError::TooFewPoints { size: cloud.len(), k });
    }
    let index = NeighborIndex::build(cloud).expect("non-empty cloud");
    let mut mean_dists = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.points.iter().enumerate() {
        // k+1 including the query point itself, which is then skipped.
        let hits = index.knn(&p.position(), k + 1);
        let mut sum = 0.0;
        let mut used = 0usize;
        for (j, d) in hits {
            if j == i {
                continue;
            }
            if used == k {
                break;
            }
            sum += d;
            used += 1;
        }
        mean_dists.push(sum / used as f64);
    }
    let n = mean_dists.len() as f64;
    let mean = mean_dists.iter().sum::<f64>() / n;
    let var = mean_dists.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    let threshold = mean + stddev_mult * var.sqrt();
    let points = cloud
        .points
        .iter()
        .zip(&mean_dists)
        .filter(|(_, d)| **d <= threshold)
        .map(|(p, _)| *p)
        .collect();
    Ok(PointCloud { points, stamp: cloud.stamp, frame_id: cloud.frame_id.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Accept,
    Reject,
}

/// Flags a scan as anomalous when its raw point count collapses (or spikes)
/// relative to the previous scan — the signature of momentary sensor
/// blinding. The first scan (`previous_count == 0`) always passes.
pub fn anomaly_gate(previous_count: usize, current_count: usize, ratio: f64) -> GateDecision {
    assert!(ratio > 0.0 && ratio <= 1.0, "anomaly ratio must be in (0, 1]");
    if previous_count == 0 {
        return GateDecision::Accept;
    }
    let lo = previous_count.min(current_count) as f64;
    let hi = previous_count.max(current_count) as f64;
    if lo / hi < ratio {
        GateDecision::Reject
    } else {
        GateDecision::Accept
    }
}
