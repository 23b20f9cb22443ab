//! Fast Point Feature Histograms.
//!
//! The 33-bin descriptor is three 11-bin histograms over the Darboux-frame
//! angles between a point and its radius neighborhood:
//!
//! * `α = v · n_t`
//! * `φ = u · (p_t − p_s) / d`
//! * `θ = atan2(w · n_t, u · n_t)`
//!
//! with `u = n_s`, `v = u × d̂` (normalized), `w = u × v`. A first pass
//! builds the simplified histogram (SPFH) per point; the final descriptor is
//! `SPFH(p) + (1/k) Σ SPFH(q_i)/d_i`, each 11-bin block normalized to sum
//! to 100. Points with invalid normals contribute nothing — neither their
//! own histogram nor entries in their neighbors' sums.

use super::index::NeighborIndex;
use super::normals::NormalCloud;
use crate::geometry::PointCloud;
use nalgebra::Vector3;

pub const FPFH_BINS: usize = 33;
const BINS_PER_FEATURE: usize = 11;
/// Lower clamp for the distance weight, guarding near-duplicate points.
const MIN_NEIGHBOR_DISTANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct FpfhDescriptor {
    /// α bins 0..11, φ bins 11..22, θ bins 22..33.
    pub bins: [f64; FPFH_BINS],
    /// False when the point had no valid-normal neighbor inside the radius
    /// (or its own normal was invalid); such descriptors are all-zero.
    pub usable: bool,
}

impl FpfhDescriptor {
    fn zero() -> Self {
        Self { bins: [0.0; FPFH_BINS], usable: false }
    }

    pub fn distance(&self, other: &FpfhDescriptor) -> f64 {
        self.bins
            .iter()
            .zip(other.bins.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// The three Darboux angles for a source/target pair, or `None` when the
/// source normal is parallel to the connecting line (frame undefined).
fn pair_features(
    p_s: Vector3<f64>,
    n_s: Vector3<f64>,
    p_t: Vector3<f64>,
    n_t: Vector3<f64>,
) -> Option<(f64, f64, f64)> {
    let d_vec = p_t - p_s;
    let d = d_vec.norm();
    if d < 1e-12 {
        return None;
    }
    let d_hat = d_vec / d;
    let u = n_s;
    let mut v = u.cross(&d_hat);
    let v_norm = v.norm();
    if v_norm < 1e-9 {
        return None;
    }
    v /= v_norm;
    let w = u.cross(&v);
    let alpha = v.dot(&n_t);
    let phi = u.dot(&d_hat);
    let theta = w.dot(&n_t).atan2(u.dot(&n_t));
    Some((alpha, phi, theta))
}

/// Equal-width binning; values exactly on an edge go to the higher bin, the
/// top edge clamps into the last bin.
fn bin_index(value: f64, min: f64, max: f64) -> usize {
    let idx = ((value - min) / (max - min) * BINS_PER_FEATURE as f64).floor() as isize;
    idx.clamp(0, BINS_PER_FEATURE as isize - 1) as usize
}

fn spfh_accumulate(hist: &mut [f64; FPFH_BINS], alpha: f64, phi: f64, theta: f64) {
    hist[bin_index(alpha, -1.0, 1.0)] += 1.0;
    hist[BINS_PER_FEATURE + bin_index(phi, -1.0, 1.0)] += 1.0;
    hist[2 * BINS_PER_FEATURE + bin_index(theta, -std::f64::consts::PI, std::f64::consts::PI)] += 1.0;
}

/// Computes one descriptor per cloud point.
///
/// `normals` must come from the same cloud (same length and order).
pub fn compute_fpfh(
    cloud: &PointCloud,
    normals: &NormalCloud,
    index: &NeighborIndex,
    radius: f64,
) -> Vec<FpfhDescriptor> {
    assert!(radius > 0.0, "fpfh radius must be positive");
    assert_eq!(cloud.len(), normals.len(), "normals/cloud mismatch");
    let n = cloud.len();

    // Valid-normal neighbors inside the radius, per point (self excluded).
    let mut neighborhoods: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for (i, p) in cloud.points.iter().enumerate() {
        if !normals.valid[i] {
            neighborhoods.push(Vec::new());
            continue;
        }
        let hood: Vec<(usize, f64)> = index
            .radius(&p.position(), radius)
            .into_iter()
            .filter(|(j, _)| *j != i && normals.valid[*j])
            .collect();
        neighborhoods.push(hood);
    }

    // Pass 1: SPFH per valid point.
    let mut spfh: Vec<[f64; FPFH_BINS]> = vec![[0.0; FPFH_BINS]; n];
    for i in 0..n {
        let p_s = cloud.points[i].position();
        let n_s = normals.normals[i];
        for (j, _) in &neighborhoods[i] {
            let p_t = cloud.points[*j].position();
            if let Some((a, f, t)) = pair_features(p_s, n_s, p_t, normals.normals[*j]) {
                spfh_accumulate(&mut spfh[i], a, f, t);
            }
        }
    }

    // Pass 2: distance-weighted aggregation and per-block normalization.
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let hood = &neighborhoods[i];
        if hood.is_empty() {
            out.push(FpfhDescriptor::zero());
            continue;
        }
        let k = hood.len() as f64;
        let mut bins = spfh[i];
        for (j, dist) in hood {
            let w = 1.0 / (k * dist.max(MIN_NEIGHBOR_DISTANCE));
            for (acc, v) in bins.iter_mut().zip(spfh[*j].iter()) {
                *acc += w * v;
            }
        }
        let mut usable = true;
        for block in 0..3 {
            let range = block * BINS_PER_FEATURE..(block + 1) * BINS_PER_FEATURE;
            let total: f64 = bins[range.clone()].iter().sum();
            if total > 0.0 {
                for b in &mut bins[range] {
                    *b *= 100.0 / total;
                }
            } else {
                usable = false;
            }
        }
        if usable {
            out.push(FpfhDescriptor { bins, usable: true });
        } else {
            out.push(FpfhDescriptor::zero());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::estimate_normals;
    use crate::geometry::{apply_transform, Point3, PointCloud, RigidTransform};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid_cloud(n: usize, spacing: f64) -> PointCloud {
        let mut points = Vec::new();
        for i in 0..n {
            for j in 0..n {
                points.push(Point3::new(i as f64 * spacing, j as f64 * spacing, 0.0, 0.5));
            }
        }
        PointCloud::new(points, 0.0, "")
    }

    /// A gently curved sheet: enough relief that every bin assignment sits
    /// away from histogram edges under rotation.
    fn wavy_cloud() -> PointCloud {
        let mut points = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                let x = i as f64 * 0.3;
                let y = j as f64 * 0.3;
                let z = (0.7 * x).sin() * 0.4 + (0.9 * y).cos() * 0.3;
                points.push(Point3::new(x, y, z, 0.5));
            }
        }
        PointCloud::new(points, 0.0, "")
    }

    #[test]
    fn coplanar_points_concentrate_in_the_zero_bins() {
        let cloud = grid_cloud(8, 0.4);
        let index = NeighborIndex::build(&cloud).unwrap();
        let normals = estimate_normals(&cloud, &index, 8, nalgebra::Vector3::new(0.0, 0.0, 10.0));
        let descs = compute_fpfh(&cloud, &normals, &index, 1.0);
        // All pair angles are exactly zero on a plane with identical normals,
        // so each feature's mass lands in the bin containing zero.
        let alpha_zero_bin = bin_index(0.0, -1.0, 1.0);
        let phi_zero_bin = bin_index(0.0, -1.0, 1.0);
        let theta_zero_bin = bin_index(0.0, -std::f64::consts::PI, std::f64::consts::PI);
        for d in &descs {
            assert!(d.usable);
            assert!((d.bins[alpha_zero_bin] - 100.0).abs() < 1e-9);
            assert!((d.bins[BINS_PER_FEATURE + phi_zero_bin] - 100.0).abs() < 1e-9);
            assert!((d.bins[2 * BINS_PER_FEATURE + theta_zero_bin] - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn isolated_point_gets_zero_unusable_descriptor() {
        let mut cloud = grid_cloud(5, 0.3);
        cloud.points.push(Point3::new(50.0, 50.0, 0.0, 0.5));
        let index = NeighborIndex::build(&cloud).unwrap();
        let normals = estimate_normals(&cloud, &index, 5, nalgebra::Vector3::new(0.0, 0.0, 10.0));
        let descs = compute_fpfh(&cloud, &normals, &index, 1.0);
        let last = descs.last().unwrap();
        assert!(!last.usable);
        assert!(last.bins.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn blocks_sum_to_one_hundred() {
        let cloud = wavy_cloud();
        let index = NeighborIndex::build(&cloud).unwrap();
        let normals = estimate_normals(&cloud, &index, 12, nalgebra::Vector3::new(0.0, 0.0, 50.0));
        let descs = compute_fpfh(&cloud, &normals, &index, 1.0);
        let mut usable = 0;
        for d in &descs {
            if !d.usable {
                continue;
            }
            usable += 1;
            for block in 0..3 {
                let total: f64 = d.bins[block * 11..(block + 1) * 11].iter().sum();
                assert!((total - 100.0).abs() < 1e-6, "block {block} sums to {total}");
            }
        }
        assert!(usable > 0);
    }

    #[test]
    fn descriptors_are_invariant_under_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cloud = wavy_cloud();
        let t = RigidTransform::from_components(
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.4..0.4),
            rng.random_range(-1.0..1.0),
            nalgebra::Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            ),
        );
        let moved = apply_transform(&t, &cloud);
        let vp = nalgebra::Vector3::new(1.0, 2.0, 40.0);

        let idx_a = NeighborIndex::build(&cloud).unwrap();
        let idx_b = NeighborIndex::build(&moved).unwrap();
        let na = estimate_normals(&cloud, &idx_a, 12, vp);
        let nb = estimate_normals(&moved, &idx_b, 12, t.apply(vp));
        let da = compute_fpfh(&cloud, &na, &idx_a, 1.0);
        let db = compute_fpfh(&moved, &nb, &idx_b, 1.0);
        for (a, b) in da.iter().zip(db.iter()) {
            assert_eq!(a.usable, b.usable);
            for (x, y) in a.bins.iter().zip(b.bins.iter()) {
                assert!((x - y).abs() < 1e-6, "bin differs: {x} vs {y}");
            }
        }
    }

    #[test]
    fn bin_edges_go_to_the_higher_bin() {
        // Edges are at -1 + i*(2/11); the value exactly on the first edge
        // belongs to bin 1, and the global max clamps into the last bin.
        assert_eq!(bin_index(-1.0, -1.0, 1.0), 0);
        assert_eq!(bin_index(-1.0 + 2.0 / 11.0, -1.0, 1.0), 1);
        assert_eq!(bin_index(1.0, -1.0, 1.0), 10);
        assert_eq!(bin_index(0.0, -1.0, 1.0), 5);
    }
}
