//! Surface normal estimation from local covariance.
//!
//! Canal structures — girders, pipes, grating — return clouds where the
//! local neighborhood is often too thin to define a plane. Instead of
//! failing, every point carries a validity flag; invalid normals are kept
//! out of downstream descriptor sums so they cannot poison neighbors.

use super::index::NeighborIndex;
use crate::geometry::PointCloud;
use nalgebra::{Matrix3, Vector3};

/// Eigenvalue level below which a direction counts as rank-deficient (m²).
const RANK_TOL: f64 = 1e-12;

/// Per-point unit normals with a curvature proxy and validity flags.
#[derive(Debug, Clone)]
pub struct NormalCloud {
    pub normals: Vec<Vector3<f64>>,
    /// λ₀ / (λ₀ + λ₁ + λ₂) with λ₀ the smallest eigenvalue; in [0, 1/3].
    pub curvature: Vec<f64>,
    pub valid: Vec<bool>,
}

impl NormalCloud {
    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Estimates one normal per point from the covariance of its `k`-neighborhood
/// (the point itself included), oriented to face `viewpoint`.
///
/// A point is marked invalid instead of erroring when its neighborhood has
/// fewer than three distinct positions or the two smallest covariance
/// eigenvalues are both below tolerance (no stable plane direction).
pub fn estimate_normals(
    cloud: &PointCloud,
    index: &NeighborIndex,
    k: usize,
    viewpoint: Vector3<f64>,
) -> NormalCloud {
    assert!(k >= 3, "normal estimation needs k >= 3");
    let n = cloud.len();
    let mut normals = vec![Vector3::zeros(); n];
    let mut curvature = vec![0.0; n];
    let mut valid = vec![false; n];

    for (i, point) in cloud.points.iter().enumerate() {
        let p = point.position();
        let neighbors = index.knn(&p, k);

        let mut distinct: Vec<Vector3<f64>> = Vec::with_capacity(neighbors.len());
        for (j, _) in &neighbors {
            let q = index.position(*j);
            if !distinct.iter().any(|d| d == &q) {
                distinct.push(q);
            }
        }
        if distinct.len() < 3 {
            continue;
        }

        let count = neighbors.len() as f64;
        let mean: Vector3<f64> =
            neighbors.iter().map(|(j, _)| index.position(*j)).sum::<Vector3<f64>>() / count;
        let mut cov = Matrix3::zeros();
        for (j, _) in &neighbors {
            let d = index.position(*j) - mean;
            cov += d * d.transpose();
        }
        cov /= count;

        let eig = nalgebra::SymmetricEigen::new(cov);
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
        let l0 = eig.eigenvalues[idx[0]].max(0.0);
        let l1 = eig.eigenvalues[idx[1]].max(0.0);
        let l2 = eig.eigenvalues[idx[2]].max(0.0);
        if l0 < RANK_TOL && l1 < RANK_TOL {
            continue;
        }

        let mut normal = eig.eigenvectors.column(idx[0]).into_owned();
        normal.normalize_mut();
        if normal.dot(&(viewpoint - p)) < 0.0 {
            normal = -normal;
        }
        normals[i] = normal;
        curvature[i] = if l0 + l1 + l2 > 0.0 { l0 / (l0 + l1 + l2) } else { 0.0 };
        valid[i] = true;
    }

    NormalCloud { normals, curvature, valid }
}
