//! Points, clouds and rigid-body transforms.
//!
//! Everything downstream (filtering, registration, odometry integration)
//! is built on the two value types here: [`PointCloud`] for one LiDAR sweep
//! and [`RigidTransform`] for an SE(3) motion. The closed-form least-squares
//! aligner [`estimate_rigid_transform`] is the single solver both the RANSAC
//! rejector and ICP call into.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Tolerance used when validating that a rotation matrix is orthonormal.
pub const ROTATION_TOL: f64 = 1e-9;

/// Drift level above which `compose` re-orthonormalizes its result.
const REORTHO_TRIGGER: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("invalid rigid transform: {0}")]
    InvalidTransform(String),
}

/// One LiDAR return: position in meters plus reflectance in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        debug_assert!(x.is_finite() && y.is_finite() && z.is_finite());
        debug_assert!((0.0..=1.0).contains(&intensity));
        Self { x, y, z, intensity }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_position(p: Vector3<f64>, intensity: f64) -> Self {
        Self::new(p.x, p.y, p.z, intensity)
    }

    /// Distance from the sensor origin.
    pub fn range(&self) -> f64 {
        self.position().norm()
    }
}

/// An ordered set of returns from one sweep, stamped with its capture time.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    /// Capture time in seconds, monotonic within a dataset.
    pub stamp: f64,
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, stamp: f64, frame_id: impl Into<String>) -> Self {
        debug_assert!(stamp >= 0.0);
        Self { points, stamp, frame_id: frame_id.into() }
    }

    pub fn empty(stamp: f64) -> Self {
        Self::new(Vec::new(), stamp, "")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(Point3::position).collect()
    }
}

/// An SE(3) element stored as an explicit rotation matrix plus translation.
///
/// Matrix storage (rather than a quaternion) keeps the SVD-based estimator
/// and ICP updates allocation-free; orthonormality is re-enforced whenever
/// long compose chains drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Validating constructor: rejects non-orthonormal or reflecting matrices.
    pub fn try_new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let drift = orthonormality_drift(&rotation);
        if drift > ROTATION_TOL {
            return Err(GeometryError::InvalidTransform(format!(
                "rotation not orthonormal (drift {drift:.3e})"
            )));
        }
        if (rotation.determinant() - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::InvalidTransform(format!(
                "determinant {} != +1",
                rotation.determinant()
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidTransform("non-finite translation".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub(crate) fn new_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Builds `Rz(yaw) * Ry(pitch) * Rx(roll)` plus a translation.
    pub fn from_components(yaw: f64, pitch: f64, roll: f64, translation: Vector3<f64>) -> Self {
        let rotation = rot_z(yaw) * rot_y(pitch) * rot_x(roll);
        Self { rotation, translation }
    }

    /// Pure yaw about +z; the dominant motion of a surface vehicle.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self { rotation: rot_z(yaw), translation }
    }

    pub fn apply(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Composition `self ∘ other`: applies `other` first, then `self`.
    ///
    /// Re-orthonormalizes the product when numeric drift exceeds 1e-12 so
    /// long odometry chains stay on SO(3).
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let mut rotation = self.rotation * other.rotation;
        if orthonormality_drift(&rotation) > REORTHO_TRIGGER {
            rotation = reorthonormalize(&rotation);
        }
        RigidTransform {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Z-Y-X Euler decomposition as `(yaw, pitch, roll)`.
    ///
    /// At the gimbal singularity (`|pitch| = π/2`) the split between yaw and
    /// roll is unobservable; roll is fixed to zero by convention. A surface
    /// vehicle never pitches anywhere near this.
    pub fn euler_zyx(&self) -> (f64, f64, f64) {
        let r = &self.rotation;
        let sin_pitch = -r[(2, 0)];
        if sin_pitch.abs() >= 1.0 - 1e-12 {
            let pitch = if sin_pitch > 0.0 { std::f64::consts::FRAC_PI_2 } else { -std::f64::consts::FRAC_PI_2 };
            let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]);
            return (yaw, pitch, 0.0);
        }
        let yaw = r[(1, 0)].atan2(r[(0, 0)]);
        let pitch = sin_pitch.clamp(-1.0, 1.0).asin();
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        (yaw, pitch, roll)
    }

    /// Geodesic rotation angle between `self` and `other`, in radians.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        cos.acos()
    }

    pub fn translation_distance_to(&self, other: &RigidTransform) -> f64 {
        (self.translation - other.translation).norm()
    }
}

/// A transform annotated with its Euler split and registration quality.
#[derive(Debug, Clone, Copy)]
pub struct PosedTransform {
    pub transform: RigidTransform,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    /// Mean squared residual of the pairing that produced the transform, m².
    pub fitness: f64,
    pub inlier_count: usize,
}

impl PosedTransform {
    pub fn from_transform(transform: RigidTransform, fitness: f64, inlier_count: usize) -> Self {
        debug_assert!(fitness >= 0.0);
        let (yaw, pitch, roll) = transform.euler_zyx();
        Self { transform, yaw, pitch, roll, fitness, inlier_count }
    }
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn orthonormality_drift(r: &Matrix3<f64>) -> f64 {
    let g = r.transpose() * r - Matrix3::identity();
    g.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Projects an arbitrary matrix back onto SO(3) via SVD.
fn reorthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd of 3x3");
    let v_t = svd.v_t.expect("svd of 3x3");
    let mut out = u * v_t;
    if out.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).scale_mut(-1.0);
        out = u * v_t;
    }
    out
}

/// Maps every point of `cloud` through `t`, preserving intensity and stamp.
pub fn apply_transform(t: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    let points = cloud
        .points
        .iter()
        .map(|p| Point3::from_position(t.apply(p.position()), p.intensity))
        .collect();
    PointCloud { points, stamp: cloud.stamp, frame_id: cloud.frame_id.clone() }
}

/// Convenience wrapper over [`estimate_rigid_transform_vectors`] for point pairs.
pub fn estimate_rigid_transform(pairs: &[(Point3, Point3)]) -> Result<RigidTransform, GeometryError> {
    let src: Vec<Vector3<f64>> = pairs.iter().map(|(a, _)| a.position()).collect();
    let dst: Vec<Vector3<f64>> = pairs.iter().map(|(_, b)| b.position()).collect();
    estimate_rigid_transform_vectors(&src, &dst)
}

/// Closed-form least-squares rigid alignment of `src` onto `dst`.
///
/// Returns the transform minimizing `Σ‖R·src_i + t − dst_i‖²` via the
/// cross-covariance SVD with reflection correction. Fails with
/// [`GeometryError::DegenerateGeometry`] when fewer than three pairs are
/// given or the source points are collinear/coincident (the rotation about
/// the point line would be unobservable).
pub fn estimate_rigid_transform_vectors(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
) -> Result<RigidTransform, GeometryError> {
    if src.len() != dst.len() {
        return Err(GeometryError::DegenerateGeometry(format!(
            "pair count mismatch: {} vs {}",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(GeometryError::DegenerateGeometry(format!(
            "need at least 3 pairs, got {}",
            src.len()
        )));
    }
    let n = src.len() as f64;
    let centroid_src: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / n;
    let centroid_dst: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / n;

    // Cross-covariance H = Σ (a - ā)(b - b̄)ᵀ and source scatter for the
    // degeneracy check.
    let mut h = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    for (a, b) in src.iter().zip(dst.iter()) {
        let ac = a - centroid_src;
        let bc = b - centroid_dst;
        h += ac * bc.transpose();
        scatter += ac * ac.transpose();
    }

    let mut eig = nalgebra::SymmetricEigen::new(scatter).eigenvalues;
    eig.as_mut_slice().sort_by(|a, b| b.partial_cmp(a).unwrap());
    // Rank < 2 means collinear or coincident sources.
    if eig[1] <= eig[0].max(0.0) * 1e-12 {
        return Err(GeometryError::DegenerateGeometry(
            "source points collinear or coincident".into(),
        ));
    }

    let svd = h.svd(true, true);
    let u = svd.u.expect("svd of 3x3");
    let v_t = svd.v_t.expect("svd of 3x3");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, if d < 0.0 { -1.0 } else { 1.0 }));
    let rotation = v * correction * u.transpose();
    let translation = centroid_dst - rotation * centroid_src;
    Ok(RigidTransform { rotation, translation })
}

/// Sum of squared residuals `Σ‖T·src_i − dst_i‖²` for a candidate transform.
pub fn alignment_residual(t: &RigidTransform, src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> f64 {
    src.iter()
        .zip(dst.iter())
        .map(|(a, b)| (t.apply(*a) - b).norm_squared())
        .sum()
}
