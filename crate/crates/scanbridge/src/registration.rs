//! Full 6-D scan registration.
//!
//! The chain mirrors the canonical registration pipeline: condition both
//! sweeps, match FPFH descriptors, reject bad correspondences with RANSAC,
//! pre-align by sample consensus, then refine with point-to-point ICP.
//! [`register_scans`] composes the stages; every randomized stage draws from
//! an explicit seed so a registration is a pure function of its inputs.
//!
//! Convention: all estimators return the transform that maps the *first*
//! (source) cloud onto the *second* (target) cloud, so
//! `register_scans(a, T·a)` recovers `T`. To integrate odometry, invert the
//! result: for consecutive scans the inverse is the vehicle displacement
//! expressed in the earlier frame.

use crate::features::{compute_fpfh, estimate_normals, FpfhDescriptor, NeighborIndex};
use crate::geometry::{
    estimate_rigid_transform_vectors, GeometryError, PointCloud, PosedTransform, RigidTransform,
};
use crate::preprocess::{
    anomaly_gate, crop_range, remove_statistical_outliers, voxel_downsample, GateDecision,
    PreprocessConfig, PreprocessError,
};
use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("no usable descriptors on one side of the match")]
    NoUsableDescriptors,
    #[error("need at least 3 correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("no consensus: best inlier set below 3")]
    NoConsensus,
    #[error("no point pairing within max correspondence distance")]
    NoOverlap,
    #[error("scan below minimum point count: {count} < {min}")]
    BelowMinPoints { count: usize, min: usize },
    #[error("anomalous scan: counts {previous} -> {current}")]
    AnomalousScan { previous: usize, current: usize },
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A tentative feature match between two descriptor sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source_index: usize,
    pub target_index: usize,
    pub feature_distance: f64,
}

/// Feature-stage knobs used by [`register_scans`].
#[derive(Debug, Clone)]
pub struct FeatureParams {
    /// Neighborhood size for normal estimation.
    pub normal_k: usize,
    /// FPFH neighborhood radius, meters (about 3x the voxel leaf).
    pub fpfh_radius: f64,
    /// Keep only mutually-nearest feature matches.
    pub mutual_matching: bool,
    /// Candidate pool size per sampled point in the initial alignment.
    pub sac_candidates: usize,
    /// Number of source points scored per alignment hypothesis.
    pub sac_score_points: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            normal_k: 16,
            fpfh_radius: 1.0,
            mutual_matching: true,
            sac_candidates: 5,
            sac_score_points: 256,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegistrationConfig {
    /// Run feature extraction + sample-consensus pre-alignment. Scans taken
    /// a tenth of a second apart are nearly pre-aligned already, so this can
    /// be switched off for speed.
    pub use_initial_alignment: bool,
    /// Run the ICP fine-alignment stage. Disabling it returns the
    /// pre-aligned estimate, which in good conditions is already close.
    pub refine_with_icp: bool,
    pub icp_max_iterations: usize,
    pub icp_translation_eps: f64,
    pub icp_rotation_eps: f64,
    pub icp_max_corr_distance: f64,
    pub ransac_iterations: usize,
    pub ransac_inlier_threshold: f64,
    /// Project initial-guess hypotheses onto (yaw, x, y): a surface vehicle
    /// has near-zero z-translation and bounded roll/pitch. Constrains only
    /// the guess, never the ICP solution space.
    pub constrain_planar_guess: bool,
    /// Master seed for the randomized stages.
    pub seed: u64,
    pub features: FeatureParams,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            use_initial_alignment: true,
            refine_with_icp: true,
            icp_max_iterations: 50,
            icp_translation_eps: 1e-4,
            icp_rotation_eps: 1e-4,
            icp_max_corr_distance: 2.0,
            ransac_iterations: 512,
            ransac_inlier_threshold: 0.25,
            constrain_planar_guess: true,
            seed: 0,
            features: FeatureParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegistrationStage {
    Prealigned,
    Refined,
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    /// Transform mapping scan_a coordinates onto scan_b coordinates.
    pub motion: PosedTransform,
    pub stage_reached: RegistrationStage,
    /// Preprocessed point counts actually registered, (a, b).
    pub points_used: (usize, usize),
    /// Fraction of points discarded by the statistical outlier filter.
    pub rejected_fraction: f64,
}

/// Result of one ICP run, with the per-iteration mean squared pairing error
/// so monotonicity can be audited.
#[derive(Debug, Clone)]
pub struct IcpResult {
    pub transform: RigidTransform,
    /// Final mean squared inlier distance, m².
    pub fitness: f64,
    pub iterations: usize,
    pub error_history: Vec<f64>,
    pub inlier_count: usize,
}

// Distinct stream tags so the RANSAC rejector and the aligner never share a
// random sequence even under the same seed.
const STREAM_RANSAC: u64 = 0x5241_4e53;
const STREAM_SAC_IA: u64 = 0x5341_4349;

/// For every usable source descriptor, its nearest usable target descriptor
/// by Euclidean distance in 33-D; with `mutual` set, only pairs that are
/// each other's nearest survive.
pub fn match_features(
    desc_a: &[FpfhDescriptor],
    desc_b: &[FpfhDescriptor],
    mutual: bool,
) -> Result<Vec<Correspondence>, RegistrationError> {
    let usable_a: Vec<usize> = (0..desc_a.len()).filter(|i| desc_a[*i].usable).collect();
    let usable_b: Vec<usize> = (0..desc_b.len()).filter(|i| desc_b[*i].usable).collect();
    if usable_a.is_empty() || usable_b.is_empty() {
        return Err(RegistrationError::NoUsableDescriptors);
    }

    let forward: Vec<(usize, usize, f64)> = usable_a
        .iter()
        .map(|&i| {
            let (j, d) = nearest_descriptor(&desc_a[i], desc_b, &usable_b);
            (i, j, d)
        })
        .collect();

    let mut out = Vec::with_capacity(forward.len());
    if mutual {
        for &(i, j, d) in &forward {
            let (back, _) = nearest_descriptor(&desc_b[j], desc_a, &usable_a);
            if back == i {
                out.push(Correspondence { source_index: i, target_index: j, feature_distance: d });
            }
        }
    } else {
        out.extend(forward.into_iter().map(|(i, j, d)| Correspondence {
            source_index: i,
            target_index: j,
            feature_distance: d,
        }));
    }
    if out.is_empty() {
        // Mutual filtering can in principle eliminate everything.
        return Err(RegistrationError::NoUsableDescriptors);
    }
    Ok(out)
}

/// Linear scan with running-sum early exit; ties go to the lower index.
fn nearest_descriptor(
    query: &FpfhDescriptor,
    pool: &[FpfhDescriptor],
    usable: &[usize],
) -> (usize, f64) {
    let mut best = usize::MAX;
    let mut best_d2 = f64::INFINITY;
    for &j in usable {
        let cand = &pool[j];
        let mut acc = 0.0;
        for (a, b) in query.bins.iter().zip(cand.bins.iter()) {
            let d = a - b;
            acc += d * d;
            if acc >= best_d2 {
                break;
            }
        }
        if acc < best_d2 {
            best_d2 = acc;
            best = j;
        }
    }
    (best, best_d2.sqrt())
}

/// RANSAC over 3-correspondence samples: estimates a rigid transform per
/// sample and returns the members of the largest consensus set.
pub fn reject_correspondences_ransac(
    correspondences: &[Correspondence],
    cloud_a: &PointCloud,
    cloud_b: &PointCloud,
    cfg: &RegistrationConfig,
) -> Result<Vec<Correspondence>, RegistrationError> {
    if correspondences.len() < 3 {
        return Err(RegistrationError::TooFewCorrespondences(correspondences.len()));
    }
    let src: Vec<Vector3<f64>> =
        correspondences.iter().map(|c| cloud_a.points[c.source_index].position()).collect();
    let dst: Vec<Vector3<f64>> =
        correspondences.iter().map(|c| cloud_b.points[c.target_index].position()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ STREAM_RANSAC);
    let threshold2 = cfg.ransac_inlier_threshold * cfg.ransac_inlier_threshold;
    let mut best_count = 0usize;
    let mut best_transform = None;
    for _ in 0..cfg.ransac_iterations {
        let picks = sample(&mut rng, correspondences.len(), 3);
        let s: Vec<Vector3<f64>> = picks.iter().map(|i| src[i]).collect();
        let d: Vec<Vector3<f64>> = picks.iter().map(|i| dst[i]).collect();
        let Ok(t) = estimate_rigid_transform_vectors(&s, &d) else {
            continue;
        };
        let count = src
            .iter()
            .zip(dst.iter())
            .filter(|(a, b)| (t.apply(**a) - **b).norm_squared() <= threshold2)
            .count();
        if count > best_count {
            best_count = count;
            best_transform = Some(t);
        }
    }
    let Some(t) = best_transform else {
        return Err(RegistrationError::NoConsensus);
    };
    if best_count < 3 {
        return Err(RegistrationError::NoConsensus);
    }
    Ok(correspondences
        .iter()
        .zip(src.iter().zip(dst.iter()))
        .filter(|(_, (a, b))| (t.apply(**a) - **b).norm_squared() <= threshold2)
        .map(|(c, _)| *c)
        .collect())
}

/// Collapses a transform onto (yaw, x, y): zero z-translation, roll, pitch.
fn planarize(t: &RigidTransform) -> RigidTransform {
    let (yaw, _, _) = t.euler_zyx();
    RigidTransform::from_yaw(yaw, Vector3::new(t.translation.x, t.translation.y, 0.0))
}

/// Sample-consensus initial alignment over feature candidates.
///
/// Repeatedly samples three source points, pairs each with a random member
/// of its nearest-feature candidate pool, estimates a rigid transform and
/// scores it by a truncated mean point-to-nearest-neighbor residual over a
/// fixed subsample of source points; the lowest-scoring hypothesis wins.
pub fn initial_align(
    cloud_a: &PointCloud,
    cloud_b: &PointCloud,
    desc_a: &[FpfhDescriptor],
    desc_b: &[FpfhDescriptor],
    cfg: &RegistrationConfig,
) -> Result<RigidTransform, RegistrationError> {
    let usable_a: Vec<usize> = (0..desc_a.len()).filter(|i| desc_a[*i].usable).collect();
    let usable_b: Vec<usize> = (0..desc_b.len()).filter(|i| desc_b[*i].usable).collect();
    if usable_a.len() < 3 || usable_b.is_empty() {
        return Err(RegistrationError::NoUsableDescriptors);
    }

    // Candidate pools: the `sac_candidates` nearest target descriptors per
    // usable source point.
    let pool_size = cfg.features.sac_candidates.max(1);
    let candidates: Vec<Vec<usize>> = usable_a
        .iter()
        .map(|&i| k_nearest_descriptors(&desc_a[i], desc_b, &usable_b, pool_size))
        .collect();

    let target_index = NeighborIndex::build(cloud_b).expect("non-empty target");
    // Deterministic scoring subsample: evenly strided source points.
    let score_count = cfg.features.sac_score_points.max(8).min(cloud_a.len());
    let stride = (cloud_a.len() / score_count).max(1);
    let score_points: Vec<Vector3<f64>> =
        cloud_a.points.iter().step_by(stride).take(score_count).map(|p| p.position()).collect();

    let truncation = cfg.icp_max_corr_distance;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ STREAM_SAC_IA);
    let mut best_score = f64::INFINITY;
    let mut best = None;
    for _ in 0..cfg.ransac_iterations {
        let picks = sample(&mut rng, usable_a.len(), 3);
        let mut src = Vec::with_capacity(3);
        let mut dst = Vec::with_capacity(3);
        for local in picks.iter() {
            let a_idx = usable_a[local];
            let pool = &candidates[local];
            let b_idx = pool[rng.random_range(0..pool.len())];
            src.push(cloud_a.points[a_idx].position());
            dst.push(cloud_b.points[b_idx].position());
        }
        let Ok(mut t) = estimate_rigid_transform_vectors(&src, &dst) else {
            continue;
        };
        if cfg.constrain_planar_guess {
            t = planarize(&t);
        }
        let score: f64 = score_points
            .iter()
            .map(|p| {
                let moved = t.apply(*p);
                let d = target_index.nearest(&moved).map(|(_, d)| d).unwrap_or(truncation);
                d.min(truncation)
            })
            .sum::<f64>()
            / score_points.len() as f64;
        if score < best_score {
            best_score = score;
            best = Some(t);
        }
    }
    best.ok_or(RegistrationError::NoConsensus)
}

fn k_nearest_descriptors(
    query: &FpfhDescriptor,
    pool: &[FpfhDescriptor],
    usable: &[usize],
    k: usize,
) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> =
        usable.iter().map(|&j| (query.distance(&pool[j]), j)).collect();
    scored.sort_by(|a, b| a.partial_cmp(b).unwrap());
    scored.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Point-to-point ICP from an initial guess.
///
/// Each iteration pairs every transformed source point with its nearest
/// target point inside `icp_max_corr_distance`, re-estimates the transform
/// over those pairs, and accepts the update only if the mean squared pairing
/// error does not increase — so the recorded history is non-increasing by
/// construction. Stops on convergence of the increment or at the iteration
/// cap.
pub fn icp(
    cloud_a: &PointCloud,
    cloud_b: &PointCloud,
    initial: &RigidTransform,
    cfg: &RegistrationConfig,
) -> Result<IcpResult, RegistrationError> {
    if cloud_a.len() < 3 || cloud_b.len() < 3 {
        return Err(RegistrationError::TooFewCorrespondences(cloud_a.len().min(cloud_b.len())));
    }
    let source: Vec<Vector3<f64>> = cloud_a.positions();
    let target_index = NeighborIndex::build(cloud_b).expect("non-empty target");
    let max_d = cfg.icp_max_corr_distance;

    let pair_up = |t: &RigidTransform| -> Result<(Vec<(Vector3<f64>, Vector3<f64>)>, f64), RegistrationError> {
        let mut pairs = Vec::with_capacity(source.len());
        let mut sum = 0.0;
        for p in &source {
            let moved = t.apply(*p);
            if let Some((j, d)) = target_index.nearest(&moved) {
                if d <= max_d {
                    pairs.push((*p, target_index.position(j)));
                    sum += d * d;
                }
            }
        }
        if pairs.is_empty() {
            return Err(RegistrationError::NoOverlap);
        }
        let mse = sum / pairs.len() as f64;
        Ok((pairs, mse))
    };

    let mut transform = *initial;
    let (mut pairs, mut error) = pair_up(&transform)?;
    let mut history = vec![error];
    let mut iterations = 0;
    for _ in 0..cfg.icp_max_iterations {
        let src: Vec<Vector3<f64>> = pairs.iter().map(|(a, _)| *a).collect();
        let dst: Vec<Vector3<f64>> = pairs.iter().map(|(_, b)| *b).collect();
        let Ok(candidate) = estimate_rigid_transform_vectors(&src, &dst) else {
            break;
        };
        let (new_pairs, new_error) = pair_up(&candidate)?;
        if new_error > error {
            // Re-pairing against the distance cutoff admitted worse matches;
            // keep the previous transform.
            break;
        }
        let delta = candidate.compose(&transform.inverse());
        let translation_step = delta.translation.norm();
        let rotation_step = RigidTransform::identity().rotation_angle_to(&delta);
        transform = candidate;
        pairs = new_pairs;
        error = new_error;
        history.push(error);
        iterations += 1;
        if translation_step < cfg.icp_translation_eps && rotation_step < cfg.icp_rotation_eps {
            break;
        }
    }
    Ok(IcpResult {
        transform,
        fitness: error,
        iterations,
        error_history: history,
        inlier_count: pairs.len(),
    })
}

/// The full pipeline over two raw sweeps. Returns the transform mapping
/// `scan_a` onto `scan_b` plus stage diagnostics.
pub fn register_scans(
    scan_a: &PointCloud,
    scan_b: &PointCloud,
    pre_cfg: &PreprocessConfig,
    reg_cfg: &RegistrationConfig,
) -> Result<RegistrationResult, RegistrationError> {
    if anomaly_gate(scan_a.len(), scan_b.len(), pre_cfg.anomaly_ratio) == GateDecision::Reject {
        return Err(RegistrationError::AnomalousScan {
            previous: scan_a.len(),
            current: scan_b.len(),
        });
    }

    // The operating envelope is judged on range-gated sensor returns,
    // before the density-changing voxel stage.
    let cropped_a = crop_range(scan_a, pre_cfg);
    let cropped_b = crop_range(scan_b, pre_cfg);
    let low = cropped_a.len().min(cropped_b.len());
    if low < pre_cfg.min_points {
        return Err(RegistrationError::BelowMinPoints { count: low, min: pre_cfg.min_points });
    }

    let voxeled_a = voxel_downsample(&cropped_a, pre_cfg.voxel_leaf);
    let voxeled_b = voxel_downsample(&cropped_b, pre_cfg.voxel_leaf);
    let pre_a = remove_statistical_outliers(&voxeled_a, pre_cfg.sor_k, pre_cfg.sor_stddev_mult)?;
    let pre_b = remove_statistical_outliers(&voxeled_b, pre_cfg.sor_k, pre_cfg.sor_stddev_mult)?;
    let removed = (voxeled_a.len() - pre_a.len()) + (voxeled_b.len() - pre_b.len());
    let rejected_fraction = removed as f64 / (voxeled_a.len() + voxeled_b.len()) as f64;

    let initial = if reg_cfg.use_initial_alignment {
        let viewpoint = Vector3::zeros(); // sensor origin in scan frame
        let idx_a = NeighborIndex::build(&pre_a).expect("non-empty");
        let idx_b = NeighborIndex::build(&pre_b).expect("non-empty");
        let k = reg_cfg.features.normal_k;
        let normals_a = estimate_normals(&pre_a, &idx_a, k, viewpoint);
        let normals_b = estimate_normals(&pre_b, &idx_b, k, viewpoint);
        let desc_a = compute_fpfh(&pre_a, &normals_a, &idx_a, reg_cfg.features.fpfh_radius);
        let desc_b = compute_fpfh(&pre_b, &normals_b, &idx_b, reg_cfg.features.fpfh_radius);
        initial_align(&pre_a, &pre_b, &desc_a, &desc_b, reg_cfg)?
    } else {
        // Scans a fraction of a second apart are essentially pre-aligned:
        // the planar identity (zero yaw, zero x-y shift) is the guess.
        RigidTransform::identity()
    };

    if reg_cfg.refine_with_icp {
        let refined = icp(&pre_a, &pre_b, &initial, reg_cfg)?;
        Ok(RegistrationResult {
            motion: PosedTransform::from_transform(
                refined.transform,
                refined.fitness,
                refined.inlier_count,
            ),
            stage_reached: RegistrationStage::Refined,
            points_used: (pre_a.len(), pre_b.len()),
            rejected_fraction,
        })
    } else {
        // Score the pre-alignment once so fitness is still meaningful.
        let target_index = NeighborIndex::build(&pre_b).expect("non-empty");
        let mut sum = 0.0;
        let mut inliers = 0usize;
        for p in &pre_a.points {
            if let Some((_, d)) = target_index.nearest(&initial.apply(p.position())) {
                if d <= reg_cfg.icp_max_corr_distance {
                    sum += d * d;
                    inliers += 1;
                }
            }
        }
        let fitness = if inliers > 0 { sum / inliers as f64 } else { f64::INFINITY };
        Ok(RegistrationResult {
            motion: PosedTransform::from_transform(initial, fitness, inliers),
            stage_reached: RegistrationStage::Prealigned,
            points_used: (pre_a.len(), pre_b.len()),
            rejected_fraction,
        })
    }
}
