use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{retriangulate, GlobalReconstruction};
use crate::geom::{CameraIntrinsics, Pose};
use crate::scene::Scene;
use crate::tracks::TrackSet;
use crate::weak_area::RoundCounts;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Registered images (N_c) out of `total` (N).
    pub registered: usize,
    pub total: usize,
    /// Mean observations per landmark (L).
    pub track_length: f64,
    /// Mean reprojection error norm (px).
    pub reprojection_error: f64,
    pub landmarks: usize,
    /// ATE RMSE (m) of registered images against the navigation reference.
    pub ate_navigation: f64,
    /// ATE RMSE (m) against ground truth, when known.
    pub ate_truth: Option<f64>,
    /// Wall-clock per stage (s).
    pub stage_seconds: BTreeMap<String, f64>,
    pub weak_history: Vec<RoundCounts>,
    pub direct_triangulation: Vec<DtReport>,
    /// Hierarchical over single-cluster wall-clock, when measured.
    pub efficiency_ratio: Option<f64>,
}

/// Position RMSE over the images present in `estimate`, identity
/// alignment (both trajectories are metric in the same frame).
pub fn ate_rmse(estimate: &BTreeMap<u32, Pose>, reference: &[Pose]) -> f64 {
    if estimate.is_empty() {
        return 0.0;
    }
    let s: f64 = estimate
        .iter()
        .map(|(i, p)| p.center_distance(&reference[*i as usize]).powi(2))
        .sum();
    (s / estimate.len() as f64).sqrt()
}

/// Quantities that follow from the reconstruction itself; timings and
/// histories are filled in by the caller.
pub fn compute_metrics(recon: &GlobalReconstruction, navigation: &[Pose], truth: Option<&[Pose]>) -> MetricsReport {
    scene_metrics(&recon.scene, recon.status.len(), navigation, truth)
}

pub(crate) fn scene_metrics(scene: &Scene, total: usize, navigation: &[Pose], truth: Option<&[Pose]>) -> MetricsReport {
    MetricsReport {
        registered: scene.poses.len(),
        total,
        track_length: scene.mean_track_length(),
        reprojection_error: scene.mean_reprojection_error(),
        landmarks: scene.landmarks.len(),
        ate_navigation: ate_rmse(&scene.poses, navigation),
        ate_truth: truth.map(|t| ate_rmse(&scene.poses, t)),
        ..MetricsReport::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtMode {
    /// Navigation priors, all verified tracks.
    Priors,
    /// Pose-graph poses, all verified tracks.
    Pgo,
    /// Pose-graph poses, tracks from inlier matches only.
    PgoInlier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtReport {
    pub mode: DtMode,
    pub reprojection_error: f64,
    pub track_length: f64,
    pub landmarks: usize,
    /// Tracks that could not be triangulated (behind a camera or
    /// parallel rays).
    pub failed: usize,
}

/// Triangulates every track against fixed poses, without any bundle
/// adjustment and without a reprojection gate.
pub fn direct_triangulation(tracks: &TrackSet, poses: &[Pose], camera: &CameraIntrinsics, mode: DtMode) -> DtReport {
    let poses: BTreeMap<u32, Pose> = poses.iter().enumerate().map(|(i, p)| (i as u32, *p)).collect();
    let (landmarks, drops) = retriangulate(tracks, &poses, camera, 0.0, f64::INFINITY);
    let mut scene = Scene::new(*camera, crate::geom::RigExtrinsics::identity());
    scene.poses = poses;
    scene.landmarks = landmarks;
    DtReport {
        mode,
        reprojection_error: scene.mean_reprojection_error(),
        track_length: scene.mean_track_length(),
        landmarks: scene.landmarks.len(),
        failed: drops.len(),
    }
}

/// The ablation: `Priors` uses the camera-frame navigation priors and
/// `all_tracks`; `Pgo` the pose-graph poses and `all_tracks`; `PgoInlier`
/// the pose-graph poses and `inlier_tracks`.
pub fn direct_triangulation_baseline(
    mode: DtMode,
    all_tracks: &TrackSet,
    inlier_tracks: &TrackSet,
    priors: &[Pose],
    pgo: &[Pose],
    camera: &CameraIntrinsics,
) -> DtReport {
    match mode {
        DtMode::Priors => direct_triangulation(all_tracks, priors, camera, mode),
        DtMode::Pgo => direct_triangulation(all_tracks, pgo, camera, mode),
        DtMode::PgoInlier => direct_triangulation(inlier_tracks, pgo, camera, mode),
    }
}
