//! Survey-wide reconstruction: merged tracks, re-triangulation against the
//! pose-graph solution and the final bundle adjustment.

mod metrics;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{triangulate, CameraIntrinsics, Observation, Pose, RigExtrinsics, TriangulationError, TriangulationOptions};
use crate::local_sfm::{bundle_adjust, BaError, BaOptions, BaReport, RegistrationStatus, SubReconstruction};
use crate::matches::FeatureMatch;
use crate::scene::{Scene, SceneLandmark};
use crate::tracks::{build_tracks, Track, TrackSet};
use crate::viewgraph::ViewGraph;

pub use metrics::{ate_rmse, compute_metrics, direct_triangulation, direct_triangulation_baseline, DtMode, DtReport, MetricsReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalConfig {
    pub ba: BaOptions,
    pub min_triangulation_angle_deg: f64,
    /// Gate (px) for observations kept after re-triangulation and between
    /// the final bundle adjustments.
    pub max_reproj_px: f64,
    pub ba_rounds: usize,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        GlobalConfig {
            ba: BaOptions {
                refine_intrinsics: true,
                refine_rig: true,
                ..BaOptions::default()
            },
            min_triangulation_angle_deg: 1.0,
            max_reproj_px: 4.0,
            ba_rounds: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DropReason {
    /// Fewer than two observations on posed images.
    TooFewViews,
    /// Rays too close to parallel.
    DegenerateAngle,
    BehindCamera,
    /// RMS reprojection error (px) above the gate after removing bad
    /// observations.
    Reprojection(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackDrop {
    pub track: usize,
    pub reason: DropReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ImageStatus {
    Registered,
    /// Last failure reported by a sub-reconstruction, `None` when the image
    /// was never part of one.
    Unregistered(Option<RegistrationStatus>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalReconstruction {
    /// Registered images and merged landmarks (landmark id = merged track
    /// index).
    pub scene: Scene,
    pub status: Vec<ImageStatus>,
    pub drops: Vec<TrackDrop>,
    pub ba_reports: Vec<BaReport>,
}

impl GlobalReconstruction {
    pub fn registered_count(&self) -> usize {
        self.scene.poses.len()
    }
}

/// Merges the sub-reconstruction tracks. The nodes are the observations
/// that survived in some sub-reconstruction; they are linked by the
/// landmarks they belong to and by every verified inlier match between two
/// such observations. Conflicts keep the observation that joined first.
pub fn merge_tracks(subrecons: &[SubReconstruction], graph: &ViewGraph) -> TrackSet {
    let mut nodes: BTreeSet<(u32, u32)> = BTreeSet::new();
    let mut links: Vec<(u32, u32, FeatureMatch)> = Vec::new();
    for s in subrecons {
        for l in &s.scene.landmarks {
            let obs = &l.observations;
            for o in obs {
                nodes.insert((o.image, o.feature));
            }
            for o in obs.iter().skip(1) {
                links.push((
                    obs[0].image,
                    o.image,
                    FeatureMatch {
                        fi: obs[0].feature,
                        fj: o.feature,
                        pi: obs[0].pixel,
                        pj: o.pixel,
                    },
                ));
            }
        }
    }
    for e in graph.edges.values() {
        for m in &e.inliers {
            if nodes.contains(&(e.i, m.fi)) && nodes.contains(&(e.j, m.fj)) {
                links.push((e.i, e.j, *m));
            }
        }
    }
    build_tracks(links.iter().map(|(i, j, m)| (*i, *j, m)))
}

/// Tracks over all verified inlier matches accepted by `keep`, regardless
/// of any reconstruction.
pub fn tracks_from_graph(graph: &ViewGraph, keep: impl Fn(u32, u32, &FeatureMatch) -> bool) -> TrackSet {
    build_tracks(
        graph
            .edges
            .values()
            .flat_map(|e| e.inliers.iter().map(move |m| (e.i, e.j, m)))
            .filter(|(i, j, m)| keep(*i, *j, m)),
    )
}

fn triangulate_track(
    track: &Track,
    poses: &BTreeMap<u32, Pose>,
    camera: &CameraIntrinsics,
    opts: &TriangulationOptions,
    max_px: f64,
) -> Result<SceneLandmark, DropReason> {
    let mut obs: Vec<_> = track.observations.iter().filter(|o| poses.contains_key(&o.image)).copied().collect();
    let solve = |obs: &[crate::tracks::TrackObservation]| {
        let rays: Vec<Observation> = obs
            .iter()
            .map(|o| Observation {
                pose: &poses[&o.image],
                camera,
                pixel: o.pixel,
            })
            .collect();
        triangulate(&rays, opts).map_err(|e| match e {
            TriangulationError::TooFewViews(_) => DropReason::TooFewViews,
            TriangulationError::Degenerate => DropReason::DegenerateAngle,
            TriangulationError::BehindCamera => DropReason::BehindCamera,
        })
    };
    let (mut x, mut status) = solve(&obs)?;
    let before = obs.len();
    obs.retain(|o| camera.project(&x, &poses[&o.image]).is_some_and(|uv| (uv - o.pixel).norm() <= max_px));
    if obs.len() != before {
        (x, status) = solve(&obs)?;
    }
    if status.rms_reprojection > max_px {
        return Err(DropReason::Reprojection(status.rms_reprojection));
    }
    Ok(SceneLandmark {
        id: 0,
        position: x,
        observations: obs,
    })
}

/// Triangulates every track against `poses`. Landmark ids are track
/// indices; failing tracks are reported with their reason.
pub fn retriangulate(
    tracks: &TrackSet,
    poses: &BTreeMap<u32, Pose>,
    camera: &CameraIntrinsics,
    min_angle_deg: f64,
    max_reproj_px: f64,
) -> (Vec<SceneLandmark>, Vec<TrackDrop>) {
    let opts = TriangulationOptions {
        min_angle: min_angle_deg.to_radians(),
        ..TriangulationOptions::default()
    };
    let results: Vec<_> = tracks
        .tracks
        .par_iter()
        .map(|t| triangulate_track(t, poses, camera, &opts, max_reproj_px))
        .collect();
    let mut landmarks = Vec::new();
    let mut drops = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(mut l) => {
                l.id = k as u32;
                landmarks.push(l);
            }
            Err(reason) => drops.push(TrackDrop { track: k, reason }),
        }
    }
    (landmarks, drops)
}

/// Final bundle adjustments with navigation priors (vehicle frame),
/// re-gating observations between rounds.
pub fn global_ba(scene: &Scene, nav_priors: &[Pose], cfg: &GlobalConfig) -> Result<(Scene, Vec<BaReport>), BaError> {
    let priors: Vec<Option<Pose>> = nav_priors.iter().copied().map(Some).collect();
    let mut current = scene.clone();
    let mut reports = Vec::new();
    for round in 0..cfg.ba_rounds.max(1) {
        let (next, report) = bundle_adjust(&current, &priors, &BTreeSet::new(), &cfg.ba)?;
        log::info!(
            "global BA round {}: {} observations, cost {:.6e} -> {:.6e}",
            round + 1,
            report.observations,
            report.lm.initial_cost,
            report.lm.final_cost
        );
        current = next;
        reports.push(report);
        if round + 1 < cfg.ba_rounds {
            current.filter_observations(cfg.max_reproj_px);
        }
    }
    Ok((current, reports))
}

/// Merge → re-triangulate against `poses` (all images) → global BA.
/// Only images registered by some sub-reconstruction enter the scene.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct_global(
    subrecons: &[SubReconstruction],
    graph: &ViewGraph,
    poses: &[Pose],
    nav_priors: &[Pose],
    camera: &CameraIntrinsics,
    rig: &RigExtrinsics,
    cfg: &GlobalConfig,
) -> Result<GlobalReconstruction, BaError> {
    let status = image_status(subrecons, poses.len());
    let registered: BTreeMap<u32, Pose> = status
        .iter()
        .enumerate()
        .filter(|(_, s)| **s == ImageStatus::Registered)
        .map(|(i, _)| (i as u32, poses[i]))
        .collect();
    let tracks = merge_tracks(subrecons, graph);
    let (landmarks, drops) = retriangulate(&tracks, &registered, camera, cfg.min_triangulation_angle_deg, cfg.max_reproj_px);
    log::info!(
        "merged {} tracks ({} conflicts), {} triangulated, {} dropped",
        tracks.tracks.len(),
        tracks.dropped_conflicts,
        landmarks.len(),
        drops.len()
    );
    let mut scene = Scene::new(*camera, *rig);
    scene.poses = registered;
    scene.landmarks = landmarks;
    let (scene, ba_reports) = global_ba(&scene, nav_priors, cfg)?;
    Ok(GlobalReconstruction {
        scene,
        status,
        drops,
        ba_reports,
    })
}

pub fn image_status(subrecons: &[SubReconstruction], image_count: usize) -> Vec<ImageStatus> {
    let mut out = vec![ImageStatus::Unregistered(None); image_count];
    for s in subrecons {
        for (&i, st) in &s.status {
            let slot = &mut out[i as usize];
            if *st == RegistrationStatus::Registered || s.is_registered(i) {
                *slot = ImageStatus::Registered;
            } else if *slot != ImageStatus::Registered {
                *slot = ImageStatus::Unregistered(Some(*st));
            }
        }
        for i in s.registered() {
            out[i as usize] = ImageStatus::Registered;
        }
    }
    out
}
