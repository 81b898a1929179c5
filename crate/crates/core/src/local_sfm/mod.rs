//! Navigation-aided incremental reconstruction of one cluster: metric seed
//! from the priors, absolute-pose registration, triangulation and
//! prior-supervised bundle adjustment.

mod bundle;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bundle::{bundle_adjust, BaError, BaLinearization, BaOptions, BaReport, BaState, BundleProblem, PriorPenaltyConfig};

use crate::geom::{triangulate, CameraIntrinsics, Observation, Pose, RigExtrinsics, TriangulationOptions};
use crate::rng::{stream_rng, Stream};
use crate::scene::{Scene, SceneLandmark};
use crate::solver::p3p::{estimate_absolute_pose, AbsoluteOptions, AbsolutePoseError};
use crate::solver::RansacOptions;
use crate::tracks::{build_tracks, TrackObservation, TrackSet};
use crate::viewgraph::{Cluster, ViewGraph, ViewGraphEdge};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalSfmConfig {
    pub ba: BaOptions,
    /// Minimum prior baseline (m) for a seed pair.
    pub min_baseline: f64,
    pub min_seed_landmarks: usize,
    /// Minimum 2D-3D inliers to register an image.
    pub min_2d3d: usize,
    pub max_reproj_px: f64,
    pub min_triangulation_angle_deg: f64,
    /// Bundle adjustment after every `max(ba_interval_min,
    /// ba_interval_fraction · registered)` new images.
    pub ba_interval_min: usize,
    pub ba_interval_fraction: f64,
    /// Iteration cap of the intermediate bundle adjustments.
    pub intermediate_ba_iterations: usize,
    pub max_registration_attempts: usize,
    pub seed: u64,
}

impl Default for LocalSfmConfig {
    fn default() -> Self {
        LocalSfmConfig {
            ba: BaOptions::default(),
            min_baseline: 0.2,
            min_seed_landmarks: 20,
            min_2d3d: 6,
            max_reproj_px: 4.0,
            min_triangulation_angle_deg: 1.0,
            ba_interval_min: 10,
            ba_interval_fraction: 0.1,
            intermediate_ba_iterations: 25,
            max_registration_attempts: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegistrationStatus {
    Registered,
    /// Never had enough 2D-3D correspondences.
    TooFewCorrespondences { found: usize },
    /// Robust absolute pose found too few inliers.
    TooFewInliers { found: usize },
    /// The cluster could not be seeded.
    NoSeed,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
pub enum SeedError {
    #[error("prior baseline {baseline:.4} m below {min} m")]
    BaselineTooShort { baseline: f64, min: f64 },
    #[error("{found} landmarks triangulated, {required} required")]
    TooFewLandmarks { found: usize, required: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubReconstruction {
    pub cluster_id: u32,
    /// Landmark ids are track indices of the cluster's track set.
    pub scene: Scene,
    pub status: BTreeMap<u32, RegistrationStatus>,
    pub registration_order: Vec<u32>,
    /// Cost reports of the bundle adjustments, in order.
    pub ba_reports: Vec<BaReport>,
}

impl SubReconstruction {
    pub fn registered(&self) -> impl Iterator<Item = u32> + '_ {
        self.scene.poses.keys().copied()
    }

    pub fn is_registered(&self, image: u32) -> bool {
        self.scene.poses.contains_key(&image)
    }

    pub fn failed(&self) -> bool {
        self.scene.poses.is_empty()
    }
}

/// Result of local SfM on one intra-cluster edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeUpgrade {
    pub i: u32,
    pub j: u32,
    pub n_p: usize,
    /// `T_j ∘ T_i⁻¹` from the optimized poses.
    pub metric_relative: Pose,
}

/// Two-view seed. The first camera is placed at its prior; the second is
/// the verified relative pose with its translation scaled to the prior
/// baseline. Landmark `k` is triangulated from inlier `k` of the edge.
pub fn initialize_pair(
    edge: &ViewGraphEdge,
    prior_i: &Pose,
    prior_j: &Pose,
    camera: &CameraIntrinsics,
    rig: &RigExtrinsics,
    cfg: &LocalSfmConfig,
) -> Result<Scene, SeedError> {
    let baseline = prior_i.center_distance(prior_j);
    if !(baseline >= cfg.min_baseline) || baseline == 0.0 {
        return Err(SeedError::BaselineTooShort {
            baseline,
            min: cfg.min_baseline,
        });
    }
    let rel = Pose::new(edge.rotation, edge.direction.normalize() * baseline);
    let pose_j = rel.compose(prior_i);
    let mut scene = Scene::new(*camera, *rig);
    scene.poses.insert(edge.i, *prior_i);
    scene.poses.insert(edge.j, pose_j);
    let topts = TriangulationOptions {
        min_angle: cfg.min_triangulation_angle_deg.to_radians(),
        ..TriangulationOptions::default()
    };
    for (k, m) in edge.inliers.iter().enumerate() {
        let obs = [
            Observation {
                pose: prior_i,
                camera,
                pixel: m.pi,
            },
            Observation {
                pose: &pose_j,
                camera,
                pixel: m.pj,
            },
        ];
        let Ok((x, status)) = triangulate(&obs, &topts) else { continue };
        if status.rms_reprojection > cfg.max_reproj_px {
            continue;
        }
        scene.landmarks.push(SceneLandmark {
            id: k as u32,
            position: x,
            observations: vec![
                TrackObservation {
                    image: edge.i,
                    feature: m.fi,
                    pixel: m.pi,
                },
                TrackObservation {
                    image: edge.j,
                    feature: m.fj,
                    pixel: m.pj,
                },
            ],
        });
    }
    if scene.landmarks.len() < cfg.min_seed_landmarks {
        return Err(SeedError::TooFewLandmarks {
            found: scene.landmarks.len(),
            required: cfg.min_seed_landmarks,
        });
    }
    Ok(scene)
}

/// Robust absolute pose of one image from 2D-3D correspondences
/// `(world point, pixel)`; returns the pose and the inlier mask.
pub fn register_image(
    camera: &CameraIntrinsics,
    world: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    cfg: &LocalSfmConfig,
    rng: &mut impl rand::Rng,
) -> Result<(Pose, Vec<bool>), RegistrationStatus> {
    let opts = AbsoluteOptions {
        max_reproj_px: cfg.max_reproj_px,
        min_inliers: cfg.min_2d3d,
        ransac: RansacOptions::default(),
    };
    match estimate_absolute_pose(camera, world, pixels, &opts, rng) {
        Ok(est) => Ok((est.pose, est.inliers)),
        Err(AbsolutePoseError::TooFewCorrespondences { found, .. }) => {
            Err(RegistrationStatus::TooFewCorrespondences { found })
        }
        Err(AbsolutePoseError::TooFewInliers { found, .. }) => Err(RegistrationStatus::TooFewInliers { found }),
    }
}

struct Builder<'a> {
    cluster_id: u32,
    camera: &'a CameraIntrinsics,
    nav: Vec<Option<Pose>>,
    cfg: &'a LocalSfmConfig,
    tracks: TrackSet,
    /// Track indices observed by each image.
    by_image: BTreeMap<u32, Vec<usize>>,
    scene: Scene,
    /// Track index → landmark position in `scene.landmarks`.
    landmark_of: HashMap<usize, usize>,
    order: Vec<u32>,
    reports: Vec<BaReport>,
    fixed: BTreeSet<u32>,
}

impl Builder<'_> {
    fn reindex(&mut self) {
        self.landmark_of = self
            .scene
            .landmarks
            .iter()
            .enumerate()
            .map(|(k, l)| (l.id as usize, k))
            .collect();
    }

    fn correspondences(&self, image: u32) -> Vec<(usize, TrackObservation)> {
        let mut out = Vec::new();
        for &t in self.by_image.get(&image).map(Vec::as_slice).unwrap_or(&[]) {
            if let Some(&l) = self.landmark_of.get(&t) {
                if let Some(o) = self.tracks.tracks[t].in_image(image) {
                    out.push((l, *o));
                }
            }
        }
        out
    }

    /// Triangulates tracks of `image` that have no landmark yet, from all
    /// their observations on registered images.
    fn triangulate_new(&mut self, image: u32) {
        let topts = TriangulationOptions {
            min_angle: self.cfg.min_triangulation_angle_deg.to_radians(),
            ..TriangulationOptions::default()
        };
        let cand: Vec<usize> = self.by_image.get(&image).cloned().unwrap_or_default();
        for t in cand {
            if self.landmark_of.contains_key(&t) {
                continue;
            }
            let obs: Vec<TrackObservation> = self.tracks.tracks[t]
                .observations
                .iter()
                .filter(|o| self.scene.poses.contains_key(&o.image))
                .copied()
                .collect();
            if obs.len() < 2 {
                continue;
            }
            let views: Vec<Observation> = obs
                .iter()
                .map(|o| Observation {
                    pose: &self.scene.poses[&o.image],
                    camera: self.camera,
                    pixel: o.pixel,
                })
                .collect();
            let Ok((x, _)) = triangulate(&views, &topts) else { continue };
            let good: Vec<TrackObservation> = obs
                .into_iter()
                .filter(|o| {
                    self.camera
                        .project(&x, &self.scene.poses[&o.image])
                        .is_some_and(|uv| (uv - o.pixel).norm() <= self.cfg.max_reproj_px)
                })
                .collect();
            if good.len() < 2 {
                continue;
            }
            self.landmark_of.insert(t, self.scene.landmarks.len());
            self.scene.landmarks.push(SceneLandmark {
                id: t as u32,
                position: x,
                observations: good,
            });
        }
    }

    fn adjust(&mut self, max_iterations: usize) {
        let mut opts = self.cfg.ba.clone();
        opts.lm.max_iterations = max_iterations;
        if let Ok((scene, report)) = bundle_adjust(&self.scene, &self.nav, &self.fixed, &opts) {
            self.scene = scene;
            self.reports.push(report);
        }
        self.scene.filter_observations(self.cfg.max_reproj_px);
        self.reindex();
    }
}

/// Incremental SfM on one cluster. Returns the sub-reconstruction and the
/// N_p / metric relative pose of every intra-cluster edge whose images are
/// both registered.
pub fn reconstruct_cluster(
    cluster: &Cluster,
    graph: &ViewGraph,
    nav_priors: &[Pose],
    camera: &CameraIntrinsics,
    rig: &RigExtrinsics,
    cfg: &LocalSfmConfig,
) -> (SubReconstruction, Vec<EdgeUpgrade>) {
    let members: BTreeSet<u32> = cluster.members.iter().copied().collect();
    let edges: Vec<&ViewGraphEdge> = graph
        .edges
        .values()
        .filter(|e| e.n_m > 0 && members.contains(&e.i) && members.contains(&e.j))
        .collect();
    let tracks = build_tracks(edges.iter().flat_map(|e| e.inliers.iter().map(move |m| (e.i, e.j, m))));
    let tindex = tracks.index();
    let mut by_image: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (t, track) in tracks.tracks.iter().enumerate() {
        for o in &track.observations {
            by_image.entry(o.image).or_default().push(t);
        }
    }
    let nav: Vec<Option<Pose>> = nav_priors.iter().map(|p| Some(*p)).collect();
    let camera_prior = |img: u32| rig.camera_from_vehicle(&nav_priors[img as usize]);

    let mut seeds = edges.clone();
    seeds.sort_by(|a, b| b.n_m.cmp(&a.n_m).then((a.i, a.j).cmp(&(b.i, b.j))));
    let mut seed = None;
    for e in seeds {
        if let Ok(scene) = initialize_pair(e, &camera_prior(e.i), &camera_prior(e.j), camera, rig, cfg) {
            seed = Some((e, scene));
            break;
        }
    }
    let mut status: BTreeMap<u32, RegistrationStatus> = BTreeMap::new();
    let Some((seed_edge, seed_scene)) = seed else {
        for &m in &members {
            status.insert(m, RegistrationStatus::NoSeed);
        }
        let recon = SubReconstruction {
            cluster_id: cluster.id,
            scene: Scene::new(*camera, *rig),
            status,
            registration_order: Vec::new(),
            ba_reports: Vec::new(),
        };
        return (recon, Vec::new());
    };

    let fixed: BTreeSet<u32> = if cfg.ba.prior.weights.is_zero() {
        [seed_edge.i, seed_edge.j].into_iter().collect()
    } else {
        BTreeSet::new()
    };
    let mut b = Builder {
        cluster_id: cluster.id,
        camera,
        nav,
        cfg,
        tracks,
        by_image,
        scene: seed_scene,
        landmark_of: HashMap::new(),
        order: vec![seed_edge.i, seed_edge.j],
        reports: Vec::new(),
        fixed,
    };
    // Seed landmarks take the id of their track; duplicates (two inliers
    // on one track) keep the first.
    let mut seen = BTreeSet::new();
    let seed_landmarks = std::mem::take(&mut b.scene.landmarks);
    for mut l in seed_landmarks {
        let (a, c) = (&l.observations[0], &l.observations[1]);
        let (Some(&ta), Some(&tc)) = (tindex.get(&(a.image, a.feature)), tindex.get(&(c.image, c.feature))) else {
            continue;
        };
        if ta != tc || !seen.insert(ta) {
            continue;
        }
        l.id = ta as u32;
        b.scene.landmarks.push(l);
    }
    b.reindex();
    b.adjust(cfg.intermediate_ba_iterations);
    for img in [seed_edge.i, seed_edge.j] {
        status.insert(img, RegistrationStatus::Registered);
    }

    let mut attempts: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    let mut since_ba = 0usize;
    loop {
        let mut best: Option<(usize, u32)> = None;
        for &img in &members {
            if b.scene.poses.contains_key(&img) {
                continue;
            }
            let n = b.correspondences(img).len();
            if let Some(&(tries, last)) = attempts.get(&img) {
                if tries >= cfg.max_registration_attempts || n <= last {
                    continue;
                }
            }
            if best.is_none_or(|(bn, _)| n > bn) {
                best = Some((n, img));
            }
        }
        let Some((n, img)) = best else { break };
        if n < cfg.min_2d3d {
            break;
        }
        let corr = b.correspondences(img);
        let world: Vec<Vector3<f64>> = corr.iter().map(|(l, _)| b.scene.landmarks[*l].position).collect();
        let pixels: Vec<Vector2<f64>> = corr.iter().map(|(_, o)| o.pixel).collect();
        let entry = attempts.entry(img).or_insert((0, 0));
        entry.0 += 1;
        entry.1 = n;
        let mut rng = stream_rng(
            cfg.seed,
            Stream::Registration,
            ((b.cluster_id as u64) << 40) ^ ((entry.0 as u64) << 32) ^ img as u64,
        );
        match register_image(camera, &world, &pixels, cfg, &mut rng) {
            Ok((pose, inliers)) => {
                b.scene.poses.insert(img, pose);
                status.insert(img, RegistrationStatus::Registered);
                b.order.push(img);
                for ((l, o), ok) in corr.iter().zip(&inliers) {
                    if *ok {
                        let obs = &mut b.scene.landmarks[*l].observations;
                        let at = obs.partition_point(|x| x.image < img);
                        obs.insert(at, *o);
                    }
                }
                b.triangulate_new(img);
                since_ba += 1;
                let interval = cfg
                    .ba_interval_min
                    .max((cfg.ba_interval_fraction * b.scene.poses.len() as f64).ceil() as usize);
                if since_ba >= interval {
                    b.adjust(cfg.intermediate_ba_iterations);
                    since_ba = 0;
                }
            }
            Err(why) => {
                status.insert(img, why);
            }
        }
    }
    b.adjust(cfg.ba.lm.max_iterations);
    // One more pass in case filtering removed observations.
    b.adjust(cfg.ba.lm.max_iterations);

    for &m in &members {
        if !b.scene.poses.contains_key(&m) {
            let found = b.correspondences(m).len();
            let s = status.entry(m).or_insert(RegistrationStatus::TooFewCorrespondences { found });
            if *s == RegistrationStatus::Registered {
                *s = RegistrationStatus::TooFewCorrespondences { found };
            }
        }
    }
    let upgrades = edge_upgrades(&edges, &b.scene, &tindex);
    let recon = SubReconstruction {
        cluster_id: cluster.id,
        scene: b.scene,
        status,
        registration_order: b.order,
        ba_reports: b.reports,
    };
    (recon, upgrades)
}

fn edge_upgrades(edges: &[&ViewGraphEdge], scene: &Scene, tindex: &HashMap<(u32, u32), usize>) -> Vec<EdgeUpgrade> {
    let by_id: HashMap<u32, &SceneLandmark> = scene.landmarks.iter().map(|l| (l.id, l)).collect();
    let mut out = Vec::new();
    for e in edges {
        let (Some(pi), Some(pj)) = (scene.poses.get(&e.i), scene.poses.get(&e.j)) else {
            continue;
        };
        let n_p = e
            .inliers
            .iter()
            .filter(|m| {
                let (Some(a), Some(b)) = (tindex.get(&(e.i, m.fi)), tindex.get(&(e.j, m.fj))) else {
                    return false;
                };
                a == b
                    && by_id.get(&(*a as u32)).is_some_and(|l| {
                        l.observations.iter().any(|o| o.image == e.i && o.feature == m.fi)
                            && l.observations.iter().any(|o| o.image == e.j && o.feature == m.fj)
                    })
            })
            .count();
        out.push(EdgeUpgrade {
            i: e.i,
            j: e.j,
            n_p,
            metric_relative: pj.between(pi),
        });
    }
    out
}

/// Local SfM on every cluster in parallel; results keep cluster order.
pub fn reconstruct_clusters(
    clusters: &[Cluster],
    graph: &ViewGraph,
    nav_priors: &[Pose],
    camera: &CameraIntrinsics,
    rig: &RigExtrinsics,
    cfg: &LocalSfmConfig,
) -> Vec<(SubReconstruction, Vec<EdgeUpgrade>)> {
    clusters
        .par_iter()
        .map(|c| reconstruct_cluster(c, graph, nav_priors, camera, rig, cfg))
        .collect()
}

/// Writes upgrades onto the graph, keeping for every edge the record with
/// the largest N_p (the first one on ties).
pub fn apply_upgrades<'a>(graph: &mut ViewGraph, upgrades: impl IntoIterator<Item = &'a EdgeUpgrade>) {
    for u in upgrades {
        if let Some(e) = graph.edge_mut(u.i, u.j) {
            if e.metric_relative.is_none() || u.n_p > e.n_p {
                e.n_p = u.n_p;
                e.metric_relative = Some(u.metric_relative);
            }
        }
    }
}
