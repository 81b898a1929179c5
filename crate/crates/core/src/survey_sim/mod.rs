//! Synthetic lawnmower surveys over procedural terrain: ground truth,
//! corrupted navigation and simulated correspondences.

mod noise;
mod render;

pub use noise::{corrupt_navigation, NoiseModel, WeakStrip};
pub use render::{render_observations, SimulatedMatches};

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{CameraIntrinsics, Pose, RigExtrinsics};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurveyConfig {
    pub track_count: usize,
    /// Along-track length of each main track (m).
    pub track_length: f64,
    pub track_spacing: f64,
    pub altitude: f64,
    /// Distance between consecutive exposures (m).
    pub image_interval: f64,
    /// Adds one track perpendicular to the main tracks at mid-length.
    pub cross_track: bool,
    pub terrain_amplitude: f64,
    /// Length scale (m) of the terrain bumps.
    pub terrain_roughness: f64,
    /// Landmarks per square metre of seafloor.
    pub landmark_density: f64,
    /// Observations closer than this to the image border are discarded (px).
    pub fov_margin: f64,
    pub seed: u64,
    pub seafloor_depth: f64,
    /// Maximum camera-to-landmark distance (m).
    pub max_range: f64,
    /// Vehicle speed, used for navigation timestamps (m/s).
    pub speed: f64,
    /// Amplitude of the roll/pitch oscillation of the vehicle (deg).
    pub attitude_wobble_deg: f64,
    pub camera: CameraIntrinsics,
    pub rig: RigExtrinsics,
    /// Geodetic anchor of the local frame (deg).
    pub origin_lat: f64,
    pub origin_lon: f64,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        SurveyConfig {
            track_count: 4,
            track_length: 60.0,
            track_spacing: 5.0,
            altitude: 8.0,
            image_interval: 2.5,
            cross_track: true,
            terrain_amplitude: 1.0,
            terrain_roughness: 6.0,
            landmark_density: 1.5,
            fov_margin: 4.0,
            seed: 1,
            seafloor_depth: 50.0,
            max_range: 30.0,
            speed: 1.0,
            attitude_wobble_deg: 1.0,
            camera: CameraIntrinsics::with_horizontal_fov(4104, 3006, 88.0),
            rig: RigExtrinsics::rotated_mount(Vector3::new(0.3, 0.0, 0.2)),
            origin_lat: 54.0,
            origin_lon: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("track spacing {spacing} m leaves no side overlap (swath {swath:.3} m)")]
    NoSideOverlap { spacing: f64, swath: f64 },
    #[error("image interval {interval} m leaves no forward overlap (footprint {footprint:.3} m)")]
    NoForwardOverlap { interval: f64, footprint: f64 },
    #[error("camera does not see the seafloor at the configured altitude")]
    CameraNotNadir,
    #[error("vehicle would be above the surface (seafloor depth {depth} m, altitude {altitude} m)")]
    AboveSurface { depth: f64, altitude: f64 },
    #[error("invalid camera: {0}")]
    Camera(#[from] crate::geom::IntrinsicsError),
    #[error("{name} = {value} is outside [0, 1]")]
    Fraction { name: &'static str, value: f64 },
    #[error("{name} = {value} must be non-negative")]
    Negative { name: &'static str, value: f64 },
}

impl SurveyConfig {
    /// Across-track and along-track extent (m) of the image footprint on a
    /// flat floor at the configured altitude, for a level vehicle.
    pub fn footprint(&self) -> Result<(f64, f64), SimError> {
        let cam = &self.camera;
        let (w, h) = (cam.width as f64, cam.height as f64);
        let probes = [
            Vector2::new(0.0, cam.cy),
            Vector2::new(w, cam.cy),
            Vector2::new(cam.cx, 0.0),
            Vector2::new(cam.cx, h),
        ];
        let mut across: (f64, f64) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut along: (f64, f64) = (f64::INFINITY, f64::NEG_INFINITY);
        let rig_rot = self.rig.transform.rotation();
        for p in probes {
            let d = rig_rot * cam.unproject(&p);
            if d.z <= 1e-6 {
                return Err(SimError::CameraNotNadir);
            }
            let g = d * (self.altitude / d.z);
            along = (along.0.min(g.x), along.1.max(g.x));
            across = (across.0.min(g.y), across.1.max(g.y));
        }
        Ok((across.1 - across.0, along.1 - along.0))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("track_length", self.track_length),
            ("track_spacing", self.track_spacing),
            ("altitude", self.altitude),
            ("image_interval", self.image_interval),
            ("terrain_roughness", self.terrain_roughness),
            ("landmark_density", self.landmark_density),
            ("max_range", self.max_range),
            ("speed", self.speed),
        ] {
            if !(v > 0.0) {
                return Err(SimError::NonPositive(name));
            }
        }
        if self.track_count == 0 {
            return Err(SimError::NonPositive("track_count"));
        }
        for (name, value) in [
            ("terrain_amplitude", self.terrain_amplitude),
            ("fov_margin", self.fov_margin),
            ("attitude_wobble_deg", self.attitude_wobble_deg),
        ] {
            if !(value >= 0.0) {
                return Err(SimError::Negative { name, value });
            }
        }
        self.camera.validate()?;
        if self.seafloor_depth - self.altitude < 0.0 {
            return Err(SimError::AboveSurface {
                depth: self.seafloor_depth,
                altitude: self.altitude,
            });
        }
        let (swath, footprint) = self.footprint()?;
        if self.track_count > 1 && self.track_spacing >= swath {
            return Err(SimError::NoSideOverlap {
                spacing: self.track_spacing,
                swath,
            });
        }
        if self.image_interval >= footprint {
            return Err(SimError::NoForwardOverlap {
                interval: self.image_interval,
                footprint,
            });
        }
        Ok(())
    }

    pub fn images_per_track(&self) -> usize {
        (self.track_length / self.image_interval + 1e-9).floor() as usize + 1
    }
}

/// One Gaussian bump of the seafloor heightfield.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vector2<f64>,
    pub amplitude: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terrain {
    pub floor_depth: f64,
    pub bumps: Vec<Bump>,
}

impl Terrain {
    /// Seafloor depth (NED z) at a horizontal position.
    pub fn depth_at(&self, north: f64, east: f64) -> f64 {
        let p = Vector2::new(north, east);
        let h: f64 = self
            .bumps
            .iter()
            .map(|b| b.amplitude * (-(p - b.center).norm_squared() / (2.0 * b.sigma * b.sigma)).exp())
            .sum();
        self.floor_depth - h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: u32,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueObservation {
    pub image: u32,
    pub landmark: u32,
    pub pixel: Vector2<f64>,
}

/// Ground truth of a simulated survey. Positions are in a local
/// north-east-down frame whose horizontal origin is the centroid of the
/// vehicle track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyTruth {
    pub config: SurveyConfig,
    /// World→camera poses, in capture order.
    pub camera_poses: Vec<Pose>,
    /// World→vehicle-body poses.
    pub vehicle_poses: Vec<Pose>,
    pub timestamps: Vec<f64>,
    /// Track index per image; the cross-track has index `track_count`.
    pub image_track: Vec<u32>,
    pub terrain: Terrain,
    pub landmarks: Vec<Landmark>,
    /// Sorted by (image, landmark).
    pub observations: Vec<TrueObservation>,
    pub intrinsics: CameraIntrinsics,
    pub rig: RigExtrinsics,
}

impl SurveyTruth {
    pub fn image_count(&self) -> usize {
        self.camera_poses.len()
    }

    /// Observations of one image (slice of the sorted list).
    pub fn observations_of(&self, image: u32) -> &[TrueObservation] {
        let lo = self.observations.partition_point(|o| o.image < image);
        let hi = self.observations.partition_point(|o| o.image <= image);
        &self.observations[lo..hi]
    }
}

struct Waypoint {
    north: f64,
    east: f64,
    yaw: f64,
    track: u32,
    distance: f64,
}

fn plan_trajectory(cfg: &SurveyConfig) -> Vec<Waypoint> {
    let n = cfg.images_per_track();
    let half = cfg.track_length / 2.0;
    let mut out = Vec::new();
    let mut distance = 0.0;
    let mut last: Option<(f64, f64)> = None;
    let mut push = |north: f64, east: f64, yaw: f64, track: u32, out: &mut Vec<Waypoint>| {
        if let Some((ln, le)) = last {
            distance += ((north - ln).powi(2) + (east - le).powi(2)).sqrt();
        }
        last = Some((north, east));
        out.push(Waypoint {
            north,
            east,
            yaw,
            track,
            distance,
        });
    };
    for k in 0..cfg.track_count {
        let east = k as f64 * cfg.track_spacing;
        for s in 0..n {
            let along = -half + s as f64 * cfg.image_interval;
            if k % 2 == 0 {
                push(along, east, 0.0, k as u32, &mut out);
            } else {
                push(-along, east, std::f64::consts::PI, k as u32, &mut out);
            }
        }
    }
    if cfg.cross_track {
        let width = (cfg.track_count - 1) as f64 * cfg.track_spacing;
        let m = (width / cfg.image_interval + 1e-9).floor() as usize + 1;
        for s in 0..m {
            let east = s as f64 * cfg.image_interval;
            push(0.0, east, std::f64::consts::FRAC_PI_2, cfg.track_count as u32, &mut out);
        }
    }
    // Centre the horizontal track on the origin.
    let cn = out.iter().map(|w| w.north).sum::<f64>() / out.len() as f64;
    let ce = out.iter().map(|w| w.east).sum::<f64>() / out.len() as f64;
    for w in &mut out {
        w.north -= cn;
        w.east -= ce;
    }
    out
}

/// Builds a deterministic synthetic survey.
pub fn generate_survey(cfg: &SurveyConfig) -> Result<SurveyTruth, SimError> {
    cfg.validate()?;
    let waypoints = plan_trajectory(cfg);
    let vehicle_depth = cfg.seafloor_depth - cfg.altitude;
    let wobble = cfg.attitude_wobble_deg.to_radians();

    let mut vehicle_poses = Vec::with_capacity(waypoints.len());
    let mut timestamps = Vec::with_capacity(waypoints.len());
    for w in &waypoints {
        let s = w.distance;
        let roll = wobble * (2.0 * std::f64::consts::PI * s / 11.0 + 1.0).sin();
        let pitch = wobble * (2.0 * std::f64::consts::PI * s / 17.0).sin();
        let r = UnitQuaternion::from_euler_angles(roll, pitch, w.yaw);
        vehicle_poses.push(Pose::from_center(r, Vector3::new(w.north, w.east, vehicle_depth)));
        timestamps.push(s / cfg.speed);
    }
    let camera_poses: Vec<Pose> = vehicle_poses
        .iter()
        .map(|v| cfg.rig.camera_from_vehicle(v))
        .collect();

    // Survey area: track extent plus one swath on every side.
    let (swath, footprint) = cfg.footprint()?;
    let pad = swath.max(footprint) + 2.0;
    let min_n = waypoints.iter().map(|w| w.north).fold(f64::INFINITY, f64::min) - pad;
    let max_n = waypoints.iter().map(|w| w.north).fold(f64::NEG_INFINITY, f64::max) + pad;
    let min_e = waypoints.iter().map(|w| w.east).fold(f64::INFINITY, f64::min) - pad;
    let max_e = waypoints.iter().map(|w| w.east).fold(f64::NEG_INFINITY, f64::max) + pad;
    let area = (max_n - min_n) * (max_e - min_e);

    let mut trng = stream_rng(cfg.seed, Stream::Terrain, 0);
    let bump_count = if cfg.terrain_amplitude > 0.0 {
        ((area / (cfg.terrain_roughness * cfg.terrain_roughness)) * 0.5).ceil() as usize
    } else {
        0
    };
    let bumps: Vec<Bump> = (0..bump_count)
        .map(|_| Bump {
            center: Vector2::new(trng.random_range(min_n..max_n), trng.random_range(min_e..max_e)),
            amplitude: trng.random_range(-cfg.terrain_amplitude..=cfg.terrain_amplitude),
            sigma: cfg.terrain_roughness * trng.random_range(0.7..1.3),
        })
        .collect();
    let terrain = Terrain {
        floor_depth: cfg.seafloor_depth,
        bumps,
    };

    let landmark_count = (area * cfg.landmark_density).round() as usize;
    let landmarks: Vec<Landmark> = (0..landmark_count)
        .into_par_iter()
        .map(|k| {
            let mut r = stream_rng(cfg.seed, Stream::Landmarks, k as u64);
            let n = r.random_range(min_n..max_n);
            let e = r.random_range(min_e..max_e);
            Landmark {
                id: k as u32,
                position: Vector3::new(n, e, terrain.depth_at(n, e)),
            }
        })
        .collect();

    // Uniform grid over the landmarks for frustum queries.
    let cell = 4.0;
    let cols = ((max_e - min_e) / cell).ceil() as usize + 1;
    let rows = ((max_n - min_n) / cell).ceil() as usize + 1;
    let mut grid: Vec<Vec<u32>> = vec![Vec::new(); rows * cols];
    for l in &landmarks {
        let r = ((l.position.x - min_n) / cell) as usize;
        let c = ((l.position.y - min_e) / cell) as usize;
        grid[r.min(rows - 1) * cols + c.min(cols - 1)].push(l.id);
    }
    let corner_angle = cfg.camera.unproject(&Vector2::new(0.0, 0.0)).z.acos();
    let reach = if corner_angle < std::f64::consts::FRAC_PI_2 - 1e-3 {
        ((cfg.altitude + 3.0 * cfg.terrain_amplitude) * corner_angle.tan() + 1.0).min(cfg.max_range)
    } else {
        cfg.max_range
    };
    let cam = cfg.camera;
    let per_image: Vec<Vec<TrueObservation>> = camera_poses
        .par_iter()
        .enumerate()
        .map(|(img, pose)| {
            let c = pose.center();
            let r0 = (((c.x - reach - min_n) / cell).floor().max(0.0)) as usize;
            let r1 = (((c.x + reach - min_n) / cell).floor() as usize).min(rows - 1);
            let c0 = (((c.y - reach - min_e) / cell).floor().max(0.0)) as usize;
            let c1 = (((c.y + reach - min_e) / cell).floor() as usize).min(cols - 1);
            let mut obs = Vec::new();
            for r in r0..=r1 {
                for cc in c0..=c1 {
                    for &id in &grid[r * cols + cc] {
                        let p = landmarks[id as usize].position;
                        if (p - c).norm() > cfg.max_range {
                            continue;
                        }
                        if let Some(uv) = cam.project(&p, pose) {
                            if cam.contains(&uv, cfg.fov_margin) {
                                obs.push(TrueObservation {
                                    image: img as u32,
                                    landmark: id,
                                    pixel: uv,
                                });
                            }
                        }
                    }
                }
            }
            obs.sort_by_key(|o| o.landmark);
            obs
        })
        .collect();

    Ok(SurveyTruth {
        config: cfg.clone(),
        camera_poses,
        vehicle_poses,
        timestamps,
        image_track: waypoints.iter().map(|w| w.track).collect(),
        terrain,
        landmarks,
        observations: per_image.into_iter().flatten().collect(),
        intrinsics: cfg.camera,
        rig: cfg.rig,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn landmarks_of(truth: &SurveyTruth, img: u32) -> BTreeSet<u32> {
        truth.observations_of(img).iter().map(|o| o.landmark).collect()
    }

    #[test]
    fn adjacent_images_share_landmarks() {
        let cfg = SurveyConfig {
            track_count: 2,
            track_length: 9.0 * 2.0,
            image_interval: 2.0,
            track_spacing: 5.0,
            altitude: 8.0,
            cross_track: false,
            ..SurveyConfig::default()
        };
        // Frustum-overlap oracle: consecutive footprints overlap by
        // (footprint − interval) × swath.
        let (swath, footprint) = cfg.footprint().unwrap();
        let expected_shared = (footprint - cfg.image_interval) * swath * cfg.landmark_density;
        assert!(expected_shared > 20.0);
        let truth = generate_survey(&cfg).unwrap();
        assert_eq!(truth.image_count(), 20);
        for k in 0..truth.image_count() - 1 {
            if truth.image_track[k] != truth.image_track[k + 1] {
                continue;
            }
            let a = landmarks_of(&truth, k as u32);
            let b = landmarks_of(&truth, k as u32 + 1);
            assert!(a.intersection(&b).count() >= 1, "images {k},{}", k + 1);
        }
    }

    #[test]
    fn cross_track_links_every_main_track() {
        let cfg = SurveyConfig::default();
        let truth = generate_survey(&cfg).unwrap();
        let cross: Vec<u32> = (0..truth.image_count() as u32)
            .filter(|&i| truth.image_track[i as usize] == cfg.track_count as u32)
            .collect();
        assert!(!cross.is_empty());
        for track in 0..cfg.track_count as u32 {
            let linked = (0..truth.image_count() as u32)
                .filter(|&i| truth.image_track[i as usize] == track)
                .any(|i| {
                    let a = landmarks_of(&truth, i);
                    cross.iter().any(|&c| a.intersection(&landmarks_of(&truth, c)).count() > 0)
                });
            assert!(linked, "track {track}");
        }
    }

    #[test]
    fn deterministic_for_a_seed() {
        let cfg = SurveyConfig {
            track_count: 2,
            track_length: 20.0,
            ..SurveyConfig::default()
        };
        let a = generate_survey(&cfg).unwrap();
        let b = generate_survey(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_survey(&SurveyConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a.landmarks, c.landmarks);
    }

    #[test]
    fn observations_reproject_exactly_and_stay_in_bounds() {
        let truth = generate_survey(&SurveyConfig {
            track_count: 2,
            track_length: 20.0,
            ..SurveyConfig::default()
        })
        .unwrap();
        for o in &truth.observations {
            let p = truth.landmarks[o.landmark as usize].position;
            let uv = truth
                .intrinsics
                .project(&p, &truth.camera_poses[o.image as usize])
                .unwrap();
            assert_eq!(uv, o.pixel);
            assert!(truth.intrinsics.contains(&o.pixel, 0.0));
        }
    }

    #[test]
    fn rejects_spacing_without_side_overlap() {
        let cfg = SurveyConfig {
            track_spacing: 40.0,
            ..SurveyConfig::default()
        };
        assert!(matches!(generate_survey(&cfg), Err(SimError::NoSideOverlap { .. })));
    }

    #[test]
    fn centroid_of_track_is_origin() {
        let truth = generate_survey(&SurveyConfig::default()).unwrap();
        let n = truth.image_count() as f64;
        let c: Vector3<f64> = truth.vehicle_poses.iter().map(|p| p.center()).sum::<Vector3<f64>>() / n;
        assert!(c.x.abs() < 1e-9 && c.y.abs() < 1e-9);
    }
}
