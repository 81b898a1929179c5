//! Camera poses plus triangulated landmarks: the common state refined by
//! bundle adjustment at cluster and at survey level.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geom::{CameraIntrinsics, Pose, RigExtrinsics};
use crate::tracks::TrackObservation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLandmark {
    pub id: u32,
    pub position: Vector3<f64>,
    /// Observations on registered images, sorted by image.
    pub observations: Vec<TrackObservation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// World→camera poses of registered images.
    pub poses: BTreeMap<u32, Pose>,
    pub landmarks: Vec<SceneLandmark>,
    pub intrinsics: CameraIntrinsics,
    pub rig: RigExtrinsics,
}

impl Scene {
    pub fn new(intrinsics: CameraIntrinsics, rig: RigExtrinsics) -> Self {
        Scene {
            poses: BTreeMap::new(),
            landmarks: Vec::new(),
            intrinsics,
            rig,
        }
    }

    /// Reprojection error norm of every observation on a posed image, or
    /// `None` for observations that fall behind their camera.
    pub fn reprojection_errors(&self) -> Vec<Option<f64>> {
        let mut out = Vec::new();
        for l in &self.landmarks {
            for o in &l.observations {
                if let Some(pose) = self.poses.get(&o.image) {
                    out.push(self.intrinsics.project(&l.position, pose).map(|uv| (uv - o.pixel).norm()));
                }
            }
        }
        out
    }

    /// Mean reprojection error (px) over observations in front of their
    /// cameras; 0 for an empty scene.
    pub fn mean_reprojection_error(&self) -> f64 {
        let e: Vec<f64> = self.reprojection_errors().into_iter().flatten().collect();
        if e.is_empty() {
            0.0
        } else {
            e.iter().sum::<f64>() / e.len() as f64
        }
    }

    pub fn observation_count(&self) -> usize {
        self.landmarks.iter().map(|l| l.observations.len()).sum()
    }

    /// Mean number of observations per landmark.
    pub fn mean_track_length(&self) -> f64 {
        if self.landmarks.is_empty() {
            0.0
        } else {
            self.observation_count() as f64 / self.landmarks.len() as f64
        }
    }

    /// Removes observations with reprojection error above `max_px` (or
    /// behind the camera), then landmarks left with fewer than two views.
    /// Returns the number of removed observations.
    pub fn filter_observations(&mut self, max_px: f64) -> usize {
        let mut removed = 0;
        let (poses, cam) = (&self.poses, &self.intrinsics);
        for l in &mut self.landmarks {
            let before = l.observations.len();
            let p = l.position;
            l.observations.retain(|o| {
                poses.get(&o.image).is_some_and(|pose| {
                    cam.project(&p, pose).is_some_and(|uv| (uv - o.pixel).norm() <= max_px)
                })
            });
            removed += before - l.observations.len();
        }
        self.landmarks.retain(|l| l.observations.len() >= 2);
        removed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector2};

    /// Two cameras looking down +z at a point; one observation is off by
    /// exactly one pixel.
    fn two_camera_scene() -> Scene {
        let cam = CameraIntrinsics::with_horizontal_fov(1000, 800, 90.0);
        let mut s = Scene::new(cam, RigExtrinsics::identity());
        let p0 = Pose::from_center(UnitQuaternion::identity(), Vector3::new(0.0, 0.0, 0.0));
        let p1 = Pose::from_center(UnitQuaternion::identity(), Vector3::new(1.0, 0.0, 0.0));
        let x = Vector3::new(0.3, -0.2, 5.0);
        let u0 = cam.project(&x, &p0).unwrap();
        let u1 = cam.project(&x, &p1).unwrap() + Vector2::new(0.6, 0.8);
        s.poses.insert(0, p0);
        s.poses.insert(1, p1);
        s.landmarks.push(SceneLandmark {
            id: 0,
            position: x,
            observations: vec![
                TrackObservation { image: 0, feature: 0, pixel: u0 },
                TrackObservation { image: 1, feature: 0, pixel: u1 },
            ],
        });
        s
    }

    #[test]
    fn one_pixel_offset_gives_known_error() {
        let s = two_camera_scene();
        let e: Vec<f64> = s.reprojection_errors().into_iter().flatten().collect();
        assert!(e[0] < 1e-12);
        assert!((e[1] - 1.0).abs() < 1e-12);
        assert!((s.mean_reprojection_error() - 0.5).abs() < 1e-12);
        assert_eq!(s.mean_track_length(), 2.0);
    }

    #[test]
    fn filtering_removes_bad_views_and_short_tracks() {
        let mut s = two_camera_scene();
        assert_eq!(s.filter_observations(0.5), 1);
        assert!(s.landmarks.is_empty());
    }
}
