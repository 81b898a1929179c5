use nalgebra::{Matrix3, Vector2, Vector3};

use super::camera::CameraIntrinsics;
use super::pose::Pose;

/// Default minimum pairwise ray angle for a well-conditioned point.
pub const DEFAULT_MIN_ANGLE_DEG: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum TriangulationError {
    #[error("need at least two observations, got {0}")]
    TooFewViews(usize),
    #[error("rays are nearly parallel")]
    Degenerate,
    #[error("point lies behind at least one camera")]
    BehindCamera,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangulationStatus {
    /// Largest angle (radians) between any two observation rays.
    pub max_angle: f64,
    /// Number of cameras that see the final point in front of them.
    pub in_front: usize,
    /// Root-mean-square reprojection error of the final point (px).
    pub rms_reprojection: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub pose: &'a Pose,
    pub camera: &'a CameraIntrinsics,
    pub pixel: Vector2<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct TriangulationOptions {
    pub min_angle: f64,
    pub refine_iterations: usize,
}

impl Default for TriangulationOptions {
    fn default() -> Self {
        TriangulationOptions {
            min_angle: DEFAULT_MIN_ANGLE_DEG.to_radians(),
            refine_iterations: 10,
        }
    }
}

/// Linear midpoint solution followed by Gauss-Newton on the reprojection
/// error.
pub fn triangulate(
    obs: &[Observation],
    opts: &TriangulationOptions,
) -> Result<(Vector3<f64>, TriangulationStatus), TriangulationError> {
    if obs.len() < 2 {
        return Err(TriangulationError::TooFewViews(obs.len()));
    }
    let rays: Vec<(Vector3<f64>, Vector3<f64>)> = obs
        .iter()
        .map(|o| {
            let d = o.pose.rotation().inverse() * o.camera.unproject(&o.pixel);
            (o.pose.center(), d)
        })
        .collect();

    let mut max_cos = 1.0f64;
    for a in 0..rays.len() {
        for b in a + 1..rays.len() {
            max_cos = max_cos.min(rays[a].1.dot(&rays[b].1));
        }
    }
    let max_angle = max_cos.clamp(-1.0, 1.0).acos();
    if max_angle < opts.min_angle {
        return Err(TriangulationError::Degenerate);
    }

    let mut a = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for (c, d) in &rays {
        let p = Matrix3::identity() - d * d.transpose();
        a += p;
        rhs += p * c;
    }
    let mut x = a
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .ok_or(TriangulationError::Degenerate)?;

    if obs.iter().any(|o| o.pose.transform_point(&x).z <= 0.0) {
        return Err(TriangulationError::BehindCamera);
    }

    let cost = |x: &Vector3<f64>| -> Option<f64> {
        let mut s = 0.0;
        for o in obs {
            let uv = o.camera.project(x, o.pose)?;
            s += (uv - o.pixel).norm_squared();
        }
        Some(s)
    };
    let mut current = cost(&x).ok_or(TriangulationError::BehindCamera)?;
    for _ in 0..opts.refine_iterations {
        let mut h = Matrix3::zeros();
        let mut g = Vector3::zeros();
        for o in obs {
            let (uv, _, jx, _) = o
                .camera
                .project_with_jacobians(&x, o.pose)
                .ok_or(TriangulationError::BehindCamera)?;
            let r = uv - o.pixel;
            h += jx.transpose() * jx;
            g += jx.transpose() * r;
        }
        let Some(step) = h.cholesky().map(|ch| ch.solve(&(-g))) else {
            break;
        };
        let cand = x + step;
        match cost(&cand) {
            Some(c) if c <= current => {
                let done = step.norm() <= 1e-14 * (1.0 + x.norm());
                x = cand;
                current = c;
                if done {
                    break;
                }
            }
            _ => break,
        }
    }

    let in_front = obs
        .iter()
        .filter(|o| o.pose.transform_point(&x).z > 0.0)
        .count();
    if in_front < obs.len() {
        return Err(TriangulationError::BehindCamera);
    }
    Ok((
        x,
        TriangulationStatus {
            max_angle,
            in_front,
            rms_reprojection: (current / obs.len() as f64).sqrt(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, UnitQuaternion};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn camera() -> CameraIntrinsics {
        let mut c = CameraIntrinsics::with_horizontal_fov(4104, 3006, 88.0);
        c.k = [0.01, -0.002, 0.0, 0.0];
        c
    }

    fn looking_down(center: Vector3<f64>) -> Pose {
        Pose::from_center(UnitQuaternion::identity(), center)
    }

    /// Homogeneous DLT on normalized rays (independent of the midpoint path).
    fn dlt(obs: &[Observation]) -> Vector3<f64> {
        let mut a = DMatrix::zeros(2 * obs.len(), 4);
        for (k, o) in obs.iter().enumerate() {
            let ray = o.camera.unproject(&o.pixel);
            let (x, y) = (ray.x / ray.z, ray.y / ray.z);
            let p = o.pose.to_homogeneous();
            for c in 0..4 {
                a[(2 * k, c)] = x * p[(2, c)] - p[(0, c)];
                a[(2 * k + 1, c)] = y * p[(2, c)] - p[(1, c)];
            }
        }
        let svd = a.svd(false, true);
        let vt = svd.v_t.unwrap();
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let v = vt.row(imin);
        Vector3::new(v[0] / v[3], v[1] / v[3], v[2] / v[3])
    }

    #[test]
    fn two_cameras_one_metre_apart() {
        let cam = camera();
        let p1 = looking_down(Vector3::new(0.0, 0.0, 0.0));
        let p2 = looking_down(Vector3::new(1.0, 0.0, 0.0));
        let x = Vector3::new(0.3, -0.4, 8.0);
        let obs = [
            Observation { pose: &p1, camera: &cam, pixel: cam.project(&x, &p1).unwrap() },
            Observation { pose: &p2, camera: &cam, pixel: cam.project(&x, &p2).unwrap() },
        ];
        let (est, status) = triangulate(&obs, &TriangulationOptions::default()).unwrap();
        assert!((est - x).norm() < 1e-9);
        assert!((dlt(&obs) - x).norm() < 1e-9);
        assert_eq!(status.in_front, 2);
    }

    #[test]
    fn parallel_rays_are_degenerate() {
        let cam = camera();
        let p1 = looking_down(Vector3::zeros());
        let obs = [
            Observation { pose: &p1, camera: &cam, pixel: Vector2::new(2000.0, 1500.0) },
            Observation { pose: &p1, camera: &cam, pixel: Vector2::new(2000.0, 1500.0) },
        ];
        assert_eq!(
            triangulate(&obs, &TriangulationOptions::default()).unwrap_err(),
            TriangulationError::Degenerate
        );
        assert_eq!(
            triangulate(&obs[..1], &TriangulationOptions::default()).unwrap_err(),
            TriangulationError::TooFewViews(1)
        );
    }

    #[test]
    fn point_behind_cameras_is_rejected() {
        let cam = camera();
        let p1 = looking_down(Vector3::zeros());
        let p2 = looking_down(Vector3::new(1.0, 0.0, 0.0));
        // Rays diverge: the only intersection lies behind both cameras.
        let obs = [
            Observation { pose: &p1, camera: &cam, pixel: Vector2::new(cam.cx - 300.0, cam.cy) },
            Observation { pose: &p2, camera: &cam, pixel: Vector2::new(cam.cx + 300.0, cam.cy) },
        ];
        assert_eq!(
            triangulate(&obs, &TriangulationOptions::default()).unwrap_err(),
            TriangulationError::BehindCamera
        );
    }

    #[test]
    fn five_view_noise_stays_within_footprint_bound() {
        let cam = camera();
        let depth = 8.0;
        let poses: Vec<Pose> = (0..5)
            .map(|k| looking_down(Vector3::new(k as f64 * 1.5, 0.2 * k as f64, 0.0)))
            .collect();
        let x = Vector3::new(3.0, 0.5, depth);
        let sigma = 0.5;
        // One pixel of a single ray spans depth / fx metres at the scene.
        let footprint = sigma * depth / cam.fx;
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials = 200;
        let mut sq = 0.0;
        for _ in 0..trials {
            let pixels: Vec<Vector2<f64>> = poses
                .iter()
                .map(|p| {
                    cam.project(&x, p).unwrap()
                        + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng))
                })
                .collect();
            let obs: Vec<Observation> = poses
                .iter()
                .zip(&pixels)
                .map(|(p, px)| Observation { pose: p, camera: &cam, pixel: *px })
                .collect();
            let (est, _) = triangulate(&obs, &TriangulationOptions::default()).unwrap();
            sq += (est - x).norm_squared();
        }
        let rms = (sq / trials as f64).sqrt();
        assert!(rms < 5.0 * footprint, "rms {rms} footprint {footprint}");
    }
}
