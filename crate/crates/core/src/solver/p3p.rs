//! Absolute camera pose from 2D-3D correspondences: a three-point minimal
//! solver (Grunert's distance formulation) inside RANSAC, then
//! Gauss-Newton on the reprojection error.

use nalgebra::{Matrix3, Matrix6, UnitQuaternion, Vector2, Vector3, Vector6};
use rand::Rng;

use super::poly;
use super::ransac::{ransac, RansacOptions};
use crate::geom::{CameraIntrinsics, Pose};

/// Rigid transform `X_cam = R·X_world + t` best aligning three or more point
/// pairs (Kabsch).
pub fn align_points(world: &[Vector3<f64>], cam: &[Vector3<f64>]) -> Option<Pose> {
    let n = world.len() as f64;
    let cw = world.iter().sum::<Vector3<f64>>() / n;
    let cc = cam.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (w, c) in world.iter().zip(cam) {
        h += (w - cw) * (c - cc).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let v = svd.v_t?.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let t = cc - r * cw;
    Some(Pose::from_rotation_matrix(&r, t))
}

/// Up to four camera poses (world→camera) consistent with three unit
/// bearings and their world points.
pub fn p3p(bearings: &[Vector3<f64>; 3], world: &[Vector3<f64>; 3]) -> Vec<Pose> {
    let [j1, j2, j3] = bearings.map(|b| b.normalize());
    let a2 = (world[1] - world[2]).norm_squared();
    let b2 = (world[0] - world[2]).norm_squared();
    let c2 = (world[0] - world[1]).norm_squared();
    if a2 < 1e-18 || b2 < 1e-18 || c2 < 1e-18 {
        return Vec::new();
    }
    let ca = j2.dot(&j3);
    let cb = j1.dot(&j3);
    let cg = j1.dot(&j2);
    let k1 = a2 / b2;
    let k2 = c2 / b2;
    // With s2 = u·s1, s3 = v·s1:
    //   u² + v² − 2uv·cα = k1 (1 + v² − 2v·cβ)
    //   1 + u² − 2u·cγ   = k2 (1 + v² − 2v·cβ)
    // Both are monic quadratics in u; eliminate u.
    let base = [1.0, -2.0 * cb, 1.0];
    let p1 = [0.0, -2.0 * ca];
    let p0 = poly::sub(&[0.0, 0.0, 1.0], &poly::scale(&base, k1));
    let q1 = [-2.0 * cg];
    let q0 = poly::sub(&[1.0], &poly::scale(&base, k2));
    let dp1 = poly::sub(&p1, &q1);
    let dp0 = poly::sub(&p0, &q0);
    let quartic = poly::add(
        &poly::sub(&poly::mul(&dp0, &dp0), &poly::mul(&poly::mul(&q1, &dp0), &dp1)),
        &poly::mul(&q0, &poly::mul(&dp1, &dp1)),
    );
    let mut out = Vec::new();
    for v in poly::real_roots(&quartic) {
        if v <= 0.0 {
            continue;
        }
        let d1 = poly::eval(&dp1, v);
        let d0 = poly::eval(&dp0, v);
        let mut us = Vec::new();
        if d1.abs() > 1e-12 {
            us.push(-d0 / d1);
        } else {
            // Degenerate elimination: solve the second quadratic directly.
            let qq0 = poly::eval(&q0, v);
            let disc = cg * cg - qq0;
            if disc >= 0.0 {
                us.push(cg + disc.sqrt());
                us.push(cg - disc.sqrt());
            }
        }
        for u in us {
            if u <= 0.0 {
                continue;
            }
            let (u, v) = polish(u, v, ca, cb, cg, k1, k2);
            let denom = 1.0 + v * v - 2.0 * v * cb;
            if denom <= 0.0 {
                continue;
            }
            let s1 = (b2 / denom).sqrt();
            let cam = [j1 * s1, j2 * (u * s1), j3 * (v * s1)];
            if let Some(p) = align_points(world, &cam) {
                out.push(p);
            }
        }
    }
    out
}

/// Newton iterations on the two distance-ratio equations; the elimination
/// loses accuracy near repeated roots of the quartic.
fn polish(mut u: f64, mut v: f64, ca: f64, cb: f64, cg: f64, k1: f64, k2: f64) -> (f64, f64) {
    let f = |u: f64, v: f64| {
        let base = 1.0 + v * v - 2.0 * v * cb;
        (
            u * u + v * v - 2.0 * u * v * ca - k1 * base,
            1.0 + u * u - 2.0 * u * cg - k2 * base,
        )
    };
    for _ in 0..5 {
        let (f1, f2) = f(u, v);
        let j11 = 2.0 * u - 2.0 * v * ca;
        let j12 = 2.0 * v - 2.0 * u * ca - k1 * (2.0 * v - 2.0 * cb);
        let j21 = 2.0 * u - 2.0 * cg;
        let j22 = -k2 * (2.0 * v - 2.0 * cb);
        let det = j11 * j22 - j12 * j21;
        if det.abs() < 1e-14 {
            break;
        }
        let du = (f1 * j22 - f2 * j12) / det;
        let dv = (j11 * f2 - j21 * f1) / det;
        let (nu, nv) = (u - du, v - dv);
        let (g1, g2) = f(nu, nv);
        if !(g1 * g1 + g2 * g2 <= f1 * f1 + f2 * f2) {
            break;
        }
        u = nu;
        v = nv;
    }
    (u, v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsoluteOptions {
    /// Inlier threshold on reprojection error (px).
    pub max_reproj_px: f64,
    pub min_inliers: usize,
    pub ransac: RansacOptions,
}

impl Default for AbsoluteOptions {
    fn default() -> Self {
        AbsoluteOptions {
            max_reproj_px: 4.0,
            min_inliers: 6,
            ransac: RansacOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbsoluteEstimate {
    pub pose: Pose,
    pub inliers: Vec<bool>,
}

impl AbsoluteEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|b| **b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum AbsolutePoseError {
    #[error("{found} 2D-3D correspondences, at least {required} required")]
    TooFewCorrespondences { found: usize, required: usize },
    #[error("{found} inliers, at least {required} required")]
    TooFewInliers { found: usize, required: usize },
}

fn reprojection_error(cam: &CameraIntrinsics, pose: &Pose, x: &Vector3<f64>, px: &Vector2<f64>) -> f64 {
    match cam.project(x, pose) {
        Some(uv) => (uv - px).norm(),
        None => f64::INFINITY,
    }
}

/// Gauss-Newton (with Levenberg damping) on the reprojection error of the
/// selected correspondences.
pub fn refine_absolute(
    cam: &CameraIntrinsics,
    pose: &Pose,
    world: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    idx: &[usize],
) -> Pose {
    let cost = |p: &Pose| -> f64 {
        idx.iter()
            .map(|&k| {
                let e = reprojection_error(cam, p, &world[k], &pixels[k]);
                e * e
            })
            .sum()
    };
    let mut pose = *pose;
    let mut current = cost(&pose);
    let mut lambda = 1e-6;
    for _ in 0..20 {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for &k in idx {
            if let Some((uv, jp, _, _)) = cam.project_with_jacobians(&world[k], &pose) {
                let r = uv - pixels[k];
                h += jp.transpose() * jp;
                g += jp.transpose() * r;
            }
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut a = h;
            for d in 0..6 {
                a[(d, d)] += lambda * h[(d, d)].max(1e-9);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let cand = pose.retract(&step);
            let c = cost(&cand);
            if c < current {
                let rel = (current - c) / current.max(1e-300);
                pose = cand;
                current = c;
                lambda = (lambda * 0.3).max(1e-12);
                improved = rel > 1e-14;
                break;
            }
            lambda *= 10.0;
        }
        if !improved || current < 1e-24 {
            break;
        }
    }
    pose
}

/// Robust absolute pose of one camera.
pub fn estimate_absolute_pose<R: Rng>(
    cam: &CameraIntrinsics,
    world: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    opts: &AbsoluteOptions,
    rng: &mut R,
) -> Result<AbsoluteEstimate, AbsolutePoseError> {
    let n = world.len();
    let required = opts.min_inliers.max(3);
    if n < required {
        return Err(AbsolutePoseError::TooFewCorrespondences { found: n, required });
    }
    let bearings: Vec<Vector3<f64>> = pixels.iter().map(|p| cam.unproject(p)).collect();
    let angular = opts.max_reproj_px / cam.fx.min(cam.fy);
    let cos_thr = angular.cos();
    let best = ransac(
        n,
        3,
        &opts.ransac,
        rng,
        |s| p3p(&[bearings[s[0]], bearings[s[1]], bearings[s[2]]], &[world[s[0]], world[s[1]], world[s[2]]]),
        |pose| {
            let mut count = 0;
            let mut sum = 0.0;
            for k in 0..n {
                let pc = pose.transform_point(&world[k]);
                let c = pc.dot(&bearings[k]) / pc.norm();
                if pc.z > 0.0 && c > cos_thr {
                    count += 1;
                    sum += 1.0 - c;
                }
            }
            (count, sum)
        },
    );
    let Some((mut pose, _)) = best else {
        return Err(AbsolutePoseError::TooFewInliers { found: 0, required });
    };
    let classify = |p: &Pose| -> Vec<bool> {
        (0..n)
            .map(|k| reprojection_error(cam, p, &world[k], &pixels[k]) < opts.max_reproj_px)
            .collect()
    };
    let mut inliers = classify(&pose);
    for _ in 0..3 {
        let idx: Vec<usize> = (0..n).filter(|&k| inliers[k]).collect();
        if idx.len() < 3 {
            break;
        }
        let refined = refine_absolute(cam, &pose, world, pixels, &idx);
        let next = classify(&refined);
        if next.iter().filter(|b| **b).count() < idx.len() {
            break;
        }
        let done = next == inliers;
        pose = refined;
        inliers = next;
        if done {
            break;
        }
    }
    let found = inliers.iter().filter(|b| **b).count();
    if found < required {
        return Err(AbsolutePoseError::TooFewInliers { found, required });
    }
    Ok(AbsoluteEstimate { pose, inliers })
}

/// Rotation-only helper used by tests and callers that need a quick
/// orientation comparison.
pub fn rotation_angle(a: &Pose, b: &Pose) -> f64 {
    let q: UnitQuaternion<f64> = a.rotation() * b.rotation().inverse();
    q.angle()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn camera() -> CameraIntrinsics {
        let mut c = CameraIntrinsics::with_horizontal_fov(4104, 3006, 88.0);
        c.k = [0.01, -0.003, 0.0005, 0.0];
        c
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        Pose::from_center(
            UnitQuaternion::from_euler_angles(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(-3.0..3.0),
            ),
            Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), -8.0),
        )
    }

    /// Nearly planar seafloor points visible from the camera.
    fn visible_points(rng: &mut ChaCha8Rng, pose: &Pose, cam: &CameraIntrinsics, n: usize) -> Vec<Vector3<f64>> {
        let c = pose.center();
        let mut out = Vec::new();
        while out.len() < n {
            let p = Vector3::new(
                c.x + rng.random_range(-6.0..6.0),
                c.y + rng.random_range(-6.0..6.0),
                rng.random_range(-0.3..0.3),
            );
            if let Some(uv) = cam.project(&p, pose) {
                if cam.contains(&uv, 0.0) {
                    out.push(p);
                }
            }
        }
        out
    }

    #[test]
    fn minimal_solver_contains_truth() {
        let cam = camera();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let pts = visible_points(&mut rng, &pose, &cam, 3);
            let b: Vec<Vector3<f64>> = pts.iter().map(|p| pose.transform_point(p).normalize()).collect();
            let sols = p3p(&[b[0], b[1], b[2]], &[pts[0], pts[1], pts[2]]);
            let best = sols
                .iter()
                .map(|s| rotation_angle(s, &pose) + (s.translation() - pose.translation()).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-7, "best {best}");
        }
    }

    #[test]
    fn noiseless_registration() {
        let cam = camera();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pose = random_pose(&mut rng);
        let pts = visible_points(&mut rng, &pose, &cam, 40);
        let px: Vec<Vector2<f64>> = pts.iter().map(|p| cam.project(p, &pose).unwrap()).collect();
        let est = estimate_absolute_pose(&cam, &pts, &px, &AbsoluteOptions::default(), &mut rng).unwrap();
        assert_eq!(est.inlier_count(), 40);
        assert!(rotation_angle(&est.pose, &pose) < 1e-6);
        assert!(est.pose.center_distance(&pose) < 1e-6);
    }

    #[test]
    fn five_correspondences_fail() {
        let cam = camera();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pose = random_pose(&mut rng);
        let pts = visible_points(&mut rng, &pose, &cam, 5);
        let px: Vec<Vector2<f64>> = pts.iter().map(|p| cam.project(p, &pose).unwrap()).collect();
        let err = estimate_absolute_pose(&cam, &pts, &px, &AbsoluteOptions::default(), &mut rng).unwrap_err();
        assert_eq!(err, AbsolutePoseError::TooFewCorrespondences { found: 5, required: 6 });
    }
}
