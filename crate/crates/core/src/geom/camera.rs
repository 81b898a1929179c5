use nalgebra::{Matrix2x3, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::pose::{skew, Pose};

/// Number of intrinsic parameters: fx, fy, cx, cy, k1..k4.
pub const INTRINSIC_PARAMS: usize = 8;

pub type IntrinsicsJacobian = SMatrix<f64, 2, INTRINSIC_PARAMS>;

/// Equidistant fisheye camera with a 4-term odd polynomial on the incidence
/// angle: `θ_d = θ (1 + k1 θ² + k2 θ⁴ + k3 θ⁶ + k4 θ⁸)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k: [f64; 4],
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IntrinsicsError {
    #[error("focal lengths must be positive (fx={fx}, fy={fy})")]
    NonPositiveFocal { fx: f64, fy: f64 },
    #[error("principal point ({cx}, {cy}) outside the {width}x{height} image")]
    PrincipalPointOutside { cx: f64, cy: f64, width: u32, height: u32 },
}

/// Below this ratio of off-axis radius to depth the closed forms switch to
/// their series limits.
const AXIS_EPS: f64 = 1e-7;

impl CameraIntrinsics {
    /// Camera of the given size whose horizontal field of view is `hfov_deg`
    /// under the undistorted equidistant model.
    pub fn with_horizontal_fov(width: u32, height: u32, hfov_deg: f64) -> Self {
        let f = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0);
        CameraIntrinsics {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            k: [0.0; 4],
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), IntrinsicsError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(IntrinsicsError::NonPositiveFocal { fx: self.fx, fy: self.fy });
        }
        let inside = |c: f64, n: u32| c >= 0.0 && c < n as f64;
        if !inside(self.cx, self.width) || !inside(self.cy, self.height) {
            return Err(IntrinsicsError::PrincipalPointOutside {
                cx: self.cx,
                cy: self.cy,
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    pub fn params(&self) -> [f64; INTRINSIC_PARAMS] {
        [
            self.fx, self.fy, self.cx, self.cy, self.k[0], self.k[1], self.k[2], self.k[3],
        ]
    }

    pub fn with_params(&self, p: &[f64; INTRINSIC_PARAMS]) -> Self {
        CameraIntrinsics {
            fx: p[0],
            fy: p[1],
            cx: p[2],
            cy: p[3],
            k: [p[4], p[5], p[6], p[7]],
            width: self.width,
            height: self.height,
        }
    }

    pub fn contains(&self, pixel: &Vector2<f64>, margin: f64) -> bool {
        pixel.x >= margin
            && pixel.y >= margin
            && pixel.x <= self.width as f64 - margin
            && pixel.y <= self.height as f64 - margin
    }

    fn distort(&self, theta: f64) -> (f64, f64) {
        let t2 = theta * theta;
        let [k1, k2, k3, k4] = self.k;
        let poly = 1.0 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4)));
        let dpoly = 1.0 + t2 * (3.0 * k1 + t2 * (5.0 * k2 + t2 * (7.0 * k3 + t2 * 9.0 * k4)));
        (theta * poly, dpoly)
    }

    /// Projects a camera-frame point; `None` when it is not in front of the
    /// camera (z ≤ 0).
    pub fn project_camera(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z <= 0.0 {
            return None;
        }
        let s = self.radial_scale(p);
        Some(Vector2::new(self.fx * s * p.x + self.cx, self.fy * s * p.y + self.cy))
    }

    /// `θ_d / ρ` where `ρ` is the off-axis distance of the point.
    fn radial_scale(&self, p: &Vector3<f64>) -> f64 {
        let rho = p.x.hypot(p.y);
        if rho < AXIS_EPS * p.z {
            let a = rho / p.z;
            return (1.0 + (self.k[0] - 1.0 / 3.0) * a * a) / p.z;
        }
        let theta = rho.atan2(p.z);
        self.distort(theta).0 / rho
    }

    /// Projection with Jacobians w.r.t. the camera-frame point and the
    /// intrinsic parameters.
    pub fn project_camera_with_jacobians(
        &self,
        p: &Vector3<f64>,
    ) -> Option<(Vector2<f64>, Matrix2x3<f64>, IntrinsicsJacobian)> {
        if p.z <= 0.0 {
            return None;
        }
        let (x, y, z) = (p.x, p.y, p.z);
        let rho2 = x * x + y * y;
        let rho = rho2.sqrt();
        let r2 = rho2 + z * z;
        let (s, g, ds_dz, theta, x_over_rho, y_over_rho) = if rho < AXIS_EPS * z {
            let a = rho / z;
            let c = self.k[0] - 1.0 / 3.0;
            let s = (1.0 + c * a * a) / z;
            let g = 2.0 * c / (z * z * z);
            // ds/dz = -θd'/(ρ²+z²), with θd' → 1 on the axis.
            (s, g, -1.0 / r2, a, 1.0, 0.0)
        } else {
            let theta = rho.atan2(z);
            let (td, dtd) = self.distort(theta);
            let s = td / rho;
            let g = dtd * z / (rho2 * r2) - td / (rho2 * rho);
            (s, g, -dtd / r2, theta, x / rho, y / rho)
        };
        let u = self.fx * s * x + self.cx;
        let v = self.fy * s * y + self.cy;
        let jp = Matrix2x3::new(
            self.fx * (s + x * x * g),
            self.fx * x * y * g,
            self.fx * x * ds_dz,
            self.fy * x * y * g,
            self.fy * (s + y * y * g),
            self.fy * y * ds_dz,
        );
        let mut jk = IntrinsicsJacobian::zeros();
        jk[(0, 0)] = s * x;
        jk[(1, 1)] = s * y;
        jk[(0, 2)] = 1.0;
        jk[(1, 3)] = 1.0;
        let mut tp = theta;
        let t2 = theta * theta;
        for i in 0..4 {
            tp *= t2;
            jk[(0, 4 + i)] = self.fx * x_over_rho * tp;
            jk[(1, 4 + i)] = self.fy * y_over_rho * tp;
        }
        Some((Vector2::new(u, v), jp, jk))
    }

    /// Projects a world point seen by a camera with world-to-camera pose `pose`.
    pub fn project(&self, point: &Vector3<f64>, pose: &Pose) -> Option<Vector2<f64>> {
        self.project_camera(&pose.transform_point(point))
    }

    /// Projection of a world point with Jacobians w.r.t. the pose tangent
    /// (2×6), the point (2×3) and the intrinsics (2×8).
    pub fn project_with_jacobians(
        &self,
        point: &Vector3<f64>,
        pose: &Pose,
    ) -> Option<(Vector2<f64>, SMatrix<f64, 2, 6>, Matrix2x3<f64>, IntrinsicsJacobian)> {
        let rx = pose.rotation() * point;
        let pc = rx + pose.translation();
        let (uv, jp, jk) = self.project_camera_with_jacobians(&pc)?;
        let mut jpose = SMatrix::<f64, 2, 6>::zeros();
        jpose
            .fixed_view_mut::<2, 3>(0, 0)
            .copy_from(&(jp * (-skew(&rx))));
        jpose.fixed_view_mut::<2, 3>(0, 3).copy_from(&jp);
        let jpoint = jp * pose.rotation_matrix();
        Some((uv, jpose, jpoint, jk))
    }

    /// Unit bearing ray (camera frame) of a pixel; inverts the distortion
    /// polynomial by Newton iteration.
    pub fn unproject(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let mx = (pixel.x - self.cx) / self.fx;
        let my = (pixel.y - self.cy) / self.fy;
        let td = mx.hypot(my);
        if td == 0.0 {
            return Vector3::z();
        }
        let theta = self.undistort_angle(td);
        let (st, ct) = theta.sin_cos();
        Vector3::new(st * mx / td, st * my / td, ct)
    }

    fn undistort_angle(&self, td: f64) -> f64 {
        let mut theta = td;
        for _ in 0..50 {
            let (f, df) = self.distort(theta);
            let step = (f - td) / df;
            theta -= step;
            if step.abs() < 1e-15 * theta.abs().max(1e-300) {
                break;
            }
        }
        theta
    }

    /// Half field of view (radians) towards the nearest image border.
    pub fn min_half_fov(&self) -> f64 {
        let probes = [
            Vector2::new(0.0, self.cy),
            Vector2::new(self.width as f64, self.cy),
            Vector2::new(self.cx, 0.0),
            Vector2::new(self.cx, self.height as f64),
        ];
        probes
            .iter()
            .map(|p| self.unproject(p).z.acos())
            .fold(f64::INFINITY, f64::min)
    }
}
