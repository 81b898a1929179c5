use nalgebra::{Matrix6, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::pose::{skew, Pose};

/// Camera-to-vehicle-body offset `ᵖT_c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigExtrinsics {
    pub transform: Pose,
}

impl Default for RigExtrinsics {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigExtrinsics {
    pub fn identity() -> Self {
        RigExtrinsics {
            transform: Pose::identity(),
        }
    }

    /// Camera mounted under the vehicle, rotated 90° about the body Z axis
    /// and displaced by `offset` (camera origin in body coordinates).
    pub fn rotated_mount(offset: Vector3<f64>) -> Self {
        let r = UnitQuaternion::from_scaled_axis(Vector3::z() * std::f64::consts::FRAC_PI_2);
        RigExtrinsics {
            transform: Pose::new(r, offset),
        }
    }

    /// Camera pose of a vehicle pose: `(ᵖT_c)⁻¹ · ᵖT_w`.
    pub fn camera_from_vehicle(&self, vehicle: &Pose) -> Pose {
        self.transform.inverse().compose(vehicle)
    }

    /// Vehicle pose of a camera pose: `ᵖT_c · ᶜT_w`.
    pub fn vehicle_from_camera(&self, camera: &Pose) -> Pose {
        self.transform.compose(camera)
    }

    /// Camera prior and the Jacobian of that prior (tangent of the output)
    /// with respect to a tangent increment of the rig transform.
    pub fn camera_from_vehicle_with_jacobian(&self, vehicle: &Pose) -> (Pose, Matrix6<f64>) {
        let out = self.camera_from_vehicle(vehicle);
        let rt = self.transform.rotation_matrix().transpose();
        let lever = vehicle.translation() - self.transform.translation();
        let mut j = Matrix6::zeros();
        j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-rt));
        j.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(rt * skew(&lever)));
        j.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-rt));
        (out, j)
    }
}

/// Camera-frame prior `ᶜ'T_w` of a navigation pose.
pub fn nav_to_camera_prior(nav_pose: &Pose, rig: &RigExtrinsics) -> Pose {
    rig.camera_from_vehicle(nav_pose)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector6};

    #[test]
    fn identity_rig_passes_through() {
        let nav = Pose::new(
            UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3),
            Vector3::new(4.0, 5.0, 6.0),
        );
        let cam = nav_to_camera_prior(&nav, &RigExtrinsics::identity());
        assert_eq!(cam.translation(), nav.translation());
        assert!(cam.angle_to(&nav) < 1e-15);
    }

    #[test]
    fn ninety_degree_mount_on_identity_nav() {
        let rig = RigExtrinsics::rotated_mount(Vector3::zeros());
        let cam = nav_to_camera_prior(&Pose::identity(), &rig);
        // Hand-computed: inverse of Rz(90°) has quaternion (0, 0, -sin45°, cos45°).
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let q = cam.quaternion_xyzw();
        assert!((q[0]).abs() < 1e-15 && (q[1]).abs() < 1e-15);
        assert!((q[2] + s).abs() < 1e-15 && (q[3] - s).abs() < 1e-15);
        let expected = Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((cam.rotation_matrix() - expected).abs().max() < 1e-15);
    }

    #[test]
    fn round_trip_recovers_camera_pose() {
        let rig = RigExtrinsics {
            transform: Pose::new(
                UnitQuaternion::from_euler_angles(0.02, -0.01, 1.57),
                Vector3::new(0.4, -0.1, 0.3),
            ),
        };
        let cam = Pose::new(
            UnitQuaternion::from_euler_angles(3.0, 0.1, -0.7),
            Vector3::new(-12.0, 33.0, 990.0),
        );
        let nav = rig.vehicle_from_camera(&cam);
        let back = nav_to_camera_prior(&nav, &rig);
        assert!(back.angle_to(&cam) < 1e-12);
        assert!((back.translation() - cam.translation()).norm() < 1e-12);
    }

    #[test]
    fn rig_jacobian_matches_finite_differences() {
        let rig = RigExtrinsics {
            transform: Pose::new(
                UnitQuaternion::from_euler_angles(0.2, -0.3, 1.2),
                Vector3::new(0.4, -0.1, 0.3),
            ),
        };
        let nav = Pose::new(
            UnitQuaternion::from_euler_angles(0.5, 0.1, -2.0),
            Vector3::new(10.0, -4.0, 7.0),
        );
        let (out, j) = rig.camera_from_vehicle_with_jacobian(&nav);
        let h = 1e-6;
        for k in 0..6 {
            let mut d = Vector6::zeros();
            d[k] = h;
            let p = RigExtrinsics { transform: rig.transform.retract(&d) }.camera_from_vehicle(&nav);
            let m = RigExtrinsics { transform: rig.transform.retract(&(-d)) }.camera_from_vehicle(&nav);
            let dr_p = (p.rotation() * out.rotation().inverse()).scaled_axis();
            let dr_m = (m.rotation() * out.rotation().inverse()).scaled_axis();
            let dr = (dr_p - dr_m) / (2.0 * h);
            let dt = (p.translation() - m.translation()) / (2.0 * h);
            let col = Vector6::new(dr.x, dr.y, dr.z, dt.x, dt.y, dt.z);
            assert!((col - j.column(k)).norm() < 1e-6, "col {k}: {col} vs {}", j.column(k));
        }
    }
}
