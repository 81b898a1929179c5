use nalgebra::{Matrix3, Matrix4, Matrix6, Quaternion, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// Skew-symmetric cross-product matrix, `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rigid transform mapping points from a source frame (usually the world)
/// into a target frame (usually a camera or the vehicle body).
///
/// The quaternion is stored scalar-last (`x, y, z, w`) everywhere in this
/// crate, including every file format.
///
/// Tangent-space convention used by all Jacobians: a 6-vector `[ω; v]`
/// updates a pose as `R ← Exp(ω)·R`, `t ← t + v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    q: [f64; 4],
    t: [f64; 3],
}

impl From<PoseRepr> for Pose {
    fn from(r: PoseRepr) -> Self {
        // Stored values are written from normalized quaternions; keep them
        // bit-exact so checkpoints reproduce identical results.
        let q = Quaternion::new(r.q[3], r.q[0], r.q[1], r.q[2]);
        Pose {
            rotation: UnitQuaternion::new_unchecked(q),
            translation: Vector3::from(r.t),
        }
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        PoseRepr {
            q: p.quaternion_xyzw(),
            t: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation: UnitQuaternion::new_normalize(rotation.into_inner()),
            translation,
        }
    }

    pub fn identity() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose from a scalar-last quaternion, normalizing it.
    pub fn from_xyzw(q: [f64; 4], translation: Vector3<f64>) -> Self {
        Self::new(
            UnitQuaternion::new_unchecked(Quaternion::new(q[3], q[0], q[1], q[2])),
            translation,
        )
    }

    /// Like [`Pose::from_xyzw`], but keeps the coefficients bit for bit when
    /// they are already unit length (to rounding).
    pub fn from_unit_xyzw(q: [f64; 4], translation: Vector3<f64>) -> Self {
        let n2 = q.iter().map(|v| v * v).sum::<f64>();
        if (n2 - 1.0).abs() < 1e-12 {
            Pose {
                rotation: UnitQuaternion::new_unchecked(Quaternion::new(q[3], q[0], q[1], q[2])),
                translation,
            }
        } else {
            Self::from_xyzw(q, translation)
        }
    }

    pub fn from_rotation_matrix(r: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix(r);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    /// World-to-local pose of a frame whose orientation (local-to-world) is
    /// `world_from_local` and whose origin sits at `center` in the world.
    pub fn from_center(world_from_local: UnitQuaternion<f64>, center: Vector3<f64>) -> Self {
        let rotation = world_from_local.inverse();
        let translation = -(rotation * center);
        Self::new(rotation, translation)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn quaternion_xyzw(&self) -> [f64; 4] {
        let c = &self.rotation.as_ref().coords;
        [c.x, c.y, c.z, c.w]
    }

    /// `self ∘ other`: maps through `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(inv, -(inv * self.translation))
    }

    /// `self ∘ other⁻¹`, the transform from `other`'s target frame into
    /// `self`'s target frame.
    pub fn between(&self, other: &Pose) -> Pose {
        let rotation = self.rotation * other.rotation.inverse();
        Pose::new(rotation, self.translation - rotation * other.translation)
    }

    /// [`Pose::between`] together with its Jacobians with respect to both
    /// arguments, all expressed in the crate tangent convention.
    pub fn between_with_jacobians(&self, other: &Pose) -> (Pose, Matrix6<f64>, Matrix6<f64>) {
        let rel = self.between(other);
        let r = rel.rotation_matrix();
        let mut ja = Matrix6::identity();
        ja.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&skew(&(r * other.translation)));
        let mut jb = Matrix6::zeros();
        jb.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-r));
        jb.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(-r * skew(&other.translation)));
        jb.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-r));
        (rel, ja, jb)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Origin of the target frame expressed in the source frame (the camera
    /// centre for a world-to-camera pose).
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    /// Applies a tangent increment `[ω; v]`.
    pub fn retract(&self, delta: &Vector6<f64>) -> Pose {
        let w = Vector3::new(delta[0], delta[1], delta[2]);
        let v = Vector3::new(delta[3], delta[4], delta[5]);
        let dq = UnitQuaternion::from_scaled_axis(w);
        Pose::new(dq * self.rotation, self.translation + v)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Rotation angle of `self ∘ other⁻¹` in radians.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    /// Distance between the two frame origins in the source frame.
    pub fn center_distance(&self, other: &Pose) -> f64 {
        (self.center() - other.center()).norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pose_from(rv: [f64; 3], t: [f64; 3]) -> Pose {
        Pose::new(
            UnitQuaternion::from_scaled_axis(Vector3::from(rv)),
            Vector3::from(t),
        )
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform3(-3.0f64..3.0),
            prop::array::uniform3(-50.0f64..50.0),
        )
            .prop_map(|(rv, t)| pose_from(rv, t))
    }

    fn assert_same(a: &Pose, b: &Pose, tol: f64) {
        assert!(a.angle_to(b) < tol, "angle {}", a.angle_to(b));
        assert!(
            (a.translation() - b.translation()).norm() < tol,
            "translation {}",
            (a.translation() - b.translation()).norm()
        );
    }

    #[test]
    fn identity_composition() {
        let p = Pose::identity().compose(&Pose::identity());
        assert_same(&p, &Pose::identity(), 0.0 + 1e-15);
    }

    #[test]
    fn serde_keeps_bits() {
        let p = pose_from([0.3, -0.2, 1.1], [1.0 / 3.0, 2.5, -7.0]);
        let s = serde_json::to_string(&p).unwrap();
        let back: Pose = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn center_round_trip() {
        let q = UnitQuaternion::from_euler_angles(0.1, -0.4, 2.0);
        let c = Vector3::new(3.0, -4.0, 12.0);
        let p = Pose::from_center(q, c);
        assert!((p.center() - c).norm() < 1e-12);
        assert!(p.transform_point(&c).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn inverse_law(p in arb_pose()) {
            let id = p.compose(&p.inverse());
            prop_assert!(id.angle_to(&Pose::identity()) < 1e-9);
            prop_assert!(id.translation().norm() < 1e-9);
            let id = p.inverse().compose(&p);
            prop_assert!(id.angle_to(&Pose::identity()) < 1e-9);
            prop_assert!(id.translation().norm() < 1e-9);
        }

        #[test]
        fn associativity(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!(l.angle_to(&r) < 1e-9);
            prop_assert!((l.translation() - r.translation()).norm() < 1e-9);
        }

        #[test]
        fn compose_matches_homogeneous_product(a in arb_pose(), b in arb_pose()) {
            let m = a.to_homogeneous() * b.to_homogeneous();
            let c = a.compose(&b).to_homogeneous();
            prop_assert!((m - c).abs().max() < 1e-9);
        }

        #[test]
        fn quaternion_stays_unit(a in arb_pose(), b in arb_pose()) {
            let c = a.compose(&b).between(&a).inverse();
            prop_assert!((c.rotation().as_ref().norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn between_is_compose_with_inverse(a in arb_pose(), b in arb_pose()) {
            let x = a.between(&b);
            let y = a.compose(&b.inverse());
            prop_assert!(x.angle_to(&y) < 1e-9);
            prop_assert!((x.translation() - y.translation()).norm() < 1e-9);
        }
    }

    #[test]
    fn between_jacobians_match_finite_differences() {
        let a = pose_from([0.4, -1.2, 0.3], [2.0, -1.0, 5.0]);
        let b = pose_from([-0.7, 0.2, 0.9], [-3.0, 4.0, 1.0]);
        let (rel, ja, jb) = a.between_with_jacobians(&b);
        let h = 1e-6;
        // Tangent difference of two nearby poses.
        let diff = |p: &Pose, q: &Pose| -> Vector6<f64> {
            let dr = (p.rotation() * q.rotation().inverse()).scaled_axis();
            let dt = p.translation() - q.translation();
            Vector6::new(dr.x, dr.y, dr.z, dt.x, dt.y, dt.z)
        };
        for k in 0..6 {
            let mut d = Vector6::zeros();
            d[k] = h;
            let plus = a.retract(&d).between(&b);
            let minus = a.retract(&(-d)).between(&b);
            let col = (diff(&plus, &rel) - diff(&minus, &rel)) / (2.0 * h);
            assert!((col - ja.column(k)).norm() < 1e-6, "ja col {k}");
            let plus = a.between(&b.retract(&d));
            let minus = a.between(&b.retract(&(-d)));
            let col = (diff(&plus, &rel) - diff(&minus, &rel)) / (2.0 * h);
            assert!((col - jb.column(k)).norm() < 1e-6, "jb col {k}");
        }
    }
}
