use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::pose::{skew, Pose};

/// Per-block weights applied to the rotational and translational parts of
/// the pose residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResidualWeights {
    pub rot_weight: Matrix3<f64>,
    pub trans_weight: Matrix3<f64>,
}

impl Default for ResidualWeights {
    fn default() -> Self {
        Self::identity()
    }
}

impl ResidualWeights {
    pub fn identity() -> Self {
        Self::isotropic(1.0, 1.0)
    }

    pub fn isotropic(rot: f64, trans: f64) -> Self {
        ResidualWeights {
            rot_weight: Matrix3::identity() * rot,
            trans_weight: Matrix3::identity() * trans,
        }
    }

    pub fn zero() -> Self {
        Self::isotropic(0.0, 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.rot_weight.iter().all(|v| *v == 0.0) && self.trans_weight.iter().all(|v| *v == 0.0)
    }

    /// Checks symmetry (1e-12) and positive semi-definiteness.
    pub fn validate(&self) -> Result<(), String> {
        for (name, m) in [("rot_weight", &self.rot_weight), ("trans_weight", &self.trans_weight)] {
            if (m - m.transpose()).abs().max() > 1e-12 {
                return Err(format!("{name} is not symmetric"));
            }
            let eig = m.symmetric_eigenvalues();
            if eig.iter().any(|e| *e < -1e-12) {
                return Err(format!("{name} has a negative eigenvalue"));
            }
        }
        Ok(())
    }
}

fn rotation_block(rel: &Pose) -> (Vector3<f64>, Matrix3<f64>) {
    let q = rel.rotation().as_ref();
    let sign = if q.w < 0.0 { -1.0 } else { 1.0 };
    let v = Vector3::new(q.i, q.j, q.k);
    let vec = v * (2.0 * sign);
    let jac = (Matrix3::identity() * q.w - skew(&v)) * sign;
    (vec, jac)
}

/// 6-dimensional residual `[ρ_r·2·vec(q); ρ_t·t]` of `rel = a ∘ b⁻¹`.
///
/// The quaternion sign is fixed so that its scalar part is non-negative.
pub fn pose_residual(a: &Pose, b: &Pose, w: &ResidualWeights) -> Vector6<f64> {
    residual_of_relative(&a.between(b), w)
}

/// Residual of an already-formed relative pose.
pub fn residual_of_relative(rel: &Pose, w: &ResidualWeights) -> Vector6<f64> {
    let (vec, _) = rotation_block(rel);
    let rr = w.rot_weight * vec;
    let rt = w.trans_weight * rel.translation();
    Vector6::new(rr.x, rr.y, rr.z, rt.x, rt.y, rt.z)
}

/// Residual of a relative pose and its Jacobian with respect to that
/// relative pose's tangent.
pub fn residual_of_relative_with_jacobian(
    rel: &Pose,
    w: &ResidualWeights,
) -> (Vector6<f64>, Matrix6<f64>) {
    let (vec, jrot) = rotation_block(rel);
    let rr = w.rot_weight * vec;
    let rt = w.trans_weight * rel.translation();
    let mut j = Matrix6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(w.rot_weight * jrot));
    j.fixed_view_mut::<3, 3>(3, 3).copy_from(&w.trans_weight);
    (Vector6::new(rr.x, rr.y, rr.z, rt.x, rt.y, rt.z), j)
}

/// [`pose_residual`] with Jacobians with respect to `a` and `b`.
pub fn pose_residual_with_jacobians(
    a: &Pose,
    b: &Pose,
    w: &ResidualWeights,
) -> (Vector6<f64>, Matrix6<f64>, Matrix6<f64>) {
    let (rel, ja, jb) = a.between_with_jacobians(b);
    let (r, jr) = residual_of_relative_with_jacobian(&rel, w);
    (r, jr * ja, jr * jb)
}
