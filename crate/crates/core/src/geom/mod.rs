//! Rigid transforms, the fisheye camera, triangulation and the pose residual.

pub mod camera;
pub mod pose;
pub mod residual;
pub mod rig;
pub mod triangulate;

pub use camera::{CameraIntrinsics, IntrinsicsError, INTRINSIC_PARAMS};
pub use pose::{skew, Pose};
pub use residual::{pose_residual, pose_residual_with_jacobians, ResidualWeights};
pub use rig::{nav_to_camera_prior, RigExtrinsics};
pub use triangulate::{
    triangulate, Observation, TriangulationError, TriangulationOptions, TriangulationStatus,
};
