//! File formats: navigation CSV, binary matches, reconstruction output,
//! metrics and SVG plots.

mod matches_bin;
mod navigation;
mod plots;
mod reconstruction;

use std::path::{Path, PathBuf};

pub use matches_bin::{read_matches, write_matches, HEADER_LEN as MATCH_HEADER_LEN};
pub use navigation::{
    read_navigation, read_navigation_with_anchor, read_records, write_records, GeoAnchor, NavRecord, Navigation,
    EARTH_RADIUS,
};
pub use plots::{connectivity_svg, constraint_histogram_svg, trajectory_svg};
pub use reconstruction::{
    read_camera, read_landmarks, read_poses, read_scene, write_camera, write_landmarks, write_poses, write_scene,
    CameraModel, CAMERA_FILE, LANDMARKS_FILE, POSES_FILE,
};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("{0}")]
    Invalid(String),
}

impl IoError {
    pub fn at(path: &Path, source: std::io::Error) -> Self {
        IoError::File {
            path: path.to_path_buf(),
            source,
        }
    }
}
