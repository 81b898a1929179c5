//! Dataset directories: what the simulator writes and the pipeline reads.
//!
//! ```text
//! navigation.csv  matches.bin  camera.json     pipeline input
//! ground_truth/truth.csv  ground_truth/labels.json   evaluation only
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::{PipelineInput, SimulationConfig};
use crate::geom::Pose;
use crate::io::{self as fio, CameraModel, GeoAnchor, IoError, NavRecord, Navigation};
use crate::matches::MatchSet;
use crate::survey_sim::{corrupt_navigation, generate_survey, render_observations, SimError, SimulatedMatches, SurveyTruth};

pub const NAVIGATION_FILE: &str = "navigation.csv";
pub const MATCHES_FILE: &str = "matches.bin";
pub const CAMERA_INPUT: &str = "camera.json";
pub const GROUND_TRUTH_DIR: &str = "ground_truth";
pub const TRUTH_FILE: &str = "truth.csv";
pub const LABELS_FILE: &str = "labels.json";

/// A simulated survey with its noisy navigation.
#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub truth: SurveyTruth,
    pub sim: SimulatedMatches,
    /// Noisy world→vehicle navigation.
    pub navigation: Vec<Pose>,
}

/// Generates the survey of `cfg.survey` and corrupts it with `cfg.noise`
/// drawn from `seed`.
pub fn simulate(cfg: &SimulationConfig, seed: u64) -> Result<SimulatedDataset, SimError> {
    cfg.noise.validate()?;
    let truth = generate_survey(&cfg.survey)?;
    let sim = render_observations(&truth, &cfg.noise, seed);
    let navigation = corrupt_navigation(&truth, &cfg.noise, seed);
    Ok(SimulatedDataset { truth, sim, navigation })
}

impl SimulatedDataset {
    /// In-memory hand-off: full-precision pixels, truth and labels attached.
    pub fn input(&self) -> PipelineInput {
        PipelineInput {
            navigation: self.navigation.clone(),
            matches: self.sim.matches.clone(),
            camera: self.truth.intrinsics,
            rig: self.truth.rig,
            truth: Some(self.truth.camera_poses.clone()),
            inlier_labels: Some(self.sim.labels.clone()),
        }
    }

    fn anchor(&self) -> GeoAnchor {
        GeoAnchor {
            lat: self.truth.config.origin_lat,
            lon: self.truth.config.origin_lon,
        }
    }

    fn records(&self, poses: &[Pose]) -> Vec<NavRecord> {
        let anchor = self.anchor();
        poses
            .iter()
            .enumerate()
            .map(|(i, p)| NavRecord::from_pose(i as u32, self.truth.timestamps[i], p, &anchor))
            .collect()
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path).map(BufWriter::new).map_err(|e| IoError::at(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path).map(BufReader::new).map_err(|e| IoError::at(path, e))
}

/// Writes the pipeline input files and, separately, the ground truth.
pub fn export_simulation(dir: &Path, ds: &SimulatedDataset) -> Result<(), IoError> {
    std::fs::create_dir_all(dir.join(GROUND_TRUTH_DIR)).map_err(|e| IoError::at(dir, e))?;
    fio::write_records(create(&dir.join(NAVIGATION_FILE))?, &ds.records(&ds.navigation))?;
    fio::write_matches(create(&dir.join(MATCHES_FILE))?, &ds.sim.matches)?;
    fio::write_camera(&dir.join(CAMERA_INPUT), &CameraModel {
        intrinsics: ds.truth.intrinsics,
        rig: ds.truth.rig,
    })?;
    let gt = dir.join(GROUND_TRUTH_DIR);
    fio::write_records(create(&gt.join(TRUTH_FILE))?, &ds.records(&ds.truth.vehicle_poses))?;
    let labels: Vec<(&(u32, u32), &Vec<bool>)> = ds.sim.labels.iter().collect();
    let mut w = create(&gt.join(LABELS_FILE))?;
    serde_json::to_writer(&mut w, &labels).map_err(|e| IoError::Invalid(e.to_string()))?;
    w.flush()?;
    Ok(())
}

/// Pipeline input read from a dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub navigation: Navigation,
    pub matches: MatchSet,
    pub camera: CameraModel,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, IoError> {
    let navigation = fio::read_navigation(open(&dir.join(NAVIGATION_FILE))?)?;
    let matches = fio::read_matches(open(&dir.join(MATCHES_FILE))?)?;
    let camera = fio::read_camera(&dir.join(CAMERA_INPUT))?;
    Ok(Dataset {
        navigation,
        matches,
        camera,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// World→camera, in the navigation's local frame.
    pub camera_poses: Vec<Pose>,
    pub labels: Option<BTreeMap<(u32, u32), Vec<bool>>>,
}

/// Reads `ground_truth/` of a dataset directory, projected with the anchor
/// of the dataset's navigation so both live in one frame.
pub fn load_ground_truth(dir: &Path, dataset: &Dataset) -> Result<GroundTruth, IoError> {
    let gt = dir.join(GROUND_TRUTH_DIR);
    let truth = fio::read_navigation_with_anchor(open(&gt.join(TRUTH_FILE))?, dataset.navigation.anchor)?;
    let rig = dataset.camera.rig;
    let labels_path = gt.join(LABELS_FILE);
    let labels = if labels_path.is_file() {
        let v: Vec<((u32, u32), Vec<bool>)> = serde_json::from_reader(open(&labels_path)?).map_err(|e| IoError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        Some(v.into_iter().collect())
    } else {
        None
    };
    Ok(GroundTruth {
        camera_poses: truth.poses.iter().map(|v| rig.camera_from_vehicle(v)).collect(),
        labels,
    })
}

impl Dataset {
    pub fn into_input(self, truth: Option<GroundTruth>) -> PipelineInput {
        let (truth, labels) = match truth {
            Some(t) => (Some(t.camera_poses), t.labels),
            None => (None, None),
        };
        PipelineInput {
            navigation: self.navigation.poses,
            matches: self.matches,
            camera: self.camera.intrinsics,
            rig: self.camera.rig,
            truth,
            inlier_labels: labels,
        }
    }
}
