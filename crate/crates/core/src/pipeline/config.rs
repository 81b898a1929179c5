use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::global_recon::GlobalConfig;
use crate::local_sfm::LocalSfmConfig;
use crate::pose_graph::PgoConfig;
use crate::survey_sim::{NoiseModel, SurveyConfig};
use crate::viewgraph::VerifyOptions;
use crate::weak_area::WeakAreaConfig;

/// Environment variable naming the configuration file when no path is
/// given on the command line.
pub const CONFIG_ENV: &str = "NAVSFM_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairConfig {
    /// Candidate radius (m) between navigation positions; derived from
    /// `altitude` and the camera field of view when absent.
    pub radius: Option<f64>,
    /// Nominal altitude above the seafloor (m) for the derived radius.
    pub altitude: f64,
    pub max_neighbors: usize,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            radius: None,
            altitude: 8.0,
            max_neighbors: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub target_cluster_size: usize,
    pub overlap_ratio: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            target_cluster_size: 150,
            overlap_ratio: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Direct-triangulation ablation (priors / PGO / PGO on inlier tracks).
    pub direct_triangulation: bool,
    /// Also reconstruct the survey as one incremental cluster and record
    /// the wall-clock ratio.
    pub compare_single_cluster: bool,
}

/// Survey and noise used by the `simulate` command.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub survey: SurveyConfig,
    pub noise: NoiseModel,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Drives every random stream (verification, registration, simulation
    /// noise). Overrides `local.seed`.
    pub seed: u64,
    /// Worker threads; 0 uses one per core.
    pub threads: usize,
    pub pairs: PairConfig,
    pub verify: VerifyOptions,
    pub partition: PartitionConfig,
    pub local: LocalSfmConfig,
    pub weak: WeakAreaConfig,
    pub pgo: PgoConfig,
    pub global: GlobalConfig,
    pub evaluation: EvaluationConfig,
    pub simulation: SimulationConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Read { path: String, source: std::io::Error },
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid(what()))
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.pairs;
        check(p.radius.is_none_or(|r| r > 0.0 && r.is_finite()), || format!("pairs.radius {:?} must be positive", p.radius))?;
        check(p.altitude > 0.0 && p.altitude.is_finite(), || format!("pairs.altitude {} must be positive", p.altitude))?;
        check(p.max_neighbors > 0, || "pairs.max_neighbors must be positive".into())?;
        let v = &self.verify;
        check(v.threshold > 0.0, || format!("verify.threshold {} must be positive", v.threshold))?;
        check(v.confidence > 0.0 && v.confidence < 1.0, || format!("verify.confidence {} must be in (0, 1)", v.confidence))?;
        check(v.min_inliers >= 5, || format!("verify.min_inliers {} must be at least 5", v.min_inliers))?;
        check((0.0..=1.0).contains(&v.min_inlier_ratio), || format!("verify.min_inlier_ratio {} must be in [0, 1]", v.min_inlier_ratio))?;
        let c = &self.partition;
        check(c.target_cluster_size >= 20, || format!("partition.target_cluster_size {} must be at least 20", c.target_cluster_size))?;
        check((0.0..1.0).contains(&c.overlap_ratio), || format!("partition.overlap_ratio {} must be in [0, 1)", c.overlap_ratio))?;
        let l = &self.local;
        check(l.min_2d3d >= 4, || format!("local.min_2d3d {} must be at least 4", l.min_2d3d))?;
        check(l.max_reproj_px > 0.0, || format!("local.max_reproj_px {} must be positive", l.max_reproj_px))?;
        check(l.ba_interval_min > 0, || "local.ba_interval_min must be positive".into())?;
        let w = &self.weak;
        check(w.ratio > 0.0 && w.ratio <= 1.0, || format!("weak.ratio {} must be in (0, 1]", w.ratio))?;
        self.pgo.weights.validate().map_err(ConfigError::Invalid)?;
        let g = &self.global;
        check(g.max_reproj_px > 0.0, || format!("global.max_reproj_px {} must be positive", g.max_reproj_px))?;
        check(g.ba_rounds > 0, || "global.ba_rounds must be positive".into())?;
        self.simulation.survey.validate().map_err(|e| ConfigError::Invalid(format!("simulation.survey: {e}")))?;
        self.simulation.noise.validate().map_err(|e| ConfigError::Invalid(format!("simulation.noise: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn round_trip_and_partial_override() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let c = PipelineConfig::from_toml("seed = 7\n[weak]\nmu = 30\n[pgo.weights]\nsm = 1.5\n").unwrap();
        assert_eq!((c.seed, c.weak.mu, c.weak.ratio, c.pgo.weights.sm), (7, 30, 0.2, 1.5));
    }

    #[test]
    fn unknown_and_invalid_keys_are_rejected() {
        assert!(matches!(PipelineConfig::from_toml("sede = 1\n"), Err(ConfigError::Toml(_))));
        assert!(matches!(PipelineConfig::from_toml("[weak]\nmuu = 1\n"), Err(ConfigError::Toml(_))));
        assert!(matches!(
            PipelineConfig::from_toml("[partition]\ntarget_cluster_size = 5\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(PipelineConfig::from_toml("[pgo.weights]\nabs = -1.0\n"), Err(ConfigError::Invalid(_))));
    }
}
