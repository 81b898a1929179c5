//! Stage orchestration: pair selection → verification → partition → local
//! SfM → weak-area revisit → pose graph → merge/re-triangulation and global
//! BA → metrics. Each completed stage can be persisted and the run resumed
//! from it.

mod config;
mod dataset;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{ConfigError, EvaluationConfig, PairConfig, PartitionConfig, PipelineConfig, SimulationConfig, CONFIG_ENV};
pub use dataset::{
    export_simulation, load_dataset, load_ground_truth, simulate, Dataset, GroundTruth, SimulatedDataset, CAMERA_INPUT,
    GROUND_TRUTH_DIR, LABELS_FILE, MATCHES_FILE, NAVIGATION_FILE, TRUTH_FILE,
};

use crate::geom::{CameraIntrinsics, Pose, RigExtrinsics};
use crate::global_recon::{
    compute_metrics, direct_triangulation_baseline, merge_tracks, reconstruct_global, tracks_from_graph, DtMode,
    GlobalReconstruction, MetricsReport,
};
use crate::io::{self as fio, IoError};
use crate::local_sfm::{apply_upgrades, reconstruct_cluster, reconstruct_clusters, SubReconstruction};
use crate::matches::MatchSet;
use crate::pose_graph::{optimize, PgoReport, PoseGraph};
use crate::viewgraph::{build_view_graph, default_pair_radius, partition, select_pairs, Cluster, ViewGraph};
use crate::weak_area::{detect, registered_images, revisit, RevisitContext, WeakReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pairs,
    Verify,
    Partition,
    Local,
    Revisit,
    Pgo,
    Global,
    Metrics,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Pairs,
        Stage::Verify,
        Stage::Partition,
        Stage::Local,
        Stage::Revisit,
        Stage::Pgo,
        Stage::Global,
        Stage::Metrics,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Pairs => "pairs",
            Stage::Verify => "verify",
            Stage::Partition => "partition",
            Stage::Local => "local",
            Stage::Revisit => "revisit",
            Stage::Pgo => "pgo",
            Stage::Global => "global",
            Stage::Metrics => "metrics",
        }
    }

    pub fn parse(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }

    fn next(self) -> Option<Stage> {
        Stage::ALL.get(self as usize + 1).copied()
    }

    /// Stages timed as the hierarchical reconstruction proper (everything
    /// after verification up to the final bundle adjustment).
    fn is_hierarchical(self) -> bool {
        matches!(self, Stage::Partition | Stage::Local | Stage::Revisit | Stage::Pgo | Stage::Global)
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("input: {0}")]
    Input(IoError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error("output: {0}")]
    Output(IoError),
}

impl PipelineError {
    /// Process exit code: one per failure class, one per stage.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Input(_) => 3,
            PipelineError::Checkpoint(_) => 4,
            PipelineError::Output(_) => 5,
            PipelineError::Stage { stage, .. } => 10 + *stage as i32,
        }
    }

    fn stage(stage: Stage, message: impl ToString) -> Self {
        PipelineError::Stage {
            stage,
            message: message.to_string(),
        }
    }
}

/// Everything a run consumes. Navigation is world→vehicle in the local
/// frame; truth, when present, is world→camera in the same frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineInput {
    pub navigation: Vec<Pose>,
    pub matches: MatchSet,
    pub camera: CameraIntrinsics,
    pub rig: RigExtrinsics,
    pub truth: Option<Vec<Pose>>,
    /// Per pair, the true inlier label of every match. Only used by the
    /// PGO-inlier triangulation ablation.
    pub inlier_labels: Option<BTreeMap<(u32, u32), Vec<bool>>>,
}

impl PipelineInput {
    pub fn image_count(&self) -> usize {
        self.navigation.len()
    }

    fn camera_priors(&self) -> Vec<Pose> {
        self.navigation.iter().map(|v| self.rig.camera_from_vehicle(v)).collect()
    }

    fn fingerprint(&self) -> InputFingerprint {
        InputFingerprint {
            images: self.navigation.len(),
            pairs: self.matches.pairs.len(),
            matches: self.matches.total_matches(),
        }
    }

    fn validate(&self) -> Result<(), PipelineError> {
        let n = self.navigation.len();
        let bad = |m: String| Err(PipelineError::Input(IoError::Invalid(m)));
        if n < 2 {
            return bad(format!("{n} images; at least two are needed"));
        }
        if self.matches.image_count as usize != n {
            return bad(format!("match file covers {} images, navigation {n}", self.matches.image_count));
        }
        if self.truth.as_ref().is_some_and(|t| t.len() != n) {
            return bad("ground truth and navigation differ in length".into());
        }
        self.camera.validate().map_err(|e| PipelineError::Input(IoError::Invalid(e.to_string())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct InputFingerprint {
    images: usize,
    pairs: usize,
    matches: usize,
}

/// Results of the completed stages. A checkpoint is this state serialized
/// right after a stage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineState {
    pub completed: Option<Stage>,
    pub pairs: Vec<(u32, u32)>,
    pub graph: Option<ViewGraph>,
    pub rejected_pairs: usize,
    pub clusters: Vec<Cluster>,
    pub subrecons: Vec<SubReconstruction>,
    /// Per-image relative-constraint counts after the first pass.
    pub first_pass_constraints: Vec<usize>,
    pub weak: Option<WeakReport>,
    pub pgo_poses: Vec<Pose>,
    pub pgo: Option<PgoReport>,
    pub global: Option<GlobalReconstruction>,
    pub metrics: Option<MetricsReport>,
    pub stage_seconds: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config: PipelineConfig,
    input: InputFingerprint,
    state: PipelineState,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub checkpoint_dir: Option<PathBuf>,
    /// Load the checkpoint written after this stage and run the rest.
    pub resume_after: Option<Stage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub config: PipelineConfig,
    pub state: PipelineState,
    pub reconstruction: GlobalReconstruction,
    pub metrics: MetricsReport,
}

pub fn checkpoint_path(dir: &Path, stage: Stage) -> PathBuf {
    dir.join(format!("{}.checkpoint.json", stage.name()))
}

fn save_checkpoint(dir: &Path, cfg: &PipelineConfig, input: &PipelineInput, state: &PipelineState) -> Result<(), PipelineError> {
    let stage = state.completed.expect("a stage has completed");
    let err = |e: String| PipelineError::Checkpoint(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(|e| err(e.to_string()))?;
    let path = checkpoint_path(dir, stage);
    let tmp = path.with_extension("json.tmp");
    {
        let f = fs::File::create(&tmp).map_err(|e| err(e.to_string()))?;
        let mut w = BufWriter::new(f);
        let ck = Checkpoint {
            config: cfg.clone(),
            input: input.fingerprint(),
            state: state.clone(),
        };
        serde_json::to_writer(&mut w, &ck).map_err(|e| err(e.to_string()))?;
        w.flush().map_err(|e| err(e.to_string()))?;
    }
    fs::rename(&tmp, &path).map_err(|e| err(e.to_string()))?;
    log::debug!("checkpoint {}", path.display());
    Ok(())
}

fn load_checkpoint(dir: &Path, stage: Stage, cfg: &PipelineConfig, input: &PipelineInput) -> Result<PipelineState, PipelineError> {
    let path = checkpoint_path(dir, stage);
    let f = fs::File::open(&path).map_err(|e| PipelineError::Checkpoint(format!("{}: {e}", path.display())))?;
    let ck: Checkpoint = serde_json::from_reader(BufReader::new(f))
        .map_err(|e| PipelineError::Checkpoint(format!("{}: {e}", path.display())))?;
    // The thread count does not change results, and the evaluation options
    // only affect the metrics stage.
    let norm = |c: &PipelineConfig| PipelineConfig {
        threads: 0,
        evaluation: if stage < Stage::Metrics { EvaluationConfig::default() } else { c.evaluation },
        ..c.clone()
    };
    if norm(&ck.config) != norm(cfg) {
        return Err(PipelineError::Checkpoint(format!(
            "{} was written with a different configuration",
            path.display()
        )));
    }
    if ck.input != input.fingerprint() {
        return Err(PipelineError::Checkpoint(format!("{} was written for different input", path.display())));
    }
    if ck.state.completed != Some(stage) {
        return Err(PipelineError::Checkpoint(format!("{} does not end at stage {stage}", path.display())));
    }
    Ok(ck.state)
}

/// Output of a finished run, rebuilt from its final checkpoint.
pub fn load_finished(dir: &Path) -> Result<PipelineOutput, PipelineError> {
    let path = checkpoint_path(dir, Stage::Metrics);
    let err = |e: String| PipelineError::Checkpoint(format!("{}: {e}", path.display()));
    let f = fs::File::open(&path).map_err(|e| err(e.to_string()))?;
    let ck: Checkpoint = serde_json::from_reader(BufReader::new(f)).map_err(|e| err(e.to_string()))?;
    match (ck.state.global.clone(), ck.state.metrics.clone()) {
        (Some(reconstruction), Some(metrics)) => Ok(PipelineOutput {
            config: ck.config,
            state: ck.state,
            reconstruction,
            metrics,
        }),
        _ => Err(err("incomplete run".into())),
    }
}

/// Latest stage with a checkpoint in `dir`.
pub fn latest_checkpoint(dir: &Path) -> Option<Stage> {
    Stage::ALL.into_iter().rev().find(|s| checkpoint_path(dir, *s).is_file())
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(e) => {
            log::warn!("could not build a {threads}-thread pool ({e}); using the global pool");
            f()
        }
    }
}

/// Runs (or resumes) the pipeline inside a worker pool sized by the
/// configuration.
pub fn run_pipeline(cfg: &PipelineConfig, input: &PipelineInput, opts: &RunOptions) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    input.validate()?;
    with_pool(cfg.threads, || run_stages(cfg, input, opts))
}

fn run_stages(cfg: &PipelineConfig, input: &PipelineInput, opts: &RunOptions) -> Result<PipelineOutput, PipelineError> {
    let mut state = match (opts.resume_after, &opts.checkpoint_dir) {
        (Some(stage), Some(dir)) => {
            log::info!("resuming after stage {stage}");
            load_checkpoint(dir, stage, cfg, input)?
        }
        (Some(_), None) => return Err(PipelineError::Checkpoint("resuming needs a checkpoint directory".into())),
        (None, _) => PipelineState::default(),
    };
    let mut next = match state.completed {
        None => Some(Stage::Pairs),
        Some(s) => s.next(),
    };
    while let Some(stage) = next {
        let start = Instant::now();
        run_stage(stage, cfg, input, &mut state)?;
        state.stage_seconds.insert(stage.name().to_string(), start.elapsed().as_secs_f64());
        state.completed = Some(stage);
        log::info!("stage {stage} done in {:.3} s", start.elapsed().as_secs_f64());
        if stage == Stage::Metrics {
            finish_metrics(cfg, &mut state);
        }
        if let Some(dir) = &opts.checkpoint_dir {
            save_checkpoint(dir, cfg, input, &state)?;
        }
        next = stage.next();
    }
    let reconstruction = state.global.clone().expect("global stage ran");
    let metrics = state.metrics.clone().expect("metrics stage ran");
    Ok(PipelineOutput {
        config: cfg.clone(),
        state,
        reconstruction,
        metrics,
    })
}

fn local_config(cfg: &PipelineConfig) -> crate::local_sfm::LocalSfmConfig {
    crate::local_sfm::LocalSfmConfig {
        seed: cfg.seed,
        ..cfg.local.clone()
    }
}

fn run_stage(stage: Stage, cfg: &PipelineConfig, input: &PipelineInput, state: &mut PipelineState) -> Result<(), PipelineError> {
    let n = input.image_count();
    match stage {
        Stage::Pairs => {
            let radius = cfg
                .pairs
                .radius
                .unwrap_or_else(|| default_pair_radius(cfg.pairs.altitude, &input.camera));
            state.pairs = select_pairs(&input.navigation, radius, cfg.pairs.max_neighbors);
            log::info!("{} candidate pairs within {radius:.2} m", state.pairs.len());
            if state.pairs.is_empty() {
                return Err(PipelineError::stage(stage, format!("no image pairs within {radius:.2} m")));
            }
        }
        Stage::Verify => {
            let (graph, rejected) = build_view_graph(&input.matches, &state.pairs, &input.camera, &cfg.verify, cfg.seed);
            log::info!("{} verified edges, {} pairs rejected", graph.edges.len(), rejected.len());
            if graph.edges.is_empty() {
                return Err(PipelineError::stage(stage, "no pair passed geometric verification"));
            }
            state.rejected_pairs = rejected.len();
            state.graph = Some(graph);
        }
        Stage::Partition => {
            let graph = state.graph.as_ref().expect("verified graph");
            state.clusters = partition(graph, cfg.partition.target_cluster_size, cfg.partition.overlap_ratio);
            log::info!("{} clusters", state.clusters.len());
        }
        Stage::Local => {
            let graph = state.graph.as_mut().expect("verified graph");
            let local = local_config(cfg);
            let results = reconstruct_clusters(&state.clusters, graph, &input.navigation, &input.camera, &input.rig, &local);
            state.subrecons.clear();
            for (recon, upgrades) in results {
                apply_upgrades(graph, &upgrades);
                if !recon.failed() {
                    state.subrecons.push(recon);
                }
            }
            if state.subrecons.is_empty() {
                return Err(PipelineError::stage(stage, "no cluster could be reconstructed"));
            }
            let first = detect(graph, &registered_images(&state.subrecons), &cfg.weak);
            state.first_pass_constraints = first.constraint_counts;
        }
        Stage::Revisit => {
            let graph = state.graph.as_mut().expect("verified graph");
            let local = local_config(cfg);
            let ctx = RevisitContext {
                nav_priors: &input.navigation,
                camera: &input.camera,
                rig: &input.rig,
                local: &local,
            };
            state.weak = Some(revisit(graph, &mut state.subrecons, &ctx, &cfg.weak));
        }
        Stage::Pgo => {
            let graph = PoseGraph::from_subreconstructions(&state.subrecons, input.camera_priors(), &cfg.pgo);
            let (poses, report) = optimize(&graph, &cfg.pgo.lm).map_err(|e| PipelineError::stage(stage, e))?;
            state.pgo_poses = poses;
            state.pgo = Some(report);
        }
        Stage::Global => {
            let graph = state.graph.as_ref().expect("verified graph");
            let recon = reconstruct_global(
                &state.subrecons,
                graph,
                &state.pgo_poses,
                &input.navigation,
                &input.camera,
                &input.rig,
                &cfg.global,
            )
            .map_err(|e| PipelineError::stage(stage, e))?;
            state.global = Some(recon);
        }
        Stage::Metrics => {
            let recon = state.global.as_ref().expect("global reconstruction");
            let mut m = compute_metrics(recon, &input.camera_priors(), input.truth.as_deref());
            m.total = n;
            m.weak_history = state.weak.as_ref().map(|w| w.rounds.clone()).unwrap_or_default();
            if cfg.evaluation.direct_triangulation {
                m.direct_triangulation = ablation(state, input);
            }
            if cfg.evaluation.compare_single_cluster {
                let start = Instant::now();
                let all = Cluster {
                    id: 0,
                    members: (0..n as u32).collect(),
                    overlap: Vec::new(),
                    core: (0..n as u32).collect(),
                };
                let graph = state.graph.as_ref().expect("verified graph");
                let (single, _) = reconstruct_cluster(&all, graph, &input.navigation, &input.camera, &input.rig, &local_config(cfg));
                let secs = start.elapsed().as_secs_f64();
                log::info!(
                    "single-cluster incremental reconstruction: {} of {n} images in {secs:.3} s",
                    single.scene.poses.len()
                );
                m.stage_seconds.insert("single_cluster".into(), secs);
            }
            state.metrics = Some(m);
        }
    }
    Ok(())
}

/// Copies the timings into the metrics once the last stage is timed.
fn finish_metrics(cfg: &PipelineConfig, state: &mut PipelineState) {
    let m = state.metrics.as_mut().expect("metrics");
    for (k, v) in &state.stage_seconds {
        m.stage_seconds.insert(k.clone(), *v);
    }
    if cfg.evaluation.compare_single_cluster {
        let hier: f64 = Stage::ALL
            .iter()
            .filter(|s| s.is_hierarchical())
            .filter_map(|s| state.stage_seconds.get(s.name()))
            .sum();
        m.stage_seconds.insert("hierarchical".into(), hier);
        let single = m.stage_seconds["single_cluster"];
        m.efficiency_ratio = Some(hier / single);
    }
}

fn ablation(state: &PipelineState, input: &PipelineInput) -> Vec<crate::global_recon::DtReport> {
    let graph = state.graph.as_ref().expect("verified graph");
    let all = tracks_from_graph(graph, |_, _, _| true);
    let inlier = match &input.inlier_labels {
        Some(labels) => {
            // Verified matches whose (pixel-identical) original match is a
            // true inlier.
            let truth: BTreeMap<(u32, u32, u32, u32), bool> = labels
                .iter()
                .flat_map(|(&(i, j), ls)| {
                    let ms = input.matches.get(i, j).map(Vec::as_slice).unwrap_or(&[]);
                    ms.iter().zip(ls).map(move |(m, l)| ((i, j, m.fi, m.fj), *l))
                })
                .collect();
            tracks_from_graph(graph, |i, j, m| truth.get(&(i, j, m.fi, m.fj)).copied().unwrap_or(false))
        }
        None => merge_tracks(&state.subrecons, graph),
    };
    let priors = input.camera_priors();
    [DtMode::Priors, DtMode::Pgo, DtMode::PgoInlier]
        .into_iter()
        .map(|mode| direct_triangulation_baseline(mode, &all, &inlier, &priors, &state.pgo_poses, &input.camera))
        .collect()
}

/// Self-describing metrics file: the configuration echoed next to the
/// numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub config: PipelineConfig,
    pub metrics: MetricsReport,
    pub pose_graph: Option<PgoReport>,
    pub weak_area: Option<WeakReport>,
}

impl MetricsFile {
    pub fn from_output(out: &PipelineOutput) -> Self {
        MetricsFile {
            config: out.config.clone(),
            metrics: out.metrics.clone(),
            pose_graph: out.state.pgo.clone(),
            weak_area: out.state.weak.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, IoError> {
        serde_json::from_str(text).map_err(|e| IoError::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }
}

pub const METRICS_FILE: &str = "metrics.json";
pub const RECONSTRUCTION_DIR: &str = "reconstruction";
pub const TRAJECTORY_PLOT: &str = "trajectory.svg";
pub const CONNECTIVITY_PLOT: &str = "connectivity.svg";
pub const HISTOGRAM_PLOT: &str = "constraints.svg";

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(|e| PipelineError::Output(IoError::at(path, e)))
}

/// Writes reconstruction, metrics JSON and plots into `dir`.
pub fn write_outputs(dir: &Path, input: &PipelineInput, out: &PipelineOutput) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::Output(IoError::at(dir, e)))?;
    fio::write_scene(&dir.join(RECONSTRUCTION_DIR), &out.reconstruction.scene).map_err(PipelineError::Output)?;
    write_text(&dir.join(METRICS_FILE), &MetricsFile::from_output(out).to_json())?;
    write_plots(dir, input, out)
}

pub fn write_plots(dir: &Path, input: &PipelineInput, out: &PipelineOutput) -> Result<(), PipelineError> {
    let priors = input.camera_priors();
    write_text(
        &dir.join(TRAJECTORY_PLOT),
        &fio::trajectory_svg(&priors, &out.reconstruction.scene.poses, input.truth.as_deref()),
    )?;
    if let Some(graph) = &out.state.graph {
        write_text(&dir.join(CONNECTIVITY_PLOT), &fio::connectivity_svg(graph, &priors, &out.config.weak))?;
    }
    let after = out.state.weak.as_ref().map(|w| w.constraint_counts.as_slice());
    write_text(
        &dir.join(HISTOGRAM_PLOT),
        &fio::constraint_histogram_svg(&out.state.first_pass_constraints, after),
    )
}
