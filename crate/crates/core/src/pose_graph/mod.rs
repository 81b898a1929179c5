//! Global pose graph over every image: relative constraints from the
//! sub-reconstructions, absolute constraints from navigation, and a
//! constant-velocity term for images no sub-reconstruction could place.

mod problem;
mod text;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::geom::Pose;
use crate::local_sfm::SubReconstruction;
use crate::solver::{LmOptions, LmReport, SolverError};

pub use problem::{evaluate_terms, PoseGraphProblem, Term, TermEval, TermKind};
pub use text::{read_text, write_text, TextError};

/// Shared-landmark count at which a relative edge reaches full weight.
pub const SHARED_LANDMARK_CAP: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PgoWeights {
    pub rel: f64,
    pub abs: f64,
    pub sm: f64,
    /// Scale each relative edge by min(shared, 200)/200.
    pub edge_weighting: bool,
}

impl Default for PgoWeights {
    fn default() -> Self {
        PgoWeights {
            rel: 1.0,
            abs: 0.001,
            sm: 2.0,
            edge_weighting: true,
        }
    }
}

impl PgoWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("rel", self.rel), ("abs", self.abs), ("sm", self.sm)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("pose-graph weight {name} = {v} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PgoConfig {
    pub weights: PgoWeights,
    /// Pairs sharing fewer landmarks inside a sub-reconstruction give no edge.
    pub min_shared: usize,
    pub lm: LmOptions,
}

impl Default for PgoConfig {
    fn default() -> Self {
        PgoConfig {
            weights: PgoWeights::default(),
            min_shared: 5,
            lm: LmOptions {
                max_iterations: 100,
                ..LmOptions::default()
            },
        }
    }
}

/// Measured `T_j ∘ T_i⁻¹` for a pair `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeEdge {
    pub measurement: Pose,
    pub shared: usize,
    pub cluster: u32,
}

impl RelativeEdge {
    pub fn weight(&self, w: &PgoWeights) -> f64 {
        if w.edge_weighting {
            self.shared.min(SHARED_LANDMARK_CAP) as f64 / SHARED_LANDMARK_CAP as f64
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseGraph {
    /// Current world→camera estimate of every image, by id.
    pub vertices: Vec<Pose>,
    /// Camera-frame navigation priors, by id.
    pub priors: Vec<Pose>,
    pub edges: BTreeMap<(u32, u32), RelativeEdge>,
    pub weights: PgoWeights,
}

/// Relative edges of every intra-reconstruction pair sharing at least
/// `min_shared` landmarks. A pair seen by several reconstructions keeps the
/// measurement with the most shared landmarks (first one on ties).
pub fn collect_relative_edges(subrecons: &[SubReconstruction], min_shared: usize) -> BTreeMap<(u32, u32), RelativeEdge> {
    let mut out: BTreeMap<(u32, u32), RelativeEdge> = BTreeMap::new();
    for s in subrecons {
        let mut shared: BTreeMap<(u32, u32), usize> = BTreeMap::new();
        for l in &s.scene.landmarks {
            let imgs: Vec<u32> = l.observations.iter().map(|o| o.image).filter(|i| s.is_registered(*i)).collect();
            for (a, &i) in imgs.iter().enumerate() {
                for &j in &imgs[a + 1..] {
                    *shared.entry((i.min(j), i.max(j))).or_default() += 1;
                }
            }
        }
        for ((i, j), n) in shared {
            if n == 0 || n < min_shared {
                continue;
            }
            let (pi, pj) = (&s.scene.poses[&i], &s.scene.poses[&j]);
            let e = RelativeEdge {
                measurement: pj.between(pi),
                shared: n,
                cluster: s.cluster_id,
            };
            match out.get(&(i, j)) {
                Some(prev) if prev.shared >= n => {}
                _ => {
                    out.insert((i, j), e);
                }
            }
        }
    }
    out
}

impl PoseGraph {
    /// Vertices start at the sub-reconstruction pose of each registered
    /// image (from the reconstruction where it has the most observations)
    /// and at the navigation prior otherwise.
    pub fn from_subreconstructions(subrecons: &[SubReconstruction], priors: Vec<Pose>, cfg: &PgoConfig) -> Self {
        let mut best: BTreeMap<u32, (usize, Pose)> = BTreeMap::new();
        for s in subrecons {
            let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
            for l in &s.scene.landmarks {
                for o in &l.observations {
                    *counts.entry(o.image).or_default() += 1;
                }
            }
            for (&i, p) in &s.scene.poses {
                let c = counts.get(&i).copied().unwrap_or(0);
                if best.get(&i).is_none_or(|(b, _)| c > *b) {
                    best.insert(i, (c, *p));
                }
            }
        }
        let vertices = priors
            .iter()
            .enumerate()
            .map(|(i, p)| best.get(&(i as u32)).map_or(*p, |(_, q)| *q))
            .collect();
        PoseGraph {
            vertices,
            priors,
            edges: collect_relative_edges(subrecons, cfg.min_shared),
            weights: cfg.weights,
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Vertices without any relative edge.
    pub fn isolated(&self) -> BTreeSet<u32> {
        let mut connected = vec![false; self.vertices.len()];
        for &(i, j) in self.edges.keys() {
            connected[i as usize] = true;
            connected[j as usize] = true;
        }
        (0..self.vertices.len() as u32).filter(|&i| !connected[i as usize]).collect()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.vertices.len()];
        for &(i, j) in self.edges.keys() {
            d[i as usize] += 1;
            d[j as usize] += 1;
        }
        d
    }

    /// All residual terms. Smooth-motion terms exist for isolated vertices
    /// that have both a predecessor and a successor in capture order.
    pub fn terms(&self) -> Vec<Term> {
        let w = &self.weights;
        let mut out = Vec::new();
        if w.rel > 0.0 {
            for (&(i, j), e) in &self.edges {
                out.push(Term {
                    kind: TermKind::Relative { i, j, measurement: e.measurement },
                    scale: (w.rel * e.weight(w)).sqrt(),
                });
            }
        }
        if w.abs > 0.0 {
            for (j, p) in self.priors.iter().enumerate() {
                out.push(Term {
                    kind: TermKind::Absolute { j: j as u32, prior: *p },
                    scale: w.abs.sqrt(),
                });
            }
        }
        if w.sm > 0.0 {
            let n = self.vertices.len() as u32;
            for i in self.isolated() {
                if i > 0 && i + 1 < n {
                    out.push(Term {
                        kind: TermKind::Smooth { i },
                        scale: w.sm.sqrt(),
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TermCosts {
    pub relative: f64,
    pub absolute: f64,
    pub smooth: f64,
}

impl TermCosts {
    pub fn total(&self) -> f64 {
        self.relative + self.absolute + self.smooth
    }

    pub fn of(evals: &[TermEval]) -> Self {
        let mut c = TermCosts::default();
        for e in evals {
            let v = e.residual.norm_squared();
            match e.kind {
                TermKind::Relative { .. } => c.relative += v,
                TermKind::Absolute { .. } => c.absolute += v,
                TermKind::Smooth { .. } => c.smooth += v,
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgoReport {
    pub lm: LmReport,
    pub initial: TermCosts,
    pub last: TermCosts,
    pub relative_edges: usize,
    pub isolated: usize,
}

/// Optimizes the graph from its current vertices and returns the optimized
/// poses.
pub fn optimize(graph: &PoseGraph, lm: &LmOptions) -> Result<(Vec<Pose>, PgoReport), SolverError> {
    optimize_with_fixed(graph, &BTreeSet::new(), lm)
}

/// [`optimize`] with some vertices held at their current value.
pub fn optimize_with_fixed(
    graph: &PoseGraph,
    fixed: &BTreeSet<u32>,
    lm: &LmOptions,
) -> Result<(Vec<Pose>, PgoReport), SolverError> {
    let terms = graph.terms();
    let problem = PoseGraphProblem::new(graph.vertices.len(), terms).with_fixed(fixed.iter().copied());
    let initial = TermCosts::of(&problem.evaluate(&graph.vertices, false));
    let (poses, report) = crate::solver::minimize(&problem, graph.vertices.clone(), lm)?;
    let last = TermCosts::of(&problem.evaluate(&poses, false));
    log::info!(
        "pose graph: {} vertices, {} relative edges, cost {:.6e} -> {:.6e} in {} iterations",
        graph.len(),
        graph.edges.len(),
        report.initial_cost,
        report.final_cost,
        report.iterations
    );
    Ok((
        poses,
        PgoReport {
            lm: report,
            initial,
            last,
            relative_edges: graph.edges.len(),
            isolated: graph.isolated().len(),
        },
    ))
}
