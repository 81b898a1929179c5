//! Match-based view graph: spatial pair selection from navigation priors,
//! two-view verification and normalized-cut clustering.

mod pairs;
mod partition;
mod verify;

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use nalgebra::{UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use pairs::{default_pair_radius, select_pairs};
pub use partition::{bisect, ncut_objective, partition, Cluster};
pub use verify::{verify_two_view, Rejection, VerifyOptions};

use crate::geom::{CameraIntrinsics, Pose};
use crate::matches::{ordered, FeatureMatch, MatchSet};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewGraphEdge {
    pub i: u32,
    pub j: u32,
    /// Verified inlier count.
    pub n_m: usize,
    pub inliers: Vec<FeatureMatch>,
    /// Rotation taking rays of `i` to rays of `j`.
    pub rotation: UnitQuaternion<f64>,
    /// Unit translation direction in the frame of `j`.
    pub direction: Vector3<f64>,
    /// Landmarks reconstructed in both images (0 before local SfM).
    pub n_p: usize,
    /// Metric `T_j ∘ T_i⁻¹` once both images are registered.
    pub metric_relative: Option<Pose>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewGraph {
    pub image_count: u32,
    /// Keyed by `(i, j)` with `i < j`; serialized as a plain edge list.
    #[serde(with = "edge_list")]
    pub edges: BTreeMap<(u32, u32), ViewGraphEdge>,
}

mod edge_list {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serializer};

    use super::ViewGraphEdge;

    pub fn serialize<S: Serializer>(edges: &BTreeMap<(u32, u32), ViewGraphEdge>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(edges.values())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(u32, u32), ViewGraphEdge>, D::Error> {
        let list = Vec::<ViewGraphEdge>::deserialize(d)?;
        Ok(list.into_iter().map(|e| ((e.i, e.j), e)).collect())
    }
}

impl ViewGraph {
    pub fn new(image_count: u32) -> Self {
        ViewGraph {
            image_count,
            edges: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, edge: ViewGraphEdge) {
        assert!(edge.i < edge.j, "edges are stored with i < j");
        self.edges.insert((edge.i, edge.j), edge);
    }

    pub fn edge(&self, i: u32, j: u32) -> Option<&ViewGraphEdge> {
        self.edges.get(&ordered(i, j))
    }

    pub fn edge_mut(&mut self, i: u32, j: u32) -> Option<&mut ViewGraphEdge> {
        self.edges.get_mut(&ordered(i, j))
    }

    /// Neighbour lists (sorted) for every image.
    pub fn adjacency(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.image_count as usize];
        for &(i, j) in self.edges.keys() {
            adj[i as usize].push(j);
            adj[j as usize].push(i);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }

    /// Edge list `i j n_m n_p`, one line per edge.
    pub fn write_summary<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# i j n_m n_p")?;
        for e in self.edges.values() {
            writeln!(out, "{} {} {} {}", e.i, e.j, e.n_m, e.n_p)?;
        }
        Ok(())
    }

    /// Reads an edge list written by [`ViewGraph::write_summary`] as
    /// `(i, j, n_m, n_p)` tuples.
    pub fn read_summary<R: BufRead>(input: R) -> io::Result<Vec<(u32, u32, usize, usize)>> {
        let mut out = Vec::new();
        for (k, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || io::Error::new(io::ErrorKind::InvalidData, format!("line {}: malformed edge", k + 1));
            if f.len() != 4 {
                return Err(bad());
            }
            out.push((
                f[0].parse().map_err(|_| bad())?,
                f[1].parse().map_err(|_| bad())?,
                f[2].parse().map_err(|_| bad())?,
                f[3].parse().map_err(|_| bad())?,
            ));
        }
        Ok(out)
    }
}

/// Verifies every candidate pair in parallel. Each pair draws from its own
/// RANSAC stream, so the result does not depend on the thread count.
pub fn build_view_graph(
    matches: &MatchSet,
    candidates: &[(u32, u32)],
    camera: &CameraIntrinsics,
    opts: &VerifyOptions,
    seed: u64,
) -> (ViewGraph, Vec<((u32, u32), Rejection)>) {
    let results: Vec<((u32, u32), Result<ViewGraphEdge, Rejection>)> = candidates
        .par_iter()
        .map(|&(a, b)| {
            let (i, j) = ordered(a, b);
            let empty = Vec::new();
            let m = matches.get(i, j).unwrap_or(&empty);
            let mut rng = stream_rng(seed, Stream::Ransac, ((i as u64) << 32) | j as u64);
            ((i, j), verify_two_view(i, j, m, camera, opts, &mut rng))
        })
        .collect();
    let mut graph = ViewGraph::new(matches.image_count);
    let mut rejected = Vec::new();
    for (key, r) in results {
        match r {
            Ok(e) => graph.insert(e),
            Err(why) => rejected.push((key, why)),
        }
    }
    (graph, rejected)
}
