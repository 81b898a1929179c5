//! Detection of weakly reconstructed image pairs and unregistered images,
//! and re-reconstruction of the areas around them.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::geom::{CameraIntrinsics, Pose, RigExtrinsics};
use crate::local_sfm::{apply_upgrades, reconstruct_clusters, LocalSfmConfig, SubReconstruction};
use crate::viewgraph::{Cluster, ViewGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeakAreaConfig {
    /// Pairs need strictly more than `mu` matches to count as weak.
    pub mu: usize,
    pub ratio: f64,
    pub max_rounds: usize,
    /// View-graph distance of the surrounding images added to a revisit
    /// cluster.
    pub hops: usize,
}

impl Default for WeakAreaConfig {
    fn default() -> Self {
        WeakAreaConfig {
            mu: 50,
            ratio: 0.2,
            max_rounds: 2,
            hops: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundCounts {
    pub round: usize,
    pub weak_pairs: usize,
    pub unregistered: usize,
    pub clusters: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WeakReport {
    pub weak_pairs: Vec<(u32, u32)>,
    /// Images registered in no sub-reconstruction.
    pub unregistered: Vec<u32>,
    /// Counts before each revisit round and after the last one.
    pub rounds: Vec<RoundCounts>,
    /// Per image: number of upgraded edges (N_p > 0) touching it.
    pub constraint_counts: Vec<usize>,
}

impl WeakReport {
    pub fn is_clean(&self) -> bool {
        self.weak_pairs.is_empty() && self.unregistered.is_empty()
    }
}

/// `N_m > μ` and `N_p < ratio · N_m`, both strict.
pub fn is_weak(n_m: usize, n_p: usize, cfg: &WeakAreaConfig) -> bool {
    n_m > cfg.mu && (n_p as f64) < cfg.ratio * n_m as f64
}

pub fn detect(graph: &ViewGraph, registered: &BTreeSet<u32>, cfg: &WeakAreaConfig) -> WeakReport {
    let weak_pairs = graph
        .edges
        .values()
        .filter(|e| is_weak(e.n_m, e.n_p, cfg))
        .map(|e| (e.i, e.j))
        .collect();
    let unregistered = (0..graph.image_count).filter(|i| !registered.contains(i)).collect();
    let mut constraint_counts = vec![0; graph.image_count as usize];
    for e in graph.edges.values() {
        if e.n_p > 0 {
            constraint_counts[e.i as usize] += 1;
            constraint_counts[e.j as usize] += 1;
        }
    }
    WeakReport {
        weak_pairs,
        unregistered,
        rounds: Vec::new(),
        constraint_counts,
    }
}

fn neighbourhood(seed: &BTreeSet<u32>, adj: &[Vec<u32>], hops: usize) -> BTreeSet<u32> {
    let mut dist: BTreeMap<u32, usize> = seed.iter().map(|&s| (s, 0)).collect();
    let mut queue: VecDeque<u32> = seed.iter().copied().collect();
    while let Some(u) = queue.pop_front() {
        let d = dist[&u];
        if d == hops {
            continue;
        }
        for &v in &adj[u as usize] {
            if !dist.contains_key(&v) {
                dist.insert(v, d + 1);
                queue.push_back(v);
            }
        }
    }
    dist.into_keys().collect()
}

/// Revisit clusters: weak items (weak-pair endpoints and unregistered
/// images that have view-graph edges) are grouped into connected
/// components (weak pairs and view-graph edges between items link them);
/// each component grows by all images within `hops`; clusters sharing more
/// than half of the smaller one are merged.
pub fn build_revisit_clusters(report: &WeakReport, graph: &ViewGraph, cfg: &WeakAreaConfig, first_id: u32) -> Vec<Cluster> {
    let adj = graph.adjacency();
    let mut items: BTreeSet<u32> = report.weak_pairs.iter().flat_map(|&(i, j)| [i, j]).collect();
    items.extend(report.unregistered.iter().copied().filter(|&i| !adj[i as usize].is_empty()));
    let weak: BTreeSet<(u32, u32)> = report.weak_pairs.iter().copied().collect();
    let mut groups: Vec<BTreeSet<u32>> = Vec::new();
    let mut seen = BTreeSet::new();
    for &start in &items {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u as usize] {
                let linked = weak.contains(&(u.min(v), u.max(v))) || items.contains(&v);
                if linked && items.contains(&v) && seen.insert(v) {
                    comp.insert(v);
                    queue.push_back(v);
                }
            }
        }
        groups.push(neighbourhood(&comp, &adj, cfg.hops));
    }
    loop {
        let mut merged = false;
        'outer: for a in 0..groups.len() {
            for b in a + 1..groups.len() {
                let shared = groups[a].intersection(&groups[b]).count();
                if 2 * shared > groups[a].len().min(groups[b].len()) {
                    let g = std::mem::take(&mut groups[b]);
                    groups[a].extend(g);
                    groups.remove(b);
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            break;
        }
    }
    groups
        .into_iter()
        .enumerate()
        .map(|(k, g)| {
            let members: Vec<u32> = g.into_iter().collect();
            Cluster {
                id: first_id + k as u32,
                core: members.clone(),
                members,
                overlap: Vec::new(),
            }
        })
        .collect()
}

pub fn registered_images(subrecons: &[SubReconstruction]) -> BTreeSet<u32> {
    subrecons.iter().flat_map(|s| s.registered()).collect()
}

/// Inputs that stay fixed across revisit rounds.
pub struct RevisitContext<'a> {
    pub nav_priors: &'a [Pose],
    pub camera: &'a CameraIntrinsics,
    pub rig: &'a RigExtrinsics,
    pub local: &'a LocalSfmConfig,
}

/// Detect → cluster → reconstruct, at most `max_rounds` times. Successful
/// revisit reconstructions are appended to `subrecons`; edge upgrades are
/// merged with the max-N_p rule. Returns the final report with the counts
/// of every round.
pub fn revisit(
    graph: &mut ViewGraph,
    subrecons: &mut Vec<SubReconstruction>,
    ctx: &RevisitContext,
    cfg: &WeakAreaConfig,
) -> WeakReport {
    let mut rounds = Vec::new();
    let mut round = 0;
    loop {
        let report = detect(graph, &registered_images(subrecons), cfg);
        let first_id = subrecons.iter().map(|s| s.cluster_id + 1).max().unwrap_or(0);
        let clusters = if round < cfg.max_rounds {
            build_revisit_clusters(&report, graph, cfg, first_id)
        } else {
            Vec::new()
        };
        rounds.push(RoundCounts {
            round,
            weak_pairs: report.weak_pairs.len(),
            unregistered: report.unregistered.len(),
            clusters: clusters.len(),
        });
        if clusters.is_empty() {
            return WeakReport { rounds, ..report };
        }
        log::info!(
            "weak-area round {}: {} weak pairs, {} unregistered, {} clusters",
            round + 1,
            report.weak_pairs.len(),
            report.unregistered.len(),
            clusters.len()
        );
        let results = reconstruct_clusters(&clusters, graph, ctx.nav_priors, ctx.camera, ctx.rig, ctx.local);
        for (recon, upgrades) in results {
            apply_upgrades(graph, &upgrades);
            if !recon.failed() {
                subrecons.push(recon);
            }
        }
        round += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::viewgraph::ViewGraphEdge;
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn edge(i: u32, j: u32, n_m: usize, n_p: usize) -> ViewGraphEdge {
        ViewGraphEdge {
            i,
            j,
            n_m,
            inliers: Vec::new(),
            rotation: UnitQuaternion::identity(),
            direction: Vector3::x(),
            n_p,
            metric_relative: None,
        }
    }

    fn cfg(mu: usize, hops: usize) -> WeakAreaConfig {
        WeakAreaConfig {
            mu,
            hops,
            ..WeakAreaConfig::default()
        }
    }

    #[test]
    fn weak_rule_is_strict() {
        let c = cfg(30, 1);
        assert!(is_weak(100, 10, &c));
        assert!(!is_weak(100, 20, &c));
        assert!(!is_weak(25, 0, &c));
        assert!(!is_weak(30, 0, &c));
    }

    /// A 2 × 6 grid: images 0..6 on one line, 6..12 on the next.
    fn grid() -> ViewGraph {
        let mut g = ViewGraph::new(12);
        for row in 0..2 {
            for k in 0..5 {
                let i = row * 6 + k;
                g.insert(edge(i, i + 1, 200, 150));
            }
        }
        for k in 0..6 {
            g.insert(edge(k, k + 6, 100, 60));
        }
        g
    }

    fn all_registered(g: &ViewGraph) -> BTreeSet<u32> {
        (0..g.image_count).collect()
    }

    #[test]
    fn detection_lists_weak_pairs_and_unregistered() {
        let mut g = grid();
        g.edge_mut(2, 3).unwrap().n_p = 5;
        let mut reg = all_registered(&g);
        reg.remove(&9);
        let r = detect(&g, &reg, &cfg(50, 1));
        assert_eq!(r.weak_pairs, vec![(2, 3)]);
        assert_eq!(r.unregistered, vec![9]);
        assert_eq!(r.constraint_counts[0], 2);
    }

    #[test]
    fn single_pair_with_one_hop() {
        let mut g = grid();
        g.edge_mut(2, 3).unwrap().n_p = 5;
        let r = detect(&g, &all_registered(&g), &cfg(50, 1));
        let c = build_revisit_clusters(&r, &g, &cfg(50, 1), 0);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].members, vec![1, 2, 3, 4, 8, 9]);
    }

    #[test]
    fn adjacent_weak_pairs_merge() {
        let mut g = grid();
        g.edge_mut(2, 3).unwrap().n_p = 5;
        g.edge_mut(3, 4).unwrap().n_p = 5;
        let r = detect(&g, &all_registered(&g), &cfg(50, 0));
        let c = build_revisit_clusters(&r, &g, &cfg(50, 0), 7);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].members, vec![2, 3, 4]);
        assert_eq!(c[0].id, 7);
    }

    #[test]
    fn empty_report_gives_no_clusters() {
        let g = grid();
        let r = detect(&g, &all_registered(&g), &cfg(50, 2));
        assert!(r.is_clean());
        assert!(build_revisit_clusters(&r, &g, &cfg(50, 2), 0).is_empty());
    }

    #[test]
    fn neighbourhood_matches_bfs_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // Lawnmower-like graph: 5 rows of 20, neighbours along and across.
        let (rows, cols) = (5u32, 20u32);
        let mut g = ViewGraph::new(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    g.insert(edge(i, i + 1, 200, 150));
                }
                if r + 1 < rows {
                    g.insert(edge(i, i + cols, rng.random_range(60..150), 100));
                }
            }
        }
        // Weak strip in the middle of row 2.
        for c in 8..11 {
            let i = 2 * cols + c;
            g.edge_mut(i, i + 1).unwrap().n_p = 0;
        }
        let r = detect(&g, &all_registered(&g), &cfg(50, 2));
        let clusters = build_revisit_clusters(&r, &g, &cfg(50, 2), 0);
        assert_eq!(clusters.len(), 1);
        // Oracle: grid distance ≤ 2 from any strip image (Manhattan metric
        // on the 4-connected grid).
        let strip: Vec<(i64, i64)> = (8..12).map(|c| (2, c)).collect();
        let mut expected = Vec::new();
        for r in 0..rows as i64 {
            for c in 0..cols as i64 {
                if strip.iter().any(|(sr, sc)| (sr - r).abs() + (sc - c).abs() <= 2) {
                    expected.push((r * cols as i64 + c) as u32);
                }
            }
        }
        assert_eq!(clusters[0].members, expected);
    }
}
