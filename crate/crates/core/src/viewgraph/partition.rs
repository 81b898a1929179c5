use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ViewGraph;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: u32,
    /// All images of the cluster, sorted; includes the overlap.
    pub members: Vec<u32>,
    /// Members that also belong to another cluster.
    pub overlap: Vec<u32>,
    /// Images assigned to this cluster by the cut (disjoint across clusters).
    pub core: Vec<u32>,
}

impl Cluster {
    pub fn contains(&self, image: u32) -> bool {
        self.members.binary_search(&image).is_ok()
    }
}

/// Normalized-cut value `cut/vol(A) + cut/vol(B)` of a two-way split of a
/// dense symmetric weight matrix (`true` = side A). Infinite if a side has
/// zero volume.
pub fn ncut_objective(w: &DMatrix<f64>, side: &[bool]) -> f64 {
    let n = w.nrows();
    let (mut cut, mut va, mut vb) = (0.0, 0.0, 0.0);
    for a in 0..n {
        let d: f64 = w.row(a).sum();
        if side[a] {
            va += d;
        } else {
            vb += d;
        }
        for b in 0..n {
            if side[a] && !side[b] {
                cut += w[(a, b)];
            }
        }
    }
    if va <= 0.0 || vb <= 0.0 {
        return f64::INFINITY;
    }
    cut / va + cut / vb
}

struct SplitState {
    side: Vec<bool>,
    /// Weight from each node into side A.
    to_a: Vec<f64>,
    deg: Vec<f64>,
    cut: f64,
    vol_a: f64,
    vol_total: f64,
    size_a: usize,
}

impl SplitState {
    fn new(w: &DMatrix<f64>, side: Vec<bool>) -> Self {
        let n = w.nrows();
        let deg: Vec<f64> = (0..n).map(|k| w.row(k).sum()).collect();
        let mut to_a = vec![0.0; n];
        for u in 0..n {
            for v in 0..n {
                if side[v] {
                    to_a[u] += w[(u, v)];
                }
            }
        }
        let vol_a = (0..n).filter(|&k| side[k]).map(|k| deg[k]).sum();
        let cut = (0..n).filter(|&k| !side[k]).map(|k| to_a[k]).sum();
        SplitState {
            size_a: side.iter().filter(|s| **s).count(),
            side,
            to_a,
            vol_total: deg.iter().sum(),
            deg,
            cut,
            vol_a,
        }
    }

    fn value_of(cut: f64, vol_a: f64, vol_total: f64) -> f64 {
        let vol_b = vol_total - vol_a;
        if vol_a <= 0.0 || vol_b <= 0.0 {
            f64::INFINITY
        } else {
            cut / vol_a + cut / vol_b
        }
    }

    fn value(&self) -> f64 {
        Self::value_of(self.cut, self.vol_a, self.vol_total)
    }

    /// Objective after moving `v` to the other side, or `None` if that would
    /// empty a side.
    fn value_after_move(&self, w: &DMatrix<f64>, v: usize) -> Option<f64> {
        let n = self.side.len();
        let self_loop = w[(v, v)];
        let (cut, vol_a) = if self.side[v] {
            if self.size_a == 1 {
                return None;
            }
            // Edges to A become cut, edges to B stop being cut.
            let to_a = self.to_a[v] - self_loop;
            let to_b = self.deg[v] - self.to_a[v];
            (self.cut + to_a - to_b, self.vol_a - self.deg[v])
        } else {
            if self.size_a + 1 == n {
                return None;
            }
            let to_a = self.to_a[v];
            let to_b = self.deg[v] - self.to_a[v] - self_loop;
            (self.cut + to_b - to_a, self.vol_a + self.deg[v])
        };
        Some(Self::value_of(cut.max(0.0), vol_a, self.vol_total))
    }

    fn apply_move(&mut self, w: &DMatrix<f64>, v: usize) {
        let self_loop = w[(v, v)];
        if self.side[v] {
            let to_a = self.to_a[v] - self_loop;
            let to_b = self.deg[v] - self.to_a[v];
            self.cut = (self.cut + to_a - to_b).max(0.0);
            self.vol_a -= self.deg[v];
            self.size_a -= 1;
            for u in 0..self.side.len() {
                self.to_a[u] -= w[(u, v)];
            }
        } else {
            let to_a = self.to_a[v];
            let to_b = self.deg[v] - self.to_a[v] - self_loop;
            self.cut = (self.cut + to_b - to_a).max(0.0);
            self.vol_a += self.deg[v];
            self.size_a += 1;
            for u in 0..self.side.len() {
                self.to_a[u] += w[(u, v)];
            }
        }
        self.side[v] = !self.side[v];
    }
}

/// Spectral embeddings `D^{-1/2} u_k` for the eigenvectors of the
/// normalized Laplacian with the 2nd..(count+1)-th smallest eigenvalues.
fn spectral_embeddings(w: &DMatrix<f64>, count: usize) -> Vec<Vec<f64>> {
    let n = w.nrows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|k| {
            let d: f64 = w.row(k).sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let lap = DMatrix::from_fn(n, n, |a, b| {
        let delta = if a == b { 1.0 } else { 0.0 };
        delta - inv_sqrt[a] * w[(a, b)] * inv_sqrt[b]
    });
    let eig = lap.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    order[1..n.min(count + 1)]
        .iter()
        .map(|&c| {
            let u = eig.eigenvectors.column(c);
            (0..n).map(|k| u[k] * inv_sqrt[k]).collect()
        })
        .collect()
}

/// One Fiduccia–Mattheyses pass: every node is moved once, in order of best
/// resulting objective, and the best prefix of moves is kept.
fn fm_pass(w: &DMatrix<f64>, state: &mut SplitState) -> bool {
    let n = state.side.len();
    let start = state.value();
    let mut locked = vec![false; n];
    let mut moves = Vec::with_capacity(n);
    let mut best = (start, 0usize);
    for _ in 0..n {
        let mut pick: Option<(f64, usize)> = None;
        for v in 0..n {
            if locked[v] {
                continue;
            }
            if let Some(val) = state.value_after_move(w, v) {
                if pick.is_none_or(|(b, _)| val < b) {
                    pick = Some((val, v));
                }
            }
        }
        let Some((val, v)) = pick else { break };
        state.apply_move(w, v);
        locked[v] = true;
        moves.push(v);
        if val < best.0 - 1e-12 * best.0.abs().max(1e-300) {
            best = (val, moves.len());
        }
    }
    for &v in moves[best.1..].iter().rev() {
        state.apply_move(w, v);
    }
    best.1 > 0
}

/// Best prefix of the nodes sorted by `y`.
fn sweep(w: &DMatrix<f64>, y: &[f64]) -> Vec<bool> {
    let n = w.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let mut state = SplitState::new(w, vec![false; n]);
    let mut best = (f64::INFINITY, 1usize);
    for (k, &v) in order[..n - 1].iter().enumerate() {
        state.apply_move(w, v);
        let val = state.value();
        if val < best.0 {
            best = (val, k + 1);
        }
    }
    let mut side = vec![false; n];
    for &v in &order[..best.1] {
        side[v] = true;
    }
    side
}

/// Eigenvectors swept per bisection; the second and third rescue splits
/// the Fiedler vector orders badly (several near-equal communities).
const SWEEP_VECTORS: usize = 3;

/// Two-way normalized cut of a connected weighted graph: spectral sweeps
/// over the leading non-trivial eigenvectors, each followed by
/// Fiduccia–Mattheyses refinement; the best result wins. Returns the side
/// of each node (`true` = A); both sides are non-empty for `n ≥ 2`.
pub fn bisect(w: &DMatrix<f64>) -> Vec<bool> {
    let n = w.nrows();
    assert!(n >= 2, "cannot bisect fewer than two nodes");
    let mut best: Option<SplitState> = None;
    for y in spectral_embeddings(w, SWEEP_VECTORS) {
        let mut state = SplitState::new(w, sweep(w, &y));
        for _ in 0..20 {
            if !fm_pass(w, &mut state) {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| state.value() < b.value()) {
            best = Some(state);
        }
    }
    best.expect("at least one embedding for n ≥ 2").side
}

fn components(nodes: &[u32], adj: &BTreeMap<u32, Vec<(u32, f64)>>) -> Vec<Vec<u32>> {
    let inside: BTreeSet<u32> = nodes.iter().copied().collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for &start in nodes {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in adj.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
                if inside.contains(&v) && seen.insert(v) {
                    comp.push(v);
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn split_recursive(nodes: Vec<u32>, adj: &BTreeMap<u32, Vec<(u32, f64)>>, target: usize, out: &mut Vec<Vec<u32>>) {
    for comp in components(&nodes, adj) {
        if comp.len() <= target {
            out.push(comp);
            continue;
        }
        let index: BTreeMap<u32, usize> = comp.iter().enumerate().map(|(k, &v)| (v, k)).collect();
        let mut w = DMatrix::zeros(comp.len(), comp.len());
        for (a, &u) in comp.iter().enumerate() {
            for &(v, wt) in &adj[&u] {
                if let Some(&b) = index.get(&v) {
                    w[(a, b)] = wt;
                }
            }
        }
        let side = bisect(&w);
        let a: Vec<u32> = comp.iter().zip(&side).filter(|(_, s)| **s).map(|(v, _)| *v).collect();
        let b: Vec<u32> = comp.iter().zip(&side).filter(|(_, s)| !**s).map(|(v, _)| *v).collect();
        // Keep the part containing the smallest id first for stable numbering.
        let (first, second) = if a.first() < b.first() { (a, b) } else { (b, a) };
        split_recursive(first, adj, target, out);
        split_recursive(second, adj, target, out);
    }
}

/// Recursive normalized-cut partition with edge weight `N_m`, followed by
/// overlap expansion: each cluster absorbs up to `ceil(overlap_ratio·size)`
/// outside neighbours, strongest total connection first.
pub fn partition(graph: &ViewGraph, target_cluster_size: usize, overlap_ratio: f64) -> Vec<Cluster> {
    let target = target_cluster_size.max(1);
    let mut adj: BTreeMap<u32, Vec<(u32, f64)>> = BTreeMap::new();
    for e in graph.edges.values() {
        if e.n_m == 0 {
            continue;
        }
        adj.entry(e.i).or_default().push((e.j, e.n_m as f64));
        adj.entry(e.j).or_default().push((e.i, e.n_m as f64));
    }
    let nodes: Vec<u32> = adj.keys().copied().collect();
    let mut cores = Vec::new();
    split_recursive(nodes, &adj, target, &mut cores);

    let mut clusters: Vec<Cluster> = Vec::with_capacity(cores.len());
    for (id, core) in cores.into_iter().enumerate() {
        let set: BTreeSet<u32> = core.iter().copied().collect();
        let mut gain: BTreeMap<u32, f64> = BTreeMap::new();
        for &u in &core {
            for &(v, wt) in &adj[&u] {
                if !set.contains(&v) {
                    *gain.entry(v).or_default() += wt;
                }
            }
        }
        let mut candidates: Vec<(u32, f64)> = gain.into_iter().collect();
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let extra = (overlap_ratio.max(0.0) * core.len() as f64).ceil() as usize;
        let mut members: Vec<u32> = core.clone();
        members.extend(candidates.iter().take(extra).map(|c| c.0));
        members.sort_unstable();
        clusters.push(Cluster {
            id: id as u32,
            members,
            overlap: Vec::new(),
            core,
        });
    }
    let mut count: BTreeMap<u32, usize> = BTreeMap::new();
    for c in &clusters {
        for &m in &c.members {
            *count.entry(m).or_default() += 1;
        }
    }
    for c in &mut clusters {
        c.overlap = c.members.iter().copied().filter(|m| count[m] > 1).collect();
    }
    clusters
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::viewgraph::ViewGraphEdge;
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn edge(i: u32, j: u32, n_m: usize) -> ViewGraphEdge {
        ViewGraphEdge {
            i,
            j,
            n_m,
            inliers: Vec::new(),
            rotation: UnitQuaternion::identity(),
            direction: Vector3::x(),
            n_p: 0,
            metric_relative: None,
        }
    }

    fn graph_from(n: u32, edges: &[(u32, u32, usize)]) -> ViewGraph {
        let mut g = ViewGraph::new(n);
        for &(i, j, w) in edges {
            g.insert(edge(i, j, w));
        }
        g
    }

    fn dense(n: usize, edges: &[(u32, u32, usize)]) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(n, n);
        for &(i, j, m) in edges {
            w[(i as usize, j as usize)] = m as f64;
            w[(j as usize, i as usize)] = m as f64;
        }
        w
    }

    /// Independent objective: explicit sums over the edge list.
    fn oracle_ncut(edges: &[(u32, u32, usize)], side: &[bool]) -> f64 {
        let mut vol = [0.0, 0.0];
        let mut cut = 0.0;
        for &(i, j, m) in edges {
            let (si, sj) = (side[i as usize], side[j as usize]);
            vol[si as usize] += m as f64;
            vol[sj as usize] += m as f64;
            if si != sj {
                cut += m as f64;
            }
        }
        if vol[0] == 0.0 || vol[1] == 0.0 {
            return f64::INFINITY;
        }
        cut / vol[0] + cut / vol[1]
    }

    fn exhaustive(n: usize, edges: &[(u32, u32, usize)]) -> (f64, Vec<bool>) {
        let mut best = (f64::INFINITY, Vec::new());
        // Node n-1 fixed on side B to skip mirrored splits.
        for mask in 1u32..(1 << (n - 1)) {
            let side: Vec<bool> = (0..n).map(|k| mask >> k & 1 == 1).collect();
            let v = oracle_ncut(edges, &side);
            if v < best.0 {
                best = (v, side);
            }
        }
        best
    }

    fn two_communities(rng: &mut ChaCha8Rng) -> (usize, Vec<(u32, u32, usize)>) {
        let na = rng.random_range(3..=6);
        let nb = rng.random_range(3..=6);
        let n = na + nb;
        let mut edges = Vec::new();
        for (lo, hi) in [(0, na), (na, n)] {
            for a in lo..hi {
                for b in a + 1..hi {
                    if rng.random::<f64>() < 0.8 || b == a + 1 {
                        edges.push((a as u32, b as u32, rng.random_range(30..100)));
                    }
                }
            }
        }
        let a = rng.random_range(0..na) as u32;
        let b = rng.random_range(na..n) as u32;
        edges.push((a, b, rng.random_range(1..6)));
        (n, edges)
    }

    #[test]
    fn single_cluster_when_small() {
        let edges: Vec<_> = (0..9).map(|k| (k, k + 1, 20)).collect();
        let g = graph_from(10, &edges);
        let c = partition(&g, 150, 0.2);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].members, (0..10).collect::<Vec<_>>());
        assert!(c[0].overlap.is_empty());
    }

    #[test]
    fn empty_graph() {
        assert!(partition(&ViewGraph::new(5), 150, 0.2).is_empty());
    }

    #[test]
    fn cut_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..40 {
            let (n, edges) = two_communities(&mut rng);
            let side = bisect(&dense(n, &edges));
            let (best, best_side) = exhaustive(n, &edges);
            let got = oracle_ncut(&edges, &side);
            assert!((got - best).abs() <= 1e-9, "trial {trial}: {got} vs {best}");
            assert!((ncut_objective(&dense(n, &edges), &side) - got).abs() <= 1e-12);
            // Same split up to side labels.
            let same = side == best_side || side.iter().zip(&best_side).all(|(a, b)| a != b);
            assert!(same, "trial {trial}");
        }
    }

    #[test]
    fn weak_edge_is_the_cut() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (n, edges) = two_communities(&mut rng);
            let side = bisect(&dense(n, &edges));
            let cut: Vec<_> = edges.iter().filter(|(i, j, _)| side[*i as usize] != side[*j as usize]).collect();
            assert_eq!(cut.len(), 1);
            assert_eq!(cut[0], edges.last().unwrap());
        }
    }

    #[test]
    fn beats_random_cuts() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let n = rng.random_range(10..30);
            let mut edges = Vec::new();
            for a in 0..n {
                edges.push((a as u32, ((a + 1) % n) as u32, rng.random_range(1..50)));
                for b in a + 2..n {
                    if rng.random::<f64>() < 0.2 {
                        edges.push((a as u32, b as u32, rng.random_range(1..50)));
                    }
                }
            }
            let ours = oracle_ncut(&edges, &bisect(&dense(n, &edges)));
            for _ in 0..1000 {
                let side: Vec<bool> = (0..n).map(|_| rng.random()).collect();
                assert!(ours <= oracle_ncut(&edges, &side) + 1e-12);
            }
        }
    }

    #[test]
    fn coverage_and_size_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..50 {
            let n = rng.random_range(20..120u32);
            let mut edges = Vec::new();
            for a in 0..n {
                for b in a + 1..n.min(a + 8) {
                    if rng.random::<f64>() < 0.5 {
                        edges.push((a, b, rng.random_range(1..200)));
                    }
                }
            }
            let g = graph_from(n, &edges);
            let target = rng.random_range(20..40);
            let clusters = partition(&g, target, 0.2);
            let with_edge: BTreeSet<u32> = edges.iter().flat_map(|e| [e.0, e.1]).collect();
            let covered: BTreeSet<u32> = clusters.iter().flat_map(|c| c.members.clone()).collect();
            assert_eq!(covered, with_edge, "trial {trial}");
            let mut cores = BTreeSet::new();
            for c in &clusters {
                assert!(!c.members.is_empty());
                assert!(c.core.len() <= target);
                assert!(c.overlap.iter().all(|o| c.contains(*o)));
                for &m in &c.core {
                    assert!(cores.insert(m), "core image {m} assigned twice");
                }
            }
            assert_eq!(partition(&g, target, 0.2), clusters);
        }
    }

    #[test]
    fn overlap_links_neighbouring_clusters() {
        // A chain of 60 images cut into pieces of at most 25.
        let edges: Vec<_> = (0..59).map(|k| (k, k + 1, 50)).collect();
        let g = graph_from(60, &edges);
        let clusters = partition(&g, 25, 0.2);
        assert!(clusters.len() >= 3);
        for c in &clusters {
            assert!(!c.overlap.is_empty());
        }
    }
}
