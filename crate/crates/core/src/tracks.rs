//! Feature tracks: connected components of the match graph over
//! `(image, feature)` observations.

use std::collections::{BTreeMap, HashMap};

use nalgebra::Vector2;
use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::matches::FeatureMatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackObservation {
    pub image: u32,
    pub feature: u32,
    pub pixel: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    /// Sorted by image; at most one observation per image.
    pub observations: Vec<TrackObservation>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn in_image(&self, image: u32) -> Option<&TrackObservation> {
        self.observations
            .binary_search_by_key(&image, |o| o.image)
            .ok()
            .map(|k| &self.observations[k])
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackSet {
    pub tracks: Vec<Track>,
    /// Observations removed because their component already had an
    /// observation in the same image.
    pub dropped_conflicts: usize,
}

impl TrackSet {
    /// `(image, feature) → track index` lookup.
    pub fn index(&self) -> HashMap<(u32, u32), usize> {
        let mut out = HashMap::new();
        for (t, track) in self.tracks.iter().enumerate() {
            for o in &track.observations {
                out.insert((o.image, o.feature), t);
            }
        }
        out
    }
}

/// Builds tracks from image-pair matches given as `(i, j, match)`.
///
/// Observations join in the order the matches are supplied. When a
/// component ends up with several observations in one image, the one that
/// joined first is kept and the later ones are dropped. Tracks with fewer
/// than two observations are discarded. Output order is by the first
/// `(image, feature)` of each track.
pub fn build_tracks<'a, I>(matches: I) -> TrackSet
where
    I: IntoIterator<Item = (u32, u32, &'a FeatureMatch)>,
{
    let mut node_of: HashMap<(u32, u32), usize> = HashMap::new();
    let mut nodes: Vec<TrackObservation> = Vec::new();
    let mut uf: UnionFind<usize> = UnionFind::new(0);
    let mut node = |img: u32, feat: u32, px: Vector2<f64>, uf: &mut UnionFind<usize>| -> usize {
        *node_of.entry((img, feat)).or_insert_with(|| {
            nodes.push(TrackObservation {
                image: img,
                feature: feat,
                pixel: px,
            });
            uf.new_set()
        })
    };
    for (i, j, m) in matches {
        let a = node(i, m.fi, m.pi, &mut uf);
        let b = node(j, m.fj, m.pj, &mut uf);
        uf.union(a, b);
    }
    let mut groups: BTreeMap<usize, BTreeMap<u32, usize>> = BTreeMap::new();
    let mut dropped = 0;
    // Node indices follow join order, so the first node seen per image wins.
    for n in 0..nodes.len() {
        let g = groups.entry(uf.find(n)).or_default();
        if g.contains_key(&nodes[n].image) {
            dropped += 1;
        } else {
            g.insert(nodes[n].image, n);
        }
    }
    let mut tracks: Vec<Track> = groups
        .into_values()
        .filter(|g| g.len() >= 2)
        .map(|g| Track {
            observations: g.into_values().map(|n| nodes[n]).collect(),
        })
        .collect();
    tracks.sort_by_key(|t| (t.observations[0].image, t.observations[0].feature));
    TrackSet {
        tracks,
        dropped_conflicts: dropped,
    }
}
