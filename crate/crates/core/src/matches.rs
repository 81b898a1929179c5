//! Pairwise feature correspondences, the input to view-graph construction.

use std::collections::BTreeMap;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

pub type ImageId = u32;

/// One correspondence between feature `fi` of image `i` and feature `fj` of
/// image `j` (with `i < j` as stored in a [`MatchSet`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatch {
    pub fi: u32,
    pub fj: u32,
    pub pi: Vector2<f64>,
    pub pj: Vector2<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub image_count: u32,
    /// Keyed by `(i, j)` with `i < j`.
    pub pairs: BTreeMap<(ImageId, ImageId), Vec<FeatureMatch>>,
}

impl MatchSet {
    pub fn new(image_count: u32) -> Self {
        MatchSet {
            image_count,
            pairs: BTreeMap::new(),
        }
    }

    /// Inserts matches for an unordered pair, swapping sides if `i > j`.
    pub fn insert(&mut self, i: ImageId, j: ImageId, matches: Vec<FeatureMatch>) {
        assert_ne!(i, j, "self-pair");
        if i < j {
            self.pairs.insert((i, j), matches);
        } else {
            let swapped = matches
                .into_iter()
                .map(|m| FeatureMatch {
                    fi: m.fj,
                    fj: m.fi,
                    pi: m.pj,
                    pj: m.pi,
                })
                .collect();
            self.pairs.insert((j, i), swapped);
        }
    }

    pub fn get(&self, i: ImageId, j: ImageId) -> Option<&Vec<FeatureMatch>> {
        self.pairs.get(&(i.min(j), i.max(j)))
    }

    pub fn total_matches(&self) -> usize {
        self.pairs.values().map(Vec::len).sum()
    }
}

pub fn ordered(i: ImageId, j: ImageId) -> (ImageId, ImageId) {
    (i.min(j), i.max(j))
}
