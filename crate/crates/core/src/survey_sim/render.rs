use std::collections::BTreeMap;

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::noise::NoiseModel;
use crate::rng::{stream_rng, Stream};
use super::SurveyTruth;
use crate::matches::{FeatureMatch, MatchSet};

/// Simulated correspondences plus the bookkeeping that stays on the
/// simulator side.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedMatches {
    pub matches: MatchSet,
    /// Per pair and per match: `true` for a geometrically consistent match.
    pub labels: BTreeMap<(u32, u32), Vec<bool>>,
    /// Per image, the landmark behind each feature index (`None` for
    /// spurious features created by outliers).
    pub feature_landmarks: Vec<Vec<Option<u32>>>,
}

impl SimulatedMatches {
    pub fn outlier_fraction(&self) -> f64 {
        let total: usize = self.labels.values().map(Vec::len).sum();
        let bad: usize = self.labels.values().flatten().filter(|l| !**l).count();
        if total == 0 {
            0.0
        } else {
            bad as f64 / total as f64
        }
    }
}

struct Feature {
    landmark: u32,
    pixel: Vector2<f64>,
}

/// Noisy, partially dropped observations turned into pairwise matches.
///
/// Features of an image are its surviving observations ordered by landmark
/// id; the feature index is the position in that list. Every pair of
/// images sharing a surviving landmark receives one match per shared
/// landmark. An outlier replaces the second image's feature by a spurious
/// one at a uniformly random pixel.
pub fn render_observations(truth: &SurveyTruth, noise: &NoiseModel, seed: u64) -> SimulatedMatches {
    let cam = truth.intrinsics;
    let n_images = truth.image_count();
    let features: Vec<Vec<Feature>> = (0..n_images as u32)
        .into_par_iter()
        .map(|img| {
            let center = truth.camera_poses[img as usize].center();
            let mut survive = 1.0 - noise.dropout_fraction;
            if let Some(strip) = &noise.weak_strip {
                if strip.contains(center.x, center.y) {
                    survive *= 1.0 - strip.dropout_multiplier;
                }
            }
            let mut drop_rng = stream_rng(seed, Stream::Dropout, img as u64);
            let mut pix_rng = stream_rng(seed, Stream::Pixel, img as u64);
            let pix = (noise.pixel_sigma > 0.0).then(|| Normal::new(0.0, noise.pixel_sigma).unwrap());
            let mut out = Vec::new();
            for o in truth.observations_of(img) {
                // Always draw, so toggling dropout does not shift the pixel
                // stream and vice versa.
                let keep = drop_rng.random::<f64>() < survive;
                let d = match &pix {
                    Some(n) => Vector2::new(n.sample(&mut pix_rng), n.sample(&mut pix_rng)),
                    None => Vector2::zeros(),
                };
                if keep {
                    out.push(Feature {
                        landmark: o.landmark,
                        pixel: o.pixel + d,
                    });
                }
            }
            out
        })
        .collect();

    let mut by_landmark: BTreeMap<u32, Vec<(u32, u32)>> = BTreeMap::new();
    for (img, feats) in features.iter().enumerate() {
        for (f, feat) in feats.iter().enumerate() {
            by_landmark
                .entry(feat.landmark)
                .or_default()
                .push((img as u32, f as u32));
        }
    }
    let mut pairs: BTreeMap<(u32, u32), Vec<FeatureMatch>> = BTreeMap::new();
    for views in by_landmark.values() {
        for a in 0..views.len() {
            for b in a + 1..views.len() {
                let (i, fi) = views[a];
                let (j, fj) = views[b];
                pairs.entry((i, j)).or_default().push(FeatureMatch {
                    fi,
                    fj,
                    pi: features[i as usize][fi as usize].pixel,
                    pj: features[j as usize][fj as usize].pixel,
                });
            }
        }
    }

    let mut feature_landmarks: Vec<Vec<Option<u32>>> = features
        .iter()
        .map(|f| f.iter().map(|x| Some(x.landmark)).collect())
        .collect();
    let mut labels = BTreeMap::new();
    let mut matches = MatchSet::new(n_images as u32);
    for ((i, j), mut list) in pairs {
        let mut rng = stream_rng(seed, Stream::Outlier, ((i as u64) << 32) | j as u64);
        let mut lab = Vec::with_capacity(list.len());
        for m in &mut list {
            let outlier = rng.random::<f64>() < noise.outlier_fraction;
            let px = Vector2::new(
                rng.random_range(0.0..cam.width as f64),
                rng.random_range(0.0..cam.height as f64),
            );
            if outlier {
                let spurious = &mut feature_landmarks[j as usize];
                m.fj = spurious.len() as u32;
                m.pj = px;
                spurious.push(None);
            }
            lab.push(!outlier);
        }
        labels.insert((i, j), lab);
        matches.pairs.insert((i, j), list);
    }
    SimulatedMatches {
        matches,
        labels,
        feature_landmarks,
    }
}

#[cfg(test)]
mod tests {
    use super::super::{generate_survey, SurveyConfig, WeakStrip};
    use super::*;
    use std::collections::BTreeSet;

    fn small() -> SurveyTruth {
        generate_survey(&SurveyConfig {
            track_count: 3,
            track_length: 30.0,
            ..SurveyConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn noiseless_matches_equal_covisibility() {
        let truth = small();
        let sim = render_observations(&truth, &NoiseModel::noiseless(), 1);
        let n = truth.image_count() as u32;
        for i in 0..n {
            let a: BTreeSet<u32> = truth.observations_of(i).iter().map(|o| o.landmark).collect();
            for j in i + 1..n {
                let b: BTreeSet<u32> = truth.observations_of(j).iter().map(|o| o.landmark).collect();
                let shared = a.intersection(&b).count();
                let got = sim.matches.get(i, j).map_or(0, Vec::len);
                assert_eq!(got, shared, "pair {i},{j}");
            }
        }
        assert_eq!(sim.outlier_fraction(), 0.0);
    }

    #[test]
    fn outlier_fraction_is_respected() {
        let truth = small();
        let noise = NoiseModel {
            outlier_fraction: 0.3,
            ..NoiseModel::noiseless()
        };
        let sim = render_observations(&truth, &noise, 4);
        let f = sim.outlier_fraction();
        assert!((f - 0.3).abs() <= 0.02, "{f}");
        // Labels agree with the geometry: inlier features map to one landmark.
        for ((i, j), list) in &sim.matches.pairs {
            for (m, ok) in list.iter().zip(&sim.labels[&(*i, *j)]) {
                let li = sim.feature_landmarks[*i as usize][m.fi as usize];
                let lj = sim.feature_landmarks[*j as usize][m.fj as usize];
                assert_eq!(*ok, li.is_some() && li == lj);
            }
        }
    }

    #[test]
    fn weak_strip_suppresses_matches() {
        let truth = small();
        // Strip over the middle of the first track.
        let c0 = truth.camera_poses[0].center();
        let strip = WeakStrip {
            north: [-6.0, 6.0],
            east: [c0.y - 1.0, c0.y + 1.0],
            dropout_multiplier: 0.9,
        };
        let noise = NoiseModel {
            weak_strip: Some(strip),
            ..NoiseModel::noiseless()
        };
        let sim = render_observations(&truth, &noise, 2);
        let inside = |k: u32| {
            let c = truth.camera_poses[k as usize].center();
            strip.contains(c.x, c.y)
        };
        let consecutive = |i: u32, j: u32| {
            j == i + 1 && truth.image_track[i as usize] == truth.image_track[j as usize]
        };
        // Comparable pairs: consecutive exposures on a track, outside the strip.
        let outside: Vec<usize> = sim
            .matches
            .pairs
            .iter()
            .filter(|(&(i, j), _)| consecutive(i, j) && !inside(i) && !inside(j))
            .map(|(_, l)| l.len())
            .collect();
        let reference = outside.iter().sum::<usize>() as f64 / outside.len() as f64;
        let mut tested = 0;
        for (&(i, j), list) in &sim.matches.pairs {
            if consecutive(i, j) && inside(i) && inside(j) {
                assert!((list.len() as f64) < 0.2 * reference, "{} vs {reference}", list.len());
                tested += 1;
            }
        }
        assert!(tested > 0);
    }

    #[test]
    fn deterministic() {
        let truth = small();
        let noise = NoiseModel::default_noisy();
        assert_eq!(render_observations(&truth, &noise, 8), render_observations(&truth, &noise, 8));
    }
}
