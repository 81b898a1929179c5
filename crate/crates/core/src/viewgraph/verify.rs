use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ViewGraphEdge;
use crate::geom::CameraIntrinsics;
use crate::matches::FeatureMatch;
use crate::solver::essential::{estimate_relative_pose, RelativeOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyOptions {
    /// Angular inlier threshold on ray pairs (radians).
    pub threshold: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub min_inliers: usize,
    pub min_inlier_ratio: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            threshold: 1e-3,
            max_iterations: 1000,
            confidence: 0.999,
            min_inliers: 15,
            min_inlier_ratio: 0.25,
        }
    }
}

impl VerifyOptions {
    fn relative(&self) -> RelativeOptions {
        let mut o = RelativeOptions {
            threshold: self.threshold,
            ..RelativeOptions::default()
        };
        o.ransac.max_iterations = self.max_iterations;
        o.ransac.min_iterations = o.ransac.min_iterations.min(self.max_iterations);
        o.ransac.confidence = self.confidence;
        o
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
pub enum Rejection {
    #[error("{found} matches, at least 5 needed")]
    TooFewMatches { found: usize },
    #[error("no essential matrix consistent with the matches")]
    NoModel,
    #[error("{found} inliers, {required} required")]
    TooFewInliers { found: usize, required: usize },
    #[error("inlier ratio {ratio:.3} below {floor}")]
    LowInlierRatio { ratio: f64, floor: f64 },
}

/// Geometric verification of one image pair: RANSAC essential matrix on
/// unit rays, decomposed into a relative rotation and translation direction
/// (`x_j ∝ R x_i + t`). Only the inlier matches are kept on the edge.
pub fn verify_two_view<R: Rng>(
    i: u32,
    j: u32,
    matches: &[FeatureMatch],
    camera: &CameraIntrinsics,
    opts: &VerifyOptions,
    rng: &mut R,
) -> Result<ViewGraphEdge, Rejection> {
    if matches.len() < 5 {
        return Err(Rejection::TooFewMatches { found: matches.len() });
    }
    let xi: Vec<Vector3<f64>> = matches.iter().map(|m| camera.unproject(&m.pi)).collect();
    let xj: Vec<Vector3<f64>> = matches.iter().map(|m| camera.unproject(&m.pj)).collect();
    let est = estimate_relative_pose(&xi, &xj, &opts.relative(), rng).ok_or(Rejection::NoModel)?;
    let found = est.inlier_count();
    if found < opts.min_inliers.max(5) {
        return Err(Rejection::TooFewInliers {
            found,
            required: opts.min_inliers.max(5),
        });
    }
    let ratio = found as f64 / matches.len() as f64;
    if ratio < opts.min_inlier_ratio {
        return Err(Rejection::LowInlierRatio {
            ratio,
            floor: opts.min_inlier_ratio,
        });
    }
    let inliers: Vec<FeatureMatch> = matches
        .iter()
        .zip(&est.inliers)
        .filter(|(_, ok)| **ok)
        .map(|(m, _)| *m)
        .collect();
    Ok(ViewGraphEdge {
        i,
        j,
        n_m: found,
        inliers,
        rotation: est.rotation,
        direction: est.direction.normalize(),
        n_p: 0,
        metric_relative: None,
    })
}
