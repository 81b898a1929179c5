use nalgebra::{UnitQuaternion, Vector3};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, Stream};
use super::{SimError, SurveyTruth};
use crate::geom::Pose;

/// Rectangular region (local north/east, metres) where features are
/// additionally suppressed, emulating murky water.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakStrip {
    pub north: [f64; 2],
    pub east: [f64; 2],
    /// Extra dropout probability applied inside the region.
    pub dropout_multiplier: f64,
}

impl WeakStrip {
    pub fn contains(&self, north: f64, east: f64) -> bool {
        north >= self.north[0] && north <= self.north[1] && east >= self.east[0] && east <= self.east[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// White position noise per axis (north, east, down), metres.
    pub nav_pos_sigma: [f64; 3],
    /// White attitude noise per axis (roll, pitch, yaw), degrees.
    pub nav_rot_sigma_deg: [f64; 3],
    /// Random-walk position drift rate (m/√s), applied per axis.
    pub drift_pos_rate: f64,
    /// Random-walk attitude drift rate (deg/√s), applied per axis.
    pub drift_rot_rate: f64,
    /// Per-axis bound of the random walk (m).
    pub drift_pos_bound: f64,
    /// Per-axis bound of the attitude random walk (deg).
    pub drift_rot_bound_deg: f64,
    pub pixel_sigma: f64,
    pub outlier_fraction: f64,
    pub dropout_fraction: f64,
    pub weak_strip: Option<WeakStrip>,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::noiseless()
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        NoiseModel {
            nav_pos_sigma: [0.0; 3],
            nav_rot_sigma_deg: [0.0; 3],
            drift_pos_rate: 0.0,
            drift_rot_rate: 0.0,
            drift_pos_bound: 10.0,
            drift_rot_bound_deg: 5.0,
            pixel_sigma: 0.0,
            outlier_fraction: 0.0,
            dropout_fraction: 0.0,
            weak_strip: None,
        }
    }

    /// Navigation σ 0.5 m / 1°, pixel σ 0.5 px, 20 % outlier matches.
    pub fn default_noisy() -> Self {
        NoiseModel {
            nav_pos_sigma: [0.5; 3],
            nav_rot_sigma_deg: [1.0; 3],
            pixel_sigma: 0.5,
            outlier_fraction: 0.2,
            ..Self::noiseless()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, value) in [
            ("outlier_fraction", self.outlier_fraction),
            ("dropout_fraction", self.dropout_fraction),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SimError::Fraction { name, value });
            }
        }
        if let Some(w) = &self.weak_strip {
            if !(0.0..=1.0).contains(&w.dropout_multiplier) {
                return Err(SimError::Fraction {
                    name: "weak_strip.dropout_multiplier",
                    value: w.dropout_multiplier,
                });
            }
        }
        let scalars = [
            self.drift_pos_rate,
            self.drift_rot_rate,
            self.drift_pos_bound,
            self.drift_rot_bound_deg,
            self.pixel_sigma,
        ];
        let sigmas = self.nav_pos_sigma.iter().chain(&self.nav_rot_sigma_deg).chain(&scalars);
        for &value in sigmas {
            if !(value >= 0.0) {
                return Err(SimError::Negative { name: "noise sigma", value });
            }
        }
        Ok(())
    }

    pub fn has_nav_noise(&self) -> bool {
        self.nav_pos_sigma.iter().chain(&self.nav_rot_sigma_deg).any(|s| *s > 0.0)
            || self.drift_pos_rate > 0.0
            || self.drift_rot_rate > 0.0
    }
}

fn gaussian(rng: &mut impl rand::Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    } else {
        0.0
    }
}

/// Navigation priors (world→vehicle) from the true trajectory: white noise
/// plus a bounded random walk, both on position and on roll/pitch/yaw.
pub fn corrupt_navigation(truth: &SurveyTruth, noise: &NoiseModel, seed: u64) -> Vec<Pose> {
    if !noise.has_nav_noise() {
        return truth.vehicle_poses.clone();
    }
    let mut walk_pos: Vector3<f64> = Vector3::zeros();
    let mut walk_rot: Vector3<f64> = Vector3::zeros();
    let mut last_t = truth.timestamps.first().copied().unwrap_or(0.0);
    let mut out = Vec::with_capacity(truth.vehicle_poses.len());
    for (k, pose) in truth.vehicle_poses.iter().enumerate() {
        let t = truth.timestamps[k];
        let dt = (t - last_t).max(0.0);
        last_t = t;
        let mut drift = stream_rng(seed, Stream::NavDrift, k as u64);
        for a in 0..3 {
            walk_pos[a] = (walk_pos[a] + gaussian(&mut drift, noise.drift_pos_rate * dt.sqrt()))
                .clamp(-noise.drift_pos_bound, noise.drift_pos_bound);
            walk_rot[a] = (walk_rot[a] + gaussian(&mut drift, noise.drift_rot_rate * dt.sqrt()))
                .clamp(-noise.drift_rot_bound_deg, noise.drift_rot_bound_deg);
        }
        let mut white = stream_rng(seed, Stream::Nav, k as u64);
        let mut center = pose.center();
        for a in 0..3 {
            center[a] += walk_pos[a] + gaussian(&mut white, noise.nav_pos_sigma[a]);
        }
        let world_from_body = pose.rotation().inverse();
        let (roll, pitch, yaw) = world_from_body.euler_angles();
        let mut d = [0.0; 3];
        for a in 0..3 {
            d[a] = (walk_rot[a] + gaussian(&mut white, noise.nav_rot_sigma_deg[a])).to_radians();
        }
        let r = UnitQuaternion::from_euler_angles(roll + d[0], pitch + d[1], yaw + d[2]);
        out.push(Pose::from_center(r, center));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::{generate_survey, SurveyConfig};
    use super::*;

    fn long_survey() -> SurveyTruth {
        generate_survey(&SurveyConfig {
            track_count: 6,
            track_length: 200.0,
            image_interval: 2.0,
            landmark_density: 0.05,
            cross_track: false,
            ..SurveyConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_noise_is_exact() {
        let truth = generate_survey(&SurveyConfig {
            track_count: 2,
            track_length: 20.0,
            ..SurveyConfig::default()
        })
        .unwrap();
        assert_eq!(corrupt_navigation(&truth, &NoiseModel::noiseless(), 3), truth.vehicle_poses);
    }

    #[test]
    fn white_position_noise_rmse() {
        let truth = long_survey();
        assert!(truth.image_count() >= 500);
        let noise = NoiseModel {
            nav_pos_sigma: [0.5; 3],
            ..NoiseModel::noiseless()
        };
        let priors = corrupt_navigation(&truth, &noise, 11);
        let mse: f64 = priors
            .iter()
            .zip(&truth.vehicle_poses)
            .map(|(p, t)| (p.center() - t.center()).norm_squared())
            .sum::<f64>()
            / priors.len() as f64;
        let rmse = mse.sqrt();
        // Chi distribution with 3 dof: E[|e|²] = 3σ².
        let scale = 3f64.sqrt();
        assert!(rmse >= 0.4 * scale && rmse <= 0.6 * scale, "rmse {rmse}");
    }

    #[test]
    fn drift_error_grows_along_the_trajectory() {
        let truth = long_survey();
        let noise = NoiseModel {
            drift_pos_rate: 0.05,
            drift_pos_bound: 1e6,
            ..NoiseModel::noiseless()
        };
        let n = truth.image_count();
        let trials = 200;
        // Mean squared error per tenth of the trajectory, averaged over seeds.
        let mut buckets = [0.0; 10];
        for seed in 0..trials {
            let priors = corrupt_navigation(&truth, &noise, seed);
            for (k, (p, t)) in priors.iter().zip(&truth.vehicle_poses).enumerate() {
                buckets[k * 10 / n] += (p.center() - t.center()).norm_squared();
            }
        }
        // Random walk: E|e|² = 3 r² t, linear in elapsed time.
        assert!(buckets.windows(2).all(|w| w[1] > w[0]), "{buckets:?}");
        let bucket: Vec<usize> = (0..n).filter(|k| k * 10 / n == 5).collect();
        let mean_t = bucket.iter().map(|&k| truth.timestamps[k]).sum::<f64>() / bucket.len() as f64;
        let expected = 3.0 * 0.05f64.powi(2) * mean_t;
        let measured = buckets[5] / (trials as f64 * bucket.len() as f64);
        assert!((measured / expected - 1.0).abs() < 0.3, "{measured} vs {expected}");
    }
}
