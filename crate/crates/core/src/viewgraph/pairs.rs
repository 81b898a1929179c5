use std::collections::{BTreeSet, HashMap};

use crate::geom::{CameraIntrinsics, Pose};

/// Spatial matching radius: a multiple of the narrow-side half footprint at
/// the nominal altitude.
pub fn default_pair_radius(altitude: f64, camera: &CameraIntrinsics) -> f64 {
    2.5 * altitude * camera.min_half_fov().tan()
}

/// Candidate image pairs from prior positions.
///
/// A pair is kept when the centres are within `radius` and one image is
/// among the `max_neighbors` nearest of the other (distance, then id).
/// Pairs come back as `(i, j)` with `i < j`, sorted.
pub fn select_pairs(priors: &[Pose], radius: f64, max_neighbors: usize) -> Vec<(u32, u32)> {
    if priors.is_empty() || !(radius > 0.0) || max_neighbors == 0 {
        return Vec::new();
    }
    let centers: Vec<_> = priors.iter().map(Pose::center).collect();
    let cell = |x: f64| (x / radius).floor() as i64;
    let mut grid: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
    for (k, c) in centers.iter().enumerate() {
        grid.entry((cell(c.x), cell(c.y), cell(c.z))).or_default().push(k as u32);
    }
    let r2 = radius * radius;
    let mut out = BTreeSet::new();
    for (i, c) in centers.iter().enumerate() {
        let (cx, cy, cz) = (cell(c.x), cell(c.y), cell(c.z));
        let mut near: Vec<(f64, u32)> = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(list) = grid.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    for &j in list {
                        if j as usize == i {
                            continue;
                        }
                        let d2 = (centers[j as usize] - c).norm_squared();
                        if d2 <= r2 {
                            near.push((d2, j));
                        }
                    }
                }
            }
        }
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in near.iter().take(max_neighbors) {
            let i = i as u32;
            out.insert((i.min(j), i.max(j)));
        }
    }
    out.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survey_sim::{generate_survey, SurveyConfig};
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn at(x: f64, y: f64, z: f64) -> Pose {
        Pose::from_center(UnitQuaternion::identity(), Vector3::new(x, y, z))
    }

    #[test]
    fn distant_images_are_not_paired() {
        let p = [at(0.0, 0.0, 0.0), at(100.0, 0.0, 0.0)];
        assert!(select_pairs(&p, 20.0, 10).is_empty());
        assert_eq!(select_pairs(&p, 200.0, 10), vec![(0, 1)]);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..10 {
            let n = rng.random_range(20..=200);
            let priors: Vec<Pose> = (0..n)
                .map(|_| at(rng.random_range(0.0..60.0), rng.random_range(0.0..40.0), rng.random_range(0.0..3.0)))
                .collect();
            let radius = rng.random_range(3.0..15.0);
            let cap = rng.random_range(1..30);
            let mut expected = BTreeSet::new();
            for i in 0..n {
                let mut d: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| ((priors[i].center() - priors[j].center()).norm(), j))
                    .filter(|(d, _)| *d <= radius)
                    .collect();
                d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                for (_, j) in d.into_iter().take(cap) {
                    expected.insert((i.min(j) as u32, i.max(j) as u32));
                }
            }
            let got = select_pairs(&priors, radius, cap);
            assert_eq!(got, expected.into_iter().collect::<Vec<_>>(), "trial {trial}");
        }
    }

    #[test]
    fn lawnmower_neighbours_in_adjacent_tracks() {
        let cfg = SurveyConfig {
            track_count: 4,
            track_length: 40.0,
            cross_track: false,
            landmark_density: 0.1,
            ..SurveyConfig::default()
        };
        let truth = generate_survey(&cfg).unwrap();
        let pairs: BTreeSet<_> = select_pairs(&truth.vehicle_poses, 12.0, 40).into_iter().collect();
        let n = truth.image_count();
        for i in 0..n {
            let ti = truth.image_track[i];
            for tj in [ti.wrapping_sub(1), ti + 1] {
                if tj as usize >= cfg.track_count {
                    continue;
                }
                // Geometric enumeration: the closest exposure on the
                // neighbouring track lies one spacing away.
                let j = (0..n)
                    .filter(|&j| truth.image_track[j] == tj)
                    .min_by(|&a, &b| {
                        let da = truth.vehicle_poses[a].center_distance(&truth.vehicle_poses[i]);
                        let db = truth.vehicle_poses[b].center_distance(&truth.vehicle_poses[i]);
                        da.total_cmp(&db)
                    })
                    .unwrap();
                let key = (i.min(j) as u32, i.max(j) as u32);
                assert!(pairs.contains(&key), "{i} missing neighbour {j} on track {tj}");
            }
        }
    }

    #[test]
    fn default_radius_covers_adjacent_tracks() {
        let cam = CameraIntrinsics::with_horizontal_fov(4104, 3006, 88.0);
        let r = default_pair_radius(8.0, &cam);
        assert!(r > 10.0 && r < 15.0, "{r}");
    }
}
