use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacOptions {
    pub max_iterations: usize,
    pub min_iterations: usize,
    /// Probability of having drawn at least one all-inlier sample before the
    /// adaptive exit.
    pub confidence: f64,
}

impl Default for RansacOptions {
    fn default() -> Self {
        RansacOptions {
            max_iterations: 1000,
            min_iterations: 20,
            confidence: 0.999,
        }
    }
}

/// Number of iterations needed to reach `confidence` at inlier ratio `w`.
pub fn required_iterations(w: f64, sample_size: usize, confidence: f64) -> usize {
    let p = w.powi(sample_size as i32);
    if p <= 0.0 {
        return usize::MAX;
    }
    if p >= 1.0 {
        return 1;
    }
    let n = (1.0 - confidence).ln() / (1.0 - p).ln();
    if n.is_finite() {
        n.ceil() as usize
    } else {
        usize::MAX
    }
}

/// Generic hypothesize-and-verify loop.
///
/// `fit` produces zero or more models from a minimal sample; `score`
/// returns `(inlier count, residual sum over inliers)` for a model. Models
/// are ranked by inlier count, ties broken by the lower residual sum.
pub fn ransac<M, R: Rng>(
    n: usize,
    sample_size: usize,
    opts: &RansacOptions,
    rng: &mut R,
    mut fit: impl FnMut(&[usize]) -> Vec<M>,
    mut score: impl FnMut(&M) -> (usize, f64),
) -> Option<(M, usize)> {
    if n < sample_size {
        return None;
    }
    let mut best: Option<(M, usize, f64)> = None;
    let mut needed = opts.max_iterations;
    let mut iter = 0;
    while iter < needed.max(opts.min_iterations).min(opts.max_iterations) {
        iter += 1;
        let sample = rand::seq::index::sample(rng, n, sample_size).into_vec();
        for model in fit(&sample) {
            let (count, err) = score(&model);
            let better = match &best {
                None => count >= sample_size,
                Some((_, c, e)) => count > *c || (count == *c && err < *e),
            };
            if better {
                needed = required_iterations(count as f64 / n as f64, sample_size, opts.confidence);
                best = Some((model, count, err));
            }
        }
    }
    best.map(|(m, c, _)| (m, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn iteration_count_law() {
        // 50% inliers, 2-point sample, 99%: ln(0.01)/ln(0.75) = 16.01
        assert_eq!(required_iterations(0.5, 2, 0.99), 17);
        assert_eq!(required_iterations(1.0, 5, 0.999), 1);
        assert_eq!(required_iterations(0.0, 5, 0.999), usize::MAX);
    }

    #[test]
    fn fits_a_line_through_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pts: Vec<(f64, f64)> = (0..70).map(|i| (i as f64, 2.0 * i as f64 + 1.0)).collect();
        for _ in 0..30 {
            pts.push((rng.random_range(0.0..70.0), rng.random_range(-100.0..100.0)));
        }
        let (model, count) = ransac(
            pts.len(),
            2,
            &RansacOptions::default(),
            &mut rng,
            |s| {
                let (a, b) = (pts[s[0]], pts[s[1]]);
                if a.0 == b.0 {
                    return vec![];
                }
                let m = (b.1 - a.1) / (b.0 - a.0);
                vec![(m, a.1 - m * a.0)]
            },
            |&(m, c)| {
                let mut n = 0;
                let mut e = 0.0;
                for p in &pts {
                    let r = (p.1 - m * p.0 - c).abs();
                    if r < 1e-6 {
                        n += 1;
                        e += r;
                    }
                }
                (n, e)
            },
        )
        .unwrap();
        assert!(count >= 70);
        assert!((model.0 - 2.0).abs() < 1e-9 && (model.1 - 1.0).abs() < 1e-9);
    }
}
