//! Calibrated relative pose from bearing rays: five-point minimal solver,
//! essential-matrix decomposition and robust estimation.
//!
//! Convention: a point seen as ray `x_i` in image i and `x_j` in image j
//! satisfies `x_j ∝ R x_i + t`, so `E = [t]× R` and `x_jᵀ E x_i = 0`.

use nalgebra::{DMatrix, Matrix3, Matrix3x2, Rotation3, SMatrix, UnitQuaternion, Vector3};
use rand::Rng;

use super::poly;
use super::ransac::{ransac, RansacOptions};
use crate::geom::skew;

type Poly3 = [f64; 20];

/// Exponents (x, y, z) of the 20 monomials of degree ≤ 3, in the column
/// order used by the elimination below.
const MONOMIALS: [(u8, u8, u8); 20] = [
    (3, 0, 0),
    (0, 3, 0),
    (2, 1, 0),
    (1, 2, 0),
    (2, 0, 1),
    (2, 0, 0),
    (0, 2, 1),
    (0, 2, 0),
    (1, 1, 1),
    (1, 1, 0),
    (1, 0, 2),
    (1, 0, 1),
    (1, 0, 0),
    (0, 1, 2),
    (0, 1, 1),
    (0, 1, 0),
    (0, 0, 3),
    (0, 0, 2),
    (0, 0, 1),
    (0, 0, 0),
];

fn monomial_index(a: u8, b: u8, c: u8) -> usize {
    MONOMIALS
        .iter()
        .position(|m| *m == (a, b, c))
        .expect("degree above 3")
}

fn pmul(p: &Poly3, q: &Poly3) -> Poly3 {
    let mut out = [0.0; 20];
    for (i, a) in p.iter().enumerate() {
        if *a == 0.0 {
            continue;
        }
        let (x1, y1, z1) = MONOMIALS[i];
        for (j, b) in q.iter().enumerate() {
            if *b == 0.0 {
                continue;
            }
            let (x2, y2, z2) = MONOMIALS[j];
            out[monomial_index(x1 + x2, y1 + y2, z1 + z2)] += a * b;
        }
    }
    out
}

fn padd(p: &Poly3, q: &Poly3, s: f64) -> Poly3 {
    let mut out = *p;
    for k in 0..20 {
        out[k] += s * q[k];
    }
    out
}

/// Essential matrices consistent with five ray correspondences (up to ten).
pub fn five_point(xi: &[Vector3<f64>], xj: &[Vector3<f64>]) -> Vec<Matrix3<f64>> {
    assert_eq!(xi.len(), 5);
    assert_eq!(xj.len(), 5);
    let mut a = DMatrix::zeros(9, 9);
    for k in 0..5 {
        for r in 0..3 {
            for c in 0..3 {
                a[(k, 3 * r + c)] = xj[k][r] * xi[k][c];
            }
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&p, &q| svd.singular_values[p].total_cmp(&svd.singular_values[q]));
    let basis: Vec<[f64; 9]> = order[..4]
        .iter()
        .map(|&r| {
            let mut v = [0.0; 9];
            for k in 0..9 {
                v[k] = vt[(r, k)];
            }
            v
        })
        .collect();

    // Entries of E = x·X + y·Y + z·Z + W as polynomials.
    let (ix, iy, iz, i1) = (
        monomial_index(1, 0, 0),
        monomial_index(0, 1, 0),
        monomial_index(0, 0, 1),
        monomial_index(0, 0, 0),
    );
    let mut e = [[[0.0; 20]; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let k = 3 * r + c;
            e[r][c][ix] = basis[0][k];
            e[r][c][iy] = basis[1][k];
            e[r][c][iz] = basis[2][k];
            e[r][c][i1] = basis[3][k];
        }
    }

    let mut rows: Vec<Poly3> = Vec::with_capacity(10);
    let minor = |a: &Poly3, b: &Poly3, c: &Poly3, d: &Poly3| padd(&pmul(a, b), &pmul(c, d), -1.0);
    let det = padd(
        &padd(
            &pmul(&e[0][0], &minor(&e[1][1], &e[2][2], &e[1][2], &e[2][1])),
            &pmul(&e[0][1], &minor(&e[1][0], &e[2][2], &e[1][2], &e[2][0])),
            -1.0,
        ),
        &pmul(&e[0][2], &minor(&e[1][0], &e[2][1], &e[1][1], &e[2][0])),
        1.0,
    );
    rows.push(det);

    let mut eet = [[[0.0; 20]; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            for k in 0..3 {
                eet[r][c] = padd(&eet[r][c], &pmul(&e[r][k], &e[c][k]), 1.0);
            }
        }
    }
    let trace = padd(&padd(&eet[0][0], &eet[1][1], 1.0), &eet[2][2], 1.0);
    for r in 0..3 {
        for c in 0..3 {
            let mut p = [0.0; 20];
            for k in 0..3 {
                p = padd(&p, &pmul(&eet[r][k], &e[k][c]), 2.0);
            }
            p = padd(&p, &pmul(&trace, &e[r][c]), -1.0);
            rows.push(p);
        }
    }

    // Gauss-Jordan elimination over the first ten monomials.
    let mut m = SMatrix::<f64, 10, 20>::zeros();
    for (r, p) in rows.iter().enumerate() {
        for k in 0..20 {
            m[(r, k)] = p[k];
        }
    }
    for col in 0..10 {
        let (piv, val) = (col..10)
            .map(|r| (r, m[(r, col)].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if val < 1e-14 {
            return Vec::new();
        }
        m.swap_rows(col, piv);
        let d = m[(col, col)];
        for k in 0..20 {
            m[(col, k)] /= d;
        }
        for r in 0..10 {
            if r != col {
                let f = m[(r, col)];
                if f != 0.0 {
                    for k in 0..20 {
                        m[(r, k)] -= f * m[(col, k)];
                    }
                }
            }
        }
    }

    // z·row(x²) − row(x²z), etc.: three equations linear in (x, y, 1).
    let pairs = [(4usize, 5usize), (6, 7), (8, 9)];
    let mut b: [[Vec<f64>; 3]; 3] = Default::default();
    for row in b.iter_mut() {
        for p in row.iter_mut() {
            *p = vec![0.0; 5];
        }
    }
    for (r, &(with_z, without_z)) in pairs.iter().enumerate() {
        for k in 10..20 {
            let (ex, ey, ez) = MONOMIALS[k];
            let col = if ex == 1 {
                0
            } else if ey == 1 {
                1
            } else {
                2
            };
            b[r][col][ez as usize + 1] += m[(without_z, k)];
            b[r][col][ez as usize] -= m[(with_z, k)];
        }
    }
    let cof = |r1: usize, c1: usize, r2: usize, c2: usize| {
        poly::sub(&poly::mul(&b[r1][c1], &b[r2][c2]), &poly::mul(&b[r1][c2], &b[r2][c1]))
    };
    let det_b = poly::add(
        &poly::sub(
            &poly::mul(&b[0][0], &cof(1, 1, 2, 2)),
            &poly::mul(&b[0][1], &cof(1, 0, 2, 2)),
        ),
        &poly::mul(&b[0][2], &cof(1, 0, 2, 1)),
    );

    let mut out = Vec::new();
    for z in poly::real_roots(&det_b) {
        let bz = Matrix3::from_fn(|r, c| poly::eval(&b[r][c], z));
        let rows: [Vector3<f64>; 3] = [
            bz.row(0).transpose(),
            bz.row(1).transpose(),
            bz.row(2).transpose(),
        ];
        let candidates = [
            rows[0].cross(&rows[1]),
            rows[0].cross(&rows[2]),
            rows[1].cross(&rows[2]),
        ];
        let v = candidates
            .iter()
            .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))
            .unwrap();
        if v.z.abs() < 1e-12 * v.norm() {
            continue;
        }
        let (x, y) = (v.x / v.z, v.y / v.z);
        let mut em = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                let k = 3 * r + c;
                em[(r, c)] = x * basis[0][k] + y * basis[1][k] + z * basis[2][k] + basis[3][k];
            }
        }
        let n = em.norm();
        if n > 0.0 && n.is_finite() {
            out.push(em / n);
        }
    }
    out
}

/// Essential matrix of a relative pose.
pub fn essential_from_pose(r: &Matrix3<f64>, t: &Vector3<f64>) -> Matrix3<f64> {
    skew(t) * r
}

/// Depths `(λ_i, λ_j)` with `λ_j x_j ≈ λ_i R x_i + t` (least squares).
pub fn two_view_depths(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    xi: &Vector3<f64>,
    xj: &Vector3<f64>,
) -> Option<(f64, f64)> {
    let a = Matrix3x2::from_columns(&[r * xi, -xj]);
    let ata = a.transpose() * a;
    let sol = ata.try_inverse()? * (a.transpose() * (-t));
    Some((sol[0], sol[1]))
}

/// Symmetric epipolar error: the larger of the two angles (radians, small
/// angle form) between each ray and the epipolar plane induced by the other.
pub fn epipolar_error(e: &Matrix3<f64>, xi: &Vector3<f64>, xj: &Vector3<f64>) -> f64 {
    let nj = e * xi;
    let ni = e.transpose() * xj;
    let s = xj.dot(&nj).abs();
    let aj = s / (nj.norm() * xj.norm()).max(1e-300);
    let ai = s / (ni.norm() * xi.norm()).max(1e-300);
    aj.max(ai)
}

/// Decomposes an essential matrix, choosing the pose that places the most
/// of the given correspondences in front of both cameras.
pub fn decompose(
    e: &Matrix3<f64>,
    xi: &[Vector3<f64>],
    xj: &[Vector3<f64>],
) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let svd = e.svd(true, true);
    let mut u = svd.u?;
    let mut v = svd.v_t?.transpose();
    // Make the null direction correspond to the smallest singular value.
    let smallest = (0..3)
        .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
        .unwrap();
    if smallest != 2 {
        u.swap_columns(smallest, 2);
        v.swap_columns(smallest, 2);
    }
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v.determinant() < 0.0 {
        v = -v;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let t0: Vector3<f64> = u.column(2).into();
    let mut best = None;
    let mut best_count = 0usize;
    for r in [u * w * v.transpose(), u * w.transpose() * v.transpose()] {
        for t in [t0, -t0] {
            let count = xi
                .iter()
                .zip(xj)
                .filter(|(a, b)| matches!(two_view_depths(&r, &t, a, b), Some((l1, l2)) if l1 > 0.0 && l2 > 0.0))
                .count();
            if count > best_count {
                best_count = count;
                best = Some((r, t));
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeOptions {
    /// Inlier threshold on [`epipolar_error`] (radians).
    pub threshold: f64,
    pub ransac: RansacOptions,
    pub refine_rounds: usize,
}

impl Default for RelativeOptions {
    fn default() -> Self {
        RelativeOptions {
            threshold: 1e-3,
            ransac: RansacOptions::default(),
            refine_rounds: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeEstimate {
    pub rotation: UnitQuaternion<f64>,
    /// Unit translation direction.
    pub direction: Vector3<f64>,
    pub inliers: Vec<bool>,
}

impl RelativeEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|b| **b).count()
    }
}

fn classify(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    xi: &[Vector3<f64>],
    xj: &[Vector3<f64>],
    threshold: f64,
) -> Vec<bool> {
    let e = essential_from_pose(r, t);
    xi.iter()
        .zip(xj)
        .map(|(a, b)| {
            epipolar_error(&e, a, b) < threshold
                && matches!(two_view_depths(r, t, a, b), Some((l1, l2)) if l1 > 0.0 && l2 > 0.0)
        })
        .collect()
}

fn tangent_basis(t: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if t.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let b1 = t.cross(&helper).normalize();
    let b2 = t.cross(&b1);
    (b1, b2)
}

fn signed_residuals(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    xi: &[Vector3<f64>],
    xj: &[Vector3<f64>],
    idx: &[usize],
) -> Vec<f64> {
    let e = essential_from_pose(r, t);
    let mut out = Vec::with_capacity(2 * idx.len());
    for &k in idx {
        let nj = e * xi[k];
        let ni = e.transpose() * xj[k];
        let s = xj[k].dot(&nj);
        out.push(s / (nj.norm() * xj[k].norm()).max(1e-300));
        out.push(s / (ni.norm() * xi[k].norm()).max(1e-300));
    }
    out
}

/// Gauss-Newton refinement of (R, t) on the signed epipolar angles of the
/// given correspondences (numerical Jacobian, five parameters).
pub fn refine_relative(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    xi: &[Vector3<f64>],
    xj: &[Vector3<f64>],
    idx: &[usize],
) -> (Matrix3<f64>, Vector3<f64>) {
    let mut r = *r;
    let mut t = t.normalize();
    let cost = |r: &Matrix3<f64>, t: &Vector3<f64>| -> f64 {
        signed_residuals(r, t, xi, xj, idx).iter().map(|v| v * v).sum()
    };
    let apply = |r: &Matrix3<f64>, t: &Vector3<f64>, d: &[f64; 5]| {
        let (b1, b2) = tangent_basis(t);
        let rot = Rotation3::from_scaled_axis(Vector3::new(d[0], d[1], d[2]));
        let nr = rot.matrix() * r;
        let nt = (t + b1 * d[3] + b2 * d[4]).normalize();
        (nr, nt)
    };
    let mut current = cost(&r, &t);
    let mut lambda = 1e-6;
    for _ in 0..15 {
        let r0 = signed_residuals(&r, &t, xi, xj, idx);
        let n = r0.len();
        let mut jac = DMatrix::zeros(n, 5);
        let h = 1e-7;
        for p in 0..5 {
            let mut d = [0.0; 5];
            d[p] = h;
            let (rp, tp) = apply(&r, &t, &d);
            d[p] = -h;
            let (rm, tm) = apply(&r, &t, &d);
            let fp = signed_residuals(&rp, &tp, xi, xj, idx);
            let fm = signed_residuals(&rm, &tm, xi, xj, idx);
            for k in 0..n {
                jac[(k, p)] = (fp[k] - fm[k]) / (2.0 * h);
            }
        }
        let res = nalgebra::DVector::from_vec(r0);
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &res;
        let mut improved = false;
        for _ in 0..8 {
            let mut a = jtj.clone();
            for k in 0..5 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let d = [step[0], step[1], step[2], step[3], step[4]];
            let (nr, nt) = apply(&r, &t, &d);
            let c = cost(&nr, &nt);
            if c < current {
                r = nr;
                t = nt;
                let rel = (current - c) / current.max(1e-300);
                current = c;
                lambda = (lambda * 0.3).max(1e-12);
                improved = rel > 1e-12;
                break;
            }
            lambda *= 10.0;
        }
        if !improved || current < 1e-30 {
            break;
        }
    }
    (r, t)
}

/// Robust relative pose from ray correspondences.
pub fn estimate_relative_pose<R: Rng>(
    xi: &[Vector3<f64>],
    xj: &[Vector3<f64>],
    opts: &RelativeOptions,
    rng: &mut R,
) -> Option<RelativeEstimate> {
    let n = xi.len();
    if n < 5 || xj.len() != n {
        return None;
    }
    let (e, _) = ransac(
        n,
        5,
        &opts.ransac,
        rng,
        |s| {
            let a: Vec<Vector3<f64>> = s.iter().map(|&k| xi[k]).collect();
            let b: Vec<Vector3<f64>> = s.iter().map(|&k| xj[k]).collect();
            five_point(&a, &b)
        },
        |e| {
            let mut count = 0;
            let mut sum = 0.0;
            for k in 0..n {
                let err = epipolar_error(e, &xi[k], &xj[k]);
                if err < opts.threshold {
                    count += 1;
                    sum += err;
                }
            }
            (count, sum)
        },
    )?;
    let mask: Vec<usize> = (0..n)
        .filter(|&k| epipolar_error(&e, &xi[k], &xj[k]) < opts.threshold)
        .collect();
    let sub_i: Vec<Vector3<f64>> = mask.iter().map(|&k| xi[k]).collect();
    let sub_j: Vec<Vector3<f64>> = mask.iter().map(|&k| xj[k]).collect();
    let (mut r, mut t) = decompose(&e, &sub_i, &sub_j)?;
    let mut inliers = classify(&r, &t, xi, xj, opts.threshold);
    for _ in 0..opts.refine_rounds {
        let idx: Vec<usize> = (0..n).filter(|&k| inliers[k]).collect();
        if idx.len() < 5 {
            break;
        }
        let (nr, nt) = refine_relative(&r, &t, xi, xj, &idx);
        let next = classify(&nr, &nt, xi, xj, opts.threshold);
        let count = |m: &[bool]| m.iter().filter(|b| **b).count();
        if count(&next) < count(&inliers) {
            break;
        }
        let unchanged = next == inliers;
        r = nr;
        t = nt;
        inliers = next;
        if unchanged {
            break;
        }
    }
    let rotation = UnitQuaternion::from_matrix(&r);
    Some(RelativeEstimate {
        rotation,
        direction: t.normalize(),
        inliers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene(seed: u64, n: usize) -> (Matrix3<f64>, Vector3<f64>, Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = Rotation3::from_euler_angles(
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
            rng.random_range(-3.0..3.0),
        )
        .into_inner();
        let t = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.2..0.2))
            .normalize();
        let mut xi = Vec::new();
        let mut xj = Vec::new();
        while xi.len() < n {
            let p = Vector3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(6.0..10.0));
            let q = r * p + t;
            if q.z > 0.5 {
                xi.push(p.normalize());
                xj.push(q.normalize());
            }
        }
        (r, t, xi, xj)
    }

    #[test]
    fn five_point_contains_true_solution() {
        for seed in 0..20 {
            let (r, t, xi, xj) = scene(seed, 5);
            let truth = essential_from_pose(&r, &t).normalize();
            let sols = five_point(&xi, &xj);
            let best = sols
                .iter()
                .map(|e| (e - truth).norm().min((e + truth).norm()))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-8, "seed {seed}: {best}");
        }
    }

    #[test]
    fn decomposition_recovers_pose() {
        let (r, t, xi, xj) = scene(42, 30);
        let e = essential_from_pose(&r, &t);
        let (er, et) = decompose(&e, &xi, &xj).unwrap();
        assert!((er - r).norm() < 1e-9);
        assert!((et - t).norm() < 1e-9);
    }

    #[test]
    fn noiseless_relative_pose() {
        let (r, t, xi, xj) = scene(7, 200);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let est = estimate_relative_pose(&xi, &xj, &RelativeOptions::default(), &mut rng).unwrap();
        assert_eq!(est.inlier_count(), 200);
        let truth = UnitQuaternion::from_matrix(&r);
        assert!(est.rotation.angle_to(&truth) < 1e-6);
        assert!((est.direction - t).norm() < 1e-6);
    }

    #[test]
    fn too_few_matches() {
        let (_, _, xi, xj) = scene(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(estimate_relative_pose(&xi, &xj, &RelativeOptions::default(), &mut rng).is_none());
    }
}
