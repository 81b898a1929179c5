use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SMatrix, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::geom::{pose_residual_with_jacobians, CameraIntrinsics, Pose, ResidualWeights, RigExtrinsics, INTRINSIC_PARAMS};
use crate::scene::Scene;
use crate::solver::lm::clamp_scaling;
use crate::solver::{minimize, BlockSymmetric, LeastSquaresProblem, Linearization, LmOptions, LmReport, SolverError};

/// Weights of the navigation prior term and robustness of the reprojection
/// term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorPenaltyConfig {
    pub weights: ResidualWeights,
    /// Soft-L1 width (px); 0 disables the robust loss.
    pub robust_width: f64,
}

impl Default for PriorPenaltyConfig {
    /// Square-root information of 0.5 m / 1° navigation noise.
    fn default() -> Self {
        PriorPenaltyConfig {
            weights: ResidualWeights::isotropic(1.0 / 1f64.to_radians(), 1.0 / 0.5),
            robust_width: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaOptions {
    pub prior: PriorPenaltyConfig,
    pub refine_intrinsics: bool,
    pub refine_rig: bool,
    /// Square-root information of the rig calibration, pulling a refined
    /// rig toward the one the adjustment starts from. The lever arm along
    /// the viewing axis is otherwise nearly unobservable for a vehicle that
    /// mostly yaws.
    pub rig_prior: ResidualWeights,
    pub lm: LmOptions,
}

impl Default for BaOptions {
    fn default() -> Self {
        BaOptions {
            prior: PriorPenaltyConfig::default(),
            refine_intrinsics: false,
            refine_rig: false,
            // 1° / 1 cm calibration uncertainty.
            rig_prior: ResidualWeights::isotropic(1.0 / 1f64.to_radians(), 1.0 / 0.01),
            lm: LmOptions {
                max_iterations: 100,
                ..LmOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaReport {
    pub lm: LmReport,
    pub observations: usize,
    /// Observations left out because they were behind their camera at the
    /// start.
    pub dropped_behind: usize,
    /// Poses held constant to fix the gauge.
    pub fixed: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BaError {
    #[error("bundle adjustment needs at least two posed images, got {0}")]
    TooFewImages(usize),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy)]
struct Obs {
    cam: usize,
    point: usize,
    pixel: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaState {
    pub poses: Vec<Pose>,
    pub points: Vec<Vector3<f64>>,
    pub intrinsics: CameraIntrinsics,
    pub rig: RigExtrinsics,
}

/// Cost of a scene: robust reprojection error plus the weighted distance of
/// every camera to its navigation prior,
/// `Σ ρ(‖π(X, K, T) − x‖²) + Σ ‖d(T, ᵖT_c⁻¹ · ᵖT_w)‖²`, plus the rig
/// calibration term when the rig is refined.
///
/// Poses are parameterized in the crate tangent, intrinsics additively,
/// points in world coordinates. Landmarks are eliminated with the Schur
/// complement when solving.
pub struct BundleProblem {
    images: Vec<u32>,
    /// Camera index → variable pose block, `None` when held fixed.
    pose_block: Vec<Option<usize>>,
    /// Landmark index in the scene for each optimized point.
    point_landmark: Vec<usize>,
    obs: Vec<Obs>,
    /// Navigation prior per camera index (vehicle frame).
    nav: Vec<Option<Pose>>,
    prior: PriorPenaltyConfig,
    intrinsics_block: Option<usize>,
    rig_block: Option<usize>,
    rig_reference: Pose,
    rig_prior: ResidualWeights,
    block_sizes: Vec<usize>,
    camera_dim: usize,
    dropped_behind: usize,
}

fn soft_l1(s: f64, width: f64) -> (f64, f64) {
    if width <= 0.0 {
        return (s, 1.0);
    }
    let b2 = width * width;
    let root = (1.0 + s / b2).sqrt();
    (2.0 * b2 * (root - 1.0), 1.0 / root)
}

impl BundleProblem {
    /// `nav_priors[image]` is the vehicle-frame prior of each image (`None`
    /// or out of range: no prior term). `fixed` poses stay constant; when
    /// the prior weights are zero and fewer than two poses are fixed, the
    /// two lowest image ids are fixed to remove the similarity gauge.
    pub fn new(
        scene: &Scene,
        nav_priors: &[Option<Pose>],
        fixed: &BTreeSet<u32>,
        opts: &BaOptions,
    ) -> Result<(Self, BaState, Vec<u32>), BaError> {
        let images: Vec<u32> = scene.poses.keys().copied().collect();
        if images.len() < 2 {
            return Err(BaError::TooFewImages(images.len()));
        }
        let weightless = opts.prior.weights.is_zero();
        let mut fixed: BTreeSet<u32> = fixed.iter().copied().filter(|i| scene.poses.contains_key(i)).collect();
        if weightless && fixed.len() < 2 {
            for &i in &images {
                if fixed.len() >= 2 {
                    break;
                }
                fixed.insert(i);
            }
        }
        let mut block_sizes = Vec::new();
        let mut pose_block = Vec::with_capacity(images.len());
        for i in &images {
            if fixed.contains(i) {
                pose_block.push(None);
            } else {
                pose_block.push(Some(block_sizes.len()));
                block_sizes.push(6);
            }
        }
        let intrinsics_block = opts.refine_intrinsics.then(|| {
            block_sizes.push(INTRINSIC_PARAMS);
            block_sizes.len() - 1
        });
        let rig_block = (opts.refine_rig && !weightless).then(|| {
            block_sizes.push(6);
            block_sizes.len() - 1
        });
        let camera_dim = block_sizes.iter().sum();
        let cam_index = |img: u32| images.binary_search(&img).ok();

        let mut obs = Vec::new();
        let mut point_landmark = Vec::new();
        let mut points = Vec::new();
        let mut dropped_behind = 0;
        for (li, l) in scene.landmarks.iter().enumerate() {
            let mut these = Vec::new();
            for o in &l.observations {
                let Some(c) = cam_index(o.image) else { continue };
                if scene.intrinsics.project(&l.position, &scene.poses[&o.image]).is_none() {
                    dropped_behind += 1;
                    continue;
                }
                these.push((c, o.pixel));
            }
            if these.len() < 2 {
                continue;
            }
            let p = points.len();
            points.push(l.position);
            point_landmark.push(li);
            obs.extend(these.into_iter().map(|(cam, pixel)| Obs { cam, point: p, pixel }));
        }
        let nav = images
            .iter()
            .map(|&i| nav_priors.get(i as usize).copied().flatten().filter(|_| !weightless))
            .collect();
        let state = BaState {
            poses: images.iter().map(|i| scene.poses[i]).collect(),
            points,
            intrinsics: scene.intrinsics,
            rig: scene.rig,
        };
        let fixed: Vec<u32> = fixed.into_iter().collect();
        Ok((
            BundleProblem {
                images,
                pose_block,
                point_landmark,
                obs,
                nav,
                prior: opts.prior,
                intrinsics_block,
                rig_block,
                rig_reference: scene.rig.transform,
                rig_prior: opts.rig_prior,
                block_sizes,
                camera_dim,
                dropped_behind,
            },
            state,
            fixed,
        ))
    }

    pub fn dim(&self) -> usize {
        self.camera_dim + 3 * self.point_landmark.len()
    }

    pub fn observation_count(&self) -> usize {
        self.obs.len()
    }

    fn reprojection_terms(&self, s: &BaState) -> Option<Vec<Vector2<f64>>> {
        self.obs
            .iter()
            .map(|o| s.intrinsics.project(&s.points[o.point], &s.poses[o.cam]).map(|uv| uv - o.pixel))
            .collect()
    }

    fn prior_terms(&self, s: &BaState) -> Vec<Option<Vector6<f64>>> {
        self.nav
            .iter()
            .zip(&s.poses)
            .map(|(nav, pose)| {
                nav.map(|n| {
                    let prior = s.rig.camera_from_vehicle(&n);
                    crate::geom::pose_residual(pose, &prior, &self.prior.weights)
                })
            })
            .collect()
    }

    /// Raw (unrobustified) residual vector and its dense Jacobian in the
    /// problem's parameter order. Intended for verification on small
    /// instances.
    pub fn dense_jacobian(&self, s: &BaState) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let n_prior = self.nav.iter().filter(|n| n.is_some()).count() + usize::from(self.rig_block.is_some());
        let rows = 2 * self.obs.len() + 6 * n_prior;
        let mut r = DVector::zeros(rows);
        let mut j = DMatrix::zeros(rows, self.dim());
        let offsets = self.block_offsets();
        for (k, o) in self.obs.iter().enumerate() {
            let (uv, jp, jx, jk) = s.intrinsics.project_with_jacobians(&s.points[o.point], &s.poses[o.cam])?;
            r.fixed_rows_mut::<2>(2 * k).copy_from(&(uv - o.pixel));
            if let Some(b) = self.pose_block[o.cam] {
                j.view_mut((2 * k, offsets[b]), (2, 6)).copy_from(&jp);
            }
            if let Some(b) = self.intrinsics_block {
                j.view_mut((2 * k, offsets[b]), (2, INTRINSIC_PARAMS)).copy_from(&jk);
            }
            j.view_mut((2 * k, self.camera_dim + 3 * o.point), (2, 3)).copy_from(&jx);
        }
        let mut row = 2 * self.obs.len();
        for (c, nav) in self.nav.iter().enumerate() {
            let Some(nav) = nav else { continue };
            let (prior, jrig) = s.rig.camera_from_vehicle_with_jacobian(nav);
            let (res, ja, jb) = pose_residual_with_jacobians(&s.poses[c], &prior, &self.prior.weights);
            r.fixed_rows_mut::<6>(row).copy_from(&res);
            if let Some(b) = self.pose_block[c] {
                j.view_mut((row, offsets[b]), (6, 6)).copy_from(&ja);
            }
            if let Some(b) = self.rig_block {
                j.view_mut((row, offsets[b]), (6, 6)).copy_from(&(jb * jrig));
            }
            row += 6;
        }
        if let Some(b) = self.rig_block {
            let (res, ja, _) = self.rig_term(s);
            r.fixed_rows_mut::<6>(row).copy_from(&res);
            j.view_mut((row, offsets[b]), (6, 6)).copy_from(&ja);
        }
        Some((r, j))
    }

    fn rig_term(&self, s: &BaState) -> (Vector6<f64>, Matrix6<f64>, Matrix6<f64>) {
        pose_residual_with_jacobians(&s.rig.transform, &self.rig_reference, &self.rig_prior)
    }

    fn block_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.block_sizes
            .iter()
            .map(|s| {
                let o = acc;
                acc += s;
                o
            })
            .collect()
    }

    /// Writes the optimized values back into a copy of `scene`.
    pub fn apply(&self, scene: &Scene, s: &BaState) -> Scene {
        let mut out = scene.clone();
        for (c, img) in self.images.iter().enumerate() {
            out.poses.insert(*img, s.poses[c]);
        }
        for (p, &li) in self.point_landmark.iter().enumerate() {
            out.landmarks[li].position = s.points[p];
        }
        out.intrinsics = s.intrinsics;
        out.rig = s.rig;
        out
    }
}

pub struct BaLinearization {
    hcc: BlockSymmetric,
    hll: Vec<Matrix3<f64>>,
    gl: Vec<Vector3<f64>>,
    /// Per point: camera-side block index and `J_bᵀ J_point` (block × 3).
    hcl: Vec<Vec<(usize, DMatrix<f64>)>>,
    gradient: DVector<f64>,
    scaling: DVector<f64>,
    camera_dim: usize,
}

impl Linearization for BaLinearization {
    fn gradient(&self) -> &DVector<f64> {
        &self.gradient
    }

    fn scaling(&self) -> &DVector<f64> {
        &self.scaling
    }

    fn solve(&self, lambda: f64) -> Option<DVector<f64>> {
        let cd = self.camera_dim;
        let mut s = self.hcc.clone();
        let mut rhs = -self.gradient.rows(0, cd).into_owned();
        let mut inverses = Vec::with_capacity(self.hll.len());
        for (p, h) in self.hll.iter().enumerate() {
            let mut hd = *h;
            for k in 0..3 {
                hd[(k, k)] += lambda * self.scaling[cd + 3 * p + k];
            }
            let inv = hd.try_inverse()?;
            let blocks = &self.hcl[p];
            for (a, (ba, wa)) in blocks.iter().enumerate() {
                let wa_inv = wa * inv;
                let oa = s.offset(*ba);
                let t = &wa_inv * self.gl[p];
                for k in 0..t.nrows() {
                    rhs[oa + k] += t[k];
                }
                for (bb, wb) in &blocks[..=a] {
                    s.add(*ba, *bb, &(-(&wa_inv * wb.transpose())));
                }
            }
            inverses.push(inv);
        }
        let damp = self.scaling.rows(0, cd).map(|d| d * lambda);
        let dc = s.solve(&damp, &rhs)?;
        let mut delta = DVector::zeros(self.gradient.len());
        delta.rows_mut(0, cd).copy_from(&dc);
        for (p, inv) in inverses.iter().enumerate() {
            let mut b = -self.gl[p];
            for (blk, w) in &self.hcl[p] {
                let o = s.offset(*blk);
                b -= w.transpose() * dc.rows(o, w.nrows());
            }
            delta.fixed_rows_mut::<3>(cd + 3 * p).copy_from(&(inv * b));
        }
        delta.iter().all(|v| v.is_finite()).then_some(delta)
    }
}

impl LeastSquaresProblem for BundleProblem {
    type State = BaState;
    type Lin = BaLinearization;

    fn cost(&self, s: &BaState) -> Option<f64> {
        let width = self.prior.robust_width;
        let reproj: f64 = self
            .reprojection_terms(s)?
            .iter()
            .map(|r| soft_l1(r.norm_squared(), width).0)
            .sum();
        let prior: f64 = self.prior_terms(s).iter().flatten().map(|r| r.norm_squared()).sum();
        let rig = match self.rig_block {
            Some(_) => self.rig_term(s).0.norm_squared(),
            None => 0.0,
        };
        Some(reproj + prior + rig)
    }

    fn linearize(&self, s: &BaState) -> BaLinearization {
        let n_points = s.points.len();
        let offsets = self.block_offsets();
        let mut hcc = BlockSymmetric::new(self.block_sizes.clone());
        let mut hll = vec![Matrix3::zeros(); n_points];
        let mut gl = vec![Vector3::zeros(); n_points];
        let mut hcl: Vec<Vec<(usize, DMatrix<f64>)>> = vec![Vec::new(); n_points];
        let mut gc = DVector::zeros(self.camera_dim);
        let width = self.prior.robust_width;

        let mut add_cl = |p: usize, blk: usize, m: DMatrix<f64>| {
            if let Some(e) = hcl[p].iter_mut().find(|(b, _)| *b == blk) {
                e.1 += m;
            } else {
                hcl[p].push((blk, m));
            }
        };
        for o in &self.obs {
            let Some((uv, jp, jx, jk)) = s.intrinsics.project_with_jacobians(&s.points[o.point], &s.poses[o.cam])
            else {
                continue;
            };
            let r = uv - o.pixel;
            let (_, w) = soft_l1(r.norm_squared(), width);
            let p = o.point;
            hll[p] += w * jx.transpose() * jx;
            gl[p] += w * jx.transpose() * r;
            let pose_b = self.pose_block[o.cam];
            if let Some(b) = pose_b {
                hcc.add(b, b, &(w * jp.transpose() * jp));
                let g = w * jp.transpose() * r;
                for k in 0..6 {
                    gc[offsets[b] + k] += g[k];
                }
                let m: SMatrix<f64, 6, 3> = w * jp.transpose() * jx;
                add_cl(p, b, DMatrix::from_column_slice(6, 3, m.as_slice()));
            }
            if let Some(kb) = self.intrinsics_block {
                hcc.add(kb, kb, &(w * jk.transpose() * jk));
                let g = w * jk.transpose() * r;
                for k in 0..INTRINSIC_PARAMS {
                    gc[offsets[kb] + k] += g[k];
                }
                if let Some(b) = pose_b {
                    hcc.add(kb, b, &(w * jk.transpose() * jp));
                }
                let m: SMatrix<f64, 8, 3> = w * jk.transpose() * jx;
                add_cl(p, kb, DMatrix::from_column_slice(INTRINSIC_PARAMS, 3, m.as_slice()));
            }
        }
        for (c, nav) in self.nav.iter().enumerate() {
            let Some(nav) = nav else { continue };
            let (prior, jrig) = s.rig.camera_from_vehicle_with_jacobian(nav);
            let (res, ja, jb) = pose_residual_with_jacobians(&s.poses[c], &prior, &self.prior.weights);
            let jr = jb * jrig;
            if let Some(b) = self.pose_block[c] {
                hcc.add(b, b, &(ja.transpose() * ja));
                let g = ja.transpose() * res;
                for k in 0..6 {
                    gc[offsets[b] + k] += g[k];
                }
                if let Some(rb) = self.rig_block {
                    hcc.add(rb, b, &(jr.transpose() * ja));
                }
            }
            if let Some(rb) = self.rig_block {
                hcc.add(rb, rb, &(jr.transpose() * jr));
                let g = jr.transpose() * res;
                for k in 0..6 {
                    gc[offsets[rb] + k] += g[k];
                }
            }
        }
        if let Some(rb) = self.rig_block {
            let (res, ja, _) = self.rig_term(s);
            hcc.add(rb, rb, &(ja.transpose() * ja));
            let g = ja.transpose() * res;
            for k in 0..6 {
                gc[offsets[rb] + k] += g[k];
            }
        }
        let cd = self.camera_dim;
        let mut gradient = DVector::zeros(cd + 3 * n_points);
        gradient.rows_mut(0, cd).copy_from(&gc);
        let mut scaling = DVector::zeros(gradient.len());
        scaling.rows_mut(0, cd).copy_from(&hcc.diagonal().map(clamp_scaling));
        for p in 0..n_points {
            gradient.fixed_rows_mut::<3>(cd + 3 * p).copy_from(&gl[p]);
            for k in 0..3 {
                scaling[cd + 3 * p + k] = clamp_scaling(hll[p][(k, k)]);
            }
        }
        BaLinearization {
            hcc,
            hll,
            gl,
            hcl,
            gradient,
            scaling,
            camera_dim: cd,
        }
    }

    fn retract(&self, s: &BaState, delta: &DVector<f64>) -> BaState {
        let offsets = self.block_offsets();
        let mut out = s.clone();
        for (c, b) in self.pose_block.iter().enumerate() {
            if let Some(b) = b {
                let d = Vector6::from_iterator(delta.rows(offsets[*b], 6).iter().copied());
                out.poses[c] = s.poses[c].retract(&d);
            }
        }
        if let Some(kb) = self.intrinsics_block {
            let mut p = s.intrinsics.params();
            for (k, v) in p.iter_mut().enumerate() {
                *v += delta[offsets[kb] + k];
            }
            out.intrinsics = s.intrinsics.with_params(&p);
        }
        if let Some(rb) = self.rig_block {
            let d = Vector6::from_iterator(delta.rows(offsets[rb], 6).iter().copied());
            out.rig.transform = s.rig.transform.retract(&d);
        }
        for p in 0..s.points.len() {
            out.points[p] += delta.fixed_rows::<3>(self.camera_dim + 3 * p);
        }
        out
    }
}

/// Refines poses, landmarks and (optionally) intrinsics and rig offset of a
/// scene against its observations and navigation priors. The result never
/// has a higher cost than the input.
pub fn bundle_adjust(
    scene: &Scene,
    nav_priors: &[Option<Pose>],
    fixed: &BTreeSet<u32>,
    opts: &BaOptions,
) -> Result<(Scene, BaReport), BaError> {
    let (problem, state, fixed) = BundleProblem::new(scene, nav_priors, fixed, opts)?;
    let (state, lm) = minimize(&problem, state, &opts.lm)?;
    let out = problem.apply(scene, &state);
    Ok((
        out,
        BaReport {
            lm,
            observations: problem.observation_count(),
            dropped_behind: problem.dropped_behind,
            fixed,
        },
    ))
}
