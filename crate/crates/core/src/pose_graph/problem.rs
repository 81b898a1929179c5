use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::residual::residual_of_relative_with_jacobian;
use crate::geom::{pose_residual_with_jacobians, Pose};
use crate::solver::lm::clamp_scaling;
use crate::solver::{BlockSymmetric, LeastSquaresProblem, Linearization};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TermKind {
    /// `d(T_j ∘ T_i⁻¹, measurement)`.
    Relative { i: u32, j: u32, measurement: Pose },
    /// `d(T_j, prior)`.
    Absolute { j: u32, prior: Pose },
    /// `d(T_i ∘ T_{i−1}⁻¹, T_{i+1} ∘ T_i⁻¹)`.
    Smooth { i: u32 },
}

/// One 6-dimensional residual block, multiplied by `scale` (the square root
/// of its weight).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub kind: TermKind,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermEval {
    pub kind: TermKind,
    pub residual: Vector6<f64>,
    /// Jacobian blocks by vertex; empty when not requested.
    pub blocks: Vec<(u32, Matrix6<f64>)>,
}

fn eval_term(t: &Term, poses: &[Pose], jac: bool) -> TermEval {
    let s = t.scale;
    let (residual, blocks) = match t.kind {
        TermKind::Relative { i, j, measurement } => {
            let (est, ja, jb) = poses[j as usize].between_with_jacobians(&poses[i as usize]);
            let (r, je, _) = pose_residual_with_jacobians(&est, &measurement, &Default::default());
            let b = if jac { vec![(j, je * ja * s), (i, je * jb * s)] } else { Vec::new() };
            (r * s, b)
        }
        TermKind::Absolute { j, prior } => {
            let (r, ja, _) = pose_residual_with_jacobians(&poses[j as usize], &prior, &Default::default());
            (r * s, if jac { vec![(j, ja * s)] } else { Vec::new() })
        }
        TermKind::Smooth { i } => {
            let (prev, cur, next) = (&poses[i as usize - 1], &poses[i as usize], &poses[i as usize + 1]);
            let (a, a_cur, a_prev) = cur.between_with_jacobians(prev);
            let (b, b_next, b_cur) = next.between_with_jacobians(cur);
            let (rel, ja, jb) = a.between_with_jacobians(&b);
            let (r, jr) = residual_of_relative_with_jacobian(&rel, &Default::default());
            let blocks = if jac {
                let (ja, jb) = (jr * ja, jr * jb);
                vec![(i - 1, ja * a_prev * s), (i, (ja * a_cur + jb * b_cur) * s), (i + 1, jb * b_next * s)]
            } else {
                Vec::new()
            };
            (r * s, blocks)
        }
    };
    TermEval { kind: t.kind, residual, blocks }
}

/// Evaluates terms in parallel; the output order follows `terms`.
pub fn evaluate_terms(terms: &[Term], poses: &[Pose], jacobians: bool) -> Vec<TermEval> {
    terms.par_iter().map(|t| eval_term(t, poses, jacobians)).collect()
}

pub struct PoseGraphProblem {
    vertices: usize,
    terms: Vec<Term>,
    fixed: Vec<bool>,
}

impl PoseGraphProblem {
    pub fn new(vertices: usize, terms: Vec<Term>) -> Self {
        PoseGraphProblem {
            vertices,
            terms,
            fixed: vec![false; vertices],
        }
    }

    /// Holds the given vertices at their current value.
    pub fn with_fixed(mut self, fixed: impl IntoIterator<Item = u32>) -> Self {
        for v in fixed {
            self.fixed[v as usize] = true;
        }
        self
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn evaluate(&self, poses: &[Pose], jacobians: bool) -> Vec<TermEval> {
        evaluate_terms(&self.terms, poses, jacobians)
    }

    /// Stacked residual vector and dense Jacobian, for checks on small
    /// graphs.
    pub fn dense_jacobian(&self, poses: &[Pose]) -> (DVector<f64>, DMatrix<f64>) {
        let evals = self.evaluate(poses, true);
        let mut r = DVector::zeros(6 * evals.len());
        let mut j = DMatrix::zeros(6 * evals.len(), 6 * self.vertices);
        for (k, e) in evals.iter().enumerate() {
            r.fixed_rows_mut::<6>(6 * k).copy_from(&e.residual);
            for (v, b) in &e.blocks {
                let mut view = j.fixed_view_mut::<6, 6>(6 * k, 6 * *v as usize);
                view += b;
            }
        }
        (r, j)
    }
}

pub struct PoseGraphLinearization {
    hessian: BlockSymmetric,
    gradient: DVector<f64>,
    scaling: DVector<f64>,
}

impl Linearization for PoseGraphLinearization {
    fn gradient(&self) -> &DVector<f64> {
        &self.gradient
    }

    fn scaling(&self) -> &DVector<f64> {
        &self.scaling
    }

    fn solve(&self, lambda: f64) -> Option<DVector<f64>> {
        let extra = &self.scaling * lambda;
        self.hessian.solve(&extra, &(-&self.gradient))
    }
}

impl LeastSquaresProblem for PoseGraphProblem {
    type State = Vec<Pose>;
    type Lin = PoseGraphLinearization;

    fn cost(&self, poses: &Vec<Pose>) -> Option<f64> {
        Some(self.evaluate(poses, false).iter().map(|e| e.residual.norm_squared()).sum())
    }

    fn linearize(&self, poses: &Vec<Pose>) -> PoseGraphLinearization {
        let evals = self.evaluate(poses, true);
        let mut hessian = BlockSymmetric::new(vec![6; self.vertices]);
        let mut gradient = DVector::zeros(6 * self.vertices);
        for e in &evals {
            let blocks: Vec<&(u32, Matrix6<f64>)> = e.blocks.iter().filter(|(v, _)| !self.fixed[*v as usize]).collect();
            for (a, (va, ja)) in blocks.iter().map(|b| (b.0, &b.1)).enumerate() {
                let mut g = gradient.fixed_rows_mut::<6>(6 * va as usize);
                g += ja.transpose() * e.residual;
                for (vb, jb) in &blocks[..=a] {
                    hessian.add(va as usize, *vb as usize, &(ja.transpose() * jb));
                }
            }
        }
        let scaling = hessian.diagonal().map(clamp_scaling);
        PoseGraphLinearization {
            hessian,
            gradient,
            scaling,
        }
    }

    fn retract(&self, poses: &Vec<Pose>, delta: &DVector<f64>) -> Vec<Pose> {
        poses
            .iter()
            .enumerate()
            .map(|(k, p)| {
                if self.fixed[k] {
                    *p
                } else {
                    p.retract(&delta.fixed_rows::<6>(6 * k).into_owned())
                }
            })
            .collect()
    }
}
