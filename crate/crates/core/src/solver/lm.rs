//! Levenberg-Marquardt driver shared by bundle adjustment and pose-graph
//! optimization.
//!
//! Costs are plain sums of squared residuals, `F(x) = Σ‖r‖²`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Linearization of the residuals at one state.
pub trait Linearization {
    /// `Jᵀr`.
    fn gradient(&self) -> &DVector<f64>;
    /// Diagonal damping scale `D` (typically the clamped diagonal of `JᵀJ`).
    fn scaling(&self) -> &DVector<f64>;
    /// Solves `(JᵀJ + λ·diag(D)) δ = −Jᵀr`; `None` when the system is not
    /// positive definite at this damping.
    fn solve(&self, lambda: f64) -> Option<DVector<f64>>;
}

pub trait LeastSquaresProblem {
    type State: Clone;
    type Lin: Linearization;

    /// Total cost, or `None` when the state is infeasible (e.g. an active
    /// observation fell behind its camera).
    fn cost(&self, state: &Self::State) -> Option<f64>;
    fn linearize(&self, state: &Self::State) -> Self::Lin;
    fn retract(&self, state: &Self::State, delta: &DVector<f64>) -> Self::State;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub relative_cost_tolerance: f64,
    pub absolute_cost_tolerance: f64,
    pub step_tolerance: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 50,
            gradient_tolerance: 1e-10,
            relative_cost_tolerance: 1e-10,
            absolute_cost_tolerance: 1e-20,
            step_tolerance: 1e-12,
            initial_lambda: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    CostBelowTolerance,
    GradientBelowTolerance,
    RelativeCostChange,
    StepBelowTolerance,
    MaxIterations,
    /// Damping grew without bound and no step decreased the cost.
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub lambda: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Number of accepted steps.
    pub iterations: usize,
    pub termination: Termination,
    pub trace: Vec<IterationRecord>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("initial state is infeasible or has a non-finite cost")]
    InfeasibleStart,
}

const MAX_LAMBDA: f64 = 1e16;

/// Minimizes the problem from `state`. The returned state is never worse
/// than the input.
pub fn minimize<P: LeastSquaresProblem>(
    problem: &P,
    mut state: P::State,
    opts: &LmOptions,
) -> Result<(P::State, LmReport), SolverError> {
    let mut cost = match problem.cost(&state) {
        Some(c) if c.is_finite() => c,
        _ => return Err(SolverError::InfeasibleStart),
    };
    let mut report = LmReport {
        initial_cost: cost,
        final_cost: cost,
        iterations: 0,
        termination: Termination::MaxIterations,
        trace: Vec::new(),
    };
    let mut lambda = opts.initial_lambda;
    let mut nu = 2.0;
    let mut lin = None;
    let mut evaluations = 0usize;

    loop {
        if cost <= opts.absolute_cost_tolerance {
            report.termination = Termination::CostBelowTolerance;
            break;
        }
        if report.iterations >= opts.max_iterations || evaluations >= 4 * opts.max_iterations + 20 {
            report.termination = Termination::MaxIterations;
            break;
        }
        let l = lin.get_or_insert_with(|| problem.linearize(&state));
        if l.gradient().amax() <= opts.gradient_tolerance {
            report.termination = Termination::GradientBelowTolerance;
            break;
        }
        evaluations += 1;
        let step = l.solve(lambda);
        let Some(delta) = step else {
            lambda *= nu;
            nu *= 2.0;
            if lambda > MAX_LAMBDA {
                report.termination = Termination::Stalled;
                break;
            }
            continue;
        };
        if delta.amax() <= opts.step_tolerance {
            report.termination = Termination::StepBelowTolerance;
            break;
        }
        let g = l.gradient();
        let d = l.scaling();
        let predicted =
            -g.dot(&delta) + lambda * delta.iter().zip(d.iter()).map(|(x, s)| s * x * x).sum::<f64>();
        let candidate = problem.retract(&state, &delta);
        let new_cost = problem.cost(&candidate);
        let accepted = match new_cost {
            Some(c) => c.is_finite() && c < cost && predicted > 0.0,
            None => false,
        };
        if accepted {
            let c = new_cost.unwrap_or(cost);
            let rho = ((cost - c) / predicted).max(0.0);
            let rel = (cost - c) / cost.max(f64::MIN_POSITIVE);
            state = candidate;
            cost = c;
            lin = None;
            report.iterations += 1;
            lambda *= (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
            lambda = lambda.max(1e-15);
            nu = 2.0;
            report.trace.push(IterationRecord {
                iteration: report.iterations,
                cost,
                lambda,
                accepted: true,
            });
            if rel <= opts.relative_cost_tolerance {
                report.termination = Termination::RelativeCostChange;
                break;
            }
        } else {
            report.trace.push(IterationRecord {
                iteration: report.iterations,
                cost: new_cost.unwrap_or(f64::INFINITY),
                lambda,
                accepted: false,
            });
            lambda *= nu;
            nu *= 2.0;
            if lambda > MAX_LAMBDA {
                report.termination = Termination::Stalled;
                break;
            }
        }
    }
    report.final_cost = cost;
    Ok((state, report))
}

/// Dense linearization, adequate for small problems and for tests.
pub struct DenseLinearization {
    pub hessian: nalgebra::DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub scaling: DVector<f64>,
}

impl DenseLinearization {
    pub fn from_jacobian(j: &nalgebra::DMatrix<f64>, r: &DVector<f64>) -> Self {
        let hessian = j.transpose() * j;
        let gradient = j.transpose() * r;
        let scaling = hessian.diagonal().map(clamp_scaling);
        DenseLinearization {
            hessian,
            gradient,
            scaling,
        }
    }
}

pub fn clamp_scaling(v: f64) -> f64 {
    v.clamp(1e-6, 1e32)
}

impl Linearization for DenseLinearization {
    fn gradient(&self) -> &DVector<f64> {
        &self.gradient
    }

    fn scaling(&self) -> &DVector<f64> {
        &self.scaling
    }

    fn solve(&self, lambda: f64) -> Option<DVector<f64>> {
        let mut h = self.hessian.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += lambda * self.scaling[i];
        }
        h.cholesky().map(|c| c.solve(&(-&self.gradient)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    /// Rosenbrock written as residuals (10(y − x²), 1 − x).
    struct Rosenbrock;

    impl LeastSquaresProblem for Rosenbrock {
        type State = DVector<f64>;
        type Lin = DenseLinearization;

        fn cost(&self, s: &DVector<f64>) -> Option<f64> {
            let r1 = 10.0 * (s[1] - s[0] * s[0]);
            let r2 = 1.0 - s[0];
            Some(r1 * r1 + r2 * r2)
        }

        fn linearize(&self, s: &DVector<f64>) -> DenseLinearization {
            let r = DVector::from_vec(vec![10.0 * (s[1] - s[0] * s[0]), 1.0 - s[0]]);
            let j = DMatrix::from_row_slice(2, 2, &[-20.0 * s[0], 10.0, -1.0, 0.0]);
            DenseLinearization::from_jacobian(&j, &r)
        }

        fn retract(&self, s: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
            s + d
        }
    }

    #[test]
    fn solves_rosenbrock_monotonically() {
        let start = DVector::from_vec(vec![-1.2, 1.0]);
        let (x, report) = minimize(&Rosenbrock, start, &LmOptions::default()).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-8 && (x[1] - 1.0).abs() < 1e-8);
        let accepted: Vec<f64> = report.trace.iter().filter(|r| r.accepted).map(|r| r.cost).collect();
        assert!(accepted.windows(2).all(|w| w[1] <= w[0]));
        assert!(report.final_cost <= report.initial_cost);
    }

    #[test]
    fn optimum_terminates_immediately() {
        let start = DVector::from_vec(vec![1.0, 1.0]);
        let (_, report) = minimize(&Rosenbrock, start, &LmOptions::default()).unwrap();
        assert_eq!(report.iterations, 0);
        assert_eq!(report.termination, Termination::CostBelowTolerance);
    }
}
