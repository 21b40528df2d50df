//! Levenberg-Marquardt optimization and marginal covariances.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::linear::BlockCholesky;
use super::{cost_at, Factor, FactorGraph, VariableId};
use crate::error::{Error, Result};
use crate::geometry::Pose3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Upper bound on LM step attempts, accepted or rejected.
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub relative_tolerance: f64,
    /// Stop when the step norm falls below this.
    pub step_tolerance: f64,
    /// Stop before stepping when the gradient's largest entry is below this.
    pub gradient_tolerance: f64,
    pub initial_lambda: f64,
    pub max_lambda: f64,
    /// Relative-decrease tolerance for the closing solve of a run. Zero
    /// leaves that solve to the step and gradient tests.
    pub final_relative_tolerance: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            relative_tolerance: 1e-9,
            step_tolerance: 1e-10,
            gradient_tolerance: 1e-10,
            initial_lambda: 1e-4,
            max_lambda: 1e16,
            final_relative_tolerance: 0.0,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let checks = [
            ("solver.relative_tolerance", pos(self.relative_tolerance)),
            (
                "solver.final_relative_tolerance",
                self.final_relative_tolerance.is_finite() && self.final_relative_tolerance >= 0.0,
            ),
            ("solver.step_tolerance", pos(self.step_tolerance)),
            ("solver.gradient_tolerance", pos(self.gradient_tolerance)),
            ("solver.initial_lambda", pos(self.initial_lambda)),
            ("solver.max_lambda", pos(self.max_lambda) && self.max_lambda > self.initial_lambda),
            ("solver.max_iterations", self.max_iterations > 0),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(Error::config(format!("{name} is out of range")));
            }
        }
        Ok(())
    }
}

impl SolverSettings {
    /// Settings for the closing solve of a run.
    pub fn closing(&self) -> Self {
        // Near the optimum a heavily damped step can fall under the step
        // tolerance long before weak directions have converged, so start
        // almost undamped and let rejections raise lambda if needed.
        Self {
            relative_tolerance: self.final_relative_tolerance,
            initial_lambda: self.initial_lambda.min(1e-12),
            ..*self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    RelativeDecrease,
    StepSize,
    /// No step lowers the cost even under maximal damping.
    NoImprovement,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Accepted steps.
    pub iterations: usize,
    /// Accepted plus rejected steps.
    pub attempts: usize,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    pub termination: Termination,
    /// Landmark observations switched off at the final linearization.
    pub inactive_factors: usize,
}

impl OptimizeReport {
    pub fn converged(&self) -> bool {
        self.termination != Termination::MaxIterations
    }
}

impl FactorGraph {
    /// Levenberg-Marquardt on the whitened sum of squares, starting from the
    /// current estimates.
    pub fn optimize(&mut self, settings: &SolverSettings) -> Result<OptimizeReport> {
        if !self.is_anchored() && self.num_poses() > 0 {
            return Err(Error::invalid(
                "graph has no prior or absolute-pose factor to fix the gauge",
            ));
        }
        let mut ne = self.normal_equations();
        let mut report = OptimizeReport {
            initial_cost: ne.cost,
            final_cost: ne.cost,
            iterations: 0,
            attempts: 0,
            cost_history: vec![ne.cost],
            termination: Termination::MaxIterations,
            inactive_factors: ne.inactive,
        };
        if self.num_poses() + self.num_landmarks() == 0 {
            report.termination = Termination::Gradient;
            return Ok(report);
        }
        let mut lambda = settings.initial_lambda;
        let mut nu = 2.0;
        'outer: while report.attempts < settings.max_iterations {
            if ne.gradient.amax() < settings.gradient_tolerance {
                report.termination = Termination::Gradient;
                break;
            }
            let diag = ne.hessian.diagonal().map(|d| d.max(1e-9));
            loop {
                if report.attempts >= settings.max_iterations {
                    break 'outer;
                }
                let chol = match ne.hessian.cholesky_shifted(&(&diag * lambda)) {
                    Ok(c) => c,
                    Err(block) => {
                        lambda *= nu;
                        nu *= 2.0;
                        if lambda > settings.max_lambda {
                            return Err(Error::OptimizationFailure(format!(
                                "normal equations not positive definite at block {block} even with damping {lambda:.3e}"
                            )));
                        }
                        continue;
                    }
                };
                report.attempts += 1;
                let step = -chol.solve(&ne.gradient);
                if step.norm() < settings.step_tolerance {
                    report.termination = Termination::StepSize;
                    break 'outer;
                }
                let trial = self.values.retract(&step);
                let new_cost = cost_at(&self.factors, &trial);
                let predicted =
                    -ne.gradient.dot(&step) + lambda * step.component_mul(&diag).dot(&step);
                if new_cost.is_finite() && new_cost < ne.cost {
                    let rho = (ne.cost - new_cost) / predicted.max(f64::MIN_POSITIVE);
                    lambda *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                    nu = 2.0;
                    let rel = (ne.cost - new_cost) / ne.cost;
                    self.values = trial;
                    ne = self.normal_equations();
                    report.iterations += 1;
                    report.cost_history.push(ne.cost);
                    if rel < settings.relative_tolerance {
                        report.termination = Termination::RelativeDecrease;
                        break 'outer;
                    }
                    continue 'outer;
                }
                lambda *= nu;
                nu *= 2.0;
                if lambda > settings.max_lambda {
                    report.termination = Termination::NoImprovement;
                    break 'outer;
                }
            }
        }
        report.final_cost = ne.cost;
        report.inactive_factors = ne.inactive;
        Ok(report)
    }

    /// Adds variables and factors, then re-optimizes warm-started from the
    /// current estimates.
    pub fn incremental_update(
        &mut self,
        new_poses: &[Pose3],
        new_landmarks: &[Vector3<f64>],
        new_factors: Vec<Factor>,
        settings: &SolverSettings,
    ) -> Result<OptimizeReport> {
        for p in new_poses {
            self.add_pose(*p);
        }
        for l in new_landmarks {
            self.add_landmark(*l);
        }
        for f in new_factors {
            self.add_factor(f)?;
        }
        self.optimize(settings)
    }

    /// Batch reference: the same graph optimized from every variable's initial value.
    pub fn batch_optimized(&self, settings: &SolverSettings) -> Result<(FactorGraph, OptimizeReport)> {
        let mut g = self.clone();
        g.reset_to_initial();
        let report = g.optimize(settings)?;
        Ok((g, report))
    }

    /// Factorizes the undamped information matrix at the current estimates.
    pub fn marginals(&self) -> Result<Marginals> {
        let ne = self.normal_equations();
        let chol = ne.hessian.cholesky().map_err(|block| {
            Error::CovarianceUnavailable(format!(
                "information matrix is rank deficient at block {block}"
            ))
        })?;
        Ok(Marginals {
            chol,
            num_poses: self.num_poses(),
            trailing: RefCell::new(None),
        })
    }

    /// Covariance block of one variable in its local coordinates.
    pub fn marginal_covariance(&self, v: VariableId) -> Result<DMatrix<f64>> {
        if !self.contains(v) {
            return Err(Error::invalid(format!("no {:?} {}", v.kind, v.index)));
        }
        self.marginals()?.joint(&[v])
    }
}

/// Largest trailing dimension inverted densely for covariance queries.
const TRAILING_LIMIT: usize = 400;

/// Cached factorization answering covariance queries.
#[derive(Clone, Debug)]
pub struct Marginals {
    chol: BlockCholesky,
    num_poses: usize,
    /// Dense inverse over blocks `start..`, kept for repeated queries.
    trailing: RefCell<Option<(usize, DMatrix<f64>)>>,
}

impl Marginals {
    fn block(&self, v: VariableId) -> usize {
        if v.is_pose() {
            v.index
        } else {
            self.num_poses + v.index
        }
    }

    pub fn covariance(&self, v: VariableId) -> Result<DMatrix<f64>> {
        self.joint(&[v])
    }

    /// Joint covariance of several variables, stacked in the given order.
    pub fn joint(&self, vars: &[VariableId]) -> Result<DMatrix<f64>> {
        let lay = self.chol.layout();
        let mut rows = Vec::new();
        for v in vars {
            let b = self.block(*v);
            if b >= lay.num_blocks() || v.dim() != lay.dim(b) {
                return Err(Error::invalid(format!("no {:?} {}", v.kind, v.index)));
            }
            rows.extend((0..lay.dim(b)).map(|k| lay.offset(b) + k));
        }
        let n = rows.len();
        let mut out = DMatrix::zeros(n, n);
        let start = vars.iter().map(|v| self.block(*v)).min().unwrap_or(0);
        if lay.total() - lay.offset(start) <= TRAILING_LIMIT {
            let mut cache = self.trailing.borrow_mut();
            if cache.as_ref().is_none_or(|(s, _)| *s > start) {
                *cache = Some((start, self.chol.trailing_inverse(start)));
            }
            let (s, inv) = cache.as_ref().expect("cached inverse");
            let base = lay.offset(*s);
            for (c, &col) in rows.iter().enumerate() {
                for (r, &row) in rows.iter().enumerate() {
                    out[(r, c)] = inv[(row - base, col - base)];
                }
            }
            return Ok((&out + out.transpose()) * 0.5);
        }
        let mut e = DVector::zeros(lay.total());
        for (c, &col) in rows.iter().enumerate() {
            e[col] = 1.0;
            let x = self.chol.solve(&e);
            e[col] = 0.0;
            for (r, &row) in rows.iter().enumerate() {
                out[(r, c)] = x[row];
            }
        }
        // Symmetrize away round-off.
        let sym = (&out + out.transpose()) * 0.5;
        Ok(sym)
    }
}
