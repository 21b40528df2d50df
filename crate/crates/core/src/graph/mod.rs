//! Factor graph over vehicle poses and landmark positions.

mod export;
pub mod factors;
pub mod linear;
mod solver;

use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

pub use export::GraphRecord;
pub use factors::{Evaluation, Factor, FactorKind};
pub use solver::{Marginals, OptimizeReport, SolverSettings, Termination};

use crate::error::{Error, Result};
use crate::geometry::Pose3;
use linear::{BlockLayout, SymmetricBlockMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    Pose,
    Landmark,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VariableId {
    pub kind: VariableKind,
    pub index: usize,
}

impl VariableId {
    pub fn pose(index: usize) -> Self {
        Self {
            kind: VariableKind::Pose,
            index,
        }
    }

    pub fn landmark(index: usize) -> Self {
        Self {
            kind: VariableKind::Landmark,
            index,
        }
    }

    pub fn is_pose(&self) -> bool {
        self.kind == VariableKind::Pose
    }

    /// Local (tangent) dimension.
    pub fn dim(&self) -> usize {
        match self.kind {
            VariableKind::Pose => 6,
            VariableKind::Landmark => 3,
        }
    }
}

/// Estimates for every variable, indexed by kind and ordinal.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Values {
    pub poses: Vec<Pose3>,
    pub landmarks: Vec<Vector3<f64>>,
}

impl Values {
    fn layout(&self) -> BlockLayout {
        let mut dims = vec![6; self.poses.len()];
        dims.extend(std::iter::repeat_n(3, self.landmarks.len()));
        BlockLayout::new(dims)
    }

    /// Block index of a variable: poses first, then landmarks.
    fn block(&self, v: VariableId) -> usize {
        match v.kind {
            VariableKind::Pose => v.index,
            VariableKind::Landmark => self.poses.len() + v.index,
        }
    }

    fn retract(&self, delta: &DVector<f64>) -> Values {
        let poses = self
            .poses
            .iter()
            .enumerate()
            .map(|(i, p)| p.retract(&Vector6::from_iterator(delta.rows(6 * i, 6).iter().copied())))
            .collect();
        let base = 6 * self.poses.len();
        let landmarks = self
            .landmarks
            .iter()
            .enumerate()
            .map(|(i, l)| l + delta.fixed_rows::<3>(base + 3 * i))
            .collect();
        Values { poses, landmarks }
    }
}

/// Gauss-Newton system `H dx = -g` at one linearization point.
pub(crate) struct NormalEquations {
    pub hessian: SymmetricBlockMatrix,
    pub gradient: DVector<f64>,
    pub cost: f64,
    pub inactive: usize,
}

#[derive(Clone, Debug, Default)]
pub struct FactorGraph {
    values: Values,
    initial: Values,
    factors: Vec<Factor>,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_pose(&mut self, initial: Pose3) -> VariableId {
        self.values.poses.push(initial);
        self.initial.poses.push(initial);
        VariableId::pose(self.values.poses.len() - 1)
    }

    pub fn add_landmark(&mut self, initial: Vector3<f64>) -> VariableId {
        self.values.landmarks.push(initial);
        self.initial.landmarks.push(initial);
        VariableId::landmark(self.values.landmarks.len() - 1)
    }

    pub fn add_factor(&mut self, f: Factor) -> Result<usize> {
        f.validate()?;
        for v in f.variables() {
            if !self.contains(v) {
                return Err(Error::invalid(format!(
                    "{:?} factor references missing {:?} {}",
                    f.kind(),
                    v.kind,
                    v.index
                )));
            }
        }
        if let Factor::Odometry { from, to, .. } = f {
            if from == to {
                return Err(Error::invalid("odometry factor connects a pose to itself"));
            }
        }
        self.factors.push(f);
        Ok(self.factors.len() - 1)
    }

    pub fn contains(&self, v: VariableId) -> bool {
        match v.kind {
            VariableKind::Pose => v.index < self.values.poses.len(),
            VariableKind::Landmark => v.index < self.values.landmarks.len(),
        }
    }

    pub fn values(&self) -> &Values {
        &self.values
    }

    pub fn initial_values(&self) -> &Values {
        &self.initial
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn num_poses(&self) -> usize {
        self.values.poses.len()
    }

    pub fn num_landmarks(&self) -> usize {
        self.values.landmarks.len()
    }

    pub fn pose(&self, i: usize) -> &Pose3 {
        &self.values.poses[i]
    }

    pub fn landmark(&self, i: usize) -> &Vector3<f64> {
        &self.values.landmarks[i]
    }

    /// Overwrites current estimates; the stored initial values are untouched.
    pub fn set_values(&mut self, values: Values) -> Result<()> {
        if values.poses.len() != self.values.poses.len()
            || values.landmarks.len() != self.values.landmarks.len()
        {
            return Err(Error::invalid("values do not match the graph's variables"));
        }
        self.values = values;
        Ok(())
    }

    /// Restores the estimates each variable was created with.
    pub fn reset_to_initial(&mut self) {
        self.values = self.initial.clone();
    }

    /// True when some factor fixes the global position and heading.
    pub fn is_anchored(&self) -> bool {
        self.factors
            .iter()
            .any(|f| matches!(f.kind(), FactorKind::Prior | FactorKind::AbsolutePose))
    }

    /// Sum of squared whitened residuals, summed in factor order.
    pub fn cost(&self) -> f64 {
        cost_at(&self.factors, &self.values)
    }

    pub(crate) fn normal_equations(&self) -> NormalEquations {
        let layout = self.values.layout();
        let mut hessian = SymmetricBlockMatrix::new(layout.clone());
        let mut gradient = DVector::zeros(layout.total());
        let mut cost = 0.0;
        let mut inactive = 0;
        for f in &self.factors {
            let ev = f.linearize(&self.values);
            if !ev.active {
                inactive += 1;
                continue;
            }
            cost += ev.residual.norm_squared();
            let vars = f.variables();
            for (a, ja) in ev.jacobians.iter().enumerate() {
                let ba = self.values.block(vars[a]);
                let off = layout.offset(ba);
                for c in 0..ja.ncols() {
                    gradient[off + c] += ja.column(c).dot(&ev.residual);
                }
                for (b, jb) in ev.jacobians.iter().enumerate().take(a + 1) {
                    hessian.add_gram(ba, self.values.block(vars[b]), ja, jb);
                }
            }
        }
        NormalEquations {
            hessian,
            gradient,
            cost,
            inactive,
        }
    }

    /// Dense Gauss-Newton information matrix `J^T J` at the current estimates.
    pub fn information_matrix(&self) -> DMatrix<f64> {
        self.normal_equations().hessian.to_dense()
    }

    /// Column offset of a variable in [`FactorGraph::information_matrix`].
    pub fn offset(&self, v: VariableId) -> usize {
        self.values.layout().offset(self.values.block(v))
    }
}

pub(crate) fn cost_at(factors: &[Factor], values: &Values) -> f64 {
    factors
        .iter()
        .map(|f| {
            let ev = f.residual(values);
            if ev.active {
                ev.residual.norm_squared()
            } else {
                0.0
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_dangling_factor() {
        let mut g = FactorGraph::new();
        g.add_pose(Pose3::identity());
        let f = Factor::Odometry {
            from: 0,
            to: 1,
            measurement: Pose3::identity(),
            sigma: [1.0; 6],
        };
        assert!(g.add_factor(f).is_err());
    }

    #[test]
    fn ordering_puts_landmarks_last() {
        let mut g = FactorGraph::new();
        let l = g.add_landmark(Vector3::zeros());
        g.add_pose(Pose3::identity());
        g.add_pose(Pose3::identity());
        assert_eq!(g.offset(l), 12);
        assert_eq!(g.offset(VariableId::pose(1)), 6);
    }
}
