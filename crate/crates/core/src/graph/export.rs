//! NDJSON snapshot of a graph: one record per variable, then one per factor.

use std::io::Write;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{Factor, FactorGraph, VariableId};
use crate::geometry::Pose3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum GraphRecord {
    Pose { id: VariableId, estimate: Pose3 },
    Landmark { id: VariableId, estimate: Vector3<f64> },
    Factor { index: usize, factor: Factor },
}

impl FactorGraph {
    pub fn snapshot(&self) -> Vec<GraphRecord> {
        let mut out = Vec::new();
        for (i, p) in self.values().poses.iter().enumerate() {
            out.push(GraphRecord::Pose {
                id: VariableId::pose(i),
                estimate: *p,
            });
        }
        for (i, l) in self.values().landmarks.iter().enumerate() {
            out.push(GraphRecord::Landmark {
                id: VariableId::landmark(i),
                estimate: *l,
            });
        }
        for (index, f) in self.factors().iter().enumerate() {
            out.push(GraphRecord::Factor {
                index,
                factor: f.clone(),
            });
        }
        out
    }

    pub fn write_snapshot<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in self.snapshot() {
            serde_json::to_writer(&mut w, &r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}
