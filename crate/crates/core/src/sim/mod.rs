//! Deterministic synthetic world and sensor generator.

mod render;
mod rng;
pub mod scenario;
mod trajectory;
mod world;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use render::{render_beacon_ranges, visibility, NoiseSpec, Sensors, Visibility};
pub use trajectory::{generate_trajectory, Trajectory, TrajectorySpec};
pub use world::{ObjectSpec, WorldSpec};

use crate::beacons::BeaconSet;
use crate::config::RunConfig;
use crate::dataset::{Record, TruthRecord};
use crate::embedding::Embedding;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub trajectory: TrajectorySpec,
    pub world: WorldSpec,
    pub noise: NoiseSpec,
    /// Physical radius of every object; sets how many beams an echo spans.
    pub object_radius: f64,
    /// Seconds between absolute fixes after the first; absent means only at start.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abs_fix_interval: Option<f64>,
    /// Beacon range rate in Hz; zero disables beacon records.
    pub beacon_rate: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            trajectory: TrajectorySpec::default(),
            world: WorldSpec::default(),
            noise: NoiseSpec::default(),
            object_radius: 0.1,
            abs_fix_interval: None,
            beacon_rate: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, intensity_threshold: f64) -> Result<()> {
        self.trajectory.validate()?;
        self.world.validate()?;
        self.noise.validate(intensity_threshold)?;
        if !(self.object_radius.is_finite() && self.object_radius >= 0.0) {
            return Err(Error::config("sim.object_radius must be non-negative"));
        }
        if let Some(dt) = self.abs_fix_interval {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::config("sim.abs_fix_interval must be positive"));
            }
        }
        if !(self.beacon_rate.is_finite() && self.beacon_rate >= 0.0) {
            return Err(Error::config("sim.beacon_rate must be non-negative"));
        }
        Ok(())
    }
}

/// Generated dataset plus everything needed to score it.
#[derive(Clone, Debug)]
pub struct SimOutput {
    /// Time-merged sensor records.
    pub records: Vec<Record>,
    pub truth: Vec<TruthRecord>,
    pub trajectory: Trajectory,
    pub prototypes: BTreeMap<u32, Embedding>,
}

fn every(interval: f64, rate: f64) -> usize {
    ((interval * rate).round() as usize).max(1)
}

/// Runs the simulator described by `cfg.sim` with the sensors of `cfg`.
pub fn simulate(cfg: &RunConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let sim = &cfg.sim;
    let trajectory = generate_trajectory(&sim.trajectory)?;
    let prototypes = sim.world.class_prototypes(cfg.seed)?;
    let beacons = if sim.beacon_rate > 0.0 && !cfg.beacons.positions.is_empty() {
        Some(BeaconSet::new(cfg.beacons.positions.clone())?)
    } else {
        None
    };
    let rate = sim.trajectory.rate;
    let input = render::RenderInput {
        seed: cfg.seed,
        trajectory: &trajectory,
        world: &sim.world,
        prototypes: &prototypes,
        noise: &sim.noise,
        sensors: cfg.sensors(),
        object_radius: sim.object_radius,
        abs_fix_every: sim.abs_fix_interval.map(|dt| every(dt, rate)),
        beacons: beacons.as_ref().map(|b| (b, every(1.0 / sim.beacon_rate, rate))),
    };
    let (records, truth) = render::render(&input)?;
    Ok(SimOutput {
        records: crate::dataset::merge_records(records),
        truth,
        trajectory,
        prototypes,
    })
}
