//! Run configuration loaded from TOML.
//!
//! Every section and field is optional; missing values take the defaults
//! below. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::association::AssociationConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::geometry::{CameraIntrinsics, Extrinsics, SonarConfig};
use crate::graph::SolverSettings;
use crate::sim::{Sensors, SimConfig};
use crate::slam::SlamConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Treat sonar range as Euclidean distance rather than camera depth.
    pub slant_correction: bool,
}

/// Measurement standard deviations assumed by the estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Per odometry step: translation meters, rotation radians.
    pub odometry: [f64; 2],
    /// Bearing, elevation (rad) and range (m) of a fused detection.
    pub landmark: [f64; 3],
    /// Depth (m), pitch and roll (rad).
    pub partial_pose: [f64; 3],
    /// x, y (m) and heading (rad).
    pub absolute_pose: [f64; 3],
    /// Configured start-pose prior, translation then rotation.
    pub prior: [f64; 6],
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            odometry: [0.05, 0.02],
            landmark: [0.02, 0.02, 0.1],
            partial_pose: [0.05, 0.01, 0.01],
            absolute_pose: [0.1, 0.1, 0.05],
            prior: [0.01, 0.01, 0.01, 0.01, 0.01, 0.01],
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let fields: [(&str, &[f64]); 5] = [
            ("odometry", &self.odometry),
            ("landmark", &self.landmark),
            ("partial_pose", &self.partial_pose),
            ("absolute_pose", &self.absolute_pose),
            ("prior", &self.prior),
        ];
        for (name, vals) in fields {
            if let Some(i) = vals.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::config(format!("noise_model.{name}[{i}] must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeaconConfig {
    /// Beacon positions in the world frame, meters.
    pub positions: Vec<[f64; 2]>,
    /// Starting point of the first trilateration solve.
    pub initial_guess: [f64; 2],
}

impl Default for BeaconConfig {
    fn default() -> Self {
        Self {
            positions: vec![[-3.0, -4.0], [11.0, -4.0]],
            initial_guess: [4.0, 2.0],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub camera: CameraIntrinsics,
    pub sonar: SonarConfig,
    pub extrinsics: Extrinsics,
    pub fusion: FusionConfig,
    pub noise_model: NoiseModel,
    pub association: AssociationConfig,
    pub slam: SlamConfig,
    pub solver: SolverSettings,
    pub eval: EvalConfig,
    pub sim: SimConfig,
    pub beacons: BeaconConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Effective configuration with every default filled in.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let section = |name: &str, r: Result<()>| {
            r.map_err(|e| match e {
                Error::Config(m) => Error::Config(m),
                other => Error::config(format!("{name}: {other}")),
            })
        };
        section("camera", self.camera.validate())?;
        section("sonar", self.sonar.validate())?;
        section("noise_model", self.noise_model.validate())?;
        section("association", self.association.validate())?;
        section("slam", self.slam.validate())?;
        section("solver", self.solver.validate())?;
        section("eval", self.eval.validate())?;
        section("sim", self.sim.validate(self.sonar.intensity_threshold))?;
        if !self.beacons.positions.is_empty() {
            section(
                "beacons.positions",
                crate::beacons::BeaconSet::new(self.beacons.positions.clone()).map(|_| ()),
            )?;
        }
        if self.beacons.initial_guess.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("beacons.initial_guess must be finite"));
        }
        Ok(())
    }

    pub fn sensors(&self) -> Sensors<'_> {
        Sensors {
            camera: &self.camera,
            sonar: &self.sonar,
            extrinsics: &self.extrinsics,
            slant_correction: self.fusion.slant_correction,
        }
    }
}
