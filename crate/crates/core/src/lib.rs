//! Object-landmark semantic SLAM for underwater vehicles.
//!
//! Camera detections are fused with multibeam sonar ranges into 3D object
//! fixes, associated to map landmarks by embedding similarity and a
//! chi-square gate, and optimized jointly with the vehicle trajectory in a
//! factor graph. A deterministic simulator and evaluation metrics come with it.

pub mod association;
pub mod beacons;
pub mod config;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod graph;
pub mod sim;
pub mod slam;

pub use association::{Landmark, ObservationRef};
pub use config::RunConfig;
pub use dataset::{Detection, Record, TruthRecord};
pub use embedding::Embedding;
pub use error::{Error, Result};
pub use fusion::SonarPing;
pub use geometry::{CameraIntrinsics, Extrinsics, Pixel, Pose3, SonarConfig};
pub use graph::{Factor, FactorGraph};
pub use slam::{SemanticMap, TrajectoryPoint};
