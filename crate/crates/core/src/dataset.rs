//! NDJSON dataset and ground-truth records.
//!
//! One JSON object per line, discriminated by `type`. Angles are radians and
//! distances meters throughout.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::beacons::RangeObservation;
use crate::embedding::{patch_average, Embedding, FeaturePatchGrid};
use crate::error::{Error, Result};
use crate::fusion::{Beam, SonarPing};
use crate::geometry::{Pixel, Pose3};

/// One object detection as stored on disk: either a ready embedding or the
/// raw patch grid it is averaged from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub u: f64,
    pub v: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Embedding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patches: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_area: Option<f64>,
}

/// A detection ready for fusion.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub centroid: Pixel,
    pub embedding: Embedding,
    pub mask_area: Option<f64>,
}

impl DetectionRecord {
    pub fn to_detection(&self) -> Result<Detection> {
        let embedding = match (&self.embedding, &self.patches) {
            (Some(e), None) => e.clone(),
            (None, Some(p)) => patch_average(&FeaturePatchGrid::new(p.clone())?)?,
            _ => {
                return Err(Error::invalid(
                    "detection needs exactly one of `embedding` or `patches`",
                ))
            }
        };
        Ok(Detection {
            centroid: Pixel::new(self.u, self.v),
            embedding,
            mask_area: self.mask_area,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    /// Body-frame motion since the previous odometry record.
    Odom { t: f64, delta: Pose3 },
    /// Planar position and heading in the world frame.
    AbsFix { t: f64, x: f64, y: f64, heading: f64 },
    PartialPose { t: f64, depth: f64, pitch: f64, roll: f64 },
    CameraFrame { t: f64, detections: Vec<DetectionRecord> },
    SonarPing { t: f64, beams: Vec<Beam> },
    BeaconRanges {
        t: f64,
        ranges: Vec<Option<f64>>,
        #[serde(default)]
        bearings: Vec<Option<f64>>,
    },
}

impl Record {
    pub fn t(&self) -> f64 {
        match self {
            Record::Odom { t, .. }
            | Record::AbsFix { t, .. }
            | Record::PartialPose { t, .. }
            | Record::CameraFrame { t, .. }
            | Record::SonarPing { t, .. }
            | Record::BeaconRanges { t, .. } => *t,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Record::Odom { .. } => "odom",
            Record::AbsFix { .. } => "abs_fix",
            Record::PartialPose { .. } => "partial_pose",
            Record::CameraFrame { .. } => "camera_frame",
            Record::SonarPing { .. } => "sonar_ping",
            Record::BeaconRanges { .. } => "beacon_ranges",
        }
    }

    /// Processing order among records with equal timestamps.
    fn rank(&self) -> u8 {
        match self {
            Record::Odom { .. } => 0,
            Record::PartialPose { .. } => 1,
            Record::AbsFix { .. } => 2,
            Record::SonarPing { .. } => 3,
            Record::CameraFrame { .. } => 4,
            Record::BeaconRanges { .. } => 5,
        }
    }

    pub fn sonar_ping(&self) -> Option<SonarPing> {
        match self {
            Record::SonarPing { t, beams } => Some(SonarPing {
                t: *t,
                beams: beams.clone(),
            }),
            _ => None,
        }
    }

    pub fn range_observation(&self) -> Option<RangeObservation> {
        match self {
            Record::BeaconRanges {
                t,
                ranges,
                bearings,
            } => Some(RangeObservation {
                t: *t,
                ranges: ranges.clone(),
                bearings: bearings.clone(),
            }),
            _ => None,
        }
    }
}

/// Stable time merge: by timestamp, then odom, partial pose, absolute fix,
/// sonar, camera, beacon ranges; file order among exact ties.
pub fn merge_records(mut records: Vec<Record>) -> Vec<Record> {
    records.sort_by(|a, b| a.t().total_cmp(&b.t()).then(a.rank().cmp(&b.rank())));
    records
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TruthRecord {
    TruePose { t: f64, pose: Pose3 },
    TrueObject {
        id: usize,
        position: Vector3<f64>,
        class: u32,
    },
    /// Camera detection `detection` at time `t` images object `object`.
    TrueAssociation { t: f64, detection: usize, object: usize },
}

/// Reads one JSON value per non-blank line.
pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_ndjson<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Serializes records to NDJSON text.
pub fn to_ndjson_string<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for item in items {
        s.push_str(&serde_json::to_string(item).expect("records serialize"));
        s.push('\n');
    }
    s
}

/// Reads a dataset file, checking per-type timestamp order, and returns the
/// merged stream.
pub fn read_dataset(path: &Path) -> Result<Vec<Record>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    let mut last_t: std::collections::BTreeMap<&'static str, f64> = Default::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let r: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let t = r.t();
        if let Some(prev) = last_t.insert(r.type_name(), t) {
            if t < prev {
                return Err(parse_err(format!(
                    "{} timestamp {t} precedes previous {prev}",
                    r.type_name()
                )));
            }
        }
        records.push(r);
    }
    Ok(merge_records(records))
}
