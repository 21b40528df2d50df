//! Sensor rendering along a ground-truth trajectory.

use std::collections::BTreeMap;

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::rng::{self, Tag};
use super::trajectory::Trajectory;
use super::world::WorldSpec;
use crate::beacons::{array_bearing, BeaconSet, RangeObservation};
use crate::dataset::{DetectionRecord, Record, TruthRecord};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::fusion::{point_to_range, Beam, Intensities};
use crate::geometry::{wrap_angle, CameraIntrinsics, Extrinsics, Pixel, SonarConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Per-step odometry noise: translation meters, rotation radians.
    pub odometry_sigma: [f64; 2],
    /// Per-step odometry bias in tangent coordinates `[rho; omega]`.
    pub odometry_bias: [f64; 6],
    /// Depth (m), pitch and roll (rad).
    pub partial_pose_sigma: [f64; 3],
    /// x, y (m) and heading (rad).
    pub absolute_sigma: [f64; 3],
    pub pixel_sigma: f64,
    /// Total embedding noise; each component gets `sigma / sqrt(dim)`.
    pub embedding_sigma: f64,
    pub range_sigma: f64,
    pub multipath_probability: f64,
    /// Range inflation bounds for a multipath return.
    pub multipath_factor: [f64; 2],
    pub dropout_probability: f64,
    /// Upper bound of uniform background intensity; zero gives sparse pings.
    pub background_intensity: f64,
    pub beacon_range_sigma: f64,
    pub beacon_bearing_sigma: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            odometry_sigma: [0.01, 0.002],
            odometry_bias: [0.0; 6],
            partial_pose_sigma: [0.02, 0.005, 0.005],
            absolute_sigma: [0.05, 0.05, 0.01],
            pixel_sigma: 2.0,
            embedding_sigma: 0.05,
            range_sigma: 0.05,
            multipath_probability: 0.05,
            multipath_factor: [1.2, 2.0],
            dropout_probability: 0.05,
            background_intensity: 0.0,
            beacon_range_sigma: 0.05,
            beacon_bearing_sigma: 0.01,
        }
    }
}

impl NoiseSpec {
    /// No noise, no multipath, no dropout.
    pub fn zero() -> Self {
        Self {
            odometry_sigma: [0.0; 2],
            odometry_bias: [0.0; 6],
            partial_pose_sigma: [0.0; 3],
            absolute_sigma: [0.0; 3],
            pixel_sigma: 0.0,
            embedding_sigma: 0.0,
            range_sigma: 0.0,
            multipath_probability: 0.0,
            multipath_factor: [1.2, 2.0],
            dropout_probability: 0.0,
            background_intensity: 0.0,
            beacon_range_sigma: 0.0,
            beacon_bearing_sigma: 0.0,
        }
    }

    pub fn validate(&self, intensity_threshold: f64) -> Result<()> {
        let sigmas = [
            ("odometry_sigma", &self.odometry_sigma[..]),
            ("partial_pose_sigma", &self.partial_pose_sigma[..]),
            ("absolute_sigma", &self.absolute_sigma[..]),
            ("pixel_sigma", &[self.pixel_sigma][..]),
            ("embedding_sigma", &[self.embedding_sigma][..]),
            ("range_sigma", &[self.range_sigma][..]),
            ("beacon_range_sigma", &[self.beacon_range_sigma][..]),
            ("beacon_bearing_sigma", &[self.beacon_bearing_sigma][..]),
        ];
        for (name, vals) in sigmas {
            if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::config(format!("sim.noise.{name} must be non-negative")));
            }
        }
        if self.odometry_bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("sim.noise.odometry_bias must be finite"));
        }
        for (name, p) in [
            ("multipath_probability", self.multipath_probability),
            ("dropout_probability", self.dropout_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("sim.noise.{name} must lie in [0, 1]")));
            }
        }
        let [lo, hi] = self.multipath_factor;
        if !(lo.is_finite() && hi.is_finite() && lo > 1.0 && hi >= lo) {
            return Err(Error::config(
                "sim.noise.multipath_factor must satisfy 1 < low <= high",
            ));
        }
        let bg = self.background_intensity;
        if !(bg == 0.0 || (bg > 0.0 && bg < intensity_threshold)) {
            return Err(Error::config(
                "sim.noise.background_intensity must lie in [0, sonar.intensity_threshold)",
            ));
        }
        Ok(())
    }
}

/// Sensor models shared by the simulator and the estimator.
#[derive(Clone, Copy, Debug)]
pub struct Sensors<'a> {
    pub camera: &'a CameraIntrinsics,
    pub sonar: &'a SonarConfig,
    pub extrinsics: &'a Extrinsics,
    pub slant_correction: bool,
}

/// Per-object geometry at one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Visibility {
    pub pixel: Option<Pixel>,
    /// Sonar-frame bearing and reported range when inside the sonar fan.
    pub sonar: Option<(f64, f64)>,
}

impl Visibility {
    /// Object produces a camera detection.
    pub fn detected(&self) -> bool {
        self.pixel.is_some() && self.sonar.is_some()
    }
}

/// Direct geometric visibility test for a world point seen from `pose`.
pub fn visibility(sensors: &Sensors, pose: &crate::geometry::Pose3, world: &Vector3<f64>) -> Visibility {
    let body = pose.inverse_transform_point(world);
    let pc = sensors.extrinsics.camera_from_body.transform_point(&body);
    let ps = sensors.extrinsics.sonar_from_body.transform_point(&body);
    let pixel = sensors.camera.project(&pc).filter(|px| sensors.camera.contains(px));
    let sonar = (ps.z > 0.0)
        .then(|| (ps.x.atan2(ps.z), point_to_range(&ps, sensors.slant_correction)))
        .filter(|(b, r)| b.abs() <= 0.5 * sensors.sonar.horizontal_fov && *r > 0.0 && *r < sensors.sonar.max_range());
    Visibility { pixel, sonar }
}

fn quantize(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

pub(crate) struct RenderInput<'a> {
    pub seed: u64,
    pub trajectory: &'a Trajectory,
    pub world: &'a WorldSpec,
    pub prototypes: &'a BTreeMap<u32, Embedding>,
    pub noise: &'a NoiseSpec,
    pub sensors: Sensors<'a>,
    pub object_radius: f64,
    pub abs_fix_every: Option<usize>,
    pub beacons: Option<(&'a BeaconSet, usize)>,
}

pub(crate) fn render(input: &RenderInput) -> Result<(Vec<Record>, Vec<TruthRecord>)> {
    let RenderInput {
        seed,
        trajectory,
        world,
        prototypes,
        noise,
        sensors,
        ..
    } = *input;
    let mut records = Vec::new();
    let mut truth = Vec::new();
    for (id, o) in world.objects.iter().enumerate() {
        truth.push(TruthRecord::TrueObject {
            id,
            position: o.position(),
            class: o.class,
        });
    }
    let beacon_obs = match input.beacons {
        Some((set, every)) => render_beacon_ranges(
            trajectory,
            set,
            noise.beacon_range_sigma,
            noise.beacon_bearing_sigma,
            seed,
            every,
        ),
        None => Vec::new(),
    };
    let mut beacon_iter = beacon_obs.into_iter().peekable();
    let objects: Vec<Vector3<f64>> = world.objects.iter().map(|o| o.position()).collect();
    for (j, (&t, pose)) in trajectory.times.iter().zip(&trajectory.poses).enumerate() {
        let j64 = j as u64;
        truth.push(TruthRecord::TruePose { t, pose: *pose });
        if j > 0 {
            let delta = trajectory.poses[j - 1].inverse().compose(pose);
            let mut r = rng::stream(seed, Tag::Odometry, j64, 0);
            let [st, sr] = noise.odometry_sigma;
            let mut xi = Vector6::from(noise.odometry_bias);
            for k in 0..6 {
                xi[k] += rng::normal(&mut r, if k < 3 { st } else { sr });
            }
            records.push(Record::Odom {
                t,
                delta: delta.retract(&xi),
            });
        }
        let (roll, pitch, yaw) = pose.euler();
        {
            let mut r = rng::stream(seed, Tag::PartialPose, j64, 0);
            let [sd, sp, sr] = noise.partial_pose_sigma;
            records.push(Record::PartialPose {
                t,
                depth: pose.translation().z + rng::normal(&mut r, sd),
                pitch: pitch + rng::normal(&mut r, sp),
                roll: roll + rng::normal(&mut r, sr),
            });
        }
        if j == 0 || input.abs_fix_every.is_some_and(|k| j % k == 0) {
            let mut r = rng::stream(seed, Tag::AbsFix, j64, 0);
            let [sx, sy, sh] = noise.absolute_sigma;
            records.push(Record::AbsFix {
                t,
                x: pose.translation().x + rng::normal(&mut r, sx),
                y: pose.translation().y + rng::normal(&mut r, sy),
                heading: wrap_angle(yaw + rng::normal(&mut r, sh)),
            });
        }
        let vis: Vec<Visibility> = objects.iter().map(|p| visibility(&sensors, pose, p)).collect();
        records.push(Record::SonarPing {
            t,
            beams: render_ping(input, j64, &vis),
        });
        let mut detections = Vec::new();
        for (id, v) in vis.iter().enumerate() {
            if !v.detected() {
                continue;
            }
            let px = v.pixel.expect("detected objects project");
            let mut r = rng::stream(seed, Tag::Detection, j64, id as u64);
            if rng::uniform(&mut r) < noise.dropout_probability {
                continue;
            }
            let noisy = Pixel::new(
                px.u + rng::normal(&mut r, noise.pixel_sigma),
                px.v + rng::normal(&mut r, noise.pixel_sigma),
            );
            let proto = &prototypes[&world.objects[id].class];
            let s = noise.embedding_sigma / (proto.dim() as f64).sqrt();
            let values: Vec<f64> = proto.values().iter().map(|x| x + rng::normal(&mut r, s)).collect();
            if !sensors.camera.contains(&noisy) {
                continue;
            }
            let embedding = Embedding::new(values)?.normalized();
            truth.push(TruthRecord::TrueAssociation {
                t,
                detection: detections.len(),
                object: id,
            });
            detections.push(DetectionRecord {
                u: noisy.u,
                v: noisy.v,
                embedding: Some(embedding),
                patches: None,
                mask_area: None,
            });
        }
        records.push(Record::CameraFrame { t, detections });
        while beacon_iter.peek().is_some_and(|o| o.t <= t) {
            let o = beacon_iter.next().expect("peeked");
            records.push(Record::BeaconRanges {
                t: o.t,
                ranges: o.ranges,
                bearings: o.bearings,
            });
        }
    }
    Ok((records, truth))
}

/// Echo returns for every object inside the sonar fan at sample `j`.
fn render_ping(input: &RenderInput, j: u64, vis: &[Visibility]) -> Vec<Beam> {
    let cfg = input.sensors.sonar;
    let noise = input.noise;
    let res = cfg.angular_resolution();
    let bearings = cfg.beam_bearings();
    let mut echoes: BTreeMap<usize, BTreeMap<u64, f64>> = BTreeMap::new();
    for (id, v) in vis.iter().enumerate() {
        let Some((theta, true_range)) = v.sonar else {
            continue;
        };
        let mut r = rng::stream(input.seed, Tag::Range, j, id as u64);
        let multipath = rng::uniform(&mut r) < noise.multipath_probability;
        let [lo, hi] = noise.multipath_factor;
        let range = if multipath {
            true_range * (lo + (hi - lo) * rng::uniform(&mut r))
        } else {
            true_range + rng::normal(&mut r, noise.range_sigma)
        };
        if !(range >= 0.0 && range < cfg.max_range()) {
            continue;
        }
        let bin = ((range / cfg.range_resolution).floor() as u64).min(cfg.num_bins - 1);
        let half_width = if true_range > input.object_radius {
            (input.object_radius / true_range).asin()
        } else {
            std::f64::consts::FRAC_PI_2
        };
        let reach = 0.5 * res * (1.0 + 1e-12) + half_width;
        for (i, b) in bearings.iter().enumerate() {
            let off = (b - theta).abs();
            if off > reach {
                continue;
            }
            // Strongest on the beam nearest the object center.
            let intensity = quantize(1.0 - 0.4 * (off / reach).min(1.0));
            let slot = echoes.entry(i).or_default().entry(bin).or_insert(0.0);
            *slot = slot.max(intensity);
        }
    }
    if noise.background_intensity > 0.0 {
        bearings
            .iter()
            .enumerate()
            .map(|(i, &bearing)| {
                let mut r = rng::stream(input.seed, Tag::Background, j, i as u64);
                let mut v: Vec<f64> = (0..cfg.num_bins)
                    .map(|_| quantize(noise.background_intensity * rng::uniform(&mut r)))
                    .collect();
                if let Some(e) = echoes.get(&i) {
                    for (&bin, &x) in e {
                        v[bin as usize] = v[bin as usize].max(x);
                    }
                }
                Beam {
                    bearing,
                    intensities: Intensities::Dense(v),
                }
            })
            .collect()
    } else {
        echoes
            .into_iter()
            .map(|(i, e)| Beam {
                bearing: bearings[i],
                intensities: Intensities::Sparse {
                    len: cfg.num_bins,
                    bins: e.keys().copied().collect(),
                    values: e.values().copied().collect(),
                },
            })
            .collect()
    }
}

/// Beacon ranges and array bearings every `every` trajectory samples.
///
/// Ranges are horizontal distances plus Gaussian noise; bearings invert the
/// heading relation at the true heading, plus Gaussian noise.
pub fn render_beacon_ranges(
    trajectory: &Trajectory,
    beacons: &BeaconSet,
    range_sigma: f64,
    bearing_sigma: f64,
    seed: u64,
    every: usize,
) -> Vec<RangeObservation> {
    let every = every.max(1);
    let mut out = Vec::new();
    for (j, (&t, pose)) in trajectory.times.iter().zip(&trajectory.poses).enumerate() {
        if j % every != 0 {
            continue;
        }
        let pos = [pose.translation().x, pose.translation().y];
        let heading = pose.euler().2;
        let mut ranges = Vec::with_capacity(beacons.len());
        let mut bearings = Vec::with_capacity(beacons.len());
        for (k, b) in beacons.beacons.iter().enumerate() {
            let mut r = rng::stream(seed, Tag::Beacon, j as u64, k as u64);
            let d = ((pos[0] - b[0]).powi(2) + (pos[1] - b[1]).powi(2)).sqrt();
            ranges.push(Some(d + rng::normal(&mut r, range_sigma)));
            bearings.push(Some(wrap_angle(
                array_bearing(heading, pos, *b) + rng::normal(&mut r, bearing_sigma),
            )));
        }
        out.push(RangeObservation { t, ranges, bearings });
    }
    out
}
