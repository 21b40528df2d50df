//! End-to-end pipeline: time-merged sensor records in, trajectory and
//! semantic landmark map out.

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::association::{
    associate_frame, Associator, CandidateScore, Landmark, ObservationRef, Outcome,
};
use crate::config::RunConfig;
use crate::dataset::{Detection, Record};
use crate::embedding::aggregate_landmark_embedding;
use crate::error::{Error, Result};
use crate::fusion::{localize_object, FixOutcome, NoFixReason, ObjectFix, SonarPing};
use crate::geometry::{skew, Pose3};
use crate::graph::{Factor, FactorGraph, Marginals, OptimizeReport, Termination, VariableId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlamConfig {
    /// Largest camera-to-sonar and pose-measurement time offset, seconds.
    pub max_skew: f64,
    /// Odometry steps composed into one pose node; 0 adds nodes only at keyframes.
    pub odometry_steps_per_node: usize,
    /// Landmarks with fewer observations are left out of the output map.
    pub min_landmark_observations: usize,
    /// Fuse detections and build landmarks. Off yields pure dead reckoning.
    pub landmarks: bool,
    pub partial_pose_factors: bool,
    pub absolute_pose_factors: bool,
    /// Start pose used instead of the first absolute fix.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior: Option<Pose3>,
    /// Reserved: bearing-only factors for detections without a sonar range.
    pub camera_only_factors: bool,
}

impl Default for SlamConfig {
    fn default() -> Self {
        Self {
            max_skew: 0.15,
            odometry_steps_per_node: 1,
            min_landmark_observations: 2,
            landmarks: true,
            partial_pose_factors: true,
            absolute_pose_factors: true,
            prior: None,
            camera_only_factors: false,
        }
    }
}

impl SlamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_skew.is_finite() && self.max_skew >= 0.0) {
            return Err(Error::config("slam.max_skew must be non-negative"));
        }
        if self.min_landmark_observations == 0 {
            return Err(Error::config("slam.min_landmark_observations must be at least 1"));
        }
        if self.camera_only_factors {
            return Err(Error::config(
                "slam.camera_only_factors is reserved and must be false",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub pose: Pose3,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SemanticMap {
    pub landmarks: Vec<Landmark>,
    pub trajectory: Vec<TrajectoryPoint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    Matched,
    NewLandmark,
    Dropped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NoSonarPing,
    NoReturn,
    OutOfFov,
    OutOfImage,
}

/// What happened to one detection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionLogEntry {
    pub t: f64,
    pub detection: usize,
    pub outcome: DecisionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmark: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<DropReason>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<CandidateScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlamReport {
    pub poses: usize,
    pub keyframes: usize,
    /// Landmarks in the output map.
    pub landmarks: usize,
    /// All landmark variables, including those pruned from the map.
    pub landmark_variables: usize,
    pub factors: usize,
    pub detections: usize,
    pub fused_detections: usize,
    pub dropped_detections: usize,
    pub optimizations: usize,
    /// LM iterations summed over all optimizations.
    pub iterations: usize,
    pub final_cost: f64,
    pub termination: Option<Termination>,
    pub converged: bool,
}

/// Everything a run produces. `graph` keeps the final factor graph so the
/// estimate can be cross-checked against a batch solve.
#[derive(Clone, Debug)]
pub struct SlamOutput {
    pub map: SemanticMap,
    pub decisions: Vec<DecisionLogEntry>,
    pub report: SlamReport,
    pub graph: FactorGraph,
}

/// Nearest ping to `t` within `max_skew`; the earlier one on a tie.
pub fn pair_camera_sonar(t: f64, pings: &[SonarPing], max_skew: f64) -> Option<&SonarPing> {
    let i = pings.partition_point(|p| p.t < t);
    let before = i.checked_sub(1).map(|k| &pings[k]);
    let after = pings.get(i);
    let best = match (before, after) {
        (Some(b), Some(a)) => {
            if a.t - t < t - b.t {
                a
            } else {
                b
            }
        }
        (Some(b), None) => b,
        (None, Some(a)) => a,
        (None, None) => return None,
    };
    ((best.t - t).abs() <= max_skew).then_some(best)
}

/// Innovation covariance of a world-frame fix against a landmark estimate.
///
/// Combines the joint pose-landmark marginal (linearized through the
/// right-perturbed world transform) with the measurement noise pushed through
/// the pixel-and-range back-projection.
pub fn gate_covariance(
    pose: &Pose3,
    camera_from_body: &Pose3,
    fix: &ObjectFix,
    sigma: [f64; 3],
    slant_correction: bool,
    joint: &SMatrix<f64, 9, 9>,
) -> Matrix3<f64> {
    let p_body = camera_from_body.inverse_transform_point(&fix.point_camera);
    let r = pose.rotation_matrix();
    let mut j = SMatrix::<f64, 3, 9>::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-r * skew(&p_body)));
    j.fixed_view_mut::<3, 3>(0, 6).copy_from(&(-Matrix3::identity()));
    let g = backprojection_jacobian(fix, slant_correction);
    let cov_cam = g * Matrix3::from_diagonal(&Vector3::from(sigma).map(|s| s * s)) * g.transpose();
    let r_wc = r * camera_from_body.rotation_matrix().transpose();
    j * joint * j.transpose() + r_wc * cov_cam * r_wc.transpose()
}

/// d(X, Y, Z) / d(bearing, elevation, range) of the camera-frame fix.
pub fn backprojection_jacobian(fix: &ObjectFix, slant_correction: bool) -> Matrix3<f64> {
    let (a, b) = (fix.bearing.tan(), fix.elevation.tan());
    let (sa, sb) = (1.0 + a * a, 1.0 + b * b);
    let r = fix.range;
    if slant_correction {
        let s = (1.0 + a * a + b * b).sqrt();
        let z = r / s;
        let dz = Vector3::new(-r * a * sa / s.powi(3), -r * b * sb / s.powi(3), 1.0 / s);
        Matrix3::new(
            a * dz.x + z * sa,
            a * dz.y,
            a * dz.z,
            b * dz.x,
            b * dz.y + z * sb,
            b * dz.z,
            dz.x,
            dz.y,
            dz.z,
        )
    } else {
        let z = r;
        Matrix3::new(z * sa, 0.0, a, 0.0, z * sb, b, 0.0, 0.0, 1.0)
    }
}

struct Buffered<T> {
    t: f64,
    value: T,
}

struct Pipeline<'a> {
    cfg: &'a RunConfig,
    associator: Associator,
    graph: FactorGraph,
    times: Vec<f64>,
    landmarks: Vec<Landmark>,
    decisions: Vec<DecisionLogEntry>,
    pending: Option<Pose3>,
    pending_steps: usize,
    partial: Option<Buffered<(f64, f64, f64)>>,
    abs: Option<Buffered<(f64, f64, f64)>>,
    anchored: bool,
    keyframes: usize,
    detections: usize,
    fused: usize,
    optimizations: usize,
    iterations: usize,
    last_report: Option<OptimizeReport>,
}

impl<'a> Pipeline<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self> {
        Ok(Self {
            cfg,
            associator: Associator::new(cfg.association)?,
            graph: FactorGraph::new(),
            times: Vec::new(),
            landmarks: Vec::new(),
            decisions: Vec::new(),
            pending: None,
            pending_steps: 0,
            partial: None,
            abs: None,
            anchored: false,
            keyframes: 0,
            detections: 0,
            fused: 0,
            optimizations: 0,
            iterations: 0,
            last_report: None,
        })
    }

    fn slam(&self) -> &SlamConfig {
        &self.cfg.slam
    }

    fn odometry_sigma(&self, steps: usize) -> [f64; 6] {
        let [st, sr] = self.cfg.noise_model.odometry;
        let k = (steps.max(1) as f64).sqrt();
        [st * k, st * k, st * k, sr * k, sr * k, sr * k]
    }

    fn take_near<T>(slot: &mut Option<Buffered<T>>, t: f64, skew: f64) -> Option<T> {
        if slot.as_ref().is_some_and(|b| (b.t - t).abs() <= skew) {
            slot.take().map(|b| b.value)
        } else {
            None
        }
    }

    fn create_first_node(&mut self, t: f64) -> Result<()> {
        let skew = self.slam().max_skew;
        let abs = Self::take_near(&mut self.abs, t, skew);
        let partial = Self::take_near(&mut self.partial, t, skew);
        let nm = self.cfg.noise_model;
        let initial = match (&self.slam().prior, abs, partial) {
            (Some(p), _, _) => *p,
            (None, a, p) => {
                let (x, y, heading) = a.unwrap_or((0.0, 0.0, 0.0));
                let (depth, pitch, roll) = p.unwrap_or((0.0, 0.0, 0.0));
                Pose3::from_euler(Vector3::new(x, y, depth), roll, pitch, heading)
            }
        };
        let id = self.graph.add_pose(initial).index;
        self.times.push(t);
        if let Some(p) = self.slam().prior {
            self.graph.add_factor(Factor::Prior {
                pose: id,
                measurement: p,
                sigma: nm.prior,
            })?;
            self.anchored = true;
        }
        let use_abs = abs.is_some() && (self.slam().absolute_pose_factors || !self.slam().landmarks);
        let use_partial = partial.is_some() && (self.slam().partial_pose_factors || !self.slam().landmarks);
        if let (Some((x, y, heading)), true) = (abs, use_abs) {
            self.graph.add_factor(Factor::AbsolutePose {
                pose: id,
                x,
                y,
                heading,
                sigma: nm.absolute_pose,
            })?;
        }
        if let (Some((depth, pitch, roll)), true) = (partial, use_partial) {
            self.graph.add_factor(Factor::PartialPose {
                pose: id,
                depth,
                pitch,
                roll,
                sigma: nm.partial_pose,
            })?;
        }
        self.anchored |= use_abs && use_partial;
        Ok(())
    }

    fn create_node(&mut self, t: f64) -> Result<usize> {
        let prev = self.graph.num_poses() - 1;
        let delta = self.pending.take().unwrap_or_else(Pose3::identity);
        let steps = std::mem::take(&mut self.pending_steps);
        let initial = self.graph.pose(prev).compose(&delta);
        let id = self.graph.add_pose(initial).index;
        self.times.push(t);
        self.graph.add_factor(Factor::Odometry {
            from: prev,
            to: id,
            measurement: delta,
            sigma: self.odometry_sigma(steps),
        })?;
        if self.slam().landmarks {
            let skew = self.slam().max_skew;
            let nm = self.cfg.noise_model;
            if let Some((x, y, heading)) = Self::take_near(&mut self.abs, t, skew) {
                if self.slam().absolute_pose_factors {
                    self.graph.add_factor(Factor::AbsolutePose {
                        pose: id,
                        x,
                        y,
                        heading,
                        sigma: nm.absolute_pose,
                    })?;
                }
            }
            if let Some((depth, pitch, roll)) = Self::take_near(&mut self.partial, t, skew) {
                if self.slam().partial_pose_factors {
                    self.graph.add_factor(Factor::PartialPose {
                        pose: id,
                        depth,
                        pitch,
                        roll,
                        sigma: nm.partial_pose,
                    })?;
                }
            }
        }
        Ok(id)
    }

    fn log_drop(&mut self, t: f64, detection: usize, reason: DropReason) {
        self.decisions.push(DecisionLogEntry {
            t,
            detection,
            outcome: DecisionKind::Dropped,
            landmark: None,
            reason: Some(reason),
            candidates: Vec::new(),
        });
    }

    /// Localizes every detection of a frame; unfused ones are logged.
    fn fuse(&mut self, t: f64, dets: &[Detection], pings: &[SonarPing]) -> Result<Vec<(usize, ObjectFix)>> {
        self.detections += dets.len();
        let Some(ping) = pair_camera_sonar(t, pings, self.slam().max_skew) else {
            for i in 0..dets.len() {
                self.log_drop(t, i, DropReason::NoSonarPing);
            }
            return Ok(Vec::new());
        };
        let mut out = Vec::new();
        for (i, d) in dets.iter().enumerate() {
            if !self.cfg.camera.contains(&d.centroid) {
                self.log_drop(t, i, DropReason::OutOfImage);
                continue;
            }
            match localize_object(
                &d.centroid,
                ping,
                &self.cfg.camera,
                &self.cfg.sonar,
                self.cfg.fusion.slant_correction,
            )? {
                FixOutcome::Fix(f) => out.push((i, f)),
                FixOutcome::NoFix(NoFixReason::NoReturn) => self.log_drop(t, i, DropReason::NoReturn),
                FixOutcome::NoFix(NoFixReason::OutOfFov) => self.log_drop(t, i, DropReason::OutOfFov),
            }
        }
        self.fused += out.len();
        Ok(out)
    }

    fn keyframe(&mut self, t: f64, node: usize, dets: &[Detection], fixes: Vec<(usize, ObjectFix)>) -> Result<()> {
        if !self.anchored {
            return Err(Error::config(
                "no prior or absolute fix with partial pose before the first keyframe; \
                 set slam.prior or record abs_fix and partial_pose at the start",
            ));
        }
        self.keyframes += 1;
        let pose = *self.graph.pose(node);
        let cam = self.cfg.extrinsics.camera_from_body;
        let sigma = self.cfg.noise_model.landmark;
        let slant = self.cfg.fusion.slant_correction;
        let world: Vec<Vector3<f64>> = fixes
            .iter()
            .map(|(_, f)| pose.transform_point(&cam.inverse_transform_point(&f.point_camera)))
            .collect();
        let mut marginals: Option<Result<Marginals>> = None;
        let mut scores = Vec::with_capacity(fixes.len());
        for ((i, fix), pw) in fixes.iter().zip(&world) {
            let graph = &self.graph;
            let s = self.associator.score(&dets[*i].embedding, pw, &self.landmarks, |lm| {
                let m = marginals.get_or_insert_with(|| graph.marginals());
                let m = m.as_ref().map_err(|e| Error::CovarianceUnavailable(e.to_string()))?;
                let joint = m.joint(&[VariableId::pose(node), VariableId::landmark(lm)])?;
                let joint = SMatrix::<f64, 9, 9>::from_iterator(joint.iter().copied());
                Ok(gate_covariance(&pose, &cam, fix, sigma, slant, &joint))
            })?;
            scores.push(s);
        }
        let decisions = associate_frame(scores);
        let mut new_landmarks = Vec::new();
        let mut factors = Vec::new();
        for (((i, fix), pw), d) in fixes.iter().zip(&world).zip(decisions) {
            let obs = ObservationRef { t, detection: *i };
            let emb = &dets[*i].embedding;
            let id = match d.outcome {
                Outcome::Matched { landmark } => {
                    let l = &mut self.landmarks[landmark];
                    l.embedding = aggregate_landmark_embedding(&l.embedding, l.observation_count, emb);
                    l.observation_count += 1;
                    l.observations.push(obs);
                    landmark
                }
                Outcome::NewLandmark => {
                    let id = self.landmarks.len();
                    self.landmarks.push(Landmark {
                        id,
                        position: *pw,
                        embedding: emb.clone(),
                        observation_count: 1,
                        class_label: None,
                        observations: vec![obs],
                    });
                    new_landmarks.push(*pw);
                    id
                }
            };
            factors.push(Factor::LandmarkObs {
                pose: node,
                landmark: id,
                bearing: fix.bearing,
                elevation: fix.elevation,
                range: fix.range,
                sigma,
                camera_from_body: cam,
                slant_correction: slant,
            });
            self.decisions.push(DecisionLogEntry {
                t,
                detection: *i,
                outcome: match d.outcome {
                    Outcome::Matched { .. } => DecisionKind::Matched,
                    Outcome::NewLandmark => DecisionKind::NewLandmark,
                },
                landmark: Some(id),
                reason: None,
                candidates: d.candidate_scores,
            });
        }
        let report = self
            .graph
            .incremental_update(&[], &new_landmarks, factors, &self.cfg.solver)?;
        self.record(report);
        Ok(())
    }

    fn record(&mut self, report: OptimizeReport) {
        self.optimizations += 1;
        self.iterations += report.iterations;
        self.last_report = Some(report);
        for l in &mut self.landmarks {
            l.position = *self.graph.landmark(l.id);
        }
    }

    fn finish(mut self) -> Result<SlamOutput> {
        // Converge tightly once at the end so the estimate no longer depends
        // on the path the incremental updates took.
        if self.anchored && self.slam().landmarks && self.graph.num_poses() > 0 {
            let report = self.graph.optimize(&self.cfg.solver.closing())?;
            self.record(report);
        }
        let trajectory = self
            .times
            .iter()
            .enumerate()
            .map(|(i, &t)| TrajectoryPoint {
                t,
                pose: *self.graph.pose(i),
            })
            .collect();
        let min_obs = self.slam().min_landmark_observations;
        let landmarks: Vec<Landmark> = self
            .landmarks
            .iter()
            .filter(|l| l.observation_count >= min_obs)
            .cloned()
            .collect();
        let final_cost = self.graph.cost();
        let report = SlamReport {
            poses: self.graph.num_poses(),
            keyframes: self.keyframes,
            landmarks: landmarks.len(),
            landmark_variables: self.graph.num_landmarks(),
            factors: self.graph.factors().len(),
            detections: self.detections,
            fused_detections: self.fused,
            dropped_detections: self
                .decisions
                .iter()
                .filter(|d| d.outcome == DecisionKind::Dropped)
                .count(),
            optimizations: self.optimizations,
            iterations: self.iterations,
            final_cost,
            termination: self.last_report.as_ref().map(|r| r.termination),
            converged: self.last_report.as_ref().is_none_or(|r| r.converged()),
        };
        Ok(SlamOutput {
            map: SemanticMap {
                landmarks,
                trajectory,
            },
            decisions: self.decisions,
            report,
            graph: self.graph,
        })
    }
}

/// Runs the full pipeline over a time-merged record stream.
pub fn run(records: &[Record], cfg: &RunConfig) -> Result<SlamOutput> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyMap("dataset has no records".into()));
    }
    let pings: Vec<SonarPing> = records.iter().filter_map(Record::sonar_ping).collect();
    for p in &pings {
        p.validate(&cfg.sonar)?;
    }
    let mut pipe = Pipeline::new(cfg)?;
    let steps_per_node = cfg.slam.odometry_steps_per_node;
    let mut start = 0;
    while start < records.len() {
        let t = records[start].t();
        let end = start + records[start..].iter().take_while(|r| r.t() == t).count();
        let mut frames = Vec::new();
        for r in &records[start..end] {
            match r {
                Record::Odom { delta, .. } => {
                    if pipe.graph.num_poses() > 0 {
                        pipe.pending = Some(match pipe.pending {
                            Some(p) => p.compose(delta),
                            None => *delta,
                        });
                        pipe.pending_steps += 1;
                    }
                }
                Record::PartialPose { depth, pitch, roll, .. } => {
                    pipe.partial = Some(Buffered {
                        t,
                        value: (*depth, *pitch, *roll),
                    })
                }
                Record::AbsFix { x, y, heading, .. } => {
                    pipe.abs = Some(Buffered {
                        t,
                        value: (*x, *y, *heading),
                    })
                }
                Record::CameraFrame { detections, .. } if cfg.slam.landmarks => frames.push(
                    detections
                        .iter()
                        .map(|d| d.to_detection())
                        .collect::<Result<Vec<_>>>()?,
                ),
                _ => {}
            }
        }
        let mut fused = Vec::with_capacity(frames.len());
        for dets in &frames {
            let f = pipe.fuse(t, dets, &pings)?;
            fused.push(f);
        }
        let any_fused = fused.iter().any(|f| !f.is_empty());
        if pipe.graph.num_poses() == 0 {
            pipe.create_first_node(t)?;
        } else if (steps_per_node > 0 && pipe.pending_steps >= steps_per_node)
            || (any_fused && pipe.pending_steps > 0)
        {
            pipe.create_node(t)?;
        }
        let node = pipe.graph.num_poses() - 1;
        for (dets, fixes) in frames.iter().zip(fused) {
            if !fixes.is_empty() {
                pipe.keyframe(t, node, dets, fixes)?;
            }
        }
        start = end;
    }
    if pipe.pending_steps > 0 {
        let t = pipe.times.last().copied().unwrap_or(0.0).max(records.last().map(Record::t).unwrap_or(0.0));
        pipe.create_node(t)?;
    }
    pipe.finish()
}
