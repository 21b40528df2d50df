//! Trajectory error, map-level precision/recall and the ablation harness.

use std::collections::BTreeMap;

use nalgebra::{Rotation2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::association::{GateMode, Landmark};
use crate::config::RunConfig;
use crate::dataset::{Record, TruthRecord};
use crate::error::{Error, Result};
use crate::slam::{run, TrajectoryPoint};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Landmark-to-object match radius, meters.
    pub match_radius: f64,
    /// Largest timestamp gap when pairing trajectory samples, seconds.
    pub max_skew: f64,
    /// Rigidly align the estimate to the reference in the plane before scoring.
    pub align: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            match_radius: 1.0,
            max_skew: 0.05,
            align: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.match_radius.is_finite() && self.match_radius > 0.0) {
            return Err(Error::config("eval.match_radius must be positive"));
        }
        if !(self.max_skew.is_finite() && self.max_skew >= 0.0) {
            return Err(Error::config("eval.max_skew must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueObject {
    pub id: usize,
    pub position: Vector3<f64>,
    pub class: u32,
}

/// Ground truth sidecar in indexed form.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub poses: Vec<TrajectoryPoint>,
    pub objects: Vec<TrueObject>,
    /// `(t bits, detection index) -> object id`.
    pub associations: BTreeMap<(u64, usize), usize>,
}

impl GroundTruth {
    pub fn from_records(records: &[TruthRecord]) -> Self {
        let mut gt = GroundTruth::default();
        for r in records {
            match *r {
                TruthRecord::TruePose { t, pose } => gt.poses.push(TrajectoryPoint { t, pose }),
                TruthRecord::TrueObject {
                    id,
                    position,
                    class,
                } => gt.objects.push(TrueObject {
                    id,
                    position,
                    class,
                }),
                TruthRecord::TrueAssociation {
                    t,
                    detection,
                    object,
                } => {
                    gt.associations.insert((t.to_bits(), detection), object);
                }
            }
        }
        gt.objects.sort_by_key(|o| o.id);
        gt
    }

    pub fn object_for(&self, t: f64, detection: usize) -> Option<usize> {
        self.associations.get(&(t.to_bits(), detection)).copied()
    }
}

/// Index pairs `(estimate, reference)` matched by nearest timestamp within
/// `max_skew`, one per estimate sample; earlier reference wins a tie.
pub fn pair_by_time(
    estimate: &[TrajectoryPoint],
    reference: &[TrajectoryPoint],
    max_skew: f64,
) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..reference.len()).collect();
    order.sort_by(|&a, &b| reference[a].t.total_cmp(&reference[b].t).then(a.cmp(&b)));
    let mut est_order: Vec<usize> = (0..estimate.len()).collect();
    est_order.sort_by(|&a, &b| estimate[a].t.total_cmp(&estimate[b].t).then(a.cmp(&b)));
    let mut out = Vec::new();
    for e in est_order {
        let t = estimate[e].t;
        let i = order.partition_point(|&k| reference[k].t < t);
        let mut best: Option<usize> = None;
        for k in [i.checked_sub(1), Some(i)].into_iter().flatten() {
            if let Some(&r) = order.get(k) {
                let d = (reference[r].t - t).abs();
                if d <= max_skew && best.is_none_or(|b| d < (reference[b].t - t).abs()) {
                    best = Some(r);
                }
            }
        }
        if let Some(r) = best {
            out.push((e, r));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Errors measured in the reference frame as given.
    Absolute,
    /// Estimate rotated about z and translated in the plane to best fit.
    Rigid2d,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApeReport {
    /// Mean translation error, meters.
    pub ape: f64,
    pub pairs: usize,
    pub alignment: Alignment,
}

/// Least-squares planar rotation and translation taking `src` onto `dst`.
pub fn align_2d(src: &[Vector2<f64>], dst: &[Vector2<f64>]) -> (Rotation2<f64>, Vector2<f64>) {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector2<f64>>() / n;
    let cd = dst.iter().sum::<Vector2<f64>>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s - cs, d - cd);
        sxx += a.dot(&b);
        sxy += a.x * b.y - a.y * b.x;
    }
    let rot = Rotation2::new(sxy.atan2(sxx));
    (rot, cd - rot * cs)
}

/// Mean Euclidean translation error over timestamp-paired samples.
pub fn ape(
    estimate: &[TrajectoryPoint],
    reference: &[TrajectoryPoint],
    max_skew: f64,
    align: bool,
) -> Result<ApeReport> {
    let pairs = pair_by_time(estimate, reference, max_skew);
    if pairs.is_empty() {
        return Err(Error::invalid("no trajectory samples pair within the time skew"));
    }
    let mut est: Vec<Vector3<f64>> = pairs.iter().map(|&(e, _)| *estimate[e].pose.translation()).collect();
    let refs: Vec<Vector3<f64>> = pairs.iter().map(|&(_, r)| *reference[r].pose.translation()).collect();
    if align {
        let (rot, t) = align_2d(
            &est.iter().map(|p| p.xy()).collect::<Vec<_>>(),
            &refs.iter().map(|p| p.xy()).collect::<Vec<_>>(),
        );
        for p in &mut est {
            let q = rot * p.xy() + t;
            *p = Vector3::new(q.x, q.y, p.z);
        }
    }
    let total: f64 = est.iter().zip(&refs).map(|(a, b)| (a - b).norm()).sum();
    Ok(ApeReport {
        ape: total / pairs.len() as f64,
        pairs: pairs.len(),
        alignment: if align {
            Alignment::Rigid2d
        } else {
            Alignment::Absolute
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapMatch {
    pub landmark: usize,
    pub object: usize,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapMatchReport {
    pub matches: Vec<MapMatch>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
    pub precision: f64,
    pub recall: f64,
    pub radius: f64,
    /// Set when the map is empty and precision is undefined (reported as 0).
    pub empty_map: bool,
    /// Whether landmark observation histories were checked against truth.
    pub association_checked: bool,
}

/// True object most of a landmark's observations came from; lowest id on a tie.
pub fn majority_object(landmark: &Landmark, truth: &GroundTruth) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for o in &landmark.observations {
        if let Some(obj) = truth.object_for(o.t, o.detection) {
            *counts.entry(obj).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(obj, _)| obj)
}

/// Map-level precision and recall.
///
/// Landmark-object pairs within `radius` are matched greedily by ascending
/// distance (lower landmark id, then lower object id, on ties), each used at
/// most once. When the truth carries detection associations, a landmark may
/// only match the object most of its observations came from.
pub fn map_precision_recall(landmarks: &[Landmark], truth: &GroundTruth, radius: f64) -> Result<MapMatchReport> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::invalid("match radius must be positive"));
    }
    let checked = !truth.associations.is_empty();
    let majority: Vec<Option<usize>> = landmarks.iter().map(|l| majority_object(l, truth)).collect();
    let mut pairs = Vec::new();
    for (li, l) in landmarks.iter().enumerate() {
        for o in &truth.objects {
            let d = (l.position - o.position).norm();
            if d <= radius && (!checked || majority[li] == Some(o.id)) {
                pairs.push((d, l.id, o.id, li));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_l = vec![false; landmarks.len()];
    let mut used_o: BTreeMap<usize, bool> = BTreeMap::new();
    let mut matches = Vec::new();
    for (d, lid, oid, li) in pairs {
        if used_l[li] || used_o.contains_key(&oid) {
            continue;
        }
        used_l[li] = true;
        used_o.insert(oid, true);
        matches.push(MapMatch {
            landmark: lid,
            object: oid,
            distance: d,
        });
    }
    let false_positives: Vec<usize> = landmarks
        .iter()
        .zip(&used_l)
        .filter(|(_, u)| !**u)
        .map(|(l, _)| l.id)
        .collect();
    let false_negatives: Vec<usize> = truth
        .objects
        .iter()
        .filter(|o| !used_o.contains_key(&o.id))
        .map(|o| o.id)
        .collect();
    let tp = matches.len() as f64;
    let empty_map = landmarks.is_empty();
    Ok(MapMatchReport {
        precision: if empty_map { 0.0 } else { tp / landmarks.len() as f64 },
        recall: if truth.objects.is_empty() {
            0.0
        } else {
            tp / truth.objects.len() as f64
        },
        matches,
        false_positives,
        false_negatives,
        radius,
        empty_map,
        association_checked: checked,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub ape: f64,
    pub precision: f64,
    pub recall: f64,
    pub landmarks: usize,
}

/// Odometry only, geometric nearest neighbour, geometric with uncertainty,
/// and the full pipeline, all derived from `base`.
pub fn default_ablation_suite(base: &RunConfig) -> Vec<(String, RunConfig)> {
    let mut odom = base.clone();
    odom.slam.landmarks = false;
    let mut geo = base.clone();
    geo.association.cosine_threshold = -1.0;
    geo.association.gate = GateMode::Radius;
    let mut geo_unc = base.clone();
    geo_unc.association.cosine_threshold = -1.0;
    geo_unc.association.gate = GateMode::Mahalanobis;
    let mut full = base.clone();
    full.association.gate = GateMode::Mahalanobis;
    vec![
        ("odometry".to_string(), odom),
        ("geometric".to_string(), geo),
        ("geometric+uncertainty".to_string(), geo_unc),
        ("full".to_string(), full),
    ]
}

/// Scores one run of `cfg` on `records` against `truth`.
pub fn evaluate_run(records: &[Record], truth: &GroundTruth, cfg: &RunConfig) -> Result<(AblationRow, crate::slam::SlamOutput)> {
    let out = run(records, cfg)?;
    let a = ape(&out.map.trajectory, &truth.poses, cfg.eval.max_skew, cfg.eval.align)?;
    let m = map_precision_recall(&out.map.landmarks, truth, cfg.eval.match_radius)?;
    Ok((
        AblationRow {
            name: String::new(),
            ape: a.ape,
            precision: m.precision,
            recall: m.recall,
            landmarks: out.map.landmarks.len(),
        },
        out,
    ))
}

/// One row per configuration, all on the same dataset.
pub fn run_ablation(records: &[Record], truth: &GroundTruth, configs: &[(String, RunConfig)]) -> Result<Vec<AblationRow>> {
    configs
        .iter()
        .map(|(name, cfg)| {
            let (mut row, _) = evaluate_run(records, truth, cfg)?;
            row.name = name.clone();
            Ok(row)
        })
        .collect()
}

/// Plotting-friendly `t,x,y,z,yaw` rows.
pub fn trajectory_csv(points: &[TrajectoryPoint]) -> String {
    let mut s = String::from("t,x,y,z,yaw\n");
    for p in points {
        let t = p.pose.translation();
        s.push_str(&format!("{},{},{},{},{}\n", p.t, t.x, t.y, t.z, p.pose.euler().2));
    }
    s
}
