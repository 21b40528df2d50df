//! Observation-to-landmark data association: cosine gate on embeddings,
//! chi-square gate on geometry, maximum-likelihood choice.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::embedding::{cosine_similarity, Embedding};
use crate::error::{Error, Result};

/// A semantic landmark in the map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: usize,
    pub position: Vector3<f64>,
    pub embedding: Embedding,
    pub observation_count: usize,
    /// Ground-truth class when known. Never read by association.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_label: Option<u32>,
    /// `(t, detection index)` of every observation merged into the landmark.
    #[serde(default)]
    pub observations: Vec<ObservationRef>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationRef {
    pub t: f64,
    pub detection: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Chi-square test on the Mahalanobis distance.
    Mahalanobis,
    /// Plain Euclidean nearest neighbour within `radius`.
    Radius,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssociationConfig {
    /// Minimum cosine similarity; `-1` disables the semantic gate.
    pub cosine_threshold: f64,
    pub gate: GateMode,
    /// Chi-square confidence level.
    pub confidence: f64,
    /// Chi-square degrees of freedom.
    pub dof: u32,
    /// Radius of the Euclidean gate, meters.
    pub radius: f64,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self {
            cosine_threshold: 0.8,
            gate: GateMode::Mahalanobis,
            confidence: 0.95,
            dof: 6,
            radius: 1.0,
        }
    }
}

impl AssociationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.cosine_threshold) {
            return Err(Error::config("association.cosine_threshold must lie in [-1, 1]"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::config("association.confidence must lie in (0, 1)"));
        }
        if self.dof == 0 {
            return Err(Error::config("association.dof must be at least 1"));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::config("association.radius must be positive"));
        }
        Ok(())
    }
}

pub fn chi_square_cdf(x: f64, dof: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma_lr(0.5 * dof as f64, 0.5 * x)
}

/// Inverse chi-square CDF by bisection.
pub fn chi_square_quantile(p: f64, dof: u32) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) || dof == 0 {
        return Err(Error::invalid("chi-square quantile needs p in (0, 1) and dof >= 1"));
    }
    let mut hi = dof as f64;
    while chi_square_cdf(hi, dof) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if chi_square_cdf(mid, dof) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Landmarks whose embedding has cosine similarity at least `threshold` with `obs`.
pub fn cosine_gate(obs: &Embedding, landmarks: &[Landmark], threshold: f64) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for l in landmarks {
        let c = cosine_similarity(obs, &l.embedding)?;
        if c >= threshold {
            out.push((l.id, c));
        }
    }
    Ok(out)
}

/// Squared Mahalanobis distance of `obs_world - landmark` under `sigma`, and
/// whether it is below `threshold`.
pub fn mahalanobis_gate(
    obs_world: &Vector3<f64>,
    landmark: &Vector3<f64>,
    sigma: &Matrix3<f64>,
    threshold: f64,
) -> Result<(bool, f64)> {
    let asym = (sigma - sigma.transpose()).amax();
    if !sigma.iter().all(|v| v.is_finite()) || asym > 1e-9 * sigma.amax().max(1.0) {
        return Err(Error::Gating("covariance is not symmetric and finite".into()));
    }
    let Some(chol) = sigma.cholesky() else {
        return Err(Error::Gating("covariance is not positive definite".into()));
    };
    let d = obs_world - landmark;
    let d2 = d.dot(&chol.solve(&d));
    Ok((d2 < threshold, d2))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub landmark: usize,
    pub cosine: f64,
    /// Gate distance: Mahalanobis `d^2`, or squared Euclidean distance in radius
    /// mode. Absent when the gate could not be evaluated.
    pub d2: Option<f64>,
    pub passed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Matched { landmark: usize },
    NewLandmark,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssociationDecision {
    #[serde(flatten)]
    pub outcome: Outcome,
    pub candidate_scores: Vec<CandidateScore>,
}

/// Orders passing candidates: smaller `d^2`, then higher cosine, then lower id.
fn preference(a: &CandidateScore, b: &CandidateScore) -> std::cmp::Ordering {
    let da = a.d2.unwrap_or(f64::INFINITY);
    let db = b.d2.unwrap_or(f64::INFINITY);
    da.total_cmp(&db)
        .then(b.cosine.total_cmp(&a.cosine))
        .then(a.landmark.cmp(&b.landmark))
}

/// Maximum-likelihood hypothesis among candidates that passed both gates.
pub fn select_hypothesis(candidates: &[CandidateScore]) -> AssociationDecision {
    let best = candidates
        .iter()
        .filter(|c| c.passed)
        .min_by(|a, b| preference(a, b));
    AssociationDecision {
        outcome: match best {
            Some(c) => Outcome::Matched {
                landmark: c.landmark,
            },
            None => Outcome::NewLandmark,
        },
        candidate_scores: candidates.to_vec(),
    }
}

/// Decisions for all detections of one frame, each landmark matched at most
/// once. Pairs are taken greedily in order of ascending `d^2`.
pub fn associate_frame(scores: Vec<Vec<CandidateScore>>) -> Vec<AssociationDecision> {
    let mut pairs: Vec<(usize, CandidateScore)> = scores
        .iter()
        .enumerate()
        .flat_map(|(det, cs)| cs.iter().filter(|c| c.passed).map(move |c| (det, *c)))
        .collect();
    pairs.sort_by(|(da, a), (db, b)| preference(a, b).then(da.cmp(db)));
    let mut assigned: Vec<Option<usize>> = vec![None; scores.len()];
    let mut taken = std::collections::BTreeSet::new();
    for (det, c) in pairs {
        if assigned[det].is_none() && !taken.contains(&c.landmark) {
            assigned[det] = Some(c.landmark);
            taken.insert(c.landmark);
        }
    }
    scores
        .into_iter()
        .zip(assigned)
        .map(|(candidate_scores, a)| AssociationDecision {
            outcome: match a {
                Some(landmark) => Outcome::Matched { landmark },
                None => Outcome::NewLandmark,
            },
            candidate_scores,
        })
        .collect()
}

/// Association settings with the chi-square threshold precomputed.
#[derive(Clone, Copy, Debug)]
pub struct Associator {
    pub config: AssociationConfig,
    threshold: f64,
}

impl Associator {
    pub fn new(config: AssociationConfig) -> Result<Self> {
        config.validate()?;
        let threshold = match config.gate {
            GateMode::Mahalanobis => chi_square_quantile(config.confidence, config.dof)?,
            GateMode::Radius => config.radius * config.radius,
        };
        Ok(Self { config, threshold })
    }

    /// Value `d^2` must stay below to pass the geometric gate.
    pub fn gate_threshold(&self) -> f64 {
        self.threshold
    }

    /// Scores one observation against every landmark that passes the cosine gate.
    ///
    /// `gate_covariance(landmark_id)` supplies the innovation covariance used
    /// by the Mahalanobis gate; it is not called in radius mode.
    pub fn score<F>(
        &self,
        embedding: &Embedding,
        obs_world: &Vector3<f64>,
        landmarks: &[Landmark],
        mut gate_covariance: F,
    ) -> Result<Vec<CandidateScore>>
    where
        F: FnMut(usize) -> Result<Matrix3<f64>>,
    {
        let by_cos = cosine_gate(embedding, landmarks, self.config.cosine_threshold)?;
        let mut out = Vec::with_capacity(by_cos.len());
        for (id, cosine) in by_cos {
            let l = landmarks
                .iter()
                .find(|l| l.id == id)
                .expect("gated id comes from the landmark list");
            let gate = match self.config.gate {
                GateMode::Radius => {
                    let d2 = (obs_world - l.position).norm_squared();
                    Ok((d2 < self.threshold, d2))
                }
                GateMode::Mahalanobis => gate_covariance(id).and_then(|s| {
                    mahalanobis_gate(obs_world, &l.position, &s, self.threshold)
                }),
            };
            let (passed, d2) = match gate {
                Ok((p, d2)) => (p, Some(d2)),
                Err(Error::Gating(_)) | Err(Error::CovarianceUnavailable(_)) => (false, None),
                Err(e) => return Err(e),
            };
            out.push(CandidateScore {
                landmark: id,
                cosine,
                d2,
                passed,
            });
        }
        Ok(out)
    }
}
