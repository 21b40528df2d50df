//! Planar vehicle position from acoustic beacon ranges and heading from the
//! receive array's bearings.

use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 100;
const GRADIENT_TOLERANCE: f64 = 1e-10;
/// Nudge applied when an iterate lands on a beacon, where the range gradient is undefined.
const SINGULAR_NUDGE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeaconSet {
    /// `(x, y)` per beacon, meters, world frame.
    pub beacons: Vec<[f64; 2]>,
}

impl BeaconSet {
    pub fn new(beacons: Vec<[f64; 2]>) -> Result<Self> {
        let b = Self { beacons };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beacons.len() < 2 {
            return Err(Error::config("beacons.positions needs at least two beacons"));
        }
        if self.beacons.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("beacons.positions must be finite"));
        }
        for i in 0..self.beacons.len() {
            for j in 0..i {
                if self.beacons[i] == self.beacons[j] {
                    return Err(Error::config(format!(
                        "beacons.positions: beacons {j} and {i} coincide"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.beacons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beacons.is_empty()
    }
}

/// Ranges and array bearings at one instant; `None` marks a missing value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeObservation {
    pub t: f64,
    pub ranges: Vec<Option<f64>>,
    #[serde(default)]
    pub bearings: Vec<Option<f64>>,
}

impl RangeObservation {
    pub fn validate(&self, beacons: &BeaconSet) -> Result<()> {
        if self.ranges.len() != beacons.len()
            || !(self.bearings.is_empty() || self.bearings.len() == beacons.len())
        {
            return Err(Error::invalid(format!(
                "range observation at t={} does not match {} beacons",
                self.t,
                beacons.len()
            )));
        }
        if self.ranges.iter().flatten().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::invalid(format!(
                "range observation at t={} has a non-positive range",
                self.t
            )));
        }
        if self.bearings.iter().flatten().any(|b| !b.is_finite()) {
            return Err(Error::invalid(format!(
                "range observation at t={} has a non-finite bearing",
                self.t
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trilateration {
    pub x: f64,
    pub y: f64,
    /// Euclidean norm of the range residuals at the solution.
    pub residual_norm: f64,
    pub iterations: usize,
}

fn residuals(p: &Vector2<f64>, used: &[(Vector2<f64>, f64)]) -> Vec<f64> {
    used.iter().map(|(b, r)| (p - b).norm() - r).collect()
}

/// Gauss-Newton least squares over the available ranges.
pub fn trilaterate(obs: &RangeObservation, beacons: &BeaconSet, initial_guess: [f64; 2]) -> Result<Trilateration> {
    obs.validate(beacons)?;
    if initial_guess.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("trilateration initial guess must be finite"));
    }
    let used: Vec<(Vector2<f64>, f64)> = beacons
        .beacons
        .iter()
        .zip(&obs.ranges)
        .filter_map(|(b, r)| r.map(|r| (Vector2::from(*b), r)))
        .collect();
    if used.len() < 2 {
        return Err(Error::invalid(format!(
            "trilateration at t={} needs at least two ranges",
            obs.t
        )));
    }
    let mut p = Vector2::from(initial_guess);
    let cost = |p: &Vector2<f64>| residuals(p, &used).iter().map(|r| r * r).sum::<f64>();
    for iter in 0..MAX_ITERATIONS {
        if used.iter().any(|(b, _)| (p - b).norm() < 1e-12) {
            p += Vector2::repeat(SINGULAR_NUDGE);
            continue;
        }
        let mut jtj = Matrix2::zeros();
        let mut g = Vector2::zeros();
        for (b, r) in &used {
            let d = p - b;
            let n = d.norm();
            let j = d / n;
            jtj += j * j.transpose();
            g += j * (n - r);
        }
        if g.norm() < GRADIENT_TOLERANCE {
            let res = residuals(&p, &used);
            return Ok(Trilateration {
                x: p.x,
                y: p.y,
                residual_norm: res.iter().map(|r| r * r).sum::<f64>().sqrt(),
                iterations: iter,
            });
        }
        // A whisper of damping keeps collinear geometry solvable.
        let damped = jtj + Matrix2::identity() * (1e-12 * jtj.trace());
        let Some(step) = damped.lu().solve(&(-g)) else {
            return Err(Error::OptimizationFailure("singular trilateration system".into()));
        };
        let c0 = cost(&p);
        let mut alpha = 1.0;
        let mut next = p + step;
        while cost(&next) > c0 && alpha > 1e-12 {
            alpha *= 0.5;
            next = p + step * alpha;
        }
        if next == p {
            // Step below floating-point resolution: the iterate is stationary.
            let res = residuals(&p, &used);
            return Ok(Trilateration {
                x: p.x,
                y: p.y,
                residual_norm: res.iter().map(|r| r * r).sum::<f64>().sqrt(),
                iterations: iter,
            });
        }
        p = next;
    }
    Err(Error::OptimizationFailure(format!(
        "trilateration at t={} did not converge in {MAX_ITERATIONS} iterations",
        obs.t
    )))
}

fn wrap_two_pi(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Vehicle heading from the bearing `phi` at which beacon `k` is heard.
pub fn heading_from_array(phi: f64, position: [f64; 2], beacon: [f64; 2], k: usize) -> Result<f64> {
    let (dx, dy) = (position[0] - beacon[0], position[1] - beacon[1]);
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::UndefinedHeading { beacon: k });
    }
    Ok(wrap_two_pi(phi - dy.atan2(dx) - FRAC_PI_2))
}

/// Array bearing that [`heading_from_array`] maps back to `heading`.
pub fn array_bearing(heading: f64, position: [f64; 2], beacon: [f64; 2]) -> f64 {
    let (dx, dy) = (position[0] - beacon[0], position[1] - beacon[1]);
    wrap_two_pi(heading + dy.atan2(dx) + FRAC_PI_2)
}

/// Mean direction of a set of angles, in `[0, 2pi)`.
pub fn circular_mean(angles: &[f64]) -> Option<f64> {
    if angles.is_empty() {
        return None;
    }
    let (s, c) = angles
        .iter()
        .fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    if s == 0.0 && c == 0.0 {
        return None;
    }
    Some(wrap_two_pi(s.atan2(c)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrackPoint {
    Fix {
        t: f64,
        x: f64,
        y: f64,
        /// Absent when no bearing was available.
        heading: Option<f64>,
        residual_norm: f64,
    },
    Gap { t: f64, reason: String },
}

impl TrackPoint {
    pub fn t(&self) -> f64 {
        match self {
            TrackPoint::Fix { t, .. } | TrackPoint::Gap { t, .. } => *t,
        }
    }
}

/// Solves each observation in turn, seeding with the previous solution.
pub fn solve_track(observations: &[RangeObservation], beacons: &BeaconSet, initial_guess: [f64; 2]) -> Result<Vec<TrackPoint>> {
    beacons.validate()?;
    if observations.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(Error::invalid("range observations must be time-sorted"));
    }
    let mut seed = initial_guess;
    let mut out = Vec::with_capacity(observations.len());
    for obs in observations {
        obs.validate(beacons)?;
        let n = obs.ranges.iter().flatten().count();
        if n < 2 {
            out.push(TrackPoint::Gap {
                t: obs.t,
                reason: format!("{n} range(s) available, two needed"),
            });
            continue;
        }
        let sol = trilaterate(obs, beacons, seed)?;
        let pos = [sol.x, sol.y];
        let mut headings = Vec::new();
        for (k, phi) in obs.bearings.iter().enumerate() {
            if let Some(phi) = phi {
                headings.push(heading_from_array(*phi, pos, beacons.beacons[k], k)?);
            }
        }
        out.push(TrackPoint::Fix {
            t: obs.t,
            x: sol.x,
            y: sol.y,
            heading: circular_mean(&headings),
            residual_norm: sol.residual_norm,
        });
        seed = pos;
    }
    Ok(out)
}
