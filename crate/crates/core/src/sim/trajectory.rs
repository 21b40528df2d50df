//! Closed-loop survey trajectories sampled at constant speed.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySpec {
    /// Corners of the loop in the horizontal plane, meters.
    pub waypoints: Vec<[f64; 2]>,
    pub laps: usize,
    /// Meters per second.
    pub speed: f64,
    /// Samples per second.
    pub rate: f64,
    /// Fillet radius used to round each corner.
    pub corner_radius: f64,
    /// Constant vehicle depth.
    pub depth: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            waypoints: vec![[0.0, 0.0], [8.0, 0.0], [8.0, 5.0], [0.0, 5.0]],
            laps: 2,
            speed: 0.5,
            rate: 2.0,
            corner_radius: 1.0,
            depth: 1.0,
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(Error::config("sim.trajectory.waypoints needs at least two points"));
        }
        if self.waypoints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("sim.trajectory.waypoints must be finite"));
        }
        if self.laps == 0 {
            return Err(Error::config("sim.trajectory.laps must be at least 1"));
        }
        for (name, v) in [
            ("speed", self.speed),
            ("rate", self.rate),
            ("corner_radius", self.corner_radius),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("sim.trajectory.{name} must be positive")));
            }
        }
        if !self.depth.is_finite() {
            return Err(Error::config("sim.trajectory.depth must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
enum Segment {
    Line {
        a: Vector2<f64>,
        b: Vector2<f64>,
    },
    /// Arc about `center`, starting at polar angle `start` and sweeping
    /// `sweep` radians (positive turns toward increasing yaw).
    Arc {
        center: Vector2<f64>,
        radius: f64,
        start: f64,
        sweep: f64,
    },
}

impl Segment {
    fn length(&self) -> f64 {
        match *self {
            Segment::Line { a, b } => (b - a).norm(),
            Segment::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    /// Position and heading at arc length `s` from the segment start.
    fn at(&self, s: f64) -> (Vector2<f64>, f64) {
        match *self {
            Segment::Line { a, b } => {
                let d = b - a;
                let len = d.norm();
                (a + d * (s / len), d.y.atan2(d.x))
            }
            Segment::Arc {
                center,
                radius,
                start,
                sweep,
            } => {
                let ang = start + sweep.signum() * s / radius;
                let p = center + radius * Vector2::new(ang.cos(), ang.sin());
                (p, ang + sweep.signum() * FRAC_PI_2)
            }
        }
    }
}

/// One lap of the rounded loop, starting where the first straight leg begins.
fn build_loop(spec: &TrajectorySpec) -> Result<Vec<Segment>> {
    let w: Vec<Vector2<f64>> = spec.waypoints.iter().map(|p| Vector2::new(p[0], p[1])).collect();
    let n = w.len();
    let r = spec.corner_radius;
    for i in 0..n {
        if (w[(i + 1) % n] - w[i]).norm() < 1e-9 {
            return Err(Error::config(format!(
                "sim.trajectory.waypoints {i} and {} coincide",
                (i + 1) % n
            )));
        }
    }
    if n == 2 {
        // Stadium: straight legs offset by the radius, half circles at each end.
        let d = (w[1] - w[0]).normalize();
        let left = Vector2::new(d.y, -d.x);
        let start = left.y.atan2(left.x);
        return Ok(vec![
            Segment::Line {
                a: w[0] + left * r,
                b: w[1] + left * r,
            },
            Segment::Arc {
                center: w[1],
                radius: r,
                start,
                sweep: PI,
            },
            Segment::Line {
                a: w[1] - left * r,
                b: w[0] - left * r,
            },
            Segment::Arc {
                center: w[0],
                radius: r,
                start: start + PI,
                sweep: PI,
            },
        ]);
    }
    // Fillet at every corner: tangent length, signed turn, entry/exit points.
    let mut fillets = Vec::with_capacity(n);
    for i in 0..n {
        let d_in = (w[i] - w[(i + n - 1) % n]).normalize();
        let d_out = (w[(i + 1) % n] - w[i]).normalize();
        let turn = (d_in.x * d_out.y - d_in.y * d_out.x).atan2(d_in.dot(&d_out));
        if (turn.abs() - PI).abs() < 1e-9 {
            return Err(Error::config(format!(
                "sim.trajectory.waypoints reverse direction at point {i}"
            )));
        }
        let tangent = r * (0.5 * turn.abs()).tan();
        fillets.push((turn, tangent, d_in, d_out));
    }
    let mut segs = Vec::new();
    for i in 0..n {
        let j = (i + 1) % n;
        let (_, t_i, _, d) = fillets[i];
        let (turn_j, t_j, d_in_j, d_out_j) = fillets[j];
        let leg = (w[j] - w[i]).norm();
        if t_i + t_j > leg + 1e-12 {
            return Err(Error::config(format!(
                "sim.trajectory.corner_radius too large for the leg from waypoint {i} to {j}"
            )));
        }
        let a = w[i] + d * t_i;
        let b = w[j] - d * t_j;
        if (b - a).norm() > 0.0 {
            segs.push(Segment::Line { a, b });
        }
        if turn_j.abs() > 1e-12 {
            let side = turn_j.signum();
            let normal = side * Vector2::new(-d_in_j.y, d_in_j.x);
            let center = b + normal * r;
            let from = b - center;
            segs.push(Segment::Arc {
                center,
                radius: r,
                start: from.y.atan2(from.x),
                sweep: turn_j,
            });
            debug_assert!(((w[j] + d_out_j * t_j) - center).norm() - r < 1e-9);
        }
    }
    Ok(segs)
}

/// Timestamped ground-truth poses.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub poses: Vec<Pose3>,
    /// Samples in each lap, endpoints included.
    pub samples_per_lap: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Samples the loop at equal arc-length steps close to `speed / rate`.
///
/// Each lap holds both endpoints, so consecutive laps share a position and the
/// step between them is a zero-motion sample. Times advance by `1 / rate`.
pub fn generate_trajectory(spec: &TrajectorySpec) -> Result<Trajectory> {
    spec.validate()?;
    let segs = build_loop(spec)?;
    let lengths: Vec<f64> = segs.iter().map(Segment::length).collect();
    let total: f64 = lengths.iter().sum();
    let steps = ((total * spec.rate / spec.speed).round() as usize).max(1);
    let ds = total / steps as f64;
    let mut lap = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let (p, heading) = if k == steps {
            segs[0].at(0.0)
        } else {
            let mut s = k as f64 * ds;
            let mut idx = 0;
            while idx + 1 < segs.len() && s >= lengths[idx] {
                s -= lengths[idx];
                idx += 1;
            }
            segs[idx].at(s.min(lengths[idx]))
        };
        lap.push(Pose3::planar(p.x, p.y, spec.depth, heading));
    }
    let per_lap = lap.len();
    let poses: Vec<Pose3> = (0..spec.laps).flat_map(|_| lap.iter().copied()).collect();
    let times = (0..poses.len()).map(|j| j as f64 / spec.rate).collect();
    Ok(Trajectory {
        times,
        poses,
        samples_per_lap: per_lap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::wrap_angle;

    fn square() -> TrajectorySpec {
        TrajectorySpec {
            waypoints: vec![[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]],
            laps: 1,
            ..TrajectorySpec::default()
        }
    }

    #[test]
    fn lap_closes_exactly() {
        let t = generate_trajectory(&square()).unwrap();
        let (a, b) = (t.poses[0], *t.poses.last().unwrap());
        assert!((a.translation() - b.translation()).norm() < 1e-9);
        assert!(wrap_angle(a.euler().2 - b.euler().2).abs() < 1e-9);
    }

    #[test]
    fn laps_repeat_sample_count() {
        let one = generate_trajectory(&square()).unwrap();
        let two = generate_trajectory(&TrajectorySpec { laps: 2, ..square() }).unwrap();
        assert_eq!(two.len(), 2 * one.len());
        assert_eq!(two.samples_per_lap, one.len());
    }

    #[test]
    fn samples_are_equidistant_in_arc_length() {
        // Chord lengths bound the arc length from below and agree with it to
        // second order in the step, so equal chords mean equal arc steps.
        let t = generate_trajectory(&square()).unwrap();
        let chords: Vec<f64> = t.poses[..t.samples_per_lap]
            .windows(2)
            .map(|w| (w[1].translation() - w[0].translation()).norm())
            .collect();
        let mean = chords.iter().sum::<f64>() / chords.len() as f64;
        assert!(chords.iter().all(|c| (c / mean - 1.0).abs() < 0.01));
    }

    #[test]
    fn heading_follows_tangent() {
        let t = generate_trajectory(&TrajectorySpec::default()).unwrap();
        for w in t.poses.windows(2) {
            let d = w[1].translation() - w[0].translation();
            if d.norm() < 1e-9 {
                continue;
            }
            // The chord direction lies between the headings at its ends.
            let chord = d.y.atan2(d.x);
            let (h0, h1) = (w[0].euler().2, w[1].euler().2);
            let turn = wrap_angle(h1 - h0).abs();
            assert!(wrap_angle(chord - h0).abs() <= turn + 1e-9, "{chord} vs {h0}");
            assert!(wrap_angle(chord - h1).abs() <= turn + 1e-9, "{chord} vs {h1}");
        }
    }

    #[test]
    fn two_point_stadium() {
        let spec = TrajectorySpec {
            waypoints: vec![[0.0, 0.0], [6.0, 0.0]],
            laps: 1,
            ..TrajectorySpec::default()
        };
        let t = generate_trajectory(&spec).unwrap();
        let a = t.poses[0].translation();
        assert!((a - t.poses.last().unwrap().translation()).norm() < 1e-9);
        for p in &t.poses {
            let q = p.translation();
            // Every sample lies at distance r from the segment.
            let x = q.x.clamp(0.0, 6.0);
            assert!(((q.xy() - Vector2::new(x, 0.0)).norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_waypoints_rejected() {
        let bad = |w: Vec<[f64; 2]>| TrajectorySpec {
            waypoints: w,
            ..TrajectorySpec::default()
        };
        assert!(generate_trajectory(&bad(vec![[0.0, 0.0]])).is_err());
        assert!(generate_trajectory(&bad(vec![[0.0, 0.0], [0.0, 0.0]])).is_err());
        assert!(generate_trajectory(&bad(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]])).is_err());
        assert!(generate_trajectory(&bad(vec![[0.0, 0.0], [3.0, 0.0], [6.0, 0.0]])).is_err());
        assert!(generate_trajectory(&bad(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])).is_err());
    }
}
