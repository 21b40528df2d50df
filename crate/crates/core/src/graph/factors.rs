//! Factor kinds, whitened residuals and their analytic Jacobians.
//!
//! Every residual is `measured ⊖ predicted`, divided componentwise by the
//! noise standard deviation. Pose Jacobians are taken with respect to the
//! right perturbation `[rho, omega]` of [`Pose3::retract`].

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{Values, VariableId};
use crate::error::{Error, Result};
use crate::fusion::point_to_range;
use crate::geometry::{right_jacobian_inv, skew, wrap_angle, Pose3};

/// Camera-frame depth below which a landmark observation is inactive.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Prior,
    Odometry,
    PartialPose,
    AbsolutePose,
    LandmarkObs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Factor {
    /// Full pose prior; `sigma` is `[x, y, z, rx, ry, rz]` in the pose's local frame.
    Prior {
        pose: usize,
        measurement: Pose3,
        sigma: [f64; 6],
    },
    /// Relative pose `from^-1 * to` measured in the `from` body frame.
    Odometry {
        from: usize,
        to: usize,
        measurement: Pose3,
        sigma: [f64; 6],
    },
    /// Depth (world z), pitch and roll of one pose.
    PartialPose {
        pose: usize,
        depth: f64,
        pitch: f64,
        roll: f64,
        sigma: [f64; 3],
    },
    /// Planar position and heading of one pose.
    AbsolutePose {
        pose: usize,
        x: f64,
        y: f64,
        heading: f64,
        sigma: [f64; 3],
    },
    /// Bearing, elevation and sonar range of a landmark seen from a pose.
    LandmarkObs {
        pose: usize,
        landmark: usize,
        bearing: f64,
        elevation: f64,
        range: f64,
        sigma: [f64; 3],
        camera_from_body: Pose3,
        slant_correction: bool,
    },
}

/// Whitened residual and, optionally, one Jacobian per connected variable.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub residual: DVector<f64>,
    pub jacobians: Vec<DMatrix<f64>>,
    /// False when the factor is switched off at this linearization point.
    pub active: bool,
}

impl Factor {
    pub fn kind(&self) -> FactorKind {
        match self {
            Factor::Prior { .. } => FactorKind::Prior,
            Factor::Odometry { .. } => FactorKind::Odometry,
            Factor::PartialPose { .. } => FactorKind::PartialPose,
            Factor::AbsolutePose { .. } => FactorKind::AbsolutePose,
            Factor::LandmarkObs { .. } => FactorKind::LandmarkObs,
        }
    }

    pub fn variables(&self) -> Vec<VariableId> {
        match *self {
            Factor::Prior { pose, .. }
            | Factor::PartialPose { pose, .. }
            | Factor::AbsolutePose { pose, .. } => vec![VariableId::pose(pose)],
            Factor::Odometry { from, to, .. } => vec![VariableId::pose(from), VariableId::pose(to)],
            Factor::LandmarkObs { pose, landmark, .. } => {
                vec![VariableId::pose(pose), VariableId::landmark(landmark)]
            }
        }
    }

    pub fn sigma(&self) -> &[f64] {
        match self {
            Factor::Prior { sigma, .. } | Factor::Odometry { sigma, .. } => sigma,
            Factor::PartialPose { sigma, .. }
            | Factor::AbsolutePose { sigma, .. }
            | Factor::LandmarkObs { sigma, .. } => sigma,
        }
    }

    pub fn dim(&self) -> usize {
        self.sigma().len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma().iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid(format!(
                "{:?} factor noise must be positive and finite",
                self.kind()
            )));
        }
        let finite = match self {
            Factor::Prior { .. } | Factor::Odometry { .. } => true,
            Factor::PartialPose {
                depth, pitch, roll, ..
            } => [depth, pitch, roll].iter().all(|v| v.is_finite()),
            Factor::AbsolutePose { x, y, heading, .. } => {
                [x, y, heading].iter().all(|v| v.is_finite())
            }
            Factor::LandmarkObs {
                bearing,
                elevation,
                range,
                ..
            } => [bearing, elevation, range].iter().all(|v| v.is_finite()),
        };
        if !finite {
            return Err(Error::invalid(format!(
                "{:?} factor measurement must be finite",
                self.kind()
            )));
        }
        Ok(())
    }

    /// Whitened residual without Jacobians.
    pub fn residual(&self, values: &Values) -> Evaluation {
        self.evaluate_impl(values, false)
    }

    /// Whitened residual with Jacobians.
    pub fn linearize(&self, values: &Values) -> Evaluation {
        self.evaluate_impl(values, true)
    }

    fn evaluate_impl(&self, values: &Values, jac: bool) -> Evaluation {
        let mut ev = match self {
            Factor::Prior {
                pose, measurement, ..
            } => prior(&values.poses[*pose], measurement, jac),
            Factor::Odometry {
                from,
                to,
                measurement,
                ..
            } => odometry(&values.poses[*from], &values.poses[*to], measurement, jac),
            Factor::PartialPose {
                pose,
                depth,
                pitch,
                roll,
                ..
            } => partial(&values.poses[*pose], [*depth, *pitch, *roll], jac),
            Factor::AbsolutePose {
                pose,
                x,
                y,
                heading,
                ..
            } => absolute(&values.poses[*pose], [*x, *y, *heading], jac),
            Factor::LandmarkObs {
                pose,
                landmark,
                bearing,
                elevation,
                range,
                camera_from_body,
                slant_correction,
                ..
            } => landmark_obs(
                &values.poses[*pose],
                &values.landmarks[*landmark],
                camera_from_body,
                [*bearing, *elevation, *range],
                *slant_correction,
                jac,
            ),
        };
        let sigma = self.sigma();
        for (i, s) in sigma.iter().enumerate() {
            ev.residual[i] /= s;
            for j in ev.jacobians.iter_mut() {
                j.row_mut(i).scale_mut(1.0 / s);
            }
        }
        ev
    }
}

fn pose_error(e: &Pose3) -> DVector<f64> {
    DVector::from_column_slice(e.log().as_slice())
}

fn prior(x: &Pose3, m: &Pose3, jac: bool) -> Evaluation {
    let e = x.inverse().compose(m);
    let r = pose_error(&e);
    let mut jacobians = Vec::new();
    if jac {
        let phi = Vector3::new(r[3], r[4], r[5]);
        let mut j = DMatrix::zeros(6, 6);
        j.view_mut((0, 0), (3, 3)).copy_from(&(-Matrix3::identity()));
        j.view_mut((0, 3), (3, 3)).copy_from(&skew(e.translation()));
        j.view_mut((3, 3), (3, 3))
            .copy_from(&(-right_jacobian_inv(&phi) * e.rotation_matrix().transpose()));
        jacobians.push(j);
    }
    Evaluation {
        residual: r,
        jacobians,
        active: true,
    }
}

fn odometry(a: &Pose3, b: &Pose3, m: &Pose3, jac: bool) -> Evaluation {
    let e = b.inverse().compose(a).compose(m);
    let r = pose_error(&e);
    let mut jacobians = Vec::new();
    if jac {
        let phi = Vector3::new(r[3], r[4], r[5]);
        let jr_inv = right_jacobian_inv(&phi);
        let rb_t_ra = b.rotation_matrix().transpose() * a.rotation_matrix();
        let rm = m.rotation_matrix();
        let re = e.rotation_matrix();

        let mut ja = DMatrix::zeros(6, 6);
        ja.view_mut((0, 0), (3, 3)).copy_from(&rb_t_ra);
        ja.view_mut((0, 3), (3, 3))
            .copy_from(&(-rb_t_ra * skew(m.translation())));
        ja.view_mut((3, 3), (3, 3)).copy_from(&(jr_inv * rm.transpose()));

        let mut jb = DMatrix::zeros(6, 6);
        jb.view_mut((0, 0), (3, 3)).copy_from(&(-Matrix3::identity()));
        jb.view_mut((0, 3), (3, 3)).copy_from(&skew(e.translation()));
        jb.view_mut((3, 3), (3, 3)).copy_from(&(-jr_inv * re.transpose()));
        jacobians.push(ja);
        jacobians.push(jb);
    }
    Evaluation {
        residual: r,
        jacobians,
        active: true,
    }
}

/// Rows map body angular perturbations to `(roll, pitch, yaw)` rates.
fn euler_rate_matrix(roll: f64, pitch: f64) -> Matrix3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let tp = sp / cp;
    Matrix3::new(
        1.0,
        sr * tp,
        cr * tp,
        0.0,
        cr,
        -sr,
        0.0,
        sr / cp,
        cr / cp,
    )
}

fn partial(x: &Pose3, m: [f64; 3], jac: bool) -> Evaluation {
    let (roll, pitch, _) = x.euler();
    let r = DVector::from_column_slice(&[
        m[0] - x.translation().z,
        wrap_angle(m[1] - pitch),
        wrap_angle(m[2] - roll),
    ]);
    let mut jacobians = Vec::new();
    if jac {
        let rot = x.rotation_matrix();
        let e = euler_rate_matrix(roll, pitch);
        let mut j = DMatrix::zeros(3, 6);
        for c in 0..3 {
            j[(0, c)] = -rot[(2, c)];
            j[(1, 3 + c)] = -e[(1, c)];
            j[(2, 3 + c)] = -e[(0, c)];
        }
        jacobians.push(j);
    }
    Evaluation {
        residual: r,
        jacobians,
        active: true,
    }
}

fn absolute(x: &Pose3, m: [f64; 3], jac: bool) -> Evaluation {
    let (roll, pitch, yaw) = x.euler();
    let t = x.translation();
    let r = DVector::from_column_slice(&[m[0] - t.x, m[1] - t.y, wrap_angle(m[2] - yaw)]);
    let mut jacobians = Vec::new();
    if jac {
        let rot = x.rotation_matrix();
        let e = euler_rate_matrix(roll, pitch);
        let mut j = DMatrix::zeros(3, 6);
        for c in 0..3 {
            j[(0, c)] = -rot[(0, c)];
            j[(1, c)] = -rot[(1, c)];
            j[(2, 3 + c)] = -e[(2, c)];
        }
        jacobians.push(j);
    }
    Evaluation {
        residual: r,
        jacobians,
        active: true,
    }
}

/// Predicted `(bearing, elevation, range)` of a camera-frame point.
pub fn predict_observation(p: &Vector3<f64>, slant_correction: bool) -> [f64; 3] {
    [
        p.x.atan2(p.z),
        p.y.atan2(p.z),
        point_to_range(p, slant_correction),
    ]
}

fn landmark_obs(
    x: &Pose3,
    l: &Vector3<f64>,
    cam: &Pose3,
    m: [f64; 3],
    slant: bool,
    jac: bool,
) -> Evaluation {
    let p_b = x.inverse_transform_point(l);
    let p_c = cam.transform_point(&p_b);
    if p_c.z <= MIN_DEPTH {
        return Evaluation {
            residual: DVector::zeros(3),
            jacobians: if jac {
                vec![DMatrix::zeros(3, 6), DMatrix::zeros(3, 3)]
            } else {
                Vec::new()
            },
            active: false,
        };
    }
    let pred = predict_observation(&p_c, slant);
    let r = DVector::from_column_slice(&[
        wrap_angle(m[0] - pred[0]),
        wrap_angle(m[1] - pred[1]),
        m[2] - pred[2],
    ]);
    let mut jacobians = Vec::new();
    if jac {
        let (px, py, pz) = (p_c.x, p_c.y, p_c.z);
        let dxz = px * px + pz * pz;
        let dyz = py * py + pz * pz;
        let range_row = if slant {
            p_c.transpose() / p_c.norm()
        } else {
            Vector3::z().transpose()
        };
        // d(prediction) / d(p_c)
        let h = Matrix3::from_rows(&[
            Vector3::new(pz / dxz, 0.0, -px / dxz).transpose(),
            Vector3::new(0.0, pz / dyz, -py / dyz).transpose(),
            range_row,
        ]);
        let rc = cam.rotation_matrix();
        let rx_t = x.rotation_matrix().transpose();
        let mut jx = DMatrix::zeros(3, 6);
        jx.view_mut((0, 0), (3, 3)).copy_from(&(h * rc));
        jx.view_mut((0, 3), (3, 3)).copy_from(&(-h * rc * skew(&p_b)));
        let jl = -h * rc * rx_t;
        jacobians.push(jx);
        jacobians.push(DMatrix::from_column_slice(3, 3, jl.as_slice()));
    }
    Evaluation {
        residual: r,
        jacobians,
        active: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_so3, Extrinsics};
    use nalgebra::Vector6;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng, rot: f64) -> Pose3 {
        let t = Vector3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        );
        let w = Vector3::new(
            rng.random_range(-rot..rot),
            rng.random_range(-rot..rot),
            rng.random_range(-rot..rot),
        );
        Pose3::new(exp_so3(&w), t)
    }

    fn sig6(rng: &mut ChaCha8Rng) -> [f64; 6] {
        std::array::from_fn(|_| rng.random_range(0.05..2.0))
    }

    fn sig3(rng: &mut ChaCha8Rng) -> [f64; 3] {
        std::array::from_fn(|_| rng.random_range(0.05..2.0))
    }

    /// Central differences through `retract` for poses and plain addition for points.
    fn numeric_jacobians(f: &Factor, values: &Values) -> Vec<DMatrix<f64>> {
        let h = 1e-6;
        let m = f.dim();
        f.variables()
            .iter()
            .map(|v| {
                let n = v.dim();
                let mut j = DMatrix::zeros(m, n);
                for k in 0..n {
                    let mut plus = values.clone();
                    let mut minus = values.clone();
                    if v.is_pose() {
                        let mut d = Vector6::zeros();
                        d[k] = h;
                        plus.poses[v.index] = values.poses[v.index].retract(&d);
                        minus.poses[v.index] = values.poses[v.index].retract(&-d);
                    } else {
                        plus.landmarks[v.index][k] += h;
                        minus.landmarks[v.index][k] -= h;
                    }
                    let rp = f.residual(&plus).residual;
                    let rm = f.residual(&minus).residual;
                    for i in 0..m {
                        j[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
                    }
                }
                j
            })
            .collect()
    }

    /// Largest entrywise error relative to the Jacobian's own scale.
    fn relative_error(a: &DMatrix<f64>, n: &DMatrix<f64>) -> f64 {
        let scale = a.amax().max(n.amax()).max(1.0);
        (a - n).amax() / scale
    }

    fn random_factor(rng: &mut ChaCha8Rng, kind: FactorKind, values: &mut Values) -> Factor {
        values.poses = vec![random_pose(rng, 3.0), random_pose(rng, 3.0)];
        values.landmarks.clear();
        match kind {
            FactorKind::Prior => Factor::Prior {
                pose: 0,
                measurement: values.poses[0].retract(&Vector6::from_fn(|_, _| rng.random_range(-0.5..0.5))),
                sigma: sig6(rng),
            },
            FactorKind::Odometry => {
                let rel = values.poses[0].inverse().compose(&values.poses[1]);
                Factor::Odometry {
                    from: 0,
                    to: 1,
                    measurement: rel.retract(&Vector6::from_fn(|_, _| rng.random_range(-0.5..0.5))),
                    sigma: sig6(rng),
                }
            }
            FactorKind::PartialPose => {
                // Keep pitch away from the Euler singularity.
                let (r, p, y) = (
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-1.2..1.2),
                    rng.random_range(-3.0..3.0),
                );
                values.poses[0] = Pose3::from_euler(*values.poses[0].translation(), r, p, y);
                Factor::PartialPose {
                    pose: 0,
                    depth: rng.random_range(-3.0..3.0),
                    pitch: rng.random_range(-1.5..1.5),
                    roll: rng.random_range(-3.0..3.0),
                    sigma: sig3(rng),
                }
            }
            FactorKind::AbsolutePose => {
                let (r, p, y) = (
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-1.2..1.2),
                    rng.random_range(-3.0..3.0),
                );
                values.poses[0] = Pose3::from_euler(*values.poses[0].translation(), r, p, y);
                Factor::AbsolutePose {
                    pose: 0,
                    x: rng.random_range(-5.0..5.0),
                    y: rng.random_range(-5.0..5.0),
                    heading: rng.random_range(-3.0..3.0),
                    sigma: sig3(rng),
                }
            }
            FactorKind::LandmarkObs => {
                let cam = if rng.random_bool(0.5) {
                    Extrinsics::default().camera_from_body
                } else {
                    random_pose(rng, 1.0)
                };
                // Place the landmark in front of the camera.
                let p_c = Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(0.5..8.0),
                );
                let p_b = cam.inverse().transform_point(&p_c);
                values.landmarks.push(values.poses[0].transform_point(&p_b));
                Factor::LandmarkObs {
                    pose: 0,
                    landmark: 0,
                    bearing: rng.random_range(-1.0..1.0),
                    elevation: rng.random_range(-1.0..1.0),
                    range: rng.random_range(0.5..8.0),
                    sigma: sig3(rng),
                    camera_from_body: cam,
                    slant_correction: rng.random_bool(0.5),
                }
            }
        }
    }

    const KINDS: [FactorKind; 5] = [
        FactorKind::Prior,
        FactorKind::Odometry,
        FactorKind::PartialPose,
        FactorKind::AbsolutePose,
        FactorKind::LandmarkObs,
    ];

    #[test]
    fn analytic_jacobians_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for kind in KINDS {
            let mut worst: f64 = 0.0;
            for _ in 0..200 {
                let mut values = Values::default();
                let f = random_factor(&mut rng, kind, &mut values);
                let ev = f.linearize(&values);
                assert!(ev.active);
                for (a, n) in ev.jacobians.iter().zip(numeric_jacobians(&f, &values)) {
                    worst = worst.max(relative_error(a, &n));
                }
            }
            assert!(worst < 1e-5, "{kind:?}: relative error {worst}");
        }
    }

    #[test]
    fn zero_residual_at_consistent_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_pose(&mut rng, 1.0);
        let b = random_pose(&mut rng, 1.0);
        let (roll, pitch, yaw) = a.euler();
        let cam = Extrinsics::default().camera_from_body;
        let l = a.transform_point(&cam.inverse().transform_point(&Vector3::new(0.3, -0.2, 4.0)));
        let values = Values {
            poses: vec![a, b],
            landmarks: vec![l],
        };
        let p_c = cam.transform_point(&a.inverse_transform_point(&l));
        let obs = predict_observation(&p_c, false);
        let factors = [
            Factor::Prior { pose: 0, measurement: a, sigma: [1.0; 6] },
            Factor::Odometry { from: 0, to: 1, measurement: a.inverse().compose(&b), sigma: [0.1; 6] },
            Factor::PartialPose { pose: 0, depth: a.translation().z, pitch, roll, sigma: [0.1; 3] },
            Factor::AbsolutePose { pose: 0, x: a.translation().x, y: a.translation().y, heading: yaw, sigma: [0.1; 3] },
            Factor::LandmarkObs {
                pose: 0, landmark: 0, bearing: obs[0], elevation: obs[1], range: obs[2],
                sigma: [0.02, 0.02, 0.1], camera_from_body: cam, slant_correction: false,
            },
        ];
        for f in &factors {
            assert!(f.residual(&values).residual.norm() < 1e-9, "{:?}", f.kind());
        }
    }

    #[test]
    fn odometry_unit_translation() {
        let a = Pose3::identity();
        let b = Pose3::planar(1.0, 0.0, 0.0, 0.0);
        let f = Factor::Odometry { from: 0, to: 1, measurement: Pose3::identity(), sigma: [1.0; 6] };
        let values = Values { poses: vec![a, b], landmarks: vec![] };
        assert!((f.residual(&values).residual.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn prior_jacobian_is_negative_identity_at_measurement() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_pose(&mut rng, 2.0);
        let f = Factor::Prior { pose: 0, measurement: p, sigma: [1.0; 6] };
        let values = Values { poses: vec![p], landmarks: vec![] };
        let j = &f.linearize(&values).jacobians[0];
        assert!((j + DMatrix::<f64>::identity(6, 6)).amax() < 1e-12);
    }

    #[test]
    fn range_row_is_unit_in_camera_z() {
        // With identity pose and identity camera mounting, d(range)/d(l) is the z axis.
        let values = Values { poses: vec![Pose3::identity()], landmarks: vec![Vector3::new(0.4, 0.1, 3.0)] };
        let f = Factor::LandmarkObs {
            pose: 0, landmark: 0, bearing: 0.0, elevation: 0.0, range: 3.0,
            sigma: [1.0; 3], camera_from_body: Pose3::identity(), slant_correction: false,
        };
        let jl = &f.linearize(&values).jacobians[1];
        assert_eq!(jl.row(2).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, -1.0]);
    }

    #[test]
    fn landmark_behind_camera_is_inactive() {
        let values = Values { poses: vec![Pose3::identity()], landmarks: vec![Vector3::new(-2.0, 0.0, 0.0)] };
        let f = Factor::LandmarkObs {
            pose: 0, landmark: 0, bearing: 0.0, elevation: 0.0, range: 2.0,
            sigma: [1.0; 3], camera_from_body: Extrinsics::default().camera_from_body, slant_correction: false,
        };
        let ev = f.linearize(&values);
        assert!(!ev.active);
        assert_eq!(ev.residual.norm(), 0.0);
    }

    #[test]
    fn landmark_residual_matches_scalar_forward_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let x = random_pose(&mut rng, 3.0);
            let cam = random_pose(&mut rng, 1.0);
            let p_c = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.5..8.0));
            let l = x.transform_point(&cam.inverse().transform_point(&p_c));
            let (b, e, rg) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.5..8.0));
            let sig = [0.02, 0.03, 0.1];
            let f = Factor::LandmarkObs {
                pose: 0, landmark: 0, bearing: b, elevation: e, range: rg,
                sigma: sig, camera_from_body: cam, slant_correction: true,
            };
            let r = f.residual(&Values { poses: vec![x], landmarks: vec![l] }).residual;

            // Scalar re-derivation with explicit matrices.
            let rx = x.rotation_matrix();
            let d = l - x.translation();
            let mut pb = [0.0; 3];
            for i in 0..3 {
                pb[i] = rx[(0, i)] * d.x + rx[(1, i)] * d.y + rx[(2, i)] * d.z;
            }
            let rc = cam.rotation_matrix();
            let tc = cam.translation();
            let mut pc = [0.0; 3];
            for i in 0..3 {
                pc[i] = rc[(i, 0)] * pb[0] + rc[(i, 1)] * pb[1] + rc[(i, 2)] * pb[2] + tc[i];
            }
            let rng_pred = (pc[0] * pc[0] + pc[1] * pc[1] + pc[2] * pc[2]).sqrt();
            let expect = [
                wrap_angle(b - (pc[0] / pc[2]).atan()) / sig[0],
                wrap_angle(e - (pc[1] / pc[2]).atan()) / sig[1],
                (rg - rng_pred) / sig[2],
            ];
            for i in 0..3 {
                assert!((r[i] - expect[i]).abs() < 1e-10, "{} vs {}", r[i], expect[i]);
            }
        }
    }

    #[test]
    fn angular_residuals_are_wrapped() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        use std::f64::consts::PI;
        for _ in 0..500 {
            let x = Pose3::from_euler(
                Vector3::zeros(),
                rng.random_range(-PI..PI),
                rng.random_range(-1.5..1.5),
                rng.random_range(-PI..PI),
            );
            let values = Values { poses: vec![x], landmarks: vec![] };
            let a = Factor::AbsolutePose { pose: 0, x: 0.0, y: 0.0, heading: rng.random_range(-20.0..20.0), sigma: [1.0; 3] };
            let p = Factor::PartialPose { pose: 0, depth: 0.0, pitch: rng.random_range(-20.0..20.0), roll: rng.random_range(-20.0..20.0), sigma: [1.0; 3] };
            let ra = a.residual(&values).residual;
            let rp = p.residual(&values).residual;
            for v in [ra[2], rp[1], rp[2]] {
                assert!(v > -PI && v <= PI);
            }
        }
    }

    #[test]
    fn invalid_sigma_rejected() {
        let f = Factor::AbsolutePose { pose: 0, x: 0.0, y: 0.0, heading: 0.0, sigma: [1.0, 0.0, 1.0] };
        assert!(f.validate().is_err());
    }

    #[test]
    fn factor_json_roundtrip() {
        let f = Factor::Odometry { from: 2, to: 3, measurement: Pose3::planar(1.0, 2.0, 0.5, 0.3), sigma: [0.05, 0.05, 0.05, 0.02, 0.02, 0.02] };
        let s = serde_json::to_string(&f).unwrap();
        assert!(s.contains("\"kind\":\"odometry\""));
        let back: Factor = serde_json::from_str(&s).unwrap();
        assert_eq!(back.variables(), f.variables());
    }
}
