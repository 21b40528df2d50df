//! Frames, rigid-body poses and sensor intrinsics.
//!
//! Frame conventions used throughout the crate:
//!
//! * world: north-east-down (x north, y east, z down, so `z` is depth);
//! * body: forward-right-down (x forward, y starboard, z down);
//! * camera / sonar: optical (x right, y down, z forward).
//!
//! Poses are stored as `world <- body` transforms. Local (tangent) coordinates
//! of a pose are `[rho, omega]` with the right perturbation
//! `T ⊞ [rho, omega] = (R * Exp(omega), t + R * rho)`.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rotation angle below which series expansions are used.
const SMALL_ANGLE: f64 = 1e-8;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

/// Skew-symmetric matrix such that `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// SO(3) exponential map of a rotation vector.
pub fn exp_so3(omega: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta = omega.norm();
    if theta < SMALL_ANGLE {
        let half = omega * 0.5;
        return UnitQuaternion::new_normalize(Quaternion::new(1.0, half.x, half.y, half.z));
    }
    UnitQuaternion::from_scaled_axis(*omega)
}

/// SO(3) logarithm, returning a rotation vector with angle in `[0, pi]`.
pub fn log_so3(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let (w, v) = if q.w < 0.0 {
        (-q.w, -q.imag())
    } else {
        (q.w, q.imag())
    };
    let s = v.norm();
    if s < SMALL_ANGLE {
        // 2 * atan(s / w) / s ≈ 2 / w for tiny s.
        return v * (2.0 / w);
    }
    let theta = 2.0 * s.atan2(w);
    v * (theta / s)
}

/// Inverse of the SO(3) right Jacobian evaluated at `phi`.
pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-5 {
        return Matrix3::identity() + 0.5 * k + (1.0 / 12.0) * k * k;
    }
    let coeff = 1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + 0.5 * k + coeff * k * k
}

/// Rigid transform in 3D: unit quaternion rotation plus translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose3 {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose3 {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a pose from a translation and Z-Y-X Euler angles.
    pub fn from_euler(translation: Vector3<f64>, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::new(
            UnitQuaternion::from_euler_angles(roll, pitch, yaw),
            translation,
        )
    }

    /// Planar pose: position `(x, y, z)` with heading `yaw` about the down axis.
    pub fn planar(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self::from_euler(Vector3::new(x, y, z), 0.0, 0.0, yaw)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `(roll, pitch, yaw)` of the Z-Y-X decomposition.
    pub fn euler(&self) -> (f64, f64, f64) {
        self.rotation.euler_angles()
    }

    pub fn compose(&self, other: &Pose3) -> Pose3 {
        let q = self.rotation.quaternion() * other.rotation.quaternion();
        Pose3 {
            rotation: UnitQuaternion::new_normalize(q),
            translation: self.translation + self.rotation * other.translation,
        }
    }

    pub fn inverse(&self) -> Pose3 {
        let inv = self.rotation.inverse();
        Pose3 {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Applies `T^-1` to a point without materializing the inverse.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse_transform_vector(&(p - self.translation))
    }

    /// Right perturbation `T ⊞ delta`.
    pub fn retract(&self, delta: &Vector6<f64>) -> Pose3 {
        let rho = delta.fixed_rows::<3>(0).into_owned();
        let omega = delta.fixed_rows::<3>(3).into_owned();
        let q = self.rotation.quaternion() * exp_so3(&omega).quaternion();
        Pose3 {
            rotation: UnitQuaternion::new_normalize(q),
            translation: self.translation + self.rotation * rho,
        }
    }

    /// Inverse of [`Pose3::retract`]: the delta with `self ⊞ delta == other`.
    pub fn local(&self, other: &Pose3) -> Vector6<f64> {
        let rho = self
            .rotation
            .inverse_transform_vector(&(other.translation - self.translation));
        let omega = log_so3(&(self.rotation.inverse() * other.rotation));
        Vector6::new(rho.x, rho.y, rho.z, omega.x, omega.y, omega.z)
    }

    /// Tangent coordinates `[t, Log(R)]` of this pose relative to identity.
    pub fn log(&self) -> Vector6<f64> {
        let w = log_so3(&self.rotation);
        Vector6::new(
            self.translation.x,
            self.translation.y,
            self.translation.z,
            w.x,
            w.y,
            w.z,
        )
    }

    /// Rotation angle of this pose, in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        log_so3(&self.rotation).norm()
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    translation: [f64; 3],
    /// `[w, x, y, z]`
    rotation: [f64; 4],
}

impl Serialize for Pose3 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let q = self.rotation.quaternion();
        PoseRepr {
            translation: [self.translation.x, self.translation.y, self.translation.z],
            rotation: [q.w, q.i, q.j, q.k],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose3 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = PoseRepr::deserialize(d)?;
        let [w, x, y, z] = r.rotation;
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(serde::de::Error::custom("pose rotation must be a non-zero quaternion"));
        }
        if r.translation.iter().any(|v| !v.is_finite()) {
            return Err(serde::de::Error::custom("pose translation must be finite"));
        }
        Ok(Pose3::new(
            UnitQuaternion::new_normalize(q),
            Vector3::from(r.translation),
        ))
    }
}

/// Pixel coordinates `(u, v)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// Ideal pinhole intrinsics (rectified images, no distortion).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for CameraIntrinsics {
    /// 640x512 camera with an 80° x 64° field of view.
    fn default() -> Self {
        let (width, height) = (640.0, 512.0);
        let hfov = 80f64.to_radians();
        let vfov = 64f64.to_radians();
        Self {
            fx: (width / 2.0) / (hfov / 2.0).tan(),
            fy: (height / 2.0) / (vfov / 2.0).tan(),
            cx: width / 2.0,
            cy: height / 2.0,
            width,
            height,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.fx, self.fy, self.cx, self.cy, self.width, self.height];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("camera intrinsics must be finite"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invalid("camera focal lengths must be positive"));
        }
        if !(self.cx > 0.0 && self.cx < self.width) || !(self.cy > 0.0 && self.cy < self.height) {
            return Err(Error::invalid("principal point must lie strictly inside the image"));
        }
        Ok(())
    }

    pub fn contains(&self, px: &Pixel) -> bool {
        px.u >= 0.0 && px.u <= self.width && px.v >= 0.0 && px.v <= self.height
    }

    fn check_bounds(&self, px: &Pixel) -> Result<()> {
        if !px.u.is_finite() || !px.v.is_finite() || !self.contains(px) {
            return Err(Error::invalid(format!(
                "pixel ({}, {}) outside {}x{} image",
                px.u, px.v, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Horizontal angle of the ray through `px`, positive to the right.
    pub fn pixel_to_bearing(&self, px: &Pixel) -> Result<f64> {
        self.check_bounds(px)?;
        Ok(((px.u - self.cx) / self.fx).atan())
    }

    /// Vertical angle of the ray through `px`, positive downward.
    pub fn pixel_to_elevation(&self, px: &Pixel) -> Result<f64> {
        self.check_bounds(px)?;
        Ok(((px.v - self.cy) / self.fy).atan())
    }

    /// Pinhole projection of a camera-frame point. `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Pixel> {
        if p.z <= 0.0 {
            return None;
        }
        Some(Pixel::new(
            self.cx + self.fx * p.x / p.z,
            self.cy + self.fy * p.y / p.z,
        ))
    }
}

/// Multibeam imaging sonar geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SonarConfig {
    /// Horizontal aperture, radians.
    pub horizontal_fov: f64,
    pub num_beams: usize,
    /// Meters per range bin.
    pub range_resolution: f64,
    pub num_bins: u64,
    /// Vertical aperture, radians. Elevation inside it is unresolved by the sonar.
    pub vertical_aperture: f64,
    /// Minimum peak intensity accepted as a return, in `[0, 1]`.
    pub intensity_threshold: f64,
}

impl Default for SonarConfig {
    fn default() -> Self {
        Self {
            horizontal_fov: 60f64.to_radians(),
            num_beams: 64,
            range_resolution: 0.02,
            num_bins: 400,
            vertical_aperture: 12f64.to_radians(),
            intensity_threshold: 0.5,
        }
    }
}

impl SonarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_beams < 2 {
            return Err(Error::invalid("sonar needs at least two beams"));
        }
        if !(self.horizontal_fov.is_finite() && self.horizontal_fov > 0.0) {
            return Err(Error::invalid("sonar horizontal_fov must be positive"));
        }
        if !(self.range_resolution.is_finite() && self.range_resolution > 0.0) || self.num_bins == 0
        {
            return Err(Error::invalid("sonar max range must be positive"));
        }
        if !(self.vertical_aperture.is_finite() && self.vertical_aperture >= 0.0) {
            return Err(Error::invalid("sonar vertical_aperture must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.intensity_threshold) {
            return Err(Error::invalid("sonar intensity_threshold must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Angular width of one beam.
    pub fn angular_resolution(&self) -> f64 {
        self.horizontal_fov / self.num_beams as f64
    }

    pub fn max_range(&self) -> f64 {
        self.num_bins as f64 * self.range_resolution
    }

    /// Center bearing of beam `i`, beams evenly tiling the aperture left to right.
    pub fn beam_bearing(&self, i: usize) -> f64 {
        -0.5 * self.horizontal_fov + (i as f64 + 0.5) * self.angular_resolution()
    }

    pub fn beam_bearings(&self) -> Vec<f64> {
        (0..self.num_beams).map(|i| self.beam_bearing(i)).collect()
    }
}

/// Rotation taking forward-right-down body axes to optical axes.
pub fn optical_from_body_rotation() -> UnitQuaternion<f64> {
    // Rows (0 1 0; 0 0 1; 1 0 0): a -120 degree turn about (1, 1, 1).
    UnitQuaternion::new_unchecked(Quaternion::new(0.5, -0.5, -0.5, -0.5))
}

/// Sensor mounting relative to the vehicle body.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Extrinsics {
    /// Maps body-frame points into the camera frame.
    pub camera_from_body: Pose3,
    /// Maps body-frame points into the sonar frame.
    pub sonar_from_body: Pose3,
}

impl Default for Extrinsics {
    /// Co-located sensors looking along the body x axis.
    fn default() -> Self {
        let optical = Pose3::new(optical_from_body_rotation(), Vector3::zeros());
        Self {
            camera_from_body: optical,
            sonar_from_body: optical,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(200.0, 210.0, 320.0, 250.0, 640.0, 512.0).unwrap()
    }

    fn arb_pose() -> impl Strategy<Value = Pose3> {
        (
            prop::array::uniform3(-10.0..10.0f64),
            prop::array::uniform3(-3.0..3.0f64),
        )
            .prop_map(|(t, w)| Pose3::new(exp_so3(&Vector3::from(w)), Vector3::from(t)))
    }

    #[test]
    fn bearing_examples() {
        let c = cam();
        assert_eq!(c.pixel_to_bearing(&Pixel::new(c.cx, 17.0)).unwrap(), 0.0);
        assert_relative_eq!(
            c.pixel_to_bearing(&Pixel::new(c.cx + c.fx, c.cy)).unwrap(),
            FRAC_PI_4,
            epsilon = 1e-15
        );
        let u = c.cx - c.fx * 0.2f64.tan();
        assert_relative_eq!(
            c.pixel_to_bearing(&Pixel::new(u, c.cy)).unwrap(),
            -0.2,
            epsilon = 1e-14
        );
    }

    #[test]
    fn elevation_examples() {
        let c = cam();
        assert_eq!(c.pixel_to_elevation(&Pixel::new(3.0, c.cy)).unwrap(), 0.0);
        assert_relative_eq!(
            c.pixel_to_elevation(&Pixel::new(c.cx, c.cy + c.fy)).unwrap(),
            FRAC_PI_4,
            epsilon = 1e-15
        );
    }

    #[test]
    fn out_of_bounds_pixels_are_rejected() {
        let c = cam();
        assert!(c.pixel_to_bearing(&Pixel::new(-1.0, 10.0)).is_err());
        assert!(c.pixel_to_elevation(&Pixel::new(10.0, 600.0)).is_err());
        assert!(c.pixel_to_bearing(&Pixel::new(f64::NAN, 10.0)).is_err());
    }

    #[test]
    fn invalid_intrinsics() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 2.0, 2.0).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 2.0, 1.0, 2.0, 2.0).is_err());
        assert!(CameraIntrinsics::default().validate().is_ok());
    }

    #[test]
    fn default_camera_fov() {
        let c = CameraIntrinsics::default();
        let left = c.pixel_to_bearing(&Pixel::new(0.0, c.cy)).unwrap();
        let top = c.pixel_to_elevation(&Pixel::new(c.cx, 0.0)).unwrap();
        assert_relative_eq!(left, -40f64.to_radians(), epsilon = 1e-12);
        assert_relative_eq!(top, -32f64.to_radians(), epsilon = 1e-12);
    }

    #[test]
    fn sonar_beams_tile_aperture() {
        let s = SonarConfig::default();
        let b = s.beam_bearings();
        assert_eq!(b.len(), s.num_beams);
        assert!(b.windows(2).all(|w| w[1] > w[0]));
        assert_relative_eq!(b[0] - s.angular_resolution() / 2.0, -s.horizontal_fov / 2.0);
        assert!(SonarConfig { num_beams: 1, ..s }.validate().is_err());
    }

    #[test]
    fn identity_laws() {
        let p = Pose3::from_euler(Vector3::new(1.0, -2.0, 0.5), 0.1, -0.3, 2.0);
        let x = Vector3::new(0.3, 0.4, -7.0);
        assert_eq!(Pose3::identity().compose(&p).translation(), p.translation());
        assert_relative_eq!(
            Pose3::identity().compose(&p).rotation().angle_to(p.rotation()),
            0.0,
            epsilon = 1e-15
        );
        assert_eq!(Pose3::identity().transform_point(&x), x);
    }

    #[test]
    fn optical_axes() {
        let e = Extrinsics::default();
        // Body forward is camera z, body starboard is camera x, body down is camera y.
        let f = e.camera_from_body.transform_point(&Vector3::new(1.0, 0.0, 0.0));
        let r = e.camera_from_body.transform_point(&Vector3::new(0.0, 1.0, 0.0));
        let d = e.camera_from_body.transform_point(&Vector3::new(0.0, 0.0, 1.0));
        assert_relative_eq!(f, Vector3::z(), epsilon = 1e-15);
        assert_relative_eq!(r, Vector3::x(), epsilon = 1e-15);
        assert_relative_eq!(d, Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI + 0.1), -PI + 0.1, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(0.2), 0.2);
    }

    #[test]
    fn log_exp_roundtrip_near_pi() {
        let w = Vector3::new(0.0, 0.0, PI - 1e-9);
        assert_relative_eq!(log_so3(&exp_so3(&w)), w, epsilon = 1e-9);
        let tiny = Vector3::new(1e-12, -2e-12, 3e-12);
        assert_relative_eq!(log_so3(&exp_so3(&tiny)), tiny, epsilon = 1e-24);
    }

    proptest! {
        #[test]
        fn compose_with_inverse_is_identity(p in arb_pose()) {
            let e = p.compose(&p.inverse());
            prop_assert!(e.rotation_angle() < 1e-9);
            prop_assert!(e.translation().norm() < 1e-9);
            prop_assert!((e.rotation().quaternion().norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn compose_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!(l.rotation().angle_to(r.rotation()) < 1e-9);
            prop_assert!((l.translation() - r.translation()).norm() < 1e-9);
        }

        #[test]
        fn double_inverse(p in arb_pose()) {
            let q = p.inverse().inverse();
            prop_assert!(q.rotation().angle_to(p.rotation()) < 1e-9);
            prop_assert!((q.translation() - p.translation()).norm() < 1e-9);
        }

        #[test]
        fn transform_roundtrip(p in arb_pose(), x in prop::array::uniform3(-50.0..50.0f64)) {
            let x = Vector3::from(x);
            let back = p.transform_point(&p.inverse().transform_point(&x));
            prop_assert!((back - x).norm() < 1e-9);
            prop_assert!((p.inverse_transform_point(&x) - p.inverse().transform_point(&x)).norm() < 1e-9);
        }

        #[test]
        fn retract_local_roundtrip(p in arb_pose(), d in prop::array::uniform6(-1.0..1.0f64)) {
            let d = Vector6::from_column_slice(&d);
            let q = p.retract(&d);
            prop_assert!((p.local(&q) - d).norm() < 1e-9);
        }

        #[test]
        fn pinhole_angles_roundtrip(
            x in -2.0..2.0f64, y in -1.5..1.5f64, z in 2.0..20.0f64,
        ) {
            let c = CameraIntrinsics::default();
            let p = Vector3::new(x, y, z);
            let px = c.project(&p).unwrap();
            prop_assume!(c.contains(&px));
            let b = c.pixel_to_bearing(&px).unwrap();
            let e = c.pixel_to_elevation(&px).unwrap();
            prop_assert!((b - (x / z).atan()).abs() < 1e-9);
            prop_assert!((e - (y / z).atan()).abs() < 1e-9);
        }

        #[test]
        fn bearing_ignores_v_and_elevation_ignores_u(
            u in 0.0..640.0f64, v1 in 0.0..512.0f64, v2 in 0.0..512.0f64,
        ) {
            let c = cam();
            prop_assert_eq!(
                c.pixel_to_bearing(&Pixel::new(u, v1)).unwrap(),
                c.pixel_to_bearing(&Pixel::new(u, v2)).unwrap()
            );
            prop_assert_eq!(
                c.pixel_to_elevation(&Pixel::new(v1, u.min(511.0))).unwrap(),
                c.pixel_to_elevation(&Pixel::new(v2, u.min(511.0))).unwrap()
            );
        }
    }
}
