//! Opti-acoustic localization: camera bearing selects a sonar beam, the beam
//! supplies range, and the pixel angles turn range into a camera-frame point.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pixel, SonarConfig};

/// Intensity profile of one beam over its range bins.
///
/// The sparse form lists only non-zero bins; every other bin is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Intensities {
    Dense(Vec<f64>),
    Sparse {
        len: u64,
        bins: Vec<u64>,
        values: Vec<f64>,
    },
}

impl Intensities {
    pub fn len(&self) -> u64 {
        match self {
            Intensities::Dense(v) => v.len() as u64,
            Intensities::Sparse { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, bin: u64) -> f64 {
        match self {
            Intensities::Dense(v) => v.get(bin as usize).copied().unwrap_or(0.0),
            Intensities::Sparse { bins, values, .. } => match bins.binary_search(&bin) {
                Ok(i) => values[i],
                Err(_) => 0.0,
            },
        }
    }

    /// `(bin, intensity)` of the maximum; the lowest bin wins ties.
    pub fn peak(&self) -> Option<(u64, f64)> {
        match self {
            Intensities::Dense(v) => {
                let mut best: Option<(u64, f64)> = None;
                for (i, &x) in v.iter().enumerate() {
                    if best.is_none_or(|(_, b)| x > b) {
                        best = Some((i as u64, x));
                    }
                }
                best
            }
            Intensities::Sparse { len, bins, values } => {
                if *len == 0 {
                    return None;
                }
                let mut best: Option<(u64, f64)> = None;
                for (&b, &x) in bins.iter().zip(values) {
                    if best.is_none_or(|(_, v)| x > v) {
                        best = Some((b, x));
                    }
                }
                match best {
                    Some((b, x)) if x > 0.0 => Some((b, x)),
                    // All stored values are zero, so every bin is zero.
                    _ => Some((0, 0.0)),
                }
            }
        }
    }

    fn validate(&self, num_bins: u64) -> Result<()> {
        if self.len() != num_bins {
            return Err(Error::invalid(format!(
                "beam has {} bins, sonar config has {num_bins}",
                self.len()
            )));
        }
        let in_unit = |x: &f64| x.is_finite() && (0.0..=1.0).contains(x);
        match self {
            Intensities::Dense(v) => {
                if !v.iter().all(in_unit) {
                    return Err(Error::invalid("intensities must lie in [0, 1]"));
                }
            }
            Intensities::Sparse { len, bins, values } => {
                if bins.len() != values.len() {
                    return Err(Error::invalid("sparse beam bins and values differ in length"));
                }
                if !bins.windows(2).all(|w| w[0] < w[1]) || bins.last().is_some_and(|b| b >= len) {
                    return Err(Error::invalid(
                        "sparse beam bins must be strictly increasing and below len",
                    ));
                }
                if !values.iter().all(in_unit) {
                    return Err(Error::invalid("intensities must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Beam {
    /// Radians in the sonar frame, positive to the right.
    pub bearing: f64,
    pub intensities: Intensities,
}

/// One multibeam acquisition. Beams with no echo may be omitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SonarPing {
    pub t: f64,
    pub beams: Vec<Beam>,
}

impl SonarPing {
    pub fn validate(&self, cfg: &SonarConfig) -> Result<()> {
        let half = 0.5 * cfg.horizontal_fov;
        for (i, b) in self.beams.iter().enumerate() {
            if !b.bearing.is_finite() || b.bearing.abs() > half + 1e-12 {
                return Err(Error::invalid(format!(
                    "beam {i} bearing {} outside the sonar aperture",
                    b.bearing
                )));
            }
            if i > 0 && b.bearing <= self.beams[i - 1].bearing {
                return Err(Error::invalid("beam bearings must be strictly increasing"));
            }
            b.intensities
                .validate(cfg.num_bins)
                .map_err(|e| Error::invalid(format!("beam {i}: {e}")))?;
        }
        Ok(())
    }
}

/// Outcome of the beam search for one bearing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RangeReturn {
    Hit {
        range: f64,
        beam: usize,
        bin: u64,
        intensity: f64,
    },
    NoReturn,
}

/// True when `beam_bearing` lies in the window of half-width `res / 2` around `theta`.
pub fn in_beam_window(beam_bearing: f64, theta: f64, res: f64) -> bool {
    // The slack keeps a bearing exactly on a shared boundary inside both windows.
    (beam_bearing - theta).abs() <= 0.5 * res * (1.0 + 1e-12)
}

/// Range along the first beam whose window contains `theta`.
///
/// The range is the center of the peak-intensity bin, provided the peak reaches
/// the intensity threshold; otherwise there is no return.
pub fn bearing_to_range(theta: f64, ping: &SonarPing, cfg: &SonarConfig) -> Result<RangeReturn> {
    let half = 0.5 * cfg.horizontal_fov;
    if !theta.is_finite() || theta.abs() > half {
        return Err(Error::OutOfFov {
            bearing: theta,
            half_fov: half,
        });
    }
    let res = cfg.angular_resolution();
    let Some((beam, b)) = ping
        .beams
        .iter()
        .enumerate()
        .find(|(_, b)| in_beam_window(b.bearing, theta, res))
    else {
        return Ok(RangeReturn::NoReturn);
    };
    match b.intensities.peak() {
        Some((bin, intensity)) if intensity >= cfg.intensity_threshold => Ok(RangeReturn::Hit {
            range: (bin as f64 + 0.5) * cfg.range_resolution,
            beam,
            bin,
            intensity,
        }),
        _ => Ok(RangeReturn::NoReturn),
    }
}

/// Camera-frame depth `Z` of a point at sonar range `range` seen at the given angles.
///
/// Without slant correction the range is used as `Z` directly. With it, the
/// range is treated as the Euclidean distance along the pixel ray.
pub fn range_to_depth(range: f64, bearing: f64, elevation: f64, slant_correction: bool) -> f64 {
    if slant_correction {
        let (a, b) = (bearing.tan(), elevation.tan());
        range / (1.0 + a * a + b * b).sqrt()
    } else {
        range
    }
}

/// Range the sonar reports for a camera-frame point, inverse of [`range_to_depth`].
pub fn point_to_range(p: &Vector3<f64>, slant_correction: bool) -> f64 {
    if slant_correction {
        p.norm()
    } else {
        p.z
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectFix {
    pub point_camera: Vector3<f64>,
    pub bearing: f64,
    pub elevation: f64,
    /// Raw sonar range, meters.
    pub range: f64,
    pub range_source_beam: usize,
    pub bin: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoFixReason {
    NoReturn,
    OutOfFov,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FixOutcome {
    Fix(ObjectFix),
    NoFix(NoFixReason),
}

/// Fuses a mask centroid with a sonar ping into a camera-frame 3D point.
pub fn localize_object(
    centroid: &Pixel,
    ping: &SonarPing,
    cam: &CameraIntrinsics,
    cfg: &SonarConfig,
    slant_correction: bool,
) -> Result<FixOutcome> {
    let bearing = cam.pixel_to_bearing(centroid)?;
    let elevation = cam.pixel_to_elevation(centroid)?;
    let hit = match bearing_to_range(bearing, ping, cfg) {
        Ok(h) => h,
        Err(Error::OutOfFov { .. }) => return Ok(FixOutcome::NoFix(NoFixReason::OutOfFov)),
        Err(e) => return Err(e),
    };
    let RangeReturn::Hit {
        range, beam, bin, ..
    } = hit
    else {
        return Ok(FixOutcome::NoFix(NoFixReason::NoReturn));
    };
    let z = range_to_depth(range, bearing, elevation, slant_correction);
    Ok(FixOutcome::Fix(ObjectFix {
        point_camera: Vector3::new(z * bearing.tan(), z * elevation.tan(), z),
        bearing,
        elevation,
        range,
        range_source_beam: beam,
        bin,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    fn sonar(num_beams: usize, num_bins: u64, res: f64) -> SonarConfig {
        SonarConfig {
            num_beams,
            num_bins,
            range_resolution: res,
            ..SonarConfig::default()
        }
    }

    fn ping_with(cfg: &SonarConfig, beam: usize, bin: u64, value: f64) -> SonarPing {
        let beams = cfg
            .beam_bearings()
            .into_iter()
            .enumerate()
            .map(|(i, bearing)| {
                let mut v = vec![0.0; cfg.num_bins as usize];
                if i == beam {
                    v[bin as usize] = value;
                }
                Beam {
                    bearing,
                    intensities: Intensities::Dense(v),
                }
            })
            .collect();
        SonarPing { t: 0.0, beams }
    }

    #[test]
    fn bin_center_range() {
        let cfg = sonar(64, 200, 0.01);
        let beam = 40;
        let ping = ping_with(&cfg, beam, 99, 1.0);
        let theta = cfg.beam_bearing(beam);
        match bearing_to_range(theta, &ping, &cfg).unwrap() {
            RangeReturn::Hit { range, beam: b, bin, .. } => {
                assert!((range - 0.995).abs() < 1e-12);
                assert_eq!((b, bin), (beam, 99));
            }
            RangeReturn::NoReturn => panic!("expected a hit"),
        }
    }

    #[test]
    fn below_threshold_is_no_return() {
        let cfg = sonar(64, 50, 0.05);
        let ping = ping_with(&cfg, 10, 3, 0.49);
        let theta = cfg.beam_bearing(10);
        assert_eq!(bearing_to_range(theta, &ping, &cfg).unwrap(), RangeReturn::NoReturn);
    }

    #[test]
    fn boundary_bearing_picks_lower_beam() {
        let cfg = sonar(8, 10, 0.1);
        let mut ping = ping_with(&cfg, 3, 2, 1.0);
        if let Intensities::Dense(v) = &mut ping.beams[4].intensities {
            v[7] = 1.0;
        }
        let theta = 0.5 * (cfg.beam_bearing(3) + cfg.beam_bearing(4));
        match bearing_to_range(theta, &ping, &cfg).unwrap() {
            RangeReturn::Hit { beam, bin, .. } => assert_eq!((beam, bin), (3, 2)),
            RangeReturn::NoReturn => panic!("expected a hit"),
        }
    }

    #[test]
    fn out_of_fov() {
        let cfg = SonarConfig::default();
        let ping = ping_with(&cfg, 0, 0, 1.0);
        assert!(matches!(
            bearing_to_range(0.6, &ping, &cfg),
            Err(Error::OutOfFov { .. })
        ));
    }

    #[test]
    fn sparse_peak_and_ties() {
        let s = Intensities::Sparse {
            len: 10,
            bins: vec![2, 5, 7],
            values: vec![0.4, 0.9, 0.9],
        };
        assert_eq!(s.peak(), Some((5, 0.9)));
        let z = Intensities::Sparse {
            len: 10,
            bins: vec![],
            values: vec![],
        };
        assert_eq!(z.peak(), Some((0, 0.0)));
        let d = Intensities::Dense(vec![0.1, 0.3, 0.3]);
        assert_eq!(d.peak(), Some((1, 0.3)));
    }

    #[test]
    fn sparse_json_roundtrip() {
        let s = Intensities::Sparse {
            len: 1_000_000_000_000,
            bins: vec![12_345_678_901],
            values: vec![1.0],
        };
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<Intensities>(&j).unwrap(), s);
        let d: Intensities = serde_json::from_str("[0.0, 0.5]").unwrap();
        assert_eq!(d, Intensities::Dense(vec![0.0, 0.5]));
    }

    #[test]
    fn ping_validation() {
        let cfg = sonar(4, 3, 0.1);
        let mut p = ping_with(&cfg, 0, 0, 1.0);
        assert!(p.validate(&cfg).is_ok());
        p.beams.swap(0, 1);
        assert!(p.validate(&cfg).is_err());
        let q = ping_with(&sonar(4, 4, 0.1), 0, 0, 1.0);
        assert!(q.validate(&cfg).is_err());
    }

    #[test]
    fn localize_on_axis() {
        let cam = CameraIntrinsics::default();
        let cfg = sonar(64, 400, 0.01);
        // Zero bearing sits on the boundary of the two central beams; the lower one is searched.
        let ping = ping_with(&cfg, cfg.num_beams / 2 - 1, 199, 1.0);
        let FixOutcome::Fix(fix) =
            localize_object(&Pixel::new(cam.cx, cam.cy), &ping, &cam, &cfg, false).unwrap()
        else {
            panic!("expected a fix")
        };
        assert_eq!(fix.point_camera, Vector3::new(0.0, 0.0, 1.995));
    }

    #[test]
    fn localize_at_forty_five_degrees() {
        let cam = CameraIntrinsics::new(300.0, 300.0, 320.0, 256.0, 640.0, 512.0).unwrap();
        let cfg = SonarConfig {
            horizontal_fov: std::f64::consts::FRAC_PI_2 + 0.02,
            num_beams: 2,
            num_bins: 10,
            range_resolution: 0.2,
            ..SonarConfig::default()
        };
        // Beam 1 covers bearings in [0, fov/2]; bin 4 has center 0.9 m.
        let ping = ping_with(&cfg, 1, 4, 1.0);
        let out = localize_object(&Pixel::new(620.0, 256.0), &ping, &cam, &cfg, false).unwrap();
        let FixOutcome::Fix(fix) = out else { panic!("expected a fix") };
        assert!((fix.bearing - FRAC_PI_4).abs() < 1e-15);
        assert!((fix.point_camera - Vector3::new(0.9, 0.0, 0.9)).norm() < 1e-12);
    }

    #[test]
    fn localize_reports_reasons() {
        let cam = CameraIntrinsics::default();
        let cfg = SonarConfig::default();
        let ping = ping_with(&cfg, 0, 0, 0.0);
        let at = |u| localize_object(&Pixel::new(u, cam.cy), &ping, &cam, &cfg, false).unwrap();
        assert_eq!(at(cam.cx), FixOutcome::NoFix(NoFixReason::NoReturn));
        assert_eq!(at(5.0), FixOutcome::NoFix(NoFixReason::OutOfFov));
        assert!(localize_object(&Pixel::new(-3.0, 0.0), &ping, &cam, &cfg, false).is_err());
    }

    #[test]
    fn slant_depth_inverts_norm() {
        let p = Vector3::new(0.7f64, -0.4, 3.2);
        let (b, e) = ((p.x / p.z).atan(), (p.y / p.z).atan());
        assert!((range_to_depth(point_to_range(&p, true), b, e, true) - p.z).abs() < 1e-14);
        assert_eq!(range_to_depth(2.5, b, e, false), 2.5);
    }

    fn brute_force(theta: f64, ping: &SonarPing, cfg: &SonarConfig) -> Option<(usize, u64)> {
        let res = cfg.angular_resolution();
        let mut cells = Vec::new();
        for (i, b) in ping.beams.iter().enumerate() {
            if in_beam_window(b.bearing, theta, res) {
                for k in 0..cfg.num_bins {
                    cells.push((i, k, b.intensities.get(k)));
                }
            }
        }
        let first = cells.first()?.0;
        let (mut bi, mut bk, mut bv) = (first, 0, f64::NEG_INFINITY);
        for &(i, k, v) in &cells {
            if i == first && (v > bv || (v == bv && k < bk)) {
                (bi, bk, bv) = (i, k, v);
            }
        }
        (bv >= cfg.intensity_threshold).then_some((bi, bk))
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            num_beams in 2usize..12,
            seed_vals in prop::collection::vec(0.0..1.0f64, 12 * 16),
            theta_frac in -1.0..1.0f64,
            sparse in any::<bool>(),
        ) {
            let cfg = SonarConfig { num_beams, num_bins: 16, ..SonarConfig::default() };
            let beams = cfg.beam_bearings().into_iter().enumerate().map(|(i, bearing)| {
                let v: Vec<f64> = seed_vals[i * 16..(i + 1) * 16]
                    .iter().map(|x| if *x < 0.6 { *x * 0.5 } else { *x }).collect();
                let intensities = if sparse {
                    let (bins, values) = v.iter().enumerate()
                        .filter(|(_, x)| **x > 0.2)
                        .map(|(k, x)| (k as u64, *x)).unzip();
                    Intensities::Sparse { len: 16, bins, values }
                } else {
                    Intensities::Dense(v)
                };
                Beam { bearing, intensities }
            }).collect();
            let ping = SonarPing { t: 0.0, beams };
            let theta = theta_frac * 0.5 * cfg.horizontal_fov;
            let got = match bearing_to_range(theta, &ping, &cfg).unwrap() {
                RangeReturn::Hit { beam, bin, .. } => Some((beam, bin)),
                RangeReturn::NoReturn => None,
            };
            prop_assert_eq!(got, brute_force(theta, &ping, &cfg));
        }

        #[test]
        fn fix_lies_on_pixel_ray(u in 0.0..640.0f64, v in 0.0..512.0f64, bin in 0u64..400) {
            let cam = CameraIntrinsics::default();
            let cfg = SonarConfig::default();
            let px = Pixel::new(u, v);
            let theta = cam.pixel_to_bearing(&px).unwrap();
            prop_assume!(theta.abs() <= 0.5 * cfg.horizontal_fov);
            let beam = cfg.beam_bearings().iter()
                .position(|b| in_beam_window(*b, theta, cfg.angular_resolution())).unwrap();
            let ping = ping_with(&cfg, beam, bin, 1.0);
            for slant in [false, true] {
                let a = localize_object(&px, &ping, &cam, &cfg, slant).unwrap();
                let b = localize_object(&px, &ping, &cam, &cfg, slant).unwrap();
                prop_assert_eq!(a, b);
                let FixOutcome::Fix(f) = a else { return Err(TestCaseError::fail("no fix")) };
                let p = f.point_camera;
                prop_assert!(p.z > 0.0);
                prop_assert!((p.x - p.z * f.bearing.tan()).abs() < 1e-9);
                prop_assert!((p.y - p.z * f.elevation.tan()).abs() < 1e-9);
                prop_assert!((point_to_range(&p, slant) - f.range).abs() < 1e-9);
            }
        }
    }
}
