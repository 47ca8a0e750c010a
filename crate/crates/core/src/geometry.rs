//! Angle conventions and direction arithmetic.
//!
//! World frame: right-handed, `z` up. A direction is a (pan, tilt) pair in
//! degrees: pan is the azimuth measured in the horizontal `xy` plane from the
//! `+x` axis towards `+y`, tilt is the elevation above that plane. Pan lives in
//! `(-180, 180]`, tilt in `[-90, 90]`.
//!
//! Latent angles inside the filters are kept unwrapped; only differences
//! (innovations, residuals) go through [`wrap_delta`].

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this horizontal norm a direction is treated as vertical and its pan is 0.
const POLE_EPS: f64 = 1e-9;
/// Minimum separation for `direction_from_points`.
const COINCIDENT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Direction {
    pan: f64,
    tilt: f64,
}

impl Direction {
    /// Strict constructor: pan must already lie in `(-180, 180]`.
    pub fn new(pan: f64, tilt: f64) -> Result<Self> {
        if !pan.is_finite()
            || !tilt.is_finite()
            || pan <= -180.0
            || pan > 180.0
            || !(-90.0..=90.0).contains(&tilt)
        {
            return Err(Error::InvalidDirection { pan, tilt });
        }
        Ok(Self { pan, tilt })
    }

    /// Wraps `pan` into `(-180, 180]`; tilt is still range-checked.
    pub fn wrapped(pan: f64, tilt: f64) -> Result<Self> {
        if !pan.is_finite() {
            return Err(Error::InvalidDirection { pan, tilt });
        }
        Self::new(wrap_angle(pan), tilt)
    }

    /// Wraps pan and clamps tilt. Used for reporting filter estimates, whose
    /// unwrapped state can in principle leave the tilt range.
    pub fn saturating(pan: f64, tilt: f64) -> Self {
        Self {
            pan: wrap_angle(pan),
            tilt: tilt.clamp(-90.0, 90.0),
        }
    }

    pub fn pan(&self) -> f64 {
        self.pan
    }

    pub fn tilt(&self) -> f64 {
        self.tilt
    }

    pub fn to_vector(&self) -> Vector2<f64> {
        Vector2::new(self.pan, self.tilt)
    }
}

impl TryFrom<[f64; 2]> for Direction {
    type Error = Error;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        Self::new(v[0], v[1])
    }
}

impl From<Direction> for [f64; 2] {
    fn from(d: Direction) -> Self {
        [d.pan, d.tilt]
    }
}

/// A point in the shared world frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3D {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::NonFinite("position"));
        }
        Ok(Self { x, y, z })
    }

    pub fn distance(&self, other: &Position3D) -> f64 {
        let (dx, dy, dz) = (other.x - self.x, other.y - self.y, other.z - self.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

impl TryFrom<[f64; 3]> for Position3D {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<Position3D> for [f64; 3] {
    fn from(p: Position3D) -> Self {
        [p.x, p.y, p.z]
    }
}

/// Wraps an angle into `(-180, 180]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = (a + 180.0).rem_euclid(360.0) - 180.0;
    if r <= -180.0 {
        r + 360.0
    } else {
        r
    }
}

/// `a - b` wrapped into `(-180, 180]`.
pub fn wrap_delta(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// Component-wise wrapped difference of two (pan, tilt) vectors.
pub fn wrapped_residual(a: &Vector2<f64>, b: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(wrap_delta(a[0], b[0]), wrap_delta(a[1], b[1]))
}

/// Euclidean norm of the wrapped (pan, tilt) difference.
pub fn angular_distance(d1: &Direction, d2: &Direction) -> f64 {
    angular_distance_raw(&d1.to_vector(), &d2.to_vector())
}

/// Same as [`angular_distance`] on unwrapped (pan, tilt) vectors.
pub fn angular_distance_raw(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    wrapped_residual(a, b).norm()
}

pub fn direction_from_points(src: &Position3D, dst: &Position3D) -> Result<Direction> {
    let (dx, dy, dz) = (dst.x - src.x, dst.y - src.y, dst.z - src.z);
    let dist = (dx * dx + dy * dy + dz * dz).sqrt();
    if !(dist > COINCIDENT_EPS) {
        return Err(Error::DegenerateGeometry(format!(
            "points ({}, {}, {}) and ({}, {}, {}) coincide",
            src.x, src.y, src.z, dst.x, dst.y, dst.z
        )));
    }
    let horizontal = dx.hypot(dy);
    let pan = if horizontal < POLE_EPS {
        0.0
    } else {
        dy.atan2(dx).to_degrees()
    };
    let tilt = (dz / dist).clamp(-1.0, 1.0).asin().to_degrees();
    Direction::wrapped(pan, tilt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(x: f64, y: f64, z: f64) -> Position3D {
        Position3D::new(x, y, z).unwrap()
    }

    #[test]
    fn direction_axis_and_pole() {
        let d = direction_from_points(&p(0.0, 0.0, 0.0), &p(1.0, 0.0, 0.0)).unwrap();
        assert_eq!((d.pan(), d.tilt()), (0.0, 0.0));
        let d = direction_from_points(&p(0.0, 0.0, 0.0), &p(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(d.pan(), 0.0);
        assert!((d.tilt() - 90.0).abs() < 1e-12);
    }

    #[test]
    fn direction_diagonal() {
        // tilt = asin(1/sqrt(3))
        let d = direction_from_points(&p(1.0, 2.0, 0.0), &p(2.0, 3.0, 1.0)).unwrap();
        let expected_tilt = (1.0f64 / 3.0f64.sqrt()).asin().to_degrees();
        assert!((d.pan() - 45.0).abs() < 1e-12);
        assert!((d.tilt() - expected_tilt).abs() < 1e-12);
        assert!((d.tilt() - 35.2644).abs() < 1e-4);
    }

    #[test]
    fn coincident_points_rejected() {
        let e = direction_from_points(&p(1.0, 1.0, 1.0), &p(1.0, 1.0, 1.0));
        assert!(matches!(e, Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_delta(175.0, -175.0), -10.0);
        assert_eq!(wrap_delta(10.0, 10.0), 0.0);
        assert_eq!(wrap_delta(-170.0, 170.0), 20.0);
        assert_eq!(wrap_angle(-180.0), 180.0);
        assert_eq!(wrap_angle(540.0), 180.0);
    }

    #[test]
    fn angular_distance_examples() {
        let a = Direction::new(10.0, 5.0).unwrap();
        assert_eq!(angular_distance(&a, &a), 0.0);
        let b = Direction::new(13.0, 9.0).unwrap();
        assert!((angular_distance(&a, &b) - 5.0).abs() < 1e-12);
        let c = Direction::new(175.0, 0.0).unwrap();
        let d = Direction::new(-175.0, 0.0).unwrap();
        assert!((angular_distance(&c, &d) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn direction_ranges() {
        assert!(Direction::new(-180.0, 0.0).is_err());
        assert!(Direction::new(180.0, 0.0).is_ok());
        assert!(Direction::new(0.0, 90.5).is_err());
        assert_eq!(Direction::wrapped(-180.0, 0.0).unwrap().pan(), 180.0);
        assert!(Position3D::new(f64::NAN, 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn wrap_delta_is_congruent(a in -1e4f64..1e4, b in -1e4f64..1e4) {
            let d = wrap_delta(a, b);
            prop_assert!(d > -180.0 && d <= 180.0);
            let r = (d + b - a).rem_euclid(360.0);
            prop_assert!(r < 1e-7 || (360.0 - r) < 1e-7);
        }

        #[test]
        fn angular_distance_symmetric_and_triangle(
            p1 in -179.9f64..180.0, t1 in -79.0f64..79.0,
            p2 in -179.9f64..180.0, t2 in -79.0f64..79.0,
            p3 in -179.9f64..180.0, t3 in -79.0f64..79.0,
        ) {
            let a = Direction::new(p1, t1).unwrap();
            let b = Direction::new(p2, t2).unwrap();
            let c = Direction::new(p3, t3).unwrap();
            let ab = angular_distance(&a, &b);
            prop_assert!((ab - angular_distance(&b, &a)).abs() < 1e-9);
            prop_assert!(ab <= angular_distance(&a, &c) + angular_distance(&c, &b) + 1e-9);
        }

        #[test]
        fn tilt_sign_follows_height(
            x in -5.0f64..5.0, y in -5.0f64..5.0, z in -5.0f64..5.0,
            dx in -5.0f64..5.0, dy in -5.0f64..5.0, dz in -5.0f64..5.0,
        ) {
            let src = p(x, y, z);
            let dst = p(x + dx, y + dy, z + dz);
            prop_assume!(src.distance(&dst) > 1e-6);
            let d = direction_from_points(&src, &dst).unwrap();
            if dz > 0.0 { prop_assert!(d.tilt() > 0.0) }
            if dz < 0.0 { prop_assert!(d.tilt() < 0.0) }
        }
    }
}
