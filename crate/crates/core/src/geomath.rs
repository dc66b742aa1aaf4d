//! Frames, rotations and geodetic conversions.
//!
//! Everything in the simulator uses a local North-East-Down frame with the
//! water surface at `z = 0` and `z` growing with depth. Body frames follow the
//! usual marine convention: x forward, y starboard, z down.

use nalgebra::{Quaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type UnitQuaternion = nalgebra::UnitQuaternion<f64>;

/// Mean spherical earth radius used by the tangent-plane approximation.
pub const EARTH_RADIUS: f64 = 6_371_000.0;

/// Largest horizontal offset for which the tangent-plane approximation is accepted.
pub const MAX_LOCAL_RANGE: f64 = 100_000.0;

/// Longest substep used when integrating attitude.
pub const MAX_POSE_SUBSTEP: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("point is {distance:.1} m from origin, beyond the {limit:.0} m tangent-plane limit")]
    OutOfRange { distance: f64, limit: f64 },
    #[error("invalid geodetic point: lat {lat}, lon {lon}")]
    InvalidPoint { lat: f64, lon: f64 },
}

/// Position in the local NED frame plus body-to-NED attitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    #[serde(with = "quat_wxyz")]
    pub orientation: UnitQuaternion,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vec3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vec3, orientation: UnitQuaternion) -> Self {
        Self {
            position,
            orientation,
        }
    }

    /// Builds a pose from NED position and roll/pitch/yaw in radians.
    pub fn from_euler(position: Vec3, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self {
            position,
            orientation: UnitQuaternion::from_euler_angles(roll, pitch, yaw),
        }
    }

    /// (roll, pitch, yaw) in radians.
    pub fn euler(&self) -> (f64, f64, f64) {
        self.orientation.euler_angles()
    }

    pub fn heading(&self) -> f64 {
        self.euler().2
    }

    pub fn depth(&self) -> f64 {
        self.position.z
    }
}

/// Body-frame linear (u, v, w) and angular (p, q, r) velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyVelocity {
    pub linear: Vec3,
    pub angular: Vec3,
}

impl BodyVelocity {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(linear: Vec3, angular: Vec3) -> Self {
        Self { linear, angular }
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            linear: Vec3::new(v[0], v[1], v[2]),
            angular: Vec3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }
}

/// Latitude/longitude in degrees, vertical in meters (positive down).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeoPoint {
    #[serde(alias = "lat")]
    pub latitude: f64,
    #[serde(alias = "lon")]
    pub longitude: f64,
    #[serde(default, alias = "depth")]
    pub vertical: f64,
}

impl GeoPoint {
    pub fn new(latitude: f64, longitude: f64, vertical: f64) -> Result<Self, GeoError> {
        let p = Self {
            latitude,
            longitude,
            vertical,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !(self.latitude.abs() <= 90.0 && self.longitude.abs() <= 180.0 && self.vertical.is_finite())
        {
            return Err(GeoError::InvalidPoint {
                lat: self.latitude,
                lon: self.longitude,
            });
        }
        Ok(())
    }
}

pub fn rotate_body_to_world(q: &UnitQuaternion, v: &Vec3) -> Vec3 {
    q.transform_vector(v)
}

pub fn rotate_world_to_body(q: &UnitQuaternion, v: &Vec3) -> Vec3 {
    q.inverse_transform_vector(v)
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Applies a body-frame rotation vector to an attitude through the exponential map.
pub fn rotate_by_body_increment(q: &UnitQuaternion, rotation: &Vec3) -> UnitQuaternion {
    let delta = UnitQuaternion::from_scaled_axis(*rotation);
    renormalize(q.quaternion() * delta.quaternion())
}

pub(crate) fn renormalize(q: Quaternion<f64>) -> UnitQuaternion {
    UnitQuaternion::new_normalize(q)
}

/// Advances a pose under constant body velocity.
///
/// Splits `dt` into equal substeps no longer than [`MAX_POSE_SUBSTEP`]; each
/// substep moves the position with the current attitude and then applies the
/// exponential-map attitude update.
pub fn integrate_pose(p: &Pose, nu: &BodyVelocity, dt: f64) -> Pose {
    debug_assert!(dt > 0.0);
    let n = (dt / MAX_POSE_SUBSTEP).ceil().max(1.0) as usize;
    let h = dt / n as f64;
    let mut position = p.position;
    let mut q = p.orientation;
    for _ in 0..n {
        let half = rotate_by_body_increment(&q, &(nu.angular * (0.5 * h)));
        position += rotate_body_to_world(&half, &nu.linear) * h;
        q = rotate_by_body_increment(&q, &(nu.angular * h));
    }
    Pose::new(position, q)
}

/// Converts a geodetic point to local NED offsets from `origin`.
pub fn geodetic_to_local(origin: &GeoPoint, p: &GeoPoint) -> Result<Vec3, GeoError> {
    origin.validate()?;
    p.validate()?;
    let lat0 = origin.latitude.to_radians();
    let north = (p.latitude - origin.latitude).to_radians() * EARTH_RADIUS;
    let mut dlon = p.longitude - origin.longitude;
    if dlon > 180.0 {
        dlon -= 360.0;
    } else if dlon < -180.0 {
        dlon += 360.0;
    }
    let east = dlon.to_radians() * EARTH_RADIUS * lat0.cos();
    check_range(north, east)?;
    Ok(Vec3::new(north, east, p.vertical - origin.vertical))
}

pub fn local_to_geodetic(origin: &GeoPoint, v: &Vec3) -> Result<GeoPoint, GeoError> {
    origin.validate()?;
    check_range(v.x, v.y)?;
    let lat0 = origin.latitude.to_radians();
    let latitude = origin.latitude + (v.x / EARTH_RADIUS).to_degrees();
    let mut longitude = origin.longitude + (v.y / (EARTH_RADIUS * lat0.cos())).to_degrees();
    if longitude > 180.0 {
        longitude -= 360.0;
    } else if longitude < -180.0 {
        longitude += 360.0;
    }
    GeoPoint::new(latitude, longitude, origin.vertical + v.z)
}

fn check_range(north: f64, east: f64) -> Result<(), GeoError> {
    let distance = north.hypot(east);
    if !(distance <= MAX_LOCAL_RANGE) {
        return Err(GeoError::OutOfRange {
            distance,
            limit: MAX_LOCAL_RANGE,
        });
    }
    Ok(())
}

/// Serializes a unit quaternion as `[w, x, y, z]`.
pub mod quat_wxyz {
    use super::UnitQuaternion;
    use nalgebra::Quaternion;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(q: &UnitQuaternion, s: S) -> Result<S::Ok, S::Error> {
        [q.w, q.i, q.j, q.k].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<UnitQuaternion, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?;
        let raw = Quaternion::new(w, x, y, z);
        if !(raw.norm() > 1e-12) || !raw.norm().is_finite() {
            return Err(serde::de::Error::custom("quaternion must have a finite, nonzero norm"));
        }
        // Already-unit input must survive a save/load cycle bit-exactly.
        if (raw.norm() - 1.0).abs() < 1e-12 {
            Ok(UnitQuaternion::new_unchecked(raw))
        } else {
            Ok(UnitQuaternion::new_normalize(raw))
        }
    }
}
