//! Rigid transforms in SE(3).
//!
//! Poses are world-frame transforms: `a.compose(&b)` is the homogeneous matrix
//! product `A * B`, so applying `b` first and `a` second. The delta between a
//! source and a target pose is taken on the left, `delta = target * source^-1`,
//! which is the convention under which a rigidly attached end-effector keeps
//! its pose relative to the object it follows:
//!
//! ```text
//! target^-1 * (delta * ee) == source^-1 * ee
//! ```

use nalgebra::{Matrix4, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Position in meters plus unit quaternion orientation.
///
/// The quaternion is kept with `w >= 0` after every operation so that two
/// equal rotations always serialize to the same bytes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

fn canonical(q: Quaternion<f64>) -> Quaternion<f64> {
    let q = if q.w < 0.0 { -q } else { q };
    // adding +0.0 turns -0.0 into +0.0
    Quaternion::new(q.w + 0.0, q.i + 0.0, q.j + 0.0, q.k + 0.0)
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation: UnitQuaternion::new_unchecked(canonical(orientation.into_inner())),
        }
    }

    /// Builds a pose from a raw `(w, x, y, z)` quaternion without normalizing
    /// it. Used when reading stored data that still has to be validated.
    pub fn from_raw(position: [f64; 3], wxyz: [f64; 4]) -> Self {
        let [w, x, y, z] = wxyz;
        Self {
            position: Vector3::from(position),
            orientation: UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z)),
        }
    }

    /// Normalizing constructor from `(w, x, y, z)`.
    pub fn from_wxyz(position: [f64; 3], wxyz: [f64; 4]) -> Self {
        let [w, x, y, z] = wxyz;
        Self::new(
            Vector3::from(position),
            UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
        )
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            position: Vector3::new(x, y, z),
            orientation: UnitQuaternion::identity(),
        }
    }

    /// Rotation about the world z axis, no translation.
    pub fn from_yaw(yaw: f64) -> Self {
        Self::new(
            Vector3::zeros(),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        )
    }

    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self::new(
            Vector3::new(x, y, z),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        )
    }

    pub fn from_axis_angle(position: Vector3<f64>, axis: Vector3<f64>, angle: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(axis);
        Self::new(position, UnitQuaternion::from_axis_angle(&axis, angle))
    }

    /// Exact (bitwise) identity test.
    pub fn is_identity(&self) -> bool {
        let q = self.orientation.quaternion();
        self.position == Vector3::zeros() && q.w == 1.0 && q.i == 0.0 && q.j == 0.0 && q.k == 0.0
    }

    /// `(w, x, y, z)`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn quaternion_norm(&self) -> f64 {
        self.orientation.quaternion().norm()
    }

    /// Matrix product `self * other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        if self.is_identity() {
            return *other;
        }
        if other.is_identity() {
            return *self;
        }
        Pose::new(
            self.orientation * other.position + self.position,
            self.orientation * other.orientation,
        )
    }

    pub fn inverse(&self) -> Pose {
        if self.is_identity() {
            return *self;
        }
        let inv = self.orientation.inverse();
        Pose::new(-(inv * self.position), inv)
    }

    /// World-frame delta mapping `source` onto `target`:
    /// `delta_between(s, t).compose(&s) == t`.
    pub fn delta_between(source: &Pose, target: &Pose) -> Pose {
        if source == target {
            return Pose::identity();
        }
        target.compose(&source.inverse())
    }

    /// Linear position, shortest-arc slerp orientation. Endpoints are exact.
    pub fn interpolate(a: &Pose, b: &Pose, t: f64) -> Pose {
        if t <= 0.0 {
            return *a;
        }
        if t >= 1.0 {
            return *b;
        }
        let position = a.position + (b.position - a.position) * t;
        Pose::new(position, slerp_shortest(&a.orientation, &b.orientation, t))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        if self.is_identity() {
            return *p;
        }
        self.orientation * p + self.position
    }

    /// Angle in radians of the relative rotation between two orientations.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        let a = self.orientation.quaternion().coords;
        let mut b = other.orientation.quaternion().coords;
        if a.dot(&b) < 0.0 {
            b = -b;
        }
        4.0 * (a - b).norm().atan2((a + b).norm())
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        (self.position - other.position).norm()
    }

    /// Rotation about z extracted from the orientation (exact for pure yaw).
    pub fn yaw(&self) -> f64 {
        let (_, _, yaw) = self.orientation.euler_angles();
        yaw
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = self.orientation.to_rotation_matrix().to_homogeneous();
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.position);
        m
    }

    /// Row-major 3x4 `[R | t]`, handy for tight point loops.
    pub fn to_affine_rows(&self) -> [[f64; 4]; 3] {
        let r = self.orientation.to_rotation_matrix();
        let r = r.matrix();
        let t = self.position;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
        ]
    }

    /// `px, py, pz, qw, qx, qy, qz` as little-endian float64.
    pub fn to_le_bytes(&self) -> [u8; 56] {
        let mut out = [0u8; 56];
        let q = self.wxyz();
        let vals = [
            self.position.x,
            self.position.y,
            self.position.z,
            q[0],
            q[1],
            q[2],
            q[3],
        ];
        for (chunk, v) in out.chunks_exact_mut(8).zip(vals) {
            chunk.copy_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Inverse of [`Pose::to_le_bytes`]; does not normalize the quaternion.
    pub fn from_le_bytes(bytes: &[u8; 56]) -> Pose {
        let mut vals = [0f64; 7];
        for (v, chunk) in vals.iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        Pose::from_raw(
            [vals[0], vals[1], vals[2]],
            [vals[3], vals[4], vals[5], vals[6]],
        )
    }
}

fn slerp_shortest(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, t: f64) -> UnitQuaternion<f64> {
    let qa = a.quaternion();
    let mut qb = *b.quaternion();
    let mut dot = qa.dot(&qb);
    if dot < 0.0 {
        qb = -qb;
        dot = -dot;
    }
    let q = if dot > 1.0 - 1e-12 {
        qa * (1.0 - t) + qb * t
    } else {
        let theta = dot.min(1.0).acos();
        let s = theta.sin();
        qa * (((1.0 - t) * theta).sin() / s) + qb * ((t * theta).sin() / s)
    };
    UnitQuaternion::from_quaternion(q)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRepr {
    position: [f64; 3],
    /// (w, x, y, z)
    orientation: [f64; 4],
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PoseRepr {
            position: [self.position.x, self.position.y, self.position.z],
            orientation: self.wxyz(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = PoseRepr::deserialize(d)?;
        Ok(Pose::from_raw(r.position, r.orientation))
    }
}

/// Per-object world-frame deltas from a source to a target configuration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigDelta {
    deltas: Vec<Pose>,
}

impl ConfigDelta {
    pub fn identity(objects: usize) -> Self {
        Self {
            deltas: vec![Pose::identity(); objects],
        }
    }

    /// Pairs `source[k]` with `target[k]`; unmatched objects get identity.
    pub fn between(source: &[Pose], target: &[Pose]) -> Self {
        let deltas = source
            .iter()
            .enumerate()
            .map(|(k, s)| {
                target
                    .get(k)
                    .map_or(Pose::identity(), |t| Pose::delta_between(s, t))
            })
            .collect();
        Self { deltas }
    }

    pub fn from_deltas(deltas: Vec<Pose>) -> Self {
        Self { deltas }
    }

    pub fn get(&self, object: usize) -> Option<&Pose> {
        self.deltas.get(object)
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.deltas.iter().all(Pose::is_identity)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Pose> {
        self.deltas.iter()
    }
}
