//! Poses, wrenches and the small amount of quaternion algebra the stack needs.

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub const QUAT_TOLERANCE: f64 = 1e-9;

pub fn norm3(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Unit quaternion stored as `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion(pub [f64; 4]);

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion([1.0, 0.0, 0.0, 0.0]);

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Unit-norm copy; the zero quaternion maps to identity.
    pub fn normalized(&self) -> Quaternion {
        let n = self.norm();
        if n < 1e-12 || !n.is_finite() {
            return Quaternion::IDENTITY;
        }
        Quaternion(self.0.map(|v| v / n))
    }

    pub fn mul(&self, other: &Quaternion) -> Quaternion {
        let [w1, x1, y1, z1] = self.0;
        let [w2, x2, y2, z2] = other.0;
        Quaternion([
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ])
    }

    pub fn conjugate(&self) -> Quaternion {
        let [w, x, y, z] = self.0;
        Quaternion([w, -x, -y, -z])
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let p = Quaternion([0.0, v[0], v[1], v[2]]);
        let r = self.mul(&p).mul(&self.conjugate());
        [r.0[1], r.0[2], r.0[3]]
    }

    /// Rotation vector (axis · angle) to quaternion.
    pub fn from_rotation_vector(r: Vec3) -> Quaternion {
        let angle = norm3(r);
        if angle < 1e-12 {
            return Quaternion([1.0, r[0] / 2.0, r[1] / 2.0, r[2] / 2.0]).normalized();
        }
        let (s, c) = (angle / 2.0).sin_cos();
        let k = s / angle;
        Quaternion([c, r[0] * k, r[1] * k, r[2] * k])
    }

    pub fn to_rotation_vector(&self) -> Vec3 {
        let q = self.normalized();
        let q = if q.0[0] < 0.0 { Quaternion(q.0.map(|v| -v)) } else { q };
        let [w, x, y, z] = q.0;
        let s = (x * x + y * y + z * z).sqrt();
        if s < 1e-12 {
            return [2.0 * x, 2.0 * y, 2.0 * z];
        }
        let angle = 2.0 * s.atan2(w);
        [x / s * angle, y / s * angle, z / s * angle]
    }

    /// The rotated unit z axis; used as the orientation direction.
    pub fn forward_axis(&self) -> Vec3 {
        self.rotate([0.0, 0.0, 1.0])
    }
}

/// End-effector pose: position in meters plus unit orientation quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quaternion,
}

impl Pose {
    pub const DIM: usize = 7;

    pub fn new(position: Vec3, orientation: Quaternion) -> Result<Self> {
        let pose = Self {
            position,
            orientation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn at(position: Vec3) -> Self {
        Self {
            position,
            orientation: Quaternion::IDENTITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.position.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite position"));
        }
        let n = self.orientation.norm();
        if (n - 1.0).abs() > QUAT_TOLERANCE {
            return Err(Error::domain(format!("quaternion norm {n} is not 1")));
        }
        Ok(())
    }

    /// `[x, y, z, qw, qx, qy, qz]`
    pub fn to_array(&self) -> [f64; 7] {
        let [w, x, y, z] = self.orientation.0;
        let p = self.position;
        [p[0], p[1], p[2], w, x, y, z]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 7 {
            return Err(Error::dim(format!("pose needs 7 values, got {}", v.len())));
        }
        Self::new([v[0], v[1], v[2]], Quaternion([v[3], v[4], v[5], v[6]]))
    }

    /// Six-dimensional form: position then rotation vector.
    pub fn to_pose6(&self) -> [f64; 6] {
        let r = self.orientation.to_rotation_vector();
        let p = self.position;
        [p[0], p[1], p[2], r[0], r[1], r[2]]
    }

    pub fn from_pose6(v: [f64; 6]) -> Self {
        Self {
            position: [v[0], v[1], v[2]],
            orientation: Quaternion::from_rotation_vector([v[3], v[4], v[5]]),
        }
    }
}

/// Force (N) and torque (N·m) at the end effector.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub force: Vec3,
    pub torque: Vec3,
}

impl Wrench {
    pub const DIM: usize = 6;
    pub const ZERO: Wrench = Wrench {
        force: [0.0; 3],
        torque: [0.0; 3],
    };

    pub fn from_force(force: Vec3) -> Self {
        Self {
            force,
            torque: [0.0; 3],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        let (f, t) = (self.force, self.torque);
        [f[0], f[1], f[2], t[0], t[1], t[2]]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 6 {
            return Err(Error::dim(format!("wrench needs 6 values, got {}", v.len())));
        }
        Ok(Self {
            force: [v[0], v[1], v[2]],
            torque: [v[3], v[4], v[5]],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn force_norm(&self) -> f64 {
        norm3(self.force)
    }
}
