//! Minimal 3D vector/matrix types and the axis-aligned box used throughout
//! the renderer. Everything is `f64`: the inverse solver is validated against
//! central finite differences at tolerances that single precision cannot hold.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

pub const fn vec3(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3 { x, y, z }
}

impl Vec3 {
    pub const ZERO: Vec3 = vec3(0.0, 0.0, 0.0);

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        vec3(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn length_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn length(self) -> f64 {
        self.length_squared().sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let len = self.length();
        debug_assert!(len > 0.0, "normalizing zero vector");
        self / len
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn axis(self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            2 => self.z,
            _ => panic!("axis index {i} out of range"),
        }
    }

    pub fn set_axis(&mut self, i: usize, v: f64) {
        match i {
            0 => self.x = v,
            1 => self.y = v,
            2 => self.z = v,
            _ => panic!("axis index {i} out of range"),
        }
    }

    pub fn min(self, o: Vec3) -> Vec3 {
        vec3(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Vec3) -> Vec3 {
        vec3(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn max_component(self) -> f64 {
        self.x.max(self.y).max(self.z)
    }

    pub fn min_component(self) -> f64 {
        self.x.min(self.y).min(self.z)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        vec3(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        vec3(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        vec3(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        vec3(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        vec3(self.x / s, self.y / s, self.z / s)
    }
}

/// Row-major 3x3 matrix. Used for camera rotations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3 {
    pub rows: [[f64; 3]; 3],
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3 {
        rows: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Builds the matrix whose columns are the given vectors.
    pub fn from_columns(c0: Vec3, c1: Vec3, c2: Vec3) -> Mat3 {
        Mat3 {
            rows: [
                [c0.x, c1.x, c2.x],
                [c0.y, c1.y, c2.y],
                [c0.z, c1.z, c2.z],
            ],
        }
    }

    /// Rotation matrix of a unit quaternion given as (w, x, y, z).
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Mat3 {
        let (w2, x2, y2, z2) = (w * w, x * x, y * y, z * z);
        Mat3 {
            rows: [
                [
                    w2 + x2 - y2 - z2,
                    2.0 * (x * y - w * z),
                    2.0 * (x * z + w * y),
                ],
                [
                    2.0 * (x * y + w * z),
                    w2 - x2 + y2 - z2,
                    2.0 * (y * z - w * x),
                ],
                [
                    2.0 * (x * z - w * y),
                    2.0 * (y * z + w * x),
                    w2 - x2 - y2 + z2,
                ],
            ],
        }
    }

    pub fn transpose(&self) -> Mat3 {
        let r = &self.rows;
        Mat3 {
            rows: [
                [r[0][0], r[1][0], r[2][0]],
                [r[0][1], r[1][1], r[2][1]],
                [r[0][2], r[1][2], r[2][2]],
            ],
        }
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let r = &self.rows;
        vec3(
            r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z,
            r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z,
            r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().all(|r| r.iter().all(|v| v.is_finite()))
    }
}

/// Axis-aligned box, `min <= max` componentwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Aabb {
        debug_assert!(min.x <= max.x && min.y <= max.y && min.z <= max.z);
        Aabb { min, max }
    }

    pub fn is_valid(&self) -> bool {
        self.min.is_finite()
            && self.max.is_finite()
            && self.min.x < self.max.x
            && self.min.y < self.max.y
            && self.min.z < self.max.z
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn contains_box(&self, o: &Aabb) -> bool {
        self.contains(o.min) && self.contains(o.max)
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    /// Radius of the bounding sphere around the box center.
    pub fn bounding_radius(&self) -> f64 {
        self.extent().length() * 0.5
    }

    pub fn dilated(&self, amount: Vec3) -> Aabb {
        Aabb {
            min: self.min - amount,
            max: self.max + amount,
        }
    }

    /// Parametric overlap of the ray `origin + t * dir` with the box,
    /// intersected with `[t_min, t_max]`. Returns `None` when the ray misses.
    pub fn ray_range(&self, origin: Vec3, dir: Vec3, t_min: f64, t_max: f64) -> Option<(f64, f64)> {
        let mut t0 = t_min;
        let mut t1 = t_max;
        for i in 0..3 {
            let inv = 1.0 / dir.axis(i);
            let mut near = (self.min.axis(i) - origin.axis(i)) * inv;
            let mut far = (self.max.axis(i) - origin.axis(i)) * inv;
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            // A zero direction component yields +-inf or NaN; NaN comparisons
            // are false, which keeps the slab unconstrained only when the
            // origin lies inside it.
            if near.is_nan() || far.is_nan() {
                if origin.axis(i) < self.min.axis(i) || origin.axis(i) > self.max.axis(i) {
                    return None;
                }
                continue;
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

/// Two unit vectors spanning the plane orthogonal to unit `n`.
pub fn orthonormal_basis(n: Vec3) -> (Vec3, Vec3) {
    // Pixar's branchless construction (Duff et al. 2017).
    let sign = if n.z >= 0.0 { 1.0 } else { -1.0 };
    let a = -1.0 / (sign + n.z);
    let b = n.x * n.y * a;
    (
        vec3(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x),
        vec3(b, sign + n.y * n.y * a, -n.y),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_follows_right_hand_rule() {
        let c = vec3(1.0, 0.0, 0.0).cross(vec3(0.0, 1.0, 0.0));
        assert_eq!(c, vec3(0.0, 0.0, 1.0));
    }

    #[test]
    fn quaternion_identity_is_identity_matrix() {
        let m = Mat3::from_quaternion(1.0, 0.0, 0.0, 0.0);
        assert_eq!(m, Mat3::IDENTITY);
    }

    #[test]
    fn quaternion_half_turn_about_z() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let m = Mat3::from_quaternion(s, 0.0, 0.0, s); // 90 degrees about z
        let v = m.mul_vec(vec3(1.0, 0.0, 0.0));
        assert!((v - vec3(0.0, 1.0, 0.0)).length() < 1e-12);
    }

    #[test]
    fn ray_range_through_unit_box() {
        let b = Aabb::new(Vec3::ZERO, vec3(1.0, 1.0, 1.0));
        let (t0, t1) = b
            .ray_range(vec3(-1.0, 0.5, 0.5), vec3(1.0, 0.0, 0.0), 0.0, f64::INFINITY)
            .unwrap();
        assert!((t0 - 1.0).abs() < 1e-12 && (t1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ray_range_miss_with_zero_component() {
        let b = Aabb::new(Vec3::ZERO, vec3(1.0, 1.0, 1.0));
        assert!(b
            .ray_range(vec3(-1.0, 2.0, 0.5), vec3(1.0, 0.0, 0.0), 0.0, f64::INFINITY)
            .is_none());
    }

    #[test]
    fn ray_range_from_inside_starts_at_zero() {
        let b = Aabb::new(Vec3::ZERO, vec3(1.0, 1.0, 1.0));
        let (t0, t1) = b
            .ray_range(vec3(0.5, 0.5, 0.5), vec3(0.0, 0.0, 1.0), 0.0, f64::INFINITY)
            .unwrap();
        assert_eq!(t0, 0.0);
        assert!((t1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn basis_is_orthonormal() {
        for n in [
            vec3(0.0, 0.0, 1.0),
            vec3(0.0, 0.0, -1.0),
            vec3(1.0, 2.0, -0.3).normalized(),
        ] {
            let (t, b) = orthonormal_basis(n);
            assert!(t.dot(n).abs() < 1e-12);
            assert!(b.dot(n).abs() < 1e-12);
            assert!(t.dot(b).abs() < 1e-12);
            assert!((t.length() - 1.0).abs() < 1e-12);
            assert!((b.length() - 1.0).abs() < 1e-12);
        }
    }
}
