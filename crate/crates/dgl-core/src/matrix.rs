//! Small fixed-size linear algebra for planar elasticity: 2-vectors and
//! 2x2 matrices with the Frobenius inner product, plus the rotation
//! generator J used throughout.

use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// A point or vector in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    /// Counterclockwise rotation by pi/2, i.e. J applied to the vector.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn scale(self, t: f64) -> Vec2 {
        Vec2::new(t * self.x, t * self.y)
    }

    pub fn unit_radial(theta: f64) -> Vec2 {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn unit_tangential(theta: f64) -> Vec2 {
        Vec2::new(-theta.sin(), theta.cos())
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, t: f64) -> Vec2 {
        self.scale(t)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

/// A 2x2 real matrix in row-major storage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Mat2 {
    /// Entries [[a, b], [c, d]] stored as [a, b, c, d].
    pub m: [f64; 4],
}

/// The counterclockwise rotation generator, J = [[0, -1], [1, 0]].
pub const J: Mat2 = Mat2 {
    m: [0.0, -1.0, 1.0, 0.0],
};

impl Mat2 {
    pub const ZERO: Mat2 = Mat2 { m: [0.0; 4] };
    pub const IDENTITY: Mat2 = Mat2 {
        m: [1.0, 0.0, 0.0, 1.0],
    };

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2 { m: [a, b, c, d] }
    }

    /// Rotation matrix R(theta).
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Mat2::new(c, -s, s, c)
    }

    /// Rank-one matrix a (x) b, entries a_i b_j.
    pub fn outer(a: Vec2, b: Vec2) -> Self {
        Mat2::new(a.x * b.x, a.x * b.y, a.y * b.x, a.y * b.y)
    }

    pub fn from_rows(r0: Vec2, r1: Vec2) -> Self {
        Mat2::new(r0.x, r0.y, r1.x, r1.y)
    }

    pub fn row(self, i: usize) -> Vec2 {
        Vec2::new(self.m[2 * i], self.m[2 * i + 1])
    }

    pub fn col(self, j: usize) -> Vec2 {
        Vec2::new(self.m[j], self.m[2 + j])
    }

    pub fn det(self) -> f64 {
        self.m[0] * self.m[3] - self.m[1] * self.m[2]
    }

    pub fn trace(self) -> f64 {
        self.m[0] + self.m[3]
    }

    pub fn transpose(self) -> Self {
        Mat2::new(self.m[0], self.m[2], self.m[1], self.m[3])
    }

    pub fn inverse(self) -> Option<Self> {
        let d = self.det();
        if d.abs() < 1e-300 {
            return None;
        }
        Some(Mat2::new(
            self.m[3] / d,
            -self.m[1] / d,
            -self.m[2] / d,
            self.m[0] / d,
        ))
    }

    pub fn matmul(self, o: Mat2) -> Self {
        Mat2::new(
            self.m[0] * o.m[0] + self.m[1] * o.m[2],
            self.m[0] * o.m[1] + self.m[1] * o.m[3],
            self.m[2] * o.m[0] + self.m[3] * o.m[2],
            self.m[2] * o.m[1] + self.m[3] * o.m[3],
        )
    }

    pub fn apply(self, v: Vec2) -> Vec2 {
        Vec2::new(
            self.m[0] * v.x + self.m[1] * v.y,
            self.m[2] * v.x + self.m[3] * v.y,
        )
    }

    /// Frobenius inner product <A, B> = sum_ij A_ij B_ij.
    pub fn inner(self, o: Mat2) -> f64 {
        self.m[0] * o.m[0] + self.m[1] * o.m[1] + self.m[2] * o.m[2] + self.m[3] * o.m[3]
    }

    pub fn norm(self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn norm_sq(self) -> f64 {
        self.inner(self)
    }

    pub fn sym(self) -> Self {
        let off = 0.5 * (self.m[1] + self.m[2]);
        Mat2::new(self.m[0], off, off, self.m[3])
    }

    pub fn scale(self, t: f64) -> Self {
        Mat2::new(t * self.m[0], t * self.m[1], t * self.m[2], t * self.m[3])
    }

    /// Singular values (largest, smallest), both nonnegative.
    pub fn singular_values(self) -> (f64, f64) {
        // 2x2 closed form via the Frobenius norm and determinant.
        let f = self.norm_sq();
        let d = self.det().abs();
        let disc = (f * f / 4.0 - d * d).max(0.0).sqrt();
        let s1 = (f / 2.0 + disc).max(0.0).sqrt();
        let s2 = (f / 2.0 - disc).max(0.0).sqrt();
        (s1, s2)
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.m[0] + o.m[0],
            self.m[1] + o.m[1],
            self.m[2] + o.m[2],
            self.m[3] + o.m[3],
        )
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.m[0] - o.m[0],
            self.m[1] - o.m[1],
            self.m[2] - o.m[2],
            self.m[3] - o.m[3],
        )
    }
}

impl Neg for Mat2 {
    type Output = Mat2;
    fn neg(self) -> Mat2 {
        self.scale(-1.0)
    }
}

impl Mul<f64> for Mat2 {
    type Output = Mat2;
    fn mul(self, t: f64) -> Mat2 {
        self.scale(t)
    }
}

impl AddAssign for Mat2 {
    fn add_assign(&mut self, o: Mat2) {
        for i in 0..4 {
            self.m[i] += o.m[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rotation_is_orthogonal() {
        let r = Mat2::rotation(0.7);
        let rtr = r.transpose().matmul(r);
        assert_relative_eq!(rtr.m[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(rtr.m[3], 1.0, epsilon = 1e-14);
        assert!(rtr.m[1].abs() < 1e-14 && rtr.m[2].abs() < 1e-14);
        assert_relative_eq!(r.det(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn j_generates_rotations() {
        // d/dtheta R(theta) at 0 is J.
        let h = 1e-6;
        let fd = (Mat2::rotation(h) - Mat2::rotation(-h)).scale(0.5 / h);
        assert!((fd - J).norm() < 1e-9);
    }

    #[test]
    fn singular_values_match_diagonal() {
        let m = Mat2::new(3.0, 0.0, 0.0, -2.0);
        let (s1, s2) = m.singular_values();
        assert_relative_eq!(s1, 3.0, epsilon = 1e-12);
        assert_relative_eq!(s2, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn outer_product_rows() {
        let a = Vec2::new(1.0, 2.0);
        let b = Vec2::new(3.0, 4.0);
        let m = Mat2::outer(a, b);
        assert_eq!(m.row(0), Vec2::new(3.0, 4.0));
        assert_eq!(m.row(1), Vec2::new(6.0, 8.0));
    }
}
