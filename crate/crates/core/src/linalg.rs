//! 2-component vectors and 2x2 matrices. Every Jacobian block in the system
//! couples a pair of quantities ((rho, y) for cells, (p, v) for vehicles), so
//! a fixed-size type is all the linear algebra the workspace needs.

use serde::{Deserialize, Serialize};

/// Pair of floats; used both for states and for gradient components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2(pub f64, pub f64);

impl Vec2 {
    pub const ZERO: Vec2 = Vec2(0.0, 0.0);

    pub fn dot(self, other: Vec2) -> f64 {
        self.0 * other.0 + self.1 * other.1
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2(self.0 * s, self.1 * s)
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite() && self.1.is_finite()
    }

    /// Component-wise clamp of the magnitude to `cap`.
    pub fn clip(self, cap: f64) -> Vec2 {
        Vec2(self.0.clamp(-cap, cap), self.1.clamp(-cap, cap))
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2(self.0 + rhs.0, self.1 + rhs.1)
    }
}

impl std::ops::AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.0 += rhs.0;
        self.1 += rhs.1;
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2(self.0 - rhs.0, self.1 - rhs.1)
    }
}

/// Row-major 2x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const ZERO: Mat2 = Mat2([[0.0, 0.0], [0.0, 0.0]]);
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn mul_vec(self, v: Vec2) -> Vec2 {
        Vec2(
            self.0[0][0] * v.0 + self.0[0][1] * v.1,
            self.0[1][0] * v.0 + self.0[1][1] * v.1,
        )
    }

    /// Transposed product `A^T v`; the reverse sweep applies every block this way.
    pub fn tr_mul_vec(self, v: Vec2) -> Vec2 {
        Vec2(
            self.0[0][0] * v.0 + self.0[1][0] * v.1,
            self.0[0][1] * v.0 + self.0[1][1] * v.1,
        )
    }

    pub fn mul_mat(self, rhs: Mat2) -> Mat2 {
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = self.0[i][0] * rhs.0[0][j] + self.0[i][1] * rhs.0[1][j];
            }
        }
        Mat2(out)
    }

    pub fn scale(self, s: f64) -> Mat2 {
        Mat2([
            [self.0[0][0] * s, self.0[0][1] * s],
            [self.0[1][0] * s, self.0[1][1] * s],
        ])
    }

    /// Columns give the derivative of each output w.r.t. (first, second) input.
    pub fn from_rows(r0: [f64; 2], r1: [f64; 2]) -> Mat2 {
        Mat2([r0, r1])
    }

    pub fn is_finite(self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(self, other: Mat2) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                m = m.max((self.0[i][j] - other.0[i][j]).abs());
            }
        }
        m
    }
}

impl std::ops::Add for Mat2 {
    type Output = Mat2;
    fn add(self, rhs: Mat2) -> Mat2 {
        Mat2([
            [self.0[0][0] + rhs.0[0][0], self.0[0][1] + rhs.0[0][1]],
            [self.0[1][0] + rhs.0[1][0], self.0[1][1] + rhs.0[1][1]],
        ])
    }
}

impl std::ops::Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, rhs: Mat2) -> Mat2 {
        Mat2([
            [self.0[0][0] - rhs.0[0][0], self.0[0][1] - rhs.0[0][1]],
            [self.0[1][0] - rhs.0[1][0], self.0[1][1] - rhs.0[1][1]],
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_product_matches_explicit_transpose() {
        let m = Mat2([[1.0, 2.0], [3.0, 4.0]]);
        let v = Vec2(5.0, -1.0);
        assert_eq!(m.tr_mul_vec(v), Vec2(1.0 * 5.0 + 3.0 * -1.0, 2.0 * 5.0 + 4.0 * -1.0));
    }

    #[test]
    fn matrix_product_against_hand_computation() {
        let a = Mat2([[1.0, 2.0], [0.0, 1.0]]);
        let b = Mat2([[3.0, 0.0], [1.0, 2.0]]);
        assert_eq!(a.mul_mat(b), Mat2([[5.0, 4.0], [1.0, 2.0]]));
    }

    #[test]
    fn clip_caps_each_component() {
        assert_eq!(Vec2(10.0, -0.5).clip(1.0), Vec2(1.0, -0.5));
    }
}
