//! Minimal fixed-size vectors, 3x3 matrices, and a row-major matrix buffer.

use std::ops::{Add, Mul, Neg, Sub};

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Vec3<F> {
    pub x: F,
    pub y: F,
    pub z: F,
}

impl<F: Real> Vec3<F> {
    pub fn new(x: F, y: F, z: F) -> Self {
        Self { x, y, z }
    }

    pub fn zeros() -> Self {
        Self::new(F::zero(), F::zero(), F::zero())
    }

    pub fn dot(self, o: Self) -> F {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> F {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n > F::zero() {
            self * (F::one() / n)
        } else {
            self
        }
    }

    pub fn scale(self, s: F) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn to_array(self) -> [F; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [F; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn widen(self) -> Vec3<f64> {
        Vec3::new(self.x.widen(), self.y.widen(), self.z.widen())
    }
}

impl<F: Real> Add for Vec3<F> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<F: Real> Sub for Vec3<F> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<F: Real> Mul<F> for Vec3<F> {
    type Output = Self;
    fn mul(self, s: F) -> Self {
        self.scale(s)
    }
}

impl<F: Real> Neg for Vec3<F> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3<F> {
    pub rows: [[F; 3]; 3],
}

impl<F: Real> Mat3<F> {
    pub fn identity() -> Self {
        let (o, z) = (F::one(), F::zero());
        Self {
            rows: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    pub fn from_rows(r0: Vec3<F>, r1: Vec3<F>, r2: Vec3<F>) -> Self {
        Self {
            rows: [r0.to_array(), r1.to_array(), r2.to_array()],
        }
    }

    pub fn from_cols(c0: Vec3<F>, c1: Vec3<F>, c2: Vec3<F>) -> Self {
        Self {
            rows: [
                [c0.x, c1.x, c2.x],
                [c0.y, c1.y, c2.y],
                [c0.z, c1.z, c2.z],
            ],
        }
    }

    pub fn transpose(self) -> Self {
        let r = self.rows;
        Self {
            rows: [
                [r[0][0], r[1][0], r[2][0]],
                [r[0][1], r[1][1], r[2][1]],
                [r[0][2], r[1][2], r[2][2]],
            ],
        }
    }

    pub fn mul_vec(self, v: Vec3<F>) -> Vec3<F> {
        let r = self.rows;
        Vec3::new(
            r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z,
            r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z,
            r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z,
        )
    }

    pub fn mul_mat(self, o: Self) -> Self {
        let mut out = [[F::zero(); 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let mut acc = F::zero();
                for k in 0..3 {
                    acc += self.rows[i][k] * o.rows[k][j];
                }
                *cell = acc;
            }
        }
        Self { rows: out }
    }

    pub fn det(self) -> F {
        let r = self.rows;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }
}

/// Dense row-major matrix used for feature batches and parameter gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Real> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }
}

pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = F::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

pub fn norm<F: Real>(a: &[F]) -> F {
    dot(a, a).sqrt()
}
