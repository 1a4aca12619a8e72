//! Symmetric 2x2 / 3x3 tensors in compact storage.
//!
//! Components are stored as `[xx, zz, xz]` in two dimensions and
//! `[xx, yy, zz, yz, xz, xy]` in three. The Frobenius pairing counts every
//! off-diagonal entry twice, which is what [`Sym::mandel`] reproduces with
//! `sqrt(2)` weights.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sym<T> {
    dim: usize,
    c: [T; 6],
}

/// Number of independent components of a symmetric `dim x dim` matrix.
pub const fn ncomp(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

pub(crate) fn check_dim(dim: usize) -> Result<()> {
    if dim == 2 || dim == 3 {
        Ok(())
    } else {
        Err(Error::UnsupportedDim(dim))
    }
}

fn slot(dim: usize, i: usize, j: usize) -> usize {
    if i == j {
        return i;
    }
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    match (dim, a, b) {
        (2, 0, 1) => 2,
        (3, 1, 2) => 3,
        (3, 0, 2) => 4,
        (3, 0, 1) => 5,
        _ => unreachable!("index out of range"),
    }
}

impl<T: Scalar> Sym<T> {
    pub fn zeros(dim: usize) -> Self {
        debug_assert!(dim == 2 || dim == 3);
        Sym {
            dim,
            c: [T::zero(); 6],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut s = Self::zeros(dim);
        for i in 0..dim {
            s.c[i] = T::one();
        }
        s
    }

    /// Builds from raw compact components (length `ncomp(dim)`).
    pub fn from_components(dim: usize, comps: &[T]) -> Result<Self> {
        check_dim(dim)?;
        if comps.len() != ncomp(dim) {
            return Err(Error::DimensionMismatch {
                expected: ncomp(dim),
                found: comps.len(),
            });
        }
        let mut s = Self::zeros(dim);
        s.c[..comps.len()].copy_from_slice(comps);
        Ok(s)
    }

    /// Builds from a full row-major matrix, rejecting asymmetric input.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.len();
        check_dim(dim)?;
        let mut scale = T::zero();
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            for &x in r {
                scale = scale.max(x.abs());
            }
        }
        let mut s = Self::zeros(dim);
        let mut worst = T::zero();
        for i in 0..dim {
            for j in i..dim {
                let d = (rows[i][j] - rows[j][i]).abs();
                worst = worst.max(d);
                s.c[slot(dim, i, j)] = (rows[i][j] + rows[j][i]) * T::c(0.5);
            }
        }
        if worst > T::structural_tol() * scale {
            let rel = if scale > T::zero() { worst / scale } else { worst };
            return Err(Error::NotSymmetric(rel.f64()));
        }
        Ok(s)
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[T] {
        &self.c[..ncomp(self.dim)]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.c[slot(self.dim, i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.c[slot(self.dim, i, j)] = v;
    }

    pub fn trace(&self) -> T {
        let mut t = T::zero();
        for i in 0..self.dim {
            t = t + self.c[i];
        }
        t
    }

    /// Frobenius pairing `M : N`.
    pub fn dot(&self, o: &Self) -> T {
        debug_assert_eq!(self.dim, o.dim);
        let n = ncomp(self.dim);
        let mut diag = T::zero();
        let mut off = T::zero();
        for k in 0..self.dim {
            diag = diag + self.c[k] * o.c[k];
        }
        for k in self.dim..n {
            off = off + self.c[k] * o.c[k];
        }
        diag + off + off
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.components()
            .iter()
            .fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn scale(&self, s: T) -> Self {
        let mut r = *self;
        for x in r.c.iter_mut() {
            *x = *x * s;
        }
        r
    }

    /// `self + s * x`
    pub fn axpy(&self, s: T, x: &Self) -> Self {
        let mut r = *self;
        for k in 0..6 {
            r.c[k] = r.c[k] + s * x.c[k];
        }
        r
    }

    /// Orthonormal coordinates: off-diagonals scaled by `sqrt(2)`.
    pub fn mandel(&self) -> Vec<T> {
        let r2 = T::c(std::f64::consts::SQRT_2);
        self.components()
            .iter()
            .enumerate()
            .map(|(k, &x)| if k < self.dim { x } else { x * r2 })
            .collect()
    }

    pub fn from_mandel(dim: usize, v: &[T]) -> Result<Self> {
        let r2 = T::c(std::f64::consts::SQRT_2);
        let comps: Vec<T> = v
            .iter()
            .enumerate()
            .map(|(k, &x)| if k < dim { x } else { x / r2 })
            .collect();
        Self::from_components(dim, &comps)
    }

    /// Basis of symmetric matrices orthonormal under the Frobenius pairing.
    pub fn mandel_basis(dim: usize) -> Vec<Self> {
        (0..ncomp(dim))
            .map(|k| {
                let mut e = vec![T::zero(); ncomp(dim)];
                e[k] = T::one();
                Self::from_mandel(dim, &e).expect("valid dim")
            })
            .collect()
    }
}

impl<T: Scalar> Add for Sym<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        self.axpy(T::one(), &o)
    }
}

impl<T: Scalar> Sub for Sym<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self.axpy(-T::one(), &o)
    }
}

impl<T: Scalar> Neg for Sym<T> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-T::one())
    }
}

impl<T: Scalar> Mul<T> for Sym<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        self.scale(s)
    }
}
