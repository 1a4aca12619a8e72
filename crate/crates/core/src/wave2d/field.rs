use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rheology::{
    check_parameter_domain, AdmissibilityReport, ParameterBounds, ParameterPoint, PARAM_NAMES,
};

/// Five cell grids in the parameter order `(rho, vS, tauS, vP, tauP)`.
///
/// Used for material fields, perturbation directions and gradients.
/// Gradients carry the cell weight `h^2`, so [`Field5::dot`] is a plain sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field5 {
    pub nx: usize,
    pub nz: usize,
    pub data: [Vec<f64>; 5],
}

impl Field5 {
    pub fn zeros(nx: usize, nz: usize) -> Self {
        let z = vec![0.0; nx * nz];
        Field5 {
            nx,
            nz,
            data: [z.clone(), z.clone(), z.clone(), z.clone(), z],
        }
    }

    pub fn constant(nx: usize, nz: usize, v: [f64; 5]) -> Self {
        let mut f = Self::zeros(nx, nz);
        for k in 0..5 {
            f.data[k].fill(v[k]);
        }
        f
    }

    pub fn from_fn(nx: usize, nz: usize, f: impl Fn(usize, usize) -> [f64; 5]) -> Self {
        let mut out = Self::zeros(nx, nz);
        for i in 0..nx {
            for j in 0..nz {
                let v = f(i, j);
                for k in 0..5 {
                    out.data[k][i * nz + j] = v[k];
                }
            }
        }
        out
    }

    pub fn cells(&self) -> usize {
        self.nx * self.nz
    }

    pub fn at(&self, c: usize) -> [f64; 5] {
        [
            self.data[0][c],
            self.data[1][c],
            self.data[2][c],
            self.data[3][c],
            self.data[4][c],
        ]
    }

    pub fn check_shape(&self, nx: usize, nz: usize) -> Result<()> {
        if self.nx != nx || self.nz != nz || self.data.iter().any(|d| d.len() != nx * nz) {
            return Err(Error::Mismatch(format!(
                "field is {}x{}, expected {nx}x{nz}",
                self.nx, self.nz
            )));
        }
        Ok(())
    }

    pub fn dot(&self, o: &Self) -> f64 {
        let mut s = 0.0;
        for k in 0..5 {
            for (a, b) in self.data[k].iter().zip(&o.data[k]) {
                s += a * b;
            }
        }
        s
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .flatten()
            .fold(0.0, |m: f64, x| m.max(x.abs()))
    }

    /// `self + s * o`
    pub fn axpy(&self, s: f64, o: &Self) -> Self {
        let mut r = self.clone();
        for k in 0..5 {
            for (a, b) in r.data[k].iter_mut().zip(&o.data[k]) {
                *a += s * b;
            }
        }
        r
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::zeros(self.nx, self.nz).axpy(s, self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|x| x.is_finite())
    }
}

/// Material parameters on the cells together with the admissible box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterField {
    pub values: Field5,
    pub bounds: ParameterBounds<f64>,
}

impl ParameterField {
    pub fn new(values: Field5, bounds: ParameterBounds<f64>) -> Self {
        ParameterField { values, bounds }
    }

    pub fn constant(nx: usize, nz: usize, pt: ParameterPoint<f64>, bounds: ParameterBounds<f64>) -> Self {
        Self::new(Field5::constant(nx, nz, pt.to_array()), bounds)
    }

    pub fn nx(&self) -> usize {
        self.values.nx
    }

    pub fn nz(&self) -> usize {
        self.values.nz
    }

    pub fn point(&self, c: usize) -> ParameterPoint<f64> {
        ParameterPoint::from_array(self.values.at(c))
    }

    pub fn points(&self) -> impl Iterator<Item = ParameterPoint<f64>> + '_ {
        (0..self.values.cells()).map(|c| self.point(c))
    }

    pub fn check(&self, alpha: f64) -> AdmissibilityReport {
        check_parameter_domain(self.points(), &self.bounds, alpha, 2)
    }

    /// Smallest relative distance of any cell to the box boundary.
    pub fn interior_margin(&self) -> f64 {
        self.points()
            .map(|p| self.bounds.interior_margin(&p))
            .fold(f64::INFINITY, f64::min)
    }

    /// `p + s * dir`
    pub fn offset(&self, s: f64, dir: &Field5) -> Self {
        Self::new(self.values.axpy(s, dir), self.bounds)
    }

    /// Errors unless every parameter is finite and positive.
    pub fn check_finite(&self) -> Result<()> {
        for k in 0..5 {
            if let Some(x) = self.values.data[k].iter().find(|x| !(x.is_finite() && **x > 0.0)) {
                return Err(Error::Nonpositive(format!("{} = {x}", PARAM_NAMES[k])));
            }
        }
        Ok(())
    }
}
