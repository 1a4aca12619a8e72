//! JSON run configuration shared by the CLI and the test harness.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rheology::{ParameterBounds, ParameterPoint, RelaxationSpec};
use crate::wave2d::{io, Boundary, Component, DiscreteOperators, Field5, Grid2D, ParameterField, PointSource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxationConfig {
    pub mechanisms: usize,
    pub omega0: f64,
    /// `omega0 * tau_sigma`, shared by all mechanisms.
    pub omega_tau: f64,
}

impl Default for RelaxationConfig {
    fn default() -> Self {
        RelaxationConfig {
            mechanisms: 1,
            omega0: 2.0 * std::f64::consts::PI * 0.06,
            omega_tau: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ModelConfig {
    /// One point everywhere.
    Homogeneous { point: ParameterPoint<f64> },
    /// Box midpoint plus a random smooth perturbation of relative size
    /// `amplitude` (fraction of the half-width).
    Smooth { seed: u64, amplitude: f64 },
    /// A VAF1 parameter file.
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    /// Node indices `(i, j)`.
    pub at: (usize, usize),
    pub component: Component,
    pub amplitude: f64,
    pub f0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub nx: usize,
    pub nz: usize,
    pub h: f64,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub boundary: Boundary,
    #[serde(default)]
    pub relaxation: RelaxationConfig,
    #[serde(default = "default_bounds")]
    pub bounds: ParameterBounds<f64>,
    pub model: ModelConfig,
    pub source: SourceConfig,
    /// Receiver nodes `(i, j)`.
    #[serde(default)]
    pub receivers: Vec<(usize, usize)>,
    /// Seed for every random draw made on behalf of this run.
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    1
}

pub fn default_bounds() -> ParameterBounds<f64> {
    ParameterBounds::new(
        ParameterPoint::new(1.0, 1.0, 0.3, 3.0, 0.3),
        ParameterPoint::new(1.2, 1.1, 0.4, 3.3, 0.4),
    )
}

impl RunConfig {
    /// `n x n` cells with a central source and a receiver line near the top.
    pub fn square(n: usize, h: f64, dt: f64, t_end: f64) -> Self {
        let m = n / 2;
        let row = (n / 8).max(2);
        let receivers = (1..8).map(|k| (k * n / 8, row)).collect();
        RunConfig {
            nx: n,
            nz: n,
            h,
            dt,
            t_end,
            boundary: Boundary::default(),
            relaxation: RelaxationConfig::default(),
            bounds: default_bounds(),
            model: ModelConfig::Smooth {
                seed: 7,
                amplitude: 0.6,
            },
            source: SourceConfig {
                at: (m, m),
                component: Component::Z,
                amplitude: 1.0,
                f0: 0.06,
            },
            receivers,
            seed: default_seed(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let s = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let c: RunConfig = serde_json::from_str(&s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.dt > 0.0 && self.t_end > 0.0) {
            return Err(Error::Config("h, dt and t_end must be positive".into()));
        }
        if self.nt() == 0 {
            return Err(Error::Config("t_end shorter than one step".into()));
        }
        for &(i, j) in self.receivers.iter().chain(std::iter::once(&self.source.at)) {
            if i > self.nx || j > self.nz {
                return Err(Error::Config(format!("node ({i}, {j}) outside the grid")));
            }
        }
        Ok(())
    }

    pub fn nt(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::new(self.nx, self.nz, self.h, self.boundary)
    }

    pub fn relaxation(&self) -> Result<RelaxationSpec<f64>> {
        let r = &self.relaxation;
        RelaxationSpec::uniform(r.mechanisms, r.omega0, r.omega_tau)
    }

    pub fn parameter_field(&self) -> Result<ParameterField> {
        let (nx, nz) = (self.nx, self.nz);
        let values = match &self.model {
            ModelConfig::Homogeneous { point } => Field5::constant(nx, nz, point.to_array()),
            ModelConfig::Smooth { seed, amplitude } => smooth_field(nx, nz, &self.bounds, *seed, *amplitude),
            ModelConfig::File { path } => io::read_parameters(path)?,
        };
        values.check_shape(nx, nz)?;
        Ok(ParameterField::new(values, self.bounds))
    }

    pub fn operators(&self) -> Result<DiscreteOperators> {
        DiscreteOperators::new(self.grid()?, self.parameter_field()?, self.relaxation()?)
    }

    pub fn point_source(&self, grid: &Grid2D) -> Result<PointSource> {
        let s = &self.source;
        PointSource::new(grid, s.at, s.component, s.amplitude, s.f0, self.dt, self.nt())
    }

    pub fn receiver_nodes(&self, grid: &Grid2D) -> Vec<usize> {
        self.receivers.iter().map(|&(i, j)| grid.node(i, j)).collect()
    }
}

/// Smooth random field: box midpoint plus `amplitude` times the half-width
/// times a normalized sum of low Fourier modes, per parameter.
pub fn smooth_field(nx: usize, nz: usize, bounds: &ParameterBounds<f64>, seed: u64, amplitude: f64) -> Field5 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mid = bounds.mid().to_array();
    let w = bounds.width();
    let mut out = Field5::zeros(nx, nz);
    for k in 0..5 {
        let modes: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    rng.gen_range(0.5..2.5),
                    rng.gen_range(0.5..2.5),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let raw: Vec<f64> = (0..nx * nz)
            .map(|c| {
                let (x, z) = ((c / nz) as f64 + 0.5, (c % nz) as f64 + 0.5);
                modes
                    .iter()
                    .map(|(kx, kz, ph, a)| {
                        a * (std::f64::consts::PI * (kx * x / nx as f64 + kz * z / nz as f64) + ph).sin()
                    })
                    .sum()
            })
            .collect();
        let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for (c, r) in raw.iter().enumerate() {
            out.data[k][c] = mid[k] + amplitude * 0.5 * w[k] * r / peak;
        }
    }
    out
}
