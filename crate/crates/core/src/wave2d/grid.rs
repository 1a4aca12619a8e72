use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary condition on one side of the box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    /// `v = 0`
    Dirichlet,
    /// Zero traction of the summed stress, imposed weakly.
    TractionFree,
}

/// Conditions on the four sides: `left` at `x = 0`, `top` at `z = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Boundary {
    pub left: Side,
    pub right: Side,
    pub top: Side,
    pub bottom: Side,
}

impl Boundary {
    pub fn all_dirichlet() -> Self {
        Boundary {
            left: Side::Dirichlet,
            right: Side::Dirichlet,
            top: Side::Dirichlet,
            bottom: Side::Dirichlet,
        }
    }

    pub fn free_surface_top() -> Self {
        Boundary {
            top: Side::TractionFree,
            ..Self::all_dirichlet()
        }
    }
}

impl Default for Boundary {
    fn default() -> Self {
        Self::all_dirichlet()
    }
}

/// Offsets of the state blocks in a flat vector: interleaved `(vx, vz)` per
/// node, then `blocks` tensor blocks of `(xx, zz, xz)` per cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub nx: usize,
    pub nz: usize,
    pub blocks: usize,
}

impl Layout {
    pub fn nodes(&self) -> usize {
        (self.nx + 1) * (self.nz + 1)
    }

    pub fn cells(&self) -> usize {
        self.nx * self.nz
    }

    pub fn vel_len(&self) -> usize {
        2 * self.nodes()
    }

    pub fn block_len(&self) -> usize {
        3 * self.cells()
    }

    pub fn block(&self, l: usize) -> std::ops::Range<usize> {
        let o = self.vel_len() + l * self.block_len();
        o..o + self.block_len()
    }

    pub fn len(&self) -> usize {
        self.vel_len() + self.blocks * self.block_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Uniform grid of `nx x nz` square cells with spacing `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid2D {
    pub nx: usize,
    pub nz: usize,
    pub h: f64,
    pub boundary: Boundary,
    node_weight: Vec<f64>,
}

impl Grid2D {
    pub fn new(nx: usize, nz: usize, h: f64, boundary: Boundary) -> Result<Self> {
        if nx < 8 || nz < 8 {
            return Err(Error::GridTooSmall { nx, nz });
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("grid spacing {h} must be positive")));
        }
        let mut node_weight = vec![0.0; (nx + 1) * (nz + 1)];
        for i in 0..=nx {
            for j in 0..=nz {
                let sides = [
                    (i == 0, boundary.left),
                    (i == nx, boundary.right),
                    (j == 0, boundary.top),
                    (j == nz, boundary.bottom),
                ];
                let mut w = h * h;
                for (on, side) in sides {
                    if on {
                        match side {
                            Side::Dirichlet => w = 0.0,
                            Side::TractionFree => w *= 0.5,
                        }
                    }
                }
                node_weight[i * (nz + 1) + j] = w;
            }
        }
        Ok(Grid2D {
            nx,
            nz,
            h,
            boundary,
            node_weight,
        })
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        i * (self.nz + 1) + j
    }

    pub fn cell(&self, i: usize, j: usize) -> usize {
        i * self.nz + j
    }

    pub fn nodes(&self) -> usize {
        (self.nx + 1) * (self.nz + 1)
    }

    pub fn cells(&self) -> usize {
        self.nx * self.nz
    }

    /// Quadrature weight of a node; zero on Dirichlet sides.
    pub fn node_weight(&self, n: usize) -> f64 {
        self.node_weight[n]
    }

    pub fn node_weights(&self) -> &[f64] {
        &self.node_weight
    }

    pub fn is_active(&self, n: usize) -> bool {
        self.node_weight[n] > 0.0
    }

    pub fn layout(&self, blocks: usize) -> Layout {
        Layout {
            nx: self.nx,
            nz: self.nz,
            blocks,
        }
    }

    /// Grid inner product: node weights on velocities, `h^2` on tensors
    /// with the shear component counted twice. Sequential summation.
    pub fn inner(&self, layout: &Layout, a: &[f64], b: &[f64]) -> f64 {
        let nv = layout.vel_len();
        let mut sv = 0.0;
        for n in 0..layout.nodes() {
            let w = self.node_weight[n];
            if w > 0.0 {
                sv += w * (a[2 * n] * b[2 * n] + a[2 * n + 1] * b[2 * n + 1]);
            }
        }
        let mut st = 0.0;
        for k in (nv..layout.len()).step_by(3) {
            st += a[k] * b[k] + a[k + 1] * b[k + 1] + 2.0 * a[k + 2] * b[k + 2];
        }
        sv + self.h * self.h * st
    }

    /// Zeroes velocities on inactive nodes.
    pub fn project(&self, v: &mut [f64]) {
        for n in 0..self.nodes() {
            if self.node_weight[n] == 0.0 {
                v[2 * n] = 0.0;
                v[2 * n + 1] = 0.0;
            }
        }
    }

    /// Adjacent cells of a node with the node's corner position in each cell.
    pub(crate) fn node_cells(&self, i: usize, j: usize) -> impl Iterator<Item = (usize, bool, bool)> + '_ {
        let (nx, nz) = (self.nx, self.nz);
        [(0usize, 0usize), (0, 1), (1, 0), (1, 1)]
            .into_iter()
            .filter_map(move |(di, dj)| {
                // cell (i - di, j - dj) holds the node at local corner (di, dj)
                if i >= di && j >= dj && i - di < nx && j - dj < nz {
                    Some(((i - di) * nz + (j - dj), di == 1, dj == 1))
                } else {
                    None
                }
            })
    }

    /// Physical coordinates of a cell centre.
    pub fn cell_center(&self, c: usize) -> (f64, f64) {
        let (i, j) = (c / self.nz, c % self.nz);
        ((i as f64 + 0.5) * self.h, (j as f64 + 0.5) * self.h)
    }
}
