use rayon::prelude::*;

use super::field::{Field5, ParameterField};
use super::grid::{Grid2D, Layout};
use crate::error::{Error, Result};
use crate::rheology::{
    b_maps, moduli_from_params, v_prime_maps, v_second_maps, BlockMaps, IsotropicMap,
    RelaxationSpec, RHO,
};

/// Gains `(a, b)` of the map `M -> a M + b tr(M) I`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Gains {
    pub a: f64,
    pub b: f64,
}

impl Gains {
    fn of(m: &IsotropicMap<f64>) -> Self {
        Gains {
            a: m.shear_gain(),
            b: m.trace_coeff(),
        }
    }

    #[inline]
    pub fn apply(&self, x: [f64; 3]) -> [f64; 3] {
        let t = self.b * (x[0] + x[1]);
        [self.a * x[0] + t, self.a * x[1] + t, self.a * x[2]]
    }

    /// `<G x, y>` in the Frobenius pairing (shear component counted twice).
    #[inline]
    pub fn pair(&self, x: [f64; 3], y: [f64; 3]) -> f64 {
        self.a * (x[0] * y[0] + x[1] * y[1] + 2.0 * x[2] * y[2]) + self.b * (x[0] + x[1]) * (y[0] + y[1])
    }
}

/// A block-diagonal operator on states: a scalar per node on the velocity,
/// one isotropic map per cell on the elastic stress and one shared by the
/// memory stresses.
#[derive(Clone, Debug, PartialEq)]
pub struct CellMaps {
    pub vel: Vec<f64>,
    pub stress: Vec<Gains>,
    pub memory: Vec<Gains>,
}

impl CellMaps {
    /// `out += s * M x`
    pub fn apply_add(&self, layout: &Layout, x: &[f64], s: f64, out: &mut [f64]) {
        for (n, f) in self.vel.iter().enumerate() {
            out[2 * n] += s * f * x[2 * n];
            out[2 * n + 1] += s * f * x[2 * n + 1];
        }
        for l in 0..layout.blocks {
            let r = layout.block(l);
            let g = if l == 0 { &self.stress } else { &self.memory };
            let (xb, ob) = (&x[r.clone()], &mut out[r]);
            for (c, gc) in g.iter().enumerate() {
                let y = gc.apply([xb[3 * c], xb[3 * c + 1], xb[3 * c + 2]]);
                ob[3 * c] += s * y[0];
                ob[3 * c + 1] += s * y[1];
                ob[3 * c + 2] += s * y[2];
            }
        }
    }
}

/// The discrete operators `A`, `B`, `B^{-1}`, `Q` for one material field.
#[derive(Clone, Debug)]
pub struct DiscreteOperators {
    pub grid: Grid2D,
    pub field: ParameterField,
    pub relax: RelaxationSpec<f64>,
    pub layout: Layout,
    rho_node: Vec<f64>,
    /// `B^{-1}` on the elastic and memory stress blocks per cell.
    binv_stress: Vec<Gains>,
    binv_memory: Vec<Gains>,
    decay: Vec<f64>,
    v_inst_max: f64,
}

/// Averaging weights from cells to a node.
fn node_average(grid: &Grid2D, i: usize, j: usize) -> Vec<(usize, f64)> {
    let cells: Vec<usize> = grid.node_cells(i, j).map(|(c, _, _)| c).collect();
    let w = 1.0 / cells.len() as f64;
    cells.into_iter().map(|c| (c, w)).collect()
}

impl DiscreteOperators {
    pub fn new(grid: Grid2D, field: ParameterField, relax: RelaxationSpec<f64>) -> Result<Self> {
        field.values.check_shape(grid.nx, grid.nz)?;
        field.check_finite()?;
        let alpha = relax.alpha();
        let rep = field.check(alpha);
        if !rep.admissible() {
            return Err(Error::Inadmissible(rep.summary()));
        }
        let layout = grid.layout(relax.mechanisms() + 1);
        let nc = grid.cells();
        let mut binv_stress = Vec::with_capacity(nc);
        let mut binv_memory = Vec::with_capacity(nc);
        let lmech = relax.mechanisms() as f64;
        let mut v_inst_max: f64 = 0.0;
        for c in 0..nc {
            let pt = field.point(c);
            let inv = b_maps(&pt, alpha, 2)?.invert()?;
            binv_stress.push(Gains::of(&inv.stress));
            binv_memory.push(Gains::of(&inv.memory));
            let md = moduli_from_params(&pt, alpha)?;
            v_inst_max = v_inst_max.max((md.pi * (1.0 + lmech * pt.tau_p)).sqrt());
            v_inst_max = v_inst_max.max((md.mu * (1.0 + lmech * pt.tau_s)).sqrt());
        }
        let mut rho_node = vec![0.0; grid.nodes()];
        for i in 0..=grid.nx {
            for j in 0..=grid.nz {
                rho_node[grid.node(i, j)] = node_average(&grid, i, j)
                    .iter()
                    .map(|(c, w)| w * field.values.data[RHO][*c])
                    .sum();
            }
        }
        let decay = relax.tau_sigma.iter().map(|t| 1.0 / t).collect();
        Ok(DiscreteOperators {
            grid,
            field,
            relax,
            layout,
            rho_node,
            binv_stress,
            binv_memory,
            decay,
            v_inst_max,
        })
    }

    /// Same operators with the memory decay switched off (`Q = 0`).
    pub fn without_decay(&self) -> Self {
        let mut o = self.clone();
        o.decay.iter_mut().for_each(|d| *d = 0.0);
        o
    }

    pub fn alpha(&self) -> f64 {
        self.relax.alpha()
    }

    pub fn zeros(&self) -> Vec<f64> {
        vec![0.0; self.layout.len()]
    }

    pub fn rho_node(&self) -> &[f64] {
        &self.rho_node
    }

    /// Largest unrelaxed wave speed over the grid.
    pub fn max_velocity(&self) -> f64 {
        self.v_inst_max
    }

    /// `min(0.4 h / v_max, min tau_sigma)`.
    pub fn cfl_limit(&self) -> f64 {
        let tmin = self.relax.tau_sigma.iter().cloned().fold(f64::INFINITY, f64::min);
        (0.4 * self.grid.h / self.v_inst_max).min(tmin)
    }

    pub fn recommended_dt(&self) -> f64 {
        self.cfl_limit()
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.grid.inner(&self.layout, a, b)
    }

    /// Strain of the node velocities into a cell tensor vector (`3 nc`).
    pub fn eps(&self, v: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let nz = g.nz;
        let s = 0.5 / g.h;
        let w = g.node_weights();
        let val = |n: usize, k: usize| if w[n] > 0.0 { v[2 * n + k] } else { 0.0 };
        out.par_chunks_mut(3 * nz).enumerate().for_each(|(i, row)| {
            for j in 0..nz {
                let n00 = i * (nz + 1) + j;
                let (n01, n10, n11) = (n00 + 1, n00 + nz + 1, n00 + nz + 2);
                let dx = |k| s * (val(n10, k) + val(n11, k) - val(n00, k) - val(n01, k));
                let dz = |k| s * (val(n01, k) + val(n11, k) - val(n00, k) - val(n10, k));
                row[3 * j] = dx(0);
                row[3 * j + 1] = dz(1);
                row[3 * j + 2] = 0.5 * (dz(0) + dx(1));
            }
        });
    }

    /// `Div = -W_v^{-1} Eps^T W_sigma` applied to a cell tensor vector.
    pub fn div(&self, tau: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let nz = g.nz;
        let s = 0.5 / g.h;
        let hh = g.h * g.h;
        out.par_chunks_mut(2 * (nz + 1)).enumerate().for_each(|(i, row)| {
            for j in 0..=nz {
                let n = i * (nz + 1) + j;
                let w = g.node_weight(n);
                if w == 0.0 {
                    row[2 * j] = 0.0;
                    row[2 * j + 1] = 0.0;
                    continue;
                }
                let (mut fx, mut fz) = (0.0, 0.0);
                for (c, right, low) in g.node_cells(i, j) {
                    let dx = if right { s } else { -s };
                    let dz = if low { s } else { -s };
                    let t = &tau[3 * c..3 * c + 3];
                    fx += dx * t[0] + dz * t[2];
                    fz += dz * t[1] + dx * t[2];
                }
                row[2 * j] = -hh * fx / w;
                row[2 * j + 1] = -hh * fz / w;
            }
        });
    }

    /// `out = -A y`: `(Div sum_l sigma_l, Eps v, ..., Eps v)`.
    pub fn neg_a(&self, y: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let lay = &self.layout;
        let nv = lay.vel_len();
        scratch.copy_from_slice(&y[lay.block(0)]);
        for l in 1..lay.blocks {
            for (s, x) in scratch.iter_mut().zip(&y[lay.block(l)]) {
                *s += x;
            }
        }
        self.div(scratch, &mut out[..nv]);
        let (head, tail) = out.split_at_mut(nv + lay.block_len());
        self.eps(&y[..nv], &mut head[nv..]);
        for chunk in tail.chunks_mut(lay.block_len()) {
            chunk.copy_from_slice(&head[nv..]);
        }
    }

    /// In-place `x <- s B^{-1} x`.
    pub fn b_inv_scaled(&self, x: &mut [f64], s: f64) {
        let lay = self.layout;
        let nv = lay.vel_len();
        for (n, r) in self.rho_node.iter().enumerate() {
            x[2 * n] *= s / r;
            x[2 * n + 1] *= s / r;
        }
        let (_, blocks) = x.split_at_mut(nv);
        blocks
            .par_chunks_mut(lay.block_len())
            .enumerate()
            .for_each(|(l, b)| {
                let g = if l == 0 { &self.binv_stress } else { &self.binv_memory };
                for (c, gc) in g.iter().enumerate() {
                    let y = gc.apply([b[3 * c], b[3 * c + 1], b[3 * c + 2]]);
                    b[3 * c] = s * y[0];
                    b[3 * c + 1] = s * y[1];
                    b[3 * c + 2] = s * y[2];
                }
            });
    }

    /// In-place `x <- B x`.
    pub fn apply_b(&self, x: &mut [f64]) {
        let lay = self.layout;
        for (n, r) in self.rho_node.iter().enumerate() {
            x[2 * n] *= r;
            x[2 * n + 1] *= r;
        }
        for l in 0..lay.blocks {
            let g = if l == 0 { &self.binv_stress } else { &self.binv_memory };
            let b = &mut x[lay.block(l)];
            for (c, gc) in g.iter().enumerate() {
                // inverse gains: a' = 1/a, b' = -b/(a(a + 2b))
                let inv = Gains {
                    a: 1.0 / gc.a,
                    b: -gc.b / (gc.a * (gc.a + 2.0 * gc.b)),
                };
                let y = inv.apply([b[3 * c], b[3 * c + 1], b[3 * c + 2]]);
                b[3 * c..3 * c + 3].copy_from_slice(&y);
            }
        }
    }

    /// `out += s Q y`
    pub fn q_add(&self, y: &[f64], s: f64, out: &mut [f64]) {
        for (l, d) in self.decay.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let r = self.layout.block(l + 1);
            for (o, x) in out[r.clone()].iter_mut().zip(&y[r]) {
                *o += s * d * x;
            }
        }
    }

    /// `<B u, u>`
    pub fn energy(&self, u: &[f64]) -> f64 {
        let mut bu = u.to_vec();
        self.apply_b(&mut bu);
        self.inner(&bu, u)
    }

    /// `<B^{-1} f, f>`
    pub fn dual_energy(&self, f: &[f64]) -> f64 {
        let mut bf = f.to_vec();
        self.b_inv_scaled(&mut bf, 1.0);
        self.inner(&bf, f)
    }

    fn per_cell(
        &self,
        f: impl Fn(usize) -> Result<(BlockMaps<f64>, f64)> + Sync,
        node_coeff: impl Fn(usize) -> f64,
    ) -> Result<CellMaps> {
        let nc = self.grid.cells();
        let maps: Vec<Result<(BlockMaps<f64>, f64)>> = (0..nc).into_par_iter().map(&f).collect();
        let mut stress = Vec::with_capacity(nc);
        let mut memory = Vec::with_capacity(nc);
        let mut cell_vel = Vec::with_capacity(nc);
        for m in maps {
            let (bm, v) = m?;
            stress.push(Gains::of(&bm.stress));
            memory.push(Gains::of(&bm.memory));
            cell_vel.push(v);
        }
        let g = &self.grid;
        let mut vel = vec![0.0; g.nodes()];
        for i in 0..=g.nx {
            for j in 0..=g.nz {
                let n = g.node(i, j);
                let avg: f64 = node_average(g, i, j).iter().map(|(c, w)| w * cell_vel[*c]).sum();
                vel[n] = node_coeff(n) * avg;
            }
        }
        Ok(CellMaps {
            vel,
            stress,
            memory,
        })
    }

    /// `V'(p) dir`: velocity block carries the node-averaged density.
    pub fn v_prime(&self, dir: &Field5) -> Result<CellMaps> {
        dir.check_shape(self.grid.nx, self.grid.nz)?;
        let a = self.alpha();
        self.per_cell(
            |c| {
                let m = v_prime_maps(&self.field.point(c), a, &dir.at(c), 2)?;
                Ok((m, m.vel))
            },
            |_| 1.0,
        )
    }

    /// `V''(p)[d1, d2]` (zero on the velocity).
    pub fn v_second(&self, d1: &Field5, d2: &Field5) -> Result<CellMaps> {
        d1.check_shape(self.grid.nx, self.grid.nz)?;
        d2.check_shape(self.grid.nx, self.grid.nz)?;
        let a = self.alpha();
        self.per_cell(
            |c| {
                let m = v_second_maps(&self.field.point(c), a, &d1.at(c), &d2.at(c), 2)?;
                Ok((m, 0.0))
            },
            |_| 0.0,
        )
    }

    /// `G(dir) = -B^{-1} V'(p) dir`, the source map of the linearized system.
    pub fn pullback(&self, dir: &Field5) -> Result<CellMaps> {
        dir.check_shape(self.grid.nx, self.grid.nz)?;
        let a = self.alpha();
        self.per_cell(
            |c| {
                let pt = self.field.point(c);
                let binv = b_maps(&pt, a, 2)?.invert()?;
                let m = binv.compose(&v_prime_maps(&pt, a, &dir.at(c), 2)?).scale(-1.0);
                Ok((m, dir.at(c)[RHO]))
            },
            |n| -1.0 / self.rho_node[n],
        )
    }

    /// `-B^{-1} V''(p)[d1, d2]`.
    pub fn pullback2(&self, d1: &Field5, d2: &Field5) -> Result<CellMaps> {
        d1.check_shape(self.grid.nx, self.grid.nz)?;
        d2.check_shape(self.grid.nx, self.grid.nz)?;
        let a = self.alpha();
        self.per_cell(
            |c| {
                let pt = self.field.point(c);
                let binv = b_maps(&pt, a, 2)?.invert()?;
                let m = binv
                    .compose(&v_second_maps(&pt, a, &d1.at(c), &d2.at(c), 2)?)
                    .scale(-1.0);
                Ok((m, 0.0))
            },
            |_| 0.0,
        )
    }

    /// Transpose of the cell-to-node density averaging: spreads a node
    /// quantity back onto the cells.
    pub fn node_to_cells(&self, node_vals: &[f64], cells: &mut [f64]) {
        let g = &self.grid;
        for i in 0..=g.nx {
            for j in 0..=g.nz {
                let x = node_vals[g.node(i, j)];
                if x != 0.0 {
                    for (c, w) in node_average(g, i, j) {
                        cells[c] += w * x;
                    }
                }
            }
        }
    }
}

/// `V'(p) e_k` for the five unit directions at one cell.
#[derive(Clone, Copy, Debug, Default)]
pub struct UnitMaps {
    pub stress: [Gains; 5],
    pub memory: [Gains; 5],
}

impl DiscreteOperators {
    /// Per-cell `V'(p) e_k`, `k = rho, vS, tauS, vP, tauP`.
    pub fn unit_v_prime(&self) -> Result<Vec<UnitMaps>> {
        let a = self.alpha();
        self.units(|pt, e| v_prime_maps(pt, a, e, 2))
    }

    /// Per-cell `V''(p)[dir, e_k]`.
    pub fn unit_v_second(&self, dir: &Field5) -> Result<Vec<UnitMaps>> {
        dir.check_shape(self.grid.nx, self.grid.nz)?;
        let a = self.alpha();
        let cells: Vec<usize> = (0..self.grid.cells()).collect();
        cells
            .into_par_iter()
            .map(|c| {
                let pt = self.field.point(c);
                let d = dir.at(c);
                unit_maps(|e| v_second_maps(&pt, a, &d, e, 2))
            })
            .collect()
    }

    fn units(
        &self,
        f: impl Fn(&crate::rheology::ParameterPoint<f64>, &[f64; 5]) -> Result<BlockMaps<f64>> + Sync,
    ) -> Result<Vec<UnitMaps>> {
        (0..self.grid.cells())
            .into_par_iter()
            .map(|c| {
                let pt = self.field.point(c);
                unit_maps(|e| f(&pt, e))
            })
            .collect()
    }

    /// `grad_k += s <M_k z, w>` for every cell and parameter `k`, where
    /// `M_k` are per-cell unit maps. With `density_velocity` the velocity
    /// block of `M_k` is the derivative of the node-averaged density.
    pub fn accumulate_units(
        &self,
        units: &[UnitMaps],
        z: &[f64],
        w: &[f64],
        s: f64,
        density_velocity: bool,
        grad: &mut Field5,
    ) {
        let lay = self.layout;
        let g = &self.grid;
        let hh = g.h * g.h;
        if density_velocity {
            let mut node = vec![0.0; g.nodes()];
            for (n, x) in node.iter_mut().enumerate() {
                let wt = g.node_weight(n);
                if wt > 0.0 {
                    *x = s * wt * (z[2 * n] * w[2 * n] + z[2 * n + 1] * w[2 * n + 1]);
                }
            }
            self.node_to_cells(&node, &mut grad.data[RHO]);
        }
        let b0 = lay.block(0).start;
        for (c, u) in units.iter().enumerate() {
            let at = |l: usize, v: &[f64]| {
                let o = b0 + l * lay.block_len() + 3 * c;
                [v[o], v[o + 1], v[o + 2]]
            };
            let (z0, w0) = (at(0, z), at(0, w));
            // memory blocks share one map: accumulate the two invariants
            let (mut pm, mut tm) = (0.0, 0.0);
            for l in 1..lay.blocks {
                let (zl, wl) = (at(l, z), at(l, w));
                pm += zl[0] * wl[0] + zl[1] * wl[1] + 2.0 * zl[2] * wl[2];
                tm += (zl[0] + zl[1]) * (wl[0] + wl[1]);
            }
            for k in 0..5 {
                let v = u.stress[k].pair(z0, w0) + u.memory[k].a * pm + u.memory[k].b * tm;
                grad.data[k][c] += s * hh * v;
            }
        }
    }
}

fn unit_maps(f: impl Fn(&[f64; 5]) -> Result<BlockMaps<f64>>) -> Result<UnitMaps> {
    let mut u = UnitMaps::default();
    for k in 0..5 {
        let mut e = [0.0; 5];
        e[k] = 1.0;
        let m = f(&e)?;
        u.stress[k] = Gains::of(&m.stress);
        u.memory[k] = Gains::of(&m.memory);
    }
    Ok(u)
}
