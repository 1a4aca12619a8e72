//! Forward operator from material parameters to wavefields and its
//! derivatives and adjoints.
//!
//! The material map enters the wave equation through `B = V(p)`. The
//! adjoints assemble per-cell integrands from the forward, linearized and
//! adjoint wavefields; [`Assembly::Formulas`] evaluates the closed-form
//! combinations in [`quantities`], [`Assembly::Generic`] pairs the
//! per-cell material derivatives directly. The two agree to rounding.

pub mod quantities;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rheology::RHO;
use crate::sym::Sym;
use crate::wave2d::{
    drives_at_steps, run_adjoint_continuous, run_adjoint_discrete, run_forward, run_linearized,
    run_second_adjoint_continuous, run_second_linearized, trapezoid_weights, AdjointMode, DiscreteOperators,
    Forcing, RecordedWavefield, Src,
};
use quantities::{first_order_rows, gamma_rows, upsilon_rows, PointData};

pub use crate::wave2d::{AdjointData, ParameterField};

/// Five cell grids of sensitivities, carrying the cell weight `h^2`.
pub type GradientField = crate::wave2d::Field5;

/// Required relative distance to the box boundary for derivative calls.
pub const INTERIOR_MARGIN: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assembly {
    Generic,
    Formulas,
}

fn check_onset(src: &dyn Forcing) -> Result<()> {
    if !src.smooth_onset() {
        return Err(Error::Smoothness(
            "second derivatives need a source vanishing to second order at t = 0".into(),
        ));
    }
    Ok(())
}

pub fn check_interior(ops: &DiscreteOperators) -> Result<()> {
    let m = ops.field.interior_margin();
    if m < INTERIOR_MARGIN {
        return Err(Error::NotInterior(format!(
            "relative margin {m:.3e} below {INTERIOR_MARGIN}"
        )));
    }
    Ok(())
}

fn point_data(ops: &DiscreteOperators) -> Result<Vec<PointData<f64>>> {
    let a = ops.alpha();
    (0..ops.grid.cells())
        .into_par_iter()
        .map(|c| PointData::new(&ops.field.point(c), a, 2))
        .collect()
}

/// Forward wavefield.
pub fn phi(ops: &DiscreteOperators, src: &dyn Forcing, dt: f64, nt: usize) -> Result<RecordedWavefield> {
    run_forward(ops, src, dt, nt)
}

/// Derivative of the wavefield along `dir`.
pub fn phi_prime(
    ops: &DiscreteOperators,
    dir: &GradientField,
    base: &RecordedWavefield,
    src: &dyn Forcing,
) -> Result<RecordedWavefield> {
    check_interior(ops)?;
    run_linearized(ops, dir, base, src)
}

/// Second derivative of the wavefield along `(d1, d2)`.
pub fn phi_second(
    ops: &DiscreteOperators,
    d1: &GradientField,
    d2: &GradientField,
    base: &RecordedWavefield,
    src: &dyn Forcing,
) -> Result<RecordedWavefield> {
    check_interior(ops)?;
    check_onset(src)?;
    let l1 = run_linearized(ops, d1, base, src)?;
    let l2 = if d1 == d2 { l1.clone() } else { run_linearized(ops, d2, base, src)? };
    let (cross, curv) = run_second_linearized(ops, d1, d2, base, &l1, &l2, src)?;
    Ok(cross.axpy(1.0, &curv))
}

fn check_data(g: &AdjointData, base: &RecordedWavefield) -> Result<()> {
    if g.steps() != base.nt {
        return Err(Error::Mismatch(format!(
            "adjoint data has {} steps, wavefield has {}",
            g.steps(),
            base.nt
        )));
    }
    if let AdjointData::Dense(v) = g {
        if v.iter().any(|x| x.len() != base.layout.len()) {
            return Err(Error::Mismatch("dense adjoint data of the wrong length".into()));
        }
    }
    Ok(())
}

/// Tensor of block `l` at cell `c`.
fn sym_at(ops: &DiscreteOperators, x: &[f64], l: usize, c: usize) -> Sym<f64> {
    let o = ops.layout.block(l).start + 3 * c;
    Sym::from_components(2, &x[o..o + 3]).expect("2D components")
}

/// Sum of the memory blocks at cell `c`.
fn memory_sum(ops: &DiscreteOperators, x: &[f64], c: usize) -> Sym<f64> {
    (1..ops.layout.blocks).fold(Sym::zeros(2), |s, l| s + sym_at(ops, x, l, c))
}

/// `s * (a_v . b_v)` weighted by the node weights and spread onto the density cells.
fn density_velocity_term(ops: &DiscreteOperators, a: &[f64], b: &[f64], s: f64, grad: &mut GradientField) {
    let g = &ops.grid;
    let node: Vec<f64> = (0..g.nodes())
        .map(|n| s * g.node_weight(n) * (a[2 * n] * b[2 * n] + a[2 * n + 1] * b[2 * n + 1]))
        .collect();
    ops.node_to_cells(&node, &mut grad.data[RHO]);
}

fn strain(ops: &DiscreteOperators, u: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; ops.layout.block_len()];
    ops.eps(&u[..ops.layout.vel_len()], &mut e);
    e
}

fn add_rows(
    grad: &mut GradientField,
    s: f64,
    nc: usize,
    row: impl Fn(usize) -> [f64; 5] + Sync + Send,
) {
    let rows: Vec<[f64; 5]> = (0..nc).into_par_iter().map(&row).collect();
    for (c, r) in rows.iter().enumerate() {
        for k in 0..5 {
            grad.data[k][c] += s * r[k];
        }
    }
}

/// Adjoint of the derivative: the field `grad` with
/// `<grad, dir> = <phi_prime(dir), g>` (trapezoid rule in time).
///
/// `Discrete` transposes the time stepper and is exact up to rounding;
/// `Continuous` integrates the adjoint equation and assembles the
/// integrand on the step grid.
pub fn phi_prime_adjoint(
    ops: &DiscreteOperators,
    g: &AdjointData,
    base: &RecordedWavefield,
    src: &dyn Forcing,
    mode: AdjointMode,
    assembly: Assembly,
) -> Result<GradientField> {
    check_interior(ops)?;
    check_data(g, base)?;
    let (dt, nt) = (base.dt, base.nt);
    if mode == AdjointMode::Discrete {
        let adj = run_adjoint_discrete(ops, g, dt, nt, None, Some((base, src)))?;
        return Ok(adj.gradient.expect("base supplied"));
    }
    let w = run_adjoint_continuous(ops, g, dt, nt)?;
    let z = drives_at_steps(ops, base, Src::At(src, 0));
    let c = trapezoid_weights(dt, nt);
    let mut grad = GradientField::zeros(ops.grid.nx, ops.grid.nz);
    match assembly {
        Assembly::Generic => {
            let units = ops.unit_v_prime()?;
            for n in 0..=nt {
                ops.accumulate_units(&units, &z[n], &w.states[n], c[n], true, &mut grad);
            }
        }
        Assembly::Formulas => {
            let pd = point_data(ops)?;
            let hh = ops.grid.h * ops.grid.h;
            for n in 0..=nt {
                let (wn, zn) = (&w.states[n], &z[n]);
                let e = strain(ops, &base.states[n]);
                density_velocity_term(ops, zn, wn, c[n], &mut grad);
                add_rows(&mut grad, c[n] * hh, pd.len(), |cell| {
                    let eps = Sym::from_components(2, &e[3 * cell..3 * cell + 3]).unwrap();
                    first_order_rows(&pd[cell], &eps, 0.0, &sym_at(ops, wn, 0, cell), &memory_sum(ops, wn, cell))
                });
            }
        }
    }
    Ok(grad)
}

/// The two parts of the second-order adjoint: `cross` pairs the material
/// derivative with the second adjoint and the linearized run, `curvature`
/// pairs the second material derivative with the first adjoint.
#[derive(Clone, Debug)]
pub struct SecondAdjointField {
    pub cross: GradientField,
    pub curvature: GradientField,
}

impl SecondAdjointField {
    pub fn total(&self) -> GradientField {
        self.cross.axpy(1.0, &self.curvature)
    }
}

/// Adjoint of `q -> phi_second(dir, q)`: the field `h` with
/// `<h, q> = <phi_second(dir, q), g>` up to discretization error.
///
/// Four solves: the given base, the linearized run along `dir`, and the
/// joint backward run of the first and second adjoints.
pub fn phi_second_adjoint(
    ops: &DiscreteOperators,
    dir: &GradientField,
    g: &AdjointData,
    base: &RecordedWavefield,
    src: &dyn Forcing,
    assembly: Assembly,
) -> Result<SecondAdjointField> {
    check_interior(ops)?;
    check_onset(src)?;
    check_data(g, base)?;
    let (dt, nt) = (base.dt, base.nt);
    let (lin, adj) = rayon::join(
        || run_linearized(ops, dir, base, src),
        || run_second_adjoint_continuous(ops, dir, g, dt, nt),
    );
    let (lin, adj) = (lin?, adj?);
    let z0 = drives_at_steps(ops, base, Src::At(src, 0));
    let mut z1 = drives_at_steps(ops, &lin, Src::None);
    let pull = ops.pullback(dir)?;
    for (a, b) in z1.iter_mut().zip(&z0) {
        pull.apply_add(&ops.layout, b, 1.0, a);
    }
    let c = trapezoid_weights(dt, nt);
    let (nx, nz) = (ops.grid.nx, ops.grid.nz);
    let mut cross = GradientField::zeros(nx, nz);
    let mut curvature = GradientField::zeros(nx, nz);
    match assembly {
        Assembly::Generic => {
            let u1 = ops.unit_v_prime()?;
            let u2 = ops.unit_v_second(dir)?;
            for n in 0..=nt {
                let (w, za) = (&adj.w.states[n], &adj.z.states[n]);
                ops.accumulate_units(&u1, &z0[n], za, c[n], true, &mut cross);
                ops.accumulate_units(&u1, &z1[n], w, c[n], true, &mut cross);
                ops.accumulate_units(&u2, &z0[n], w, c[n], false, &mut curvature);
            }
        }
        Assembly::Formulas => {
            let pd = point_data(ops)?;
            let hh = ops.grid.h * ops.grid.h;
            for n in 0..=nt {
                let (w, za) = (&adj.w.states[n], &adj.z.states[n]);
                let e = strain(ops, &base.states[n]);
                let e1 = strain(ops, &lin.states[n]);
                density_velocity_term(ops, &z0[n], za, c[n], &mut cross);
                density_velocity_term(ops, &z1[n], w, c[n], &mut cross);
                let tens = |v: &[f64], cell: usize| Sym::from_components(2, &v[3 * cell..3 * cell + 3]).unwrap();
                add_rows(&mut cross, c[n] * hh, pd.len(), |cell| {
                    let eps = tens(&e, cell);
                    let a = first_order_rows(&pd[cell], &eps, 0.0, &sym_at(ops, za, 0, cell), &memory_sum(ops, za, cell));
                    let b = gamma_rows(
                        &pd[cell],
                        &dir.at(cell),
                        &eps,
                        &tens(&e1, cell),
                        0.0,
                        &sym_at(ops, w, 0, cell),
                        &memory_sum(ops, w, cell),
                    );
                    [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3], a[4] + b[4]]
                });
                add_rows(&mut curvature, c[n] * hh, pd.len(), |cell| {
                    upsilon_rows(
                        &pd[cell],
                        &dir.at(cell),
                        &tens(&e, cell),
                        &sym_at(ops, w, 0, cell),
                        &memory_sum(ops, w, cell),
                    )
                });
            }
        }
    }
    Ok(SecondAdjointField { cross, curvature })
}

/// Receiver sampling of a wavefield: `[n][2 r + c]`.
pub fn sample_receivers(rec: &RecordedWavefield, nodes: &[usize]) -> Vec<Vec<f64>> {
    rec.seismogram(nodes)
}

/// `J = 1/2 sum_n c_n |R u_n - d_n|^2` and the residual as adjoint data.
pub fn misfit(
    ops: &DiscreteOperators,
    rec: &RecordedWavefield,
    nodes: &[usize],
    data: &[Vec<f64>],
) -> Result<(f64, AdjointData)> {
    let syn = sample_receivers(rec, nodes);
    if data.len() != syn.len() {
        return Err(Error::Mismatch(format!(
            "data has {} samples, run has {}",
            data.len(),
            syn.len()
        )));
    }
    let c = trapezoid_weights(rec.dt, rec.nt);
    let mut j = 0.0;
    let mut res = Vec::with_capacity(syn.len());
    for (n, (s, d)) in syn.iter().zip(data).enumerate() {
        if s.len() != d.len() {
            return Err(Error::DimensionMismatch {
                expected: s.len(),
                found: d.len(),
            });
        }
        let r: Vec<f64> = s.iter().zip(d).map(|(a, b)| a - b).collect();
        j += 0.5 * c[n] * r.iter().map(|x| x * x).sum::<f64>();
        res.push(r);
    }
    Ok((j, AdjointData::receivers(&ops.grid, nodes.to_vec(), res)?))
}

/// Misfit gradient through the adjoint of the derivative.
pub fn misfit_gradient(
    ops: &DiscreteOperators,
    src: &dyn Forcing,
    dt: f64,
    nt: usize,
    nodes: &[usize],
    data: &[Vec<f64>],
    mode: AdjointMode,
) -> Result<(f64, GradientField)> {
    let base = phi(ops, src, dt, nt)?;
    let (j, g) = misfit(ops, &base, nodes, data)?;
    let grad = phi_prime_adjoint(ops, &g, &base, src, mode, Assembly::Formulas)?;
    Ok((j, grad))
}
