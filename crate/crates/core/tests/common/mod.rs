#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viscoadjoint::config::RunConfig;
use viscoadjoint::wave2d::{AdjointData, DiscreteOperators, Field5, Grid2D, Layout};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn ops_for(cfg: &RunConfig) -> DiscreteOperators {
    cfg.operators().expect("admissible config")
}

/// Random state with inactive nodes zeroed.
pub fn random_state(grid: &Grid2D, layout: &Layout, r: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..layout.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
    grid.project(&mut v);
    v
}

/// Smooth random state-space data on the step grid: a random state times a
/// random smooth time profile, plus a second pair.
pub fn smooth_dense_data(grid: &Grid2D, layout: &Layout, nt: usize, t_end: f64, r: &mut ChaCha8Rng) -> AdjointData {
    let a = random_state(grid, layout, r);
    let b = random_state(grid, layout, r);
    let (fa, fb) = (r.gen_range(0.5..2.0), r.gen_range(0.5..2.0));
    let steps = (0..=nt)
        .map(|n| {
            let s = n as f64 / nt as f64 * t_end;
            let (ca, cb) = ((fa * s / t_end * 6.0).sin(), (fb * s / t_end * 4.0).cos());
            a.iter().zip(&b).map(|(x, y)| ca * x + cb * y).collect()
        })
        .collect();
    AdjointData::Dense(steps)
}

/// Smooth random direction: a few low Fourier modes per parameter scaled by the box widths.
pub fn smooth_direction(ops: &DiscreteOperators, seed: u64) -> Field5 {
    let b = ops.field.bounds;
    let w = b.width();
    let f = viscoadjoint::config::smooth_field(ops.grid.nx, ops.grid.nz, &b, seed, 1.0);
    let mid = b.mid().to_array();
    let mut d = Field5::zeros(ops.grid.nx, ops.grid.nz);
    for k in 0..5 {
        for c in 0..d.cells() {
            d.data[k][c] = (f.data[k][c] - mid[k]) / (0.5 * w[k]) * w[k];
        }
    }
    d
}
