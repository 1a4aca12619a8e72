use serde::{Deserialize, Serialize};

use super::grid::Grid2D;
use crate::error::{Error, Result};

/// Time-dependent forcing in the state space, sampled at half steps
/// (`t = k dt / 2`).
pub trait Forcing: Sync {
    /// `out += s f(t_k)`
    fn add_at(&self, k: usize, s: f64, out: &mut [f64]);

    /// Whether `f`, `f'` and `f''` vanish at `t = 0`, as second derivatives require.
    fn smooth_onset(&self) -> bool {
        false
    }
}

/// Largest scaled `|f(0)|, |f'(0)|, |f''(0)|` allowed relative to `max |f|`.
pub const ONSET_TOLERANCE: f64 = 1e-10;

/// The zero forcing.
pub struct NoForcing;

impl Forcing for NoForcing {
    fn add_at(&self, _k: usize, _s: f64, _out: &mut [f64]) {}

    fn smooth_onset(&self) -> bool {
        true
    }
}

/// Onset-delay of the wavelet envelope in units of `1 / f0`.
const ONSET: f64 = 1.5;

/// `(t/t0)^3 exp(1.5 (1 - (t/t0)^2)) sin(2 pi f0 t)` with `t0 = 1.5 / f0`.
pub fn wavelet_value(f0: f64, t: f64) -> f64 {
    let t0 = ONSET / f0;
    let r = t / t0;
    r.powi(3) * (1.5 * (1.0 - r * r)).exp() * (2.0 * std::f64::consts::PI * f0 * t).sin()
}

/// Wavelet samples at half steps `t = k dt / 2`, `k = 0..=2 nt`.
pub fn make_wavelet(f0: f64, dt: f64, nt: usize) -> Result<Vec<f64>> {
    if !(f0 > 0.0 && dt > 0.0) {
        return Err(Error::Config(format!("f0 = {f0}, dt = {dt} must be positive")));
    }
    if f0 * dt > 0.1 {
        return Err(Error::Undersampled(f0 * dt));
    }
    Ok((0..=2 * nt).map(|k| wavelet_value(f0, 0.5 * dt * k as f64)).collect())
}

/// `(|w(0)|, |w'(0)|, |w''(0)|)` by one-sided fourth-order stencils on a
/// step of `1e-4 / f0`.
pub fn wavelet_derivatives_at_zero(f0: f64) -> [f64; 3] {
    let h = 1e-4 / f0;
    let w: Vec<f64> = (0..6).map(|k| wavelet_value(f0, k as f64 * h)).collect();
    let d1 = (-25.0 * w[0] + 48.0 * w[1] - 36.0 * w[2] + 16.0 * w[3] - 3.0 * w[4]) / (12.0 * h);
    let d2 = (45.0 * w[0] - 154.0 * w[1] + 214.0 * w[2] - 156.0 * w[3] + 61.0 * w[4] - 10.0 * w[5])
        / (12.0 * h * h);
    [w[0].abs(), d1.abs(), d2.abs()]
}

/// `max |w|` over the support, sampled at `1e-3 / f0`.
pub fn wavelet_peak(f0: f64) -> f64 {
    let n = (8.0 * ONSET * 1e3) as usize;
    (0..=n).fold(0.0, |m, k| m.max(wavelet_value(f0, k as f64 * 1e-3 / f0).abs()))
}

/// Largest of `|w(0)|, |w'(0)| / (2 pi f0), |w''(0)| / (2 pi f0)^2` relative
/// to the wavelet peak.
pub fn wavelet_regularity(f0: f64) -> f64 {
    let d = wavelet_derivatives_at_zero(f0);
    let w = 2.0 * std::f64::consts::PI * f0;
    d[0].max(d[1] / w).max(d[2] / (w * w)) / wavelet_peak(f0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    X,
    Z,
}

/// Point force smeared over a normalized 3x3 Gaussian around a node.
#[derive(Clone, Debug)]
pub struct PointSource {
    /// `(node, force density per unit amplitude)`
    taps: Vec<(usize, f64)>,
    pub component: Component,
    pub amplitude: f64,
    pub f0: f64,
    pub samples: Vec<f64>,
}

impl PointSource {
    pub fn new(
        grid: &Grid2D,
        at: (usize, usize),
        component: Component,
        amplitude: f64,
        f0: f64,
        dt: f64,
        nt: usize,
    ) -> Result<Self> {
        let (ix, iz) = at;
        if ix > grid.nx || iz > grid.nz {
            return Err(Error::Config(format!("source node ({ix}, {iz}) outside the grid")));
        }
        let samples = make_wavelet(f0, dt, nt)?;
        let mut taps = Vec::new();
        let mut total = 0.0;
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                let (i, j) = (ix as i64 + di, iz as i64 + dj);
                if i < 0 || j < 0 || i > grid.nx as i64 || j > grid.nz as i64 {
                    continue;
                }
                let n = grid.node(i as usize, j as usize);
                if !grid.is_active(n) {
                    continue;
                }
                let g = (-0.5 * (di * di + dj * dj) as f64).exp();
                taps.push((n, g));
                total += g;
            }
        }
        if taps.is_empty() {
            return Err(Error::Config(format!("source node ({ix}, {iz}) has no active neighbours")));
        }
        for t in taps.iter_mut() {
            t.1 /= total * grid.node_weight(t.0);
        }
        Ok(PointSource {
            taps,
            component,
            amplitude,
            f0,
            samples,
        })
    }

    pub fn steps(&self) -> usize {
        (self.samples.len() - 1) / 2
    }

    /// Onset values of the time function relative to its peak, see
    /// [`wavelet_regularity`].
    pub fn regularity(&self) -> f64 {
        wavelet_regularity(self.f0)
    }
}

impl Forcing for PointSource {
    fn add_at(&self, k: usize, s: f64, out: &mut [f64]) {
        let a = s * self.amplitude * self.samples[k];
        if a == 0.0 {
            return;
        }
        let off = match self.component {
            Component::X => 0,
            Component::Z => 1,
        };
        for (n, g) in &self.taps {
            out[2 * n + off] += a * g;
        }
    }

    fn smooth_onset(&self) -> bool {
        self.amplitude == 0.0 || self.regularity() <= ONSET_TOLERANCE
    }
}

/// Right-hand side of an adjoint run, given at the step times `t_n`.
#[derive(Clone, Debug, PartialEq)]
pub enum AdjointData {
    /// Velocity data at receiver nodes: `values[n][2 r + c]`. The state-space
    /// datum is the value divided by the node weight, so that pairing with
    /// a state reads the receiver velocities.
    Receivers {
        nodes: Vec<usize>,
        weights: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
    /// Full state-space data per step.
    Dense(Vec<Vec<f64>>),
}

impl AdjointData {
    pub fn receivers(grid: &Grid2D, nodes: Vec<usize>, values: Vec<Vec<f64>>) -> Result<Self> {
        for &n in &nodes {
            if n >= grid.nodes() || !grid.is_active(n) {
                return Err(Error::Config(format!("receiver node {n} is not an active node")));
            }
        }
        if let Some(v) = values.iter().find(|v| v.len() != 2 * nodes.len()) {
            return Err(Error::DimensionMismatch {
                expected: 2 * nodes.len(),
                found: v.len(),
            });
        }
        let weights = nodes.iter().map(|&n| grid.node_weight(n)).collect();
        Ok(AdjointData::Receivers {
            nodes,
            weights,
            values,
        })
    }

    pub fn steps(&self) -> usize {
        match self {
            AdjointData::Receivers { values, .. } => values.len() - 1,
            AdjointData::Dense(v) => v.len() - 1,
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            AdjointData::Receivers {
                nodes,
                weights,
                values,
            } => AdjointData::Receivers {
                nodes: nodes.clone(),
                weights: weights.clone(),
                values: values.iter().map(|v| vec![0.0; v.len()]).collect(),
            },
            AdjointData::Dense(v) => AdjointData::Dense(v.iter().map(|x| vec![0.0; x.len()]).collect()),
        }
    }

    /// `out += s g(t_n)`
    pub fn add_step(&self, n: usize, s: f64, out: &mut [f64]) {
        match self {
            AdjointData::Receivers {
                nodes,
                weights,
                values,
            } => {
                for (r, (node, w)) in nodes.iter().zip(weights).enumerate() {
                    out[2 * node] += s * values[n][2 * r] / w;
                    out[2 * node + 1] += s * values[n][2 * r + 1] / w;
                }
            }
            AdjointData::Dense(v) => {
                for (o, x) in out.iter_mut().zip(&v[n]) {
                    *o += s * x;
                }
            }
        }
    }

    /// `<u, g(t_n)>` in the grid inner product.
    pub fn pair_step(&self, grid: &Grid2D, layout: &super::Layout, n: usize, u: &[f64]) -> f64 {
        match self {
            AdjointData::Receivers { nodes, values, .. } => {
                let mut s = 0.0;
                for (r, node) in nodes.iter().enumerate() {
                    s += values[n][2 * r] * u[2 * node] + values[n][2 * r + 1] * u[2 * node + 1];
                }
                s
            }
            AdjointData::Dense(v) => grid.inner(layout, u, &v[n]),
        }
    }
}

impl Forcing for AdjointData {
    /// Half-step samples by linear interpolation between step values.
    fn add_at(&self, k: usize, s: f64, out: &mut [f64]) {
        if k % 2 == 0 {
            self.add_step(k / 2, s, out);
        } else {
            self.add_step(k / 2, 0.5 * s, out);
            self.add_step(k / 2 + 1, 0.5 * s, out);
        }
    }
}
