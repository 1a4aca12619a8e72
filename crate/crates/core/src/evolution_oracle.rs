//! Dense finite-dimensional instance of `B u' + A u + B Q u = f`.
//!
//! Every derivative and adjoint identity of the abstract framework is
//! checked here by brute force: augmented ODE systems integrated with an
//! adaptive Dormand-Prince 5(4) pair and paired by Simpson quadrature on a
//! uniform output grid.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Number of points of the uniform output grid (odd, for Simpson).
pub const GRID_POINTS: usize = 801;
pub const DEFAULT_TOL: f64 = 1e-10;

/// Time-dependent right-hand side.
#[derive(Clone)]
pub enum Source {
    Zero,
    /// `t^3 e^{-t} v`: value, first and second derivative vanish at 0.
    Smooth(Vector),
    /// Arbitrary callable; `smooth` records whether it vanishes to second order at 0.
    Custom {
        f: Arc<dyn Fn(f64) -> Vector + Send + Sync>,
        smooth: bool,
    },
}

impl Source {
    pub fn eval(&self, t: f64, n: usize) -> Vector {
        match self {
            Source::Zero => Vector::zeros(n),
            Source::Smooth(v) => v * (t.powi(3) * (-t).exp()),
            Source::Custom { f, .. } => f(t),
        }
    }

    /// `(|f(0)|, |f'(0)|, |f''(0)|)`. Analytic for `Smooth`, fine-step
    /// one-sided differences for custom sources.
    pub fn derivatives_at_zero(&self, n: usize) -> [f64; 3] {
        match self {
            Source::Zero => [0.0; 3],
            Source::Smooth(v) => {
                // d^k/dt^k (t^3 e^{-t}) at 0 for k = 0, 1, 2
                let vals = [0.0, 0.0, 0.0];
                [vals[0] * v.norm(), vals[1] * v.norm(), vals[2] * v.norm()]
            }
            Source::Custom { .. } => {
                let h = 1e-4;
                let f: Vec<Vector> = (0..4).map(|k| self.eval(k as f64 * h, n)).collect();
                let d1 = (-&f[2] + &f[1] * 4.0 - &f[0] * 3.0) / (2.0 * h);
                let d2 = (&f[0] * 2.0 - &f[1] * 5.0 + &f[2] * 4.0 - &f[3]) / (h * h);
                [f[0].norm(), d1.norm(), d2.norm()]
            }
        }
    }

    pub fn is_smooth_tagged(&self) -> bool {
        match self {
            Source::Zero | Source::Smooth(_) => true,
            Source::Custom { smooth, .. } => *smooth,
        }
    }
}

/// The operators `(B, A, Q)`, horizon and source.
#[derive(Clone)]
pub struct OracleSystem {
    pub b: Mat,
    pub a: Mat,
    pub q: Mat,
    pub t_end: f64,
    pub source: Source,
    /// Admissible window for the spectrum of `B`.
    pub beta_minus: f64,
    pub beta_plus: f64,
    b_inv: Mat,
}

fn spectrum(m: &Mat) -> (f64, f64) {
    let e = SymmetricEigen::new(m.clone()).eigenvalues;
    (e.min(), e.max())
}

impl OracleSystem {
    pub fn new(
        b: Mat,
        a: Mat,
        q: Mat,
        t_end: f64,
        source: Source,
        beta_minus: f64,
        beta_plus: f64,
    ) -> Result<Self> {
        let n = b.nrows();
        if n == 0 || n > 32 {
            return Err(Error::Mismatch(format!("state dimension {n} not in 1..=32")));
        }
        for (name, m) in [("B", &b), ("A", &a), ("Q", &q)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: m.nrows().max(m.ncols()),
                });
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::Mismatch(format!("{name} has non-finite entries")));
            }
        }
        if (&b - b.transpose()).amax() > 1e-14 * b.amax() {
            return Err(Error::NotSymmetric((&b - b.transpose()).amax()));
        }
        check_window(&b, beta_minus, beta_plus)?;
        let sym_a = (&a + a.transpose()) * 0.5;
        if spectrum(&sym_a).0 < -1e-12 {
            return Err(Error::Mismatch("A is not monotone".into()));
        }
        if !(t_end > 0.0) {
            return Err(Error::Mismatch(format!("horizon {t_end} must be positive")));
        }
        let b_inv = b
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Mismatch("B is not positive definite".into()))?
            .inverse();
        Ok(OracleSystem {
            b,
            a,
            q,
            t_end,
            source,
            beta_minus,
            beta_plus,
            b_inv,
        })
    }

    /// Random system: `B` with spectrum inside the central 80% of
    /// `[beta_minus, beta_plus]`, skew `A`, dense `Q` in `[-1, 1]`, smooth source.
    pub fn random(n: usize, seed: u64, beta_minus: f64, beta_plus: f64, t_end: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uni = |r: usize, c: usize| Mat::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
        let m = uni(n, n);
        let mtm = m.transpose() * &m;
        let norm = spectrum(&mtm).1;
        let lo = beta_minus + 0.1 * (beta_plus - beta_minus);
        let hi = beta_plus - 0.1 * (beta_plus - beta_minus);
        let b = Mat::identity(n, n) * lo + mtm * ((hi - lo) / norm);
        let b = (&b + b.transpose()) * 0.5;
        let s = uni(n, n);
        let a = &s - s.transpose();
        let q = uni(n, n);
        let v = uni(n, 1).column(0).into_owned();
        Self::new(b, a, q, t_end, Source::Smooth(v), beta_minus, beta_plus)
    }

    /// Ill-posedness test family: diagonal `B`, skew nearest-neighbour chain
    /// `A`, no decay, source on the first coordinate.
    pub fn chain(n: usize, coupling: f64, t_end: f64) -> Result<Self> {
        let b = Mat::identity(n, n);
        let mut a = Mat::zeros(n, n);
        for i in 0..n - 1 {
            a[(i, i + 1)] = -coupling;
            a[(i + 1, i)] = coupling;
        }
        let mut e0 = Vector::zeros(n);
        e0[0] = 1.0;
        Self::new(b, a, Mat::zeros(n, n), t_end, Source::Smooth(e0), 0.5, 2.0)
    }

    pub fn dim(&self) -> usize {
        self.b.nrows()
    }

    /// Same system with `B` replaced.
    pub fn with_b(&self, b: Mat) -> Result<Self> {
        Self::new(
            b,
            self.a.clone(),
            self.q.clone(),
            self.t_end,
            self.source.clone(),
            self.beta_minus,
            self.beta_plus,
        )
    }

    pub fn with_source(&self, source: Source) -> Self {
        let mut s = self.clone();
        s.source = source;
        s
    }

    pub fn b_inv(&self) -> &Mat {
        &self.b_inv
    }

    /// `B^{-1}(r - A u)`: equals `u' + Q u` along solutions with source `r`.
    fn drive(&self, r: &Vector, u: &Vector) -> Vector {
        &self.b_inv * (r - &self.a * u)
    }

    pub fn times(&self) -> Vec<f64> {
        uniform_grid(self.t_end)
    }
}

fn check_window(b: &Mat, lo: f64, hi: f64) -> Result<()> {
    let (emin, emax) = spectrum(b);
    if emin < lo * (1.0 - 1e-12) || emax > hi * (1.0 + 1e-12) {
        return Err(Error::Inadmissible(format!(
            "spectrum of B [{emin}, {emax}] leaves [{lo}, {hi}]"
        )));
    }
    Ok(())
}

pub fn uniform_grid(t_end: f64) -> Vec<f64> {
    let n = GRID_POINTS - 1;
    (0..=n).map(|i| t_end * i as f64 / n as f64).collect()
}

/// Composite Simpson rule on an odd number of equispaced samples.
pub fn simpson(dt: f64, values: &[f64]) -> f64 {
    let n = values.len();
    assert!(n >= 3 && n % 2 == 1, "Simpson needs an odd number of samples");
    let mut s = values[0] + values[n - 1];
    for (i, v) in values.iter().enumerate().take(n - 1).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * dt / 3.0
}

/// States on the uniform output grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub tol: f64,
}

impl Trajectory {
    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn last(&self) -> &Vector {
        self.states.last().expect("non-empty trajectory")
    }

    /// `max_t |u(t)|`
    pub fn sup_norm(&self) -> f64 {
        self.states.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }

    /// `(int |u|^2 dt)^{1/2}`
    pub fn l2_norm(&self) -> f64 {
        let v: Vec<f64> = self.states.iter().map(|s| s.norm_squared()).collect();
        simpson(self.dt(), &v).max(0.0).sqrt()
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &Trajectory) -> Trajectory {
        Trajectory {
            times: self.times.clone(),
            states: self
                .states
                .iter()
                .zip(&other.states)
                .map(|(a, b)| a + b * s)
                .collect(),
            tol: self.tol.max(other.tol),
        }
    }

    /// `int <u(t), g(t)> dt`
    pub fn pair_with(&self, g: &dyn Fn(f64) -> Vector) -> f64 {
        let v: Vec<f64> = self
            .times
            .iter()
            .zip(&self.states)
            .map(|(t, u)| u.dot(&g(*t)))
            .collect();
        simpson(self.dt(), &v)
    }

    /// `int <u(t), w(t)> dt` on a shared grid.
    pub fn pair(&self, other: &Trajectory) -> f64 {
        let v: Vec<f64> = self
            .states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| a.dot(b))
            .collect();
        simpson(self.dt(), &v)
    }
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive Dormand-Prince integration of `y' = f(t, y)`, returning `y` at
/// every entry of `times` (monotone, either direction).
pub fn integrate<F>(f: F, y0: Vector, times: &[f64], tol: f64) -> Result<Vec<Vector>>
where
    F: Fn(f64, &Vector) -> Vector,
{
    let mut out = Vec::with_capacity(times.len());
    out.push(y0.clone());
    let mut y = y0;
    let span = (times[times.len() - 1] - times[0]).abs();
    let mut h = span / (times.len().max(2) - 1) as f64;
    let h_min = span * 1e-14;
    for w in times.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let dir = (t1 - t0).signum();
        let mut t = t0;
        let mut steps = 0usize;
        while (t1 - t) * dir > 0.0 {
            steps += 1;
            if steps > 1_000_000 {
                return Err(Error::Integrator("too many steps".into()));
            }
            let last = h >= (t1 - t).abs();
            let hs = if last { (t1 - t).abs() } else { h };
            let hd = hs * dir;
            let mut k: Vec<Vector> = Vec::with_capacity(7);
            for s in 0..7 {
                let mut ys = y.clone();
                for (j, kj) in k.iter().enumerate() {
                    if A[s][j] != 0.0 {
                        ys.axpy(hd * A[s][j], kj, 1.0);
                    }
                }
                k.push(f(t + C[s] * hd, &ys));
            }
            let mut y5 = y.clone();
            let mut e = Vector::zeros(y.len());
            for s in 0..7 {
                y5.axpy(hd * B5[s], &k[s], 1.0);
                e.axpy(hd * (B5[s] - B4[s]), &k[s], 1.0);
            }
            let mut err = 0.0;
            for i in 0..y.len() {
                let sc = tol + tol * y[i].abs().max(y5[i].abs());
                err += (e[i] / sc).powi(2);
            }
            let err = (err / y.len() as f64).sqrt();
            if !err.is_finite() {
                return Err(Error::Integrator("non-finite error estimate".into()));
            }
            let fac = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                t = if last { t1 } else { t + hd };
                y = y5;
                if !last {
                    h = hs * fac;
                }
            } else {
                h = hs * fac;
                if h < h_min {
                    return Err(Error::Integrator(format!("step size underflow at t = {t}")));
                }
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

fn split(y: &Vector, n: usize, k: usize) -> Vector {
    y.rows(k * n, n).into_owned()
}

fn stack(parts: &[Vector]) -> Vector {
    let n: usize = parts.iter().map(|p| p.len()).sum();
    let mut y = Vector::zeros(n);
    let mut o = 0;
    for p in parts {
        y.rows_mut(o, p.len()).copy_from(p);
        o += p.len();
    }
    y
}

fn check_sym(h: &Mat, n: usize) -> Result<()> {
    if h.nrows() != n || h.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: h.nrows(),
        });
    }
    if (h - h.transpose()).amax() > 1e-14 * h.amax().max(1e-300) {
        return Err(Error::NotSymmetric((h - h.transpose()).amax()));
    }
    Ok(())
}

fn trajectory(times: Vec<f64>, ys: Vec<Vector>, n: usize, k: usize, tol: f64) -> Trajectory {
    Trajectory {
        times,
        states: ys.iter().map(|y| split(y, n, k)).collect(),
        tol,
    }
}

/// `B u' + A u + B Q u = f`, `u(0) = u0`.
pub fn solve_forward(sys: &OracleSystem, u0: &Vector, tol: f64) -> Result<Trajectory> {
    let n = sys.dim();
    let times = sys.times();
    let ys = integrate(
        |t, u| sys.drive(&sys.source.eval(t, n), u) - &sys.q * u,
        u0.clone(),
        &times,
        tol,
    )?;
    Ok(Trajectory {
        times,
        states: ys,
        tol,
    })
}

/// `B ū' + A ū + B Q ū = -H(u' + Q u)`, `ū(0) = 0`, integrated jointly
/// with the base solution started from `base`'s initial state.
pub fn solve_first_derivative(
    sys: &OracleSystem,
    h: &Mat,
    base: &Trajectory,
    tol: f64,
) -> Result<Trajectory> {
    let n = sys.dim();
    check_sym(h, n)?;
    let times = sys.times();
    let y0 = stack(&[base.states[0].clone(), Vector::zeros(n)]);
    let ys = integrate(
        |t, y| {
            let (u, ub) = (split(y, n, 0), split(y, n, 1));
            let z = sys.drive(&sys.source.eval(t, n), &u);
            let du = &z - &sys.q * &u;
            let dub = sys.drive(&(-(h * &z)), &ub) - &sys.q * &ub;
            stack(&[du, dub])
        },
        y0,
        &times,
        tol,
    )?;
    Ok(trajectory(times, ys, n, 1, tol))
}

/// Adjoint `B w' - A^T w - Q^T B w = g`, `w(T) = 0`, via `w̃(s) = w(T - s)`.
pub fn solve_adjoint(sys: &OracleSystem, g: &dyn Fn(f64) -> Vector, tol: f64) -> Result<Trajectory> {
    let n = sys.dim();
    let t_end = sys.t_end;
    let times = sys.times();
    let qtb = sys.q.transpose() * &sys.b;
    let ys = integrate(
        |s, w| -(sys.b_inv() * (g(t_end - s) + sys.a.transpose() * w + &qtb * w)),
        Vector::zeros(n),
        &times,
        tol,
    )?;
    let mut states = ys;
    states.reverse();
    Ok(Trajectory {
        times,
        states,
        tol,
    })
}

/// The same adjoint integrated directly backward in time from `T`.
pub fn solve_adjoint_direct(
    sys: &OracleSystem,
    g: &dyn Fn(f64) -> Vector,
    tol: f64,
) -> Result<Trajectory> {
    let n = sys.dim();
    let times = sys.times();
    let rev: Vec<f64> = times.iter().rev().copied().collect();
    let qtb = sys.q.transpose() * &sys.b;
    let mut ys = integrate(
        |t, w| sys.b_inv() * (g(t) + sys.a.transpose() * w + &qtb * w),
        Vector::zeros(n),
        &rev,
        tol,
    )?;
    ys.reverse();
    Ok(Trajectory {
        times,
        states: ys,
        tol,
    })
}

/// First and second derivative trajectories along `(H1, H2)`.
#[derive(Clone, Debug)]
pub struct SecondOrderRun {
    pub base: Trajectory,
    pub first1: Trajectory,
    pub first2: Trajectory,
    pub second: Trajectory,
}

fn check_second_order_hypotheses(sys: &OracleSystem) -> Result<()> {
    if !sys.source.is_smooth_tagged() {
        return Err(Error::Smoothness("source is not tagged as vanishing to second order".into()));
    }
    let d = sys.source.derivatives_at_zero(sys.dim());
    if d.iter().any(|x| *x > 1e-12) {
        return Err(Error::Smoothness(format!("|f(0)|, |f'(0)|, |f''(0)| = {d:?}")));
    }
    Ok(())
}

/// Joint run of `u`, `u1 = F'H1`, `u2 = F'H2` and `ü = F''[H1, H2]` from `u(0) = 0`.
pub fn solve_second_order(sys: &OracleSystem, h1: &Mat, h2: &Mat, tol: f64) -> Result<SecondOrderRun> {
    let n = sys.dim();
    check_sym(h1, n)?;
    check_sym(h2, n)?;
    check_second_order_hypotheses(sys)?;
    let times = sys.times();
    let ys = integrate(
        |t, y| {
            let u = split(y, n, 0);
            let u1 = split(y, n, 1);
            let u2 = split(y, n, 2);
            let uu = split(y, n, 3);
            let z = sys.drive(&sys.source.eval(t, n), &u);
            let z1 = sys.drive(&(-(h1 * &z)), &u1);
            let z2 = sys.drive(&(-(h2 * &z)), &u2);
            let zz = sys.drive(&(-(h1 * &z2) - h2 * &z1), &uu);
            stack(&[
                &z - &sys.q * &u,
                &z1 - &sys.q * &u1,
                &z2 - &sys.q * &u2,
                &zz - &sys.q * &uu,
            ])
        },
        Vector::zeros(4 * n),
        &times,
        tol,
    )?;
    Ok(SecondOrderRun {
        base: trajectory(times.clone(), ys.clone(), n, 0, tol),
        first1: trajectory(times.clone(), ys.clone(), n, 1, tol),
        first2: trajectory(times.clone(), ys.clone(), n, 2, tol),
        second: trajectory(times, ys, n, 3, tol),
    })
}

/// `B ü' + (A + B Q) ü = -H1(u2' + Q u2) - H2(u1' + Q u1)`, `ü(0) = 0`.
pub fn solve_second_derivative(sys: &OracleSystem, h1: &Mat, h2: &Mat, tol: f64) -> Result<Trajectory> {
    Ok(solve_second_order(sys, h1, h2, tol)?.second)
}

/// `u' + Q u` along a stored trajectory with source `r(t)`.
fn drives(sys: &OracleSystem, traj: &Trajectory, r: impl Fn(f64, usize) -> Vector) -> Vec<Vector> {
    traj.times
        .iter()
        .enumerate()
        .map(|(i, t)| sys.drive(&r(*t, i), &traj.states[i]))
        .collect()
}

/// `int <H1(u2' + Q u2) + H2(u1' + Q u1), w> dt` with `w` the adjoint for `g`.
pub fn second_adjoint_pairing(
    sys: &OracleSystem,
    h1: &Mat,
    g: &dyn Fn(f64) -> Vector,
    h2: &Mat,
    tol: f64,
) -> Result<f64> {
    let n = sys.dim();
    let run = solve_second_order(sys, h1, h2, tol)?;
    let w = solve_adjoint(sys, g, tol)?;
    let z0 = drives(sys, &run.base, |t, _| sys.source.eval(t, n));
    let z1 = drives(sys, &run.first1, |_, i| -(h1 * &z0[i]));
    let z2 = drives(sys, &run.first2, |_, i| -(h2 * &z0[i]));
    let v: Vec<f64> = (0..w.states.len())
        .map(|i| (h1 * &z2[i] + h2 * &z1[i]).dot(&w.states[i]))
        .collect();
    Ok(simpson(w.dt(), &v))
}

/// Gradient of `H2 -> <F''[H1, H2], g>` as a symmetric matrix, computed with
/// the second adjoint `z` driven by `-(H1 w' - Q^T H1 w)`.
pub fn second_adjoint_gradient(
    sys: &OracleSystem,
    h1: &Mat,
    g: &dyn Fn(f64) -> Vector,
    tol: f64,
) -> Result<Mat> {
    second_adjoint_gradient_impl(sys, h1, g, tol, false)
}

pub(crate) fn second_adjoint_gradient_impl(
    sys: &OracleSystem,
    h1: &Mat,
    g: &dyn Fn(f64) -> Vector,
    tol: f64,
    flip_decay_sign: bool,
) -> Result<Mat> {
    let n = sys.dim();
    check_sym(h1, n)?;
    check_second_order_hypotheses(sys)?;
    let zero = Mat::zeros(n, n);
    let run = solve_second_order(sys, h1, &zero, tol)?;
    let t_end = sys.t_end;
    let times = sys.times();
    let qt = sys.q.transpose();
    let qtb = &qt * &sys.b;
    let sign = if flip_decay_sign { -1.0 } else { 1.0 };
    // joint backward run of (w, z) in reversed time
    let ys = integrate(
        |s, y| {
            let t = t_end - s;
            let (w, z) = (split(y, n, 0), split(y, n, 1));
            let dw = sys.b_inv() * (g(t) + sys.a.transpose() * &w + &qtb * &w);
            let h1w = h1 * &w;
            let gz = -(h1 * &dw - (&qt * &h1w) * sign);
            let dz = sys.b_inv() * (gz + sys.a.transpose() * &z + &qtb * &z);
            stack(&[-dw, -dz])
        },
        Vector::zeros(2 * n),
        &times,
        tol,
    )?;
    let mut ys = ys;
    ys.reverse();
    let w = trajectory(times.clone(), ys.clone(), n, 0, tol);
    let z = trajectory(times, ys, n, 1, tol);
    let z0 = drives(sys, &run.base, |t, _| sys.source.eval(t, n));
    let z1 = drives(sys, &run.first1, |_, i| -(h1 * &z0[i]));
    let dt = w.dt();
    let mut grad = Mat::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let v: Vec<f64> = (0..w.states.len())
                .map(|i| z.states[i][r] * z0[i][c] + w.states[i][r] * z1[i][c])
                .collect();
            grad[(r, c)] = simpson(dt, &v);
        }
    }
    Ok((&grad + grad.transpose()) * 0.5)
}

/// Ratios `|F''(B + s dB)[H1,H2] - F''(B)[H1,H2]|_C / (s |dB|)`.
#[derive(Clone, Debug)]
pub struct LipschitzTable {
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
}

impl LipschitzTable {
    /// `max / min` of the ratios.
    pub fn spread(&self) -> f64 {
        let max = self.ratios.iter().cloned().fold(0.0, f64::max);
        let min = self.ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    }
}

pub fn lipschitz_scan(
    sys: &OracleSystem,
    h1: &Mat,
    h2: &Mat,
    db: &Mat,
    scales: &[f64],
    tol: f64,
) -> Result<LipschitzTable> {
    let n = sys.dim();
    check_sym(db, n)?;
    let db_norm = spectrum(db).0.abs().max(spectrum(db).1.abs());
    if db_norm == 0.0 {
        return Err(Error::Mismatch("zero perturbation direction".into()));
    }
    let reference = solve_second_derivative(sys, h1, h2, tol)?;
    let mut ratios = Vec::with_capacity(scales.len());
    for &s in scales {
        let pert = sys.with_b(&sys.b + db * s)?;
        let out = solve_second_derivative(&pert, h1, h2, tol)?;
        ratios.push(out.axpy(-1.0, &reference).sup_norm() / (s * db_norm));
    }
    Ok(LipschitzTable {
        scales: scales.to_vec(),
        ratios,
    })
}

/// Residuals `|F(B + E_k) - F(B)|_{L^2}` for a sequence of perturbations.
#[derive(Clone, Debug)]
pub struct IllposedReport {
    pub norms: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl IllposedReport {
    pub fn strictly_decreasing(&self) -> bool {
        self.residuals.windows(2).all(|w| w[1] < w[0])
    }
}

/// `r e_k e_k^T` for each `k`.
pub fn coordinate_projections(n: usize, r: f64, ks: &[usize]) -> Vec<Mat> {
    ks.iter()
        .map(|&k| {
            let mut e = Mat::zeros(n, n);
            e[(k, k)] = r;
            e
        })
        .collect()
}

pub fn illposed_probe(
    sys: &OracleSystem,
    perturbations: &[Mat],
    r_lo: f64,
    r_hi: f64,
    tol: f64,
) -> Result<IllposedReport> {
    let n = sys.dim();
    let base = solve_forward(sys, &Vector::zeros(n), tol)?;
    let mut rep = IllposedReport {
        norms: Vec::new(),
        residuals: Vec::new(),
    };
    for e in perturbations {
        check_sym(e, n)?;
        let (lo, hi) = spectrum(e);
        let norm = lo.abs().max(hi.abs());
        if norm < r_lo * (1.0 - 1e-14) || norm > r_hi * (1.0 + 1e-14) {
            return Err(Error::Mismatch(format!(
                "perturbation norm {norm} outside [{r_lo}, {r_hi}]"
            )));
        }
        let pert = sys.with_b(&sys.b + e)?;
        let u = solve_forward(&pert, &Vector::zeros(n), tol)?;
        rep.norms.push(norm);
        rep.residuals.push(u.axpy(-1.0, &base).l2_norm());
    }
    Ok(rep)
}

/// Upper bound `c` in `|u|_C <= c (|u0| + int |f| dt)` from the spectral
/// window of `B` and the `B`-norm of `Q`.
pub fn stability_bound(sys: &OracleSystem) -> f64 {
    let eig = SymmetricEigen::new(sys.b.clone());
    let sqrt_b = &eig.eigenvectors
        * Mat::from_diagonal(&eig.eigenvalues.map(f64::sqrt))
        * eig.eigenvectors.transpose();
    let inv_sqrt_b = &eig.eigenvectors
        * Mat::from_diagonal(&eig.eigenvalues.map(|x| 1.0 / x.sqrt()))
        * eig.eigenvectors.transpose();
    let qb = &sqrt_b * &sys.q * &inv_sqrt_b;
    // growth rate of the B-norm: largest eigenvalue of -(sym part of B^{1/2} Q B^{-1/2})
    let sym = (&qb + qb.transpose()) * -0.5;
    let omega = spectrum(&sym).1.max(0.0);
    let (bmin, bmax) = spectrum(&sys.b);
    (omega * sys.t_end).exp() * (bmax / bmin).sqrt().max(1.0 / bmin)
}

/// Writes a trajectory as CSV with 17 significant digits.
pub fn write_trajectory_csv(traj: &Trajectory, path: &std::path::Path) -> Result<()> {
    let mut s = String::from("t");
    for k in 0..traj.states[0].len() {
        s.push_str(&format!(",comp{k}"));
    }
    s.push('\n');
    for (t, u) in traj.times.iter().zip(&traj.states) {
        s.push_str(&format!("{t:.16e}"));
        for x in u.iter() {
            s.push_str(&format!(",{x:.16e}"));
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
