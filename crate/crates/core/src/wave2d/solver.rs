use super::field::Field5;
use super::grid::{Grid2D, Layout};
use super::ops::{CellMaps, DiscreteOperators};
use super::source::{AdjointData, Forcing};
use crate::error::{Error, Result};

/// Offsets of the RK4 stage times in half steps.
const SAMPLE: [usize; 4] = [0, 1, 1, 2];
const STAGE_A: [f64; 4] = [0.0, 0.5, 0.5, 1.0];
const STAGE_B: [f64; 4] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];
/// Growth factor of the energy norm over the data bound that counts as unstable.
const BLOWUP: f64 = 1e6;

/// Full state at every step `t_n = n dt`, `n = 0..=nt`.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordedWavefield {
    pub layout: Layout,
    pub dt: f64,
    pub nt: usize,
    pub states: Vec<Vec<f64>>,
}

/// Trapezoid weights times `dt` on `nt + 1` points.
pub fn trapezoid_weights(dt: f64, nt: usize) -> Vec<f64> {
    let mut c = vec![dt; nt + 1];
    c[0] = 0.5 * dt;
    c[nt] = 0.5 * dt;
    c
}

impl RecordedWavefield {
    fn new(layout: Layout, dt: f64, nt: usize) -> Self {
        RecordedWavefield {
            layout,
            dt,
            nt,
            states: Vec::with_capacity(nt + 1),
        }
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.nt as f64
    }

    /// `(vx, vz)` at the given nodes for every step: `[n][2 r + c]`.
    pub fn seismogram(&self, nodes: &[usize]) -> Vec<Vec<f64>> {
        self.states
            .iter()
            .map(|u| nodes.iter().flat_map(|&n| [u[2 * n], u[2 * n + 1]]).collect())
            .collect()
    }

    /// `int <u, g> dt` by the trapezoid rule.
    pub fn pair(&self, grid: &Grid2D, g: &AdjointData) -> f64 {
        let c = trapezoid_weights(self.dt, self.nt);
        let mut s = 0.0;
        for (n, u) in self.states.iter().enumerate() {
            s += c[n] * g.pair_step(grid, &self.layout, n, u);
        }
        s
    }

    /// `(int <u, u> dt)^{1/2}` by the trapezoid rule.
    pub fn l2_norm(&self, grid: &Grid2D) -> f64 {
        let c = trapezoid_weights(self.dt, self.nt);
        let s: f64 = self
            .states
            .iter()
            .zip(&c)
            .map(|(u, w)| w * grid.inner(&self.layout, u, u))
            .sum();
        s.max(0.0).sqrt()
    }

    /// `self + s * o`
    pub fn axpy(&self, s: f64, o: &Self) -> Self {
        let mut r = self.clone();
        for (a, b) in r.states.iter_mut().zip(&o.states) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
        r
    }

    pub fn max_abs(&self) -> f64 {
        self.states
            .iter()
            .flatten()
            .fold(0.0, |m: f64, x| m.max(x.abs()))
    }

    fn check_matches(&self, ops: &DiscreteOperators) -> Result<()> {
        if self.layout != ops.layout {
            return Err(Error::Mismatch(format!(
                "recorded layout {:?} differs from the operators' {:?}",
                self.layout, ops.layout
            )));
        }
        if self.states.len() != self.nt + 1 {
            return Err(Error::Mismatch("incomplete recording".into()));
        }
        Ok(())
    }
}

/// Forcing of one stage.
#[derive(Clone, Copy)]
pub enum Src<'a> {
    None,
    /// A forcing evaluated at a half-step sample.
    At(&'a dyn Forcing, usize),
    /// A state-space vector.
    Dense(&'a [f64]),
}

struct Work {
    tensor: Vec<f64>,
}

impl Work {
    fn new(ops: &DiscreteOperators) -> Self {
        Work {
            tensor: vec![0.0; ops.layout.block_len()],
        }
    }
}

/// `z = s B^{-1}(f - A y)`
fn drive(ops: &DiscreteOperators, y: &[f64], src: Src, s: f64, z: &mut [f64], wk: &mut Work) {
    ops.neg_a(y, z, &mut wk.tensor);
    match src {
        Src::None => {}
        Src::At(f, k) => f.add_at(k, 1.0, z),
        Src::Dense(f) => {
            for (a, b) in z.iter_mut().zip(f) {
                *a += b;
            }
        }
    }
    ops.b_inv_scaled(z, s);
}

/// `k = z - Q y`
fn stage_k(ops: &DiscreteOperators, z: &[f64], y: &[f64], k: &mut [f64]) {
    k.copy_from_slice(z);
    ops.q_add(y, -1.0, k);
}

/// `L^† w = A B^{-1} w - Q w`, the adjoint of the generator in the grid product.
fn generator_adjoint(ops: &DiscreteOperators, w: &[f64], out: &mut [f64], wk: &mut Work) {
    let mut t = w.to_vec();
    ops.b_inv_scaled(&mut t, 1.0);
    ops.neg_a(&t, out, &mut wk.tensor);
    out.iter_mut().for_each(|x| *x = -*x);
    ops.q_add(w, -1.0, out);
}

/// Classical RK4 on several coupled copies. `stage(i, ys, zs, ks)` fills
/// `ks` (and the auxiliary `zs`) from the stage inputs `ys`.
struct Rk4 {
    ys: Vec<Vec<f64>>,
    zs: Vec<Vec<f64>>,
    ks: Vec<Vec<Vec<f64>>>,
}

impl Rk4 {
    fn new(copies: usize, len: usize) -> Self {
        Rk4 {
            ys: vec![vec![0.0; len]; copies],
            zs: vec![vec![0.0; len]; copies],
            ks: vec![vec![vec![0.0; len]; copies]; 4],
        }
    }

    fn step<F>(&mut self, u: &mut [Vec<f64>], dt: f64, mut stage: F) -> Result<()>
    where
        F: FnMut(usize, &[Vec<f64>], &mut [Vec<f64>], &mut [Vec<f64>]) -> Result<()>,
    {
        for i in 0..4 {
            for (j, y) in self.ys.iter_mut().enumerate() {
                y.copy_from_slice(&u[j]);
                if i > 0 {
                    let a = STAGE_A[i] * dt;
                    for (x, k) in y.iter_mut().zip(&self.ks[i - 1][j]) {
                        *x += a * k;
                    }
                }
            }
            stage(i, &self.ys, &mut self.zs, &mut self.ks[i])?;
        }
        for (j, uj) in u.iter_mut().enumerate() {
            for i in 0..4 {
                let b = STAGE_B[i] * dt;
                for (x, k) in uj.iter_mut().zip(&self.ks[i][j]) {
                    *x += b * k;
                }
            }
        }
        Ok(())
    }
}

fn check_time(ops: &DiscreteOperators, dt: f64, nt: usize) -> Result<()> {
    if !(dt > 0.0) || nt == 0 {
        return Err(Error::Config(format!("dt = {dt}, nt = {nt}")));
    }
    let limit = ops.cfl_limit();
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, limit });
    }
    Ok(())
}

/// `u' = B^{-1}(f - A u) - Q u`, `u(0) = 0`.
pub fn run_forward(ops: &DiscreteOperators, src: &dyn Forcing, dt: f64, nt: usize) -> Result<RecordedWavefield> {
    check_time(ops, dt, nt)?;
    let len = ops.layout.len();
    let mut rec = RecordedWavefield::new(ops.layout, dt, nt);
    let mut u = vec![vec![0.0; len]];
    rec.states.push(u[0].clone());
    let mut rk = Rk4::new(1, len);
    let mut wk = Work::new(ops);
    let mut fbuf = vec![0.0; len];
    let mut data_bound = 0.0;
    for n in 0..nt {
        let mut fmax: f64 = 0.0;
        for k in 2 * n..=2 * n + 2 {
            fbuf.iter_mut().for_each(|x| *x = 0.0);
            src.add_at(k, 1.0, &mut fbuf);
            fmax = fmax.max(ops.dual_energy(&fbuf).max(0.0).sqrt());
        }
        data_bound += dt * fmax;
        rk.step(&mut u, dt, |i, ys, zs, ks| {
            drive(ops, &ys[0], Src::At(src, 2 * n + SAMPLE[i]), 1.0, &mut zs[0], &mut wk);
            stage_k(ops, &zs[0], &ys[0], &mut ks[0]);
            Ok(())
        })?;
        let e = ops.energy(&u[0]);
        if !e.is_finite() || u[0].iter().any(|x| !x.is_finite()) || e.sqrt() > BLOWUP * data_bound {
            return Err(Error::Instability { step: n + 1 });
        }
        rec.states.push(u[0].clone());
    }
    Ok(rec)
}

/// Base-stage drives `z_i = B^{-1}(f - A Y_i)` of step `n`, recomputed from the stored state.
fn base_stages(
    ops: &DiscreteOperators,
    base: &RecordedWavefield,
    src: &dyn Forcing,
    n: usize,
    wk: &mut Work,
) -> Vec<Vec<f64>> {
    let len = ops.layout.len();
    let dt = base.dt;
    let u = &base.states[n];
    let mut zs = vec![vec![0.0; len]; 4];
    let mut k = vec![0.0; len];
    let mut y = vec![0.0; len];
    for i in 0..4 {
        y.copy_from_slice(u);
        if i > 0 {
            let a = STAGE_A[i] * dt;
            for (x, kk) in y.iter_mut().zip(&k) {
                *x += a * kk;
            }
        }
        drive(ops, &y, Src::At(src, 2 * n + SAMPLE[i]), 1.0, &mut zs[i], wk);
        stage_k(ops, &zs[i], &y, &mut k);
    }
    zs
}

fn add_maps(maps: &CellMaps, ops: &DiscreteOperators, x: &[f64], s: f64, out: &mut [f64]) {
    maps.apply_add(&ops.layout, x, s, out);
}

/// Derivative of the discrete forward map along `dir`: integrates
/// `ū' = B^{-1}(-A ū) - Q ū + G(dir) z` with `z = B^{-1}(f - A u)` taken
/// from the base stages, so the result is the exact derivative of the
/// RK4 solution.
pub fn run_linearized(
    ops: &DiscreteOperators,
    dir: &Field5,
    base: &RecordedWavefield,
    src: &dyn Forcing,
) -> Result<RecordedWavefield> {
    base.check_matches(ops)?;
    let g = ops.pullback(dir)?;
    let (dt, nt) = (base.dt, base.nt);
    let len = ops.layout.len();
    let mut rec = RecordedWavefield::new(ops.layout, dt, nt);
    let mut u = vec![vec![0.0; len], vec![0.0; len]];
    rec.states.push(u[1].clone());
    let mut rk = Rk4::new(2, len);
    let mut wk = Work::new(ops);
    for n in 0..nt {
        u[0].copy_from_slice(&base.states[n]);
        rk.step(&mut u, dt, |i, ys, zs, ks| {
            drive(ops, &ys[0], Src::At(src, 2 * n + SAMPLE[i]), 1.0, &mut zs[0], &mut wk);
            stage_k(ops, &zs[0], &ys[0], &mut ks[0]);
            drive(ops, &ys[1], Src::None, 1.0, &mut zs[1], &mut wk);
            let (z0, z1) = zs.split_at_mut(1);
            add_maps(&g, ops, &z0[0], 1.0, &mut z1[0]);
            stage_k(ops, &zs[1], &ys[1], &mut ks[1]);
            Ok(())
        })?;
        rec.states.push(u[1].clone());
    }
    Ok(rec)
}

/// Second derivative of the discrete forward map along `(d1, d2)`, split
/// into the cross-term part (sources `G(d1) z2 + G(d2) z1`) and the
/// curvature part (source `-B^{-1} V''[d1, d2] z`). Their sum is the second
/// derivative.
pub fn run_second_linearized(
    ops: &DiscreteOperators,
    d1: &Field5,
    d2: &Field5,
    base: &RecordedWavefield,
    lin1: &RecordedWavefield,
    lin2: &RecordedWavefield,
    src: &dyn Forcing,
) -> Result<(RecordedWavefield, RecordedWavefield)> {
    for r in [base, lin1, lin2] {
        r.check_matches(ops)?;
    }
    if lin1.nt != base.nt || lin2.nt != base.nt || lin1.dt != base.dt || lin2.dt != base.dt {
        return Err(Error::Mismatch("recordings on different time grids".into()));
    }
    let g1 = ops.pullback(d1)?;
    let g2 = ops.pullback(d2)?;
    let g12 = ops.pullback2(d1, d2)?;
    let (dt, nt) = (base.dt, base.nt);
    let len = ops.layout.len();
    let mut cross = RecordedWavefield::new(ops.layout, dt, nt);
    let mut curv = RecordedWavefield::new(ops.layout, dt, nt);
    let mut u = vec![vec![0.0; len]; 5];
    cross.states.push(u[3].clone());
    curv.states.push(u[4].clone());
    let mut rk = Rk4::new(5, len);
    let mut wk = Work::new(ops);
    for n in 0..nt {
        u[0].copy_from_slice(&base.states[n]);
        u[1].copy_from_slice(&lin1.states[n]);
        u[2].copy_from_slice(&lin2.states[n]);
        rk.step(&mut u, dt, |i, ys, zs, ks| {
            drive(ops, &ys[0], Src::At(src, 2 * n + SAMPLE[i]), 1.0, &mut zs[0], &mut wk);
            for j in 1..5 {
                drive(ops, &ys[j], Src::None, 1.0, &mut zs[j], &mut wk);
            }
            let (z0, rest) = zs.split_at_mut(1);
            let z0 = &z0[0];
            add_maps(&g1, ops, z0, 1.0, &mut rest[0]);
            add_maps(&g2, ops, z0, 1.0, &mut rest[1]);
            let (z12, rest2) = rest.split_at_mut(2);
            add_maps(&g1, ops, &z12[1], 1.0, &mut rest2[0]);
            add_maps(&g2, ops, &z12[0], 1.0, &mut rest2[0]);
            add_maps(&g12, ops, z0, 1.0, &mut rest2[1]);
            for j in 0..5 {
                stage_k(ops, &zs[j], &ys[j], &mut ks[j]);
            }
            Ok(())
        })?;
        cross.states.push(u[3].clone());
        curv.states.push(u[4].clone());
    }
    Ok((cross, curv))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjointMode {
    /// Exact transpose of the RK4 forward map.
    Discrete,
    /// RK4 on the adjoint equation integrated backward in time.
    Continuous,
}

/// Output of the reverse sweep through the forward steps.
#[derive(Clone, Debug)]
pub struct DiscreteAdjoint {
    /// Adjoint variables of the stored states `u_n`.
    pub states: RecordedWavefield,
    /// `sum_k <lambda_k, f_k>` for the probe forcing, where `lambda_k` is the
    /// sensitivity of the response to the forcing sample `k`.
    pub source_pairing: f64,
    /// Exact gradient of the response with respect to the parameters.
    pub gradient: Option<Field5>,
}

/// Reverse-mode sweep for the response `sum_n c_n <u_n, g_n>` with
/// trapezoid weights `c_n`.
pub fn run_adjoint_discrete(
    ops: &DiscreteOperators,
    g: &AdjointData,
    dt: f64,
    nt: usize,
    probe: Option<&dyn Forcing>,
    base: Option<(&RecordedWavefield, &dyn Forcing)>,
) -> Result<DiscreteAdjoint> {
    check_time(ops, dt, nt)?;
    if g.steps() != nt {
        return Err(Error::Mismatch(format!("data has {} steps, run has {nt}", g.steps())));
    }
    if let Some((b, _)) = base {
        b.check_matches(ops)?;
        if b.nt != nt || b.dt != dt {
            return Err(Error::Mismatch("base recorded on a different time grid".into()));
        }
    }
    let len = ops.layout.len();
    let c = trapezoid_weights(dt, nt);
    let units = match base {
        Some(_) => Some(ops.unit_v_prime()?),
        None => None,
    };
    let mut grad = base.map(|_| Field5::zeros(ops.grid.nx, ops.grid.nz));
    let mut wk = Work::new(ops);
    let mut ubar = vec![0.0; len];
    g.add_step(nt, c[nt], &mut ubar);
    let mut states = vec![ubar.clone()];
    let mut kbar = vec![vec![0.0; len]; 4];
    let mut ybar = vec![vec![0.0; len]; 4];
    let mut fbuf = vec![0.0; len];
    let mut lam = vec![0.0; len];
    let mut pairing = 0.0;
    for n in (0..nt).rev() {
        for i in (0..4).rev() {
            let k = &mut kbar[i];
            for (x, u) in k.iter_mut().zip(&ubar) {
                *x = STAGE_B[i] * dt * u;
            }
            if i < 3 {
                let a = STAGE_A[i + 1] * dt;
                for (x, y) in k.iter_mut().zip(&ybar[i + 1]) {
                    *x += a * y;
                }
            }
            generator_adjoint(ops, &kbar[i], &mut ybar[i], &mut wk);
        }
        if probe.is_some() || base.is_some() {
            for i in 0..4 {
                lam.copy_from_slice(&kbar[i]);
                ops.b_inv_scaled(&mut lam, 1.0);
                if let Some(f) = probe {
                    fbuf.iter_mut().for_each(|x| *x = 0.0);
                    f.add_at(2 * n + SAMPLE[i], 1.0, &mut fbuf);
                    pairing += ops.inner(&lam, &fbuf);
                }
            }
        }
        if let (Some((b, src)), Some(units), Some(gr)) = (base, units.as_ref(), grad.as_mut()) {
            let zs = base_stages(ops, b, src, n, &mut wk);
            for i in 0..4 {
                lam.copy_from_slice(&kbar[i]);
                ops.b_inv_scaled(&mut lam, 1.0);
                // <G(e_k) z, kbar> = -<V'(e_k) z, B^{-1} kbar>
                ops.accumulate_units(units, &zs[i], &lam, -1.0, true, gr);
            }
        }
        for y in &ybar {
            for (u, x) in ubar.iter_mut().zip(y) {
                *u += x;
            }
        }
        g.add_step(n, c[n], &mut ubar);
        states.push(ubar.clone());
    }
    states.reverse();
    Ok(DiscreteAdjoint {
        states: RecordedWavefield {
            layout: ops.layout,
            dt,
            nt,
            states,
        },
        source_pairing: pairing,
        gradient: grad,
    })
}

/// Adjoint equation `B w' - A^* w - Q^* B w = g`, `w(T) = 0`, integrated in
/// reversed time `s = T - t`. Half-step data are linear interpolants.
pub fn run_adjoint_continuous(
    ops: &DiscreteOperators,
    g: &AdjointData,
    dt: f64,
    nt: usize,
) -> Result<RecordedWavefield> {
    check_time(ops, dt, nt)?;
    if g.steps() != nt {
        return Err(Error::Mismatch(format!("data has {} steps, run has {nt}", g.steps())));
    }
    let len = ops.layout.len();
    let mut w = vec![vec![0.0; len]];
    let mut states = vec![w[0].clone()];
    let mut rk = Rk4::new(1, len);
    let mut wk = Work::new(ops);
    for m in 0..nt {
        let top = 2 * (nt - m);
        rk.step(&mut w, dt, |i, ys, zs, ks| {
            drive(ops, &ys[0], Src::At(g, top - SAMPLE[i]), -1.0, &mut zs[0], &mut wk);
            stage_k(ops, &zs[0], &ys[0], &mut ks[0]);
            Ok(())
        })?;
        states.push(w[0].clone());
    }
    states.reverse();
    Ok(RecordedWavefield {
        layout: ops.layout,
        dt,
        nt,
        states,
    })
}

pub fn run_adjoint(
    ops: &DiscreteOperators,
    g: &AdjointData,
    dt: f64,
    nt: usize,
    mode: AdjointMode,
) -> Result<RecordedWavefield> {
    match mode {
        AdjointMode::Continuous => run_adjoint_continuous(ops, g, dt, nt),
        AdjointMode::Discrete => Ok(run_adjoint_discrete(ops, g, dt, nt, None, None)?.states),
    }
}

/// First adjoint `w` and second adjoint `z` on the step grid.
#[derive(Clone, Debug)]
pub struct SecondAdjointRun {
    pub w: RecordedWavefield,
    pub z: RecordedWavefield,
}

/// Joint backward run of the adjoint `w` (data `g`) and the second adjoint
/// `z` with data `-V'(p) dir (w' - Q w) = -V'(p) dir B^{-1}(g - A w)`.
pub fn run_second_adjoint_continuous(
    ops: &DiscreteOperators,
    dir: &Field5,
    g: &AdjointData,
    dt: f64,
    nt: usize,
) -> Result<SecondAdjointRun> {
    check_time(ops, dt, nt)?;
    if g.steps() != nt {
        return Err(Error::Mismatch(format!("data has {} steps, run has {nt}", g.steps())));
    }
    let vp = ops.v_prime(dir)?;
    let len = ops.layout.len();
    let mut u = vec![vec![0.0; len]; 2];
    let mut ws = vec![u[0].clone()];
    let mut zs_rec = vec![u[1].clone()];
    let mut rk = Rk4::new(2, len);
    let mut wk = Work::new(ops);
    let mut gz = vec![0.0; len];
    for m in 0..nt {
        let top = 2 * (nt - m);
        rk.step(&mut u, dt, |i, ys, zs, ks| {
            // zs[0] = B^{-1}(g - A w) = w' - Q w
            drive(ops, &ys[0], Src::At(g, top - SAMPLE[i]), 1.0, &mut zs[0], &mut wk);
            gz.iter_mut().for_each(|x| *x = 0.0);
            vp.apply_add(&ops.layout, &zs[0], -1.0, &mut gz);
            zs[0].iter_mut().for_each(|x| *x = -*x);
            stage_k(ops, &zs[0], &ys[0], &mut ks[0]);
            drive(ops, &ys[1], Src::Dense(&gz), -1.0, &mut zs[1], &mut wk);
            stage_k(ops, &zs[1], &ys[1], &mut ks[1]);
            Ok(())
        })?;
        ws.push(u[0].clone());
        zs_rec.push(u[1].clone());
    }
    ws.reverse();
    zs_rec.reverse();
    let rec = |states| RecordedWavefield {
        layout: ops.layout,
        dt,
        nt,
        states,
    };
    Ok(SecondAdjointRun {
        w: rec(ws),
        z: rec(zs_rec),
    })
}

/// `z_n = B^{-1}(f(t_n) - A u_n)`, which equals `u' + Q u` at the step times.
pub fn drives_at_steps(ops: &DiscreteOperators, rec: &RecordedWavefield, src: Src) -> Vec<Vec<f64>> {
    let mut wk = Work::new(ops);
    rec.states
        .iter()
        .enumerate()
        .map(|(n, u)| {
            let mut z = ops.zeros();
            let s = match src {
                Src::At(f, _) => Src::At(f, 2 * n),
                other => other,
            };
            drive(ops, u, s, 1.0, &mut z, &mut wk);
            z
        })
        .collect()
}
