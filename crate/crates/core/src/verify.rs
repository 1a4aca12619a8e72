//! Named cross-checks producing pass/fail verdicts with CSV evidence.
//!
//! Every check is reproducible from its name, parameters and seed. A
//! report passes iff every metric lies in its window; the verdict line
//! carries the first failing metric, or the headline (first) metric.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{smooth_field, ModelConfig, RunConfig};
use crate::error::{Error, Result};
use crate::evolution_oracle as oracle;
use crate::fwi::{self, Assembly, GradientField};
use crate::rheology::{apply_cinv_derivative, apply_cinv_second, IsotropicMap};
use crate::sym::{ncomp, Sym};
use crate::wave2d::{
    run_adjoint_discrete, run_forward, AdjointData, AdjointMode, DiscreteOperators, Field5, Grid2D, Layout,
    PointSource, RecordedWavefield,
};

/// One observed quantity with its admissible window `[lo, hi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Metric {
    pub fn at_most(name: &str, value: f64, hi: f64) -> Self {
        Metric {
            name: name.into(),
            value,
            lo: f64::NEG_INFINITY,
            hi,
        }
    }

    pub fn at_least(name: &str, value: f64, lo: f64) -> Self {
        Metric {
            name: name.into(),
            value,
            lo,
            hi: f64::INFINITY,
        }
    }

    pub fn within(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Metric {
            name: name.into(),
            value,
            lo,
            hi,
        }
    }

    pub fn ok(&self) -> bool {
        !self.value.is_nan() && self.value >= self.lo && self.value <= self.hi
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TestReport {
    pub name: String,
    pub params: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub metrics: Vec<Metric>,
    pub seconds: f64,
}

impl TestReport {
    pub fn new(name: &str) -> Self {
        TestReport {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn param(&mut self, k: &str, v: impl ToString) {
        self.params.push((k.into(), v.to_string()));
    }

    pub fn columns(&mut self, cols: &[&str]) {
        self.columns = cols.iter().map(|c| c.to_string()).collect();
    }

    pub fn row(&mut self, r: Vec<f64>) {
        self.rows.push(r);
    }

    pub fn metric(&mut self, m: Metric) {
        self.metrics.push(m);
    }

    pub fn pass(&self) -> bool {
        !self.metrics.is_empty() && self.metrics.iter().all(Metric::ok)
    }

    /// First failing metric, else the headline metric.
    pub fn worst(&self) -> Option<&Metric> {
        self.metrics.iter().find(|m| !m.ok()).or(self.metrics.first())
    }

    /// `PASS|FAIL <name> <worst-metric>`
    pub fn verdict_line(&self) -> String {
        let v = if self.pass() { "PASS" } else { "FAIL" };
        let w = self.worst().map_or(f64::NAN, |m| m.value);
        format!("{v} {} {w:.3e}", self.name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# test={}", self.name);
        for (k, v) in &self.params {
            let _ = writeln!(s, "# {k}={v}");
        }
        let _ = writeln!(s, "# seconds={:.3}", self.seconds);
        for m in &self.metrics {
            let _ = writeln!(
                s,
                "# metric {}={:.16e} window=[{:e}, {:e}] {}",
                m.name,
                m.value,
                m.lo,
                m.hi,
                if m.ok() { "ok" } else { "violated" }
            );
        }
        let _ = writeln!(s, "{}", self.columns.join(","));
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(|x| format!("{x:.16e}")).collect();
            let _ = writeln!(s, "{}", line.join(","));
        }
        s
    }

    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        let p = dir.join(format!("{}.csv", self.name));
        std::fs::write(&p, self.to_csv()).map_err(|e| Error::io(&p, e))
    }
}

fn timed(name: &str, f: impl FnOnce(&mut TestReport) -> Result<()>) -> Result<TestReport> {
    let t = Instant::now();
    let mut r = TestReport::new(name);
    f(&mut r)?;
    r.seconds = t.elapsed().as_secs_f64();
    Ok(r)
}

/// Least-squares slope of `log y` against `log x`.
pub fn observed_order(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

// ---------------------------------------------------------------- rheology

/// Round trip of the inverse and finite-difference checks of the first and
/// second derivatives of the inverse map over random admissible moduli.
pub fn rheology_identities(seed: u64, points: usize) -> Result<TestReport> {
    timed("rheology-identities", |rep| {
        rep.param("seed", seed);
        rep.param("points", points);
        rep.columns(&["dim", "roundtrip", "first_fd", "second_fd"]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = crate::config::default_bounds().derived(0.5);
        let (mut w0, mut w1, mut w2) = (0.0f64, 0.0f64, 0.0f64);
        for dim in [2, 3] {
            for _ in 0..points {
                let c = IsotropicMap::new(rng.gen_range(d.m_lo..d.m_hi), rng.gen_range(d.p_lo..d.p_hi), dim)?;
                let comps: Vec<f64> = (0..ncomp(dim)).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let m = Sym::from_components(dim, &comps)?;
                let ci = c.invert()?;
                let rt = (ci.apply(&c.apply(&m)?)? - m).norm() / m.norm();
                let (mh, ph) = (c.m * rng.gen_range(-1.0..1.0), c.p * rng.gen_range(-1.0..1.0));
                let exact = apply_cinv_derivative(c.m, c.p, mh, ph, &m)?;
                let h = 1e-4;
                let a = IsotropicMap::new(c.m + h * mh, c.p + h * ph, dim)?.invert()?.apply(&m)?;
                let b = IsotropicMap::new(c.m - h * mh, c.p - h * ph, dim)?.invert()?.apply(&m)?;
                let e1 = ((a - b).scale(0.5 / h) - exact).norm() / exact.norm();
                let d2 = (c.m * rng.gen_range(-1.0..1.0), c.p * rng.gen_range(-1.0..1.0));
                let s12 = apply_cinv_second(c.m, c.p, (mh, ph), d2, &m)?;
                let h = 1e-3;
                let dp = apply_cinv_derivative(c.m + h * mh, c.p + h * ph, d2.0, d2.1, &m)?;
                let dm = apply_cinv_derivative(c.m - h * mh, c.p - h * ph, d2.0, d2.1, &m)?;
                let opn = |x: &IsotropicMap<f64>| x.shear_gain().abs().max(x.bulk_gain().abs());
                let scale = 2.0
                    * opn(&ci).powi(3)
                    * opn(&IsotropicMap::new(mh, ph, dim)?)
                    * opn(&IsotropicMap::new(d2.0, d2.1, dim)?)
                    * m.norm();
                let e2 = ((dp - dm).scale(0.5 / h) - s12).norm() / scale;
                rep.row(vec![dim as f64, rt, e1, e2]);
                w0 = w0.max(rt);
                w1 = w1.max(e1);
                w2 = w2.max(e2);
            }
        }
        rep.metric(Metric::at_most("roundtrip", w0, 1e-13));
        rep.metric(Metric::at_most("first_derivative_fd", w1, 1e-6));
        rep.metric(Metric::at_most("second_derivative_fd", w2, 1e-5));
        Ok(())
    })
}

// ------------------------------------------------------------------ oracle

const ORACLE_N: usize = 8;
const ORACLE_TOL: f64 = 1e-10;

fn oracle_system(seed: u64) -> Result<oracle::OracleSystem> {
    oracle::OracleSystem::random(ORACLE_N, seed, 0.5, 2.0, 1.0)
}

fn oracle_sym(rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = ORACLE_N;
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let s = (&m + m.transpose()) * 0.5;
    let norm = s.clone().symmetric_eigenvalues().amax();
    s / norm
}

fn oracle_data(rng: &mut ChaCha8Rng) -> impl Fn(f64) -> DVector<f64> + Clone {
    let n = ORACLE_N;
    let a = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let w = rng.gen_range(1.0..6.0);
    move |t: f64| &a * (w * t).sin() + &b * (t * t - 0.3)
}

/// Pairing equalities for the first (`order = 1`) or second adjoint.
pub fn oracle_dot_test(order: usize, trials: usize, seed: u64) -> Result<TestReport> {
    timed(&format!("oracle-dot-{order}"), |rep| {
        rep.param("seed", seed);
        rep.param("trials", trials);
        rep.columns(&["trial", "direct", "adjoint", "gap"]);
        let mut worst = 0.0f64;
        for k in 0..trials as u64 {
            let sys = oracle_system(seed * 1000 + k)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + k);
            let h1 = oracle_sym(&mut rng);
            let g = oracle_data(&mut rng);
            let (direct, adj) = if order == 1 {
                let base = oracle::solve_forward(&sys, &DVector::zeros(ORACLE_N), ORACLE_TOL)?;
                let d = oracle::solve_first_derivative(&sys, &h1, &base, ORACLE_TOL)?;
                let w = oracle::solve_adjoint(&sys, &g, ORACLE_TOL)?;
                let vals: Vec<f64> = base
                    .times
                    .iter()
                    .zip(&base.states)
                    .zip(&w.states)
                    .map(|((t, u), w)| {
                        let z = sys.b_inv() * (sys.source.eval(*t, ORACLE_N) - &sys.a * u);
                        (&h1 * z).dot(w)
                    })
                    .collect();
                (d.pair_with(&g), oracle::simpson(base.dt(), &vals))
            } else {
                let h2 = oracle_sym(&mut rng);
                let direct = oracle::solve_second_derivative(&sys, &h1, &h2, ORACLE_TOL)?.pair_with(&g);
                let grad = oracle::second_adjoint_gradient(&sys, &h1, &g, ORACLE_TOL)?;
                (direct, grad.component_mul(&h2).sum())
            };
            let gap = (direct - adj).abs() / direct.abs();
            rep.row(vec![k as f64, direct, adj, gap]);
            worst = worst.max(gap);
        }
        rep.metric(Metric::at_most("max_rel_gap", worst, 1e-8));
        Ok(())
    })
}

/// Remainder ratios under halving of the perturbation size.
pub fn oracle_taylor_test(order: usize, seed: u64) -> Result<TestReport> {
    timed(&format!("oracle-taylor-{order}"), |rep| {
        rep.param("seed", seed);
        rep.columns(&["s", "remainder", "ratio"]);
        let sys = oracle_system(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = oracle_sym(&mut rng);
        let run = oracle::solve_second_order(&sys, &h, &h, ORACLE_TOL)?;
        let scales = [0.04, 0.02, 0.01];
        let mut rem = Vec::new();
        for &s in &scales {
            let p = oracle::solve_forward(&sys.with_b(&sys.b + &h * s)?, &DVector::zeros(ORACLE_N), ORACLE_TOL)?;
            let mut r = p.axpy(-1.0, &run.base).axpy(-s, &run.first1);
            if order == 2 {
                r = r.axpy(-0.5 * s * s, &run.second);
            }
            rem.push(r.sup_norm());
        }
        let (target, tol) = if order == 1 { (4.0, 0.3) } else { (8.0, 0.8) };
        for (k, &s) in scales.iter().enumerate() {
            let ratio = if k == 0 { f64::NAN } else { rem[k - 1] / rem[k] };
            rep.row(vec![s, rem[k], ratio]);
        }
        let dev = (1..rem.len())
            .map(|k| (rem[k - 1] / rem[k] - target).abs())
            .fold(0.0, f64::max);
        rep.metric(Metric::at_most("max_ratio_deviation", dev, tol));
        Ok(())
    })
}

pub fn oracle_symmetry_test(trials: usize, seed: u64) -> Result<TestReport> {
    timed("oracle-symmetry", |rep| {
        rep.param("seed", seed);
        rep.param("trials", trials);
        rep.columns(&["trial", "asymmetry"]);
        let mut worst = 0.0f64;
        for k in 0..trials as u64 {
            let sys = oracle_system(seed * 31 + k)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 37 + k);
            let (h1, h2) = (oracle_sym(&mut rng), oracle_sym(&mut rng));
            let a = oracle::solve_second_derivative(&sys, &h1, &h2, ORACLE_TOL)?;
            let b = oracle::solve_second_derivative(&sys, &h2, &h1, ORACLE_TOL)?;
            let e = a.axpy(-1.0, &b).sup_norm() / a.sup_norm().max(1e-300);
            rep.row(vec![k as f64, e]);
            worst = worst.max(e);
        }
        rep.metric(Metric::at_most("max_rel_asymmetry", worst, 1e-10));
        Ok(())
    })
}

pub fn oracle_lipschitz_test(seed: u64, scales: &[f64]) -> Result<TestReport> {
    timed("oracle-lipschitz", |rep| {
        rep.param("seed", seed);
        rep.columns(&["s", "ratio"]);
        let sys = oracle_system(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h1, h2, db) = (oracle_sym(&mut rng), oracle_sym(&mut rng), oracle_sym(&mut rng));
        let t = oracle::lipschitz_scan(&sys, &h1, &h2, &db, scales, ORACLE_TOL)?;
        for (s, r) in t.scales.iter().zip(&t.ratios) {
            rep.row(vec![*s, *r]);
        }
        rep.metric(Metric::at_most("ratio_spread", t.spread(), 2.0));
        Ok(())
    })
}

// --------------------------------------------------------------------- pde

/// Operators, source and receivers built from one configuration.
pub struct Scenario {
    pub cfg: RunConfig,
    pub ops: DiscreteOperators,
    pub src: PointSource,
    pub nodes: Vec<usize>,
}

impl Scenario {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let ops = cfg.operators()?;
        let src = cfg.point_source(&ops.grid)?;
        let nodes = cfg.receiver_nodes(&ops.grid);
        Ok(Scenario { cfg, ops, src, nodes })
    }

    /// `n x n` cells on a fixed physical box of side `extent`.
    pub fn square(n: usize, extent: f64, t_end: f64) -> Result<Self> {
        let h = extent / n as f64;
        Self::new(RunConfig::square(n, h, 0.1 * h, t_end))
    }

    pub fn dt(&self) -> f64 {
        self.cfg.dt
    }

    pub fn nt(&self) -> usize {
        self.cfg.nt()
    }

    pub fn forward(&self) -> Result<RecordedWavefield> {
        run_forward(&self.ops, &self.src, self.dt(), self.nt())
    }

    /// Receiver records of the same setup with a different smooth model.
    pub fn observed(&self, model_seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut cfg = self.cfg.clone();
        cfg.model = ModelConfig::Smooth {
            seed: model_seed,
            amplitude: 0.6,
        };
        let other = Scenario::new(cfg)?;
        Ok(other.forward()?.seismogram(&self.nodes))
    }

    /// Residual data `R u - d` for observations from another model.
    pub fn residual_data(&self, base: &RecordedWavefield, model_seed: u64) -> Result<AdjointData> {
        let obs = self.observed(model_seed)?;
        Ok(fwi::misfit(&self.ops, base, &self.nodes, &obs)?.1)
    }
}

/// Smooth random direction: low Fourier modes per parameter with peak
/// magnitude equal to the box width.
pub fn smooth_direction(ops: &DiscreteOperators, seed: u64) -> Field5 {
    let b = ops.field.bounds;
    let (w, mid) = (b.width(), b.mid().to_array());
    let f = smooth_field(ops.grid.nx, ops.grid.nz, &b, seed, 1.0);
    let mut d = Field5::zeros(ops.grid.nx, ops.grid.nz);
    for k in 0..5 {
        for c in 0..d.cells() {
            d.data[k][c] = 2.0 * (f.data[k][c] - mid[k]);
        }
    }
    debug_assert!(w.iter().all(|x| *x > 0.0));
    d
}

/// Random state with inactive nodes zeroed.
pub fn random_state(grid: &Grid2D, layout: &Layout, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..layout.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    grid.project(&mut v);
    v
}

/// State-space data `a sin(.) + b cos(.)` with random states `a`, `b` and
/// random smooth time profiles on the step grid.
pub fn smooth_state_data(grid: &Grid2D, layout: &Layout, nt: usize, rng: &mut ChaCha8Rng) -> AdjointData {
    let a = random_state(grid, layout, rng);
    let b = random_state(grid, layout, rng);
    let (fa, fb) = (rng.gen_range(3.0..12.0), rng.gen_range(2.0..8.0));
    let steps = (0..=nt)
        .map(|n| {
            let s = n as f64 / nt as f64;
            let (ca, cb) = ((fa * s).sin(), (fb * s).cos());
            a.iter().zip(&b).map(|(x, y)| ca * x + cb * y).collect()
        })
        .collect();
    AdjointData::Dense(steps)
}

/// `(sum_n c_n |x_n|^2)^{1/2}` for receiver traces.
pub fn trace_norm(traces: &[Vec<f64>], dt: f64) -> f64 {
    let c = crate::wave2d::trapezoid_weights(dt, traces.len() - 1);
    traces
        .iter()
        .zip(&c)
        .map(|(r, w)| w * r.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

fn data_values(g: &AdjointData) -> &[Vec<f64>] {
    match g {
        AdjointData::Receivers { values, .. } => values,
        AdjointData::Dense(v) => v,
    }
}

/// Transpose test of the time stepper for random forcing and data.
pub fn pde_dot_test(n: usize, nt: usize, trials: usize, seed: u64) -> Result<TestReport> {
    timed("pde-dot-discrete", |rep| {
        let sc = Scenario::new(RunConfig::square(n, 1.0, 0.1, 0.1 * nt as f64))?;
        rep.param("grid", format!("{n}x{n}"));
        rep.param("nt", nt);
        rep.param("seed", seed);
        rep.columns(&["trial", "forward_pairing", "adjoint_pairing", "rel_gap"]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for k in 0..trials {
            let f = smooth_state_data(&sc.ops.grid, &sc.ops.layout, nt, &mut rng);
            let g = smooth_state_data(&sc.ops.grid, &sc.ops.layout, nt, &mut rng);
            let lhs = run_forward(&sc.ops, &f, sc.dt(), nt)?.pair(&sc.ops.grid, &g);
            let rhs = run_adjoint_discrete(&sc.ops, &g, sc.dt(), nt, Some(&f), None)?.source_pairing;
            let gap = (lhs - rhs).abs() / lhs.abs().max(rhs.abs());
            rep.row(vec![k as f64, lhs, rhs, gap]);
            worst = worst.max(gap);
        }
        rep.metric(Metric::at_most("max_rel_gap", worst, 1e-12));
        Ok(())
    })
}

/// Resolution level: cells per side, with fixed physical size and duration.
#[derive(Clone, Copy, Debug)]
pub struct Level {
    pub n: usize,
    pub extent: f64,
    pub t_end: f64,
}

pub const FIRST_ORDER_LEVELS: [Level; 3] = [
    Level { n: 32, extent: 64.0, t_end: 60.0 },
    Level { n: 48, extent: 64.0, t_end: 60.0 },
    Level { n: 64, extent: 64.0, t_end: 60.0 },
];

pub const SECOND_ORDER_LEVELS: [Level; 3] = [
    Level { n: 24, extent: 48.0, t_end: 40.0 },
    Level { n: 36, extent: 48.0, t_end: 40.0 },
    Level { n: 48, extent: 48.0, t_end: 40.0 },
];

/// Gap between the derivative paired with residual data and the
/// continuous adjoint paired with the direction, relative to
/// `|R phi'(dir)| |g|`, over a refinement ladder. Also checks the spread
/// (max over median) of the gap over `probes` directions at the coarsest level.
pub fn pde_first_duality(levels: &[Level], probes: usize, seed: u64) -> Result<TestReport> {
    timed("pde-duality-1", |rep| {
        rep.param("seed", seed);
        rep.param("levels", format!("{levels:?}"));
        rep.columns(&["n", "h", "dt", "probe", "lhs", "rhs", "rel_gap"]);
        let (mut hs, mut gaps) = (Vec::new(), Vec::new());
        let mut spread = 1.0;
        for (li, lv) in levels.iter().enumerate() {
            let sc = Scenario::square(lv.n, lv.extent, lv.t_end)?;
            let base = sc.forward()?;
            let g = sc.residual_data(&base, seed + 100)?;
            let gn = trace_norm(data_values(&g), sc.dt());
            let grad = fwi::phi_prime_adjoint(&sc.ops, &g, &base, &sc.src, AdjointMode::Continuous, Assembly::Formulas)?;
            let np = if li == 0 { probes.max(1) } else { 1 };
            let mut level_gaps = Vec::new();
            for k in 0..np as u64 {
                let dir = smooth_direction(&sc.ops, seed + k);
                let lin = fwi::phi_prime(&sc.ops, &dir, &base, &sc.src)?;
                let lhs = lin.pair(&sc.ops.grid, &g);
                let rhs = grad.dot(&dir);
                let gap = (lhs - rhs).abs() / (trace_norm(&lin.seismogram(&sc.nodes), sc.dt()) * gn);
                rep.row(vec![lv.n as f64, sc.cfg.h, sc.dt(), k as f64, lhs, rhs, gap]);
                level_gaps.push(gap);
            }
            if li == 0 {
                // the gap is a signed error bilinear in the probe and may
                // cancel by chance, so the spread is taken about the median
                let mut sorted = level_gaps.clone();
                sorted.sort_by(f64::total_cmp);
                let med = 0.5 * (sorted[(np - 1) / 2] + sorted[np / 2]);
                spread = sorted[np - 1] / med;
                rep.param("probe_max_over_min", sorted[np - 1] / sorted[0]);
            }
            hs.push(sc.cfg.h);
            gaps.push(level_gaps[0]);
        }
        rep.metric(Metric::at_most("finest_gap", *gaps.last().unwrap(), 3e-3));
        if gaps.len() > 1 {
            rep.metric(Metric::at_least("observed_order", observed_order(&hs, &gaps), 1.0));
        }
        rep.metric(Metric::at_most("probe_spread", spread, 5.0));
        Ok(())
    })
}

/// Same for the second derivative and the second-order adjoint, worst of
/// `trials` random `(dir, q, g)` per level.
pub fn pde_second_duality(levels: &[Level], trials: usize, seed: u64) -> Result<TestReport> {
    timed("pde-duality-2", |rep| {
        rep.param("seed", seed);
        rep.param("levels", format!("{levels:?}"));
        rep.columns(&["n", "h", "dt", "trial", "lhs", "rhs", "rel_gap", "cross_gap", "curvature_gap"]);
        let (mut hs, mut gaps) = (Vec::new(), Vec::new());
        for lv in levels {
            let sc = Scenario::square(lv.n, lv.extent, lv.t_end)?;
            let base = sc.forward()?;
            let mut worst = 0.0f64;
            for k in 0..trials as u64 {
                let g = sc.residual_data(&base, seed + 200 + k)?;
                let gn = trace_norm(data_values(&g), sc.dt());
                let dir = smooth_direction(&sc.ops, seed + 10 * k + 1);
                let q = smooth_direction(&sc.ops, seed + 10 * k + 2);
                let l1 = fwi::phi_prime(&sc.ops, &dir, &base, &sc.src)?;
                let l2 = fwi::phi_prime(&sc.ops, &q, &base, &sc.src)?;
                let (cross, curv) =
                    crate::wave2d::run_second_linearized(&sc.ops, &dir, &q, &base, &l1, &l2, &sc.src)?;
                let sec = cross.axpy(1.0, &curv);
                let lhs = sec.pair(&sc.ops.grid, &g);
                let out = fwi::phi_second_adjoint(&sc.ops, &dir, &g, &base, &sc.src, Assembly::Formulas)?;
                let rhs = out.total().dot(&q);
                let norm = trace_norm(&sec.seismogram(&sc.nodes), sc.dt()) * gn;
                let gap = (lhs - rhs).abs() / norm;
                let cg = (cross.pair(&sc.ops.grid, &g) - out.cross.dot(&q)).abs() / norm;
                let vg = (curv.pair(&sc.ops.grid, &g) - out.curvature.dot(&q)).abs() / norm;
                rep.row(vec![lv.n as f64, sc.cfg.h, sc.dt(), k as f64, lhs, rhs, gap, cg, vg]);
                worst = worst.max(gap);
            }
            hs.push(sc.cfg.h);
            gaps.push(worst);
        }
        rep.metric(Metric::at_most("finest_gap", *gaps.last().unwrap(), 1e-2));
        if gaps.len() > 1 {
            rep.metric(Metric::at_least("observed_order", observed_order(&hs, &gaps), 1.0));
        }
        Ok(())
    })
}

/// Directional derivatives of the receiver misfit from the adjoint
/// gradient against central differences of the misfit.
pub fn pde_misfit_gradient(n: usize, directions: usize, seed: u64) -> Result<TestReport> {
    timed("pde-misfit-gradient", |rep| {
        let sc = Scenario::square(n, n as f64, 60.0)?;
        rep.param("grid", format!("{n}x{n}"));
        rep.param("nt", sc.nt());
        rep.param("seed", seed);
        rep.param("mode", "discrete");
        let eps = 1e-3;
        rep.param("fd_step", eps);
        rep.columns(&["direction", "adjoint", "central_fd", "rel_err"]);
        let obs = sc.observed(seed + 300)?;
        let (_, grad) = fwi::misfit_gradient(&sc.ops, &sc.src, sc.dt(), sc.nt(), &sc.nodes, &obs, AdjointMode::Discrete)?;
        let j_at = |s: f64, dir: &GradientField| -> Result<f64> {
            let f = sc.ops.field.offset(s, dir);
            let ops = DiscreteOperators::new(sc.ops.grid.clone(), f, sc.ops.relax.clone())?;
            let u = run_forward(&ops, &sc.src, sc.dt(), sc.nt())?;
            Ok(fwi::misfit(&ops, &u, &sc.nodes, &obs)?.0)
        };
        let mut worst = 0.0f64;
        for k in 0..directions as u64 {
            let dir = smooth_direction(&sc.ops, seed + 40 + k);
            let adj = grad.dot(&dir);
            let fd = (j_at(eps, &dir)? - j_at(-eps, &dir)?) / (2.0 * eps);
            let e = (adj - fd).abs() / fd.abs();
            rep.row(vec![k as f64, adj, fd, e]);
            worst = worst.max(e);
        }
        rep.metric(Metric::at_most("max_rel_err", worst, 1e-3));
        Ok(())
    })
}

/// `|phi''[d1, d2] - phi''[d2, d1]| / |phi''[d1, d2]|` in the space-time norm.
pub fn pde_symmetry(n: usize, t_end: f64, trials: usize, seed: u64) -> Result<TestReport> {
    timed("pde-symmetry", |rep| {
        let sc = Scenario::square(n, n as f64, t_end)?;
        rep.param("grid", format!("{n}x{n}"));
        rep.param("nt", sc.nt());
        rep.param("seed", seed);
        rep.columns(&["trial", "rel_asymmetry"]);
        let base = sc.forward()?;
        let mut worst = 0.0f64;
        for k in 0..trials as u64 {
            let d1 = smooth_direction(&sc.ops, seed + 2 * k);
            let d2 = smooth_direction(&sc.ops, seed + 2 * k + 1);
            let a = fwi::phi_second(&sc.ops, &d1, &d2, &base, &sc.src)?;
            let b = fwi::phi_second(&sc.ops, &d2, &d1, &base, &sc.src)?;
            let e = a.axpy(-1.0, &b).l2_norm(&sc.ops.grid) / a.l2_norm(&sc.ops.grid);
            rep.row(vec![k as f64, e]);
            worst = worst.max(e);
        }
        rep.metric(Metric::at_most("max_rel_asymmetry", worst, 1e-11));
        Ok(())
    })
}

/// First and second Taylor remainders of the wavefield under halving.
pub fn pde_taylor(order: usize, n: usize, t_end: f64, seed: u64) -> Result<TestReport> {
    timed(&format!("pde-taylor-{order}"), |rep| {
        let sc = Scenario::square(n, n as f64, t_end)?;
        rep.param("grid", format!("{n}x{n}"));
        rep.param("nt", sc.nt());
        rep.param("seed", seed);
        rep.columns(&["s", "remainder", "ratio"]);
        let base = sc.forward()?;
        let dir = smooth_direction(&sc.ops, seed);
        let lin = fwi::phi_prime(&sc.ops, &dir, &base, &sc.src)?;
        let sec = if order == 2 {
            Some(fwi::phi_second(&sc.ops, &dir, &dir, &base, &sc.src)?)
        } else {
            None
        };
        let scales = if order == 1 { [0.04, 0.02, 0.01] } else { [0.08, 0.04, 0.02] };
        let mut rem = Vec::new();
        for &s in &scales {
            let f = sc.ops.field.offset(s, &dir);
            let ops = DiscreteOperators::new(sc.ops.grid.clone(), f, sc.ops.relax.clone())?;
            let u = run_forward(&ops, &sc.src, sc.dt(), sc.nt())?;
            let mut r = u.axpy(-1.0, &base).axpy(-s, &lin);
            if let Some(sec) = &sec {
                r = r.axpy(-0.5 * s * s, sec);
            }
            rem.push(r.l2_norm(&sc.ops.grid));
        }
        let (target, tol) = if order == 1 { (4.0, 0.5) } else { (8.0, 1.0) };
        for (k, &s) in scales.iter().enumerate() {
            rep.row(vec![s, rem[k], if k == 0 { f64::NAN } else { rem[k - 1] / rem[k] }]);
        }
        let dev = (1..rem.len())
            .map(|k| (rem[k - 1] / rem[k] - target).abs())
            .fold(0.0, f64::max);
        rep.metric(Metric::at_most("max_ratio_deviation", dev, tol));
        Ok(())
    })
}

/// Indicator of the cells whose centres lie within `radius` (in cells) of
/// the centre of cell `(ci, cj)`.
pub fn ball_indicator(nx: usize, nz: usize, centre: (usize, usize), radius: f64) -> Vec<bool> {
    (0..nx * nz)
        .map(|c| {
            let (i, j) = ((c / nz) as f64, (c % nz) as f64);
            let (di, dj) = (i - centre.0 as f64, j - centre.1 as f64);
            (di * di + dj * dj).sqrt() <= radius
        })
        .collect()
}

/// Field with `amp_k` added to parameter `k` on the marked cells.
pub fn indicator_perturbation(field: &Field5, mask: &[bool], amp: [f64; 5]) -> Field5 {
    let mut f = field.clone();
    for k in 0..5 {
        for (c, m) in mask.iter().enumerate() {
            if *m {
                f.data[k][c] += amp[k];
            }
        }
    }
    f
}

/// Residuals `|phi(p + r chi_n) - phi(p)|` for balls of radius
/// `delta / n` cells around `centre`, with `r = rel_amp` times the box widths.
pub fn illposed_demo(
    sc: &Scenario,
    centre: (usize, usize),
    delta: f64,
    rel_amp: f64,
    ladder: &[usize],
) -> Result<TestReport> {
    timed("illposed-demo", |rep| {
        let (nx, nz) = (sc.ops.grid.nx, sc.ops.grid.nz);
        rep.param("grid", format!("{nx}x{nz}"));
        rep.param("nt", sc.nt());
        rep.param("centre", format!("{centre:?}"));
        rep.param("delta_cells", delta);
        rep.param("rel_amp", rel_amp);
        rep.columns(&["n", "radius_cells", "cells", "sup_distance_rel", "residual"]);
        let w = sc.ops.field.bounds.width();
        let amp = w.map(|x| rel_amp * x);
        let base = sc.forward()?;
        let mut res = Vec::new();
        let mut sup_dev = 0.0f64;
        for &n in ladder {
            let radius = delta / n as f64;
            let mask = ball_indicator(nx, nz, centre, radius);
            let vals = indicator_perturbation(&sc.ops.field.values, &mask, amp);
            // sup distance relative to the amplitude, per parameter
            let mut sup = 0.0f64;
            for k in 0..5 {
                if amp[k] == 0.0 {
                    continue;
                }
                let d = vals.data[k]
                    .iter()
                    .zip(&sc.ops.field.values.data[k])
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                sup = sup.max(d / amp[k]);
                sup_dev = sup_dev.max((d / amp[k] - 1.0).abs());
            }
            let field = crate::wave2d::ParameterField::new(vals, sc.ops.field.bounds);
            let ops = DiscreteOperators::new(sc.ops.grid.clone(), field, sc.ops.relax.clone())?;
            let u = run_forward(&ops, &sc.src, sc.dt(), sc.nt())?;
            let r = u.axpy(-1.0, &base).l2_norm(&sc.ops.grid);
            let cells = mask.iter().filter(|m| **m).count();
            rep.row(vec![n as f64, radius, cells as f64, sup, r]);
            res.push(r);
        }
        let decreasing = res.windows(2).all(|w| w[1] < w[0]);
        let factor = res[0] / res.last().copied().unwrap_or(f64::NAN);
        rep.metric(Metric::at_least("reduction_factor", factor, 4.0));
        rep.metric(Metric::within("strictly_decreasing", if decreasing { 1.0 } else { 0.0 }, 1.0, 1.0));
        rep.metric(Metric::at_most("sup_distance_deviation", sup_dev, 1e-12));
        Ok(())
    })
}

/// Default demonstration: 48 x 48 box, ball between source and receivers.
pub fn illposed_default() -> Result<TestReport> {
    let sc = Scenario::square(48, 48.0, 40.0)?;
    illposed_demo(&sc, (24, 14), 8.0, 0.05, &[1, 2, 4, 8, 16])
}

/// `|f(0)|, |f'(0)|, |f''(0)|` of the generated wavelet relative to its peak.
pub fn source_regularity(f0s: &[f64]) -> Result<TestReport> {
    timed("source-regularity", |rep| {
        rep.columns(&["f0", "max_rel_onset"]);
        let mut worst = 0.0f64;
        for &f0 in f0s {
            let grid = Grid2D::new(16, 16, 1.0, Default::default())?;
            let dt = 0.05 / f0;
            let nt = (10.0 / (f0 * dt)) as usize;
            let s = PointSource::new(&grid, (8, 8), crate::wave2d::Component::Z, 1.0, f0, dt, nt)?;
            let r = s.regularity();
            rep.row(vec![f0, r]);
            worst = worst.max(r);
        }
        rep.metric(Metric::at_most("max_rel_onset", worst, crate::wave2d::ONSET_TOLERANCE));
        Ok(())
    })
}

// ------------------------------------------------------------------ suites

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    All,
    Oracle,
    Pde,
    Rheology,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Suite::All),
            "oracle" => Ok(Suite::Oracle),
            "pde" => Ok(Suite::Pde),
            "rheology" => Ok(Suite::Rheology),
            other => Err(Error::Config(format!(
                "unknown suite `{other}` (expected all, oracle, pde or rheology)"
            ))),
        }
    }
}

/// Runs a suite, calling `sink` with each report as it completes.
pub fn run_suite(suite: Suite, seed: u64, mut sink: impl FnMut(&TestReport)) -> Result<Vec<TestReport>> {
    let mut out = Vec::new();
    let mut push = |r: TestReport| {
        sink(&r);
        out.push(r);
    };
    if matches!(suite, Suite::All | Suite::Rheology) {
        push(rheology_identities(seed, 100)?);
    }
    if matches!(suite, Suite::All | Suite::Oracle) {
        push(oracle_dot_test(1, 20, seed)?);
        push(oracle_dot_test(2, 20, seed)?);
        push(oracle_taylor_test(1, seed)?);
        push(oracle_taylor_test(2, seed)?);
        push(oracle_symmetry_test(10, seed)?);
        push(oracle_lipschitz_test(seed, &[1e-2, 1e-3, 1e-4])?);
    }
    if matches!(suite, Suite::All | Suite::Pde) {
        push(source_regularity(&[0.03, 0.06, 0.12, 0.25])?);
        push(pde_dot_test(32, 200, 3, seed)?);
        push(pde_taylor(1, 24, 20.0, seed)?);
        push(pde_taylor(2, 24, 20.0, seed)?);
        push(pde_symmetry(32, 30.0, 2, seed)?);
        push(pde_first_duality(&FIRST_ORDER_LEVELS, 10, seed)?);
        push(pde_second_duality(&SECOND_ORDER_LEVELS, 5, seed)?);
        push(pde_misfit_gradient(64, 5, seed)?);
        push(illposed_default()?);
    }
    Ok(out)
}
