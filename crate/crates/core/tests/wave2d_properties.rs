mod common;

use common::*;
use proptest::prelude::*;
use viscoadjoint::config::{ModelConfig, RunConfig};
use viscoadjoint::rheology::{apply_b_point, StateCell};
use viscoadjoint::sym::Sym;
use viscoadjoint::wave2d::io::*;
use viscoadjoint::wave2d::*;
use viscoadjoint::Error;

fn homogeneous(n: usize, t_end: f64, f0: f64) -> RunConfig {
    let mut c = RunConfig::square(n, 1.0, 0.1, t_end);
    c.model = ModelConfig::Homogeneous {
        point: c.bounds.mid(),
    };
    c.source.f0 = f0;
    c
}

/// `max |B Q y - Q B y| / max |B Q y|`; the two orders differ only by the
/// rounding of the scalar decay product.
fn commutator(ops: &DiscreteOperators, y: &[f64]) -> f64 {
    let (a, b) = b_then_q(ops, y);
    let m = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(&b).fold(0.0f64, |e, (x, z)| e.max((x - z).abs())) / m
}

fn b_then_q(ops: &DiscreteOperators, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut by = y.to_vec();
    ops.apply_b(&mut by);
    let mut qby = ops.zeros();
    ops.q_add(&by, 1.0, &mut qby);
    let mut qy = ops.zeros();
    ops.q_add(y, 1.0, &mut qy);
    ops.apply_b(&mut qy);
    (qby, qy)
}

#[test]
fn b_and_q_commute_to_rounding() {
    let ops = ops_for(&RunConfig::square(12, 1.0, 0.1, 1.0));
    let y = random_state(&ops.grid, &ops.layout, &mut rng(2));
    let e = commutator(&ops, &y);
    assert!(e <= 4.0 * f64::EPSILON, "{e:e}");
}

#[test]
fn homogeneous_blocks_equal_point_values() {
    let c = homogeneous(10, 1.0, 0.06);
    let ops = ops_for(&c);
    let pt = c.bounds.mid();
    let y = random_state(&ops.grid, &ops.layout, &mut rng(4));
    let mut by = y.clone();
    ops.apply_b(&mut by);
    let lay = ops.layout;
    let blocks = lay.blocks;
    for cell in [0, 17, lay.cells() - 1] {
        let psi = (0..blocks)
            .map(|l| {
                let o = lay.block(l).start + 3 * cell;
                Sym::from_components(2, &y[o..o + 3]).unwrap()
            })
            .collect();
        let sc = StateCell { v: vec![y[2], y[3]], psi };
        let out = apply_b_point(&pt, ops.alpha(), &sc).unwrap();
        for l in 0..blocks {
            let o = lay.block(l).start + 3 * cell;
            for k in 0..3 {
                let e = out.psi[l].components()[k];
                assert!((by[o + k] - e).abs() <= 1e-14 * e.abs().max(1.0), "{} vs {e}", by[o + k]);
            }
        }
        assert!((by[2] - out.v[0]).abs() <= 1e-14 * out.v[0].abs().max(1.0));
    }
}

#[test]
fn zero_source_gives_zero_field() {
    let ops = ops_for(&RunConfig::square(10, 1.0, 0.1, 2.0));
    let rec = run_forward(&ops, &NoForcing, 0.1, 20).unwrap();
    assert_eq!(rec.max_abs(), 0.0);
}

#[test]
fn mirror_symmetric_configuration_gives_mirror_symmetric_field() {
    let c = homogeneous(16, 8.0, 0.1);
    let ops = ops_for(&c);
    let src = c.point_source(&ops.grid).unwrap();
    let rec = run_forward(&ops, &src, c.dt, c.nt()).unwrap();
    let (g, lay) = (&ops.grid, ops.layout);
    let mut worst = 0.0f64;
    let scale = rec.max_abs();
    for u in &rec.states {
        // x -> nx - x: vx and the shear stress flip sign
        for i in 0..=g.nx {
            for j in 0..=g.nz {
                let (a, b) = (g.node(i, j), g.node(g.nx - i, j));
                worst = worst.max((u[2 * a] + u[2 * b]).abs());
                worst = worst.max((u[2 * a + 1] - u[2 * b + 1]).abs());
            }
        }
        for l in 0..lay.blocks {
            let o = lay.block(l).start;
            for i in 0..g.nx {
                for j in 0..g.nz {
                    let (a, b) = (o + 3 * g.cell(i, j), o + 3 * g.cell(g.nx - 1 - i, j));
                    worst = worst.max((u[a] - u[b]).abs());
                    worst = worst.max((u[a + 1] - u[b + 1]).abs());
                    worst = worst.max((u[a + 2] + u[b + 2]).abs());
                }
            }
        }
    }
    assert!(scale > 0.0);
    assert!(worst <= 1e-11 * scale, "asymmetry {:e}", worst / scale);
}

/// Energy from the time the source has died out.
fn energy_tail(ops: &DiscreteOperators, c: &RunConfig) -> Vec<f64> {
    let src = c.point_source(&ops.grid).unwrap();
    let rec = run_forward(ops, &src, c.dt, c.nt()).unwrap();
    let off = (8.0 * 1.5 / c.source.f0 / c.dt) as usize;
    assert!(off < c.nt());
    rec.states[off..].iter().map(|u| ops.energy(u)).collect()
}

#[test]
fn energy_is_conserved_without_decay_after_the_source_to_integrator_order() {
    let drift = |dt: f64| {
        let mut c = homogeneous(24, 100.0, 0.25);
        c.dt = dt;
        let ops = ops_for(&c).without_decay();
        let e = energy_tail(&ops, &c);
        assert!(e[0] > 0.0);
        e.iter().map(|x| (x - e[0]).abs()).fold(0.0, f64::max) / e[0]
    };
    let (d1, d2) = (drift(0.1), drift(0.05));
    // per-step loss of the fourth-order stepper on oscillatory modes is O(dt^6)
    assert!(d1 < 1e-3 && d1 / d2 > 24.0, "{d1:e} {d2:e} ratio {}", d1 / d2);
}

#[test]
fn energy_does_not_increase_with_decay_after_the_source() {
    let c = homogeneous(24, 100.0, 0.25);
    let ops = ops_for(&c);
    let e = energy_tail(&ops, &c);
    for w in e.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-14), "{} > {}", w[1], w[0]);
    }
    assert!(e.last().unwrap() < &e[0]);
}

#[test]
fn density_perturbation_outside_the_reach_of_the_wave_has_no_effect() {
    let c = RunConfig::square(32, 1.0, 0.1, 0.4);
    let ops = ops_for(&c);
    let src = c.point_source(&ops.grid).unwrap();
    let base = run_forward(&ops, &src, c.dt, c.nt()).unwrap();
    assert!(base.max_abs() > 0.0);
    let mut dir = Field5::zeros(32, 32);
    for i in 0..3 {
        for j in 0..3 {
            dir.data[0][ops.grid.cell(i, j)] = 0.1;
        }
    }
    let lin = run_linearized(&ops, &dir, &base, &src).unwrap();
    assert_eq!(lin.max_abs(), 0.0);
    let zero = run_linearized(&ops, &Field5::zeros(32, 32), &base, &src).unwrap();
    assert_eq!(zero.max_abs(), 0.0);
}

#[test]
fn wavelet_vanishes_smoothly_at_onset() {
    for f0 in [0.03, 0.06, 0.25, 2.0] {
        let w = make_wavelet(f0, 0.05 / f0, 400).unwrap();
        assert_eq!(w[0], 0.0);
        let d = wavelet_derivatives_at_zero(f0);
        let peak = wavelet_peak(f0);
        assert!(d[0] <= 1e-12 * peak);
        assert!(wavelet_regularity(f0) <= 1e-12, "{:e}", wavelet_regularity(f0));
    }
}

#[test]
fn wavelet_spectrum_peaks_near_centre_frequency() {
    let (f0, dt) = (0.06, 0.1);
    let nt = 2000;
    let w = make_wavelet(f0, dt, nt).unwrap();
    let s: Vec<f64> = w.iter().step_by(2).copied().collect();
    let amp = |f: f64| {
        let (mut re, mut im) = (0.0, 0.0);
        for (n, x) in s.iter().enumerate() {
            let ph = 2.0 * std::f64::consts::PI * f * n as f64 * dt;
            re += x * ph.cos();
            im += x * ph.sin();
        }
        (re * re + im * im).sqrt()
    };
    let fpk = (1..3000)
        .map(|k| k as f64 * 1e-3 * f0)
        .max_by(|a, b| amp(*a).total_cmp(&amp(*b)))
        .unwrap();
    assert!((fpk - f0).abs() <= 0.2 * f0, "peak at {fpk}");
}

#[test]
fn undersampled_wavelet_is_rejected() {
    assert!(matches!(make_wavelet(1.0, 0.2, 10), Err(Error::Undersampled(_))));
}

#[test]
fn vaf_round_trip_and_corrupt_header() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.vaf");
    let f = Field5::from_fn(9, 8, |i, j| [i as f64, j as f64, 0.5, -1.0, 1e-300]);
    write_parameters(&p, &f, 1.5).unwrap();
    let v = read_vaf(&p).unwrap();
    assert_eq!((v.header.nx, v.header.nz, v.header.ncomp, v.header.h), (9, 8, 5, 1.5));
    assert_eq!(read_parameters(&p).unwrap(), f);
    let mut bytes = std::fs::read(&p).unwrap();
    assert_eq!(bytes.len(), HEADER_LEN + 8 * 5 * 72);
    bytes[0] = b'X';
    assert!(matches!(parse_vaf(&bytes), Err(Error::Format(_))));
    let mut short = std::fs::read(&p).unwrap();
    short.truncate(short.len() - 8);
    assert!(matches!(parse_vaf(&short), Err(Error::Format(_))));
}

#[test]
fn seismogram_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.csv");
    let traces = vec![vec![0.0, 1.0 / 3.0], vec![-2.5e-17, std::f64::consts::PI]];
    write_seismogram_csv(&p, 0.1, &traces).unwrap();
    let (t, back) = read_seismogram_csv(&p).unwrap();
    assert_eq!(back, traces);
    assert_eq!(t.len(), 2);
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("t,comp0,comp1\n"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn strain_divergence_adjointness_on_any_grid(nx in 8usize..14, nz in 8usize..14, free in any::<bool>(), seed in 0u64..1000) {
        let mut c = RunConfig::square(8, 1.0, 0.1, 1.0);
        c.nx = nx;
        c.nz = nz;
        c.source.at = (nx / 2, nz / 2);
        c.receivers = vec![(1, 1)];
        if free {
            c.boundary = Boundary::free_surface_top();
        }
        let ops = ops_for(&c);
        let mut r = rng(seed);
        let x = random_state(&ops.grid, &ops.layout, &mut r);
        let y = random_state(&ops.grid, &ops.layout, &mut r);
        let mut s = vec![0.0; ops.layout.block_len()];
        let (mut ax, mut ay) = (ops.zeros(), ops.zeros());
        ops.neg_a(&x, &mut ax, &mut s);
        ops.neg_a(&y, &mut ay, &mut s);
        let scale = ops.inner(&ax, &ax).sqrt() * ops.inner(&y, &y).sqrt();
        prop_assert!((ops.inner(&ax, &y) + ops.inner(&x, &ay)).abs() <= 1e-13 * scale);
        prop_assert!(commutator(&ops, &x) <= 4.0 * f64::EPSILON);
    }
}
