use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viscoadjoint::fwi::quantities::*;
use viscoadjoint::rheology::*;
use viscoadjoint::Sym;

fn rand_sym(d: usize, r: &mut ChaCha8Rng) -> Sym<f64> {
    let n = d * (d + 1) / 2;
    let c: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    Sym::from_components(d, &c).unwrap()
}

fn rand_point(r: &mut ChaCha8Rng) -> ParameterPoint<f64> {
    ParameterPoint::new(
        r.gen_range(1.0..1.2),
        r.gen_range(1.0..1.1),
        r.gen_range(0.3..0.4),
        r.gen_range(3.0..3.3),
        r.gen_range(0.3..0.4),
    )
}

fn unit(j: usize) -> [f64; 5] {
    let mut e = [0.0; 5];
    e[j] = 1.0;
    e
}

/// `(v', B^{-1}(0, eps, eps))` with one memory block.
fn drive(pt: &ParameterPoint<f64>, al: f64, vdot: &[f64], eps: &Sym<f64>, eps_mem: &Sym<f64>) -> StateCell<f64> {
    let mut z = apply_b_inv_point(
        pt,
        al,
        &StateCell {
            v: vec![0.0; vdot.len()],
            psi: vec![*eps, *eps_mem],
        },
    )
    .unwrap();
    z.v = vdot.to_vec();
    z
}

struct Case {
    pt: ParameterPoint<f64>,
    al: f64,
    d: usize,
    eps: Sym<f64>,
    eps1: Sym<f64>,
    vdot: Vec<f64>,
    v1dot: Vec<f64>,
    w: StateCell<f64>,
    dir: [f64; 5],
}

fn case(d: usize, seed: u64) -> Case {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let pt = rand_point(&mut r);
    let al = r.gen_range(0.3..0.7);
    let vec_d = |r: &mut ChaCha8Rng| (0..d).map(|_| r.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let vdot = vec_d(&mut r);
    let v1dot = vec_d(&mut r);
    let wv = vec_d(&mut r);
    Case {
        pt,
        al,
        d,
        eps: rand_sym(d, &mut r),
        eps1: rand_sym(d, &mut r),
        vdot,
        v1dot,
        w: StateCell {
            v: wv,
            psi: vec![rand_sym(d, &mut r), rand_sym(d, &mut r)],
        },
        dir: [(); 5].map(|_| r.gen_range(-1.0..1.0)),
    }
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_first(c: &Case) -> f64 {
    let p = PointData::new(&c.pt, c.al, c.d).unwrap();
    let z = drive(&c.pt, c.al, &c.vdot, &c.eps, &c.eps);
    let rows = first_order_rows(&p, &c.eps, dotv(&c.vdot, &c.w.v), &c.w.psi[0], &c.w.psi[1]);
    let mut worst: f64 = 0.0;
    for j in 0..5 {
        let gen = apply_v_prime_point(&c.pt, c.al, &unit(j), &z).unwrap().dot(&c.w);
        worst = worst.max((gen - rows[j]).abs() / gen.abs().max(1.0));
    }
    worst
}

fn check_gamma(c: &Case) -> f64 {
    let p = PointData::new(&c.pt, c.al, c.d).unwrap();
    let z0 = drive(&c.pt, c.al, &c.vdot, &c.eps, &c.eps);
    // z1 = G(dir) z0 + B^{-1}(0, eps1, eps1) with the linearized velocity term
    let g = apply_v_prime_point(&c.pt, c.al, &c.dir, &z0).unwrap();
    let g = apply_b_inv_point(&c.pt, c.al, &g).unwrap();
    let mut z1 = drive(&c.pt, c.al, &c.v1dot, &c.eps1, &c.eps1).axpy(-1.0, &g);
    z1.v = c.v1dot.clone();
    let rows = gamma_rows(&p, &c.dir, &c.eps, &c.eps1, dotv(&c.v1dot, &c.w.v), &c.w.psi[0], &c.w.psi[1]);
    let mut worst: f64 = 0.0;
    for j in 0..5 {
        let gen = apply_v_prime_point(&c.pt, c.al, &unit(j), &z1).unwrap().dot(&c.w);
        worst = worst.max((gen - rows[j]).abs() / gen.abs().max(1.0));
    }
    worst
}

fn check_upsilon(c: &Case) -> f64 {
    let p = PointData::new(&c.pt, c.al, c.d).unwrap();
    let z0 = drive(&c.pt, c.al, &c.vdot, &c.eps, &c.eps);
    let rows = upsilon_rows(&p, &c.dir, &c.eps, &c.w.psi[0], &c.w.psi[1]);
    let mut worst: f64 = 0.0;
    for j in 0..5 {
        let gen = apply_v_second_point(&c.pt, c.al, &c.dir, &unit(j), &z0).unwrap().dot(&c.w);
        worst = worst.max((gen - rows[j]).abs() / gen.abs().max(1.0));
    }
    worst
}

#[test]
fn first_order_rows_match_material_derivative_pairing() {
    for d in [2, 3] {
        for seed in 0..50 {
            let e = check_first(&case(d, seed));
            assert!(e < 1e-12, "d {d} seed {seed}: {e:e}");
        }
    }
}

#[test]
fn cross_term_rows_match_material_derivative_pairing() {
    for d in [2, 3] {
        for seed in 0..50 {
            let e = check_gamma(&case(d, 100 + seed));
            assert!(e < 1e-12, "d {d} seed {seed}: {e:e}");
        }
    }
}

#[test]
fn curvature_rows_match_second_material_derivative_pairing() {
    for d in [2, 3] {
        for seed in 0..50 {
            let e = check_upsilon(&case(d, 200 + seed));
            assert!(e < 1e-12, "d {d} seed {seed}: {e:e}");
        }
    }
}

#[test]
fn single_precision_rows_track_double() {
    let c = case(2, 5);
    let p64 = PointData::new(&c.pt, c.al, 2).unwrap();
    let conv = |s: &Sym<f64>| Sym::<f32>::from_components(2, &s.components().iter().map(|x| *x as f32).collect::<Vec<_>>()).unwrap();
    let pt32 = ParameterPoint::<f32>::from_array(c.pt.to_array().map(|x| x as f32));
    let p32 = PointData::new(&pt32, c.al as f32, 2).unwrap();
    let r64 = first_order_rows(&p64, &c.eps, 0.0, &c.w.psi[0], &c.w.psi[1]);
    let r32 = first_order_rows(&p32, &conv(&c.eps), 0.0, &conv(&c.w.psi[0]), &conv(&c.w.psi[1]));
    for j in 0..5 {
        assert!((r64[j] - r32[j] as f64).abs() <= 1e-4 * r64[j].abs().max(1.0));
    }
}

#[test]
fn memory_denominator_in_two_dimensions() {
    let pt = ParameterPoint::<f64>::new(1.1, 1.05, 0.35, 3.1, 0.32);
    let p = PointData::new(&pt, 0.5, 2).unwrap();
    assert!((p.d0 - 2.0 * (p.pi - p.mu)).abs() < 1e-14);
    assert!((p.dl - 2.0 * (0.32 * p.pi - 0.35 * p.mu)).abs() < 1e-14);
}

proptest! {
    #[test]
    fn rows_match_generic_pairings(seed in 0u64..10_000, three in any::<bool>()) {
        let c = case(if three { 3 } else { 2 }, seed);
        prop_assert!(check_first(&c) < 1e-11);
        prop_assert!(check_gamma(&c) < 1e-11);
        prop_assert!(check_upsilon(&c) < 1e-11);
    }
}

fn unit_point(alpha: f64) -> PointData<f64> {
    // mu = 1, pi = 3, tau_S = tau_P = 1 in 2D
    PointData {
        dim: 2,
        rho: 1.0,
        vs: 1.0,
        vp: 3f64.sqrt(),
        tau_s: 1.0,
        tau_p: 1.0,
        alpha,
        mu: 1.0,
        pi: 3.0,
        d0: 4.0,
        dl: 4.0,
    }
}

#[test]
fn memory_p_row_at_unit_moduli() {
    let alpha = 0.5;
    let p = unit_point(alpha);
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let (phi0, sig) = (rand_sym(2, &mut r), rand_sym(2, &mut r));
    let s = sigma_quantities(&p, &phi0, &sig);
    let expect = phi0.scale(alpha / 4.0).axpy(-0.25, &sig);
    assert!((s.tau_p - expect).norm() <= 1e-15 * expect.norm());
}

#[test]
fn k_pi_vanishes_when_wave_speed_perturbations_match() {
    let pt = ParameterPoint::<f64>::new(1.1, 1.05, 0.35, 3.1, 0.32);
    let p = PointData::new(&pt, 0.5, 2).unwrap();
    let mu_t = k_coefficients(&p, &[0.0, 1.0, 0.0, 0.0, 0.0]).mu_t;
    let pi_t = k_coefficients(&p, &[0.0, 0.0, 0.0, 1.0, 0.0]).pi_t;
    let k = k_coefficients(&p, &[0.0, 1.0, 0.0, mu_t / pi_t, 0.0]);
    assert!((k.pi_t - k.mu_t).abs() <= 1e-14 * k.mu_t.abs());
    assert!(k.k_pi.abs() <= 1e-14 * k.mu_t.abs() / (p.d0 * p.d0), "{}", k.k_pi);
}

#[test]
fn density_only_direction_at_unit_density() {
    let pt = ParameterPoint::<f64>::new(1.0, 1.05, 0.35, 3.1, 0.32);
    let p = PointData::new(&pt, 0.5, 2).unwrap();
    let k = k_coefficients(&p, &[1.0, 0.0, 0.0, 0.0, 0.0]);
    let mut r = ChaCha8Rng::seed_from_u64(12);
    let (phi0, sig) = (rand_sym(2, &mut r), rand_sym(2, &mut r));
    let g = gamma_quantities(&p, &k, &phi0, &sig);
    let e1 = phi0 + sig;
    assert!((g.rho1 - e1).norm() <= 1e-14 * e1.norm(), "{:?}", g.rho1);
    assert!(g.rho2.norm() <= 1e-14 * e1.norm(), "{:?}", g.rho2);
}
