use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viscoadjoint::evolution_oracle::*;
use viscoadjoint::Error;

const TOL: f64 = 1e-10;

fn rand_sym(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let s = (&m + m.transpose()) * 0.5;
    let norm = s.clone().symmetric_eigenvalues().amax();
    s / norm
}

fn rand_data(n: usize, rng: &mut ChaCha8Rng) -> impl Fn(f64) -> DVector<f64> + Clone {
    let a = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let w = rng.gen_range(1.0..6.0);
    move |t: f64| &a * (w * t).sin() + &b * (t * t - 0.3)
}

fn system(seed: u64) -> OracleSystem {
    OracleSystem::random(8, seed, 0.5, 2.0, 1.0).unwrap()
}

fn forward(sys: &OracleSystem) -> Trajectory {
    solve_forward(sys, &DVector::zeros(sys.dim()), TOL).unwrap()
}

#[test]
fn zero_data_gives_zero_solution() {
    let sys = system(1).with_source(Source::Zero);
    let u = forward(&sys);
    assert_eq!(u.sup_norm(), 0.0);
    let w = solve_adjoint(&sys, &|_| DVector::zeros(8), TOL).unwrap();
    assert_eq!(w.sup_norm(), 0.0);
}

#[test]
fn forward_converges_under_tolerance_refinement() {
    let sys = system(2);
    let u0 = DVector::from_element(8, 0.3);
    let a = solve_forward(&sys, &u0, TOL).unwrap();
    let b = solve_forward(&sys, &u0, TOL / 10.0).unwrap();
    assert!((a.last() - b.last()).amax() <= 10.0 * TOL);
    assert_eq!(a.states[0], u0);
}

#[test]
fn energy_is_conserved_without_decay() {
    let base = system(3);
    let sys = OracleSystem::new(
        base.b.clone(),
        base.a.clone(),
        DMatrix::zeros(8, 8),
        1.0,
        Source::Zero,
        0.5,
        2.0,
    )
    .unwrap();
    let u0 = DVector::from_fn(8, |i, _| (i as f64 + 1.0).sin());
    let u = solve_forward(&sys, &u0, TOL).unwrap();
    let e0 = u0.dot(&(&sys.b * &u0));
    let drift = u
        .states
        .iter()
        .map(|s| (s.dot(&(&sys.b * s)) - e0).abs() / e0)
        .fold(0.0, f64::max);
    assert!(drift <= 1e-10, "drift {drift}");
}

#[test]
fn stability_constant_is_finite_over_probes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let sys = system(4);
    let bound = stability_bound(&sys);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let u0 = DVector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0));
        let v = DVector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0));
        let probe = sys.with_source(Source::Smooth(v.clone()));
        let u = solve_forward(&probe, &u0, 1e-8).unwrap();
        // int_0^1 t^3 e^{-t} dt
        let f_l1 = v.norm() * (6.0 - 16.0 / std::f64::consts::E);
        let c = u.sup_norm() / (u0.norm() + f_l1);
        worst = worst.max(c);
    }
    assert!(worst.is_finite() && worst <= bound, "c = {worst}, bound {bound}");
}

#[test]
fn first_derivative_taylor_ratio() {
    let sys = system(5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = rand_sym(8, &mut rng);
    let base = forward(&sys);
    let d = solve_first_derivative(&sys, &h, &base, TOL).unwrap();
    let rem = |s: f64| {
        let p = forward(&sys.with_b(&sys.b + &h * s).unwrap());
        p.axpy(-1.0, &base).axpy(-s, &d).sup_norm()
    };
    let r: Vec<f64> = [0.04, 0.02, 0.01].iter().map(|&s| rem(s)).collect();
    for w in r.windows(2) {
        let ratio = w[0] / w[1];
        assert!((ratio - 4.0).abs() <= 0.3, "ratio {ratio}");
    }
}

#[test]
fn first_derivative_is_linear_and_vanishes_at_zero() {
    let sys = system(6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (h1, h2) = (rand_sym(8, &mut rng), rand_sym(8, &mut rng));
    let base = forward(&sys);
    let d = |h: &DMatrix<f64>| solve_first_derivative(&sys, h, &base, TOL).unwrap();
    assert_eq!(d(&DMatrix::zeros(8, 8)).sup_norm(), 0.0);
    let lhs = d(&(&h1 * 2.0 - &h2 * 0.5));
    let rhs = d(&h1).axpy(-0.5, &d(&h2)).axpy(1.0, &d(&h1));
    assert!(lhs.axpy(-1.0, &rhs).sup_norm() <= 1e-10 * lhs.sup_norm().max(1.0));
}

#[test]
fn first_adjoint_duality_over_random_pairs() {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let sys = system(100 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = rand_sym(8, &mut rng);
        let g = rand_data(8, &mut rng);
        let base = forward(&sys);
        let d = solve_first_derivative(&sys, &h, &base, TOL).unwrap();
        let lhs = d.pair_with(&g);
        let w = solve_adjoint(&sys, &g, TOL).unwrap();
        let vals: Vec<f64> = base
            .times
            .iter()
            .zip(&base.states)
            .zip(&w.states)
            .map(|((t, u), w)| {
                let z = sys.b_inv() * (sys.source.eval(*t, 8) - &sys.a * u);
                (&h * z).dot(w)
            })
            .collect();
        let rhs = simpson(base.dt(), &vals);
        worst = worst.max((lhs - rhs).abs() / lhs.abs());
    }
    assert!(worst <= 1e-8, "worst duality gap {worst}");
}

#[test]
fn adjoint_reversal_matches_direct_backward_integration() {
    let sys = system(7);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = rand_data(8, &mut rng);
    let a = solve_adjoint(&sys, &g, TOL).unwrap();
    let b = solve_adjoint_direct(&sys, &g, TOL).unwrap();
    assert!(a.axpy(-1.0, &b).sup_norm() <= 1e-10 * a.sup_norm().max(1.0));
    assert_eq!(a.last().norm(), 0.0);
}

#[test]
fn second_derivative_symmetry_and_zero_direction() {
    let sys = system(8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (h1, h2) = (rand_sym(8, &mut rng), rand_sym(8, &mut rng));
    let a = solve_second_derivative(&sys, &h1, &h2, TOL).unwrap();
    let b = solve_second_derivative(&sys, &h2, &h1, TOL).unwrap();
    assert!(a.axpy(-1.0, &b).sup_norm() <= 1e-10 * a.sup_norm().max(1.0));
    let z = solve_second_derivative(&sys, &DMatrix::zeros(8, 8), &h2, TOL).unwrap();
    assert_eq!(z.sup_norm(), 0.0);
}

#[test]
fn second_derivative_taylor_ratio() {
    let sys = system(9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = rand_sym(8, &mut rng);
    let run = solve_second_order(&sys, &h, &h, TOL).unwrap();
    let rem = |s: f64| {
        let p = forward(&sys.with_b(&sys.b + &h * s).unwrap());
        p.axpy(-1.0, &run.base)
            .axpy(-s, &run.first1)
            .axpy(-0.5 * s * s, &run.second)
            .sup_norm()
    };
    let r: Vec<f64> = [0.04, 0.02, 0.01].iter().map(|&s| rem(s)).collect();
    for w in r.windows(2) {
        let ratio = w[0] / w[1];
        assert!((ratio - 8.0).abs() <= 0.8, "ratio {ratio}");
    }
}

#[test]
fn rough_source_is_rejected_for_second_order() {
    let sys = system(10).with_source(Source::Custom {
        f: std::sync::Arc::new(|t: f64| DVector::from_element(8, t)),
        smooth: true,
    });
    let h = DMatrix::identity(8, 8);
    let r = solve_second_derivative(&sys, &h, &h, TOL);
    assert!(matches!(r, Err(Error::Smoothness(_))));
    let tagged = system(10).with_source(Source::Custom {
        f: std::sync::Arc::new(|t: f64| DVector::from_element(8, t.powi(3))),
        smooth: false,
    });
    assert!(solve_second_derivative(&tagged, &h, &h, TOL).is_err());
}

#[test]
fn second_adjoint_pairing_matches_direct_pairing() {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let sys = system(200 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
        let (h1, h2) = (rand_sym(8, &mut rng), rand_sym(8, &mut rng));
        let g = rand_data(8, &mut rng);
        let direct = solve_second_derivative(&sys, &h1, &h2, TOL).unwrap().pair_with(&g);
        let adj = second_adjoint_pairing(&sys, &h1, &g, &h2, TOL).unwrap();
        worst = worst.max((direct - adj).abs() / direct.abs());
    }
    assert!(worst <= 1e-8, "worst gap {worst}");
    let sys = system(1);
    let h = DMatrix::identity(8, 8);
    let zero = second_adjoint_pairing(&sys, &h, &|_| DVector::zeros(8), &h, TOL).unwrap();
    assert_eq!(zero, 0.0);
}

#[test]
fn second_adjoint_gradient_represents_the_hessian_pairing() {
    let sys = system(12);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h1 = rand_sym(8, &mut rng);
    let g = rand_data(8, &mut rng);
    let grad = second_adjoint_gradient(&sys, &h1, &g, TOL).unwrap();
    for _ in 0..3 {
        let h2 = rand_sym(8, &mut rng);
        let direct = solve_second_derivative(&sys, &h1, &h2, TOL).unwrap().pair_with(&g);
        let via = grad.component_mul(&h2).sum();
        assert!((direct - via).abs() <= 1e-8 * direct.abs(), "{direct} vs {via}");
    }
}

#[test]
fn lipschitz_ratios_are_stable() {
    let sys = system(13);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (h1, h2, db) = (
        rand_sym(8, &mut rng),
        rand_sym(8, &mut rng),
        rand_sym(8, &mut rng),
    );
    let scales = [1e-2, 1e-3, 1e-4];
    let t = lipschitz_scan(&sys, &h1, &h2, &db, &scales, TOL).unwrap();
    let q = t.ratios[0] / t.ratios[2];
    assert!((0.5..=2.0).contains(&q), "{:?}", t.ratios);
    assert!(t.ratios.iter().all(|r| r.is_finite()));
    let t2 = lipschitz_scan(&sys, &(&h1 * 3.0), &(&h2 * 0.5), &db, &scales, TOL).unwrap();
    for (a, b) in t.ratios.iter().zip(&t2.ratios) {
        assert!((1.5 * a - b).abs() <= 1e-6 * b, "{a} {b}");
    }
    let out = lipschitz_scan(&sys, &h1, &h2, &(&db * 10.0), &[1.0], TOL);
    assert!(matches!(out, Err(Error::Inadmissible(_))));
}

#[test]
fn illposed_probe_decays_along_the_chain() {
    let sys = OracleSystem::chain(16, 4.0, 1.0).unwrap();
    let ks: Vec<usize> = (1..8).collect();
    let e = coordinate_projections(16, 0.4, &ks);
    let rep = illposed_probe(&sys, &e, 0.4, 0.4, TOL).unwrap();
    assert!(rep.strictly_decreasing(), "{:?}", rep.residuals);
    assert!(rep.norms.iter().all(|n| (n - 0.4).abs() < 1e-15));
    let zero = illposed_probe(&sys, &[DMatrix::zeros(16, 16)], 0.0, 0.4, TOL).unwrap();
    assert_eq!(zero.residuals[0], 0.0);
    assert!(illposed_probe(&sys, &coordinate_projections(16, 0.8, &[1]), 0.1, 0.4, TOL).is_err());
}

#[test]
fn trajectory_csv_dump() {
    let sys = system(14);
    let u = forward(&sys);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("u.csv");
    write_trajectory_csv(&u, &p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("t,comp0,comp1"));
    let last: Vec<f64> = text
        .lines()
        .last()
        .unwrap()
        .split(',')
        .map(|x| x.parse().unwrap())
        .collect();
    assert_eq!(last[1], u.last()[0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn second_derivative_is_bilinear(seed in 0u64..1000, a in -2.0f64..2.0) {
        let sys = system(seed % 5 + 300);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h1, h2, h3) = (rand_sym(8, &mut rng), rand_sym(8, &mut rng), rand_sym(8, &mut rng));
        let f = |x: &DMatrix<f64>, y: &DMatrix<f64>| solve_second_derivative(&sys, x, y, TOL).unwrap();
        let lhs = f(&(&h1 * a + &h3), &h2);
        let rhs = f(&h1, &h2).axpy(a - 1.0, &f(&h1, &h2)).axpy(1.0, &f(&h3, &h2));
        prop_assert!(lhs.axpy(-1.0, &rhs).sup_norm() <= 1e-10 * lhs.sup_norm().max(1.0));
    }
}
