//! Pointwise material algebra of the viscoelastic model.
//!
//! Isotropic maps `C(m, p) M = 2m M + (p - 2m) tr(M) I`, the relaxation
//! quantities, the parameter-to-operator map `V` (which produces the
//! block-diagonal operator `B`) and its first two derivatives.
//!
//! Parameters are ordered `(rho, vS, tauS, vP, tauP)` everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sym::{check_dim, Sym};

/// Index of each material parameter in 5-tuples.
pub const RHO: usize = 0;
pub const VS: usize = 1;
pub const TAU_S: usize = 2;
pub const VP: usize = 3;
pub const TAU_P: usize = 4;
pub const PARAM_NAMES: [&str; 5] = ["rho", "vS", "tauS", "vP", "tauP"];

/// The map `M -> 2m M + (p - 2m) tr(M) I` on symmetric `dim x dim` matrices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsotropicMap<T> {
    pub m: T,
    pub p: T,
    pub dim: usize,
}

impl<T: Scalar> IsotropicMap<T> {
    pub fn new(m: T, p: T, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(IsotropicMap { m, p, dim })
    }

    /// Map `M -> a M + b tr(M) I`.
    pub fn from_gains(a: T, b: T, dim: usize) -> Self {
        let m = a * T::c(0.5);
        IsotropicMap { m, p: b + a, dim }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_gains(T::one(), T::zero(), dim)
    }

    pub fn zero(dim: usize) -> Self {
        Self::from_gains(T::zero(), T::zero(), dim)
    }

    /// Eigenvalue on trace-free matrices.
    pub fn shear_gain(&self) -> T {
        self.m + self.m
    }

    /// Coefficient of `tr(M) I`.
    pub fn trace_coeff(&self) -> T {
        self.p - self.m - self.m
    }

    /// Eigenvalue on the identity: `3p - 4m` in 3D, `2(p - m)` in 2D.
    pub fn bulk_gain(&self) -> T {
        self.shear_gain() + T::c(self.dim as f64) * self.trace_coeff()
    }

    pub fn apply(&self, x: &Sym<T>) -> Result<Sym<T>> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.dim(),
            });
        }
        Ok(self.apply_unchecked(x))
    }

    pub fn apply_unchecked(&self, x: &Sym<T>) -> Sym<T> {
        let t = x.trace() * self.trace_coeff();
        let mut r = x.scale(self.shear_gain());
        for i in 0..self.dim {
            r.set(i, i, r.get(i, i) + t);
        }
        r
    }

    pub fn is_singular(&self) -> bool {
        let scale = self.m.abs() + self.p.abs();
        let tol = T::structural_tol() * scale;
        !(scale > T::zero()) || self.shear_gain().abs() <= tol || self.bulk_gain().abs() <= tol
    }

    /// Positive definite on symmetric matrices.
    pub fn is_positive(&self) -> bool {
        !self.is_singular() && self.shear_gain() > T::zero() && self.bulk_gain() > T::zero()
    }

    pub fn invert(&self) -> Result<Self> {
        if self.is_singular() {
            return Err(Error::SingularMap {
                m: self.m.f64(),
                p: self.p.f64(),
                dim: self.dim,
            });
        }
        let a = self.shear_gain();
        let b = self.trace_coeff();
        Ok(Self::from_gains(
            T::one() / a,
            -b / (a * self.bulk_gain()),
            self.dim,
        ))
    }

    /// `self ∘ inner`. Isotropic maps commute, so the order is immaterial.
    pub fn compose(&self, inner: &Self) -> Self {
        debug_assert_eq!(self.dim, inner.dim);
        let (a1, b1) = (self.shear_gain(), self.trace_coeff());
        let (a2, b2) = (inner.shear_gain(), inner.trace_coeff());
        let d = T::c(self.dim as f64);
        Self::from_gains(a1 * a2, a1 * b2 + b1 * a2 + d * b1 * b2, self.dim)
    }

    pub fn add(&self, o: &Self) -> Self {
        debug_assert_eq!(self.dim, o.dim);
        IsotropicMap {
            m: self.m + o.m,
            p: self.p + o.p,
            dim: self.dim,
        }
    }

    pub fn scale(&self, s: T) -> Self {
        IsotropicMap {
            m: self.m * s,
            p: self.p * s,
            dim: self.dim,
        }
    }

    /// `(lo, hi)` with `lo <M,M> <= <CM,M> <= hi <M,M>`.
    pub fn eigen_bounds(&self) -> (T, T) {
        let (s, k) = (self.shear_gain(), self.bulk_gain());
        (s.min(k), s.max(k))
    }
}

pub fn apply_isotropic_map<T: Scalar>(map: &IsotropicMap<T>, x: &Sym<T>) -> Result<Sym<T>> {
    map.apply(x)
}

pub fn invert_isotropic_map<T: Scalar>(map: &IsotropicMap<T>) -> Result<IsotropicMap<T>> {
    map.invert()
}

pub fn eigen_bounds<T: Scalar>(map: &IsotropicMap<T>) -> Result<(T, T)> {
    if !map.is_positive() {
        return Err(Error::Inadmissible(format!(
            "isotropic map (m = {}, p = {}) is not positive definite",
            map.m, map.p
        )));
    }
    Ok(map.eigen_bounds())
}

/// Derivative of `(m, p) -> C̃(m, p)` in direction `(mh, ph)`, as a map.
pub fn cinv_derivative_map<T: Scalar>(
    base: &IsotropicMap<T>,
    mh: T,
    ph: T,
) -> Result<IsotropicMap<T>> {
    let inv = base.invert()?;
    let dir = IsotropicMap::new(mh, ph, base.dim)?;
    Ok(inv.compose(&dir).compose(&inv).scale(-T::one()))
}

/// Second derivative of `C̃` in directions `d1 = (m1, p1)` and `d2 = (m2, p2)`.
pub fn cinv_second_map<T: Scalar>(
    base: &IsotropicMap<T>,
    d1: (T, T),
    d2: (T, T),
) -> Result<IsotropicMap<T>> {
    let inv = base.invert()?;
    let c1 = IsotropicMap::new(d1.0, d1.1, base.dim)?;
    let c2 = IsotropicMap::new(d2.0, d2.1, base.dim)?;
    let a = inv.compose(&c1).compose(&inv).compose(&c2).compose(&inv);
    let b = inv.compose(&c2).compose(&inv).compose(&c1).compose(&inv);
    Ok(a.add(&b))
}

/// `-C̃(m,p) C(mh,ph) C̃(m,p) M`.
pub fn apply_cinv_derivative<T: Scalar>(m: T, p: T, mh: T, ph: T, x: &Sym<T>) -> Result<Sym<T>> {
    let base = IsotropicMap::new(m, p, x.dim())?;
    Ok(cinv_derivative_map(&base, mh, ph)?.apply_unchecked(x))
}

pub fn apply_cinv_second<T: Scalar>(
    m: T,
    p: T,
    d1: (T, T),
    d2: (T, T),
    x: &Sym<T>,
) -> Result<Sym<T>> {
    let base = IsotropicMap::new(m, p, x.dim())?;
    Ok(cinv_second_map(&base, d1, d2)?.apply_unchecked(x))
}

/// Relaxation mechanisms of the generalized standard linear solid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationSpec<T> {
    pub tau_sigma: Vec<T>,
    pub omega0: T,
    alpha: T,
}

impl<T: Scalar> RelaxationSpec<T> {
    pub fn new(tau_sigma: Vec<T>, omega0: T) -> Result<Self> {
        let mut s = RelaxationSpec {
            tau_sigma,
            omega0,
            alpha: T::zero(),
        };
        s.alpha = compute_alpha(&s)?;
        Ok(s)
    }

    /// `L` identical mechanisms with `omega0 * tau_sigma = omega_tau`.
    pub fn uniform(l: usize, omega0: T, omega_tau: T) -> Result<Self> {
        Self::new(vec![omega_tau / omega0; l], omega0)
    }

    pub fn mechanisms(&self) -> usize {
        self.tau_sigma.len()
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }
}

/// `alpha = sum_l (w0 tau_l)^2 / (1 + (w0 tau_l)^2)`.
pub fn compute_alpha<T: Scalar>(spec: &RelaxationSpec<T>) -> Result<T> {
    let l = spec.tau_sigma.len();
    if !(1..=5).contains(&l) {
        return Err(Error::Relaxation(format!("need 1..=5 mechanisms, got {l}")));
    }
    if !(spec.omega0 > T::zero()) {
        return Err(Error::Relaxation(format!("omega0 = {} must be positive", spec.omega0)));
    }
    let mut alpha = T::zero();
    for &tau in &spec.tau_sigma {
        if !(tau > T::zero()) {
            return Err(Error::Relaxation(format!("tau_sigma = {tau} must be positive")));
        }
        let x = (spec.omega0 * tau).powi(2);
        alpha = alpha + x / (T::one() + x);
    }
    Ok(alpha)
}

/// Material parameters at one point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterPoint<T> {
    pub rho: T,
    pub vs: T,
    pub tau_s: T,
    pub vp: T,
    pub tau_p: T,
}

impl<T: Scalar> ParameterPoint<T> {
    pub fn new(rho: T, vs: T, tau_s: T, vp: T, tau_p: T) -> Self {
        ParameterPoint {
            rho,
            vs,
            tau_s,
            vp,
            tau_p,
        }
    }

    pub fn to_array(&self) -> [T; 5] {
        [self.rho, self.vs, self.tau_s, self.vp, self.tau_p]
    }

    pub fn from_array(a: [T; 5]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    /// `self + s * dir`
    pub fn offset(&self, s: T, dir: &[T; 5]) -> Self {
        let mut a = self.to_array();
        for k in 0..5 {
            a[k] = a[k] + s * dir[k];
        }
        Self::from_array(a)
    }

    fn check_positive(&self) -> Result<()> {
        for (k, v) in self.to_array().iter().enumerate() {
            if !(*v > T::zero()) {
                return Err(Error::Nonpositive(format!("{} = {}", PARAM_NAMES[k], v)));
            }
        }
        Ok(())
    }
}

/// Relaxed moduli and their density-scaled versions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moduli<T> {
    pub mu0: T,
    pub pi0: T,
    pub mu: T,
    pub pi: T,
}

pub fn moduli_from_params<T: Scalar>(pt: &ParameterPoint<T>, alpha: T) -> Result<Moduli<T>> {
    if !(pt.rho > T::zero() && pt.vs > T::zero() && pt.vp > T::zero())
        || pt.tau_s < T::zero()
        || pt.tau_p < T::zero()
        || alpha < T::zero()
    {
        return Err(Error::Nonpositive(format!("{pt:?}, alpha = {alpha}")));
    }
    let mu = pt.vs * pt.vs / (T::one() + pt.tau_s * alpha);
    let pi = pt.vp * pt.vp / (T::one() + pt.tau_p * alpha);
    Ok(Moduli {
        mu0: pt.rho * mu,
        pi0: pt.rho * pi,
        mu,
        pi,
    })
}

/// First-order variations of `mu`, `pi` (tilde) and `tauS mu`, `tauP pi` (hat).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationCoeffs<T> {
    pub mu_tilde: T,
    pub pi_tilde: T,
    pub mu_hat: T,
    pub pi_hat: T,
}

/// Coefficients in terms of the velocities.
pub fn perturbation_coeffs<T: Scalar>(
    pt: &ParameterPoint<T>,
    alpha: T,
    dir: &[T; 5],
) -> PerturbationCoeffs<T> {
    let two = T::c(2.0);
    let ks = T::one() + pt.tau_s * alpha;
    let kp = T::one() + pt.tau_p * alpha;
    let (vs, vp) = (pt.vs, pt.vp);
    PerturbationCoeffs {
        mu_tilde: two * vs / ks * dir[VS] - alpha * vs * vs / (ks * ks) * dir[TAU_S],
        pi_tilde: two * vp / kp * dir[VP] - alpha * vp * vp / (kp * kp) * dir[TAU_P],
        mu_hat: two * pt.tau_s * vs / ks * dir[VS] + vs * vs / (ks * ks) * dir[TAU_S],
        pi_hat: two * pt.tau_p * vp / kp * dir[VP] + vp * vp / (kp * kp) * dir[TAU_P],
    }
}

/// The same coefficients rewritten through the scaled moduli `mu`, `pi`.
pub fn perturbation_coeffs_moduli_form<T: Scalar>(
    pt: &ParameterPoint<T>,
    alpha: T,
    dir: &[T; 5],
) -> Result<PerturbationCoeffs<T>> {
    let md = moduli_from_params(pt, alpha)?;
    let two = T::c(2.0);
    let ks = T::one() + pt.tau_s * alpha;
    let kp = T::one() + pt.tau_p * alpha;
    Ok(PerturbationCoeffs {
        mu_tilde: two * md.mu / pt.vs * dir[VS] - alpha * md.mu / ks * dir[TAU_S],
        pi_tilde: two * md.pi / pt.vp * dir[VP] - alpha * md.pi / kp * dir[TAU_P],
        mu_hat: two * pt.tau_s * md.mu / pt.vs * dir[VS] + md.mu / ks * dir[TAU_S],
        pi_hat: two * pt.tau_p * md.pi / pt.vp * dir[VP] + md.pi / kp * dir[TAU_P],
    })
}

/// Second-order variations of `mu`, `pi`, `tauS mu`, `tauP pi` along two directions.
pub fn curvature_coeffs<T: Scalar>(
    pt: &ParameterPoint<T>,
    alpha: T,
    d1: &[T; 5],
    d2: &[T; 5],
) -> PerturbationCoeffs<T> {
    fn second<T: Scalar>(v: T, tau: T, alpha: T, a1: T, b1: T, a2: T, b2: T) -> (T, T) {
        let two = T::c(2.0);
        let k = T::one() + tau * alpha;
        let cross = a1 * b2 + a2 * b1;
        let plain = two * a1 * a2 / k - two * v * alpha * cross / (k * k)
            + two * alpha * alpha * v * v * b1 * b2 / (k * k * k);
        let scaled = two * tau * a1 * a2 / k + two * v * cross / (k * k)
            - two * alpha * v * v * b1 * b2 / (k * k * k);
        (plain, scaled)
    }
    let (mu, mu_t) = second(pt.vs, pt.tau_s, alpha, d1[VS], d1[TAU_S], d2[VS], d2[TAU_S]);
    let (pi, pi_t) = second(pt.vp, pt.tau_p, alpha, d1[VP], d1[TAU_P], d2[VP], d2[TAU_P]);
    PerturbationCoeffs {
        mu_tilde: mu,
        pi_tilde: pi,
        mu_hat: mu_t,
        pi_hat: pi_t,
    }
}

/// Box bounds for the five parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterBounds<T> {
    pub min: ParameterPoint<T>,
    pub max: ParameterPoint<T>,
}

/// Moduli bounds induced by a parameter box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivedBounds<T> {
    pub mu_min: T,
    pub mu_max: T,
    pub pi_min: T,
    pub pi_max: T,
    pub m_lo: T,
    pub m_hi: T,
    pub p_lo: T,
    pub p_hi: T,
}

impl<T: Scalar> ParameterBounds<T> {
    pub fn new(min: ParameterPoint<T>, max: ParameterPoint<T>) -> Self {
        ParameterBounds { min, max }
    }

    pub fn width(&self) -> [T; 5] {
        let (a, b) = (self.min.to_array(), self.max.to_array());
        [b[0] - a[0], b[1] - a[1], b[2] - a[2], b[3] - a[3], b[4] - a[4]]
    }

    pub fn mid(&self) -> ParameterPoint<T> {
        let (a, b) = (self.min.to_array(), self.max.to_array());
        let h = T::c(0.5);
        ParameterPoint::from_array([
            (a[0] + b[0]) * h,
            (a[1] + b[1]) * h,
            (a[2] + b[2]) * h,
            (a[3] + b[3]) * h,
            (a[4] + b[4]) * h,
        ])
    }

    pub fn derived(&self, alpha: T) -> DerivedBounds<T> {
        let (lo, hi) = (&self.min, &self.max);
        let one = T::one();
        let mu_min = lo.rho * lo.vs * lo.vs / (one + hi.tau_s * alpha);
        let mu_max = hi.rho * hi.vs * hi.vs / (one + lo.tau_s * alpha);
        let pi_min = lo.rho * lo.vp * lo.vp / (one + hi.tau_p * alpha);
        let pi_max = hi.rho * hi.vp * hi.vp / (one + lo.tau_p * alpha);
        DerivedBounds {
            mu_min,
            mu_max,
            pi_min,
            pi_max,
            m_lo: mu_min * one.min(lo.tau_s),
            m_hi: mu_max * one.max(hi.tau_s),
            p_lo: pi_min * one.min(lo.tau_p),
            p_hi: pi_max * one.max(hi.tau_p),
        }
    }

    /// `3 p_lo > 4 m_hi` in 3D, `p_lo > m_hi` in 2D.
    pub fn box_condition(&self, alpha: T, dim: usize) -> bool {
        let d = self.derived(alpha);
        if dim == 3 {
            T::c(3.0) * d.p_lo > T::c(4.0) * d.m_hi
        } else {
            d.p_lo > d.m_hi
        }
    }

    /// The same condition written as a velocity-ratio inequality.
    pub fn composite_condition(&self, alpha: T, dim: usize) -> bool {
        let (lo, hi) = (&self.min, &self.max);
        let one = T::one();
        let lhs = (hi.rho / lo.rho)
            * ((one + hi.tau_p * alpha) / (one + lo.tau_s * alpha))
            * (one.max(hi.tau_s) / one.min(lo.tau_p));
        let lhs = if dim == 3 { T::c(4.0) * lhs / T::c(3.0) } else { lhs };
        lhs < lo.vp * lo.vp / (hi.vs * hi.vs)
    }

    /// Spectral bounds `[beta_minus, beta_plus]` of the operator `B` over the box.
    pub fn b_spectrum(&self, alpha: T, dim: usize) -> (T, T) {
        let d = self.derived(alpha);
        let dd = T::c(dim as f64);
        let two = T::c(2.0);
        let c_lo = (two * d.m_lo).min(dd * d.p_lo - two * (dd - T::one()) * d.m_hi);
        let c_hi = (two * d.m_hi).max(dd * d.p_hi - two * (dd - T::one()) * d.m_lo);
        (
            self.min.rho.min(T::one() / c_hi),
            self.max.rho.max(T::one() / c_lo),
        )
    }

    /// Distance of `pt` to the box boundary relative to the widths (`min_k`).
    pub fn interior_margin(&self, pt: &ParameterPoint<T>) -> T {
        let (a, b, x) = (self.min.to_array(), self.max.to_array(), pt.to_array());
        let mut m = T::infinity();
        for k in 0..5 {
            let w = b[k] - a[k];
            if w > T::zero() {
                m = m.min((x[k] - a[k]).min(b[k] - x[k]) / w);
            }
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub index: usize,
    pub param: &'static str,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Outcome of an admissibility check.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmissibilityReport {
    pub points: usize,
    pub violations: Vec<Violation>,
    pub moduli_outside: usize,
    pub box_condition: bool,
    pub composite_condition: bool,
}

impl AdmissibilityReport {
    pub fn admissible(&self) -> bool {
        self.violations.is_empty()
            && self.moduli_outside == 0
            && self.box_condition
            && self.composite_condition
    }

    pub fn summary(&self) -> String {
        if self.admissible() {
            return format!("{} points admissible", self.points);
        }
        let mut s = format!(
            "{} parameter violations, {} moduli outside D(C), box condition {}, composite condition {}",
            self.violations.len(),
            self.moduli_outside,
            self.box_condition,
            self.composite_condition
        );
        if let Some(v) = self.violations.first() {
            s.push_str(&format!(
                "; first: point {} {} = {} not in [{}, {}]",
                v.index, v.param, v.value, v.lo, v.hi
            ));
        }
        s
    }
}

/// Checks every point against the box and the induced moduli bounds.
pub fn check_parameter_domain<T: Scalar>(
    points: impl IntoIterator<Item = ParameterPoint<T>>,
    bounds: &ParameterBounds<T>,
    alpha: T,
    dim: usize,
) -> AdmissibilityReport {
    let d = bounds.derived(alpha);
    let (lo, hi) = (bounds.min.to_array(), bounds.max.to_array());
    let tol = T::c(1e-12);
    let inside = |x: T, a: T, b: T| x >= a - tol * a.abs() && x <= b + tol * b.abs();
    let mut rep = AdmissibilityReport {
        points: 0,
        violations: Vec::new(),
        moduli_outside: 0,
        box_condition: bounds.box_condition(alpha, dim),
        composite_condition: bounds.composite_condition(alpha, dim),
    };
    for (i, pt) in points.into_iter().enumerate() {
        rep.points += 1;
        let x = pt.to_array();
        for k in 0..5 {
            if !(x[k] >= lo[k] && x[k] <= hi[k]) {
                rep.violations.push(Violation {
                    index: i,
                    param: PARAM_NAMES[k],
                    value: x[k].f64(),
                    lo: lo[k].f64(),
                    hi: hi[k].f64(),
                });
            }
        }
        match moduli_from_params(&pt, alpha) {
            Ok(md) => {
                let pairs = [
                    (md.mu0, md.pi0),
                    (pt.tau_s * md.mu0, pt.tau_p * md.pi0),
                ];
                if pairs
                    .iter()
                    .any(|&(m, p)| !inside(m, d.m_lo, d.m_hi) || !inside(p, d.p_lo, d.p_hi))
                {
                    rep.moduli_outside += 1;
                }
            }
            Err(_) => rep.moduli_outside += 1,
        }
    }
    rep
}

/// One point of the state: a velocity vector and `L + 1` stress tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct StateCell<T> {
    pub v: Vec<T>,
    pub psi: Vec<Sym<T>>,
}

impl<T: Scalar> StateCell<T> {
    pub fn zeros(dim: usize, blocks: usize) -> Self {
        StateCell {
            v: vec![T::zero(); dim],
            psi: vec![Sym::zeros(dim); blocks],
        }
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// Euclidean pairing (Frobenius on the tensors).
    pub fn dot(&self, o: &Self) -> T {
        let mut s = T::zero();
        for (a, b) in self.v.iter().zip(&o.v) {
            s = s + *a * *b;
        }
        for (a, b) in self.psi.iter().zip(&o.psi) {
            s = s + a.dot(b);
        }
        s
    }

    pub fn max_abs(&self) -> T {
        let mut m = T::zero();
        for x in &self.v {
            m = m.max(x.abs());
        }
        for s in &self.psi {
            m = m.max(s.max_abs());
        }
        m
    }

    pub fn axpy(&self, s: T, o: &Self) -> Self {
        StateCell {
            v: self.v.iter().zip(&o.v).map(|(a, b)| *a + s * *b).collect(),
            psi: self.psi.iter().zip(&o.psi).map(|(a, b)| a.axpy(s, b)).collect(),
        }
    }
}

/// A block-diagonal pointwise operator: scalar on the velocity, one
/// isotropic map on the elastic stress and one shared by all memory stresses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockMaps<T> {
    pub vel: T,
    pub stress: IsotropicMap<T>,
    pub memory: IsotropicMap<T>,
}

impl<T: Scalar> BlockMaps<T> {
    pub fn apply(&self, cell: &StateCell<T>) -> StateCell<T> {
        StateCell {
            v: cell.v.iter().map(|x| *x * self.vel).collect(),
            psi: cell
                .psi
                .iter()
                .enumerate()
                .map(|(l, s)| {
                    if l == 0 {
                        self.stress.apply_unchecked(s)
                    } else {
                        self.memory.apply_unchecked(s)
                    }
                })
                .collect(),
        }
    }

    /// `self ∘ inner`
    pub fn compose(&self, inner: &Self) -> Self {
        BlockMaps {
            vel: self.vel * inner.vel,
            stress: self.stress.compose(&inner.stress),
            memory: self.memory.compose(&inner.memory),
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        BlockMaps {
            vel: self.vel + o.vel,
            stress: self.stress.add(&o.stress),
            memory: self.memory.add(&o.memory),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        BlockMaps {
            vel: self.vel * s,
            stress: self.stress.scale(s),
            memory: self.memory.scale(s),
        }
    }

    pub fn invert(&self) -> Result<Self> {
        Ok(BlockMaps {
            vel: T::one() / self.vel,
            stress: self.stress.invert()?,
            memory: self.memory.invert()?,
        })
    }
}

fn base_maps<T: Scalar>(
    pt: &ParameterPoint<T>,
    alpha: T,
    dim: usize,
) -> Result<(Moduli<T>, IsotropicMap<T>, IsotropicMap<T>)> {
    check_dim(dim)?;
    pt.check_positive()?;
    let md = moduli_from_params(pt, alpha)?;
    let c0 = IsotropicMap::new(md.mu, md.pi, dim)?;
    let cl = IsotropicMap::new(pt.tau_s * md.mu, pt.tau_p * md.pi, dim)?;
    if !c0.is_positive() || !cl.is_positive() {
        return Err(Error::Inadmissible(format!(
            "moduli of {pt:?} are outside the invertibility region"
        )));
    }
    Ok((md, c0, cl))
}

/// The operator `B = V(p)` at one point.
pub fn b_maps<T: Scalar>(pt: &ParameterPoint<T>, alpha: T, dim: usize) -> Result<BlockMaps<T>> {
    let (_, c0, cl) = base_maps(pt, alpha, dim)?;
    let r = T::one() / pt.rho;
    Ok(BlockMaps {
        vel: pt.rho,
        stress: c0.invert()?.scale(r),
        memory: cl.invert()?.scale(r),
    })
}

/// `V'(p) dir` at one point.
pub fn v_prime_maps<T: Scalar>(
    pt: &ParameterPoint<T>,
    alpha: T,
    dir: &[T; 5],
    dim: usize,
) -> Result<BlockMaps<T>> {
    let (_, c0, cl) = base_maps(pt, alpha, dim)?;
    let k = perturbation_coeffs(pt, alpha, dir);
    let rho = pt.rho;
    let rr = -dir[RHO] / (rho * rho);
    let block = |c: &IsotropicMap<T>, mh: T, ph: T| -> Result<IsotropicMap<T>> {
        Ok(c.invert()?
            .scale(rr)
            .add(&cinv_derivative_map(c, mh, ph)?.scale(T::one() / rho)))
    };
    Ok(BlockMaps {
        vel: dir[RHO],
        stress: block(&c0, k.mu_tilde, k.pi_tilde)?,
        memory: block(&cl, k.mu_hat, k.pi_hat)?,
    })
}

/// `V''(p)[d1, d2]` at one point.
///
/// Besides the product-rule terms this contains the curvature of the
/// parameter-to-moduli maps (`mu`, `pi` are not linear in `vS`, `tauS`,
/// `vP`, `tauP`) and the factor 2 of the second derivative of `1/rho`.
pub fn v_second_maps<T: Scalar>(
    pt: &ParameterPoint<T>,
    alpha: T,
    d1: &[T; 5],
    d2: &[T; 5],
    dim: usize,
) -> Result<BlockMaps<T>> {
    let (_, c0, cl) = base_maps(pt, alpha, dim)?;
    let k1 = perturbation_coeffs(pt, alpha, d1);
    let k2 = perturbation_coeffs(pt, alpha, d2);
    let kk = curvature_coeffs(pt, alpha, d1, d2);
    let rho = pt.rho;
    let (r1, r2) = (d1[RHO], d2[RHO]);
    let block = |c: &IsotropicMap<T>,
                 a1: (T, T),
                 a2: (T, T),
                 a12: (T, T)|
     -> Result<IsotropicMap<T>> {
        let t0 = c.invert()?.scale(T::c(2.0) * r1 * r2 / (rho * rho * rho));
        let t1 = cinv_derivative_map(c, a2.0, a2.1)?.scale(-r1 / (rho * rho));
        let t2 = cinv_derivative_map(c, a1.0, a1.1)?.scale(-r2 / (rho * rho));
        let t3 = cinv_second_map(c, a1, a2)?.scale(T::one() / rho);
        let t4 = cinv_derivative_map(c, a12.0, a12.1)?.scale(T::one() / rho);
        Ok(t0.add(&t1).add(&t2).add(&t3).add(&t4))
    };
    Ok(BlockMaps {
        vel: T::zero(),
        stress: block(
            &c0,
            (k1.mu_tilde, k1.pi_tilde),
            (k2.mu_tilde, k2.pi_tilde),
            (kk.mu_tilde, kk.pi_tilde),
        )?,
        memory: block(
            &cl,
            (k1.mu_hat, k1.pi_hat),
            (k2.mu_hat, k2.pi_hat),
            (kk.mu_hat, kk.pi_hat),
        )?,
    })
}

fn check_cell<T: Scalar>(cell: &StateCell<T>) -> Result<usize> {
    let dim = cell.dim();
    check_dim(dim)?;
    if let Some(s) = cell.psi.iter().find(|s| s.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: s.dim(),
        });
    }
    Ok(dim)
}

/// `(w, psi_0, psi_l) -> (rho w, C̃(mu0, pi0) psi_0, C̃(tauS mu0, tauP pi0) psi_l)`.
pub fn apply_b_point<T: Scalar>(
    pt: &ParameterPoint<T>,
    alpha: T,
    cell: &StateCell<T>,
) -> Result<StateCell<T>> {
    let dim = check_cell(cell)?;
    Ok(b_maps(pt, alpha, dim)?.apply(cell))
}

pub fn apply_b_inv_point<T: Scalar>(
    pt: &ParameterPoint<T>,
    alpha: T,
    cell: &StateCell<T>,
) -> Result<StateCell<T>> {
    let dim = check_cell(cell)?;
    Ok(b_maps(pt, alpha, dim)?.invert()?.apply(cell))
}

/// Memory decay: scales `psi_l` by `1 / tau_sigma_l` and clears the rest.
pub fn apply_q_point<T: Scalar>(relax: &RelaxationSpec<T>, cell: &StateCell<T>) -> Result<StateCell<T>> {
    if cell.psi.len() != relax.mechanisms() + 1 {
        return Err(Error::Mismatch(format!(
            "cell has {} stress blocks, relaxation expects {}",
            cell.psi.len(),
            relax.mechanisms() + 1
        )));
    }
    let dim = cell.dim();
    let mut out = StateCell::zeros(dim, cell.psi.len());
    for (l, tau) in relax.tau_sigma.iter().enumerate() {
        out.psi[l + 1] = cell.psi[l + 1].scale(T::one() / *tau);
    }
    Ok(out)
}

pub fn apply_v_prime_point<T: Scalar>(
    pt: &ParameterPoint<T>,
    alpha: T,
    dir: &[T; 5],
    cell: &StateCell<T>,
) -> Result<StateCell<T>> {
    let dim = check_cell(cell)?;
    Ok(v_prime_maps(pt, alpha, dir, dim)?.apply(cell))
}

pub fn apply_v_second_point<T: Scalar>(
    pt: &ParameterPoint<T>,
    alpha: T,
    d1: &[T; 5],
    d2: &[T; 5],
    cell: &StateCell<T>,
) -> Result<StateCell<T>> {
    let dim = check_cell(cell)?;
    Ok(v_second_maps(pt, alpha, d1, d2, dim)?.apply(cell))
}
