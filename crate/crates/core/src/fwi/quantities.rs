//! Pointwise integrands of the gradient and Hessian adjoints.
//!
//! Every quantity is a fixed combination of the adjoint elastic stress
//! `phi0` and the sum `sig` of the adjoint memory stresses, with scalar
//! coefficients depending on the material point and (for second order) on
//! a direction. Both the 2D and 3D coefficient sets follow from the
//! dimension `d` through `D0 = d pi - 2 (d - 1) mu` and
//! `Dl = d tauP pi - 2 (d - 1) tauS mu`.

use crate::error::{Error, Result};
use crate::rheology::{curvature_coeffs, moduli_from_params, perturbation_coeffs, ParameterPoint};
use crate::scalar::Scalar;
use crate::sym::{check_dim, Sym};

/// Relative size below which `D0` or `Dl` counts as singular.
pub const SINGULAR_GUARD: f64 = 1e-6;

/// Material point with the derived moduli and denominators.
#[derive(Clone, Copy, Debug)]
pub struct PointData<T> {
    pub dim: usize,
    pub rho: T,
    pub vs: T,
    pub vp: T,
    pub tau_s: T,
    pub tau_p: T,
    pub alpha: T,
    pub mu: T,
    pub pi: T,
    pub d0: T,
    pub dl: T,
}

impl<T: Scalar> PointData<T> {
    pub fn new(pt: &ParameterPoint<T>, alpha: T, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let md = moduli_from_params(pt, alpha)?;
        let (mu, pi) = (md.mu, md.pi);
        let d = T::c(dim as f64);
        let k = T::c(2.0 * (dim as f64 - 1.0));
        let d0 = d * pi - k * mu;
        let dl = d * pt.tau_p * pi - k * pt.tau_s * mu;
        let scale = pi.max(pt.tau_p * pi).max(mu).max(pt.tau_s * mu);
        let guard = T::c(SINGULAR_GUARD) * scale;
        if !(d0 > guard) || !(dl > guard) {
            return Err(Error::SingularMap {
                m: mu.f64(),
                p: pi.f64(),
                dim,
            });
        }
        Ok(PointData {
            dim,
            rho: pt.rho,
            vs: pt.vs,
            vp: pt.vp,
            tau_s: pt.tau_s,
            tau_p: pt.tau_p,
            alpha,
            mu,
            pi,
            d0,
            dl,
        })
    }

    fn point(&self) -> ParameterPoint<T> {
        ParameterPoint::new(self.rho, self.vs, self.tau_s, self.vp, self.tau_p)
    }

    fn ks(&self) -> T {
        T::one() + self.alpha * self.tau_s
    }

    fn kp(&self) -> T {
        T::one() + self.alpha * self.tau_p
    }
}

fn comb<T: Scalar>(a: T, phi0: &Sym<T>, b: T, sig: &Sym<T>) -> Sym<T> {
    phi0.scale(a).axpy(b, sig)
}

/// First-order combinations.
#[derive(Clone, Copy, Debug)]
pub struct SigmaQuantities<T> {
    pub v: Sym<T>,
    pub tau_s1: Sym<T>,
    pub tau_s2: Sym<T>,
    pub tau_p: Sym<T>,
}

pub fn sigma_quantities<T: Scalar>(p: &PointData<T>, phi0: &Sym<T>, sig: &Sym<T>) -> SigmaQuantities<T> {
    let (a, ts, tp, d0, dl) = (p.alpha, p.tau_s, p.tau_p, p.d0, p.dl);
    SigmaQuantities {
        v: comb(T::one() / d0, phi0, tp / dl, sig),
        tau_s1: comb(-a / d0, phi0, tp / (ts * dl), sig),
        tau_s2: comb(a, phi0, -T::one() / ts, sig),
        tau_p: comb(a / d0, phi0, -T::one() / dl, sig),
    }
}

/// Gradient integrand rows `(rho, vS, tauS, vP, tauP)` for base strain
/// `eps` and adjoint stresses `(phi0, sig)`. `vdot_w` is the velocity
/// term `v' . w` of the density row.
pub fn first_order_rows<T: Scalar>(
    p: &PointData<T>,
    eps: &Sym<T>,
    vdot_w: T,
    phi0: &Sym<T>,
    sig: &Sym<T>,
) -> [T; 5] {
    let two = T::c(2.0);
    let s = sigma_quantities(p, phi0, sig);
    let dv = eps.trace();
    let e_all = eps.dot(&(*phi0 + *sig));
    [
        vdot_w - e_all / p.rho,
        two / p.vs * (-e_all + p.pi * s.v.trace() * dv),
        (eps.dot(&s.tau_s2) + p.pi * s.tau_s1.trace() * dv) / p.ks(),
        -two * p.pi / p.vp * s.v.trace() * dv,
        p.pi / p.kp() * s.tau_p.trace() * dv,
    ]
}

/// Direction-dependent coefficients of the second-order combinations.
#[derive(Clone, Copy, Debug)]
pub struct KCoefficients<T> {
    /// `rho_hat / rho`
    pub q: T,
    pub mu_t: T,
    pub pi_t: T,
    pub mu_h: T,
    pub pi_h: T,
    pub k_mu: T,
    pub k_mu_tau: T,
    pub k_pi: T,
    pub k_pi_tau: T,
    pub k_s_phi: T,
    pub k_s_sig: T,
    pub k_p_phi: T,
    pub k_p_sig: T,
}

pub fn k_coefficients<T: Scalar>(p: &PointData<T>, dir: &[T; 5]) -> KCoefficients<T> {
    let c = perturbation_coeffs(&p.point(), p.alpha, dir);
    let (mt, pt, mh, ph) = (c.mu_tilde, c.pi_tilde, c.mu_hat, c.pi_hat);
    let (mu, pi, d0, dl) = (p.mu, p.pi, p.d0, p.dl);
    let (mut_, pit) = (p.tau_s * mu, p.tau_p * pi);
    let d = T::c(p.dim as f64);
    let k = T::c(2.0 * (p.dim as f64 - 1.0));
    let two = T::c(2.0);
    let q = dir[0] / p.rho;
    let k_mu = (mt * (k * mu * pi - pi * d0) - k * mu * mu * pt) / (mu * d0 * d0);
    let k_mu_tau = (mh * (k * mut_ * pit - pit * dl) - k * mut_ * mut_ * ph) / (mut_ * dl * dl);
    let k_pi = (d * pt - k * mt) / (d0 * d0);
    let k_pi_tau = (d * ph - k * mh) / (dl * dl);
    KCoefficients {
        q,
        mu_t: mt,
        pi_t: pt,
        mu_h: mh,
        pi_h: ph,
        k_mu,
        k_mu_tau,
        k_pi,
        k_pi_tau,
        k_s_phi: two * k_mu - q * pi / d0,
        k_s_sig: two * k_mu_tau - q * p.tau_p * pi / dl,
        k_p_phi: q / d0 + two * k_pi,
        k_p_sig: q / dl + two * k_pi_tau,
    }
}

/// Combinations of the cross-term integrand (adjoint data built from the
/// first adjoint and the linearized run).
#[derive(Clone, Copy, Debug)]
pub struct GammaQuantities<T> {
    pub rho1: Sym<T>,
    pub rho2: Sym<T>,
    pub vs1: Sym<T>,
    pub vs2: Sym<T>,
    pub tau_s0: Sym<T>,
    pub tau_s1: Sym<T>,
    pub tau_s2: Sym<T>,
    pub vp1: Sym<T>,
    pub vp2: Sym<T>,
    pub tau_p1: Sym<T>,
    pub tau_p2: Sym<T>,
}

pub fn gamma_quantities<T: Scalar>(
    p: &PointData<T>,
    k: &KCoefficients<T>,
    phi0: &Sym<T>,
    sig: &Sym<T>,
) -> GammaQuantities<T> {
    let (a, ts, tp, mu, pi, d0, dl, q) = (p.alpha, p.tau_s, p.tau_p, p.mu, p.pi, p.d0, p.dl, k.q);
    let (mt, pt, mh, ph) = (k.mu_t, k.pi_t, k.mu_h, k.pi_h);
    GammaQuantities {
        rho1: comb(q + mt / mu, phi0, q + mh / (ts * mu), sig),
        rho2: comb(
            (mu * pt - mt * pi) / (mu * d0),
            phi0,
            (ts * mu * ph - tp * mh * pi) / (ts * mu * dl),
            sig,
        ),
        vs1: comb(pi / d0, phi0, tp * pi / dl, sig),
        vs2: comb(q * pi / d0 - k.k_mu, phi0, q * tp * pi / dl - k.k_mu_tau, sig),
        tau_s0: comb(-a * (q + mt / mu), phi0, q / ts + mh / (ts * ts * mu), sig),
        tau_s1: comb(-a * pi / d0, phi0, tp * pi / (ts * dl), sig),
        tau_s2: comb(
            -a * (q * pi / d0 - k.k_mu),
            phi0,
            q * tp * pi / (ts * dl) - k.k_mu_tau / ts,
            sig,
        ),
        vp1: comb(T::one() / d0, phi0, tp / dl, sig),
        vp2: comb(q / d0 + k.k_pi, phi0, tp * (q / dl + k.k_pi_tau), sig),
        tau_p1: comb(a / d0, phi0, -T::one() / dl, sig),
        tau_p2: comb(a * (q / d0 + k.k_pi), phi0, -(q / dl + k.k_pi_tau), sig),
    }
}

/// Cross-term rows: base strain `eps`, linearized strain `eps1`, velocity
/// term `v1' . w`, first adjoint stresses `(phi0, sig)`.
pub fn gamma_rows<T: Scalar>(
    p: &PointData<T>,
    dir: &[T; 5],
    eps: &Sym<T>,
    eps1: &Sym<T>,
    v1dot_w: T,
    phi0: &Sym<T>,
    sig: &Sym<T>,
) -> [T; 5] {
    let two = T::c(2.0);
    let k = k_coefficients(p, dir);
    let g = gamma_quantities(p, &k, phi0, sig);
    let (dv, dv1) = (eps.trace(), eps1.trace());
    let e1_all = eps1.dot(&(*phi0 + *sig));
    [
        v1dot_w - (e1_all + eps.dot(&g.rho1) + g.rho2.trace() * dv) / p.rho,
        two / p.vs * (-e1_all - eps.dot(&g.rho1) + g.vs1.trace() * dv1 + g.vs2.trace() * dv),
        (eps1.dot(&comb(p.alpha, phi0, -T::one() / p.tau_s, sig)) - eps.dot(&g.tau_s0)
            + g.tau_s1.trace() * dv1
            + g.tau_s2.trace() * dv)
            / p.ks(),
        -two * p.pi / p.vp * (g.vp1.trace() * dv1 + g.vp2.trace() * dv),
        p.pi / p.kp() * (g.tau_p1.trace() * dv1 + g.tau_p2.trace() * dv),
    ]
}

/// Combinations of the curvature integrand.
#[derive(Clone, Copy, Debug)]
pub struct UpsilonQuantities<T> {
    pub rho1: Sym<T>,
    pub rho2: Sym<T>,
    pub vs1: Sym<T>,
    pub vs2: Sym<T>,
    pub tau_s1: Sym<T>,
    pub tau_s2: Sym<T>,
    pub vp: Sym<T>,
    pub tau_p: Sym<T>,
}

pub fn upsilon_quantities<T: Scalar>(
    p: &PointData<T>,
    k: &KCoefficients<T>,
    phi0: &Sym<T>,
    sig: &Sym<T>,
) -> UpsilonQuantities<T> {
    let two = T::c(2.0);
    let (a, ts, tp, mu) = (p.alpha, p.tau_s, p.tau_p, p.mu);
    let g = gamma_quantities(p, k, phi0, sig);
    let (q, mt, mh) = (k.q, k.mu_t, k.mu_h);
    UpsilonQuantities {
        rho1: g.rho1,
        rho2: g.rho2,
        vs1: comb(q + two * mt / mu, phi0, q + two * mh / (ts * mu), sig),
        vs2: comb(k.k_s_phi, phi0, k.k_s_sig, sig),
        tau_s1: comb(-a * (q + two * mt / mu), phi0, q / ts + two * mh / (ts * ts * mu), sig),
        tau_s2: comb(-a * k.k_s_phi, phi0, k.k_s_sig / ts, sig),
        vp: comb(k.k_p_phi, phi0, tp * k.k_p_sig, sig),
        tau_p: comb(-a * k.k_p_phi, phi0, k.k_p_sig, sig),
    }
}

/// `C(m, p) M = 2 m M + (p - 2 m) tr(M) I`
fn stiff<T: Scalar>(m: T, p: T, x: &Sym<T>) -> Sym<T> {
    let two = T::c(2.0);
    x.scale(two * m).axpy((p - two * m) * x.trace(), &Sym::identity(x.dim()))
}

/// `C(m, p)^{-1} M` with denominator `den = d p - 2 (d - 1) m`.
fn compliance<T: Scalar>(m: T, p: T, den: T, x: &Sym<T>) -> Sym<T> {
    let two = T::c(2.0);
    x.scale(T::one() / (two * m))
        .axpy((two * m - p) / (two * m * den) * x.trace(), &Sym::identity(x.dim()))
}

/// Curvature rows for direction `dir` against the unit directions: base
/// strain `eps`, first adjoint stresses `(phi0, sig)`.
///
/// The combinations above pair the product-rule part of the second
/// derivative of the material map. The extra terms here complete it: the
/// second derivative of `1 / rho` and the curvature of the maps from
/// `(vS, tauS, vP, tauP)` to the moduli.
pub fn upsilon_rows<T: Scalar>(
    p: &PointData<T>,
    dir: &[T; 5],
    eps: &Sym<T>,
    phi0: &Sym<T>,
    sig: &Sym<T>,
) -> [T; 5] {
    let two = T::c(2.0);
    let k = k_coefficients(p, dir);
    let u = upsilon_quantities(p, &k, phi0, sig);
    let dv = eps.trace();
    let mut rows = [
        (eps.dot(&u.rho1) + u.rho2.trace() * dv) / p.rho,
        two / p.vs * (eps.dot(&u.vs1) + u.vs2.trace() * dv),
        (eps.dot(&u.tau_s1) + u.tau_s2.trace() * dv) / p.ks(),
        two * p.pi / p.vp * u.vp.trace() * dv,
        p.pi / p.kp() * u.tau_p.trace() * dv,
    ];
    rows[0] = rows[0] + k.q / p.rho * eps.dot(&(*phi0 + *sig));
    let pt = p.point();
    let (mut_, pit) = (p.tau_s * p.mu, p.tau_p * p.pi);
    for (j, row) in rows.iter_mut().enumerate() {
        let mut e = [T::zero(); 5];
        e[j] = T::one();
        let c = curvature_coeffs(&pt, p.alpha, dir, &e);
        let s0 = compliance(p.mu, p.pi, p.d0, &stiff(c.mu_tilde, c.pi_tilde, eps));
        let sl = compliance(mut_, pit, p.dl, &stiff(c.mu_hat, c.pi_hat, eps));
        *row = *row - s0.dot(phi0) - sl.dot(sig);
    }
    rows
}
