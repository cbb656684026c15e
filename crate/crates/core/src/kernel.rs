//! The Sarason kernel family on the annulus A = { z : q < |z| < 1 }.
//!
//! For a weight t > 0 the reproducing kernel of the Hardy space H²_t
//! (boundary L² with the inner circle weighted by t) is the Laurent series
//!
//!     k(z, w; t) = Σ_{n ∈ ℤ} (z w̄)^n / (1 + t q^{2n}),
//!
//! absolutely convergent for q² < |z w̄| < 1.  The distinguished member
//! k = k(·,·;1) never vanishes on the open annulus and obeys the
//! reciprocal identity
//!
//!     k(z, w) · k(z, −w) · C′ = 1,
//!
//! with a constant C′ > 0 depending only on q.  Near and on the boundary
//! the series is useless (it diverges for |z w̄| = 1), so a second route
//! expresses k through the theta function
//!
//!     ϑ₁(x, q) = 2 q^{1/4} sin x · Π_{n≥1} (1−q^{2n})(1−q^{2n}e^{2ix})(1−q^{2n}e^{−2ix})
//!
//! as k = C · ϑ₁(x+y) / (ϑ₁(x) ϑ₁(y)) with e^{2ix} = z w̄ and
//! e^{2iy} = −t.  The proportionality constant C is purely imaginary; it
//! is calibrated once per q by matching the two routes at z = w = √q and
//! cached.  The zeros of the family are exactly the solutions of
//! t z w̄ = −q^{2m}, which for t = 1 puts them on the boundary
//! (for example k(1, −1) = 0) and nowhere inside.

use crate::laurent::LaurentCoeffs;
use crate::linalg::{C64, CMat};
use std::f64::consts::PI;
use thiserror::Error;

/// Modulus used by every fixture and by configs that do not override it.
pub const DEFAULT_Q: f64 = 0.25;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("modulus q must lie in (0, 1), got {0}")]
    BadModulus(f64),
    #[error("weight t must be positive, got {0}")]
    BadWeight(f64),
    #[error("point {point} is outside the {what}")]
    Domain { point: C64, what: &'static str },
    #[error("theta argument has |Im x| = {0:.4}, outside the stability strip |Im x| < {1:.4}")]
    ThetaStrip(f64, f64),
    #[error("series tail bound {got:.3e} cannot reach tolerance {want:.3e} within {terms} terms")]
    SeriesTail { got: f64, want: f64, terms: usize },
    #[error("kernel is singular at these arguments (z w̄ too close to 1)")]
    Singular,
}

/// Truncation policy for the Laurent-series evaluation.
#[derive(Debug, Clone, Copy)]
pub struct SeriesControl {
    /// Largest |n| the symmetric partial sum may use.
    pub max_index: usize,
    /// Certified tail bound the evaluation must reach.
    pub tol: f64,
}

impl Default for SeriesControl {
    fn default() -> Self {
        SeriesControl {
            max_index: 4000,
            tol: 1e-12,
        }
    }
}

/// A kernel evaluation together with a rigorous truncation-error bound.
#[derive(Debug, Clone, Copy)]
pub struct KernelValue {
    pub value: C64,
    pub tail_bound: f64,
}

/// Which evaluation route to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelMethod {
    /// Laurent series with certified geometric tail; strict interior only.
    Series,
    /// Theta quotient; stable on the closed annulus.
    Theta,
}

fn check_modulus(q: f64) -> Result<(), KernelError> {
    if !(q > 0.0 && q < 1.0 && q.is_finite()) {
        return Err(KernelError::BadModulus(q));
    }
    Ok(())
}

fn check_weight(t: f64) -> Result<(), KernelError> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(KernelError::BadWeight(t));
    }
    Ok(())
}

/// First Jacobi theta function ϑ₁(x, q) by its infinite product, truncated
/// once the remaining factors differ from 1 by less than 1e−16.  The
/// argument must keep |Im x| < −2 ln q so the early factors stay tame.
pub fn theta1(x: C64, q: f64) -> Result<C64, KernelError> {
    check_modulus(q)?;
    let strip = -2.0 * q.ln();
    if !x.is_finite() || x.im.abs() >= strip {
        return Err(KernelError::ThetaStrip(x.im.abs(), strip));
    }
    let e2 = (C64::new(0.0, 2.0) * x).exp();
    let e2inv = (C64::new(0.0, -2.0) * x).exp();
    let grow = e2.norm().max(e2inv.norm()).max(1.0);
    let mut p = C64::new(2.0 * q.powf(0.25), 0.0) * x.sin();
    let q2 = q * q;
    let mut q2n = q2;
    loop {
        let f = (C64::new(1.0 - q2n, 0.0))
            * (C64::new(1.0, 0.0) - e2 * q2n)
            * (C64::new(1.0, 0.0) - e2inv * q2n);
        p *= f;
        q2n *= q2;
        if q2n * (1.0 + grow) < 1e-17 {
            break;
        }
    }
    Ok(p)
}

fn series_sum(u: C64, t: f64, q: f64, ctl: &SeriesControl) -> Result<KernelValue, KernelError> {
    let au = u.norm();
    let r = au.max(q * q / au);
    debug_assert!(r < 1.0, "series called outside its convergence ring");
    let factor = 1.0f64.max(1.0 / t);
    let mut sum = C64::new(1.0 / (1.0 + t), 0.0);
    let mut up = C64::new(1.0, 0.0); // u^n
    let mut un = C64::new(1.0, 0.0); // (q²/u)^n
    let ratio = C64::new(q * q, 0.0) / u;
    let mut q2n = 1.0f64; // q^{2n}
    let mut tail = f64::INFINITY;
    for n in 1..=ctl.max_index {
        up *= u;
        un *= ratio;
        q2n *= q * q;
        sum += up / (1.0 + t * q2n) + un / (q2n + t);
        tail = factor * 2.0 * r.powi(n as i32 + 1) / (1.0 - r);
        if tail < ctl.tol {
            return Ok(KernelValue {
                value: sum,
                tail_bound: tail,
            });
        }
    }
    Err(KernelError::SeriesTail {
        got: tail,
        want: ctl.tol,
        terms: ctl.max_index,
    })
}

/// Modulus q together with the derived constants every other module needs.
///
/// Construction validates q, computes C′ from the reciprocal identity at
/// the reference point z = w = √q, and calibrates the theta-route
/// proportionality constant there as well.  Both are cached; the struct is
/// immutable afterwards.
#[derive(Debug, Clone)]
pub struct AnnulusParams {
    q: f64,
    sqrt_q: f64,
    c_prime: f64,
    theta_coupling: C64,
}

impl AnnulusParams {
    pub fn new(q: f64) -> Result<Self, KernelError> {
        check_modulus(q)?;
        let sqrt_q = q.sqrt();
        let ctl = SeriesControl {
            max_index: 8000,
            tol: 1e-15,
        };
        // u = z w̄ = q at the reference point
        let k_plus = series_sum(C64::new(q, 0.0), 1.0, q, &ctl)?.value;
        let k_minus = series_sum(C64::new(-q, 0.0), 1.0, q, &ctl)?.value;
        let prod = (k_plus * k_minus).re;
        debug_assert!((k_plus * k_minus).im.abs() < 1e-12);
        if prod <= 0.0 {
            return Err(KernelError::Singular);
        }
        let c_prime = 1.0 / prod;

        // theta calibration at the same point: x₀ = −(i/2) ln q, y₀ = π/2
        let x0 = C64::new(0.0, -0.5 * q.ln());
        let y0 = C64::new(PI / 2.0, 0.0);
        let t_x0 = theta1(x0, q)?;
        let t_y0 = theta1(y0, q)?;
        let t_xy = theta1(x0 + y0, q)?;
        let theta_coupling = k_plus * t_x0 * t_y0 / t_xy;

        Ok(AnnulusParams {
            q,
            sqrt_q,
            c_prime,
            theta_coupling,
        })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn sqrt_q(&self) -> f64 {
        self.sqrt_q
    }

    /// The constant C′ > 0 of the reciprocal identity
    /// k(z,w)·k(z,−w)·C′ = 1.
    pub fn c_prime(&self) -> f64 {
        self.c_prime
    }

    /// Calibrated proportionality constant C of the theta representation
    /// k = C·ϑ₁(x+y)/(ϑ₁(x)ϑ₁(y)); purely imaginary.
    pub fn theta_coupling(&self) -> C64 {
        self.theta_coupling
    }

    pub fn in_open_annulus(&self, z: C64) -> bool {
        let a = z.norm();
        a > self.q && a < 1.0
    }

    pub fn in_closed_annulus(&self, z: C64, slack: f64) -> bool {
        let a = z.norm();
        a >= self.q - slack && a <= 1.0 + slack
    }

    /// Distance of z to the boundary circles; positive inside.
    pub fn interior_margin(&self, z: C64) -> f64 {
        let a = z.norm();
        (a - self.q).min(1.0 - a)
    }

    /// Series evaluation of k(z, w; t) with a certified tail bound.
    /// Both points must lie strictly inside the annulus.
    pub fn kernel_series(
        &self,
        z: C64,
        w: C64,
        t: f64,
        ctl: &SeriesControl,
    ) -> Result<KernelValue, KernelError> {
        check_weight(t)?;
        for point in [z, w] {
            if !self.in_open_annulus(point) {
                return Err(KernelError::Domain {
                    point,
                    what: "open annulus required by the series evaluation",
                });
            }
        }
        series_sum(z * w.conj(), t, self.q, ctl)
    }

    /// Theta-quotient evaluation of k(z, w; t); valid on the closed
    /// annulus and pointwise stable there (the place the Laurent series
    /// cannot reach).
    pub fn kernel_theta(&self, z: C64, w: C64, t: f64) -> Result<KernelValue, KernelError> {
        check_weight(t)?;
        for point in [z, w] {
            if !self.in_closed_annulus(point, 1e-12) {
                return Err(KernelError::Domain {
                    point,
                    what: "closed annulus required by the theta evaluation",
                });
            }
        }
        let u = z * w.conj();
        let x = C64::new(0.0, -0.5) * u.ln();
        let y = C64::new(PI / 2.0, -0.5 * t.ln());
        let d1 = theta1(x, self.q)?;
        let d2 = theta1(y, self.q)?;
        if d1.norm() < 1e-250 || d2.norm() < 1e-250 {
            return Err(KernelError::Singular);
        }
        let num = theta1(x + y, self.q)?;
        let value = self.theta_coupling * num / (d1 * d2);
        Ok(KernelValue {
            value,
            tail_bound: 1e-14 * (1.0 + value.norm()),
        })
    }

    /// Evaluate the kernel by the requested route with default series
    /// control.
    pub fn kernel(
        &self,
        z: C64,
        w: C64,
        t: f64,
        method: KernelMethod,
    ) -> Result<KernelValue, KernelError> {
        match method {
            KernelMethod::Series => self.kernel_series(z, w, t, &SeriesControl::default()),
            KernelMethod::Theta => self.kernel_theta(z, w, t),
        }
    }

    /// Orthonormal basis function ζ_n(z) = z^n / √(1 + t q^{2n}),
    /// evaluated in a form that stays finite for any index of either sign.
    pub fn basis_zeta(&self, n: i64, z: C64, t: f64) -> Result<C64, KernelError> {
        check_weight(t)?;
        if z == C64::new(0.0, 0.0) && n < 0 {
            return Err(KernelError::Domain {
                point: z,
                what: "punctured plane (negative powers need z ≠ 0)",
            });
        }
        let q = self.q;
        if n >= 0 {
            let n = n as i32;
            Ok(z.powi(n) / (1.0 + t * q.powi(2 * n)).sqrt())
        } else {
            let m = (-n) as i32;
            // z^{-m}/√(1+t q^{-2m}) = (q/z)^m / √(q^{2m} + t)
            Ok((C64::new(q, 0.0) / z).powi(m) / (q.powi(2 * m) + t).sqrt())
        }
    }

    /// Σ_j c_j ζ_j(z) for a stored coefficient window (t = 1 basis).
    pub fn eval_in_basis(&self, coeffs: &LaurentCoeffs, z: C64) -> Result<C64, KernelError> {
        let mut acc = C64::new(0.0, 0.0);
        for j in coeffs.min_index()..=coeffs.max_index() {
            let c = coeffs.zeta_coeff(j);
            if c != C64::new(0.0, 0.0) {
                acc += c * self.basis_zeta(j, z, 1.0)?;
            }
        }
        Ok(acc)
    }

    /// Gram matrix (k(z_i, z_j; t))_{ij} over strictly interior points;
    /// Hermitian by construction and PSD up to roundoff.
    pub fn gram_matrix(&self, points: &[C64], t: f64) -> Result<CMat, KernelError> {
        let n = points.len();
        let ctl = SeriesControl::default();
        let mut g = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.kernel_series(points[i], points[j], t, &ctl)?.value;
                g[(i, j)] = v;
                if i != j {
                    g[(j, i)] = v.conj();
                } else {
                    g[(i, j)] = C64::new(v.re, 0.0);
                }
            }
        }
        Ok(g)
    }

    /// ∫ f ḡ dμ_t by trapezoid quadrature over both boundary circles (the
    /// inner one weighted by t).  Node count is 4x the coefficient
    /// bandwidth, floored at 256, which keeps aliasing far below the
    /// 1e−10 agreement the quadrature is held to.
    pub fn boundary_inner_product(
        &self,
        f: &LaurentCoeffs,
        g: &LaurentCoeffs,
        t: f64,
    ) -> Result<C64, KernelError> {
        check_weight(t)?;
        let band = f.bandwidth().max(g.bandwidth());
        let nodes = (4 * (band + 1)).max(256);
        let mut acc = C64::new(0.0, 0.0);
        for (radius, weight) in [(1.0, 1.0), (self.q, t)] {
            for l in 0..nodes {
                let th = 2.0 * PI * (l as f64) / (nodes as f64);
                let z = C64::from_polar(radius, th);
                let fv = self.eval_in_basis(f, z)?;
                let gv = self.eval_in_basis(g, z)?;
                acc += fv * gv.conj() * weight;
            }
        }
        Ok(acc / nodes as f64)
    }
}

/// The constant C′ of the reciprocal identity, as a standalone query.
pub fn reciprocal_constant(q: f64) -> Result<f64, KernelError> {
    Ok(AnnulusParams::new(q)?.c_prime())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> AnnulusParams {
        AnnulusParams::new(DEFAULT_Q).unwrap()
    }

    /// Independent oracle: the sine series
    /// ϑ₁(x,q) = 2 Σ_{n≥0} (−1)^n q^{(n+1/2)²} sin((2n+1)x).
    fn theta1_series(x: C64, q: f64) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for n in 0..60i32 {
            let e = (n as f64 + 0.5) * (n as f64 + 0.5);
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            acc += C64::new(sign * q.powf(e), 0.0) * (C64::new(2.0 * n as f64 + 1.0, 0.0) * x).sin();
        }
        acc * 2.0
    }

    fn random_interior(rng: &mut ChaCha8Rng, p: &AnnulusParams) -> C64 {
        let r = rng.gen_range(p.q() + 0.02..0.98);
        let th = rng.gen_range(0.0..2.0 * PI);
        C64::from_polar(r, th)
    }

    #[test]
    fn theta1_vanishes_at_zero() {
        let v = theta1(C64::new(0.0, 0.0), DEFAULT_Q).unwrap();
        assert!(v.norm() < 1e-15);
    }

    #[test]
    fn theta1_at_pi_half_matches_reference() {
        // 2 q^{1/4} (q²;q²)_∞ (−q²;q²)²_∞ at q = 1/4, summed to 30 digits
        let v = theta1(C64::new(PI / 2.0, 0.0), DEFAULT_Q).unwrap();
        assert!(v.im.abs() < 1e-15);
        assert!((v.re - 1.502947261299397976).abs() < 1e-14);
    }

    #[test]
    fn theta1_product_matches_sine_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x = C64::new(rng.gen_range(-3.0..3.0), rng.gen_range(-1.2..1.2));
            let a = theta1(x, DEFAULT_Q).unwrap();
            let b = theta1_series(x, DEFAULT_Q);
            assert!((a - b).norm() <= 1e-12 * (1.0 + b.norm()), "x = {x}");
        }
    }

    #[test]
    fn theta1_is_pi_antiperiodic() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let x = C64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0));
            let a = theta1(x + C64::new(PI, 0.0), DEFAULT_Q).unwrap();
            let b = -theta1(x, DEFAULT_Q).unwrap();
            assert!((a - b).norm() < 1e-12 * (1.0 + b.norm()));
        }
    }

    #[test]
    fn theta1_rejects_bad_arguments() {
        assert!(matches!(
            theta1(C64::new(0.0, 0.0), 1.5),
            Err(KernelError::BadModulus(_))
        ));
        assert!(matches!(
            theta1(C64::new(0.0, 5.0), DEFAULT_Q),
            Err(KernelError::ThetaStrip(_, _))
        ));
    }

    #[test]
    fn series_value_at_the_reference_point() {
        // z = w = 1/2 gives u = q; Σ_{n∈ℤ} q^n/(1+q^{2n}) to 20 digits
        let p = params();
        let ctl = SeriesControl {
            max_index: 4000,
            tol: 1e-14,
        };
        let v = p
            .kernel_series(C64::new(0.5, 0.0), C64::new(0.5, 0.0), 1.0, &ctl)
            .unwrap();
        assert!((v.value.re - 1.1367607720058066).abs() < v.tail_bound + 1e-14);
        assert!(v.value.im.abs() < 1e-15);
        assert!(v.tail_bound < 1e-14);
    }

    #[test]
    fn series_value_alternating() {
        let p = params();
        let ctl = SeriesControl {
            max_index: 4000,
            tol: 1e-14,
        };
        let v = p
            .kernel_series(C64::new(0.5, 0.0), C64::new(-0.5, 0.0), 1.0, &ctl)
            .unwrap();
        assert!((v.value.re - 0.12893289354178260).abs() < v.tail_bound + 1e-14);
    }

    #[test]
    fn reciprocal_constant_matches_product_form() {
        // C′ = 4 ((−q²;q²)_∞/(q²;q²)_∞)⁴, an independent route to the
        // calibrated value
        let p = params();
        let q2 = DEFAULT_Q * DEFAULT_Q;
        let mut num = 1.0f64;
        let mut den = 1.0f64;
        let mut q2n = q2;
        for _ in 1..200 {
            num *= 1.0 + q2n;
            den *= 1.0 - q2n;
            q2n *= q2;
        }
        let closed = 4.0 * (num / den).powi(4);
        assert!((p.c_prime() - closed).abs() < 1e-12 * closed);
        assert!((p.c_prime() - 6.822871506529905).abs() < 1e-12);
        assert!((reciprocal_constant(DEFAULT_Q).unwrap() - p.c_prime()).abs() == 0.0);
    }

    #[test]
    fn theta_coupling_is_purely_imaginary() {
        // C = i q^{1/4} (q²;q²)³_∞; the calibration should land on it
        let p = params();
        let c = p.theta_coupling();
        assert!(c.re.abs() < 1e-13 * c.norm());
        let q2 = DEFAULT_Q * DEFAULT_Q;
        let mut e = 1.0f64;
        let mut q2n = q2;
        for _ in 1..200 {
            e *= 1.0 - q2n;
            q2n *= q2;
        }
        let closed = DEFAULT_Q.powf(0.25) * e.powi(3);
        assert!((c.im - closed).abs() < 1e-13 * closed);
    }

    #[test]
    fn reciprocal_identity_on_random_pairs() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let z = random_interior(&mut rng, &p);
            let w = random_interior(&mut rng, &p);
            let a = p.kernel(z, w, 1.0, KernelMethod::Series).unwrap().value;
            let b = p.kernel(z, -w, 1.0, KernelMethod::Series).unwrap().value;
            let res = (a * b * p.c_prime() - 1.0).norm();
            assert!(res < 1e-10, "z = {z}, w = {w}, residual {res:.3e}");
        }
    }

    #[test]
    fn boundary_zero_via_theta() {
        let p = params();
        let v = p
            .kernel_theta(C64::new(1.0, 0.0), C64::new(-1.0, 0.0), 1.0)
            .unwrap();
        assert!(v.value.norm() < 1e-12);
    }

    #[test]
    fn interior_zero_locus_for_general_weight() {
        // t z w̄ = −q^{2m}: at t = 0.7, m = 1 pick |z| = 0.335
        let p = params();
        let t = 0.7;
        let z = C64::new(0.335, 0.0);
        let w = C64::new(-(DEFAULT_Q * DEFAULT_Q) / (t * 0.335), 0.0);
        assert!(p.in_open_annulus(w), "w = {w}");
        let v = p.kernel(z, w, t, KernelMethod::Series).unwrap().value;
        assert!(v.norm() < 1e-6, "|k| = {:.3e}", v.norm());
    }

    #[test]
    fn series_and_theta_agree_on_a_grid() {
        let p = params();
        for i in 0..10 {
            for j in 0..10 {
                let z = C64::from_polar(0.30 + 0.06 * i as f64, 0.631 * i as f64);
                let w = C64::from_polar(0.32 + 0.06 * j as f64, -0.417 * j as f64 + 0.2);
                for t in [1.0, 0.3, 2.2] {
                    let a = p.kernel(z, w, t, KernelMethod::Series).unwrap();
                    let b = p.kernel(z, w, t, KernelMethod::Theta).unwrap();
                    let err = (a.value - b.value).norm();
                    assert!(
                        err < a.tail_bound.max(1e-10),
                        "z={z} w={w} t={t} err={err:.3e}"
                    );
                }
            }
        }
    }

    #[test]
    fn branch_shift_invariance_of_the_theta_route() {
        // the quotient must not care which branch of log(z w̄) is taken
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..10 {
            let z = random_interior(&mut rng, &p);
            let w = random_interior(&mut rng, &p);
            let u = z * w.conj();
            let x = C64::new(0.0, -0.5) * u.ln();
            let y = C64::new(PI / 2.0, 0.0);
            let quot = |x: C64| {
                p.theta_coupling() * theta1(x + y, DEFAULT_Q).unwrap()
                    / (theta1(x, DEFAULT_Q).unwrap() * theta1(y, DEFAULT_Q).unwrap())
            };
            let v0 = quot(x);
            let v1 = quot(x + C64::new(PI, 0.0));
            let v2 = quot(x - C64::new(PI, 0.0));
            assert!((v0 - v1).norm() < 1e-11 * (1.0 + v0.norm()));
            assert!((v0 - v2).norm() < 1e-11 * (1.0 + v0.norm()));
        }
    }

    #[test]
    fn gram_matrices_are_psd() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let pts: Vec<C64> = (0..5).map(|_| random_interior(&mut rng, &p)).collect();
        let g = p.gram_matrix(&pts, 1.0).unwrap();
        assert!((&g - g.adjoint()).norm() < 1e-14);
        let min = crate::linalg::min_eig_hermitian(&g);
        assert!(min > -1e-10 * g.norm(), "min eigenvalue {min:.3e}");
    }

    #[test]
    fn single_point_gram_is_positive() {
        let p = params();
        let g = p.gram_matrix(&[C64::new(0.4, 0.3)], 1.0).unwrap();
        assert!(g[(0, 0)].re > 0.0 && g[(0, 0)].im == 0.0);
    }

    #[test]
    fn weight_shift_conjugates_the_gram_matrix() {
        // z w̄ · k(z,w;q²) = k(z,w;1), so G_{q²} = D G₁ D* with D = diag(1/z_i)
        let p = params();
        let pts = [
            C64::new(0.5, 0.1),
            C64::new(-0.3, 0.4),
            C64::new(0.1, -0.6),
        ];
        let g1 = p.gram_matrix(&pts, 1.0).unwrap();
        let gq = p.gram_matrix(&pts, DEFAULT_Q * DEFAULT_Q).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let lhs = gq[(i, j)];
                let rhs = g1[(i, j)] / (pts[i] * pts[j].conj());
                assert!((lhs - rhs).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn zeta_values() {
        let p = params();
        let v0 = p.basis_zeta(0, C64::new(0.7, 0.2), 1.0).unwrap();
        assert!((v0 - C64::new(1.0 / 2.0f64.sqrt(), 0.0)).norm() < 1e-15);
        let v1 = p.basis_zeta(1, C64::new(0.5, 0.0), 1.0).unwrap();
        assert!((v1.re - 0.5 / (1.0f64 + 0.0625).sqrt()).abs() < 1e-15);
        // |ζ_{-n}(z)| = |z|^{-n}/√(1+t q^{-2n})
        let z = C64::new(0.3, -0.4);
        for n in 1..12i64 {
            let v = p.basis_zeta(-n, z, 0.8).unwrap();
            let expect = z.norm().powi(-(n as i32))
                / (1.0 + 0.8 * DEFAULT_Q.powi(-2 * n as i32)).sqrt();
            assert!((v.norm() - expect).abs() < 1e-12 * expect);
        }
        assert!(p.basis_zeta(-1, C64::new(0.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn quadrature_matches_coefficient_formula() {
        let p = params();
        // ζ_m against ζ_n: identity Gram
        for m in -3i64..=3 {
            for n in -3i64..=3 {
                let mut f = LaurentCoeffs::zeros(4);
                let mut g = LaurentCoeffs::zeros(4);
                f.values[(m + 4) as usize] = C64::new(1.0, 0.0);
                g.values[(n + 4) as usize] = C64::new(1.0, 0.0);
                let ip = p.boundary_inner_product(&f, &g, 1.0).unwrap();
                let want = if m == n { 1.0 } else { 0.0 };
                assert!((ip - C64::new(want, 0.0)).norm() < 1e-10, "m={m} n={n}");
            }
        }
        // plain monomial z^n has squared norm 1 + t q^{2n}
        for (n, t) in [(0i64, 1.0), (2, 0.5), (-2, 1.7), (5, 1.0)] {
            let mut plain = vec![C64::new(0.0, 0.0); 13];
            plain[(n + 6) as usize] = C64::new(1.0, 0.0);
            let f = LaurentCoeffs::from_monomial(6, &plain, DEFAULT_Q);
            let ip = p.boundary_inner_product(&f, &f, t).unwrap();
            let want = 1.0 + t * DEFAULT_Q.powi(2 * n as i32);
            assert!((ip.re - want).abs() < 1e-10 * want, "n={n} t={t}");
            assert!(ip.im.abs() < 1e-12);
        }
    }

    #[test]
    fn quadrature_agrees_with_weighted_sum_for_random_coefficients() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let t = 1.3;
        let n = 6usize;
        let plain: Vec<C64> = (0..2 * n + 1)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let plain_g: Vec<C64> = (0..2 * n + 1)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let f = LaurentCoeffs::from_monomial(n, &plain, DEFAULT_Q);
        let g = LaurentCoeffs::from_monomial(n, &plain_g, DEFAULT_Q);
        let quad = p.boundary_inner_product(&f, &g, t).unwrap();
        let mut formula = C64::new(0.0, 0.0);
        for j in 0..2 * n + 1 {
            let jj = j as i64 - n as i64;
            formula +=
                plain[j] * plain_g[j].conj() * (1.0 + t * DEFAULT_Q.powi(2 * jj as i32));
        }
        assert!((quad - formula).norm() < 1e-10 * (1.0 + formula.norm()));
    }

    #[test]
    fn series_reports_domain_and_weight_errors() {
        let p = params();
        assert!(matches!(
            p.kernel_series(
                C64::new(0.1, 0.0),
                C64::new(0.5, 0.0),
                1.0,
                &SeriesControl::default()
            ),
            Err(KernelError::Domain { .. })
        ));
        assert!(matches!(
            p.kernel_series(
                C64::new(0.5, 0.0),
                C64::new(0.5, 0.0),
                -1.0,
                &SeriesControl::default()
            ),
            Err(KernelError::BadWeight(_))
        ));
        // unreachable tolerance at a near-boundary pair
        let tight = SeriesControl {
            max_index: 5,
            tol: 1e-14,
        };
        assert!(matches!(
            p.kernel_series(C64::new(0.97, 0.0), C64::new(0.97, 0.0), 1.0, &tight),
            Err(KernelError::SeriesTail { .. })
        ));
    }

    #[test]
    fn tail_bound_is_honest() {
        let p = params();
        let loose = SeriesControl {
            max_index: 4000,
            tol: 1e-6,
        };
        let tight = SeriesControl {
            max_index: 4000,
            tol: 1e-15,
        };
        let z = C64::new(0.62, 0.31);
        let w = C64::new(-0.35, 0.44);
        let a = p.kernel_series(z, w, 0.8, &loose).unwrap();
        let b = p.kernel_series(z, w, 0.8, &tight).unwrap();
        assert!(a.tail_bound <= 1e-6);
        assert!((a.value - b.value).norm() <= a.tail_bound);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kernel_is_hermitian(
            rz in 0.28f64..0.97, az in 0.0f64..(2.0 * PI),
            rw in 0.28f64..0.97, aw in 0.0f64..(2.0 * PI),
            t in 0.2f64..3.0,
        ) {
            let p = params();
            let z = C64::from_polar(rz, az);
            let w = C64::from_polar(rw, aw);
            let a = p.kernel(z, w, t, KernelMethod::Series).unwrap();
            let b = p.kernel(w, z, t, KernelMethod::Series).unwrap();
            let err = (a.value - b.value.conj()).norm();
            prop_assert!(err < 1e-11 * (1.0 + a.value.norm()));
        }

        #[test]
        fn reciprocal_identity_holds(
            rz in 0.30f64..0.95, az in 0.0f64..(2.0 * PI),
            rw in 0.30f64..0.95, aw in 0.0f64..(2.0 * PI),
        ) {
            let p = params();
            let z = C64::from_polar(rz, az);
            let w = C64::from_polar(rw, aw);
            let a = p.kernel(z, w, 1.0, KernelMethod::Series).unwrap().value;
            let b = p.kernel(z, -w, 1.0, KernelMethod::Series).unwrap().value;
            prop_assert!((a * b * p.c_prime() - 1.0).norm() < 1e-9);
        }
    }
}
