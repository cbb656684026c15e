//! Minimal inner functions on the annulus.
//!
//! A test function is an analytic map ψ : A → 𝔻 that is unimodular on
//! both boundary circles and has exactly two zeros, normalized here to
//! ψ(√q) = 0 and ψ(1) = 1.  The family is parametrized by the unimodular
//! position γ of the second zero √q·γ:
//!
//!     ψ_γ(z) = δ · φ(z) · φ(γ̄ z) / z,    δ = 1/(φ(1) φ(γ̄)),
//!
//! where φ is the single-zero building block
//!
//!     φ(z) = √q · θ(z/√q) / θ(√q z),
//!     θ(w) = Π_{n≥0} (1 − Q^n w) · Π_{n≥1} (1 − Q^n/w),    Q = q²,
//!
//! so that |φ| = 1 on |z| = 1, |φ| = √q on |z| = q, φ(√q) = 0, and φ is
//! analytic on q^{3/2} < |z| < q^{−1/2}.  On |z| = 1 the two φ-factors
//! each contribute modulus 1; on |z| = q they contribute √q·√q against
//! the 1/|z| = 1/q, so |ψ_γ| = 1 on both circles, and the two zeros sit
//! at √q and √q γ (a double zero at √q when γ = 1).

use crate::contour;
use crate::kernel::{AnnulusParams, KernelError, SeriesControl};
use crate::laurent::LaurentCoeffs;
use crate::linalg::{C64, CMat};
use crate::tolerances;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TestFnError {
    #[error("gamma must be unimodular within 1e-12, got |gamma| = {0}")]
    BadGamma(f64),
    #[error("normalization failed: |phi(1) phi(conj gamma)| = {0:.3e}")]
    Normalization(f64),
    #[error("point {0} lies outside the closed annulus")]
    OutsideDomain(C64),
    #[error("boundary modulus residual {0:.3e} exceeds the allowed {1:.1e}")]
    BoundaryModulus(f64, f64),
    #[error("coefficient window must have N >= {min}, got {got}")]
    WindowTooSmall { min: usize, got: usize },
    #[error("decay fit needs at least {min} usable magnitudes, found {got}")]
    FitDegenerate { min: usize, got: usize },
    #[error("zero refinement did not converge from seed {0}")]
    ZeroRefinement(C64),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// θ(w) = Π_{n≥0}(1 − Q^n w) Π_{n≥1}(1 − Q^n/w) and its derivative,
/// accumulated factor by factor so the derivative stays finite at the
/// zeros w ∈ Q^ℤ.
fn theta_q_with_deriv(w: C64, big_q: f64) -> (C64, C64) {
    let mut p = C64::new(1.0, 0.0) - w;
    let mut dp = C64::new(-1.0, 0.0);
    let winv = C64::new(1.0, 0.0) / w;
    let winv2 = winv * winv;
    let scale = w.norm().max(winv.norm()).max(1.0);
    let mut qn = big_q;
    loop {
        let a = C64::new(1.0, 0.0) - w * qn;
        let b = C64::new(1.0, 0.0) - winv * qn;
        let f = a * b;
        let df = -b * qn + a * winv2 * qn;
        dp = dp * f + p * df;
        p *= f;
        qn *= big_q;
        if qn * (1.0 + scale) < 1e-17 {
            break;
        }
    }
    (p, dp)
}

/// The single-zero building block φ.  Stateless apart from the annulus
/// constants; construction verifies the boundary moduli by sampling.
#[derive(Debug, Clone)]
pub struct AtomFunction {
    params: AnnulusParams,
}

impl AtomFunction {
    /// Build φ and check |φ| = 1 on |z| = 1 and |φ| = √q on |z| = q over
    /// a dense sample; a residual above the boundary tolerance is a
    /// construction failure.
    pub fn build(params: &AnnulusParams) -> Result<Self, TestFnError> {
        let atom = AtomFunction {
            params: params.clone(),
        };
        let mut worst = 0.0f64;
        let samples = 512;
        for l in 0..samples {
            let th = 2.0 * PI * (l as f64) / (samples as f64);
            let outer = atom.eval(C64::from_polar(1.0, th)).norm();
            worst = worst.max((outer - 1.0).abs());
            let inner = atom.eval(C64::from_polar(params.q(), th)).norm();
            worst = worst.max((inner - params.sqrt_q()).abs());
        }
        if worst > tolerances::BOUNDARY_MODULUS_TOL {
            return Err(TestFnError::BoundaryModulus(
                worst,
                tolerances::BOUNDARY_MODULUS_TOL,
            ));
        }
        Ok(atom)
    }

    pub fn params(&self) -> &AnnulusParams {
        &self.params
    }

    /// φ(z); analytic for q^{3/2} < |z| < q^{−1/2}, no domain guard since
    /// callers legitimately evaluate slightly past the boundary circles.
    pub fn eval(&self, z: C64) -> C64 {
        let sq = self.params.sqrt_q();
        let big_q = self.params.q() * self.params.q();
        let (num, _) = theta_q_with_deriv(z / sq, big_q);
        let (den, _) = theta_q_with_deriv(z * sq, big_q);
        num * sq / den
    }

    /// φ and φ′ together (quotient rule over the two theta factors).
    pub fn eval_with_deriv(&self, z: C64) -> (C64, C64) {
        let sq = self.params.sqrt_q();
        let big_q = self.params.q() * self.params.q();
        let (num, dnum) = theta_q_with_deriv(z / sq, big_q);
        let (den, dden) = theta_q_with_deriv(z * sq, big_q);
        let phi = num * sq / den;
        // d/dz [√q θ(z/√q)/θ(√q z)] with the chain factors 1/√q and √q
        let dphi = (dnum * den / sq - num * dden * sq) * sq / (den * den);
        (phi, dphi)
    }
}

/// Outcome of locating the two zeros of a test function.
#[derive(Debug, Clone)]
pub struct ZeroPair {
    pub zeros: [C64; 2],
    /// True when the two zeros coincide (γ = 1 up to the detection
    /// threshold) and the multiplicity was confirmed through ψ″ instead
    /// of a second Newton run.
    pub double: bool,
    pub second_derivative: Option<C64>,
}

/// ψ_γ with its normalization constant δ.
#[derive(Debug, Clone)]
pub struct TestFunction {
    gamma: C64,
    delta: C64,
    atom: AtomFunction,
}

impl TestFunction {
    pub fn new(gamma: C64, params: &AnnulusParams) -> Result<Self, TestFnError> {
        let dev = (gamma.norm() - 1.0).abs();
        if dev > 1e-12 {
            return Err(TestFnError::BadGamma(gamma.norm()));
        }
        let atom = AtomFunction::build(params)?;
        Self::with_atom(gamma, atom)
    }

    /// Reuse an already built φ (the construction check is not repeated).
    pub fn with_atom(gamma: C64, atom: AtomFunction) -> Result<Self, TestFnError> {
        let dev = (gamma.norm() - 1.0).abs();
        if dev > 1e-12 {
            return Err(TestFnError::BadGamma(gamma.norm()));
        }
        let one = C64::new(1.0, 0.0);
        let denom = atom.eval(one) * atom.eval(gamma.conj());
        if denom.norm() < 1e-12 {
            return Err(TestFnError::Normalization(denom.norm()));
        }
        Ok(TestFunction {
            gamma,
            delta: one / denom,
            atom,
        })
    }

    pub fn gamma(&self) -> C64 {
        self.gamma
    }

    pub fn delta(&self) -> C64 {
        self.delta
    }

    pub fn params(&self) -> &AnnulusParams {
        self.atom.params()
    }

    /// ψ(z) with a closed-annulus domain guard.
    pub fn eval(&self, z: C64) -> Result<C64, TestFnError> {
        if !self.params().in_closed_annulus(z, 1e-9) {
            return Err(TestFnError::OutsideDomain(z));
        }
        Ok(self.eval_unchecked(z))
    }

    /// ψ(z) without the domain guard, for callers that knowingly work on
    /// the analytic continuation just past the boundary circles.
    pub fn eval_unchecked(&self, z: C64) -> C64 {
        self.delta * self.atom.eval(z) * self.atom.eval(self.gamma.conj() * z) / z
    }

    /// ψ and ψ′ by the product rule over δ · φ(z) · φ(γ̄z) · z^{−1}.
    pub fn eval_with_deriv(&self, z: C64) -> (C64, C64) {
        let gc = self.gamma.conj();
        let (a, da) = self.atom.eval_with_deriv(z);
        let (b, db) = self.atom.eval_with_deriv(gc * z);
        let psi = self.delta * a * b / z;
        let dpsi = self.delta * (da * b / z + a * db * gc / z - a * b / (z * z));
        (psi, dpsi)
    }

    /// Newton refinement of the two zeros from the seeds √q and √q γ.
    /// A double zero (γ near 1) is detected by |ψ′(√q)| below 1e−6 and
    /// certified through the second derivative instead of a second
    /// Newton run.
    pub fn zeros(&self) -> Result<ZeroPair, TestFnError> {
        let sq = self.params().sqrt_q();
        let seed1 = C64::new(sq, 0.0);
        let z1 = self.refine_zero(seed1)?;
        let (_, dpsi) = self.eval_with_deriv(z1);
        if dpsi.norm() < 1e-6 {
            let d2 = contour::derivative_at(|z| self.eval_unchecked(z), z1, 2, 0.08, 48);
            return Ok(ZeroPair {
                zeros: [z1, z1],
                double: true,
                second_derivative: Some(d2),
            });
        }
        let z2 = self.refine_zero(seed1 * self.gamma)?;
        Ok(ZeroPair {
            zeros: [z1, z2],
            double: false,
            second_derivative: None,
        })
    }

    fn refine_zero(&self, seed: C64) -> Result<C64, TestFnError> {
        let mut z = seed;
        for _ in 0..60 {
            let (v, d) = self.eval_with_deriv(z);
            if v.norm() < 1e-15 {
                return Ok(z);
            }
            if d.norm() < 1e-9 {
                // flat spot: treat the seed as converged if the value is
                // already tiny, otherwise report failure
                if v.norm() < tolerances::ZERO_TOL {
                    return Ok(z);
                }
                return Err(TestFnError::ZeroRefinement(seed));
            }
            let step = v / d;
            z -= step;
            if step.norm() < 1e-14 * (1.0 + z.norm()) {
                return Ok(z);
            }
        }
        Err(TestFnError::ZeroRefinement(seed))
    }

    /// Basis coefficients ⟨ψ, ζ_j⟩ for |j| ≤ n, rescaled from the plain
    /// Laurent coefficients.  Nonnegative indices are extracted on
    /// |z| = 1 and negative indices on |z| = q: on those circles the
    /// radius power in the quadrature cancels the basis weight exactly,
    /// keeping the noise floor of every rescaled coefficient near machine
    /// precision.  (A single mid-annulus extraction circle would amplify
    /// roundoff on deep negative indices by √(1 + q^{−2m}).)
    pub fn laurent_coeffs(&self, n: usize) -> Result<LaurentCoeffs, TestFnError> {
        if n < 8 {
            return Err(TestFnError::WindowTooSmall { min: 8, got: n });
        }
        let nodes = 8 * n + 4; // 4x oversampling of the 2n+1 bandwidth
        let nonneg = contour::laurent_coeffs_on_circle(
            |z| self.eval_unchecked(z),
            1.0,
            0,
            n as i64,
            nodes,
        );
        let neg = contour::laurent_coeffs_on_circle(
            |z| self.eval_unchecked(z),
            self.params().q(),
            -(n as i64),
            -1,
            nodes,
        );
        let mut plain = neg;
        plain.extend_from_slice(&nonneg);
        Ok(LaurentCoeffs::from_monomial(n, &plain, self.params().q()))
    }

    /// Argument-principle count of zeros inside the annulus:
    /// (1/2πi) ∮_{∂A} ψ′/ψ, outer circle minus inner circle.
    pub fn zero_count(&self) -> C64 {
        let m = 4096;
        let mut total = C64::new(0.0, 0.0);
        for (radius, orientation) in [(1.0, 1.0), (self.params().q(), -1.0)] {
            let mut acc = C64::new(0.0, 0.0);
            for l in 0..m {
                let th = 2.0 * PI * (l as f64) / (m as f64);
                let z = C64::from_polar(radius, th);
                let (v, d) = self.eval_with_deriv(z);
                acc += d / v * z;
            }
            total += acc * orientation / m as f64;
        }
        total
    }

    /// Deflated kernel matrix [ k(z_i, z_j) (1 − ψ(z_i) ψ(z_j)*) ]; PSD
    /// of rank two on distinct interior points.
    pub fn deflated_kernel(&self, points: &[C64]) -> Result<CMat, TestFnError> {
        let p = self.params();
        let ctl = SeriesControl::default();
        let psis: Vec<C64> = points
            .iter()
            .map(|&z| self.eval(z))
            .collect::<Result<_, _>>()?;
        let n = points.len();
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let k = p.kernel_series(points[i], points[j], 1.0, &ctl)?.value;
                let v = k * (C64::new(1.0, 0.0) - psis[i] * psis[j].conj());
                m[(i, j)] = v;
                if i == j {
                    m[(i, j)] = C64::new(v.re, 0.0);
                } else {
                    m[(j, i)] = v.conj();
                }
            }
        }
        Ok(m)
    }
}

/// N equispaced unimodular parameters e^{2πim/N}, the standard atom
/// sample of the test-function circle.
pub fn equispaced_gammas(n: usize) -> Vec<C64> {
    (0..n)
        .map(|m| C64::from_polar(1.0, 2.0 * PI * (m as f64) / (n as f64)))
        .collect()
}

/// Shared coefficient machinery for evaluating many ψ_γ at once.
///
/// The Laurent coefficients of φ are extracted a single time; for each γ
/// the coefficients of ψ_γ(z) = δ φ(z) φ(γ̄z)/z then follow from a
/// discrete convolution (the second factor just twists φ̂_k by γ̄^k, the
/// 1/z shifts indices by one).  This matches the direct quadrature of
/// [`TestFunction::laurent_coeffs`] to machine precision and is far
/// cheaper when sweeping hundreds of parameters.
pub struct TestFunctionFamily {
    atom: AtomFunction,
    /// plain monomial coefficients of φ, index k − window ↦ φ̂_k
    phi_hat: Vec<C64>,
    window: usize,
    out_window: usize,
}

impl TestFunctionFamily {
    /// `out_window` is the coefficient window |j| ≤ N of the produced
    /// ψ-coefficients; φ itself is resolved on a slightly wider window.
    pub fn new(params: &AnnulusParams, out_window: usize) -> Result<Self, TestFnError> {
        if out_window < 8 {
            return Err(TestFnError::WindowTooSmall {
                min: 8,
                got: out_window,
            });
        }
        let atom = AtomFunction::build(params)?;
        let window = out_window + 24;
        let nodes = 8 * window + 4;
        let mut phi_hat = contour::laurent_coeffs_on_circle(
            |z| atom.eval(z),
            params.q(),
            -(window as i64),
            -1,
            nodes,
        );
        let nonneg =
            contour::laurent_coeffs_on_circle(|z| atom.eval(z), 1.0, 0, window as i64, nodes);
        phi_hat.extend_from_slice(&nonneg);
        Ok(TestFunctionFamily {
            atom,
            phi_hat,
            window,
            out_window,
        })
    }

    pub fn atom(&self) -> &AtomFunction {
        &self.atom
    }

    pub fn make(&self, gamma: C64) -> Result<TestFunction, TestFnError> {
        TestFunction::with_atom(gamma, self.atom.clone())
    }

    /// Basis coefficients of ψ_γ on |j| ≤ out_window.
    pub fn coeffs_for(&self, gamma: C64) -> Result<LaurentCoeffs, TestFnError> {
        let dev = (gamma.norm() - 1.0).abs();
        if dev > 1e-12 {
            return Err(TestFnError::BadGamma(gamma.norm()));
        }
        let gc = gamma.conj();
        let one = C64::new(1.0, 0.0);
        let denom = self.atom.eval(one) * self.atom.eval(gc);
        if denom.norm() < 1e-12 {
            return Err(TestFnError::Normalization(denom.norm()));
        }
        let delta = one / denom;
        let w = self.window as i64;
        let n = self.out_window as i64;
        // twisted copy: coefficients of φ(γ̄ z) are φ̂_k γ̄^k
        let twisted: Vec<C64> = (-w..=w)
            .map(|k| self.phi_hat[(k + w) as usize] * gc.powi(k as i32))
            .collect();
        let mut plain = vec![C64::new(0.0, 0.0); (2 * n + 1) as usize];
        for j in -n..=n {
            // ψ̂_j = δ Σ_k φ̂_k (φ(γ̄·)-hat)_{j+1−k}
            let mut acc = C64::new(0.0, 0.0);
            let lo = (-w).max(j + 1 - w);
            let hi = w.min(j + 1 + w);
            for k in lo..=hi {
                acc += self.phi_hat[(k + w) as usize] * twisted[(j + 1 - k + w) as usize];
            }
            plain[(j + n) as usize] = acc * delta;
        }
        Ok(LaurentCoeffs::from_monomial(
            self.out_window,
            &plain,
            self.atom.params().q(),
        ))
    }
}

/// Least-squares decay fit |⟨ψ, ζ_j⟩| ≈ C·ρ^{|j|}: regress log magnitude
/// on |j| over coefficients above the noise floor 1e−13.  Returns (C, ρ).
pub fn decay_estimate(coeffs: &LaurentCoeffs) -> Result<(f64, f64), TestFnError> {
    if coeffs.values.len() < 16 {
        return Err(TestFnError::WindowTooSmall {
            min: 16,
            got: coeffs.values.len(),
        });
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for j in coeffs.min_index()..=coeffs.max_index() {
        let mag = coeffs.zeta_coeff(j).norm();
        if mag > 1e-13 {
            xs.push(j.unsigned_abs() as f64);
            ys.push(mag.ln());
        }
    }
    if xs.len() < 8 {
        return Err(TestFnError::FitDegenerate {
            min: 8,
            got: xs.len(),
        });
    }
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return Err(TestFnError::FitDegenerate { min: 8, got: 1 });
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    Ok((intercept.exp(), slope.exp()))
}
