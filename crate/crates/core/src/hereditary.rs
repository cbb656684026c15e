//! Hereditary functional calculus for operators with spectrum in the
//! annulus.
//!
//! For an n×n matrix T with σ(T) ⊂ A the basis elements become
//!
//!     ζ_j(T) = T^j / √(1 + t q^{2j}),
//!
//! and a hereditary symbol h(z, w̄) = Σ c_j z^j w̄^j acts on matrices by
//! G ↦ Σ c_j T^j G T^{*j}.  The two symbols used throughout are the
//! kernel k itself and its reciprocal
//!
//!     (1/k)(T, T*)[G] = C′ Σ_j (−1)^j ζ_j(T) G ζ_j(T)*,
//!
//! which follows from k(z,w)·k(z,−w)·C′ = 1 because hereditary maps
//! compose like their symbols multiply.  Negative powers are carried as
//! (q T^{−1})^m so nothing blows up when σ(T) hugs the inner circle.

use crate::kernel::{AnnulusParams, SeriesControl};
use crate::laurent::{zeta_weight, LaurentCoeffs};
use crate::linalg::{self, C64, CMat, CVec};
use crate::tolerances;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HereditaryError {
    #[error("operator must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("operator is singular and has no negative powers")]
    Singular,
    #[error("eigenvalue {0} lies outside the annulus shell [{1:.4}, {2:.4}]")]
    SpectrumOutside(C64, f64, f64),
    #[error("hereditary series did not settle within {terms} terms (last term {last:.3e})")]
    Truncation { terms: usize, last: f64 },
    #[error("defect factorization failed: {0}")]
    Factorization(String),
    #[error("interpolation data sizes differ: {nodes} nodes vs {targets} targets")]
    SizeMismatch { nodes: usize, targets: usize },
    #[error("node {0} lies outside the open annulus")]
    NodeOutside(C64),
    #[error("Gram matrix condition number {0:.3e} exceeds the supported range")]
    IllConditioned(f64),
    #[error("truncation order {got} exceeds the supported {max}")]
    TruncationTooLarge { got: usize, max: usize },
}

/// Eigenvalues via the Schur form; always available over ℂ.
pub fn eigenvalues(t: &CMat) -> Vec<C64> {
    t.clone()
        .schur()
        .eigenvalues()
        .expect("complex Schur form is triangular")
        .iter()
        .copied()
        .collect()
}

/// Modulus range of the spectrum.
pub fn spectrum_moduli(t: &CMat) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for e in eigenvalues(t) {
        lo = lo.min(e.norm());
        hi = hi.max(e.norm());
    }
    (lo, hi)
}

/// Require σ(T) ⊂ { q + margin ≤ |λ| ≤ 1 − margin }.
pub fn check_spectrum(t: &CMat, params: &AnnulusParams, margin: f64) -> Result<(), HereditaryError> {
    let lo = params.q() + margin;
    let hi = 1.0 - margin;
    for e in eigenvalues(t) {
        let m = e.norm();
        if m < lo || m > hi {
            return Err(HereditaryError::SpectrumOutside(e, lo, hi));
        }
    }
    Ok(())
}

/// Cached powers of an invertible operator: T^j for j ≥ 0 and the
/// rescaled inverse powers (q T^{−1})^m, grown on demand.
pub struct PowerTable {
    q: f64,
    step_pos: CMat,
    step_neg: CMat,
    pos: Vec<CMat>,
    negq: Vec<CMat>,
}

impl PowerTable {
    pub fn new(t: &CMat, q: f64) -> Result<Self, HereditaryError> {
        let n = t.nrows();
        if t.ncols() != n {
            return Err(HereditaryError::NotSquare {
                rows: n,
                cols: t.ncols(),
            });
        }
        let inv = t
            .clone()
            .lu()
            .try_inverse()
            .ok_or(HereditaryError::Singular)?;
        let id = CMat::identity(n, n);
        Ok(PowerTable {
            q,
            step_pos: t.clone(),
            step_neg: inv * C64::new(q, 0.0),
            pos: vec![id.clone()],
            negq: vec![id],
        })
    }

    pub fn dim(&self) -> usize {
        self.step_pos.nrows()
    }

    pub fn operator(&self) -> &CMat {
        &self.step_pos
    }

    fn ensure(&mut self, upto: usize) {
        while self.pos.len() <= upto {
            let next = self.pos.last().unwrap() * &self.step_pos;
            self.pos.push(next);
        }
        while self.negq.len() <= upto {
            let next = self.negq.last().unwrap() * &self.step_neg;
            self.negq.push(next);
        }
    }

    /// ζ_j(T) = T^j/√(1 + t q^{2j}), computed as (qT^{−1})^m/√(q^{2m} + t)
    /// for j = −m so both factors stay bounded.
    pub fn zeta(&mut self, j: i64, t_weight: f64) -> CMat {
        if j >= 0 {
            self.ensure(j as usize);
            &self.pos[j as usize] / C64::new(zeta_weight(j, self.q, t_weight), 0.0)
        } else {
            let m = (-j) as usize;
            self.ensure(m);
            let denom = (self.q.powi(2 * m as i32) + t_weight).sqrt();
            &self.negq[m] / C64::new(denom, 0.0)
        }
    }

    /// Plain power T^j (j of either sign); large negative powers of a
    /// near-inner-circle operator can be huge, callers beware.
    pub fn power(&mut self, j: i64) -> CMat {
        if j >= 0 {
            self.ensure(j as usize);
            self.pos[j as usize].clone()
        } else {
            let m = (-j) as usize;
            self.ensure(m);
            &self.negq[m] / C64::new(self.q.powi(m as i32), 0.0)
        }
    }
}

/// f(T) = Σ_j f̂_j T^j from basis coefficients, combined index by index
/// in the overflow-free grouping (ζ-coefficient times ζ_j(T)).
pub fn function_of_operator(
    table: &mut PowerTable,
    coeffs: &LaurentCoeffs,
    t_weight: f64,
) -> CMat {
    let n = table.dim();
    let mut acc = CMat::zeros(n, n);
    for j in coeffs.min_index()..=coeffs.max_index() {
        let c = coeffs.zeta_coeff(j);
        if c.norm() == 0.0 {
            continue;
        }
        // f̂_j T^j = (ζ-coeff at the t = 1 extraction weight) · ζ_j(T)
        // rescaled between the two weights; both ratios stay O(1)
        let w_ratio = zeta_weight(j, table.q, t_weight) / zeta_weight(j, table.q, 1.0);
        acc += table.zeta(j, t_weight) * (c * C64::new(w_ratio, 0.0));
    }
    acc
}

fn hereditary_sum(
    table: &mut PowerTable,
    g: &CMat,
    t_weight: f64,
    alternating: bool,
    ctl: &SeriesControl,
) -> Result<CMat, HereditaryError> {
    let mut acc = g / C64::new(1.0 + t_weight, 0.0);
    let scale = g.norm().max(1.0);
    let mut prev = f64::INFINITY;
    let mut settled = 0;
    for j in 1..=ctl.max_index {
        let zp = table.zeta(j as i64, t_weight);
        let zn = table.zeta(-(j as i64), t_weight);
        let tp = &zp * g * zp.adjoint();
        let tn = &zn * g * zn.adjoint();
        let sign = if alternating && j % 2 == 1 { -1.0 } else { 1.0 };
        acc += (&tp + &tn) * C64::new(sign, 0.0);
        let pair = tp.norm() + tn.norm();
        let ratio = if prev.is_finite() && prev > 0.0 {
            (pair / prev).min(0.99)
        } else {
            0.99
        };
        let tail = pair * ratio / (1.0 - ratio);
        if tail < ctl.tol * scale {
            settled += 1;
            if settled >= 2 {
                return Ok(acc);
            }
        } else {
            settled = 0;
        }
        prev = pair;
    }
    Err(HereditaryError::Truncation {
        terms: ctl.max_index,
        last: prev,
    })
}

/// k(T,T*)[G] = Σ_j ζ_j(T) G ζ_j(T)*, adaptively truncated with a
/// geometric tail estimate (two consecutive settled pairs required).
pub fn hereditary_k(
    table: &mut PowerTable,
    g: &CMat,
    t_weight: f64,
    ctl: &SeriesControl,
) -> Result<CMat, HereditaryError> {
    hereditary_sum(table, g, t_weight, false, ctl)
}

/// (1/k)(T,T*)[G] = C′ Σ_j (−1)^j ζ_j(T) G ζ_j(T)* at the t = 1 weight,
/// the hereditary counterpart of the reciprocal identity.
pub fn inv_k_hereditary(
    params: &AnnulusParams,
    table: &mut PowerTable,
    g: &CMat,
    ctl: &SeriesControl,
) -> Result<CMat, HereditaryError> {
    let sum = hereditary_sum(table, g, 1.0, true, ctl)?;
    Ok(sum * C64::new(params.c_prime(), 0.0))
}

/// Thin PSD square-root factor R with R*R = b, rows = numerical rank.
pub fn defect_factor(b: &CMat) -> Result<CMat, HereditaryError> {
    linalg::psd_sqrt_factor(b, tolerances::RANK_CUTOFF, tolerances::PSD_SLACK)
        .map_err(HereditaryError::Factorization)
}

/// The lifting V : C^n → ⊕_{|j| ≤ N} C^rank with block rows R ζ_j(T)*,
/// blocks ordered by ascending j.
pub struct LiftingData {
    pub v: CMat,
    pub r: CMat,
    pub trunc: usize,
    pub rank: usize,
}

impl LiftingData {
    pub fn block(&self, j: i64) -> CMat {
        let idx = (j + self.trunc as i64) as usize;
        self.v.rows(idx * self.rank, self.rank).into_owned()
    }
}

/// Assemble the lifting from an operator table and a defect factor R.
/// When R*R = (1/k)(T,T*)[I], V is an isometry up to the truncation tail
/// and intertwines T* with the shifted basis weights.
pub fn build_lifting(
    table: &mut PowerTable,
    r: &CMat,
    trunc: usize,
    t_weight: f64,
) -> LiftingData {
    let rank = r.nrows();
    let n = r.ncols();
    let mut v = CMat::zeros((2 * trunc + 1) * rank, n);
    for (idx, j) in (-(trunc as i64)..=trunc as i64).enumerate() {
        let block = r * table.zeta(j, t_weight).adjoint();
        v.rows_mut(idx * rank, rank).copy_from(&block);
    }
    LiftingData {
        v,
        r: r.clone(),
        trunc,
        rank,
    }
}

/// Matrix of multiplication by f on the basis window |j| ≤ trunc:
/// entry (n, m) = f̂_{n−m} · w_n/w_m with w_j = √(1 + t q^{2j}).
/// Rows and columns are ordered by ascending basis index.
pub fn multiplication_matrix(
    coeffs: &LaurentCoeffs,
    q: f64,
    trunc: usize,
    t_weight: f64,
) -> Result<CMat, HereditaryError> {
    // q^{-2·300} is still representable; far beyond that the weight
    // ratios overflow f64
    if trunc > 300 {
        return Err(HereditaryError::TruncationTooLarge {
            got: trunc,
            max: 300,
        });
    }
    let dim = 2 * trunc + 1;
    let mut m = CMat::zeros(dim, dim);
    for a in 0..dim {
        let n_idx = a as i64 - trunc as i64;
        for b in 0..dim {
            let m_idx = b as i64 - trunc as i64;
            let j = n_idx - m_idx;
            let c = coeffs.monomial_coeff(j, q);
            if c.norm() == 0.0 {
                continue;
            }
            let w = zeta_weight(n_idx, q, t_weight) / zeta_weight(m_idx, q, t_weight);
            m[(a, b)] = c * C64::new(w, 0.0);
        }
    }
    Ok(m)
}

/// Finite interpolation model: T and X act on the span of the kernel
/// vectors at the nodes, written in an orthonormal basis via G^{±1/2}.
pub struct PickModel {
    pub t: CMat,
    pub x: CMat,
    pub gram: CMat,
    pub gram_sqrt: CMat,
    pub gram_inv_sqrt: CMat,
    pub nodes: Vec<C64>,
    pub targets: Vec<C64>,
}

impl PickModel {
    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    /// The (unnormalized) kernel vector at node j in the orthonormal
    /// coordinates: G^{1/2} e_j, of squared norm k(z_j, z_j).
    pub fn kernel_vector(&self, j: usize) -> CVec {
        CVec::from_iterator(self.dim(), self.gram_sqrt.column(j).iter().copied())
    }
}

/// Build the model pair (T, X) for nodes z_j and targets w_j:
/// T* and X* are diagonal in kernel coordinates with entries z̄_j, w̄_j.
pub fn pick_model(
    params: &AnnulusParams,
    nodes: &[C64],
    targets: &[C64],
) -> Result<PickModel, HereditaryError> {
    if nodes.len() != targets.len() || nodes.is_empty() {
        return Err(HereditaryError::SizeMismatch {
            nodes: nodes.len(),
            targets: targets.len(),
        });
    }
    for &z in nodes {
        if !params.in_open_annulus(z) {
            return Err(HereditaryError::NodeOutside(z));
        }
    }
    let gram = params
        .gram_matrix(nodes, 1.0)
        .map_err(|e| HereditaryError::Factorization(e.to_string()))?;
    let (vals, vecs) = linalg::hermitian_eigen(&gram, linalg::EigOrder::Descending);
    let max = vals[0];
    let min = *vals.last().unwrap();
    if min <= 0.0 || max / min > tolerances::GRAM_COND_LIMIT {
        return Err(HereditaryError::IllConditioned(if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }));
    }
    let n = nodes.len();
    let mut sqrt_d = CMat::zeros(n, n);
    let mut inv_sqrt_d = CMat::zeros(n, n);
    for i in 0..n {
        sqrt_d[(i, i)] = C64::new(vals[i].sqrt(), 0.0);
        inv_sqrt_d[(i, i)] = C64::new(1.0 / vals[i].sqrt(), 0.0);
    }
    let gram_sqrt = &vecs * sqrt_d * vecs.adjoint();
    let gram_inv_sqrt = &vecs * inv_sqrt_d * vecs.adjoint();
    let diag = |vals: &[C64]| {
        let mut d = CMat::zeros(n, n);
        for (i, &v) in vals.iter().enumerate() {
            d[(i, i)] = v;
        }
        d
    };
    let t = &gram_inv_sqrt * diag(nodes) * &gram_sqrt;
    let x = &gram_inv_sqrt * diag(targets) * &gram_sqrt;
    Ok(PickModel {
        t,
        x,
        gram,
        gram_sqrt,
        gram_inv_sqrt,
        nodes: nodes.to_vec(),
        targets: targets.to_vec(),
    })
}

/// Random diagonalizable matrix with spectrum in the annulus at the
/// requested margin, conjugated by a mildly non-unitary similarity.
pub fn random_annulus_operator<R: Rng>(
    params: &AnnulusParams,
    n: usize,
    margin: f64,
    rng: &mut R,
) -> CMat {
    let lo = params.q() + margin + 0.02;
    let hi = 1.0 - margin - 0.02;
    let mut d = CMat::zeros(n, n);
    for i in 0..n {
        let r = lo + (hi - lo) * rng.gen::<f64>();
        let th = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
        d[(i, i)] = C64::from_polar(r, th);
    }
    loop {
        let s = CMat::identity(n, n) + linalg::random_complex_matrix(n, n, rng) * C64::new(0.25, 0.0);
        if linalg::cond2(&s) < 25.0 {
            if let Some(s_inv) = s.clone().lu().try_inverse() {
                return s * d * s_inv;
            }
        }
    }
}
