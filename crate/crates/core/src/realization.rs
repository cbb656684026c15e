//! Unitary colligations and transfer functions over the annulus.
//!
//! A feasible atomic decomposition balances two vector families in the
//! padded μ-model space ⊕ defect space: the columns of [𝒲Φ*Y; R] and of
//! [𝒲Φ*ι; RX*] have equal Gram matrices.  The partial isometry matching
//! them extends to a unitary U = [[A,B],[C,D]], whose transfer function
//!
//!     W(z) = D + C (I − ρ(E(z)) A)^{-1} ρ(E(z)) B,
//!
//! with ρ(E(z)) the block-diagonal action of the test functions, is a
//! Schur-class function solving the original interpolation problem.  The
//! reverse direction recovers an atomic decomposition from any unitary
//! colligation through the compressed kernels H_r(z) = C(I − rρ(E(z))A)^{-1}
//! and the block spectral projections, with the balance identity restored
//! in the limit r ↑ 1.

use crate::contour;
use crate::decomposition::{
    build_model_operators, riemann_sum, AtomicDecomposition, DecompositionError, MeasureKind,
};
use crate::hereditary::{self, HereditaryError, LiftingData, PowerTable};
use crate::kernel::{AnnulusParams, SeriesControl};
use crate::laurent;
use crate::linalg::{self, C64, CMat};
use crate::testfn::{AtomFunction, TestFnError, TestFunction};
use crate::tolerances;
use rand::Rng;
use std::collections::BTreeMap;
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RealizationError {
    #[error("decomposition does not balance: lurking residual {0:.3e}")]
    Lurking(f64),
    #[error("complement dimensions differ ({left} vs {right}); retry with pad_dim {suggest}")]
    PadMismatch {
        left: usize,
        right: usize,
        suggest: usize,
    },
    #[error("assembled block matrix is not unitary: defect {0:.3e}")]
    NotUnitary(f64),
    #[error("point {0} is outside the annulus")]
    OutsideDomain(C64),
    #[error("transfer value exceeds the Schur bound: norm {0}")]
    NormBound(f64),
    #[error("resolvent is singular at {0}")]
    Singular(C64),
    #[error("Laurent tail at index {index} is {size:.3e}, exceeding the cutoff budget")]
    TruncationTail { index: i64, size: f64 },
    #[error("block structure is inconsistent with the matrix sizes")]
    BadStructure,
    #[error(transparent)]
    Hereditary(#[from] HereditaryError),
    #[error(transparent)]
    TestFn(#[from] TestFnError),
    #[error(transparent)]
    Decomposition(#[from] DecompositionError),
}

/// Unitary system matrix together with the diagonal test-function action
/// on its state space.
pub struct Colligation {
    pub a: CMat,
    pub b: CMat,
    pub c: CMat,
    pub d: CMat,
    /// (γ_m, multiplicity): block m of the state space is multiplied by
    /// ψ_{γ_m}(z).  Multiplicities include the ℓ² padding.
    pub e_block_structure: Vec<(C64, usize)>,
    pub pad_dim: usize,
    params: AnnulusParams,
    blocks_tf: Vec<TestFunction>,
}

impl Colligation {
    /// Validate and wrap raw blocks.  A is the state-to-state block, D
    /// maps the coefficient side to itself.
    pub fn from_blocks(
        params: &AnnulusParams,
        a: CMat,
        b: CMat,
        c: CMat,
        d: CMat,
        e_block_structure: Vec<(C64, usize)>,
        pad_dim: usize,
    ) -> Result<Self, RealizationError> {
        let state = a.nrows();
        let coeff = d.nrows();
        if a.ncols() != state
            || d.ncols() != coeff
            || b.nrows() != state
            || b.ncols() != coeff
            || c.nrows() != coeff
            || c.ncols() != state
        {
            return Err(RealizationError::BadStructure);
        }
        if e_block_structure.iter().map(|&(_, m)| m).sum::<usize>() != state {
            return Err(RealizationError::BadStructure);
        }
        let total = state + coeff;
        let mut u = CMat::zeros(total, total);
        u.view_mut((0, 0), (state, state)).copy_from(&a);
        u.view_mut((0, state), (state, coeff)).copy_from(&b);
        u.view_mut((state, 0), (coeff, state)).copy_from(&c);
        u.view_mut((state, state), (coeff, coeff)).copy_from(&d);
        let left = (u.adjoint() * &u - CMat::identity(total, total)).norm();
        let right = (&u * u.adjoint() - CMat::identity(total, total)).norm();
        let defect = left.max(right);
        if defect > 1e-10 {
            return Err(RealizationError::NotUnitary(defect));
        }
        let atom = AtomFunction::build(params)?;
        let blocks_tf = e_block_structure
            .iter()
            .map(|&(g, _)| TestFunction::with_atom(g, atom.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Colligation {
            a,
            b,
            c,
            d,
            e_block_structure,
            pad_dim,
            params: params.clone(),
            blocks_tf,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn coeff_dim(&self) -> usize {
        self.d.nrows()
    }

    pub fn params(&self) -> &AnnulusParams {
        &self.params
    }

    /// The diagonal action ρ(E(z)): block m is scaled by ψ_{γ_m}(z).
    /// Defined on the closed annulus.
    pub fn rho_of_e(&self, z: C64) -> Result<CMat, RealizationError> {
        if !self.params.in_closed_annulus(z, 1e-9) {
            return Err(RealizationError::OutsideDomain(z));
        }
        let n = self.state_dim();
        let mut rho = CMat::zeros(n, n);
        let mut offset = 0usize;
        for ((_, mult), tf) in self.e_block_structure.iter().zip(&self.blocks_tf) {
            let val = tf.eval(z)?;
            for i in 0..*mult {
                rho[(offset + i, offset + i)] = val;
            }
            offset += mult;
        }
        Ok(rho)
    }

    /// W(z) = D + C (I − ρ(E(z)) A)^{-1} ρ(E(z)) B for interior z, with
    /// the Schur bound enforced on the way out.
    pub fn transfer_eval(&self, z: C64) -> Result<CMat, RealizationError> {
        if !self.params.in_open_annulus(z) {
            return Err(RealizationError::OutsideDomain(z));
        }
        let w = self.transfer_eval_scaled(z, 1.0)?;
        let norm = linalg::op_norm(&w);
        if norm > 1.0 + tolerances::CONTRACTION_SLACK {
            return Err(RealizationError::NormBound(norm));
        }
        Ok(w)
    }

    /// The damped value W_r(z) with ρ(E(z)) replaced by r·ρ(E(z)); the
    /// r = 1 case is the transfer function itself.
    pub fn transfer_eval_scaled(&self, z: C64, r: f64) -> Result<CMat, RealizationError> {
        let rho = self.rho_of_e(z)? * C64::new(r, 0.0);
        let n = self.state_dim();
        let resolvent = (CMat::identity(n, n) - &rho * &self.a)
            .lu()
            .try_inverse()
            .ok_or(RealizationError::Singular(z))?;
        Ok(&self.d + &self.c * resolvent * rho * &self.b)
    }

    /// H_r(z) = C (I − r ρ(E(z)) A)^{-1}, analytic on the closed annulus
    /// for r < 1.
    pub fn h_r_eval(&self, z: C64, r: f64) -> Result<CMat, RealizationError> {
        let rho = self.rho_of_e(z)? * C64::new(r, 0.0);
        let n = self.state_dim();
        let resolvent = (CMat::identity(n, n) - rho * &self.a)
            .lu()
            .try_inverse()
            .ok_or(RealizationError::Singular(z))?;
        Ok(&self.c * resolvent)
    }
}

/// Caching evaluator around a colligation.
pub struct TransferFunction<'a> {
    col: &'a Colligation,
    cache: Mutex<BTreeMap<(u64, u64), CMat>>,
}

impl<'a> TransferFunction<'a> {
    pub fn new(col: &'a Colligation) -> Self {
        TransferFunction {
            col,
            cache: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn eval(&self, z: C64) -> Result<CMat, RealizationError> {
        let key = (z.re.to_bits(), z.im.to_bits());
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let val = self.col.transfer_eval(z)?;
        self.cache.lock().unwrap().insert(key, val.clone());
        Ok(val)
    }
}

/// Embed a μ-model matrix into the padded state space: block m of size
/// r_m lands in the first copy of its enlarged r_m·p block.
fn embed_padded(mat: &CMat, block_dims: &[usize], pad: usize) -> CMat {
    let padded: usize = block_dims.iter().map(|r| r * pad).sum();
    let mut out = CMat::zeros(padded, mat.ncols());
    let mut src = 0usize;
    let mut dst = 0usize;
    for &r in block_dims {
        out.rows_mut(dst, r).copy_from(&mat.rows(src, r));
        src += r;
        dst += r * pad;
    }
    out
}

/// Build the unitary colligation realizing a feasible decomposition for
/// the commuting pair (T, X) with defect factor R of (1/k)(T,T*)[I−XX*].
pub fn build_colligation(
    params: &AnnulusParams,
    t: &CMat,
    x: &CMat,
    r_defect: &CMat,
    dec: &AtomicDecomposition,
    pad_dim: usize,
    trunc: usize,
) -> Result<Colligation, RealizationError> {
    let pad = pad_dim.max(1);
    let (model, ops) = build_model_operators(params, t, dec, trunc)?;
    let phi_y = &ops.phi_star * &ops.y;
    let phi_iota = &ops.phi_star * &ops.iota;
    let state = model.block_dims.iter().map(|r| r * pad).sum::<usize>();
    let coeff = r_defect.nrows();
    let n = t.nrows();
    let total = state + coeff;
    let mut sk = CMat::zeros(total, n);
    sk.rows_mut(0, state)
        .copy_from(&embed_padded(&phi_y, &model.block_dims, pad));
    sk.rows_mut(state, coeff).copy_from(r_defect);
    let mut sks = CMat::zeros(total, n);
    sks.rows_mut(0, state)
        .copy_from(&embed_padded(&phi_iota, &model.block_dims, pad));
    sks.rows_mut(state, coeff).copy_from(&(r_defect * x.adjoint()));
    let gram_gap = (sk.adjoint() * &sk - sks.adjoint() * &sks).norm()
        / (sk.adjoint() * &sk).norm().max(1.0);
    if gram_gap > 1e-6 {
        return Err(RealizationError::Lurking(gram_gap));
    }
    // partial isometry between the two column spans, from the shared
    // right singular structure
    let svd = sk.clone().svd(true, true);
    let u_full = svd.u.as_ref().expect("left vectors requested");
    let vt = svd.v_t.as_ref().expect("right vectors requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let kept: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tolerances::RANK_CUTOFF * sigma_max.max(1e-300))
        .collect();
    let rank = kept.len();
    let mut basis_k = CMat::zeros(total, rank);
    let mut basis_ks = CMat::zeros(total, rank);
    for (out_col, &i) in kept.iter().enumerate() {
        basis_k.set_column(out_col, &u_full.column(i));
        let v_i = vt.row(i).adjoint();
        basis_ks.set_column(
            out_col,
            &(&sks * v_i / C64::new(svd.singular_values[i], 0.0)),
        );
    }
    // the lurking identity makes basis_ks orthonormal up to the solve
    // tolerance; a polar polish removes that slack before completion
    let basis_ks = linalg::polar_orthonormalize(&basis_ks);
    let comp_k = linalg::orthonormal_complement(&basis_k);
    let comp_ks = linalg::orthonormal_complement(&basis_ks);
    if comp_k.ncols() != comp_ks.ncols() {
        return Err(RealizationError::PadMismatch {
            left: comp_k.ncols(),
            right: comp_ks.ncols(),
            suggest: pad + 1,
        });
    }
    let mut left = CMat::zeros(total, total);
    left.view_mut((0, 0), (total, rank)).copy_from(&basis_ks);
    left.view_mut((0, rank), (total, total - rank))
        .copy_from(&comp_ks);
    let mut right = CMat::zeros(total, total);
    right.view_mut((0, 0), (total, rank)).copy_from(&basis_k);
    right
        .view_mut((0, rank), (total, total - rank))
        .copy_from(&comp_k);
    // U* carries (𝒲Φ*Y m ⊕ Rm) to (𝒲Φ*ι m ⊕ RX*m)
    let u_star = &left * right.adjoint();
    let u = u_star.adjoint();
    let a = u.view((0, 0), (state, state)).clone_owned();
    let b = u.view((0, state), (state, coeff)).clone_owned();
    let c = u.view((state, 0), (coeff, state)).clone_owned();
    let d = u.view((state, state), (coeff, coeff)).clone_owned();
    let structure: Vec<(C64, usize)> = dec
        .gammas
        .iter()
        .zip(&model.block_dims)
        .map(|(&g, &r)| (g, r * pad))
        .collect();
    Colligation::from_blocks(params, a, b, c, d, structure, pad)
}

/// Random unitary colligation over the given parameters with one state
/// block per γ of the stated multiplicity.
pub fn random_colligation<R: Rng>(
    params: &AnnulusParams,
    gammas: &[C64],
    multiplicity: usize,
    coeff_dim: usize,
    rng: &mut R,
) -> Result<Colligation, RealizationError> {
    let state = gammas.len() * multiplicity;
    let u = linalg::random_unitary(state + coeff_dim, rng);
    let a = u.view((0, 0), (state, state)).clone_owned();
    let b = u.view((0, state), (state, coeff_dim)).clone_owned();
    let c = u.view((state, 0), (coeff_dim, state)).clone_owned();
    let d = u
        .view((state, state), (coeff_dim, coeff_dim))
        .clone_owned();
    let structure = gammas.iter().map(|&g| (g, multiplicity)).collect();
    Colligation::from_blocks(params, a, b, c, d, structure, 1)
}

/// Matrix Laurent coefficients of an annulus-analytic matrix function,
/// split across two circles so neither side of the index range amplifies
/// quadrature noise: nonnegative powers from the outer circle, negative
/// powers from the inner one.  Returns coefficients for −window..=window.
fn two_circle_matrix_coeffs<F>(
    f: F,
    window: usize,
    r_outer: f64,
    r_inner: f64,
    min_nodes: usize,
) -> Result<Vec<CMat>, RealizationError>
where
    F: Fn(C64) -> Result<CMat, RealizationError>,
{
    let nodes = (4 * (2 * window + 1)).max(min_nodes);
    let sample = |radius: f64| -> Result<Vec<CMat>, RealizationError> {
        contour::circle_nodes(radius, nodes)
            .into_iter()
            .map(&f)
            .collect()
    };
    let quadrature = |zs: &[C64], samples: &[CMat], n: i64| -> CMat {
        let mut acc = CMat::zeros(samples[0].nrows(), samples[0].ncols());
        for (l, &z) in zs.iter().enumerate() {
            acc += &samples[l] * z.powi(-(n as i32));
        }
        acc * C64::new(1.0 / nodes as f64, 0.0)
    };
    let outer_zs = contour::circle_nodes(r_outer, nodes);
    let outer = sample(r_outer)?;
    let inner_zs = contour::circle_nodes(r_inner, nodes);
    let inner = sample(r_inner)?;
    let mut coeffs = Vec::with_capacity(2 * window + 1);
    for n in -(window as i64)..=(window as i64) {
        if n < 0 {
            coeffs.push(quadrature(&inner_zs, &inner, n));
        } else {
            coeffs.push(quadrature(&outer_zs, &outer, n));
        }
    }
    Ok(coeffs)
}

/// ‖X V* − V* M_W‖ for the truncated lifting V and the multiplication
/// matrix of the colligation's transfer function.  Small residual means
/// the realized function implements X through the commutant of the shift.
pub fn commutant_residual(
    col: &Colligation,
    x: &CMat,
    lifting: &LiftingData,
) -> Result<f64, RealizationError> {
    let q = col.params.q();
    let trunc = lifting.trunc;
    let window = 2 * trunc;
    // evaluation circles stay strictly inside the annulus
    let r_outer = 0.98;
    let r_inner = q / 0.98;
    let coeffs = two_circle_matrix_coeffs(|z| col.transfer_eval(z), window, r_outer, r_inner, 0)?;
    let mid = q.sqrt();
    for &side in &[0usize, 2 * window] {
        let j = side as i64 - window as i64;
        let size = coeffs[side].norm() * mid.powi(j as i32);
        if size > 1e-8 {
            return Err(RealizationError::TruncationTail { index: j, size });
        }
    }
    let md = col.coeff_dim();
    let dim = (2 * trunc + 1) * md;
    let mut m_w = CMat::zeros(dim, dim);
    for bn in 0..(2 * trunc + 1) {
        let n_idx = bn as i64 - trunc as i64;
        for bm in 0..(2 * trunc + 1) {
            let m_idx = bm as i64 - trunc as i64;
            let j = n_idx - m_idx;
            let ratio = laurent::zeta_weight(n_idx, q, 1.0) * laurent::inv_zeta_weight(m_idx, q, 1.0);
            let block = &coeffs[(j + window as i64) as usize] * C64::new(ratio, 0.0);
            m_w.view_mut((bn * md, bm * md), (md, md)).copy_from(&block);
        }
    }
    let v = &lifting.v;
    let residual = (x * v.adjoint() - v.adjoint() * m_w).norm();
    Ok(residual)
}

/// The transfer function applied to the operator behind `table` through
/// its Laurent expansion: Σ_j Ŵ_j T^j, with ρ damped by `r` as in
/// [`Colligation::transfer_eval_scaled`].  Scalar coefficient blocks
/// only.
pub fn transfer_of_operator(
    col: &Colligation,
    table: &mut PowerTable,
    window: usize,
    r: f64,
) -> Result<CMat, RealizationError> {
    if col.coeff_dim() != 1 {
        return Err(RealizationError::BadStructure);
    }
    let q = col.params.q();
    let coeffs = two_circle_matrix_coeffs(
        |z| col.transfer_eval_scaled(z, r),
        window,
        0.98,
        q / 0.98,
        0,
    )?;
    let dim = table.power(0).nrows();
    let mut x = CMat::zeros(dim, dim);
    for (i, c) in coeffs.iter().enumerate() {
        let j = i as i64 - window as i64;
        x += table.power(j) * c[(0, 0)];
    }
    Ok(x)
}

/// Matrix of the adjoint compression ℍ_r* on the truncated basis: the
/// horizontal concatenation of the blocks Ĥ_j* over j = −N..N, where
/// H_r(z) = Σ_j Ĥ_j ζ_j(z).
pub fn h_r_matrix(col: &Colligation, r: f64, trunc: usize) -> Result<CMat, RealizationError> {
    let q = col.params.q();
    // H_r is analytic across the closed annulus, so the extraction can
    // sit directly on the two boundary circles.  On those circles the
    // test functions are unimodular and the resolvent develops peaks of
    // width ~(1-r), so the node count must track the damping.
    let min_nodes = if r >= 1.0 { 0 } else { (16.0 / (1.0 - r)).ceil() as usize };
    let coeffs = two_circle_matrix_coeffs(|z| col.h_r_eval(z, r), trunc, 1.0, q, min_nodes)?;
    let state = col.state_dim();
    let md = col.coeff_dim();
    let mut out = CMat::zeros(state, (2 * trunc + 1) * md);
    for (i, mono) in coeffs.iter().enumerate() {
        let j = i as i64 - trunc as i64;
        let zeta_block = mono.adjoint() * C64::new(laurent::zeta_weight(j, q, 1.0), 0.0);
        out.view_mut((0, i * md), (state, md)).copy_from(&zeta_block);
    }
    Ok(out)
}

/// Smallest κ on a grid with H_r(z_i) H_r(z_j)* ⪯ κ·k(z_i, z_j), via a
/// generalized eigenvalue sweep, then verified PSD within slack.
pub fn h_r_kappa(col: &Colligation, r: f64, grid: &[C64]) -> Result<f64, RealizationError> {
    let n = grid.len();
    let md = col.coeff_dim();
    let gram = col
        .params
        .gram_matrix(grid, 1.0)
        .map_err(|e| RealizationError::TestFn(TestFnError::Kernel(e)))?;
    let values: Vec<CMat> = grid
        .iter()
        .map(|&z| col.h_r_eval(z, r))
        .collect::<Result<_, _>>()?;
    let mut hh = CMat::zeros(n * md, n * md);
    let mut kk = CMat::zeros(n * md, n * md);
    for i in 0..n {
        for j in 0..n {
            let prod = &values[i] * values[j].adjoint();
            hh.view_mut((i * md, j * md), (md, md)).copy_from(&prod);
            let scaled = CMat::identity(md, md) * gram[(i, j)];
            kk.view_mut((i * md, j * md), (md, md)).copy_from(&scaled);
        }
    }
    let (vals, vecs) = linalg::hermitian_eigen(&kk, linalg::EigOrder::Descending);
    let cutoff = vals[0].max(1e-300) * 1e-12;
    // κ = max eig of K^{-1/2} HH* K^{-1/2} on the numerical range of K
    let mut kappa = 0.0f64;
    let dim = n * md;
    let mut half = CMat::zeros(dim, dim);
    for (i, &v) in vals.iter().enumerate() {
        if v > cutoff {
            let col_i = vecs.column(i);
            half += &col_i * col_i.adjoint() * C64::new(1.0 / v.sqrt(), 0.0);
        }
    }
    let compressed = &half * &hh * &half;
    let (cv, _) = linalg::hermitian_eigen(&compressed, linalg::EigOrder::Descending);
    kappa = kappa.max(cv[0]);
    Ok(kappa * (1.0 + 1e-8))
}

/// Atoms extracted from a colligation at damping r: μ_m = Z* 𝔼_m Z with
/// Z = ℍ_r* V and 𝔼_m the state-block projections.
pub fn extract_decomposition(
    col: &Colligation,
    lifting: &LiftingData,
    r: f64,
) -> Result<AtomicDecomposition, RealizationError> {
    let h_star = h_r_matrix(col, r, lifting.trunc)?;
    let z = &h_star * &lifting.v;
    let mut atoms = Vec::with_capacity(col.e_block_structure.len());
    let mut gammas = Vec::with_capacity(col.e_block_structure.len());
    let mut offset = 0usize;
    for &(g, mult) in &col.e_block_structure {
        let rows = z.rows(offset, mult);
        atoms.push(rows.adjoint() * rows);
        gammas.push(g);
        offset += mult;
    }
    Ok(AtomicDecomposition { gammas, atoms })
}

/// Relative residual of the measure balance identity
/// (1/k)(T,T*)[I − XX*] = Σ_m μ_m − Σ_m ψ_m(T) μ_m ψ_m(T)*.
///
/// The point-evaluation pairing behind the extraction produces the
/// measure in this normalization directly: its kernel omits the k(z,w)
/// factor that the multiplication-operator compression would carry.
pub fn balance_residual(
    params: &AnnulusParams,
    t: &CMat,
    x: &CMat,
    dec: &AtomicDecomposition,
    trunc: usize,
) -> Result<f64, RealizationError> {
    let n = t.nrows();
    let mut table = PowerTable::new(t, params.q())?;
    let ctl = SeriesControl::default();
    let arg = CMat::identity(n, n) - x * x.adjoint();
    let b = hereditary::inv_k_hereditary(params, &mut table, &arg, &ctl)?;
    let swept = riemann_sum(params, t, dec, MeasureKind::Mu, trunc)?;
    let balance = dec.total_mass() - swept;
    Ok((b.clone() - balance).norm() / b.norm().max(1.0))
}
