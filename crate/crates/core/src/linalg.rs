//! Small dense-matrix helpers on top of `nalgebra`.
//!
//! Everything here works with dynamically sized complex matrices; the
//! problem sizes in this crate (n ≤ a few dozen, model truncations of a
//! few hundred) never justify anything fancier than LU, SVD and Hermitian
//! eigendecompositions.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Order in which eigenpairs of a Hermitian matrix are returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigOrder {
    Descending,
    Ascending,
}

/// (m + m*)/2; cheap insurance before Hermitian eigendecompositions.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Operator 2-norm (largest singular value); 0 for empty matrices.
pub fn op_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// 2-norm condition number σ_max/σ_min.
pub fn cond2(m: &CMat) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Sorted eigenvalues and eigenvectors of a Hermitian matrix.
/// The input is symmetrized first so callers can pass matrices that are
/// Hermitian only up to roundoff.
pub fn hermitian_eigen(m: &CMat, order: EigOrder) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    let se = hermitian_part(m).symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    match order {
        EigOrder::Descending => {
            idx.sort_by(|&a, &b| se.eigenvalues[b].total_cmp(&se.eigenvalues[a]))
        }
        EigOrder::Ascending => {
            idx.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]))
        }
    }
    let vals: Vec<f64> = idx.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (col, &i) in idx.iter().enumerate() {
        vecs.set_column(col, &se.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Smallest eigenvalue of a (numerically) Hermitian matrix.
pub fn min_eig_hermitian(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    hermitian_part(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Projection of a Hermitian matrix onto the PSD cone: negative
/// eigenvalues are clipped at zero.
pub fn psd_project(m: &CMat) -> CMat {
    let (vals, vecs) = hermitian_eigen(m, EigOrder::Descending);
    let clipped = CVec::from_iterator(vals.len(), vals.iter().map(|&v| C64::new(v.max(0.0), 0.0)));
    let d = CMat::from_diagonal(&clipped);
    let out = &vecs * d * vecs.adjoint();
    hermitian_part(&out)
}

/// Thin PSD square-root factor: F with F*F = m, rows = numerical rank.
/// Eigenvalues below `rel_cutoff · λ_max` (or below an absolute floor for
/// near-zero matrices) are dropped.  Returns an error message naming the
/// most negative eigenvalue when m is not PSD within `neg_slack · ‖m‖`.
pub fn psd_sqrt_factor(m: &CMat, rel_cutoff: f64, neg_slack: f64) -> Result<CMat, String> {
    let n = m.nrows();
    let (vals, vecs) = hermitian_eigen(m, EigOrder::Descending);
    let scale = vals.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-300);
    let min = vals.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if min < -neg_slack * scale {
        return Err(format!(
            "matrix is not positive semidefinite: min eigenvalue {min:.3e} (scale {scale:.3e})"
        ));
    }
    let cutoff = rel_cutoff * scale;
    let kept: Vec<usize> = (0..n).filter(|&i| vals[i] > cutoff).collect();
    let mut f = CMat::zeros(kept.len(), n);
    for (row, &i) in kept.iter().enumerate() {
        let s = vals[i].sqrt();
        for col in 0..n {
            f[(row, col)] = vecs[(col, i)].conj() * s;
        }
    }
    Ok(f)
}

/// Moore-Penrose pseudo-inverse with relative singular-value cutoff.
pub fn pseudo_inverse(m: &CMat, rel_cutoff: f64) -> CMat {
    if m.is_empty() {
        return CMat::zeros(m.ncols(), m.nrows());
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd with u requested");
    let vt = svd.v_t.expect("svd with v_t requested");
    let smax = svd.singular_values.max().max(1e-300);
    let inv = DVector::from_iterator(
        svd.singular_values.len(),
        svd.singular_values.iter().map(|&s| {
            if s > rel_cutoff * smax {
                C64::new(1.0 / s, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }),
    );
    vt.adjoint() * CMat::from_diagonal(&inv) * u.adjoint()
}

/// Closest matrix with orthonormal columns (polar factor U V* from the
/// SVD); used to polish bases that are orthonormal up to a small residual.
pub fn polar_orthonormalize(m: &CMat) -> CMat {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd with u requested");
    let vt = svd.v_t.expect("svd with v_t requested");
    u * vt
}

/// Deterministic orthonormal basis of the orthogonal complement of the
/// column span of `basis` (whose columns must already be orthonormal).
/// Candidates are the standard basis vectors; at each step the candidate
/// with the largest residual is taken (ties resolved by smallest index),
/// so the result depends only on the input values.
pub fn orthonormal_complement(basis: &CMat) -> CMat {
    let dim = basis.nrows();
    let k = basis.ncols();
    let want = dim - k;
    let mut q = basis.clone();
    let mut out = CMat::zeros(dim, want);
    for step in 0..want {
        let mut best: Option<(usize, f64, CVec)> = None;
        for j in 0..dim {
            let e = CVec::from_fn(dim, |i, _| {
                if i == j {
                    C64::new(1.0, 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            });
            let r = &e - &q * (q.adjoint() * &e);
            let norm = r.norm();
            let better = match &best {
                None => true,
                Some((_, bn, _)) => norm > *bn + 1e-12,
            };
            if better {
                best = Some((j, norm, r));
            }
        }
        let (_, norm, r) = best.expect("complement dimension exhausted");
        assert!(
            norm > 1e-8,
            "complement search found no independent direction (dim {dim}, step {step})"
        );
        let v = r / C64::new(norm, 0.0);
        // re-orthogonalize once against the current basis for stability
        let v = &v - &q * (q.adjoint() * &v);
        let v = &v / C64::new(v.norm(), 0.0);
        let mut grown = CMat::zeros(dim, q.ncols() + 1);
        grown.view_mut((0, 0), (dim, q.ncols())).copy_from(&q);
        grown.set_column(q.ncols(), &v);
        q = grown;
        out.set_column(step, &v);
    }
    out
}

/// Standard complex Gaussian matrix (real and imaginary parts N(0,1),
/// via Box-Muller so only `Rng::gen` is needed).
pub fn random_complex_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let a = 2.0 * std::f64::consts::PI * u2;
        C64::new(r * a.cos(), r * a.sin())
    })
}

/// Haar-ish random unitary: QR of a Ginibre matrix with the phases fixed
/// so the R diagonal is positive, making the draw a deterministic
/// function of the RNG stream.
pub fn random_unitary<R: Rng>(dim: usize, rng: &mut R) -> CMat {
    let g = random_complex_matrix(dim, dim, rng);
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    let phases = CVec::from_fn(dim, |i, _| {
        let d = r[(i, i)];
        if d.norm() == 0.0 {
            C64::new(1.0, 0.0)
        } else {
            d / d.norm()
        }
    });
    q * CMat::from_diagonal(&phases)
}

/// Column-major flattening of a matrix.
pub fn mat_to_vec(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

/// Inverse of [`mat_to_vec`].
pub fn vec_to_mat(v: &CVec, rows: usize, cols: usize) -> CMat {
    CMat::from_column_slice(rows, cols, v.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_herm(n: usize, rng: &mut ChaCha8Rng) -> CMat {
        let a = random_complex_matrix(n, n, rng);
        hermitian_part(&a)
    }

    #[test]
    fn eigen_sorting_and_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = rand_herm(6, &mut rng);
        let (vals, vecs) = hermitian_eigen(&h, EigOrder::Descending);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        let d = CMat::from_diagonal(&CVec::from_iterator(
            6,
            vals.iter().map(|&v| C64::new(v, 0.0)),
        ));
        let rec = &vecs * d * vecs.adjoint();
        assert!((rec - h).norm() < 1e-12);
    }

    #[test]
    fn psd_projection_is_psd_and_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = rand_herm(5, &mut rng);
        let p = psd_project(&h);
        assert!(min_eig_hermitian(&p) > -1e-12);
        assert!((psd_project(&p) - &p).norm() < 1e-12);
    }

    #[test]
    fn sqrt_factor_round_trip_and_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_complex_matrix(3, 5, &mut rng);
        let m = a.adjoint() * &a; // rank 3 PSD, 5x5
        let f = psd_sqrt_factor(&m, 1e-12, 1e-10).unwrap();
        assert_eq!(f.nrows(), 3);
        assert!((f.adjoint() * &f - m).norm() < 1e-10);
    }

    #[test]
    fn sqrt_factor_rejects_indefinite() {
        let m = CMat::from_diagonal(&CVec::from_vec(vec![
            C64::new(1.0, 0.0),
            C64::new(-0.5, 0.0),
        ]));
        assert!(psd_sqrt_factor(&m, 1e-12, 1e-10).is_err());
    }

    #[test]
    fn complement_is_orthonormal_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_complex_matrix(7, 3, &mut rng);
        let q = polar_orthonormalize(&a);
        let c1 = orthonormal_complement(&q);
        let c2 = orthonormal_complement(&q);
        assert_eq!(c1.ncols(), 4);
        assert!((c1.adjoint() * &c1 - CMat::identity(4, 4)).norm() < 1e-10);
        assert!((q.adjoint() * &c1).norm() < 1e-10);
        assert_eq!(c1, c2);
    }

    #[test]
    fn random_unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_unitary(6, &mut rng);
        assert!((u.adjoint() * &u - CMat::identity(6, 6)).norm() < 1e-12);
    }

    #[test]
    fn pseudo_inverse_solves_consistent_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_complex_matrix(4, 6, &mut rng);
        let pinv = pseudo_inverse(&a, 1e-13);
        assert!((&a * &pinv * &a - &a).norm() < 1e-10);
    }
}
