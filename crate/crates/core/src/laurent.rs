//! Coefficient lists for Laurent expansions in the basis ζ_j.
//!
//! A function analytic on a neighborhood of the annulus has an expansion
//! f = Σ_j f̂_j z^j; in the orthonormal basis ζ_j = z^j/√(1+t q^{2j}) of
//! H²_t the coefficients pick up the weight √(1+t q^{2j}).  This type
//! stores the basis coefficients ⟨f, ζ_j⟩ for t = 1 on a contiguous index
//! window and converts back and forth to the plain monomial coefficients.

use crate::linalg::C64;
use serde::{Deserialize, Serialize};

/// Weight √(1 + t·q^{2j}) relating ζ-basis and monomial coefficients,
/// in a form that stays finite for the negative indices used here.
pub fn zeta_weight(j: i64, q: f64, t: f64) -> f64 {
    if j >= 0 {
        (1.0 + t * q.powi(2 * j as i32)).sqrt()
    } else {
        let m = (-j) as i32;
        // √(1 + t q^{-2m}) = q^{-m} √(q^{2m} + t)
        (q.powi(2 * m) + t).sqrt() / q.powi(m)
    }
}

/// 1/√(1 + t·q^{2j}); bounded by 1/√min(1,t) for every j.
pub fn inv_zeta_weight(j: i64, q: f64, t: f64) -> f64 {
    if j >= 0 {
        1.0 / (1.0 + t * q.powi(2 * j as i32)).sqrt()
    } else {
        let m = (-j) as i32;
        q.powi(m) / (q.powi(2 * m) + t).sqrt()
    }
}

/// Basis coefficients ⟨f, ζ_j⟩ for j in a window around zero.
/// `values[i]` is the coefficient of ζ_{i - center_index}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaurentCoeffs {
    pub center_index: usize,
    pub values: Vec<C64>,
}

impl LaurentCoeffs {
    pub fn new(center_index: usize, values: Vec<C64>) -> Self {
        assert!(center_index < values.len().max(1));
        LaurentCoeffs {
            center_index,
            values,
        }
    }

    /// Symmetric window |j| ≤ n filled with zeros.
    pub fn zeros(n: usize) -> Self {
        LaurentCoeffs {
            center_index: n,
            values: vec![C64::new(0.0, 0.0); 2 * n + 1],
        }
    }

    /// Build from plain monomial coefficients f̂_j (same window layout).
    pub fn from_monomial(center_index: usize, plain: &[C64], q: f64) -> Self {
        let values = plain
            .iter()
            .enumerate()
            .map(|(i, &c)| c * zeta_weight(i as i64 - center_index as i64, q, 1.0))
            .collect();
        LaurentCoeffs {
            center_index,
            values,
        }
    }

    pub fn min_index(&self) -> i64 {
        -(self.center_index as i64)
    }

    pub fn max_index(&self) -> i64 {
        self.values.len() as i64 - 1 - self.center_index as i64
    }

    /// Coefficient of ζ_j; zero outside the stored window.
    pub fn zeta_coeff(&self, j: i64) -> C64 {
        let i = j + self.center_index as i64;
        if i < 0 || i >= self.values.len() as i64 {
            C64::new(0.0, 0.0)
        } else {
            self.values[i as usize]
        }
    }

    /// Plain monomial coefficient f̂_j = ⟨f, ζ_j⟩ / √(1+q^{2j}).
    pub fn monomial_coeff(&self, j: i64, q: f64) -> C64 {
        self.zeta_coeff(j) * inv_zeta_weight(j, q, 1.0)
    }

    /// Squared H²-norm of the stored window, Σ |⟨f, ζ_j⟩|².
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Largest |j| with a stored coefficient (the bandwidth used to pick
    /// quadrature resolutions).
    pub fn bandwidth(&self) -> usize {
        self.min_index().unsigned_abs().max(self.max_index().unsigned_abs()) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_are_consistent_across_sign() {
        let q = 0.25;
        for j in -40i64..=40 {
            let w = zeta_weight(j, q, 1.0);
            let iw = inv_zeta_weight(j, q, 1.0);
            assert!((w * iw - 1.0).abs() < 1e-14, "j = {j}");
        }
        // direct check against the defining formula at a modest index
        assert!((zeta_weight(-3, q, 2.0) - (1.0 + 2.0 * q.powi(-6)).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn window_indexing() {
        let c = LaurentCoeffs::new(2, vec![C64::new(1.0, 0.0); 5]);
        assert_eq!(c.min_index(), -2);
        assert_eq!(c.max_index(), 2);
        assert_eq!(c.zeta_coeff(-3), C64::new(0.0, 0.0));
        assert_eq!(c.zeta_coeff(0), C64::new(1.0, 0.0));
        assert_eq!(c.bandwidth(), 2);
    }

    #[test]
    fn monomial_round_trip() {
        let q = 0.25;
        let plain = vec![
            C64::new(0.5, 0.1),
            C64::new(-1.0, 0.0),
            C64::new(0.0, 2.0),
            C64::new(0.3, -0.4),
        ];
        let lc = LaurentCoeffs::from_monomial(1, &plain, q);
        for (i, &p) in plain.iter().enumerate() {
            let j = i as i64 - 1;
            assert!((lc.monomial_coeff(j, q) - p).norm() < 1e-14);
        }
    }
}
