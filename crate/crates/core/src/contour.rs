//! Contour quadrature on circles.
//!
//! All Laurent-coefficient extraction in the crate goes through the
//! trapezoid rule on equispaced nodes, which converges geometrically for
//! functions analytic in a neighborhood of the circle.  Coefficients are
//! recovered from
//!
//!     c_n = (1/2πi) ∮_{|z|=ρ} f(z) z^{-n-1} dz
//!         = (1/M) Σ_l f(ρ e^{iθ_l}) (ρ e^{iθ_l})^{-n}.

use crate::linalg::{C64, CMat};

/// Equispaced nodes ρ·e^{2πil/M} on the circle of radius ρ.
pub fn circle_nodes(radius: f64, count: usize) -> Vec<C64> {
    (0..count)
        .map(|l| {
            let th = 2.0 * std::f64::consts::PI * (l as f64) / (count as f64);
            C64::from_polar(radius, th)
        })
        .collect()
}

/// Laurent coefficients c_n for n in `[n_min, n_max]` of a scalar
/// function sampled on the circle of radius ρ with `nodes` points.
/// The caller is responsible for choosing enough nodes to keep aliasing
/// below the target accuracy (4x the bandwidth is the house rule).
pub fn laurent_coeffs_on_circle<F>(
    f: F,
    radius: f64,
    n_min: i64,
    n_max: i64,
    nodes: usize,
) -> Vec<C64>
where
    F: Fn(C64) -> C64,
{
    let zs = circle_nodes(radius, nodes);
    let samples: Vec<C64> = zs.iter().map(|&z| f(z)).collect();
    let m = nodes as f64;
    (n_min..=n_max)
        .map(|n| {
            let mut acc = C64::new(0.0, 0.0);
            for (l, &z) in zs.iter().enumerate() {
                acc += samples[l] * z.powi(-(n as i32));
            }
            acc / m
        })
        .collect()
}

/// Matrix-valued version of [`laurent_coeffs_on_circle`].
pub fn matrix_laurent_coeffs_on_circle<F>(
    f: F,
    radius: f64,
    n_min: i64,
    n_max: i64,
    nodes: usize,
) -> Vec<CMat>
where
    F: Fn(C64) -> CMat,
{
    let zs = circle_nodes(radius, nodes);
    let samples: Vec<CMat> = zs.iter().map(|&z| f(z)).collect();
    let m = nodes as f64;
    (n_min..=n_max)
        .map(|n| {
            let mut acc = CMat::zeros(samples[0].nrows(), samples[0].ncols());
            for (l, &z) in zs.iter().enumerate() {
                acc += &samples[l] * z.powi(-(n as i32));
            }
            acc / C64::new(m, 0.0)
        })
        .collect()
}

/// m-th derivative of an analytic function at `a` by the Cauchy integral
/// over a small circle.  Exact up to geometric quadrature error, which
/// beats finite differencing by many digits for the orders used here.
pub fn derivative_at<F>(f: F, a: C64, order: u32, radius: f64, nodes: usize) -> C64
where
    F: Fn(C64) -> C64,
{
    let mut acc = C64::new(0.0, 0.0);
    for l in 0..nodes {
        let th = 2.0 * std::f64::consts::PI * (l as f64) / (nodes as f64);
        let e = C64::from_polar(1.0, th);
        let fv = f(a + e * radius);
        acc += fv * e.powi(-(order as i32));
    }
    let fact: f64 = (1..=order.max(1)).map(|k| k as f64).product::<f64>();
    let fact = if order == 0 { 1.0 } else { fact };
    acc * fact / (nodes as f64 * radius.powi(order as i32))
}
