//! Python bindings for the annulus interpolation toolkit: the kernel
//! layer, the generating family of inner functions, and the JSON task
//! harness, exposed as the `annulus_py` extension module.

use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use annulus_core::harness;
use annulus_core::kernel::DEFAULT_Q;
use annulus_core::{AnnulusParams, KernelMethod, TestFunction};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// The annulus q < |z| < 1 together with its kernel family.
#[pyclass]
#[derive(Clone)]
struct Annulus {
    params: AnnulusParams,
}

#[pymethods]
impl Annulus {
    #[new]
    #[pyo3(signature = (q = DEFAULT_Q))]
    fn new(q: f64) -> PyResult<Self> {
        Ok(Annulus {
            params: AnnulusParams::new(q).map_err(value_err)?,
        })
    }

    #[getter]
    fn q(&self) -> f64 {
        self.params.q()
    }

    #[getter]
    fn sqrt_q(&self) -> f64 {
        self.params.sqrt_q()
    }

    /// The constant C′ with k(z, w)·k(z, −w)·C′ = 1 at weight t = 1.
    #[getter]
    fn c_prime(&self) -> f64 {
        self.params.c_prime()
    }

    /// Whether z lies strictly inside the annulus.
    fn contains(&self, z: Complex64) -> bool {
        self.params.in_open_annulus(z)
    }

    /// Kernel value k(z, w; t).  `method` selects the evaluation route:
    /// "theta" works on the closed annulus, "series" only on the open
    /// one.
    #[pyo3(signature = (z, w, t = 1.0, method = "theta"))]
    fn kernel(&self, z: Complex64, w: Complex64, t: f64, method: &str) -> PyResult<Complex64> {
        let method = match method {
            "theta" => KernelMethod::Theta,
            "series" => KernelMethod::Series,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown method {other:?}; use \"theta\" or \"series\""
                )))
            }
        };
        Ok(self.params.kernel(z, w, t, method).map_err(value_err)?.value)
    }

    /// Orthonormal basis value ζ_n(z) at weight t.
    #[pyo3(signature = (n, z, t = 1.0))]
    fn basis_zeta(&self, n: i64, z: Complex64, t: f64) -> PyResult<Complex64> {
        self.params.basis_zeta(n, z, t).map_err(value_err)
    }

    /// Kernel Gram matrix [k(z_i, z_j; t)] as nested lists.
    #[pyo3(signature = (points, t = 1.0))]
    fn gram(&self, points: Vec<Complex64>, t: f64) -> PyResult<Vec<Vec<Complex64>>> {
        let g = self.params.gram_matrix(&points, t).map_err(value_err)?;
        Ok((0..g.nrows())
            .map(|i| (0..g.ncols()).map(|j| g[(i, j)]).collect())
            .collect())
    }

    /// Member of the generating family with parameter γ on the unit
    /// circle.
    fn test_function(&self, gamma: Complex64) -> PyResult<TestFn> {
        Ok(TestFn {
            inner: TestFunction::new(gamma, &self.params).map_err(value_err)?,
        })
    }
}

/// Inner function of the generating family: unimodular on both boundary
/// circles, two zeros inside, normalized to 1 at z = 1.
#[pyclass]
struct TestFn {
    inner: TestFunction,
}

#[pymethods]
impl TestFn {
    #[getter]
    fn gamma(&self) -> Complex64 {
        self.inner.gamma()
    }

    fn __call__(&self, z: Complex64) -> PyResult<Complex64> {
        self.inner.eval(z).map_err(value_err)
    }

    /// Both zeros, inside the annulus.
    fn zeros(&self) -> PyResult<Vec<Complex64>> {
        Ok(self.inner.zeros().map_err(value_err)?.zeros.to_vec())
    }
}

/// Run one task from a JSON config string and return the JSON report,
/// exactly as the `annulus-interp` binary would.
#[pyfunction]
fn run_task(config_json: &str) -> PyResult<String> {
    let config = harness::config_from_str(config_json).map_err(value_err)?;
    config.validate().map_err(value_err)?;
    let report = harness::run(&config);
    harness::report_json(&report).map_err(value_err)
}

#[pyfunction]
fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

#[pymodule]
fn annulus_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Annulus>()?;
    m.add_class::<TestFn>()?;
    m.add_function(wrap_pyfunction!(run_task, m)?)?;
    m.add_function(wrap_pyfunction!(version, m)?)?;
    Ok(())
}
