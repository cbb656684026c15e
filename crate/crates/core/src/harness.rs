//! Config-driven orchestration: parse a JSON problem description, run
//! the requested task, and persist machine-readable reports.
//!
//! A [`ProblemConfig`] names one of six tasks.  `kernel-check` and
//! `testfn-report` audit the analytic layer; `pick` solves an
//! interpolation feasibility problem; `realize` continues a feasible
//! solve into a unitary colligation; `roundtrip` additionally verifies
//! the realized transfer function (interpolation, Schur bound on a grid,
//! commutant identity); `converse` starts from a random colligation and
//! recovers an atomic decomposition from it, sweeping the damping
//! parameter toward 1.
//!
//! Every numeric field of a [`RunReport`] is reproducible from the
//! config and its seed; wall-clock timings are the only entries that
//! vary between identical runs.  `ANNULUS_INTERP_THREADS` caps the
//! worker threads used for embarrassingly parallel sweeps.

use std::collections::BTreeMap;
use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomposition::{
    assemble_system, check_schur_domination, pick_scalar_system, sample_test_set,
    solve_with_doubling, AtomicDecomposition, FeasibilityReport, SolveOptions, SolveStatus,
};
use crate::hereditary::{self, pick_model, PowerTable};
use crate::kernel::{AnnulusParams, KernelMethod, SeriesControl};
use crate::laurent::LaurentCoeffs;
use crate::linalg::{self, C64, CMat};
use crate::realization::{
    build_colligation, commutant_residual, extract_decomposition, random_colligation,
    transfer_of_operator, Colligation,
};
use crate::testfn::{decay_estimate, equispaced_gammas, TestFunctionFamily};
use crate::tolerances;

/// JSON encoding of complex scalars as `{"re": .., "im": ..}` objects.
mod complex_fmt {
    use super::C64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    pub(super) struct Repr {
        pub re: f64,
        pub im: f64,
    }

    pub(super) fn serialize<S: Serializer>(z: &C64, s: S) -> Result<S::Ok, S::Error> {
        Repr { re: z.re, im: z.im }.serialize(s)
    }

    pub(super) fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<C64, D::Error> {
        let r = Repr::deserialize(d)?;
        Ok(C64::new(r.re, r.im))
    }
}

/// Same object encoding, elementwise over a list.
mod complex_list_fmt {
    use super::complex_fmt::Repr;
    use super::C64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub(super) fn serialize<S: Serializer>(v: &[C64], s: S) -> Result<S::Ok, S::Error> {
        let reprs: Vec<Repr> = v.iter().map(|z| Repr { re: z.re, im: z.im }).collect();
        reprs.serialize(s)
    }

    pub(super) fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<C64>, D::Error> {
        let reprs: Vec<Repr> = Vec::deserialize(d)?;
        Ok(reprs.into_iter().map(|r| C64::new(r.re, r.im)).collect())
    }
}

#[derive(Error, Debug)]
pub enum HarnessError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("configuration parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration: {}", problems.join("; "))]
    Validation { problems: Vec<String> },
    #[error("cannot encode report: {0}")]
    Encode(String),
}

impl HarnessError {
    /// Configuration and I/O failures share one exit code, distinct from
    /// the statuses a completed run can report.
    pub fn exit_code(&self) -> i32 {
        4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    KernelCheck,
    TestfnReport,
    Pick,
    Realize,
    Roundtrip,
    Converse,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::KernelCheck => "kernel-check",
            Task::TestfnReport => "testfn-report",
            Task::Pick => "pick",
            Task::Realize => "realize",
            Task::Roundtrip => "roundtrip",
            Task::Converse => "converse",
        }
    }
}

/// Worst-first ordering: a report's overall status is the maximum over
/// its stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Pass,
    Infeasible,
    Stalled,
    NumericalError,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Pass => 0,
            RunStatus::Infeasible => 2,
            RunStatus::Stalled => 3,
            RunStatus::NumericalError => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RunStatus::Pass => "pass",
            RunStatus::Infeasible => "infeasible",
            RunStatus::Stalled => "stalled",
            RunStatus::NumericalError => "numerical-error",
        }
    }
}

fn default_q() -> f64 {
    crate::kernel::DEFAULT_Q
}

fn default_num_atoms() -> usize {
    32
}

fn default_truncation() -> usize {
    80
}

fn default_tol() -> f64 {
    tolerances::FEASIBILITY_TOL
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default = "default_q")]
    pub q: f64,
    pub task: Task,
    #[serde(default, with = "complex_list_fmt")]
    pub nodes: Vec<C64>,
    #[serde(default, with = "complex_list_fmt")]
    pub targets: Vec<C64>,
    #[serde(default = "default_num_atoms")]
    pub num_atoms: usize,
    #[serde(default = "default_truncation")]
    pub truncation: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
}

impl ProblemConfig {
    /// A fresh config for the given task with every default applied.
    pub fn new(task: Task) -> Self {
        ProblemConfig {
            q: default_q(),
            task,
            nodes: Vec::new(),
            targets: Vec::new(),
            num_atoms: default_num_atoms(),
            truncation: default_truncation(),
            tol: default_tol(),
            seed: 0,
            output_path: None,
        }
    }

    /// Collects every violated invariant rather than stopping at the
    /// first, so one round of edits can fix a config.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut problems = Vec::new();
        if !(self.q.is_finite() && self.q > 0.0 && self.q < 1.0) {
            problems.push(format!("q = {} must lie strictly inside (0, 1)", self.q));
        }
        if self.num_atoms == 0 {
            problems.push("num_atoms must be at least 1".to_string());
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            problems.push(format!("tol = {} must be positive", self.tol));
        }
        if self.truncation == 0 || self.truncation > 300 {
            problems.push(format!(
                "truncation = {} must lie in 1..=300",
                self.truncation
            ));
        }
        if self.q > 0.0 && self.q < 1.0 {
            for (i, &z) in self.nodes.iter().enumerate() {
                let r = z.norm();
                if !(r > self.q && r < 1.0) {
                    problems.push(format!(
                        "nodes[{i}] = {z} lies outside the annulus {} < |z| < 1",
                        self.q
                    ));
                }
            }
        }
        if matches!(self.task, Task::Pick | Task::Realize | Task::Roundtrip) {
            if self.nodes.is_empty() {
                problems.push(format!("task {} needs at least one node", self.task.name()));
            }
            if self.nodes.len() != self.targets.len() {
                problems.push(format!(
                    "{} nodes but {} targets",
                    self.nodes.len(),
                    self.targets.len()
                ));
            }
            for i in 0..self.nodes.len() {
                for j in 0..i {
                    if (self.nodes[i] - self.nodes[j]).norm() < 1e-10 {
                        problems.push(format!("nodes[{i}] duplicates nodes[{j}]"));
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Validation { problems })
        }
    }
}

/// Parse a config from JSON text without validating it, so callers can
/// apply command-line overrides first.
pub fn config_from_str(text: &str) -> Result<ProblemConfig, HarnessError> {
    serde_json::from_str(text).map_err(|e| HarnessError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Read, parse and validate a config file.
pub fn parse_config(path: &Path) -> Result<ProblemConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let config = config_from_str(&text)?;
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub status: RunStatus,
    /// Named residuals of this stage; keys sort deterministically.
    pub residuals: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub num_atoms: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixPayload {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    #[serde(with = "complex_list_fmt")]
    pub entries: Vec<C64>,
}

fn matrix_payload(m: &CMat) -> MatrixPayload {
    let mut entries = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            entries.push(m[(i, j)]);
        }
    }
    MatrixPayload {
        rows: m.nrows(),
        cols: m.ncols(),
        entries,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AtomPayload {
    #[serde(with = "complex_fmt")]
    pub gamma: C64,
    pub mass: MatrixPayload,
}

fn atom_payloads(dec: &AtomicDecomposition) -> Vec<AtomPayload> {
    dec.gammas
        .iter()
        .zip(&dec.atoms)
        .map(|(&gamma, mass)| AtomPayload {
            gamma,
            mass: matrix_payload(mass),
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockEntry {
    #[serde(with = "complex_fmt")]
    pub gamma: C64,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColligationPayload {
    pub a: MatrixPayload,
    pub b: MatrixPayload,
    pub c: MatrixPayload,
    pub d: MatrixPayload,
    pub structure: Vec<BlockEntry>,
    pub pad_dim: usize,
}

fn colligation_payload(col: &Colligation) -> ColligationPayload {
    ColligationPayload {
        a: matrix_payload(&col.a),
        b: matrix_payload(&col.b),
        c: matrix_payload(&col.c),
        d: matrix_payload(&col.d),
        structure: col
            .e_block_structure
            .iter()
            .map(|&(gamma, multiplicity)| BlockEntry {
                gamma,
                multiplicity,
            })
            .collect(),
        pad_dim: col.pad_dim,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelSample {
    #[serde(with = "complex_fmt")]
    pub z: C64,
    #[serde(with = "complex_fmt")]
    pub w: C64,
    #[serde(with = "complex_fmt")]
    pub value: C64,
    pub tail_bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchurSample {
    #[serde(with = "complex_fmt")]
    pub z: C64,
    pub sigma_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeflationSample {
    #[serde(with = "complex_fmt")]
    pub gamma: C64,
    pub singular_values: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Artifacts {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atoms: Option<Vec<AtomPayload>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub colligation: Option<ColligationPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<MatrixPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_grid: Option<Vec<KernelSample>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schur_grid: Option<Vec<SchurSample>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deflation_sweep: Option<Vec<DeflationSample>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ProblemConfig,
    pub status: RunStatus,
    pub stages: Vec<StageReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverStats>,
    #[serde(default)]
    pub artifacts: Artifacts,
    /// Wall-clock per stage; the one part of a report that is not
    /// reproducible between runs.
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunReport {
    fn new(config: ProblemConfig) -> Self {
        RunReport {
            config,
            status: RunStatus::Pass,
            stages: Vec::new(),
            solver: None,
            artifacts: Artifacts::default(),
            timings_ms: BTreeMap::new(),
        }
    }
}

/// Worker-thread cap: `ANNULUS_INTERP_THREADS` when set to a positive
/// integer, otherwise the machine's available parallelism.
pub fn thread_cap() -> usize {
    env::var("ANNULUS_INTERP_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Order-preserving parallel map over contiguous chunks; falls back to a
/// serial map when one worker suffices.
fn parallel_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    let cap = thread_cap().min(items.len().max(1));
    if cap <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(cap);
    std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|piece| scope.spawn(move || piece.iter().map(f).collect::<Vec<U>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("harness worker panicked"))
            .collect()
    })
}

fn status_from(ok: bool) -> RunStatus {
    if ok {
        RunStatus::Pass
    } else {
        RunStatus::NumericalError
    }
}

/// Times a stage, records its residuals, and folds hard errors into the
/// report instead of propagating them.
fn run_stage<T>(
    report: &mut RunReport,
    name: &str,
    f: impl FnOnce(&mut BTreeMap<String, f64>) -> Result<(RunStatus, T), String>,
) -> Option<T> {
    let start = Instant::now();
    let mut residuals = BTreeMap::new();
    let outcome = f(&mut residuals);
    report
        .timings_ms
        .insert(name.to_string(), start.elapsed().as_secs_f64() * 1e3);
    match outcome {
        Ok((status, value)) => {
            report.stages.push(StageReport {
                stage: name.to_string(),
                status,
                residuals,
                message: None,
            });
            Some(value)
        }
        Err(message) => {
            report.stages.push(StageReport {
                stage: name.to_string(),
                status: RunStatus::NumericalError,
                residuals,
                message: Some(message),
            });
            None
        }
    }
}

/// Execute the configured task.  Stage-level numerical failures are
/// carried inside the report; only the overall status decides the exit
/// code.
pub fn run(config: &ProblemConfig) -> RunReport {
    let mut report = RunReport::new(config.clone());
    match AnnulusParams::new(config.q) {
        Ok(p) => {
            match config.task {
                Task::KernelCheck => kernel_check_task(config, &p, &mut report),
                Task::TestfnReport => testfn_report_task(config, &p, &mut report),
                Task::Pick => {
                    pick_task(config, &p, &mut report);
                }
                Task::Realize => realize_task(config, &p, &mut report, false),
                Task::Roundtrip => realize_task(config, &p, &mut report, true),
                Task::Converse => converse_task(config, &p, &mut report),
            };
        }
        Err(e) => {
            report.stages.push(StageReport {
                stage: "setup".to_string(),
                status: RunStatus::NumericalError,
                residuals: BTreeMap::new(),
                message: Some(e.to_string()),
            });
        }
    }
    report.status = report
        .stages
        .iter()
        .map(|s| s.status)
        .max()
        .unwrap_or(RunStatus::Pass);
    report
}

fn random_interior(p: &AnnulusParams, rng: &mut ChaCha8Rng) -> C64 {
    let margin = 0.05 * (1.0 - p.q());
    let radius = p.q() + margin + rng.gen::<f64>() * (1.0 - p.q() - 2.0 * margin);
    C64::from_polar(radius, rng.gen::<f64>() * std::f64::consts::TAU)
}

fn kernel_check_task(config: &ProblemConfig, p: &AnnulusParams, report: &mut RunReport) {
    run_stage(report, "reciprocal-identity", |res| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let pairs: Vec<(C64, C64)> = (0..100)
            .map(|_| (random_interior(p, &mut rng), random_interior(p, &mut rng)))
            .collect();
        let cp = p.c_prime();
        let errs = parallel_map(&pairs, |&(z, w)| -> Result<f64, String> {
            let a = p.kernel(z, w, 1.0, KernelMethod::Theta).map_err(|e| e.to_string())?;
            let b = p
                .kernel(z, -w, 1.0, KernelMethod::Theta)
                .map_err(|e| e.to_string())?;
            Ok((a.value * b.value * cp - C64::new(1.0, 0.0)).norm())
        });
        let mut worst = 0.0f64;
        for e in errs {
            worst = worst.max(e?);
        }
        res.insert("identity".to_string(), worst);
        Ok((status_from(worst < config.tol), ()))
    });

    run_stage(report, "orthonormality", |res| {
        let window = 10i64;
        let indices: Vec<i64> = (-window..=window).collect();
        let rows = parallel_map(&indices, |&m| -> Result<f64, String> {
            let mut f = LaurentCoeffs::zeros(window as usize);
            f.values[(m + window) as usize] = C64::new(1.0, 0.0);
            let mut worst = 0.0f64;
            for &n in &indices {
                let mut g = LaurentCoeffs::zeros(window as usize);
                g.values[(n + window) as usize] = C64::new(1.0, 0.0);
                let ip = p.boundary_inner_product(&f, &g, 1.0).map_err(|e| e.to_string())?;
                let want = if m == n { 1.0 } else { 0.0 };
                worst = worst.max((ip - C64::new(want, 0.0)).norm());
            }
            Ok(worst)
        });
        let mut worst = 0.0f64;
        for r in rows {
            worst = worst.max(r?);
        }
        res.insert("gram-deviation".to_string(), worst);
        Ok((status_from(worst < config.tol), ()))
    });

    run_stage(report, "boundary-zero", |res| {
        let v = p
            .kernel_theta(C64::new(1.0, 0.0), C64::new(-1.0, 0.0), 1.0)
            .map_err(|e| e.to_string())?;
        let worst = v.value.norm();
        res.insert("k(1,-1)".to_string(), worst);
        Ok((status_from(worst < tolerances::THETA_AGREEMENT_TOL), ()))
    });

    let grid = run_stage(report, "series-theta", |res| {
        let n = 20usize;
        let point = |i: usize, twist: f64| {
            let radius = p.q() + (1.0 - p.q()) * (i as f64 + 0.5) / n as f64;
            C64::from_polar(radius, std::f64::consts::TAU * i as f64 / n as f64 + twist)
        };
        let pairs: Vec<(C64, C64)> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (point(i, 0.0), point(j, 0.5))))
            .collect();
        let ctl = SeriesControl::default();
        let rows = parallel_map(&pairs, |&(z, w)| -> Result<(KernelSample, f64), String> {
            let series = p.kernel_series(z, w, 1.0, &ctl).map_err(|e| e.to_string())?;
            let theta = p.kernel_theta(z, w, 1.0).map_err(|e| e.to_string())?;
            let gap = (series.value - theta.value).norm();
            Ok((
                KernelSample {
                    z,
                    w,
                    value: theta.value,
                    tail_bound: series.tail_bound,
                },
                gap,
            ))
        });
        let mut worst = 0.0f64;
        let mut samples = Vec::with_capacity(rows.len());
        for r in rows {
            let (sample, gap) = r?;
            worst = worst.max(gap);
            samples.push(sample);
        }
        res.insert("max-gap".to_string(), worst);
        Ok((status_from(worst < tolerances::THETA_AGREEMENT_TOL), samples))
    });
    report.artifacts.kernel_grid = grid;
}

fn testfn_report_task(config: &ProblemConfig, p: &AnnulusParams, report: &mut RunReport) {
    let family = match TestFunctionFamily::new(p, config.truncation) {
        Ok(f) => f,
        Err(e) => {
            report.stages.push(StageReport {
                stage: "setup".to_string(),
                status: RunStatus::NumericalError,
                residuals: BTreeMap::new(),
                message: Some(e.to_string()),
            });
            return;
        }
    };
    let gammas = equispaced_gammas(16);

    run_stage(report, "boundary-modulus", |res| {
        let rows = parallel_map(&gammas, |&g| -> Result<f64, String> {
            let tf = family.make(g).map_err(|e| e.to_string())?;
            let mut worst = 0.0f64;
            for radius in [1.0, p.q()] {
                for l in 0..1000 {
                    let z = C64::from_polar(radius, std::f64::consts::TAU * l as f64 / 1000.0);
                    let v = tf.eval(z).map_err(|e| e.to_string())?;
                    worst = worst.max((v.norm() - 1.0).abs());
                }
            }
            Ok(worst)
        });
        let mut worst = 0.0f64;
        for r in rows {
            worst = worst.max(r?);
        }
        res.insert("modulus-deviation".to_string(), worst);
        Ok((status_from(worst < tolerances::BOUNDARY_MODULUS_TOL), ()))
    });

    run_stage(report, "zeros", |res| {
        let sq = p.sqrt_q();
        let rows = parallel_map(&gammas, |&g| -> Result<(f64, f64, f64), String> {
            let tf = family.make(g).map_err(|e| e.to_string())?;
            let pair = tf.zeros().map_err(|e| e.to_string())?;
            let expected = [C64::new(sq, 0.0), g * sq];
            let dist = |perm: [usize; 2]| {
                (pair.zeros[0] - expected[perm[0]])
                    .norm()
                    .max((pair.zeros[1] - expected[perm[1]]).norm())
            };
            let location = dist([0, 1]).min(dist([1, 0]));
            let value = pair.zeros.iter().fold(0.0f64, |acc, &z| {
                acc.max(tf.eval_unchecked(z).norm())
            });
            let count = (tf.zero_count() - C64::new(2.0, 0.0)).norm();
            Ok((location, value, count))
        });
        let mut location = 0.0f64;
        let mut value = 0.0f64;
        let mut count = 0.0f64;
        for r in rows {
            let (l, v, c) = r?;
            location = location.max(l);
            value = value.max(v);
            count = count.max(c);
        }
        res.insert("location".to_string(), location);
        res.insert("value".to_string(), value);
        res.insert("count".to_string(), count);
        let ok = location < tolerances::ZERO_TOL
            && value < tolerances::ZERO_TOL
            && count < 1e-6;
        Ok((status_from(ok), ()))
    });

    run_stage(report, "normalization", |res| {
        let one = C64::new(1.0, 0.0);
        let mut worst = 0.0f64;
        for &g in &gammas {
            let tf = family.make(g).map_err(|e| e.to_string())?;
            worst = worst.max((tf.eval_unchecked(one) - one).norm());
        }
        res.insert("psi-at-one".to_string(), worst);
        Ok((status_from(worst < tolerances::THETA_AGREEMENT_TOL), ()))
    });

    run_stage(report, "laurent-decay", |res| {
        let rows = parallel_map(&gammas, |&g| -> Result<(f64, f64), String> {
            let coeffs = family.coeffs_for(g).map_err(|e| e.to_string())?;
            let (_, rho) = decay_estimate(&coeffs).map_err(|e| e.to_string())?;
            let tf = family.make(g).map_err(|e| e.to_string())?;
            let mut recon = 0.0f64;
            for l in 0..200 {
                let z = C64::from_polar(p.sqrt_q(), std::f64::consts::TAU * l as f64 / 200.0);
                let approx = p.eval_in_basis(&coeffs, z).map_err(|e| e.to_string())?;
                recon = recon.max((approx - tf.eval_unchecked(z)).norm());
            }
            Ok((rho, recon))
        });
        let mut rho_max = 0.0f64;
        let mut recon_max = 0.0f64;
        for r in rows {
            let (rho, recon) = r?;
            rho_max = rho_max.max(rho);
            recon_max = recon_max.max(recon);
        }
        res.insert("rho".to_string(), rho_max);
        res.insert("reconstruction".to_string(), recon_max);
        let ok = rho_max < 1.0 && recon_max < tolerances::ROUND_TRIP_RTOL;
        Ok((status_from(ok), ()))
    });

    let sweep = run_stage(report, "deflated-kernels", |res| {
        let points: Vec<C64> = [
            (0.35, 0.0),
            (0.45, 2.4),
            (0.55, 1.1),
            (0.7, 4.0),
            (0.85, 5.3),
        ]
        .iter()
        .map(|&(frac, arg): &(f64, f64)| {
            C64::from_polar(p.q() + (1.0 - p.q()) * frac, arg)
        })
        .collect();
        let rows = parallel_map(&gammas, |&g| -> Result<(DeflationSample, f64, f64), String> {
            let tf = family.make(g).map_err(|e| e.to_string())?;
            let k = tf.deflated_kernel(&points).map_err(|e| e.to_string())?;
            let scale = k.norm().max(1.0);
            let min_eig = linalg::min_eig_hermitian(&linalg::hermitian_part(&k));
            let svd = k.svd(false, false);
            let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
            sv.sort_by(|a, b| b.total_cmp(a));
            let ratio = sv[2] / sv[0].max(1e-300);
            Ok((
                DeflationSample {
                    gamma: g,
                    singular_values: sv,
                },
                min_eig / scale,
                ratio,
            ))
        });
        let mut worst_eig = f64::INFINITY;
        let mut worst_ratio = 0.0f64;
        let mut samples = Vec::with_capacity(gammas.len());
        for r in rows {
            let (sample, eig, ratio) = r?;
            worst_eig = worst_eig.min(eig);
            worst_ratio = worst_ratio.max(ratio);
            samples.push(sample);
        }
        res.insert("min-eig".to_string(), worst_eig);
        res.insert("rank-ratio".to_string(), worst_ratio);
        let ok = worst_eig > -1e-10 && worst_ratio < tolerances::DEFLATION_RANK_TOL;
        Ok((status_from(ok), samples))
    });
    report.artifacts.deflation_sweep = sweep;
}

fn record_solver(
    report: &mut RunReport,
    rep: &FeasibilityReport,
    dec: &AtomicDecomposition,
) {
    report.solver = Some(SolverStats {
        iterations: rep.iterations,
        num_atoms: rep.num_atoms,
        residual: rep.residual,
    });
    if let Some(cert) = &rep.certificate {
        report.artifacts.certificate = Some(matrix_payload(cert));
    }
    report.artifacts.atoms = Some(atom_payloads(dec));
}

fn pick_task(config: &ProblemConfig, p: &AnnulusParams, report: &mut RunReport) {
    let solved = run_stage(report, "solve", |res| {
        let opts = SolveOptions {
            tol: config.tol,
            max_iter: 40_000,
            seed: config.seed,
        };
        let (rep, dec) = solve_with_doubling(
            |n| pick_scalar_system(p, &config.nodes, &config.targets, &sample_test_set(n)?),
            config.num_atoms,
            4 * config.num_atoms,
            &opts,
        )
        .map_err(|e| e.to_string())?;
        res.insert("constraint".to_string(), rep.residual);
        let status = match rep.status {
            SolveStatus::Feasible => RunStatus::Pass,
            SolveStatus::Infeasible => RunStatus::Infeasible,
            SolveStatus::Stalled => RunStatus::Stalled,
        };
        Ok((status, (rep, dec)))
    });
    if let Some((rep, dec)) = solved {
        record_solver(report, &rep, &dec);
    }
}

fn realize_task(config: &ProblemConfig, p: &AnnulusParams, report: &mut RunReport, full: bool) {
    let Some((model, rep, dec)) = run_stage(report, "solve", |res| {
        let model = pick_model(p, &config.nodes, &config.targets).map_err(|e| e.to_string())?;
        let opts = SolveOptions {
            tol: config.tol,
            max_iter: 40_000,
            seed: config.seed,
        };
        let (rep, dec) = solve_with_doubling(
            |n| {
                assemble_system(
                    p,
                    &model.t,
                    &model.x,
                    &sample_test_set(n)?,
                    config.truncation,
                )
            },
            config.num_atoms,
            4 * config.num_atoms,
            &opts,
        )
        .map_err(|e| e.to_string())?;
        res.insert("constraint".to_string(), rep.residual);
        let status = match rep.status {
            SolveStatus::Feasible => RunStatus::Pass,
            SolveStatus::Infeasible => RunStatus::Infeasible,
            SolveStatus::Stalled => RunStatus::Stalled,
        };
        Ok((status, (model, rep, dec)))
    }) else {
        return;
    };
    record_solver(report, &rep, &dec);
    if rep.status != SolveStatus::Feasible {
        return;
    }

    let Some((col, r_defect)) = run_stage(report, "colligation", |res| {
        let n = config.nodes.len();
        let mut table = PowerTable::new(&model.t, p.q()).map_err(|e| e.to_string())?;
        let id = CMat::identity(n, n);
        let b0 = hereditary::inv_k_hereditary(p, &mut table, &id, &SeriesControl::default())
            .map_err(|e| e.to_string())?;
        // the lurking isometry factors (1/k)[I], which is exactly rank
        // one on the model; the series route cross-checks the closed form
        let ones = CMat::from_element(1, n, C64::new(1.0, 0.0));
        let r_defect = &ones * &model.gram_inv_sqrt;
        let agreement =
            (r_defect.adjoint() * &r_defect - linalg::hermitian_part(&b0)).norm();
        res.insert("defect-agreement".to_string(), agreement);
        let col = build_colligation(
            p,
            &model.t,
            &model.x,
            &r_defect,
            &dec,
            1,
            config.truncation,
        )
        .map_err(|e| e.to_string())?;
        let state = col.state_dim();
        let coeff = col.coeff_dim();
        let total = state + coeff;
        let mut u = CMat::zeros(total, total);
        u.view_mut((0, 0), (state, state)).copy_from(&col.a);
        u.view_mut((0, state), (state, coeff)).copy_from(&col.b);
        u.view_mut((state, 0), (coeff, state)).copy_from(&col.c);
        u.view_mut((state, state), (coeff, coeff)).copy_from(&col.d);
        let eye = CMat::identity(total, total);
        let unitarity = (u.adjoint() * &u - &eye)
            .norm()
            .max((&u * u.adjoint() - &eye).norm());
        res.insert("unitarity".to_string(), unitarity);
        let ok = agreement < tolerances::LIFTING_TOL && unitarity < 1e-8;
        Ok((status_from(ok), (col, r_defect)))
    }) else {
        return;
    };
    report.artifacts.colligation = Some(colligation_payload(&col));

    run_stage(report, "interpolation", |res| {
        let mut worst = 0.0f64;
        for (&z, &w) in config.nodes.iter().zip(&config.targets) {
            let val = col.transfer_eval(z).map_err(|e| e.to_string())?;
            worst = worst.max((val[(0, 0)] - w).norm());
        }
        res.insert("w-interpolation".to_string(), worst);
        Ok((status_from(worst < tolerances::ROUNDTRIP_TOL), ()))
    });

    if !full {
        return;
    }

    let grid = run_stage(report, "schur-grid", |res| {
        let points: Vec<C64> = (0..200)
            .map(|i| {
                let radius = p.q() + (1.0 - p.q()) * ((i % 20) as f64 + 0.5) / 20.0;
                C64::from_polar(radius, std::f64::consts::TAU * (i as f64) * 0.618_033_988_75)
            })
            .collect();
        let rows = parallel_map(&points, |&z| -> Result<SchurSample, String> {
            let val = col.transfer_eval(z).map_err(|e| e.to_string())?;
            Ok(SchurSample {
                z,
                sigma_max: linalg::op_norm(&val),
            })
        });
        let mut worst = 0.0f64;
        let mut samples = Vec::with_capacity(points.len());
        for r in rows {
            let sample = r?;
            worst = worst.max(sample.sigma_max);
            samples.push(sample);
        }
        res.insert("sigma-max".to_string(), worst);
        Ok((
            status_from(worst <= 1.0 + tolerances::CONTRACTION_SLACK),
            samples,
        ))
    });
    report.artifacts.schur_grid = grid;

    run_stage(report, "commutant", |res| {
        let mut table = PowerTable::new(&model.t, p.q()).map_err(|e| e.to_string())?;
        let lifting =
            hereditary::build_lifting(&mut table, &r_defect, config.truncation, 1.0);
        let isometry = (lifting.v.adjoint() * &lifting.v
            - CMat::identity(config.nodes.len(), config.nodes.len()))
        .norm();
        res.insert("lifting-isometry".to_string(), isometry);
        let residual = commutant_residual(&col, &model.x, &lifting).map_err(|e| e.to_string())?;
        res.insert("commutant".to_string(), residual);
        let ok = isometry < tolerances::LIFTING_TOL && residual < tolerances::ROUNDTRIP_TOL;
        Ok((status_from(ok), ()))
    });
}

/// Default model node for the converse sweep: close to the common zero
/// of the test-function family at √q, where the extracted measures
/// settle fastest, while staying inside the annulus for any q.
fn converse_default_node(p: &AnnulusParams) -> C64 {
    let radius = (0.9 * p.sqrt_q()).max(0.5 * (p.q() + p.sqrt_q()));
    C64::new(radius, 0.0)
}

fn converse_task(config: &ProblemConfig, p: &AnnulusParams, report: &mut RunReport) {
    let Some(col) = run_stage(report, "colligation", |_| {
        let gammas = sample_test_set(config.num_atoms).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let col = random_colligation(p, &gammas, 1, 1, &mut rng).map_err(|e| e.to_string())?;
        Ok((RunStatus::Pass, col))
    }) else {
        return;
    };
    report.artifacts.colligation = Some(colligation_payload(&col));

    let Some((model, x, mut table)) = run_stage(report, "commuting-pair", |res| {
        let nodes = if config.nodes.is_empty() {
            vec![converse_default_node(p)]
        } else {
            config.nodes.clone()
        };
        let zeros = vec![C64::new(0.0, 0.0); nodes.len()];
        let model = pick_model(p, &nodes, &zeros).map_err(|e| e.to_string())?;
        let mut table = PowerTable::new(&model.t, p.q()).map_err(|e| e.to_string())?;
        let x = transfer_of_operator(&col, &mut table, 40, 1.0).map_err(|e| e.to_string())?;
        let commutation = (&model.t * &x - &x * &model.t).norm();
        res.insert("commutation".to_string(), commutation);
        Ok((status_from(commutation < 1e-8), (model, x, table)))
    }) else {
        return;
    };

    let Some(final_dec) = run_stage(report, "extraction-sweep", |res| {
        let n = model.t.nrows();
        let id = CMat::identity(n, n);
        let b0 = hereditary::inv_k_hereditary(p, &mut table, &id, &SeriesControl::default())
            .map_err(|e| e.to_string())?;
        let ones = CMat::from_element(1, n, C64::new(1.0, 0.0));
        let r_defect = &ones * &model.gram_inv_sqrt;
        let agreement =
            (r_defect.adjoint() * &r_defect - linalg::hermitian_part(&b0)).norm();
        res.insert("defect-agreement".to_string(), agreement);
        // the compressed kernels shed their Laurent tails slowly as the
        // damping lifts, so the lifting window is widened past the
        // configured truncation
        let lifting =
            hereditary::build_lifting(&mut table, &r_defect, config.truncation.max(250), 1.0);
        let mut worst_eig = f64::INFINITY;
        let mut balances = Vec::new();
        let mut final_dec = None;
        for &r in &[0.9, 0.99, 0.999] {
            let dec =
                extract_decomposition(&col, &lifting, r).map_err(|e| e.to_string())?;
            for atom in &dec.atoms {
                let scale = atom.norm().max(1e-300);
                worst_eig = worst_eig.min(linalg::min_eig_hermitian(atom) / scale);
            }
            let balance = crate::realization::balance_residual(
                p,
                &model.t,
                &x,
                &dec,
                config.truncation,
            )
            .map_err(|e| e.to_string())?;
            res.insert(format!("balance[r={r}]"), balance);
            balances.push(balance);
            final_dec = Some(dec);
        }
        res.insert("psd-min-eig".to_string(), worst_eig);
        let monotone = balances.windows(2).all(|w| w[1] < w[0]);
        let ok = monotone
            && balances.last().copied().unwrap_or(f64::INFINITY)
                < tolerances::CONVERSE_FINAL_TOL
            && worst_eig > -1e-8
            && agreement < tolerances::LIFTING_TOL;
        Ok((status_from(ok), final_dec.expect("sweep is nonempty")))
    }) else {
        return;
    };
    report.artifacts.atoms = Some(atom_payloads(&final_dec));

    run_stage(report, "schur-domination", |res| {
        let family =
            TestFunctionFamily::new(p, config.truncation).map_err(|e| e.to_string())?;
        let mut phis = Vec::new();
        for &g in final_dec.gammas.iter().take(2) {
            phis.push(family.coeffs_for(g).map_err(|e| e.to_string())?);
        }
        let dom = check_schur_domination(p, &model.t, &final_dec, &phis, config.truncation)
            .map_err(|e| e.to_string())?;
        res.insert("worst".to_string(), dom.worst);
        Ok((status_from(dom.worst > -1e-6), ()))
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// The report as a pretty-printed JSON document with stable field order.
pub fn report_json(report: &RunReport) -> Result<String, HarnessError> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| HarnessError::Encode(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

/// Persist a report under `dir`: `report.json` for the JSON format, one
/// CSV per embedded grid otherwise.  Returns the written paths.
pub fn emit_report(
    report: &RunReport,
    format: ReportFormat,
    dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    match format {
        ReportFormat::Json => {
            let path = dir.join("report.json");
            write_text(&path, &report_json(report)?)?;
            written.push(path);
        }
        ReportFormat::Csv => {
            if let Some(grid) = &report.artifacts.kernel_grid {
                let mut text = String::from("z_re,z_im,w_re,w_im,k_re,k_im,tail_bound\n");
                for s in grid {
                    text.push_str(&format!(
                        "{},{},{},{},{},{},{}\n",
                        s.z.re, s.z.im, s.w.re, s.w.im, s.value.re, s.value.im, s.tail_bound
                    ));
                }
                let path = dir.join("kernel_grid.csv");
                write_text(&path, &text)?;
                written.push(path);
            }
            if let Some(grid) = &report.artifacts.schur_grid {
                let mut text = String::from("z_re,z_im,sigma_max\n");
                for s in grid {
                    text.push_str(&format!("{},{},{}\n", s.z.re, s.z.im, s.sigma_max));
                }
                let path = dir.join("schur_grid.csv");
                write_text(&path, &text)?;
                written.push(path);
            }
            if let Some(sweep) = &report.artifacts.deflation_sweep {
                let count = sweep.first().map(|s| s.singular_values.len()).unwrap_or(0);
                let mut text = String::from("gamma_re,gamma_im");
                for i in 1..=count {
                    text.push_str(&format!(",sigma{i}"));
                }
                text.push('\n');
                for s in sweep {
                    text.push_str(&format!("{},{}", s.gamma.re, s.gamma.im));
                    for v in &s.singular_values {
                        text.push_str(&format!(",{v}"));
                    }
                    text.push('\n');
                }
                let path = dir.join("deflation_sweep.csv");
                write_text(&path, &text)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}
