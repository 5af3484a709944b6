//! Python bindings: scenario generators, the solver, its report, and the
//! standalone collision and projection helpers.

use std::path::PathBuf;

use amswarm_core::basis::BasisKind;
use amswarm_core::problem::{self, Obstacle, Vec3};
use amswarm_core::solver::{self, InitMode};
use amswarm_core::validation;
use amswarm_core::{BasisConfig, Error};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::CacheFormat(_) => PyOSError::new_err(e.to_string()),
        Error::SingularKkt { .. } | Error::RankDeficient { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A trajectory problem: boundary states, geometry, obstacles and basis.
#[pyclass(name = "ProblemSpec", module = "amswarm")]
struct PySpec {
    inner: problem::ProblemSpec,
}

#[pymethods]
impl PySpec {
    /// Agents on the perimeter of a square, each flying to its antipode.
    #[staticmethod]
    #[pyo3(signature = (n, side=8.0, radius=0.4, altitude=1.0))]
    fn square(n: usize, side: f64, radius: f64, altitude: f64) -> PyResult<Self> {
        let inner = problem::generate_square(n, side, radius, altitude).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (n, bounds=(8.0, 8.0, 3.0), radius=0.4, seed=0))]
    fn random(n: usize, bounds: (f64, f64, f64), radius: f64, seed: u64) -> PyResult<Self> {
        let inner = problem::generate_random(n, bounds.into(), radius, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (n, n_obs, bounds=(12.0, 12.0, 4.0), radius=0.3, obstacle_radius=0.3, seed=0))]
    fn random_obstacles(
        n: usize,
        n_obs: usize,
        bounds: (f64, f64, f64),
        radius: f64,
        obstacle_radius: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let inner =
            problem::generate_random_with_obstacles(n, bounds.into(), radius, n_obs, obstacle_radius, seed)
                .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (n, length=10.0, width=2.0, radius=0.4))]
    fn hallway(n: usize, length: f64, width: f64, radius: f64) -> PyResult<Self> {
        let inner = problem::generate_hallway(n, length, width, radius).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = problem::ProblemSpec::from_json(text).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = problem::ProblemSpec::load(&path).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    /// Jitter every start and goal position by up to `amplitude` per axis.
    fn perturbed(&self, amplitude: f64, seed: u64) -> Self {
        Self {
            inner: problem::perturb_positions(&self.inner, amplitude, seed),
        }
    }

    /// Copy with some basis settings replaced.
    #[pyo3(signature = (m=None, degree=None, duration=None, kind=None))]
    fn with_basis(
        &self,
        m: Option<usize>,
        degree: Option<usize>,
        duration: Option<f64>,
        kind: Option<&str>,
    ) -> PyResult<Self> {
        let b = self.inner.basis;
        let kind = match kind {
            Some(k) => k.parse::<BasisKind>().map_err(PyValueError::new_err)?,
            None => b.kind,
        };
        let basis = BasisConfig {
            m: m.unwrap_or(b.m),
            degree: degree.unwrap_or(b.degree),
            duration: duration.unwrap_or(b.duration),
            kind,
        };
        Ok(Self {
            inner: self.inner.clone().with_basis(basis),
        })
    }

    /// Human-readable validation failures; empty when the problem is valid.
    fn validate(&self) -> Vec<String> {
        problem::validate(&self.inner)
            .iter()
            .map(ToString::to_string)
            .collect()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn n_obs(&self) -> usize {
        self.inner.n_obs()
    }

    #[getter]
    fn start(&self) -> Vec<Vec3> {
        self.inner.start.iter().map(|s| s.position).collect()
    }

    #[getter]
    fn goal(&self) -> Vec<Vec3> {
        self.inner.goal.iter().map(|s| s.position).collect()
    }

    /// `(l_xy, l_z)` of the pairwise safety spheroid.
    #[getter]
    fn geometry(&self) -> (f64, f64) {
        (self.inner.geometry.l_xy, self.inner.geometry.l_z)
    }

    #[getter]
    fn obstacles(&self) -> Vec<(Vec3, f64)> {
        self.inner
            .obstacles
            .iter()
            .map(|o| (o.center, o.radius))
            .collect()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.basis.m
    }

    fn __repr__(&self) -> String {
        format!(
            "ProblemSpec(n={}, n_obs={}, m={}, degree={}, duration={})",
            self.inner.n(),
            self.inner.n_obs(),
            self.inner.basis.m,
            self.inner.basis.degree,
            self.inner.basis.duration
        )
    }
}

#[pyclass(name = "SolverConfig", module = "amswarm", get_all, set_all)]
struct PyConfig {
    max_iters: usize,
    tolerance: f64,
    rho_initial: f64,
    rho_growth: f64,
    rho_stages: usize,
    init: String,
    init_bulge: f64,
}

impl PyConfig {
    fn to_core(&self) -> PyResult<solver::SolverConfig> {
        let init = match self.init.as_str() {
            "straight-line" => InitMode::StraightLine,
            "min-acceleration" => InitMode::MinimumAcceleration,
            other => return Err(PyValueError::new_err(format!("unknown init mode '{other}'"))),
        };
        Ok(solver::SolverConfig {
            max_iters: self.max_iters,
            tolerance: self.tolerance,
            rho_initial: self.rho_initial,
            rho_growth: self.rho_growth,
            rho_stages: self.rho_stages,
            init,
            init_bulge: self.init_bulge,
        })
    }
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (
        max_iters=None, tolerance=None, rho_initial=None, rho_growth=None,
        rho_stages=None, init=None, init_bulge=None
    ))]
    fn new(
        max_iters: Option<usize>,
        tolerance: Option<f64>,
        rho_initial: Option<f64>,
        rho_growth: Option<f64>,
        rho_stages: Option<usize>,
        init: Option<String>,
        init_bulge: Option<f64>,
    ) -> Self {
        let d = solver::SolverConfig::default();
        Self {
            max_iters: max_iters.unwrap_or(d.max_iters),
            tolerance: tolerance.unwrap_or(d.tolerance),
            rho_initial: rho_initial.unwrap_or(d.rho_initial),
            rho_growth: rho_growth.unwrap_or(d.rho_growth),
            rho_stages: rho_stages.unwrap_or(d.rho_stages),
            init: init.unwrap_or_else(|| "straight-line".into()),
            init_bulge: init_bulge.unwrap_or(d.init_bulge),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "SolverConfig(max_iters={}, tolerance={}, rho_initial={}, rho_growth={}, rho_stages={})",
            self.max_iters, self.tolerance, self.rho_initial, self.rho_growth, self.rho_stages
        )
    }
}

/// Factorization cache shared between solves, optionally backed by a directory.
#[pyclass(name = "KktCache", module = "amswarm", frozen)]
struct PyCache {
    inner: amswarm_core::KktCache,
}

#[pymethods]
impl PyCache {
    #[new]
    #[pyo3(signature = (directory=None))]
    fn new(directory: Option<PathBuf>) -> Self {
        let inner = match directory {
            Some(d) => amswarm_core::KktCache::with_disk(d),
            None => amswarm_core::KktCache::new(),
        };
        Self { inner }
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.inner.stats();
        let d = PyDict::new(py);
        d.set_item("hits", s.hits)?;
        d.set_item("misses", s.misses)?;
        d.set_item("disk_loads", s.disk_loads)?;
        d.set_item("factorizations", s.factorizations)?;
        Ok(d)
    }
}

#[pyclass(name = "SolveReport", module = "amswarm", frozen)]
struct PyReport {
    inner: solver::SolveReport,
}

#[pymethods]
impl PyReport {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = solver::SolveReport::from_json(text).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    /// Converged and collision-free.
    fn succeeded(&self) -> bool {
        self.inner.succeeded()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    /// Max-abs constraint residual after the last iteration.
    #[getter]
    fn final_residual(&self) -> f64 {
        self.inner.final_residual.max_abs
    }

    #[getter]
    fn residual_history(&self) -> Vec<f64> {
        self.inner.residual_history.iter().map(|s| s.max_abs).collect()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    /// `trajectories[i][r]` is agent `i`'s position at sample `r`.
    #[getter]
    fn trajectories(&self) -> Vec<Vec<Vec3>> {
        self.inner.trajectories.clone()
    }

    #[getter]
    fn min_normalized_distance(&self) -> f64 {
        self.inner.metrics.min_normalized_distance
    }

    #[getter]
    fn collision_free(&self) -> bool {
        self.inner.metrics.collision_free
    }

    #[getter]
    fn arc_length(&self) -> Vec<f64> {
        self.inner.metrics.trajectory.arc_length.clone()
    }

    #[getter]
    fn smoothness(&self) -> Vec<f64> {
        self.inner.metrics.trajectory.smoothness.clone()
    }

    #[getter]
    fn timings<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let t = self.inner.timings;
        let d = PyDict::new(py);
        d.set_item("assembly_s", t.assembly_s)?;
        d.set_item("factorization_s", t.factorization_s)?;
        d.set_item("loop_s", t.loop_s)?;
        Ok(d)
    }

    #[getter]
    fn census<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = self.inner.census;
        let d = PyDict::new(py);
        d.set_item("kkt_solves", c.kkt_solves)?;
        d.set_item("loop_factorizations", c.loop_factorizations)?;
        d.set_item("cache_hits", c.cache_hits)?;
        d.set_item("cache_misses", c.cache_misses)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "SolveReport(n={}, converged={}, iterations={}, final_residual={:.3e})",
            self.inner.n, self.inner.converged, self.inner.iterations, self.inner.final_residual.max_abs
        )
    }
}

/// Run the optimizer. The GIL is released while solving.
#[pyfunction]
#[pyo3(signature = (spec, config=None, cache=None))]
fn solve(
    py: Python<'_>,
    spec: PyRef<'_, PySpec>,
    config: Option<PyRef<'_, PyConfig>>,
    cache: Option<PyRef<'_, PyCache>>,
) -> PyResult<PyReport> {
    let config = match config {
        Some(c) => c.to_core()?,
        None => solver::SolverConfig::default(),
    };
    let spec = spec.inner.clone();
    let report = match cache {
        Some(c) => {
            let cache = &c.inner;
            py.detach(|| amswarm_core::am_solve_cached(&spec, &config, cache))
        }
        None => py.detach(|| amswarm_core::am_solve(&spec, &config)),
    }
    .map_err(to_py)?;
    Ok(PyReport { inner: report })
}

/// Minimum normalized distance and violation count over sampled trajectories.
#[pyfunction]
#[pyo3(signature = (trajectories, l_xy, l_z, obstacles=Vec::new()))]
fn check_collisions(
    trajectories: Vec<Vec<Vec3>>,
    l_xy: f64,
    l_z: f64,
    obstacles: Vec<(Vec3, f64)>,
) -> PyResult<(f64, usize)> {
    let geometry = amswarm_core::AgentGeometry { l_xy, l_z };
    let obstacles: Vec<Obstacle> = obstacles
        .into_iter()
        .map(|(center, radius)| Obstacle { center, radius })
        .collect();
    let r = validation::check_collisions(&trajectories, &geometry, &obstacles).map_err(to_py)?;
    Ok((r.min_normalized_distance, r.violations.len()))
}

#[pyfunction]
fn arc_length(trajectory: Vec<Vec3>) -> f64 {
    validation::arc_length(&trajectory)
}

#[pyfunction]
fn smoothness(trajectory: Vec<Vec3>) -> f64 {
    validation::smoothness(&trajectory)
}

/// `(alpha, beta)` of a pairwise difference on the spheroid family.
#[pyfunction]
fn project_alpha_beta(dx: f64, dy: f64, dz: f64, l_xy: f64, l_z: f64) -> (f64, f64) {
    solver::project_alpha_beta(dx, dy, dz, l_xy, l_z)
}

/// Scale `d >= 1` of the spheroid point closest to `g` along `(alpha, beta)`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn solve_d(gx: f64, gy: f64, gz: f64, alpha: f64, beta: f64, l_xy: f64, l_z: f64) -> f64 {
    solver::solve_d(gx, gy, gz, alpha, beta, l_xy, l_z)
}

#[pymodule]
fn amswarm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpec>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyCache>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(check_collisions, m)?)?;
    m.add_function(wrap_pyfunction!(arc_length, m)?)?;
    m.add_function(wrap_pyfunction!(smoothness, m)?)?;
    m.add_function(wrap_pyfunction!(project_alpha_beta, m)?)?;
    m.add_function(wrap_pyfunction!(solve_d, m)?)?;
    Ok(())
}
