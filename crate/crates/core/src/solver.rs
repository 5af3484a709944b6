//! Alternating minimization over the reformulated collision constraints.
//!
//! Each pairwise difference is written as a point on a scaled spheroid,
//!
//! ```text
//! x_i - x_j = l_xy d sin(beta) cos(alpha)
//! y_i - y_j = l_xy d sin(beta) sin(alpha)
//! z_i - z_j = l_z  d cos(beta),          d >= 1
//! ```
//!
//! and one iteration cycles through: three coefficient solves against the
//! cached KKT factorization (one per axis), a closed-form projection for
//! `(alpha, beta)`, a clipped closed-form step for `d`, and a multiplier
//! update. Everything after the coefficient solves is element-wise over the
//! `m * pairs` stacked entries and runs in index order.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisMatrices;
use crate::error::{validation, Result};
use crate::kkt::{
    boundary_rhs, build_rho_schedule, CacheOutcome, KktAssembly, KktCache, KktFactor, Pair, RhoSchedule,
};
use crate::problem::{ensure_valid, ProblemSpec, Vec3};
use crate::validation::{check_collisions, TrajectoryMetrics, COLLISION_ACCEPTANCE_MARGIN};

pub const AXES: usize = 3;

/// How coefficients are seeded before the first iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Least-squares fit of the straight start-to-goal segment, subject to
    /// the boundary conditions.
    #[default]
    StraightLine,
    /// Minimum-acceleration trajectory of each agent in isolation.
    MinimumAcceleration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop once the largest constraint residual component falls to this (m).
    pub tolerance: f64,
    pub rho_initial: f64,
    pub rho_growth: f64,
    pub rho_stages: usize,
    pub init: InitMode,
    /// Spread (m) of per-agent vertical offsets added to the straight-line
    /// fit, peaking mid-flight. Agent `i` is lifted by
    /// `init_bulge * (i / (n - 1) - 1/2)`, which breaks exact head-on symmetry.
    pub init_bulge: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 150,
            tolerance: 1e-2,
            rho_initial: 1.0,
            rho_growth: 2.0,
            rho_stages: 10,
            init: InitMode::StraightLine,
            init_bulge: 0.5,
        }
    }
}

impl SolverConfig {
    pub fn schedule(&self) -> Result<RhoSchedule> {
        if !(self.tolerance >= 0.0) {
            return Err(validation(
                "tolerance",
                format!("must be non-negative, got {}", self.tolerance),
            ));
        }
        build_rho_schedule(self.rho_initial, self.rho_growth, self.rho_stages, self.max_iters)
    }
}

/// Spheroid parameters for every stacked pair entry.
#[derive(Debug, Clone, PartialEq)]
pub struct PairVariables {
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    pub d: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ResidualSample {
    pub norm: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone)]
pub struct SolverState {
    /// Stacked coefficients per axis, agent-major.
    pub coeffs: [DVector<f64>; AXES],
    pub vars: PairVariables,
    /// Multipliers per axis, stacked like the pair variables.
    pub lambda: [DVector<f64>; AXES],
    pub iteration: usize,
    pub stage: usize,
    pub history: Vec<ResidualSample>,
    /// `(l_xy, l_z)` of each pair.
    pub scales: Vec<(f64, f64)>,
    /// Constant position subtracted from each pair's difference (obstacle
    /// centers; zero for agent pairs).
    pub offsets: Vec<Vec3>,
    pub m: usize,
}

impl SolverState {
    pub fn entries(&self) -> usize {
        self.scales.len() * self.m
    }

    fn scale(&self, entry: usize) -> (f64, f64) {
        self.scales[entry / self.m]
    }

    /// Unit-`d` spheroid point `(l_xy sb ca, l_xy sb sa, l_z cb)` of an entry.
    fn direction(&self, entry: usize) -> Vec3 {
        let (l_xy, l_z) = self.scale(entry);
        let (sa, ca) = self.vars.alpha[entry].sin_cos();
        let (sb, cb) = self.vars.beta[entry].sin_cos();
        [l_xy * sb * ca, l_xy * sb * sa, l_z * cb]
    }
}

/// Project a pairwise difference onto the spheroid family.
///
/// Returns `(alpha, beta)` with `alpha = atan2(dy, dx)` and
/// `beta = atan2(hypot(dx, dy) / l_xy, dz / l_z)`, so `beta` lies in `[0, pi]`.
/// A zero difference maps to `(0, pi/2)`.
pub fn project_alpha_beta(dx: f64, dy: f64, dz: f64, l_xy: f64, l_z: f64) -> (f64, f64) {
    if dx == 0.0 && dy == 0.0 && dz == 0.0 {
        return (0.0, FRAC_PI_2);
    }
    let alpha = dy.atan2(dx);
    let beta = (dx.hypot(dy) / l_xy).atan2(dz / l_z);
    (alpha, beta)
}

/// Scale `k` at which the projected direction reproduces the difference.
pub fn projection_scale(dx: f64, dy: f64, dz: f64, l_xy: f64, l_z: f64) -> f64 {
    (dx.hypot(dy) / l_xy).hypot(dz / l_z)
}

/// Minimize `|g - d u(alpha, beta)|^2` over `d >= 1`, where `u` is the unit-`d`
/// spheroid point. `g` is the pairwise difference shifted by `lambda / rho`.
pub fn solve_d(gx: f64, gy: f64, gz: f64, alpha: f64, beta: f64, l_xy: f64, l_z: f64) -> f64 {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let num = l_xy * sb * (gx * ca + gy * sa) + l_z * cb * gz;
    let den = l_xy * l_xy * sb * sb + l_z * l_z * cb * cb;
    (num / den).max(1.0)
}

/// Per-pair spheroid scales and constant offsets, in pair order.
pub fn pair_context(spec: &ProblemSpec, assembly: &KktAssembly) -> (Vec<(f64, f64)>, Vec<Vec3>) {
    let g = spec.geometry;
    assembly
        .pairwise
        .pairs
        .iter()
        .map(|pair| match *pair {
            Pair::Agents(..) => ((g.l_xy, g.l_z), [0.0; 3]),
            Pair::Obstacle { obstacle, .. } => {
                let o = &spec.obstacles[obstacle];
                let s = g.obstacle_pair(o);
                ((s.l_xy, s.l_z), o.center)
            }
        })
        .unzip()
}

/// Stacked pairwise differences `A_fc c - offset` per axis.
pub fn pair_differences(state: &SolverState, assembly: &KktAssembly) -> [DVector<f64>; AXES] {
    let m = state.m;
    std::array::from_fn(|axis| {
        let mut delta = assembly.pairwise.apply(&state.coeffs[axis]);
        for (k, off) in state.offsets.iter().enumerate() {
            if off[axis] != 0.0 {
                delta.rows_mut(k * m, m).add_scalar_mut(-off[axis]);
            }
        }
        delta
    })
}

/// Target of one axis' coefficient step:
/// `offset + l d (spheroid component) - lambda / rho`.
pub fn build_b_fc(state: &SolverState, axis: usize, rho: f64) -> DVector<f64> {
    let m = state.m;
    DVector::from_fn(state.entries(), |e, _| {
        let u = state.direction(e);
        state.offsets[e / m][axis] + state.vars.d[e] * u[axis] - state.lambda[axis][e] / rho
    })
}

/// [`build_b_fc`] for all three axes in one pass.
pub fn build_b_fc_all(state: &SolverState, rho: f64) -> [DVector<f64>; AXES] {
    let m = state.m;
    let mut out: [DVector<f64>; AXES] = std::array::from_fn(|_| DVector::zeros(state.entries()));
    for e in 0..state.entries() {
        let u = state.direction(e);
        let off = state.offsets[e / m];
        for axis in 0..AXES {
            out[axis][e] = off[axis] + state.vars.d[e] * u[axis] - state.lambda[axis][e] / rho;
        }
    }
    out
}

/// Constraint residuals `difference - l d (spheroid component)` per axis.
pub fn constraint_residuals(state: &SolverState, deltas: &[DVector<f64>; AXES]) -> [DVector<f64>; AXES] {
    let mut out: [DVector<f64>; AXES] = std::array::from_fn(|_| DVector::zeros(state.entries()));
    for e in 0..state.entries() {
        let u = state.direction(e);
        let d = state.vars.d[e];
        for axis in 0..AXES {
            out[axis][e] = deltas[axis][e] - d * u[axis];
        }
    }
    out
}

fn summarize(residuals: &[DVector<f64>; AXES]) -> ResidualSample {
    let mut sq = 0.0;
    let mut max_abs: f64 = 0.0;
    for r in residuals {
        for v in r.iter() {
            sq += v * v;
            max_abs = max_abs.max(v.abs());
        }
    }
    ResidualSample {
        norm: sq.sqrt(),
        max_abs,
    }
}

/// Euclidean norm and max-abs of the stacked constraint residual.
pub fn compute_residual(state: &SolverState, assembly: &KktAssembly) -> ResidualSample {
    summarize(&constraint_residuals(state, &pair_differences(state, assembly)))
}

/// `lambda += rho * residual`, component-wise.
pub fn update_multipliers(state: &mut SolverState, residuals: &[DVector<f64>; AXES], rho: f64) {
    for (lambda, r) in state.lambda.iter_mut().zip(residuals) {
        lambda.axpy(rho, r, 1.0);
    }
}

/// Re-project `(alpha, beta)` from the differences, then take the `d` step.
pub fn update_pair_variables(state: &mut SolverState, deltas: &[DVector<f64>; AXES], rho: f64) {
    for e in 0..state.entries() {
        let (l_xy, l_z) = state.scale(e);
        let (dx, dy, dz) = (deltas[0][e], deltas[1][e], deltas[2][e]);
        let (alpha, beta) = project_alpha_beta(dx, dy, dz, l_xy, l_z);
        state.vars.alpha[e] = alpha;
        state.vars.beta[e] = beta;
        state.vars.d[e] = solve_d(
            dx + state.lambda[0][e] / rho,
            dy + state.lambda[1][e] / rho,
            dz + state.lambda[2][e] / rho,
            alpha,
            beta,
            l_xy,
            l_z,
        );
    }
}

/// Augmented cost `sum_axes 1/2 c^T Q c + rho/2 |A_fc c - b_fc|^2`.
pub fn augmented_cost(state: &SolverState, assembly: &KktAssembly, rho: f64) -> f64 {
    (0..AXES)
        .map(|axis| {
            let c = &state.coeffs[axis];
            let smooth = 0.5 * c.dot(&(&assembly.q * c));
            let b = build_b_fc(state, axis, rho);
            let r = assembly.pairwise.apply(c) - b;
            smooth + 0.5 * rho * r.norm_squared()
        })
        .sum()
}

fn small_kkt_solve(
    h: &DMatrix<f64>,
    a: &DMatrix<f64>,
    g: &DVector<f64>,
    b: &DVector<f64>,
) -> Result<DVector<f64>> {
    let nv = h.nrows();
    let nb = a.nrows();
    let mut k = DMatrix::zeros(nv + nb, nv + nb);
    k.view_mut((0, 0), (nv, nv)).copy_from(h);
    k.view_mut((nv, 0), (nb, nv)).copy_from(a);
    k.view_mut((0, nv), (nv, nb)).copy_from(&a.transpose());
    let mut rhs = DVector::zeros(nv + nb);
    rhs.rows_mut(0, nv).copy_from(g);
    rhs.rows_mut(nv, nb).copy_from(b);
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| validation("init", "initialization system is singular for this basis"))?;
    Ok(sol.rows(0, nv).into_owned())
}

/// Seed coefficients and pair variables; multipliers start at zero.
pub fn initialize(
    spec: &ProblemSpec,
    basis: &BasisMatrices,
    assembly: &KktAssembly,
    mode: InitMode,
    bulge: f64,
) -> Result<SolverState> {
    let n = spec.n();
    let n_v = basis.n_v();
    let m = basis.m();
    let b_eq = boundary_rhs(spec);
    let a = &assembly.equality.agent_rows;
    let rows = a.nrows();
    let h = match mode {
        InitMode::StraightLine => basis.p.tr_mul(&basis.p),
        InitMode::MinimumAcceleration => basis.pddot.tr_mul(&basis.pddot),
    };
    let duration = basis.grid.duration();
    let mut coeffs: [DVector<f64>; AXES] = std::array::from_fn(|_| DVector::zeros(n * n_v));
    for axis in 0..AXES {
        for agent in 0..n {
            let p0 = spec.start[agent].position[axis];
            let p1 = spec.goal[agent].position[axis];
            let lift = if axis == 2 && n > 1 {
                bulge * (agent as f64 / (n - 1) as f64 - 0.5)
            } else {
                0.0
            };
            let g = match mode {
                InitMode::StraightLine => {
                    let line = DVector::from_iterator(
                        m,
                        basis.grid.samples().iter().map(|t| {
                            let tau = t / duration;
                            p0 + (p1 - p0) * tau + lift * (std::f64::consts::PI * tau).sin()
                        }),
                    );
                    basis.p.tr_mul(&line)
                }
                InitMode::MinimumAcceleration => DVector::zeros(n_v),
            };
            let b = b_eq[axis].rows(agent * rows, rows).into_owned();
            let c = small_kkt_solve(&h, a, &g, &b)?;
            coeffs[axis].rows_mut(agent * n_v, n_v).copy_from(&c);
        }
    }
    let (scales, offsets) = pair_context(spec, assembly);
    let entries = scales.len() * m;
    let mut state = SolverState {
        coeffs,
        vars: PairVariables {
            alpha: DVector::zeros(entries),
            beta: DVector::from_element(entries, FRAC_PI_2),
            d: DVector::from_element(entries, 1.0),
        },
        lambda: std::array::from_fn(|_| DVector::zeros(entries)),
        iteration: 0,
        stage: 0,
        history: Vec::new(),
        scales,
        offsets,
        m,
    };
    let deltas = pair_differences(&state, assembly);
    for e in 0..entries {
        let (l_xy, l_z) = state.scale(e);
        let (dx, dy, dz) = (deltas[0][e], deltas[1][e], deltas[2][e]);
        let (alpha, beta) = project_alpha_beta(dx, dy, dz, l_xy, l_z);
        state.vars.alpha[e] = alpha;
        state.vars.beta[e] = beta;
        state.vars.d[e] = projection_scale(dx, dy, dz, l_xy, l_z).max(1.0);
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub assembly_s: f64,
    pub factorization_s: f64,
    pub loop_s: f64,
}

/// Work performed by one solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OperationCensus {
    /// Cached-factorization solves issued by the iteration loop.
    pub kkt_solves: usize,
    /// Factorizations the cache performed while the loop was running.
    pub loop_factorizations: usize,
    pub cache_hits: usize,
    pub cache_misses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisCoefficients {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetrics {
    #[serde(flatten)]
    pub trajectory: TrajectoryMetrics,
    pub min_normalized_distance: f64,
    pub collision_violations: usize,
    pub collision_free: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub n: usize,
    pub m: usize,
    pub times: Vec<f64>,
    /// `trajectories[i][r]` is agent `i` at `times[r]`.
    pub trajectories: Vec<Vec<Vec3>>,
    pub coefficients: AxisCoefficients,
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: ResidualSample,
    pub residual_history: Vec<ResidualSample>,
    pub rho_schedule: RhoSchedule,
    pub timings: PhaseTimings,
    pub census: OperationCensus,
    pub metrics: ReportMetrics,
}

impl SolveReport {
    /// Converged and clear of the collision acceptance margin.
    pub fn succeeded(&self) -> bool {
        self.converged && self.metrics.collision_free
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// One solve in progress: setup done, iterating on demand.
pub struct Solver<'c> {
    spec: ProblemSpec,
    config: SolverConfig,
    basis: BasisMatrices,
    assembly: Arc<KktAssembly>,
    schedule: RhoSchedule,
    factors: Vec<Arc<KktFactor>>,
    b_eq: [DVector<f64>; AXES],
    state: SolverState,
    cache: &'c KktCache,
    timings: PhaseTimings,
    census: OperationCensus,
    converged: bool,
}

impl<'c> Solver<'c> {
    /// Validate, assemble, fetch or build every stage's factorization, and initialize.
    pub fn new(spec: &ProblemSpec, config: &SolverConfig, cache: &'c KktCache) -> Result<Self> {
        ensure_valid(spec)?;
        let schedule = config.schedule()?;
        let started = Instant::now();
        let basis = spec.basis.build()?;
        let assembly = cache.assembly(spec.n(), spec.n_obs(), &basis)?;
        let assembly_s = started.elapsed().as_secs_f64();

        let started = Instant::now();
        let mut census = OperationCensus::default();
        let mut factors = Vec::with_capacity(schedule.values.len());
        for (factor, outcome) in cache.factors_for(&assembly, &schedule)? {
            if outcome == CacheOutcome::Factored {
                census.cache_misses += 1;
            } else {
                census.cache_hits += 1;
            }
            factors.push(factor);
        }
        let factorization_s = started.elapsed().as_secs_f64();

        let state = initialize(spec, &basis, &assembly, config.init, config.init_bulge)?;
        Ok(Self {
            spec: spec.clone(),
            config: config.clone(),
            b_eq: boundary_rhs(spec),
            basis,
            assembly,
            schedule,
            factors,
            state,
            cache,
            timings: PhaseTimings {
                assembly_s,
                factorization_s,
                loop_s: 0.0,
            },
            census,
            converged: false,
        })
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn assembly(&self) -> &KktAssembly {
        &self.assembly
    }

    pub fn basis(&self) -> &BasisMatrices {
        &self.basis
    }

    pub fn boundary_rhs(&self) -> &[DVector<f64>; AXES] {
        &self.b_eq
    }

    pub fn census(&self) -> OperationCensus {
        self.census
    }

    /// Penalty weight of the stage the next iteration runs in.
    pub fn current_rho(&self) -> f64 {
        self.schedule.rho_at(self.state.iteration)
    }

    pub fn is_converged(&self) -> bool {
        self.converged
    }

    /// Coefficient step for one axis with all other blocks fixed.
    pub fn step_axis(&mut self, axis: usize) -> Result<()> {
        let rho = self.current_rho();
        let b_fc = build_b_fc(&self.state, axis, rho);
        self.solve_axis_with(axis, &b_fc)
    }

    fn solve_axis_with(&mut self, axis: usize, b_fc: &DVector<f64>) -> Result<()> {
        let factor = &self.factors[self.schedule.stage_at(self.state.iteration)];
        let sol = factor.solve_axis(b_fc, &self.b_eq[axis])?;
        self.state.coeffs[axis] = sol.coeffs;
        self.census.kkt_solves += 1;
        Ok(())
    }

    /// Projection, `d` step and multiplier update; closes one iteration.
    pub fn step_pairs(&mut self) -> ResidualSample {
        let stage = self.schedule.stage_at(self.state.iteration);
        let rho = self.schedule.values[stage];
        let deltas = pair_differences(&self.state, &self.assembly);
        update_pair_variables(&mut self.state, &deltas, rho);
        let residuals = constraint_residuals(&self.state, &deltas);
        update_multipliers(&mut self.state, &residuals, rho);
        let sample = summarize(&residuals);
        self.state.stage = stage;
        self.state.iteration += 1;
        self.state.history.push(sample);
        if sample.max_abs <= self.config.tolerance {
            self.converged = true;
        }
        sample
    }

    /// One full iteration. The axis targets only depend on the pair
    /// variables and multipliers, so they are built once up front.
    pub fn iterate(&mut self) -> Result<ResidualSample> {
        let targets = build_b_fc_all(&self.state, self.current_rho());
        for (axis, b_fc) in targets.iter().enumerate() {
            self.solve_axis_with(axis, b_fc)?;
        }
        Ok(self.step_pairs())
    }

    /// Iterate to convergence or the iteration cap and build the report.
    pub fn run(mut self) -> Result<SolveReport> {
        self.run_with(|_| {})
    }

    /// As [`Solver::run`], calling `observer` after every iteration.
    pub fn run_with(&mut self, mut observer: impl FnMut(&Solver<'_>)) -> Result<SolveReport> {
        let factorizations_before = self.cache.stats().factorizations;
        let started = Instant::now();
        while !self.converged && self.state.iteration < self.config.max_iters {
            self.iterate()?;
            observer(self);
        }
        self.timings.loop_s = started.elapsed().as_secs_f64();
        self.census.loop_factorizations = self.cache.stats().factorizations - factorizations_before;
        self.report()
    }

    /// Sampled positions `P c` of every agent.
    pub fn trajectories(&self) -> Vec<Vec<Vec3>> {
        let samples: [Vec<DVector<f64>>; AXES] =
            std::array::from_fn(|axis| self.assembly.pairwise.sample_agents(&self.state.coeffs[axis]));
        (0..self.spec.n())
            .map(|i| {
                (0..self.state.m)
                    .map(|r| [samples[0][i][r], samples[1][i][r], samples[2][i][r]])
                    .collect()
            })
            .collect()
    }

    pub fn report(&self) -> Result<SolveReport> {
        let trajectories = self.trajectories();
        let collisions = check_collisions(&trajectories, &self.spec.geometry, &self.spec.obstacles)?;
        let collision_free = collisions.passes(COLLISION_ACCEPTANCE_MARGIN);
        let metrics = ReportMetrics {
            trajectory: TrajectoryMetrics::compute(&trajectories),
            min_normalized_distance: collisions.min_normalized_distance,
            collision_violations: collisions.violations.len(),
            collision_free,
        };
        let c = &self.state.coeffs;
        Ok(SolveReport {
            n: self.spec.n(),
            m: self.state.m,
            times: self.basis.grid.samples().to_vec(),
            trajectories,
            coefficients: AxisCoefficients {
                x: c[0].as_slice().to_vec(),
                y: c[1].as_slice().to_vec(),
                z: c[2].as_slice().to_vec(),
            },
            converged: self.converged,
            iterations: self.state.iteration,
            final_residual: self.state.history.last().copied().unwrap_or_default(),
            residual_history: self.state.history.clone(),
            rho_schedule: self.schedule.clone(),
            timings: self.timings,
            census: self.census,
            metrics,
        })
    }
}

/// Solve with a private factorization cache.
pub fn am_solve(spec: &ProblemSpec, config: &SolverConfig) -> Result<SolveReport> {
    let cache = KktCache::new();
    Solver::new(spec, config, &cache)?.run()
}

/// Solve sharing `cache` with other solves.
pub fn am_solve_cached(spec: &ProblemSpec, config: &SolverConfig, cache: &KktCache) -> Result<SolveReport> {
    Solver::new(spec, config, cache)?.run()
}
