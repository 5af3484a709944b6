//! Joint trajectory optimization for agent swarms.
//!
//! Collision avoidance between every pair of agents is rewritten as a set of
//! equalities on auxiliary spheroid variables, and the resulting augmented
//! Lagrangian is minimized block by block. The trajectory block is an
//! equality-constrained QP whose KKT matrix never changes across iterations,
//! so it is factored once per penalty weight (see [`kkt::KktCache`]) and each
//! iteration costs three triangular solves plus element-wise vector work.
//!
//! ```no_run
//! use amswarm_core::{problem, solver};
//!
//! let spec = problem::generate_square(8, 8.0, 0.4, 1.0).unwrap();
//! let report = solver::am_solve(&spec, &solver::SolverConfig::default()).unwrap();
//! println!("converged: {} after {} iterations", report.converged, report.iterations);
//! ```

pub mod basis;
pub mod error;
pub mod kkt;
pub mod problem;
pub mod solver;
pub mod validation;

pub use error::{Error, Result};
pub use kkt::{KktCache, KktFactor, RhoSchedule};
pub use problem::{AgentGeometry, BasisConfig, BoundaryState, Obstacle, ProblemSpec};
pub use solver::{am_solve, am_solve_cached, SolveReport, Solver, SolverConfig};
