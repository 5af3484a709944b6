//! Problem instances: agents, safety geometry, boundary states, obstacles,
//! and the benchmark scenario generators.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{self, BasisKind, BasisMatrices, TimeGrid};
use crate::error::{validation, Error, Result};

pub type Vec3 = [f64; 3];

pub const DEFAULT_DURATION: f64 = 10.0;
pub const DEFAULT_MAX_REJECTIONS: usize = 10_000;

/// Semi-axes of the pairwise safety spheroid.
///
/// Two agents `i`, `j` are separated when
/// `(dx/l_xy)^2 + (dy/l_xy)^2 + (dz/l_z)^2 >= 1` for their position difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentGeometry {
    pub l_xy: f64,
    pub l_z: f64,
}

impl AgentGeometry {
    /// Two spherical agents of radius `radius` must keep their centers `2 * radius` apart.
    pub fn sphere(radius: f64) -> Self {
        Self {
            l_xy: 2.0 * radius,
            l_z: 2.0 * radius,
        }
    }

    pub fn is_sphere(&self) -> bool {
        self.l_xy == self.l_z
    }

    /// Per-agent semi-axes (half of the pairwise ones).
    pub fn agent_semi_axes(&self) -> (f64, f64) {
        (0.5 * self.l_xy, 0.5 * self.l_z)
    }

    /// Separation spheroid between an agent and an obstacle sphere.
    pub fn obstacle_pair(&self, obstacle: &Obstacle) -> AgentGeometry {
        let (a_xy, a_z) = self.agent_semi_axes();
        AgentGeometry {
            l_xy: a_xy + obstacle.radius,
            l_z: a_z + obstacle.radius,
        }
    }

    pub fn normalized_distance(&self, diff: Vec3) -> f64 {
        let x = diff[0] / self.l_xy;
        let y = diff[1] / self.l_xy;
        let z = diff[2] / self.l_z;
        (x * x + y * y + z * z).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundaryState {
    pub position: Vec3,
    #[serde(default)]
    pub velocity: Vec3,
    #[serde(default)]
    pub acceleration: Vec3,
}

impl BoundaryState {
    pub fn at_rest(position: Vec3) -> Self {
        Self {
            position,
            ..Default::default()
        }
    }

    fn is_finite(&self) -> bool {
        self.position
            .iter()
            .chain(&self.velocity)
            .chain(&self.acceleration)
            .all(|v| v.is_finite())
    }

    fn is_at_rest(&self) -> bool {
        self.velocity == [0.0; 3] && self.acceleration == [0.0; 3]
    }
}

/// Static obstacle approximated by its circumscribing sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vec3,
    pub radius: f64,
}

/// Time discretization and basis choice for an instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    pub m: usize,
    pub degree: usize,
    pub duration: f64,
    pub kind: BasisKind,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            m: basis::DEFAULT_SAMPLES,
            degree: basis::DEFAULT_DEGREE,
            duration: DEFAULT_DURATION,
            kind: BasisKind::Bernstein,
        }
    }
}

impl BasisConfig {
    pub fn grid(&self) -> Result<TimeGrid> {
        basis::build_time_grid(self.m, self.duration)
    }

    pub fn build(&self) -> Result<BasisMatrices> {
        basis::build_basis(&self.grid()?, self.degree, self.kind)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub start: Vec<BoundaryState>,
    pub goal: Vec<BoundaryState>,
    pub geometry: AgentGeometry,
    pub obstacles: Vec<Obstacle>,
    pub basis: BasisConfig,
    pub seed: Option<u64>,
}

impl ProblemSpec {
    pub fn n(&self) -> usize {
        self.start.len()
    }

    pub fn n_obs(&self) -> usize {
        self.obstacles.len()
    }

    pub fn with_basis(mut self, basis: BasisConfig) -> Self {
        self.basis = basis;
        self
    }
}

/// One broken invariant found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Field {
        field: &'static str,
        message: String,
    },
    StartPair {
        i: usize,
        j: usize,
        distance: f64,
    },
    GoalPair {
        i: usize,
        j: usize,
        distance: f64,
    },
    StartObstacle {
        agent: usize,
        obstacle: usize,
        distance: f64,
    },
    GoalObstacle {
        agent: usize,
        obstacle: usize,
        distance: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Field { field, message } => write!(f, "{field}: {message}"),
            Violation::StartPair { i, j, distance } => write!(
                f,
                "start positions of pair ({i},{j}) overlap (normalized distance {distance:.4})"
            ),
            Violation::GoalPair { i, j, distance } => write!(
                f,
                "goal positions of pair ({i},{j}) overlap (normalized distance {distance:.4})"
            ),
            Violation::StartObstacle {
                agent,
                obstacle,
                distance,
            } => write!(
                f,
                "start of agent {agent} overlaps obstacle {obstacle} (normalized distance {distance:.4})"
            ),
            Violation::GoalObstacle {
                agent,
                obstacle,
                distance,
            } => write!(
                f,
                "goal of agent {agent} overlaps obstacle {obstacle} (normalized distance {distance:.4})"
            ),
        }
    }
}

fn diff(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Report every broken instance invariant. Empty means the instance is valid.
pub fn validate(spec: &ProblemSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut field = |field: &'static str, message: String| out.push(Violation::Field { field, message });
    let n = spec.n();
    if n == 0 {
        field("n", "need at least one agent".into());
    }
    if spec.goal.len() != n {
        field("goal", format!("{} goals for {} starts", spec.goal.len(), n));
    }
    let g = spec.geometry;
    if !(g.l_xy > 0.0 && g.l_z > 0.0 && g.l_xy.is_finite() && g.l_z.is_finite()) {
        field(
            "geometry",
            format!("l_xy and l_z must be positive, got ({}, {})", g.l_xy, g.l_z),
        );
    }
    for (k, s) in spec.start.iter().enumerate() {
        if !s.is_finite() {
            field("start", format!("agent {k} has a non-finite boundary state"));
        }
    }
    for (k, s) in spec.goal.iter().enumerate() {
        if !s.is_finite() {
            field("goal", format!("agent {k} has a non-finite boundary state"));
        }
    }
    for (k, o) in spec.obstacles.iter().enumerate() {
        if !(o.radius > 0.0) || !o.center.iter().all(|v| v.is_finite()) {
            field(
                "obstacles",
                format!("obstacle {k} needs a finite center and positive radius"),
            );
        }
    }
    let b = spec.basis;
    if b.m < 2 {
        field("m", format!("need at least 2 samples, got {}", b.m));
    }
    if !(b.duration > 0.0) || !b.duration.is_finite() {
        field("duration", format!("must be positive, got {}", b.duration));
    }
    if b.degree < basis::MIN_DEGREE {
        field(
            "degree",
            format!("need degree >= {}, got {}", basis::MIN_DEGREE, b.degree),
        );
    }
    if !out.is_empty() {
        return out;
    }

    for i in 0..n {
        for j in (i + 1)..n {
            let ds = g.normalized_distance(diff(spec.start[i].position, spec.start[j].position));
            if ds < 1.0 {
                out.push(Violation::StartPair { i, j, distance: ds });
            }
            let dg = g.normalized_distance(diff(spec.goal[i].position, spec.goal[j].position));
            if dg < 1.0 {
                out.push(Violation::GoalPair { i, j, distance: dg });
            }
        }
    }
    for agent in 0..n {
        for (obstacle, o) in spec.obstacles.iter().enumerate() {
            let pair = g.obstacle_pair(o);
            let ds = pair.normalized_distance(diff(spec.start[agent].position, o.center));
            if ds < 1.0 {
                out.push(Violation::StartObstacle {
                    agent,
                    obstacle,
                    distance: ds,
                });
            }
            let dg = pair.normalized_distance(diff(spec.goal[agent].position, o.center));
            if dg < 1.0 {
                out.push(Violation::GoalObstacle {
                    agent,
                    obstacle,
                    distance: dg,
                });
            }
        }
    }
    out
}

/// Returns the spec unchanged if valid, otherwise an error listing all violations.
pub fn ensure_valid(spec: &ProblemSpec) -> Result<()> {
    let violations = validate(spec);
    if violations.is_empty() {
        Ok(())
    } else {
        let msg = violations
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::InvalidProblem(msg))
    }
}

fn at_rest_spec(
    start: Vec<Vec3>,
    goal: Vec<Vec3>,
    geometry: AgentGeometry,
    obstacles: Vec<Obstacle>,
    seed: Option<u64>,
) -> ProblemSpec {
    ProblemSpec {
        start: start.into_iter().map(BoundaryState::at_rest).collect(),
        goal: goal.into_iter().map(BoundaryState::at_rest).collect(),
        geometry,
        obstacles,
        basis: BasisConfig::default(),
        seed,
    }
}

/// Agents evenly spaced along the perimeter of a square centered on the
/// origin, each heading to its antipodal point.
pub fn generate_square(n: usize, side: f64, radius: f64, z_plane: f64) -> Result<ProblemSpec> {
    if n < 2 {
        return Err(validation("n", format!("square benchmark needs n >= 2, got {n}")));
    }
    if !(side > 0.0) {
        return Err(validation("side", format!("must be positive, got {side}")));
    }
    if !(radius > 0.0) {
        return Err(validation("radius", format!("must be positive, got {radius}")));
    }
    let half = 0.5 * side;
    let spacing = 4.0 * side / n as f64;
    let start: Vec<Vec3> = (0..n)
        .map(|k| {
            // walk counter-clockwise from the (-half, -half) corner
            let s = k as f64 * spacing;
            let edge = ((s / side).floor() as usize).min(3);
            let along = s - edge as f64 * side;
            let (x, y) = match edge {
                0 => (-half + along, -half),
                1 => (half, -half + along),
                2 => (half - along, half),
                _ => (-half, half - along),
            };
            [x, y, z_plane]
        })
        .collect();
    let goal = start.iter().map(|p| [-p[0], -p[1], z_plane]).collect();
    Ok(at_rest_spec(
        start,
        goal,
        AgentGeometry::sphere(radius),
        Vec::new(),
        None,
    ))
}

/// Jitter every start and goal position by up to `amplitude` per axis.
pub fn perturb_positions(spec: &ProblemSpec, amplitude: f64, seed: u64) -> ProblemSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = spec.clone();
    for state in out.start.iter_mut().chain(out.goal.iter_mut()) {
        for v in state.position.iter_mut() {
            *v += rng.random_range(-amplitude..=amplitude);
        }
    }
    out.seed = Some(seed);
    out
}

fn sample_separated(
    rng: &mut ChaCha8Rng,
    n: usize,
    bounds: Vec3,
    min_sep: f64,
    budget: &mut usize,
    what: &'static str,
) -> Result<Vec<Vec3>> {
    let mut placed: Vec<Vec3> = Vec::with_capacity(n);
    while placed.len() < n {
        let candidate = [
            rng.random_range(0.0..=bounds[0]),
            rng.random_range(0.0..=bounds[1]),
            rng.random_range(0.0..=bounds[2]),
        ];
        if placed.iter().all(|p| norm(diff(*p, candidate)) >= min_sep) {
            placed.push(candidate);
        } else {
            if *budget == 0 {
                return Err(Error::Placement {
                    what,
                    attempts: DEFAULT_MAX_REJECTIONS,
                });
            }
            *budget -= 1;
        }
    }
    Ok(placed)
}

fn check_box(bounds: Vec3, radius: f64) -> Result<()> {
    if !bounds.iter().all(|b| *b >= 0.0 && b.is_finite()) {
        return Err(validation(
            "box",
            format!("dimensions must be non-negative, got {bounds:?}"),
        ));
    }
    if !(radius > 0.0) {
        return Err(validation("radius", format!("must be positive, got {radius}")));
    }
    Ok(())
}

/// Random starts and goals inside `[0, box]`, each set pairwise at least
/// `4 * radius` apart.
pub fn generate_random(n: usize, bounds: Vec3, radius: f64, seed: u64) -> Result<ProblemSpec> {
    generate_random_with_obstacles(n, bounds, radius, 0, 1.0, seed)
}

/// [`generate_random`] followed by `n_obs` obstacles placed clear of every
/// start and goal by `obs_radius + 2 * radius`.
pub fn generate_random_with_obstacles(
    n: usize,
    bounds: Vec3,
    radius: f64,
    n_obs: usize,
    obs_radius: f64,
    seed: u64,
) -> Result<ProblemSpec> {
    if n == 0 {
        return Err(validation("n", "need at least one agent"));
    }
    check_box(bounds, radius)?;
    if n_obs > 0 && !(obs_radius > 0.0) {
        return Err(validation(
            "obs_radius",
            format!("must be positive, got {obs_radius}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut budget = DEFAULT_MAX_REJECTIONS;
    let min_sep = 4.0 * radius;
    let start = sample_separated(&mut rng, n, bounds, min_sep, &mut budget, "start positions")?;
    let goal = sample_separated(&mut rng, n, bounds, min_sep, &mut budget, "goal positions")?;

    let mut obstacles = Vec::with_capacity(n_obs);
    let clearance = obs_radius + 2.0 * radius;
    while obstacles.len() < n_obs {
        let center = [
            rng.random_range(0.0..=bounds[0]),
            rng.random_range(0.0..=bounds[1]),
            rng.random_range(0.0..=bounds[2]),
        ];
        if start
            .iter()
            .chain(&goal)
            .all(|p| norm(diff(*p, center)) >= clearance)
        {
            obstacles.push(Obstacle {
                center,
                radius: obs_radius,
            });
        } else {
            if budget == 0 {
                return Err(Error::Placement {
                    what: "obstacles",
                    attempts: DEFAULT_MAX_REJECTIONS,
                });
            }
            budget -= 1;
        }
    }
    Ok(at_rest_spec(
        start,
        goal,
        AgentGeometry::sphere(radius),
        obstacles,
        Some(seed),
    ))
}

/// Two facing groups exchange ends of a hallway running along x. The walls
/// are rows of obstacle spheres just outside `|y| = width / 2`.
pub fn generate_hallway(
    n: usize,
    hallway_length: f64,
    hallway_width: f64,
    radius: f64,
) -> Result<ProblemSpec> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(validation(
            "n",
            format!("hallway needs an even agent count, got {n}"),
        ));
    }
    if !(radius > 0.0) {
        return Err(validation("radius", format!("must be positive, got {radius}")));
    }
    if !(hallway_width >= 4.0 * radius) {
        return Err(validation(
            "hallway_width",
            format!("width {hallway_width} is below 4 * radius = {}", 4.0 * radius),
        ));
    }
    if !(hallway_length > 0.0) {
        return Err(validation(
            "hallway_length",
            format!("must be positive, got {hallway_length}"),
        ));
    }
    let group = n / 2;
    let spacing = 4.0 * radius;
    let per_row = (((hallway_width - 2.0 * radius) / spacing).floor() as usize + 1).max(1);
    let rows = group.div_ceil(per_row);
    let depth = (rows - 1) as f64 * spacing;
    if 2.0 * (depth + radius) + spacing > hallway_length {
        return Err(validation(
            "hallway_length",
            format!("{group} agents per end do not fit in length {hallway_length}"),
        ));
    }

    let mut left = Vec::with_capacity(group);
    for k in 0..group {
        let row = k / per_row;
        let col = k % per_row;
        let in_row = if row == rows - 1 {
            group - row * per_row
        } else {
            per_row
        };
        let y = (col as f64 - 0.5 * (in_row - 1) as f64) * spacing;
        let x = radius + row as f64 * spacing;
        left.push([x, y, 0.0]);
    }
    let mirror = |p: &Vec3| [hallway_length - p[0], p[1], p[2]];
    let right: Vec<Vec3> = left.iter().map(mirror).collect();

    let mut start = left.clone();
    start.extend(right.iter().copied());
    let mut goal = right;
    goal.extend(left);

    let wall_radius = 0.5 * hallway_width;
    let wall_y = 0.5 * hallway_width + wall_radius;
    let count = (hallway_length / wall_radius).ceil() as usize + 1;
    let mut obstacles = Vec::with_capacity(2 * count);
    for side in [-1.0, 1.0] {
        for k in 0..count {
            let x = (k as f64 * wall_radius).min(hallway_length);
            obstacles.push(Obstacle {
                center: [x, side * wall_y, 0.0],
                radius: wall_radius,
            });
        }
    }
    Ok(at_rest_spec(
        start,
        goal,
        AgentGeometry::sphere(radius),
        obstacles,
        None,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum BoundaryEntry {
    Position(Vec3),
    Full(BoundaryState),
}

impl From<BoundaryEntry> for BoundaryState {
    fn from(e: BoundaryEntry) -> Self {
        match e {
            BoundaryEntry::Position(p) => BoundaryState::at_rest(p),
            BoundaryEntry::Full(s) => s,
        }
    }
}

impl From<&BoundaryState> for BoundaryEntry {
    fn from(s: &BoundaryState) -> Self {
        if s.is_at_rest() {
            BoundaryEntry::Position(s.position)
        } else {
            BoundaryEntry::Full(*s)
        }
    }
}

fn default_m() -> usize {
    basis::DEFAULT_SAMPLES
}
fn default_degree() -> usize {
    basis::DEFAULT_DEGREE
}
fn default_duration() -> f64 {
    DEFAULT_DURATION
}

/// On-disk scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub n: usize,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default)]
    pub basis: BasisKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_xy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_z: Option<f64>,
    start: Vec<BoundaryEntry>,
    goal: Vec<BoundaryEntry>,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl From<&ProblemSpec> for ScenarioFile {
    fn from(spec: &ProblemSpec) -> Self {
        let g = spec.geometry;
        let (radius, l_xy, l_z) = if g.is_sphere() {
            (Some(0.5 * g.l_xy), None, None)
        } else {
            (None, Some(g.l_xy), Some(g.l_z))
        };
        ScenarioFile {
            n: spec.n(),
            duration: spec.basis.duration,
            m: spec.basis.m,
            degree: spec.basis.degree,
            basis: spec.basis.kind,
            radius,
            l_xy,
            l_z,
            start: spec.start.iter().map(BoundaryEntry::from).collect(),
            goal: spec.goal.iter().map(BoundaryEntry::from).collect(),
            obstacles: spec.obstacles.clone(),
            seed: spec.seed,
        }
    }
}

impl TryFrom<ScenarioFile> for ProblemSpec {
    type Error = Error;

    fn try_from(f: ScenarioFile) -> Result<Self> {
        let geometry = match (f.radius, f.l_xy, f.l_z) {
            (Some(r), None, None) => AgentGeometry::sphere(r),
            (None, Some(l_xy), Some(l_z)) => AgentGeometry { l_xy, l_z },
            _ => {
                return Err(validation(
                    "geometry",
                    "give either `radius` or both `l_xy` and `l_z`",
                ))
            }
        };
        if f.start.len() != f.n || f.goal.len() != f.n {
            return Err(validation(
                "n",
                format!(
                    "n = {} but {} starts and {} goals listed",
                    f.n,
                    f.start.len(),
                    f.goal.len()
                ),
            ));
        }
        Ok(ProblemSpec {
            start: f.start.into_iter().map(Into::into).collect(),
            goal: f.goal.into_iter().map(Into::into).collect(),
            geometry,
            obstacles: f.obstacles,
            basis: BasisConfig {
                m: f.m,
                degree: f.degree,
                duration: f.duration,
                kind: f.basis,
            },
            seed: f.seed,
        })
    }
}

impl ProblemSpec {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ScenarioFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<ScenarioFile>(text)?.try_into()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two(a: Vec3, b: Vec3, l: f64) -> ProblemSpec {
        at_rest_spec(
            vec![a, b],
            vec![b, a],
            AgentGeometry { l_xy: l, l_z: l },
            vec![],
            None,
        )
    }

    #[test]
    fn coincident_starts_are_flagged() {
        let spec = two([0.0; 3], [0.0; 3], 1.0);
        let v = validate(&spec);
        assert!(v
            .iter()
            .any(|v| matches!(v, Violation::StartPair { i: 0, j: 1, .. })));
        assert!(v[0].to_string().contains("(0,1)"));
    }

    #[test]
    fn separated_pair_is_valid() {
        assert!(validate(&two([0.0; 3], [3.0, 0.0, 0.0], 1.0)).is_empty());
    }

    #[test]
    fn single_agent_is_valid() {
        let spec = at_rest_spec(
            vec![[0.0; 3]],
            vec![[1.0, 0.0, 0.0]],
            AgentGeometry::sphere(0.4),
            vec![],
            None,
        );
        assert!(validate(&spec).is_empty());
    }

    #[test]
    fn field_errors_name_the_field() {
        let mut spec = two([0.0; 3], [3.0, 0.0, 0.0], 1.0);
        spec.goal.pop();
        spec.basis.duration = -1.0;
        let text: Vec<String> = validate(&spec).iter().map(ToString::to_string).collect();
        assert!(text.iter().any(|t| t.starts_with("goal")));
        assert!(text.iter().any(|t| t.starts_with("duration")));
    }

    #[test]
    fn square_corners_and_antipodes() {
        let spec = generate_square(4, 8.0, 0.4, 1.0).unwrap();
        let corners = [[-4.0, -4.0], [4.0, -4.0], [4.0, 4.0], [-4.0, 4.0]];
        for (s, c) in spec.start.iter().zip(corners) {
            assert_eq!([s.position[0], s.position[1]], c);
            assert_eq!(s.position[2], 1.0);
        }
        for (s, g) in spec.start.iter().zip(&spec.goal) {
            assert_eq!(g.position[0], -s.position[0]);
            assert_eq!(g.position[1], -s.position[1]);
        }
        assert!(validate(&spec).is_empty());
        assert_eq!(spec.geometry, AgentGeometry::sphere(0.4));
    }

    #[test]
    fn square_two_agents_on_diagonal() {
        let spec = generate_square(2, 2.0, 0.4, 0.0).unwrap();
        let d = norm(diff(spec.start[0].position, spec.start[1].position));
        assert!((d - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn tight_square_fails_validation() {
        let spec = generate_square(4, 0.5, 0.4, 0.0).unwrap();
        assert!(!validate(&spec).is_empty());
    }

    #[test]
    fn random_is_deterministic_and_valid() {
        let a = generate_random(2, [8.0, 8.0, 3.0], 0.4, 7).unwrap();
        let b = generate_random(2, [8.0, 8.0, 3.0], 0.4, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_random(16, [8.0, 8.0, 3.0], 0.4, 1).unwrap();
        assert!(validate(&c).is_empty());
    }

    #[test]
    fn random_packing_failure() {
        let err = generate_random(50, [1.0, 1.0, 1.0], 0.4, 1).unwrap_err();
        assert!(matches!(err, Error::Placement { .. }), "{err}");
    }

    #[test]
    fn zero_obstacles_matches_plain_random() {
        let a = generate_random(16, [8.0, 8.0, 3.0], 0.4, 5).unwrap();
        let b = generate_random_with_obstacles(16, [8.0, 8.0, 3.0], 0.4, 0, 0.5, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn obstacles_keep_clear_of_endpoints() {
        let spec = generate_random_with_obstacles(8, [8.0, 8.0, 3.0], 0.4, 4, 0.5, 3).unwrap();
        assert_eq!(spec.n_obs(), 4);
        for o in &spec.obstacles {
            for p in spec.start.iter().chain(&spec.goal) {
                assert!(norm(diff(p.position, o.center)) >= o.radius + 0.8);
            }
        }
        assert!(validate(&spec).is_empty());
        let again = generate_random_with_obstacles(8, [8.0, 8.0, 3.0], 0.4, 4, 0.5, 3).unwrap();
        assert_eq!(spec, again);
    }

    #[test]
    fn hallway_construction() {
        let spec = generate_hallway(2, 10.0, 2.0, 0.4).unwrap();
        assert_eq!(spec.n(), 2);
        assert!(spec.n_obs() > 0);
        assert_eq!(spec.goal[0].position, spec.start[1].position);
        assert!(validate(&spec).is_empty());

        let big = generate_hallway(32, 20.0, 4.0, 0.25).unwrap();
        assert_eq!(big.n(), 32);
        assert!(validate(&big).is_empty(), "{:?}", validate(&big));

        assert!(generate_hallway(3, 10.0, 2.0, 0.4).is_err());
        assert!(generate_hallway(2, 10.0, 1.0, 0.4).is_err());
    }

    #[test]
    fn scenario_json_roundtrip() {
        let mut spec = generate_random_with_obstacles(3, [8.0, 8.0, 3.0], 0.4, 2, 0.5, 9).unwrap();
        spec.start[1].velocity = [0.5, 0.0, -0.25];
        let text = spec.to_json().unwrap();
        assert_eq!(ProblemSpec::from_json(&text).unwrap(), spec);

        spec.geometry = AgentGeometry { l_xy: 0.8, l_z: 1.2 };
        let text = spec.to_json().unwrap();
        assert!(text.contains("l_xy") && !text.contains("radius\": 0.4"));
        assert_eq!(ProblemSpec::from_json(&text).unwrap(), spec);
    }

    #[test]
    fn scenario_json_minimal_document() {
        let text = r#"{"n": 2, "radius": 0.4,
            "start": [[0,0,0],[3,0,0]], "goal": [[3,0,0],[0,0,0]]}"#;
        let spec = ProblemSpec::from_json(text).unwrap();
        assert_eq!(spec.basis, BasisConfig::default());
        assert!(spec.obstacles.is_empty());
        let bad = r#"{"n": 3, "radius": 0.4, "start": [[0,0,0]], "goal": [[1,0,0]]}"#;
        assert!(ProblemSpec::from_json(bad).is_err());
    }
}
