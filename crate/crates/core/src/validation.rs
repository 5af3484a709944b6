//! Solver-independent checks on sampled trajectories: pairwise collision
//! scanning and trajectory quality metrics.
//!
//! Nothing here touches solver state; the collision scan is a plain loop over
//! agent pairs, agent-obstacle pairs and samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{AgentGeometry, Obstacle, Vec3};

/// Minimum normalized distance accepted for a converged solve. A residual of
/// `1e-2` m permits slight penetration of the parametrized spheroid.
pub const COLLISION_ACCEPTANCE_MARGIN: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Contact {
    Agents(usize, usize),
    Obstacle { agent: usize, obstacle: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionViolation {
    pub contact: Contact,
    pub sample: usize,
    pub normalized_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    /// Infinite when there is nothing to compare.
    pub min_normalized_distance: f64,
    pub violations: Vec<CollisionViolation>,
}

impl CollisionReport {
    pub fn passes(&self, margin: f64) -> bool {
        self.min_normalized_distance >= margin
    }
}

fn normalized(a: Vec3, b: Vec3, l_xy: f64, l_z: f64) -> f64 {
    let dx = (a[0] - b[0]) / l_xy;
    let dy = (a[1] - b[1]) / l_xy;
    let dz = (a[2] - b[2]) / l_z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Evaluate the spheroid separation at every sample of every pair.
///
/// `trajectories[i][r]` is agent `i`'s position at sample `r`. A sample
/// violates separation iff its normalized distance is strictly below 1.
pub fn check_collisions(
    trajectories: &[Vec<Vec3>],
    geometry: &AgentGeometry,
    obstacles: &[Obstacle],
) -> Result<CollisionReport> {
    let m = trajectories.first().map_or(0, Vec::len);
    for t in trajectories {
        if t.len() != m {
            return Err(Error::Dimension {
                what: "trajectory samples",
                expected: m,
                got: t.len(),
            });
        }
    }
    let mut min = f64::INFINITY;
    let mut violations = Vec::new();
    let mut record = |contact: Contact, sample: usize, value: f64| {
        if value < min {
            min = value;
        }
        if value < 1.0 {
            violations.push(CollisionViolation {
                contact,
                sample,
                normalized_distance: value,
            });
        }
    };
    let n = trajectories.len();
    for i in 0..n {
        for j in (i + 1)..n {
            for r in 0..m {
                let v = normalized(
                    trajectories[i][r],
                    trajectories[j][r],
                    geometry.l_xy,
                    geometry.l_z,
                );
                record(Contact::Agents(i, j), r, v);
            }
        }
    }
    for (agent, traj) in trajectories.iter().enumerate() {
        for (obstacle, o) in obstacles.iter().enumerate() {
            let l_xy = 0.5 * geometry.l_xy + o.radius;
            let l_z = 0.5 * geometry.l_z + o.radius;
            for (r, p) in traj.iter().enumerate() {
                record(
                    Contact::Obstacle { agent, obstacle },
                    r,
                    normalized(*p, o.center, l_xy, l_z),
                );
            }
        }
    }
    Ok(CollisionReport {
        min_normalized_distance: min,
        violations,
    })
}

fn distance(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Sum of distances between consecutive samples.
pub fn arc_length(trajectory: &[Vec3]) -> f64 {
    trajectory.windows(2).map(|w| distance(w[0], w[1])).sum()
}

/// Norm of the stacked second differences `p[r+1] - 2 p[r] + p[r-1]`.
pub fn smoothness(trajectory: &[Vec3]) -> f64 {
    trajectory
        .windows(3)
        .map(|w| {
            (0..3)
                .map(|k| (w[2][k] - 2.0 * w[1][k] + w[0][k]).powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub arc_length: Vec<f64>,
    pub smoothness: Vec<f64>,
}

impl TrajectoryMetrics {
    pub fn compute(trajectories: &[Vec<Vec3>]) -> Self {
        Self {
            arc_length: trajectories.iter().map(|t| arc_length(t)).collect(),
            smoothness: trajectories.iter().map(|t| smoothness(t)).collect(),
        }
    }

    pub fn mean_arc_length(&self) -> f64 {
        mean(&self.arc_length)
    }

    pub fn mean_smoothness(&self) -> f64 {
        mean(&self.smoothness)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stationary(p: Vec3, m: usize) -> Vec<Vec3> {
        vec![p; m]
    }

    #[test]
    fn static_pair_two_meters_apart() {
        let g = AgentGeometry { l_xy: 1.0, l_z: 1.0 };
        let t = vec![stationary([0.0; 3], 5), stationary([2.0, 0.0, 0.0], 5)];
        let r = check_collisions(&t, &g, &[]).unwrap();
        assert_eq!(r.min_normalized_distance, 2.0);
        assert!(r.violations.is_empty());
    }

    #[test]
    fn coincident_agents_violate_everywhere() {
        let g = AgentGeometry { l_xy: 1.0, l_z: 1.0 };
        let t = vec![stationary([1.0; 3], 7), stationary([1.0; 3], 7)];
        let r = check_collisions(&t, &g, &[]).unwrap();
        assert_eq!(r.min_normalized_distance, 0.0);
        assert_eq!(r.violations.len(), 7);
    }

    #[test]
    fn boundary_contact_is_not_a_violation() {
        let g = AgentGeometry { l_xy: 1.0, l_z: 2.0 };
        let t = vec![stationary([0.0; 3], 2), stationary([0.0, 0.0, 2.0], 2)];
        let r = check_collisions(&t, &g, &[]).unwrap();
        assert_eq!(r.min_normalized_distance, 1.0);
        assert!(r.violations.is_empty());
    }

    #[test]
    fn obstacle_contacts_use_combined_radius() {
        let g = AgentGeometry::sphere(0.5);
        let obstacles = [Obstacle {
            center: [0.0; 3],
            radius: 1.0,
        }];
        let t = vec![vec![[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]];
        let r = check_collisions(&t, &g, &obstacles).unwrap();
        assert!((r.min_normalized_distance - 1.0 / 1.5).abs() < 1e-15);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].sample, 0);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let g = AgentGeometry::sphere(0.5);
        let t = vec![stationary([0.0; 3], 3), stationary([5.0; 3], 4)];
        assert!(check_collisions(&t, &g, &[]).is_err());
    }

    #[test]
    fn arc_length_cases() {
        for m in [2, 3, 17] {
            let line: Vec<Vec3> = (0..m).map(|r| [r as f64 / (m - 1) as f64, 0.0, 0.0]).collect();
            assert!((arc_length(&line) - 1.0).abs() < 1e-15);
        }
        assert_eq!(arc_length(&stationary([3.0; 3], 10)), 0.0);
        let m = 1000;
        let quarter: Vec<Vec3> = (0..m)
            .map(|r| {
                let t = std::f64::consts::FRAC_PI_2 * r as f64 / (m - 1) as f64;
                [t.cos(), t.sin(), 0.0]
            })
            .collect();
        assert!((arc_length(&quarter) - std::f64::consts::FRAC_PI_2).abs() < 1e-4);
    }

    #[test]
    fn smoothness_cases() {
        let line: Vec<Vec3> = (0..20).map(|r| [0.3 * r as f64, -0.1 * r as f64, 2.0]).collect();
        assert!(smoothness(&line) < 1e-12);

        let h = 0.1;
        let parabola: Vec<Vec3> = (0..6).map(|r| [(r * r) as f64 * h * h, 0.0, 0.0]).collect();
        // four interior second differences of 2 h^2 each
        let expected = (4.0 * (2.0 * h * h).powi(2)).sqrt();
        assert!((smoothness(&parabola) - expected).abs() < 1e-15);
    }
}
