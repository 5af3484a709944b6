//! Time grid and sampled polynomial basis.
//!
//! Every trajectory coordinate is `P c` for a coefficient vector `c`. Basis
//! functions are evaluated in normalized time `tau = t / duration`, so the
//! derivative matrices carry the chain-rule factors `1/duration` and
//! `1/duration^2`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{validation, Result};

pub const DEFAULT_SAMPLES: usize = 100;
pub const DEFAULT_DEGREE: usize = 10;
pub const MIN_DEGREE: usize = 5;

/// Uniformly spaced sample times on `[0, duration]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    duration: f64,
    samples: Vec<f64>,
}

impl TimeGrid {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn step(&self) -> f64 {
        self.duration / (self.samples.len() - 1) as f64
    }
}

pub fn build_time_grid(m: usize, duration: f64) -> Result<TimeGrid> {
    if m < 2 {
        return Err(validation("m", format!("need at least 2 samples, got {m}")));
    }
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(validation(
            "duration",
            format!("must be positive and finite, got {duration}"),
        ));
    }
    let last = (m - 1) as f64;
    let samples = (0..m)
        .map(|r| {
            if r == m - 1 {
                duration
            } else {
                duration * r as f64 / last
            }
        })
        .collect();
    Ok(TimeGrid { duration, samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    #[default]
    Bernstein,
    Monomial,
}

impl BasisKind {
    /// Values of all `degree + 1` basis functions at normalized time `tau`,
    /// differentiated `order` times with respect to `tau`.
    pub fn evaluate(self, degree: usize, tau: f64, order: usize) -> Vec<f64> {
        match self {
            BasisKind::Bernstein => bernstein_derivative(degree, tau, order),
            BasisKind::Monomial => monomial_derivative(degree, tau, order),
        }
    }
}

impl std::str::FromStr for BasisKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "bernstein" => Ok(BasisKind::Bernstein),
            "monomial" => Ok(BasisKind::Monomial),
            other => Err(format!("unknown basis kind '{other}'")),
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn bernstein(degree: usize, k: isize, tau: f64) -> f64 {
    if k < 0 || k as usize > degree {
        return 0.0;
    }
    let k = k as usize;
    binomial(degree, k) * tau.powi(k as i32) * (1.0 - tau).powi((degree - k) as i32)
}

// d^r/dtau^r b_{k,N} = N!/(N-r)! * sum_j (-1)^(r-j) C(r,j) b_{k-j, N-r}
fn bernstein_derivative(degree: usize, tau: f64, order: usize) -> Vec<f64> {
    if order > degree {
        return vec![0.0; degree + 1];
    }
    let lower = degree - order;
    let falling: f64 = (0..order).map(|i| (degree - i) as f64).product();
    (0..=degree)
        .map(|k| {
            let sum: f64 = (0..=order)
                .map(|j| {
                    let sign = if (order - j).is_multiple_of(2) { 1.0 } else { -1.0 };
                    sign * binomial(order, j) * bernstein(lower, k as isize - j as isize, tau)
                })
                .sum();
            falling * sum
        })
        .collect()
}

fn monomial_derivative(degree: usize, tau: f64, order: usize) -> Vec<f64> {
    (0..=degree)
        .map(|k| {
            if k < order {
                0.0
            } else {
                let falling: f64 = (0..order).map(|i| (k - i) as f64).product();
                falling * tau.powi((k - order) as i32)
            }
        })
        .collect()
}

/// Basis functions and their first two time derivatives sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrices {
    pub p: DMatrix<f64>,
    pub pdot: DMatrix<f64>,
    pub pddot: DMatrix<f64>,
    pub kind: BasisKind,
    pub degree: usize,
    pub grid: TimeGrid,
}

impl BasisMatrices {
    /// Coefficients per agent per axis.
    pub fn n_v(&self) -> usize {
        self.degree + 1
    }

    pub fn m(&self) -> usize {
        self.grid.len()
    }

    /// Stable digest of everything the sampled matrices depend on.
    pub fn fingerprint_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(match self.kind {
            BasisKind::Bernstein => b"bernstein".as_slice(),
            BasisKind::Monomial => b"monomial".as_slice(),
        });
        hasher.update((self.degree as u64).to_le_bytes());
        hasher.update((self.grid.len() as u64).to_le_bytes());
        hasher.update(self.grid.duration().to_bits().to_le_bytes());
        let digest = hasher.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

pub fn build_basis(grid: &TimeGrid, degree: usize, kind: BasisKind) -> Result<BasisMatrices> {
    if degree < MIN_DEGREE {
        return Err(validation(
            "degree",
            format!("need degree >= {MIN_DEGREE} to meet 6 boundary rows, got {degree}"),
        ));
    }
    let m = grid.len();
    let n_v = degree + 1;
    let duration = grid.duration();
    let mut p = DMatrix::zeros(m, n_v);
    let mut pdot = DMatrix::zeros(m, n_v);
    let mut pddot = DMatrix::zeros(m, n_v);
    let scale = [1.0, 1.0 / duration, 1.0 / (duration * duration)];
    for (r, &t) in grid.samples().iter().enumerate() {
        let tau = t / duration;
        for (order, target) in [&mut p, &mut pdot, &mut pddot].into_iter().enumerate() {
            for (k, v) in kind.evaluate(degree, tau, order).into_iter().enumerate() {
                target[(r, k)] = v * scale[order];
            }
        }
    }
    Ok(BasisMatrices {
        p,
        pdot,
        pddot,
        kind,
        degree,
        grid: grid.clone(),
    })
}
