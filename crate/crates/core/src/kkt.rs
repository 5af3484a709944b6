//! Per-axis QP assembly and the cached KKT factorizations.
//!
//! The coefficient step for one axis solves
//!
//! ```text
//! [ Q + rho A_fc^T A_fc   A_eq^T ] [ c  ]   [ rho A_fc^T b_fc ]
//! [ A_eq                  0      ] [ nu ] = [ b_eq            ]
//! ```
//!
//! The matrix depends only on the agent count, obstacle count, basis and
//! `rho`, never on the iterate or on start/goal positions, so it is factored
//! once per `rho` and reused for every axis, iteration and instance sharing
//! the same [`Fingerprint`].

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisMatrices;
use crate::error::{validation, Error, Result};
use crate::problem::ProblemSpec;

/// Boundary rows per agent per axis: position, velocity, acceleration at both ends.
pub const BOUNDARY_ROWS: usize = 6;

/// Smallest accepted ratio between the smallest and largest LU pivot.
const PIVOT_RATIO_FLOOR: f64 = 1e-14;

/// Everything the KKT matrix depends on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    pub n: usize,
    pub n_v: usize,
    pub m: usize,
    pub n_obs: usize,
    pub basis_hash: String,
}

impl Fingerprint {
    pub fn key(&self) -> String {
        format!(
            "n{}-nv{}-m{}-obs{}-{}",
            self.n, self.n_v, self.m, self.n_obs, self.basis_hash
        )
    }
}

/// Block-diagonal boundary constraint matrix `A_eq`.
#[derive(Debug, Clone)]
pub struct EqualityBlock {
    /// Per-agent rows `[P_1; Pdot_1; Pddot_1; P_m; Pdot_m; Pddot_m]`.
    pub agent_rows: DMatrix<f64>,
    pub n: usize,
}

impl EqualityBlock {
    pub fn rows(&self) -> usize {
        BOUNDARY_ROWS * self.n
    }

    pub fn cols(&self) -> usize {
        self.agent_rows.ncols() * self.n
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let (r, c) = self.agent_rows.shape();
        let mut out = DMatrix::zeros(self.rows(), self.cols());
        for a in 0..self.n {
            out.view_mut((a * r, a * c), (r, c)).copy_from(&self.agent_rows);
        }
        out
    }

    pub fn apply(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        let n_v = self.agent_rows.ncols();
        let mut out = DVector::zeros(self.rows());
        for a in 0..self.n {
            let block = &self.agent_rows * coeffs.rows(a * n_v, n_v);
            out.rows_mut(a * BOUNDARY_ROWS, BOUNDARY_ROWS).copy_from(&block);
        }
        out
    }
}

/// Boundary right-hand sides `[b_eq_x, b_eq_y, b_eq_z]`, per agent ordered
/// `[pos_0, vel_0, acc_0, pos_T, vel_T, acc_T]`.
pub fn boundary_rhs(spec: &ProblemSpec) -> [DVector<f64>; 3] {
    let n = spec.n();
    std::array::from_fn(|axis| {
        let mut b = DVector::zeros(BOUNDARY_ROWS * n);
        for (a, (s, g)) in spec.start.iter().zip(&spec.goal).enumerate() {
            let vals = [
                s.position[axis],
                s.velocity[axis],
                s.acceleration[axis],
                g.position[axis],
                g.velocity[axis],
                g.acceleration[axis],
            ];
            for (k, v) in vals.into_iter().enumerate() {
                b[a * BOUNDARY_ROWS + k] = v;
            }
        }
        b
    })
}

/// A row block of `A_fc`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pair {
    Agents(usize, usize),
    Obstacle { agent: usize, obstacle: usize },
}

/// The stacked pairwise difference operator `A_fc`, kept in structured form.
///
/// Stacked pair vectors are pair-major: entry `pair * m + r` belongs to pair
/// `pair` at sample `r`. Agent pairs come first in lexicographic order,
/// followed by agent-obstacle pairs ordered by agent then obstacle.
#[derive(Debug, Clone)]
pub struct PairwiseBlock {
    pub pairs: Vec<Pair>,
    pub n: usize,
    pub n_obs: usize,
    pub p: DMatrix<f64>,
}

impl PairwiseBlock {
    pub fn new(n: usize, n_obs: usize, p: DMatrix<f64>) -> Self {
        let mut pairs = Vec::with_capacity(n * (n.saturating_sub(1)) / 2 + n * n_obs);
        for i in 0..n {
            for j in (i + 1)..n {
                pairs.push(Pair::Agents(i, j));
            }
        }
        for agent in 0..n {
            for obstacle in 0..n_obs {
                pairs.push(Pair::Obstacle { agent, obstacle });
            }
        }
        Self { pairs, n, n_obs, p }
    }

    pub fn m(&self) -> usize {
        self.p.nrows()
    }

    pub fn n_v(&self) -> usize {
        self.p.ncols()
    }

    /// Row count of `A_fc`.
    pub fn rows(&self) -> usize {
        self.pairs.len() * self.m()
    }

    pub fn cols(&self) -> usize {
        self.n * self.n_v()
    }

    /// Sampled per-agent coordinates `P c_i`, agent-major.
    pub fn sample_agents(&self, coeffs: &DVector<f64>) -> Vec<DVector<f64>> {
        let n_v = self.n_v();
        (0..self.n).map(|a| &self.p * coeffs.rows(a * n_v, n_v)).collect()
    }

    /// `A_fc c`: per pair, sampled `x_i - x_j` (or `x_i` for obstacle pairs).
    pub fn apply(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        let samples = self.sample_agents(coeffs);
        self.differences(&samples)
    }

    pub fn differences(&self, samples: &[DVector<f64>]) -> DVector<f64> {
        let m = self.m();
        let mut out = DVector::zeros(self.rows());
        for (k, pair) in self.pairs.iter().enumerate() {
            let mut block = out.rows_mut(k * m, m);
            match *pair {
                Pair::Agents(i, j) => block.copy_from(&(&samples[i] - &samples[j])),
                Pair::Obstacle { agent, .. } => block.copy_from(&samples[agent]),
            }
        }
        out
    }

    /// `A_fc^T v`. Pair contributions are summed into one m-vector per agent
    /// in pair order, then mapped through `P^T`.
    pub fn apply_transpose(&self, v: &DVector<f64>) -> DVector<f64> {
        let m = self.m();
        let n_v = self.n_v();
        let mut per_agent = vec![DVector::<f64>::zeros(m); self.n];
        for (k, pair) in self.pairs.iter().enumerate() {
            let block = v.rows(k * m, m);
            match *pair {
                Pair::Agents(i, j) => {
                    per_agent[i] += &block;
                    per_agent[j] -= &block;
                }
                Pair::Obstacle { agent, .. } => per_agent[agent] += &block,
            }
        }
        let mut out = DVector::zeros(self.cols());
        for (a, w) in per_agent.iter().enumerate() {
            out.rows_mut(a * n_v, n_v).copy_from(&self.p.tr_mul(w));
        }
        out
    }

    /// `A_fc^T A_fc` built from its block structure.
    pub fn gram(&self) -> DMatrix<f64> {
        let n_v = self.n_v();
        let ptp = self.p.tr_mul(&self.p);
        let mut out = DMatrix::zeros(self.cols(), self.cols());
        let diag = (self.n - 1 + self.n_obs) as f64;
        for i in 0..self.n {
            for j in 0..self.n {
                let scale = if i == j { diag } else { -1.0 };
                out.view_mut((i * n_v, j * n_v), (n_v, n_v))
                    .copy_from(&(&ptp * scale));
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let (m, n_v) = self.p.shape();
        let mut out = DMatrix::zeros(self.rows(), self.cols());
        for (k, pair) in self.pairs.iter().enumerate() {
            let (pos, neg) = match *pair {
                Pair::Agents(i, j) => (i, Some(j)),
                Pair::Obstacle { agent, .. } => (agent, None),
            };
            out.view_mut((k * m, pos * n_v), (m, n_v)).copy_from(&self.p);
            if let Some(j) = neg {
                out.view_mut((k * m, j * n_v), (m, n_v)).copy_from(&(-&self.p));
            }
        }
        out
    }
}

/// Iteration-independent matrices of the coefficient step.
#[derive(Debug, Clone)]
pub struct KktAssembly {
    /// `blockdiag(Pddot^T Pddot)`.
    pub q: DMatrix<f64>,
    pub equality: EqualityBlock,
    pub pairwise: PairwiseBlock,
    /// `A_fc^T A_fc`.
    pub gram: DMatrix<f64>,
    pub fingerprint: Fingerprint,
}

impl KktAssembly {
    pub fn primal_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn dual_dim(&self) -> usize {
        self.equality.rows()
    }

    pub fn dim(&self) -> usize {
        self.primal_dim() + self.dual_dim()
    }

    /// The full KKT matrix for penalty weight `rho`.
    pub fn kkt_matrix(&self, rho: f64) -> DMatrix<f64> {
        let np = self.primal_dim();
        let nd = self.dual_dim();
        let mut k = DMatrix::zeros(np + nd, np + nd);
        k.view_mut((0, 0), (np, np))
            .copy_from(&(&self.q + &self.gram * rho));
        let a_eq = self.equality.to_dense();
        k.view_mut((np, 0), (nd, np)).copy_from(&a_eq);
        k.view_mut((0, np), (np, nd)).copy_from(&a_eq.transpose());
        k
    }
}

/// Assemble the per-axis QP matrices for `n` agents and `n_obs` obstacles.
pub fn assemble_dims(n: usize, n_obs: usize, basis: &BasisMatrices) -> Result<KktAssembly> {
    if n == 0 {
        return Err(validation("n", "need at least one agent"));
    }
    let n_v = basis.n_v();
    let m = basis.m();
    if n_v < BOUNDARY_ROWS {
        return Err(validation(
            "degree",
            format!("need at least {BOUNDARY_ROWS} coefficients per axis, got {n_v}"),
        ));
    }
    let mut agent_rows = DMatrix::zeros(BOUNDARY_ROWS, n_v);
    for (k, (mat, row)) in [
        (&basis.p, 0),
        (&basis.pdot, 0),
        (&basis.pddot, 0),
        (&basis.p, m - 1),
        (&basis.pdot, m - 1),
        (&basis.pddot, m - 1),
    ]
    .into_iter()
    .enumerate()
    {
        agent_rows.row_mut(k).copy_from(&mat.row(row));
    }
    let rank = agent_rows
        .clone()
        .svd(false, false)
        .rank(1e-10 * agent_rows.norm());
    if rank < BOUNDARY_ROWS {
        return Err(Error::RankDeficient {
            rank: rank * n,
            required: BOUNDARY_ROWS * n,
        });
    }

    let block = basis.pddot.tr_mul(&basis.pddot);
    let mut q = DMatrix::zeros(n * n_v, n * n_v);
    for a in 0..n {
        q.view_mut((a * n_v, a * n_v), (n_v, n_v)).copy_from(&block);
    }
    let pairwise = PairwiseBlock::new(n, n_obs, basis.p.clone());
    let gram = pairwise.gram();
    Ok(KktAssembly {
        q,
        equality: EqualityBlock { agent_rows, n },
        pairwise,
        gram,
        fingerprint: Fingerprint {
            n,
            n_v,
            m,
            n_obs,
            basis_hash: basis.fingerprint_hash(),
        },
    })
}

pub fn assemble(spec: &ProblemSpec, basis: &BasisMatrices) -> Result<KktAssembly> {
    assemble_dims(spec.n(), spec.n_obs(), basis)
}

/// Dense LU factorization with partial (row) pivoting, stored packed.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLu {
    dim: usize,
    /// Row-major; strict lower part holds L (unit diagonal), the rest U.
    packed: Vec<f64>,
    perm: Vec<usize>,
}

impl DenseLu {
    pub fn factor(matrix: &DMatrix<f64>) -> Self {
        let dim = matrix.nrows();
        let mut a: Vec<f64> = (0..dim * dim).map(|idx| matrix[(idx / dim, idx % dim)]).collect();
        let mut perm: Vec<usize> = (0..dim).collect();
        for col in 0..dim {
            let pivot_row = (col..dim)
                .max_by(|&x, &y| a[x * dim + col].abs().total_cmp(&a[y * dim + col].abs()))
                .unwrap_or(col);
            if pivot_row != col {
                for k in 0..dim {
                    a.swap(col * dim + k, pivot_row * dim + k);
                }
                perm.swap(col, pivot_row);
            }
            let pivot = a[col * dim + col];
            if pivot == 0.0 {
                continue;
            }
            for row in (col + 1)..dim {
                let factor = a[row * dim + col] / pivot;
                a[row * dim + col] = factor;
                if factor != 0.0 {
                    for k in (col + 1)..dim {
                        a[row * dim + k] -= factor * a[col * dim + k];
                    }
                }
            }
        }
        Self { dim, packed: a, perm }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Smallest over largest absolute pivot; zero for an exactly singular matrix.
    pub fn pivot_ratio(&self) -> f64 {
        let d = self.dim;
        let pivots = (0..d).map(|k| self.packed[k * d + k].abs());
        let (lo, hi) = pivots.fold((f64::INFINITY, 0.0f64), |(lo, hi), p| (lo.min(p), hi.max(p)));
        if hi == 0.0 {
            0.0
        } else {
            lo / hi
        }
    }

    /// Solve `A x = b`. Substitutions run in fixed index order.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for row in 0..d {
            let lrow = &self.packed[row * d..row * d + row];
            let s: f64 = lrow.iter().zip(&x[..row]).map(|(l, v)| l * v).sum();
            x[row] -= s;
        }
        for row in (0..d).rev() {
            let urow = &self.packed[row * d + row + 1..(row + 1) * d];
            let s: f64 = urow.iter().zip(&x[row + 1..]).map(|(u, v)| u * v).sum();
            x[row] = (x[row] - s) / self.packed[row * d + row];
        }
        x
    }

    const MAGIC: &'static [u8; 8] = b"AMKKTLU1";

    pub fn to_bytes(&self, rho: f64) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * (self.dim + self.packed.len()));
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.extend_from_slice(&rho.to_le_bytes());
        for &p in &self.perm {
            out.extend_from_slice(&(p as u64).to_le_bytes());
        }
        for &v in &self.packed {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, f64)> {
        let bad = |msg: &str| Error::CacheFormat(msg.to_string());
        if bytes.len() < 24 || &bytes[..8] != Self::MAGIC {
            return Err(bad("missing LU blob header"));
        }
        let word = |k: usize| -> [u8; 8] { bytes[k..k + 8].try_into().expect("8-byte slice") };
        let dim = u64::from_le_bytes(word(8)) as usize;
        let rho = f64::from_le_bytes(word(16));
        if bytes.len() != 24 + 8 * (dim + dim * dim) {
            return Err(bad("LU blob length does not match its dimension"));
        }
        let mut offset = 24;
        let mut perm = Vec::with_capacity(dim);
        for _ in 0..dim {
            let p = u64::from_le_bytes(word(offset)) as usize;
            if p >= dim {
                return Err(bad("LU permutation index out of range"));
            }
            perm.push(p);
            offset += 8;
        }
        let mut packed = Vec::with_capacity(dim * dim);
        for _ in 0..dim * dim {
            packed.push(f64::from_le_bytes(word(offset)));
            offset += 8;
        }
        Ok((Self { dim, packed, perm }, rho))
    }
}

/// Solution of one axis' coefficient step.
#[derive(Debug, Clone)]
pub struct AxisSolution {
    pub coeffs: DVector<f64>,
    /// Multipliers of the boundary rows.
    pub nu: DVector<f64>,
}

/// A factored KKT matrix for one `rho`, shared by every solve with the same
/// fingerprint.
#[derive(Debug)]
pub struct KktFactor {
    pub rho: f64,
    pub assembly: Arc<KktAssembly>,
    lu: DenseLu,
    solves: AtomicUsize,
}

impl KktFactor {
    pub fn factorize(assembly: Arc<KktAssembly>, rho: f64) -> Result<Self> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(validation(
                "rho",
                format!("must be finite and non-negative, got {rho}"),
            ));
        }
        let lu = DenseLu::factor(&assembly.kkt_matrix(rho));
        Self::from_lu(assembly, rho, lu)
    }

    fn from_lu(assembly: Arc<KktAssembly>, rho: f64, lu: DenseLu) -> Result<Self> {
        if lu.dim() != assembly.dim() {
            return Err(Error::Dimension {
                what: "KKT factorization",
                expected: assembly.dim(),
                got: lu.dim(),
            });
        }
        let pivot_ratio = lu.pivot_ratio();
        if !(pivot_ratio > PIVOT_RATIO_FLOOR) {
            return Err(Error::SingularKkt { pivot_ratio, rho });
        }
        Ok(Self {
            rho,
            assembly,
            lu,
            solves: AtomicUsize::new(0),
        })
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.assembly.fingerprint
    }

    pub fn lu(&self) -> &DenseLu {
        &self.lu
    }

    /// Number of solves served by this factorization.
    pub fn solve_count(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    /// Solve with an explicit primal right-hand side (`rho A_fc^T b_fc`).
    pub fn solve_rhs(&self, primal_rhs: &DVector<f64>, b_eq: &DVector<f64>) -> Result<AxisSolution> {
        let np = self.assembly.primal_dim();
        let nd = self.assembly.dual_dim();
        if primal_rhs.len() != np {
            return Err(Error::Dimension {
                what: "primal right-hand side",
                expected: np,
                got: primal_rhs.len(),
            });
        }
        if b_eq.len() != nd {
            return Err(Error::Dimension {
                what: "b_eq",
                expected: nd,
                got: b_eq.len(),
            });
        }
        let rhs: Vec<f64> = primal_rhs.iter().chain(b_eq.iter()).copied().collect();
        let x = self.lu.solve(&rhs);
        self.solves.fetch_add(1, Ordering::Relaxed);
        Ok(AxisSolution {
            coeffs: DVector::from_column_slice(&x[..np]),
            nu: DVector::from_column_slice(&x[np..]),
        })
    }

    /// Minimize `1/2 c^T (Q + rho A^T A) c - rho (A^T b_fc)^T c` subject to
    /// `A_eq c = b_eq`.
    pub fn solve_axis(&self, b_fc: &DVector<f64>, b_eq: &DVector<f64>) -> Result<AxisSolution> {
        let rows = self.assembly.pairwise.rows();
        if b_fc.len() != rows {
            return Err(Error::Dimension {
                what: "b_fc",
                expected: rows,
                got: b_fc.len(),
            });
        }
        let rhs = self.assembly.pairwise.apply_transpose(b_fc) * self.rho;
        self.solve_rhs(&rhs, b_eq)
    }
}

/// Geometric penalty-weight schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoSchedule {
    pub values: Vec<f64>,
    pub switch_every: usize,
}

impl RhoSchedule {
    /// Stage index in effect at zero-based iteration `iter`.
    pub fn stage_at(&self, iter: usize) -> usize {
        (iter / self.switch_every).min(self.values.len() - 1)
    }

    pub fn rho_at(&self, iter: usize) -> f64 {
        self.values[self.stage_at(iter)]
    }
}

pub fn build_rho_schedule(
    rho_initial: f64,
    growth: f64,
    stages: usize,
    max_iters: usize,
) -> Result<RhoSchedule> {
    if !(rho_initial > 0.0) || !rho_initial.is_finite() {
        return Err(validation(
            "rho_initial",
            format!("must be positive, got {rho_initial}"),
        ));
    }
    if !(growth > 1.0) || !growth.is_finite() {
        return Err(validation("growth", format!("must exceed 1, got {growth}")));
    }
    if stages == 0 {
        return Err(validation("stages", "need at least one stage"));
    }
    if max_iters == 0 {
        return Err(validation("max_iters", "need at least one iteration"));
    }
    Ok(RhoSchedule {
        values: (0..stages).map(|s| rho_initial * growth.powi(s as i32)).collect(),
        switch_every: max_iters.div_ceil(stages),
    })
}

/// Whether a lookup was served from memory, from disk, or by factoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheOutcome {
    Memory,
    Disk,
    Factored,
}

impl CacheOutcome {
    pub fn is_hit(self) -> bool {
        !matches!(self, CacheOutcome::Factored)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
    pub disk_loads: usize,
    pub factorizations: usize,
}

type Slot = Arc<Mutex<Option<Arc<KktFactor>>>>;

/// Factorizations keyed by `(fingerprint, rho)`, optionally persisted.
///
/// Lookups for one key are single-flight: concurrent callers wait on the key's
/// slot while the first one factors. Different keys proceed independently.
#[derive(Debug, Default)]
pub struct KktCache {
    slots: Mutex<HashMap<(Fingerprint, u64), Slot>>,
    assemblies: Mutex<HashMap<Fingerprint, Arc<KktAssembly>>>,
    disk: Option<PathBuf>,
    hits: AtomicUsize,
    misses: AtomicUsize,
    disk_loads: AtomicUsize,
    factorizations: AtomicUsize,
}

/// Manifest describing one fingerprint's persisted factorizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub fingerprint: Fingerprint,
    pub dim: usize,
    /// Blob file name per `rho`, keyed by the textual `rho` value.
    pub factors: BTreeMap<String, String>,
}

impl CacheManifest {
    pub fn rhos(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.factors.keys().filter_map(|k| k.parse().ok()).collect();
        out.sort_by(f64::total_cmp);
        out
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("blob"),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

impl KktCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_disk(dir: impl Into<PathBuf>) -> Self {
        Self {
            disk: Some(dir.into()),
            ..Self::default()
        }
    }

    pub fn disk_dir(&self) -> Option<&Path> {
        self.disk.as_deref()
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            disk_loads: self.disk_loads.load(Ordering::Relaxed),
            factorizations: self.factorizations.load(Ordering::Relaxed),
        }
    }

    /// Shared assembly for a fingerprint, built on first request.
    pub fn assembly(&self, n: usize, n_obs: usize, basis: &BasisMatrices) -> Result<Arc<KktAssembly>> {
        let fp = Fingerprint {
            n,
            n_v: basis.n_v(),
            m: basis.m(),
            n_obs,
            basis_hash: basis.fingerprint_hash(),
        };
        let mut map = self.assemblies.lock().expect("assembly map poisoned");
        if let Some(a) = map.get(&fp) {
            return Ok(a.clone());
        }
        let a = Arc::new(assemble_dims(n, n_obs, basis)?);
        map.insert(fp, a.clone());
        Ok(a)
    }

    pub fn get_or_factorize(
        &self,
        assembly: &Arc<KktAssembly>,
        rho: f64,
    ) -> Result<(Arc<KktFactor>, CacheOutcome)> {
        let key = (assembly.fingerprint.clone(), rho.to_bits());
        let slot = {
            let mut slots = self.slots.lock().expect("cache map poisoned");
            slots.entry(key).or_default().clone()
        };
        let mut guard = slot.lock().expect("cache slot poisoned");
        if let Some(f) = guard.as_ref() {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok((f.clone(), CacheOutcome::Memory));
        }
        if let Some(factor) = self.load_from_disk(assembly, rho)? {
            let factor = Arc::new(factor);
            *guard = Some(factor.clone());
            self.hits.fetch_add(1, Ordering::Relaxed);
            self.disk_loads.fetch_add(1, Ordering::Relaxed);
            log::info!(
                "kkt cache hit (disk) for {} rho={rho}",
                assembly.fingerprint.key()
            );
            return Ok((factor, CacheOutcome::Disk));
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let started = Instant::now();
        let factor = Arc::new(KktFactor::factorize(assembly.clone(), rho)?);
        self.factorizations.fetch_add(1, Ordering::Relaxed);
        log::info!(
            "kkt cache miss for {} rho={rho}: factored {}x{} in {:.3}s",
            assembly.fingerprint.key(),
            assembly.dim(),
            assembly.dim(),
            started.elapsed().as_secs_f64()
        );
        if self.disk.is_some() {
            self.persist(&factor)?;
        }
        *guard = Some(factor.clone());
        Ok((factor, CacheOutcome::Factored))
    }

    /// Factorizations for every stage of `schedule`, in stage order.
    pub fn factors_for(
        &self,
        assembly: &Arc<KktAssembly>,
        schedule: &RhoSchedule,
    ) -> Result<Vec<(Arc<KktFactor>, CacheOutcome)>> {
        schedule
            .values
            .iter()
            .map(|&rho| self.get_or_factorize(assembly, rho))
            .collect()
    }

    fn fingerprint_dir(&self, fp: &Fingerprint) -> Option<PathBuf> {
        self.disk.as_ref().map(|d| d.join(fp.key()))
    }

    pub fn read_manifest(&self, fp: &Fingerprint) -> Result<Option<CacheManifest>> {
        let Some(dir) = self.fingerprint_dir(fp) else {
            return Ok(None);
        };
        let path = dir.join("manifest.json");
        if !path.exists() {
            return Ok(None);
        }
        let manifest: CacheManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        if &manifest.fingerprint != fp {
            return Err(Error::CacheFormat(format!(
                "manifest in {} belongs to another fingerprint",
                dir.display()
            )));
        }
        Ok(Some(manifest))
    }

    fn load_from_disk(&self, assembly: &Arc<KktAssembly>, rho: f64) -> Result<Option<KktFactor>> {
        let Some(manifest) = self.read_manifest(&assembly.fingerprint)? else {
            return Ok(None);
        };
        let Some(file) = manifest.factors.get(&rho.to_string()) else {
            return Ok(None);
        };
        let dir = self
            .fingerprint_dir(&assembly.fingerprint)
            .expect("disk cache configured");
        let (lu, stored_rho) = DenseLu::from_bytes(&fs::read(dir.join(file))?)?;
        if stored_rho.to_bits() != rho.to_bits() {
            return Err(Error::CacheFormat(format!(
                "{file} holds rho {stored_rho}, expected {rho}"
            )));
        }
        KktFactor::from_lu(assembly.clone(), rho, lu).map(Some)
    }

    fn persist(&self, factor: &KktFactor) -> Result<()> {
        let fp = factor.fingerprint();
        let dir = self.fingerprint_dir(fp).expect("disk cache configured");
        fs::create_dir_all(&dir)?;
        let file = format!("rho_{:016x}.bin", factor.rho.to_bits());
        write_atomic(&dir.join(&file), &factor.lu.to_bytes(factor.rho))?;
        let mut manifest = self.read_manifest(fp)?.unwrap_or_else(|| CacheManifest {
            fingerprint: fp.clone(),
            dim: factor.assembly.dim(),
            factors: BTreeMap::new(),
        });
        manifest.factors.insert(factor.rho.to_string(), file);
        let text = serde_json::to_string_pretty(&manifest)?;
        write_atomic(&dir.join("manifest.json"), text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, build_time_grid, BasisKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis(m: usize, degree: usize) -> BasisMatrices {
        build_basis(&build_time_grid(m, 5.0).unwrap(), degree, BasisKind::Bernstein).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
        DVector::from_fn(len, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn single_agent_has_no_pairs() {
        let b = basis(20, 10);
        let a = assemble_dims(1, 0, &b).unwrap();
        assert_eq!(a.pairwise.rows(), 0);
        assert_eq!(a.q, b.pddot.tr_mul(&b.pddot));
    }

    #[test]
    fn pair_order_is_lexicographic() {
        let a = assemble_dims(3, 2, &basis(7, 6)).unwrap();
        assert_eq!(
            &a.pairwise.pairs[..3],
            &[Pair::Agents(0, 1), Pair::Agents(0, 2), Pair::Agents(1, 2)]
        );
        assert_eq!(
            a.pairwise.pairs[3],
            Pair::Obstacle {
                agent: 0,
                obstacle: 0
            }
        );
        assert_eq!(a.pairwise.rows(), 7 * (3 + 6));
    }

    #[test]
    fn structured_operators_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = assemble_dims(4, 2, &basis(9, 7)).unwrap();
        let dense = a.pairwise.to_dense();
        let c = random_vec(&mut rng, a.pairwise.cols());
        let v = random_vec(&mut rng, a.pairwise.rows());
        assert!((a.pairwise.apply(&c) - &dense * &c).amax() < 1e-12);
        assert!((a.pairwise.apply_transpose(&v) - dense.tr_mul(&v)).amax() < 1e-12);
        assert!((&a.gram - dense.tr_mul(&dense)).amax() < 1e-10);
        assert!((a.equality.apply(&c) - a.equality.to_dense() * &c).amax() < 1e-12);
    }

    #[test]
    fn kkt_matrix_is_symmetric() {
        let a = assemble_dims(3, 1, &basis(30, 10)).unwrap();
        let k = a.kkt_matrix(8.0);
        assert!((&k - k.transpose()).amax() <= 1e-12 * k.amax());
    }

    #[test]
    fn lu_matches_reference_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 12;
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let b = random_vec(&mut rng, n);
        let x = DenseLu::factor(&m).solve(b.as_slice());
        let reference = m.clone().full_piv_lu().solve(&b).unwrap();
        for (u, v) in x.iter().zip(reference.iter()) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn lu_blob_roundtrip_and_rejects_garbage() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 3.0, 1.0]);
        let lu = DenseLu::factor(&m);
        let (back, rho) = DenseLu::from_bytes(&lu.to_bytes(4.5)).unwrap();
        assert_eq!(back, lu);
        assert_eq!(rho, 4.5);
        assert!(DenseLu::from_bytes(b"nonsense").is_err());
        let mut truncated = lu.to_bytes(1.0);
        truncated.pop();
        assert!(DenseLu::from_bytes(&truncated).is_err());
    }

    #[test]
    fn singular_kkt_is_reported() {
        let b = basis(20, 10);
        let a = Arc::new(assemble_dims(2, 0, &b).unwrap());
        let mut broken = (*a).clone();
        broken.q.fill(0.0);
        broken.gram.fill(0.0);
        let err = KktFactor::factorize(Arc::new(broken), 1.0).unwrap_err();
        assert!(matches!(err, Error::SingularKkt { .. }), "{err}");
    }

    #[test]
    fn size_mismatch_rejected() {
        let a = Arc::new(assemble_dims(2, 0, &basis(20, 10)).unwrap());
        let f = KktFactor::factorize(a.clone(), 1.0).unwrap();
        let err = f.solve_axis(&DVector::zeros(3), &DVector::zeros(12)).unwrap_err();
        assert!(matches!(err, Error::Dimension { what: "b_fc", .. }));
        let err = f
            .solve_axis(&DVector::zeros(a.pairwise.rows()), &DVector::zeros(5))
            .unwrap_err();
        assert!(matches!(err, Error::Dimension { what: "b_eq", .. }));
    }

    #[test]
    fn rho_schedule() {
        let s = build_rho_schedule(1.0, 2.0, 10, 150).unwrap();
        assert_eq!(s.values.len(), 10);
        assert_eq!(s.values[9], 512.0);
        assert_eq!(s.switch_every, 15);
        assert_eq!(s.rho_at(0), 1.0);
        assert_eq!(s.rho_at(15), 2.0);
        assert_eq!(s.rho_at(149), 512.0);
        assert_eq!(s.rho_at(10_000), 512.0);

        let flat = build_rho_schedule(1.0, 2.0, 1, 150).unwrap();
        assert!((0..150).all(|k| flat.rho_at(k) == 1.0));

        assert!(build_rho_schedule(0.0, 2.0, 10, 150).is_err());
        assert!(build_rho_schedule(1.0, 1.0, 10, 150).is_err());
        assert!(build_rho_schedule(1.0, 2.0, 0, 150).is_err());
    }

    #[test]
    fn memory_cache_hits_on_repeat() {
        let b = basis(20, 10);
        let cache = KktCache::new();
        let a = cache.assembly(2, 0, &b).unwrap();
        let (f1, o1) = cache.get_or_factorize(&a, 2.0).unwrap();
        let (f2, o2) = cache.get_or_factorize(&a, 2.0).unwrap();
        assert_eq!(o1, CacheOutcome::Factored);
        assert_eq!(o2, CacheOutcome::Memory);
        assert!(Arc::ptr_eq(&f1, &f2));
        assert_eq!(cache.stats().factorizations, 1);
        assert_eq!(cache.stats().hits, 1);
        let (_, o3) = cache.get_or_factorize(&a, 4.0).unwrap();
        assert_eq!(o3, CacheOutcome::Factored);
    }
}
