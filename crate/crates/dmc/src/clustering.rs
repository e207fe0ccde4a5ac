//! Smooth-min clustering with center-specific projections.
//!
//! Starting from zero distances, each iteration computes
//!
//! ```text
//! s_ij = softmax_j(-z·d_ij)
//! c_j  = Σ_i s_ij W_j u_i
//! d_ij = -⟨W_j u_i, c_j / ‖c_j‖⟩
//! ```
//!
//! Sums over features run in ascending feature index, so identical inputs
//! give bitwise-identical states.

use rand::Rng;

use crate::error::{DmcError, Result};
use crate::numerics::{self, Matrix, NORM_EPS};

/// Which modality a feature set was extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Audio,
    Visual,
}

/// Feature vectors read row-major off a `rows × cols` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    vectors: Vec<Vec<f64>>,
    grid_shape: (usize, usize),
    modality: Modality,
}

impl FeatureSet {
    pub fn new(vectors: Vec<Vec<f64>>, grid_shape: (usize, usize), modality: Modality) -> Result<Self> {
        if vectors.is_empty() {
            return Err(DmcError::Shape("feature set must hold at least one vector".into()));
        }
        let dim = vectors[0].len();
        if dim == 0 {
            return Err(DmcError::Shape("feature vectors must have positive dimension".into()));
        }
        if let Some(i) = vectors.iter().position(|v| v.len() != dim) {
            return Err(DmcError::Shape(format!(
                "feature {i} has dimension {} but feature 0 has {dim}",
                vectors[i].len()
            )));
        }
        if grid_shape.0 * grid_shape.1 != vectors.len() {
            return Err(DmcError::Shape(format!(
                "grid shape {:?} does not cover {} features",
                grid_shape,
                vectors.len()
            )));
        }
        Ok(Self {
            vectors,
            grid_shape,
            modality,
        })
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        self.grid_shape
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn count(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    /// Returns a copy whose vectors are all multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> FeatureSet {
        FeatureSet {
            vectors: self
                .vectors
                .iter()
                .map(|v| v.iter().map(|x| x * factor).collect())
                .collect(),
            grid_shape: self.grid_shape,
            modality: self.modality,
        }
    }
}

/// The k projection matrices `W_j`, each `m × n`, shared by both modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBank {
    matrices: Vec<Matrix>,
}

impl ProjectionBank {
    pub fn new(matrices: Vec<Matrix>) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| DmcError::Shape("projection bank needs at least one matrix".into()))?;
        let (m, n) = (first.rows(), first.cols());
        if m == 0 || n == 0 {
            return Err(DmcError::Shape("projection matrices must be non-empty".into()));
        }
        for (j, w) in matrices.iter().enumerate() {
            if (w.rows(), w.cols()) != (m, n) {
                return Err(DmcError::Shape(format!(
                    "projection {j} is {}x{} but projection 0 is {m}x{n}",
                    w.rows(),
                    w.cols()
                )));
            }
            if !w.is_finite() {
                return Err(DmcError::InvalidArgument(format!(
                    "projection {j} has non-finite entries"
                )));
            }
        }
        Ok(Self { matrices })
    }

    /// k identity matrices of size `n × n`.
    pub fn identity(k: usize, n: usize) -> Result<Self> {
        Self::new(vec![Matrix::identity(n); k])
    }

    /// Entries uniform in `[-a, a]` with `a = sqrt(1/n)`.
    pub fn random<R: Rng + ?Sized>(k: usize, m: usize, n: usize, rng: &mut R) -> Result<Self> {
        let a = (1.0 / n as f64).sqrt();
        let matrices = (0..k)
            .map(|_| {
                let data = (0..m * n).map(|_| rng.random_range(-a..=a)).collect();
                Matrix::from_vec(m, n, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(matrices)
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.matrices
    }

    pub(crate) fn matrices_mut(&mut self) -> &mut [Matrix] {
        &mut self.matrices
    }

    pub fn k(&self) -> usize {
        self.matrices.len()
    }

    pub fn m(&self) -> usize {
        self.matrices[0].rows()
    }

    pub fn n(&self) -> usize {
        self.matrices[0].cols()
    }
}

/// Cluster count, iteration count and smoothing magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterConfig {
    pub k: usize,
    pub iterations: usize,
    pub z: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: 2,
            iterations: 3,
            z: 1.0,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(DmcError::Config("cluster count k must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(DmcError::Config("iteration count must be at least 1".into()));
        }
        if !(self.z.is_finite() && self.z > 0.0) {
            return Err(DmcError::Config(format!(
                "smoothing magnitude z must be positive, got {}",
                self.z
            )));
        }
        Ok(())
    }
}

/// Distances, assignments and centers after `iteration` rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    /// `count × k` matrix `d_ij`.
    pub distances: Vec<Vec<f64>>,
    /// `count × k` row-stochastic matrix `s_ij`.
    pub assignments: Vec<Vec<f64>>,
    /// `k` centers of dimension `m`. Empty before the first update.
    pub centers: Vec<Vec<f64>>,
    pub iteration: usize,
}

/// Smooth and hard clustering objectives over one distance matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub smooth: f64,
    pub hard: f64,
}

fn check_bank(features: &FeatureSet, bank: &ProjectionBank) -> Result<()> {
    if features.dim() != bank.n() {
        return Err(DmcError::Shape(format!(
            "features have dimension {} but projections expect {}",
            features.dim(),
            bank.n()
        )));
    }
    Ok(())
}

fn check_k(bank: &ProjectionBank, config: &ClusterConfig) -> Result<()> {
    config.validate()?;
    if bank.k() != config.k {
        return Err(DmcError::Shape(format!(
            "config asks for {} clusters but the bank holds {} projections",
            config.k,
            bank.k()
        )));
    }
    Ok(())
}

/// State before the first iteration: zero distances and uniform assignments.
pub fn init_state(features: &FeatureSet, bank: &ProjectionBank, config: &ClusterConfig) -> Result<ClusterState> {
    check_bank(features, bank)?;
    check_k(bank, config)?;
    let k = config.k;
    let p = features.count();
    Ok(ClusterState {
        distances: vec![vec![0.0; k]; p],
        assignments: vec![vec![1.0 / k as f64; k]; p],
        centers: Vec::new(),
        iteration: 0,
    })
}

/// Projected features `y_ij = W_j u_i`, flattened as `[(i·k + j)·m + r]`.
pub(crate) fn project_flat(vectors: &[Vec<f64>], bank: &ProjectionBank) -> Vec<f64> {
    let (k, m) = (bank.k(), bank.m());
    let mut y = vec![0.0; vectors.len() * k * m];
    for (i, u) in vectors.iter().enumerate() {
        for (j, w) in bank.matrices().iter().enumerate() {
            let off = (i * k + j) * m;
            w.matvec_into(u, &mut y[off..off + m]);
        }
    }
    y
}

/// `d_ij = -⟨y_ij, ĉ_j⟩`.
fn distances_flat(y: &[f64], chat: &[f64], p: usize, k: usize, m: usize) -> Vec<f64> {
    let mut d = vec![0.0; p * k];
    for i in 0..p {
        for j in 0..k {
            let off = (i * k + j) * m;
            d[i * k + j] = -numerics::dot(&y[off..off + m], &chat[j * m..(j + 1) * m]);
        }
    }
    d
}

/// `c_j = Σ_i s_ij y_ij`, accumulated in ascending `i`.
fn centers_flat(y: &[f64], s: &[f64], p: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * m];
    for i in 0..p {
        for j in 0..k {
            let sij = s[i * k + j];
            let off = (i * k + j) * m;
            for (cr, &yr) in c[j * m..(j + 1) * m].iter_mut().zip(&y[off..off + m]) {
                *cr += sij * yr;
            }
        }
    }
    c
}

/// Row-wise `softmax(-z·d)`.
fn assignments_flat(d: &[f64], z: f64, k: usize) -> Vec<f64> {
    let mut s: Vec<f64> = d.iter().map(|&v| -z * v).collect();
    for row in s.chunks_mut(k) {
        numerics::softmax_in_place(row);
    }
    s
}

/// Normalizes each center, failing on the first degenerate one.
fn normalize_centers(c: &[f64], k: usize, m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut norms = Vec::with_capacity(k);
    let mut chat = vec![0.0; k * m];
    for j in 0..k {
        let cj = &c[j * m..(j + 1) * m];
        let nj = numerics::norm(cj);
        if !(nj >= NORM_EPS) {
            return Err(DmcError::DegenerateCenter { cluster: j, norm: nj });
        }
        for (h, &v) in chat[j * m..(j + 1) * m].iter_mut().zip(cj) {
            *h = v / nj;
        }
        norms.push(nj);
    }
    Ok((norms, chat))
}

/// Quantities of one iteration kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Step {
    /// Assignments used to form this iteration's centers, `p × k`.
    pub s: Vec<f64>,
    /// Center norms `‖c_j‖`.
    pub norms: Vec<f64>,
    /// Unit centers, `k × m`.
    pub chat: Vec<f64>,
    /// Raw centers, `k × m`.
    pub c: Vec<f64>,
}

/// Full record of an unrolled clustering run.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    pub p: usize,
    pub k: usize,
    pub m: usize,
    pub y: Vec<f64>,
    pub steps: Vec<Step>,
    pub distances: Vec<f64>,
}

impl Trace {
    pub fn centers(&self) -> &[f64] {
        &self.steps.last().expect("at least one iteration").c
    }

    pub fn assignments(&self) -> &[f64] {
        &self.steps.last().expect("at least one iteration").s
    }

    pub fn center(&self, j: usize) -> &[f64] {
        &self.centers()[j * self.m..(j + 1) * self.m]
    }
}

/// Runs the iteration on raw vectors without building a [`FeatureSet`].
pub(crate) fn run_traced(vectors: &[Vec<f64>], bank: &ProjectionBank, config: &ClusterConfig) -> Result<Trace> {
    let (p, k, m) = (vectors.len(), bank.k(), bank.m());
    let y = project_flat(vectors, bank);
    let mut d = vec![0.0; p * k];
    let mut steps = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let s = assignments_flat(&d, config.z, k);
        let c = centers_flat(&y, &s, p, k, m);
        let (norms, chat) = normalize_centers(&c, k, m)?;
        d = distances_flat(&y, &chat, p, k, m);
        steps.push(Step { s, norms, chat, c });
    }
    Ok(Trace {
        p,
        k,
        m,
        y,
        steps,
        distances: d,
    })
}

fn to_rows(flat: &[f64], width: usize) -> Vec<Vec<f64>> {
    flat.chunks(width).map(<[f64]>::to_vec).collect()
}

fn check_rows(rows: &[Vec<f64>], width: usize, what: &str) -> Result<()> {
    if let Some(i) = rows.iter().position(|r| r.len() != width) {
        return Err(DmcError::Shape(format!(
            "{what} row {i} has length {} but {width} is required",
            rows[i].len()
        )));
    }
    Ok(())
}

/// `d_ij = -⟨W_j u_i, c_j/‖c_j‖⟩` for every feature and cluster.
pub fn compute_distances(features: &FeatureSet, bank: &ProjectionBank, centers: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    check_bank(features, bank)?;
    let (k, m, p) = (bank.k(), bank.m(), features.count());
    if centers.len() != k {
        return Err(DmcError::Shape(format!("{} centers for {k} clusters", centers.len())));
    }
    check_rows(centers, m, "center")?;
    let (_, chat) = normalize_centers(&centers.concat(), k, m)?;
    let y = project_flat(features.vectors(), bank);
    Ok(to_rows(&distances_flat(&y, &chat, p, k, m), k))
}

/// Row-wise `softmax(-z·d_i)`.
pub fn update_assignments(distances: &[Vec<f64>], z: f64) -> Result<Vec<Vec<f64>>> {
    if !(z.is_finite() && z > 0.0) {
        return Err(DmcError::InvalidArgument(format!("z must be positive, got {z}")));
    }
    distances
        .iter()
        .map(|row| {
            let scaled: Vec<f64> = row.iter().map(|&d| -z * d).collect();
            numerics::softmax(&scaled)
        })
        .collect()
}

/// `c_j = Σ_i s_ij W_j u_i`.
pub fn update_centers(features: &FeatureSet, bank: &ProjectionBank, assignments: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    check_bank(features, bank)?;
    let (k, m, p) = (bank.k(), bank.m(), features.count());
    if assignments.len() != p {
        return Err(DmcError::Shape(format!(
            "{} assignment rows for {p} features",
            assignments.len()
        )));
    }
    check_rows(assignments, k, "assignment")?;
    let y = project_flat(features.vectors(), bank);
    Ok(to_rows(&centers_flat(&y, &assignments.concat(), p, k, m), m))
}

/// Runs `config.iterations` rounds of assignment, center and distance updates.
pub fn run_clustering(features: &FeatureSet, bank: &ProjectionBank, config: &ClusterConfig) -> Result<ClusterState> {
    check_bank(features, bank)?;
    check_k(bank, config)?;
    let trace = run_traced(features.vectors(), bank, config)?;
    Ok(ClusterState {
        distances: to_rows(&trace.distances, trace.k),
        assignments: to_rows(trace.assignments(), trace.k),
        centers: to_rows(trace.centers(), trace.m),
        iteration: config.iterations,
    })
}

/// Smooth objective `-(1/z) Σ_i ln Σ_j exp(-z·d_ij)` and hard objective `Σ_i min_j d_ij`.
pub fn objective(state: &ClusterState, z: f64) -> Result<ObjectiveValue> {
    let mut smooth = 0.0;
    let mut hard = 0.0;
    for row in &state.distances {
        smooth += numerics::smooth_min(row, z)?;
        hard += row.iter().copied().fold(f64::INFINITY, f64::min);
    }
    Ok(ObjectiveValue { smooth, hard })
}
