//! Finite-state transition kernels.
//!
//! A [`FiniteKernel`] is a row-stochastic matrix `p(α, β)` on the driving
//! space `{0, .., k-1}`. This module computes its stationary vector, its
//! time-reversed (dual) kernel `q(α, β) = m_β p(β, α) / m_α`, and the
//! boundedness constant `C` for which `C <= p(α, β) / m_β <= 1/C`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row sums and probability vectors must be within this of 1.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Maximum allowed `max_j |(mP)_j - m_j|` for a returned stationary vector.
pub const STATIONARY_RESIDUAL_TOL: f64 = 1e-10;
/// Second-smallest singular value of `Pᵀ - I` below this means the null space
/// is (numerically) more than one-dimensional.
pub const UNIQUENESS_THRESHOLD: f64 = 1e-9;

const POWER_TOL: f64 = 1e-13;
const POWER_MAX_ITER: usize = 1_000_000;
const CROSS_CHECK_TOL: f64 = 1e-9;

/// Row-stochastic `k × k` matrix, stored row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteKernel {
    size: usize,
    entries: Vec<f64>,
}

impl fmt::Debug for FiniteKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.rows()).finish()
    }
}

impl FiniteKernel {
    /// Validates nonnegativity and row sums (within [`STOCHASTIC_TOL`]).
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let size = rows.len();
        if size == 0 {
            return Err(Error::InvalidKernel("empty matrix".into()));
        }
        let mut entries = Vec::with_capacity(size * size);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != size {
                return Err(Error::InvalidKernel(format!(
                    "row {i} has {} entries, expected {size}",
                    row.len()
                )));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidKernel(format!(
                    "entry ({i},{j}) = {} is negative or not finite",
                    row[j]
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidKernel(format!("row {i} sums to {sum}")));
            }
            entries.extend_from_slice(row);
        }
        Ok(Self { size, entries })
    }

    /// Divides each row by its sum. Rows must be nonnegative with positive sum.
    pub fn from_weights(rows: Vec<Vec<f64>>) -> Result<Self> {
        let normalized = rows
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                let sum: f64 = row.iter().sum();
                if !(sum > 0.0) || row.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                    return Err(Error::InvalidKernel(format!("row {i} cannot be normalized")));
                }
                Ok(row.into_iter().map(|v| v / sum).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Self::new(normalized)
    }

    pub fn identity(size: usize) -> Self {
        let mut entries = vec![0.0; size * size];
        for i in 0..size {
            entries[i * size + i] = 1.0;
        }
        Self { size, entries }
    }

    /// Kernel whose every row equals `weights` (an i.i.d. drive).
    pub fn iid(weights: &StationaryVector) -> Self {
        let size = weights.len();
        let mut entries = Vec::with_capacity(size * size);
        for _ in 0..size {
            entries.extend_from_slice(weights.as_slice());
        }
        Self { size, entries }
    }

    /// Random kernel with entries drawn uniformly from `[0.05, 1)` before row
    /// normalization, so every entry is positive.
    pub fn random_positive<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Self {
        let rows = (0..size)
            .map(|_| (0..size).map(|_| rng.random_range(0.05..1.0)).collect())
            .collect();
        Self::from_weights(rows).expect("positive rows normalize")
    }

    /// Random walk on the circle group discretized into `cells` uniform cells:
    /// `p(i, j) ∝ density(c_j - c_i mod 1)` at cell centers `c`, rows
    /// renormalized. A constant density gives the Lebesgue-step walk
    /// `p(x, A) = Leb(A)`.
    pub fn circle_group_walk<F>(cells: usize, density: F) -> Result<Self>
    where
        F: Fn(f64) -> f64,
    {
        if cells == 0 {
            return Err(Error::InvalidKernel("zero cells".into()));
        }
        let width = 1.0 / cells as f64;
        let rows = (0..cells)
            .map(|i| {
                (0..cells)
                    .map(|j| {
                        // c_j - c_i = (j - i) / cells exactly on the grid
                        let diff = ((j as f64 - i as f64) * width).rem_euclid(1.0);
                        density(diff)
                    })
                    .collect()
            })
            .collect();
        Self::from_weights(rows)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.entries[from * self.size + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.entries[from * self.size..(from + 1) * self.size]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.chunks_exact(self.size)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn is_positive(&self) -> bool {
        self.entries.iter().all(|v| *v > 0.0)
    }

    /// Row vector times kernel: `(vP)_j = Σ_i v_i p(i, j)`.
    pub fn left_apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        for (i, row) in self.rows().enumerate() {
            for (o, p) in out.iter_mut().zip(row) {
                *o += v[i] * p;
            }
        }
        out
    }

    /// Kernel times column vector: `(Pg)_i = Σ_j p(i, j) g_j`.
    pub fn right_apply(&self, g: &[f64]) -> Vec<f64> {
        self.rows()
            .map(|row| row.iter().zip(g).map(|(p, x)| p * x).sum())
            .collect()
    }

    fn transpose_minus_identity(&self) -> DMatrix<f64> {
        let k = self.size;
        DMatrix::from_fn(k, k, |i, j| self.get(j, i) - if i == j { 1.0 } else { 0.0 })
    }
}

/// Plain-text matrix: whitespace-separated rows, blank lines and `#` comments
/// ignored.
impl FromStr for FiniteKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let rows = s
            .lines()
            .enumerate()
            .map(|(n, line)| (n + 1, line.split('#').next().unwrap_or("").trim()))
            .filter(|(_, line)| !line.is_empty())
            .map(|(n, line)| {
                line.split_whitespace()
                    .map(|tok| {
                        tok.parse::<f64>().map_err(|e| {
                            Error::InvalidKernel(format!("line {n}: cannot parse {tok:?}: {e}"))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }
}

/// Probability vector on the driving space; returned by
/// [`stationary_distribution`] as the stationary measure `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationaryVector {
    weights: Vec<f64>,
}

impl StationaryVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidDistribution("empty vector".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution(
                "negative or non-finite weight".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidDistribution(format!("weights sum to {sum}")));
        }
        Ok(Self { weights })
    }

    pub fn uniform(size: usize) -> Self {
        Self {
            weights: vec![1.0 / size as f64; size],
        }
    }

    pub fn point(size: usize, state: usize) -> Self {
        let mut weights = vec![0.0; size];
        weights[state] = 1.0;
        Self { weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    /// `max_j |Σ_α m_α p(α, j) - m_j|`.
    pub fn residual(&self, kernel: &FiniteKernel) -> f64 {
        kernel
            .left_apply(&self.weights)
            .iter()
            .zip(&self.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for StationaryVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.weights[i]
    }
}

/// Unique stationary vector of `kernel`.
///
/// The direct solve of `(Pᵀ - I) m = 0, Σ m = 1` is authoritative. A power
/// iteration on the lazy chain `(P + I)/2` (same stationary vector, always
/// aperiodic) cross-checks it; if that iteration converges to something
/// else the result is rejected.
pub fn stationary_distribution(kernel: &FiniteKernel) -> Result<StationaryVector> {
    let k = kernel.size();
    let a = kernel.transpose_minus_identity();

    if k > 1 {
        let mut sv: Vec<f64> = a.clone().singular_values().iter().copied().collect();
        sv.sort_by(f64::total_cmp);
        if sv[1] < UNIQUENESS_THRESHOLD {
            return Err(Error::NonUniqueStationary {
                second_singular: sv[1],
            });
        }
    }

    // Replace the last (redundant) balance equation with the normalization.
    let mut system = a;
    for j in 0..k {
        system[(k - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(k);
    rhs[k - 1] = 1.0;
    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or(Error::NonUniqueStationary {
            second_singular: 0.0,
        })?;

    let clipped: Vec<f64> = solution.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    let m = StationaryVector {
        weights: clipped.into_iter().map(|v| v / total).collect(),
    };

    let residual = m.residual(kernel);
    if residual > STATIONARY_RESIDUAL_TOL {
        return Err(Error::InvalidKernel(format!(
            "stationary residual {residual:.3e} exceeds {STATIONARY_RESIDUAL_TOL:.0e}"
        )));
    }

    if let Some(power) = power_iteration(kernel, POWER_TOL, POWER_MAX_ITER) {
        let gap = power
            .weights
            .iter()
            .zip(&m.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if gap > CROSS_CHECK_TOL {
            return Err(Error::SolverDisagreement { gap });
        }
    }
    Ok(m)
}

/// Power iteration on the lazy chain `(P + I)/2` from the uniform vector.
/// Returns `None` if the sup-norm step does not fall below `tol` within
/// `max_iter` iterations.
pub fn power_iteration(kernel: &FiniteKernel, tol: f64, max_iter: usize) -> Option<StationaryVector> {
    let k = kernel.size();
    let mut v = vec![1.0 / k as f64; k];
    for _ in 0..max_iter {
        let pv = kernel.left_apply(&v);
        let next: Vec<f64> = pv.iter().zip(&v).map(|(a, b)| 0.5 * (a + b)).collect();
        let step = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let total: f64 = next.iter().sum();
        v = next.into_iter().map(|x| x / total).collect();
        if step < tol {
            return Some(StationaryVector { weights: v });
        }
    }
    None
}

/// Time reversal of `kernel` relative to `m`: `q(i, j) = m_j p(j, i) / m_i`.
pub fn dual_kernel(kernel: &FiniteKernel, m: &StationaryVector) -> Result<FiniteKernel> {
    let k = kernel.size();
    if m.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "kernel has {k} states, stationary vector {}",
            m.len()
        )));
    }
    if let Some(state) = m.as_slice().iter().position(|w| *w <= 0.0) {
        return Err(Error::ZeroMassState { state });
    }
    let rows = (0..k)
        .map(|i| (0..k).map(|j| m[j] * kernel.get(j, i) / m[i]).collect())
        .collect();
    FiniteKernel::new(rows)
}

/// A positive kernel with its stationary vector, the density matrix
/// `k(α, β) = p(α, β) / m_β` and the largest `C <= 1` with
/// `C <= k(α, β) <= 1/C` everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedPair {
    pub kernel: FiniteKernel,
    pub stationary: StationaryVector,
    pub constant: f64,
    pub density: Vec<Vec<f64>>,
}

impl BoundedPair {
    /// Solves for `m` and then builds the pair.
    pub fn from_kernel(kernel: FiniteKernel) -> Result<Self> {
        let m = stationary_distribution(&kernel)?;
        boundedness_constant(&kernel, &m)
    }

    pub fn size(&self) -> usize {
        self.kernel.size()
    }

    pub fn dual(&self) -> FiniteKernel {
        dual_kernel(&self.kernel, &self.stationary).expect("bounded pair has positive mass")
    }
}

pub fn boundedness_constant(kernel: &FiniteKernel, m: &StationaryVector) -> Result<BoundedPair> {
    let k = kernel.size();
    if m.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "kernel has {k} states, stationary vector {}",
            m.len()
        )));
    }
    for i in 0..k {
        for j in 0..k {
            if kernel.get(i, j) <= 0.0 {
                return Err(Error::NotBounded { row: i, col: j });
            }
        }
    }
    if let Some(state) = m.as_slice().iter().position(|w| *w <= 0.0) {
        return Err(Error::ZeroMassState { state });
    }
    let density: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| kernel.get(i, j) / m[j]).collect())
        .collect();
    let (lo, hi) = density
        .iter()
        .flatten()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    let mut constant = lo.min(1.0 / hi).min(1.0);
    // 1/(1/hi) can round above 1/hi; step down until both bounds hold in f64
    while constant > lo || hi > 1.0 / constant {
        constant = constant.next_down();
    }
    Ok(BoundedPair {
        kernel: kernel.clone(),
        stationary: m.clone(),
        constant,
        density,
    })
}

/// `max_{i,j} |m_i p(i, j) - m_j q(j, i)|`: the duality relation on singletons.
pub fn duality_residual(p: &FiniteKernel, q: &FiniteKernel, m: &StationaryVector) -> f64 {
    let k = p.size();
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            worst = worst.max((m[i] * p.get(i, j) - m[j] * q.get(j, i)).abs());
        }
    }
    worst
}

/// `|Σ κ(α,β) p(α,β) m_α - Σ κ(β,α) q(α,β) m_α|` for a nonnegative test
/// matrix `kappa`.
pub fn duality_identity_residual(
    p: &FiniteKernel,
    q: &FiniteKernel,
    m: &StationaryVector,
    kappa: &[Vec<f64>],
) -> f64 {
    let k = p.size();
    let mut forward = 0.0;
    let mut backward = 0.0;
    for a in 0..k {
        for b in 0..k {
            forward += kappa[a][b] * p.get(a, b) * m[a];
            backward += kappa[b][a] * q.get(a, b) * m[a];
        }
    }
    (forward - backward).abs()
}
