//! Sparse random-projection encoder.
//!
//! An input `x` of dimension `d` is expanded to `m` units by a fixed binary
//! matrix in which every row samples `p` input coordinates, `psi = Theta x`.
//! A winner-take-all step keeps the `l` largest strictly positive entries and
//! a divide-by-max normalization maps the survivors into `[0, 1]`.
//!
//! The dense ablation skips the winner-take-all step and min-max normalizes
//! the whole expansion vector instead.

use std::cmp::Ordering;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Anything the associative layer can read: a length-`dim` activation vector
/// exposing its nonzero entries in increasing index order.
pub trait Code {
    fn dim(&self) -> usize;

    fn nonzeros(&self) -> impl Iterator<Item = (usize, f64)> + '_;

    fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (i, v) in self.nonzeros() {
            out[i] = v;
        }
        out
    }
}

/// Expansion-layer activity before sparsification.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseCode(pub Vec<f64>);

impl DenseCode {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `(v - min) / (max - min)` over the whole vector. A constant vector maps
    /// to all zeros.
    pub fn min_max_normalized(&self) -> DenseCode {
        let (lo, hi) = self
            .0
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let range = hi - lo;
        if self.0.is_empty() || range.is_nan() || range <= 0.0 {
            return DenseCode(vec![0.0; self.0.len()]);
        }
        DenseCode(self.0.iter().map(|&v| (v - lo) / range).collect())
    }
}

impl Code for DenseCode {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn nonzeros(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, v)| v != 0.0)
    }

    fn to_dense(&self) -> Vec<f64> {
        self.0.clone()
    }
}

/// A length-`dim` vector stored by its nonzero entries, sorted by index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseCode {
    pub fn zeros(dim: usize) -> Self {
        SparseCode {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a code from a dense slice, keeping the nonzero entries.
    pub fn from_dense(values: &[f64]) -> Self {
        let dim = values.len();
        let (indices, values) = values
            .iter()
            .enumerate()
            .filter(|&(_, &v)| v != 0.0)
            .map(|(i, &v)| (i as u32, v))
            .unzip();
        SparseCode {
            dim,
            indices,
            values,
        }
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn active_count(&self) -> usize {
        self.indices.len()
    }

    /// Active units as a binary support.
    pub fn support(&self) -> &[u32] {
        &self.indices
    }

    /// Number of units active in both codes.
    pub fn overlap(&self, other: &SparseCode) -> usize {
        let (mut a, mut b, mut n) = (0, 0, 0);
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                Ordering::Less => a += 1,
                Ordering::Greater => b += 1,
                Ordering::Equal => {
                    n += 1;
                    a += 1;
                    b += 1;
                }
            }
        }
        n
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

impl Code for SparseCode {
    fn dim(&self) -> usize {
        self.dim
    }

    fn nonzeros(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }
}

/// A linear map from input space to the expansion layer.
pub trait Projection: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn project(&self, x: &[f64]) -> Result<DenseCode>;
}

/// Fixed sparse binary `m x d` matrix with exactly `p` ones per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectionMatrix {
    rows: usize,
    cols: usize,
    per_row: usize,
    seed: Option<u64>,
    // row-major, `per_row` sorted column indices per row
    columns: Vec<u32>,
}

impl ProjectionMatrix {
    /// Samples each row's `p` columns uniformly without replacement,
    /// independently across rows, from a ChaCha8 stream seeded with `seed`.
    pub fn new(d: usize, m: usize, p: usize, seed: u64) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(Error::InvalidDimension(format!(
                "projection needs d >= 1 and m >= 1 (got d={d}, m={m})"
            )));
        }
        if p < 1 || p > d {
            return Err(Error::InvalidSparsity(format!(
                "ones per row must lie in 1..={d}, got {p}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut columns = Vec::with_capacity(m * p);
        let mut row = Vec::with_capacity(p);
        for _ in 0..m {
            row.clear();
            row.extend(index::sample(&mut rng, d, p).iter().map(|c| c as u32));
            row.sort_unstable();
            columns.extend_from_slice(&row);
        }
        Ok(ProjectionMatrix {
            rows: m,
            cols: d,
            per_row: p,
            seed: Some(seed),
            columns,
        })
    }

    /// Builds a matrix from explicit 0/1 rows. Every row must carry the same
    /// number of ones.
    pub fn from_binary_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let m = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if m == 0 || d == 0 {
            return Err(Error::InvalidDimension("empty projection rows".into()));
        }
        let mut columns = Vec::new();
        let mut per_row = None;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::InvalidDimension(format!(
                    "row {i} has {} columns, expected {d}",
                    row.len()
                )));
            }
            let mut ones = 0;
            for (c, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => {
                        columns.push(c as u32);
                        ones += 1;
                    }
                    _ => {
                        return Err(Error::InvalidSparsity(format!(
                            "entry ({i}, {c}) is {v}, expected 0 or 1"
                        )))
                    }
                }
            }
            match per_row {
                None if ones == 0 => {
                    return Err(Error::InvalidSparsity(format!("row {i} has no ones")))
                }
                None => per_row = Some(ones),
                Some(p) if p != ones => {
                    return Err(Error::InvalidSparsity(format!(
                        "row {i} has {ones} ones, expected {p}"
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(ProjectionMatrix {
            rows: m,
            cols: d,
            per_row: per_row.unwrap_or(0),
            seed: None,
            columns,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn per_row(&self) -> usize {
        self.per_row
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Sorted input coordinates sampled by row `i`.
    pub fn row(&self, i: usize) -> &[u32] {
        &self.columns[i * self.per_row..(i + 1) * self.per_row]
    }

    /// The `(i, c)` entry as 0/1.
    pub fn entry(&self, i: usize, c: usize) -> u8 {
        self.row(i).binary_search(&(c as u32)).is_ok() as u8
    }
}

impl Projection for ProjectionMatrix {
    fn input_dim(&self) -> usize {
        self.cols
    }

    fn output_dim(&self) -> usize {
        self.rows
    }

    fn project(&self, x: &[f64]) -> Result<DenseCode> {
        if x.len() != self.cols {
            return Err(Error::InvalidInput {
                expected: self.cols,
                actual: x.len(),
            });
        }
        let psi = self
            .columns
            .chunks_exact(self.per_row)
            .map(|row| row.iter().fold(0.0, |acc, &c| acc + x[c as usize]))
            .collect();
        Ok(DenseCode(psi))
    }
}

/// Dense i.i.d. standard-normal `m x d` projection; used as the comparison
/// map when measuring how coding shrinks input similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianProjection {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl GaussianProjection {
    pub fn new(d: usize, m: usize, seed: u64) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(Error::InvalidDimension(format!(
                "projection needs d >= 1 and m >= 1 (got d={d}, m={m})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..m * d)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Ok(GaussianProjection {
            rows: m,
            cols: d,
            entries,
        })
    }
}

impl Projection for GaussianProjection {
    fn input_dim(&self) -> usize {
        self.cols
    }

    fn output_dim(&self) -> usize {
        self.rows
    }

    fn project(&self, x: &[f64]) -> Result<DenseCode> {
        if x.len() != self.cols {
            return Err(Error::InvalidInput {
                expected: self.cols,
                actual: x.len(),
            });
        }
        let psi = self
            .entries
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect();
        Ok(DenseCode(psi))
    }
}

/// Default ones-per-row for input dimension `d`: 10 for 84-dimensional
/// inputs, 64 for 512-dimensional inputs, otherwise `round(0.1 d)` (at least 1).
pub fn default_per_row(d: usize) -> usize {
    match d {
        84 => 10,
        512 => 64,
        _ => ((0.1 * d as f64).round() as usize).clamp(1, d.max(1)),
    }
}

/// Keeps the `l` largest strictly positive entries of `psi`, zeroing the rest.
/// Ties at the cutoff go to the lower index. Values are not rescaled.
pub fn winner_take_all(psi: &DenseCode, l: usize) -> Result<SparseCode> {
    let m = psi.len();
    if l < 1 || l > m {
        return Err(Error::InvalidSparsity(format!(
            "winner-take-all level must lie in 1..={m}, got {l}"
        )));
    }
    let mut positive: Vec<(u32, f64)> = psi
        .0
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v > 0.0)
        .map(|(i, &v)| (i as u32, v))
        .collect();
    if positive.len() > l {
        // total order: larger value first, then lower index
        let rank = |a: &(u32, f64), b: &(u32, f64)| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then(a.0.cmp(&b.0))
        };
        positive.select_nth_unstable_by(l - 1, rank);
        positive.truncate(l);
        positive.sort_unstable_by_key(|&(i, _)| i);
    }
    let (indices, values) = positive.into_iter().unzip();
    Ok(SparseCode {
        dim: m,
        indices,
        values,
    })
}

/// Divides every entry by the code's maximum. Silenced entries pin the
/// minimum at zero, so this is min-max normalization that keeps the active
/// set intact. An all-zero code is returned unchanged.
pub fn normalize(code: &SparseCode) -> SparseCode {
    let max = code.max_value();
    if max.is_nan() || max <= 0.0 {
        return code.clone();
    }
    SparseCode {
        dim: code.dim,
        indices: code.indices.clone(),
        values: code.values.iter().map(|v| v / max).collect(),
    }
}

/// `normalize(winner_take_all(project(theta, x), l))`.
pub fn encode<P: Projection + ?Sized>(theta: &P, x: &[f64], l: usize) -> Result<SparseCode> {
    let psi = theta.project(x)?;
    Ok(normalize(&winner_take_all(&psi, l)?))
}

/// Dense ablation: min-max normalized `theta x` with no winner-take-all.
pub fn encode_dense<P: Projection + ?Sized>(theta: &P, x: &[f64]) -> Result<DenseCode> {
    Ok(theta.project(x)?.min_max_normalized())
}
