//! Pairwise distances, normalized distances, softmax affinities, and the
//! losses built on them.
//!
//! The contextual loss between point sets X and Y is
//! `-log((1/N)·Σ_j max_i A_ij)` where the affinities A_ij are a row-softmax
//! of `(1 - d̃_ij)/h` and `d̃_ij = d_ij/(min_k d_ik + ε)`. With the bandwidth
//! driven to zero the affinities collapse onto nearest neighbours and the
//! loss becomes a target-coverage statistic ([`delta_limit_coverage`]). The
//! asymmetric Chamfer distance ([`chamfer_distance`]) is the corresponding
//! hard-minimum baseline.

use crate::error::{Error, Result};
use crate::feature_set::FeatureSet;
use crate::scalar::Real;

/// Metric used for all pairwise computations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceKind {
    /// `1 - x·y/(‖x‖‖y‖)`; zero-norm vectors are at distance 1 to everything.
    Cosine,
    /// Euclidean distance.
    L2,
    /// Squared Euclidean distance.
    SquaredL2,
}

impl DistanceKind {
    pub fn name(&self) -> &'static str {
        match self {
            DistanceKind::Cosine => "cosine",
            DistanceKind::L2 => "l2",
            DistanceKind::SquaredL2 => "squared_l2",
        }
    }
}

impl std::str::FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(DistanceKind::Cosine),
            "l2" => Ok(DistanceKind::L2),
            "squared_l2" | "squared-l2" => Ok(DistanceKind::SquaredL2),
            other => Err(Error::invalid(format!("unknown distance kind {other:?}"))),
        }
    }
}

/// Dense |X|×|Y| matrix of nonnegative pairwise values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix<T> {
    data: Vec<T>,
    rows: usize,
    cols: usize,
}

impl<T: Real> DistanceMatrix<T> {
    pub(crate) fn from_data(data: Vec<T>, rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { data, rows, cols }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Row-stochastic affinity matrix: entries in [0,1], each row sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix<T> {
    data: Vec<T>,
    rows: usize,
    cols: usize,
    bandwidth: T,
}

impl<T: Real> AffinityMatrix<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bandwidth(&self) -> T {
        self.bandwidth
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

fn squared_l2<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| {
        let d = *x - *y;
        acc + d * d
    })
}

pub(crate) fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Cosine distance with the zero-vector convention used throughout: a
/// zero-norm vector is at distance 1 to everything.
pub(crate) fn cosine_distance<T: Real>(a: &[T], b: &[T]) -> T {
    let (na, nb) = (norm(a), norm(b));
    if na.is_zero() || nb.is_zero() {
        return T::one();
    }
    (T::one() - dot(a, b) / (na * nb)).max(T::zero())
}

/// Subtracts the mean of `y` from both sets when centering applies
/// (cosine with the flag set); otherwise returns clones untouched.
pub(crate) fn centered_pair<T: Real>(
    x: &FeatureSet<T>,
    y: &FeatureSet<T>,
    kind: DistanceKind,
    center_by_target_mean: bool,
) -> (FeatureSet<T>, FeatureSet<T>) {
    if !(center_by_target_mean && kind == DistanceKind::Cosine) {
        return (x.clone(), y.clone());
    }
    let mean = y.mean();
    let shift = |set: &FeatureSet<T>| {
        let dim = set.dim();
        let data: Vec<T> = set
            .as_flat()
            .iter()
            .enumerate()
            .map(|(i, v)| *v - mean[i % dim])
            .collect();
        FeatureSet::from_flat(data, set.len(), dim).expect("centered set stays valid")
    };
    (shift(x), shift(y))
}

/// All-pairs distances between `x` (rows) and `y` (columns).
pub fn distance_matrix<T: Real>(
    x: &FeatureSet<T>,
    y: &FeatureSet<T>,
    kind: DistanceKind,
    center_by_target_mean: bool,
) -> Result<DistanceMatrix<T>> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch(x.dim(), y.dim()));
    }
    let (cx, cy) = centered_pair(x, y, kind, center_by_target_mean);
    let (rows, cols) = (cx.len(), cy.len());
    let mut data = Vec::with_capacity(rows * cols);
    match kind {
        DistanceKind::SquaredL2 => {
            for xi in cx.iter_points() {
                for yj in cy.iter_points() {
                    data.push(squared_l2(xi, yj));
                }
            }
        }
        DistanceKind::L2 => {
            for xi in cx.iter_points() {
                for yj in cy.iter_points() {
                    data.push(squared_l2(xi, yj).sqrt());
                }
            }
        }
        DistanceKind::Cosine => {
            let ny: Vec<T> = cy.iter_points().map(norm).collect();
            for xi in cx.iter_points() {
                let nx = norm(xi);
                for (yj, nyj) in cy.iter_points().zip(&ny) {
                    if nx.is_zero() || nyj.is_zero() {
                        data.push(T::one());
                    } else {
                        data.push((T::one() - dot(xi, yj) / (nx * *nyj)).max(T::zero()));
                    }
                }
            }
        }
    }
    Ok(DistanceMatrix::from_data(data, rows, cols))
}

/// Index of the smallest entry, lowest index on ties.
pub(crate) fn argmin<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Divides each row by its minimum plus `epsilon`, making distances
/// scale-free per source point.
pub fn normalize_distances<T: Real>(d: &DistanceMatrix<T>, epsilon: T) -> DistanceMatrix<T> {
    let mut data = Vec::with_capacity(d.rows * d.cols);
    for i in 0..d.rows {
        let row = d.row(i);
        let denom = row[argmin(row)] + epsilon;
        data.extend(row.iter().map(|&v| v / denom));
    }
    DistanceMatrix::from_data(data, d.rows, d.cols)
}

/// Row-softmax of `(1 - d̃_ij)/h`, computed with max subtraction so no
/// overflow occurs for any finite input.
pub fn affinities<T: Real>(d_tilde: &DistanceMatrix<T>, h: T) -> Result<AffinityMatrix<T>> {
    if h <= T::zero() {
        return Err(Error::invalid("bandwidth h must be positive"));
    }
    let mut data = Vec::with_capacity(d_tilde.rows * d_tilde.cols);
    for i in 0..d_tilde.rows {
        let row = d_tilde.row(i);
        // s_ij = (1 - d̃_ij)/h is maximal at the row's smallest d̃.
        let smax = (T::one() - row[argmin(row)]) / h;
        let start = data.len();
        let mut sum = T::zero();
        for &v in row {
            let e = (((T::one() - v) / h) - smax).exp();
            data.push(e);
            sum += e;
        }
        for v in &mut data[start..] {
            *v = *v / sum;
        }
    }
    Ok(AffinityMatrix {
        data,
        rows: d_tilde.rows,
        cols: d_tilde.cols,
        bandwidth: h,
    })
}

/// Everything the contextual loss computes on the way to its value; kept so
/// the gradient can reuse the forward pass.
pub(crate) struct CxForward<T> {
    pub dist: DistanceMatrix<T>,
    pub row_min_idx: Vec<usize>,
    pub aff: AffinityMatrix<T>,
    pub col_argmax: Vec<usize>,
    /// Mean over target columns of the column-max affinity.
    pub mean_max: T,
    pub loss: T,
}

pub(crate) fn cx_forward<T: Real>(
    x: &FeatureSet<T>,
    y: &FeatureSet<T>,
    kind: DistanceKind,
    h: T,
    epsilon: T,
    center: bool,
) -> Result<CxForward<T>> {
    if x.len() != y.len() {
        return Err(Error::SizeMismatch(x.len(), y.len()));
    }
    let dist = distance_matrix(x, y, kind, center)?;
    let row_min_idx: Vec<usize> = (0..dist.rows()).map(|i| argmin(dist.row(i))).collect();
    let d_tilde = normalize_distances(&dist, epsilon);
    let aff = affinities(&d_tilde, h)?;
    let cols = aff.cols();
    let mut col_argmax = vec![0usize; cols];
    let mut col_max = vec![T::neg_infinity(); cols];
    for i in 0..aff.rows() {
        let row = aff.row(i);
        for (j, &a) in row.iter().enumerate() {
            if a > col_max[j] {
                col_max[j] = a;
                col_argmax[j] = i;
            }
        }
    }
    let mean_max = col_max.iter().copied().sum::<T>() / T::from_usize(cols).unwrap();
    Ok(CxForward {
        dist,
        row_min_idx,
        aff,
        col_argmax,
        mean_max,
        loss: -mean_max.ln(),
    })
}

/// The contextual loss between equally sized sets:
/// `-log((1/N)·Σ_j max_i A_ij)`.
pub fn contextual_loss<T: Real>(
    x: &FeatureSet<T>,
    y: &FeatureSet<T>,
    kind: DistanceKind,
    h: T,
    epsilon: T,
    center: bool,
) -> Result<T> {
    Ok(cx_forward(x, y, kind, h, epsilon, center)?.loss)
}

/// Asymmetric Chamfer distance: mean over source points of the distance to
/// the nearest target. `chamfer_distance(x, y) != chamfer_distance(y, x)`
/// in general.
pub fn chamfer_distance<T: Real>(
    x: &FeatureSet<T>,
    y: &FeatureSet<T>,
    kind: DistanceKind,
    center: bool,
) -> Result<T> {
    let dist = distance_matrix(x, y, kind, center)?;
    let total = (0..dist.rows())
        .map(|i| {
            let row = dist.row(i);
            row[argmin(row)]
        })
        .sum::<T>();
    Ok(total / T::from_usize(dist.rows()).unwrap())
}

/// For each target column, the best-matching source row and the number of
/// distinct rows selected overall.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchReport {
    /// `source_of_target[j]` is the row matched to target column j.
    pub source_of_target: Vec<usize>,
    pub distinct_sources: usize,
}

fn match_report(rows: usize, matches: Vec<usize>) -> MatchReport {
    let mut seen = vec![false; rows];
    let mut distinct = 0;
    for &i in &matches {
        if !seen[i] {
            seen[i] = true;
            distinct += 1;
        }
    }
    MatchReport {
        source_of_target: matches,
        distinct_sources: distinct,
    }
}

/// Largest-affinity matching: connects each target column with the source
/// row of maximal affinity, ties broken by lowest row index.
pub fn best_matches<T: Real>(a: &AffinityMatrix<T>) -> MatchReport {
    let matches: Vec<usize> = (0..a.cols())
        .map(|j| {
            let mut best = 0;
            for i in 1..a.rows() {
                if a.at(i, j) > a.at(best, j) {
                    best = i;
                }
            }
            best
        })
        .collect();
    match_report(a.rows(), matches)
}

/// Nearest-neighbour matching: connects each target column with the closest
/// source row, ties broken by lowest row index.
pub fn nearest_matches<T: Real>(d: &DistanceMatrix<T>) -> MatchReport {
    let matches: Vec<usize> = (0..d.cols())
        .map(|j| {
            let mut best = 0;
            for i in 1..d.rows() {
                if d.at(i, j) < d.at(best, j) {
                    best = i;
                }
            }
            best
        })
        .collect();
    match_report(d.rows(), matches)
}

/// Exact bandwidth→0 limit of the contextual loss: the negative log of the
/// fraction of target points that are the nearest target of some source
/// point.
pub fn delta_limit_coverage<T: Real>(
    x: &FeatureSet<T>,
    y: &FeatureSet<T>,
    kind: DistanceKind,
    center: bool,
) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::SizeMismatch(x.len(), y.len()));
    }
    let dist = distance_matrix(x, y, kind, center)?;
    let mut covered = vec![false; dist.cols()];
    for i in 0..dist.rows() {
        covered[argmin(dist.row(i))] = true;
    }
    let hits = covered.iter().filter(|&&c| c).count();
    let frac = T::from_usize(hits).unwrap() / T::from_usize(dist.cols()).unwrap();
    Ok(-frac.ln())
}
