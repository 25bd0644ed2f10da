//! Reference divergence estimators between feature distributions.
//!
//! High-dimensional feature sets are compared by projecting them onto random
//! 2D subspaces, estimating each projected distribution with a Gaussian-kernel
//! KDE on a shared grid, and evaluating grid divergences (KL, χ²). Earth
//! mover's distance is estimated by slicing: averaging 1D Wasserstein-1
//! distances over random directions. [`divergence_report`] bundles these with
//! the contextual loss, the Chamfer distance, and two plain per-pixel/patch
//! baselines into one record.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::affinity::{chamfer_distance, contextual_loss, cosine_distance, DistanceKind};
use crate::error::{Error, Result};
use crate::feature_set::{extract_patches, FeatureSet, ImageGrid, PatchSpec};
use crate::scalar::{real, Real};

/// Mass below this floor is treated as empty when forming log- and
/// ratio-based divergences; it bounds the contribution of cells the
/// estimate considers unreachable.
const MASS_FLOOR: f64 = 1e-12;

/// An orthonormal pair of d-vectors spanning a random 2D subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection2D<T> {
    basis: [Vec<T>; 2],
    seed: u64,
}

impl<T: Real> Projection2D<T> {
    pub fn basis(&self) -> (&[T], &[T]) {
        (&self.basis[0], &self.basis[1])
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Projects every point of `set` onto the plane.
    pub fn project(&self, set: &FeatureSet<T>) -> Result<FeatureSet<T>> {
        if set.dim() != self.basis[0].len() {
            return Err(Error::DimensionMismatch(set.dim(), self.basis[0].len()));
        }
        let mut data = Vec::with_capacity(set.len() * 2);
        for p in set.iter_points() {
            for b in &self.basis {
                data.push(p.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y));
            }
        }
        FeatureSet::from_flat(data, set.len(), 2)
    }
}

fn sample_unit_vector<T: Real>(rng: &mut ChaCha8Rng, d: usize) -> Vec<T> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| real::<T>(x / n)).collect();
        }
    }
}

/// Draws a random orthonormal 2D basis in R^d by Gram-Schmidt on
/// standard-normal vectors; deterministic per seed.
pub fn random_projection<T: Real>(d: usize, seed: u64) -> Result<Projection2D<T>> {
    if d < 2 {
        return Err(Error::invalid("projection needs dimension >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u1 = sample_unit_vector::<T>(&mut rng, d);
    let u2 = loop {
        let g: Vec<T> = sample_unit_vector::<T>(&mut rng, d);
        let proj = g.iter().zip(&u1).fold(T::zero(), |acc, (a, b)| acc + *a * *b);
        let mut v: Vec<T> = g.iter().zip(&u1).map(|(a, b)| *a - proj * *b).collect();
        let n = v.iter().fold(T::zero(), |acc, x| acc + *x * *x).sqrt();
        if n > real(1e-9) {
            for x in &mut v {
                *x = *x / n;
            }
            break v;
        }
    };
    Ok(Projection2D {
        basis: [u1, u2],
        seed,
    })
}

/// A KDE-estimated density on a regular G×G grid: per-cell probability mass
/// (summing to 1), grid placement, and the per-axis Gaussian bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct Density2D<T> {
    grid: Vec<T>,
    grid_size: usize,
    origin: [T; 2],
    extent: [T; 2],
    bandwidth: [T; 2],
}

impl<T: Real> Density2D<T> {
    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn mass(&self, ix: usize, iy: usize) -> T {
        self.grid[iy * self.grid_size + ix]
    }

    pub fn masses(&self) -> &[T] {
        &self.grid
    }

    pub fn origin(&self) -> [T; 2] {
        self.origin
    }

    pub fn extent(&self) -> [T; 2] {
        self.extent
    }

    pub fn bandwidth(&self) -> [T; 2] {
        self.bandwidth
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> [T; 2] {
        let half = real::<T>(0.5);
        [
            self.origin[0] + (T::from_usize(ix).unwrap() + half) * self.step(0),
            self.origin[1] + (T::from_usize(iy).unwrap() + half) * self.step(1),
        ]
    }

    fn step(&self, axis: usize) -> T {
        self.extent[axis] / T::from_usize(self.grid_size).unwrap()
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.grid_size == other.grid_size
            && self.origin == other.origin
            && self.extent == other.extent
    }
}

/// Per-axis statistics used to place the grid and pick bandwidths.
struct AxisStats<T> {
    min: [T; 2],
    max: [T; 2],
    bandwidth: [T; 2],
}

impl<T: Real> AxisStats<T> {
    fn is_degenerate(&self) -> bool {
        self.min == self.max
    }
}

/// Silverman's rule per axis, with the standard deviation floored so a
/// degenerate axis still yields a positive bandwidth.
fn axis_stats<T: Real>(points: &FeatureSet<T>) -> Result<AxisStats<T>> {
    if points.dim() != 2 {
        return Err(Error::DimensionMismatch(points.dim(), 2));
    }
    if points.len() < 2 {
        return Err(Error::DegenerateSample);
    }
    let n = T::from_usize(points.len()).unwrap();
    let mut min = [T::infinity(); 2];
    let mut max = [T::neg_infinity(); 2];
    let mut mean = [T::zero(); 2];
    for p in points.iter_points() {
        for a in 0..2 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
            mean[a] += p[a];
        }
    }
    for a in 0..2 {
        mean[a] = mean[a] / n;
    }
    let mut var = [T::zero(); 2];
    for p in points.iter_points() {
        for a in 0..2 {
            let d = p[a] - mean[a];
            var[a] += d * d;
        }
    }
    let mut bandwidth = [T::zero(); 2];
    let n_pow = real::<T>(points.len() as f64).powf(real(-0.2));
    for a in 0..2 {
        let sigma = (var[a] / (n - T::one())).sqrt().max(real(1e-6));
        bandwidth[a] = real::<T>(1.06) * sigma * n_pow;
    }
    Ok(AxisStats {
        min,
        max,
        bandwidth,
    })
}

/// Accumulates Gaussian kernel mass on the grid and normalizes it to sum 1.
/// Kernels are evaluated within ±8 bandwidths of each sample, where they
/// have decayed below the mass floor; the final normalization absorbs the
/// truncated tails.
fn accumulate<T: Real>(
    points: &FeatureSet<T>,
    grid_size: usize,
    origin: [T; 2],
    extent: [T; 2],
    bandwidth: [T; 2],
) -> Density2D<T> {
    let g = grid_size;
    let mut grid = vec![T::zero(); g * g];
    let step = [
        extent[0] / T::from_usize(g).unwrap(),
        extent[1] / T::from_usize(g).unwrap(),
    ];
    let half = real::<T>(0.5);
    let reach = real::<T>(8.0);
    let cell_range = |axis: usize, p: T| -> (usize, usize) {
        let lo = (p - reach * bandwidth[axis] - origin[axis]) / step[axis];
        let hi = (p + reach * bandwidth[axis] - origin[axis]) / step[axis];
        let lo = lo.floor().to_isize().unwrap_or(0).max(0) as usize;
        let hi = hi.ceil().to_isize().unwrap_or(0).max(0) as usize;
        (lo.min(g - 1), hi.min(g - 1))
    };
    let containing_cell = |axis: usize, p: T| -> usize {
        let c = ((p - origin[axis]) / step[axis])
            .floor()
            .to_isize()
            .unwrap_or(0)
            .max(0) as usize;
        c.min(g - 1)
    };
    for p in points.iter_points() {
        let (x0, x1) = cell_range(0, p[0]);
        let (y0, y1) = cell_range(1, p[1]);
        let mut contributed = T::zero();
        for iy in y0..=y1 {
            let cy = origin[1] + (T::from_usize(iy).unwrap() + half) * step[1];
            let zy = (cy - p[1]) / bandwidth[1];
            let ey = (-half * zy * zy).exp();
            for ix in x0..=x1 {
                let cx = origin[0] + (T::from_usize(ix).unwrap() + half) * step[0];
                let zx = (cx - p[0]) / bandwidth[0];
                let w = ey * (-half * zx * zx).exp();
                grid[iy * g + ix] += w;
                contributed += w;
            }
        }
        // A kernel far narrower than a cell underflows at every cell center;
        // its whole mass belongs to the cell containing the sample.
        if contributed.is_zero() {
            grid[containing_cell(1, p[1]) * g + containing_cell(0, p[0])] += T::one();
        }
    }
    let total: T = grid.iter().copied().sum();
    for v in &mut grid {
        *v = *v / total;
    }
    Density2D {
        grid,
        grid_size: g,
        origin,
        extent,
        bandwidth,
    }
}

/// Fits a Gaussian-kernel KDE to 2D points on a `grid_size`² grid covering
/// the data bounding box padded by 3 bandwidths per axis.
pub fn kde_fit<T: Real>(points: &FeatureSet<T>, grid_size: usize) -> Result<Density2D<T>> {
    if grid_size < 2 {
        return Err(Error::invalid("grid_size must be at least 2"));
    }
    let stats = axis_stats(points)?;
    if stats.is_degenerate() {
        return Err(Error::DegenerateSample);
    }
    let three = real::<T>(3.0);
    let mut origin = [T::zero(); 2];
    let mut extent = [T::zero(); 2];
    for a in 0..2 {
        origin[a] = stats.min[a] - three * stats.bandwidth[a];
        extent[a] = stats.max[a] - stats.min[a] + real::<T>(6.0) * stats.bandwidth[a];
    }
    Ok(accumulate(points, grid_size, origin, extent, stats.bandwidth))
}

/// Fits both sample sets on one shared grid (their union bounding box padded
/// by 3 bandwidths), so grid divergences are well defined. Both densities use
/// the same bandwidth — the per-axis larger of the two Silverman choices —
/// because ratio-based divergences between kernel estimates are only
/// meaningful when the two estimates smooth alike.
///
/// A single all-identical set is allowed here (its floored bandwidth yields
/// a spike) as long as the union of the two sets spans an area.
pub fn kde_fit_pair<T: Real>(
    x: &FeatureSet<T>,
    y: &FeatureSet<T>,
    grid_size: usize,
) -> Result<(Density2D<T>, Density2D<T>)> {
    if grid_size < 2 {
        return Err(Error::invalid("grid_size must be at least 2"));
    }
    let sx = axis_stats(x)?;
    let sy = axis_stats(y)?;
    if sx.is_degenerate() && sy.is_degenerate() && sx.min == sy.min {
        return Err(Error::DegenerateSample);
    }
    let three = real::<T>(3.0);
    let mut origin = [T::zero(); 2];
    let mut extent = [T::zero(); 2];
    let mut bandwidth = [T::zero(); 2];
    for a in 0..2 {
        bandwidth[a] = sx.bandwidth[a].max(sy.bandwidth[a]);
        let pad = three * bandwidth[a];
        let lo = sx.min[a].min(sy.min[a]) - pad;
        let hi = sx.max[a].max(sy.max[a]) + pad;
        origin[a] = lo;
        extent[a] = hi - lo;
    }
    Ok((
        accumulate(x, grid_size, origin, extent, bandwidth),
        accumulate(y, grid_size, origin, extent, bandwidth),
    ))
}

/// KL divergence between two densities on the same grid:
/// `Σ p·log(p/q)` with p-cells below the mass floor skipped and q floored.
pub fn kl_divergence<T: Real>(p: &Density2D<T>, q: &Density2D<T>) -> Result<T> {
    if !p.same_grid(q) {
        return Err(Error::GridMismatch);
    }
    let floor = real::<T>(MASS_FLOOR);
    let mut total = T::zero();
    for (pv, qv) in p.grid.iter().zip(&q.grid) {
        if *pv < floor {
            continue;
        }
        total += *pv * (*pv / qv.max(floor)).ln();
    }
    Ok(total)
}

/// χ² divergence between two densities on the same grid:
/// `Σ (p-q)²/q` with q floored.
pub fn chi2_divergence<T: Real>(p: &Density2D<T>, q: &Density2D<T>) -> Result<T> {
    if !p.same_grid(q) {
        return Err(Error::GridMismatch);
    }
    let floor = real::<T>(MASS_FLOOR);
    let mut total = T::zero();
    for (pv, qv) in p.grid.iter().zip(&q.grid) {
        let d = *pv - *qv;
        total += d * d / qv.max(floor);
    }
    Ok(total)
}

/// Mean absolute projection E|⟨u,e⟩| of a uniformly random unit vector in
/// R^d onto a fixed direction: Γ(d/2)/(√π·Γ((d+1)/2)), evaluated through the
/// recurrence a_{m+2} = a_m·m/(m+1) for a_m = Γ(m/2)/Γ((m+1)/2).
fn mean_abs_projection(d: usize) -> f64 {
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let (mut m, mut a) = if d % 2 == 1 {
        (1usize, sqrt_pi)
    } else {
        (2usize, 2.0 / sqrt_pi)
    };
    while m < d {
        a = a * m as f64 / (m + 1) as f64;
        m += 2;
    }
    a / sqrt_pi
}

/// Sliced 1D Wasserstein-1 estimate of the earth mover's distance between
/// two equally sized sets: sorted projections are compared along random unit
/// directions, averaged, and rescaled by the mean absolute projection so a
/// pure shift of magnitude δ reads as δ. Deterministic per seed.
pub fn sliced_emd<T: Real>(
    x: &FeatureSet<T>,
    y: &FeatureSet<T>,
    directions: usize,
    seed: u64,
) -> Result<T> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch(x.dim(), y.dim()));
    }
    if x.len() != y.len() {
        return Err(Error::SizeMismatch(x.len(), y.len()));
    }
    if directions == 0 {
        return Err(Error::invalid("directions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let mut px = vec![T::zero(); n];
    let mut py = vec![T::zero(); n];
    let mut total = T::zero();
    for _ in 0..directions {
        let u = sample_unit_vector::<T>(&mut rng, x.dim());
        for (slot, p) in px.iter_mut().zip(x.iter_points()) {
            *slot = p.iter().zip(&u).fold(T::zero(), |acc, (a, b)| acc + *a * *b);
        }
        for (slot, p) in py.iter_mut().zip(y.iter_points()) {
            *slot = p.iter().zip(&u).fold(T::zero(), |acc, (a, b)| acc + *a * *b);
        }
        px.sort_by(|a, b| a.partial_cmp(b).unwrap());
        py.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let w1 = px
            .iter()
            .zip(&py)
            .fold(T::zero(), |acc, (a, b)| acc + (*a - *b).abs())
            / T::from_usize(n).unwrap();
        total += w1;
    }
    let raw = total / T::from_usize(directions).unwrap();
    Ok(raw / real(mean_abs_projection(x.dim())))
}

/// One row of dissimilarity measures between two images' patch statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceReport<T> {
    pub cx: T,
    pub cd: T,
    pub kl: T,
    pub chi2: T,
    pub emd: T,
    pub l2_mean: T,
    pub cosine_mean: T,
}

impl<T: Real> DivergenceReport<T> {
    pub const CSV_HEADER: &'static str = "cx,cd,kl,chi2,emd,l2_mean,cosine_mean";

    /// Values with 9 significant digits, comma separated.
    pub fn csv_line(&self) -> String {
        [
            self.cx,
            self.cd,
            self.kl,
            self.chi2,
            self.emd,
            self.l2_mean,
            self.cosine_mean,
        ]
        .iter()
        .map(|v| crate::scalar::sig9(*v))
        .collect::<Vec<_>>()
        .join(",")
    }
}

/// Grid resolution used by the report's KDE fits.
pub const REPORT_GRID_SIZE: usize = 64;
/// Directions used by the report's sliced-EMD estimate.
pub const REPORT_EMD_DIRECTIONS: usize = 64;

/// Averaged KL/χ² between two point sets over shared random 2D projections.
/// 2D inputs are fitted directly; higher dimensions go through `projections`
/// seeded projections (reduced in seed order).
pub fn projected_kl_chi2<T: Real>(
    x: &FeatureSet<T>,
    y: &FeatureSet<T>,
    projections: usize,
    grid_size: usize,
    seed: u64,
) -> Result<(T, T)> {
    if x.dim() == 2 {
        let (pd, qd) = kde_fit_pair(x, y, grid_size)?;
        return Ok((kl_divergence(&pd, &qd)?, chi2_divergence(&pd, &qd)?));
    }
    if projections == 0 {
        return Err(Error::invalid("projections must be positive"));
    }
    let mut seed_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kl_total = T::zero();
    let mut chi2_total = T::zero();
    for _ in 0..projections {
        let proj = random_projection::<T>(x.dim(), seed_rng.next_u64())?;
        let px = proj.project(x)?;
        let py = proj.project(y)?;
        let (pd, qd) = kde_fit_pair(&px, &py, grid_size)?;
        kl_total += kl_divergence(&pd, &qd)?;
        chi2_total += chi2_divergence(&pd, &qd)?;
    }
    let count = T::from_usize(projections).unwrap();
    Ok((kl_total / count, chi2_total / count))
}

/// Computes all seven dissimilarity measures between the patch statistics of
/// two same-size images.
///
/// KL and χ² are averaged over `projections` shared random 2D projections of
/// the patch sets; cx and cd are taken on the full-dimensional patch sets
/// with cosine distance at h=0.1; emd is the sliced estimate; l2_mean is the
/// mean per-pixel squared error and cosine_mean the mean cosine distance
/// between corresponding patches.
pub fn divergence_report<T: Real>(
    x_img: &ImageGrid<T>,
    y_img: &ImageGrid<T>,
    spec: &PatchSpec,
    projections: usize,
    seed: u64,
) -> Result<DivergenceReport<T>> {
    x_img.check_same_shape(y_img)?;
    let px = extract_patches(x_img, spec)?;
    let py = extract_patches(y_img, spec)?;

    let cx = contextual_loss(&px, &py, DistanceKind::Cosine, real(0.1), real(1e-5), false)?;
    let cd = chamfer_distance(&px, &py, DistanceKind::Cosine, false)?;

    // Derived sub-seeds: first the projection stream, then the EMD stream.
    let mut seed_rng = ChaCha8Rng::seed_from_u64(seed);
    let proj_seed = seed_rng.next_u64();
    let emd_seed = seed_rng.next_u64();

    let (kl, chi2) = projected_kl_chi2(&px, &py, projections, REPORT_GRID_SIZE, proj_seed)?;
    let emd = sliced_emd(&px, &py, REPORT_EMD_DIRECTIONS, emd_seed)?;

    let n_values = T::from_usize(x_img.as_flat().len()).unwrap();
    let l2_mean = x_img
        .as_flat()
        .iter()
        .zip(y_img.as_flat())
        .fold(T::zero(), |acc, (a, b)| {
            let d = *a - *b;
            acc + d * d
        })
        / n_values;
    let cosine_mean = px
        .iter_points()
        .zip(py.iter_points())
        .fold(T::zero(), |acc, (a, b)| acc + cosine_distance(a, b))
        / T::from_usize(px.len()).unwrap();

    Ok(DivergenceReport {
        cx,
        cd,
        kl,
        chi2,
        emd,
        l2_mean,
        cosine_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn normal_cloud(n: usize, shift: f64, seed: u64) -> FeatureSet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n)
            .flat_map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                [a + shift, b]
            })
            .collect();
        FeatureSet::from_flat(data, n, 2).unwrap()
    }

    #[test]
    fn projection_is_orthonormal_and_deterministic() {
        for d in [2usize, 5, 75] {
            let p = random_projection::<f64>(d, 17).unwrap();
            let (u1, u2) = p.basis();
            let n1: f64 = u1.iter().map(|v| v * v).sum::<f64>();
            let n2: f64 = u2.iter().map(|v| v * v).sum::<f64>();
            let cross: f64 = u1.iter().zip(u2).map(|(a, b)| a * b).sum();
            assert!((n1 - 1.0).abs() <= 1e-10);
            assert!((n2 - 1.0).abs() <= 1e-10);
            assert!(cross.abs() <= 1e-10);
        }
        assert_eq!(
            random_projection::<f64>(10, 3).unwrap(),
            random_projection::<f64>(10, 3).unwrap()
        );
        assert!(random_projection::<f64>(1, 0).is_err());
    }

    #[test]
    fn projection_d2_spans_plane() {
        let p = random_projection::<f64>(2, 5).unwrap();
        let (u1, u2) = p.basis();
        let det = u1[0] * u2[1] - u1[1] * u2[0];
        assert!(det.abs() > 1e-6);
    }

    #[test]
    fn first_basis_vectors_match_sphere_statistics() {
        // Monte-Carlo oracle: mean |dot| of independent random directions in
        // R^d equals the mean absolute projection E|<u,e>|.
        let d = 75;
        let vecs: Vec<Vec<f64>> = (0..1000)
            .map(|s| random_projection::<f64>(d, s).unwrap().basis[0].clone())
            .collect();
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..vecs.len() {
            for j in (i + 1)..vecs.len() {
                total += vecs[i]
                    .iter()
                    .zip(&vecs[j])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    .abs();
                count += 1;
            }
        }
        let mean = total / count as f64;
        let expect = mean_abs_projection(d);
        assert!(
            (mean - expect).abs() <= 0.05 * expect,
            "mean={mean} expect={expect}"
        );
    }

    #[test]
    fn mean_abs_projection_known_values() {
        assert!((mean_abs_projection(1) - 1.0).abs() <= 1e-12);
        assert!((mean_abs_projection(2) - 2.0 / std::f64::consts::PI).abs() <= 1e-12);
        // d=3: uniform on the sphere has E|u_1| = 1/2.
        assert!((mean_abs_projection(3) - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn kde_mass_sums_to_one_and_mirrors() {
        let pts = FeatureSet::from_rows(&[vec![-1.0f64, 0.0], vec![1.0, 0.0]]).unwrap();
        let density = kde_fit(&pts, 32).unwrap();
        let sum: f64 = density.masses().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9);
        let g = density.grid_size();
        for iy in 0..g {
            for ix in 0..g {
                let mirrored = density.mass(g - 1 - ix, iy);
                assert!((density.mass(ix, iy) - mirrored).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn kde_recovers_gaussian_moments() {
        let pts = normal_cloud(1000, 0.0, 42);
        let density = kde_fit(&pts, 64).unwrap();
        let g = density.grid_size();
        let mut mean = [0.0f64; 2];
        for iy in 0..g {
            for ix in 0..g {
                let c = density.cell_center(ix, iy);
                let m = density.mass(ix, iy);
                mean[0] += m * c[0];
                mean[1] += m * c[1];
            }
        }
        assert!(mean[0].abs() <= 0.1, "mean_x={}", mean[0]);
        assert!(mean[1].abs() <= 0.1, "mean_y={}", mean[1]);
        let mut var = [0.0f64; 2];
        for iy in 0..g {
            for ix in 0..g {
                let c = density.cell_center(ix, iy);
                let m = density.mass(ix, iy);
                var[0] += m * (c[0] - mean[0]) * (c[0] - mean[0]);
                var[1] += m * (c[1] - mean[1]) * (c[1] - mean[1]);
            }
        }
        // KDE inflates the sample variance by about one squared bandwidth.
        for v in var {
            assert!((v - 1.0).abs() <= 0.15, "var={v}");
        }
    }

    #[test]
    fn kde_rejects_degenerate_input() {
        let single = FeatureSet::from_rows(&[vec![1.0f64, 1.0]]).unwrap();
        assert!(matches!(kde_fit(&single, 16), Err(Error::DegenerateSample)));
        let identical = FeatureSet::from_rows(&vec![vec![1.0f64, 1.0]; 5]).unwrap();
        assert!(matches!(
            kde_fit(&identical, 16),
            Err(Error::DegenerateSample)
        ));
    }

    #[test]
    fn kl_and_chi2_identity() {
        let pts = normal_cloud(500, 0.0, 7);
        let density = kde_fit(&pts, 64).unwrap();
        assert_eq!(kl_divergence(&density, &density).unwrap(), 0.0);
        assert_eq!(chi2_divergence(&density, &density).unwrap(), 0.0);

        // Identical sample sets on a shared grid.
        let (p, q) = kde_fit_pair(&pts, &pts, 64).unwrap();
        assert!(kl_divergence(&p, &q).unwrap().abs() <= 1e-6);
        assert!(chi2_divergence(&p, &q).unwrap().abs() <= 1e-6);
    }

    #[test]
    fn kl_requires_same_grid() {
        let a = kde_fit(&normal_cloud(100, 0.0, 1), 32).unwrap();
        let b = kde_fit(&normal_cloud(100, 3.0, 2), 32).unwrap();
        assert!(matches!(kl_divergence(&a, &b), Err(Error::GridMismatch)));
    }

    #[test]
    fn divergences_grow_with_gaussian_shift() {
        // Closed-form trend oracle: KL between N(0,I) and N(δe,I) is δ²/2,
        // strictly increasing in δ; the estimates must preserve the order.
        // The comparison cloud is one fixed draw translated by δ.
        let x = normal_cloud(2000, 0.0, 5);
        let base = normal_cloud(2000, 0.0, 6);
        let mut last_kl = -1.0;
        let mut last_chi2 = -1.0;
        for (i, shift) in [0.0, 0.5, 1.0, 2.0].into_iter().enumerate() {
            let shifted: Vec<Vec<f64>> = base
                .iter_points()
                .map(|p| vec![p[0] + shift, p[1]])
                .collect();
            let y = FeatureSet::from_rows(&shifted).unwrap();
            let (p, q) = kde_fit_pair(&x, &y, 64).unwrap();
            let kl = kl_divergence(&p, &q).unwrap();
            let chi2 = chi2_divergence(&p, &q).unwrap();
            assert!(kl >= -1e-9);
            assert!(chi2 >= -1e-9);
            if i > 0 {
                assert!(kl > last_kl, "shift={shift}: kl {kl} <= {last_kl}");
                assert!(chi2 > last_chi2, "shift={shift}: chi2 {chi2} <= {last_chi2}");
            }
            last_kl = kl;
            last_chi2 = chi2;
        }
    }

    #[test]
    fn chi2_disjoint_supports_finite() {
        let a = FeatureSet::from_rows(&[vec![0.0f64, 0.0], vec![0.1, 0.0]]).unwrap();
        let b = FeatureSet::from_rows(&[vec![100.0, 0.0], vec![100.1, 0.0]]).unwrap();
        let (p, q) = kde_fit_pair(&a, &b, 64).unwrap();
        let chi2 = chi2_divergence(&p, &q).unwrap();
        assert!(chi2.is_finite());
        assert!(chi2 > 0.0);
        let kl = kl_divergence(&p, &q).unwrap();
        assert!(kl.is_finite());
    }

    #[test]
    fn sliced_emd_basics() {
        let x = normal_cloud(200, 0.0, 3);
        assert_eq!(sliced_emd(&x, &x, 16, 0).unwrap(), 0.0);

        // 1D: the only directions are ±e, both giving |0-3| = 3.
        let a = FeatureSet::from_rows(&[vec![0.0f64]]).unwrap();
        let b = FeatureSet::from_rows(&[vec![3.0]]).unwrap();
        let d = sliced_emd(&a, &b, 1, 9).unwrap();
        assert!((d - 3.0).abs() <= 1e-12);
    }

    #[test]
    fn sliced_emd_recovers_shift_magnitude() {
        let x = normal_cloud(2000, 0.0, 11);
        for shift in [0.5, 1.0, 2.0] {
            let y = normal_cloud(2000, shift, 12);
            let emd = sliced_emd(&x, &y, 64, 5).unwrap();
            assert!(
                (emd - shift).abs() <= 0.1 * shift,
                "shift={shift} emd={emd}"
            );
        }
    }

    #[test]
    fn sliced_emd_symmetric_same_seed() {
        let x = normal_cloud(300, 0.0, 21);
        let y = normal_cloud(300, 1.0, 22);
        let xy = sliced_emd(&x, &y, 32, 77).unwrap();
        let yx = sliced_emd(&y, &x, 32, 77).unwrap();
        assert!((xy - yx).abs() <= 1e-9);
    }

    #[test]
    fn estimators_invariant_under_shared_permutation() {
        let x = normal_cloud(64, 0.0, 31);
        let y = normal_cloud(64, 0.7, 32);
        let perm: Vec<usize> = (0..64).rev().collect();
        let permute = |s: &FeatureSet<f64>| {
            let rows: Vec<Vec<f64>> = perm.iter().map(|&i| s.point(i).to_vec()).collect();
            FeatureSet::from_rows(&rows).unwrap()
        };
        let (xp, yp) = (permute(&x), permute(&y));

        let emd = sliced_emd(&x, &y, 16, 4).unwrap();
        let emd_p = sliced_emd(&xp, &yp, 16, 4).unwrap();
        assert!((emd - emd_p).abs() <= 1e-9);

        let (p, q) = kde_fit_pair(&x, &y, 32).unwrap();
        let (pp, qp) = kde_fit_pair(&xp, &yp, 32).unwrap();
        let kl = kl_divergence(&p, &q).unwrap();
        let kl_p = kl_divergence(&pp, &qp).unwrap();
        assert!((kl - kl_p).abs() <= 1e-9);
    }

    fn texture(h: usize, w: usize, seed: u64) -> ImageGrid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..h * w)
            .map(|i| {
                let base = 0.5 + 0.3 * ((i % w) as f64 * 0.7).sin() * ((i / w) as f64 * 0.4).cos();
                (base + 0.2 * rng.gen::<f64>()).clamp(0.0, 1.0)
            })
            .collect();
        ImageGrid::new(data, h, w, 1).unwrap()
    }

    #[test]
    fn report_self_comparison_is_null() {
        let img = texture(24, 24, 1);
        let spec = PatchSpec::new(5, 2).unwrap();
        let r = divergence_report(&img, &img, &spec, 8, 0).unwrap();
        for v in [r.cx, r.cd, r.kl, r.chi2, r.emd, r.l2_mean, r.cosine_mean] {
            assert!(v.abs() <= 1e-6, "{r:?}");
        }
    }

    #[test]
    fn report_vs_constant_gray_is_positive() {
        let img = texture(24, 24, 2);
        let gray = ImageGrid::constant(0.5, 24, 24, 1).unwrap();
        let spec = PatchSpec::new(5, 2).unwrap();
        let r = divergence_report(&gray, &img, &spec, 8, 0).unwrap();
        for v in [r.cx, r.cd, r.kl, r.chi2, r.emd, r.l2_mean, r.cosine_mean] {
            assert!(v > 0.0, "{r:?}");
        }
    }

    #[test]
    fn report_stable_across_seeds() {
        let a = texture(64, 64, 3);
        let b = texture(64, 64, 4);
        let spec = PatchSpec::new(5, 2).unwrap();
        let reports: Vec<DivergenceReport<f64>> = (0..3)
            .map(|s| divergence_report(&a, &b, &spec, 100, s).unwrap())
            .collect();
        let spread = |get: fn(&DivergenceReport<f64>) -> f64| {
            let vals: Vec<f64> = reports.iter().map(get).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (hi - lo) / hi.abs().max(1e-12)
        };
        assert!(spread(|r| r.kl) <= 0.05, "kl spread {}", spread(|r| r.kl));
        assert!(spread(|r| r.emd) <= 0.05, "emd spread {}", spread(|r| r.emd));
        // χ² is a ratio statistic: a single projection that isolates a lump
        // of source mass dominates the 100-projection mean, so its batch
        // means only agree to within an order of magnitude.
        for r in &reports {
            assert!(r.chi2.is_finite() && r.chi2 > 0.0);
        }
        assert!(spread(|r| r.chi2) <= 1.0, "chi2 spread {}", spread(|r| r.chi2));
    }

    #[test]
    fn report_rejects_size_mismatch() {
        let a = texture(16, 16, 5);
        let b = texture(16, 18, 6);
        let spec = PatchSpec::new(3, 1).unwrap();
        assert!(divergence_report(&a, &b, &spec, 4, 0).is_err());
    }
}
