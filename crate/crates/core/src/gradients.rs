//! Analytic gradients of every differentiable loss, taken with respect to
//! the generated side only (the target is a constant).
//!
//! Convention for the non-smooth pieces: argmax/argmin index sets (the
//! column argmax of the affinities, the row minimum inside the distance
//! normalization, the Chamfer nearest neighbour) are held fixed during
//! differentiation, which is what backpropagation through max/min does. The
//! value of the row minimum still varies, so the normalization denominator
//! contributes its own gradient path.
//!
//! All gradients are returned as flat buffers in the same layout as the
//! differentiated variable's flat storage.

use crate::affinity::{argmin, centered_pair, cx_forward, norm, DistanceKind};
use crate::error::{Error, Result};
use crate::feature_set::{extract_patches, FeatureSet, ImageGrid, PatchSpec};
use crate::scalar::{real, Real};

/// Adds `weight · ∂dist(x,y)/∂x` into `out`.
///
/// `nx`/`ny` are the point norms (used by cosine only). The L2 gradient at
/// coincident points and the cosine gradient at zero-norm points are zero
/// subgradients.
fn accumulate_distance_grad<T: Real>(
    kind: DistanceKind,
    x: &[T],
    y: &[T],
    d: T,
    nx: T,
    ny: T,
    weight: T,
    out: &mut [T],
) {
    match kind {
        DistanceKind::SquaredL2 => {
            let two = real::<T>(2.0);
            for t in 0..x.len() {
                out[t] += weight * two * (x[t] - y[t]);
            }
        }
        DistanceKind::L2 => {
            if d.is_zero() {
                return;
            }
            for t in 0..x.len() {
                out[t] += weight * (x[t] - y[t]) / d;
            }
        }
        DistanceKind::Cosine => {
            if nx.is_zero() || ny.is_zero() {
                return;
            }
            // With dot = (1-d)·nx·ny the quotient rule reduces to
            // ∂d/∂x = (1-d)·x/nx² - y/(nx·ny).
            let a = (T::one() - d) / (nx * nx);
            let b = T::one() / (nx * ny);
            for t in 0..x.len() {
                out[t] += weight * (a * x[t] - b * y[t]);
            }
        }
    }
}

/// Contextual loss and its exact gradient with respect to every coordinate
/// of every point of `x`.
pub fn grad_contextual<T: Real>(
    x: &FeatureSet<T>,
    y: &FeatureSet<T>,
    kind: DistanceKind,
    h: T,
    epsilon: T,
    center: bool,
) -> Result<(T, Vec<T>)> {
    let (cx, cy) = centered_pair(x, y, kind, center);
    let fwd = cx_forward(&cx, &cy, kind, h, epsilon, false)?;
    let (n, m, dim) = (cx.len(), cy.len(), cx.dim());
    let mut grad = vec![T::zero(); n * dim];

    let nx: Vec<T> = cx.iter_points().map(norm).collect();
    let ny: Vec<T> = cy.iter_points().map(norm).collect();

    // Upstream: d(loss)/d(col max of column j) = -1/(m·S), routed to the
    // argmax row of each column.
    let upstream = -T::one() / (T::from_usize(m).unwrap() * fwd.mean_max);
    let mut col_grad_of_row = vec![T::zero(); m];
    for i in 0..n {
        let arow = fwd.aff.row(i);
        let drow = fwd.dist.row(i);
        // Sparse softmax upstream for this row.
        let mut inner = T::zero();
        let mut any = false;
        for (j, slot) in col_grad_of_row.iter_mut().enumerate() {
            if fwd.col_argmax[j] == i {
                *slot = upstream;
                inner += upstream * arow[j];
                any = true;
            } else {
                *slot = T::zero();
            }
        }
        if !any {
            continue;
        }
        let k_min = fwd.row_min_idx[i];
        let denom = drow[k_min] + epsilon;
        // Backprop softmax -> normalized distances -> raw distances.
        let mut min_extra = T::zero();
        for j in 0..m {
            let a = arow[j];
            if a.is_zero() && col_grad_of_row[j].is_zero() {
                continue;
            }
            let g_s = a * (col_grad_of_row[j] - inner);
            if g_s.is_zero() {
                continue;
            }
            let g_dt = -g_s / h;
            let g_d = g_dt / denom;
            min_extra += g_dt * drow[j] / (denom * denom);
            accumulate_distance_grad(
                kind,
                cx.point(i),
                cy.point(j),
                drow[j],
                nx[i],
                ny[j],
                g_d,
                &mut grad[i * dim..(i + 1) * dim],
            );
        }
        if !min_extra.is_zero() {
            accumulate_distance_grad(
                kind,
                cx.point(i),
                cy.point(k_min),
                drow[k_min],
                nx[i],
                ny[k_min],
                -min_extra,
                &mut grad[i * dim..(i + 1) * dim],
            );
        }
    }
    Ok((fwd.loss, grad))
}

/// Chamfer distance and its gradient: each source point is pulled along the
/// distance gradient to its nearest target, the nearest index held fixed.
pub fn grad_chamfer<T: Real>(
    x: &FeatureSet<T>,
    y: &FeatureSet<T>,
    kind: DistanceKind,
    center: bool,
) -> Result<(T, Vec<T>)> {
    let (cx, cy) = centered_pair(x, y, kind, center);
    let dist = crate::affinity::distance_matrix(&cx, &cy, kind, false)?;
    let (n, dim) = (cx.len(), cx.dim());
    let nx: Vec<T> = cx.iter_points().map(norm).collect();
    let ny: Vec<T> = cy.iter_points().map(norm).collect();
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let mut total = T::zero();
    let mut grad = vec![T::zero(); n * dim];
    for i in 0..n {
        let row = dist.row(i);
        let j = argmin(row);
        total += row[j];
        accumulate_distance_grad(
            kind,
            cx.point(i),
            cy.point(j),
            row[j],
            nx[i],
            ny[j],
            inv_n,
            &mut grad[i * dim..(i + 1) * dim],
        );
    }
    Ok((total * inv_n, grad))
}

/// A normalized, radially symmetric Gaussian convolution kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel<T> {
    size: usize,
    sigma: T,
    weights: Vec<T>,
}

impl<T: Real> BlurKernel<T> {
    pub fn gaussian(size: usize, sigma: T) -> Result<Self> {
        if size % 2 == 0 || size == 0 {
            return Err(Error::invalid("blur kernel size must be odd and positive"));
        }
        if sigma <= T::zero() {
            return Err(Error::invalid("blur sigma must be positive"));
        }
        let r = (size / 2) as isize;
        let half = real::<T>(0.5);
        let mut weights = Vec::with_capacity(size * size);
        let mut total = T::zero();
        for dy in -r..=r {
            for dx in -r..=r {
                let rr = T::from_isize(dx * dx + dy * dy).unwrap();
                let w = (-half * rr / (sigma * sigma)).exp();
                weights.push(w);
                total += w;
            }
        }
        for w in &mut weights {
            *w = *w / total;
        }
        Ok(Self {
            size,
            sigma,
            weights,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// 2D convolution with reflect padding, per channel.
    pub fn convolve(&self, data: &[T], height: usize, width: usize, channels: usize) -> Vec<T> {
        let r = (self.size / 2) as isize;
        let mut out = vec![T::zero(); data.len()];
        for y in 0..height as isize {
            for x in 0..width as isize {
                for (ki, (dy, dx)) in self.offsets(r).enumerate() {
                    let sy = reflect(y + dy, height as isize);
                    let sx = reflect(x + dx, width as isize);
                    let w = self.weights[ki];
                    let src = (sy * width + sx) * channels;
                    let dst = (y as usize * width + x as usize) * channels;
                    for c in 0..channels {
                        out[dst + c] += w * data[src + c];
                    }
                }
            }
        }
        out
    }

    /// Exact adjoint of [`convolve`](Self::convolve): scatters each value
    /// through the same reflected taps, so ⟨convolve(a), b⟩ = ⟨a, adjoint(b)⟩.
    pub fn adjoint(&self, data: &[T], height: usize, width: usize, channels: usize) -> Vec<T> {
        let r = (self.size / 2) as isize;
        let mut out = vec![T::zero(); data.len()];
        for y in 0..height as isize {
            for x in 0..width as isize {
                for (ki, (dy, dx)) in self.offsets(r).enumerate() {
                    let sy = reflect(y + dy, height as isize);
                    let sx = reflect(x + dx, width as isize);
                    let w = self.weights[ki];
                    let dst = (sy * width + sx) * channels;
                    let src = (y as usize * width + x as usize) * channels;
                    for c in 0..channels {
                        out[dst + c] += w * data[src + c];
                    }
                }
            }
        }
        out
    }

    fn offsets(&self, r: isize) -> impl Iterator<Item = (isize, isize)> {
        (-r..=r).flat_map(move |dy| (-r..=r).map(move |dx| (dy, dx)))
    }
}

/// Half-sample symmetric reflection: -1 maps to 0, n maps to n-1. Handles
/// offsets of any magnitude, so kernels larger than the image are fine.
fn reflect(i: isize, n: isize) -> usize {
    let period = 2 * n;
    let mut i = i % period;
    if i < 0 {
        i += period;
    }
    if i >= n {
        (period - 1 - i) as usize
    } else {
        i as usize
    }
}

/// Gaussian blur of an image; constant images pass through unchanged.
pub fn gaussian_blur<T: Real>(img: &ImageGrid<T>, kernel: &BlurKernel<T>) -> Result<ImageGrid<T>> {
    let out = kernel.convolve(img.as_flat(), img.height(), img.width(), img.channels());
    ImageGrid::new(out, img.height(), img.width(), img.channels())
}

/// Low-frequency L2 term: `Σ (blur(x) - blur(y))²` over all pixels, with
/// gradient `2·adjoint(blur(x) - blur(y))`.
pub fn grad_lowfreq_l2<T: Real>(
    x_img: &ImageGrid<T>,
    y_img: &ImageGrid<T>,
    kernel: &BlurKernel<T>,
) -> Result<(T, Vec<T>)> {
    x_img.check_same_shape(y_img)?;
    let (h, w, c) = (x_img.height(), x_img.width(), x_img.channels());
    let bx = kernel.convolve(x_img.as_flat(), h, w, c);
    let by = kernel.convolve(y_img.as_flat(), h, w, c);
    let diff: Vec<T> = bx.iter().zip(&by).map(|(a, b)| *a - *b).collect();
    let loss = diff.iter().fold(T::zero(), |acc, v| acc + *v * *v);
    let two = real::<T>(2.0);
    let mut grad = kernel.adjoint(&diff, h, w, c);
    for g in &mut grad {
        *g = two * *g;
    }
    Ok((loss, grad))
}

/// Elementwise L1 term: `Σ |x - y|` with gradient sign(x-y), sign(0) = 0.
pub fn grad_l1<T: Real>(x_img: &ImageGrid<T>, y_img: &ImageGrid<T>) -> Result<(T, Vec<T>)> {
    x_img.check_same_shape(y_img)?;
    let mut loss = T::zero();
    let grad = x_img
        .as_flat()
        .iter()
        .zip(y_img.as_flat())
        .map(|(a, b)| {
            let d = *a - *b;
            loss += d.abs();
            if d > T::zero() {
                T::one()
            } else if d < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
        .collect();
    Ok((loss, grad))
}

/// Contextual loss between the patch sets of two images, with the patch
/// gradient scattered back into pixel positions (the adjoint of patch
/// extraction, so overlapping patches accumulate).
pub fn grad_contextual_image<T: Real>(
    x_img: &ImageGrid<T>,
    y_img: &ImageGrid<T>,
    spec: &PatchSpec,
    kind: DistanceKind,
    h: T,
    epsilon: T,
    center: bool,
) -> Result<(T, Vec<T>)> {
    x_img.check_same_shape(y_img)?;
    let px = extract_patches(x_img, spec)?;
    let py = extract_patches(y_img, spec)?;
    let (loss, pgrad) = grad_contextual(&px, &py, kind, h, epsilon, center)?;

    let (w, c, k) = (x_img.width(), x_img.channels(), spec.patch_size);
    let ny = spec.count_along(x_img.height());
    let nx = spec.count_along(x_img.width());
    let dim = px.dim();
    let mut grad = vec![T::zero(); x_img.as_flat().len()];
    for oy in 0..ny {
        for ox in 0..nx {
            let p = oy * nx + ox;
            let (y0, x0) = (oy * spec.stride, ox * spec.stride);
            let patch = &pgrad[p * dim..(p + 1) * dim];
            let mut at = 0;
            for py_ in 0..k {
                let row = (y0 + py_) * w;
                for px_ in 0..k {
                    let base = (row + x0 + px_) * c;
                    for ch in 0..c {
                        grad[base + ch] += patch[at];
                        at += 1;
                    }
                }
            }
        }
    }
    Ok((loss, grad))
}
