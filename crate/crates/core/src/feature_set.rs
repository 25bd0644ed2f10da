//! Feature sets and image grids: the raw material every loss in this crate
//! compares. A [`FeatureSet`] is an ordered bag of N points in R^d (raw
//! coordinates, vectorized patches, or externally computed descriptors); an
//! [`ImageGrid`] is a dense H×W×C pixel grid with values in [0,1] from which
//! patch features are extracted.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// An ordered collection of N points in R^d.
///
/// Storage is a flat row-major buffer; points keep their construction order,
/// which several operations (subsampling, matching) rely on.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet<T> {
    data: Vec<T>,
    len: usize,
    dim: usize,
}

impl<T: Real> FeatureSet<T> {
    /// Builds a set from a flat row-major buffer of `len` points of dimension `dim`.
    pub fn from_flat(data: Vec<T>, len: usize, dim: usize) -> Result<Self> {
        if len == 0 || dim == 0 {
            return Err(Error::EmptySet);
        }
        if data.len() != len * dim {
            return Err(Error::DimensionMismatch(data.len(), len * dim));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self { data, len, dim })
    }

    /// Builds a set from per-point rows, all of which must share a dimension.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let len = rows.len();
        if len == 0 {
            return Err(Error::EmptySet);
        }
        let dim = rows[0].len();
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch(row.len(), dim));
            }
        }
        let data: Vec<T> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_flat(data, len, dim)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_points(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[T] {
        &self.data
    }

    /// Mean point of the set.
    pub fn mean(&self) -> Vec<T> {
        let mut mean = vec![T::zero(); self.dim];
        for p in self.iter_points() {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += *v;
            }
        }
        let n = T::from_usize(self.len).unwrap();
        for m in &mut mean {
            *m = *m / n;
        }
        mean
    }
}

/// A dense image: `height`×`width` pixels, 1 (gray) or 3 (RGB) channels,
/// values clamped to [0,1] on construction. Layout is row-major with
/// channels interleaved per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid<T> {
    data: Vec<T>,
    height: usize,
    width: usize,
    channels: usize,
}

impl<T: Real> ImageGrid<T> {
    pub fn new(data: Vec<T>, height: usize, width: usize, channels: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image must have positive dimensions"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch(
                data.len(),
                height * width * channels,
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        let data = data
            .into_iter()
            .map(|v| v.max(T::zero()).min(T::one()))
            .collect();
        Ok(Self {
            data,
            height,
            width,
            channels,
        })
    }

    /// Constant-valued image.
    pub fn constant(value: T, height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(vec![value; height * width * channels], height, width, channels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn as_flat(&self) -> &[T] {
        &self.data
    }

    pub fn value(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub(crate) fn check_same_shape(&self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::ImageSizeMismatch(
                self.height,
                self.width,
                other.height,
                other.width,
            ));
        }
        Ok(())
    }
}

/// Square sliding-window specification: side length `patch_size`, step `stride`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub patch_size: usize,
    pub stride: usize,
}

impl PatchSpec {
    pub fn new(patch_size: usize, stride: usize) -> Result<Self> {
        if patch_size == 0 {
            return Err(Error::invalid("patch_size must be positive"));
        }
        if stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        Ok(Self { patch_size, stride })
    }

    /// Number of full windows along an axis of length `extent`.
    pub fn count_along(&self, extent: usize) -> usize {
        if self.patch_size > extent {
            0
        } else {
            (extent - self.patch_size) / self.stride + 1
        }
    }
}

/// Vectorizes every full k×k window of `image`, stepping by `spec.stride`.
///
/// Windows are ordered row-major over their top-left offsets; within a patch
/// the layout is row-major with channels interleaved per pixel, so
/// `d = k·k·channels`. Only full windows are produced; there is no boundary
/// padding.
pub fn extract_patches<T: Real>(image: &ImageGrid<T>, spec: &PatchSpec) -> Result<FeatureSet<T>> {
    let k = spec.patch_size;
    if k > image.height || k > image.width {
        return Err(Error::PatchExceedsImage {
            patch: k,
            height: image.height,
            width: image.width,
        });
    }
    let ny = spec.count_along(image.height);
    let nx = spec.count_along(image.width);
    let c = image.channels;
    let dim = k * k * c;
    let mut data = Vec::with_capacity(ny * nx * dim);
    for oy in 0..ny {
        for ox in 0..nx {
            let (y0, x0) = (oy * spec.stride, ox * spec.stride);
            for py in 0..k {
                let row = (y0 + py) * image.width;
                for px in 0..k {
                    let base = (row + x0 + px) * c;
                    data.extend_from_slice(&image.data[base..base + c]);
                }
            }
        }
    }
    FeatureSet::from_flat(data, ny * nx, dim)
}

/// Uniform sample of `n` points without replacement, deterministic per seed.
/// Survivors keep their original relative order.
pub fn subsample<T: Real>(set: &FeatureSet<T>, n: usize, seed: u64) -> Result<FeatureSet<T>> {
    if n > set.len() {
        return Err(Error::SampleTooLarge {
            requested: n,
            available: set.len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptySet);
    }
    if n == set.len() {
        return Ok(set.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = rand::seq::index::sample(&mut rng, set.len(), n).into_vec();
    indices.sort_unstable();
    let mut data = Vec::with_capacity(n * set.dim());
    for i in indices {
        data.extend_from_slice(set.point(i));
    }
    FeatureSet::from_flat(data, n, set.dim())
}

/// Brings two sets to a common size by subsampling the larger one.
/// Equal-size inputs pass through unchanged.
pub fn equalize<T: Real>(
    x: &FeatureSet<T>,
    y: &FeatureSet<T>,
    seed: u64,
) -> Result<(FeatureSet<T>, FeatureSet<T>)> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch(x.dim(), y.dim()));
    }
    if x.len() > y.len() {
        Ok((subsample(x, y.len(), seed)?, y.clone()))
    } else if y.len() > x.len() {
        Ok((x.clone(), subsample(y, x.len(), seed)?))
    } else {
        Ok((x.clone(), y.clone()))
    }
}
