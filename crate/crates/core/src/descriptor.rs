//! PCA-compressed kernel descriptors.
//!
//! Kernels are vectorized row-major and projected onto the top principal
//! directions of a training library. A [`DescriptorField`] distributes the
//! per-region codes over the image grid with the same soft masks used by the
//! forward model, and [`assemble_conditioning`] stacks it behind the blurred
//! RGB image.
//!
//! Descriptor channels are raw PCA coefficients; no per-channel scaling is
//! applied anywhere, so the field is exactly linear in the masks.

use std::cmp::Ordering;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::binio::{self, ByteReader, ByteWriter, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::forward::DegradationField;
use crate::image::ImageTensor;
use crate::kernels::Kernel;

/// Default embedding dimension.
pub const DEFAULT_DESCRIPTOR_DIM: usize = 128;

/// Rows of the centered data matrix folded into the covariance per block.
const GRAM_BLOCK_ROWS: usize = 1024;

const SVBP_MAGIC: &[u8; 4] = b"SVBP";
const SVBD_MAGIC: &[u8; 4] = b"SVBD";

/// Mean kernel plus `d` orthonormal principal directions over `k*k` taps.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    kernel_size: usize,
    mean: Vec<f64>,
    /// `d x k^2`, row-major; each row is one unit-norm direction.
    components: Vec<f64>,
    explained_variance: Vec<f64>,
}

impl PcaBasis {
    pub fn new(
        kernel_size: usize,
        mean: Vec<f64>,
        components: Vec<f64>,
        explained_variance: Vec<f64>,
    ) -> Result<Self> {
        let m = kernel_size * kernel_size;
        let d = explained_variance.len();
        if kernel_size % 2 == 0 || mean.len() != m || components.len() != d * m || d == 0 || d > m
        {
            return Err(Error::Shape(format!(
                "inconsistent basis: k={kernel_size}, mean {}, components {}, d={d}",
                mean.len(),
                components.len()
            )));
        }
        Ok(Self {
            kernel_size,
            mean,
            components,
            explained_variance,
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn dim(&self) -> usize {
        self.explained_variance.len()
    }

    /// Length `k^2` of a vectorized kernel.
    pub fn input_len(&self) -> usize {
        self.kernel_size * self.kernel_size
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn component(&self, i: usize) -> &[f64] {
        let m = self.input_len();
        &self.components[i * m..(i + 1) * m]
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    /// Keeps the leading `d` directions.
    pub fn truncated(&self, d: usize) -> Result<Self> {
        if d == 0 || d > self.dim() {
            return Err(Error::Param(format!(
                "cannot truncate a {}-dimensional basis to {d}",
                self.dim()
            )));
        }
        Self::new(
            self.kernel_size,
            self.mean.clone(),
            self.components[..d * self.input_len()].to_vec(),
            self.explained_variance[..d].to_vec(),
        )
    }

    /// `components . (v - mean)` for an arbitrary `k^2` vector.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "vector of length {} against a basis over {} taps",
                v.len(),
                self.input_len()
            )));
        }
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok((0..self.dim())
            .map(|i| {
                self.component(i)
                    .iter()
                    .zip(&centered)
                    .map(|(c, x)| c * x)
                    .sum()
            })
            .collect())
    }

    pub fn to_svbp_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.bytes(SVBP_MAGIC);
        w.u16(FORMAT_VERSION);
        w.u16(binio::dim_u16("SVBP", "k", self.kernel_size)?);
        w.u16(binio::dim_u16("SVBP", "d", self.dim())?);
        for v in self
            .mean
            .iter()
            .chain(&self.components)
            .chain(&self.explained_variance)
        {
            w.f64(*v);
        }
        Ok(w.into_inner())
    }

    pub fn from_svbp_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new("SVBP", bytes);
        r.header(SVBP_MAGIC)?;
        let k = r.u16()? as usize;
        let d = r.u16()? as usize;
        let m = k * k;
        let mean = r.f64_vec(m)?;
        let components = r.f64_vec(d * m)?;
        let explained = r.f64_vec(d)?;
        r.finish()?;
        Self::new(k, mean, components, explained).map_err(|e| Error::format("SVBP", e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        binio::write_file(path.as_ref(), &self.to_svbp_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_svbp_bytes(&binio::read_file(path.as_ref())?)
    }
}

/// Principal directions of a kernel library, largest variance first.
///
/// The covariance of the centered, row-major vectorized kernels is
/// accumulated block-wise and decomposed with a symmetric eigensolver; its
/// eigenvectors are the right singular vectors of the centered data matrix.
/// Each direction is signed so that its largest-magnitude entry (lowest index
/// on ties) is positive.
pub fn fit_pca(kernels: &[Kernel], d: usize) -> Result<PcaBasis> {
    let first = kernels
        .first()
        .ok_or_else(|| Error::Rank("cannot fit PCA to an empty kernel list".into()))?;
    let k = first.size();
    let m = k * k;
    if kernels.iter().any(|kk| kk.size() != k) {
        return Err(Error::Shape("kernel library mixes kernel sizes".into()));
    }
    if d == 0 || d > m {
        return Err(Error::Param(format!("PCA dimension {d} must lie in [1, {m}]")));
    }
    let n = kernels.len();
    if n < d {
        return Err(Error::Rank(format!("{n} kernels cannot span {d} components")));
    }

    let mut mean = vec![0.0; m];
    for kk in kernels {
        for (acc, t) in mean.iter_mut().zip(kk.taps()) {
            *acc += t;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);

    let mut cov = DMatrix::<f64>::zeros(m, m);
    for block in kernels.chunks(GRAM_BLOCK_ROWS) {
        // transposed block: one centered kernel per column
        let xt = DMatrix::from_fn(m, block.len(), |i, j| block[j].taps()[i] - mean[i]);
        cov += &xt * xt.transpose();
    }
    cov /= (n.max(2) - 1) as f64;

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| match eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });

    let mut components = Vec::with_capacity(d * m);
    let mut explained = Vec::with_capacity(d);
    for &j in &order[..d] {
        let col = eig.eigenvectors.column(j);
        let pivot = col
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (i, v)| {
                if v.abs() > bv.abs() {
                    (i, *v)
                } else {
                    (bi, bv)
                }
            })
            .0;
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        components.extend(col.iter().map(|v| sign * v));
        explained.push(eig.eigenvalues[j].max(0.0));
    }
    PcaBasis::new(k, mean, components, explained)
}

/// Code `components . (vec(K) - mean)`.
pub fn embed(kernel: &Kernel, basis: &PcaBasis) -> Result<Vec<f64>> {
    if kernel.size() != basis.kernel_size {
        return Err(Error::Shape(format!(
            "kernel size {} against a basis for size {}",
            kernel.size(),
            basis.kernel_size
        )));
    }
    basis.project(kernel.taps())
}

/// `mean + components^T . e` as row-major `k x k` taps. Not renormalized
/// or clipped.
pub fn reconstruct(e: &[f64], basis: &PcaBasis) -> Result<Vec<f64>> {
    if e.len() != basis.dim() {
        return Err(Error::Shape(format!(
            "code of length {} against a {}-dimensional basis",
            e.len(),
            basis.dim()
        )));
    }
    let mut out = basis.mean.clone();
    for (i, &coef) in e.iter().enumerate() {
        for (o, c) in out.iter_mut().zip(basis.component(i)) {
            *o += coef * c;
        }
    }
    Ok(out)
}

/// `||K - K_hat||_2 / ||K||_2` after a round trip through the basis.
pub fn relative_reconstruction_error(kernel: &Kernel, basis: &PcaBasis) -> Result<f64> {
    let approx = reconstruct(&embed(kernel, basis)?, basis)?;
    let (num, den) = kernel
        .taps()
        .iter()
        .zip(&approx)
        .fold((0.0, 0.0), |(n, d), (t, a)| (n + (t - a) * (t - a), d + t * t));
    Ok((num / den).sqrt())
}

/// Channel-last `H x W x C` tensor shared by the descriptor and conditioning
/// files.
fn svbd_bytes(height: usize, width: usize, channels: usize, values: &[f64]) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.bytes(SVBD_MAGIC);
    w.u16(FORMAT_VERSION);
    w.u32(binio::dim_u32("SVBD", "H", height)?);
    w.u32(binio::dim_u32("SVBD", "W", width)?);
    w.u16(binio::dim_u16("SVBD", "d", channels)?);
    for &v in values {
        w.f32(v as f32);
    }
    Ok(w.into_inner())
}

fn parse_svbd(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>)> {
    let mut r = ByteReader::new("SVBD", bytes);
    r.header(SVBD_MAGIC)?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let d = r.u16()? as usize;
    if h == 0 || w == 0 || d == 0 {
        return Err(Error::format("SVBD", "zero dimension"));
    }
    let count = h
        .checked_mul(w)
        .and_then(|hw| hw.checked_mul(d))
        .ok_or_else(|| Error::format("SVBD", "dimension overflow"))?;
    let values = r.f32_vec(count)?;
    r.finish()?;
    Ok((h, w, d, values))
}

/// Per-pixel `d`-vectors aligned with the image grid, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorField {
    height: usize,
    width: usize,
    dim: usize,
    values: Vec<f64>,
}

impl DescriptorField {
    pub fn new(height: usize, width: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || dim == 0 || values.len() != height * width * dim {
            return Err(Error::Shape(format!(
                "{height}x{width}x{dim} descriptor field with {} values",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            dim,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.dim;
        &self.values[start..start + self.dim]
    }

    /// Root-mean-square per-pixel L2 distance to another field.
    pub fn mean_l2_gap(&self, other: &DescriptorField) -> Result<f64> {
        if (self.height, self.width, self.dim) != (other.height, other.width, other.dim) {
            return Err(Error::Shape("descriptor fields differ in shape".into()));
        }
        let total: f64 = self
            .values
            .chunks_exact(self.dim)
            .zip(other.values.chunks_exact(self.dim))
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum();
        Ok(total / (self.height * self.width) as f64)
    }

    pub fn to_svbd_bytes(&self) -> Result<Vec<u8>> {
        svbd_bytes(self.height, self.width, self.dim, &self.values)
    }

    pub fn from_svbd_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, w, d, values) = parse_svbd(bytes)?;
        Self::new(h, w, d, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        binio::write_file(path.as_ref(), &self.to_svbd_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_svbd_bytes(&binio::read_file(path.as_ref())?)
    }
}

/// `D(p) = sum_i M_i(p) * embed(K_i)`, accumulated in region order.
pub fn build_descriptor_field(field: &DegradationField, basis: &PcaBasis) -> Result<DescriptorField> {
    let codes = field
        .kernels()
        .iter()
        .map(|k| embed(k, basis))
        .collect::<Result<Vec<_>>>()?;
    let masks = field.masks();
    let (h, w, d) = (masks.height(), masks.width(), basis.dim());
    let mut values = vec![0.0; h * w * d];
    for (i, code) in codes.iter().enumerate() {
        for (p, &m) in masks.plane(i).iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (v, c) in values[p * d..(p + 1) * d].iter_mut().zip(code) {
                *v += m * c;
            }
        }
    }
    DescriptorField::new(h, w, d, values)
}

/// Blurred RGB followed by the descriptor channels, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningTensor {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl ConditioningTensor {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn descriptor_dim(&self) -> usize {
        self.channels - 3
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.values[start..start + self.channels]
    }

    /// Channels `0..3` as a planar image.
    pub fn rgb(&self) -> ImageTensor {
        ImageTensor::from_fn(self.height, self.width, 3, |r, c, ch| self.at(r, c)[ch])
    }

    pub fn to_svbd_bytes(&self) -> Result<Vec<u8>> {
        svbd_bytes(self.height, self.width, self.channels, &self.values)
    }

    pub fn from_svbd_bytes(bytes: &[u8]) -> Result<Self> {
        let (height, width, channels, values) = parse_svbd(bytes)?;
        if channels < 4 {
            return Err(Error::format(
                "SVBD",
                format!("conditioning tensor needs at least 4 channels, got {channels}"),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        binio::write_file(path.as_ref(), &self.to_svbd_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_svbd_bytes(&binio::read_file(path.as_ref())?)
    }
}

/// Channel-wise concatenation `[R, G, B, D_0 .. D_{d-1}]`.
pub fn assemble_conditioning(y: &ImageTensor, descriptors: &DescriptorField) -> Result<ConditioningTensor> {
    if y.channels() != 3 {
        return Err(Error::Shape(format!(
            "conditioning needs an RGB image, got {} channels",
            y.channels()
        )));
    }
    if y.height() != descriptors.height || y.width() != descriptors.width {
        return Err(Error::Shape(format!(
            "image {}x{} vs descriptor field {}x{}",
            y.height(),
            y.width(),
            descriptors.height,
            descriptors.width
        )));
    }
    let (h, w, d) = (y.height(), y.width(), descriptors.dim);
    let channels = 3 + d;
    let mut values = Vec::with_capacity(h * w * channels);
    for r in 0..h {
        for c in 0..w {
            values.extend((0..3).map(|ch| y.get(r, c, ch)));
            values.extend_from_slice(descriptors.at(r, c));
        }
    }
    Ok(ConditioningTensor {
        height: h,
        width: w,
        channels,
        values,
    })
}

/// Peak-normalize each kernel to `[0, 1]`, add i.i.d. Gaussian noise,
/// clamp at zero and rescale to unit sum. A kernel that clamps to all zeros
/// becomes the identity tap. Masks and the noise level are untouched.
pub fn perturb_kernels<R: Rng + ?Sized>(
    field: &DegradationField,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<DegradationField> {
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::Param(format!(
            "perturbation sigma must be finite and >= 0, got {noise_sigma}"
        )));
    }
    let kernels = field
        .kernels()
        .iter()
        .map(|k| perturb_kernel(k, noise_sigma, rng))
        .collect::<Result<Vec<_>>>()?;
    field.with_kernels(kernels)
}

/// Single-kernel version of [`perturb_kernels`].
pub fn perturb_kernel<R: Rng + ?Sized>(kernel: &Kernel, noise_sigma: f64, rng: &mut R) -> Result<Kernel> {
    let peak = kernel.taps().iter().cloned().fold(0.0, f64::max);
    let mut taps: Vec<f64> = kernel.taps().iter().map(|t| t / peak).collect();
    if noise_sigma > 0.0 {
        for t in &mut taps {
            let n: f64 = rng.sample(StandardNormal);
            *t = (*t + noise_sigma * n).max(0.0);
        }
    }
    let s: f64 = taps.iter().sum();
    if !(s > 0.0) {
        return Kernel::delta(kernel.size());
    }
    Kernel::from_taps(kernel.size(), taps.into_iter().map(|t| t / s).collect())
}
