//! The spatially varying degradation `y = sum_i M_i . (K_i * x) + n`.
//!
//! Conventions:
//! - `*` is true convolution (the kernel is flipped), so an asymmetric motion
//!   kernel with mass to the right of center shifts image content right.
//! - Borders use reflect padding (see [`crate::boundary`]).
//! - [`apply_adjoint`] is the exact matrix transpose of
//!   [`apply_forward_linear`], including fold-back of the padded border.
//! - Region contributions are accumulated per pixel in ascending region
//!   order in `f64`, independent of thread count.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::binio::{self, ByteReader, ByteWriter, FORMAT_VERSION};
use crate::boundary::reflect_index;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::kernels::{Kernel, KernelSamplingConfig, UniformRange};
use crate::masks::{self, SegmentationMap, SoftMaskField};

/// Default observation noise range (standard deviation, `[0, 1]` intensity).
pub const DEFAULT_NOISE_RANGE: UniformRange = UniformRange::new(0.05, 0.25);

const SVBF_MAGIC: &[u8; 4] = b"SVBF";

/// The paired masks and kernels `{(M_i, K_i)}` plus the noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationField {
    masks: SoftMaskField,
    kernels: Vec<Kernel>,
    noise_sigma: f64,
}

impl DegradationField {
    pub fn new(masks: SoftMaskField, kernels: Vec<Kernel>, noise_sigma: f64) -> Result<Self> {
        let f = Self::new_unchecked(masks, kernels, noise_sigma)?;
        f.check()?;
        Ok(f)
    }

    /// Structural checks only: region count, shared kernel size, noise >= 0.
    pub fn new_unchecked(
        masks: SoftMaskField,
        kernels: Vec<Kernel>,
        noise_sigma: f64,
    ) -> Result<Self> {
        if kernels.len() != masks.num_regions() {
            return Err(Error::Shape(format!(
                "{} kernels for {} mask regions",
                kernels.len(),
                masks.num_regions()
            )));
        }
        let k = kernels[0].size();
        if kernels.iter().any(|kk| kk.size() != k) {
            return Err(Error::Shape("field kernels differ in size".into()));
        }
        if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
            return Err(Error::Param(format!(
                "noise_sigma must be finite and >= 0, got {noise_sigma}"
            )));
        }
        Ok(Self {
            masks,
            kernels,
            noise_sigma,
        })
    }

    /// Partition of unity of the masks and every kernel invariant.
    pub fn check(&self) -> Result<()> {
        self.masks.check_partition_of_unity()?;
        for (i, k) in self.kernels.iter().enumerate() {
            k.check()
                .map_err(|e| Error::Invariant(format!("kernel {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn masks(&self) -> &SoftMaskField {
        &self.masks
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn num_regions(&self) -> usize {
        self.kernels.len()
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels[0].size()
    }

    pub fn height(&self) -> usize {
        self.masks.height()
    }

    pub fn width(&self) -> usize {
        self.masks.width()
    }

    /// Same masks and noise level, different kernels.
    pub fn with_kernels(&self, kernels: Vec<Kernel>) -> Result<Self> {
        Self::new_unchecked(self.masks.clone(), kernels, self.noise_sigma)
    }

    pub fn with_noise_sigma(&self, noise_sigma: f64) -> Result<Self> {
        Self::new_unchecked(self.masks.clone(), self.kernels.clone(), noise_sigma)
    }

    /// Reorders `(M_i, K_i)` pairs jointly: new region `j` is old `order[j]`.
    pub fn reordered(&self, order: &[usize]) -> Result<Self> {
        let n = self.num_regions();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&o| o >= n || std::mem::replace(&mut seen[o], true)) {
            return Err(Error::Param("order must be a permutation of region indices".into()));
        }
        let mut weights = Vec::with_capacity(self.masks.weights().len());
        for &o in order {
            weights.extend_from_slice(self.masks.plane(o));
        }
        let masks =
            SoftMaskField::new_unchecked(self.masks.height(), self.masks.width(), n, weights)?;
        let kernels = order.iter().map(|&o| self.kernels[o].clone()).collect();
        Self::new_unchecked(masks, kernels, self.noise_sigma)
    }

    fn check_image(&self, img: &ImageTensor) -> Result<()> {
        if img.height() != self.height() || img.width() != self.width() {
            return Err(Error::Shape(format!(
                "image is {}x{}, degradation field is {}x{}",
                img.height(),
                img.width(),
                self.height(),
                self.width()
            )));
        }
        Ok(())
    }

    fn shared_kernel(&self) -> Option<&Kernel> {
        let first = &self.kernels[0];
        self.kernels[1..].iter().all(|k| k == first).then_some(first)
    }

    pub fn to_svbf_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.bytes(SVBF_MAGIC);
        w.u16(FORMAT_VERSION);
        self.masks.write_svbm_block(&mut w)?;
        for k in &self.kernels {
            k.write_svbk_block(&mut w)?;
        }
        w.f64(self.noise_sigma);
        Ok(w.into_inner())
    }

    /// Parses SVBF. Structure is validated; mask and kernel invariants are
    /// left to [`DegradationField::check`].
    pub fn from_svbf_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new("SVBF", bytes);
        r.header(SVBF_MAGIC)?;
        let masks = SoftMaskField::read_svbm_block(&mut r)?;
        let kernels = (0..masks.num_regions())
            .map(|_| Kernel::read_svbk_block(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let noise_sigma = r.f64()?;
        r.finish()?;
        Self::new_unchecked(masks, kernels, noise_sigma)
            .map_err(|e| Error::format("SVBF", e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        binio::write_file(path.as_ref(), &self.to_svbf_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_svbf_bytes(&binio::read_file(path.as_ref())?)
    }
}

/// Nonzero taps as `(row, col, weight)`.
fn nonzero_taps(kernel: &Kernel) -> Vec<(usize, usize, f64)> {
    let k = kernel.size();
    kernel
        .taps()
        .iter()
        .enumerate()
        .filter(|(_, &t)| t != 0.0)
        .map(|(i, &t)| (i / k, i % k, t))
        .collect()
}

/// Per-row inclusive column span of nonzero entries.
fn row_spans(plane: &[f64], width: usize) -> Vec<Option<(usize, usize)>> {
    plane
        .chunks_exact(width)
        .map(|row| {
            let first = row.iter().position(|&v| v != 0.0)?;
            let last = row.iter().rposition(|&v| v != 0.0)?;
            Some((first, last))
        })
        .collect()
}

/// Reflect-padded copy with `pad` extra pixels on every side.
fn reflect_pad(plane: &[f64], height: usize, width: usize, pad: usize) -> Vec<f64> {
    let pw = width + 2 * pad;
    let cols: Vec<usize> = (0..pw)
        .map(|v| reflect_index(v as isize - pad as isize, width))
        .collect();
    let mut out = Vec::with_capacity((height + 2 * pad) * pw);
    for u in 0..height + 2 * pad {
        let src = &plane[reflect_index(u as isize - pad as isize, height) * width..][..width];
        out.extend(cols.iter().map(|&c| src[c]));
    }
    out
}

/// Adds padded-domain values back onto the image they were reflected from;
/// the transpose of [`reflect_pad`].
fn fold_back(padded: &[f64], height: usize, width: usize, pad: usize, out: &mut [f64]) {
    let pw = width + 2 * pad;
    let cols: Vec<usize> = (0..pw)
        .map(|v| reflect_index(v as isize - pad as isize, width))
        .collect();
    for u in 0..height + 2 * pad {
        let r = reflect_index(u as isize - pad as isize, height);
        let dst = &mut out[r * width..(r + 1) * width];
        for (v, &c) in cols.iter().enumerate() {
            dst[c] += padded[u * pw + v];
        }
    }
}

/// Reflect-padded true convolution of one plane.
pub fn convolve(plane: &[f64], height: usize, width: usize, kernel: &Kernel) -> Vec<f64> {
    let rad = kernel.radius();
    let pad = reflect_pad(plane, height, width, rad);
    let pw = width + 2 * rad;
    let taps = nonzero_taps(kernel);
    let mut out = vec![0.0; height * width];
    out.par_chunks_mut(width).enumerate().for_each(|(r, row)| {
        for &(a, b, t) in &taps {
            let src = &pad[(r + 2 * rad - a) * pw + 2 * rad - b..][..width];
            for (o, s) in row.iter_mut().zip(src) {
                *o += t * s;
            }
        }
    });
    out
}

/// Exact transpose of [`convolve`].
pub fn convolve_adjoint(plane: &[f64], height: usize, width: usize, kernel: &Kernel) -> Vec<f64> {
    let rad = kernel.radius();
    let taps = nonzero_taps(kernel);
    let (ph, pw) = (height + 2 * rad, width + 2 * rad);
    let mut padded = vec![0.0; ph * pw];
    padded.par_chunks_mut(pw).enumerate().for_each(|(u, row)| {
        accumulate_adjoint_row(u, row, plane, None, height, width, rad, &taps);
    });
    let mut out = vec![0.0; height * width];
    fold_back(&padded, height, width, rad, &mut out);
    out
}

/// One row `u` of the padded-domain adjoint: `row[v] += K[a,b] * w[r, c]`
/// for every `(r, c) = (u + a - 2 rad, v + b - 2 rad)` inside the image.
#[allow(clippy::too_many_arguments)]
fn accumulate_adjoint_row(
    u: usize,
    row: &mut [f64],
    w: &[f64],
    spans: Option<&[Option<(usize, usize)>]>,
    height: usize,
    width: usize,
    rad: usize,
    taps: &[(usize, usize, f64)],
) {
    for &(a, b, t) in taps {
        let r = u as isize + a as isize - 2 * rad as isize;
        if r < 0 || r >= height as isize {
            continue;
        }
        let r = r as usize;
        let (c0, c1) = match spans {
            Some(s) => match s[r] {
                Some(span) => span,
                None => continue,
            },
            None => (0, width - 1),
        };
        let src = &w[r * width + c0..=r * width + c1];
        let dst = &mut row[c0 + 2 * rad - b..=c1 + 2 * rad - b];
        for (d, s) in dst.iter_mut().zip(src) {
            *d += t * s;
        }
    }
}

/// `sum_i M_i . (K_i * x)`, each channel independently.
pub fn apply_forward_linear(x: &ImageTensor, field: &DegradationField) -> Result<ImageTensor> {
    field.check_image(x)?;
    let (h, w) = (x.height(), x.width());
    let mut out = ImageTensor::zeros(h, w, x.channels());

    // with a partition of unity, identical kernels reduce to one convolution
    if let Some(kernel) = field.shared_kernel() {
        for c in 0..x.channels() {
            if kernel.is_delta() {
                out.channel_mut(c).copy_from_slice(x.channel(c));
            } else {
                out.channel_mut(c)
                    .copy_from_slice(&convolve(x.channel(c), h, w, kernel));
            }
        }
        return Ok(out);
    }

    let rad = field.kernel_size() / 2;
    let pw = w + 2 * rad;
    let taps: Vec<_> = field.kernels.iter().map(nonzero_taps).collect();
    let spans: Vec<_> = (0..field.num_regions())
        .map(|i| row_spans(field.masks.plane(i), w))
        .collect();
    for c in 0..x.channels() {
        let pad = reflect_pad(x.channel(c), h, w, rad);
        out.channel_mut(c)
            .par_chunks_mut(w)
            .enumerate()
            .for_each(|(r, out_row)| {
                let mut tmp = vec![0.0; w];
                for i in 0..field.num_regions() {
                    let Some((c0, c1)) = spans[i][r] else { continue };
                    let tmp = &mut tmp[c0..=c1];
                    tmp.fill(0.0);
                    for &(a, b, t) in &taps[i] {
                        let src = &pad[(r + 2 * rad - a) * pw + 2 * rad - b + c0..][..tmp.len()];
                        for (d, s) in tmp.iter_mut().zip(src) {
                            *d += t * s;
                        }
                    }
                    let m = &field.masks.plane(i)[r * w + c0..=r * w + c1];
                    for ((o, mi), v) in out_row[c0..=c1].iter_mut().zip(m).zip(tmp.iter()) {
                        *o += mi * v;
                    }
                }
            });
    }
    Ok(out)
}

/// Exact transpose of [`apply_forward_linear`]:
/// `sum_i C_i^T (M_i . y)` with `C_i^T` folding the padded border back.
pub fn apply_adjoint(y: &ImageTensor, field: &DegradationField) -> Result<ImageTensor> {
    field.check_image(y)?;
    let (h, w) = (y.height(), y.width());
    let mut out = ImageTensor::zeros(h, w, y.channels());

    if let Some(kernel) = field.shared_kernel() {
        for c in 0..y.channels() {
            if kernel.is_delta() {
                out.channel_mut(c).copy_from_slice(y.channel(c));
            } else {
                out.channel_mut(c)
                    .copy_from_slice(&convolve_adjoint(y.channel(c), h, w, kernel));
            }
        }
        return Ok(out);
    }

    let rad = field.kernel_size() / 2;
    let (ph, pw) = (h + 2 * rad, w + 2 * rad);
    let taps: Vec<_> = field.kernels.iter().map(nonzero_taps).collect();
    let spans: Vec<_> = (0..field.num_regions())
        .map(|i| row_spans(field.masks.plane(i), w))
        .collect();
    for c in 0..y.channels() {
        let yc = y.channel(c);
        let weighted: Vec<Vec<f64>> = (0..field.num_regions())
            .map(|i| {
                field
                    .masks
                    .plane(i)
                    .iter()
                    .zip(yc)
                    .map(|(m, v)| m * v)
                    .collect()
            })
            .collect();
        let mut padded = vec![0.0; ph * pw];
        padded.par_chunks_mut(pw).enumerate().for_each(|(u, row)| {
            for i in 0..field.num_regions() {
                accumulate_adjoint_row(u, row, &weighted[i], Some(&spans[i]), h, w, rad, &taps[i]);
            }
        });
        fold_back(&padded, h, w, rad, out.channel_mut(c));
    }
    Ok(out)
}

/// Linear blur plus i.i.d. Gaussian noise of `field.noise_sigma`. Not
/// clipped. Noise is drawn channel by channel in row-major order.
pub fn apply_forward<R: Rng + ?Sized>(
    x: &ImageTensor,
    field: &DegradationField,
    rng: &mut R,
) -> Result<ImageTensor> {
    let mut y = apply_forward_linear(x, field)?;
    let sigma = field.noise_sigma;
    if sigma > 0.0 {
        for v in y.data_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v += sigma * n;
        }
    }
    Ok(y)
}

/// Where the region masks of a sampled field come from.
#[derive(Debug, Clone)]
pub enum MaskSource<'a> {
    /// Voronoi partition with a region count drawn uniformly from
    /// `[min_regions, max_regions]`.
    Synthetic {
        height: usize,
        width: usize,
        min_regions: usize,
        max_regions: usize,
    },
    Segmentation(&'a SegmentationMap),
}

/// Samples masks, one kernel per region and a noise level, in that order.
pub fn sample_degradation_field<R: Rng + ?Sized>(
    rng: &mut R,
    source: &MaskSource<'_>,
    smooth_sigma: f64,
    kernel_size: usize,
    kernel_config: &KernelSamplingConfig,
    noise: &UniformRange,
) -> Result<DegradationField> {
    kernel_config.validate()?;
    noise.validate("noise")?;
    if noise.min < 0.0 {
        return Err(Error::Config("noise range must be nonnegative".into()));
    }
    let synthetic;
    let seg = match source {
        MaskSource::Synthetic {
            height,
            width,
            min_regions,
            max_regions,
        } => {
            if min_regions > max_regions || *min_regions == 0 {
                return Err(Error::Config(format!(
                    "region range [{min_regions}, {max_regions}] is empty"
                )));
            }
            let n = rng.random_range(*min_regions..=*max_regions);
            synthetic = masks::synth_segmentation(rng, *height, *width, n)?;
            &synthetic
        }
        MaskSource::Segmentation(seg) => *seg,
    };
    let soft = masks::soften(seg, smooth_sigma)?;
    let kernels = (0..soft.num_regions())
        .map(|_| crate::kernels::sample_kernel(rng, kernel_size, kernel_config))
        .collect::<Result<Vec<_>>>()?;
    let sigma = noise.sample(rng);
    DegradationField::new(soft, kernels, sigma)
}
