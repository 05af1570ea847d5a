//! Region label maps and their soft partition-of-unity weight planes.

use std::collections::HashMap;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};
use rand::Rng;
use rayon::prelude::*;

use crate::binio::{self, ByteReader, ByteWriter, FORMAT_VERSION};
use crate::boundary::reflect_index;
use crate::error::{Error, Result};

/// Partition-of-unity tolerance per pixel.
pub const PARTITION_TOL: f64 = 1e-6;

/// Default Gaussian width of the soft transitions (pixels).
pub const DEFAULT_SMOOTH_SIGMA: f64 = 5.0;

const MAX_VORONOI_ATTEMPTS: usize = 100;
const MAX_LABELS: usize = 65_535;
const SVBM_MAGIC: &[u8; 4] = b"SVBM";

/// Dense label map with every region in `[0, num_regions)` present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    height: usize,
    width: usize,
    num_regions: usize,
    labels: Vec<u32>,
}

impl SegmentationMap {
    /// Wraps dense labels; `num_regions` is `max + 1` and every index below
    /// it must occur.
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape("segmentation must be non-empty".into()));
        }
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} segmentation needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        let num_regions = *labels.iter().max().unwrap() as usize + 1;
        let mut seen = vec![false; num_regions];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Invariant(format!(
                "region {missing} of {num_regions} has no pixels"
            )));
        }
        Ok(Self {
            height,
            width,
            num_regions,
            labels,
        })
    }

    /// Remaps arbitrary label values to `[0, N)` in scanline order of first
    /// appearance.
    pub fn from_raw_labels(height: usize, width: usize, raw: &[u32]) -> Result<Self> {
        let mut map: HashMap<u32, u32> = HashMap::new();
        let mut labels = Vec::with_capacity(raw.len());
        for &v in raw {
            let next = map.len() as u32;
            let l = *map.entry(v).or_insert(next);
            labels.push(l);
        }
        if map.len() > MAX_LABELS {
            return Err(Error::Param(format!(
                "{} distinct labels exceeds the limit of {MAX_LABELS}",
                map.len()
            )));
        }
        Self::new(height, width, labels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_regions(&self) -> usize {
        self.num_regions
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Pixel count per region.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_regions];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Relabels region `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.num_regions {
            return Err(Error::Shape("permutation length != num_regions".into()));
        }
        let labels = self.labels.iter().map(|&l| perm[l as usize] as u32).collect();
        Self::new(self.height, self.width, labels)
    }

    /// Writes an 8-bit grayscale PNG (16-bit when labels exceed 255).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (w, h) = (self.width as u32, self.height as u32);
        let result = if self.num_regions <= 256 {
            let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
                ImageBuffer::from_raw(w, h, self.labels.iter().map(|&l| l as u8).collect())
                    .expect("buffer size matches");
            buf.save(path)
        } else {
            let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::from_raw(w, h, self.labels.iter().map(|&l| l as u16).collect())
                    .expect("buffer size matches");
            buf.save(path)
        };
        result.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Nearest-seed labels under Euclidean distance; ties go to the lower index.
/// Seeds are `(row, col)`.
pub fn voronoi_labels(height: usize, width: usize, seeds: &[(usize, usize)]) -> Vec<u32> {
    let mut labels = vec![0u32; height * width];
    labels
        .par_chunks_mut(width.max(1))
        .enumerate()
        .for_each(|(r, row)| {
            for (c, out) in row.iter_mut().enumerate() {
                let mut best = u64::MAX;
                for (i, &(sr, sc)) in seeds.iter().enumerate() {
                    let dr = r.abs_diff(sr) as u64;
                    let dc = c.abs_diff(sc) as u64;
                    let d = dr * dr + dc * dc;
                    if d < best {
                        best = d;
                        *out = i as u32;
                    }
                }
            }
        });
    labels
}

/// Voronoi partition of `num_regions` distinct, uniformly drawn seed pixels.
pub fn synth_segmentation<R: Rng + ?Sized>(
    rng: &mut R,
    height: usize,
    width: usize,
    num_regions: usize,
) -> Result<SegmentationMap> {
    if height == 0 || width == 0 {
        return Err(Error::Param("segmentation must be non-empty".into()));
    }
    if num_regions == 0 || num_regions > height * width {
        return Err(Error::Param(format!(
            "num_regions {num_regions} must lie in [1, {}]",
            height * width
        )));
    }
    for _ in 0..MAX_VORONOI_ATTEMPTS {
        let seeds: Vec<(usize, usize)> = rand::seq::index::sample(rng, height * width, num_regions)
            .into_iter()
            .map(|i| (i / width, i % width))
            .collect();
        let labels = voronoi_labels(height, width, &seeds);
        if let Ok(seg) = SegmentationMap::new(height, width, labels) {
            if seg.num_regions == num_regions {
                return Ok(seg);
            }
        }
    }
    Err(Error::Generation(format!(
        "no Voronoi partition with {num_regions} nonempty regions after {MAX_VORONOI_ATTEMPTS} attempts"
    )))
}

/// Loads an 8- or 16-bit single-channel label PNG, remapping values densely.
pub fn load_segmentation(path: impl AsRef<Path>) -> Result<SegmentationMap> {
    let path = path.as_ref();
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw: Vec<u32> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(u32::from).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(u32::from).collect(),
        other => {
            return Err(Error::Param(format!(
                "{}: label map must be single-channel 8/16-bit, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    SegmentationMap::from_raw_labels(h, w, &raw)
}

/// `N` nonnegative weight planes summing to one at every pixel.
/// Stored plane-major, each plane row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMaskField {
    height: usize,
    width: usize,
    num_regions: usize,
    weights: Vec<f64>,
}

impl SoftMaskField {
    pub fn new(height: usize, width: usize, num_regions: usize, weights: Vec<f64>) -> Result<Self> {
        let f = Self::new_unchecked(height, width, num_regions, weights)?;
        f.check_partition_of_unity()?;
        Ok(f)
    }

    /// Shape check only.
    pub fn new_unchecked(
        height: usize,
        width: usize,
        num_regions: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || num_regions == 0 {
            return Err(Error::Shape(format!(
                "mask field dimensions must be positive, got {height}x{width}x{num_regions}"
            )));
        }
        if weights.len() != height * width * num_regions {
            return Err(Error::Shape(format!(
                "mask field needs {} weights, got {}",
                height * width * num_regions,
                weights.len()
            )));
        }
        Ok(Self {
            height,
            width,
            num_regions,
            weights,
        })
    }

    /// Single region covering the whole image.
    pub fn uniform(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, 1, vec![1.0; height * width])
    }

    /// Binary indicators of a label map.
    pub fn hard(seg: &SegmentationMap) -> Self {
        let hw = seg.height * seg.width;
        let mut weights = vec![0.0; hw * seg.num_regions];
        for (p, &l) in seg.labels.iter().enumerate() {
            weights[l as usize * hw + p] = 1.0;
        }
        Self {
            height: seg.height,
            width: seg.width,
            num_regions: seg.num_regions,
            weights,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_regions(&self) -> usize {
        self.num_regions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn plane(&self, region: usize) -> &[f64] {
        let hw = self.height * self.width;
        &self.weights[region * hw..(region + 1) * hw]
    }

    pub fn plane_mut(&mut self, region: usize) -> &mut [f64] {
        let hw = self.height * self.width;
        &mut self.weights[region * hw..(region + 1) * hw]
    }

    pub fn weight(&self, region: usize, row: usize, col: usize) -> f64 {
        self.weights[(region * self.height + row) * self.width + col]
    }

    /// Worst deviation of the per-pixel plane sum from one.
    pub fn max_partition_error(&self) -> f64 {
        let hw = self.height * self.width;
        (0..hw)
            .map(|p| {
                let s: f64 = (0..self.num_regions).map(|i| self.weights[i * hw + p]).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn check_partition_of_unity(&self) -> Result<()> {
        if let Some(i) = self
            .weights
            .iter()
            .position(|w| !w.is_finite() || *w < 0.0)
        {
            return Err(Error::Invariant(format!(
                "mask weight {i} is {}, must be finite and nonnegative",
                self.weights[i]
            )));
        }
        let err = self.max_partition_error();
        if err > PARTITION_TOL {
            return Err(Error::Invariant(format!(
                "mask planes deviate from a partition of unity by {err}"
            )));
        }
        Ok(())
    }

    pub fn to_svbm_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        self.write_svbm_block(&mut w)?;
        Ok(w.into_inner())
    }

    pub(crate) fn write_svbm_block(&self, w: &mut ByteWriter) -> Result<()> {
        w.bytes(SVBM_MAGIC);
        w.u16(FORMAT_VERSION);
        w.u32(binio::dim_u32("SVBM", "H", self.height)?);
        w.u32(binio::dim_u32("SVBM", "W", self.width)?);
        w.u16(binio::dim_u16("SVBM", "N", self.num_regions)?);
        for &v in &self.weights {
            w.f32(v as f32);
        }
        Ok(())
    }

    /// Parses SVBM; the partition-of-unity property is not checked here.
    pub fn from_svbm_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new("SVBM", bytes);
        let f = Self::read_svbm_block(&mut r)?;
        r.finish()?;
        Ok(f)
    }

    pub(crate) fn read_svbm_block(r: &mut ByteReader<'_>) -> Result<Self> {
        r.header(SVBM_MAGIC)?;
        let h = r.u32()? as usize;
        let w = r.u32()? as usize;
        let n = r.u16()? as usize;
        let count = h
            .checked_mul(w)
            .and_then(|hw| hw.checked_mul(n))
            .ok_or_else(|| Error::format("SVBM", "dimension overflow"))?;
        let weights = r.f32_vec(count)?;
        Self::new_unchecked(h, w, n, weights).map_err(|e| Error::format("SVBM", e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        binio::write_file(path.as_ref(), &self.to_svbm_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_svbm_bytes(&binio::read_file(path.as_ref())?)
    }
}

/// Normalized taps of a Gaussian truncated at radius `ceil(3 sigma)`.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i * i) as f64 / (sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable blur of one plane with reflect padding.
pub(crate) fn blur_separable(plane: &[f64], height: usize, width: usize, taps: &[f64]) -> Vec<f64> {
    let radius = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; plane.len()];
    for r in 0..height {
        let row = &plane[r * width..(r + 1) * width];
        for c in 0..width {
            let mut acc = 0.0;
            for (t, &w) in taps.iter().enumerate() {
                let cc = reflect_index(c as isize + t as isize - radius, width);
                acc += w * row[cc];
            }
            tmp[r * width + c] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for r in 0..height {
        for (t, &w) in taps.iter().enumerate() {
            let rr = reflect_index(r as isize + t as isize - radius, height);
            let src = &tmp[rr * width..(rr + 1) * width];
            let dst = &mut out[r * width..(r + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    out
}

/// Gaussian-smoothed region indicators, renormalized pointwise to sum to one.
/// `smooth_sigma = 0` yields the hard indicators.
pub fn soften(seg: &SegmentationMap, smooth_sigma: f64) -> Result<SoftMaskField> {
    if !(smooth_sigma >= 0.0) || !smooth_sigma.is_finite() {
        return Err(Error::Param(format!(
            "smooth_sigma must be finite and >= 0, got {smooth_sigma}"
        )));
    }
    let hard = SoftMaskField::hard(seg);
    if smooth_sigma == 0.0 || seg.num_regions == 1 {
        return Ok(hard);
    }
    let (h, w, n) = (seg.height, seg.width, seg.num_regions);
    let hw = h * w;
    let taps = gaussian_taps(smooth_sigma);
    let planes: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| blur_separable(hard.plane(i), h, w, &taps))
        .collect();
    let mut weights = planes.concat();
    for p in 0..hw {
        let s: f64 = (0..n).map(|i| weights[i * hw + p]).sum();
        for i in 0..n {
            weights[i * hw + p] /= s;
        }
    }
    SoftMaskField::new(h, w, n, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    #[test]
    fn single_region_synth() {
        let seg = synth_segmentation(&mut rng_from_seed(1), 7, 5, 1).unwrap();
        assert!(seg.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn voronoi_matches_brute_force_on_2x2() {
        // seeds at the two left pixels
        let seeds = [(0usize, 0usize), (1, 0)];
        let labels = voronoi_labels(2, 2, &seeds);
        for r in 0..2 {
            for c in 0..2 {
                let d: Vec<f64> = seeds
                    .iter()
                    .map(|&(sr, sc)| ((r as f64 - sr as f64).powi(2) + (c as f64 - sc as f64).powi(2)).sqrt())
                    .collect();
                let nearest = if d[1] < d[0] { 1 } else { 0 };
                assert_eq!(labels[r * 2 + c], nearest);
            }
        }
        assert_eq!(labels, vec![0, 0, 1, 1]);
    }

    #[test]
    fn voronoi_ties_go_to_lower_index() {
        // pixel (0,1) is equidistant from both seeds
        let labels = voronoi_labels(1, 3, &[(0, 2), (0, 0)]);
        assert_eq!(labels, vec![1, 0, 0]);
    }

    #[test]
    fn synth_histograms_have_no_empty_bins() {
        let mut rng = rng_from_seed(77);
        for n in 1..=12 {
            let seg = synth_segmentation(&mut rng, 16, 24, n).unwrap();
            assert_eq!(seg.num_regions(), n);
            assert!(seg.histogram().iter().all(|&c| c > 0));
        }
        let seg = synth_segmentation(&mut rng, 2, 2, 4).unwrap();
        assert_eq!(seg.histogram(), vec![1, 1, 1, 1]);
    }

    #[test]
    fn synth_rejects_bad_region_counts() {
        let mut rng = rng_from_seed(0);
        assert!(synth_segmentation(&mut rng, 2, 2, 0).is_err());
        assert!(synth_segmentation(&mut rng, 2, 2, 5).is_err());
    }

    #[test]
    fn dense_remap_by_first_appearance() {
        let seg = SegmentationMap::from_raw_labels(1, 4, &[9, 3, 9, 3]).unwrap();
        assert_eq!(seg.labels(), &[0, 1, 0, 1]);
        let seg = SegmentationMap::from_raw_labels(2, 2, &[7, 7, 7, 7]).unwrap();
        assert_eq!(seg.num_regions(), 1);
        assert!(seg.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn missing_region_rejected() {
        assert!(matches!(
            SegmentationMap::new(1, 3, vec![0, 2, 2]),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn single_plane_is_one() {
        let seg = SegmentationMap::new(4, 4, vec![0; 16]).unwrap();
        for sigma in [0.0, 1.0, 5.0] {
            let m = soften(&seg, sigma).unwrap();
            assert!(m.plane(0).iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn zero_sigma_is_hard_indicator() {
        let seg = synth_segmentation(&mut rng_from_seed(4), 12, 9, 4).unwrap();
        let m = soften(&seg, 0.0).unwrap();
        for i in 0..4 {
            for r in 0..12 {
                for c in 0..9 {
                    let want = (seg.label(r, c) as usize == i) as u8 as f64;
                    assert_eq!(m.weight(i, r, c), want);
                }
            }
        }
    }

    #[test]
    fn gaussian_taps_are_normalized() {
        let t = gaussian_taps(1.3);
        assert_eq!(t.len(), 2 * 4 + 1);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(gaussian_taps(0.0), vec![1.0]);
    }

    #[test]
    fn soften_rejects_negative_sigma() {
        let seg = SegmentationMap::new(2, 2, vec![0, 1, 0, 1]).unwrap();
        assert!(matches!(soften(&seg, -1.0), Err(Error::Param(_))));
    }

    #[test]
    fn svbm_layout_and_zeroed_plane_detection() {
        let seg = SegmentationMap::new(2, 3, vec![0, 0, 1, 0, 1, 1]).unwrap();
        let m = soften(&seg, 0.8).unwrap();
        let bytes = m.to_svbm_bytes().unwrap();
        assert_eq!(&bytes[..4], b"SVBM");
        assert_eq!(bytes.len(), 4 + 2 + 4 + 4 + 2 + 2 * 6 * 4);
        let back = SoftMaskField::from_svbm_bytes(&bytes).unwrap();
        back.check_partition_of_unity().unwrap();
        let mut broken = back.clone();
        broken.plane_mut(1).fill(0.0);
        assert!(broken.check_partition_of_unity().is_err());
        assert!(SoftMaskField::from_svbm_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
