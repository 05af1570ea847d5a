//! Planar float images plus PFM/PNG I/O and the resize policy used by the
//! dataset pipeline.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// `H x W x C` real image stored channel-planar: `data[(c * H + r) * W + col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// `f(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for r in 0..height {
                for col in 0..width {
                    data.push(f(r, col, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
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

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, channel: usize, v: f64) {
        self.data[(channel * self.height + row) * self.width + col] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let hw = self.pixels();
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let hw = self.pixels();
        &mut self.data[c * hw..(c + 1) * hw]
    }

    /// Single-channel copy of channel `c`.
    pub fn channel_image(&self, c: usize) -> ImageTensor {
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.channel(c).to_vec(),
        }
    }

    /// Stacks same-sized single- or multi-channel images along channels.
    pub fn stack(parts: &[ImageTensor]) -> Result<ImageTensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero images".into()))?;
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if !p.same_grid(first) {
                return Err(Error::Shape("stacked images differ in size".into()));
            }
            data.extend_from_slice(&p.data);
            channels += p.channels;
        }
        ImageTensor::new(first.height, first.width, channels, data)
    }

    pub fn same_grid(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.same_grid(other) && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &ImageTensor) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )));
        }
        Ok(())
    }

    pub fn dot(&self, other: &ImageTensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &ImageTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamped(&self, lo: f64, hi: f64) -> ImageTensor {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
        out
    }

    /// Loads `.pfm` as floats; anything else through the image codecs as RGB
    /// in `[0, 1]`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if has_extension(path, "pfm") {
            read_pfm(path)
        } else {
            load_rgb(path)
        }
    }

    /// Writes `.png` as clipped 8-bit; anything else as PFM.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if has_extension(path, "png") {
            save_png(self, path)
        } else {
            write_pfm(self, path)
        }
    }
}

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// Decodes any supported raster format to 3-channel floats in `[0, 1]`.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<ImageTensor> {
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
    let rgb = img.into_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.into_raw();
    Ok(ImageTensor::from_fn(h, w, 3, |r, c, ch| {
        f64::from(raw[(r * w + c) * 3 + ch])
    }))
}

/// 8-bit PNG export, clipping to `[0, 1]`. One or three channels.
pub fn save_png(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = (img.height, img.width);
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let mut bytes = Vec::with_capacity(h * w * img.channels);
    for r in 0..h {
        for c in 0..w {
            for ch in 0..img.channels {
                bytes.push(q(img.get(r, c, ch)));
            }
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let res = match img.channels {
        1 => ImageBuffer::<Luma<u8>, _>::from_raw(w as u32, h as u32, bytes)
            .expect("sized")
            .save(path),
        3 => ImageBuffer::<Rgb<u8>, _>::from_raw(w as u32, h as u32, bytes)
            .expect("sized")
            .save(path),
        n => {
            return Err(Error::Shape(format!(
                "PNG export needs 1 or 3 channels, got {n}"
            )))
        }
    };
    res.map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Portable float map bytes: little-endian, rows stored bottom-to-top.
pub fn pfm_bytes(img: &ImageTensor) -> Result<Vec<u8>> {
    let tag = match img.channels {
        1 => "Pf",
        3 => "PF",
        n => return Err(Error::Shape(format!("PFM needs 1 or 3 channels, got {n}"))),
    };
    let mut out = Vec::with_capacity(32 + img.data.len() * 4);
    write!(out, "{tag}\n{} {}\n-1.0\n", img.width, img.height).expect("vec write");
    for r in (0..img.height).rev() {
        for c in 0..img.width {
            for ch in 0..img.channels {
                out.extend_from_slice(&(img.get(r, c, ch) as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn write_pfm(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    crate::binio::write_file(path.as_ref(), &pfm_bytes(img)?)
}

pub fn parse_pfm(bytes: &[u8]) -> Result<ImageTensor> {
    let bad = |m: &str| Error::format("PFM", m.to_string());
    // header: three whitespace-separated tokens after the tag, ending in a
    // single whitespace byte
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    pos += 1;
    let channels = match tokens[0] {
        "PF" => 3,
        "Pf" => 1,
        t => return Err(bad(&format!("unknown tag {t}"))),
    };
    let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
    if width == 0 || height == 0 {
        return Err(bad("zero dimension"));
    }
    let little = scale < 0.0;
    let n = width * height * channels;
    let body = bytes.get(pos..).ok_or_else(|| bad("missing body"))?;
    if body.len() != n * 4 {
        return Err(bad(&format!("expected {} data bytes, got {}", n * 4, body.len())));
    }
    let mut img = ImageTensor::zeros(height, width, channels);
    let mut vals = body.chunks_exact(4).map(|b| {
        let b: [u8; 4] = b.try_into().unwrap();
        f64::from(if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        })
    });
    for r in (0..height).rev() {
        for c in 0..width {
            for ch in 0..channels {
                img.set(r, c, ch, vals.next().unwrap());
            }
        }
    }
    Ok(img)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<ImageTensor> {
    parse_pfm(&crate::binio::read_file(path.as_ref())?)
}

/// Center of resized-grid sample `dst + offset` (half-pixel convention).
fn sample_center(dst: usize, offset: usize) -> f64 {
    (dst + offset) as f64 + 0.5
}

/// Output grid of the shorter-side resize followed by a centered square crop:
/// `(scale, row_offset, col_offset)` in resized coordinates.
pub fn resize_crop_geometry(height: usize, width: usize, target: usize) -> (f64, usize, usize) {
    let scale = target as f64 / height.min(width) as f64;
    let rh = ((height as f64 * scale).round() as usize).max(target);
    let rw = ((width as f64 * scale).round() as usize).max(target);
    (scale, (rh - target) / 2, (rw - target) / 2)
}

/// Bilinear resize of the shorter side to `target`, then center crop to
/// `target x target`.
pub fn resize_and_center_crop(img: &ImageTensor, target: usize) -> ImageTensor {
    let (h, w) = (img.height, img.width);
    let (scale, r0, c0) = resize_crop_geometry(h, w, target);
    let map = |dst: usize, off: usize, n: usize| -> (usize, usize, f64) {
        let s = (sample_center(dst, off) / scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let rows: Vec<_> = (0..target).map(|r| map(r, r0, h)).collect();
    let cols: Vec<_> = (0..target).map(|c| map(c, c0, w)).collect();
    ImageTensor::from_fn(target, target, img.channels, |r, c, ch| {
        let (y0, y1, fy) = rows[r];
        let (x0, x1, fx) = cols[c];
        let top = img.get(y0, x0, ch) * (1.0 - fx) + img.get(y0, x1, ch) * fx;
        let bot = img.get(y1, x0, ch) * (1.0 - fx) + img.get(y1, x1, ch) * fx;
        top * (1.0 - fy) + bot * fy
    })
}

/// Nearest-neighbour counterpart of [`resize_and_center_crop`] for label maps.
pub fn resize_labels_and_center_crop(
    labels: &[u32],
    height: usize,
    width: usize,
    target: usize,
) -> Vec<u32> {
    let (scale, r0, c0) = resize_crop_geometry(height, width, target);
    let map = |dst: usize, off: usize, n: usize| -> usize {
        ((sample_center(dst, off) / scale).floor() as usize).min(n - 1)
    };
    let mut out = Vec::with_capacity(target * target);
    for r in 0..target {
        let sr = map(r, r0, height);
        for c in 0..target {
            out.push(labels[sr * width + map(c, c0, width)]);
        }
    }
    out
}

/// Deterministic procedural RGB scene in `[0, 1]`: a shaded background with
/// overlapping ellipses, bars and fine texture. Stands in for natural crops
/// in benchmarks and examples.
pub fn synthetic_scene(seed: u64, height: usize, width: usize) -> ImageTensor {
    let mut rng = rng_from_seed(seed);
    let (hf, wf) = (height as f64, width as f64);
    let base: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let grad: [f64; 3] = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
    let mut img = ImageTensor::from_fn(height, width, 3, |r, c, ch| {
        0.25 + 0.5 * base[ch] + grad[ch] * (r as f64 / hf - 0.5 + 0.5 * (c as f64 / wf - 0.5))
    });
    let n_shapes = 12 + (height * width / 4096).min(24);
    for _ in 0..n_shapes {
        let cy = rng.random::<f64>() * hf;
        let cx = rng.random::<f64>() * wf;
        let ry = (0.04 + 0.2 * rng.random::<f64>()) * hf;
        let rx = (0.04 + 0.2 * rng.random::<f64>()) * wf;
        let ang = rng.random::<f64>() * std::f64::consts::PI;
        let color: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let bar = rng.random::<f64>() < 0.3;
        let (s, co) = ang.sin_cos();
        for r in 0..height {
            for c in 0..width {
                let dy = r as f64 - cy;
                let dx = c as f64 - cx;
                let u = (dx * co + dy * s) / rx;
                let v = (-dx * s + dy * co) / ry;
                let inside = if bar {
                    u.abs() <= 1.0 && v.abs() <= 0.25
                } else {
                    u * u + v * v <= 1.0
                };
                if inside {
                    for (ch, col) in color.iter().enumerate() {
                        let shade = 0.85 + 0.15 * (1.0 - v.abs().min(1.0));
                        img.set(r, c, ch, col * shade);
                    }
                }
            }
        }
    }
    let fy = 0.35 + 0.5 * rng.random::<f64>();
    let fx = 0.35 + 0.5 * rng.random::<f64>();
    for ch in 0..3 {
        for r in 0..height {
            for c in 0..width {
                let t = 0.04 * (fy * r as f64).sin() * (fx * c as f64).cos();
                let v = img.get(r, c, ch) + t;
                img.set(r, c, ch, v.clamp(0.0, 1.0));
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_and_orientation() {
        let img = ImageTensor::from_fn(2, 3, 3, |r, c, ch| (r * 10 + c) as f64 + ch as f64 * 0.25);
        let bytes = pfm_bytes(&img).unwrap();
        assert!(bytes.starts_with(b"PF\n3 2\n-1.0\n"));
        // first stored row is the bottom row
        let first = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
        assert_eq!(first, 10.0);
        assert_eq!(parse_pfm(&bytes).unwrap(), img);
        let gray = img.channel_image(1);
        assert_eq!(parse_pfm(&pfm_bytes(&gray).unwrap()).unwrap(), gray);
    }

    #[test]
    fn pfm_rejects_bad_input() {
        assert!(parse_pfm(b"P6\n1 1\n255\n").is_err());
        let img = ImageTensor::zeros(2, 2, 1);
        let bytes = pfm_bytes(&img).unwrap();
        assert!(parse_pfm(&bytes[..bytes.len() - 1]).is_err());
        assert!(pfm_bytes(&ImageTensor::zeros(2, 2, 4)).is_err());
    }

    #[test]
    fn resize_is_identity_at_target_size() {
        let img = synthetic_scene(1, 16, 16);
        assert_eq!(resize_and_center_crop(&img, 16), img);
    }

    #[test]
    fn resize_upsamples_and_crops() {
        let img = ImageTensor::from_fn(4, 8, 1, |_, c, _| c as f64);
        let out = resize_and_center_crop(&img, 8);
        assert_eq!((out.height(), out.width()), (8, 8));
        // crop is centered: columns symmetric around the source midpoint
        let mid = 3.5;
        for c in 0..8 {
            let mirrored = out.get(0, 7 - c, 0);
            assert!(((out.get(0, c, 0) - mid) + (mirrored - mid)).abs() < 1e-12);
        }
        let constant = ImageTensor::filled(5, 7, 3, 0.3);
        let up = resize_and_center_crop(&constant, 11);
        assert!(up.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn label_resize_keeps_values() {
        let labels = vec![0, 1, 2, 3];
        let out = resize_labels_and_center_crop(&labels, 2, 2, 4);
        assert_eq!(out, vec![0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3]);
    }

    #[test]
    fn scene_is_deterministic_and_bounded() {
        let a = synthetic_scene(3, 40, 30);
        assert_eq!(a, synthetic_scene(3, 40, 30));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(a, synthetic_scene(4, 40, 30));
    }
}
