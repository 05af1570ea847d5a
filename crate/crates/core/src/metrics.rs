//! Full-reference fidelity metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4; // (0.01 * 1.0)^2
pub const SSIM_C2: f64 = 9e-4; // (0.03 * 1.0)^2

/// Peak signal-to-noise ratio in dB. Identical images give `+inf`.
pub fn psnr(a: &ImageTensor, b: &ImageTensor, peak: f64) -> Result<f64> {
    a.check_same_shape(b)?;
    if !(peak > 0.0) {
        return Err(Error::Param(format!("peak must be > 0, got {peak}")));
    }
    let n = a.data().len();
    if n == 0 {
        return Err(Error::Shape("empty image".into()));
    }
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum();
    let mse = sse / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Normalized 11-tap Gaussian, sigma 1.5.
pub fn ssim_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Valid-region separable filter: `(h - 10) x (w - 10)` output.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut horiz = vec![0.0; h * ow];
    horiz.par_chunks_mut(ow).enumerate().for_each(|(r, row)| {
        let src = &plane[r * w..(r + 1) * w];
        for (c, o) in row.iter_mut().enumerate() {
            *o = g.iter().zip(&src[c..c + SSIM_WINDOW]).map(|(k, v)| k * v).sum();
        }
    });
    let mut out = vec![0.0; oh * ow];
    out.par_chunks_mut(ow).enumerate().for_each(|(r, row)| {
        for (c, o) in row.iter_mut().enumerate() {
            *o = (0..SSIM_WINDOW).map(|i| g[i] * horiz[(r + i) * ow + c]).sum();
        }
    });
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> f64 {
    let sq = |p: &[f64]| p.iter().map(|v| v * v).collect::<Vec<_>>();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, h, w, g);
    let mu_b = filter_valid(b, h, w, g);
    let ea2 = filter_valid(&sq(a), h, w, g);
    let eb2 = filter_valid(&sq(b), h, w, g);
    let eab = filter_valid(&ab, h, w, g);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = ea2[i] - ma * ma;
            let vb = eb2[i] - mb * mb;
            let cov = eab[i] - ma * mb;
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
        })
        .sum();
    total / mu_a.len() as f64
}

/// Mean structural similarity, averaged over channels.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.check_same_shape(b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let g = ssim_window();
    let sum: f64 = (0..a.channels())
        .map(|c| ssim_plane(a.channel(c), b.channel(c), h, w, &g))
        .sum();
    Ok(sum / a.channels() as f64)
}

fn serialize_psnr<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn deserialize_psnr<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// JSON writes an infinite PSNR as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(serialize_with = "serialize_psnr", deserialize_with = "deserialize_psnr")]
    pub psnr_db: f64,
    pub ssim: f64,
}

impl MetricReport {
    pub fn compute(reference: &ImageTensor, test: &ImageTensor) -> Result<Self> {
        Ok(Self {
            psnr_db: psnr(reference, test, 1.0)?,
            ssim: ssim(reference, test)?,
        })
    }
}
