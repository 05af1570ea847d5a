//! Point spread functions: motion trajectories, Gaussian defocus and the
//! identity tap, plus the SVBK on-disk format.
//!
//! A [`Kernel`] is an odd-sized square of nonnegative taps summing to one.
//! Taps are stored row-major; `taps[r * k + c]` is the weight at row `r`,
//! column `c`, with the center at `((k - 1) / 2, (k - 1) / 2)`.

use std::f64::consts::{PI, SQRT_2};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{self, ByteReader, ByteWriter, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed};

/// Unit-sum tolerance for a valid kernel.
pub const UNIT_SUM_TOL: f64 = 1e-6;

/// Default kernel support (pixels).
pub const DEFAULT_KERNEL_SIZE: usize = 33;

/// Per-step velocity damping of the motion trajectory simulator.
pub const VELOCITY_DAMPING: f64 = 0.99;

const MAX_FIT_RETRIES: usize = 10;
const FIT_SHRINK: f64 = 0.9;

const SVBK_MAGIC: &[u8; 4] = b"SVBK";

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    taps: Vec<f64>,
}

impl Kernel {
    /// Builds a kernel, checking oddness, nonnegativity and unit sum.
    pub fn from_taps(size: usize, taps: Vec<f64>) -> Result<Self> {
        let k = Self::from_taps_unchecked(size, taps)?;
        k.check()?;
        Ok(k)
    }

    /// Only checks the shape. Used by readers that want to report invariant
    /// violations separately from parse failures.
    pub fn from_taps_unchecked(size: usize, taps: Vec<f64>) -> Result<Self> {
        check_odd(size)?;
        if taps.len() != size * size {
            return Err(Error::Shape(format!(
                "kernel of size {size} needs {} taps, got {}",
                size * size,
                taps.len()
            )));
        }
        Ok(Self { size, taps })
    }

    pub fn delta(size: usize) -> Result<Self> {
        check_odd(size)?;
        let mut taps = vec![0.0; size * size];
        let c = size / 2;
        taps[c * size + c] = 1.0;
        Ok(Self { size, taps })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Half-width `(k - 1) / 2`.
    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn tap(&self, row: usize, col: usize) -> f64 {
        self.taps[row * self.size + col]
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    pub fn is_delta(&self) -> bool {
        let c = self.radius();
        self.taps.iter().enumerate().all(|(i, &t)| {
            if i == c * self.size + c {
                t == 1.0
            } else {
                t == 0.0
            }
        })
    }

    /// Checks the kernel invariants: finite, nonnegative taps with unit sum.
    pub fn check(&self) -> Result<()> {
        if let Some((i, t)) = self
            .taps
            .iter()
            .enumerate()
            .find(|(_, t)| !t.is_finite() || **t < 0.0)
        {
            return Err(Error::Invariant(format!(
                "kernel tap {i} is {t}, must be finite and nonnegative"
            )));
        }
        let s = self.sum();
        if (s - 1.0).abs() > UNIT_SUM_TOL {
            return Err(Error::Invariant(format!("kernel taps sum to {s}, not 1")));
        }
        Ok(())
    }

    /// Point reflection through the center tap.
    pub fn rotated_180(&self) -> Kernel {
        let mut taps = self.taps.clone();
        taps.reverse();
        Kernel {
            size: self.size,
            taps,
        }
    }

    pub fn to_svbk_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        self.write_svbk_block(&mut w)?;
        Ok(w.into_inner())
    }

    pub(crate) fn write_svbk_block(&self, w: &mut ByteWriter) -> Result<()> {
        w.bytes(SVBK_MAGIC);
        w.u16(FORMAT_VERSION);
        w.u16(binio::dim_u16("SVBK", "k", self.size)?);
        for &t in &self.taps {
            w.f32(t as f32);
        }
        Ok(())
    }

    /// Parses an SVBK stream. Taps are widened from float32; kernel
    /// invariants are not checked here (see [`Kernel::check`]).
    pub fn from_svbk_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new("SVBK", bytes);
        let k = Self::read_svbk_block(&mut r)?;
        r.finish()?;
        Ok(k)
    }

    pub(crate) fn read_svbk_block(r: &mut ByteReader<'_>) -> Result<Self> {
        r.header(SVBK_MAGIC)?;
        let size = r.u16()? as usize;
        if size % 2 == 0 {
            return Err(Error::format("SVBK", format!("even kernel size {size}")));
        }
        let taps = r.f32_vec(size * size)?;
        Self::from_taps_unchecked(size, taps)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        binio::write_file(path.as_ref(), &self.to_svbk_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = binio::read_file(path.as_ref())?;
        Self::from_svbk_bytes(&bytes)
    }
}

fn check_odd(size: usize) -> Result<()> {
    if size == 0 || size % 2 == 0 {
        return Err(Error::Param(format!(
            "kernel size must be odd and positive, got {size}"
        )));
    }
    Ok(())
}

fn normalized(size: usize, mut taps: Vec<f64>) -> Result<Kernel> {
    let s: f64 = taps.iter().sum();
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Degenerate(format!("kernel mass {s} cannot be normalized")));
    }
    for t in &mut taps {
        *t /= s;
    }
    Ok(Kernel { size, taps })
}

/// Identity blur: center tap one, everything else zero.
pub fn delta_kernel(k: usize) -> Result<Kernel> {
    Kernel::delta(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    /// Total path length of the trajectory in pixels.
    pub trajectory_length: f64,
    /// Direction jitter in `[0, 1]`; scales the Gaussian acceleration draws.
    pub anxiety: f64,
    pub num_samples: usize,
    /// Leading fraction of trajectory points that are rasterized, in `(0, 1]`.
    pub exposure_fraction: f64,
    /// Initial heading in radians (0 = +column direction). Drawn uniformly
    /// when `None`.
    #[serde(default)]
    pub initial_direction: Option<f64>,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            trajectory_length: 12.0,
            anxiety: 0.3,
            num_samples: 600,
            exposure_fraction: 1.0,
            initial_direction: None,
        }
    }
}

impl MotionParams {
    pub fn validate(&self, k: usize) -> Result<()> {
        check_odd(k)?;
        let p = self;
        if !(p.trajectory_length >= 0.0 && p.trajectory_length.is_finite()) {
            return Err(Error::Param(format!(
                "trajectory_length must be finite and >= 0, got {}",
                p.trajectory_length
            )));
        }
        if p.trajectory_length > k as f64 * SQRT_2 {
            return Err(Error::Param(format!(
                "trajectory_length {} exceeds k*sqrt(2) = {}",
                p.trajectory_length,
                k as f64 * SQRT_2
            )));
        }
        if !(0.0..=1.0).contains(&p.anxiety) {
            return Err(Error::Param(format!("anxiety {} outside [0, 1]", p.anxiety)));
        }
        if p.num_samples == 0 {
            return Err(Error::Param("num_samples must be positive".into()));
        }
        if !(p.exposure_fraction > 0.0 && p.exposure_fraction <= 1.0) {
            return Err(Error::Param(format!(
                "exposure_fraction {} outside (0, 1]",
                p.exposure_fraction
            )));
        }
        if let Some(a) = p.initial_direction {
            if !a.is_finite() {
                return Err(Error::Param("initial_direction must be finite".into()));
            }
        }
        Ok(())
    }
}

/// The random inputs consumed by the trajectory simulator.
///
/// Separating the draws from the simulation makes the generator testable
/// with injected streams (e.g. [`MotionDraws::mirrored`]).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionDraws {
    /// Unit initial velocity `(dx, dy)` in (column, row) coordinates.
    pub initial_velocity: [f64; 2],
    /// One standard-normal 2-D increment per step (`num_samples - 1`).
    pub accelerations: Vec<[f64; 2]>,
}

impl MotionDraws {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, params: &MotionParams) -> Self {
        let angle = match params.initial_direction {
            Some(a) => a,
            None => rng.random::<f64>() * 2.0 * PI,
        };
        let accelerations = (1..params.num_samples)
            .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)])
            .collect();
        Self {
            initial_velocity: [angle.cos(), angle.sin()],
            accelerations,
        }
    }

    /// Negated initial velocity and accelerations; yields the trajectory
    /// reflected through its starting point.
    pub fn mirrored(&self) -> Self {
        Self {
            initial_velocity: [-self.initial_velocity[0], -self.initial_velocity[1]],
            accelerations: self.accelerations.iter().map(|a| [-a[0], -a[1]]).collect(),
        }
    }
}

/// Random-acceleration camera-shake kernel.
pub fn gen_motion_kernel<R: Rng + ?Sized>(
    rng: &mut R,
    k: usize,
    params: &MotionParams,
) -> Result<Kernel> {
    params.validate(k)?;
    let draws = MotionDraws::sample(rng, params);
    motion_kernel_from_draws(k, params, &draws)
}

/// Deterministic half of [`gen_motion_kernel`]: simulate the trajectory from
/// `draws`, center the exposed part at its centroid and splat it bilinearly.
pub fn motion_kernel_from_draws(
    k: usize,
    params: &MotionParams,
    draws: &MotionDraws,
) -> Result<Kernel> {
    params.validate(k)?;
    if draws.accelerations.len() + 1 != params.num_samples {
        return Err(Error::Param(format!(
            "expected {} acceleration draws, got {}",
            params.num_samples - 1,
            draws.accelerations.len()
        )));
    }
    if params.trajectory_length == 0.0 || params.num_samples == 1 {
        return Kernel::delta(k);
    }

    let mut points = Vec::with_capacity(params.num_samples);
    let mut pos = [0.0f64, 0.0];
    let mut vel = draws.initial_velocity;
    points.push(pos);
    for a in &draws.accelerations {
        vel[0] = VELOCITY_DAMPING * vel[0] + params.anxiety * a[0];
        vel[1] = VELOCITY_DAMPING * vel[1] + params.anxiety * a[1];
        pos[0] += vel[0];
        pos[1] += vel[1];
        points.push(pos);
    }

    let path_len: f64 = points
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .sum();
    if !(path_len > 0.0) || !path_len.is_finite() {
        return Kernel::delta(k);
    }

    let exposed = ((params.exposure_fraction * params.num_samples as f64).ceil() as usize)
        .clamp(1, params.num_samples);
    points.truncate(exposed);
    let scale = params.trajectory_length / path_len;
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
    let centroid = [sx / n, sy / n];
    let mut points: Vec<[f64; 2]> = points
        .iter()
        .map(|p| [(p[0] - centroid[0]) * scale, (p[1] - centroid[1]) * scale])
        .collect();

    let half = (k / 2) as f64;
    let extent = |pts: &[[f64; 2]]| {
        pts.iter()
            .fold(0.0f64, |m, p| m.max(p[0].abs()).max(p[1].abs()))
    };
    let mut retries = 0;
    while extent(&points) > half && retries < MAX_FIT_RETRIES {
        for p in &mut points {
            p[0] *= FIT_SHRINK;
            p[1] *= FIT_SHRINK;
        }
        retries += 1;
    }
    if extent(&points) > half {
        for p in &mut points {
            p[0] = p[0].clamp(-half, half);
            p[1] = p[1].clamp(-half, half);
        }
    }

    let mut taps = vec![0.0; k * k];
    for p in &points {
        splat_bilinear(&mut taps, k, half + p[0], half + p[1], 1.0);
    }
    normalized(k, taps)
}

/// Distributes `weight` over the four pixels around `(x, y)` = (column, row).
fn splat_bilinear(taps: &mut [f64], k: usize, x: f64, y: f64, weight: f64) {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let corners = [
        (y0, x0, (1.0 - fy) * (1.0 - fx)),
        (y0, x0 + 1, (1.0 - fy) * fx),
        (y0 + 1, x0, fy * (1.0 - fx)),
        (y0 + 1, x0 + 1, fy * fx),
    ];
    for (r, c, w) in corners {
        if w == 0.0 {
            continue;
        }
        if r >= 0 && c >= 0 && (r as usize) < k && (c as usize) < k {
            taps[r as usize * k + c as usize] += weight * w;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefocusParams {
    pub sigma_x: f64,
    pub sigma_y: f64,
    /// Rotation of the `sigma_x` axis away from the column axis, radians.
    pub theta: f64,
}

/// Rotated anisotropic Gaussian sampled at integer offsets and normalized.
pub fn gen_defocus_kernel(k: usize, params: &DefocusParams) -> Result<Kernel> {
    check_odd(k)?;
    let DefocusParams {
        sigma_x,
        sigma_y,
        theta,
    } = *params;
    if !(sigma_x > 0.0 && sigma_y > 0.0) || !sigma_x.is_finite() || !sigma_y.is_finite() {
        return Err(Error::Param(format!(
            "defocus sigmas must be positive and finite, got ({sigma_x}, {sigma_y})"
        )));
    }
    if !theta.is_finite() {
        return Err(Error::Param("defocus theta must be finite".into()));
    }
    let (s, c) = theta.sin_cos();
    let half = (k / 2) as isize;
    let mut taps = Vec::with_capacity(k * k);
    for dy in -half..=half {
        for dx in -half..=half {
            let (dx, dy) = (dx as f64, dy as f64);
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            taps.push((-0.5 * (u * u / (sigma_x * sigma_x) + v * v / (sigma_y * sigma_y))).exp());
        }
    }
    normalized(k, taps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformRange {
    pub min: f64,
    pub max: f64,
}

impl UniformRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return Err(Error::Config(format!(
                "{what} range [{}, {}] is empty or non-finite",
                self.min, self.max
            )));
        }
        Ok(())
    }

    /// Uniform draw from `[min, max)`; always consumes exactly one `f64`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.min + (self.max - self.min) * u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Motion,
    Defocus,
    Identity,
}

/// Mixture weights and parameter ranges for [`sample_kernel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelSamplingConfig {
    pub p_motion: f64,
    pub p_defocus: f64,
    pub p_identity: f64,
    pub trajectory_length: UniformRange,
    pub anxiety: UniformRange,
    pub num_samples: usize,
    pub exposure_fraction: UniformRange,
    pub sigma: UniformRange,
    pub theta: UniformRange,
}

impl Default for KernelSamplingConfig {
    fn default() -> Self {
        Self {
            p_motion: 0.495,
            p_defocus: 0.495,
            p_identity: 0.01,
            trajectory_length: UniformRange::new(4.0, 24.0),
            anxiety: UniformRange::new(0.0, 0.7),
            num_samples: 600,
            exposure_fraction: UniformRange::new(0.6, 1.0),
            sigma: UniformRange::new(0.5, 6.0),
            theta: UniformRange::new(0.0, PI),
        }
    }
}

impl KernelSamplingConfig {
    pub fn validate(&self) -> Result<()> {
        let ps = [self.p_motion, self.p_defocus, self.p_identity];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config(format!(
                "kernel probabilities must lie in [0, 1], got {ps:?}"
            )));
        }
        let total: f64 = ps.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "kernel probabilities sum to {total}, not 1"
            )));
        }
        self.trajectory_length.validate("trajectory_length")?;
        self.anxiety.validate("anxiety")?;
        self.exposure_fraction.validate("exposure_fraction")?;
        self.sigma.validate("sigma")?;
        self.theta.validate("theta")?;
        if self.trajectory_length.min < 0.0 {
            return Err(Error::Config("trajectory_length must be >= 0".into()));
        }
        if self.anxiety.min < 0.0 || self.anxiety.max > 1.0 {
            return Err(Error::Config("anxiety range must lie in [0, 1]".into()));
        }
        if self.exposure_fraction.min <= 0.0 || self.exposure_fraction.max > 1.0 {
            return Err(Error::Config("exposure_fraction range must lie in (0, 1]".into()));
        }
        if self.sigma.min <= 0.0 {
            return Err(Error::Config("defocus sigma range must be positive".into()));
        }
        if self.num_samples == 0 {
            return Err(Error::Config("num_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn pick_kind<R: Rng + ?Sized>(&self, rng: &mut R) -> KernelKind {
        let u: f64 = rng.random();
        if u < self.p_identity {
            KernelKind::Identity
        } else if u < self.p_identity + self.p_motion {
            KernelKind::Motion
        } else {
            KernelKind::Defocus
        }
    }

    pub fn sample_motion_params<R: Rng + ?Sized>(&self, rng: &mut R, k: usize) -> MotionParams {
        let length = self.trajectory_length.sample(rng).min(k as f64 * SQRT_2);
        MotionParams {
            trajectory_length: length,
            anxiety: self.anxiety.sample(rng),
            num_samples: self.num_samples,
            exposure_fraction: self.exposure_fraction.sample(rng).max(f64::MIN_POSITIVE),
            initial_direction: None,
        }
    }

    pub fn sample_defocus_params<R: Rng + ?Sized>(&self, rng: &mut R) -> DefocusParams {
        DefocusParams {
            sigma_x: self.sigma.sample(rng),
            sigma_y: self.sigma.sample(rng),
            theta: self.theta.sample(rng),
        }
    }

    pub fn sample_of_kind<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        k: usize,
        kind: KernelKind,
    ) -> Result<Kernel> {
        match kind {
            KernelKind::Identity => Kernel::delta(k),
            KernelKind::Motion => {
                let params = self.sample_motion_params(rng, k);
                gen_motion_kernel(rng, k, &params)
            }
            KernelKind::Defocus => {
                let params = self.sample_defocus_params(rng);
                gen_defocus_kernel(k, &params)
            }
        }
    }
}

/// Draws a kernel type by the configured weights, then its parameters.
pub fn sample_kernel<R: Rng + ?Sized>(
    rng: &mut R,
    k: usize,
    config: &KernelSamplingConfig,
) -> Result<Kernel> {
    config.validate()?;
    check_odd(k)?;
    let kind = config.pick_kind(rng);
    config.sample_of_kind(rng, k, kind)
}

/// Training library of `n_motion` motion kernels followed by `n_defocus`
/// defocus kernels; kernel `i` is drawn from `derive_seed(master_seed, i)`.
pub fn kernel_library(
    master_seed: u64,
    k: usize,
    n_motion: usize,
    n_defocus: usize,
    config: &KernelSamplingConfig,
) -> Result<Vec<Kernel>> {
    config.validate()?;
    check_odd(k)?;
    (0..n_motion + n_defocus)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(master_seed, i as u64));
            let kind = if i < n_motion {
                KernelKind::Motion
            } else {
                KernelKind::Defocus
            };
            config.sample_of_kind(&mut rng, k, kind)
        })
        .collect()
}
