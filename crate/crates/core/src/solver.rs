//! Conjugate gradient on the Tikhonov normal equations
//! `(H^T H + lambda R^T R) x = H^T y`, one channel at a time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::reflect_index;
use crate::error::{Error, Result};
use crate::forward::{apply_adjoint, apply_forward_linear, DegradationField};
use crate::image::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    /// `R = I`.
    Identity,
    /// `R` stacks horizontal and vertical forward differences (reflect
    /// boundary, so the last difference along each axis is zero).
    Gradient,
}

impl std::str::FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Regularizer::Identity),
            "gradient" => Ok(Regularizer::Gradient),
            other => Err(Error::Param(format!("unknown regularizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop once `||r|| / ||H^T y||` drops to this value.
    pub tol: f64,
    pub regularizer: Regularizer,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            max_iters: 300,
            tol: 1e-6,
            regularizer: Regularizer::Gradient,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Param(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Param(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::Param("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub iterations_used: usize,
    /// Relative normal-equation residual after each iteration.
    pub residual_history: Vec<f64>,
    pub converged: bool,
}

/// Aggregate over channels: the iteration count is the maximum, the
/// history at step `j` is the worst channel residual (finished channels hold
/// their final value), and `converged` requires every channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations_used: usize,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub channels: Vec<ChannelReport>,
}

impl SolveReport {
    fn from_channels(channels: Vec<ChannelReport>) -> Self {
        let iterations_used = channels.iter().map(|c| c.iterations_used).max().unwrap_or(0);
        let residual_history = (0..iterations_used)
            .map(|j| {
                channels
                    .iter()
                    .filter_map(|c| c.residual_history.get(j).or(c.residual_history.last()))
                    .cloned()
                    .fold(0.0, f64::max)
            })
            .collect();
        let converged = channels.iter().all(|c| c.converged);
        Self {
            iterations_used,
            residual_history,
            converged,
            channels,
        }
    }
}

/// Forward differences `(d/dcol, d/drow)` of each channel.
pub fn gradient(x: &ImageTensor) -> (ImageTensor, ImageTensor) {
    let (h, w) = (x.height(), x.width());
    let dx = ImageTensor::from_fn(h, w, x.channels(), |r, c, ch| {
        x.get(r, reflect_index(c as isize + 1, w), ch) - x.get(r, c, ch)
    });
    let dy = ImageTensor::from_fn(h, w, x.channels(), |r, c, ch| {
        x.get(reflect_index(r as isize + 1, h), c, ch) - x.get(r, c, ch)
    });
    (dx, dy)
}

/// Transpose of [`gradient`].
pub fn gradient_adjoint(dx: &ImageTensor, dy: &ImageTensor) -> ImageTensor {
    let (h, w) = (dx.height(), dx.width());
    let mut out = ImageTensor::zeros(h, w, dx.channels());
    for ch in 0..dx.channels() {
        for r in 0..h {
            for c in 0..w {
                let vx = dx.get(r, c, ch);
                let cn = reflect_index(c as isize + 1, w);
                out.set(r, c, ch, out.get(r, c, ch) - vx);
                out.set(r, cn, ch, out.get(r, cn, ch) + vx);
                let vy = dy.get(r, c, ch);
                let rn = reflect_index(r as isize + 1, h);
                out.set(r, c, ch, out.get(r, c, ch) - vy);
                out.set(rn, c, ch, out.get(rn, c, ch) + vy);
            }
        }
    }
    out
}

fn regularizer_energy(x: &ImageTensor, reg: Regularizer) -> f64 {
    match reg {
        Regularizer::Identity => x.dot(x),
        Regularizer::Gradient => {
            let (dx, dy) = gradient(x);
            dx.dot(&dx) + dy.dot(&dy)
        }
    }
}

fn regularizer_normal(x: &ImageTensor, reg: Regularizer) -> ImageTensor {
    match reg {
        Regularizer::Identity => x.clone(),
        Regularizer::Gradient => {
            let (dx, dy) = gradient(x);
            gradient_adjoint(&dx, &dy)
        }
    }
}

/// `(H^T H + lambda R^T R) x`.
pub fn apply_normal(x: &ImageTensor, field: &DegradationField, config: &SolverConfig) -> Result<ImageTensor> {
    let mut out = apply_adjoint(&apply_forward_linear(x, field)?, field)?;
    if config.lambda > 0.0 {
        let rr = regularizer_normal(x, config.regularizer);
        for (o, v) in out.data_mut().iter_mut().zip(rr.data()) {
            *o += config.lambda * v;
        }
    }
    Ok(out)
}

/// `||H x - y||^2 + lambda ||R x||^2`.
pub fn objective(x: &ImageTensor, y: &ImageTensor, field: &DegradationField, config: &SolverConfig) -> Result<f64> {
    let hx = apply_forward_linear(x, field)?;
    let misfit: f64 = hx.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(misfit + config.lambda * regularizer_energy(x, config.regularizer))
}

/// `||(H^T H + lambda R^T R) x - H^T y|| / ||H^T y||` over all channels.
pub fn normal_residual(
    x: &ImageTensor,
    y: &ImageTensor,
    field: &DegradationField,
    config: &SolverConfig,
) -> Result<f64> {
    x.check_same_shape(y)?;
    let b = apply_adjoint(y, field)?;
    let bnorm = b.norm();
    if bnorm == 0.0 {
        return Err(Error::Degenerate("H^T y is zero".into()));
    }
    let ax = apply_normal(x, field, config)?;
    let r: f64 = ax.data().iter().zip(b.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(r.sqrt() / bnorm)
}

fn axpy(alpha: f64, x: &ImageTensor, y: &mut ImageTensor) {
    for (yi, xi) in y.data_mut().iter_mut().zip(x.data()) {
        *yi += alpha * xi;
    }
}

fn residual(b: &ImageTensor, ax: &ImageTensor) -> ImageTensor {
    let mut r = b.clone();
    axpy(-1.0, ax, &mut r);
    r
}

/// Iterates CG on one channel. `observer` sees every accepted iterate.
fn solve_channel(
    y: &ImageTensor,
    field: &DegradationField,
    config: &SolverConfig,
    observer: &mut dyn FnMut(usize, &ImageTensor),
) -> Result<(ImageTensor, ChannelReport)> {
    let b = apply_adjoint(y, field)?;
    let bnorm = b.norm();
    let denom = if bnorm > 0.0 { bnorm } else { 1.0 };
    let mut x = y.clone();
    let mut r = residual(&b, &apply_normal(&x, field, config)?);
    let mut rs = r.dot(&r);
    if !rs.is_finite() {
        return Err(Error::NonFinite { iteration: 0 });
    }
    let mut history = Vec::new();
    observer(0, &x);
    if rs.sqrt() / denom <= config.tol {
        return Ok((
            x,
            ChannelReport {
                iterations_used: 0,
                residual_history: history,
                converged: true,
            },
        ));
    }
    let mut p = r.clone();
    let mut converged = false;
    for it in 1..=config.max_iters {
        let ap = apply_normal(&p, field, config)?;
        let pap = p.dot(&ap);
        if !pap.is_finite() {
            return Err(Error::NonFinite { iteration: it });
        }
        if pap <= 0.0 {
            // A is only semidefinite (lambda = 0 with a nontrivial null space)
            break;
        }
        let alpha = rs / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let mut rs_new = r.dot(&r);
        if !rs_new.is_finite() || !x.is_finite() {
            return Err(Error::NonFinite { iteration: it });
        }
        let mut rel = rs_new.sqrt() / denom;
        let mut restart = false;
        if rel <= config.tol {
            // confirm against the true residual before declaring convergence
            r = residual(&b, &apply_normal(&x, field, config)?);
            rs_new = r.dot(&r);
            rel = rs_new.sqrt() / denom;
            converged = rel <= config.tol;
            restart = !converged;
        }
        history.push(rel);
        observer(it, &x);
        if converged {
            break;
        }
        if restart {
            p = r.clone();
        } else {
            let beta = rs_new / rs;
            for (pi, ri) in p.data_mut().iter_mut().zip(r.data()) {
                *pi = ri + beta * *pi;
            }
        }
        rs = rs_new;
    }
    Ok((
        x,
        ChannelReport {
            iterations_used: history.len(),
            residual_history: history,
            converged,
        },
    ))
}

/// Tikhonov-regularized deconvolution starting from `x0 = y`. The estimate
/// is returned unclamped. `field.noise_sigma` is not used.
pub fn cg_deconvolve(
    y: &ImageTensor,
    field: &DegradationField,
    config: &SolverConfig,
) -> Result<(ImageTensor, SolveReport)> {
    cg_deconvolve_observed(y, field, config, |_, _, _| {})
}

/// [`cg_deconvolve`] with a callback `(channel, iteration, iterate)` invoked
/// for the initial guess and after every iteration. Channels run
/// sequentially here so the callback needs no synchronization.
pub fn cg_deconvolve_observed(
    y: &ImageTensor,
    field: &DegradationField,
    config: &SolverConfig,
    mut observer: impl FnMut(usize, usize, &ImageTensor),
) -> Result<(ImageTensor, SolveReport)> {
    config.validate()?;
    if y.height() != field.height() || y.width() != field.width() {
        return Err(Error::Shape(format!(
            "observation {}x{} vs field {}x{}",
            y.height(),
            y.width(),
            field.height(),
            field.width()
        )));
    }
    let mut parts = Vec::with_capacity(y.channels());
    for c in 0..y.channels() {
        parts.push(solve_channel(&y.channel_image(c), field, config, &mut |it, x| {
            observer(c, it, x)
        })?);
    }
    finish(parts)
}

fn finish(parts: Vec<(ImageTensor, ChannelReport)>) -> Result<(ImageTensor, SolveReport)> {
    let (images, reports): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    Ok((ImageTensor::stack(&images)?, SolveReport::from_channels(reports)))
}

/// Same as [`cg_deconvolve`] but solves channels concurrently.
pub fn cg_deconvolve_parallel(
    y: &ImageTensor,
    field: &DegradationField,
    config: &SolverConfig,
) -> Result<(ImageTensor, SolveReport)> {
    config.validate()?;
    if y.height() != field.height() || y.width() != field.width() {
        return Err(Error::Shape("observation and field differ in size".into()));
    }
    let parts = (0..y.channels())
        .into_par_iter()
        .map(|c| solve_channel(&y.channel_image(c), field, config, &mut |_, _| {}))
        .collect::<Result<Vec<_>>>()?;
    finish(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{delta_kernel, gen_defocus_kernel, DefocusParams};
    use crate::masks::SoftMaskField;
    use crate::seed::rng_from_seed;
    use rand::Rng;

    fn blur_field(h: usize, w: usize, sigma: f64) -> DegradationField {
        let k = gen_defocus_kernel(7, &DefocusParams { sigma_x: sigma, sigma_y: sigma, theta: 0.0 }).unwrap();
        DegradationField::new(SoftMaskField::uniform(h, w).unwrap(), vec![k], 0.0).unwrap()
    }

    #[test]
    fn identity_field_stops_at_iteration_zero() {
        let y = crate::image::synthetic_scene(1, 12, 12);
        let field = DegradationField::new(SoftMaskField::uniform(12, 12).unwrap(), vec![delta_kernel(3).unwrap()], 0.0).unwrap();
        let cfg = SolverConfig { lambda: 0.0, ..Default::default() };
        let (x, report) = cg_deconvolve(&y, &field, &cfg).unwrap();
        assert_eq!(x, y);
        assert_eq!(report.iterations_used, 0);
        assert!(report.converged);
        assert!(report.residual_history.is_empty());
    }

    #[test]
    fn gradient_adjoint_pair() {
        let mut rng = rng_from_seed(4);
        let x = ImageTensor::from_fn(7, 5, 2, |_, _, _| rng.random::<f64>());
        let u = ImageTensor::from_fn(7, 5, 2, |_, _, _| rng.random::<f64>());
        let v = ImageTensor::from_fn(7, 5, 2, |_, _, _| rng.random::<f64>());
        let (dx, dy) = gradient(&x);
        let lhs = dx.dot(&u) + dy.dot(&v);
        let rhs = x.dot(&gradient_adjoint(&u, &v));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn converges_on_well_conditioned_instance() {
        let field = blur_field(24, 24, 1.2);
        let x = crate::image::synthetic_scene(9, 24, 24);
        let y = apply_forward_linear(&x, &field).unwrap();
        let cfg = SolverConfig { lambda: 1e-3, max_iters: 500, tol: 1e-8, regularizer: Regularizer::Gradient };
        let (xh, report) = cg_deconvolve(&y, &field, &cfg).unwrap();
        assert!(report.converged);
        assert_eq!(report.residual_history.len(), report.iterations_used);
        assert!(report.residual_history.iter().all(|&r| r > 0.0));
        assert!(*report.residual_history.last().unwrap() <= cfg.tol);
        assert!(normal_residual(&xh, &y, &field, &cfg).unwrap() <= cfg.tol * 1.01);
        let (xp, rp) = cg_deconvolve_parallel(&y, &field, &cfg).unwrap();
        assert_eq!(xp, xh);
        assert_eq!(rp, report);
    }

    #[test]
    fn rejects_bad_config() {
        let field = blur_field(8, 8, 1.0);
        let y = ImageTensor::zeros(8, 8, 1);
        let bad = SolverConfig { lambda: -1.0, ..Default::default() };
        assert!(matches!(cg_deconvolve(&y, &field, &bad), Err(Error::Param(_))));
        let bad = SolverConfig { max_iters: 0, ..Default::default() };
        assert!(cg_deconvolve(&y, &field, &bad).is_err());
        assert!(matches!(
            normal_residual(&y, &y, &field, &SolverConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn non_finite_input_reported() {
        let field = blur_field(8, 8, 1.0);
        let mut y = crate::image::synthetic_scene(2, 8, 8).channel_image(0);
        y.set(3, 3, 0, f64::NAN);
        let err = cg_deconvolve(&y, &field, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { iteration: 0 }));
    }

    #[test]
    fn wrong_magnitude_has_positive_residual() {
        let field = blur_field(10, 10, 1.0);
        let y = crate::image::synthetic_scene(3, 10, 10);
        let mut x = apply_adjoint(&y, &field).unwrap();
        x.data_mut().iter_mut().for_each(|v| *v *= 3.0);
        assert!(normal_residual(&x, &y, &field, &SolverConfig::default()).unwrap() > 0.0);
    }

    #[test]
    fn regularizer_parses() {
        assert_eq!("gradient".parse::<Regularizer>().unwrap(), Regularizer::Gradient);
        assert_eq!("identity".parse::<Regularizer>().unwrap(), Regularizer::Identity);
        assert!("tv".parse::<Regularizer>().is_err());
    }
}
