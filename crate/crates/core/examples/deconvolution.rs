//! Non-blind restoration with conjugate gradients on the Tikhonov normal
//! equations, for both regularizers and a sweep of lambda.
//!
//!     cargo run --example deconvolution [out_dir]

use std::path::PathBuf;

use svblur::forward::{apply_forward, DegradationField};
use svblur::image::{save_png, synthetic_scene};
use svblur::kernels::{gen_defocus_kernel, DefocusParams};
use svblur::masks::{soften, synth_segmentation};
use svblur::metrics::{psnr, ssim};
use svblur::seed::rng_from_seed;
use svblur::solver::{cg_deconvolve, Regularizer, SolverConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("svblur-deconv"));
    std::fs::create_dir_all(&out)?;
    let (h, w) = (128, 128);
    let mut rng = rng_from_seed(9);

    // two regions: sharp-ish on one side, heavy defocus on the other
    let seg = synth_segmentation(&mut rng, h, w, 2)?;
    let kernels = vec![
        gen_defocus_kernel(15, &DefocusParams { sigma_x: 1.0, sigma_y: 1.0, theta: 0.0 })?,
        gen_defocus_kernel(15, &DefocusParams { sigma_x: 3.0, sigma_y: 2.0, theta: 0.4 })?,
    ];
    let field = DegradationField::new(soften(&seg, 4.0)?, kernels, 0.005)?;
    let x = synthetic_scene(2024, h, w);
    let y = apply_forward(&x, &field, &mut rng)?;
    save_png(&y, out.join("blurred.png"))?;
    println!("blurred: PSNR {:.2} dB, SSIM {:.4}", psnr(&x, &y, 1.0)?, ssim(&x, &y)?);

    for reg in [Regularizer::Identity, Regularizer::Gradient] {
        for lambda in [1e-4, 1e-3, 1e-2] {
            let cfg = SolverConfig { lambda, max_iters: 200, tol: 1e-6, regularizer: reg };
            let (xh, report) = cg_deconvolve(&y, &field, &cfg)?;
            println!(
                "{reg:?} lambda {lambda:.0e}: PSNR {:.2} dB, SSIM {:.4}, {} iterations, converged {}",
                psnr(&x, &xh, 1.0)?,
                ssim(&x, &xh)?,
                report.iterations_used,
                report.converged
            );
            save_png(&xh, out.join(format!("restored_{reg:?}_{lambda:.0e}.png").to_lowercase()))?;
        }
    }
    println!("images written to {}", out.display());
    Ok(())
}
