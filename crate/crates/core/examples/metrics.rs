//! PSNR and SSIM along a ladder of additive noise and blur.
//!
//!     cargo run --example metrics

use rand_distr::{Distribution, StandardNormal};
use svblur::forward::{apply_forward_linear, DegradationField};
use svblur::image::synthetic_scene;
use svblur::kernels::{gen_defocus_kernel, DefocusParams};
use svblur::masks::SoftMaskField;
use svblur::metrics::MetricReport;
use svblur::seed::rng_from_seed;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = synthetic_scene(4, 96, 96);
    let mut rng = rng_from_seed(1);

    println!("{:<14}{:>10}{:>10}", "degradation", "PSNR", "SSIM");
    for sigma in [0.0, 0.01, 0.05, 0.1, 0.25] {
        let mut y = x.clone();
        for v in y.data_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * n;
        }
        let r = MetricReport::compute(&x, &y)?;
        println!("{:<14}{:>10.2}{:>10.4}", format!("noise {sigma}"), r.psnr_db, r.ssim);
    }
    for s in [0.5, 1.0, 2.0, 4.0] {
        let k = gen_defocus_kernel(25, &DefocusParams { sigma_x: s, sigma_y: s, theta: 0.0 })?;
        let field = DegradationField::new(SoftMaskField::uniform(96, 96)?, vec![k], 0.0)?;
        let r = MetricReport::compute(&x, &apply_forward_linear(&x, &field)?)?;
        println!("{:<14}{:>10.2}{:>10.4}", format!("defocus {s}"), r.psnr_db, r.ssim);
    }
    Ok(())
}
