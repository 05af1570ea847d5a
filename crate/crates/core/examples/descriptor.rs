//! Fits a kernel PCA basis, shows how reconstruction error falls with the
//! number of components, then builds a descriptor field and the stacked
//! conditioning tensor for one degraded image.
//!
//!     cargo run --example descriptor [out_dir]

use std::path::PathBuf;

use svblur::descriptor::{assemble_conditioning, build_descriptor_field, fit_pca, relative_reconstruction_error};
use svblur::forward::{apply_forward, sample_degradation_field, MaskSource};
use svblur::image::synthetic_scene;
use svblur::kernels::{kernel_library, KernelSamplingConfig, UniformRange};
use svblur::seed::rng_from_seed;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("svblur-descriptor"));
    std::fs::create_dir_all(&out)?;
    let k = 33;
    let cfg = KernelSamplingConfig::default();

    let library = kernel_library(1, k, 2500, 2500, &cfg)?;
    let heldout = kernel_library(2, k, 100, 100, &cfg)?;
    let full = fit_pca(&library, 256)?;
    for d in [8, 32, 64, 128, 256] {
        let b = full.truncated(d)?;
        let mut err = 0.0;
        for ker in &heldout {
            err += relative_reconstruction_error(ker, &b)?;
        }
        println!("d = {d:>3}: mean held-out relative error {:.4}", err / heldout.len() as f64);
    }
    let basis = full.truncated(128)?;
    basis.save(out.join("basis.svbp"))?;

    let mut rng = rng_from_seed(5);
    let field = sample_degradation_field(
        &mut rng,
        &MaskSource::Synthetic { height: 96, width: 96, min_regions: 2, max_regions: 6 },
        5.0,
        k,
        &cfg,
        &UniformRange::new(0.05, 0.25),
    )?;
    let y = apply_forward(&synthetic_scene(2, 96, 96), &field, &mut rng)?;
    let descriptors = build_descriptor_field(&field, &basis)?;
    let cond = assemble_conditioning(&y, &descriptors)?;
    println!(
        "descriptor field {}x{}x{}, conditioning tensor with {} channels",
        descriptors.height(),
        descriptors.width(),
        descriptors.dim(),
        cond.channels()
    );
    descriptors.save(out.join("descriptor.svbd"))?;
    cond.save(out.join("conditioning.svbd"))?;
    println!("basis and tensors written to {}", out.display());
    Ok(())
}
