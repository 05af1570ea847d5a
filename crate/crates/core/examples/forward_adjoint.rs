//! Degrades a procedural scene with a sampled spatially varying field and
//! runs the dot-product test on the operator and its adjoint.
//!
//!     cargo run --example forward_adjoint [out_dir]

use std::path::PathBuf;

use rand::Rng;
use svblur::forward::{apply_adjoint, apply_forward, apply_forward_linear, sample_degradation_field, MaskSource};
use svblur::image::{save_png, synthetic_scene, ImageTensor};
use svblur::kernels::{KernelSamplingConfig, UniformRange};
use svblur::seed::rng_from_seed;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("svblur-forward"));
    std::fs::create_dir_all(&out)?;
    let (h, w) = (160, 224);
    let mut rng = rng_from_seed(11);

    let field = sample_degradation_field(
        &mut rng,
        &MaskSource::Synthetic { height: h, width: w, min_regions: 3, max_regions: 3 },
        6.0,
        33,
        &KernelSamplingConfig::default(),
        &UniformRange::new(0.02, 0.02),
    )?;
    println!("{} regions, noise sigma {}", field.num_regions(), field.noise_sigma());

    let x = synthetic_scene(1, h, w);
    let y = apply_forward(&x, &field, &mut rng)?;
    save_png(&x, out.join("clean.png"))?;
    save_png(&y, out.join("blurred.png"))?;
    field.save(out.join("field.svbf"))?;

    for trial in 0..5 {
        let u = ImageTensor::from_fn(h, w, 3, |_, _, _| rng.random_range(-1.0..1.0));
        let v = ImageTensor::from_fn(h, w, 3, |_, _, _| rng.random_range(-1.0..1.0));
        let lhs = apply_forward_linear(&u, &field)?.dot(&v);
        let rhs = u.dot(&apply_adjoint(&v, &field)?);
        println!("trial {trial}: <Hu,v> = {lhs:+.12e}, <u,H^T v> = {rhs:+.12e}, rel gap {:.1e}",
            (lhs - rhs).abs() / (u.norm() * v.norm()));
    }
    println!("images and field written to {}", out.display());
    Ok(())
}
