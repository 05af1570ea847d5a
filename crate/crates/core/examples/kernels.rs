//! Draws one kernel of each kind, prints a coarse picture of each and saves
//! them as `.svbk` files.
//!
//!     cargo run --example kernels [out_dir]

use std::path::PathBuf;

use svblur::kernels::{
    delta_kernel, gen_defocus_kernel, gen_motion_kernel, DefocusParams, Kernel, MotionParams,
};
use svblur::seed::rng_from_seed;

fn show(name: &str, k: &Kernel) {
    let peak = k.taps().iter().cloned().fold(0.0, f64::max);
    let shades = [' ', '.', ':', '+', '#'];
    println!("{name} ({0}x{0}, sum {1:.6})", k.size(), k.sum());
    for r in 0..k.size() {
        let line: String = (0..k.size())
            .map(|c| shades[((k.tap(r, c) / peak) * 4.0).round() as usize])
            .collect();
        println!("  |{line}|");
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("svblur-kernels"));
    std::fs::create_dir_all(&out)?;
    let k = 21;

    let motion = gen_motion_kernel(
        &mut rng_from_seed(7),
        k,
        &MotionParams {
            trajectory_length: 18.0,
            anxiety: 0.3,
            num_samples: 600,
            exposure_fraction: 0.9,
            initial_direction: None,
        },
    )?;
    let defocus = gen_defocus_kernel(k, &DefocusParams { sigma_x: 3.5, sigma_y: 1.5, theta: 0.6 })?;
    let delta = delta_kernel(k)?;

    for (name, ker) in [("motion", &motion), ("defocus", &defocus), ("delta", &delta)] {
        show(name, ker);
        ker.save(out.join(format!("{name}.svbk")))?;
    }
    println!("kernels written to {}", out.display());
    Ok(())
}
