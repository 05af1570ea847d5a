//! Soft region masks: a Voronoi partition smoothed at a few widths. Prints
//! the partition-of-unity error and how wide the blending band gets.
//!
//!     cargo run --example soft_masks [out_dir]

use std::path::PathBuf;

use svblur::masks::{soften, synth_segmentation};
use svblur::seed::rng_from_seed;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("svblur-masks"));
    std::fs::create_dir_all(&out)?;

    let seg = synth_segmentation(&mut rng_from_seed(3), 96, 128, 4)?;
    println!("region sizes: {:?}", seg.histogram());
    seg.save_png(out.join("labels.png"))?;

    for sigma in [0.0, 2.0, 5.0, 10.0] {
        let m = soften(&seg, sigma)?;
        // pixels where no region holds more than 99% of the weight
        let mixed = (0..96 * 128)
            .filter(|&p| (0..m.num_regions()).all(|i| m.plane(i)[p] < 0.99))
            .count();
        println!(
            "sigma {sigma:>4}: max |sum - 1| = {:.1e}, mixed pixels {:.1}%",
            m.max_partition_error(),
            100.0 * mixed as f64 / (96.0 * 128.0)
        );
        m.save(out.join(format!("masks_sigma{sigma}.svbm")))?;
    }
    println!("labels and masks written to {}", out.display());
    Ok(())
}
