//! Builds a small paired dataset end to end and validates it. Uses the
//! images in the directory given as the first argument, or writes a few
//! procedural scenes when none is given.
//!
//!     cargo run --example synth_dataset [image_dir] [out_dir]

use std::path::PathBuf;

use svblur::image::{save_png, synthetic_scene};
use svblur::pipeline::{synth_dataset, validate_manifest, SynthesisConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let base = std::env::temp_dir().join("svblur-dataset");
    let images = match args.next() {
        Some(dir) => PathBuf::from(dir),
        None => {
            let dir = base.join("scenes");
            std::fs::create_dir_all(&dir)?;
            for i in 0..6 {
                save_png(&synthetic_scene(i, 200 + 20 * i as usize, 260), dir.join(format!("scene{i}.png")))?;
            }
            dir
        }
    };
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| base.join("dataset"));

    let mut cfg = SynthesisConfig::new(images, out);
    cfg.target_size = 128;
    cfg.pca_library_size = 4000;
    cfg.worker_count = 2;
    cfg.master_seed = 2024;
    let summary = synth_dataset(&cfg)?;
    for r in &summary.records {
        println!(
            "{}: {} regions ({} delta), noise {:.3}",
            r.id, r.num_regions, r.delta_kernels, r.noise_sigma
        );
    }
    for s in &summary.skipped {
        println!("skipped {}: {}", s.source, s.reason);
    }

    let report = validate_manifest(&summary.manifest_path)?;
    println!(
        "{} of {} records pass validation; manifest at {}",
        report.records.len() - report.failures().count(),
        report.records.len(),
        summary.manifest_path.display()
    );
    Ok(())
}
