use svblur::kernels::{
    gen_defocus_kernel, gen_motion_kernel, kernel_library, sample_kernel, DefocusParams, Kernel,
    KernelKind, KernelSamplingConfig, MotionParams, VELOCITY_DAMPING,
};
use svblur::seed::rng_from_seed;

/// Rasterizes the damped straight-line path `x_j = sum_{t=1..j} 0.99^t`
/// directly: rescale to the requested length, center on the exposed points
/// and split each point linearly between its two neighbouring columns.
fn straight_line_oracle(k: usize, length: f64, samples: usize, exposure: f64) -> Vec<f64> {
    let q = VELOCITY_DAMPING;
    let x: Vec<f64> = (0..samples).map(|j| q * (1.0 - q.powi(j as i32)) / (1.0 - q)).collect();
    let total = x[samples - 1];
    let exposed = ((exposure * samples as f64).ceil() as usize).min(samples);
    let xs = &x[..exposed];
    let centroid = xs.iter().sum::<f64>() / exposed as f64;
    let half = (k / 2) as f64;
    let mut row = vec![0.0; k];
    for xi in xs {
        let u = half + (xi - centroid) * length / total;
        let c0 = u.floor();
        let f = u - c0;
        row[c0 as usize] += 1.0 - f;
        if f > 0.0 {
            row[c0 as usize + 1] += f;
        }
    }
    let s: f64 = row.iter().sum();
    let mut taps = vec![0.0; k * k];
    for (c, v) in row.iter().enumerate() {
        taps[(k / 2) * k + c] = v / s;
    }
    taps
}

#[test]
fn straight_horizontal_motion_matches_line_oracle() {
    for (exposure, seed) in [(1.0, 1), (0.7, 2)] {
        let params = MotionParams {
            trajectory_length: 10.0,
            anxiety: 0.0,
            num_samples: 600,
            exposure_fraction: exposure,
            initial_direction: Some(0.0),
        };
        let k = gen_motion_kernel(&mut rng_from_seed(seed), 33, &params).unwrap();
        let want = straight_line_oracle(33, 10.0, 600, exposure);
        for (i, (a, b)) in k.taps().iter().zip(&want).enumerate() {
            assert!((a - b).abs() <= 1e-12, "tap {i}: {a} vs {b}");
        }
        let center_row: f64 = (0..33).map(|c| k.tap(16, c)).sum();
        assert!((center_row - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn defocus_matches_direct_gaussian_for_random_parameters() {
    let mut rng = rng_from_seed(8);
    let cfg = KernelSamplingConfig::default();
    for _ in 0..20 {
        let p = cfg.sample_defocus_params(&mut rng);
        let k = gen_defocus_kernel(9, &p).unwrap();
        let (c, s) = (p.theta.cos(), p.theta.sin());
        let mut want = Vec::new();
        for r in -4i32..=4 {
            for col in -4i32..=4 {
                let (dx, dy) = (col as f64, r as f64);
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                want.push((-0.5 * (u * u / (p.sigma_x * p.sigma_x) + v * v / (p.sigma_y * p.sigma_y))).exp());
            }
        }
        let sum: f64 = want.iter().sum();
        for (a, b) in k.taps().iter().zip(&want) {
            assert!((a - b / sum).abs() <= 1e-14);
        }
    }
}

#[test]
fn isotropic_defocus_is_point_symmetric() {
    let k = gen_defocus_kernel(11, &DefocusParams { sigma_x: 2.3, sigma_y: 2.3, theta: 0.7 }).unwrap();
    assert_eq!(k.rotated_180().taps().len(), k.taps().len());
    for (a, b) in k.taps().iter().zip(k.rotated_180().taps()) {
        assert!((a - b).abs() <= 1e-15);
    }
}

#[test]
fn sampled_kernels_are_valid_and_deterministic() {
    let cfg = KernelSamplingConfig::default();
    for seed in 0..200 {
        let a = sample_kernel(&mut rng_from_seed(seed), 15, &cfg).unwrap();
        let b = sample_kernel(&mut rng_from_seed(seed), 15, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.taps().iter().all(|&t| t >= 0.0));
        assert!((a.sum() - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn library_is_half_motion_half_defocus() {
    let cfg = KernelSamplingConfig::default();
    let lib = kernel_library(3, 9, 4, 4, &cfg).unwrap();
    for (i, k) in lib.iter().enumerate() {
        let kind = if i < 4 { KernelKind::Motion } else { KernelKind::Defocus };
        let mut rng = rng_from_seed(svblur::derive_seed(3, i as u64));
        assert_eq!(*k, cfg.sample_of_kind(&mut rng, 9, kind).unwrap());
    }
}

#[test]
fn svbk_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let k = gen_motion_kernel(&mut rng_from_seed(42), 33, &MotionParams::default()).unwrap();
    let path = dir.path().join("k.svbk");
    k.save(&path).unwrap();
    let back = Kernel::load(&path).unwrap();
    for (a, b) in back.taps().iter().zip(k.taps()) {
        assert_eq!(*a, *b as f32 as f64);
    }
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 4 + 2 + 2 + 4 * 33 * 33);
}
