//! Reference implementations written straight from the definitions, kept
//! deliberately naive so they share no code paths with the library.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use svblur::forward::DegradationField;
use svblur::image::ImageTensor;
use svblur::kernels::Kernel;
use svblur::masks::{soften, synth_segmentation, SoftMaskField};
use svblur::seed::{rng_from_seed, SvRng};

/// Half-sample symmetric extension: `... b a | a b c | c b ...`.
pub fn mirror(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// `sum_i M_i(p) sum_{a,b} K_i[a,b] x(p_r - (a - rad), p_c - (b - rad))`.
pub fn reference_forward(x: &ImageTensor, field: &DegradationField) -> ImageTensor {
    let (h, w) = (x.height(), x.width());
    let k = field.kernel_size();
    let rad = (k / 2) as i64;
    ImageTensor::from_fn(h, w, x.channels(), |r, c, ch| {
        let mut acc = 0.0;
        for (i, ker) in field.kernels().iter().enumerate() {
            let m = field.masks().weight(i, r, c);
            let mut conv = 0.0;
            for a in 0..k {
                for b in 0..k {
                    let rr = mirror(r as i64 - (a as i64 - rad), h);
                    let cc = mirror(c as i64 - (b as i64 - rad), w);
                    conv += ker.tap(a, b) * x.get(rr, cc, ch);
                }
            }
            acc += m * conv;
        }
        acc
    })
}

/// Explicit single-channel operator matrix, column `j` = response to `e_j`.
pub fn dense_operator(field: &DegradationField) -> DMatrix<f64> {
    let (h, w) = (field.height(), field.width());
    let n = h * w;
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = ImageTensor::zeros(h, w, 1);
        e.data_mut()[j] = 1.0;
        let col = reference_forward(&e, field);
        for i in 0..n {
            m[(i, j)] = col.data()[i];
        }
    }
    m
}

/// Stacked forward differences with the last difference along each axis
/// equal to zero.
pub fn dense_gradient(h: usize, w: usize) -> DMatrix<f64> {
    let n = h * w;
    let mut g = DMatrix::zeros(2 * n, n);
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            if c + 1 < w {
                g[(p, p + 1)] += 1.0;
                g[(p, p)] -= 1.0;
            }
            if r + 1 < h {
                g[(n + p, p + w)] += 1.0;
                g[(n + p, p)] -= 1.0;
            }
        }
    }
    g
}

pub fn random_kernel(rng: &mut SvRng, k: usize) -> Kernel {
    let taps: Vec<f64> = (0..k * k).map(|_| rng.random::<f64>()).collect();
    let s: f64 = taps.iter().sum();
    Kernel::from_taps(k, taps.into_iter().map(|t| t / s).collect()).unwrap()
}

pub fn random_image(rng: &mut SvRng, h: usize, w: usize, c: usize) -> ImageTensor {
    ImageTensor::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0))
}

/// Random field with softened Voronoi masks and dense random kernels.
pub fn random_field(seed: u64, h: usize, w: usize, n: usize, k: usize) -> DegradationField {
    let mut rng = rng_from_seed(seed);
    let n = n.min(h * w);
    let seg = synth_segmentation(&mut rng, h, w, n).unwrap();
    let sigma = rng.random_range(0.0..2.5);
    let masks = soften(&seg, sigma).unwrap();
    let kernels = (0..n).map(|_| random_kernel(&mut rng, k)).collect();
    DegradationField::new(masks, kernels, 0.0).unwrap()
}

pub fn assert_partition_of_unity(m: &SoftMaskField) {
    for r in 0..m.height() {
        for c in 0..m.width() {
            let mut s = 0.0;
            for i in 0..m.num_regions() {
                let v = m.weight(i, r, c);
                assert!(v >= 0.0, "negative weight {v} at ({r},{c})");
                s += v;
            }
            assert!((s - 1.0).abs() <= 1e-6, "weights sum to {s} at ({r},{c})");
        }
    }
}

pub fn inner(a: &ImageTensor, b: &ImageTensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Kernel-PCA protocol shared by the regression and acceptance tests:
/// 33x33 kernels, a 10k motion + 10k defocus training library and 500 + 500
/// held-out kernels from an unrelated seed.
pub mod pca_protocol {
    use svblur::kernels::{kernel_library, Kernel, KernelSamplingConfig};

    pub const K: usize = 33;
    pub const LIBRARY_SEED: u64 = 2024;
    pub const HELDOUT_SEED: u64 = 2025;
    pub const LIBRARY_SIZE: usize = 20_000;
    pub const HELDOUT_SIZE: usize = 1_000;
    pub const DIMS: [usize; 5] = [8, 32, 64, 128, 256];

    /// Mean held-out relative error per entry of `DIMS`, from a full numpy
    /// SVD of the same library (`oracles/pca_library_oracle.py`).
    pub const FROZEN_HELDOUT_ERROR: [f64; 5] = [
        0.439032983632,
        0.214593747227,
        0.117853281507,
        0.047263455241,
        0.010592567477,
    ];
    /// Leading explained variances from the same oracle run.
    pub const FROZEN_LEADING_VARIANCE: [f64; 4] = [
        1.386146645089e-02,
        3.704184275344e-03,
        3.267178815544e-03,
        2.560976649829e-03,
    ];

    pub fn library() -> Vec<Kernel> {
        let cfg = KernelSamplingConfig::default();
        kernel_library(LIBRARY_SEED, K, LIBRARY_SIZE / 2, LIBRARY_SIZE / 2, &cfg).unwrap()
    }

    pub fn heldout() -> Vec<Kernel> {
        let cfg = KernelSamplingConfig::default();
        kernel_library(HELDOUT_SEED, K, HELDOUT_SIZE / 2, HELDOUT_SIZE / 2, &cfg).unwrap()
    }
}

/// Fixed-seed 128x128 deblurring benchmark: procedural scene, isotropic
/// defocus with sigma 2 over the whole frame, no noise.
pub mod benchmark {
    use svblur::forward::{apply_forward_linear, DegradationField};
    use svblur::image::{synthetic_scene, ImageTensor};
    use svblur::kernels::{gen_defocus_kernel, DefocusParams};
    use svblur::masks::SoftMaskField;
    use svblur::solver::{Regularizer, SolverConfig};

    /// PSNR gain of the first recorded run (3.9921 dB), rounded down.
    pub const FROZEN_GAIN_FLOOR_DB: f64 = 3.99;

    pub const CONFIG: SolverConfig = SolverConfig {
        lambda: 1e-4,
        max_iters: 200,
        tol: 1e-6,
        regularizer: Regularizer::Gradient,
    };

    /// `(clean, blurred, field)`.
    pub fn instance() -> (ImageTensor, ImageTensor, DegradationField) {
        let x = synthetic_scene(2024, 128, 128);
        let k = gen_defocus_kernel(13, &DefocusParams { sigma_x: 2.0, sigma_y: 2.0, theta: 0.0 })
            .unwrap();
        let masks = SoftMaskField::uniform(128, 128).unwrap();
        let field = DegradationField::new(masks, vec![k], 0.0).unwrap();
        let y = apply_forward_linear(&x, &field).unwrap();
        (x, y, field)
    }
}
