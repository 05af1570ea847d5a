mod common;

use common::random_field;
use nalgebra::DMatrix;
use rand::Rng;
use svblur::descriptor::{
    assemble_conditioning, build_descriptor_field, embed, fit_pca, perturb_kernels, reconstruct,
    DescriptorField, PcaBasis,
};
use svblur::forward::DegradationField;
use svblur::kernels::{kernel_library, Kernel, KernelSamplingConfig};
use svblur::masks::SoftMaskField;
use svblur::seed::rng_from_seed;

fn library(seed: u64, k: usize, n: usize) -> Vec<Kernel> {
    kernel_library(seed, k, n / 2, n - n / 2, &KernelSamplingConfig::default()).unwrap()
}

/// Right singular vectors of the centered data matrix, signed so the
/// largest-magnitude entry (first on ties) is positive.
fn svd_oracle(kernels: &[Kernel], d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = kernels.len();
    let m = kernels[0].taps().len();
    let mut mean = vec![0.0; m];
    for k in kernels {
        for (a, t) in mean.iter_mut().zip(k.taps()) {
            *a += t / n as f64;
        }
    }
    let x = DMatrix::from_fn(n, m, |i, j| kernels[i].taps()[j] - mean[j]);
    let svd = x.svd(false, true);
    let vt = svd.v_t.unwrap();
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut comps = Vec::new();
    let mut var = Vec::new();
    for &i in &idx[..d] {
        let mut row: Vec<f64> = vt.row(i).iter().cloned().collect();
        let mut best = 0;
        for j in 0..m {
            if row[j].abs() > row[best].abs() {
                best = j;
            }
        }
        if row[best] < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        comps.push(row);
        var.push(svd.singular_values[i].powi(2) / (n - 1) as f64);
    }
    (comps, var)
}

#[test]
fn pca_matches_svd_of_data_matrix() {
    let lib = library(3, 7, 400);
    let d = 20;
    let basis = fit_pca(&lib, d).unwrap();
    let (comps, var) = svd_oracle(&lib, d);
    for i in 0..d {
        assert!((basis.explained_variance()[i] - var[i]).abs() <= 1e-10 * var[0], "variance {i}");
        // components are only defined up to rotation inside degenerate
        // eigenspaces; the spectrum here is well separated for the top d
        for (a, b) in basis.component(i).iter().zip(&comps[i]) {
            assert!((a - b).abs() <= 1e-7, "component {i}: {a} vs {b}");
        }
    }
}

fn orthonormality_error(b: &PcaBasis) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..b.dim() {
        for j in 0..b.dim() {
            let dot: f64 = b.component(i).iter().zip(b.component(j)).map(|(x, y)| x * y).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - want).abs());
        }
    }
    worst
}

#[test]
fn basis_invariants() {
    let lib = library(4, 9, 300);
    let b = fit_pca(&lib, 81).unwrap();
    assert!(orthonormality_error(&b) <= 1e-8);
    assert!(b.explained_variance().windows(2).all(|w| w[0] >= w[1]));
    assert!(b.explained_variance().iter().all(|&v| v >= 0.0));
    for k in &lib {
        let back = reconstruct(&embed(k, &b).unwrap(), &b).unwrap();
        for (x, y) in back.iter().zip(k.taps()) {
            assert!((x - y).abs() <= 1e-8);
        }
    }
}

#[test]
fn embedding_is_linear_and_idempotent() {
    let b = fit_pca(&library(5, 7, 200), 16).unwrap();
    let mut rng = rng_from_seed(1);
    for _ in 0..20 {
        let u: Vec<f64> = (0..49).map(|_| rng.random_range(-0.1..0.1)).collect();
        let v: Vec<f64> = (0..49).map(|_| rng.random_range(-0.1..0.1)).collect();
        let (a, c) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let shifted = |w: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..49).map(|i| b.mean()[i] + w(i)).collect() };
        let lhs = b.project(&shifted(&|i| a * u[i] + c * v[i])).unwrap();
        let eu = b.project(&shifted(&|i| u[i])).unwrap();
        let ev = b.project(&shifted(&|i| v[i])).unwrap();
        for j in 0..16 {
            assert!((lhs[j] - (a * eu[j] + c * ev[j])).abs() <= 1e-9);
        }
        let e: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let back = b.project(&reconstruct(&e, &b).unwrap()).unwrap();
        for (x, y) in back.iter().zip(&e) {
            assert!((x - y).abs() <= 1e-9);
        }
    }
    let e0 = b.project(b.mean()).unwrap();
    assert!(e0.iter().all(|v| v.abs() <= 1e-10));
}

fn codes(field: &DegradationField, basis: &PcaBasis) -> Vec<Vec<f64>> {
    field.kernels().iter().map(|k| embed(k, basis).unwrap()).collect()
}

#[test]
fn descriptor_is_mask_weighted_sum_of_codes() {
    let basis = fit_pca(&library(6, 5, 120), 6).unwrap();
    for seed in 0..5 {
        let field = random_field(seed, 14, 11, 4, 5);
        let d = build_descriptor_field(&field, &basis).unwrap();
        let e = codes(&field, &basis);
        for r in 0..14 {
            for c in 0..11 {
                for ch in 0..6 {
                    let want: f64 = (0..field.num_regions())
                        .map(|i| field.masks().weight(i, r, c) * e[i][ch])
                        .sum();
                    let got = d.at(r, c)[ch];
                    assert!((got - want).abs() <= 1e-12);
                    // convex hull of the region codes
                    let lo = e.iter().map(|v| v[ch]).fold(f64::INFINITY, f64::min);
                    let hi = e.iter().map(|v| v[ch]).fold(f64::NEG_INFINITY, f64::max);
                    assert!(got >= lo - 1e-9 && got <= hi + 1e-9);
                }
            }
        }
    }
}

#[test]
fn equal_weights_give_midpoint_code() {
    let basis = fit_pca(&library(7, 5, 120), 8).unwrap();
    let lib = library(8, 5, 2);
    // 1x3 strip: pure region 0, half/half, pure region 1
    let masks = SoftMaskField::new(1, 3, 2, vec![1.0, 0.5, 0.0, 0.0, 0.5, 1.0]).unwrap();
    let field = DegradationField::new(masks, lib.clone(), 0.0).unwrap();
    let d = build_descriptor_field(&field, &basis).unwrap();
    let e1 = embed(&lib[0], &basis).unwrap();
    let e2 = embed(&lib[1], &basis).unwrap();
    for j in 0..8 {
        assert_eq!(d.at(0, 0)[j], e1[j]);
        assert_eq!(d.at(0, 2)[j], e2[j]);
        assert!((d.at(0, 1)[j] - 0.5 * (e1[j] + e2[j])).abs() <= 1e-9);
    }
}

#[test]
fn joint_permutation_leaves_descriptor_unchanged() {
    let basis = fit_pca(&library(9, 5, 100), 5).unwrap();
    let field = random_field(42, 16, 16, 4, 5);
    let a = build_descriptor_field(&field, &basis).unwrap();
    let b = build_descriptor_field(&field.reordered(&[3, 1, 0, 2]).unwrap(), &basis).unwrap();
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn conditioning_layout_and_files() {
    let basis = fit_pca(&library(10, 5, 100), 9).unwrap();
    let field = random_field(3, 12, 13, 3, 5);
    let y = svblur::image::synthetic_scene(1, 12, 13);
    let d = build_descriptor_field(&field, &basis).unwrap();
    let cond = assemble_conditioning(&y, &d).unwrap();
    assert_eq!(cond.channels(), 12);
    assert_eq!(cond.rgb(), y);
    for r in 0..12 {
        for c in 0..13 {
            assert_eq!(&cond.at(r, c)[3..], d.at(r, c));
        }
    }
    assert!(assemble_conditioning(&y.channel_image(0), &d).is_err());

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.svbd");
    d.save(&p).unwrap();
    let back = DescriptorField::load(&p).unwrap();
    assert_eq!((back.height(), back.width(), back.dim()), (12, 13, 9));
    for (a, b) in back.values().iter().zip(d.values()) {
        assert_eq!(*a, *b as f32 as f64);
    }
    let p = dir.path().join("b.svbp");
    basis.save(&p).unwrap();
    assert_eq!(PcaBasis::load(&p).unwrap(), basis);
}

#[test]
fn perturbation_preserves_validity() {
    let field = random_field(11, 10, 10, 5, 9);
    let mut rng = rng_from_seed(12);
    for sigma in [0.0, 0.01, 0.05, 0.5, 5.0] {
        let p = perturb_kernels(&field, sigma, &mut rng).unwrap();
        assert_eq!(p.masks(), field.masks());
        assert_eq!(p.noise_sigma(), field.noise_sigma());
        for (k, orig) in p.kernels().iter().zip(field.kernels()) {
            k.check().unwrap();
            if sigma == 0.0 {
                for (a, b) in k.taps().iter().zip(orig.taps()) {
                    assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }
    assert!(perturb_kernels(&field, -0.1, &mut rng).is_err());
}
