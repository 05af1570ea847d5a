use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{Binomial, DiscreteCDF};
use svblur::image::ImageTensor;
use svblur::metrics::{psnr, ssim, MetricReport};
use svblur::seed::rng_from_seed;

fn random_image(seed: u64, h: usize, w: usize, c: usize) -> ImageTensor {
    let mut rng = rng_from_seed(seed);
    ImageTensor::from_fn(h, w, c, |_, _, _| rng.random::<f64>())
}

/// Mean SSIM straight from the formula: an explicit 11x11 Gaussian window
/// (sigma 1.5) at every fully contained position.
fn ssim_reference(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut win = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let mut per_channel = 0.0;
    for ch in 0..a.channels() {
        let mut sum = 0.0;
        let mut count = 0;
        for r in 0..=a.height() - 11 {
            for c in 0..=a.width() - 11 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let w = win[i][j] / total;
                        ma += w * a.get(r + i, c + j, ch);
                        mb += w * b.get(r + i, c + j, ch);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let w = win[i][j] / total;
                        let da = a.get(r + i, c + j, ch) - ma;
                        let db = b.get(r + i, c + j, ch) - mb;
                        va += w * da * da;
                        vb += w * db * db;
                        cov += w * da * db;
                    }
                }
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        per_channel += sum / count as f64;
    }
    per_channel / a.channels() as f64
}

#[test]
fn ssim_matches_scalar_reference() {
    for seed in 0..3 {
        let a = random_image(seed, 64, 64, 3);
        let mut b = a.clone();
        let mut rng = rng_from_seed(100 + seed);
        b.data_mut().iter_mut().for_each(|v| *v += 0.2 * rng.random::<f64>() - 0.1);
        let fast = ssim(&a, &b).unwrap();
        let slow = ssim_reference(&a, &b);
        assert!((fast - slow).abs() <= 1e-8, "{fast} vs {slow}");
        let c = random_image(50 + seed, 64, 64, 3);
        assert!((ssim(&a, &c).unwrap() - ssim_reference(&a, &c)).abs() <= 1e-8);
    }
}

#[test]
fn psnr_closed_form() {
    let a = random_image(1, 20, 20, 3);
    let mut b = a.clone();
    b.data_mut().iter_mut().for_each(|v| *v += 0.05);
    assert!((psnr(&a, &b, 1.0).unwrap() - 26.0206).abs() <= 1e-3);
    let mut c = a.clone();
    c.data_mut().iter_mut().for_each(|v| *v -= 0.1);
    assert!((psnr(&a, &c, 1.0).unwrap() - 20.0).abs() <= 1e-9);
    assert!((psnr(&a, &c, 255.0).unwrap() - (20.0 + 20.0 * 255f64.log10())).abs() <= 1e-9);
}

#[test]
fn exact_symmetry_and_self_similarity() {
    for seed in 0..10 {
        let a = random_image(seed, 23, 31, 3);
        let b = random_image(seed + 1000, 23, 31, 3);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    }
}

#[test]
fn constant_images() {
    let z = ImageTensor::filled(12, 12, 3, 0.0);
    let o = ImageTensor::filled(12, 12, 3, 1.0);
    assert!((ssim(&z, &o).unwrap() - 1e-4 / (1.0 + 1e-4)).abs() <= 1e-6);
    let h = ImageTensor::filled(12, 12, 1, 0.5);
    assert_eq!(ssim(&h, &h).unwrap(), 1.0);
}

#[test]
fn shape_errors() {
    let a = random_image(1, 12, 12, 3);
    let b = random_image(1, 12, 13, 3);
    assert!(psnr(&a, &b, 1.0).is_err());
    assert!(ssim(&a, &b).is_err());
    assert!(ssim(&random_image(1, 10, 40, 1), &random_image(2, 10, 40, 1)).is_err());
}

/// For each seed, PSNR should fall strictly along a ladder of noise
/// amplitudes. The success count must reject "no better than a coin flip"
/// at the 95% level (one-sided binomial test).
#[test]
fn psnr_decreases_with_noise_amplitude() {
    let base = random_image(9, 32, 32, 3);
    let amplitudes = [0.01, 0.02, 0.05, 0.1, 0.2];
    let trials = 100u64;
    let mut successes = 0u64;
    for seed in 0..trials {
        let mut rng = rng_from_seed(seed);
        let noise: Vec<f64> = (0..base.data().len()).map(|_| rng.sample(StandardNormal)).collect();
        let values: Vec<f64> = amplitudes
            .iter()
            .map(|&s| {
                let mut y = base.clone();
                y.data_mut().iter_mut().zip(&noise).for_each(|(v, n)| *v += s * n);
                psnr(&base, &y, 1.0).unwrap()
            })
            .collect();
        if values.windows(2).all(|w| w[1] < w[0]) {
            successes += 1;
        }
    }
    let null = Binomial::new(0.5, trials).unwrap();
    let p_value = 1.0 - null.cdf(successes - 1);
    assert!(p_value < 0.05, "{successes}/{trials}, p = {p_value}");
}

#[test]
fn report_serialization() {
    let a = random_image(1, 16, 16, 3);
    let r = MetricReport::compute(&a, &a).unwrap();
    let json = serde_json::to_value(r).unwrap();
    assert!(json["psnr_db"].is_null());
    assert_eq!(json["ssim"], 1.0);
    let b = random_image(2, 16, 16, 3);
    let r = MetricReport::compute(&a, &b).unwrap();
    let back: MetricReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
    assert_eq!(back, r);
}
