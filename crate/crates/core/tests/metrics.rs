use lightslab_core::dataset::ImageBuffer;
use lightslab_core::metrics::{psnr, psnr_from_mse, ssim, MetricReport, PSNR_CAP};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(h: usize, w: usize, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageBuffer::new(h, w, 3, (0..h * w * 3).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

/// Adds Gaussian noise of the given standard deviation (Box-Muller), unclamped.
fn with_noise(img: &ImageBuffer, sigma: f64, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = img
        .data
        .iter()
        .map(|&v| {
            let (u1, u2): (f64, f64) = (rng.random_range(f64::EPSILON..1.0), rng.random_range(0.0..1.0));
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            (v as f64 + sigma * z) as f32
        })
        .collect();
    ImageBuffer { data, ..img.clone() }
}

fn constant(h: usize, w: usize, v: f32) -> ImageBuffer {
    ImageBuffer::filled(h, w, [v; 3])
}

#[test]
fn psnr_reference_values() {
    assert_eq!(psnr(&constant(8, 8, 0.25), &constant(8, 8, 0.25)).unwrap(), PSNR_CAP);
    assert_eq!(psnr_from_mse(0.01), 20.0);
    assert_eq!(psnr_from_mse(1.0), 0.0);
    assert_eq!(psnr(&constant(8, 8, 0.0), &constant(8, 8, 1.0)).unwrap(), 0.0);
}

#[test]
fn ssim_of_opposite_constants_is_luminance_constant() {
    let c1 = 1e-4;
    let s = ssim(&constant(16, 16, 0.0), &constant(16, 16, 1.0)).unwrap();
    assert!((s - c1 / (1.0 + c1)).abs() < 1e-12, "{s}");
}

#[test]
fn ssim_is_robust_to_tiny_noise() {
    let a = random_image(32, 32, 1);
    let b = with_noise(&a, 1e-4, 2);
    assert!(ssim(&a, &b).unwrap() >= 0.999);
}

#[test]
fn ssim_of_image_with_itself_is_exactly_one() {
    for seed in 0..5 {
        let a = random_image(11 + seed as usize, 13, seed);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }
}

#[test]
fn psnr_decreases_with_noise_amplitude() {
    let a = random_image(24, 24, 3);
    let sigmas = [1e-4, 1e-3, 1e-2, 3e-2, 1e-1, 3e-1];
    let scores: Vec<f64> = sigmas.iter().map(|&s| psnr(&a, &with_noise(&a, s, 4)).unwrap()).collect();
    for w in scores.windows(2) {
        assert!(w[1] < w[0], "{scores:?}");
    }
}

#[test]
fn report_of_identical_views() {
    let a = random_image(12, 12, 5);
    let r = MetricReport::evaluate(&[("v0".into(), &a, &a), ("v1".into(), &a, &a)]).unwrap();
    assert_eq!(r.mean_psnr, PSNR_CAP);
    assert_eq!(r.mean_ssim, Some(1.0));
    assert_eq!(
        r.to_csv(),
        "view,psnr,ssim\nv0,100.000000,1.000000\nv1,100.000000,1.000000\nmean,100.000000,1.000000\n"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn metrics_are_symmetric(seed_a in 0u64..1000, seed_b in 0u64..1000, h in 11usize..20, w in 11usize..20) {
        let a = random_image(h, w, seed_a);
        let b = random_image(h, w, seed_b + 1000);
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn scores_stay_in_range(seed_a in 0u64..1000, seed_b in 0u64..1000) {
        let a = random_image(12, 12, seed_a);
        let b = random_image(12, 12, seed_b + 1000);
        let p = psnr(&a, &b).unwrap();
        let s = ssim(&a, &b).unwrap();
        prop_assert!((0.0..=PSNR_CAP).contains(&p));
        prop_assert!((-1.0..=1.0).contains(&s));
    }
}
