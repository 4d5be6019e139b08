//! Noise generation and image quality metrics.
//!
//! Noise is i.i.d. Gaussian per pixel from a seeded generator, without
//! clipping: the spectral model works on unconstrained reals, and
//! clipping would change the noise distribution the analysis assumes.
//! PSNR and SSIM both take the intensity peak L = 1. SSIM uses the
//! standard 11×11 Gaussian window (σ = 1.5, K₁ = 0.01, K₂ = 0.03); the
//! window wraps around the torus, which keeps the metric invariant under
//! simultaneous shifts of both images.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::spectral::PixelGrid;

/// Seeded Gaussian pixel noise of standard deviation `sigma`.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

/// u + N(0, σ²) per pixel; bit-reproducible for a fixed seed.
pub fn add_gaussian_noise(u: &PixelGrid, spec: &NoiseSpec) -> PixelGrid {
    assert!(
        spec.sigma.is_finite() && spec.sigma >= 0.0,
        "noise sigma must be finite and non-negative"
    );
    if spec.sigma == 0.0 {
        return u.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let data = u
        .data()
        .iter()
        .map(|&v| {
            let xi: f64 = StandardNormal.sample(&mut rng);
            v + spec.sigma * xi
        })
        .collect();
    PixelGrid::new(u.n(), data).expect("noise preserves grid shape")
}

/// Peak signal-to-noise ratio in dB with peak 1.0; +∞ for identical images.
pub fn psnr(u: &PixelGrid, reference: &PixelGrid) -> Result<f64> {
    if u.n() != reference.n() {
        return Err(Error::Argument(format!(
            "image size mismatch: {} vs {}",
            u.n(),
            reference.n()
        )));
    }
    let mse = u
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / (u.n() * u.n()) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 1e-4; // (K₁·L)², K₁ = 0.01
const SSIM_C2: f64 = 9e-4; // (K₂·L)², K₂ = 0.03

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable wrap-around convolution with the SSIM window.
fn blur(n: usize, img: &[f64]) -> Vec<f64> {
    let kernel = gaussian_kernel();
    let radius = SSIM_WINDOW / 2;
    let mut rows = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for (t, &w) in kernel.iter().enumerate() {
                let cc = (c + n + t - radius) % n;
                acc += w * img[r * n + cc];
            }
            rows[r * n + c] = acc;
        }
    }
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for (t, &w) in kernel.iter().enumerate() {
                let rr = (r + n + t - radius) % n;
                acc += w * rows[rr * n + c];
            }
            out[r * n + c] = acc;
        }
    }
    out
}

/// Mean structural similarity over all torus windows; 1.0 exactly for
/// identical images.
pub fn ssim(u: &PixelGrid, reference: &PixelGrid) -> Result<f64> {
    if u.n() != reference.n() {
        return Err(Error::Argument(format!(
            "image size mismatch: {} vs {}",
            u.n(),
            reference.n()
        )));
    }
    let n = u.n();
    if n < SSIM_WINDOW {
        return Err(Error::Argument(format!(
            "image size {n} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let a = u.data();
    let b = reference.data();
    let sq = |x: &[f64]| -> Vec<f64> { x.iter().map(|v| v * v).collect() };
    let prod: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();

    let mu_a = blur(n, a);
    let mu_b = blur(n, b);
    let mu_aa = blur(n, &sq(a));
    let mu_bb = blur(n, &sq(b));
    let mu_ab = blur(n, &prod);

    let mut total = 0.0;
    for i in 0..n * n {
        let var_a = mu_aa[i] - mu_a[i] * mu_a[i];
        let var_b = mu_bb[i] - mu_b[i] * mu_b[i];
        let cov = mu_ab[i] - mu_a[i] * mu_b[i];
        let luminance = (2.0 * mu_a[i] * mu_b[i] + SSIM_C1) / (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + SSIM_C1);
        let contrast = (2.0 * cov + SSIM_C2) / (var_a + var_b + SSIM_C2);
        total += luminance * contrast;
    }
    Ok(total / (n * n) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_sigma_is_identity() {
        let img = crate::synth::scene(16).unwrap();
        let out = add_gaussian_noise(&img, &NoiseSpec { sigma: 0.0, seed: 1 });
        assert_eq!(img.data(), out.data());
    }

    #[test]
    fn noise_statistics_match_spec() {
        let n = 256;
        let img = PixelGrid::zeros(n).unwrap();
        let spec = NoiseSpec {
            sigma: 0.15,
            seed: 99,
        };
        let noisy = add_gaussian_noise(&img, &spec);
        let count = (n * n) as f64;
        let mean = noisy.data().iter().sum::<f64>() / count;
        assert!(
            mean.abs() < 4.0 * spec.sigma / n as f64,
            "sample mean {mean} too far from 0"
        );
        let var = noisy.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
        let std = var.sqrt();
        assert!((std - spec.sigma).abs() / spec.sigma < 0.02);
    }

    #[test]
    fn same_seed_reproduces_bit_identical_noise() {
        let img = crate::synth::scene(32).unwrap();
        let spec = NoiseSpec {
            sigma: 0.15,
            seed: 7,
        };
        let a = add_gaussian_noise(&img, &spec);
        let b = add_gaussian_noise(&img, &spec);
        assert_eq!(a.data(), b.data());
        let c = add_gaussian_noise(&img, &NoiseSpec { seed: 8, ..spec });
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn psnr_sentinel_and_literal_value() {
        let img = crate::synth::scene(16).unwrap();
        assert_eq!(psnr(&img, &img).unwrap(), f64::INFINITY);

        let shifted =
            PixelGrid::new(16, img.data().iter().map(|v| v + 0.1).collect()).unwrap();
        // MSE = 0.01 → 20 dB.
        assert_relative_eq!(psnr(&shifted, &img).unwrap(), 20.0, max_relative = 1e-12);
    }

    #[test]
    fn psnr_matches_direct_recomputation_and_is_symmetric() {
        let a = add_gaussian_noise(
            &crate::synth::scene(16).unwrap(),
            &NoiseSpec { sigma: 0.1, seed: 3 },
        );
        let b = crate::synth::scene(16).unwrap();
        let mse: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / 256.0;
        let expected = 10.0 * (1.0 / mse).log10();
        assert_relative_eq!(psnr(&a, &b).unwrap(), expected, max_relative = 1e-12);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_identity_is_exactly_one() {
        let img = crate::synth::scene(32).unwrap();
        assert_eq!(ssim(&img, &img).unwrap(), 1.0);
    }

    #[test]
    fn ssim_detects_structural_disagreement() {
        let img = crate::synth::scene(32).unwrap();
        let inverted =
            PixelGrid::new(32, img.data().iter().map(|v| 1.0 - v).collect()).unwrap();
        let s = ssim(&inverted, &img).unwrap();
        assert!(s < 1.0);
        assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn ssim_rejects_tiny_images() {
        let img = crate::synth::scene(8).unwrap();
        assert!(matches!(ssim(&img, &img), Err(Error::Argument(_))));
    }

    /// Literal per-window reference implementation: a full 11×11 loop for
    /// every pixel, no separability tricks.
    fn ssim_brute_force(u: &PixelGrid, reference: &PixelGrid) -> f64 {
        let n = u.n();
        let kernel = gaussian_kernel();
        let radius = SSIM_WINDOW / 2;
        let mut total = 0.0;
        for r in 0..n {
            for c in 0..n {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                let mut ab = 0.0;
                for (ti, &wi) in kernel.iter().enumerate() {
                    for (tj, &wj) in kernel.iter().enumerate() {
                        let rr = (r + n + ti - radius) % n;
                        let cc = (c + n + tj - radius) % n;
                        let w = wi * wj;
                        let x = u.value(rr, cc);
                        let y = reference.value(rr, cc);
                        mu_a += w * x;
                        mu_b += w * y;
                        aa += w * x * x;
                        bb += w * y * y;
                        ab += w * x * y;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let l = (2.0 * mu_a * mu_b + SSIM_C1)
                    / (mu_a * mu_a + mu_b * mu_b + SSIM_C1);
                let s = (2.0 * cov + SSIM_C2) / (var_a + var_b + SSIM_C2);
                total += l * s;
            }
        }
        total / (n * n) as f64
    }

    #[test]
    fn ssim_matches_brute_force_oracle() {
        let a = crate::synth::scene(24).unwrap();
        let b = add_gaussian_noise(&a, &NoiseSpec { sigma: 0.1, seed: 5 });
        let fast = ssim(&b, &a).unwrap();
        let slow = ssim_brute_force(&b, &a);
        assert_relative_eq!(fast, slow, epsilon = 1e-10);
        // Symmetry in the two arguments.
        assert_relative_eq!(fast, ssim(&a, &b).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn metrics_invariant_under_simultaneous_torus_shift() {
        let a = crate::synth::scene(32).unwrap();
        let b = add_gaussian_noise(&a, &NoiseSpec { sigma: 0.1, seed: 6 });
        let shift = |img: &PixelGrid, dr: usize, dc: usize| {
            let n = img.n();
            PixelGrid::from_fn(n, |_, _| 0.0)
                .map(|mut out| {
                    for r in 0..n {
                        for c in 0..n {
                            out.data_mut()[((r + dr) % n) * n + (c + dc) % n] = img.value(r, c);
                        }
                    }
                    out
                })
                .unwrap()
        };
        let (sa, sb) = (shift(&a, 5, 11), shift(&b, 5, 11));
        assert_relative_eq!(
            psnr(&b, &a).unwrap(),
            psnr(&sb, &sa).unwrap(),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            ssim(&b, &a).unwrap(),
            ssim(&sb, &sa).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn ssim_degrades_monotonically_with_noise() {
        let clean = crate::synth::scene(64).unwrap();
        let mut last = f64::INFINITY;
        for sigma in [0.01, 0.03, 0.05, 0.08, 0.11, 0.15] {
            let noisy = add_gaussian_noise(&clean, &NoiseSpec { sigma, seed: 10 });
            let s = ssim(&noisy, &clean).unwrap();
            assert!(s < last, "ssim not strictly decreasing at sigma={sigma}");
            last = s;
        }
    }
}
