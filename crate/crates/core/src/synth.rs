//! Deterministic synthetic test images.
//!
//! The experiment commands and validation suites need grayscale inputs with
//! known structure: cartoon-like scenes with edges, smooth shading and some
//! texture, plus fields of prescribed spectral decay for convergence-rate
//! studies. Everything here is reproducible bit-for-bit.

use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::error::Result;
use crate::spectral::{PixelGrid, SpectralField};

/// Cartoon-style scene: shaded background, several flat shapes with sharp
/// edges, a thin dark line and a striped texture patch. Coordinates are
/// relative, so the same scene renders at any even size.
pub fn scene(n: usize) -> Result<PixelGrid> {
    PixelGrid::from_fn(n, |x1, x2| {
        // Relative coordinates in [0,1).
        let u = x1 / (2.0 * PI);
        let v = x2 / (2.0 * PI);

        // Smooth background shading.
        let mut val = 0.45 + 0.18 * (2.0 * PI * v).sin() * (PI * u).sin();

        // Large disc.
        let (cu, cv, r) = (0.38, 0.34, 0.21);
        if (u - cu).powi(2) + (v - cv).powi(2) < r * r {
            val = 0.78;
        }
        // Smaller dark disc overlapping it.
        let (cu, cv, r) = (0.47, 0.45, 0.09);
        if (u - cu).powi(2) + (v - cv).powi(2) < r * r {
            val = 0.22;
        }
        // Bright rectangle.
        if (0.62..0.88).contains(&u) && (0.15..0.42).contains(&v) {
            val = 0.88;
        }
        // Mid-gray triangle (half-plane cuts).
        if u + v > 1.25 && u - v < 0.35 && u > 0.55 {
            val = 0.35;
        }
        // Thin dark line.
        if (u - 0.18).abs() < 0.008 && (0.55..0.95).contains(&v) {
            val = 0.08;
        }
        // Striped texture patch.
        if (0.08..0.3).contains(&u) && (0.62..0.9).contains(&v) {
            val += 0.09 * (2.0 * PI * 14.0 * v).sin();
        }
        val.clamp(0.03, 0.97)
    })
}

/// High-texture variant: the scene plus fine oriented ripples everywhere,
/// closer to fur or foliage statistics.
pub fn textured_scene(n: usize) -> Result<PixelGrid> {
    let base = scene(n)?;
    PixelGrid::from_fn(n, |x1, x2| {
        let u = x1 / (2.0 * PI);
        let v = x2 / (2.0 * PI);
        let idx1 = ((u * n as f64) as usize).min(n - 1);
        let idx2 = ((v * n as f64) as usize).min(n - 1);
        let ripple = 0.05 * (9.0 * x1 + 4.0 * x2).sin() + 0.04 * (13.0 * x2 - 3.0 * x1).cos();
        (base.value(idx1, idx2) + ripple).clamp(0.03, 0.97)
    })
}

/// Zero-mean field with |ĝ_k| = |k|^{-p} and random (Hermitian) phases, so
/// the result transforms to a real grid. Modes on the Nyquist lines are
/// left empty; they have no conjugate partner on an even grid.
pub fn power_law_field(n: usize, p: f64, seed: u64) -> Result<SpectralField> {
    let mut f = SpectralField::zeros(n)?;
    let half = (n / 2) as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k1 in -half + 1..half {
        for k2 in -half + 1..half {
            if k1 < 0 || (k1 == 0 && k2 <= 0) {
                continue; // fill each conjugate pair once
            }
            let kk = (k1 * k1 + k2 * k2) as f64;
            let amp = kk.powf(-p / 2.0);
            let phase = rng.random::<f64>() * 2.0 * PI;
            let c = Complex64::from_polar(amp, phase);
            *f.coeff_mut(k1, k2) = c;
            *f.coeff_mut(-k1, -k2) = c.conj();
        }
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::inverse_transform;

    #[test]
    fn scene_is_deterministic_and_in_range() {
        let a = scene(64).unwrap();
        let b = scene(64).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let t = textured_scene(64).unwrap();
        assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_ne!(a.data(), t.data());
    }

    #[test]
    fn power_law_field_is_real_and_zero_mean() {
        let f = power_law_field(32, 2.0, 7).unwrap();
        assert!(f.is_zero_mean());
        assert!(f.hermitian_residual() < 1e-9);
        let g = inverse_transform(&f);
        let mean = g.mean();
        assert!(mean.abs() < 1e-12);
    }
}
