//! Grid/frequency representations of periodic images and the fractional
//! operators acting on them.
//!
//! Images live on the 2-d torus, sampled at the n×n points
//! x_j = (2π/n)(j₁,j₂). The discrete scalar product carries the quadrature
//! weight (2π)²/n², so every continuous constant in the model formulas is
//! used literally. Fourier coefficients are stored centered: the array
//! entry (a,b) holds the mode k = (a−n/2, b−n/2), with k ranging over
//! Zₙ² = {−n/2 ≤ kᵢ ≤ n/2−1}.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Absolute tolerance below which the k=0 coefficient counts as zero.
pub const ZERO_MEAN_TOL: f64 = 1e-12;

fn two_pi_sq() -> f64 {
    (2.0 * PI) * (2.0 * PI)
}

/// Real n×n samples of a torus function, values nominally in [0,1].
///
/// `mean_offset` holds a mean that was split off before spectral work;
/// it rides along through the transforms and is added back by
/// [`inverse_transform`].
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    n: usize,
    data: Vec<f64>,
    mean_offset: f64,
}

impl PixelGrid {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        check_size(n)?;
        if data.len() != n * n {
            return Err(Error::Argument(format!(
                "expected {} samples for a {n}x{n} grid, got {}",
                n * n,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Argument("grid contains non-finite values".into()));
        }
        Ok(Self {
            n,
            data,
            mean_offset: 0.0,
        })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(n, vec![0.0; n * n])
    }

    /// Sample `f(x₁,x₂)` at the grid points x_j = (2π/n)(j₁,j₂).
    pub fn from_fn(n: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        check_size(n)?;
        let h = 2.0 * PI / n as f64;
        let mut data = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                data.push(f(h * r as f64, h * c as f64));
            }
        }
        Self::new(n, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn mean_offset(&self) -> f64 {
        self.mean_offset
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / (self.n * self.n) as f64
    }

    /// Split the current mean off into `mean_offset`, leaving zero-mean data.
    pub fn with_mean_removed(&self) -> PixelGrid {
        let m = self.mean();
        PixelGrid {
            n: self.n,
            data: self.data.iter().map(|v| v - m).collect(),
            mean_offset: self.mean_offset + m,
        }
    }

    /// Fold `mean_offset` back into the samples.
    pub fn with_mean_absorbed(&self) -> PixelGrid {
        PixelGrid {
            n: self.n,
            data: self.data.iter().map(|v| v + self.mean_offset).collect(),
            mean_offset: 0.0,
        }
    }
}

/// Complex Fourier coefficients ṽ_k for k ∈ Zₙ², centered storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    n: usize,
    coeffs: Vec<Complex64>,
    mean_offset: f64,
}

impl SpectralField {
    pub fn zeros(n: usize) -> Result<Self> {
        check_size(n)?;
        Ok(Self {
            n,
            coeffs: vec![Complex64::ZERO; n * n],
            mean_offset: 0.0,
        })
    }

    pub fn from_coeffs(n: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        check_size(n)?;
        if coeffs.len() != n * n {
            return Err(Error::Argument(format!(
                "expected {} coefficients for size {n}, got {}",
                n * n,
                coeffs.len()
            )));
        }
        Ok(Self {
            n,
            coeffs,
            mean_offset: 0.0,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn mean_offset(&self) -> f64 {
        self.mean_offset
    }

    pub fn set_mean_offset(&mut self, offset: f64) {
        self.mean_offset = offset;
    }

    /// Coefficient of the mode k = (k1,k2), kᵢ ∈ [−n/2, n/2).
    pub fn coeff(&self, k1: i64, k2: i64) -> Complex64 {
        self.coeffs[self.index_of(k1, k2)]
    }

    pub fn coeff_mut(&mut self, k1: i64, k2: i64) -> &mut Complex64 {
        let idx = self.index_of(k1, k2);
        &mut self.coeffs[idx]
    }

    fn index_of(&self, k1: i64, k2: i64) -> usize {
        let half = (self.n / 2) as i64;
        assert!(
            (-half..half).contains(&k1) && (-half..half).contains(&k2),
            "mode ({k1},{k2}) outside Z_{}²",
            self.n
        );
        ((k1 + half) as usize) * self.n + (k2 + half) as usize
    }

    /// True when the k=0 coefficient vanishes (within [`ZERO_MEAN_TOL`]).
    pub fn is_zero_mean(&self) -> bool {
        self.coeff(0, 0).norm() <= ZERO_MEAN_TOL
    }

    /// ℓ² norm of the coefficient vector (k=0 included).
    pub fn l2_norm(&self) -> f64 {
        self.coeffs
            .iter()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn add(&self, other: &SpectralField) -> Result<SpectralField> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &SpectralField) -> Result<SpectralField> {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> SpectralField {
        SpectralField {
            n: self.n,
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
            mean_offset: self.mean_offset,
        }
    }

    fn zip(
        &self,
        other: &SpectralField,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<SpectralField> {
        if self.n != other.n {
            return Err(Error::Argument(format!(
                "field size mismatch: {} vs {}",
                self.n, other.n
            )));
        }
        Ok(SpectralField {
            n: self.n,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            mean_offset: self.mean_offset,
        })
    }

    /// Largest imaginary residue of the grid samples this field would
    /// produce; a real image yields values at rounding level.
    pub fn hermitian_residual(&self) -> f64 {
        let fft = Fft2::new(self.n);
        let raw = centered_to_raw(self.n, &self.coeffs);
        let samples = fft.inverse(raw);
        samples
            .iter()
            .map(|c| c.im.abs())
            .fold(0.0, f64::max)
            / two_pi_sq()
    }
}

/// Order γ for the fractional seminorm |·|_γ; positive for the fractional
/// Laplacian, non-positive for the Riesz potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevOrder(pub f64);

impl SobolevOrder {
    pub fn new(gamma: f64) -> Result<Self> {
        if !gamma.is_finite() {
            return Err(Error::Argument("Sobolev order must be finite".into()));
        }
        Ok(Self(gamma))
    }

    pub fn gamma(&self) -> f64 {
        self.0
    }
}

fn check_size(n: usize) -> Result<()> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::Config(format!(
            "grid size must be even and >= 2, got {n}"
        )));
    }
    Ok(())
}

/// Cached FFT plans for one size; used by the transforms and by flows that
/// transform every step.
pub(crate) struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub(crate) fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    fn transform(&self, mut buf: Vec<Complex64>, plan: &Arc<dyn Fft<f64>>) -> Vec<Complex64> {
        let n = self.n;
        for row in buf.chunks_exact_mut(n) {
            plan.process(row);
        }
        let mut t = transpose(n, &buf);
        for row in t.chunks_exact_mut(n) {
            plan.process(row);
        }
        transpose(n, &t)
    }

    /// Unnormalized 2-d DFT (e^{-ik·x} kernel), raw frequency layout.
    pub(crate) fn forward(&self, buf: Vec<Complex64>) -> Vec<Complex64> {
        self.transform(buf, &self.forward)
    }

    /// Unnormalized inverse 2-d DFT (e^{+ik·x} kernel).
    pub(crate) fn inverse(&self, buf: Vec<Complex64>) -> Vec<Complex64> {
        self.transform(buf, &self.inverse)
    }
}

fn transpose(n: usize, buf: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::ZERO; n * n];
    for r in 0..n {
        for c in 0..n {
            out[c * n + r] = buf[r * n + c];
        }
    }
    out
}

/// Map between raw FFT layout (frequency r = k mod n) and centered layout
/// (index a = k + n/2). The index map is an involution.
fn shift_index(n: usize, a: usize) -> usize {
    (a + n / 2) % n
}

fn raw_to_centered(n: usize, raw: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::ZERO; n * n];
    for a in 0..n {
        let ra = shift_index(n, a);
        for b in 0..n {
            out[a * n + b] = raw[ra * n + shift_index(n, b)];
        }
    }
    out
}

fn centered_to_raw(n: usize, centered: &[Complex64]) -> Vec<Complex64> {
    // Same permutation in both directions.
    raw_to_centered(n, centered)
}

/// Discrete Fourier transform ṽ_k = (V,Φᵏ)ₙ of a grid function.
///
/// The k=0 coefficient equals (2π)²·mean(g); grids whose mean was split
/// off beforehand therefore produce zero-mean fields.
pub fn forward_transform(g: &PixelGrid) -> SpectralField {
    let n = g.n;
    let fft = Fft2::new(n);
    let buf: Vec<Complex64> = g.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let raw = fft.forward(buf);
    let scale = two_pi_sq() / (n * n) as f64;
    let mut coeffs = raw_to_centered(n, &raw);
    for c in &mut coeffs {
        *c *= scale;
    }
    SpectralField {
        n,
        coeffs,
        mean_offset: g.mean_offset,
    }
}

/// Trigonometric interpolant evaluated at the grid points:
/// v_j = (2π)⁻² Σ_k ṽ_k e^{ik·x_j}, real part, plus the stored mean offset.
///
/// Exact inverse of [`forward_transform`] for grids without a pending
/// mean offset.
pub fn inverse_transform(f: &SpectralField) -> PixelGrid {
    let n = f.n;
    let fft = Fft2::new(n);
    let raw = centered_to_raw(n, &f.coeffs);
    let samples = fft.inverse(raw);
    let scale = 1.0 / two_pi_sq();
    PixelGrid {
        n,
        data: samples
            .iter()
            .map(|c| c.re * scale + f.mean_offset)
            .collect(),
        mean_offset: 0.0,
    }
}

/// Apply a real multiplier depending on |k|² to every mode k ≠ 0.
pub(crate) fn map_modes(f: &SpectralField, mult: impl Fn(f64) -> f64) -> SpectralField {
    let n = f.n;
    let half = (n / 2) as i64;
    let mut coeffs = vec![Complex64::ZERO; n * n];
    for a in 0..n {
        let k1 = a as i64 - half;
        for b in 0..n {
            let k2 = b as i64 - half;
            if k1 == 0 && k2 == 0 {
                continue;
            }
            let kk = (k1 * k1 + k2 * k2) as f64;
            coeffs[a * n + b] = f.coeffs[a * n + b] * mult(kk);
        }
    }
    SpectralField {
        n,
        coeffs,
        mean_offset: f.mean_offset,
    }
}

fn require_zero_mean(f: &SpectralField, op: &str) -> Result<()> {
    if !f.is_zero_mean() {
        return Err(Error::Precondition(format!(
            "{op} requires a zero-mean field (|k=0 coefficient| = {:.3e})",
            f.coeff(0, 0).norm()
        )));
    }
    Ok(())
}

/// Fractional Laplacian (−Δ)ˢ: multiplies mode k by |k|^{2s}, s ≥ 0.
pub fn fractional_laplacian(f: &SpectralField, s: SobolevOrder) -> Result<SpectralField> {
    if s.0 < 0.0 {
        return Err(Error::Domain(format!(
            "fractional Laplacian needs s >= 0, got {} (use the Riesz potential)",
            s.0
        )));
    }
    require_zero_mean(f, "fractional Laplacian")?;
    Ok(map_modes(f, |kk| kk.powf(s.0)))
}

/// Riesz potential R_s: multiplies mode k by |k|^{2s}, s ≤ 0; the exact
/// inverse of the fractional Laplacian of order −s on zero-mean fields.
pub fn riesz_potential(f: &SpectralField, s: SobolevOrder) -> Result<SpectralField> {
    if s.0 > 0.0 {
        return Err(Error::Domain(format!(
            "Riesz potential needs s <= 0, got {}",
            s.0
        )));
    }
    require_zero_mean(f, "Riesz potential")?;
    Ok(map_modes(f, |kk| kk.powf(s.0)))
}

/// Fractional seminorm |f|_γ = (Σ_{k≠0} |k|^{2γ}|f̂_k|²)^{1/2}.
pub fn sobolev_seminorm(f: &SpectralField, gamma: SobolevOrder) -> f64 {
    let n = f.n;
    let half = (n / 2) as i64;
    let mut sum = 0.0;
    for a in 0..n {
        let k1 = a as i64 - half;
        for b in 0..n {
            let k2 = b as i64 - half;
            if k1 == 0 && k2 == 0 {
                continue;
            }
            let kk = (k1 * k1 + k2 * k2) as f64;
            sum += kk.powf(gamma.0) * f.coeffs[a * n + b].norm_sqr();
        }
    }
    sum.sqrt()
}

/// Orthogonal projection P_m: zero every coefficient outside Z_m².
pub fn project(f: &SpectralField, m: usize) -> Result<SpectralField> {
    check_size(m)?;
    if m > f.n {
        return Err(Error::Argument(format!(
            "projection order {m} exceeds field size {}",
            f.n
        )));
    }
    let n = f.n;
    let half = (n / 2) as i64;
    let mh = (m / 2) as i64;
    let mut coeffs = f.coeffs.clone();
    for a in 0..n {
        let k1 = a as i64 - half;
        for b in 0..n {
            let k2 = b as i64 - half;
            if k1 < -mh || k1 >= mh || k2 < -mh || k2 >= mh {
                coeffs[a * n + b] = Complex64::ZERO;
            }
        }
    }
    Ok(SpectralField {
        n,
        coeffs,
        mean_offset: f.mean_offset,
    })
}

/// Trigonometric interpolant I_m: subsample the fine grid at stride n/m
/// and transform at size m.
pub fn interpolate(g_fine: &PixelGrid, m: usize) -> Result<SpectralField> {
    check_size(m)?;
    if g_fine.n % m != 0 {
        return Err(Error::Argument(format!(
            "interpolation order {m} must divide the grid size {}",
            g_fine.n
        )));
    }
    let stride = g_fine.n / m;
    let mut data = Vec::with_capacity(m * m);
    for r in 0..m {
        for c in 0..m {
            data.push(g_fine.data[(r * stride) * g_fine.n + c * stride]);
        }
    }
    let coarse = PixelGrid {
        n: m,
        data,
        mean_offset: g_fine.mean_offset,
    };
    Ok(forward_transform(&coarse))
}
