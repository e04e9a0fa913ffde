//! Random band-limited fields with prescribed power spectra.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::sht::{SpectralField, Truncation};

/// Draws coefficients whose expected power at total wavenumber `k` is
/// `psd(k)`: each of the `2k + 1` real degrees of freedom gets variance
/// `psd(k) / (2k + 1)`.
pub fn random_spectral<R: Rng + ?Sized>(
    trunc: Truncation,
    psd: impl Fn(usize) -> f64,
    rng: &mut R,
) -> SpectralField {
    let mut coeffs = Vec::with_capacity(trunc.len());
    for k in 0..=trunc.max_wavenumber() {
        let var = psd(k) / (2 * k + 1) as f64;
        coeffs.push(Complex64::new(var.sqrt() * rng.sample::<f64, _>(StandardNormal), 0.0));
        let sd = (0.5 * var).sqrt();
        for _ in 1..=k {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            coeffs.push(Complex64::new(sd * re, sd * im));
        }
    }
    SpectralField::from_parts(trunc, coeffs)
}

/// Power-law spectrum `(1 + k)^(-slope)` normalized to unit total power.
pub fn power_law_psd(trunc: Truncation, slope: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..=trunc.max_wavenumber())
        .map(|k| (1.0 + k as f64).powf(-slope))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}

/// The generator behind every seeded operation in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` draws from `N(mean, sd²)`.
pub fn normal_sample<R: Rng + ?Sized>(n: usize, mean: f64, sd: f64, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}
