//! Per-wavenumber spectral diagnostics: power, coherence, amplitude ratio,
//! the amplitude/decoherence split of the MSE, effective resolution and
//! fourth-order spectral filters.

use std::io::Write;

use crate::error::{Error, Result};
use crate::sht::{check_same_truncation, zonal_weight, SpectralField};

/// Power per total wavenumber, `Σ_l w(l) |α(k,l)|²`.
pub fn power_spectrum(a: &SpectralField) -> Vec<f64> {
    (0..=a.truncation().max_wavenumber())
        .map(|k| {
            a.degree(k)
                .iter()
                .enumerate()
                .map(|(l, c)| zonal_weight(l) * c.norm_sqr())
                .sum()
        })
        .collect()
}

/// Real cross power per total wavenumber, `Σ_l w(l) Re(α_x conj(α_y))`.
pub fn cross_spectrum(x: &SpectralField, y: &SpectralField) -> Result<Vec<f64>> {
    check_same_truncation(x, y)?;
    Ok((0..=x.truncation().max_wavenumber())
        .map(|k| {
            x.degree(k)
                .iter()
                .zip(y.degree(k))
                .enumerate()
                .map(|(l, (a, b))| zonal_weight(l) * (a * b.conj()).re)
                .sum()
        })
        .collect())
}

/// Coherence with the zero-power convention: 0 when either power is 0.
/// Clamped to `[-1, 1]` against rounding.
pub fn coherence(psd_x: f64, psd_y: f64, cross: f64) -> f64 {
    if psd_x <= 0.0 || psd_y <= 0.0 {
        return 0.0;
    }
    (cross / (psd_x * psd_y).sqrt()).clamp(-1.0, 1.0)
}

/// `sqrt(psd_x / psd_y)`; 1 when both are zero and infinite when only the
/// reference is zero.
pub fn amplitude_ratio(psd_x: f64, psd_y: f64) -> f64 {
    if psd_y > 0.0 {
        (psd_x / psd_y).sqrt()
    } else if psd_x > 0.0 {
        f64::INFINITY
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDiagnostics {
    pub psd_x: Vec<f64>,
    pub psd_y: Vec<f64>,
    pub cross: Vec<f64>,
    pub coherence: Vec<f64>,
    pub amplitude_ratio: Vec<f64>,
}

impl SpectralDiagnostics {
    /// Derives coherence and amplitude ratio from power and cross spectra.
    pub fn from_spectra(psd_x: Vec<f64>, psd_y: Vec<f64>, cross: Vec<f64>) -> Result<Self> {
        if psd_x.len() != psd_y.len() || psd_x.len() != cross.len() {
            return Err(Error::shape("spectra of different lengths"));
        }
        let coherence = (0..psd_x.len())
            .map(|k| coherence(psd_x[k], psd_y[k], cross[k]))
            .collect();
        let amplitude_ratio = psd_x
            .iter()
            .zip(&psd_y)
            .map(|(&px, &py)| amplitude_ratio(px, py))
            .collect();
        Ok(SpectralDiagnostics {
            psd_x,
            psd_y,
            cross,
            coherence,
            amplitude_ratio,
        })
    }

    pub fn len(&self) -> usize {
        self.psd_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psd_x.is_empty()
    }

    /// Writes `k,psd_x,psd_y,coherence,amplitude_ratio`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::format(0, crate::error::FormatErrorKind::Csv(e.to_string()));
        w.write_record(["k", "psd_x", "psd_y", "coherence", "amplitude_ratio"])
            .map_err(csv_err)?;
        for k in 0..self.len() {
            w.write_record([
                k.to_string(),
                crate::io::fmt_f64(self.psd_x[k]),
                crate::io::fmt_f64(self.psd_y[k]),
                crate::io::fmt_f64(self.coherence[k]),
                crate::io::fmt_f64(self.amplitude_ratio[k]),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub fn diagnostics(x: &SpectralField, y: &SpectralField) -> Result<SpectralDiagnostics> {
    let cross = cross_spectrum(x, y)?;
    SpectralDiagnostics::from_spectra(power_spectrum(x), power_spectrum(y), cross)
}

/// One wavenumber's share of the MSE, split into the loss a perfectly
/// correlated prediction would still incur and the residual due to
/// decorrelation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseTerms {
    pub amplitude: f64,
    pub decoherence: f64,
}

impl MseTerms {
    pub fn total(&self) -> f64 {
        self.amplitude + self.decoherence
    }
}

/// `(√psd_x − √psd_y)²` and `2 √(psd_x psd_y) (1 − coh)` per wavenumber.
pub fn mse_decomposition_from_spectra(psd_x: &[f64], psd_y: &[f64], cross: &[f64]) -> Vec<MseTerms> {
    (0..psd_x.len())
        .map(|k| {
            let (px, py) = (psd_x[k], psd_y[k]);
            let d = px.sqrt() - py.sqrt();
            // 2 √(px py) (1 - coh) = 2 (√(px py) - cross) when both are positive.
            let geo = (px * py).sqrt();
            let decoherence = if geo > 0.0 {
                2.0 * geo * (1.0 - coherence(px, py, cross[k]))
            } else {
                0.0
            };
            MseTerms {
                amplitude: d * d,
                decoherence,
            }
        })
        .collect()
}

pub fn mse_decomposition(x: &SpectralField, y: &SpectralField) -> Result<Vec<MseTerms>> {
    let cross = cross_spectrum(x, y)?;
    Ok(mse_decomposition_from_spectra(
        &power_spectrum(x),
        &power_spectrum(y),
        &cross,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolutionMode {
    /// Amplitude ratio falls below `√energy_fraction`.
    Dissipation,
    /// Amplitude ratio rises above 1.
    Noise,
}

/// Crossing detector for effective resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolutionDetector {
    /// Retained energy fraction for the dissipation threshold.
    pub energy_fraction: f64,
    /// Wavenumbers after the crossing that must stay on the same side.
    pub persistence: usize,
    /// Wavenumbers below this are never reported.
    pub min_wavenumber: usize,
}

impl Default for ResolutionDetector {
    fn default() -> Self {
        ResolutionDetector {
            energy_fraction: 0.75,
            persistence: 3,
            min_wavenumber: 4,
        }
    }
}

impl ResolutionDetector {
    /// First wavenumber past the threshold that stays past it for the
    /// persistence window. The window is cut short at the truncation.
    pub fn detect(&self, diag: &SpectralDiagnostics, mode: ResolutionMode) -> Option<usize> {
        let ratio = &diag.amplitude_ratio;
        let cutoff = self.energy_fraction.sqrt();
        let past = |k: usize| match mode {
            ResolutionMode::Dissipation => ratio[k] < cutoff,
            ResolutionMode::Noise => ratio[k] > 1.0,
        };
        (self.min_wavenumber..ratio.len()).find(|&k| {
            let end = (k + self.persistence).min(ratio.len() - 1);
            (k..=end).all(past)
        })
    }
}

pub fn effective_resolution(diag: &SpectralDiagnostics, mode: ResolutionMode) -> Option<usize> {
    ResolutionDetector::default().detect(diag, mode)
}

/// Fourth-order low-pass response `k0⁴ / (k0⁴ + k⁴)`.
pub fn lowpass_response(k: f64, k0: f64) -> f64 {
    let a = k0.powi(4);
    a / (a + k.powi(4))
}

/// Fourth-order high-pass response `1 − k0⁴ / (k0⁴ + k⁴)`.
pub fn highpass_response(k: f64, k0: f64) -> f64 {
    let a = k0.powi(4);
    let b = k.powi(4);
    b / (a + b)
}

/// Default high-pass cutoff wavenumber.
pub const DEFAULT_HIGHPASS_K0: f64 = 50.0;

pub fn highpass(spec: &SpectralField, k0: f64) -> Result<SpectralField> {
    check_cutoff(k0)?;
    Ok(spec.scaled_by_degree(|k| highpass_response(k as f64, k0)))
}

pub fn lowpass(spec: &SpectralField, k0: f64) -> Result<SpectralField> {
    check_cutoff(k0)?;
    Ok(spec.scaled_by_degree(|k| lowpass_response(k as f64, k0)))
}

fn check_cutoff(k0: f64) -> Result<()> {
    if k0 > 0.0 && k0.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("cutoff wavenumber must be positive, got {k0}")))
    }
}

/// Combines per-variable diagnostics into one dimensionless profile.
///
/// Each variable's spectra are divided by its own reference power `psd_y`
/// at every `k`, then averaged with the given weights. The result has
/// `psd_y = 1`, `psd_x` equal to the weighted mean squared amplitude ratio
/// and `cross` equal to the weighted mean normalized cross power. A variable
/// with zero reference power at some `k` does not contribute there.
pub fn aggregate_diagnostics(items: &[(SpectralDiagnostics, f64)]) -> Result<SpectralDiagnostics> {
    let first = items
        .first()
        .ok_or_else(|| Error::param("no diagnostics to aggregate"))?;
    let n = first.0.len();
    if items.iter().any(|(d, _)| d.len() != n) {
        return Err(Error::shape("diagnostics with different truncations"));
    }
    if items.iter().any(|(_, w)| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::param("weights must be finite and non-negative"));
    }
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return Err(Error::param("weights sum to zero"));
    }
    let mut psd_x = vec![0.0; n];
    let mut psd_y = vec![0.0; n];
    let mut cross = vec![0.0; n];
    for k in 0..n {
        let (mut wx, mut wc, mut wsum) = (0.0, 0.0, 0.0);
        for (d, w) in items {
            let py = d.psd_y[k];
            if py <= 0.0 || *w == 0.0 {
                continue;
            }
            wx += w * d.psd_x[k] / py;
            wc += w * d.cross[k] / py;
            wsum += w;
        }
        if wsum > 0.0 {
            psd_x[k] = wx / wsum;
            psd_y[k] = 1.0;
            cross[k] = wc / wsum;
        }
    }
    SpectralDiagnostics::from_spectra(psd_x, psd_y, cross)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{power_law_psd, random_spectral};
    use crate::sht::{spectral_mse, Truncation};
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_spec(k: usize, seed: u64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_spectral(Truncation(k), |_| 1.0, &mut rng)
    }

    #[test]
    fn identical_fields() {
        let x = rand_spec(20, 1);
        let d = diagnostics(&x, &x).unwrap();
        for k in 0..=20 {
            assert!((d.coherence[k] - 1.0).abs() < 1e-14);
            assert!((d.amplitude_ratio[k] - 1.0).abs() < 1e-14);
        }
        let terms = mse_decomposition(&x, &x).unwrap();
        assert!(terms.iter().all(|t| t.amplitude == 0.0 && t.decoherence.abs() < 1e-15));
    }

    #[test]
    fn negated_fields() {
        let x = rand_spec(20, 2);
        let d = diagnostics(&x, &x.scaled(-1.0)).unwrap();
        assert!(d.coherence.iter().all(|c| (c + 1.0).abs() < 1e-14));
    }

    #[test]
    fn zero_power_conventions() {
        assert_eq!(coherence(0.0, 1.0, 0.0), 0.0);
        assert_eq!(amplitude_ratio(0.0, 0.0), 1.0);
        assert_eq!(amplitude_ratio(1.0, 0.0), f64::INFINITY);
        let z = SpectralField::zeros(Truncation(3));
        let d = diagnostics(&z, &rand_spec(3, 1)).unwrap();
        assert!(d.coherence.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn doubled_single_mode() {
        let tr = Truncation(6);
        let y = SpectralField::mode(tr, 4, 2, Complex64::new(0.3, -0.7)).unwrap();
        let terms = mse_decomposition(&y.scaled(2.0), &y).unwrap();
        let py = power_spectrum(&y)[4];
        assert!((terms[4].amplitude - py).abs() < 1e-15);
        assert!(terms[4].decoherence.abs() < 1e-15);
    }

    #[test]
    fn mse_identities_on_random_pairs() {
        for seed in 0..10 {
            let (x, y) = (rand_spec(30, seed), rand_spec(30, seed + 100));
            let mse = spectral_mse(&x, &y).unwrap();
            let d = diagnostics(&x, &y).unwrap();
            let eq4: f64 = (0..=30)
                .map(|k| {
                    d.psd_x[k] + d.psd_y[k]
                        - 2.0 * (d.psd_x[k] * d.psd_y[k]).sqrt() * d.coherence[k]
                })
                .sum();
            assert!((eq4 - mse).abs() <= 1e-10 * mse);
            let terms = mse_decomposition(&x, &y).unwrap();
            let eq5: f64 = terms.iter().map(MseTerms::total).sum();
            assert!((eq5 - mse).abs() <= 1e-10 * mse);
            assert!(terms.iter().all(|t| t.amplitude >= 0.0 && t.decoherence >= -1e-12));
        }
    }

    #[test]
    fn highpass_values() {
        assert_eq!(highpass_response(50.0, 50.0), 0.5);
        assert_eq!(highpass_response(0.0, 50.0), 0.0);
        assert!((highpass_response(100.0, 50.0) - 16.0 / 17.0).abs() < 1e-15);
        let x = rand_spec(8, 3);
        let h = highpass(&x, 4.0).unwrap();
        assert_eq!(h.get(0, 0), Complex64::new(0.0, 0.0));
        assert!(highpass(&x, 0.0).is_err());
        assert!(highpass(&x, -1.0).is_err());
    }

    #[test]
    fn highpass_twice_multiplies_response_squared() {
        let x = rand_spec(30, 4);
        let twice = highpass(&highpass(&x, 10.0).unwrap(), 10.0).unwrap();
        for (k, l) in Truncation(30).modes() {
            let r = highpass_response(k as f64, 10.0);
            let expect = x.get(k, l) * r * r;
            assert!((twice.get(k, l) - expect).norm() <= 1e-15 * (1.0 + expect.norm()));
        }
    }

    #[test]
    fn flat_ratio_has_no_crossing() {
        let x = rand_spec(42, 5);
        let d = diagnostics(&x, &x).unwrap();
        assert_eq!(effective_resolution(&d, ResolutionMode::Dissipation), None);
        assert_eq!(effective_resolution(&d, ResolutionMode::Noise), None);
    }

    #[test]
    fn lowpass_dissipation_crossing() {
        // Solve k0^4/(k0^4+k^4) = sqrt(0.75) for k: k = k0 (1/sqrt(0.75) - 1)^(1/4).
        let k0: f64 = 20.0;
        let analytic = k0 * (1.0 / 0.75f64.sqrt() - 1.0).powf(0.25);
        assert!((analytic - 12.54).abs() < 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let psd = power_law_psd(Truncation(42), 2.0);
        let y = random_spectral(Truncation(42), |k| psd[k], &mut rng);
        let x = lowpass(&y, k0).unwrap();
        let d = diagnostics(&x, &y).unwrap();
        let k = effective_resolution(&d, ResolutionMode::Dissipation).unwrap();
        assert_eq!(k, analytic.ceil() as usize);

        // Applying the same response to power instead of amplitude moves the
        // crossing to k0 * (1/3)^(1/4) ≈ 15.2.
        let x = y.scaled_by_degree(|k| lowpass_response(k as f64, k0).sqrt());
        let d = diagnostics(&x, &y).unwrap();
        assert_eq!(effective_resolution(&d, ResolutionMode::Dissipation), Some(16));
    }

    #[test]
    fn persistence_window_skips_blips() {
        let mut ratio = vec![1.0; 20];
        ratio[6] = 0.5;
        ratio[10..].iter_mut().for_each(|r| *r = 0.5);
        let d = SpectralDiagnostics {
            psd_x: vec![1.0; 20],
            psd_y: vec![1.0; 20],
            cross: vec![1.0; 20],
            coherence: vec![1.0; 20],
            amplitude_ratio: ratio,
        };
        assert_eq!(effective_resolution(&d, ResolutionMode::Dissipation), Some(10));
        let mut early = d.clone();
        early.amplitude_ratio[..4].iter_mut().for_each(|r| *r = 0.1);
        early.amplitude_ratio[4..].iter_mut().for_each(|r| *r = 1.0);
        assert_eq!(effective_resolution(&early, ResolutionMode::Dissipation), None);
    }

    #[test]
    fn aggregation_cases() {
        let (x, y) = (rand_spec(10, 1), rand_spec(10, 2));
        let d = diagnostics(&x, &y).unwrap();
        let one = aggregate_diagnostics(&[(d.clone(), 1.0)]).unwrap();
        let two = aggregate_diagnostics(&[(d.clone(), 0.3), (d.clone(), 2.0)]).unwrap();
        for k in 0..=10 {
            for agg in [&one, &two] {
                assert!((agg.amplitude_ratio[k] - d.amplitude_ratio[k]).abs() < 1e-13);
                assert!((agg.coherence[k] - d.coherence[k]).abs() < 1e-13);
            }
        }
        let anti = diagnostics(&x, &x.scaled(-1.0)).unwrap();
        let same = diagnostics(&x, &x).unwrap();
        let mixed = aggregate_diagnostics(&[(anti, 1.0), (same, 1.0)]).unwrap();
        assert!(mixed.coherence.iter().all(|c| c.abs() < 1e-14));
        assert!(aggregate_diagnostics(&[]).is_err());
        assert!(aggregate_diagnostics(&[(d.clone(), 0.0)]).is_err());
        assert!(aggregate_diagnostics(&[(d, -1.0)]).is_err());
    }

    proptest! {
        #[test]
        fn resolution_invariant_under_common_scaling(seed in 0u64..1000, scale in 0.01f64..100.0, k0 in 8.0f64..30.0) {
            let y = rand_spec(42, seed);
            let x = lowpass(&y, k0).unwrap();
            let d1 = diagnostics(&x, &y).unwrap();
            let d2 = diagnostics(&x.scaled(scale), &y.scaled(scale)).unwrap();
            for mode in [ResolutionMode::Dissipation, ResolutionMode::Noise] {
                prop_assert_eq!(effective_resolution(&d1, mode), effective_resolution(&d2, mode));
            }
        }

        #[test]
        fn coherence_bounded(seed in 0u64..10_000) {
            let d = diagnostics(&rand_spec(15, seed), &rand_spec(15, seed ^ 0xabcd)).unwrap();
            prop_assert!(d.coherence.iter().all(|c| c.abs() <= 1.0 + 1e-12));
        }
    }
}
