//! Loss functions: spectral MSE, the amplitude-adjusted AMSE, area-weighted
//! MAE, their gradients with respect to gridpoint values, multi-variable
//! aggregation and the scalar optimum studies.
//!
//! AMSE replaces the `√(psd_x psd_y)` factor of the MSE decoherence term by
//! `max(psd_x, psd_y)`:
//!
//! ```text
//! AMSE = Σ_k (√psd_x − √psd_y)² + 2 max(psd_x, psd_y) (1 − coh_k)
//! ```
//!
//! so that the amplitude term alone decides the optimal spectral magnitude.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use crate::diag::{coherence, cross_spectrum, mse_decomposition_from_spectra, power_spectrum};
use crate::error::{Error, Result};
use crate::grid::{area_mean_square_error, check_same_grid, GridField};
use crate::grid::Grid;
use crate::random::random_spectral;
use crate::sht::{check_same_truncation, spectral_mse, zonal_weight, SpectralField, Transform, Truncation};

/// Floor applied to powers inside square roots and quotients of gradients.
pub const PSD_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Mse,
    Amse,
    Mae,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Amse => "amse",
            LossKind::Mae => "mae",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "amse" => Ok(LossKind::Amse),
            "mae" => Ok(LossKind::Mae),
            other => Err(Error::param(format!("unknown loss kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub kind: LossKind,
    pub total: f64,
    pub per_k_amplitude: Vec<f64>,
    pub per_k_decoherence: Vec<f64>,
}

/// Optional relative weight on the AMSE decoherence term (1 by default).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmseOptions {
    pub decoherence_weight: f64,
}

impl Default for AmseOptions {
    fn default() -> Self {
        AmseOptions {
            decoherence_weight: 1.0,
        }
    }
}

/// AMSE evaluated from per-wavenumber powers and cross powers.
pub fn amse_from_spectra(psd_x: &[f64], psd_y: &[f64], cross: &[f64], opts: &AmseOptions) -> LossBreakdown {
    let n = psd_x.len();
    let mut per_k_amplitude = Vec::with_capacity(n);
    let mut per_k_decoherence = Vec::with_capacity(n);
    for k in 0..n {
        let (px, py) = (psd_x[k], psd_y[k]);
        let d = px.sqrt() - py.sqrt();
        per_k_amplitude.push(d * d);
        let coh = coherence(px, py, cross[k]);
        per_k_decoherence.push(2.0 * opts.decoherence_weight * px.max(py) * (1.0 - coh));
    }
    let total = per_k_amplitude.iter().sum::<f64>() + per_k_decoherence.iter().sum::<f64>();
    LossBreakdown {
        kind: LossKind::Amse,
        total,
        per_k_amplitude,
        per_k_decoherence,
    }
}

pub fn amse(x: &SpectralField, y: &SpectralField) -> Result<LossBreakdown> {
    amse_with(x, y, &AmseOptions::default())
}

pub fn amse_with(x: &SpectralField, y: &SpectralField, opts: &AmseOptions) -> Result<LossBreakdown> {
    let cross = cross_spectrum(x, y)?;
    Ok(amse_from_spectra(&power_spectrum(x), &power_spectrum(y), &cross, opts))
}

/// Spectral MSE with its amplitude/decoherence split.
pub fn mse(x: &SpectralField, y: &SpectralField) -> Result<LossBreakdown> {
    let total = spectral_mse(x, y)?;
    let cross = cross_spectrum(x, y)?;
    let terms = mse_decomposition_from_spectra(&power_spectrum(x), &power_spectrum(y), &cross);
    Ok(LossBreakdown {
        kind: LossKind::Mse,
        total,
        per_k_amplitude: terms.iter().map(|t| t.amplitude).collect(),
        per_k_decoherence: terms.iter().map(|t| t.decoherence).collect(),
    })
}

/// Area-weighted mean absolute error `Σ dA |x − y|`.
pub fn mae(x: &GridField, y: &GridField) -> Result<f64> {
    check_same_grid(x, y)?;
    let (xv, yv) = (x.values(), y.values());
    Ok(x.area_sum_by(|p| (xv[p] - yv[p]).abs()))
}

/// `∂MAE/∂x = dA sign(x − y)`, with 0 where they agree.
pub fn mae_gradient(x: &GridField, y: &GridField) -> Result<GridField> {
    check_same_grid(x, y)?;
    let grid = x.grid();
    let nlon = grid.nlon();
    let values = x
        .values()
        .iter()
        .zip(y.values())
        .enumerate()
        .map(|(p, (a, b))| {
            let d = a - b;
            let s = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            s * grid.area_weight(p / nlon)
        })
        .collect();
    GridField::new(grid.clone(), values)
}

/// `2 dA (x − y)`, the gradient of the gridpoint MSE.
pub fn spatial_mse_gradient(x: &GridField, y: &GridField) -> Result<GridField> {
    check_same_grid(x, y)?;
    let grid = x.grid();
    let nlon = grid.nlon();
    let values = x
        .values()
        .iter()
        .zip(y.values())
        .enumerate()
        .map(|(p, (a, b))| 2.0 * grid.area_weight(p / nlon) * (a - b))
        .collect();
    GridField::new(grid.clone(), values)
}

/// Per-wavenumber partial derivatives of a spectral loss with respect to
/// the prediction's power `psd_x` and the cross power.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralPartials {
    pub d_psd: Vec<f64>,
    pub d_cross: Vec<f64>,
}

pub fn mse_partials(nk: usize) -> SpectralPartials {
    SpectralPartials {
        d_psd: vec![1.0; nk],
        d_cross: vec![-2.0; nk],
    }
}

/// Partials of AMSE. Ties `psd_x = psd_y` take the `psd_y` branch of the max.
pub fn amse_partials(psd_x: &[f64], psd_y: &[f64], cross: &[f64], opts: &AmseOptions) -> SpectralPartials {
    let beta = opts.decoherence_weight;
    let n = psd_x.len();
    let mut d_psd = Vec::with_capacity(n);
    let mut d_cross = Vec::with_capacity(n);
    for k in 0..n {
        let a = psd_x[k].max(PSD_FLOOR);
        let b = psd_y[k].max(PSD_FLOOR);
        let c = cross[k];
        let (sa, sb) = (a.sqrt(), b.sqrt());
        let d_amp = 1.0 - sb / sa;
        if psd_x[k] > psd_y[k] {
            // 2β (A − C √A / √B)
            d_psd.push(d_amp + 2.0 * beta * (1.0 - c / (2.0 * sa * sb)));
            d_cross.push(-2.0 * beta * sa / sb);
        } else {
            // 2β (B − C √B / √A)
            d_psd.push(d_amp + beta * c * sb / (a * sa));
            d_cross.push(-2.0 * beta * sb / sa);
        }
    }
    SpectralPartials { d_psd, d_cross }
}

/// Chain rule from per-wavenumber partials to coefficient gradients:
/// `∂L/∂α_x(k,l) = w(l) (2 α_x d_psd + α_y d_cross)`, real and imaginary
/// parts packed as a complex number.
pub fn coefficient_gradient(x: &SpectralField, y: &SpectralField, partials: &SpectralPartials) -> Result<SpectralField> {
    check_same_truncation(x, y)?;
    let trunc = x.truncation();
    if partials.d_psd.len() != trunc.max_wavenumber() + 1 {
        return Err(Error::shape("partials length does not match truncation"));
    }
    let mut g = SpectralField::zeros(trunc);
    for (k, l) in trunc.modes() {
        let v = (x.get(k, l) * (2.0 * partials.d_psd[k]) + y.get(k, l) * partials.d_cross[k]) * zonal_weight(l);
        g.set(k, l, v);
    }
    Ok(g)
}

/// Gradient of a spectral loss with respect to the prediction's gridpoint
/// values, through the adjoint of the forward transform.
fn grid_gradient(
    transform: &Transform,
    x: &GridField,
    y: &GridField,
    partials: impl FnOnce(&[f64], &[f64], &[f64]) -> SpectralPartials,
) -> Result<GridField> {
    check_same_grid(x, y)?;
    let ax = transform.analyze(x)?;
    let ay = transform.analyze(y)?;
    let cross = cross_spectrum(&ax, &ay)?;
    let p = partials(&power_spectrum(&ax), &power_spectrum(&ay), &cross);
    let g = coefficient_gradient(&ax, &ay, &p)?;
    transform.analyze_adjoint(&g)
}

/// `∂ AMSE(analyze(x), analyze(y)) / ∂x`.
pub fn amse_gradient(transform: &Transform, x: &GridField, y: &GridField) -> Result<GridField> {
    amse_gradient_with(transform, x, y, &AmseOptions::default())
}

pub fn amse_gradient_with(transform: &Transform, x: &GridField, y: &GridField, opts: &AmseOptions) -> Result<GridField> {
    grid_gradient(transform, x, y, |px, py, c| amse_partials(px, py, c, opts))
}

/// `∂ MSE(analyze(x), analyze(y)) / ∂x`; equals `2 dA (x − y)` when the
/// difference is band-limited.
pub fn mse_gradient(transform: &Transform, x: &GridField, y: &GridField) -> Result<GridField> {
    grid_gradient(transform, x, y, |px, _, _| mse_partials(px.len()))
}

/// Loss of one kind between two grid fields; spectral kinds use the
/// transform's truncation.
pub fn loss_total(kind: LossKind, transform: &Transform, x: &GridField, y: &GridField) -> Result<f64> {
    match kind {
        LossKind::Mae => mae(x, y),
        LossKind::Mse => Ok(mse(&transform.analyze(x)?, &transform.analyze(y)?)?.total),
        LossKind::Amse => Ok(amse(&transform.analyze(x)?, &transform.analyze(y)?)?.total),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableWeight {
    pub name: String,
    pub weight: f64,
    pub level_weight: f64,
    pub std: f64,
}

/// Per-variable weights, level weights and normalizing standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableWeighting {
    entries: Vec<VariableWeight>,
}

impl VariableWeighting {
    pub fn new(entries: Vec<VariableWeight>) -> Result<Self> {
        for e in &entries {
            if !(e.weight >= 0.0 && e.level_weight >= 0.0) || !e.weight.is_finite() || !e.level_weight.is_finite() {
                return Err(Error::param(format!("weights for `{}` must be non-negative", e.name)));
            }
            if !(e.std > 0.0) || !e.std.is_finite() {
                return Err(Error::param(format!("std for `{}` must be positive", e.name)));
            }
        }
        if !entries.iter().any(|e| e.weight * e.level_weight > 0.0) {
            return Err(Error::param("no variable has a positive weight"));
        }
        Ok(VariableWeighting { entries })
    }

    /// Parses `name,weight,level_weight,std` lines. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != 4 {
                return Err(Error::param(format!("line {}: expected name,weight,level_weight,std", n + 1)));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::param(format!("line {}: not a number: {s:?}", n + 1)))
            };
            entries.push(VariableWeight {
                name: parts[0].to_string(),
                weight: num(parts[1])?,
                level_weight: num(parts[2])?,
                std: num(parts[3])?,
            });
        }
        Self::new(entries)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::in_file(path, e))
    }

    pub fn entries(&self) -> &[VariableWeight] {
        &self.entries
    }
}

/// `Σ_v w_v level_v L(x_v / s_v, y_v / s_v)`.
pub fn weighted_multivariable_loss(
    fields_x: &BTreeMap<String, GridField>,
    fields_y: &BTreeMap<String, GridField>,
    weighting: &VariableWeighting,
    kind: LossKind,
    transform: &Transform,
) -> Result<f64> {
    let mut total = 0.0;
    for e in weighting.entries() {
        let x = fields_x
            .get(&e.name)
            .ok_or_else(|| Error::MissingVariable(e.name.clone()))?;
        let y = fields_y
            .get(&e.name)
            .ok_or_else(|| Error::MissingVariable(e.name.clone()))?;
        let factor = e.weight * e.level_weight;
        if factor == 0.0 {
            continue;
        }
        let inv = 1.0 / e.std;
        total += factor * loss_total(kind, transform, &x.scaled(inv), &y.scaled(inv))?;
    }
    Ok(total)
}

/// Result of minimizing the Gaussian KL objective over the forecast
/// standard deviation with the reference standard deviation fixed at 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlOptimum {
    pub rho: f64,
    pub optimal_sigma_ratio: f64,
    pub objective_value: f64,
    /// Objective derivative at the returned point.
    pub gradient: f64,
}

/// `log(σ²(1−ρ²)) + (1 − ρσ)² / (2σ²(1−ρ²))`, up to a constant.
pub fn kl_objective(sigma: f64, rho: f64) -> f64 {
    let c = 1.0 - rho * rho;
    let r = 1.0 - rho * sigma;
    (sigma * sigma * c).ln() + r * r / (2.0 * sigma * sigma * c)
}

pub fn kl_objective_derivative(sigma: f64, rho: f64) -> f64 {
    let c = 1.0 - rho * rho;
    let u = 1.0 / sigma;
    // In u = 1/σ the second term is (u − ρ)² / (2c); du/dσ = −u².
    2.0 * u - (u - rho) / c * u * u
}

/// Minimizes [`kl_objective`] by bracketing a sign change of its derivative
/// and bisecting.
pub fn kl_optimum(rho: f64) -> Result<KlOptimum> {
    if !(rho > 0.0 && rho < 1.0 - 1e-6) {
        return Err(Error::param(format!("rho must lie in (0, 1 - 1e-6), got {rho}")));
    }
    let d = |s: f64| kl_objective_derivative(s, rho);
    let mut lo = 1e-3;
    while d(lo) >= 0.0 {
        lo *= 0.5;
    }
    let mut hi = 1.0;
    while d(hi) <= 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if d(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sigma = 0.5 * (lo + hi);
    Ok(KlOptimum {
        rho,
        optimal_sigma_ratio: sigma,
        objective_value: kl_objective(sigma, rho),
        gradient: d(sigma),
    })
}

/// Expected single-mode loss for a prediction with standard deviation
/// `sigma` and correlation `rho` against a unit-variance target.
pub fn expected_single_mode_loss(sigma: f64, rho: f64, kind: LossKind) -> Result<f64> {
    match kind {
        LossKind::Mse => Ok(sigma * sigma + 1.0 - 2.0 * sigma * rho),
        LossKind::Amse => Ok((1.0 - sigma).powi(2) + 2.0 * (sigma * sigma).max(1.0) * (1.0 - rho)),
        LossKind::Mae => Err(Error::param("no closed-form single-mode MAE")),
    }
}

/// Step of the dense sweep in [`analytic_optimum_sweep`].
pub const SWEEP_STEP: f64 = 1e-3;

/// Dense sweep of [`expected_single_mode_loss`] over `σ ∈ [0, 2]`.
pub fn analytic_optimum_sweep(rho: f64, kind: LossKind) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::param(format!("rho must lie in [0, 1], got {rho}")));
    }
    let n = (2.0 / SWEEP_STEP).round() as usize;
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=n {
        let sigma = i as f64 * SWEEP_STEP;
        let v = expected_single_mode_loss(sigma, rho, kind)?;
        if v < best.0 {
            best = (v, sigma);
        }
    }
    Ok(best.1)
}

/// Area-weighted MSE of two grid fields, re-exported for symmetry with the
/// other losses.
pub fn spatial_mse(x: &GridField, y: &GridField) -> Result<f64> {
    area_mean_square_error(x, y)
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub trials: usize,
    pub max_relative_error: f64,
}

/// Compares [`amse_gradient`] with central differences of the loss along
/// random directions, on random pairs at truncation `trunc`.
///
/// Each trial draws a band-limited pair plus gridpoint noise and a random
/// direction; the error is `|fd − ⟨g, v⟩| / max(|fd|, |⟨g, v⟩|)`.
pub fn amse_gradient_check(trunc: Truncation, trials: usize, seed: u64) -> Result<GradientCheck> {
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    if trials == 0 {
        return Err(Error::param("at least one trial is required"));
    }
    let k = trunc.max_wavenumber();
    let grid = Arc::new(Grid::gaussian(k + 2, 2 * k + 4)?);
    let t = Transform::new(grid.clone(), trunc)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let field = |rng: &mut rand_chacha::ChaCha8Rng| -> Result<GridField> {
            let s = random_spectral(trunc, |_| 1.0, rng);
            let smooth = t.synthesize(&s)?;
            let noise: Vec<f64> = (0..grid.len()).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
            smooth.add_scaled(1.0, &GridField::new(grid.clone(), noise)?)
        };
        let x = field(&mut rng)?;
        let y = field(&mut rng)?;
        let v = field(&mut rng)?;
        let g = amse_gradient(&t, &x, &y)?;
        let analytic: f64 = g.values().iter().zip(v.values()).map(|(a, b)| a * b).sum();
        let h = 1e-5;
        let lp = loss_total(LossKind::Amse, &t, &x.add_scaled(h, &v)?, &y)?;
        let lm = loss_total(LossKind::Amse, &t, &x.add_scaled(-h, &v)?, &y)?;
        let fd = (lp - lm) / (2.0 * h);
        let denom = fd.abs().max(analytic.abs());
        if denom > 0.0 {
            worst = worst.max((fd - analytic).abs() / denom);
        }
    }
    Ok(GradientCheck {
        trials,
        max_relative_error: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_spec(k: usize, seed: u64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_spectral(Truncation(k), |_| 1.0, &mut rng)
    }

    #[test]
    fn amse_zero_on_equal_inputs() {
        let x = rand_spec(12, 1);
        let b = amse(&x, &x).unwrap();
        assert_eq!(b.total, 0.0);
        let z = SpectralField::zeros(Truncation(4));
        assert_eq!(amse(&z, &z).unwrap().total, 0.0);
    }

    #[test]
    fn single_mode_hand_values() {
        // psd_x = 4, psd_y = 1 at one wavenumber.
        let tr = Truncation(2);
        let y = SpectralField::mode(tr, 1, 0, Complex64::new(1.0, 0.0)).unwrap();
        let x = y.scaled(2.0);
        assert!((amse(&x, &y).unwrap().total - 1.0).abs() < 1e-15);
        assert!((mse(&x, &y).unwrap().total - 1.0).abs() < 1e-15);
        // Orthogonal modes at the same k give coherence 0.
        let mut xo = SpectralField::zeros(tr);
        xo.set(1, 1, Complex64::new(2f64.sqrt(), 0.0));
        let d = crate::diag::diagnostics(&xo, &y).unwrap();
        assert_eq!((d.psd_x[1], d.psd_y[1], d.coherence[1]), (4.0000000000000009, 1.0, 0.0));
        assert!((amse(&xo, &y).unwrap().total - 9.0).abs() < 1e-14);
        assert!((mse(&xo, &y).unwrap().total - 5.0).abs() < 1e-14);
    }

    #[test]
    fn mae_and_constant_offsets() {
        let g = Arc::new(Grid::gaussian(8, 16).unwrap());
        let one = GridField::constant(g.clone(), 1.0).unwrap();
        let zero = GridField::zeros(g.clone());
        assert_eq!(mae(&one, &one).unwrap(), 0.0);
        assert!((mae(&one, &zero).unwrap() - 1.0).abs() < 1e-15);
        let t = Transform::new(g, Truncation(7)).unwrap();
        assert!((loss_total(LossKind::Mse, &t, &one, &zero).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_gradient_at_identity() {
        let g = Arc::new(Grid::gaussian(16, 32).unwrap());
        let t = Transform::new(g, Truncation(10)).unwrap();
        let x = t.synthesize(&rand_spec(10, 3)).unwrap();
        let grad = amse_gradient(&t, &x, &x).unwrap();
        assert!(grad.values().iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn amse_is_at_least_mse() {
        for seed in 0..20 {
            let (x, y) = (rand_spec(10, seed), rand_spec(10, seed + 50).scaled(0.3));
            assert!(amse(&x, &y).unwrap().total >= mse(&x, &y).unwrap().total - 1e-12);
        }
    }

    #[test]
    fn decoherence_weight_scales_second_term() {
        let (x, y) = (rand_spec(8, 1), rand_spec(8, 2));
        let a = amse(&x, &y).unwrap();
        let b = amse_with(&x, &y, &AmseOptions { decoherence_weight: 0.5 }).unwrap();
        assert_eq!(a.per_k_amplitude, b.per_k_amplitude);
        for (p, q) in a.per_k_decoherence.iter().zip(&b.per_k_decoherence) {
            assert!((0.5 * p - q).abs() <= 1e-15 * p.abs().max(1.0));
        }
    }

    #[test]
    fn weighting_parse_and_validate() {
        let w = VariableWeighting::parse("# comment\nz500,1.0,0.5,2.0\n\nt850, 2, 1, 3\n").unwrap();
        assert_eq!(w.entries().len(), 2);
        assert_eq!(w.entries()[1].name, "t850");
        assert!(VariableWeighting::parse("a,1,1").is_err());
        assert!(VariableWeighting::parse("a,1,1,0").is_err());
        assert!(VariableWeighting::parse("a,0,1,1").is_err());
        assert!(VariableWeighting::parse("a,-1,1,1\nb,1,1,1").is_err());
    }

    #[test]
    fn multivariable_aggregation() {
        let g = Arc::new(Grid::gaussian(16, 32).unwrap());
        let t = Transform::new(g, Truncation(10)).unwrap();
        let f = |s| t.synthesize(&rand_spec(10, s)).unwrap();
        let xs: BTreeMap<_, _> = [("a".to_string(), f(1)), ("b".to_string(), f(2))].into();
        let ys: BTreeMap<_, _> = [("a".to_string(), f(3)), ("b".to_string(), f(4))].into();
        for kind in [LossKind::Mse, LossKind::Amse, LossKind::Mae] {
            let single = VariableWeighting::parse("a,1,1,1").unwrap();
            let plain = loss_total(kind, &t, &xs["a"], &ys["a"]).unwrap();
            let got = weighted_multivariable_loss(&xs, &ys, &single, kind, &t).unwrap();
            assert!((got - plain).abs() <= 1e-14 * plain);

            let both = VariableWeighting::parse("a,2,1,1\nb,1,1,1").unwrap();
            let lb = loss_total(kind, &t, &xs["b"], &ys["b"]).unwrap();
            let got = weighted_multivariable_loss(&xs, &ys, &both, kind, &t).unwrap();
            assert!((got - (2.0 * plain + lb)).abs() <= 1e-12 * got);
        }
        let halfstd = VariableWeighting::parse("a,1,1,1\nb,1,1,1").unwrap();
        let dbl = VariableWeighting::parse("a,1,1,2\nb,1,1,2").unwrap();
        let l1 = weighted_multivariable_loss(&xs, &ys, &halfstd, LossKind::Mse, &t).unwrap();
        let l2 = weighted_multivariable_loss(&xs, &ys, &dbl, LossKind::Mse, &t).unwrap();
        assert!((l1 / 4.0 - l2).abs() <= 1e-13 * l1);
        let missing = VariableWeighting::parse("c,1,1,1").unwrap();
        assert!(matches!(
            weighted_multivariable_loss(&xs, &ys, &missing, LossKind::Mse, &t),
            Err(Error::MissingVariable(_))
        ));
    }

    #[test]
    fn kl_optimum_properties() {
        let o = kl_optimum(0.4).unwrap();
        assert!((o.optimal_sigma_ratio - 0.66).abs() <= 0.02);
        assert!(o.gradient.abs() <= 1e-8);
        let s = o.optimal_sigma_ratio;
        assert!(kl_objective(s, 0.4) < kl_objective(s + 1e-4, 0.4));
        assert!(kl_objective(s, 0.4) < kl_objective(s - 1e-4, 0.4));
        assert!(kl_optimum(0.1).unwrap().optimal_sigma_ratio > s);
        assert!(kl_optimum(0.9).unwrap().optimal_sigma_ratio > s);
        for bad in [0.0, 1.0, -0.2, 0.9999999, f64::NAN] {
            assert!(kl_optimum(bad).is_err());
        }
    }

    #[test]
    fn kl_matches_stationarity_in_inverse_sigma() {
        // Independent route: in u = 1/σ the objective is −2 ln u + (u − ρ)²/(2c)
        // up to a constant, stationary at u² − ρu − 2c = 0.
        for rho in [0.05, 0.2, 0.4, 0.6, 0.8, 0.95] {
            let c: f64 = 1.0 - rho * rho;
            let u = 0.5 * (rho + (rho * rho + 8.0 * c).sqrt());
            let got = kl_optimum(rho).unwrap().optimal_sigma_ratio;
            assert!((got - 1.0 / u).abs() < 1e-10, "rho={rho}");
        }
    }

    #[test]
    fn sweep_optima() {
        assert!((analytic_optimum_sweep(0.6, LossKind::Mse).unwrap() - 0.6).abs() <= 5e-4);
        assert!((analytic_optimum_sweep(1.0, LossKind::Mse).unwrap() - 1.0).abs() <= 5e-4);
        for rho in [0.0, 0.25, 0.5, 0.99, 1.0] {
            assert!((analytic_optimum_sweep(rho, LossKind::Amse).unwrap() - 1.0).abs() <= 5e-4);
        }
        assert!(analytic_optimum_sweep(1.5, LossKind::Mse).is_err());
        assert!(analytic_optimum_sweep(0.5, LossKind::Mae).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn amse_symmetric_and_non_negative(s1 in 0u64..100_000, s2 in 0u64..100_000, a in 0.01f64..10.0) {
            let x = rand_spec(9, s1).scaled(a);
            let y = rand_spec(9, s2);
            let xy = amse(&x, &y).unwrap();
            let yx = amse(&y, &x).unwrap();
            prop_assert_eq!(xy.total, yx.total);
            prop_assert!(xy.total > 1e-12);
            prop_assert!(xy.per_k_amplitude.iter().chain(&xy.per_k_decoherence).all(|&t| t >= -1e-12));
            let sum: f64 = xy.per_k_amplitude.iter().chain(&xy.per_k_decoherence).sum();
            prop_assert!((sum - xy.total).abs() <= 1e-12 * xy.total);
        }
    }
}
