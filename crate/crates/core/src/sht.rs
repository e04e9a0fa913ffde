//! Spherical-harmonic analysis and synthesis on latitude–longitude grids.
//!
//! Harmonics are `Y_k^l = P̄_k^l(sin lat) e^{i l lon}` with the normalization
//! of [`crate::legendre`], so under the unit-mass area measure the
//! latitude-weighted mean square of a band-limited real field equals
//! `Σ_k Σ_{l ≥ 0} w(l) |α(k, l)|²` with `w(0) = 1` and `w(l > 0) = 2`. Only
//! non-negative zonal wavenumbers are stored; `α(k, -l) = conj(α(k, l))`.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridField};
use crate::legendre::LegendreTable;

/// Triangular truncation: all modes with total wavenumber `k ≤ K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Truncation(pub usize);

impl Truncation {
    pub fn max_wavenumber(self) -> usize {
        self.0
    }

    /// Number of stored coefficients, `(K+1)(K+2)/2`.
    pub fn len(self) -> usize {
        (self.0 + 1) * (self.0 + 2) / 2
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn index(self, k: usize, l: usize) -> usize {
        debug_assert!(l <= k && k <= self.0);
        k * (k + 1) / 2 + l
    }

    /// `K ≤ nlat - 1` and `2K + 1 ≤ nlon`.
    pub fn admissible_for(self, grid: &Grid) -> bool {
        self.0 < grid.nlat() && 2 * self.0 < grid.nlon()
    }

    pub fn check_admissible(self, grid: &Grid) -> Result<()> {
        if self.admissible_for(grid) {
            Ok(())
        } else {
            Err(Error::param(format!(
                "truncation T{} needs nlat > {} and nlon > {}; grid is {}x{}",
                self.0,
                self.0,
                2 * self.0,
                grid.nlat(),
                grid.nlon()
            )))
        }
    }

    /// Iterator over `(k, l)` in storage order.
    pub fn modes(self) -> impl Iterator<Item = (usize, usize)> {
        (0..=self.0).flat_map(|k| (0..=k).map(move |l| (k, l)))
    }
}

/// Conjugate-pair multiplicity of a stored zonal wavenumber.
#[inline]
pub fn zonal_weight(l: usize) -> f64 {
    if l == 0 {
        1.0
    } else {
        2.0
    }
}

/// Spectral coefficients `α(k, l)`, `0 ≤ l ≤ k ≤ K`, k-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    trunc: Truncation,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(trunc: Truncation) -> Self {
        SpectralField {
            trunc,
            coeffs: vec![Complex64::new(0.0, 0.0); trunc.len()],
        }
    }

    /// Validates the coefficient count and the real-field constraint
    /// `Im α(k, 0) = 0`.
    pub fn from_coeffs(trunc: Truncation, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != trunc.len() {
            return Err(Error::shape(format!(
                "T{} needs {} coefficients, got {}",
                trunc.0,
                trunc.len(),
                coeffs.len()
            )));
        }
        for k in 0..=trunc.0 {
            let c = coeffs[trunc.index(k, 0)];
            if c.im != 0.0 {
                return Err(Error::param(format!("Im α({k},0) = {} must be zero", c.im)));
            }
        }
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::param("non-finite spectral coefficient"));
        }
        Ok(SpectralField { trunc, coeffs })
    }

    pub(crate) fn from_parts(trunc: Truncation, coeffs: Vec<Complex64>) -> Self {
        debug_assert_eq!(coeffs.len(), trunc.len());
        SpectralField { trunc, coeffs }
    }

    /// A single basis mode with the given coefficient.
    pub fn mode(trunc: Truncation, k: usize, l: usize, value: Complex64) -> Result<Self> {
        if l > k || k > trunc.0 {
            return Err(Error::param(format!("mode ({k},{l}) outside T{}", trunc.0)));
        }
        let mut s = Self::zeros(trunc);
        s.set(k, l, value);
        Ok(s)
    }

    pub fn truncation(&self) -> Truncation {
        self.trunc
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn get(&self, k: usize, l: usize) -> Complex64 {
        self.coeffs[self.trunc.index(k, l)]
    }

    /// Sets a coefficient; the imaginary part is dropped when `l = 0`.
    pub fn set(&mut self, k: usize, l: usize, value: Complex64) {
        let v = if l == 0 { Complex64::new(value.re, 0.0) } else { value };
        let idx = self.trunc.index(k, l);
        self.coeffs[idx] = v;
    }

    /// Coefficients of total wavenumber `k`, `l = 0..=k`.
    pub fn degree(&self, k: usize) -> &[Complex64] {
        let start = self.trunc.index(k, 0);
        &self.coeffs[start..start + k + 1]
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self::from_parts(self.trunc, self.coeffs.iter().map(|c| c * a).collect())
    }

    /// Multiplies every coefficient of total wavenumber `k` by `factor(k)`.
    pub fn scaled_by_degree(&self, factor: impl Fn(usize) -> f64) -> Self {
        let mut out = self.clone();
        for k in 0..=self.trunc.0 {
            let f = factor(k);
            let start = self.trunc.index(k, 0);
            for c in &mut out.coeffs[start..start + k + 1] {
                *c *= f;
            }
        }
        out
    }

    /// `self + a * other`.
    pub fn add_scaled(&self, a: f64, other: &SpectralField) -> Result<Self> {
        check_same_truncation(self, other)?;
        Ok(Self::from_parts(
            self.trunc,
            self.coeffs.iter().zip(&other.coeffs).map(|(x, y)| x + y * a).collect(),
        ))
    }
}

pub(crate) fn check_same_truncation(a: &SpectralField, b: &SpectralField) -> Result<()> {
    if a.trunc == b.trunc {
        Ok(())
    } else {
        Err(Error::shape(format!("truncation T{} vs T{}", a.trunc.0, b.trunc.0)))
    }
}

/// Spectral inner product `Σ w(l) Re(a conj(b))`, equal to `Σ dA x y` for the
/// synthesized fields.
pub fn spectral_dot(a: &SpectralField, b: &SpectralField) -> Result<f64> {
    check_same_truncation(a, b)?;
    Ok(a.trunc
        .modes()
        .zip(a.coeffs.iter().zip(&b.coeffs))
        .map(|((_, l), (x, y))| zonal_weight(l) * (x * y.conj()).re)
        .sum())
}

/// Right-hand side of the spectral MSE identity: `Σ w(l) |α_a - α_b|²`.
pub fn spectral_mse(a: &SpectralField, b: &SpectralField) -> Result<f64> {
    check_same_truncation(a, b)?;
    Ok(a.trunc
        .modes()
        .zip(a.coeffs.iter().zip(&b.coeffs))
        .map(|((_, l), (x, y))| zonal_weight(l) * (x - y).norm_sqr())
        .sum())
}

/// Precomputed transform between one grid and one truncation.
///
/// Immutable after construction and safe to share across threads.
pub struct Transform {
    grid: Arc<Grid>,
    trunc: Truncation,
    table: LegendreTable,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Transform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transform")
            .field("nlat", &self.grid.nlat())
            .field("nlon", &self.grid.nlon())
            .field("trunc", &self.trunc)
            .finish()
    }
}

impl Transform {
    pub fn new(grid: Arc<Grid>, trunc: Truncation) -> Result<Self> {
        trunc.check_admissible(&grid)?;
        let table = LegendreTable::new(trunc.0, grid.sin_latitudes());
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(grid.nlon());
        let inverse = planner.plan_fft_inverse(grid.nlon());
        Ok(Transform {
            grid,
            trunc,
            table,
            forward,
            inverse,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn truncation(&self) -> Truncation {
        self.trunc
    }

    pub fn legendre(&self) -> &LegendreTable {
        &self.table
    }

    fn check_field(&self, field: &GridField) -> Result<()> {
        if !self.grid.same_layout(field.grid()) {
            return Err(Error::shape(format!(
                "field grid {}x{} does not match transform grid {}x{}",
                field.grid().nlat(),
                field.grid().nlon(),
                self.grid.nlat(),
                self.grid.nlon()
            )));
        }
        Ok(())
    }

    /// Zonal Fourier coefficients `Σ_j v(i,j) e^{-i l λ_j}` for `l ≤ K`,
    /// laid out `[l][i]`.
    fn zonal_spectra(&self, values: &[f64]) -> Vec<Vec<Complex64>> {
        let nlon = self.grid.nlon();
        let kmax = self.trunc.0;
        let rows: Vec<Vec<Complex64>> = values
            .par_chunks(nlon)
            .map(|row| {
                let mut buf: Vec<Complex64> = row.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                self.forward.process(&mut buf);
                buf.truncate(kmax + 1);
                buf
            })
            .collect();
        (0..=kmax)
            .map(|l| rows.iter().map(|r| r[l]).collect())
            .collect()
    }

    /// Gauss–Legendre projection of zonal spectra with per-row weights.
    fn project(&self, zonal: &[Vec<Complex64>], row_weight: &[f64]) -> SpectralField {
        let kmax = self.trunc.0;
        let per_l: Vec<Vec<Complex64>> = (0..=kmax)
            .into_par_iter()
            .map(|l| {
                let fl = &zonal[l];
                (l..=kmax)
                    .map(|k| {
                        let p = self.table.column(k, l);
                        let mut acc = Complex64::new(0.0, 0.0);
                        for i in 0..fl.len() {
                            acc += fl[i] * (row_weight[i] * p[i]);
                        }
                        if l == 0 {
                            acc.im = 0.0;
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
        let mut out = SpectralField::zeros(self.trunc);
        for (l, col) in per_l.into_iter().enumerate() {
            for (dk, c) in col.into_iter().enumerate() {
                let idx = self.trunc.index(l + dk, l);
                out.coeffs[idx] = c;
            }
        }
        out
    }

    /// Evaluates `Σ_k c_l s(k,l) P̄` per latitude and assembles the real field
    /// `Σ_l Re(F_l e^{ilλ})` with conjugate-pair doubling for `l > 0`.
    fn assemble(&self, spec: &SpectralField, scale_l0: f64, scale_lpos: f64) -> Vec<f64> {
        let nlat = self.grid.nlat();
        let nlon = self.grid.nlon();
        let kmax = self.trunc.0;
        let zonal: Vec<Vec<Complex64>> = (0..=kmax)
            .into_par_iter()
            .map(|l| {
                let mut fl = vec![Complex64::new(0.0, 0.0); nlat];
                for k in l..=kmax {
                    let a = spec.get(k, l);
                    if a.re == 0.0 && a.im == 0.0 {
                        continue;
                    }
                    let p = self.table.column(k, l);
                    for i in 0..nlat {
                        fl[i] += a * p[i];
                    }
                }
                fl
            })
            .collect();
        let rows: Vec<Vec<f64>> = (0..nlat)
            .into_par_iter()
            .map(|i| {
                let mut buf = vec![Complex64::new(0.0, 0.0); nlon];
                buf[0] = Complex64::new(scale_l0 * zonal[0][i].re, 0.0);
                for l in 1..=kmax {
                    // Summed with its conjugate at nlon - l this yields 2 Re(.).
                    let f = zonal[l][i] * (0.5 * scale_lpos);
                    buf[l] = f;
                    buf[nlon - l] = f.conj();
                }
                self.inverse.process(&mut buf);
                buf.into_iter().map(|c| c.re).collect()
            })
            .collect();
        rows.concat()
    }

    /// Forward transform: coefficients of the orthonormal expansion.
    pub fn analyze(&self, field: &GridField) -> Result<SpectralField> {
        self.check_field(field)?;
        let zonal = self.zonal_spectra(field.values());
        let nlon = self.grid.nlon() as f64;
        let weights: Vec<f64> = self.grid.quad_weights().iter().map(|w| w / nlon).collect();
        Ok(self.project(&zonal, &weights))
    }

    /// Inverse transform onto this transform's grid.
    pub fn synthesize(&self, spec: &SpectralField) -> Result<GridField> {
        if spec.truncation() != self.trunc {
            return Err(Error::shape(format!(
                "spectral field T{} vs transform T{}",
                spec.truncation().0,
                self.trunc.0
            )));
        }
        let values = self.assemble(spec, 1.0, 2.0);
        Ok(GridField::from_parts(self.grid.clone(), values))
    }

    /// Adjoint of [`Transform::analyze`] with respect to the plain Euclidean
    /// inner products on grid values and on the real and imaginary parts of
    /// the stored coefficients.
    ///
    /// Given `G = ∂L/∂α` (real part and imaginary part packed as a complex
    /// number), returns `∂L/∂x` on the grid.
    pub fn analyze_adjoint(&self, grad: &SpectralField) -> Result<GridField> {
        if grad.truncation() != self.trunc {
            return Err(Error::shape("gradient truncation does not match transform"));
        }
        let mut values = self.assemble(grad, 1.0, 1.0);
        let nlon = self.grid.nlon();
        for (i, row) in values.chunks_mut(nlon).enumerate() {
            let da = self.grid.area_weight(i);
            row.iter_mut().for_each(|v| *v *= da);
        }
        Ok(GridField::from_parts(self.grid.clone(), values))
    }

    /// Adjoint of [`Transform::synthesize`] in the same sense as
    /// [`Transform::analyze_adjoint`]: maps `∂L/∂x` to `∂L/∂α`.
    pub fn synthesize_adjoint(&self, grad: &GridField) -> Result<SpectralField> {
        self.check_field(grad)?;
        let zonal = self.zonal_spectra(grad.values());
        let ones = vec![1.0; self.grid.nlat()];
        let mut out = self.project(&zonal, &ones);
        for (idx, (_, l)) in self.trunc.modes().enumerate() {
            out.coeffs[idx] *= zonal_weight(l);
        }
        Ok(out)
    }
}

/// One-shot forward transform.
pub fn analyze(field: &GridField, trunc: Truncation) -> Result<SpectralField> {
    Transform::new(field.grid().clone(), trunc)?.analyze(field)
}

/// One-shot inverse transform.
pub fn synthesize(spec: &SpectralField, grid: Arc<Grid>) -> Result<GridField> {
    Transform::new(grid, spec.truncation())?.synthesize(spec)
}
