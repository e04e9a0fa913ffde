//! Latitude–longitude grids and real scalar fields on them.
//!
//! Rows run north to south, columns run eastward from longitude 0. Area
//! weights are normalized so that `dA(i, j) = quad_weights[i] / nlon` sums to
//! one over the sphere, which makes every area-weighted sum a mean.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GridKind {
    Gaussian,
    /// Pole-to-pole regular latitudes with cell-area weights. Parseval is
    /// only approximate on these grids.
    Equiangular,
}

impl GridKind {
    pub fn code(self) -> u8 {
        match self {
            GridKind::Gaussian => 0,
            GridKind::Equiangular => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(GridKind::Gaussian),
            1 => Some(GridKind::Equiangular),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nlat: usize,
    nlon: usize,
    kind: GridKind,
    latitudes: Vec<f64>,
    sin_lat: Vec<f64>,
    quad_weights: Vec<f64>,
}

impl Grid {
    /// Gaussian grid: latitudes are `asin` of the Gauss–Legendre nodes.
    pub fn gaussian(nlat: usize, nlon: usize) -> Result<Self> {
        check_dims(nlat, nlon)?;
        let (nodes, weights) = gauss_legendre(nlat);
        let latitudes = nodes.iter().map(|x| x.asin()).collect();
        Ok(Self::assemble(nlat, nlon, GridKind::Gaussian, latitudes, nodes, weights))
    }

    /// Equiangular grid including both poles, weighted by the area of the
    /// latitude band each row represents.
    pub fn equiangular(nlat: usize, nlon: usize) -> Result<Self> {
        check_dims(nlat, nlon)?;
        let step = PI / (nlat - 1) as f64;
        let latitudes: Vec<f64> = (0..nlat).map(|i| FRAC_PI_2 - i as f64 * step).collect();
        let weights = latitudes
            .iter()
            .map(|&lat| {
                let north = (lat + 0.5 * step).min(FRAC_PI_2);
                let south = (lat - 0.5 * step).max(-FRAC_PI_2);
                north.sin() - south.sin()
            })
            .collect();
        let sin_lat = latitudes.iter().map(|l: &f64| l.sin()).collect();
        Ok(Self::assemble(nlat, nlon, GridKind::Equiangular, latitudes, sin_lat, weights))
    }

    pub fn new(nlat: usize, nlon: usize, kind: GridKind) -> Result<Self> {
        match kind {
            GridKind::Gaussian => Self::gaussian(nlat, nlon),
            GridKind::Equiangular => Self::equiangular(nlat, nlon),
        }
    }

    fn assemble(
        nlat: usize,
        nlon: usize,
        kind: GridKind,
        latitudes: Vec<f64>,
        sin_lat: Vec<f64>,
        raw_weights: Vec<f64>,
    ) -> Self {
        let total: f64 = raw_weights.iter().sum();
        let quad_weights = raw_weights.iter().map(|w| w / total).collect();
        Grid {
            nlat,
            nlon,
            kind,
            latitudes,
            sin_lat,
            quad_weights,
        }
    }

    pub fn nlat(&self) -> usize {
        self.nlat
    }

    pub fn nlon(&self) -> usize {
        self.nlon
    }

    pub fn len(&self) -> usize {
        self.nlat * self.nlon
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    /// Latitudes in radians, north to south.
    pub fn latitudes(&self) -> &[f64] {
        &self.latitudes
    }

    /// `sin(latitude)` per row; for Gaussian grids these are the exact
    /// quadrature nodes.
    pub fn sin_latitudes(&self) -> &[f64] {
        &self.sin_lat
    }

    /// Row weights, summing to one.
    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_weights
    }

    /// Area weight `dA(i, j)` of any point in row `i`.
    pub fn area_weight(&self, row: usize) -> f64 {
        self.quad_weights[row] / self.nlon as f64
    }

    pub fn longitude(&self, col: usize) -> f64 {
        2.0 * PI * col as f64 / self.nlon as f64
    }

    /// Whether spectral transforms on this grid satisfy Parseval exactly.
    pub fn exact_parseval(&self) -> bool {
        self.kind == GridKind::Gaussian
    }

    /// Same shape and kind. Coordinates follow deterministically from these.
    pub fn same_layout(&self, other: &Grid) -> bool {
        self.nlat == other.nlat && self.nlon == other.nlon && self.kind == other.kind
    }
}

fn check_dims(nlat: usize, nlon: usize) -> Result<()> {
    if nlat < 2 {
        return Err(Error::param(format!("nlat must be at least 2, got {nlat}")));
    }
    if nlon < 4 || nlon % 2 != 0 {
        return Err(Error::param(format!("nlon must be even and at least 4, got {nlon}")));
    }
    Ok(())
}

/// A finite real field on a grid, stored row-major (latitude-major).
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    grid: Arc<Grid>,
    values: Vec<f64>,
    name: Option<String>,
    units: Option<String>,
}

impl GridField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::shape(format!(
                "{} values for a {}x{} grid",
                values.len(),
                grid.nlat,
                grid.nlon
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(format!("non-finite value at index {pos}")));
        }
        Ok(GridField {
            grid,
            values,
            name: None,
            units: None,
        })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        GridField {
            grid,
            values: vec![0.0; n],
            name: None,
            units: None,
        }
    }

    pub fn constant(grid: Arc<Grid>, value: f64) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![value; n])
    }

    /// Builds a field from `f(latitude, longitude)` in radians.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for &lat in grid.latitudes() {
            for j in 0..grid.nlon() {
                values.push(f(lat, grid.longitude(j)));
            }
        }
        Self::new(grid, values)
    }

    /// Internal constructor for values that are finite by construction.
    pub(crate) fn from_parts(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        GridField {
            grid,
            values,
            name: None,
            units: None,
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn with_units(mut self, units: impl Into<String>) -> Self {
        self.units = Some(units.into());
        self
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn units(&self) -> Option<&str> {
        self.units.as_deref()
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.grid.nlon + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let n = self.grid.nlon;
        &self.values[row * n..(row + 1) * n]
    }

    /// `a * self`.
    pub fn scaled(&self, a: f64) -> Self {
        let values = self.values.iter().map(|v| a * v).collect();
        Self::from_parts(self.grid.clone(), values)
    }

    /// `self + a * other`.
    pub fn add_scaled(&self, a: f64, other: &GridField) -> Result<Self> {
        check_same_grid(self, other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| x + a * y)
            .collect();
        Ok(Self::from_parts(self.grid.clone(), values))
    }

    /// Rotates every row eastward by `shift` columns.
    pub fn rotate_longitude(&self, shift: usize) -> Self {
        let n = self.grid.nlon;
        let mut values = Vec::with_capacity(self.values.len());
        for i in 0..self.grid.nlat {
            let row = self.row(i);
            values.extend((0..n).map(|j| row[(j + n - shift % n) % n]));
        }
        Self::from_parts(self.grid.clone(), values)
    }

    /// Area-weighted sum `Σ dA f(i, j)` of a pointwise function.
    pub fn area_sum_by(&self, f: impl Fn(usize) -> f64) -> f64 {
        area_sum(&self.grid, f)
    }

    /// Area-weighted mean.
    pub fn area_mean(&self) -> f64 {
        self.area_sum_by(|p| self.values[p])
    }

    /// Area-weighted inner product `Σ dA x y`.
    pub fn area_dot(&self, other: &GridField) -> Result<f64> {
        check_same_grid(self, other)?;
        Ok(self.area_sum_by(|p| self.values[p] * other.values[p]))
    }
}

/// `Σ_i (w_i / nlon) Σ_j f(i * nlon + j)`, accumulated row by row.
pub(crate) fn area_sum(grid: &Grid, f: impl Fn(usize) -> f64) -> f64 {
    let nlon = grid.nlon();
    let mut total = 0.0;
    for (i, w) in grid.quad_weights().iter().enumerate() {
        let row: f64 = (i * nlon..(i + 1) * nlon).map(&f).sum();
        total += w * row;
    }
    total / nlon as f64
}

pub(crate) fn check_same_grid(a: &GridField, b: &GridField) -> Result<()> {
    if Arc::ptr_eq(&a.grid, &b.grid) || a.grid.same_layout(&b.grid) {
        Ok(())
    } else {
        Err(Error::shape(format!(
            "grid {}x{} {:?} vs {}x{} {:?}",
            a.grid.nlat, a.grid.nlon, a.grid.kind, b.grid.nlat, b.grid.nlon, b.grid.kind
        )))
    }
}

/// Latitude-weighted mean squared error `Σ dA (x - y)^2`.
pub fn area_mean_square_error(x: &GridField, y: &GridField) -> Result<f64> {
    check_same_grid(x, y)?;
    Ok(x.area_sum_by(|p| {
        let d = x.values[p] - y.values[p];
        d * d
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_four_gaussian() {
        let g = Grid::gaussian(2, 4).unwrap();
        let lat = (1.0 / 3f64.sqrt()).asin();
        assert!((g.latitudes()[0] - lat).abs() < 1e-15);
        assert!((g.latitudes()[1] + lat).abs() < 1e-15);
        assert!((g.quad_weights()[0] - 0.5).abs() < 1e-15);
        assert!((g.quad_weights()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn area_weights_sum_to_one() {
        for (nlat, nlon) in [(64, 128), (33, 66), (2, 4)] {
            for kind in [GridKind::Gaussian, GridKind::Equiangular] {
                let g = Grid::new(nlat, nlon, kind).unwrap();
                let s: f64 = (0..nlat).map(|i| g.area_weight(i) * nlon as f64).sum();
                assert!((s - 1.0).abs() <= 1e-14, "{kind:?} {s}");
            }
        }
    }

    #[test]
    fn gaussian_latitudes_symmetric() {
        let g = Grid::gaussian(64, 128).unwrap();
        let lats = g.latitudes();
        assert!(lats.windows(2).all(|w| w[0] > w[1]));
        for i in 0..32 {
            assert_eq!(lats[i], -lats[63 - i]);
        }
    }

    #[test]
    fn sin_squared_mean_is_one_third() {
        let g = Arc::new(Grid::gaussian(64, 128).unwrap());
        let f = GridField::from_fn(g, |lat, _| lat.sin().powi(2)).unwrap();
        assert!((f.area_mean() - 1.0 / 3.0).abs() <= 1e-14);
    }

    #[test]
    fn quadrature_exact_up_to_degree_2n_minus_1() {
        let nlat = 24;
        let g = Grid::gaussian(nlat, 4).unwrap();
        for degree in 0..2 * nlat {
            let sum: f64 = g
                .sin_latitudes()
                .iter()
                .zip(g.quad_weights())
                .map(|(mu, w)| w * mu.powi(degree as i32))
                .sum();
            // (1/2) ∫_{-1}^{1} mu^d dmu
            let exact = if degree % 2 == 1 { 0.0 } else { 1.0 / (degree as f64 + 1.0) };
            assert!((sum - exact).abs() <= 1e-12 * exact.max(1e-3), "degree {degree}");
        }
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(matches!(Grid::gaussian(1, 4), Err(Error::Parameter(_))));
        assert!(matches!(Grid::gaussian(4, 5), Err(Error::Parameter(_))));
        assert!(matches!(Grid::gaussian(4, 2), Err(Error::Parameter(_))));
    }

    #[test]
    fn field_rejects_non_finite_and_bad_shape() {
        let g = Arc::new(Grid::gaussian(2, 4).unwrap());
        assert!(GridField::new(g.clone(), vec![0.0; 7]).is_err());
        let mut v = vec![0.0; 8];
        v[3] = f64::NAN;
        assert!(GridField::new(g, v).is_err());
    }

    #[test]
    fn mse_basic_cases() {
        let g = Arc::new(Grid::gaussian(8, 16).unwrap());
        let one = GridField::constant(g.clone(), 1.0).unwrap();
        let zero = GridField::zeros(g.clone());
        assert_eq!(area_mean_square_error(&one, &one).unwrap(), 0.0);
        assert!((area_mean_square_error(&one, &zero).unwrap() - 1.0).abs() < 1e-15);
        let other = GridField::zeros(Arc::new(Grid::gaussian(8, 8).unwrap()));
        assert!(matches!(area_mean_square_error(&one, &other), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn longitude_rotation_preserves_mse(seed in 0u64..1000, shift in 0usize..16) {
            let g = Arc::new(Grid::gaussian(6, 16).unwrap());
            let mk = |s: u64| GridField::from_fn(g.clone(), |lat, lon| {
                ((s as f64 + 1.3) * lat).sin() + (lon * (1 + s % 3) as f64).cos()
            }).unwrap();
            let (x, y) = (mk(seed), mk(seed + 7));
            let a = area_mean_square_error(&x, &y).unwrap();
            let b = area_mean_square_error(&x.rotate_longitude(shift), &y.rotate_longitude(shift)).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }
}
