//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use spectraloss::random::{power_law_psd, random_spectral, seeded_rng};
use spectraloss::{Grid, GridField, SpectralField, Transform, Truncation};

/// Transform at truncation `k` on the smallest Gaussian grid that resolves it
/// with a power-of-two longitude count.
pub fn transform(k: usize) -> Transform {
    let nlon = (2 * k + 2).next_power_of_two();
    let grid = Arc::new(Grid::gaussian(nlon / 2, nlon).expect("valid grid"));
    Transform::new(grid, Truncation(k)).expect("admissible truncation")
}

/// Random coefficients with a `(1 + k)^-3` spectrum.
pub fn spectral(k: usize, seed: u64) -> SpectralField {
    let trunc = Truncation(k);
    let psd = power_law_psd(trunc, 3.0);
    random_spectral(trunc, |j| psd[j], &mut seeded_rng(seed))
}

/// A pair of correlated grid fields on the transform's grid.
pub fn field_pair(t: &Transform, seed: u64) -> (GridField, GridField) {
    let k = t.truncation().max_wavenumber();
    let y = spectral(k, seed);
    let x = y.scaled(0.8).add_scaled(0.6, &spectral(k, seed + 1)).expect("same truncation");
    (t.synthesize(&x).expect("synthesis"), t.synthesize(&y).expect("synthesis"))
}
