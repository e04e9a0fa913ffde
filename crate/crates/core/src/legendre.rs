//! Fully normalized associated Legendre functions.
//!
//! Normalization: `(1/2) ∫_{-1}^{1} P̄_k^l(μ)^2 dμ = 1`, no Condon–Shortley
//! phase. Combined with `e^{ilλ}` this gives harmonics that are orthonormal
//! under the unit-mass area measure, so `|P̄_k^l| ≤ sqrt(2k + 1)` everywhere.

/// Values `P̄_k^l(μ)` for `0 ≤ l ≤ k ≤ kmax` at one point, in k-major order
/// (`index = k(k+1)/2 + l`).
pub fn normalized_legendre(kmax: usize, mu: f64) -> Vec<f64> {
    let mut out = vec![0.0; (kmax + 1) * (kmax + 2) / 2];
    let idx = |k: usize, l: usize| k * (k + 1) / 2 + l;
    let cos_lat = (1.0 - mu * mu).max(0.0).sqrt();
    let mut diag = 1.0;
    for l in 0..=kmax {
        if l > 0 {
            let lf = l as f64;
            diag *= ((2.0 * lf + 1.0) / (2.0 * lf)).sqrt() * cos_lat;
        }
        out[idx(l, l)] = diag;
        let mut prev2 = 0.0;
        let mut prev1 = diag;
        for k in l + 1..=kmax {
            let v = recurrence_step(k, l, mu, prev1, prev2);
            out[idx(k, l)] = v;
            prev2 = prev1;
            prev1 = v;
        }
    }
    out
}

#[inline]
fn recurrence_step(k: usize, l: usize, mu: f64, prev1: f64, prev2: f64) -> f64 {
    let kf = k as f64;
    let lf = l as f64;
    let denom = kf * kf - lf * lf;
    let a = ((4.0 * kf * kf - 1.0) / denom).sqrt();
    if k == l + 1 {
        return a * mu * prev1;
    }
    let b = ((2.0 * kf + 1.0) * ((kf - 1.0) * (kf - 1.0) - lf * lf) / ((2.0 * kf - 3.0) * denom)).sqrt();
    a * mu * prev1 - b * prev2
}

/// Precomputed `P̄_k^l(μ_i)` for a set of latitudes, laid out so the values
/// for one zonal wavenumber are contiguous: `(l, k - l, i)`.
#[derive(Debug, Clone)]
pub struct LegendreTable {
    kmax: usize,
    npoints: usize,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl LegendreTable {
    pub fn new(kmax: usize, mus: &[f64]) -> Self {
        let npoints = mus.len();
        let mut offsets = Vec::with_capacity(kmax + 2);
        let mut acc = 0;
        for l in 0..=kmax {
            offsets.push(acc);
            acc += (kmax + 1 - l) * npoints;
        }
        offsets.push(acc);
        let mut values = vec![0.0; acc];
        for (i, &mu) in mus.iter().enumerate() {
            let column = normalized_legendre(kmax, mu);
            for l in 0..=kmax {
                for k in l..=kmax {
                    values[offsets[l] + (k - l) * npoints + i] = column[k * (k + 1) / 2 + l];
                }
            }
        }
        LegendreTable {
            kmax,
            npoints,
            offsets,
            values,
        }
    }

    pub fn kmax(&self) -> usize {
        self.kmax
    }

    pub fn npoints(&self) -> usize {
        self.npoints
    }

    /// Values of `P̄_k^l` at every point.
    pub fn column(&self, k: usize, l: usize) -> &[f64] {
        let start = self.offsets[l] + (k - l) * self.npoints;
        &self.values[start..start + self.npoints]
    }

    pub fn get(&self, k: usize, l: usize, point: usize) -> f64 {
        self.column(k, l)[point]
    }
}
