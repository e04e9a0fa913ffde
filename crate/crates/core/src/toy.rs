//! Desk-scale training experiment: a per-wavenumber gain predictor fitted
//! by gradient descent on synthetic pairs with prescribed spectra and
//! predictability.
//!
//! Targets have power spectrum `PSD_k ∝ (1 + k)^(−slope)`. Inputs are
//! `ρ_k · target + √(1 − ρ_k²) · noise` with independent noise of the same
//! spectrum, so the input and target share power and have coherence `ρ_k`.
//! The prediction is `g_k · input`. Under MSE the gain settles at `ρ_k`,
//! under AMSE at 1.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diag::{cross_spectrum, power_spectrum};
use crate::error::{Error, FormatErrorKind, Result};
use crate::grid::Grid;
use crate::io::fmt_f64;
use crate::loss::{amse_partials, mae_gradient, mse_partials, AmseOptions, LossKind, SpectralPartials};
use crate::random::{power_law_psd, random_spectral};
use crate::sht::{SpectralField, Transform, Truncation};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub trunc: Truncation,
    pub slope: f64,
    /// Predictability per total wavenumber.
    pub rho: Vec<f64>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Predictability `ρ_k = exp(−k/K)`, decaying toward fine scales.
    pub fn new(trunc: Truncation, slope: f64, seed: u64) -> Self {
        let kmax = trunc.max_wavenumber().max(1) as f64;
        let rho = (0..=trunc.max_wavenumber())
            .map(|k| (-(k as f64) / kmax).exp())
            .collect();
        SyntheticSpec { trunc, slope, rho, seed }
    }

    pub fn with_constant_rho(mut self, rho: f64) -> Self {
        self.rho = vec![rho; self.trunc.max_wavenumber() + 1];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.slope >= 0.0) || !self.slope.is_finite() {
            return Err(Error::param(format!("slope must be non-negative, got {}", self.slope)));
        }
        if self.rho.len() != self.trunc.max_wavenumber() + 1 {
            return Err(Error::shape("one predictability value per wavenumber required"));
        }
        if let Some(r) = self.rho.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::param(format!("predictability {r} outside [0, 1]")));
        }
        Ok(())
    }

    /// Target power spectrum, normalized to unit total.
    pub fn psd(&self) -> Vec<f64> {
        power_law_psd(self.trunc, self.slope)
    }
}

/// Draws `(input, target)` pairs for one spec.
#[derive(Debug, Clone)]
pub struct PairSampler {
    spec: SyntheticSpec,
    psd: Vec<f64>,
    rng: ChaCha8Rng,
}

impl PairSampler {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        Self::with_stream(spec, 0)
    }

    /// Independent stream of pairs for the same seed.
    pub fn with_stream(spec: SyntheticSpec, stream: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream);
        let psd = spec.psd();
        Ok(PairSampler { spec, psd, rng })
    }

    pub fn sample(&mut self) -> (SpectralField, SpectralField) {
        let psd = &self.psd;
        let target = random_spectral(self.spec.trunc, |k| psd[k], &mut self.rng);
        let noise = random_spectral(self.spec.trunc, |k| psd[k], &mut self.rng);
        let mut input = SpectralField::zeros(self.spec.trunc);
        for (k, l) in self.spec.trunc.modes() {
            let r = self.spec.rho[k];
            let v = target.get(k, l) * r + noise.get(k, l) * (1.0 - r * r).sqrt();
            input.set(k, l, v);
        }
        (input, target)
    }
}

/// First pair drawn from a spec's seed.
pub fn sample_pair(spec: &SyntheticSpec) -> Result<(SpectralField, SpectralField)> {
    Ok(PairSampler::new(spec.clone())?.sample())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// Cosine decay from `start` at the first step to `end` at the last.
    Cosine { start: f64, end: f64 },
}

impl LrSchedule {
    pub fn at(&self, step: usize, steps: usize) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::Cosine { start, end } => {
                if steps <= 1 {
                    return start;
                }
                let t = step as f64 / (steps - 1) as f64;
                end + 0.5 * (start - end) * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// How a batch enters the spectral losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BatchReduction {
    /// Spectra are averaged over the batch before the loss is applied.
    #[default]
    Pooled,
    /// The loss is applied to each pair and the gradients averaged.
    PerSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub steps: usize,
    pub batch: usize,
    pub schedule: LrSchedule,
    pub init_gain: f64,
    pub reduction: BatchReduction,
    /// Divide each gain's gradient by the expected target power at its
    /// wavenumber so every scale learns at a comparable rate.
    pub precondition: bool,
    /// Size of the fixed set used to report amplitude ratio and coherence.
    pub eval_samples: usize,
    pub amse: AmseOptions,
}

impl TrainConfig {
    pub fn new(loss: LossKind) -> Self {
        TrainConfig {
            loss,
            steps: 2000,
            batch: 32,
            schedule: LrSchedule::Cosine { start: 0.3, end: 0.003 },
            init_gain: 0.1,
            reduction: BatchReduction::Pooled,
            precondition: true,
            eval_samples: 4096,
            amse: AmseOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 || self.eval_samples == 0 {
            return Err(Error::param("steps, batch and eval_samples must be at least 1"));
        }
        if !self.init_gain.is_finite() {
            return Err(Error::param("initial gain must be finite"));
        }
        Ok(())
    }
}

/// State after one update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Batch loss before the update.
    pub loss: f64,
    pub gains: Vec<f64>,
    pub amplitude_ratio: Vec<f64>,
    pub coherence: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub loss: LossKind,
    pub records: Vec<StepRecord>,
}

impl Trajectory {
    pub fn final_record(&self) -> &StepRecord {
        self.records.last().expect("trajectories hold at least one step")
    }

    pub fn final_gains(&self) -> &[f64] {
        &self.final_record().gains
    }

    pub fn mean_final_gain(&self) -> f64 {
        let g = self.final_gains();
        g.iter().sum::<f64>() / g.len() as f64
    }
}

/// Sufficient statistics of the evaluation set.
struct EvalStats {
    p_in: Vec<f64>,
    p_y: Vec<f64>,
    c_in: Vec<f64>,
}

impl EvalStats {
    fn gather(spec: &SyntheticSpec, n: usize) -> Result<Self> {
        let nk = spec.trunc.max_wavenumber() + 1;
        let mut sampler = PairSampler::with_stream(spec.clone(), 1)?;
        let mut s = EvalStats {
            p_in: vec![0.0; nk],
            p_y: vec![0.0; nk],
            c_in: vec![0.0; nk],
        };
        for _ in 0..n {
            let (a, y) = sampler.sample();
            let c = cross_spectrum(&a, &y)?;
            for (k, ((pa, py), c)) in power_spectrum(&a).into_iter().zip(power_spectrum(&y)).zip(c).enumerate() {
                s.p_in[k] += pa;
                s.p_y[k] += py;
                s.c_in[k] += c;
            }
        }
        Ok(s)
    }

    fn ratio_and_coherence(&self, gains: &[f64]) -> (Vec<f64>, Vec<f64>) {
        gains
            .iter()
            .enumerate()
            .map(|(k, &g)| {
                let (pa, py, c) = (self.p_in[k], self.p_y[k], self.c_in[k]);
                let ratio = if py > 0.0 { g.abs() * (pa / py).sqrt() } else { 0.0 };
                let denom = (pa * py).sqrt();
                let coh = if denom > 0.0 && g != 0.0 {
                    g.signum() * c / denom
                } else {
                    0.0
                };
                (ratio, coh)
            })
            .unzip()
    }
}

/// Batch spectra: input power, target power and input–target cross power.
struct BatchSpectra {
    p_in: Vec<f64>,
    p_y: Vec<f64>,
    c_in: Vec<f64>,
}

impl BatchSpectra {
    fn of(a: &SpectralField, y: &SpectralField) -> Result<Self> {
        Ok(BatchSpectra {
            p_in: power_spectrum(a),
            p_y: power_spectrum(y),
            c_in: cross_spectrum(a, y)?,
        })
    }

    fn zeros(nk: usize) -> Self {
        BatchSpectra {
            p_in: vec![0.0; nk],
            p_y: vec![0.0; nk],
            c_in: vec![0.0; nk],
        }
    }

    fn accumulate(&mut self, o: &BatchSpectra, w: f64) {
        for k in 0..self.p_in.len() {
            self.p_in[k] += w * o.p_in[k];
            self.p_y[k] += w * o.p_y[k];
            self.c_in[k] += w * o.c_in[k];
        }
    }

    /// Loss and `∂L/∂g_k` for the prediction `g_k · input`. With
    /// `psd_x = g² P_in` and `cross = g C_in` the chain rule gives
    /// `2 g P_in ∂L/∂psd_x + C_in ∂L/∂cross`.
    fn loss_and_gain_gradient(&self, gains: &[f64], loss: LossKind, opts: &AmseOptions) -> (f64, Vec<f64>) {
        let nk = gains.len();
        let psd_x: Vec<f64> = (0..nk).map(|k| gains[k] * gains[k] * self.p_in[k]).collect();
        let cross: Vec<f64> = (0..nk).map(|k| gains[k] * self.c_in[k]).collect();
        let (value, partials): (f64, SpectralPartials) = match loss {
            LossKind::Amse => (
                crate::loss::amse_from_spectra(&psd_x, &self.p_y, &cross, opts).total,
                amse_partials(&psd_x, &self.p_y, &cross, opts),
            ),
            _ => (
                (0..nk).map(|k| psd_x[k] + self.p_y[k] - 2.0 * cross[k]).sum(),
                mse_partials(nk),
            ),
        };
        let grad = (0..nk)
            .map(|k| 2.0 * gains[k] * self.p_in[k] * partials.d_psd[k] + self.c_in[k] * partials.d_cross[k])
            .collect();
        (value, grad)
    }
}

/// Gridpoint MAE and its gain gradient through synthesis and its adjoint.
fn mae_gain_gradient(t: &Transform, gains: &[f64], a: &SpectralField, y: &SpectralField) -> Result<(f64, Vec<f64>)> {
    let pred = a.scaled_by_degree(|k| gains[k]);
    let xg = t.synthesize(&pred)?;
    let yg = t.synthesize(y)?;
    let value = crate::loss::mae(&xg, &yg)?;
    let g = t.synthesize_adjoint(&mae_gradient(&xg, &yg)?)?;
    let grad = (0..gains.len())
        .map(|k| {
            g.degree(k)
                .iter()
                .zip(a.degree(k))
                .map(|(gc, ac): (&Complex64, &Complex64)| gc.re * ac.re + gc.im * ac.im)
                .sum()
        })
        .collect();
    Ok((value, grad))
}

/// Largest gain magnitude tolerated before training is declared diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e3;

/// Fits the gains and records their trajectory after every update.
pub fn train(spec: &SyntheticSpec, cfg: &TrainConfig) -> Result<Trajectory> {
    spec.validate()?;
    cfg.validate()?;
    let nk = spec.trunc.max_wavenumber() + 1;
    let psd = spec.psd();
    let eval = EvalStats::gather(spec, cfg.eval_samples)?;
    let mut sampler = PairSampler::new(spec.clone())?;
    let transform = match cfg.loss {
        LossKind::Mae => {
            let k = spec.trunc.max_wavenumber();
            let grid = Arc::new(Grid::gaussian(k + 2, 2 * k + 4)?);
            Some(Transform::new(grid, spec.trunc)?)
        }
        _ => None,
    };
    let mut gains = vec![cfg.init_gain; nk];
    let mut records = Vec::with_capacity(cfg.steps);
    let inv_batch = 1.0 / cfg.batch as f64;
    for step in 0..cfg.steps {
        let pairs: Vec<_> = (0..cfg.batch).map(|_| sampler.sample()).collect();
        let (loss, grad) = match (&transform, cfg.reduction) {
            (Some(t), _) => {
                let mut total = 0.0;
                let mut grad = vec![0.0; nk];
                for (a, y) in &pairs {
                    let (v, g) = mae_gain_gradient(t, &gains, a, y)?;
                    total += v * inv_batch;
                    grad.iter_mut().zip(g).for_each(|(s, g)| *s += g * inv_batch);
                }
                (total, grad)
            }
            (None, BatchReduction::Pooled) => {
                let mut pooled = BatchSpectra::zeros(nk);
                for (a, y) in &pairs {
                    pooled.accumulate(&BatchSpectra::of(a, y)?, inv_batch);
                }
                pooled.loss_and_gain_gradient(&gains, cfg.loss, &cfg.amse)
            }
            (None, BatchReduction::PerSample) => {
                let mut total = 0.0;
                let mut grad = vec![0.0; nk];
                for (a, y) in &pairs {
                    let (v, g) = BatchSpectra::of(a, y)?.loss_and_gain_gradient(&gains, cfg.loss, &cfg.amse);
                    total += v * inv_batch;
                    grad.iter_mut().zip(g).for_each(|(s, g)| *s += g * inv_batch);
                }
                (total, grad)
            }
        };
        let lr = cfg.schedule.at(step, cfg.steps);
        for k in 0..nk {
            let scale = if cfg.precondition && psd[k] > 0.0 { 1.0 / psd[k] } else { 1.0 };
            gains[k] -= lr * scale * grad[k];
            if !gains[k].is_finite() || gains[k].abs() > DIVERGENCE_LIMIT {
                return Err(Error::Diverged {
                    step: step + 1,
                    k,
                    gain: gains[k],
                });
            }
        }
        let (amplitude_ratio, coherence) = eval.ratio_and_coherence(&gains);
        records.push(StepRecord {
            step: step + 1,
            loss,
            gains: gains.clone(),
            amplitude_ratio,
            coherence,
        });
    }
    Ok(Trajectory {
        loss: cfg.loss,
        records,
    })
}

/// Trajectory CSV with header `step,k,amplitude_ratio,coherence`.
pub fn emit_fig2_analog<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    if traj.records.is_empty() {
        return Err(Error::param("empty trajectory"));
    }
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::format(0, FormatErrorKind::Csv(e.to_string()));
    w.write_record(["step", "k", "amplitude_ratio", "coherence"]).map_err(err)?;
    for r in &traj.records {
        for k in 0..r.gains.len() {
            w.write_record([
                r.step.to_string(),
                k.to_string(),
                fmt_f64(r.amplitude_ratio[k]),
                fmt_f64(r.coherence[k]),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

/// Expected single-mode loss for unit-power target and input with
/// correlation `rho`, as a function of the gain.
pub fn expected_gain_loss(gain: f64, rho: f64, loss: LossKind) -> Result<f64> {
    crate::loss::expected_single_mode_loss(gain.abs(), if gain >= 0.0 { rho } else { -rho }, loss)
}
