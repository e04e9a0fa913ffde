//! Ensemble scores (fair CRPS, ensemble-mean error, spread-error ratio and
//! the finite-ensemble bias correction), lagged-ensemble construction from
//! a forecast archive, and bootstrap significance of score differences.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{check_same_grid, GridField};
use crate::io::{fmt_f64, read_field};
use crate::qq::quantiles;

/// Members and verifying field for one forecast date.
#[derive(Debug, Clone)]
pub struct EnsembleSet {
    members: Vec<GridField>,
    verification: GridField,
    pub valid_time: String,
    pub lead_hours: i64,
    pub member_lags: Option<Vec<i64>>,
}

impl EnsembleSet {
    pub fn new(members: Vec<GridField>, verification: GridField, valid_time: impl Into<String>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::param(format!(
                "an ensemble needs at least 2 members, got {}",
                members.len()
            )));
        }
        for m in &members {
            check_same_grid(m, &verification)?;
        }
        Ok(EnsembleSet {
            members,
            verification,
            valid_time: valid_time.into(),
            lead_hours: 0,
            member_lags: None,
        })
    }

    pub fn with_lead(mut self, lead_hours: i64) -> Self {
        self.lead_hours = lead_hours;
        self
    }

    pub fn with_lags(mut self, lags: Vec<i64>) -> Result<Self> {
        if lags.len() != self.members.len() {
            return Err(Error::shape("one lag per member required"));
        }
        self.member_lags = Some(lags);
        Ok(self)
    }

    pub fn members(&self) -> &[GridField] {
        &self.members
    }

    pub fn verification(&self) -> &GridField {
        &self.verification
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Applies `f` to every field jointly.
    pub fn map_fields(&self, f: impl Fn(&GridField) -> GridField) -> Result<Self> {
        let mut out = EnsembleSet::new(
            self.members.iter().map(&f).collect(),
            f(&self.verification),
            self.valid_time.clone(),
        )?;
        out.lead_hours = self.lead_hours;
        out.member_lags = self.member_lags.clone();
        Ok(out)
    }
}

/// Sign of the spread term in the CRPS estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CrpsSign {
    /// The fair estimator: the spread term is subtracted.
    #[default]
    Fair,
    /// The spread term added, as the formula appears in print.
    Printed,
}

/// Area-weighted per-date statistics from which every score is derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleStats {
    pub mean_abs_error: f64,
    /// `Σ dA (1/(2N(N−1))) Σ_k Σ_l |x_k − x_l|`.
    pub pair_spread: f64,
    /// `Σ dA (x̄ − y)²`.
    pub emse: f64,
    /// `Σ dA (1/(N−1)) Σ_k (x_k − x̄)²`.
    pub spread: f64,
    pub n_members: usize,
}

impl EnsembleStats {
    pub fn crps(&self, sign: CrpsSign) -> f64 {
        match sign {
            CrpsSign::Fair => self.mean_abs_error - self.pair_spread,
            CrpsSign::Printed => self.mean_abs_error + self.pair_spread,
        }
    }

    pub fn ermse(&self) -> f64 {
        self.emse.sqrt()
    }

    /// Spread over error; undefined when the ensemble mean is exact.
    pub fn ser(&self) -> Result<f64> {
        if self.emse > 0.0 {
            Ok((self.spread / self.emse).sqrt())
        } else {
            Err(Error::UndefinedScore(
                "spread-error ratio with zero ensemble-mean error".into(),
            ))
        }
    }

    /// `emse − spread/N`, the unbiased estimate of the squared mean error.
    /// It may be negative for a single date.
    pub fn unbiased_emse(&self) -> f64 {
        self.emse - self.spread / self.n_members as f64
    }
}

/// Computes all per-date statistics in one pass over the grid.
pub fn ensemble_stats(ens: &EnsembleSet) -> EnsembleStats {
    let grid = ens.verification.grid();
    let nlon = grid.nlon();
    let n = ens.members.len();
    let nf = n as f64;
    let y = ens.verification.values();
    let mut acc = [0.0f64; 4];
    let mut col = vec![0.0f64; n];
    for lat in 0..grid.nlat() {
        let mut row_acc = [0.0f64; 4];
        for lon in 0..nlon {
            let p = lat * nlon + lon;
            for (c, m) in col.iter_mut().zip(&ens.members) {
                *c = m.values()[p];
            }
            let yp = y[p];
            let mean = col.iter().sum::<f64>() / nf;
            let abs_err = col.iter().map(|x| (x - yp).abs()).sum::<f64>() / nf;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            // Σ_k Σ_l |x_k − x_l| = 2 Σ_i (2i − n + 1) x_(i) over sorted values.
            col.sort_by(f64::total_cmp);
            let pairs: f64 = col
                .iter()
                .enumerate()
                .map(|(i, x)| (2.0 * i as f64 - nf + 1.0) * x)
                .sum::<f64>()
                * 2.0;
            row_acc[0] += abs_err;
            row_acc[1] += pairs / (2.0 * nf * (nf - 1.0));
            row_acc[2] += (mean - yp).powi(2);
            row_acc[3] += var;
        }
        let w = grid.area_weight(lat);
        for (a, r) in acc.iter_mut().zip(row_acc) {
            *a += w * r;
        }
    }
    EnsembleStats {
        mean_abs_error: acc[0],
        pair_spread: acc[1],
        emse: acc[2],
        spread: acc[3],
        n_members: n,
    }
}

pub fn fair_crps(ens: &EnsembleSet) -> f64 {
    ensemble_stats(ens).crps(CrpsSign::Fair)
}

pub fn crps_with_sign(ens: &EnsembleSet, sign: CrpsSign) -> f64 {
    ensemble_stats(ens).crps(sign)
}

pub fn ermse(ens: &EnsembleSet) -> f64 {
    ensemble_stats(ens).ermse()
}

pub fn ser(ens: &EnsembleSet) -> Result<f64> {
    ensemble_stats(ens).ser()
}

/// Unbiased ensemble-mean RMSE of one ensemble, clamped at 0.
pub fn ub_ermse(ens: &EnsembleSet) -> f64 {
    ensemble_stats(ens).unbiased_emse().max(0.0).sqrt()
}

/// One scored date.
#[derive(Debug, Clone, PartialEq)]
pub struct DateScores {
    pub valid_time: String,
    pub lead_hours: i64,
    pub stats: EnsembleStats,
}

/// Unbiased RMSE aggregate and whether the pre-root value was clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnbiasedErmse {
    pub value: f64,
    pub clamped: bool,
}

/// Per-date scores with aggregation over dates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSeries {
    pub sign: CrpsSign,
    rows: Vec<DateScores>,
}

impl ScoreSeries {
    pub fn new(sign: CrpsSign) -> Self {
        ScoreSeries { sign, rows: Vec::new() }
    }

    pub fn from_ensembles(ensembles: &[EnsembleSet], sign: CrpsSign) -> Self {
        let rows = ensembles
            .par_iter()
            .map(|e| DateScores {
                valid_time: e.valid_time.clone(),
                lead_hours: e.lead_hours,
                stats: ensemble_stats(e),
            })
            .collect();
        ScoreSeries { sign, rows }
    }

    pub fn push(&mut self, row: DateScores) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[DateScores] {
        &self.rows
    }

    pub fn n_dates(&self) -> usize {
        self.rows.len()
    }

    fn mean_of(&self, f: impl Fn(&DateScores) -> f64) -> Result<f64> {
        if self.rows.is_empty() {
            return Err(Error::UndefinedScore("no dates to aggregate".into()));
        }
        Ok(self.rows.iter().map(f).sum::<f64>() / self.rows.len() as f64)
    }

    pub fn crps(&self) -> Result<f64> {
        self.mean_of(|r| r.stats.crps(self.sign))
    }

    pub fn ermse(&self) -> Result<f64> {
        Ok(self.mean_of(|r| r.stats.emse)?.sqrt())
    }

    /// Square root of the date-mean of per-date spread/error ratios.
    pub fn ser(&self) -> Result<f64> {
        let mut ratios = Vec::with_capacity(self.rows.len());
        for r in &self.rows {
            let s = r.stats.ser()?;
            ratios.push(s * s);
        }
        if ratios.is_empty() {
            return Err(Error::UndefinedScore("no dates to aggregate".into()));
        }
        Ok((ratios.iter().sum::<f64>() / ratios.len() as f64).sqrt())
    }

    pub fn ub_ermse(&self) -> Result<UnbiasedErmse> {
        let m = self.mean_of(|r| r.stats.unbiased_emse())?;
        Ok(UnbiasedErmse {
            value: m.max(0.0).sqrt(),
            clamped: m < 0.0,
        })
    }

    fn subset(&self, idx: &[usize]) -> ScoreSeries {
        ScoreSeries {
            sign: self.sign,
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Per-date CSV with header `valid_time,lead_h,crps,ermse,ser,ubermse`.
    /// Undefined per-date ratios are written as `nan`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::format(0, crate::error::FormatErrorKind::Csv(e.to_string()));
        w.write_record(["valid_time", "lead_h", "crps", "ermse", "ser", "ubermse"])
            .map_err(csv_err)?;
        for r in &self.rows {
            let ser = r.stats.ser().map(fmt_f64).unwrap_or_else(|_| "nan".into());
            w.write_record([
                r.valid_time.clone(),
                r.lead_hours.to_string(),
                fmt_f64(r.stats.crps(self.sign)),
                fmt_f64(r.stats.ermse()),
                ser,
                fmt_f64(r.stats.unbiased_emse().max(0.0).sqrt()),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }
}

/// Formats a timestamp the way archive directories are named.
pub fn format_time(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn parse_time(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::param(format!("bad timestamp {s:?}: {e}")))
}

/// Index of an archive laid out as `<root>/init_<time>/lead_<hours>.sgf`.
#[derive(Debug, Clone, Default)]
pub struct ForecastArchive {
    entries: BTreeMap<(DateTime<Utc>, i64), PathBuf>,
}

impl ForecastArchive {
    /// Scans `root`. Entries not matching the naming convention are ignored.
    pub fn scan(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let mut entries = BTreeMap::new();
        let dirs = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        for dir in dirs {
            let dir = dir.map_err(|e| Error::io(root, e))?;
            let name = dir.file_name();
            let Some(stamp) = name.to_str().and_then(|n| n.strip_prefix("init_")) else {
                continue;
            };
            let Ok(init) = parse_time(stamp) else {
                continue;
            };
            let path = dir.path();
            if !path.is_dir() {
                continue;
            }
            for file in std::fs::read_dir(&path).map_err(|e| Error::io(&path, e))? {
                let file = file.map_err(|e| Error::io(&path, e))?;
                let fname = file.file_name();
                let lead = fname
                    .to_str()
                    .and_then(|n| n.strip_prefix("lead_"))
                    .and_then(|n| n.strip_suffix(".sgf"))
                    .and_then(|n| n.parse::<i64>().ok());
                if let Some(lead) = lead.filter(|l| *l >= 0) {
                    entries.insert((init, lead), file.path());
                }
            }
        }
        Ok(ForecastArchive { entries })
    }

    pub fn insert(&mut self, init: DateTime<Utc>, lead_hours: i64, path: PathBuf) {
        self.entries.insert((init, lead_hours), path);
    }

    pub fn get(&self, init: DateTime<Utc>, lead_hours: i64) -> Option<&Path> {
        self.entries.get(&(init, lead_hours)).map(PathBuf::as_path)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Path of a member file relative to an archive root.
    pub fn member_path(root: impl AsRef<Path>, init: &DateTime<Utc>, lead_hours: i64) -> PathBuf {
        root.as_ref()
            .join(format!("init_{}", format_time(init)))
            .join(format!("lead_{lead_hours}.sgf"))
    }
}

/// Lagged-ensemble window settings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaggedConfig {
    /// Odd number of consecutive initializations.
    pub window: usize,
    pub stride_hours: i64,
    /// Notional lead times of the central member to build ensembles for.
    pub central_leads: Vec<i64>,
}

impl LaggedConfig {
    pub fn new(central_leads: Vec<i64>) -> Self {
        LaggedConfig {
            window: 9,
            stride_hours: 12,
            central_leads,
        }
    }

    /// Initialization offsets relative to the central member.
    pub fn lags(&self) -> Result<Vec<i64>> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::param(format!("window must be odd and at least 3, got {}", self.window)));
        }
        if self.stride_hours <= 0 {
            return Err(Error::param("stride must be positive"));
        }
        let half = (self.window / 2) as i64;
        Ok((-half..=half).map(|j| j * self.stride_hours).collect())
    }
}

/// Files making up one lagged ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedPlan {
    pub valid_time: DateTime<Utc>,
    pub central_lead: i64,
    /// `(lag_hours, path)`; member init is central init plus lag and its
    /// lead is the central lead minus lag.
    pub members: Vec<(i64, PathBuf)>,
    /// Lead-zero archive entry at the valid time.
    pub verification: PathBuf,
}

/// Complete ensembles found in an archive, plus the number of candidates
/// skipped for missing members or verification.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedPlans {
    pub plans: Vec<LaggedPlan>,
    pub skipped: usize,
}

/// Every archive entry whose lead is a requested central lead is a
/// candidate centre.
pub fn plan_lagged_ensembles(archive: &ForecastArchive, cfg: &LaggedConfig) -> Result<LaggedPlans> {
    let lags = cfg.lags()?;
    let mut plans = Vec::new();
    let mut skipped = 0;
    for &(init, lead) in archive.entries.keys() {
        if !cfg.central_leads.contains(&lead) {
            continue;
        }
        let valid = init + Duration::hours(lead);
        let members: Option<Vec<(i64, PathBuf)>> = lags
            .iter()
            .map(|&lag| {
                archive
                    .get(init + Duration::hours(lag), lead - lag)
                    .map(|p| (lag, p.to_path_buf()))
            })
            .collect();
        match (members, archive.get(valid, 0)) {
            (Some(members), Some(verification)) => plans.push(LaggedPlan {
                valid_time: valid,
                central_lead: lead,
                members,
                verification: verification.to_path_buf(),
            }),
            _ => skipped += 1,
        }
    }
    plans.sort_by(|a, b| (a.valid_time, a.central_lead).cmp(&(b.valid_time, b.central_lead)));
    Ok(LaggedPlans { plans, skipped })
}

/// Loads the fields of one planned ensemble.
pub fn load_lagged(plan: &LaggedPlan) -> Result<EnsembleSet> {
    let members = plan
        .members
        .iter()
        .map(|(_, p)| read_field(p))
        .collect::<Result<Vec<_>>>()?;
    let verification = read_field(&plan.verification)?;
    EnsembleSet::new(members, verification, format_time(&plan.valid_time))?
        .with_lead(plan.central_lead)
        .with_lags(plan.members.iter().map(|(l, _)| *l).collect())
}

pub fn build_lagged_ensembles(archive: &ForecastArchive, cfg: &LaggedConfig) -> Result<(Vec<EnsembleSet>, usize)> {
    let plans = plan_lagged_ensembles(archive, cfg)?;
    let sets = plans.plans.par_iter().map(load_lagged).collect::<Result<Vec<_>>>()?;
    Ok((sets, plans.skipped))
}

/// Scores every planned ensemble, loading one ensemble per task.
pub fn score_lagged(archive: &ForecastArchive, cfg: &LaggedConfig, sign: CrpsSign) -> Result<(ScoreSeries, usize)> {
    let plans = plan_lagged_ensembles(archive, cfg)?;
    let rows = plans
        .plans
        .par_iter()
        .map(|p| {
            let e = load_lagged(p)?;
            Ok(DateScores {
                valid_time: e.valid_time.clone(),
                lead_hours: e.lead_hours,
                stats: ensemble_stats(&e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ScoreSeries { sign, rows }, plans.skipped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Crps,
    Ermse,
    Ser,
    UbErmse,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 4] = [ScoreKind::Crps, ScoreKind::Ermse, ScoreKind::Ser, ScoreKind::UbErmse];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Crps => "crps",
            ScoreKind::Ermse => "ermse",
            ScoreKind::Ser => "ser",
            ScoreKind::UbErmse => "ubermse",
        }
    }

    fn eval(self, s: &ScoreSeries) -> Option<f64> {
        match self {
            ScoreKind::Crps => s.crps().ok(),
            ScoreKind::Ermse => s.ermse().ok(),
            ScoreKind::Ser => s.ser().ok(),
            ScoreKind::UbErmse => s.ub_ermse().ok().map(|u| u.value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub fraction: f64,
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            fraction: 1.0 / 3.0,
            resamples: 1000,
            level: 0.9,
            seed: 0,
        }
    }
}

/// Outcome of the percentile test for one score; `difference` is b − a.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Significance {
    pub score: ScoreKind,
    pub difference: f64,
    pub low: f64,
    pub high: f64,
    pub significant: bool,
}

/// Two-sided percentile bootstrap of aggregate score differences, resampling
/// a fraction of the dates with replacement. Scores that are undefined on
/// the full series are omitted.
pub fn bootstrap_significance(a: &ScoreSeries, b: &ScoreSeries, cfg: &BootstrapConfig) -> Result<Vec<Significance>> {
    let n = a.rows.len();
    if n == 0 || n != b.rows.len() {
        return Err(Error::param("score series must cover the same non-empty dates"));
    }
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        if ra.valid_time != rb.valid_time || ra.lead_hours != rb.lead_hours {
            return Err(Error::param(format!(
                "mismatched dates: {} +{}h vs {} +{}h",
                ra.valid_time, ra.lead_hours, rb.valid_time, rb.lead_hours
            )));
        }
    }
    if cfg.resamples < 1000 {
        return Err(Error::param("at least 1000 resamples are required"));
    }
    if !(cfg.fraction > 0.0 && cfg.fraction <= 1.0) || !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::param("fraction must lie in (0, 1] and level in (0, 1)"));
    }
    let m = ((n as f64 * cfg.fraction).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples: Vec<Vec<usize>> = (0..cfg.resamples)
        .map(|_| (0..m).map(|_| rng.random_range(0..n)).collect())
        .collect();
    let tail = 0.5 * (1.0 - cfg.level);
    let mut out = Vec::new();
    for kind in ScoreKind::ALL {
        let (Some(fa), Some(fb)) = (kind.eval(a), kind.eval(b)) else {
            continue;
        };
        let mut diffs: Vec<f64> = samples
            .iter()
            .filter_map(|idx| Some(kind.eval(&b.subset(idx))? - kind.eval(&a.subset(idx))?))
            .collect();
        if diffs.is_empty() {
            continue;
        }
        diffs.sort_by(f64::total_cmp);
        let q = quantiles(&diffs, &[tail, 1.0 - tail])?;
        out.push(Significance {
            score: kind,
            difference: fb - fa,
            low: q[0],
            high: q[1],
            significant: q[0] > 0.0 || q[1] < 0.0,
        });
    }
    Ok(out)
}
