use std::path::Path;
use std::sync::Arc;

use chrono::{Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use spectraloss::ensemble::*;
use spectraloss::io::write_field;
use spectraloss::{Error, Grid, GridField};

fn normal_field(grid: &Arc<Grid>, mean: f64, sd: f64, rng: &mut ChaCha8Rng) -> GridField {
    let v = (0..grid.len()).map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal)).collect();
    GridField::new(grid.clone(), v).unwrap()
}

#[test]
fn finite_ensemble_bias_identity() {
    let grid = Arc::new(Grid::gaussian(250, 400).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mu, ne) = (0.5, 9);
    let members: Vec<_> = (0..ne).map(|_| normal_field(&grid, mu, 1.0, &mut rng)).collect();
    let ens = EnsembleSet::new(members.clone(), GridField::zeros(grid.clone()), "t").unwrap();
    let stats = ensemble_stats(&ens);

    // Pointwise values give the standard error of the area-weighted means.
    let nlon = grid.nlon();
    let (mut se_e, mut se_u) = (0.0, 0.0);
    let (e_mean, u_mean) = (stats.emse, stats.unbiased_emse());
    for p in 0..grid.len() {
        let xs: Vec<f64> = members.iter().map(|m| m.values()[p]).collect();
        let mean = xs.iter().sum::<f64>() / ne as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (ne as f64 - 1.0);
        let w = grid.area_weight(p / nlon);
        se_e += (w * (mean * mean - e_mean)).powi(2);
        se_u += (w * (mean * mean - var / ne as f64 - u_mean)).powi(2);
    }
    let expected = mu * mu + 1.0 / ne as f64;
    assert!((e_mean - expected).abs() <= 3.0 * se_e.sqrt(), "{e_mean} vs {expected}");
    assert!((u_mean - mu * mu).abs() <= 3.0 * se_u.sqrt(), "{u_mean}");
    // Algebraic identity on a single ensemble.
    assert!((stats.unbiased_emse() + stats.spread / ne as f64 - stats.emse).abs() <= 1e-12);
}

#[test]
fn crps_matches_brute_force_and_closed_form() {
    let grid = Arc::new(Grid::gaussian(16, 32).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let members: Vec<_> = (0..1000).map(|_| normal_field(&grid, 0.0, 1.0, &mut rng)).collect();
    let ens = EnsembleSet::new(members.clone(), GridField::zeros(grid.clone()), "t").unwrap();
    let crps = fair_crps(&ens);
    // Closed form for a standard normal forecast of 0: 2φ(0) − 1/√π.
    let exact = (2.0 / std::f64::consts::PI).sqrt() - 1.0 / std::f64::consts::PI.sqrt();
    assert!((crps - exact).abs() <= 0.02 * exact, "{crps} vs {exact}");

    // Brute-force double sum on a subgrid of rows.
    let sub = Arc::new(Grid::gaussian(2, 4).unwrap());
    let small: Vec<_> = members
        .iter()
        .take(200)
        .map(|m| GridField::new(sub.clone(), m.values()[..8].to_vec()).unwrap())
        .collect();
    let small_ens = EnsembleSet::new(small.clone(), GridField::constant(sub.clone(), 0.3).unwrap(), "t").unwrap();
    let n = small.len() as f64;
    let mut brute = 0.0;
    for p in 0..8 {
        let xs: Vec<f64> = small.iter().map(|m| m.values()[p]).collect();
        let mae = xs.iter().map(|x| (x - 0.3).abs()).sum::<f64>() / n;
        let pairs: f64 = xs.iter().flat_map(|a| xs.iter().map(move |b| (a - b).abs())).sum();
        brute += sub.area_weight(p / 4) * (mae - pairs / (2.0 * n * (n - 1.0)));
    }
    assert!((fair_crps(&small_ens) - brute).abs() <= 1e-12);
    assert!(fair_crps(&small_ens) <= ensemble_stats(&small_ens).mean_abs_error);
}

#[test]
fn scores_invariant_under_rotation_and_shift() {
    let grid = Arc::new(Grid::gaussian(8, 16).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let members: Vec<_> = (0..5).map(|_| normal_field(&grid, 0.2, 1.0, &mut rng)).collect();
    let y = normal_field(&grid, 0.0, 1.0, &mut rng);
    let ens = EnsembleSet::new(members, y, "t").unwrap();
    let base = ensemble_stats(&ens);
    let rotated = ensemble_stats(&ens.map_fields(|f| f.rotate_longitude(5)).unwrap());
    let offset = GridField::from_fn(grid.clone(), |lat, lon| 3.0 * lat.sin() + lon.cos()).unwrap();
    let shifted = ens.map_fields(|f| f.add_scaled(1.0, &offset).unwrap()).unwrap();
    for (a, b) in [(base.crps(CrpsSign::Fair), rotated.crps(CrpsSign::Fair)), (base.emse, rotated.emse), (base.spread, rotated.spread)] {
        assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0));
    }
    assert!((ser(&ens).unwrap() - ser(&shifted).unwrap()).abs() <= 1e-12);
}

fn write_archive(root: &Path, inits: &[i64], leads_for: impl Fn(usize) -> Vec<i64>) {
    let grid = Arc::new(Grid::gaussian(2, 4).unwrap());
    let t0 = Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap();
    for (j, &h) in inits.iter().enumerate() {
        let init = t0 + Duration::hours(h);
        for lead in leads_for(j) {
            let path = ForecastArchive::member_path(root, &init, lead);
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            let v = (h + lead) as f64 / 100.0 + lead as f64 / 1000.0;
            write_field(&GridField::constant(grid.clone(), v).unwrap(), &path).unwrap();
        }
    }
}

#[test]
fn nine_consecutive_inits_make_one_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let inits: Vec<i64> = (0..9).map(|j| 12 * j).collect();
    write_archive(dir.path(), &inits, |j| vec![48 - 12 * (j as i64 - 4)]);
    let archive = ForecastArchive::scan(dir.path()).unwrap();
    let cfg = LaggedConfig::new(vec![48]);
    let (sets, skipped) = build_lagged_ensembles(&archive, &cfg).unwrap();
    assert_eq!((sets.len(), skipped), (1, 0));
    assert_eq!(sets[0].size(), 9);
    assert_eq!(sets[0].valid_time, "2022-01-05T00:00:00Z");
    assert_eq!(sets[0].member_lags.as_ref().unwrap()[0], -48);
}

#[test]
fn missing_member_is_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let inits: Vec<i64> = (0..9).filter(|&j| j != 2).map(|j| 12 * j).collect();
    write_archive(dir.path(), &inits, |j| {
        let idx = if j >= 2 { j + 1 } else { j } as i64;
        vec![48 - 12 * (idx - 4)]
    });
    let archive = ForecastArchive::scan(dir.path()).unwrap();
    let (sets, skipped) = build_lagged_ensembles(&archive, &LaggedConfig::new(vec![48])).unwrap();
    assert_eq!((sets.len(), skipped), (0, 1));
}

#[test]
fn sliding_windows_over_twenty_inits() {
    let dir = tempfile::tempdir().unwrap();
    let inits: Vec<i64> = (0..20).map(|j| 12 * j).collect();
    write_archive(dir.path(), &inits, |_| (0..=8).map(|i| 12 * i).collect());
    let archive = ForecastArchive::scan(dir.path()).unwrap();
    let cfg = LaggedConfig::new(vec![48]);
    let (series, skipped) = score_lagged(&archive, &cfg, CrpsSign::Fair).unwrap();
    assert_eq!(series.n_dates(), 12);
    assert_eq!(skipped, 8);
    let mut a = Vec::new();
    let mut b = Vec::new();
    series.write_csv(&mut a).unwrap();
    score_lagged(&archive, &cfg, CrpsSign::Fair).unwrap().0.write_csv(&mut b).unwrap();
    assert_eq!(a, b);
    assert!(String::from_utf8(a).unwrap().starts_with("valid_time,lead_h,crps,ermse,ser,ubermse\n"));
}

#[test]
fn corrupt_member_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let inits: Vec<i64> = (0..9).map(|j| 12 * j).collect();
    write_archive(dir.path(), &inits, |j| vec![48 - 12 * (j as i64 - 4)]);
    let t = Utc.with_ymd_and_hms(2022, 1, 1, 12, 0, 0).unwrap();
    let bad = ForecastArchive::member_path(dir.path(), &t, 84);
    std::fs::write(&bad, b"junk").unwrap();
    let archive = ForecastArchive::scan(dir.path()).unwrap();
    let err = build_lagged_ensembles(&archive, &LaggedConfig::new(vec![48])).unwrap_err();
    assert!(err.to_string().contains("lead_84.sgf"), "{err}");
}

fn series(values: &[f64], shift: f64) -> ScoreSeries {
    let mut s = ScoreSeries::new(CrpsSign::Fair);
    for (i, v) in values.iter().enumerate() {
        s.push(DateScores {
            valid_time: format!("d{i}"),
            lead_hours: 24,
            stats: EnsembleStats {
                mean_abs_error: v + shift,
                pair_spread: 0.1,
                emse: (v + shift).powi(2),
                spread: 0.5,
                n_members: 9,
            },
        });
    }
    s
}

#[test]
fn bootstrap_flags() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let vals: Vec<f64> = (0..90).map(|_| 1.0 + 0.05 * rng.sample::<f64, _>(StandardNormal)).collect();
    let cfg = BootstrapConfig { seed: 3, ..Default::default() };
    let same = bootstrap_significance(&series(&vals, 0.0), &series(&vals, 0.0), &cfg).unwrap();
    assert!(same.iter().all(|s| !s.significant));
    let shifted = bootstrap_significance(&series(&vals, 0.0), &series(&vals, 0.5), &cfg).unwrap();
    let crps = shifted.iter().find(|s| s.score == ScoreKind::Crps).unwrap();
    assert!(crps.significant && crps.low > 0.0);
    let again = bootstrap_significance(&series(&vals, 0.0), &series(&vals, 0.5), &cfg).unwrap();
    assert_eq!(shifted, again);
    let mut other = series(&vals, 0.0);
    other.push(series(&[1.0], 0.0).rows()[0].clone());
    assert!(matches!(
        bootstrap_significance(&series(&vals, 0.0), &other, &cfg),
        Err(Error::Parameter(_))
    ));
}
