//! Subcommand implementations.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use spectraloss::diag::{
    diagnostics, highpass, lowpass, power_spectrum, ResolutionDetector, ResolutionMode, SpectralDiagnostics,
};
use spectraloss::ensemble::{
    ensemble_stats, score_lagged, CrpsSign, DateScores, EnsembleSet, ForecastArchive, LaggedConfig, ScoreSeries,
};
use spectraloss::io::fmt_f64;
use spectraloss::loss::{
    amse_gradient_check, amse_with, analytic_optimum_sweep, kl_optimum, mae, mse, weighted_multivariable_loss,
    AmseOptions, LossBreakdown, VariableWeighting,
};
use spectraloss::qq::{default_probabilities, qq_with_alpha};
use spectraloss::random::{normal_sample, power_law_psd, random_spectral, seeded_rng};
use spectraloss::toy::{emit_fig2_analog, train, BatchReduction, LrSchedule, SyntheticSpec, TrainConfig};
use spectraloss::{Error, Grid, GridField, GridKind, LossKind, SpectralField, Transform, Truncation};

use crate::output::{default_trunc, io_error, is_spectral, kv, read_grid, read_samples, read_spec, write_grid, write_spec, Sink};
use crate::{
    AnalyzeArgs, Command, CompareArgs, DemoCommand, EnsembleCommand, FilterArgs, GenArgs, GradcheckArgs, KlArgs,
    LaggedArgs, LossArgs, QqArgs, ScoreArgs, SpectrumArgs, SynthArgs, TrainArgs,
};

pub enum Failure {
    /// Bad flags or argument combinations; exit status 1.
    Usage(String),
    /// Unreadable or inconsistent data, or a failed check; exit status 2.
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parameter(msg) => Failure::Usage(msg),
            other => Failure::Data(other),
        }
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Gen(a) => gen(a),
        Command::Analyze(a) => analyze(a),
        Command::Synth(a) => synth(a),
        Command::Spectrum(a) => spectrum(a),
        Command::Compare(a) => compare(a),
        Command::Loss(a) => loss(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Filter(a) => filter(a),
        Command::Ensemble(EnsembleCommand::Score(a)) => ensemble_score(a),
        Command::Ensemble(EnsembleCommand::Lagged(a)) => ensemble_lagged(a),
        Command::Qq(a) => qq(a),
        Command::Klstudy(a) => klstudy(a),
        Command::Demo(DemoCommand::Train(a)) => demo_train(a),
    }
}

fn grid_kind(s: &str) -> Result<GridKind, Failure> {
    match s.to_ascii_lowercase().as_str() {
        "gaussian" => Ok(GridKind::Gaussian),
        "equiangular" => Ok(GridKind::Equiangular),
        other => Err(usage(format!("unknown grid kind `{other}` (expected gaussian or equiangular)"))),
    }
}

fn require_file(path: &Path) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Data(io_error(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        )))
    }
}

fn transform_for(grid: &Arc<Grid>, trunc: Option<usize>) -> Result<Transform, Failure> {
    let trunc = trunc.map(Truncation).unwrap_or_else(|| default_trunc(grid));
    Ok(Transform::new(grid.clone(), trunc)?)
}

/// Spectral coefficients of a grid or spectral file.
fn load_spectral(path: &Path, trunc: Option<usize>) -> Result<SpectralField, Failure> {
    require_file(path)?;
    if is_spectral(path) {
        let s = read_spec(path)?;
        if let Some(k) = trunc.filter(|&k| k != s.truncation().max_wavenumber()) {
            return Err(usage(format!(
                "{} holds T{}, not T{k}",
                path.display(),
                s.truncation().max_wavenumber()
            )));
        }
        Ok(s)
    } else {
        let f = read_grid(path)?;
        Ok(transform_for(f.grid(), trunc)?.analyze(&f)?)
    }
}

fn gen(a: GenArgs) -> Outcome {
    let mut rng = seeded_rng(a.seed);
    let trunc = Truncation(a.trunc);
    if !(a.variance >= 0.0) {
        return Err(usage("variance must be non-negative"));
    }
    let field = match (&a.like, a.rho) {
        (Some(base_path), Some(rho)) => {
            if !(0.0..=1.0).contains(&rho) {
                return Err(usage("rho must lie in [0, 1]"));
            }
            require_file(base_path)?;
            let base = read_grid(base_path)?;
            let t = Transform::new(base.grid().clone(), trunc)?;
            let spec = t.analyze(&base)?;
            let psd = power_spectrum(&spec);
            let noise = random_spectral(trunc, |k| psd[k], &mut rng);
            t.synthesize(&spec.scaled(rho).add_scaled((1.0 - rho * rho).sqrt(), &noise)?)?
        }
        _ => {
            let grid = Arc::new(Grid::new(a.nlat, a.nlon, grid_kind(&a.grid)?)?);
            let psd = power_law_psd(trunc, a.slope);
            let spec = random_spectral(trunc, |k| a.variance * psd[k], &mut rng);
            Transform::new(grid, trunc)?.synthesize(&spec)?
        }
    };
    let field = match a.name {
        Some(n) => field.with_name(n),
        None => field,
    };
    write_grid(&field, &a.out)?;
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Outcome {
    require_file(&a.input)?;
    let f = read_grid(&a.input)?;
    let t = transform_for(f.grid(), a.trunc)?;
    if !f.grid().exact_parseval() {
        eprintln!("note: {} grid; Parseval holds only approximately", "equiangular");
    }
    write_spec(&t.analyze(&f)?, &a.out)?;
    Ok(())
}

fn synth(a: SynthArgs) -> Outcome {
    require_file(&a.input)?;
    let spec = read_spec(&a.input)?;
    let k = spec.truncation().max_wavenumber();
    let nlat = a.nlat.unwrap_or(k + 1).max(2);
    let nlon = a.nlon.unwrap_or(2 * k + 2).max(4);
    let grid = Arc::new(Grid::new(nlat, nlon, grid_kind(&a.grid)?)?);
    let f = Transform::new(grid, spec.truncation())?.synthesize(&spec)?;
    write_grid(&f, &a.out)?;
    Ok(())
}

fn spectrum(a: SpectrumArgs) -> Outcome {
    let spec = load_spectral(&a.input, a.trunc)?;
    let sink = Sink::new(a.out.out);
    let mut w = sink.writer()?;
    let mut text = String::from("k,psd\n");
    for (k, p) in power_spectrum(&spec).iter().enumerate() {
        text.push_str(&format!("{k},{}\n", fmt_f64(*p)));
    }
    write_text(&mut w, &text)
}

fn write_text(w: &mut dyn Write, text: &str) -> Outcome {
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Failure::Data(io_error(Path::new("<output>"), e)))
}

fn resolution_note(d: &SpectralDiagnostics, det: &ResolutionDetector, mode: ResolutionMode) -> String {
    let name = match mode {
        ResolutionMode::Dissipation => "effective_resolution_dissipation",
        ResolutionMode::Noise => "effective_resolution_noise",
    };
    match det.detect(d, mode) {
        Some(k) => format!("{name}={k}"),
        None => format!("{name}=none"),
    }
}

fn compare(a: CompareArgs) -> Outcome {
    if !(a.energy_fraction > 0.0 && a.energy_fraction < 1.0) {
        return Err(usage("energy fraction must lie in (0, 1)"));
    }
    let x = load_spectral(&a.x, a.trunc)?;
    let y = load_spectral(&a.y, a.trunc)?;
    let d = diagnostics(&x, &y)?;
    let sink = Sink::new(a.out.out);
    d.write_csv(sink.writer()?)?;
    let det = ResolutionDetector {
        energy_fraction: a.energy_fraction,
        ..Default::default()
    };
    sink.note(resolution_note(&d, &det, ResolutionMode::Dissipation));
    sink.note(resolution_note(&d, &det, ResolutionMode::Noise));
    Ok(())
}

fn read_variable_dir(dir: &Path) -> Result<BTreeMap<String, GridField>, Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::Data(io_error(dir, e)))?;
    let mut out = BTreeMap::new();
    for e in entries {
        let path = e.map_err(|e| Failure::Data(io_error(dir, e)))?.path();
        if path.extension().and_then(|s| s.to_str()) == Some("sgf") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), read_grid(&path)?);
            }
        }
    }
    Ok(out)
}

fn breakdown_csv(b: &LossBreakdown) -> String {
    let mut text = String::from("k,amplitude,decoherence\n");
    for k in 0..b.per_k_amplitude.len() {
        text.push_str(&format!(
            "{k},{},{}\n",
            fmt_f64(b.per_k_amplitude[k]),
            fmt_f64(b.per_k_decoherence[k])
        ));
    }
    text
}

fn loss(a: LossArgs) -> Outcome {
    let kind: LossKind = a.kind.parse()?;
    let opts = AmseOptions {
        decoherence_weight: a.decoherence_weight,
    };
    if !(opts.decoherence_weight >= 0.0) {
        return Err(usage("decoherence weight must be non-negative"));
    }
    if let Some(wpath) = &a.weights {
        require_file(wpath)?;
        let weighting = VariableWeighting::read(wpath)?;
        let xs = read_variable_dir(&a.x)?;
        let ys = read_variable_dir(&a.y)?;
        let first = xs
            .values()
            .next()
            .ok_or_else(|| Failure::Data(Error::MissingVariable(format!("no .sgf files in {}", a.x.display()))))?;
        let t = transform_for(first.grid(), a.trunc)?;
        let total = weighted_multivariable_loss(&xs, &ys, &weighting, kind, &t)?;
        println!("{}", kv("total", total));
        return Ok(());
    }
    if kind == LossKind::Mae {
        if a.out.is_some() {
            return Err(usage("mae has no per-wavenumber breakdown"));
        }
        require_file(&a.x)?;
        require_file(&a.y)?;
        let total = mae(&read_grid(&a.x)?, &read_grid(&a.y)?)?;
        println!("{}", kv("total", total));
        return Ok(());
    }
    let x = load_spectral(&a.x, a.trunc)?;
    let y = load_spectral(&a.y, a.trunc)?;
    let b = match kind {
        LossKind::Amse => amse_with(&x, &y, &opts)?,
        _ => mse(&x, &y)?,
    };
    println!("{}", kv("total", b.total));
    if let Some(p) = &a.out {
        let sink = Sink::new(Some(p.clone()));
        write_text(&mut sink.writer()?, &breakdown_csv(&b))?;
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Outcome {
    let r = amse_gradient_check(Truncation(a.trunc), a.trials, a.seed)?;
    println!("trials={}", r.trials);
    println!("{}", kv("max_relative_error", r.max_relative_error));
    if r.max_relative_error > a.tolerance {
        return Err(Failure::Data(Error::UndefinedScore(format!(
            "gradient check failed: {} exceeds {}",
            r.max_relative_error, a.tolerance
        ))));
    }
    Ok(())
}

fn filter(a: FilterArgs) -> Outcome {
    require_file(&a.input)?;
    let apply = |s: &SpectralField| if a.lowpass { lowpass(s, a.k0) } else { highpass(s, a.k0) };
    if is_spectral(&a.input) {
        let s = load_spectral(&a.input, a.trunc)?;
        write_spec(&apply(&s)?, &a.out)?;
    } else {
        let f = read_grid(&a.input)?;
        let t = transform_for(f.grid(), a.trunc)?;
        let out = t.synthesize(&apply(&t.analyze(&f)?)?)?;
        write_grid(&out, &a.out)?;
    }
    Ok(())
}

fn crps_sign(paper: bool) -> CrpsSign {
    if paper {
        CrpsSign::Printed
    } else {
        CrpsSign::Fair
    }
}

fn ensemble_score(a: ScoreArgs) -> Outcome {
    require_file(&a.truth)?;
    for m in &a.members {
        require_file(m)?;
    }
    let members = a.members.iter().map(|p| read_grid(p)).collect::<Result<Vec<_>, _>>()?;
    let ens = EnsembleSet::new(members, read_grid(&a.truth)?, a.valid_time.clone())?.with_lead(a.lead);
    let mut series = ScoreSeries::new(crps_sign(a.paper_sign));
    let stats = ensemble_stats(&ens);
    series.push(DateScores {
        valid_time: a.valid_time,
        lead_hours: a.lead,
        stats,
    });
    let sink = Sink::new(a.out.out);
    series.write_csv(sink.writer()?)?;
    if stats.ser().is_err() {
        sink.note("note: spread-error ratio undefined (zero ensemble-mean error)");
    }
    if stats.unbiased_emse() < 0.0 {
        sink.note("note: negative unbiased error estimate clamped to 0");
    }
    Ok(())
}

fn ensemble_lagged(a: LaggedArgs) -> Outcome {
    if !a.archive.is_dir() {
        return Err(Failure::Data(io_error(
            &a.archive,
            std::io::Error::new(std::io::ErrorKind::NotFound, "archive directory not found"),
        )));
    }
    let archive = ForecastArchive::scan(&a.archive)?;
    let cfg = LaggedConfig {
        window: a.window,
        stride_hours: a.stride,
        central_leads: a.leads,
    };
    let (series, skipped) = score_lagged(&archive, &cfg, crps_sign(a.paper_sign))?;
    let sink = Sink::new(a.out.out);
    series.write_csv(sink.writer()?)?;
    sink.note(format!("ensembles={}", series.n_dates()));
    sink.note(format!("skipped={skipped}"));
    if series.n_dates() > 0 {
        sink.note(kv("crps", series.crps()?));
        sink.note(kv("ermse", series.ermse()?));
        match series.ser() {
            Ok(v) => sink.note(kv("ser", v)),
            Err(_) => sink.note("ser=undefined"),
        }
        let ub = series.ub_ermse()?;
        sink.note(kv("ubermse", ub.value));
        if ub.clamped {
            sink.note("note: negative unbiased error estimate clamped to 0");
        }
    }
    Ok(())
}

fn qq(a: QqArgs) -> Outcome {
    let (x, y) = match a.samples.as_slice() {
        [] => {
            if a.n == 0 {
                return Err(usage("--n must be positive"));
            }
            let mut rng = seeded_rng(a.seed);
            let x = normal_sample(a.n, 0.0, 1.0, &mut rng);
            let y = normal_sample(a.n, a.shift, a.scale, &mut rng);
            (x, y)
        }
        [px, py] => {
            require_file(px)?;
            require_file(py)?;
            (read_samples(px)?, read_samples(py)?)
        }
        _ => return Err(usage("qq takes either two sample files or none")),
    };
    let r = qq_with_alpha(&x, &y, &default_probabilities(), a.alpha)?;
    let sink = Sink::new(a.out.out);
    r.write_csv(sink.writer()?)?;
    sink.note(kv("ks_band_halfwidth", r.ks_band_halfwidth));
    sink.note(format!("within_band={}", r.within_band()));
    Ok(())
}

fn klstudy(a: KlArgs) -> Outcome {
    if !a.curve {
        let o = kl_optimum(a.rho)?;
        println!("{}", kv("rho", o.rho));
        println!("{}", kv("optimal_sigma_ratio", o.optimal_sigma_ratio));
        println!("{}", kv("objective", o.objective_value));
        return Ok(());
    }
    let mut text = String::from("rho,kl_optimal_ratio,mse_optimum,amse_optimum\n");
    for i in 1..50 {
        let rho = i as f64 / 50.0;
        text.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(rho),
            fmt_f64(kl_optimum(rho)?.optimal_sigma_ratio),
            fmt_f64(analytic_optimum_sweep(rho, LossKind::Mse)?),
            fmt_f64(analytic_optimum_sweep(rho, LossKind::Amse)?)
        ));
    }
    let sink = Sink::new(a.out.out);
    write_text(&mut sink.writer()?, &text)
}

fn demo_train(a: TrainArgs) -> Outcome {
    let kind: LossKind = a.loss.parse()?;
    let mut spec = SyntheticSpec::new(Truncation(a.trunc), a.slope, a.seed);
    if let Some(r) = a.rho {
        spec = spec.with_constant_rho(r);
    }
    let mut cfg = TrainConfig::new(kind);
    cfg.steps = a.steps;
    cfg.batch = a.batch;
    cfg.init_gain = a.init_gain;
    cfg.eval_samples = a.eval_samples;
    cfg.schedule = if a.constant_lr {
        LrSchedule::Constant(a.lr)
    } else {
        LrSchedule::Cosine {
            start: a.lr,
            end: a.lr_end,
        }
    };
    if a.per_sample {
        cfg.reduction = BatchReduction::PerSample;
    }
    let traj = train(&spec, &cfg)?;
    let sink = Sink::new(a.out.out);
    emit_fig2_analog(&traj, sink.writer()?)?;
    let last = traj.final_record();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    sink.note(kv("mean_final_gain", traj.mean_final_gain()));
    sink.note(kv("mean_final_amplitude_ratio", mean(&last.amplitude_ratio)));
    sink.note(kv("mean_final_coherence", mean(&last.coherence)));
    Ok(())
}
