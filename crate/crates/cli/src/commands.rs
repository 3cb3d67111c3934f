use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tension_sentinel::autoencoder::{CodeMode, CHANNELS, CODE_DIM, LSTM_HIDDEN};
use tension_sentinel::pipeline::{diagnose, fit_baseline, impute, train_with};
use tension_sentinel::preprocess::{apply_normalizer, detrend, estimate_trend, fit_normalizer};
use tension_sentinel::synth::{generate_corpus, DamageEvent, MissingEvent};
use tension_sentinel::{
    load_checkpoint, save_checkpoint, Autoencoder, LstmAeModel, ModelKind, MultiChannelSeries,
};

use crate::config::{parse_period, parse_seconds, RunConfig};
use crate::{plot, CliError, Cli, Command, DataArgs, DetrendArgs, DiagnoseArgs, ImputeArgs, SynthArgs, TrainArgs};

/// Scoring window used by `diagnose` when neither flag nor config sets one.
pub const DEFAULT_SCORE_WINDOW: usize = 1440;

pub const EXIT_DAMAGE: u8 = 2;

pub fn run(cli: &Cli) -> Result<u8, CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    match &cli.command {
        Command::Synth(a) => synth(&cfg, a),
        Command::Detrend(a) => detrend_cmd(&cfg, a),
        Command::Train(a) => train_cmd(&mut cfg, a),
        Command::Impute(a) => impute_cmd(a),
        Command::Diagnose(a) => diagnose_cmd(&cfg, a),
        Command::Plot(a) => plot::run(&cfg, a),
    }
    .map(|damaged| if damaged { EXIT_DAMAGE } else { 0 })
}

/// Inputs must be existing files; outputs need an existing directory and may
/// not alias an input or each other.
pub fn check_paths(inputs: &[&Path], outputs: &[&Path]) -> Result<(), CliError> {
    let mut seen_inputs = Vec::new();
    for p in inputs {
        if !p.is_file() {
            return Err(CliError::msg(format!("input {} does not exist", p.display())));
        }
        seen_inputs.push(p.canonicalize().map_err(|e| CliError::msg(format!("{}: {e}", p.display())))?);
    }
    let mut seen_outputs: Vec<PathBuf> = Vec::new();
    for p in outputs {
        let parent = match p.parent() {
            Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
            _ => PathBuf::from("."),
        };
        if !parent.is_dir() {
            return Err(CliError::msg(format!("output directory {} does not exist", parent.display())));
        }
        let name = p
            .file_name()
            .ok_or_else(|| CliError::msg(format!("output {} is not a file path", p.display())))?;
        let full = parent
            .canonicalize()
            .map_err(|e| CliError::msg(format!("{}: {e}", parent.display())))?
            .join(name);
        if seen_inputs.contains(&full) {
            return Err(CliError::msg(format!("output {} would overwrite an input", p.display())));
        }
        if seen_outputs.contains(&full) {
            return Err(CliError::msg(format!("output {} is given twice", p.display())));
        }
        seen_outputs.push(full);
    }
    Ok(())
}

fn split3<'a>(text: &'a str, what: &str) -> Result<(&'a str, &'a str, &'a str), CliError> {
    match text.split(':').collect::<Vec<_>>()[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(CliError::msg(format!("{what} `{text}` must look like CABLE:A:B"))),
    }
}

fn seconds(text: &str) -> Result<f64, CliError> {
    parse_seconds(text).map_err(CliError::msg)
}

fn synth(cfg: &RunConfig, a: &SynthArgs) -> Result<bool, CliError> {
    check_paths(&[], &[&a.out])?;
    let mut scenario = cfg.scenario.clone();
    if let Some(d) = a.duration {
        scenario.traffic.duration = d;
    }
    if let Some(r) = a.rate {
        scenario.traffic.sample_rate = r;
    }
    if let Some(r) = a.traffic_rate {
        scenario.traffic.arrival_rate = r;
    }
    for d in &a.damage {
        let (cable, start, reduction) = split3(d, "damage")?;
        let reduction = reduction
            .parse()
            .map_err(|_| CliError::msg(format!("damage reduction `{reduction}` is not a number")))?;
        scenario.script.damage.push(DamageEvent { cable: cable.into(), start: seconds(start)?, reduction });
    }
    for m in &a.missing {
        let (cable, start, end) = split3(m, "missing")?;
        scenario.script.missing.push(MissingEvent { cable: cable.into(), start: seconds(start)?, end: seconds(end)? });
    }
    let series = generate_corpus(&scenario.bridge, &scenario.traffic, &scenario.script, cfg.seed)?;
    series.export_csv(&a.out)?;
    info!("wrote {} rows to {}", series.len(), a.out.display());
    Ok(false)
}

fn detrend_cmd(cfg: &RunConfig, a: &DetrendArgs) -> Result<bool, CliError> {
    check_paths(&[&a.input], &[&a.out, &a.trend_out])?;
    let seg = a.segment_seconds.unwrap_or(cfg.preprocess.segment_seconds);
    let series = MultiChannelSeries::import_csv(&a.input)?;
    let trend = estimate_trend(&series, seg)?;
    detrend(&series, &trend)?.export_csv(&a.out)?;
    trend.evaluate(&series)?.export_csv(&a.trend_out)?;
    Ok(false)
}

/// Reads `data`, hides `hide` in the raw domain, then detrends unless the file already is.
pub fn load_detrended(data: &DataArgs, hide: &[String], segment_seconds: f64) -> Result<MultiChannelSeries, CliError> {
    let mut series = MultiChannelSeries::import_csv(&data.data)?;
    let cols = series.channel_indices(hide)?;
    series.hide_channels(&cols);
    if data.detrended {
        return Ok(series);
    }
    let trend = estimate_trend(&series, segment_seconds)?;
    Ok(detrend(&series, &trend)?)
}

/// Rows whose offset from the first timestamp lies in `[a, b)`.
pub fn period(series: &MultiChannelSeries, (a, b): (f64, f64)) -> MultiChannelSeries {
    let t0 = series.start_time();
    series.slice_seconds(t0 + a, t0 + b)
}

pub fn init_model(kind: ModelKind, mode: CodeMode, seed: u64) -> Autoencoder {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        ModelKind::Lstm => Autoencoder::Lstm(LstmAeModel::init_with(CHANNELS, CODE_DIM, &LSTM_HIDDEN, mode, &mut rng)),
        ModelKind::Dnn => Autoencoder::init(kind, &mut rng),
    }
}

fn train_cmd(cfg: &mut RunConfig, a: &TrainArgs) -> Result<bool, CliError> {
    let mut outs: Vec<&Path> = vec![&a.out];
    outs.extend(a.log.as_deref());
    check_paths(&[&a.data.data], &outs)?;
    if let Some(k) = a.model {
        cfg.model.kind = k;
    }
    if let Some(k) = a.drop_k {
        cfg.train.drop_k = k;
    }
    if let Some(n) = a.iterations {
        cfg.train.max_iteration = n;
    }
    if let Some(w) = a.window {
        cfg.train.window = w;
    }
    let seg = cfg.preprocess.segment_seconds;
    let mut series = load_detrended(&a.data, &[], seg)?;
    if let Some(p) = a.train_period {
        series = period(&series, p);
    }
    let stats = fit_normalizer(&series)?;
    let normalized = apply_normalizer(&series, &stats)?;
    let mut model = init_model(cfg.model.kind, cfg.model.code_mode, cfg.train.seed);
    let log = train_with(&mut model, &normalized, &cfg.train, |e| {
        info!("iteration {} loss {:.6} ({:.1} s)", e.iteration, e.loss, e.seconds)
    })?;
    save_checkpoint(&model, &stats, seg, &cfg.train, &a.out)?;
    if let Some(path) = &a.log {
        let f = File::create(path).map_err(|e| CliError::msg(format!("{}: {e}", path.display())))?;
        log.write_csv(BufWriter::new(f))?;
    }
    Ok(false)
}

fn impute_cmd(a: &ImputeArgs) -> Result<bool, CliError> {
    check_paths(&[&a.data.data, &a.checkpoint], &[&a.out])?;
    let (model, ckpt) = load_checkpoint(&a.checkpoint)?;
    let series = load_detrended(&a.data, &a.hide, ckpt.segment_seconds)?;
    let result = impute(&model, &series, &ckpt.channel_stats, ckpt.train_config.window)?;
    result.series.export_csv(&a.out)?;
    Ok(false)
}

fn diagnose_cmd(cfg: &RunConfig, a: &DiagnoseArgs) -> Result<bool, CliError> {
    let mut outs: Vec<&Path> = vec![&a.out];
    outs.extend(a.imputed_out.as_deref());
    check_paths(&[&a.data.data, &a.checkpoint], &outs)?;
    let baseline_period = match (a.baseline_period, &cfg.diagnose.baseline_period) {
        (Some(p), _) => p,
        (None, Some(text)) => parse_period(text).map_err(CliError::msg)?,
        (None, None) => return Err(CliError::msg("--baseline-period is required")),
    };
    let eval_period = match (a.eval_period, &cfg.diagnose.eval_period) {
        (Some(p), _) => Some(p),
        (None, Some(text)) => Some(parse_period(text).map_err(CliError::msg)?),
        (None, None) => None,
    };
    let missing = if a.missing.is_empty() { cfg.diagnose.missing.clone() } else { a.missing.clone() };
    let window = a.window.or(cfg.diagnose.window).unwrap_or(DEFAULT_SCORE_WINDOW);

    let (model, ckpt) = load_checkpoint(&a.checkpoint)?;
    let detrended = load_detrended(&a.data, &[], ckpt.segment_seconds)?;
    let normalized = apply_normalizer(&detrended, &ckpt.channel_stats)?;
    let dropped = normalized.channel_indices(&missing)?;
    let label = format!("{}:{}", baseline_period.0, baseline_period.1);
    let baseline = fit_baseline(&model, &period(&normalized, baseline_period), window, &dropped, label)?;
    let evaluation = match eval_period {
        Some(p) => period(&normalized, p),
        None => normalized,
    };
    let report = diagnose(&model, &baseline, &evaluation, &dropped)?;
    std::fs::write(&a.out, report.to_json()?).map_err(|e| CliError::msg(format!("{}: {e}", a.out.display())))?;

    if let Some(path) = &a.imputed_out {
        let mut physical = match eval_period {
            Some(p) => period(&detrended, p),
            None => detrended,
        };
        physical.hide_channels(&dropped);
        impute(&model, &physical, &ckpt.channel_stats, ckpt.train_config.window)?
            .series
            .export_csv(path)?;
    }
    let damaged = report.damaged();
    if damaged.is_empty() {
        println!("no damage detected");
    } else {
        println!("damaged: {}", damaged.join(","));
    }
    Ok(report.any_damage())
}
