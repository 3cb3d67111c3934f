use tension_sentinel::pipeline::{impute, missing_rate_sweep, window_errors, DAMAGE_THRESHOLD};
use tension_sentinel::preprocess::{apply_normalizer, fit_normalizer, median};
use tension_sentinel::{load_checkpoint, DamageReport, ModelKind, TrainLog};

use crate::commands::{check_paths, load_detrended, DEFAULT_SCORE_WINDOW};
use crate::config::RunConfig;
use crate::{CliError, DataArgs, PlotArgs, PlotKind};

/// Missing-channel counts covered by the sweep export.
pub const SWEEP_KS: std::ops::RangeInclusive<usize> = 0..=12;

/// Grid points per channel in the violin export.
pub const KDE_POINTS: usize = 64;

pub fn run(cfg: &RunConfig, a: &PlotArgs) -> Result<bool, CliError> {
    let rows = match a.kind {
        PlotKind::Loss => loss(a)?,
        PlotKind::Zbars => zbars(a)?,
        PlotKind::Sweep => sweep(cfg, a)?,
        PlotKind::Overlay => overlay(a)?,
        PlotKind::Violin => violin(a)?,
    };
    let mut w = csv::Writer::from_path(&a.out).map_err(|e| CliError::msg(format!("{}: {e}", a.out.display())))?;
    for row in rows {
        w.write_record(&row).map_err(|e| CliError::msg(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::msg(e.to_string()))?;
    Ok(false)
}

type Rows = Vec<Vec<String>>;

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

fn required<'a, T: ?Sized>(v: Option<&'a T>, flag: &str, kind: &str) -> Result<&'a T, CliError> {
    v.ok_or_else(|| CliError::msg(format!("--{flag} is required for --kind {kind}")))
}

fn data_args(a: &PlotArgs, kind: &str) -> Result<DataArgs, CliError> {
    Ok(DataArgs {
        data: required(a.data.as_deref(), "data", kind)?.to_path_buf(),
        detrended: a.detrended,
    })
}

fn loss(a: &PlotArgs) -> Result<Rows, CliError> {
    let input = required(a.input.as_deref(), "input", "loss")?;
    check_paths(&[input], &[&a.out])?;
    let f = std::fs::File::open(input).map_err(|e| CliError::msg(format!("{}: {e}", input.display())))?;
    let log = TrainLog::read_csv(f)?;
    let mut rows = vec![header(&["iteration", "loss"])];
    rows.extend(log.entries.iter().map(|e| vec![e.iteration.to_string(), e.loss.to_string()]));
    Ok(rows)
}

fn zbars(a: &PlotArgs) -> Result<Rows, CliError> {
    let input = required(a.input.as_deref(), "input", "zbars")?;
    check_paths(&[input], &[&a.out])?;
    let text = std::fs::read_to_string(input).map_err(|e| CliError::msg(format!("{}: {e}", input.display())))?;
    let report: DamageReport =
        serde_json::from_str(&text).map_err(|e| CliError::msg(format!("{} is not a damage report: {e}", input.display())))?;
    let mut rows = vec![header(&["channel", "z", "threshold", "damaged"])];
    for c in &report.channels {
        rows.push(vec![
            c.name.clone(),
            c.z.map(|z| z.to_string()).unwrap_or_default(),
            DAMAGE_THRESHOLD.to_string(),
            c.damaged.to_string(),
        ]);
    }
    Ok(rows)
}

fn sweep(cfg: &RunConfig, a: &PlotArgs) -> Result<Rows, CliError> {
    let data = data_args(a, "sweep")?;
    check_paths(&[&data.data], &[&a.out])?;
    let mut train = cfg.train.clone();
    if let Some(n) = a.iterations {
        train.max_iteration = n;
    }
    if let Some(w) = a.train_window {
        train.window = w;
    }
    let series = load_detrended(&data, &[], cfg.preprocess.segment_seconds)?;
    let normalized = apply_normalizer(&series, &fit_normalizer(&series)?)?;
    let kinds = match a.model {
        Some(k) => vec![k],
        None => vec![ModelKind::Lstm, ModelKind::Dnn],
    };
    let ks: Vec<usize> = SWEEP_KS.collect();
    let mut rows = vec![header(&["model", "k", "missing_rate", "final_loss"])];
    for kind in kinds {
        for p in missing_rate_sweep(kind, &normalized, &ks, &train)? {
            rows.push(vec![kind.to_string(), p.k.to_string(), p.missing_rate.to_string(), p.final_loss.to_string()]);
        }
    }
    Ok(rows)
}

fn overlay(a: &PlotArgs) -> Result<Rows, CliError> {
    let data = data_args(a, "overlay")?;
    let ckpt_path = required(a.checkpoint.as_deref(), "checkpoint", "overlay")?;
    let channel = required(a.channel.as_deref(), "channel", "overlay")?;
    check_paths(&[&data.data, ckpt_path], &[&a.out])?;
    let (model, ckpt) = load_checkpoint(ckpt_path)?;
    let truth = load_detrended(&data, &[], ckpt.segment_seconds)?;
    let col = truth
        .channel_index(channel)
        .ok_or_else(|| CliError::msg(format!("unknown channel {channel}")))?;
    let hidden = load_detrended(&data, &[channel.to_string()], ckpt.segment_seconds)?;
    let filled = impute(&model, &hidden, &ckpt.channel_stats, ckpt.train_config.window)?.series;
    let mut rows = vec![header(&["time", "truth", "imputed"])];
    for r in 0..truth.len() {
        let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        rows.push(vec![truth.time(r).to_string(), cell(truth.get(r, col)), cell(filled.get(r, col))]);
    }
    Ok(rows)
}

fn violin(a: &PlotArgs) -> Result<Rows, CliError> {
    let data = data_args(a, "violin")?;
    let ckpt_path = required(a.checkpoint.as_deref(), "checkpoint", "violin")?;
    check_paths(&[&data.data, ckpt_path], &[&a.out])?;
    let (model, ckpt) = load_checkpoint(ckpt_path)?;
    let series = apply_normalizer(&load_detrended(&data, &[], ckpt.segment_seconds)?, &ckpt.channel_stats)?;
    let dropped = series.channel_indices(&a.missing)?;
    let errors = window_errors(&model, &series, a.window.unwrap_or(DEFAULT_SCORE_WINDOW), &dropped)?;
    let mut rows = vec![header(&["channel", "error", "density", "median"])];
    for (c, name) in series.names().iter().enumerate() {
        let mut e: Vec<f64> = errors.iter().filter_map(|w| w[c]).collect();
        let Some(mid) = median(&mut e) else {
            continue;
        };
        for (x, d) in kde(&e, KDE_POINTS) {
            rows.push(vec![name.clone(), x.to_string(), d.to_string(), mid.to_string()]);
        }
    }
    Ok(rows)
}

/// Gaussian kernel density on an evenly spaced grid, Silverman bandwidth.
pub fn kde(samples: &[f64], points: usize) -> Vec<(f64, f64)> {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
    let spread = match (q(0.75) - q(0.25)) / 1.34 {
        iqr if iqr > 0.0 => sd.min(iqr),
        _ => sd,
    };
    let h = if spread > 0.0 { 0.9 * spread * n.powf(-0.2) } else { mean.abs().max(1.0) * 1e-3 };
    let (lo, hi) = (sorted[0] - 3.0 * h, sorted[sorted.len() - 1] + 3.0 * h);
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    (0..points)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (points - 1).max(1) as f64;
            let d = samples.iter().map(|s| (-0.5 * ((x - s) / h).powi(2)).exp()).sum::<f64>() * norm;
            (x, d)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kde_integrates_to_one() {
        let samples: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 10.0).collect();
        let grid = kde(&samples, 400);
        let dx = grid[1].0 - grid[0].0;
        let area: f64 = grid.iter().map(|(_, d)| d * dx).sum();
        assert!((area - 1.0).abs() < 0.02, "area {area}");
    }

    #[test]
    fn kde_of_constant_sample_is_finite() {
        let grid = kde(&[2.0; 10], 16);
        assert!(grid.iter().all(|(x, d)| x.is_finite() && d.is_finite()));
    }
}
