//! Training, baseline statistics, imputation and 3-sigma damage diagnosis.
//!
//! Every function here works on detrended, normalized series unless noted.

use std::time::Instant;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{Autoencoder, ModelKind, SequenceBatch, Workspace};
use crate::error::{Error, Result};
use crate::nn::{Gradients, LossScale, OptimizerKind, OptimizerState, Parameterized};
use crate::preprocess::{apply_normalizer, invert_normalizer, mask_channels_with, ChannelStats, WindowBatch};
use crate::series::MultiChannelSeries;
use crate::tensor::{BoolMatrix, RealMatrix};

pub const DAMAGE_THRESHOLD: f64 = 3.0;
/// Fewest reference windows accepted by [`fit_baseline`].
pub const MIN_BASELINE_WINDOWS: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Window length `T` in samples.
    pub window: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_iteration: usize,
    /// Channels zeroed per window during training.
    pub drop_k: usize,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    pub log_interval: usize,
    pub loss_scale: LossScale,
    /// Target lag in samples: the window starting at `s` is trained to reproduce the one at `s + lag`.
    pub lag: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            window: 2400,
            batch_size: 30,
            learning_rate: 0.005,
            max_iteration: 100_000,
            drop_k: 7,
            optimizer: OptimizerKind::Adam,
            clip_norm: 5.0,
            seed: 0,
            log_interval: 100,
            loss_scale: LossScale::PerSample,
            lag: 0,
        }
    }
}

impl TrainConfig {
    /// Short windows and iteration budget for a single desktop core.
    pub fn desk() -> Self {
        Self {
            window: 240,
            max_iteration: 5000,
            ..Self::default()
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.window == 0 || self.batch_size == 0 {
            return Err(Error::Config("window and batch size must be positive".into()));
        }
        if self.drop_k >= channels {
            return Err(Error::Config(format!(
                "drop_k = {} must be below the channel count {channels}",
                self.drop_k
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be nonnegative".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config("clip norm must be nonnegative".into()));
        }
        if self.log_interval == 0 {
            return Err(Error::Config("log interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: usize,
    /// Mean batch loss since the previous entry.
    pub loss: f64,
    /// Wall-clock seconds since the previous entry.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn initial_loss(&self) -> Option<f64> {
        self.entries.first().map(|e| e.loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.entries.last().map(|e| e.loss)
    }

    /// `iteration,loss` rows.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Csv(e.to_string());
        w.write_record(["iteration", "loss"]).map_err(err)?;
        for e in &self.entries {
            w.write_record([e.iteration.to_string(), e.loss.to_string()]).map_err(err)?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
            let field = |i: usize| rec.get(i).ok_or_else(|| Error::Csv("short row in loss log".into()));
            entries.push(LogEntry {
                iteration: field(0)?.parse().map_err(|_| Error::Csv("bad iteration".into()))?,
                loss: field(1)?.parse().map_err(|_| Error::Csv("bad loss".into()))?,
                seconds: 0.0,
            });
        }
        Ok(Self { entries })
    }
}

/// Draws one training batch: random windows, then `drop_k` channels zeroed per window.
fn training_batch(
    series: &MultiChannelSeries,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<WindowBatch> {
    let span = config.window + config.lag;
    if series.len() < span {
        return Err(Error::InsufficientData(format!(
            "series of {} samples is shorter than window + lag = {span}",
            series.len()
        )));
    }
    let last = series.len() - span;
    let starts: Vec<usize> = (0..config.batch_size).map(|_| rng.random_range(0..=last)).collect();
    let mut batch = WindowBatch::from_starts(series, config.window, &starts)?;
    if config.lag > 0 {
        let shifted: Vec<usize> = starts.iter().map(|s| s + config.lag).collect();
        let later = WindowBatch::from_starts(series, config.window, &shifted)?;
        batch.target = later.target;
        batch.target_mask = later.target_mask;
    }
    mask_channels_with(&mut batch, config.drop_k, rng)?;
    Ok(batch)
}

/// Trains `model` in place; `on_log` sees every log entry as it is produced.
pub fn train_with(
    model: &mut Autoencoder,
    series: &MultiChannelSeries,
    config: &TrainConfig,
    mut on_log: impl FnMut(&LogEntry),
) -> Result<TrainLog> {
    config.validate(series.channel_count())?;
    if model.channel_count() != series.channel_count() {
        return Err(Error::shape(
            "train",
            format!("{} channels", model.channel_count()),
            format!("{}", series.channel_count()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = OptimizerState::new(config.optimizer, config.learning_rate);
    let mut ws = Workspace::default();
    let mut grads = Gradients::zeros_like(model);
    let mut log = TrainLog::default();
    let mut acc = (0.0, 0usize);
    let mut clock = Instant::now();
    for it in 0..config.max_iteration {
        let batch = training_batch(series, config, &mut rng)?;
        let input = SequenceBatch::new(batch.steps, batch.batch, batch.input)?;
        grads.0.iter_mut().for_each(|g| g.fill(0.0));
        let loss = match model.loss_and_gradient(
            &input,
            &batch.target,
            Some(&batch.target_mask),
            config.loss_scale,
            &mut ws,
            &mut grads,
        ) {
            Ok(l) => l,
            Err(Error::EmptyLoss) => continue,
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Divergence { iteration: it, loss });
        }
        if config.clip_norm > 0.0 {
            grads.clip_global_norm(config.clip_norm);
        }
        opt.step_model(model, &grads)?;
        acc.0 += loss;
        acc.1 += 1;
        if it == 0 || (it + 1) % config.log_interval == 0 || it + 1 == config.max_iteration {
            let entry = LogEntry {
                iteration: it + 1,
                loss: acc.0 / acc.1 as f64,
                seconds: clock.elapsed().as_secs_f64(),
            };
            on_log(&entry);
            log.entries.push(entry);
            acc = (0.0, 0);
            clock = Instant::now();
        }
    }
    Ok(log)
}

/// Trains a copy of `model` and returns it with its loss log.
pub fn train(model: &Autoencoder, series: &MultiChannelSeries, config: &TrainConfig) -> Result<(Autoencoder, TrainLog)> {
    let mut m = model.clone();
    let log = train_with(&mut m, series, config, |_| {})?;
    Ok((m, log))
}

/// Start rows of consecutive length-`window` blocks; a final block is aligned
/// to the series end when `cover_tail` is set and rows remain.
pub fn tiled_starts(len: usize, window: usize, cover_tail: bool) -> Vec<usize> {
    if window == 0 || len < window {
        return Vec::new();
    }
    let mut starts: Vec<usize> = (0..=len - window).step_by(window).collect();
    if cover_tail && len % window != 0 {
        starts.push(len - window);
    }
    starts
}

/// Reconstructs `series` window by window with `zeroed` channels blanked at input.
///
/// Returns one `window x M` reconstruction per start.
pub fn reconstruct_windows(
    model: &Autoencoder,
    series: &MultiChannelSeries,
    window: usize,
    starts: &[usize],
    zeroed: &[usize],
) -> Result<Vec<RealMatrix>> {
    const CHUNK: usize = 16;
    let chunks: Vec<Result<Vec<RealMatrix>>> = starts
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut batch = WindowBatch::from_starts(series, window, chunk)?;
            for b in 0..batch.batch {
                batch.drop_channels(b, zeroed);
            }
            let input = SequenceBatch::new(batch.steps, batch.batch, batch.input)?;
            let out = model.reconstruct_batch(&input)?;
            let m = out.cols();
            Ok((0..chunk.len())
                .map(|b| RealMatrix::from_fn(window, m, |t, c| out.get(t * chunk.len() + b, c)))
                .collect())
        })
        .collect();
    let mut all = Vec::with_capacity(starts.len());
    for c in chunks {
        all.extend(c?);
    }
    Ok(all)
}

/// Mean squared reconstruction error per channel for each window, over observed entries.
///
/// `None` where a window has no observation of that channel.
pub fn window_errors(
    model: &Autoencoder,
    series: &MultiChannelSeries,
    window: usize,
    zeroed: &[usize],
) -> Result<Vec<Vec<Option<f64>>>> {
    let starts = tiled_starts(series.len(), window, false);
    let recon = reconstruct_windows(model, series, window, &starts, zeroed)?;
    let m = series.channel_count();
    Ok(starts
        .iter()
        .zip(&recon)
        .map(|(&s, r)| {
            (0..m)
                .map(|c| {
                    let mut sum = 0.0;
                    let mut n = 0usize;
                    for t in 0..window {
                        if let Some(v) = series.get(s + t, c) {
                            let d = r.get(t, c) - v;
                            sum += d * d;
                            n += 1;
                        }
                    }
                    (n > 0).then(|| sum / n as f64)
                })
                .collect()
        })
        .collect())
}

/// Reference distribution of per-window reconstruction error for each channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineStats {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub window: usize,
    pub window_count: usize,
    /// Free-form label of the reference period.
    pub period: String,
    /// Channels blanked at input while the baseline was measured.
    pub dropped: Vec<String>,
}

/// Per-channel mean and standard deviation of window errors on a healthy period.
///
/// `dropped` channels are blanked at input exactly as they will be at diagnosis.
pub fn fit_baseline(
    model: &Autoencoder,
    healthy: &MultiChannelSeries,
    window: usize,
    dropped: &[usize],
    period: impl Into<String>,
) -> Result<BaselineStats> {
    check_model_channels(model, healthy)?;
    let errors = window_errors(model, healthy, window, dropped)?;
    if errors.len() < MIN_BASELINE_WINDOWS {
        return Err(Error::InsufficientData(format!(
            "reference period yields {} windows of {window} samples, need {MIN_BASELINE_WINDOWS}",
            errors.len()
        )));
    }
    let m = healthy.channel_count();
    let mut mean = Vec::with_capacity(m);
    let mut std = Vec::with_capacity(m);
    for c in 0..m {
        let e: Vec<f64> = errors.iter().filter_map(|w| w[c]).collect();
        if e.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "channel {} is observed in {} reference windows",
                healthy.names()[c],
                e.len()
            )));
        }
        let n = e.len() as f64;
        let mu = e.iter().sum::<f64>() / n;
        let sd = (e.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1.0)).sqrt();
        if !(sd > 0.0) {
            return Err(Error::DegenerateChannel {
                channel: healthy.names()[c].clone(),
                reason: "reconstruction error does not vary over the reference period".into(),
            });
        }
        mean.push(mu);
        std.push(sd);
    }
    Ok(BaselineStats {
        names: healthy.names().to_vec(),
        mean,
        std,
        window,
        window_count: errors.len(),
        period: period.into(),
        dropped: dropped.iter().map(|&c| healthy.names()[c].clone()).collect(),
    })
}

fn check_model_channels(model: &Autoencoder, series: &MultiChannelSeries) -> Result<()> {
    if model.channel_count() != series.channel_count() {
        return Err(Error::shape(
            "model channels",
            format!("{}", model.channel_count()),
            format!("{}", series.channel_count()),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub name: String,
    /// `None` when the channel has no ground truth in the evaluation period.
    pub mean_error: Option<f64>,
    pub z: Option<f64>,
    pub damaged: bool,
    /// No observation at all in the evaluation period.
    pub missing: bool,
    /// Blanked at input, so its output is an imputation.
    pub imputed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DamageReport {
    pub threshold: f64,
    pub window_count: usize,
    pub channels: Vec<ChannelReport>,
}

impl DamageReport {
    pub fn damaged(&self) -> Vec<&str> {
        self.channels
            .iter()
            .filter(|c| c.damaged)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn any_damage(&self) -> bool {
        self.channels.iter().any(|c| c.damaged)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::State(e.to_string()))
    }
}

/// Scores every channel of `evaluation` against `baseline`; `z > 3` flags damage.
///
/// `declared_missing` must equal the set the baseline was fitted with. Channels
/// with no observation in `evaluation` are blanked too and reported as missing.
pub fn diagnose(
    model: &Autoencoder,
    baseline: &BaselineStats,
    evaluation: &MultiChannelSeries,
    declared_missing: &[usize],
) -> Result<DamageReport> {
    check_model_channels(model, evaluation)?;
    if baseline.names != evaluation.names() {
        return Err(Error::BaselineMismatch("baseline and evaluation channels differ".into()));
    }
    let mut declared: Vec<String> = declared_missing
        .iter()
        .map(|&c| {
            evaluation
                .names()
                .get(c)
                .cloned()
                .ok_or_else(|| Error::Config(format!("channel index {c} out of range")))
        })
        .collect::<Result<_>>()?;
    let mut expected = baseline.dropped.clone();
    declared.sort();
    expected.sort();
    if declared != expected {
        return Err(Error::BaselineMismatch(format!(
            "baseline blanked {expected:?} but evaluation declares {declared:?}"
        )));
    }
    let m = evaluation.channel_count();
    let missing: Vec<bool> = (0..m).map(|c| evaluation.observed_count(c) == 0).collect();
    let mut zeroed: Vec<usize> = declared_missing.to_vec();
    zeroed.extend((0..m).filter(|&c| missing[c]));
    zeroed.sort_unstable();
    zeroed.dedup();

    let errors = window_errors(model, evaluation, baseline.window, &zeroed)?;
    if errors.is_empty() {
        return Err(Error::InsufficientData(format!(
            "evaluation period is shorter than one {}-sample window",
            baseline.window
        )));
    }
    let channels = (0..m)
        .map(|c| {
            let e: Vec<f64> = errors.iter().filter_map(|w| w[c]).collect();
            let mean_error = (!e.is_empty()).then(|| e.iter().sum::<f64>() / e.len() as f64);
            let z = mean_error.map(|e| (e - baseline.mean[c]) / baseline.std[c]);
            ChannelReport {
                name: evaluation.names()[c].clone(),
                mean_error,
                z,
                damaged: z.is_some_and(|z| z > DAMAGE_THRESHOLD),
                missing: missing[c],
                imputed: zeroed.contains(&c),
            }
        })
        .collect();
    Ok(DamageReport {
        threshold: DAMAGE_THRESHOLD,
        window_count: errors.len(),
        channels,
    })
}

/// Imputed series plus where values were filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct Imputation {
    pub series: MultiChannelSeries,
    pub imputed: BoolMatrix,
}

/// Fills every missing entry of a detrended series (physical units) with the
/// model's reconstruction; observed entries are kept verbatim.
///
/// Channels with no observation anywhere are blanked at input; partially
/// observed channels are zero-filled where missing.
pub fn impute(
    model: &Autoencoder,
    series: &MultiChannelSeries,
    stats: &ChannelStats,
    window: usize,
) -> Result<Imputation> {
    check_model_channels(model, series)?;
    let m = series.channel_count();
    if (0..m).all(|c| series.observed_count(c) == 0) {
        return Err(Error::InsufficientData("every channel is missing; nothing to condition on".into()));
    }
    let n = series.len();
    let mut imputed = BoolMatrix::filled(n, m, false);
    let mut out = series.clone();
    if series.mask().count_true() == n * m {
        return Ok(Imputation { series: out, imputed });
    }
    let normalized = apply_normalizer(series, stats)?;
    let window = window.min(n);
    let starts = tiled_starts(n, window, true);
    let blank: Vec<usize> = (0..m).filter(|&c| series.observed_count(c) == 0).collect();
    let recon = reconstruct_windows(model, &normalized, window, &starts, &blank)?;
    let mut full = RealMatrix::zeros(n, m);
    for (&s, r) in starts.iter().zip(&recon) {
        for t in 0..window {
            full.row_mut(s + t).copy_from_slice(r.row(t));
        }
    }
    let recon_series = MultiChannelSeries::new(
        series.names().to_vec(),
        series.sample_rate(),
        series.start_time(),
        full,
        BoolMatrix::filled(n, m, true),
    )?;
    let physical = invert_normalizer(&recon_series, stats)?;
    for r in 0..n {
        for c in 0..m {
            if series.get(r, c).is_none() {
                out.set(r, c, physical.get(r, c));
                imputed.set(r, c, true);
            }
        }
    }
    Ok(Imputation { series: out, imputed })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub missing_rate: f64,
    pub final_loss: f64,
}

/// Trains one fresh model per `k` (same seed, data and budget) and reports the final loss.
pub fn missing_rate_sweep(
    kind: ModelKind,
    series: &MultiChannelSeries,
    ks: &[usize],
    config: &TrainConfig,
) -> Result<Vec<SweepPoint>> {
    let m = series.channel_count();
    ks.par_iter()
        .map(|&k| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut model = Autoencoder::init(kind, &mut rng);
            if model.channel_count() != m {
                return Err(Error::shape("missing_rate_sweep", "14 channels", format!("{m}")));
            }
            let cfg = TrainConfig {
                drop_k: k,
                ..config.clone()
            };
            let log = train_with(&mut model, series, &cfg, |e| {
                debug!("{kind} k={k} iteration {} loss {:.6}", e.iteration, e.loss)
            })?;
            Ok(SweepPoint {
                k,
                missing_rate: k as f64 / m as f64,
                final_loss: log.final_loss().unwrap_or(f64::NAN),
            })
        })
        .collect()
}

/// Parameters of two models agree bitwise.
pub fn parameters_identical<P: Parameterized>(a: &P, b: &P) -> bool {
    let (pa, pb) = (a.parameters(), b.parameters());
    pa.len() == pb.len()
        && pa
            .iter()
            .zip(&pb)
            .all(|(x, y)| x.len() == y.len() && x.iter().zip(*y).all(|(u, v)| u.to_bits() == v.to_bits()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::{CodeMode, LstmAeModel};

    fn toy_series(n: usize, m: usize, seed: u64) -> MultiChannelSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let values = RealMatrix::from_fn(n, m, |r, c| base[r] * (1.0 + 0.3 * c as f64) + 0.05 * rng.random_range(-1.0..1.0));
        let names = (0..m).map(|c| format!("C{c}")).collect();
        MultiChannelSeries::observed(names, 2.0, values).unwrap()
    }

    fn small_model(m: usize, seed: u64) -> Autoencoder {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Autoencoder::Lstm(LstmAeModel::init_with(m, 2, &[6], CodeMode::PerStep, &mut rng))
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            window: 8,
            batch_size: 4,
            max_iteration: 30,
            drop_k: 0,
            log_interval: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let s = toy_series(200, 3, 1);
        let m = small_model(3, 2);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..small_config()
        };
        let (trained, log) = train(&m, &s, &cfg).unwrap();
        assert!(parameters_identical(&m, &trained));
        assert_eq!(log.entries.len(), 4);
    }

    #[test]
    fn training_is_deterministic() {
        let s = toy_series(200, 3, 1);
        let m = small_model(3, 2);
        let (a, la) = train(&m, &s, &small_config()).unwrap();
        let (b, lb) = train(&m, &s, &small_config()).unwrap();
        assert!(parameters_identical(&a, &b));
        let losses = |l: &TrainLog| l.entries.iter().map(|e| e.loss.to_bits()).collect::<Vec<_>>();
        assert_eq!(losses(&la), losses(&lb));
    }

    #[test]
    fn log_iterations_increase() {
        let s = toy_series(200, 3, 1);
        let (_, log) = train(&small_model(3, 2), &s, &small_config()).unwrap();
        assert!(log.entries.windows(2).all(|w| w[0].iteration < w[1].iteration));
    }

    #[test]
    fn drop_k_must_leave_a_channel() {
        let s = toy_series(100, 3, 1);
        let cfg = TrainConfig {
            drop_k: 3,
            ..small_config()
        };
        assert!(matches!(train(&small_model(3, 1), &s, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let s = toy_series(100, 3, 1);
        let mut m = small_model(3, 1);
        m.parameters_mut()[0][0] = f64::NAN;
        let err = train(&m, &s, &small_config()).unwrap_err();
        assert!(matches!(err, Error::Divergence { iteration: 0, .. } | Error::Numeric(_)));
    }

    #[test]
    fn tiling_covers_tail() {
        assert_eq!(tiled_starts(10, 4, false), [0, 4]);
        assert_eq!(tiled_starts(10, 4, true), [0, 4, 6]);
        assert_eq!(tiled_starts(8, 4, true), [0, 4]);
        assert!(tiled_starts(3, 4, true).is_empty());
    }

    #[test]
    fn too_few_reference_windows() {
        let s = toy_series(100, 3, 1);
        let r = fit_baseline(&small_model(3, 1), &s, 8, &[], "ref");
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn baseline_on_its_own_period_flags_nothing() {
        let s = toy_series(600, 3, 4);
        let model = small_model(3, 5);
        let base = fit_baseline(&model, &s, 8, &[1], "ref").unwrap();
        assert!(base.std.iter().all(|&v| v > 0.0));
        let report = diagnose(&model, &base, &s, &[1]).unwrap();
        assert!(!report.any_damage());
        for ch in &report.channels {
            assert!(ch.z.unwrap().abs() < 1e-9);
        }
        assert!(report.channels[1].imputed);
    }

    #[test]
    fn mismatched_missing_set_is_rejected() {
        let s = toy_series(600, 3, 4);
        let model = small_model(3, 5);
        let base = fit_baseline(&model, &s, 8, &[1], "ref").unwrap();
        assert!(matches!(diagnose(&model, &base, &s, &[2]), Err(Error::BaselineMismatch(_))));
    }

    #[test]
    fn imputation_keeps_observed_entries() {
        let s = toy_series(50, 3, 4);
        let stats = crate::preprocess::fit_normalizer(&s).unwrap();
        let model = small_model(3, 5);
        let same = impute(&model, &s, &stats, 8).unwrap();
        assert_eq!(same.series, s);
        assert_eq!(same.imputed.count_true(), 0);
        let mut hidden = s.clone();
        hidden.hide_channels(&[2]);
        let filled = impute(&model, &hidden, &stats, 8).unwrap();
        assert_eq!(filled.imputed.count_true(), 50);
        for r in 0..50 {
            assert_eq!(filled.series.get(r, 0), s.get(r, 0));
            assert!(filled.series.get(r, 2).is_some());
        }
        hidden.hide_channels(&[0, 1]);
        assert!(impute(&model, &hidden, &stats, 8).is_err());
    }

    #[test]
    fn dropped_channel_loss_counts_but_missing_does_not() {
        // the same window once with channel 0 dropped at input and once with it really missing
        let s = toy_series(16, 2, 3);
        let model = small_model(2, 1);
        let mut batch = WindowBatch::from_starts(&s, 8, &[0]).unwrap();
        batch.drop_channels(0, &[0]);
        let input = SequenceBatch::new(8, 1, batch.input.clone()).unwrap();
        let mut ws = Workspace::default();
        let mut g = Gradients::zeros_like(&model);
        let dropped = model
            .loss_and_gradient(&input, &batch.target, Some(&batch.target_mask), LossScale::Sum, &mut ws, &mut g)
            .unwrap();
        let mut missing = s.clone();
        missing.hide_channels(&[0]);
        let mb = WindowBatch::from_starts(&missing, 8, &[0]).unwrap();
        assert_eq!(mb.input, batch.input);
        let mut g2 = Gradients::zeros_like(&model);
        let really = model
            .loss_and_gradient(&input, &mb.target, Some(&mb.target_mask), LossScale::Sum, &mut ws, &mut g2)
            .unwrap();
        let out = model.reconstruct_batch(&input).unwrap();
        let ch0: f64 = (0..8).map(|t| (out.get(t, 0) - s.get(t, 0).unwrap()).powi(2)).sum();
        assert!((dropped - really - 0.5 * ch0).abs() < 1e-12);
    }
}
