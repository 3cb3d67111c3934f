//! Segment-median detrending, per-channel normalization and training-window sampling.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::MultiChannelSeries;
use crate::tensor::{BoolMatrix, RealMatrix};

pub const DEFAULT_SEGMENT_SECONDS: f64 = 30.0;

/// Per-segment medians, interpolated linearly between segment midpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct TrendModel {
    pub segment_seconds: f64,
    names: Vec<String>,
    /// Segment midpoint times in seconds.
    midpoints: Vec<f64>,
    /// `medians[channel][segment]`; `None` where the segment had no observations.
    medians: Vec<Vec<Option<f64>>>,
}

impl TrendModel {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn midpoints(&self) -> &[f64] {
        &self.midpoints
    }

    pub fn medians(&self, channel: usize) -> &[Option<f64>] {
        &self.medians[channel]
    }

    /// Channels with no observation anywhere; their trend is undefined.
    pub fn undefined_channels(&self) -> Vec<usize> {
        (0..self.medians.len())
            .filter(|&c| self.medians[c].iter().all(Option::is_none))
            .collect()
    }

    /// Trend of `channel` at time `t`, held constant beyond the first and last defined midpoints.
    pub fn value_at(&self, channel: usize, t: f64) -> Option<f64> {
        let knots = self.knots(channel);
        interpolate(&knots, t)
    }

    fn knots(&self, channel: usize) -> Vec<(f64, f64)> {
        self.midpoints
            .iter()
            .zip(&self.medians[channel])
            .filter_map(|(&t, m)| m.map(|m| (t, m)))
            .collect()
    }

    /// Trend evaluated at every sample of `series`; undefined channels are missing.
    pub fn evaluate(&self, series: &MultiChannelSeries) -> Result<MultiChannelSeries> {
        self.check_names(series)?;
        let (n, m) = (series.len(), series.channel_count());
        let mut values = RealMatrix::zeros(n, m);
        let mut mask = BoolMatrix::filled(n, m, false);
        for c in 0..m {
            let knots = self.knots(c);
            if knots.is_empty() {
                continue;
            }
            let mut cursor = 0;
            for r in 0..n {
                let t = series.time(r);
                while cursor + 1 < knots.len() && knots[cursor + 1].0 <= t {
                    cursor += 1;
                }
                values.set(r, c, interpolate(&knots[cursor..], t).expect("nonempty"));
                mask.set(r, c, true);
            }
        }
        MultiChannelSeries::new(
            series.names().to_vec(),
            series.sample_rate(),
            series.start_time(),
            values,
            mask,
        )
    }

    fn check_names(&self, series: &MultiChannelSeries) -> Result<()> {
        if series.names() != self.names.as_slice() {
            return Err(Error::Config("trend and series have different channels".into()));
        }
        Ok(())
    }
}

fn interpolate(knots: &[(f64, f64)], t: f64) -> Option<f64> {
    let (first, last) = (knots.first()?, knots.last()?);
    if t <= first.0 {
        return Some(first.1);
    }
    if t >= last.0 {
        return Some(last.1);
    }
    let k = knots.partition_point(|&(x, _)| x <= t);
    let ((x0, y0), (x1, y1)) = (knots[k - 1], knots[k]);
    Some(y0 + (y1 - y0) * (t - x0) / (x1 - x0))
}

/// Median of `values`, reordering them in place.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Median of the observed samples of every channel in consecutive segments.
pub fn estimate_trend(series: &MultiChannelSeries, segment_seconds: f64) -> Result<TrendModel> {
    let seg = (segment_seconds * series.sample_rate()).round();
    if !(seg >= 4.0) {
        return Err(Error::Config(format!(
            "a {segment_seconds} s segment holds fewer than 4 samples at {} Hz",
            series.sample_rate()
        )));
    }
    if series.is_empty() {
        return Err(Error::InsufficientData("series is empty".into()));
    }
    let seg = seg as usize;
    let n = series.len();
    let segments: Vec<(usize, usize)> = (0..n).step_by(seg).map(|a| (a, (a + seg).min(n))).collect();
    let midpoints = segments
        .iter()
        .map(|&(a, b)| 0.5 * (series.time(a) + series.time(b - 1)))
        .collect();
    let medians = (0..series.channel_count())
        .map(|c| {
            let mut buf = Vec::with_capacity(seg);
            segments
                .iter()
                .map(|&(a, b)| {
                    buf.clear();
                    buf.extend((a..b).filter_map(|r| series.get(r, c)));
                    median(&mut buf)
                })
                .collect()
        })
        .collect();
    Ok(TrendModel {
        segment_seconds,
        names: series.names().to_vec(),
        midpoints,
        medians,
    })
}

/// Subtracts the trend from every observed entry; channels without a trend become missing.
pub fn detrend(series: &MultiChannelSeries, trend: &TrendModel) -> Result<MultiChannelSeries> {
    let tr = trend.evaluate(series)?;
    let mut out = series.clone();
    for r in 0..series.len() {
        for c in 0..series.channel_count() {
            let v = match (series.get(r, c), tr.get(r, c)) {
                (Some(v), Some(t)) => Some(v - t),
                _ => None,
            };
            out.set(r, c, v);
        }
    }
    Ok(out)
}

/// Mean and population standard deviation of each channel's observed entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelStat {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelStats(pub Vec<ChannelStat>);

impl ChannelStats {
    pub fn names(&self) -> Vec<String> {
        self.0.iter().map(|s| s.name.clone()).collect()
    }

    fn check(&self, series: &MultiChannelSeries) -> Result<()> {
        let same = self.0.len() == series.channel_count()
            && self.0.iter().zip(series.names()).all(|(s, n)| &s.name == n);
        if !same {
            return Err(Error::Config("normalizer and series have different channels".into()));
        }
        Ok(())
    }
}

pub fn fit_normalizer(series: &MultiChannelSeries) -> Result<ChannelStats> {
    let mut stats = Vec::with_capacity(series.channel_count());
    for (c, name) in series.names().iter().enumerate() {
        let obs: Vec<f64> = (0..series.len()).filter_map(|r| series.get(r, c)).collect();
        if obs.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "channel {name} has {} observed samples",
                obs.len()
            )));
        }
        let n = obs.len() as f64;
        let mean = obs.iter().sum::<f64>() / n;
        let var = obs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0) {
            return Err(Error::DegenerateChannel {
                channel: name.clone(),
                reason: "zero standard deviation".into(),
            });
        }
        stats.push(ChannelStat {
            name: name.clone(),
            mean,
            std,
        });
    }
    Ok(ChannelStats(stats))
}

/// `(x - mean) / std` on observed entries.
pub fn apply_normalizer(series: &MultiChannelSeries, stats: &ChannelStats) -> Result<MultiChannelSeries> {
    stats.check(series)?;
    map_observed(series, |c, v| (v - stats.0[c].mean) / stats.0[c].std)
}

/// `z * std + mean` on observed entries.
pub fn invert_normalizer(series: &MultiChannelSeries, stats: &ChannelStats) -> Result<MultiChannelSeries> {
    stats.check(series)?;
    map_observed(series, |c, v| v * stats.0[c].std + stats.0[c].mean)
}

fn map_observed(series: &MultiChannelSeries, f: impl Fn(usize, f64) -> f64) -> Result<MultiChannelSeries> {
    let mut out = series.clone();
    for r in 0..series.len() {
        for c in 0..series.channel_count() {
            if let Some(v) = series.get(r, c) {
                out.set(r, c, Some(f(c, v)));
            }
        }
    }
    Ok(out)
}

/// A batch of windows stored time-major: row `t * batch + b` is step `t` of window `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    pub steps: usize,
    pub batch: usize,
    /// Model input; missing and dropped entries are zero.
    pub input: RealMatrix,
    /// Reconstruction target (the undropped data).
    pub target: RealMatrix,
    /// `true` where the target was observed.
    pub target_mask: BoolMatrix,
    /// Start row of each window in the source series.
    pub starts: Vec<usize>,
    /// Channels zeroed in each window's input.
    pub dropped: Vec<Vec<usize>>,
}

impl WindowBatch {
    pub fn channels(&self) -> usize {
        self.input.cols()
    }

    /// Copies the given windows out of `series`.
    pub fn from_starts(series: &MultiChannelSeries, steps: usize, starts: &[usize]) -> Result<Self> {
        if steps == 0 || series.len() < steps {
            return Err(Error::InsufficientData(format!(
                "series of {} samples cannot hold a window of {steps}",
                series.len()
            )));
        }
        if let Some(&s) = starts.iter().find(|&&s| s + steps > series.len()) {
            return Err(Error::Config(format!("window start {s} runs past the series end")));
        }
        let (batch, m) = (starts.len(), series.channel_count());
        let mut target = RealMatrix::zeros(steps * batch, m);
        let mut mask = BoolMatrix::filled(steps * batch, m, false);
        let (src, src_mask) = (series.values().as_slice(), series.mask().as_slice());
        for t in 0..steps {
            for (b, &s) in starts.iter().enumerate() {
                let row = t * batch + b;
                let from = (s + t) * m..(s + t + 1) * m;
                target.row_mut(row).copy_from_slice(&src[from.clone()]);
                mask.as_mut_slice()[row * m..(row + 1) * m].copy_from_slice(&src_mask[from]);
            }
        }
        Ok(Self {
            steps,
            batch,
            input: target.clone(),
            target,
            target_mask: mask,
            starts: starts.to_vec(),
            dropped: vec![Vec::new(); batch],
        })
    }

    /// Window `b` of the input as a `steps x M` matrix.
    pub fn input_window(&self, b: usize) -> RealMatrix {
        gather(&self.input, self.steps, self.batch, b)
    }

    pub fn target_window(&self, b: usize) -> RealMatrix {
        gather(&self.target, self.steps, self.batch, b)
    }

    /// Zeroes `channels` of window `b` in the input for every step.
    pub fn drop_channels(&mut self, b: usize, channels: &[usize]) {
        let m = self.channels();
        for t in 0..self.steps {
            let row = self.input.row_mut(t * self.batch + b);
            for &c in channels {
                row[c] = 0.0;
            }
        }
        let d = &mut self.dropped[b];
        d.extend(channels.iter().copied().filter(|c| *c < m));
        d.sort_unstable();
        d.dedup();
    }
}

fn gather(x: &RealMatrix, steps: usize, batch: usize, b: usize) -> RealMatrix {
    let m = x.cols();
    let mut out = RealMatrix::zeros(steps, m);
    for t in 0..steps {
        out.row_mut(t).copy_from_slice(x.row(t * batch + b));
    }
    out
}

/// Draws `batch_size` window starts uniformly from `[0, N - T]`.
pub fn sample_windows_with<R: Rng + ?Sized>(
    series: &MultiChannelSeries,
    steps: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<WindowBatch> {
    if steps == 0 || series.len() < steps {
        return Err(Error::InsufficientData(format!(
            "series of {} samples is shorter than the window length {steps}",
            series.len()
        )));
    }
    let last = series.len() - steps;
    let starts: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..=last)).collect();
    WindowBatch::from_starts(series, steps, &starts)
}

pub fn sample_windows(
    series: &MultiChannelSeries,
    steps: usize,
    batch_size: usize,
    seed: u64,
) -> Result<WindowBatch> {
    sample_windows_with(series, steps, batch_size, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Zeroes a uniformly random `k`-subset of channels in each window's input.
pub fn mask_channels_with<R: Rng + ?Sized>(batch: &mut WindowBatch, k: usize, rng: &mut R) -> Result<()> {
    let m = batch.channels();
    if k >= m {
        return Err(Error::Config(format!("cannot drop {k} of {m} channels")));
    }
    for b in 0..batch.batch {
        let mut chosen = sample_indices(rng, m, k).into_vec();
        chosen.sort_unstable();
        batch.drop_channels(b, &chosen);
    }
    Ok(())
}

pub fn mask_channels(batch: &WindowBatch, k: usize, seed: u64) -> Result<(WindowBatch, Vec<Vec<usize>>)> {
    let mut out = batch.clone();
    mask_channels_with(&mut out, k, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let dropped = out.dropped.clone();
    Ok((out, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(rows: &[Vec<f64>], rate: f64) -> MultiChannelSeries {
        let m = rows[0].len();
        let names = (0..m).map(|c| format!("C{c}")).collect();
        MultiChannelSeries::observed(names, rate, RealMatrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn constant_series_has_constant_trend() {
        let s = series(&vec![vec![5.0, -1.0]; 100], 2.0);
        let tr = estimate_trend(&s, 5.0).unwrap();
        let d = detrend(&s, &tr).unwrap();
        assert!(d.values().as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(tr.value_at(0, 1e6), Some(5.0));
    }

    #[test]
    fn median_ignores_sparse_spike() {
        let s = series(&[vec![1.0], vec![1.0], vec![1.0], vec![100.0]], 1.0);
        let tr = estimate_trend(&s, 4.0).unwrap();
        assert_eq!(tr.medians(0), [Some(1.0)]);
    }

    #[test]
    fn short_segment_is_rejected() {
        let s = series(&vec![vec![0.0]; 10], 2.0);
        assert!(estimate_trend(&s, 1.0).is_err());
    }

    #[test]
    fn trend_interpolates_between_midpoints() {
        let rows: Vec<Vec<f64>> = (0..8).map(|r| vec![if r < 4 { 0.0 } else { 4.0 }]).collect();
        let s = series(&rows, 1.0);
        let tr = estimate_trend(&s, 4.0).unwrap();
        assert_eq!(tr.midpoints(), [1.5, 5.5]);
        assert_eq!(tr.value_at(0, 3.5), Some(2.0));
        assert_eq!(tr.value_at(0, 0.0), Some(0.0));
    }

    #[test]
    fn fully_missing_channel_has_no_trend() {
        let mut s = series(&vec![vec![1.0, 2.0]; 8], 1.0);
        s.hide_channels(&[1]);
        let tr = estimate_trend(&s, 4.0).unwrap();
        assert_eq!(tr.undefined_channels(), [1]);
        let d = detrend(&s, &tr).unwrap();
        assert_eq!(d.observed_count(1), 0);
    }

    #[test]
    fn gaps_are_bridged() {
        let rows: Vec<Vec<f64>> = (0..12).map(|r| vec![r as f64]).collect();
        let mut s = series(&rows, 1.0);
        for r in 4..8 {
            s.set(r, 0, None);
        }
        let tr = estimate_trend(&s, 4.0).unwrap();
        assert_eq!(tr.medians(0)[1], None);
        assert_eq!(tr.value_at(0, 5.5), Some(5.5));
    }

    #[test]
    fn normalizer_round_trip() {
        let s = series(&[vec![1.0, 10.0], vec![3.0, 20.0], vec![8.0, 60.0]], 1.0);
        let stats = fit_normalizer(&s).unwrap();
        let z = apply_normalizer(&s, &stats).unwrap();
        let back = invert_normalizer(&z, &stats).unwrap();
        for (a, b) in back.values().as_slice().iter().zip(s.values().as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_channel_is_degenerate() {
        let s = series(&[vec![1.0], vec![1.0]], 1.0);
        assert!(matches!(fit_normalizer(&s), Err(Error::DegenerateChannel { .. })));
    }

    #[test]
    fn window_layout_is_time_major() {
        let rows: Vec<Vec<f64>> = (0..10).map(|r| vec![r as f64, -(r as f64)]).collect();
        let s = series(&rows, 1.0);
        let b = WindowBatch::from_starts(&s, 3, &[0, 5]).unwrap();
        assert_eq!(b.input.row(1), [5.0, -5.0]);
        assert_eq!(b.input.row(2), [1.0, -1.0]);
        assert_eq!(b.target_window(1).column(0), [5.0, 6.0, 7.0]);
    }

    #[test]
    fn full_length_window_for_any_seed() {
        let s = series(&vec![vec![0.0]; 6], 1.0);
        for seed in 0..5 {
            assert_eq!(sample_windows(&s, 6, 2, seed).unwrap().starts, [0, 0]);
        }
        assert!(sample_windows(&s, 7, 1, 0).is_err());
    }

    #[test]
    fn dropped_channels_are_constant_over_time() {
        let s = series(&vec![vec![1.0; 14]; 20], 1.0);
        let b = sample_windows(&s, 5, 4, 1).unwrap();
        let (masked, dropped) = mask_channels(&b, 7, 2).unwrap();
        for (w, d) in dropped.iter().enumerate() {
            assert_eq!(d.len(), 7);
            let win = masked.input_window(w);
            for c in 0..14 {
                let zeros = win.column(c).iter().filter(|&&v| v == 0.0).count();
                assert_eq!(zeros, if d.contains(&c) { 5 } else { 0 });
            }
        }
        assert_eq!(masked.target, b.target);
        assert!(mask_channels(&b, 14, 0).is_err());
    }
}
