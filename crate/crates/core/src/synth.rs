//! Synthetic cable-tension corpora from a moving-load influence-line model.
//!
//! Each channel is `dead load + temperature + vehicles + noise`. Vehicles are
//! point forces crossing the deck at constant speed; a cable responds to a
//! force at `(x, y)` with `F * eta_x(x) * eta_y(y)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{default_channel_names, MultiChannelSeries};
use crate::tensor::{BoolMatrix, RealMatrix};

const TRAFFIC_STREAM: u64 = 1;
const TEMPERATURE_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

/// Geometry and stiffness of the monitored cables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeModel {
    pub names: Vec<String>,
    /// Girder length in metres; vehicles occupy `[0, span]`.
    pub span: f64,
    /// Cable planes sit at `y = +deck_half_width` (upstream) and `-deck_half_width`.
    pub deck_half_width: f64,
    /// Longitudinal anchorage of each cable.
    pub anchors: Vec<f64>,
    /// `+1` for upstream cables, `-1` for downstream.
    pub sides: Vec<f64>,
    /// Half-width of the raised-cosine influence line.
    pub influence_half_width: f64,
    /// Peak of each cable's longitudinal influence line (kN per kN).
    pub influence_peaks: Vec<f64>,
    pub dead_loads: Vec<f64>,
    /// Per-cable multiplier on the shared temperature signal.
    pub temperature_gains: Vec<f64>,
    /// Number of girder nodes used by [`BridgeModel::flexibility_matrix`].
    pub girder_nodes: usize,
}

impl Default for BridgeModel {
    /// Fourteen cables, seven per plane, anchored every 16 m on a 300 m girder.
    fn default() -> Self {
        let names = default_channel_names();
        let per_side = names.len() / 2;
        let spacing = 16.0;
        let anchor = |k: usize| 100.0 + k as f64 * spacing;
        let mut anchors = Vec::new();
        let mut sides = Vec::new();
        let mut peaks = Vec::new();
        let mut dead = Vec::new();
        let mut gains = Vec::new();
        for side in [1.0, -1.0] {
            for k in 0..per_side {
                anchors.push(anchor(k));
                sides.push(side);
                // longer cables further from the pylon carry more
                peaks.push(0.45 + 0.02 * k as f64);
                dead.push(3000.0 + 150.0 * k as f64 + if side > 0.0 { 0.0 } else { 40.0 });
                gains.push(0.8 + 0.06 * k as f64);
            }
        }
        let span = 300.0;
        Self {
            names,
            span,
            deck_half_width: 7.0,
            anchors,
            sides,
            // each bump covers a third of the girder, so several neighbouring cables overlap
            influence_half_width: span / 6.0,
            influence_peaks: peaks,
            dead_loads: dead,
            temperature_gains: gains,
            girder_nodes: 301,
        }
    }
}

impl BridgeModel {
    pub fn cable_count(&self) -> usize {
        self.names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.names.len();
        if m == 0 || m % 2 != 0 {
            return Err(Error::Config(format!("cable count must be even and positive, got {m}")));
        }
        for (what, len) in [
            ("anchors", self.anchors.len()),
            ("sides", self.sides.len()),
            ("influence_peaks", self.influence_peaks.len()),
            ("dead_loads", self.dead_loads.len()),
            ("temperature_gains", self.temperature_gains.len()),
        ] {
            if len != m {
                return Err(Error::shape("BridgeModel", format!("{m} {what}"), format!("{len}")));
            }
        }
        if !(self.span > 0.0 && self.deck_half_width > 0.0 && self.influence_half_width > 0.0) {
            return Err(Error::Config("bridge dimensions must be positive".into()));
        }
        if self.influence_peaks.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Config("influence peaks must be nonnegative".into()));
        }
        if self.sides.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::Config("cable sides must be +1 or -1".into()));
        }
        if self.anchors.iter().any(|&a| !(0.0..=self.span).contains(&a)) {
            return Err(Error::Config("anchorage outside the span".into()));
        }
        if self.girder_nodes < 2 {
            return Err(Error::Config("girder_nodes must be at least 2".into()));
        }
        Ok(())
    }

    /// Longitudinal influence line of `cable`; zero outside the bump, peak at the anchorage.
    pub fn eta_x(&self, cable: usize, x: f64) -> f64 {
        let u = (x - self.anchors[cable]) / self.influence_half_width;
        if u.abs() >= 1.0 {
            0.0
        } else {
            self.influence_peaks[cable] * 0.5 * (1.0 + (PI * u).cos())
        }
    }

    /// Transverse factor by the lever rule; 1 on the cable's own plane, 0 on the far plane.
    pub fn eta_y(&self, cable: usize, y: f64) -> f64 {
        let b = self.deck_half_width;
        (b + self.sides[cable] * y) / (2.0 * b)
    }

    /// `D[m][n] = eta_x,m(x_n)` at evenly spaced girder nodes.
    pub fn flexibility_matrix(&self) -> RealMatrix {
        let n = self.girder_nodes;
        let dx = self.span / (n - 1) as f64;
        RealMatrix::from_fn(self.cable_count(), n, |m, k| self.eta_x(m, k as f64 * dx))
    }
}

/// A point force on the deck.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleLoad {
    pub x: f64,
    pub y: f64,
    pub weight: f64,
}

/// `T_v,i = sum_n F_n * eta_x,i(x_n) * eta_y,i(y_n)` for every cable.
pub fn vehicle_tension(bridge: &BridgeModel, vehicles: &[VehicleLoad]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; bridge.cable_count()];
    for v in vehicles {
        check_position(bridge, v)?;
        add_vehicle(bridge, v, None, &mut out);
    }
    Ok(out)
}

fn check_position(bridge: &BridgeModel, v: &VehicleLoad) -> Result<()> {
    if !(0.0..=bridge.span).contains(&v.x) || v.y.abs() > bridge.deck_half_width {
        return Err(Error::Config(format!(
            "vehicle at ({}, {}) is outside the deck",
            v.x, v.y
        )));
    }
    Ok(())
}

fn add_vehicle(bridge: &BridgeModel, v: &VehicleLoad, scale: Option<&[f64]>, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let s = scale.map_or(1.0, |s| s[i]);
        *o += s * v.weight * bridge.eta_x(i, v.x) * bridge.eta_y(i, v.y);
    }
}

/// Poisson traffic with uniformly distributed speed and weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficScenario {
    /// Vehicles per second over all lanes.
    pub arrival_rate: f64,
    /// Speed range in m/s.
    pub speed: (f64, f64),
    /// Weight range in kN.
    pub weight: (f64, f64),
    /// Lane offsets; lanes with `y > 0` travel towards increasing `x`.
    pub lanes: Vec<f64>,
    /// Seconds.
    pub duration: f64,
    /// Hz.
    pub sample_rate: f64,
}

impl Default for TrafficScenario {
    fn default() -> Self {
        Self {
            arrival_rate: 0.05,
            speed: (15.0, 25.0),
            weight: (50.0, 400.0),
            lanes: vec![-5.25, -1.75, 1.75, 5.25],
            duration: 86_400.0,
            sample_rate: 2.0,
        }
    }
}

impl TrafficScenario {
    pub fn sample_count(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    pub fn validate(&self, bridge: &BridgeModel) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && hi >= lo && hi.is_finite();
        if !(self.arrival_rate >= 0.0 && self.arrival_rate.is_finite()) {
            return Err(Error::Config("arrival rate must be nonnegative".into()));
        }
        if !range_ok(self.speed) || !range_ok(self.weight) {
            return Err(Error::Config("speed and weight ranges must be positive".into()));
        }
        if self.lanes.is_empty() || self.lanes.iter().any(|y| y.abs() > bridge.deck_half_width) {
            return Err(Error::Config("lanes must lie on the deck".into()));
        }
        if !(self.duration > 0.0 && self.sample_rate > 0.0) {
            return Err(Error::Config("duration and sample rate must be positive".into()));
        }
        Ok(())
    }
}

/// Loss of stiffness on one cable from `start` seconds onwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DamageEvent {
    pub cable: String,
    pub start: f64,
    pub reduction: f64,
}

/// A whole-channel gap over `[start, end)` seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingEvent {
    pub cable: String,
    pub start: f64,
    pub end: f64,
}

/// Damage, outages, temperature and noise applied on top of the traffic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioScript {
    pub damage: Vec<DamageEvent>,
    pub missing: Vec<MissingEvent>,
    /// Amplitude of the daily sinusoid in kN.
    pub temperature_amplitude: f64,
    /// Period of the sinusoid in seconds.
    pub temperature_period: f64,
    /// Random-walk standard deviation per square-root hour, kN.
    pub temperature_drift: f64,
    /// Gaussian measurement noise, kN.
    pub noise_std: f64,
}

impl Default for ScenarioScript {
    fn default() -> Self {
        Self {
            damage: Vec::new(),
            missing: Vec::new(),
            temperature_amplitude: 60.0,
            temperature_period: 86_400.0,
            temperature_drift: 2.0,
            noise_std: 2.0,
        }
    }
}

impl ScenarioScript {
    /// No temperature, drift or noise.
    pub fn quiet() -> Self {
        Self {
            temperature_amplitude: 0.0,
            temperature_drift: 0.0,
            noise_std: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self, bridge: &BridgeModel, duration: f64) -> Result<()> {
        let cable = |name: &str| {
            bridge
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Config(format!("unknown cable {name}")))
        };
        for d in &self.damage {
            cable(&d.cable)?;
            if !(0.0..1.0).contains(&d.reduction) {
                return Err(Error::Config(format!(
                    "damage reduction must lie in [0, 1), got {}",
                    d.reduction
                )));
            }
            if !(0.0..=duration).contains(&d.start) {
                return Err(Error::Config("damage starts outside the scenario".into()));
            }
        }
        for g in &self.missing {
            cable(&g.cable)?;
            if !(0.0 <= g.start && g.start < g.end && g.end <= duration) {
                return Err(Error::Config(format!(
                    "missing interval [{}, {}) is outside [0, {duration}]",
                    g.start, g.end
                )));
            }
        }
        for (what, v) in [
            ("temperature_amplitude", self.temperature_amplitude),
            ("temperature_drift", self.temperature_drift),
            ("noise_std", self.noise_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{what} must be nonnegative")));
            }
        }
        if !(self.temperature_period > 0.0) {
            return Err(Error::Config("temperature period must be positive".into()));
        }
        Ok(())
    }
}

/// Everything needed to regenerate a corpus.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub bridge: BridgeModel,
    pub traffic: TrafficScenario,
    pub script: ScenarioScript,
}

/// A generated corpus with its separate load components (all `samples x M`).
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub series: MultiChannelSeries,
    pub temperature: RealMatrix,
    pub vehicle: RealMatrix,
    pub noise: RealMatrix,
}

#[derive(Clone, Copy, Debug)]
struct Vehicle {
    entry_time: f64,
    speed: f64,
    weight: f64,
    lane: f64,
}

impl Vehicle {
    fn position(&self, t: f64, span: f64) -> Option<f64> {
        let travelled = (t - self.entry_time) * self.speed;
        if !(0.0..=span).contains(&travelled) {
            return None;
        }
        Some(if self.lane > 0.0 { travelled } else { span - travelled })
    }
}

fn draw_traffic(bridge: &BridgeModel, traffic: &TrafficScenario, rng: &mut ChaCha8Rng) -> Vec<Vehicle> {
    let mut out = Vec::new();
    if traffic.arrival_rate == 0.0 {
        return out;
    }
    let gap = Exp::new(traffic.arrival_rate).expect("positive rate");
    // start early enough that the deck is already loaded at t = 0
    let mut t = -bridge.span / traffic.speed.0;
    loop {
        t += gap.sample(rng);
        if t >= traffic.duration {
            break;
        }
        let speed = rng.random_range(traffic.speed.0..=traffic.speed.1);
        let weight = rng.random_range(traffic.weight.0..=traffic.weight.1);
        let lane = traffic.lanes[rng.random_range(0..traffic.lanes.len())];
        out.push(Vehicle {
            entry_time: t,
            speed,
            weight,
            lane,
        });
    }
    out
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Generates a corpus together with its ground-truth components.
///
/// Traffic, temperature and noise use independent random streams, so two
/// scripts that differ only in damage see the same vehicles.
pub fn generate_corpus_with_components(
    bridge: &BridgeModel,
    traffic: &TrafficScenario,
    script: &ScenarioScript,
    seed: u64,
) -> Result<SyntheticCorpus> {
    bridge.validate()?;
    traffic.validate(bridge)?;
    script.validate(bridge, traffic.duration)?;
    let m = bridge.cable_count();
    let n = traffic.sample_count();
    let dt = 1.0 / traffic.sample_rate;
    let index_of = |name: &str| bridge.names.iter().position(|c| c == name).expect("validated");

    let mut vehicle = RealMatrix::zeros(n, m);
    let mut scale = vec![1.0; m];
    let mut damage: Vec<(usize, f64, f64)> = script
        .damage
        .iter()
        .map(|d| (index_of(&d.cable), d.start, 1.0 - d.reduction))
        .collect();
    damage.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut next_damage = 0;

    let vehicles = draw_traffic(bridge, traffic, &mut stream(seed, TRAFFIC_STREAM));
    let mut first_active = 0;
    let mut loads = Vec::new();
    for r in 0..n {
        let t = r as f64 * dt;
        while next_damage < damage.len() && damage[next_damage].1 <= t {
            let (c, _, s) = damage[next_damage];
            scale[c] *= s;
            next_damage += 1;
        }
        while first_active < vehicles.len()
            && vehicles[first_active].entry_time + bridge.span / traffic.speed.0 < t
        {
            first_active += 1;
        }
        loads.clear();
        for v in vehicles[first_active..].iter().take_while(|v| v.entry_time <= t) {
            if let Some(x) = v.position(t, bridge.span) {
                loads.push(VehicleLoad {
                    x,
                    y: v.lane,
                    weight: v.weight,
                });
            }
        }
        let row = vehicle.row_mut(r);
        for load in &loads {
            add_vehicle(bridge, load, Some(&scale), row);
        }
    }

    let mut temp_rng = stream(seed, TEMPERATURE_STREAM);
    let phase = temp_rng.random_range(0.0..2.0 * PI);
    let drift_step = script.temperature_drift * (dt / 3600.0).sqrt();
    let step_dist = Normal::new(0.0, drift_step.max(0.0)).expect("finite std");
    let mut walk = 0.0;
    let mut temperature = RealMatrix::zeros(n, m);
    for r in 0..n {
        let t = r as f64 * dt;
        let base = script.temperature_amplitude * (2.0 * PI * t / script.temperature_period + phase).sin() + walk;
        for (c, v) in temperature.row_mut(r).iter_mut().enumerate() {
            *v = bridge.temperature_gains[c] * base;
        }
        if drift_step > 0.0 {
            walk += step_dist.sample(&mut temp_rng);
        }
    }

    let mut noise = RealMatrix::zeros(n, m);
    if script.noise_std > 0.0 {
        let dist = Normal::new(0.0, script.noise_std).expect("finite std");
        let mut rng = stream(seed, NOISE_STREAM);
        for v in noise.as_mut_slice() {
            *v = dist.sample(&mut rng);
        }
    }

    let mut total = RealMatrix::from_fn(n, m, |r, c| {
        bridge.dead_loads[c] + temperature.get(r, c) + vehicle.get(r, c) + noise.get(r, c)
    });
    let mut mask = BoolMatrix::filled(n, m, true);
    for gap in &script.missing {
        let c = index_of(&gap.cable);
        let a = (gap.start * traffic.sample_rate).ceil() as usize;
        let b = ((gap.end * traffic.sample_rate).ceil() as usize).min(n);
        for r in a..b {
            mask.set(r, c, false);
            total.set(r, c, 0.0);
        }
    }
    let series = MultiChannelSeries::new(bridge.names.clone(), traffic.sample_rate, 0.0, total, mask)?;
    Ok(SyntheticCorpus {
        series,
        temperature,
        vehicle,
        noise,
    })
}

/// `T_total = T_d + T_e + T_v + T_r` per sample and cable.
pub fn generate_corpus(
    bridge: &BridgeModel,
    traffic: &TrafficScenario,
    script: &ScenarioScript,
    seed: u64,
) -> Result<MultiChannelSeries> {
    generate_corpus_with_components(bridge, traffic, script, seed).map(|c| c.series)
}

/// Writes the corpus CSV.
pub fn export_csv(series: &MultiChannelSeries, path: impl AsRef<std::path::Path>) -> Result<()> {
    series.export_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(duration: f64) -> TrafficScenario {
        TrafficScenario {
            duration,
            ..TrafficScenario::default()
        }
    }

    #[test]
    fn no_vehicles_give_zero_tension() {
        let b = BridgeModel::default();
        assert!(vehicle_tension(&b, &[]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vehicle_at_anchorage_hits_peak() {
        let b = BridgeModel::default();
        let f = 200.0;
        let v = VehicleLoad {
            x: b.anchors[3],
            y: b.deck_half_width,
            weight: f,
        };
        let t = vehicle_tension(&b, &[v]).unwrap();
        assert!((t[3] - f * b.influence_peaks[3]).abs() < 1e-12);
        // far plane carries nothing under the lever rule
        assert_eq!(t[10], 0.0);
    }

    #[test]
    fn off_deck_vehicle_is_rejected() {
        let b = BridgeModel::default();
        let v = VehicleLoad {
            x: -1.0,
            y: 0.0,
            weight: 1.0,
        };
        assert!(vehicle_tension(&b, &[v]).is_err());
    }

    #[test]
    fn influence_lines_are_nonnegative_and_peak_at_anchor() {
        let b = BridgeModel::default();
        let d = b.flexibility_matrix();
        assert!(d.as_slice().iter().all(|&v| v >= 0.0));
        for c in 0..b.cable_count() {
            let row = d.row(c);
            let argmax = (0..row.len()).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
            assert!((argmax as f64 - b.anchors[c]).abs() <= 1.0);
        }
    }

    #[test]
    fn quiet_empty_bridge_is_dead_load() {
        let b = BridgeModel::default();
        let traffic = TrafficScenario {
            arrival_rate: 0.0,
            ..short(60.0)
        };
        let s = generate_corpus(&b, &traffic, &ScenarioScript::quiet(), 3).unwrap();
        assert_eq!(s.len(), 120);
        for r in 0..s.len() {
            assert_eq!(s.values().row(r), &b.dead_loads[..]);
        }
    }

    #[test]
    fn zero_damage_changes_nothing() {
        let b = BridgeModel::default();
        let t = short(600.0);
        let plain = generate_corpus(&b, &t, &ScenarioScript::default(), 9).unwrap();
        let script = ScenarioScript {
            damage: vec![DamageEvent {
                cable: "SJS11".into(),
                start: 100.0,
                reduction: 0.0,
            }],
            ..ScenarioScript::default()
        };
        assert_eq!(generate_corpus(&b, &t, &script, 9).unwrap(), plain);
    }

    #[test]
    fn missing_interval_is_masked() {
        let b = BridgeModel::default();
        let script = ScenarioScript {
            missing: vec![MissingEvent {
                cable: "SJX13".into(),
                start: 10.0,
                end: 20.0,
            }],
            ..ScenarioScript::default()
        };
        let s = generate_corpus(&b, &short(60.0), &script, 1).unwrap();
        let c = s.channel_index("SJX13").unwrap();
        assert_eq!(s.observed_count(c), 100);
        assert_eq!(s.get(20, c), None);
        assert!(s.get(19, c).is_some());
        assert!(s.get(40, c).is_some());
    }

    #[test]
    fn invalid_scripts_are_rejected() {
        let b = BridgeModel::default();
        let bad = ScenarioScript {
            damage: vec![DamageEvent {
                cable: "SJS11".into(),
                start: 0.0,
                reduction: 1.0,
            }],
            ..ScenarioScript::default()
        };
        assert!(generate_corpus(&b, &short(60.0), &bad, 1).is_err());
        let unknown = ScenarioScript {
            missing: vec![MissingEvent {
                cable: "NOPE".into(),
                start: 0.0,
                end: 1.0,
            }],
            ..ScenarioScript::default()
        };
        assert!(generate_corpus(&b, &short(60.0), &unknown, 1).is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let r: std::result::Result<ScenarioConfig, _> = serde_json::from_str(r#"{"traffic":{"rate":1}}"#);
        assert!(r.is_err());
        let ok: ScenarioConfig = serde_json::from_str(r#"{"traffic":{"duration":10}}"#).unwrap();
        assert_eq!(ok.traffic.duration, 10.0);
    }
}
