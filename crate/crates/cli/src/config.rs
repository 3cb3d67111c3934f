use std::path::Path;

use serde::{Deserialize, Serialize};
use tension_sentinel::autoencoder::{CodeMode, ModelKind};
use tension_sentinel::preprocess::DEFAULT_SEGMENT_SECONDS;
use tension_sentinel::synth::ScenarioConfig;
use tension_sentinel::TrainConfig;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub segment_seconds: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            segment_seconds: DEFAULT_SEGMENT_SECONDS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub code_mode: CodeMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Lstm,
            code_mode: CodeMode::PerStep,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseConfig {
    /// Scoring window in samples; defaults to 1440 (12 min at 2 Hz).
    pub window: Option<usize>,
    /// Channels blanked at input for baseline and evaluation.
    pub missing: Vec<String>,
    pub baseline_period: Option<String>,
    pub eval_period: Option<String>,
}

/// One JSON document covering every subcommand; command-line flags take precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed for corpus generation.
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub diagnose: DiagnoseConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::msg(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::msg(format!("invalid config {}: {e}", path.display())))
    }
}

/// Seconds from `123`, `1.5h`, `4d`, `30m` or `45s`.
pub fn parse_seconds(text: &str) -> Result<f64, String> {
    let text = text.trim();
    let (num, unit) = match text.char_indices().last() {
        Some((i, c)) if c.is_ascii_alphabetic() => (&text[..i], c),
        _ => (text, 's'),
    };
    let scale = match unit {
        's' => 1.0,
        'm' => 60.0,
        'h' => 3600.0,
        'd' => 86_400.0,
        other => return Err(format!("unknown time unit `{other}` in `{text}`")),
    };
    let v: f64 = num.parse().map_err(|_| format!("`{text}` is not a duration"))?;
    if !v.is_finite() {
        return Err(format!("`{text}` is not finite"));
    }
    Ok(v * scale)
}

/// `START:END` in any unit accepted by [`parse_seconds`].
pub fn parse_period(text: &str) -> Result<(f64, f64), String> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| format!("period `{text}` must look like START:END"))?;
    let (a, b) = (parse_seconds(a)?, parse_seconds(b)?);
    if !(a < b) {
        return Err(format!("period `{text}` is empty"));
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations() {
        assert_eq!(parse_seconds("90").unwrap(), 90.0);
        assert_eq!(parse_seconds("2h").unwrap(), 7200.0);
        assert_eq!(parse_seconds("1.5d").unwrap(), 129_600.0);
        assert!(parse_seconds("3y").is_err());
        assert_eq!(parse_period("1d:2d").unwrap(), (86_400.0, 172_800.0));
        assert!(parse_period("2d:1d").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"trian": {}}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"train": {"window": 240}}"#).unwrap();
        assert_eq!(c.train.window, 240);
        assert_eq!(c.train.batch_size, 30);
    }
}
