//! JSON checkpoints: model parameters, normalization statistics and the training setup.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{Autoencoder, CodeMode, DnnAeModel, LstmAeModel, ModelKind};
use crate::error::{Error, Result};
use crate::lstm::StackedLstm;
use crate::nn::{Activation, DenseLayerParams, DenseNetwork, Parameterized};
use crate::pipeline::TrainConfig;
use crate::preprocess::ChannelStats;

pub const FORMAT_VERSION: u32 = 1;

/// Layer widths needed to rebuild the parameter arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShapes {
    pub channels: usize,
    pub code_dim: usize,
    /// LSTM: hidden sizes of the encoder stack. Dense: widths after the input.
    pub encoder: Vec<usize>,
    /// LSTM: hidden sizes of the decoder stack. Dense: widths after the code.
    pub decoder: Vec<usize>,
    #[serde(default)]
    pub code_mode: CodeMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArrayValues {
    Matrix(Vec<Vec<f64>>),
    Vector(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: ArrayValues,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model_kind: ModelKind,
    pub shapes: ModelShapes,
    pub parameters: Vec<ParameterArray>,
    pub channel_stats: ChannelStats,
    /// Detrending segment length used before normalization.
    pub segment_seconds: f64,
    pub train_config: TrainConfig,
    pub seed: u64,
}

fn dense_layout(prefix: &str, layer: &DenseLayerParams) -> [(String, Vec<usize>); 2] {
    [
        (format!("{prefix}.weight"), vec![layer.out_units(), layer.in_units()]),
        (format!("{prefix}.bias"), vec![layer.out_units()]),
    ]
}

fn lstm_layout(prefix: &str, stack: &StackedLstm) -> Vec<(String, Vec<usize>)> {
    stack
        .layers
        .iter()
        .enumerate()
        .flat_map(|(l, cell)| {
            let (h, i) = (cell.hidden_size(), cell.input_size());
            [
                (format!("{prefix}.{l}.w_input"), vec![4 * h, i]),
                (format!("{prefix}.{l}.w_recurrent"), vec![4 * h, h]),
                (format!("{prefix}.{l}.bias"), vec![4 * h]),
            ]
        })
        .collect()
}

/// Names and shapes of every parameter array, in [`Parameterized`] order.
fn layout(model: &Autoencoder) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    match model {
        Autoencoder::Lstm(m) => {
            out.extend(lstm_layout("encoder", &m.encoder));
            out.extend(dense_layout("enc_proj", &m.enc_proj));
            out.extend(lstm_layout("decoder", &m.decoder));
            out.extend(dense_layout("dec_proj", &m.dec_proj));
        }
        Autoencoder::Dnn(m) => {
            for (l, layer) in m.encoder.layers.iter().enumerate() {
                out.extend(dense_layout(&format!("encoder.{l}"), layer));
            }
            for (l, layer) in m.decoder.layers.iter().enumerate() {
                out.extend(dense_layout(&format!("decoder.{l}"), layer));
            }
        }
    }
    out
}

fn shapes_of(model: &Autoencoder) -> ModelShapes {
    match model {
        Autoencoder::Lstm(m) => ModelShapes {
            channels: m.channel_count(),
            code_dim: m.code_dim(),
            encoder: m.encoder.layers.iter().map(|l| l.hidden_size()).collect(),
            decoder: m.decoder.layers.iter().map(|l| l.hidden_size()).collect(),
            code_mode: m.code_mode,
        },
        Autoencoder::Dnn(m) => ModelShapes {
            channels: m.channel_count(),
            code_dim: m.code_dim(),
            encoder: m.encoder.layers.iter().map(|l| l.out_units()).collect(),
            decoder: m.decoder.layers.iter().map(|l| l.out_units()).collect(),
            code_mode: CodeMode::PerStep,
        },
    }
}

fn skeleton(kind: ModelKind, s: &ModelShapes) -> Result<Autoencoder> {
    let bad = |why: &str| Error::CorruptCheckpoint(format!("inconsistent shapes: {why}"));
    if s.encoder.is_empty() || s.decoder.is_empty() || s.channels == 0 || s.code_dim == 0 {
        return Err(bad("empty layer list or zero width"));
    }
    let model = match kind {
        ModelKind::Lstm => {
            if s.encoder.contains(&0) || s.decoder.contains(&0) {
                return Err(bad("zero hidden size"));
            }
            let (enc_top, dec_top) = (s.encoder[s.encoder.len() - 1], s.decoder[s.decoder.len() - 1]);
            Autoencoder::Lstm(LstmAeModel {
                encoder: StackedLstm::zeros(s.channels, &s.encoder),
                enc_proj: DenseLayerParams::zeros(enc_top, s.code_dim, Activation::Identity),
                decoder: StackedLstm::zeros(s.code_dim, &s.decoder),
                dec_proj: DenseLayerParams::zeros(dec_top, s.channels, Activation::Identity),
                code_mode: s.code_mode,
            })
        }
        ModelKind::Dnn => {
            if s.encoder.last() != Some(&s.code_dim) || s.decoder.last() != Some(&s.channels) {
                return Err(bad("dense widths do not end at the code and channel counts"));
            }
            let zeros = |sizes: Vec<usize>, output: Activation| {
                let n = sizes.len() - 1;
                let layers = (0..n)
                    .map(|l| {
                        let act = if l + 1 == n { output } else { Activation::Tanh };
                        DenseLayerParams::zeros(sizes[l], sizes[l + 1], act)
                    })
                    .collect();
                DenseNetwork::new(layers)
            };
            let enc: Vec<usize> = std::iter::once(s.channels).chain(s.encoder.iter().copied()).collect();
            let dec: Vec<usize> = std::iter::once(s.code_dim).chain(s.decoder.iter().copied()).collect();
            let encoder = zeros(enc, Activation::Tanh).map_err(|e| bad(&e.to_string()))?;
            let decoder = zeros(dec, Activation::Identity).map_err(|e| bad(&e.to_string()))?;
            Autoencoder::Dnn(DnnAeModel { encoder, decoder })
        }
    };
    model.validate().map_err(|e| bad(&e.to_string()))?;
    Ok(model)
}

impl Checkpoint {
    pub fn new(
        model: &Autoencoder,
        channel_stats: ChannelStats,
        segment_seconds: f64,
        train_config: TrainConfig,
    ) -> Result<Self> {
        if channel_stats.0.len() != model.channel_count() {
            return Err(Error::shape(
                "Checkpoint channel stats",
                format!("{}", model.channel_count()),
                format!("{}", channel_stats.0.len()),
            ));
        }
        let parameters = layout(model)
            .into_iter()
            .zip(model.parameters())
            .map(|((name, shape), values)| {
                let values = if shape.len() == 2 {
                    ArrayValues::Matrix(values.chunks(shape[1].max(1)).map(<[f64]>::to_vec).collect())
                } else {
                    ArrayValues::Vector(values.to_vec())
                };
                ParameterArray { name, shape, values }
            })
            .collect();
        Ok(Self {
            format_version: FORMAT_VERSION,
            model_kind: model.kind(),
            shapes: shapes_of(model),
            parameters,
            channel_stats,
            segment_seconds,
            seed: train_config.seed,
            train_config,
        })
    }

    /// Rebuilds the model, checking every array against the declared shapes.
    pub fn model(&self) -> Result<Autoencoder> {
        let mut model = skeleton(self.model_kind, &self.shapes)?;
        let expected = layout(&model);
        if expected.len() != self.parameters.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "expected {} parameter arrays, found {}",
                expected.len(),
                self.parameters.len()
            )));
        }
        if self.channel_stats.0.len() != model.channel_count() {
            return Err(Error::CorruptCheckpoint("channel statistics do not match the model".into()));
        }
        for ((name, shape), (slot, stored)) in expected
            .iter()
            .zip(model.parameters_mut().into_iter().zip(&self.parameters))
        {
            if &stored.name != name || &stored.shape != shape {
                return Err(Error::CorruptCheckpoint(format!(
                    "array {} {:?} where {name} {shape:?} was expected",
                    stored.name, stored.shape
                )));
            }
            let flat: Vec<f64> = match &stored.values {
                ArrayValues::Matrix(rows) => {
                    if rows.len() != shape[0] || rows.iter().any(|r| r.len() != shape[1]) {
                        return Err(Error::CorruptCheckpoint(format!("{name} is ragged")));
                    }
                    rows.concat()
                }
                ArrayValues::Vector(v) if shape.len() == 1 => v.clone(),
                ArrayValues::Vector(v) if v.is_empty() => v.clone(),
                ArrayValues::Vector(_) => {
                    return Err(Error::CorruptCheckpoint(format!("{name} should be a matrix")));
                }
            };
            if flat.len() != slot.len() {
                return Err(Error::CorruptCheckpoint(format!("{name} has {} values", flat.len())));
            }
            slot.copy_from_slice(&flat);
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::State(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::CorruptCheckpoint("missing format_version".into()))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(Error::VersionMismatch {
                expected: FORMAT_VERSION,
                found: u32::try_from(version).unwrap_or(u32::MAX),
            });
        }
        let ckpt: Self = serde_json::from_value(value).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        ckpt.model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Writes `model` and its normalization statistics to `path`.
pub fn save_checkpoint(
    model: &Autoencoder,
    stats: &ChannelStats,
    segment_seconds: f64,
    config: &TrainConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    Checkpoint::new(model, stats.clone(), segment_seconds, config.clone())?.save(path)
}

/// Reads a checkpoint and rebuilds its model.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Autoencoder, Checkpoint)> {
    let ckpt = Checkpoint::load(path)?;
    Ok((ckpt.model()?, ckpt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::ChannelStat;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stats(m: usize) -> ChannelStats {
        ChannelStats(
            (0..m)
                .map(|c| ChannelStat {
                    name: format!("C{c}"),
                    mean: 0.1 * c as f64 + 1.0 / 3.0,
                    std: 1.0 + c as f64 / 7.0,
                })
                .collect(),
        )
    }

    fn round_trip(model: Autoencoder) {
        let ck = Checkpoint::new(&model, stats(14), 30.0, TrainConfig::desk()).unwrap();
        let text = ck.to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.model().unwrap(), model);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn lstm_round_trip_is_bitwise() {
        round_trip(Autoencoder::init(ModelKind::Lstm, &mut ChaCha8Rng::seed_from_u64(1)));
    }

    #[test]
    fn dnn_round_trip_is_bitwise() {
        round_trip(Autoencoder::init(ModelKind::Dnn, &mut ChaCha8Rng::seed_from_u64(2)));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let model = Autoencoder::init(ModelKind::Dnn, &mut ChaCha8Rng::seed_from_u64(2));
        let text = Checkpoint::new(&model, stats(14), 30.0, TrainConfig::desk())
            .unwrap()
            .to_json()
            .unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(Checkpoint::from_json(cut), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn other_version_is_rejected() {
        let model = Autoencoder::init(ModelKind::Dnn, &mut ChaCha8Rng::seed_from_u64(2));
        let mut ck = Checkpoint::new(&model, stats(14), 30.0, TrainConfig::desk()).unwrap();
        ck.format_version = 7;
        let r = Checkpoint::from_json(&ck.to_json().unwrap());
        assert!(matches!(r, Err(Error::VersionMismatch { found: 7, .. })));
    }

    #[test]
    fn inconsistent_shape_is_corrupt() {
        let model = Autoencoder::init(ModelKind::Lstm, &mut ChaCha8Rng::seed_from_u64(1));
        let mut ck = Checkpoint::new(&model, stats(14), 30.0, TrainConfig::desk()).unwrap();
        ck.parameters[0].shape[1] = 13;
        assert!(matches!(ck.model(), Err(Error::CorruptCheckpoint(_))));
    }
}
