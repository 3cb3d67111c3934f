//! Cable-tension reconstruction with an LSTM autoencoder trained under random
//! channel dropout.
//!
//! * [`nn`] and [`lstm`]: a small f64 numerical kernel with exact reverse-mode
//!   gradients (dense layers, dropout, MSE, SGD/Adam, stacked LSTM with BPTT).
//! * [`autoencoder`] and [`checkpoint`]: the LSTM-structured and dense
//!   autoencoders and their JSON persistence.
//! * [`synth`]: an influence-line traffic model producing synthetic
//!   multichannel tension records with scripted damage and sensor outages.
//! * [`preprocess`]: segment-median detrending, per-channel normalization and
//!   window sampling.
//! * [`pipeline`]: training, baseline fitting, imputation and 3-sigma damage
//!   diagnosis.

pub mod autoencoder;
pub mod checkpoint;
pub mod error;
pub mod lstm;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod series;
pub mod synth;
pub mod tensor;

pub use autoencoder::{Autoencoder, DnnAeModel, LstmAeModel, ModelKind, SequenceBatch};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use error::{Error, Result};
pub use pipeline::{BaselineStats, DamageReport, TrainConfig, TrainLog};
pub use preprocess::{ChannelStats, TrendModel, WindowBatch};
pub use series::MultiChannelSeries;
pub use tensor::{BoolMatrix, RealMatrix};
