//! LSTM-structured and dense autoencoders over `M`-channel windows.
//!
//! Batches are time-major: row `t * batch + b` holds step `t` of window `b`.
//! Codes are produced per step, so the code sequence has the same length as
//! the input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{LstmRecording, LstmScratch, StackedLstm};
use crate::nn::{
    mse_loss_with_grad, Activation, DenseLayerParams, DenseNetwork, DenseRecording, Differentiable, Gradients,
    LossScale, Parameterized,
};
use crate::series::check_permutation;
use crate::tensor::{BoolMatrix, RealMatrix};

pub const CHANNELS: usize = 14;
pub const CODE_DIM: usize = 5;
pub const LSTM_HIDDEN: [usize; 3] = [32, 32, 32];
pub const DNN_ENCODER: [usize; 3] = [64, 32, 5];
pub const DNN_DECODER: [usize; 3] = [5, 32, 14];

/// How the decoder consumes the code sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodeMode {
    /// Decoder step `t` reads code `t`.
    #[default]
    PerStep,
    /// Every decoder step reads the code of the final step.
    RepeatLast,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lstm,
    Dnn,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Lstm => "lstm",
            ModelKind::Dnn => "dnn",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(ModelKind::Lstm),
            "dnn" => Ok(ModelKind::Dnn),
            other => Err(Error::Config(format!("unknown model kind {other}"))),
        }
    }
}

/// `steps * batch` rows of model input, time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    pub steps: usize,
    pub batch: usize,
    pub values: RealMatrix,
}

impl SequenceBatch {
    pub fn new(steps: usize, batch: usize, values: RealMatrix) -> Result<Self> {
        if steps * batch != values.rows() {
            return Err(Error::shape(
                "SequenceBatch",
                format!("{} rows ({steps} steps x {batch} windows)", steps * batch),
                format!("{}", values.rows()),
            ));
        }
        Ok(Self { steps, batch, values })
    }

    /// A single window (`T x M`).
    pub fn single(window: RealMatrix) -> Self {
        Self {
            steps: window.rows(),
            batch: 1,
            values: window,
        }
    }
}

/// Encoder LSTM, linear code projection, decoder LSTM, linear output projection.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmAeModel {
    pub encoder: StackedLstm,
    pub enc_proj: DenseLayerParams,
    pub decoder: StackedLstm,
    pub dec_proj: DenseLayerParams,
    pub code_mode: CodeMode,
}

impl LstmAeModel {
    pub fn new(
        encoder: StackedLstm,
        enc_proj: DenseLayerParams,
        decoder: StackedLstm,
        dec_proj: DenseLayerParams,
        code_mode: CodeMode,
    ) -> Result<Self> {
        let model = Self {
            encoder,
            enc_proj,
            decoder,
            dec_proj,
            code_mode,
        };
        model.validate()?;
        Ok(model)
    }

    /// The 14-channel, 3 x 32 unit, 5-dimensional-code architecture.
    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::init_with(CHANNELS, CODE_DIM, &LSTM_HIDDEN, CodeMode::PerStep, rng)
    }

    pub fn init_with<R: Rng + ?Sized>(
        channels: usize,
        code_dim: usize,
        hidden: &[usize],
        code_mode: CodeMode,
        rng: &mut R,
    ) -> Self {
        let top = *hidden.last().expect("at least one layer");
        let encoder = StackedLstm::init(channels, hidden, rng);
        let enc_proj = DenseLayerParams::init(top, code_dim, Activation::Identity, rng);
        let decoder = StackedLstm::init(code_dim, hidden, rng);
        let dec_proj = DenseLayerParams::init(top, channels, Activation::Identity, rng);
        Self {
            encoder,
            enc_proj,
            decoder,
            dec_proj,
            code_mode,
        }
    }

    pub fn zeros(channels: usize, code_dim: usize, hidden: &[usize]) -> Self {
        let top = *hidden.last().expect("at least one layer");
        Self {
            encoder: StackedLstm::zeros(channels, hidden),
            enc_proj: DenseLayerParams::zeros(top, code_dim, Activation::Identity),
            decoder: StackedLstm::zeros(code_dim, hidden),
            dec_proj: DenseLayerParams::zeros(top, channels, Activation::Identity),
            code_mode: CodeMode::PerStep,
        }
    }

    pub fn channel_count(&self) -> usize {
        self.dec_proj.out_units()
    }

    pub fn code_dim(&self) -> usize {
        self.enc_proj.out_units()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        let pairs = [
            ("encoder top -> enc_proj", self.encoder.output_size(), self.enc_proj.in_units()),
            ("enc_proj -> decoder", self.decoder.input_size(), self.enc_proj.out_units()),
            ("decoder top -> dec_proj", self.decoder.output_size(), self.dec_proj.in_units()),
            ("dec_proj -> channels", self.encoder.input_size(), self.dec_proj.out_units()),
        ];
        for (what, a, b) in pairs {
            if a != Some(b) {
                return Err(Error::shape("LstmAeModel", format!("{what} width {b}"), format!("{a:?}")));
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &SequenceBatch, width: usize, what: &'static str) -> Result<()> {
        if x.values.cols() != width {
            return Err(Error::shape(what, format!("{width} columns"), format!("{}", x.values.cols())));
        }
        if x.steps == 0 {
            return Err(Error::InsufficientData("empty window".into()));
        }
        Ok(())
    }

    /// Per-step codes `z(t) = enc_proj(h_top(t))`.
    pub fn encode(&self, window: &RealMatrix) -> Result<RealMatrix> {
        self.encode_batch(&SequenceBatch::single(window.clone()))
    }

    pub fn encode_batch(&self, x: &SequenceBatch) -> Result<RealMatrix> {
        self.check_input(x, self.channel_count(), "LstmAeModel::encode")?;
        let rec = self.encoder.forward_batch(x.values.as_slice(), x.steps, x.batch)?;
        let mut codes = RealMatrix::zeros(x.values.rows(), self.code_dim());
        self.enc_proj
            .forward_into(rec.top_hidden(), x.values.rows(), codes.as_mut_slice());
        Ok(codes)
    }

    /// `x_hat(t) = dec_proj(decoder hidden at t)`.
    pub fn decode(&self, codes: &RealMatrix) -> Result<RealMatrix> {
        self.decode_batch(&SequenceBatch::single(codes.clone()))
    }

    pub fn decode_batch(&self, z: &SequenceBatch) -> Result<RealMatrix> {
        self.check_input(z, self.code_dim(), "LstmAeModel::decode")?;
        let dec_in = self.decoder_input(z.values.as_slice(), z.steps, z.batch);
        let rec = self.decoder.forward_batch(&dec_in, z.steps, z.batch)?;
        let mut out = RealMatrix::zeros(z.values.rows(), self.channel_count());
        self.dec_proj
            .forward_into(rec.top_hidden(), z.values.rows(), out.as_mut_slice());
        Ok(out)
    }

    fn decoder_input(&self, codes: &[f64], steps: usize, batch: usize) -> Vec<f64> {
        match self.code_mode {
            CodeMode::PerStep => codes.to_vec(),
            CodeMode::RepeatLast => {
                let width = batch * self.code_dim();
                let last = &codes[(steps - 1) * width..];
                last.repeat(steps)
            }
        }
    }

    fn forward_ws(&self, x: &SequenceBatch, ws: &mut LstmWorkspace) -> Result<()> {
        self.check_input(x, self.channel_count(), "LstmAeModel::reconstruct")?;
        let rows = x.values.rows();
        let (k, m) = (self.code_dim(), self.channel_count());
        self.encoder
            .forward_into(x.values.as_slice(), x.steps, x.batch, None, &mut ws.enc)?;
        ws.codes.resize(rows * k, 0.0);
        self.enc_proj.forward_into(ws.enc.top_hidden(), rows, &mut ws.codes);
        let dec_in = match self.code_mode {
            CodeMode::PerStep => &ws.codes,
            CodeMode::RepeatLast => {
                ws.dec_in = self.decoder_input(&ws.codes, x.steps, x.batch);
                &ws.dec_in
            }
        };
        self.decoder.forward_into(dec_in, x.steps, x.batch, None, &mut ws.dec)?;
        ws.out.resize(rows * m, 0.0);
        self.dec_proj.forward_into(ws.dec.top_hidden(), rows, &mut ws.out);
        ws.input_rows = rows;
        Ok(())
    }

    /// Accumulates parameter gradients for `d_out = dL/d(output)` into `grads`.
    fn backward_ws(&self, ws: &mut LstmWorkspace, d_out: &[f64], grads: &mut [Vec<f64>]) -> Result<()> {
        let rows = ws.input_rows;
        let (steps, batch) = (ws.enc.steps(), ws.enc.batch());
        let (k, top_d, top_e) = (
            self.code_dim(),
            self.dec_proj.in_units(),
            self.enc_proj.in_units(),
        );
        let ne = 3 * self.encoder.layers.len();
        let (g_enc, rest) = grads.split_at_mut(ne);
        let (g_eproj, rest) = rest.split_at_mut(2);
        let nd = 3 * self.decoder.layers.len();
        let (g_dec, g_dproj) = rest.split_at_mut(nd);

        ws.d_top.resize(rows * top_d, 0.0);
        {
            let (gw, gb) = g_dproj.split_at_mut(1);
            self.dec_proj.backward_into(
                ws.dec.top_hidden(),
                &ws.out,
                d_out,
                rows,
                &mut gw[0],
                &mut gb[0],
                Some(&mut ws.d_top),
            );
        }
        self.decoder
            .backward_into(&ws.dec, &ws.d_top, g_dec, Some(&mut ws.d_codes), &mut ws.scratch)?;
        if self.code_mode == CodeMode::RepeatLast {
            let width = batch * k;
            let mut last = vec![0.0; width];
            for t in 0..steps {
                for (acc, v) in last.iter_mut().zip(&ws.d_codes[t * width..(t + 1) * width]) {
                    *acc += v;
                }
            }
            ws.d_codes.iter_mut().for_each(|v| *v = 0.0);
            ws.d_codes[(steps - 1) * width..].copy_from_slice(&last);
        }
        ws.d_top.resize(rows * top_e, 0.0);
        {
            let (gw, gb) = g_eproj.split_at_mut(1);
            self.enc_proj.backward_into(
                ws.enc.top_hidden(),
                &ws.codes,
                &ws.d_codes,
                rows,
                &mut gw[0],
                &mut gb[0],
                Some(&mut ws.d_top),
            );
        }
        self.encoder
            .backward_into(&ws.enc, &ws.d_top, g_enc, None, &mut ws.scratch)?;
        Ok(())
    }

    fn permute_channels(&mut self, order: &[usize]) -> Result<()> {
        check_permutation(order, self.channel_count())?;
        let first = &mut self.encoder.layers[0].w_input;
        let old = first.clone();
        for r in 0..old.rows() {
            for (c, &src) in order.iter().enumerate() {
                first.set(r, c, old.get(r, src));
            }
        }
        permute_output_rows(&mut self.dec_proj, order);
        Ok(())
    }
}

fn permute_output_rows(layer: &mut DenseLayerParams, order: &[usize]) {
    let (w, b) = (layer.weight.clone(), layer.bias.clone());
    for (r, &src) in order.iter().enumerate() {
        layer.weight.row_mut(r).copy_from_slice(w.row(src));
        layer.bias[r] = b[src];
    }
}

impl Parameterized for LstmAeModel {
    fn parameters(&self) -> Vec<&[f64]> {
        let mut p = self.encoder.parameters();
        p.extend([self.enc_proj.weight.as_slice(), self.enc_proj.bias.as_slice()]);
        p.extend(self.decoder.parameters());
        p.extend([self.dec_proj.weight.as_slice(), self.dec_proj.bias.as_slice()]);
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.encoder.parameters_mut();
        p.extend([self.enc_proj.weight.as_mut_slice(), self.enc_proj.bias.as_mut_slice()]);
        p.extend(self.decoder.parameters_mut());
        p.extend([self.dec_proj.weight.as_mut_slice(), self.dec_proj.bias.as_mut_slice()]);
        p
    }
}

/// Reusable forward/backward buffers for [`LstmAeModel`].
#[derive(Clone, Debug, Default)]
pub struct LstmWorkspace {
    enc: LstmRecording,
    dec: LstmRecording,
    codes: Vec<f64>,
    dec_in: Vec<f64>,
    out: Vec<f64>,
    d_top: Vec<f64>,
    d_codes: Vec<f64>,
    scratch: LstmScratch,
    input_rows: usize,
}

/// Dense encoder `M -> 64 -> 32 -> 5` and decoder `5 -> 5 -> 32 -> M`, applied per step.
#[derive(Clone, Debug, PartialEq)]
pub struct DnnAeModel {
    pub encoder: DenseNetwork,
    pub decoder: DenseNetwork,
}

impl DnnAeModel {
    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::init_with(CHANNELS, &DNN_ENCODER, &DNN_DECODER, rng)
    }

    /// `encoder` lists the encoder widths after the input; `decoder` the decoder
    /// widths, ending in the channel count.
    pub fn init_with<R: Rng + ?Sized>(channels: usize, encoder: &[usize], decoder: &[usize], rng: &mut R) -> Self {
        let mut enc_sizes = vec![channels];
        enc_sizes.extend_from_slice(encoder);
        let mut dec_sizes = vec![*encoder.last().expect("nonempty encoder")];
        dec_sizes.extend_from_slice(decoder);
        Self {
            encoder: DenseNetwork::init(&enc_sizes, Activation::Tanh, Activation::Tanh, rng),
            decoder: DenseNetwork::init(&dec_sizes, Activation::Tanh, Activation::Identity, rng),
        }
    }

    pub fn new(encoder: DenseNetwork, decoder: DenseNetwork) -> Result<Self> {
        let model = Self { encoder, decoder };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let (e_in, e_out) = (self.encoder.in_units(), self.encoder.out_units());
        let (d_in, d_out) = (self.decoder.in_units(), self.decoder.out_units());
        if e_out.is_none() || e_out != d_in || e_in != d_out {
            return Err(Error::shape(
                "DnnAeModel",
                "encoder output = decoder input and decoder output = encoder input",
                format!("{e_in:?}->{e_out:?}, {d_in:?}->{d_out:?}"),
            ));
        }
        Ok(())
    }

    pub fn channel_count(&self) -> usize {
        self.encoder.in_units().unwrap_or(0)
    }

    pub fn code_dim(&self) -> usize {
        self.encoder.out_units().unwrap_or(0)
    }

    /// All six layers in order.
    pub fn layers(&self) -> Vec<DenseLayerParams> {
        self.encoder.layers.iter().chain(&self.decoder.layers).cloned().collect()
    }

    fn permute_channels(&mut self, order: &[usize]) -> Result<()> {
        check_permutation(order, self.channel_count())?;
        let first = &mut self.encoder.layers[0].weight;
        let old = first.clone();
        for r in 0..old.rows() {
            for (c, &src) in order.iter().enumerate() {
                first.set(r, c, old.get(r, src));
            }
        }
        let last = self.decoder.layers.last_mut().expect("validated");
        permute_output_rows(last, order);
        Ok(())
    }
}

impl Parameterized for DnnAeModel {
    fn parameters(&self) -> Vec<&[f64]> {
        let mut p = self.encoder.parameters();
        p.extend(self.decoder.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.encoder.parameters_mut();
        p.extend(self.decoder.parameters_mut());
        p
    }
}

/// Either autoencoder architecture.
#[derive(Clone, Debug, PartialEq)]
pub enum Autoencoder {
    Lstm(LstmAeModel),
    Dnn(DnnAeModel),
}

/// Buffers reused across training steps.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    lstm: LstmWorkspace,
}

impl Autoencoder {
    pub fn init<R: Rng + ?Sized>(kind: ModelKind, rng: &mut R) -> Self {
        match kind {
            ModelKind::Lstm => Autoencoder::Lstm(LstmAeModel::init(rng)),
            ModelKind::Dnn => Autoencoder::Dnn(DnnAeModel::init(rng)),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Autoencoder::Lstm(_) => ModelKind::Lstm,
            Autoencoder::Dnn(_) => ModelKind::Dnn,
        }
    }

    pub fn channel_count(&self) -> usize {
        match self {
            Autoencoder::Lstm(m) => m.channel_count(),
            Autoencoder::Dnn(m) => m.channel_count(),
        }
    }

    pub fn code_dim(&self) -> usize {
        match self {
            Autoencoder::Lstm(m) => m.code_dim(),
            Autoencoder::Dnn(m) => m.code_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Autoencoder::Lstm(m) => m.validate(),
            Autoencoder::Dnn(m) => m.validate(),
        }
    }

    pub fn encode(&self, window: &RealMatrix) -> Result<RealMatrix> {
        match self {
            Autoencoder::Lstm(m) => m.encode(window),
            Autoencoder::Dnn(m) => m.encoder.forward(window),
        }
    }

    pub fn decode(&self, codes: &RealMatrix) -> Result<RealMatrix> {
        match self {
            Autoencoder::Lstm(m) => m.decode(codes),
            Autoencoder::Dnn(m) => m.decoder.forward(codes),
        }
    }

    /// `decode(encode(window))` for one `T x M` window.
    pub fn reconstruct(&self, window: &RealMatrix) -> Result<RealMatrix> {
        self.reconstruct_batch(&SequenceBatch::single(window.clone()))
    }

    /// Reconstructs a time-major batch of windows.
    pub fn reconstruct_batch(&self, x: &SequenceBatch) -> Result<RealMatrix> {
        match self {
            Autoencoder::Lstm(m) => {
                let mut ws = LstmWorkspace::default();
                m.forward_ws(x, &mut ws)?;
                RealMatrix::from_vec(x.values.rows(), m.channel_count(), ws.out)
            }
            Autoencoder::Dnn(m) => {
                let width = m.channel_count();
                if x.values.cols() != width {
                    return Err(Error::shape(
                        "DnnAeModel::reconstruct",
                        format!("{width} columns"),
                        format!("{}", x.values.cols()),
                    ));
                }
                m.decoder.forward(&m.encoder.forward(&x.values)?)
            }
        }
    }

    /// Masked reconstruction loss of one batch; accumulates its gradient into `grads`.
    pub fn loss_and_gradient(
        &self,
        input: &SequenceBatch,
        target: &RealMatrix,
        mask: Option<&BoolMatrix>,
        scale: LossScale,
        ws: &mut Workspace,
        grads: &mut Gradients,
    ) -> Result<f64> {
        match self {
            Autoencoder::Lstm(m) => {
                m.forward_ws(input, &mut ws.lstm)?;
                let pred = RealMatrix::from_vec(input.values.rows(), m.channel_count(), std::mem::take(&mut ws.lstm.out))?;
                let result = mse_loss_with_grad(&pred, target, mask, scale);
                ws.lstm.out = pred.into_vec();
                let (loss, d_out) = result?;
                m.backward_ws(&mut ws.lstm, d_out.as_slice(), &mut grads.0)?;
                Ok(loss)
            }
            Autoencoder::Dnn(m) => {
                let (code, enc_rec) = m.encoder.forward_recorded(&input.values)?;
                let (out, dec_rec) = m.decoder.forward_recorded(&code)?;
                let (loss, d_out) = mse_loss_with_grad(&out, target, mask, scale)?;
                let (g_dec, d_code) = m.decoder.backward_with_input(&dec_rec, &d_out)?;
                let (g_enc, _) = m.encoder.backward_with_input(&enc_rec, &d_code)?;
                for (acc, g) in grads.0.iter_mut().zip(g_enc.0.iter().chain(&g_dec.0)) {
                    for (a, v) in acc.iter_mut().zip(g) {
                        *a += v;
                    }
                }
                Ok(loss)
            }
        }
    }

    /// Reorders channels: new channel `j` is old channel `order[j]`.
    pub fn permute_channels(&self, order: &[usize]) -> Result<Self> {
        let mut out = self.clone();
        match &mut out {
            Autoencoder::Lstm(m) => m.permute_channels(order)?,
            Autoencoder::Dnn(m) => m.permute_channels(order)?,
        }
        Ok(out)
    }
}

impl Parameterized for Autoencoder {
    fn parameters(&self) -> Vec<&[f64]> {
        match self {
            Autoencoder::Lstm(m) => m.parameters(),
            Autoencoder::Dnn(m) => m.parameters(),
        }
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Autoencoder::Lstm(m) => m.parameters_mut(),
            Autoencoder::Dnn(m) => m.parameters_mut(),
        }
    }
}

/// Recording of an autoencoder forward pass.
#[derive(Clone, Debug)]
pub enum AeRecording {
    Lstm(Box<LstmWorkspace>),
    Dnn(DenseRecording, DenseRecording),
}

impl Differentiable for Autoencoder {
    type Input = SequenceBatch;
    type Recording = AeRecording;

    fn forward_recorded(&self, input: &SequenceBatch) -> Result<(RealMatrix, AeRecording)> {
        match self {
            Autoencoder::Lstm(m) => {
                let mut ws = LstmWorkspace::default();
                m.forward_ws(input, &mut ws)?;
                let out = RealMatrix::from_vec(input.values.rows(), m.channel_count(), ws.out.clone())?;
                Ok((out, AeRecording::Lstm(Box::new(ws))))
            }
            Autoencoder::Dnn(m) => {
                let (code, e) = m.encoder.forward_recorded(&input.values)?;
                let (out, d) = m.decoder.forward_recorded(&code)?;
                Ok((out, AeRecording::Dnn(e, d)))
            }
        }
    }

    fn backward(&self, recording: &AeRecording, d_output: &RealMatrix) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        match (self, recording) {
            (Autoencoder::Lstm(m), AeRecording::Lstm(ws)) => {
                let mut ws = ws.as_ref().clone();
                m.backward_ws(&mut ws, d_output.as_slice(), &mut grads.0)?;
            }
            (Autoencoder::Dnn(m), AeRecording::Dnn(e, d)) => {
                let (g_dec, d_code) = m.decoder.backward_with_input(d, d_output)?;
                let (g_enc, _) = m.encoder.backward_with_input(e, &d_code)?;
                grads = Gradients(g_enc.0.into_iter().chain(g_dec.0).collect());
            }
            _ => return Err(Error::State("recording belongs to a different model kind".into())),
        }
        Ok(grads)
    }
}
