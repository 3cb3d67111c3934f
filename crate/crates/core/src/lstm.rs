//! LSTM cells, stacked sequence processing and backpropagation through time.
//!
//! Gate parameters are stored fused: each layer keeps one `4H x I` input
//! matrix, one `4H x H` recurrent matrix and one `4H` bias, with row blocks in
//! the order forget, input, output, candidate. The batched routines work on
//! time-major buffers where row `t * batch + b` holds window `b` at step `t`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::activation::{sigmoid_fast, tanh_fast};
use crate::nn::{init_uniform, Gradients, Parameterized};
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, RealMatrix};


/// Row block of the fused gate parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Forget = 0,
    Input = 1,
    Output = 2,
    Candidate = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Output, Gate::Candidate];
}

/// Parameters of one LSTM layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams {
    /// `4H x I`, blocks `U_f, U_i, U_o, U_c`.
    pub w_input: RealMatrix,
    /// `4H x H`, blocks `W_f, W_i, W_o, W_c`.
    pub w_recurrent: RealMatrix,
    /// `4H`, blocks `b_f, b_i, b_o, b_c`.
    pub bias: Vec<f64>,
}

impl LstmCellParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            w_input: RealMatrix::zeros(4 * hidden_size, input_size),
            w_recurrent: RealMatrix::zeros(4 * hidden_size, hidden_size),
            bias: vec![0.0; 4 * hidden_size],
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` with `fan_in = I + H`.
    pub fn init<R: Rng + ?Sized>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_size, hidden_size);
        let fan_in = input_size + hidden_size;
        init_uniform(p.w_input.as_mut_slice(), fan_in, rng);
        init_uniform(p.w_recurrent.as_mut_slice(), fan_in, rng);
        init_uniform(&mut p.bias, fan_in, rng);
        p
    }

    /// Assembles fused parameters from per-gate blocks given in [`Gate::ALL`] order.
    pub fn from_gates(
        input: [&RealMatrix; 4],
        recurrent: [&RealMatrix; 4],
        bias: [&[f64]; 4],
    ) -> Result<Self> {
        let (h, i) = input[0].shape();
        for g in 0..4 {
            input[g].ensure_shape("LstmCellParams::from_gates input", h, i)?;
            recurrent[g].ensure_shape("LstmCellParams::from_gates recurrent", h, h)?;
            if bias[g].len() != h {
                return Err(Error::shape(
                    "LstmCellParams::from_gates bias",
                    format!("length {h}"),
                    format!("length {}", bias[g].len()),
                ));
            }
        }
        let cat = |blocks: [&[f64]; 4]| blocks.concat();
        Ok(Self {
            w_input: RealMatrix::from_vec(4 * h, i, cat(input.map(RealMatrix::as_slice)))?,
            w_recurrent: RealMatrix::from_vec(4 * h, h, cat(recurrent.map(RealMatrix::as_slice)))?,
            bias: cat(bias),
        })
    }

    #[inline]
    pub fn hidden_size(&self) -> usize {
        self.w_recurrent.cols()
    }

    #[inline]
    pub fn input_size(&self) -> usize {
        self.w_input.cols()
    }

    /// `U_gate` as an `H x I` row-major slice.
    pub fn input_block(&self, gate: Gate) -> &[f64] {
        let (h, i) = (self.hidden_size(), self.input_size());
        let g = gate as usize;
        &self.w_input.as_slice()[g * h * i..(g + 1) * h * i]
    }

    /// `W_gate` as an `H x H` row-major slice.
    pub fn recurrent_block(&self, gate: Gate) -> &[f64] {
        let h = self.hidden_size();
        let g = gate as usize;
        &self.w_recurrent.as_slice()[g * h * h..(g + 1) * h * h]
    }

    pub fn bias_block(&self, gate: Gate) -> &[f64] {
        let h = self.hidden_size();
        let g = gate as usize;
        &self.bias[g * h..(g + 1) * h]
    }

    fn validate(&self) -> Result<()> {
        let h = self.hidden_size();
        self.w_recurrent
            .ensure_shape("LstmCellParams recurrent weights", 4 * h, h)?;
        self.w_input
            .ensure_shape("LstmCellParams input weights", 4 * h, self.input_size())?;
        if self.bias.len() != 4 * h {
            return Err(Error::shape(
                "LstmCellParams bias",
                format!("length {}", 4 * h),
                format!("length {}", self.bias.len()),
            ));
        }
        Ok(())
    }
}

impl Parameterized for LstmCellParams {
    fn parameters(&self) -> Vec<&[f64]> {
        vec![self.w_input.as_slice(), self.w_recurrent.as_slice(), &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_input.as_mut_slice(),
            self.w_recurrent.as_mut_slice(),
            &mut self.bias,
        ]
    }
}

/// Hidden and cell state of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_size: usize) -> Self {
        Self {
            hidden: vec![0.0; hidden_size],
            cell: vec![0.0; hidden_size],
        }
    }
}

/// One time step of one layer.
pub fn cell_step(x: &[f64], prev: &LstmState, params: &LstmCellParams) -> Result<LstmState> {
    params.validate()?;
    let h = params.hidden_size();
    if x.len() != params.input_size() {
        return Err(Error::shape(
            "cell_step input",
            format!("length {}", params.input_size()),
            format!("length {}", x.len()),
        ));
    }
    if prev.hidden.len() != h || prev.cell.len() != h {
        return Err(Error::shape(
            "cell_step state",
            format!("length {h}"),
            format!("hidden {} / cell {}", prev.hidden.len(), prev.cell.len()),
        ));
    }
    let mut gates = vec![0.0; 4 * h];
    matmul_nt(1, params.input_size(), 4 * h, x, params.w_input.as_slice(), 0.0, &mut gates);
    let mut out = LstmState::zeros(h);
    let mut tanh_cell = vec![0.0; h];
    step_rows(
        params,
        1,
        &mut gates,
        Some((&prev.hidden, &prev.cell)),
        &mut out.cell,
        &mut tanh_cell,
        &mut out.hidden,
    );
    Ok(out)
}

/// Completes one step for `rows` stacked rows in place: `gates` holds the
/// input projection on entry and the gate activations `[f, i, o, c~]` on exit.
#[inline]
fn step_rows(
    params: &LstmCellParams,
    rows: usize,
    gates: &mut [f64],
    prev: Option<(&[f64], &[f64])>,
    cell: &mut [f64],
    tanh_cell: &mut [f64],
    hidden: &mut [f64],
) {
    let h = params.hidden_size();
    if let Some((h_prev, _)) = prev {
        matmul_nt(rows, h, 4 * h, h_prev, params.w_recurrent.as_slice(), 1.0, gates);
    }
    let bias = &params.bias[..4 * h];
    for r in 0..rows {
        let gr = &mut gates[r * 4 * h..(r + 1) * 4 * h];
        let (sig, cand) = gr.split_at_mut(3 * h);
        for (v, b) in sig.iter_mut().zip(&bias[..3 * h]) {
            *v = sigmoid_fast(*v + b);
        }
        for (v, b) in cand.iter_mut().zip(&bias[3 * h..]) {
            *v = tanh_fast(*v + b);
        }
        let (f, rest) = gr.split_at(h);
        let (i, rest) = rest.split_at(h);
        let (o, g) = rest.split_at(h);
        let row = r * h..(r + 1) * h;
        let c = &mut cell[row.clone()];
        match prev {
            Some((_, c_prev)) => {
                for ((((c, &f), &cp), &i), &g) in c.iter_mut().zip(f).zip(&c_prev[row.clone()]).zip(i).zip(g) {
                    *c = f * cp + i * g;
                }
            }
            None => {
                for ((c, &i), &g) in c.iter_mut().zip(i).zip(g) {
                    *c = i * g;
                }
            }
        }
        for (((tc, hh), &c), &o) in tanh_cell[row.clone()]
            .iter_mut()
            .zip(&mut hidden[row.clone()])
            .zip(&cell[row])
            .zip(o)
        {
            *tc = tanh_fast(c);
            *hh = o * *tc;
        }
    }
}

/// An ordered stack of LSTM layers; layer `l` consumes layer `l - 1`'s hidden states.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedLstm {
    pub layers: Vec<LstmCellParams>,
}

/// Activations of one layer over a whole batch of sequences, time-major.
#[derive(Clone, Debug, Default)]
struct LayerTrace {
    gates: Vec<f64>,
    cell: Vec<f64>,
    tanh_cell: Vec<f64>,
    hidden: Vec<f64>,
    initial: Option<(Vec<f64>, Vec<f64>)>,
}

/// Recorded forward pass of a [`StackedLstm`] over `batch` sequences of `steps` steps.
///
/// Buffers are reused when the same recording is passed to
/// [`StackedLstm::forward_into`] again.
#[derive(Clone, Debug, Default)]
pub struct LstmRecording {
    steps: usize,
    batch: usize,
    input: Vec<f64>,
    layers: Vec<LayerTrace>,
}

impl LstmRecording {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Top-layer hidden states, `(steps * batch) x H`, time-major.
    pub fn top_hidden(&self) -> &[f64] {
        self.layers.last().map_or(&self.input[..], |l| &l.hidden)
    }

    /// Gate activations `[f, i, o, c~]` of `layer`, one `4H` row per (step, window).
    pub fn gate_activations(&self, layer: usize) -> &[f64] {
        &self.layers[layer].gates
    }

    pub fn cell_states(&self, layer: usize) -> &[f64] {
        &self.layers[layer].cell
    }

    pub fn hidden_states(&self, layer: usize) -> &[f64] {
        &self.layers[layer].hidden
    }
}

/// Reusable buffers for [`StackedLstm::backward_into`].
#[derive(Clone, Debug, Default)]
pub struct LstmScratch {
    dz: Vec<f64>,
    d_upper: Vec<f64>,
    d_lower: Vec<f64>,
    dh_next: Vec<f64>,
    dc_next: Vec<f64>,
}

fn resize(buf: &mut Vec<f64>, len: usize) {
    if buf.len() != len {
        buf.resize(len, 0.0);
    }
}

impl StackedLstm {
    pub fn new(layers: Vec<LstmCellParams>) -> Result<Self> {
        let stack = Self { layers };
        stack.validate()?;
        Ok(stack)
    }

    pub fn zeros(input_size: usize, hidden_sizes: &[usize]) -> Self {
        let mut prev = input_size;
        let layers = hidden_sizes
            .iter()
            .map(|&h| {
                let l = LstmCellParams::zeros(prev, h);
                prev = h;
                l
            })
            .collect();
        Self { layers }
    }

    pub fn init<R: Rng + ?Sized>(input_size: usize, hidden_sizes: &[usize], rng: &mut R) -> Self {
        let mut prev = input_size;
        let layers = hidden_sizes
            .iter()
            .map(|&h| {
                let l = LstmCellParams::init(prev, h, rng);
                prev = h;
                l
            })
            .collect();
        Self { layers }
    }

    pub fn input_size(&self) -> Option<usize> {
        self.layers.first().map(LstmCellParams::input_size)
    }

    pub fn output_size(&self) -> Option<usize> {
        self.layers.last().map(LstmCellParams::hidden_size)
    }

    pub fn validate(&self) -> Result<()> {
        for (l, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if l > 0 && layer.input_size() != self.layers[l - 1].hidden_size() {
                return Err(Error::shape(
                    "StackedLstm chaining",
                    format!(
                        "layer {l} input size {}",
                        self.layers[l - 1].hidden_size()
                    ),
                    format!("{}", layer.input_size()),
                ));
            }
        }
        Ok(())
    }

    /// Batched forward pass from zero initial states.
    ///
    /// `input` is `(steps * batch) x I`, time-major.
    pub fn forward_batch(&self, input: &[f64], steps: usize, batch: usize) -> Result<LstmRecording> {
        let mut rec = LstmRecording::default();
        self.forward_into(input, steps, batch, None, &mut rec)?;
        Ok(rec)
    }

    /// Batched forward pass; `initial[l]` holds `batch x H` hidden and cell states for layer `l`.
    pub fn forward_batch_from(
        &self,
        input: &[f64],
        steps: usize,
        batch: usize,
        initial: Option<&[(Vec<f64>, Vec<f64>)]>,
    ) -> Result<LstmRecording> {
        let mut rec = LstmRecording::default();
        self.forward_into(input, steps, batch, initial, &mut rec)?;
        Ok(rec)
    }

    /// Forward pass writing into an existing recording.
    pub fn forward_into(
        &self,
        input: &[f64],
        steps: usize,
        batch: usize,
        initial: Option<&[(Vec<f64>, Vec<f64>)]>,
        rec: &mut LstmRecording,
    ) -> Result<()> {
        self.validate()?;
        if steps == 0 {
            return Err(Error::InsufficientData("LSTM sequence is empty".into()));
        }
        let in_size = self.input_size().unwrap_or(0);
        if input.len() != steps * batch * in_size {
            return Err(Error::shape(
                "StackedLstm::forward_batch",
                format!("{} x {in_size} input", steps * batch),
                format!("{} values", input.len()),
            ));
        }
        if let Some(init) = initial {
            if init.len() != self.layers.len() {
                return Err(Error::shape(
                    "StackedLstm initial states",
                    format!("{} layers", self.layers.len()),
                    format!("{}", init.len()),
                ));
            }
            for ((h0, c0), layer) in init.iter().zip(&self.layers) {
                let h = layer.hidden_size();
                if h0.len() != batch * h || c0.len() != batch * h {
                    return Err(Error::shape(
                        "StackedLstm initial state",
                        format!("{batch} x {h}"),
                        format!("{} / {} values", h0.len(), c0.len()),
                    ));
                }
            }
        }

        let rows = steps * batch;
        rec.steps = steps;
        rec.batch = batch;
        rec.input.clear();
        rec.input.extend_from_slice(input);
        rec.layers.resize_with(self.layers.len(), LayerTrace::default);

        for (l, layer) in self.layers.iter().enumerate() {
            let (h, i) = (layer.hidden_size(), layer.input_size());
            let (below, rest) = rec.layers.split_at_mut(l);
            let trace = &mut rest[0];
            let x: &[f64] = if l == 0 { &rec.input } else { &below[l - 1].hidden };
            trace.initial = initial.map(|s| s[l].clone());
            resize(&mut trace.gates, rows * 4 * h);
            resize(&mut trace.cell, rows * h);
            resize(&mut trace.tanh_cell, rows * h);
            resize(&mut trace.hidden, rows * h);

            matmul_nt(rows, i, 4 * h, x, layer.w_input.as_slice(), 0.0, &mut trace.gates);
            for t in 0..steps {
                let gate_rows = t * batch * 4 * h..(t + 1) * batch * 4 * h;
                let (start, end) = (t * batch * h, (t + 1) * batch * h);
                let (c_before, c_rest) = trace.cell.split_at_mut(start);
                let (h_before, h_rest) = trace.hidden.split_at_mut(start);
                let prev: Option<(&[f64], &[f64])> = if t == 0 {
                    trace.initial.as_ref().map(|(h0, c0)| (&h0[..], &c0[..]))
                } else {
                    Some((&h_before[start - batch * h..], &c_before[start - batch * h..]))
                };
                step_rows(
                    layer,
                    batch,
                    &mut trace.gates[gate_rows],
                    prev,
                    &mut c_rest[..end - start],
                    &mut trace.tanh_cell[start..end],
                    &mut h_rest[..end - start],
                );
            }
        }
        Ok(())
    }

    /// Backpropagation through time.
    ///
    /// `d_top` is `dL/dh` for every top-layer hidden state (time-major). Returns
    /// parameter gradients in [`Parameterized`] order and `dL/dinput`.
    pub fn backward_batch(&self, rec: &LstmRecording, d_top: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let mut grads = Gradients::zeros_like(self);
        let mut scratch = LstmScratch::default();
        let mut d_input = Vec::new();
        self.backward_into(rec, d_top, &mut grads.0, Some(&mut d_input), &mut scratch)?;
        Ok((grads, d_input))
    }

    /// Backpropagation through time, accumulating parameter gradients into
    /// `grads` (laid out like [`Parameterized::parameters`]) and optionally
    /// overwriting `d_input` with `dL/dinput`.
    pub fn backward_into(
        &self,
        rec: &LstmRecording,
        d_top: &[f64],
        grads: &mut [Vec<f64>],
        d_input: Option<&mut Vec<f64>>,
        scratch: &mut LstmScratch,
    ) -> Result<()> {
        if rec.layers.len() != self.layers.len() {
            return Err(Error::State("recording does not belong to this stack".into()));
        }
        if grads.len() != 3 * self.layers.len() {
            return Err(Error::shape(
                "StackedLstm::backward gradients",
                format!("{} arrays", 3 * self.layers.len()),
                format!("{}", grads.len()),
            ));
        }
        let (steps, batch) = (rec.steps, rec.batch);
        let rows = steps * batch;
        let top = self.output_size().unwrap_or(0);
        if d_top.len() != rows * top {
            return Err(Error::shape(
                "StackedLstm::backward_batch",
                format!("{rows} x {top} upstream gradient"),
                format!("{} values", d_top.len()),
            ));
        }

        let LstmScratch {
            dz,
            d_upper,
            d_lower,
            dh_next,
            dc_next,
        } = scratch;
        d_upper.clear();
        d_upper.extend_from_slice(d_top);
        let want_input = d_input.is_some();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let trace = &rec.layers[l];
            let (h, i) = (layer.hidden_size(), layer.input_size());
            let x: &[f64] = if l == 0 { &rec.input } else { &rec.layers[l - 1].hidden };

            resize(dz, rows * 4 * h);
            dh_next.clear();
            dh_next.resize(batch * h, 0.0);
            dc_next.clear();
            dc_next.resize(batch * h, 0.0);
            for t in (0..steps).rev() {
                for b in 0..batch {
                    let r = t * batch + b;
                    let g = &trace.gates[r * 4 * h..(r + 1) * 4 * h];
                    let (f, rest) = g.split_at(h);
                    let (ig, rest) = rest.split_at(h);
                    let (o, cand) = rest.split_at(h);
                    let tc = &trace.tanh_cell[r * h..(r + 1) * h];
                    let c_prev: Option<&[f64]> = if t > 0 {
                        Some(&trace.cell[(r - batch) * h..(r - batch + 1) * h])
                    } else {
                        trace.initial.as_ref().map(|(_, c0)| &c0[b * h..(b + 1) * h])
                    };
                    let dzr = &mut dz[r * 4 * h..(r + 1) * 4 * h];
                    let dhr = &d_upper[r * h..(r + 1) * h];
                    let dhn = &dh_next[b * h..(b + 1) * h];
                    let dcn = &mut dc_next[b * h..(b + 1) * h];
                    for k in 0..h {
                        let dh = dhr[k] + dhn[k];
                        let d_o = dh * tc[k];
                        let dc = dcn[k] + dh * o[k] * (1.0 - tc[k] * tc[k]);
                        let df = dc * c_prev.map_or(0.0, |c| c[k]);
                        let di = dc * cand[k];
                        let dg = dc * ig[k];
                        dcn[k] = dc * f[k];
                        dzr[k] = df * f[k] * (1.0 - f[k]);
                        dzr[h + k] = di * ig[k] * (1.0 - ig[k]);
                        dzr[2 * h + k] = d_o * o[k] * (1.0 - o[k]);
                        dzr[3 * h + k] = dg * (1.0 - cand[k] * cand[k]);
                    }
                }
                if t > 0 {
                    let step_dz = &dz[t * batch * 4 * h..(t + 1) * batch * 4 * h];
                    matmul_nn(batch, 4 * h, h, step_dz, layer.w_recurrent.as_slice(), 0.0, dh_next);
                }
            }

            let base = 3 * l;
            // input weights
            matmul_tn(4 * h, rows, i, dz, x, 1.0, &mut grads[base]);
            // recurrent weights: step t pairs with h_{t-1}
            if steps > 1 {
                matmul_tn(
                    4 * h,
                    (steps - 1) * batch,
                    h,
                    &dz[batch * 4 * h..],
                    &trace.hidden[..(steps - 1) * batch * h],
                    1.0,
                    &mut grads[base + 1],
                );
            }
            if let Some((h0, _)) = &trace.initial {
                matmul_tn(4 * h, batch, h, &dz[..batch * 4 * h], h0, 1.0, &mut grads[base + 1]);
            }
            let gb = &mut grads[base + 2];
            for row in dz.chunks_exact(4 * h) {
                for (acc, v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            if l > 0 || want_input {
                resize(d_lower, rows * i);
                matmul_nn(rows, 4 * h, i, dz, layer.w_input.as_slice(), 0.0, d_lower);
                std::mem::swap(d_upper, d_lower);
            }
        }
        if let Some(d_input) = d_input {
            d_input.clear();
            d_input.extend_from_slice(d_upper);
        }
        Ok(())
    }
}

impl Parameterized for StackedLstm {
    fn parameters(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.parameters_mut()).collect()
    }
}

/// Runs one sequence (`T x I`) through the stack.
///
/// Returns the top-layer hidden sequence (`T x H`) and each layer's final state.
pub fn sequence_forward(
    inputs: &RealMatrix,
    stack: &StackedLstm,
    initial: Option<&[LstmState]>,
) -> Result<(RealMatrix, Vec<LstmState>)> {
    if inputs.rows() == 0 {
        return Err(Error::InsufficientData("LSTM sequence is empty".into()));
    }
    let in_size = stack.input_size().unwrap_or(inputs.cols());
    if inputs.cols() != in_size {
        return Err(Error::shape(
            "sequence_forward",
            format!("{in_size} input columns"),
            format!("{}", inputs.cols()),
        ));
    }
    let init: Option<Vec<(Vec<f64>, Vec<f64>)>> =
        initial.map(|s| s.iter().map(|st| (st.hidden.clone(), st.cell.clone())).collect());
    let steps = inputs.rows();
    let rec = stack.forward_batch_from(inputs.as_slice(), steps, 1, init.as_deref())?;
    let top = stack.output_size().unwrap_or(in_size);
    let out = RealMatrix::from_vec(steps, top, rec.top_hidden().to_vec())?;
    let finals = rec
        .layers
        .iter()
        .zip(&stack.layers)
        .map(|(tr, layer)| {
            let h = layer.hidden_size();
            let last = (steps - 1) * h..steps * h;
            LstmState {
                hidden: tr.hidden[last.clone()].to_vec(),
                cell: tr.cell[last].to_vec(),
            }
        })
        .collect();
    Ok((out, finals))
}

/// Gradients of `sum(d_out * h_top)` for a single sequence.
pub fn sequence_backward(stack: &StackedLstm, rec: &LstmRecording, d_out: &RealMatrix) -> Result<Gradients> {
    stack.backward_batch(rec, d_out.as_slice()).map(|(g, _)| g)
}
