use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::activation::Activation;
use super::dropout::{dropout_apply_with, DropoutSpec};
use super::graph::Differentiable;
use super::{init_uniform, Gradients, Parameterized};
use crate::error::{Error, Result};
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, BoolMatrix, RealMatrix};

/// Weights (`out_units x in_units`), bias and activation of one fully-connected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayerParams {
    pub weight: RealMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayerParams {
    pub fn new(weight: RealMatrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape(
                "DenseLayerParams::new",
                format!("bias of length {}", weight.rows()),
                format!("length {}", bias.len()),
            ));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn zeros(in_units: usize, out_units: usize, activation: Activation) -> Self {
        Self {
            weight: RealMatrix::zeros(out_units, in_units),
            bias: vec![0.0; out_units],
            activation,
        }
    }

    /// Uniform initialization scaled by `1/sqrt(in_units)`.
    pub fn init<R: Rng + ?Sized>(
        in_units: usize,
        out_units: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut layer = Self::zeros(in_units, out_units, activation);
        init_uniform(layer.weight.as_mut_slice(), in_units, rng);
        init_uniform(&mut layer.bias, in_units, rng);
        layer
    }

    #[inline]
    pub fn in_units(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn out_units(&self) -> usize {
        self.weight.rows()
    }

    /// `out = activation(input * W^T + b)` for `rows` contiguous input rows.
    pub(crate) fn forward_into(&self, input: &[f64], rows: usize, out: &mut [f64]) {
        let (n_in, n_out) = (self.in_units(), self.out_units());
        matmul_nt(rows, n_in, n_out, input, self.weight.as_slice(), 0.0, out);
        for row in out.chunks_exact_mut(n_out) {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v = self.activation.apply(*v + b);
            }
        }
    }

    /// Accumulates weight and bias gradients into `grad_w`/`grad_b`; overwrites
    /// `d_input` (if requested) with the gradient with respect to the input.
    pub(crate) fn backward_into(
        &self,
        input: &[f64],
        output: &[f64],
        d_output: &[f64],
        rows: usize,
        grad_w: &mut [f64],
        grad_b: &mut [f64],
        d_input: Option<&mut [f64]>,
    ) {
        let (n_in, n_out) = (self.in_units(), self.out_units());
        let mut dz = d_output.to_vec();
        if self.activation != Activation::Identity {
            for (g, &y) in dz.iter_mut().zip(output) {
                *g *= self.activation.derivative_from_output(y);
            }
        }
        matmul_tn(n_out, rows, n_in, &dz, input, 1.0, grad_w);
        for row in dz.chunks_exact(n_out) {
            for (gb, g) in grad_b.iter_mut().zip(row) {
                *gb += g;
            }
        }
        if let Some(d_input) = d_input {
            matmul_nn(rows, n_out, n_in, &dz, self.weight.as_slice(), 0.0, d_input);
        }
    }
}

/// Applies one dense layer to every row of `input`.
pub fn dense_forward(input: &RealMatrix, layer: &DenseLayerParams) -> Result<RealMatrix> {
    if input.cols() != layer.in_units() {
        return Err(Error::shape(
            "dense_forward",
            format!(
                "input with {} columns (weight {}x{})",
                layer.in_units(),
                layer.out_units(),
                layer.in_units()
            ),
            format!("input {}x{}", input.rows(), input.cols()),
        ));
    }
    let mut out = RealMatrix::zeros(input.rows(), layer.out_units());
    layer.forward_into(input.as_slice(), input.rows(), out.as_mut_slice());
    Ok(out)
}

/// Composes dense layers left to right; an empty list is the identity.
pub fn dnn_forward(input: &RealMatrix, layers: &[DenseLayerParams]) -> Result<RealMatrix> {
    check_chain(layers)?;
    layers
        .iter()
        .try_fold(input.clone(), |h, layer| dense_forward(&h, layer))
}

fn check_chain(layers: &[DenseLayerParams]) -> Result<()> {
    for (l, pair) in layers.windows(2).enumerate() {
        if pair[0].out_units() != pair[1].in_units() {
            return Err(Error::shape(
                "dnn_forward",
                format!("layer {} input of {} units", l + 1, pair[0].out_units()),
                format!("{} units", pair[1].in_units()),
            ));
        }
    }
    Ok(())
}

/// A stack of dense layers with optional inverted dropout after each hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNetwork {
    pub layers: Vec<DenseLayerParams>,
    pub hidden_dropout: Option<DropoutSpec>,
}

/// Everything the backward pass of a [`DenseNetwork`] needs.
#[derive(Clone, Debug)]
pub struct DenseRecording {
    layer_inputs: Vec<RealMatrix>,
    layer_outputs: Vec<RealMatrix>,
    kept: Vec<Option<BoolMatrix>>,
}

impl DenseNetwork {
    pub fn new(layers: Vec<DenseLayerParams>) -> Result<Self> {
        check_chain(&layers)?;
        Ok(Self {
            layers,
            hidden_dropout: None,
        })
    }

    /// Builds layers with widths `sizes[0] -> sizes[1] -> ...`.
    pub fn init<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        let n = sizes.len().saturating_sub(1);
        let layers = (0..n)
            .map(|l| {
                let act = if l + 1 == n { output } else { hidden };
                DenseLayerParams::init(sizes[l], sizes[l + 1], act, rng)
            })
            .collect();
        Self {
            layers,
            hidden_dropout: None,
        }
    }

    pub fn with_hidden_dropout(mut self, spec: DropoutSpec) -> Self {
        self.hidden_dropout = Some(spec);
        self
    }

    pub fn in_units(&self) -> Option<usize> {
        self.layers.first().map(DenseLayerParams::in_units)
    }

    pub fn out_units(&self) -> Option<usize> {
        self.layers.last().map(DenseLayerParams::out_units)
    }

    /// Inference pass (dropout disabled).
    pub fn forward(&self, input: &RealMatrix) -> Result<RealMatrix> {
        dnn_forward(input, &self.layers)
    }

    /// Training pass; dropout masks are drawn from `hidden_dropout.seed`.
    pub fn forward_recorded(&self, input: &RealMatrix) -> Result<(RealMatrix, DenseRecording)> {
        check_chain(&self.layers)?;
        if let Some(spec) = &self.hidden_dropout {
            spec.validate()?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.hidden_dropout.map_or(0, |d| d.seed));
        let mut rec = DenseRecording {
            layer_inputs: Vec::with_capacity(self.layers.len()),
            layer_outputs: Vec::with_capacity(self.layers.len()),
            kept: Vec::with_capacity(self.layers.len()),
        };
        let mut h = input.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let out = dense_forward(&h, layer)?;
            rec.layer_inputs.push(h);
            let hidden = l + 1 < self.layers.len();
            h = match (&self.hidden_dropout, hidden) {
                (Some(spec), true) => {
                    let (dropped, kept) =
                        dropout_apply_with(&out, spec.probability, spec.mode, true, &mut rng)?;
                    rec.kept.push(Some(kept));
                    dropped
                }
                _ => {
                    rec.kept.push(None);
                    out.clone()
                }
            };
            rec.layer_outputs.push(out);
        }
        Ok((h, rec))
    }

    /// Gradients for all parameters plus the gradient with respect to the input.
    pub fn backward_with_input(
        &self,
        rec: &DenseRecording,
        d_output: &RealMatrix,
    ) -> Result<(Gradients, RealMatrix)> {
        if rec.layer_outputs.len() != self.layers.len() {
            return Err(Error::State(
                "recording does not belong to this network".into(),
            ));
        }
        let last = rec.layer_outputs.last();
        let rows = last.map_or(d_output.rows(), RealMatrix::rows);
        if let Some(out) = last {
            d_output.ensure_shape("DenseNetwork::backward", out.rows(), out.cols())?;
        }
        let mut grads = Gradients::zeros_like(self);
        let mut d = d_output.clone();
        let keep_scale = 1.0 - self.hidden_dropout.map_or(0.0, |s| s.probability);
        for l in (0..self.layers.len()).rev() {
            if let Some(kept) = &rec.kept[l] {
                for (g, &k) in d.as_mut_slice().iter_mut().zip(kept.as_slice()) {
                    *g = if k { *g / keep_scale } else { 0.0 };
                }
            }
            let layer = &self.layers[l];
            let mut d_in = RealMatrix::zeros(rows, layer.in_units());
            let (gw, gb) = grads.0.split_at_mut(2 * l + 1);
            layer.backward_into(
                rec.layer_inputs[l].as_slice(),
                rec.layer_outputs[l].as_slice(),
                d.as_slice(),
                rows,
                &mut gw[2 * l],
                &mut gb[0],
                Some(d_in.as_mut_slice()),
            );
            d = d_in;
        }
        Ok((grads, d))
    }
}

impl Parameterized for DenseNetwork {
    fn parameters(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

impl Differentiable for DenseNetwork {
    type Input = RealMatrix;
    type Recording = DenseRecording;

    fn forward_recorded(&self, input: &RealMatrix) -> Result<(RealMatrix, DenseRecording)> {
        DenseNetwork::forward_recorded(self, input)
    }

    fn backward(&self, rec: &DenseRecording, d_output: &RealMatrix) -> Result<Gradients> {
        self.backward_with_input(rec, d_output).map(|(g, _)| g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_difference_model_gradient, max_relative_error, DropoutMode, LossGraph, LossScale};

    #[test]
    fn identity_weights_pass_input_through() {
        let x = RealMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let layer = DenseLayerParams::new(
            RealMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(),
            vec![0.0, 0.0],
            Activation::Identity,
        )
        .unwrap();
        assert_eq!(dense_forward(&x, &layer).unwrap(), x);
    }

    #[test]
    fn sigmoid_of_zero_input() {
        let x = RealMatrix::zeros(1, 1);
        let layer = DenseLayerParams::new(
            RealMatrix::from_rows(&[[3.7]]).unwrap(),
            vec![0.0],
            Activation::Sigmoid,
        )
        .unwrap();
        assert_eq!(dense_forward(&x, &layer).unwrap().get(0, 0), 0.5);
    }

    #[test]
    fn tanh_hand_evaluation() {
        let x = RealMatrix::from_rows(&[[1.0, -1.0]]).unwrap();
        let layer = DenseLayerParams::new(
            RealMatrix::from_rows(&[[0.5, 0.5]]).unwrap(),
            vec![0.1],
            Activation::Tanh,
        )
        .unwrap();
        let y = dense_forward(&x, &layer).unwrap().get(0, 0);
        assert!((y - 0.1f64.tanh()).abs() < 1e-15);
        assert!((y - 0.09967).abs() < 1e-5);
    }

    #[test]
    fn dimension_mismatch_names_both_shapes() {
        let x = RealMatrix::zeros(2, 3);
        let layer = DenseLayerParams::zeros(2, 4, Activation::Identity);
        let err = dense_forward(&x, &layer).unwrap_err().to_string();
        assert!(err.contains("2x3") && err.contains("4x2"), "{err}");
    }

    #[test]
    fn empty_and_identity_compositions() {
        let x = RealMatrix::from_fn(3, 2, |i, j| i as f64 * 0.5 - j as f64);
        assert_eq!(dnn_forward(&x, &[]).unwrap(), x);
        let id = DenseLayerParams::new(
            RealMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(),
            vec![0.0; 2],
            Activation::Identity,
        )
        .unwrap();
        assert_eq!(dnn_forward(&x, &[id.clone(), id]).unwrap(), x);
    }

    #[test]
    fn chain_break_is_a_shape_error() {
        let layers = vec![
            DenseLayerParams::zeros(2, 3, Activation::Tanh),
            DenseLayerParams::zeros(4, 1, Activation::Tanh),
        ];
        assert!(matches!(
            dnn_forward(&RealMatrix::zeros(1, 2), &layers),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn half_squared_error_gradient_by_hand() {
        // L = 1/2 (w x - y)^2 with w = 1, x = 2, y = 0 -> dL/dw = (w x - y) x = 4
        let net = DenseNetwork::new(vec![DenseLayerParams::new(
            RealMatrix::from_rows(&[[1.0]]).unwrap(),
            vec![0.0],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let mut graph = LossGraph::new(&net, LossScale::PerSample);
        let x = RealMatrix::from_rows(&[[2.0]]).unwrap();
        let y = RealMatrix::zeros(1, 1);
        assert_eq!(graph.forward(&x, &y, None).unwrap(), 2.0);
        let g = graph.backward().unwrap();
        assert_eq!(g.0[0], vec![4.0]);
        assert_eq!(g.0[1], vec![2.0]);
    }

    #[test]
    fn zero_everything_gives_zero_gradient() {
        let net = DenseNetwork::new(vec![
            DenseLayerParams::zeros(3, 4, Activation::Tanh),
            DenseLayerParams::zeros(4, 2, Activation::Identity),
        ])
        .unwrap();
        let x = RealMatrix::from_fn(5, 3, |i, j| (i + j) as f64);
        let mut graph = LossGraph::new(&net, LossScale::PerSample);
        graph.forward(&x, &RealMatrix::zeros(5, 2), None).unwrap();
        assert!(graph.backward().unwrap().is_zero());
    }

    #[test]
    fn dropout_network_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = DenseNetwork::init(&[3, 6, 5, 2], Activation::Sigmoid, Activation::Identity, &mut rng)
            .with_hidden_dropout(DropoutSpec::new(0.3, DropoutMode::UnitWise, 17).unwrap());
        let x = RealMatrix::from_fn(4, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.4 - 0.8);
        let y = RealMatrix::from_fn(4, 2, |i, j| (i as f64 - j as f64) * 0.3);
        let mut graph = LossGraph::new(&net, LossScale::PerSample);
        graph.forward(&x, &y, None).unwrap();
        let analytic = graph.backward().unwrap();
        let numeric = finite_difference_model_gradient(
            &net,
            |m| {
                let mut g = LossGraph::new(m, LossScale::PerSample);
                g.forward(&x, &y, None).unwrap()
            },
            1e-5,
        )
        .unwrap();
        assert!(max_relative_error(&analytic, &numeric) < 1e-4);
    }
}
