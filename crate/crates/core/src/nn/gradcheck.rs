use super::{Gradients, Parameterized};
use crate::error::{Error, Result};

/// Central-difference gradient of `loss` at `params`.
pub fn finite_difference_gradient<F>(mut loss: F, params: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let mut theta = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + step;
        let plus = loss(&theta);
        theta[i] = orig - step;
        let minus = loss(&theta);
        theta[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("loss is not finite around coordinate {i}")));
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

/// Central differences over every parameter of a model, in [`Parameterized`] order.
pub fn finite_difference_model_gradient<M, F>(model: &M, mut loss: F, step: f64) -> Result<Gradients>
where
    M: Parameterized + Clone,
    F: FnMut(&M) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let mut probe = model.clone();
    let shapes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
    let mut out = Vec::with_capacity(shapes.len());
    for (a, &len) in shapes.iter().enumerate() {
        let mut g = Vec::with_capacity(len);
        for i in 0..len {
            let orig = probe.parameters()[a][i];
            probe.parameters_mut()[a][i] = orig + step;
            let plus = loss(&probe);
            probe.parameters_mut()[a][i] = orig - step;
            let minus = loss(&probe);
            probe.parameters_mut()[a][i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss is not finite around parameter {a}[{i}]"
                )));
            }
            g.push((plus - minus) / (2.0 * step));
        }
        out.push(g);
    }
    Ok(Gradients(out))
}

/// `|a - b| / max(|a|, |b|, 1e-6)`; the floor keeps near-zero entries from
/// dominating through rounding noise.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn max_relative_error(a: &Gradients, b: &Gradients) -> f64 {
    assert_eq!(a.0.len(), b.0.len(), "gradient layouts differ");
    a.0.iter()
        .zip(&b.0)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len(), "gradient layouts differ");
            x.iter().zip(y).map(|(&p, &q)| relative_error(p, q))
        })
        .fold(0.0, f64::max)
}
