use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BoolMatrix, RealMatrix};

/// Normalization of the squared-error sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossScale {
    /// `1 / (2 N_eff) * sum`, where `N_eff` counts rows with at least one unmasked entry.
    #[default]
    PerSample,
    /// `1/2 * sum` with no sample-count normalization.
    Sum,
}

/// Mean squared error with the default per-sample scaling.
///
/// Rows are samples; the squared norm of each row difference is summed over
/// unmasked (`true`) entries.
pub fn mse_loss(pred: &RealMatrix, target: &RealMatrix, mask: Option<&BoolMatrix>) -> Result<f64> {
    mse_loss_scaled(pred, target, mask, LossScale::PerSample)
}

pub fn mse_loss_scaled(
    pred: &RealMatrix,
    target: &RealMatrix,
    mask: Option<&BoolMatrix>,
    scale: LossScale,
) -> Result<f64> {
    check_shapes(pred, target, mask)?;
    let (sum, rows) = masked_sum(pred, target, mask, |_, _| {});
    finish(sum, rows, scale)
}

/// Loss together with its gradient with respect to `pred`.
///
/// Masked entries receive a zero gradient.
pub fn mse_loss_with_grad(
    pred: &RealMatrix,
    target: &RealMatrix,
    mask: Option<&BoolMatrix>,
    scale: LossScale,
) -> Result<(f64, RealMatrix)> {
    check_shapes(pred, target, mask)?;
    let mut grad = RealMatrix::zeros(pred.rows(), pred.cols());
    let (sum, rows) = {
        let g = grad.as_mut_slice();
        masked_sum(pred, target, mask, |idx, diff| g[idx] = diff)
    };
    let loss = finish(sum, rows, scale)?;
    let factor = match scale {
        LossScale::PerSample => 1.0 / rows as f64,
        LossScale::Sum => 1.0,
    };
    for v in grad.as_mut_slice() {
        *v *= factor;
    }
    Ok((loss, grad))
}

fn check_shapes(pred: &RealMatrix, target: &RealMatrix, mask: Option<&BoolMatrix>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "mse_loss",
            format!("target {}x{}", pred.rows(), pred.cols()),
            format!("{}x{}", target.rows(), target.cols()),
        ));
    }
    if let Some(mask) = mask {
        if mask.shape() != pred.shape() {
            return Err(Error::shape(
                "mse_loss mask",
                format!("{}x{}", pred.rows(), pred.cols()),
                format!("{}x{}", mask.rows(), mask.cols()),
            ));
        }
    }
    Ok(())
}

/// Returns the squared-error sum and the number of rows with any unmasked entry.
fn masked_sum(
    pred: &RealMatrix,
    target: &RealMatrix,
    mask: Option<&BoolMatrix>,
    mut on_diff: impl FnMut(usize, f64),
) -> (f64, usize) {
    let cols = pred.cols();
    let (p, t) = (pred.as_slice(), target.as_slice());
    let mut sum = 0.0;
    let mut rows = 0;
    for i in 0..pred.rows() {
        let mut any = false;
        for j in 0..cols {
            let idx = i * cols + j;
            if mask.is_none_or(|m| m.as_slice()[idx]) {
                let d = p[idx] - t[idx];
                sum += d * d;
                on_diff(idx, d);
                any = true;
            }
        }
        rows += usize::from(any);
    }
    (sum, rows)
}

fn finish(sum: f64, rows: usize, scale: LossScale) -> Result<f64> {
    if rows == 0 {
        return Err(Error::EmptyLoss);
    }
    Ok(match scale {
        LossScale::PerSample => 0.5 * sum / rows as f64,
        LossScale::Sum => 0.5 * sum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs_have_zero_loss() {
        let x = RealMatrix::from_fn(3, 2, |i, j| i as f64 - j as f64);
        assert_eq!(mse_loss(&x, &x, None).unwrap(), 0.0);
    }

    #[test]
    fn single_entry_is_half_squared_error() {
        let p = RealMatrix::from_rows(&[[1.0]]).unwrap();
        let t = RealMatrix::from_rows(&[[3.0]]).unwrap();
        assert_eq!(mse_loss(&p, &t, None).unwrap(), 2.0);
    }

    #[test]
    fn sum_scale_ignores_row_count() {
        let p = RealMatrix::filled(4, 1, 1.0);
        let t = RealMatrix::zeros(4, 1);
        assert_eq!(mse_loss_scaled(&p, &t, None, LossScale::Sum).unwrap(), 2.0);
        assert_eq!(mse_loss(&p, &t, None).unwrap(), 0.5);
    }

    #[test]
    fn fully_masked_is_an_error() {
        let p = RealMatrix::zeros(2, 2);
        let mask = BoolMatrix::filled(2, 2, false);
        assert!(matches!(mse_loss(&p, &p, Some(&mask)), Err(Error::EmptyLoss)));
    }

    #[test]
    fn masked_entries_have_zero_gradient() {
        let p = RealMatrix::from_rows(&[[1.0, 5.0], [2.0, 2.0]]).unwrap();
        let t = RealMatrix::zeros(2, 2);
        let mut mask = BoolMatrix::filled(2, 2, true);
        mask.set(0, 1, false);
        let (loss, g) = mse_loss_with_grad(&p, &t, Some(&mask), LossScale::PerSample).unwrap();
        assert_eq!(loss, 0.5 * (1.0 + 4.0 + 4.0) / 2.0);
        assert_eq!(g.get(0, 1), 0.0);
        assert_eq!(g.get(0, 0), 0.5);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = RealMatrix::zeros(2, 2);
        let b = RealMatrix::zeros(2, 3);
        assert!(matches!(mse_loss(&a, &b, None), Err(Error::Shape { .. })));
    }
}
