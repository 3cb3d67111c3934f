use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BoolMatrix, RealMatrix};

/// Whether dropout draws one Bernoulli variable per element or per column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropoutMode {
    UnitWise,
    /// One draw per column: every row of a dropped column is zeroed.
    ChannelWise,
}

/// Inverted dropout: zero with probability `probability`, otherwise scale by `1 / (1 - p)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub probability: f64,
    pub mode: DropoutMode,
    pub seed: u64,
}

impl DropoutSpec {
    pub fn new(probability: f64, mode: DropoutMode, seed: u64) -> Result<Self> {
        let spec = Self {
            probability,
            mode,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.probability) {
            return Err(Error::Config(format!(
                "dropout probability must lie in [0, 1), got {}",
                self.probability
            )));
        }
        Ok(())
    }
}

/// Applies dropout with a generator seeded from `spec.seed`.
///
/// With `training == false` the input is returned unchanged and every unit is
/// reported as kept.
pub fn dropout_apply(
    input: &RealMatrix,
    spec: &DropoutSpec,
    training: bool,
) -> Result<(RealMatrix, BoolMatrix)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    dropout_apply_with(input, spec.probability, spec.mode, training, &mut rng)
}

/// Same as [`dropout_apply`] but drawing from a caller-owned generator.
pub fn dropout_apply_with<R: Rng + ?Sized>(
    input: &RealMatrix,
    probability: f64,
    mode: DropoutMode,
    training: bool,
    rng: &mut R,
) -> Result<(RealMatrix, BoolMatrix)> {
    if !(0.0..1.0).contains(&probability) {
        return Err(Error::Config(format!(
            "dropout probability must lie in [0, 1), got {probability}"
        )));
    }
    let (rows, cols) = input.shape();
    if !training || probability == 0.0 {
        return Ok((input.clone(), BoolMatrix::filled(rows, cols, true)));
    }

    let keep_scale = 1.0 - probability;
    let kept = match mode {
        DropoutMode::UnitWise => {
            let flags = (0..rows * cols)
                .map(|_| !rng.random_bool(probability))
                .collect();
            BoolMatrix::from_vec(rows, cols, flags)?
        }
        DropoutMode::ChannelWise => {
            let columns: Vec<bool> = (0..cols).map(|_| !rng.random_bool(probability)).collect();
            let mut flags = BoolMatrix::filled(rows, cols, true);
            for i in 0..rows {
                for (j, &keep) in columns.iter().enumerate() {
                    flags.set(i, j, keep);
                }
            }
            flags
        }
    };

    let mut out = input.clone();
    for (v, &keep) in out.as_mut_slice().iter_mut().zip(kept.as_slice()) {
        *v = if keep { *v / keep_scale } else { 0.0 };
    }
    Ok((out, kept))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_probability_is_identity() {
        let x = RealMatrix::from_fn(3, 4, |i, j| (i + j) as f64);
        let spec = DropoutSpec::new(0.0, DropoutMode::UnitWise, 7).unwrap();
        let (y, kept) = dropout_apply(&x, &spec, true).unwrap();
        assert_eq!(y, x);
        assert_eq!(kept.count_true(), 12);
    }

    #[test]
    fn half_probability_doubles_kept_units() {
        let x = RealMatrix::filled(8, 8, 2.0);
        let spec = DropoutSpec::new(0.5, DropoutMode::UnitWise, 3).unwrap();
        let (y, kept) = dropout_apply(&x, &spec, true).unwrap();
        for (v, &k) in y.as_slice().iter().zip(kept.as_slice()) {
            assert_eq!(*v, if k { 4.0 } else { 0.0 });
        }
    }

    #[test]
    fn inference_is_identity() {
        let x = RealMatrix::filled(2, 2, 1.5);
        let spec = DropoutSpec::new(0.9, DropoutMode::UnitWise, 1).unwrap();
        let (y, _) = dropout_apply(&x, &spec, false).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn probability_of_one_is_rejected() {
        assert!(DropoutSpec::new(1.0, DropoutMode::UnitWise, 0).is_err());
        let spec = DropoutSpec {
            probability: 1.0,
            mode: DropoutMode::UnitWise,
            seed: 0,
        };
        let x = RealMatrix::zeros(1, 1);
        assert!(matches!(dropout_apply(&x, &spec, true), Err(Error::Config(_))));
    }

    #[test]
    fn channel_wise_drops_whole_columns() {
        let x = RealMatrix::filled(50, 10, 1.0);
        let spec = DropoutSpec::new(0.5, DropoutMode::ChannelWise, 11).unwrap();
        let (_, kept) = dropout_apply(&x, &spec, true).unwrap();
        for j in 0..10 {
            let first = kept.get(0, j);
            assert!((0..50).all(|i| kept.get(i, j) == first));
        }
    }

    #[test]
    fn same_seed_same_mask() {
        let x = RealMatrix::filled(20, 20, 1.0);
        let spec = DropoutSpec::new(0.3, DropoutMode::UnitWise, 99).unwrap();
        let a = dropout_apply(&x, &spec, true).unwrap();
        let b = dropout_apply(&x, &spec, true).unwrap();
        assert_eq!(a, b);
    }
}
