use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How the squared error is reduced over latent dimensions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

/// One flow-matching training point; `prediction` is the model's velocity
/// at `interpolate(x0, x1, t)`.
#[derive(Clone, Copy, Debug)]
pub struct FlowSample<'a, T> {
    pub x0: &'a [T],
    pub x1: &'a [T],
    pub t: T,
    pub prediction: &'a [T],
}

fn check_same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, found: b });
    }
    Ok(())
}

fn check_finite<T: Scalar>(what: &str, v: &[T]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(())
}

/// `(1 - t) x0 + t x1`.
pub fn interpolate<T: Scalar>(x0: &[T], x1: &[T], t: T) -> Result<Vec<T>> {
    check_same_len(x0.len(), x1.len())?;
    Ok(x0.iter().zip(x1).map(|(&a, &b)| (T::one() - t) * a + t * b).collect())
}

impl<T: Scalar> FlowSample<'_, T> {
    pub fn validate(&self) -> Result<()> {
        check_same_len(self.x0.len(), self.x1.len())?;
        check_same_len(self.x0.len(), self.prediction.len())?;
        if !(self.t >= T::zero() && self.t <= T::one()) {
            return Err(Error::param("t", format!("must lie in [0, 1], got {}", self.t)));
        }
        check_finite("x0", self.x0)?;
        check_finite("x1", self.x1)?;
        check_finite("prediction", self.prediction)
    }

    pub fn x_t(&self) -> Result<Vec<T>> {
        interpolate(self.x0, self.x1, self.t)
    }

    fn residual(&self) -> impl Iterator<Item = T> + '_ {
        self.prediction.iter().zip(self.x0.iter().zip(self.x1)).map(|(&p, (&a, &b))| p - (b - a))
    }
}

/// `‖prediction − (x1 − x0)‖²`, summed or averaged over dimensions.
pub fn flow_loss<T: Scalar>(sample: &FlowSample<'_, T>, reduction: Reduction) -> Result<T> {
    sample.validate()?;
    let sum: T = sample.residual().map(|r| r * r).sum();
    Ok(match reduction {
        Reduction::Sum => sum,
        Reduction::Mean => sum / T::from_usize(sample.x0.len().max(1)).unwrap(),
    })
}

/// Gradient of [`flow_loss`] with respect to `prediction`.
pub fn flow_loss_grad<T: Scalar>(sample: &FlowSample<'_, T>, reduction: Reduction) -> Result<Vec<T>> {
    sample.validate()?;
    let scale = match reduction {
        Reduction::Sum => T::lit(2.0),
        Reduction::Mean => T::lit(2.0) / T::from_usize(sample.x0.len().max(1)).unwrap(),
    };
    Ok(sample.residual().map(|r| scale * r).collect())
}
