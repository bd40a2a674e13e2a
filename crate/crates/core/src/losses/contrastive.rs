use serde::{Deserialize, Serialize};

use crate::embedding::cosine;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::id::cosine_grad;

/// Which terms the InfoNCE denominator sums.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// Positive plus negatives; the loss is then non-negative.
    #[default]
    WithPositive,
    /// Negatives only. Can go negative.
    NegativesOnly,
}

fn log_sum_exp<T: Scalar>(xs: impl Iterator<Item = T> + Clone) -> T {
    let m = xs.clone().fold(T::neg_infinity(), T::max);
    m + xs.map(|x| (x - m).exp()).sum::<T>().ln()
}

fn check<T: Scalar, R: AsRef<[T]>>(g: &[T], r: &[T], negatives: &[R], tau: T) -> Result<()> {
    if negatives.is_empty() {
        return Err(Error::EmptyInput("contrastive loss needs at least one negative"));
    }
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(Error::param("tau", format!("must be positive and finite, got {tau}")));
    }
    if g.len() != r.len() {
        return Err(Error::DimensionMismatch { expected: g.len(), found: r.len() });
    }
    if let Some(n) = negatives.iter().find(|n| n.as_ref().len() != g.len()) {
        return Err(Error::DimensionMismatch { expected: g.len(), found: n.as_ref().len() });
    }
    Ok(())
}

/// InfoNCE: `−log[exp(s⁺) / (exp(s⁺) + Σ exp(sⱼ))]` with `s = cos / τ`,
/// evaluated via log-sum-exp.
pub fn contrastive_loss<T: Scalar, R: AsRef<[T]>>(
    g: &[T],
    r: &[T],
    negatives: &[R],
    tau: T,
    denominator: Denominator,
) -> Result<T> {
    check(g, r, negatives, tau)?;
    let pos = cosine(g, r)? / tau;
    let negs = negatives.iter().map(|n| Ok(cosine(g, n.as_ref())? / tau)).collect::<Result<Vec<T>>>()?;
    let lse = match denominator {
        Denominator::WithPositive => log_sum_exp(std::iter::once(pos).chain(negs.iter().copied())),
        Denominator::NegativesOnly => log_sum_exp(negs.iter().copied()),
    };
    Ok(lse - pos)
}

/// Gradient of [`contrastive_loss`] with respect to the unnormalized `g`.
pub fn contrastive_loss_grad<T: Scalar, R: AsRef<[T]>>(
    g: &[T],
    r: &[T],
    negatives: &[R],
    tau: T,
    denominator: Denominator,
) -> Result<Vec<T>> {
    check(g, r, negatives, tau)?;
    cosine(g, r)?;
    let (cp, dp) = cosine_grad(g, r);
    let negs: Vec<(T, Vec<T>)> = negatives.iter().map(|n| cosine_grad(g, n.as_ref())).collect();
    let logits: Vec<T> = match denominator {
        Denominator::WithPositive => std::iter::once(cp).chain(negs.iter().map(|n| n.0)).map(|c| c / tau).collect(),
        Denominator::NegativesOnly => negs.iter().map(|n| n.0 / tau).collect(),
    };
    let lse = log_sum_exp(logits.iter().copied());
    let w: Vec<T> = logits.iter().map(|&l| (l - lse).exp()).collect();
    let (w_pos, w_neg) = match denominator {
        Denominator::WithPositive => (w[0], &w[1..]),
        Denominator::NegativesOnly => (T::zero(), &w[..]),
    };
    let mut grad: Vec<T> = dp.iter().map(|&d| (w_pos - T::one()) * d / tau).collect();
    for (wj, (_, dj)) in w_neg.iter().zip(&negs) {
        for (gi, &d) in grad.iter_mut().zip(dj) {
            *gi += *wj * d / tau;
        }
    }
    Ok(grad)
}
