use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::contrastive::{contrastive_loss, contrastive_loss_grad, Denominator};
use super::flow::{flow_loss, flow_loss_grad, FlowSample, Reduction};
use super::id::{id_loss, id_loss_grad};

pub const DEFAULT_EPSILON: f64 = 1e-4;

/// Relative errors are taken against `max(|analytic|, |numeric|, FLOOR)` so
/// near-zero components are judged on absolute error.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

/// Inputs for a gradient check; the variable is `prediction` for the flow
/// loss and `g` otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "loss", rename_all = "snake_case")]
pub enum GradCheckInput {
    Flow { x0: Vec<f64>, x1: Vec<f64>, t: f64, prediction: Vec<f64>, reduction: Reduction },
    Id { g: Vec<f64>, t: Vec<f64> },
    Contrastive { g: Vec<f64>, r: Vec<f64>, negatives: Vec<Vec<f64>>, tau: f64, denominator: Denominator },
}

impl GradCheckInput {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Flow { .. } => "flow_loss",
            Self::Id { .. } => "id_loss",
            Self::Contrastive { .. } => "contrastive_loss",
        }
    }

    fn variable(&self) -> &[f64] {
        match self {
            Self::Flow { prediction, .. } => prediction,
            Self::Id { g, .. } | Self::Contrastive { g, .. } => g,
        }
    }

    fn loss_at(&self, v: &[f64]) -> Result<f64> {
        match self {
            Self::Flow { x0, x1, t, reduction, .. } => {
                flow_loss(&FlowSample { x0, x1, t: *t, prediction: v }, *reduction)
            }
            Self::Id { t, .. } => id_loss(v, t),
            Self::Contrastive { r, negatives, tau, denominator, .. } => {
                contrastive_loss(v, r, negatives, *tau, *denominator)
            }
        }
    }

    pub fn analytic_gradient(&self) -> Result<Vec<f64>> {
        match self {
            Self::Flow { x0, x1, t, prediction, reduction } => {
                flow_loss_grad(&FlowSample { x0, x1, t: *t, prediction }, *reduction)
            }
            Self::Id { g, t } => id_loss_grad(g, t),
            Self::Contrastive { g, r, negatives, tau, denominator } => {
                contrastive_loss_grad(g, r, negatives, *tau, *denominator)
            }
        }
    }

    /// Central differences, one component at a time.
    pub fn numeric_gradient(&self, epsilon: f64) -> Result<Vec<f64>> {
        let mut v = self.variable().to_vec();
        (0..v.len())
            .map(|i| {
                let x = v[i];
                v[i] = x + epsilon;
                let up = self.loss_at(&v)?;
                v[i] = x - epsilon;
                let down = self.loss_at(&v)?;
                v[i] = x;
                Ok((up - down) / (2.0 * epsilon))
            })
            .collect()
    }
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_ERROR_FLOOR))
        .fold(0.0, f64::max)
}

/// Maximum relative error between the analytic and the central-difference
/// gradient.
pub fn grad_check(input: &GradCheckInput, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::param("epsilon", format!("must be positive, got {epsilon}")));
    }
    let a = input.analytic_gradient()?;
    let n = input.numeric_gradient(epsilon)?;
    Ok(max_relative_error(&a, &n))
}
