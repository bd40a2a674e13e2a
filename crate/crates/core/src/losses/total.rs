use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_id: f64,
    pub lambda_cl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_id: 0.1, lambda_cl: 0.1 }
    }
}

/// `flow + λ_id·id + λ_cl·cl`.
pub fn total_loss(flow: f64, id: f64, cl: f64, weights: &LossWeights) -> Result<f64> {
    for (name, v) in [("flow", flow), ("id", id), ("cl", cl)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} loss component")));
        }
    }
    Ok(flow + weights.lambda_id * id + weights.lambda_cl * cl)
}
