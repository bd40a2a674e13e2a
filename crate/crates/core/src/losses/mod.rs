//! Reference implementations of the training objectives with analytic
//! gradients, plus the masked cross-attention used to inject face tokens.
//! Nothing here trains; these are conformance oracles for an external
//! trainer.

mod contrastive;
mod flow;
mod gradcheck;
mod gt_aligned;
mod id;
mod inject;
mod total;

pub use contrastive::{contrastive_loss, contrastive_loss_grad, Denominator};
pub use flow::{flow_loss, flow_loss_grad, interpolate, FlowSample, Reduction};
pub use gradcheck::{grad_check, max_relative_error, GradCheckInput, DEFAULT_EPSILON, RELATIVE_ERROR_FLOOR};
pub use gt_aligned::{gt_aligned_embed, gt_aligned_id_loss, gt_aligned_transform, AlignedEmbedder};
pub use id::{id_loss, id_loss_embeddings, id_loss_grad};
pub use inject::{attention_weights, inject, mask_from_boxes, InjectionConfig, TokenLayout, DEFAULT_LAMBDA_ID, MASK_SENTINEL};
pub use total::{total_loss, LossWeights};
