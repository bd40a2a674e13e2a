//! Identity loss on a generated image cropped with the ground-truth
//! landmarks. The crop transform is a function of the GT landmarks and the
//! template only; landmarks are never detected on the generated image.

use crate::align::{CropTemplate, Landmarks5, SimilarityTransform};
use crate::embedding::Embedding;
use crate::error::{Error, Result};

use super::id::id_loss_embeddings;

/// Applies a precomputed crop transform to an image and embeds the crop.
/// Implemented by an external extraction service.
pub trait AlignedEmbedder {
    type Image: ?Sized;

    /// `transform` maps image pixels onto the template frame.
    fn embed_aligned(
        &self,
        image: &Self::Image,
        transform: &SimilarityTransform<f64>,
        template: &CropTemplate,
    ) -> Result<Embedding<f32>>;
}

/// Image → template transform from ground-truth landmarks.
pub fn gt_aligned_transform(gt_landmarks: &Landmarks5<f64>, template: &CropTemplate) -> Result<SimilarityTransform<f64>> {
    Ok(template.alignment_for(gt_landmarks)?.transform)
}

pub fn gt_aligned_embed<E: AlignedEmbedder>(
    generated: &E::Image,
    gt_landmarks: &Landmarks5<f64>,
    template: &CropTemplate,
    embedder: &E,
) -> Result<Embedding<f32>> {
    let transform = gt_aligned_transform(gt_landmarks, template)?;
    embedder.embed_aligned(generated, &transform, template).map_err(|e| match e {
        Error::Provider(_) => e,
        other => Error::Provider(other.to_string()),
    })
}

/// `1 − cos` between the GT-aligned embedding of the generated image and the
/// ground-truth embedding.
pub fn gt_aligned_id_loss<E: AlignedEmbedder>(
    generated: &E::Image,
    gt_landmarks: &Landmarks5<f64>,
    gt_embedding: &Embedding<f32>,
    template: &CropTemplate,
    embedder: &E,
) -> Result<f64> {
    let g = gt_aligned_embed(generated, gt_landmarks, template, embedder)?;
    id_loss_embeddings(&g.cast::<f64>(), &gt_embedding.cast::<f64>())
}
