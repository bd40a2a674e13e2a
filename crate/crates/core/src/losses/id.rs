use crate::embedding::{cosine, dot, norm, Embedding};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `1 − cos(g, t)`, in `[0, 2]`.
pub fn id_loss<T: Scalar>(g: &[T], t: &[T]) -> Result<T> {
    Ok(T::one() - cosine(g, t)?)
}

/// [`id_loss`] on tagged embeddings; the backends must agree.
pub fn id_loss_embeddings<T: Scalar>(g: &Embedding<T>, t: &Embedding<T>) -> Result<T> {
    if g.backend() != t.backend() {
        return Err(Error::BackendMismatch { left: g.backend().to_string(), right: t.backend().to_string() });
    }
    id_loss(g.values(), t.values())
}

/// Gradient of [`id_loss`] with respect to the unnormalized `g`:
/// `−(t̂ − cos·ĝ) / ‖g‖`.
pub fn id_loss_grad<T: Scalar>(g: &[T], t: &[T]) -> Result<Vec<T>> {
    cosine(g, t)?;
    Ok(cosine_grad(g, t).1.into_iter().map(|v| -v).collect())
}

/// `ĝ · x̂` derivative with respect to `g`, shared with the contrastive loss.
pub(crate) fn cosine_grad<T: Scalar>(g: &[T], x: &[T]) -> (T, Vec<T>) {
    let (ng, nx) = (norm(g), norm(x));
    let cos = dot(g, x) / (ng * nx);
    let grad = g.iter().zip(x).map(|(&gi, &xi)| (xi / nx - cos * gi / ng) / ng).collect();
    (cos, grad)
}
