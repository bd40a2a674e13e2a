//! Embeddings, cosine similarity and similarity matrices.
//!
//! Stored embeddings are unit-normalized at ingestion, so on stored data
//! cosine reduces to a dot product. The free functions here still divide by
//! the norms so they are safe to call on raw vectors.

use std::borrow::Borrow;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Identifier of the model that produced an embedding (`"arcface"`,
/// `"clip-image"`, ...). Embeddings from different backends live in
/// different spaces and never compare.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BackendId(String);

impl BackendId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for BackendId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for BackendId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for BackendId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl Borrow<str> for BackendId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

/// Unrolled dot product. The accumulation order is fixed, so results are
/// reproducible across calls and threads.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Cosine similarity of two raw vectors, clamped to `[-1, 1]`.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("cosine of zero-dimensional vectors"));
    }
    let (aa, bb) = (dot(a, a), dot(b, b));
    if aa == T::zero() || bb == T::zero() {
        return Err(Error::ZeroNorm);
    }
    // sqrt(aa * bb) rounds to exactly aa when a == b, so self-similarity is 1
    let p = aa * bb;
    let denom = if p.is_normal() { p.sqrt() } else { aa.sqrt() * bb.sqrt() };
    Ok(clamp_unit(dot(a, b) / denom))
}

#[inline]
pub(crate) fn clamp_unit<T: Scalar>(v: T) -> T {
    v.max(-T::one()).min(T::one())
}

/// A single embedding tagged with its backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding<T> {
    backend: BackendId,
    values: Vec<T>,
}

impl<T: Scalar> Embedding<T> {
    /// Builds an embedding, rejecting empty or non-finite vectors. The values
    /// are kept as given; call [`Embedding::normalize`] to unit-normalize.
    pub fn new(backend: impl Into<BackendId>, values: Vec<T>) -> Result<Self> {
        let backend = backend.into();
        if values.is_empty() {
            return Err(Error::EmptyInput("embedding with dimension 0"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding for backend `{backend}`")));
        }
        Ok(Self { backend, values })
    }

    /// Builds and normalizes in one step.
    pub fn normalized(backend: impl Into<BackendId>, values: Vec<T>) -> Result<Self> {
        let mut e = Self::new(backend, values)?;
        e.normalize()?;
        Ok(e)
    }

    pub fn backend(&self) -> &BackendId {
        &self.backend
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> T {
        norm(&self.values)
    }

    /// Scales to unit L2 norm and returns the norm before scaling.
    pub fn normalize(&mut self) -> Result<T> {
        let n = self.norm();
        if n == T::zero() {
            return Err(Error::ZeroNorm);
        }
        for v in &mut self.values {
            *v /= n;
        }
        Ok(n)
    }

    pub fn scaled(&self, alpha: T) -> Self {
        Self {
            backend: self.backend.clone(),
            values: self.values.iter().map(|&v| v * alpha).collect(),
        }
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.backend != other.backend {
            return Err(Error::BackendMismatch {
                left: self.backend.to_string(),
                right: other.backend.to_string(),
            });
        }
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        Ok(())
    }

    pub fn cosine(&self, other: &Self) -> Result<T> {
        self.check_compatible(other)?;
        cosine(&self.values, &other.values)
    }

    pub fn cast<U: Scalar>(&self) -> Embedding<U> {
        Embedding {
            backend: self.backend.clone(),
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Row-major block of embeddings from one backend: the in-memory mirror of a
/// blob block.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix<T> {
    backend: BackendId,
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> EmbeddingMatrix<T> {
    pub fn new(backend: impl Into<BackendId>, dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmptyInput("embedding matrix with dimension 0"));
        }
        if data.len() % dim != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not divide into rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { backend: backend.into(), dim, data })
    }

    pub fn empty(backend: impl Into<BackendId>, dim: usize) -> Self {
        Self { backend: backend.into(), dim, data: Vec::new() }
    }

    /// Stacks embeddings that all share one backend and dimension.
    pub fn from_embeddings<'a>(items: impl IntoIterator<Item = &'a Embedding<T>>) -> Result<Self> {
        let mut iter = items.into_iter();
        let first = iter.next().ok_or(Error::EmptyInput("no embeddings to stack"))?;
        let mut m = Self::empty(first.backend().clone(), first.dim());
        m.push_row(first.values())?;
        for e in iter {
            if e.backend() != first.backend() {
                return Err(Error::BackendMismatch {
                    left: first.backend().to_string(),
                    right: e.backend().to_string(),
                });
            }
            m.push_row(e.values())?;
        }
        Ok(m)
    }

    pub fn backend(&self) -> &BackendId {
        &self.backend
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, T> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Contiguous rows `start..end` as a flat slice.
    pub fn rows_slice(&self, start: usize, end: usize) -> &[T] {
        &self.data[start * self.dim..end * self.dim]
    }

    pub fn push_row(&mut self, row: &[T]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: row.len() });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn embedding(&self, i: usize) -> Embedding<T> {
        Embedding { backend: self.backend.clone(), values: self.row(i).to_vec() }
    }

    /// Gathers the given rows into a new matrix.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self { backend: self.backend.clone(), dim: self.dim, data }
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingMatrix<U> {
        EmbeddingMatrix {
            backend: self.backend.clone(),
            dim: self.dim,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// `rows × cols` matrix of cosine similarities between generated faces (rows)
/// and target faces (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix<T>(Matrix<T>);

impl<T: Scalar> SimilarityMatrix<T> {
    /// Wraps precomputed similarities, checking the `[-1, 1]` range.
    pub fn from_matrix(m: Matrix<T>) -> Result<Self> {
        if m.as_slice().iter().any(|v| !v.is_finite() || v.abs() > T::one()) {
            return Err(Error::InvalidParameter {
                name: "similarity",
                reason: "entries must be finite and within [-1, 1]".into(),
            });
        }
        Ok(Self(m))
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn cols(&self) -> usize {
        self.0.cols()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.0.get(i, j)
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn as_matrix(&self) -> &Matrix<T> {
        &self.0
    }
}

/// Entry `(i, j)` is `cosine(gen[i], tgt[j])`.
pub fn similarity_matrix<T: Scalar>(
    gen: &[Embedding<T>],
    tgt: &[Embedding<T>],
) -> Result<SimilarityMatrix<T>> {
    if gen.is_empty() || tgt.is_empty() {
        return Err(Error::EmptyInput("similarity matrix needs at least one embedding per side"));
    }
    let mut m = Matrix::zeros(gen.len(), tgt.len());
    for (i, g) in gen.iter().enumerate() {
        for (j, t) in tgt.iter().enumerate() {
            m.set(i, j, g.cosine(t)?);
        }
    }
    Ok(SimilarityMatrix(m))
}
