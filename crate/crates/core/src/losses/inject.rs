use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::store::BBox;

/// Mask entries at or below this (or `-inf`) block attention outright.
pub const MASK_SENTINEL: f64 = -1e30;

pub const DEFAULT_LAMBDA_ID: f64 = 1.0;

/// Masked cross-attention from hidden tokens `H` (n_h × d_model) to face
/// tokens `E` (n_e × d_model).
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionConfig<T> {
    pub h: Matrix<T>,
    pub e: Matrix<T>,
    /// d_model × d.
    pub w_q: Matrix<T>,
    /// d_model × d.
    pub w_k: Matrix<T>,
    /// d_model × d_model, so the update lands in the hidden space.
    pub w_v: Matrix<T>,
    /// n_h × n_e additive mask; `None` attends everywhere.
    pub mask: Option<Matrix<T>>,
    pub lambda_id: T,
}

impl<T: Scalar> InjectionConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let (n_h, d_model) = self.h.shape();
        let n_e = self.e.rows();
        let want = |what: &str, got: (usize, usize), expect: (usize, usize)| -> Result<()> {
            if got != expect {
                return Err(Error::ShapeMismatch(format!("{what} is {got:?}, expected {expect:?}")));
            }
            Ok(())
        };
        want("E", self.e.shape(), (n_e, d_model))?;
        let d = self.w_q.cols();
        if d == 0 {
            return Err(Error::ShapeMismatch("attention dimension d is 0".into()));
        }
        want("W_Q", self.w_q.shape(), (d_model, d))?;
        want("W_K", self.w_k.shape(), (d_model, d))?;
        want("W_V", self.w_v.shape(), (d_model, d_model))?;
        if let Some(m) = &self.mask {
            want("mask", m.shape(), (n_h, n_e))?;
            let bad = m.as_slice().iter().any(|&v| v.is_nan() || v == T::infinity());
            if bad {
                return Err(Error::NonFinite("mask".into()));
            }
        }
        for (name, m) in [("H", &self.h), ("E", &self.e), ("W_Q", &self.w_q), ("W_K", &self.w_k), ("W_V", &self.w_v)] {
            if !m.is_finite() {
                return Err(Error::NonFinite(name.into()));
            }
        }
        if !self.lambda_id.is_finite() {
            return Err(Error::NonFinite("lambda_id".into()));
        }
        Ok(())
    }
}

#[inline]
fn is_masked<T: Scalar>(v: T) -> bool {
    v <= T::lit(MASK_SENTINEL)
}

/// Row-wise softmax of `(H W_Q)(E W_K)ᵀ / √d + M`. Masked entries are
/// exactly 0 and a fully masked row is all zeros.
pub fn attention_weights<T: Scalar>(cfg: &InjectionConfig<T>) -> Result<Matrix<T>> {
    cfg.validate()?;
    let q = cfg.h.matmul(&cfg.w_q)?;
    let k = cfg.e.matmul(&cfg.w_k)?;
    let mut logits = q.matmul(&k.transpose())?;
    let scale = T::from_usize(cfg.w_q.cols()).unwrap().sqrt();
    let (n_h, n_e) = logits.shape();
    for i in 0..n_h {
        let row = logits.row_mut(i);
        let mut max = T::neg_infinity();
        for (j, v) in row.iter_mut().enumerate() {
            let m = cfg.mask.as_ref().map_or(T::zero(), |m| m.get(i, j));
            *v = if is_masked(m) { T::neg_infinity() } else { *v / scale + m };
            max = max.max(*v);
        }
        if max == T::neg_infinity() {
            row.fill(T::zero());
            continue;
        }
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = if *v == T::neg_infinity() { T::zero() } else { (*v - max).exp() };
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
        debug_assert_eq!(row.len(), n_e);
    }
    Ok(logits)
}

/// `H' = H + λ · softmax(...) (E W_V)`. With `λ = 0` the result is `H`
/// bit for bit.
pub fn inject<T: Scalar>(cfg: &InjectionConfig<T>) -> Result<Matrix<T>> {
    cfg.validate()?;
    if cfg.lambda_id == T::zero() {
        return Ok(cfg.h.clone());
    }
    let a = attention_weights(cfg)?;
    let v = cfg.e.matmul(&cfg.w_v)?;
    let update = a.matmul(&v)?;
    let (rows, cols) = cfg.h.shape();
    Ok(Matrix::from_fn(rows, cols, |i, j| cfg.h.get(i, j) + cfg.lambda_id * update.get(i, j)))
}

/// Hidden tokens on a `grid_w × grid_h` lattice over the image attend only to
/// the `tokens_per_face` tokens of the face whose box contains their cell
/// centre. Tokens outside every box are fully masked.
pub fn mask_from_boxes<T: Scalar>(
    grid: (usize, usize),
    image_size: (f64, f64),
    boxes: &[BBox],
    tokens_per_face: usize,
) -> Matrix<T> {
    let (gw, gh) = grid;
    let n_e = boxes.len() * tokens_per_face;
    Matrix::from_fn(gw * gh, n_e, |i, j| {
        let (cx, cy) = ((i % gw) as f64 + 0.5, (i / gw) as f64 + 0.5);
        let (x, y) = (cx * image_size.0 / gw as f64, cy * image_size.1 / gh as f64);
        let b = &boxes[j / tokens_per_face];
        let inside = x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h;
        if inside {
            T::zero()
        } else {
            T::neg_infinity()
        }
    })
}

/// Shape descriptor mirroring the face-token layout used in training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub tokens_per_face: usize,
    pub d_model: usize,
}

impl Default for TokenLayout {
    fn default() -> Self {
        Self { tokens_per_face: 8, d_model: 3072 }
    }
}
