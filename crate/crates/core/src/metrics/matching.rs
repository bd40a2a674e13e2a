use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Optimal one-to-one pairing of generated faces with target faces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedFaces {
    /// `(generated index, target index)`, ascending by generated index.
    pub pairs: Vec<(usize, usize)>,
    /// Similarity of each pair, aligned with `pairs`.
    pub similarities: Vec<f64>,
    pub unmatched_generated: Vec<usize>,
    pub unmatched_target: Vec<usize>,
}

impl MatchedFaces {
    pub fn total(&self) -> f64 {
        self.similarities.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Minimum-cost assignment of every row to a distinct column (rows ≤ cols),
/// shortest augmenting paths with potentials, O(n²m). Returns the column of
/// each row.
fn hungarian_min(cost: &Matrix<f64>) -> Vec<usize> {
    let (n, m) = cost.shape();
    debug_assert!(n <= m);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // p[j]: row (1-based) owning column j; column 0 is the virtual root
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            col_of[p[j] - 1] = j - 1;
        }
    }
    col_of
}

/// Assignment maximizing total similarity. Rectangular inputs leave the
/// surplus side unmatched. The result depends only on the matrix entries.
pub fn match_similarity<T: Scalar>(sim: &Matrix<T>) -> Result<MatchedFaces> {
    let (g, t) = sim.shape();
    if g == 0 || t == 0 {
        return Err(Error::EmptyInput("face matching needs at least one face per side"));
    }
    if !sim.is_finite() {
        return Err(Error::NonFinite("similarity matrix".into()));
    }
    let mut pairs: Vec<(usize, usize)> = if g <= t {
        let cost = Matrix::from_fn(g, t, |i, j| -sim.get(i, j).as_f64());
        hungarian_min(&cost).into_iter().enumerate().collect()
    } else {
        let cost = Matrix::from_fn(t, g, |j, i| -sim.get(i, j).as_f64());
        hungarian_min(&cost).into_iter().enumerate().map(|(j, i)| (i, j)).collect()
    };
    pairs.sort_unstable();
    let similarities = pairs.iter().map(|&(i, j)| sim.get(i, j).as_f64()).collect();
    let unmatched_generated = (0..g).filter(|i| !pairs.iter().any(|p| p.0 == *i)).collect();
    let unmatched_target = (0..t).filter(|j| !pairs.iter().any(|p| p.1 == *j)).collect();
    Ok(MatchedFaces { pairs, similarities, unmatched_generated, unmatched_target })
}

/// Matches generated to target faces by cosine of their embeddings.
pub fn match_faces<T: Scalar>(gen: &EmbeddingMatrix<T>, tgt: &EmbeddingMatrix<T>) -> Result<MatchedFaces> {
    if gen.backend() != tgt.backend() {
        return Err(Error::BackendMismatch { left: gen.backend().to_string(), right: tgt.backend().to_string() });
    }
    if gen.is_empty() || tgt.is_empty() {
        return Err(Error::EmptyInput("face matching needs at least one face per side"));
    }
    let mut sim = Matrix::zeros(gen.rows(), tgt.rows());
    for i in 0..gen.rows() {
        for j in 0..tgt.rows() {
            sim.set(i, j, cosine(gen.row(i), tgt.row(j))?);
        }
    }
    match_similarity(&sim)
}
