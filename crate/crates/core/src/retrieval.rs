//! Identity assignment of faces against bank centroids.
//!
//! A face's score for an identity is the maximum cosine over that identity's
//! centroids. The face takes the argmax identity (exact ties go to the
//! smallest identity id) and is assigned when the score is strictly above the
//! threshold.
//!
//! [`assign`] is the per-face scalar loop. [`assign_blocked`] computes the same
//! scores with dense block products over worker shards, then rescores the
//! near-best candidates with the scalar kernel so decisions and reported
//! similarities are bit-identical to [`assign`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::ReferenceBank;
use crate::embedding::{dot, norm, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::store::Corpus;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Candidates whose blocked score lies within this of the blocked best are
/// rescored exactly. Far above f32 dot-product rounding at d = 512.
const RESCORE_MARGIN: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    pub face_id: String,
    /// Argmax identity, present only when assigned.
    pub best_identity: Option<String>,
    /// Argmax identity regardless of the threshold.
    pub nearest_identity: String,
    pub best_similarity: f64,
    /// Best score among the other identities; absent for a one-identity bank.
    pub second_best_similarity: Option<f64>,
    pub assigned: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalParams {
    pub threshold: f64,
    pub block_size: usize,
    /// 0 means the rayon default.
    pub workers: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, block_size: 1024, workers: 0 }
    }
}

fn check_inputs<T: Scalar, S: AsRef<str>>(
    faces: &EmbeddingMatrix<T>,
    face_ids: &[S],
    bank: &ReferenceBank<T>,
    threshold: f64,
) -> Result<()> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    if faces.backend() != bank.backend() {
        return Err(Error::BackendMismatch { left: faces.backend().to_string(), right: bank.backend().to_string() });
    }
    if faces.dim() != bank.dim() {
        return Err(Error::DimensionMismatch { expected: bank.dim(), found: faces.dim() });
    }
    if face_ids.len() != faces.rows() {
        return Err(Error::ShapeMismatch(format!("{} face ids for {} embedding rows", face_ids.len(), faces.rows())));
    }
    if !threshold.is_finite() {
        return Err(Error::param("threshold", "must be finite"));
    }
    Ok(())
}

fn query_norm<T: Scalar>(q: &[T], face_id: &str, bank: &ReferenceBank<T>) -> Result<T> {
    let n = norm(q);
    if !n.is_finite() {
        return Err(Error::NonFiniteEmbedding { face_id: face_id.to_owned(), backend: bank.backend().to_string() });
    }
    if n == T::zero() {
        return Err(Error::ZeroNormEmbedding { face_id: face_id.to_owned(), backend: bank.backend().to_string() });
    }
    Ok(n)
}

#[inline]
fn identity_score<T: Scalar>(q: &[T], qn: T, bank: &ReferenceBank<T>, identity: usize) -> T {
    let mut best = T::neg_infinity();
    for c in bank.identities()[identity].centroids.clone() {
        let s = dot(q, bank.centroids().row(c)) / qn;
        if s > best {
            best = s;
        }
    }
    best
}

/// Picks best and runner-up from `(identity, exact score)` in ascending
/// identity order.
fn decide<T: Scalar>(
    face_id: &str,
    scored: impl Iterator<Item = (usize, T)>,
    bank: &ReferenceBank<T>,
    threshold: f64,
) -> AssignmentResult {
    let mut best: Option<(usize, T)> = None;
    let mut second: Option<T> = None;
    for (i, s) in scored {
        match best {
            Some((_, b)) if s <= b => {
                if second.is_none_or(|x| s > x) {
                    second = Some(s);
                }
            }
            _ => {
                if let Some((_, b)) = best {
                    second = Some(b);
                }
                best = Some((i, s));
            }
        }
    }
    let (idx, sim) = best.expect("bank is non-empty");
    let sim = sim.as_f64();
    let assigned = sim > threshold;
    let nearest = bank.identities()[idx].identity_id.clone();
    AssignmentResult {
        face_id: face_id.to_owned(),
        best_identity: assigned.then(|| nearest.clone()),
        nearest_identity: nearest,
        best_similarity: sim,
        second_best_similarity: second.map(|s| s.as_f64()),
        assigned,
    }
}

/// Per-face scalar loop over every identity and centroid.
pub fn assign<T: Scalar, S: AsRef<str>>(
    faces: &EmbeddingMatrix<T>,
    face_ids: &[S],
    bank: &ReferenceBank<T>,
    threshold: f64,
) -> Result<Vec<AssignmentResult>> {
    check_inputs(faces, face_ids, bank, threshold)?;
    face_ids
        .iter()
        .enumerate()
        .map(|(f, id)| {
            let q = faces.row(f);
            let qn = query_norm(q, id.as_ref(), bank)?;
            let scored = (0..bank.identity_count()).map(|i| (i, identity_score(q, qn, bank, i)));
            Ok(decide(id.as_ref(), scored, bank, threshold))
        })
        .collect()
}

fn assign_block<T: Scalar, S: AsRef<str>>(
    queries: &[T],
    ids: &[S],
    bank: &ReferenceBank<T>,
    threshold: f64,
) -> Result<Vec<AssignmentResult>> {
    let dim = bank.dim();
    let m = ids.len();
    let nc = bank.centroids().rows();
    let mut products = vec![T::zero(); m * nc];
    T::gemm_abt(m, nc, dim, queries, bank.centroids().as_slice(), &mut products);

    let owner = bank.centroid_owner();
    let ni = bank.identity_count();
    let margin = T::lit(RESCORE_MARGIN);
    let mut per_identity = vec![T::neg_infinity(); ni];
    let mut out = Vec::with_capacity(m);
    for (f, id) in ids.iter().enumerate() {
        let q = &queries[f * dim..(f + 1) * dim];
        let qn = query_norm(q, id.as_ref(), bank)?;
        per_identity.fill(T::neg_infinity());
        for (c, &p) in products[f * nc..(f + 1) * nc].iter().enumerate() {
            let s = p / qn;
            let slot = &mut per_identity[owner[c]];
            if s > *slot {
                *slot = s;
            }
        }
        // cutoff sits below the blocked runner-up so both true top-2 survive
        let (mut b1, mut b2) = (T::neg_infinity(), T::neg_infinity());
        for &s in &per_identity {
            if s > b1 {
                b2 = b1;
                b1 = s;
            } else if s > b2 {
                b2 = s;
            }
        }
        let cutoff = if ni > 1 { b2 } else { b1 } - margin;
        let scored = per_identity
            .iter()
            .enumerate()
            .filter(|(_, &s)| s >= cutoff)
            .map(|(i, _)| (i, identity_score(q, qn, bank, i)));
        out.push(decide(id.as_ref(), scored, bank, threshold));
    }
    Ok(out)
}

/// Blocked, sharded equivalent of [`assign`]. Faces are cut into blocks of
/// `block_size` rows and processed on a pool of `worker_count` threads;
/// results come back in input order.
pub fn assign_blocked<T: Scalar, S: AsRef<str> + Sync>(
    faces: &EmbeddingMatrix<T>,
    face_ids: &[S],
    bank: &ReferenceBank<T>,
    threshold: f64,
    block_size: usize,
    worker_count: usize,
) -> Result<Vec<AssignmentResult>> {
    check_inputs(faces, face_ids, bank, threshold)?;
    if block_size == 0 {
        return Err(Error::param("block_size", "must be at least 1"));
    }
    let run = || -> Result<Vec<AssignmentResult>> {
        let blocks: Vec<Vec<AssignmentResult>> = face_ids
            .par_chunks(block_size)
            .enumerate()
            .map(|(b, ids)| {
                let start = b * block_size;
                assign_block(faces.rows_slice(start, start + ids.len()), ids, bank, threshold)
            })
            .collect::<Result<_>>()?;
        Ok(blocks.into_iter().flatten().collect())
    };
    if worker_count == 0 {
        return run();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count)
        .build()
        .map_err(|e| Error::param("worker_count", e.to_string()))?;
    pool.install(run)
}

/// Assigns every face of a corpus on the bank's backend.
pub fn assign_corpus(
    corpus: &Corpus,
    bank: &ReferenceBank<f32>,
    params: &RetrievalParams,
) -> Result<Vec<AssignmentResult>> {
    let block = corpus.face_block(bank.backend().as_str())?;
    let ids: Vec<&str> = corpus.faces().iter().map(|f| f.face_id.as_str()).collect();
    assign_blocked(block, &ids, bank, params.threshold, params.block_size, params.workers)
}

/// Copies assignment decisions into the corpus `identity_id` fields.
/// Unassigned faces get `None`.
pub fn apply_assignments(corpus: Corpus, results: &[AssignmentResult]) -> Result<Corpus> {
    let mut labels = Vec::with_capacity(results.len());
    for r in results {
        let i = corpus
            .face_index(&r.face_id)
            .ok_or_else(|| Error::UnknownId { kind: "face", id: r.face_id.clone() })?;
        labels.push((i, r.best_identity.clone()));
    }
    Ok(corpus.with_identities(labels))
}
