use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, BackendId, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::matching::MatchedFaces;

/// Below this, `1 - sim_gt` is treated as zero and copy-paste returns 0.
pub const COPY_PASTE_SATURATION: f64 = 1e-6;

/// Generated and target embeddings on one backend, rows indexed as in the
/// matching. `None` when the backend is missing for this sample.
pub type Channel<'a, T> = (BackendId, Option<(&'a EmbeddingMatrix<T>, &'a EmbeddingMatrix<T>)>);

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IdSimilarity {
    /// Unweighted mean over present backends.
    pub value: Option<f64>,
    pub per_backend: BTreeMap<BackendId, Option<f64>>,
    pub missing: Vec<BackendId>,
}

/// Mean matched-pair cosine per backend, then the mean over backends. All
/// backends reuse the one matching.
pub fn id_similarity<T: Scalar>(matched: &MatchedFaces, channels: &[Channel<'_, T>]) -> Result<IdSimilarity> {
    let mut out = IdSimilarity::default();
    let mut present = Vec::new();
    for (backend, ch) in channels {
        let v = match ch {
            Some((gen, tgt)) if !matched.is_empty() => {
                let mut sum = 0.0;
                for &(i, j) in &matched.pairs {
                    sum += cosine(gen.row(i), tgt.row(j))?.as_f64();
                }
                Some(sum / matched.len() as f64)
            }
            Some(_) => None,
            None => {
                out.missing.push(backend.clone());
                None
            }
        };
        present.extend(v);
        out.per_backend.insert(backend.clone(), v);
    }
    out.value = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    Ok(out)
}

fn check_similarity(name: &'static str, v: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&v) {
        return Err(Error::param(name, format!("must lie in [-1, 1], got {v}")));
    }
    Ok(())
}

/// `(sim_ref - sim_gt) / (1 - sim_gt)` clipped to `[-1, 1]`: 0 when the
/// generation is as close to the references as to the ground truth, 1 for a
/// verbatim copy of a reference. Returns 0 once `sim_gt` is within
/// [`COPY_PASTE_SATURATION`] of 1.
pub fn copy_paste(sim_ref: f64, sim_gt: f64) -> Result<f64> {
    check_similarity("sim_ref", sim_ref)?;
    check_similarity("sim_gt", sim_gt)?;
    let room = 1.0 - sim_gt;
    if room < COPY_PASTE_SATURATION {
        return Ok(0.0);
    }
    Ok(((sim_ref - sim_gt) / room).clamp(-1.0, 1.0))
}

/// Mean cross-identity similarity: for matched pairs `(g_k, t_k)`, the mean of
/// `cos(g_k, t_l)` over `k ≠ l`. Absent for fewer than two pairs.
pub fn blend<T: Scalar>(
    gen: &EmbeddingMatrix<T>,
    tgt: &EmbeddingMatrix<T>,
    matched: &MatchedFaces,
) -> Result<Option<f64>> {
    let n = matched.len();
    if n < 2 {
        return Ok(None);
    }
    let mut sum = 0.0;
    for (k, &(gi, _)) in matched.pairs.iter().enumerate() {
        for (l, &(_, tj)) in matched.pairs.iter().enumerate() {
            if k != l {
                sum += cosine(gen.row(gi), tgt.row(tj))?.as_f64();
            }
        }
    }
    Ok(Some(sum / (n * n - n) as f64))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClipScores {
    pub clip_i: Option<f64>,
    pub clip_t: Option<f64>,
}

/// Image-image and image-prompt cosines; each is absent when an input is.
pub fn clip_scores<T: Scalar>(gen: Option<&[T]>, gt: Option<&[T]>, prompt: Option<&[T]>) -> Result<ClipScores> {
    let score = |other: Option<&[T]>| -> Result<Option<f64>> {
        match (gen, other) {
            (Some(g), Some(o)) => Ok(Some(cosine(g, o)?.as_f64())),
            _ => Ok(None),
        }
    };
    Ok(ClipScores { clip_i: score(gt)?, clip_t: score(prompt)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::matching::match_faces;

    #[test]
    fn copy_paste_examples() {
        assert_eq!(copy_paste(1.0, 0.521).unwrap(), 1.0);
        assert_eq!(copy_paste(0.3, 0.3).unwrap(), 0.0);
        assert!((copy_paste(0.8, 0.6).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(copy_paste(1.0, 1.0).unwrap(), 0.0);
        assert_eq!(copy_paste(-1.0, 0.9).unwrap(), -1.0);
        assert!(copy_paste(1.5, 0.0).is_err());
        assert!(copy_paste(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn id_similarity_means() {
        let m = MatchedFaces { pairs: vec![(0, 0)], similarities: vec![1.0], unmatched_generated: vec![], unmatched_target: vec![] };
        let mk = |v: Vec<f64>| EmbeddingMatrix::new("x", 2, v).unwrap();
        let at = |c: f64| mk(vec![c, (1.0 - c * c).sqrt()]);
        let e0 = mk(vec![1.0, 0.0]);
        let (g1, g2, g3) = (at(0.9), at(0.7), at(0.8));
        let chans: Vec<Channel<f64>> = vec![
            ("a".into(), Some((&g1, &e0))),
            ("b".into(), Some((&g2, &e0))),
            ("c".into(), Some((&g3, &e0))),
            ("d".into(), None),
        ];
        let s = id_similarity(&m, &chans).unwrap();
        assert!((s.value.unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(s.missing, vec![BackendId::from("d")]);
    }

    #[test]
    fn blend_cases() {
        let orth = EmbeddingMatrix::new("x", 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = match_faces(&orth, &orth).unwrap();
        assert_eq!(blend(&orth, &orth, &m).unwrap(), Some(0.0));
        let same = EmbeddingMatrix::new("x", 3, [0.3, -0.5, 0.7].repeat(3)).unwrap();
        let m = match_faces(&same, &same).unwrap();
        assert_eq!(blend(&same, &same, &m).unwrap(), Some(1.0));
        let one = EmbeddingMatrix::new("x", 2, vec![1.0, 0.0]).unwrap();
        let m = match_faces(&one, &one).unwrap();
        assert_eq!(blend(&one, &one, &m).unwrap(), None);
    }

    #[test]
    fn clip_cases() {
        let g = [0.6, 0.8];
        let s = clip_scores(Some(&g[..]), Some(&g[..]), Some(&[0.8, -0.6][..])).unwrap();
        assert_eq!(s.clip_i, Some(1.0));
        assert_eq!(s.clip_t, Some(0.0));
        assert_eq!(clip_scores::<f64>(None, Some(&g[..]), None).unwrap(), ClipScores::default());
    }
}
