//! Seeded synthetic corpora: single-ID query groups around per-identity
//! directions, multi-ID images with Zipf-distributed identities, and
//! generated-image corpora derived from a bench split.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::align::{CropTemplate, Landmarks5};
use crate::dataset::BenchSample;
use crate::error::{Error, Result};
use crate::store::{BBox, Corpus, CorpusBuilder, FaceRecord, ImageRecord, Scope, SplitTag};

pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Unit vector with cosine `s` to the unit vector `center`.
pub fn at_similarity<R: Rng + ?Sized>(rng: &mut R, center: &[f64], s: f64) -> Vec<f64> {
    loop {
        let u = random_unit(rng, center.len());
        let proj: f64 = u.iter().zip(center).map(|(a, b)| a * b).sum();
        let perp: Vec<f64> = u.iter().zip(center).map(|(a, c)| a - proj * c).collect();
        let n = perp.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            let t = (1.0 - s * s).max(0.0).sqrt();
            return center.iter().zip(&perp).map(|(c, p)| s * c + t * p / n).collect();
        }
    }
}

pub fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub face_backends: Vec<String>,
    pub dim: usize,
    pub identities: usize,
    pub refs_per_identity: usize,
    /// Member cosine to its identity direction is drawn from this range.
    pub member_similarity: (f64, f64),
    pub multi_images: usize,
    pub max_faces_per_image: usize,
    pub zipf_exponent: f64,
    /// Probability that a multi-ID face belongs to nobody in the bank.
    pub distractor_rate: f64,
    /// Dimension of the image-scoped `clip-image` / `clip-text` blocks; 0
    /// leaves them out.
    pub clip_dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            face_backends: vec!["arcface".into()],
            dim: 64,
            identities: 40,
            refs_per_identity: 6,
            member_similarity: (0.75, 0.92),
            multi_images: 300,
            max_faces_per_image: 4,
            zipf_exponent: 1.1,
            distractor_rate: 0.05,
            clip_dim: 32,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthWorld {
    pub single_id: Corpus,
    pub multi_id: Corpus,
    /// True identity of every multi-ID face; `None` for distractors.
    pub truth: BTreeMap<String, Option<String>>,
    /// Multi-ID images each identity appears in, as generated.
    pub appearances: BTreeMap<String, u64>,
}

pub fn identity_name(k: usize) -> String {
    format!("id-{k:05}")
}

fn face_geometry(slot: usize, template: &CropTemplate) -> (BBox, Landmarks5<f64>) {
    let bbox = BBox { x: 10.0 + 120.0 * slot as f64, y: 20.0, w: 100.0, h: 100.0 };
    let s = bbox.w / template.width as f64;
    let points = template.landmarks.points.map(|[x, y]| [bbox.x + x * s, bbox.y + y * s]);
    (bbox, Landmarks5 { points })
}

fn face_record(face_id: String, image_id: String, slot: usize, template: &CropTemplate) -> FaceRecord {
    let (bbox, landmarks) = face_geometry(slot, template);
    FaceRecord {
        face_id,
        image_id,
        bbox,
        landmarks,
        quality: None,
        identity_id: None,
        query_group: None,
        raw_norms: BTreeMap::new(),
    }
}

fn with_backends(mut b: CorpusBuilder, cfg: &SynthConfig, clip: bool) -> CorpusBuilder {
    for name in &cfg.face_backends {
        b = b.backend(name.as_str(), cfg.dim, Scope::Face);
    }
    if clip && cfg.clip_dim > 0 {
        b = b.backend("clip-image", cfg.clip_dim, Scope::Image).backend("clip-text", cfg.clip_dim, Scope::Image);
    }
    b
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthWorld> {
    if cfg.face_backends.is_empty() || cfg.dim == 0 || cfg.identities == 0 || cfg.max_faces_per_image == 0 {
        return Err(Error::param("synth", "backends, dim, identities and max_faces_per_image must be non-zero"));
    }
    let (lo, hi) = cfg.member_similarity;
    if !(-1.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
        return Err(Error::param("member_similarity", "needs -1 <= lo <= hi <= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let template = CropTemplate::default();
    let nb = cfg.face_backends.len();
    let centers: Vec<Vec<Vec<f64>>> =
        (0..cfg.identities).map(|_| (0..nb).map(|_| random_unit(&mut rng, cfg.dim)).collect()).collect();
    let draw_face = |rng: &mut ChaCha8Rng, k: Option<usize>| -> Vec<Vec<f32>> {
        (0..nb)
            .map(|b| match k {
                Some(k) => {
                    let s = rng.random_range(lo..=hi);
                    to_f32(&at_similarity(rng, &centers[k][b], s))
                }
                None => to_f32(&random_unit(rng, cfg.dim)),
            })
            .collect()
    };
    let rows = |e: &[Vec<f32>]| -> Vec<(String, Vec<f32>)> {
        cfg.face_backends.iter().cloned().zip(e.iter().cloned()).collect()
    };

    let mut single = with_backends(CorpusBuilder::new("synth-single", SplitTag::SingleId), cfg, false);
    for k in 0..cfg.identities {
        for j in 0..cfg.refs_per_identity {
            let image_id = format!("s-{k:05}-{j:03}");
            let mut rec = face_record(format!("{image_id}-f0"), image_id, 0, &template);
            rec.query_group = Some(identity_name(k));
            let e = rows(&draw_face(&mut rng, Some(k)));
            let refs: Vec<(&str, &[f32])> = e.iter().map(|(b, v)| (b.as_str(), v.as_slice())).collect();
            single.push_face(rec, &refs)?;
        }
    }

    let weights: Vec<f64> = (0..cfg.identities).map(|k| 1.0 / ((k + 1) as f64).powf(cfg.zipf_exponent)).collect();
    let zipf = WeightedIndex::new(&weights).map_err(|e| Error::param("zipf_exponent", e.to_string()))?;
    let mut multi = with_backends(CorpusBuilder::new("synth-multi", SplitTag::MultiId), cfg, true);
    let mut truth = BTreeMap::new();
    let mut appearances: BTreeMap<String, u64> = BTreeMap::new();
    for i in 0..cfg.multi_images {
        let image_id = format!("m-{i:05}");
        let n = rng.random_range(1..=cfg.max_faces_per_image.min(cfg.identities));
        let mut present = Vec::new();
        for slot in 0..n {
            let who = if rng.random_bool(cfg.distractor_rate) {
                None
            } else {
                let mut k = zipf.sample(&mut rng);
                while present.contains(&Some(k)) {
                    k = zipf.sample(&mut rng);
                }
                Some(k)
            };
            present.push(who);
            let rec = face_record(format!("{image_id}-f{slot}"), image_id.clone(), slot, &template);
            truth.insert(rec.face_id.clone(), who.map(identity_name));
            let e = rows(&draw_face(&mut rng, who));
            let refs: Vec<(&str, &[f32])> = e.iter().map(|(b, v)| (b.as_str(), v.as_slice())).collect();
            multi.push_face(rec, &refs)?;
        }
        for k in present.iter().flatten() {
            *appearances.entry(identity_name(*k)).or_insert(0) += 1;
        }
        let record = ImageRecord {
            image_id: image_id.clone(),
            tags: vec![],
            quality: Some(rng.random_range(4.0..7.0)),
            prompt: Some(format!("a photo of {n} people")),
        };
        if cfg.clip_dim > 0 {
            let ci = random_unit(&mut rng, cfg.clip_dim);
            let ct = at_similarity(&mut rng, &ci, 0.3);
            multi.push_image(record, &[("clip-image", &to_f32(&ci)), ("clip-text", &to_f32(&ct))])?;
        } else {
            multi.push_image(record, &[])?;
        }
    }
    Ok(SynthWorld { single_id: single.build()?, multi_id: multi.build()?, truth, appearances })
}

/// How a synthetic "generator" produces each bench sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum GeneratedMode {
    /// The ground-truth faces verbatim.
    GroundTruth,
    /// One reference face per identity, verbatim.
    CopyReferences,
    /// Ground-truth faces moved to the given cosine.
    Perturbed { similarity: f64 },
}

/// Generated-image corpus keyed by sample id, with the ground truth's
/// backends. Image-scoped embeddings are copied from the ground truth.
pub fn generated_corpus(
    ground_truth: &Corpus,
    references: &Corpus,
    samples: &[BenchSample],
    mode: GeneratedMode,
    seed: u64,
) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = CorpusBuilder::new("generated", SplitTag::Generated);
    for d in ground_truth.backends() {
        b = b.backend(d.backend_id.clone(), d.dimension, d.scope);
    }
    let face_backends: Vec<&str> =
        ground_truth.backends().iter().filter(|d| d.scope == Scope::Face).map(|d| d.backend_id.as_str()).collect();
    let image_backends: Vec<&str> =
        ground_truth.backends().iter().filter(|d| d.scope == Scope::Image).map(|d| d.backend_id.as_str()).collect();

    for s in samples {
        let sources: Vec<(&Corpus, usize)> = match mode {
            GeneratedMode::CopyReferences => s
                .references
                .iter()
                .map(|r| {
                    let fid = &r.reference_face_ids[0];
                    references.face_index(fid).map(|i| (references, i)).ok_or_else(|| Error::UnknownId { kind: "face", id: fid.clone() })
                })
                .collect::<Result<_>>()?,
            _ => ground_truth.faces_of_image(&s.gt_image_id).iter().map(|&i| (ground_truth, i)).collect(),
        };
        for (slot, (corpus, i)) in sources.into_iter().enumerate() {
            let src = &corpus.faces()[i];
            let mut rec = src.clone();
            rec.face_id = format!("{}-f{slot}", s.sample_id);
            rec.image_id = s.sample_id.clone();
            rec.identity_id = None;
            rec.query_group = None;
            rec.raw_norms.clear();
            let mut rows = Vec::with_capacity(face_backends.len());
            for &bk in &face_backends {
                let e = corpus.face_embedding(i, bk)?;
                let v = match mode {
                    GeneratedMode::Perturbed { similarity } => {
                        let c: Vec<f64> = e.iter().map(|&x| x as f64).collect();
                        to_f32(&at_similarity(&mut rng, &c, similarity))
                    }
                    _ => e.to_vec(),
                };
                rows.push((bk, v));
            }
            let refs: Vec<(&str, &[f32])> = rows.iter().map(|(k, v)| (*k, v.as_slice())).collect();
            b.push_face(rec, &refs)?;
        }
        let mut img_rows = Vec::new();
        for &bk in &image_backends {
            let e = ground_truth
                .image_embedding(&s.gt_image_id, bk)?
                .ok_or_else(|| Error::UnknownId { kind: "image", id: s.gt_image_id.clone() })?;
            img_rows.push((bk, e.to_vec()));
        }
        let refs: Vec<(&str, &[f32])> = img_rows.iter().map(|(k, v)| (*k, v.as_slice())).collect();
        let quality = ground_truth.image(&s.gt_image_id).and_then(|r| r.quality);
        b.push_image(ImageRecord { image_id: s.sample_id.clone(), tags: vec![], quality, prompt: s.prompt.clone() }, &refs)?;
    }
    b.build()
}
