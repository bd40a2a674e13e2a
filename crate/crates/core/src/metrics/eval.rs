use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::BenchSample;
use crate::embedding::{cosine, BackendId, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::store::{Corpus, Scope};

use super::matching::{match_faces, MatchedFaces};
use super::scores::{blend, clip_scores, copy_paste, id_similarity, Channel};

pub const EVAL_SCHEMA_VERSION: u32 = 1;

/// Metric names in report order.
pub const METRICS: [&str; 9] =
    ["sim_gt", "sim_ref", "sim_ref_mean", "copy_paste", "copy_paste_raw", "blend", "clip_i", "clip_t", "aesthetic"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Face backends; the first one computes the matching.
    pub face_backends: Vec<BackendId>,
    pub clip_image_backend: Option<BackendId>,
    pub clip_text_backend: Option<BackendId>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            face_backends: vec!["arcface".into()],
            clip_image_backend: Some("clip-image".into()),
            clip_text_backend: Some("clip-text".into()),
        }
    }
}

/// Generated images are looked up by `image_id == sample_id`; ground truth by
/// the sample's `gt_image_id`; references by face id.
#[derive(Clone, Copy, Debug)]
pub struct EvalInputs<'a> {
    pub samples: &'a [BenchSample],
    pub ground_truth: &'a Corpus,
    pub references: &'a Corpus,
    pub generated: &'a Corpus,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub sample_id: String,
    pub identity_count: usize,
    pub subset: String,
    pub matched_pairs: usize,
    pub sim_gt: Option<f64>,
    pub sim_gt_by_backend: BTreeMap<BackendId, Option<f64>>,
    /// Max over each identity's references, averaged over matched pairs.
    pub sim_ref: Option<f64>,
    /// Same with the mean over references.
    pub sim_ref_mean: Option<f64>,
    pub sim_ref_by_backend: BTreeMap<BackendId, Option<f64>>,
    pub copy_paste: Option<f64>,
    /// `sim_ref - sim_gt`, unnormalized.
    pub copy_paste_raw: Option<f64>,
    pub blend: Option<f64>,
    pub clip_i: Option<f64>,
    pub clip_t: Option<f64>,
    pub aesthetic: Option<f64>,
    pub flags: Vec<String>,
}

impl SampleMetrics {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "sim_gt" => self.sim_gt,
            "sim_ref" => self.sim_ref,
            "sim_ref_mean" => self.sim_ref_mean,
            "copy_paste" => self.copy_paste,
            "copy_paste_raw" => self.copy_paste_raw,
            "blend" => self.blend,
            "clip_i" => self.clip_i,
            "clip_t" => self.clip_t,
            "aesthetic" => self.aesthetic,
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedSample {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Samples contributing a value.
    pub count: usize,
    pub mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub face_backends: Vec<BackendId>,
    pub matcher_backend: BackendId,
    pub sample_count: usize,
    pub evaluated: usize,
    pub skipped_count: usize,
    pub aggregates: BTreeMap<String, Aggregate>,
    /// Aggregates by reference identity count: "1", "2", "3-4".
    pub subsets: BTreeMap<String, BTreeMap<String, Aggregate>>,
    pub samples: Vec<SampleMetrics>,
    pub skipped: Vec<SkippedSample>,
}

pub fn subset_label(identity_count: usize) -> &'static str {
    match identity_count {
        1 => "1",
        2 => "2",
        3 | 4 => "3-4",
        _ => "other",
    }
}

fn face_rows(corpus: &Corpus, backend: &BackendId, faces: &[usize]) -> Option<EmbeddingMatrix<f64>> {
    let desc = corpus.backends().iter().find(|d| &d.backend_id == backend)?;
    if desc.scope != Scope::Face {
        return None;
    }
    Some(corpus.block(backend.as_str())?.select(faces).cast())
}

fn image_row(corpus: &Corpus, backend: Option<&BackendId>, image_id: &str) -> Result<Option<Vec<f64>>> {
    let Some(b) = backend else { return Ok(None) };
    if corpus.block(b.as_str()).is_none() {
        return Ok(None);
    }
    Ok(corpus.image_embedding(image_id, b.as_str())?.map(|r| r.iter().map(|&v| v as f64).collect()))
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

enum Outcome {
    Done(SampleMetrics),
    Skipped(SkippedSample),
}

fn evaluate_sample(sample: &BenchSample, inputs: &EvalInputs<'_>, cfg: &EvalConfig) -> Result<Outcome> {
    let skip = |reason: &str| Ok(Outcome::Skipped(SkippedSample { sample_id: sample.sample_id.clone(), reason: reason.into() }));
    let gen_faces = inputs.generated.faces_of_image(&sample.sample_id);
    if gen_faces.is_empty() {
        return skip(if inputs.generated.image(&sample.sample_id).is_some() {
            "generated image has no faces"
        } else {
            "generated sample missing"
        });
    }
    let gt_faces = inputs.ground_truth.faces_of_image(&sample.gt_image_id);
    if gt_faces.is_empty() {
        return skip("ground-truth image has no faces");
    }
    let matcher = &cfg.face_backends[0];
    let (Some(gm), Some(tm)) =
        (face_rows(inputs.generated, matcher, gen_faces), face_rows(inputs.ground_truth, matcher, gt_faces))
    else {
        return skip("matcher backend missing");
    };
    let matched: MatchedFaces = match_faces(&gm, &tm)?;

    let mut m = SampleMetrics {
        sample_id: sample.sample_id.clone(),
        identity_count: sample.identity_count(),
        subset: subset_label(sample.identity_count()).into(),
        matched_pairs: matched.len(),
        ..Default::default()
    };
    if !matched.unmatched_generated.is_empty() {
        m.flags.push(format!("unmatched_generated:{}", matched.unmatched_generated.len()));
    }
    if !matched.unmatched_target.is_empty() {
        m.flags.push(format!("unmatched_target:{}", matched.unmatched_target.len()));
    }

    let mats: Vec<(BackendId, Option<(EmbeddingMatrix<f64>, EmbeddingMatrix<f64>)>)> = cfg
        .face_backends
        .iter()
        .map(|b| {
            let pair = face_rows(inputs.generated, b, gen_faces).zip(face_rows(inputs.ground_truth, b, gt_faces));
            (b.clone(), pair)
        })
        .collect();
    let channels: Vec<Channel<'_, f64>> = mats.iter().map(|(b, p)| (b.clone(), p.as_ref().map(|(g, t)| (g, t)))).collect();
    let idsim = id_similarity(&matched, &channels)?;
    for b in &idsim.missing {
        m.flags.push(format!("missing_backend:{b}"));
    }
    m.sim_gt = idsim.value;
    m.sim_gt_by_backend = idsim.per_backend;

    // references per identity, by backend
    let gt_identity: Vec<Option<&str>> =
        gt_faces.iter().map(|&i| inputs.ground_truth.faces()[i].identity_id.as_deref()).collect();
    let (mut ref_max, mut ref_mean) = (Vec::new(), Vec::new());
    for (backend, pair) in &mats {
        let Some((gen, _)) = pair else {
            m.sim_ref_by_backend.insert(backend.clone(), None);
            continue;
        };
        let (mut maxes, mut means) = (Vec::new(), Vec::new());
        for &(gi, tj) in &matched.pairs {
            let Some(id) = gt_identity[tj] else { continue };
            let Some(refs) = sample.references.iter().find(|r| r.identity_id == id) else { continue };
            let mut sims = Vec::with_capacity(refs.reference_face_ids.len());
            for fid in &refs.reference_face_ids {
                let Some(ri) = inputs.references.face_index(fid) else { continue };
                let Some(rm) = face_rows(inputs.references, backend, &[ri]) else { continue };
                sims.push(cosine(gen.row(gi), rm.row(0))?);
            }
            if !sims.is_empty() {
                maxes.push(sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
                means.push(mean(&sims).unwrap());
            }
        }
        let v = mean(&maxes);
        m.sim_ref_by_backend.insert(backend.clone(), v);
        ref_max.extend(v);
        ref_mean.extend(mean(&means));
    }
    m.sim_ref = mean(&ref_max);
    m.sim_ref_mean = mean(&ref_mean);
    if m.sim_ref.is_none() {
        m.flags.push("no_reference_pairs".into());
    }
    if let (Some(r), Some(g)) = (m.sim_ref, m.sim_gt) {
        m.copy_paste = Some(copy_paste(r, g)?);
        m.copy_paste_raw = Some(r - g);
    }

    let blends: Vec<f64> =
        mats.iter().filter_map(|(_, p)| p.as_ref()).map(|(g, t)| blend(g, t, &matched)).collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();
    m.blend = mean(&blends);

    let gen_clip = image_row(inputs.generated, cfg.clip_image_backend.as_ref(), &sample.sample_id)?;
    let gt_clip = image_row(inputs.ground_truth, cfg.clip_image_backend.as_ref(), &sample.gt_image_id)?;
    let prompt = image_row(inputs.ground_truth, cfg.clip_text_backend.as_ref(), &sample.gt_image_id)?;
    let clip = clip_scores(gen_clip.as_deref(), gt_clip.as_deref(), prompt.as_deref())?;
    m.clip_i = clip.clip_i;
    m.clip_t = clip.clip_t;
    if cfg.clip_image_backend.is_some() && clip.clip_i.is_none() {
        m.flags.push("missing_clip_image".into());
    }
    if cfg.clip_text_backend.is_some() && clip.clip_t.is_none() {
        m.flags.push("missing_clip_text".into());
    }
    m.aesthetic = inputs.generated.image(&sample.sample_id).and_then(|r| r.quality);
    Ok(Outcome::Done(m))
}

fn aggregate<'a>(samples: impl Iterator<Item = &'a SampleMetrics> + Clone) -> BTreeMap<String, Aggregate> {
    METRICS
        .iter()
        .map(|&name| {
            let vals: Vec<f64> = samples.clone().filter_map(|s| s.metric(name)).collect();
            (name.to_owned(), Aggregate { count: vals.len(), mean: mean(&vals) })
        })
        .collect()
}

/// Scores every bench sample against its generated image. Missing samples
/// are listed as skipped and left out of the aggregates.
pub fn evaluate(inputs: &EvalInputs<'_>, cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.face_backends.is_empty() {
        return Err(Error::param("face_backends", "at least one face backend is required"));
    }
    let outcomes: Vec<Outcome> =
        inputs.samples.par_iter().map(|s| evaluate_sample(s, inputs, cfg)).collect::<Result<_>>()?;
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Done(m) => samples.push(m),
            Outcome::Skipped(s) => skipped.push(s),
        }
    }
    let mut subsets = BTreeMap::new();
    for label in ["1", "2", "3-4"] {
        subsets.insert(label.to_owned(), aggregate(samples.iter().filter(|s| s.subset == label)));
    }
    if samples.iter().any(|s| s.subset == "other") {
        subsets.insert("other".into(), aggregate(samples.iter().filter(|s| s.subset == "other")));
    }
    Ok(EvalReport {
        schema_version: EVAL_SCHEMA_VERSION,
        face_backends: cfg.face_backends.clone(),
        matcher_backend: cfg.face_backends[0].clone(),
        sample_count: inputs.samples.len(),
        evaluated: samples.len(),
        skipped_count: skipped.len(),
        aggregates: aggregate(samples.iter()),
        subsets,
        samples,
        skipped,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// One row per evaluated sample; empty cells for absent values.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |e| Error::Csv { path: path.to_path_buf(), source: e };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["sample_id", "identity_count", "subset", "matched_pairs"];
        header.extend(METRICS);
        header.push("flags");
        w.write_record(&header).map_err(csv_err)?;
        for s in &self.samples {
            let mut row =
                vec![s.sample_id.clone(), s.identity_count.to_string(), s.subset.clone(), s.matched_pairs.to_string()];
            row.extend(METRICS.iter().map(|m| s.metric(m).map(|v| v.to_string()).unwrap_or_default()));
            row.push(s.flags.join(";"));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let width = |m: &str| m.len().max(8);
        let _ = writeln!(out, "evaluated {} of {} samples ({} skipped)", self.evaluated, self.sample_count, self.skipped_count);
        let _ = write!(out, "{:<8}", "subset");
        for m in METRICS {
            let _ = write!(out, "  {m:>w$}", w = width(m));
        }
        out.push('\n');
        let rows = std::iter::once(("all", &self.aggregates)).chain(self.subsets.iter().map(|(k, v)| (k.as_str(), v)));
        for (label, aggs) in rows {
            let _ = write!(out, "{label:<8}");
            for m in METRICS {
                let w = width(m);
                match aggs.get(m).and_then(|a| a.mean) {
                    Some(v) => write!(out, "  {v:>w$.4}"),
                    None => write!(out, "  {:>w$}", "-"),
                }
                .ok();
            }
            out.push('\n');
        }
        out
    }
}
