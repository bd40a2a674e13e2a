use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bank::ReferenceBank;
use crate::error::{Error, Result};
use crate::store::Corpus;

use super::pairs::Pairing;

pub const DEFAULT_BENCH_SAMPLES: usize = 435;
pub const MAX_BENCH_IDENTITIES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchParams {
    /// Number of tail identities that seed the bench.
    pub tail_identities: usize,
    pub sample_count: usize,
    pub refs_per_identity: usize,
    pub seed: u64,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self { tail_identities: 100, sample_count: DEFAULT_BENCH_SAMPLES, refs_per_identity: 1, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchReference {
    pub identity_id: String,
    pub reference_face_ids: Vec<String>,
    pub reference_image_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchSample {
    pub sample_id: String,
    pub gt_image_id: String,
    pub references: Vec<BenchReference>,
    pub gt_face_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

impl BenchSample {
    pub fn identity_count(&self) -> usize {
        self.references.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchSplit {
    /// The tail identities the bench was drawn around.
    pub selected_identities: Vec<String>,
    /// Every identity co-occurring with a selected one; none of these may
    /// appear in training.
    pub bench_identities: Vec<String>,
    pub samples: Vec<BenchSample>,
    pub training_image_ids: Vec<String>,
    /// Images in neither split.
    pub excluded_image_ids: Vec<String>,
}

impl BenchSplit {
    /// Drops pairs whose target image is not a training image.
    pub fn filter_pairs(&self, pairing: &Pairing) -> Pairing {
        let training: BTreeSet<&str> = self.training_image_ids.iter().map(String::as_str).collect();
        Pairing {
            paired: pairing.paired.iter().filter(|p| training.contains(p.target_image_id.as_str())).cloned().collect(),
            unpaired: pairing.unpaired.iter().filter(|u| training.contains(u.image_id.as_str())).cloned().collect(),
        }
    }

    pub fn training_identities(&self, corpus: &Corpus) -> BTreeSet<String> {
        let ids = image_identities(corpus);
        self.training_image_ids.iter().flat_map(|i| ids.get(i.as_str()).into_iter().flatten().cloned()).collect()
    }
}

/// Distinct assigned identities per image.
fn image_identities(corpus: &Corpus) -> BTreeMap<&str, BTreeSet<String>> {
    corpus
        .image_faces()
        .iter()
        .map(|(img, faces)| {
            let ids = faces.iter().filter_map(|&i| corpus.faces()[i].identity_id.clone()).collect();
            (img.as_str(), ids)
        })
        .collect()
}

/// Number of distinct images each assigned identity appears in.
pub fn appearance_counts(corpus: &Corpus) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for ids in image_identities(corpus).into_values() {
        for id in ids {
            *counts.entry(id).or_insert(0) += 1;
        }
    }
    counts
}

/// Builds a benchmark from the least-frequent identities and removes every
/// image touching a bench identity from training.
///
/// Tail identities are those with the lowest appearance counts (ties by id)
/// that have enough bank references. All images containing one of them are
/// claimed by the bench; identities co-occurring there are claimed too, so the
/// training split shares no identity with the bench.
pub fn split_bench<T>(corpus: &Corpus, bank: &ReferenceBank<T>, params: &BenchParams) -> Result<BenchSplit> {
    if params.tail_identities == 0 {
        return Err(Error::param("tail_identities", "must be at least 1"));
    }
    if params.refs_per_identity == 0 {
        return Err(Error::param("refs_per_identity", "must be at least 1"));
    }
    let has_refs = |id: &str| {
        bank.identity_index(id).is_some_and(|i| bank.members_of(i).len() >= params.refs_per_identity)
    };

    let counts = appearance_counts(corpus);
    let mut tail: Vec<(&String, u64)> =
        counts.iter().filter(|(id, _)| has_refs(id)).map(|(id, &c)| (id, c)).collect();
    if tail.len() < params.tail_identities {
        return Err(Error::InsufficientIdentities { requested: params.tail_identities, available: tail.len() });
    }
    tail.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(b.0)));
    let selected: BTreeSet<&str> = tail[..params.tail_identities].iter().map(|(id, _)| id.as_str()).collect();

    let per_image = image_identities(corpus);
    let claimed: Vec<(&str, &BTreeSet<String>)> = per_image
        .iter()
        .filter(|(_, ids)| ids.iter().any(|id| selected.contains(id.as_str())))
        .map(|(img, ids)| (*img, ids))
        .collect();
    let bench_ids: BTreeSet<&str> = claimed.iter().flat_map(|(_, ids)| ids.iter().map(String::as_str)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut candidates: Vec<&str> = claimed
        .iter()
        .filter(|(_, ids)| (1..=MAX_BENCH_IDENTITIES).contains(&ids.len()) && ids.iter().all(|id| has_refs(id)))
        .map(|(img, _)| *img)
        .collect();
    candidates.shuffle(&mut rng);

    let mut samples = Vec::new();
    for img in candidates {
        if samples.len() == params.sample_count {
            break;
        }
        let Some(references) = pick_references(bank, img, &per_image[img], params.refs_per_identity, &mut rng)
        else {
            continue;
        };
        let gt_face_ids = corpus.faces_of_image(img).iter().map(|&i| corpus.faces()[i].face_id.clone()).collect();
        samples.push(BenchSample {
            sample_id: String::new(),
            gt_image_id: img.to_owned(),
            references,
            gt_face_ids,
            prompt: corpus.image(img).and_then(|r| r.prompt.clone()),
        });
    }
    samples.sort_by(|a, b| a.gt_image_id.cmp(&b.gt_image_id));
    for (k, s) in samples.iter_mut().enumerate() {
        s.sample_id = format!("bench-{k:05}");
    }

    let mut training = Vec::new();
    let mut excluded = Vec::new();
    let bench_images: BTreeSet<&str> = samples.iter().map(|s| s.gt_image_id.as_str()).collect();
    for (img, ids) in &per_image {
        if ids.iter().any(|id| bench_ids.contains(id.as_str())) {
            if !bench_images.contains(img) {
                excluded.push((*img).to_owned());
            }
        } else {
            training.push((*img).to_owned());
        }
    }

    Ok(BenchSplit {
        selected_identities: selected.into_iter().map(str::to_owned).collect(),
        bench_identities: bench_ids.into_iter().map(str::to_owned).collect(),
        samples,
        training_image_ids: training,
        excluded_image_ids: excluded,
    })
}

fn pick_references<T>(
    bank: &ReferenceBank<T>,
    gt_image: &str,
    ids: &BTreeSet<String>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<BenchReference>> {
    ids.iter()
        .map(|id| {
            let members = bank.members_of(bank.identity_index(id)?);
            let mut eligible: Vec<_> = members.iter().filter(|m| m.image_id != gt_image).collect();
            if eligible.len() < k {
                return None;
            }
            eligible.shuffle(rng);
            eligible.truncate(k);
            Some(BenchReference {
                identity_id: id.clone(),
                reference_face_ids: eligible.iter().map(|m| m.face_id.clone()).collect(),
                reference_image_ids: eligible.iter().map(|m| m.image_id.clone()).collect(),
            })
        })
        .collect()
}
