use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bank::ReferenceBank;
use crate::store::Corpus;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedIdentity {
    pub identity_id: String,
    pub target_face_id: String,
    pub reference_face_id: String,
    pub reference_image_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedSample {
    pub target_image_id: String,
    pub identities: Vec<PairedIdentity>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnpairedImage {
    pub image_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pairing {
    pub paired: Vec<PairedSample>,
    pub unpaired: Vec<UnpairedImage>,
}

/// Pass-through predicate over the sidecar's quality scores and image tags.
/// The scoring models themselves are external.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityFilter {
    /// Minimum image quality; images without a score pass.
    pub min_image_quality: Option<f64>,
    /// Minimum face quality over identified faces; faces without a score pass.
    pub min_face_quality: Option<f64>,
    /// Images carrying any of these tags are rejected.
    pub reject_tags: Vec<String>,
}

impl QualityFilter {
    pub fn accepts(&self, corpus: &Corpus, image_id: &str) -> bool {
        if let Some(img) = corpus.image(image_id) {
            if self.min_image_quality.zip(img.quality).is_some_and(|(min, q)| q < min) {
                return false;
            }
            if img.tags.iter().any(|t| self.reject_tags.contains(t)) {
                return false;
            }
        }
        let Some(min) = self.min_face_quality else { return true };
        corpus.faces_of_image(image_id).iter().all(|&i| {
            let f = &corpus.faces()[i];
            f.identity_id.is_none() || f.quality.is_none_or(|q| q >= min)
        })
    }
}

pub fn build_pairs<T>(corpus: &Corpus, bank: &ReferenceBank<T>, seed: u64) -> Pairing {
    build_pairs_filtered(corpus, bank, seed, &QualityFilter::default())
}

/// One sample per image whose identified faces all have at least two bank
/// members, one of them from another image. The reference is drawn uniformly
/// from that identity's members outside the target image. Images are visited
/// in id order so the draw sequence depends only on the seed.
pub fn build_pairs_filtered<T>(corpus: &Corpus, bank: &ReferenceBank<T>, seed: u64, filter: &QualityFilter) -> Pairing {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Pairing::default();
    let unpaired = |image_id: &str, reason: String| UnpairedImage { image_id: image_id.to_owned(), reason };

    'images: for (image_id, faces) in corpus.image_faces() {
        if !filter.accepts(corpus, image_id) {
            out.unpaired.push(unpaired(image_id, "rejected by quality filter".into()));
            continue;
        }
        let identified: Vec<_> =
            faces.iter().map(|&i| &corpus.faces()[i]).filter(|f| f.identity_id.is_some()).collect();
        if identified.is_empty() {
            out.unpaired.push(unpaired(image_id, "no identified faces".into()));
            continue;
        }
        let mut chosen = Vec::with_capacity(identified.len());
        for face in identified {
            let id = face.identity_id.as_deref().unwrap();
            let Some(idx) = bank.identity_index(id) else {
                out.unpaired.push(unpaired(image_id, format!("identity `{id}` is not in the bank")));
                continue 'images;
            };
            let members = bank.members_of(idx);
            let eligible: Vec<_> = members.iter().filter(|m| m.image_id != *image_id).collect();
            if members.len() < 2 || eligible.is_empty() {
                out.unpaired.push(unpaired(
                    image_id,
                    format!("identity `{id}` has {} references, {} outside the target", members.len(), eligible.len()),
                ));
                continue 'images;
            }
            let reference = eligible[rng.random_range(0..eligible.len())];
            chosen.push(PairedIdentity {
                identity_id: id.to_owned(),
                target_face_id: face.face_id.clone(),
                reference_face_id: reference.face_id.clone(),
                reference_image_id: reference.image_id.clone(),
            });
        }
        out.paired.push(PairedSample { target_image_id: image_id.clone(), identities: chosen });
    }
    out
}
