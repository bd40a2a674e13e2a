use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bank::ReferenceBank;
use crate::error::{Error, Result};
use crate::store::Corpus;

use super::split::appearance_counts;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub image_count: u64,
    pub face_count: u64,
    pub identified_faces: u64,
    /// Images each identity appears in. Bank identities absent from the
    /// corpus are listed with 0.
    pub identity_appearances: BTreeMap<String, u64>,
    /// Appearance count → number of identities with that count.
    pub appearance_histogram: BTreeMap<u64, u64>,
    /// Faces in an image → number of images.
    pub faces_per_image: BTreeMap<u64, u64>,
    /// Images per named split.
    pub split_sizes: BTreeMap<String, u64>,
}

pub fn corpus_stats<T>(corpus: &Corpus, bank: Option<&ReferenceBank<T>>) -> CorpusStats {
    let mut appearances = appearance_counts(corpus);
    if let Some(bank) = bank {
        for e in bank.identities() {
            appearances.entry(e.identity_id.clone()).or_insert(0);
        }
    }
    let mut appearance_histogram = BTreeMap::new();
    for &c in appearances.values() {
        *appearance_histogram.entry(c).or_insert(0) += 1;
    }
    let mut faces_per_image = BTreeMap::new();
    for faces in corpus.image_faces().values() {
        *faces_per_image.entry(faces.len() as u64).or_insert(0) += 1;
    }
    let image_count = corpus.counts().images;
    let faceless = image_count - corpus.image_faces().len() as u64;
    if faceless > 0 {
        faces_per_image.insert(0, faceless);
    }
    let split = serde_json::to_value(corpus.split()).ok().and_then(|v| v.as_str().map(str::to_owned));
    CorpusStats {
        image_count,
        face_count: corpus.faces().len() as u64,
        identified_faces: corpus.faces().iter().filter(|f| f.identity_id.is_some()).count() as u64,
        identity_appearances: appearances,
        appearance_histogram,
        faces_per_image,
        split_sizes: split.map(|s| (s, image_count)).into_iter().collect(),
    }
}

impl CorpusStats {
    /// Flat `section,key,value` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |e| Error::Csv { path: path.to_path_buf(), source: e };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["section", "key", "value"]).map_err(csv_err)?;
        let mut row = |s: &str, k: &str, v: u64| w.write_record([s, k, &v.to_string()]);
        row("totals", "images", self.image_count).map_err(csv_err)?;
        row("totals", "faces", self.face_count).map_err(csv_err)?;
        row("totals", "identified_faces", self.identified_faces).map_err(csv_err)?;
        for (k, v) in &self.split_sizes {
            row("split_sizes", k, *v).map_err(csv_err)?;
        }
        for (k, v) in &self.appearance_histogram {
            row("appearance_histogram", &k.to_string(), *v).map_err(csv_err)?;
        }
        for (k, v) in &self.faces_per_image {
            row("faces_per_image", &k.to_string(), *v).map_err(csv_err)?;
        }
        for (k, v) in &self.identity_appearances {
            row("identity_appearances", k, *v).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
