//! Corpus interchange: a JSON manifest with face and image metadata plus a
//! MIDE blob with one dense `f32` block per backend.
//!
//! Face-scoped blocks have one row per manifest face, in manifest order.
//! Image-scoped blocks (CLIP image/text embeddings) have one row per manifest
//! image record.

pub mod blob;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::align::Landmarks5;
use crate::embedding::{norm, BackendId, EmbeddingMatrix};
use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "embeddings.mide";

/// Environment variable naming the default corpus directory.
pub const DATA_ROOT_ENV: &str = "MULTIID_DATA_ROOT";

/// Rows whose norm is within this distance of 1 are stored unchanged.
pub const UNIT_NORM_TOLERANCE: f32 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    SingleId,
    MultiIdPaired,
    MultiIdUnpaired,
    /// Multi-ID images before pairing has been decided.
    MultiId,
    Bench,
    Generated,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    Face,
    Image,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub backend_id: BackendId,
    pub dimension: usize,
    #[serde(default)]
    pub scope: Scope,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusCounts {
    pub images: u64,
    pub faces: u64,
}

/// `(x, y, w, h)` in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceRecord {
    pub face_id: String,
    pub image_id: String,
    pub bbox: BBox,
    pub landmarks: Landmarks5<f64>,
    /// Aesthetic score from the extraction sidecar.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<f64>,
    /// Identity label, filled in by retrieval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity_id: Option<String>,
    /// Search-query group of single-ID images (one group per celebrity query).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_group: Option<String>,
    /// Norms of embeddings that were rescaled at ingestion.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub raw_norms: BTreeMap<BackendId, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub schema_version: u32,
    pub corpus_id: String,
    pub split: SplitTag,
    pub backends: Vec<BackendDescriptor>,
    pub counts: CorpusCounts,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<ImageRecord>,
    pub faces: Vec<FaceRecord>,
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

/// A validated, normalized corpus. Immutable once built; share it freely.
#[derive(Clone, Debug)]
pub struct Corpus {
    corpus_id: String,
    split: SplitTag,
    backends: Vec<BackendDescriptor>,
    faces: Vec<FaceRecord>,
    images: Vec<ImageRecord>,
    blocks: BTreeMap<BackendId, EmbeddingMatrix<f32>>,
    face_index: HashMap<String, usize>,
    image_index: HashMap<String, usize>,
    image_faces: BTreeMap<String, Vec<usize>>,
}

fn normalize_rows(
    block: &mut EmbeddingMatrix<f32>,
    ids: &[&str],
    mut record_norm: impl FnMut(usize, f64),
) -> Result<()> {
    let backend = block.backend().to_string();
    for (i, id) in ids.iter().enumerate() {
        let row = block.row_mut(i);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEmbedding { face_id: id.to_string(), backend });
        }
        let n = norm(row);
        if n == 0.0 {
            return Err(Error::ZeroNormEmbedding { face_id: id.to_string(), backend });
        }
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            row.iter_mut().for_each(|v| *v /= n);
            record_norm(i, n as f64);
        }
    }
    Ok(())
}

impl Corpus {
    /// Validates a manifest against its embedding blocks and normalizes rows.
    pub fn from_parts(manifest: CorpusManifest, blocks: Vec<EmbeddingMatrix<f32>>) -> Result<Self> {
        let CorpusManifest { schema_version, corpus_id, split, backends, counts, images, mut faces } = manifest;
        if schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::InvalidRecord {
                id: corpus_id,
                reason: format!("unsupported manifest schema_version {schema_version}"),
            });
        }

        let mut face_index = HashMap::with_capacity(faces.len());
        let mut image_faces: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, f) in faces.iter().enumerate() {
            if face_index.insert(f.face_id.clone(), i).is_some() {
                return Err(Error::DuplicateFaceId(f.face_id.clone()));
            }
            let b = &f.bbox;
            if !(b.w > 0.0 && b.h > 0.0 && b.x.is_finite() && b.y.is_finite() && b.w.is_finite() && b.h.is_finite())
            {
                return Err(Error::InvalidRecord { id: f.face_id.clone(), reason: "bbox needs positive finite w, h".into() });
            }
            f.landmarks.validate().map_err(|_| Error::InvalidRecord {
                id: f.face_id.clone(),
                reason: "non-finite landmarks".into(),
            })?;
            image_faces.entry(f.image_id.clone()).or_default().push(i);
        }
        let mut image_index = HashMap::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            if image_index.insert(img.image_id.clone(), i).is_some() {
                return Err(Error::InvalidRecord { id: img.image_id.clone(), reason: "duplicate image record".into() });
            }
        }

        if counts.faces != faces.len() as u64 {
            return Err(Error::CountMismatch { what: "faces".into(), declared: counts.faces, found: faces.len() as u64 });
        }
        let distinct_images: BTreeSet<&str> =
            faces.iter().map(|f| f.image_id.as_str()).chain(images.iter().map(|i| i.image_id.as_str())).collect();
        if counts.images != distinct_images.len() as u64 {
            return Err(Error::CountMismatch {
                what: "images".into(),
                declared: counts.images,
                found: distinct_images.len() as u64,
            });
        }

        let mut by_id: BTreeMap<BackendId, EmbeddingMatrix<f32>> = BTreeMap::new();
        for b in blocks {
            by_id.insert(b.backend().clone(), b);
        }
        let mut kept = BTreeMap::new();
        let face_ids: Vec<&str> = faces.iter().map(|f| f.face_id.as_str()).collect();
        let image_ids: Vec<&str> = images.iter().map(|i| i.image_id.as_str()).collect();
        let mut seen = BTreeSet::new();
        let mut raw_norms = Vec::new();
        for desc in &backends {
            if !seen.insert(desc.backend_id.clone()) {
                return Err(Error::InvalidRecord {
                    id: desc.backend_id.to_string(),
                    reason: "backend declared twice".into(),
                });
            }
            let mut block = by_id
                .remove(&desc.backend_id)
                .ok_or_else(|| Error::MissingBackend { backend: desc.backend_id.to_string() })?;
            if block.dim() != desc.dimension {
                return Err(Error::BackendDimension {
                    backend: desc.backend_id.to_string(),
                    declared: desc.dimension,
                    found: block.dim(),
                });
            }
            let ids = match desc.scope {
                Scope::Face => &face_ids,
                Scope::Image => &image_ids,
            };
            if block.rows() != ids.len() {
                return Err(Error::CountMismatch {
                    what: format!("rows in backend `{}`", desc.backend_id),
                    declared: ids.len() as u64,
                    found: block.rows() as u64,
                });
            }
            let mut rescaled = Vec::new();
            normalize_rows(&mut block, ids, |i, n| rescaled.push((i, n)))?;
            if desc.scope == Scope::Face {
                raw_norms.extend(rescaled.into_iter().map(|(i, n)| (i, desc.backend_id.clone(), n)));
            }
            kept.insert(desc.backend_id.clone(), block);
        }
        if let Some(extra) = by_id.keys().next() {
            return Err(Error::InvalidRecord {
                id: extra.to_string(),
                reason: "blob block has no backend descriptor in the manifest".into(),
            });
        }

        drop(face_ids);
        for (i, backend, n) in raw_norms {
            faces[i].raw_norms.insert(backend, n);
        }

        Ok(Self { corpus_id, split, backends, faces, images, blocks: kept, face_index, image_index, image_faces })
    }

    pub fn ingest(manifest_path: &Path, blob_path: &Path) -> Result<Self> {
        let manifest = CorpusManifest::load(manifest_path)?;
        let blocks = blob::read(blob_path)?;
        Self::from_parts(manifest, blocks)
    }

    /// Reads `manifest.json` and `embeddings.mide` from `dir`.
    pub fn ingest_dir(dir: &Path) -> Result<Self> {
        Self::ingest(&dir.join(MANIFEST_FILE), &dir.join(BLOB_FILE))
    }

    pub fn manifest(&self) -> CorpusManifest {
        CorpusManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            corpus_id: self.corpus_id.clone(),
            split: self.split,
            backends: self.backends.clone(),
            counts: self.counts(),
            images: self.images.clone(),
            faces: self.faces.clone(),
        }
    }

    pub fn export(&self, manifest_path: &Path, blob_path: &Path) -> Result<()> {
        let blocks: Vec<&EmbeddingMatrix<f32>> = self.backends.iter().map(|d| &self.blocks[&d.backend_id]).collect();
        blob::write(blob_path, &blocks)?;
        let json = serde_json::to_string_pretty(&self.manifest()).map_err(|e| Error::json(manifest_path, e))?;
        fs::write(manifest_path, json + "\n").map_err(|e| Error::io(manifest_path, e))
    }

    /// Writes `manifest.json` and `embeddings.mide` into `dir`, creating it.
    pub fn export_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.export(&dir.join(MANIFEST_FILE), &dir.join(BLOB_FILE))
    }

    pub fn corpus_id(&self) -> &str {
        &self.corpus_id
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn backends(&self) -> &[BackendDescriptor] {
        &self.backends
    }

    pub fn counts(&self) -> CorpusCounts {
        let mut ids: BTreeSet<&str> = self.image_faces.keys().map(String::as_str).collect();
        ids.extend(self.images.iter().map(|i| i.image_id.as_str()));
        CorpusCounts { images: ids.len() as u64, faces: self.faces.len() as u64 }
    }

    pub fn faces(&self) -> &[FaceRecord] {
        &self.faces
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn face_index(&self, face_id: &str) -> Option<usize> {
        self.face_index.get(face_id).copied()
    }

    pub fn face(&self, face_id: &str) -> Option<&FaceRecord> {
        self.face_index(face_id).map(|i| &self.faces[i])
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageRecord> {
        self.image_index.get(image_id).map(|&i| &self.images[i])
    }

    /// Face indices grouped by image id, images in lexicographic order.
    pub fn image_faces(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.image_faces
    }

    pub fn faces_of_image(&self, image_id: &str) -> &[usize] {
        self.image_faces.get(image_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn block(&self, backend: &str) -> Option<&EmbeddingMatrix<f32>> {
        self.blocks.get(backend)
    }

    fn scoped_block(&self, backend: &str, scope: Scope) -> Result<&EmbeddingMatrix<f32>> {
        let desc = self
            .backends
            .iter()
            .find(|d| d.backend_id.as_str() == backend)
            .ok_or_else(|| Error::UnknownId { kind: "backend", id: backend.to_owned() })?;
        if desc.scope != scope {
            return Err(Error::InvalidParameter {
                name: "backend",
                reason: format!("backend `{backend}` is {:?}-scoped, expected {scope:?}", desc.scope),
            });
        }
        Ok(&self.blocks[backend])
    }

    pub fn face_block(&self, backend: &str) -> Result<&EmbeddingMatrix<f32>> {
        self.scoped_block(backend, Scope::Face)
    }

    /// Unit-norm embedding of face `index` under `backend`.
    pub fn face_embedding(&self, index: usize, backend: &str) -> Result<&[f32]> {
        Ok(self.face_block(backend)?.row(index))
    }

    pub fn image_embedding(&self, image_id: &str, backend: &str) -> Result<Option<&[f32]>> {
        let block = self.scoped_block(backend, Scope::Image)?;
        Ok(self.image_index.get(image_id).map(|&i| block.row(i)))
    }

    /// Returns a copy with `identity_id` replaced per face index.
    pub fn with_identities(mut self, labels: impl IntoIterator<Item = (usize, Option<String>)>) -> Self {
        for (i, label) in labels {
            self.faces[i].identity_id = label;
        }
        self
    }

    pub fn with_split(mut self, split: SplitTag, corpus_id: impl Into<String>) -> Self {
        self.split = split;
        self.corpus_id = corpus_id.into();
        self
    }
}

/// Incremental construction of an in-memory corpus (fixtures, generated
/// data, sidecar-free tests).
#[derive(Debug)]
pub struct CorpusBuilder {
    corpus_id: String,
    split: SplitTag,
    backends: Vec<BackendDescriptor>,
    faces: Vec<FaceRecord>,
    images: Vec<ImageRecord>,
    data: BTreeMap<BackendId, Vec<f32>>,
}

impl CorpusBuilder {
    pub fn new(corpus_id: impl Into<String>, split: SplitTag) -> Self {
        Self {
            corpus_id: corpus_id.into(),
            split,
            backends: Vec::new(),
            faces: Vec::new(),
            images: Vec::new(),
            data: BTreeMap::new(),
        }
    }

    pub fn backend(mut self, id: impl Into<BackendId>, dimension: usize, scope: Scope) -> Self {
        let backend_id = id.into();
        self.data.insert(backend_id.clone(), Vec::new());
        self.backends.push(BackendDescriptor { backend_id, dimension, scope });
        self
    }

    fn push_rows(&mut self, scope: Scope, rows: &[(&str, &[f32])], owner: &str) -> Result<()> {
        for desc in self.backends.iter().filter(|d| d.scope == scope) {
            let (_, row) = rows.iter().find(|(b, _)| *b == desc.backend_id.as_str()).ok_or_else(|| {
                Error::InvalidRecord { id: owner.to_owned(), reason: format!("missing embedding for `{}`", desc.backend_id) }
            })?;
            if row.len() != desc.dimension {
                return Err(Error::DimensionMismatch { expected: desc.dimension, found: row.len() });
            }
            self.data.get_mut(&desc.backend_id).unwrap().extend_from_slice(row);
        }
        Ok(())
    }

    /// Adds a face with one embedding per face-scoped backend.
    pub fn push_face(&mut self, record: FaceRecord, embeddings: &[(&str, &[f32])]) -> Result<()> {
        self.push_rows(Scope::Face, embeddings, &record.face_id)?;
        self.faces.push(record);
        Ok(())
    }

    /// Adds an image record with one embedding per image-scoped backend.
    pub fn push_image(&mut self, record: ImageRecord, embeddings: &[(&str, &[f32])]) -> Result<()> {
        self.push_rows(Scope::Image, embeddings, &record.image_id)?;
        self.images.push(record);
        Ok(())
    }

    pub fn build(self) -> Result<Corpus> {
        let distinct: BTreeSet<&str> = self
            .faces
            .iter()
            .map(|f| f.image_id.as_str())
            .chain(self.images.iter().map(|i| i.image_id.as_str()))
            .collect();
        let counts = CorpusCounts { images: distinct.len() as u64, faces: self.faces.len() as u64 };
        let mut blocks = Vec::new();
        for d in &self.backends {
            blocks.push(EmbeddingMatrix::new(d.backend_id.clone(), d.dimension, self.data[&d.backend_id].clone())?);
        }
        Corpus::from_parts(
            CorpusManifest {
                schema_version: MANIFEST_SCHEMA_VERSION,
                corpus_id: self.corpus_id,
                split: self.split,
                backends: self.backends,
                counts,
                images: self.images,
                faces: self.faces,
            },
            blocks,
        )
    }
}

/// Minimal face record for fixtures: a 100×100 box at the origin with a
/// plausible landmark layout.
pub fn placeholder_face(face_id: impl Into<String>, image_id: impl Into<String>) -> FaceRecord {
    FaceRecord {
        face_id: face_id.into(),
        image_id: image_id.into(),
        bbox: BBox { x: 0.0, y: 0.0, w: 100.0, h: 100.0 },
        landmarks: Landmarks5 { points: [[30.0, 40.0], [70.0, 40.0], [50.0, 60.0], [35.0, 80.0], [65.0, 80.0]] },
        quality: None,
        identity_id: None,
        query_group: None,
        raw_norms: BTreeMap::new(),
    }
}

/// Resolves `path` against the data root: absolute paths pass through,
/// relative ones are joined onto `root` (or the `MULTIID_DATA_ROOT`
/// environment variable when `root` is `None`).
pub fn resolve_data_path(root: Option<&Path>, path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match root.map(Path::to_path_buf).or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from)) {
        Some(r) => r.join(path),
        None => path.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_face_fixture() -> Corpus {
        let mut b = CorpusBuilder::new("fixture", SplitTag::SingleId).backend("arcface", 3, Scope::Face);
        b.push_face(placeholder_face("f1", "img1"), &[("arcface", &[1.0, 0.0, 0.0])]).unwrap();
        b.push_face(placeholder_face("f2", "img2"), &[("arcface", &[0.0, 3.0, 4.0])]).unwrap();
        b.build().unwrap()
    }

    #[test]
    fn builds_and_normalizes() {
        let c = two_face_fixture();
        assert_eq!(c.counts(), CorpusCounts { images: 2, faces: 2 });
        let row = c.face_embedding(1, "arcface").unwrap();
        assert_eq!(row, &[0.0, 0.6, 0.8]);
        assert_eq!(c.faces()[1].raw_norms[&BackendId::from("arcface")], 5.0);
        assert!(c.faces()[0].raw_norms.is_empty());
    }

    #[test]
    fn nan_row_names_face() {
        let mut b = CorpusBuilder::new("c", SplitTag::SingleId).backend("arcface", 2, Scope::Face);
        b.push_face(placeholder_face("good", "i1"), &[("arcface", &[1.0, 0.0])]).unwrap();
        b.push_face(placeholder_face("bad", "i2"), &[("arcface", &[f32::NAN, 0.0])]).unwrap();
        match b.build() {
            Err(Error::NonFiniteEmbedding { face_id, .. }) => assert_eq!(face_id, "bad"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_face_rejected() {
        let mut b = CorpusBuilder::new("c", SplitTag::SingleId).backend("arcface", 2, Scope::Face);
        b.push_face(placeholder_face("dup", "i1"), &[("arcface", &[1.0, 0.0])]).unwrap();
        b.push_face(placeholder_face("dup", "i2"), &[("arcface", &[1.0, 0.0])]).unwrap();
        assert!(matches!(b.build(), Err(Error::DuplicateFaceId(id)) if id == "dup"));
    }

    #[test]
    fn row_count_mismatch() {
        let c = two_face_fixture();
        let block = EmbeddingMatrix::new("arcface", 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(Corpus::from_parts(c.manifest(), vec![block]), Err(Error::CountMismatch { .. })));
    }

    #[test]
    fn dimension_mismatch_and_missing_backend() {
        let c = two_face_fixture();
        let wrong = EmbeddingMatrix::new("arcface", 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(Corpus::from_parts(c.manifest(), vec![wrong]), Err(Error::BackendDimension { .. })));
        assert!(matches!(Corpus::from_parts(c.manifest(), vec![]), Err(Error::MissingBackend { .. })));
    }

    #[test]
    fn declared_counts_checked() {
        let c = two_face_fixture();
        let mut m = c.manifest();
        m.counts.images = 5;
        let block = c.block("arcface").unwrap().clone();
        assert!(matches!(Corpus::from_parts(m, vec![block]), Err(Error::CountMismatch { .. })));
    }

    #[test]
    fn bad_bbox_rejected() {
        let mut f = placeholder_face("f", "i");
        f.bbox.w = 0.0;
        let mut b = CorpusBuilder::new("c", SplitTag::SingleId).backend("arcface", 2, Scope::Face);
        b.push_face(f, &[("arcface", &[1.0, 0.0])]).unwrap();
        assert!(matches!(b.build(), Err(Error::InvalidRecord { .. })));
    }

    #[test]
    fn image_scope_blocks() {
        let mut b = CorpusBuilder::new("c", SplitTag::Bench)
            .backend("arcface", 2, Scope::Face)
            .backend("clip-image", 2, Scope::Image);
        b.push_face(placeholder_face("f", "img"), &[("arcface", &[1.0, 0.0])]).unwrap();
        b.push_image(
            ImageRecord { image_id: "img".into(), tags: vec![], quality: Some(5.5), prompt: Some("two people".into()) },
            &[("clip-image", &[0.0, 2.0])],
        )
        .unwrap();
        let c = b.build().unwrap();
        assert_eq!(c.counts().images, 1);
        assert_eq!(c.image_embedding("img", "clip-image").unwrap().unwrap(), &[0.0, 1.0]);
        assert!(c.image_embedding("missing", "clip-image").unwrap().is_none());
        assert!(c.image_embedding("img", "arcface").is_err());
        assert!(c.face_block("clip-image").is_err());
    }

    #[test]
    fn resolve_relative_paths() {
        let root = Path::new("/data");
        assert_eq!(resolve_data_path(Some(root), Path::new("a/b")), PathBuf::from("/data/a/b"));
        assert_eq!(resolve_data_path(Some(root), Path::new("/abs")), PathBuf::from("/abs"));
    }
}
