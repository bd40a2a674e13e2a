//! Identity reference bank: per-identity centroids plus member reference
//! faces, built from DBSCAN-clustered single-ID query groups.
//!
//! On disk a bank is three files: `bank.json` (identity table),
//! `bank.centroids.mide` and `bank.members.mide` (one block each, keyed by the
//! clustering backend).

use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{dbscan_with, ClusterParams, Clustering, Label};
use crate::embedding::{dot, norm, BackendId, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::store::{blob, Corpus};

pub const BANK_TABLE_FILE: &str = "bank.json";
pub const BANK_CENTROIDS_FILE: &str = "bank.centroids.mide";
pub const BANK_MEMBERS_FILE: &str = "bank.members.mide";
pub const BANK_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankParams {
    /// Keep a flagged centroid for every non-largest cluster of at least
    /// `min_secondary_size` members.
    pub keep_secondary: bool,
    pub min_secondary_size: usize,
    /// Members whose cosine to their centroid falls below this are dropped.
    pub member_floor: Option<f64>,
}

impl Default for BankParams {
    fn default() -> Self {
        Self { keep_secondary: false, min_secondary_size: 4, member_floor: Some(0.5) }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankMember {
    pub face_id: String,
    pub image_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdentityEntry {
    pub identity_id: String,
    pub centroids: Range<usize>,
    pub members: Range<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceBank<T> {
    identities: Vec<IdentityEntry>,
    centroids: EmbeddingMatrix<T>,
    centroid_secondary: Vec<bool>,
    centroid_sizes: Vec<usize>,
    centroid_owner: Vec<usize>,
    members: EmbeddingMatrix<T>,
    member_info: Vec<BankMember>,
    member_owner: Vec<usize>,
}

/// One identity's contents, used to assemble a bank directly.
#[derive(Clone, Debug)]
pub struct IdentitySpec<T> {
    pub identity_id: String,
    /// `(unit-norm centroid, secondary flag, cluster size)`.
    pub centroids: Vec<(Vec<T>, bool, usize)>,
    pub members: Vec<(BankMember, Vec<T>)>,
}

impl<T> ReferenceBank<T> {
    pub fn identity_count(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }

    /// Identities sorted by id.
    pub fn identities(&self) -> &[IdentityEntry] {
        &self.identities
    }

    pub fn identity_index(&self, identity_id: &str) -> Option<usize> {
        self.identities.binary_search_by(|e| e.identity_id.as_str().cmp(identity_id)).ok()
    }

    /// Identity index owning each centroid row.
    pub fn centroid_owner(&self) -> &[usize] {
        &self.centroid_owner
    }

    pub fn is_secondary(&self, centroid_row: usize) -> bool {
        self.centroid_secondary[centroid_row]
    }

    pub fn member_info(&self) -> &[BankMember] {
        &self.member_info
    }

    pub fn member_owner(&self) -> &[usize] {
        &self.member_owner
    }

    pub fn members_of(&self, identity: usize) -> &[BankMember] {
        &self.member_info[self.identities[identity].members.clone()]
    }
}

impl<T: Scalar> ReferenceBank<T> {
    /// Assembles a bank, sorting identities by id and checking that every
    /// centroid is unit-norm.
    pub fn from_specs(backend: impl Into<BackendId>, dim: usize, mut specs: Vec<IdentitySpec<T>>) -> Result<Self> {
        let backend = backend.into();
        specs.sort_by(|a, b| a.identity_id.cmp(&b.identity_id));
        if let Some(w) = specs.windows(2).find(|w| w[0].identity_id == w[1].identity_id) {
            return Err(Error::InvalidRecord { id: w[0].identity_id.clone(), reason: "duplicate identity".into() });
        }
        let mut bank = Self {
            identities: Vec::with_capacity(specs.len()),
            centroids: EmbeddingMatrix::empty(backend.clone(), dim),
            centroid_secondary: Vec::new(),
            centroid_sizes: Vec::new(),
            centroid_owner: Vec::new(),
            members: EmbeddingMatrix::empty(backend, dim),
            member_info: Vec::new(),
            member_owner: Vec::new(),
        };
        let tol = T::lit(1e-4);
        for (idx, spec) in specs.into_iter().enumerate() {
            if spec.centroids.is_empty() {
                return Err(Error::InvalidRecord { id: spec.identity_id, reason: "identity has no centroid".into() });
            }
            let c0 = bank.centroid_owner.len();
            for (c, secondary, size) in &spec.centroids {
                if (norm(c) - T::one()).abs() > tol {
                    return Err(Error::InvalidRecord {
                        id: spec.identity_id.clone(),
                        reason: "centroid is not unit-norm".into(),
                    });
                }
                bank.centroids.push_row(c)?;
                bank.centroid_secondary.push(*secondary);
                bank.centroid_sizes.push(*size);
                bank.centroid_owner.push(idx);
            }
            let m0 = bank.member_info.len();
            for (info, e) in spec.members {
                bank.members.push_row(&e)?;
                bank.member_info.push(info);
                bank.member_owner.push(idx);
            }
            bank.identities.push(IdentityEntry {
                identity_id: spec.identity_id,
                centroids: c0..bank.centroid_owner.len(),
                members: m0..bank.member_info.len(),
            });
        }
        Ok(bank)
    }

    pub fn backend(&self) -> &BackendId {
        self.centroids.backend()
    }

    pub fn dim(&self) -> usize {
        self.centroids.dim()
    }

    pub fn centroids(&self) -> &EmbeddingMatrix<T> {
        &self.centroids
    }

    pub fn members(&self) -> &EmbeddingMatrix<T> {
        &self.members
    }

    pub fn cast<U: Scalar>(&self) -> ReferenceBank<U> {
        ReferenceBank {
            identities: self.identities.clone(),
            centroids: self.centroids.cast(),
            centroid_secondary: self.centroid_secondary.clone(),
            centroid_sizes: self.centroid_sizes.clone(),
            centroid_owner: self.centroid_owner.clone(),
            members: self.members.cast(),
            member_info: self.member_info.clone(),
            member_owner: self.member_owner.clone(),
        }
    }
}

/// A single identity query group after clustering.
#[derive(Clone, Debug)]
pub struct ClusteredGroup<T> {
    pub identity_id: String,
    pub members: Vec<BankMember>,
    /// Rows aligned with `members`.
    pub embeddings: EmbeddingMatrix<T>,
    pub clustering: Clustering,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SkippedIdentity {
    pub identity_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BankReport {
    pub identity_count: usize,
    pub centroid_count: usize,
    pub secondary_centroids: usize,
    pub member_count: usize,
    pub noise_faces: usize,
    pub dropped_members: usize,
    pub skipped: Vec<SkippedIdentity>,
}

fn normalized_mean<T: Scalar>(rows: &EmbeddingMatrix<T>, idx: &[usize]) -> Option<Vec<T>> {
    let mut acc = vec![0.0f64; rows.dim()];
    for &i in idx {
        let r = rows.row(i);
        let n = norm(r).as_f64();
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v.as_f64() / n;
        }
    }
    let n = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0) {
        return None;
    }
    Some(acc.iter().map(|v| T::lit(v / n)).collect())
}

/// Builds the bank: per identity, the largest cluster's normalized mean is
/// the primary centroid; secondary clusters optionally add flagged centroids.
pub fn build_bank<T: Scalar>(groups: &[ClusteredGroup<T>], params: &BankParams) -> Result<(ReferenceBank<T>, BankReport)> {
    let first = groups.first().ok_or(Error::EmptyInput("no clustered groups"))?;
    let backend = first.embeddings.backend().clone();
    let dim = first.embeddings.dim();
    let mut report = BankReport::default();
    let mut specs = Vec::new();

    for g in groups {
        if g.embeddings.backend() != &backend || g.embeddings.dim() != dim {
            return Err(Error::BackendMismatch { left: backend.to_string(), right: g.embeddings.backend().to_string() });
        }
        report.noise_faces += g.clustering.labels().iter().filter(|l| **l == Label::Noise).count();
        let by_size = g.clustering.clusters_by_size();
        let Some((_, largest)) = by_size.first().filter(|(_, m)| !m.is_empty()) else {
            log::warn!("identity `{}` has no cluster; skipped", g.identity_id);
            report.skipped.push(SkippedIdentity {
                identity_id: g.identity_id.clone(),
                reason: "largest cluster is empty (all faces are noise)".into(),
            });
            continue;
        };

        let mut chosen = vec![(largest.clone(), false)];
        if params.keep_secondary {
            chosen.extend(
                by_size[1..].iter().filter(|(_, m)| m.len() >= params.min_secondary_size).map(|(_, m)| (m.clone(), true)),
            );
        }

        let mut spec = IdentitySpec { identity_id: g.identity_id.clone(), centroids: vec![], members: vec![] };
        for (members, secondary) in chosen {
            let Some(centroid) = normalized_mean(&g.embeddings, &members) else {
                continue;
            };
            for &m in &members {
                let row = g.embeddings.row(m);
                let sim = dot(row, &centroid) / norm(row);
                if params.member_floor.is_some_and(|f| sim.as_f64() < f) {
                    report.dropped_members += 1;
                    continue;
                }
                spec.members.push((g.members[m].clone(), row.to_vec()));
            }
            report.secondary_centroids += secondary as usize;
            spec.centroids.push((centroid, secondary, members.len()));
        }
        if spec.centroids.is_empty() {
            report.skipped.push(SkippedIdentity {
                identity_id: g.identity_id.clone(),
                reason: "cluster mean vanished".into(),
            });
            continue;
        }
        specs.push(spec);
    }

    let bank = ReferenceBank::from_specs(backend, dim, specs)?;
    report.identity_count = bank.identity_count();
    report.centroid_count = bank.centroids.rows();
    report.member_count = bank.member_info.len();
    Ok((bank, report))
}

/// Clustering summary of one query group, as written to `clusters.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupClusters {
    pub identity_id: String,
    /// Face ids per cluster, cluster 0 first.
    pub clusters: Vec<Vec<String>>,
    pub noise: Vec<String>,
    /// Core points, in member order.
    pub core: Vec<String>,
}

/// Runs DBSCAN per `query_group` of a single-ID corpus. Groups are processed
/// in parallel and returned sorted by identity id. Faces without a query
/// group are ignored.
pub fn cluster_corpus(
    corpus: &Corpus,
    backend: &str,
    params: &ClusterParams,
) -> Result<Vec<ClusteredGroup<f32>>> {
    params.validate()?;
    let block = corpus.face_block(backend)?;
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, f) in corpus.faces().iter().enumerate() {
        if let Some(q) = &f.query_group {
            groups.entry(q.as_str()).or_default().push(i);
        }
    }
    groups
        .into_par_iter()
        .map(|(id, idx)| {
            // `from_summary` relies on this member order
            let embeddings = block.select(&idx);
            let rows: Vec<&[f32]> = embeddings.iter_rows().collect();
            let clustering = dbscan_with(&rows, params, false)?;
            let members = idx
                .iter()
                .map(|&i| {
                    let f = &corpus.faces()[i];
                    BankMember { face_id: f.face_id.clone(), image_id: f.image_id.clone() }
                })
                .collect();
            Ok(ClusteredGroup { identity_id: id.to_owned(), members, embeddings, clustering })
        })
        .collect()
}

impl<T> ClusteredGroup<T> {
    pub fn summary(&self) -> GroupClusters {
        let mut clusters = vec![Vec::new(); self.clustering.cluster_count()];
        let mut noise = Vec::new();
        for (m, l) in self.members.iter().zip(self.clustering.labels()) {
            match l {
                Label::Cluster(c) => clusters[*c].push(m.face_id.clone()),
                Label::Noise => noise.push(m.face_id.clone()),
            }
        }
        let core = (0..self.members.len())
            .filter(|&i| self.clustering.is_core(i))
            .map(|i| self.members[i].face_id.clone())
            .collect();
        GroupClusters { identity_id: self.identity_id.clone(), clusters, noise, core }
    }
}

impl ClusteredGroup<f32> {
    /// Inverse of [`ClusteredGroup::summary`] against the corpus the summary
    /// was computed on. The summary must cover exactly the faces of its
    /// query group.
    pub fn from_summary(corpus: &Corpus, backend: &str, summary: &GroupClusters) -> Result<Self> {
        let block = corpus.face_block(backend)?;
        let idx: Vec<usize> = corpus
            .faces()
            .iter()
            .enumerate()
            .filter(|(_, f)| f.query_group.as_deref() == Some(summary.identity_id.as_str()))
            .map(|(i, _)| i)
            .collect();
        let mut label_of: BTreeMap<&str, Label> = BTreeMap::new();
        for (c, faces) in summary.clusters.iter().enumerate() {
            label_of.extend(faces.iter().map(|f| (f.as_str(), Label::Cluster(c))));
        }
        label_of.extend(summary.noise.iter().map(|f| (f.as_str(), Label::Noise)));
        let stale = || Error::InvalidRecord {
            id: summary.identity_id.clone(),
            reason: "cluster summary does not match the corpus query group".into(),
        };
        if label_of.len() != idx.len() {
            return Err(stale());
        }
        let core: std::collections::BTreeSet<&str> = summary.core.iter().map(String::as_str).collect();
        let mut labels = Vec::with_capacity(idx.len());
        let mut is_core = Vec::with_capacity(idx.len());
        let mut members = Vec::with_capacity(idx.len());
        for &i in &idx {
            let f = &corpus.faces()[i];
            labels.push(*label_of.get(f.face_id.as_str()).ok_or_else(stale)?);
            is_core.push(core.contains(f.face_id.as_str()));
            members.push(BankMember { face_id: f.face_id.clone(), image_id: f.image_id.clone() });
        }
        Ok(Self {
            identity_id: summary.identity_id.clone(),
            members,
            embeddings: block.select(&idx),
            clustering: Clustering::from_parts(labels, is_core)?,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CentroidRow {
    row: usize,
    secondary: bool,
    cluster_size: usize,
}

#[derive(Serialize, Deserialize)]
struct MemberRow {
    face_id: String,
    image_id: String,
    row: usize,
}

#[derive(Serialize, Deserialize)]
struct IdentityRow {
    identity_id: String,
    centroids: Vec<CentroidRow>,
    members: Vec<MemberRow>,
}

#[derive(Serialize, Deserialize)]
struct BankTable {
    schema_version: u32,
    backend_id: BackendId,
    dimension: usize,
    identity_count: usize,
    identities: Vec<IdentityRow>,
}

impl ReferenceBank<f32> {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        blob::write(&dir.join(BANK_CENTROIDS_FILE), &[&self.centroids])?;
        blob::write(&dir.join(BANK_MEMBERS_FILE), &[&self.members])?;
        let table = BankTable {
            schema_version: BANK_SCHEMA_VERSION,
            backend_id: self.backend().clone(),
            dimension: self.dim(),
            identity_count: self.identity_count(),
            identities: self
                .identities
                .iter()
                .map(|e| IdentityRow {
                    identity_id: e.identity_id.clone(),
                    centroids: e
                        .centroids
                        .clone()
                        .map(|r| CentroidRow {
                            row: r,
                            secondary: self.centroid_secondary[r],
                            cluster_size: self.centroid_sizes[r],
                        })
                        .collect(),
                    members: e
                        .members
                        .clone()
                        .map(|r| MemberRow {
                            face_id: self.member_info[r].face_id.clone(),
                            image_id: self.member_info[r].image_id.clone(),
                            row: r,
                        })
                        .collect(),
                })
                .collect(),
        };
        let path = dir.join(BANK_TABLE_FILE);
        let json = serde_json::to_string_pretty(&table).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(BANK_TABLE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let table: BankTable = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        if table.schema_version != BANK_SCHEMA_VERSION {
            return Err(Error::InvalidRecord {
                id: path.display().to_string(),
                reason: format!("unsupported bank schema_version {}", table.schema_version),
            });
        }
        let single_block = |file: &str| -> Result<EmbeddingMatrix<f32>> {
            let p = dir.join(file);
            let mut blocks = blob::read(&p)?;
            if blocks.len() != 1 {
                return Err(Error::MalformedBlob { path: p, reason: format!("expected 1 block, found {}", blocks.len()) });
            }
            let b = blocks.pop().unwrap();
            if b.backend() != &table.backend_id {
                return Err(Error::BackendMismatch { left: table.backend_id.to_string(), right: b.backend().to_string() });
            }
            if b.dim() != table.dimension {
                return Err(Error::BackendDimension {
                    backend: table.backend_id.to_string(),
                    declared: table.dimension,
                    found: b.dim(),
                });
            }
            Ok(b)
        };
        let centroids = single_block(BANK_CENTROIDS_FILE)?;
        let members = single_block(BANK_MEMBERS_FILE)?;
        if table.identity_count != table.identities.len() {
            return Err(Error::CountMismatch {
                what: "bank identities".into(),
                declared: table.identity_count as u64,
                found: table.identities.len() as u64,
            });
        }
        let row_of = |m: &EmbeddingMatrix<f32>, r: usize, what: &str| -> Result<Vec<f32>> {
            if r >= m.rows() {
                return Err(Error::InvalidRecord { id: what.to_owned(), reason: format!("row {r} out of range") });
            }
            Ok(m.row(r).to_vec())
        };
        let mut specs = Vec::with_capacity(table.identities.len());
        for id in table.identities {
            let mut spec = IdentitySpec { identity_id: id.identity_id.clone(), centroids: vec![], members: vec![] };
            for c in id.centroids {
                spec.centroids.push((row_of(&centroids, c.row, &id.identity_id)?, c.secondary, c.cluster_size));
            }
            for m in id.members {
                spec.members.push((
                    BankMember { face_id: m.face_id, image_id: m.image_id },
                    row_of(&members, m.row, &id.identity_id)?,
                ));
            }
            specs.push(spec);
        }
        let bank = Self::from_specs(table.backend_id, table.dimension, specs)?;
        if bank.centroids.rows() != centroids.rows() || bank.members.rows() != members.rows() {
            return Err(Error::CountMismatch {
                what: "bank rows".into(),
                declared: (bank.centroids.rows() + bank.members.rows()) as u64,
                found: (centroids.rows() + members.rows()) as u64,
            });
        }
        Ok(bank)
    }
}
