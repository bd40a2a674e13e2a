#![allow(dead_code)]
pub mod oracles;

use multiid::bank::{build_bank, cluster_corpus, BankParams, ReferenceBank};
use multiid::cluster::ClusterParams;
use multiid::retrieval::{apply_assignments, assign_corpus, RetrievalParams};
use multiid::store::Corpus;
use multiid::synth::{generate, SynthConfig};

/// A synthetic world run through clustering, bank building and assignment.
pub struct Pipeline {
    pub single: Corpus,
    pub multi: Corpus,
    pub bank: ReferenceBank<f32>,
}

pub fn pipeline(cfg: &SynthConfig) -> Pipeline {
    let world = generate(cfg).unwrap();
    let groups = cluster_corpus(&world.single_id, &cfg.face_backends[0], &ClusterParams::default()).unwrap();
    let (bank, _) = build_bank(&groups, &BankParams::default()).unwrap();
    let results = assign_corpus(&world.multi_id, &bank, &RetrievalParams::default()).unwrap();
    let multi = apply_assignments(world.multi_id, &results).unwrap();
    Pipeline { single: world.single_id, multi, bank }
}
