mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::pipeline;
use multiid::bank::{BankMember, IdentitySpec, ReferenceBank};
use multiid::dataset::{
    build_negative_pool, build_pairs, corpus_stats, sample_training_batch, split_bench, BatchSampler, BenchParams, ItemKind,
};
use multiid::store::{placeholder_face, Corpus, CorpusBuilder, Scope, SplitTag};
use multiid::synth::{generate, SynthConfig};
use multiid::Error;
use proptest::prelude::*;

fn cfg(seed: u64) -> SynthConfig {
    SynthConfig { seed, identities: 30, multi_images: 150, ..Default::default() }
}

/// Identities per image, computed straight from face records.
fn identities_by_image(c: &Corpus) -> BTreeMap<String, BTreeSet<String>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for f in c.faces() {
        let e = out.entry(f.image_id.clone()).or_default();
        if let Some(id) = &f.identity_id {
            e.insert(id.clone());
        }
    }
    out
}

#[test]
fn pairs_respect_reference_rules() {
    let p = pipeline(&cfg(1));
    let pairing = build_pairs(&p.multi, &p.bank, 9);
    assert!(!pairing.paired.is_empty());
    let mut covered: Vec<&str> = pairing.paired.iter().map(|s| s.target_image_id.as_str()).collect();
    covered.extend(pairing.unpaired.iter().map(|u| u.image_id.as_str()));
    covered.sort_unstable();
    let all: Vec<&str> = p.multi.image_faces().keys().map(String::as_str).collect();
    assert_eq!(covered, all);

    for s in &pairing.paired {
        for pi in &s.identities {
            assert_ne!(pi.reference_image_id, s.target_image_id);
            let idx = p.bank.identity_index(&pi.identity_id).unwrap();
            assert!(p.bank.members_of(idx).iter().any(|m| m.face_id == pi.reference_face_id && m.image_id == pi.reference_image_id));
            let t = &p.multi.faces()[p.multi.face_index(&pi.target_face_id).unwrap()];
            assert_eq!(t.identity_id.as_deref(), Some(pi.identity_id.as_str()));
        }
    }
    assert_eq!(build_pairs(&p.multi, &p.bank, 9), pairing);
    assert_ne!(build_pairs(&p.multi, &p.bank, 10), pairing);
}

fn tiny_bank(members: &[(&str, &[(&str, &str)])]) -> ReferenceBank<f32> {
    let specs = members
        .iter()
        .enumerate()
        .map(|(k, (id, ms))| {
            let mut v = vec![0.0f32; 4];
            v[k % 4] = 1.0;
            IdentitySpec {
                identity_id: (*id).into(),
                centroids: vec![(v.clone(), false, ms.len())],
                members: ms.iter().map(|(f, i)| (BankMember { face_id: (*f).into(), image_id: (*i).into() }, v.clone())).collect(),
            }
        })
        .collect();
    ReferenceBank::from_specs("arcface", 4, specs).unwrap()
}

#[test]
fn pairing_exclusions() {
    let bank = tiny_bank(&[
        ("solo", &[("s1", "a")]),
        ("local", &[("l1", "img"), ("l2", "img")]),
        ("ok", &[("o1", "x"), ("o2", "y")]),
    ]);
    let mut b = CorpusBuilder::new("m", SplitTag::MultiId).backend("arcface", 4, Scope::Face);
    for (face, img, id) in [("f1", "img", "local"), ("f2", "one", "solo"), ("f3", "good", "ok"), ("f4", "none", "")] {
        let mut r = placeholder_face(face, img);
        r.identity_id = (!id.is_empty()).then(|| id.to_string());
        b.push_face(r, &[("arcface", &[1.0, 0.0, 0.0, 0.0])]).unwrap();
    }
    let pairing = build_pairs(&b.build().unwrap(), &bank, 0);
    assert_eq!(pairing.paired.len(), 1);
    assert_eq!(pairing.paired[0].target_image_id, "good");
    let reasons: BTreeMap<&str, &str> = pairing.unpaired.iter().map(|u| (u.image_id.as_str(), u.reason.as_str())).collect();
    assert_eq!(reasons.len(), 3);
    assert!(reasons["img"].contains("0 outside"));
    assert!(reasons["one"].contains("1 references"));
    assert!(reasons["none"].contains("no identified"));
}

#[test]
fn split_has_no_leakage_and_is_reproducible() {
    for seed in 0..5 {
        let p = pipeline(&cfg(seed));
        let params = BenchParams { tail_identities: 10, sample_count: 40, seed, ..Default::default() };
        let split = split_bench(&p.multi, &p.bank, &params).unwrap();
        let bench: BTreeSet<String> = split.bench_identities.iter().cloned().collect();
        assert!(split.training_identities(&p.multi).is_disjoint(&bench));

        let by_image = identities_by_image(&p.multi);
        for s in &split.samples {
            assert!(by_image[&s.gt_image_id].is_subset(&bench));
            assert!((1..=4).contains(&s.identity_count()));
            for r in &s.references {
                assert!(r.reference_image_ids.iter().all(|i| *i != s.gt_image_id));
            }
        }
        // selected identities are the 10 rarest with references
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for ids in by_image.values() {
            for id in ids {
                *counts.entry(id.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(u64, &str)> =
            counts.iter().filter(|(id, _)| p.bank.identity_index(id).is_some()).map(|(id, c)| (*c, *id)).collect();
        ranked.sort_unstable();
        let want: Vec<String> = ranked[..10].iter().map(|(_, id)| id.to_string()).collect::<BTreeSet<_>>().into_iter().collect();
        assert_eq!(split.selected_identities, want);

        assert_eq!(split_bench(&p.multi, &p.bank, &params).unwrap(), split);
        let images: BTreeSet<&String> = split.training_image_ids.iter().chain(&split.excluded_image_ids).chain(split.samples.iter().map(|s| &s.gt_image_id)).collect();
        assert_eq!(images.len(), by_image.len());
    }
}

#[test]
fn split_errors() {
    let p = pipeline(&cfg(3));
    let params = BenchParams { tail_identities: 10_000, ..Default::default() };
    assert!(matches!(split_bench(&p.multi, &p.bank, &params), Err(Error::InsufficientIdentities { requested: 10_000, .. })));
}

#[test]
fn sampler_edges_and_rate() {
    let paired = [(); 10];
    let unpaired = [(); 5];
    let all_recon = sample_training_batch(&paired, &unpaired, 0.0, 64, 1).unwrap();
    assert!(all_recon.items.iter().all(|i| i.kind == ItemKind::Reconstruction && i.index < 5));
    let all_paired = sample_training_batch(&paired, &unpaired, 1.0, 64, 1).unwrap();
    assert!(all_paired.items.iter().all(|i| i.kind == ItemKind::Paired && i.index < 10));
    assert!(sample_training_batch(&paired, &[(); 0], 1.0, 8, 0).is_ok());
    assert!(sample_training_batch(&[(); 0], &unpaired, 0.5, 8, 0).is_err());
    assert!(sample_training_batch(&paired, &unpaired, 1.5, 8, 0).is_err());
    assert!(sample_training_batch(&paired, &unpaired, 0.5, 0, 0).is_err());

    let mut s = BatchSampler::new(100, 100, 0.5, 32, 7).unwrap();
    let paired: usize = (0..10_000).map(|_| s.next_batch().paired_count()).sum();
    let frac = paired as f64 / 320_000.0;
    assert!((frac - 0.5).abs() < 0.02, "{frac}");
}

#[test]
fn negative_pools_exclude_the_anchor() {
    let p = pipeline(&cfg(4));
    let bank = &p.bank;
    for (k, e) in bank.identities().iter().enumerate() {
        let pool = build_negative_pool(Some(&e.identity_id), bank, 50, k as u64).unwrap();
        assert!(pool.iter().count() == pool.len());
        assert!((0..pool.len()).all(|j| pool.identity_of(j) != e.identity_id));
        let distinct: BTreeSet<usize> = pool.member_rows().iter().copied().collect();
        assert_eq!(distinct.len(), pool.len());
        assert!(!pool.member_rows().iter().any(|r| e.members.contains(r)));
    }

    let two = tiny_bank(&[("a", &[("a1", "i1"), ("a2", "i2")]), ("b", &[("b1", "i3"), ("b2", "i4"), ("b3", "i5")])]);
    let pool = build_negative_pool(Some("a"), &two, 10, 0).unwrap();
    assert_eq!(pool.len(), 3);
    assert!(pool.truncated());
    assert!((0..3).all(|j| pool.identity_of(j) == "b"));
    assert_eq!(build_negative_pool(None, &two, 10, 0).unwrap().len(), 5);
    assert!(build_negative_pool(Some("a"), &two, 0, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn negative_pool_sampling_is_uniform_subset(size in 1usize..20, seed in any::<u64>(), anchor in 0usize..3) {
        let bank = tiny_bank(&[
            ("a", &[("a1", "1"), ("a2", "2"), ("a3", "3")]),
            ("b", &[("b1", "4"), ("b2", "5")]),
            ("c", &[("c1", "6"), ("c2", "7"), ("c3", "8"), ("c4", "9")]),
        ]);
        let id = ["a", "b", "c"][anchor];
        let pool = build_negative_pool(Some(id), &bank, size, seed).unwrap();
        let eligible = 9 - bank.members_of(anchor).len();
        prop_assert_eq!(pool.len(), size.min(eligible));
        prop_assert!((0..pool.len()).all(|j| pool.identity_of(j) != id));
        let again = build_negative_pool(Some(id), &bank, size, seed).unwrap();
        prop_assert_eq!(again.member_rows(), pool.member_rows());
    }
}

#[test]
fn zipf_statistics_match_generation() {
    let world = generate(&SynthConfig { seed: 6, identities: 50, multi_images: 400, distractor_rate: 0.0, ..Default::default() }).unwrap();
    let labels: Vec<(usize, Option<String>)> =
        world.multi_id.faces().iter().enumerate().map(|(i, f)| (i, world.truth[&f.face_id].clone())).collect();
    let labeled = world.multi_id.clone().with_identities(labels);
    let stats = corpus_stats::<f32>(&labeled, None);
    let nonzero: BTreeMap<String, u64> = world.appearances.iter().filter(|(_, &c)| c > 0).map(|(k, v)| (k.clone(), *v)).collect();
    assert_eq!(stats.identity_appearances, nonzero);
    assert_eq!(stats.face_count, labeled.faces().len() as u64);
    assert_eq!(stats.faces_per_image.values().sum::<u64>(), stats.image_count);
    // heavy head: the most frequent identity clearly dominates the median
    let mut counts: Vec<u64> = nonzero.values().copied().collect();
    counts.sort_unstable();
    assert!(counts[counts.len() - 1] >= 3 * counts[counts.len() / 2]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stats.csv");
    stats.write_csv(&path).unwrap();
    let mut rdr = csv::Reader::from_path(&path).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["section", "key", "value"]);
    assert!(rdr.records().count() > 3);
}
