mod common;

use common::oracles;
use multiid::bank::{build_bank, cluster_corpus, BankMember, BankParams, ClusteredGroup, ReferenceBank, BANK_CENTROIDS_FILE, BANK_TABLE_FILE};
use multiid::cluster::{dbscan, dbscan_with, ClusterParams, Label};
use multiid::store::{placeholder_face, CorpusBuilder, Scope, SplitTag};
use multiid::synth::{at_similarity, random_unit, to_f32};
use multiid::{EmbeddingMatrix, Error};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cones(rng: &mut ChaCha8Rng, dim: usize, cones: usize, per: usize, outliers: usize) -> Vec<Vec<f64>> {
    let centers: Vec<_> = (0..cones).map(|_| random_unit(rng, dim)).collect();
    let mut pts = Vec::new();
    for c in &centers {
        for _ in 0..per {
            let s = rng.random_range(0.85..0.97);
            pts.push(at_similarity(rng, c, s));
        }
    }
    pts.extend((0..outliers).map(|_| random_unit(rng, dim)));
    // interleave so cluster numbering is not trivially by block
    for i in (1..pts.len()).rev() {
        pts.swap(i, rng.random_range(0..=i));
    }
    pts
}

fn as_options(labels: &[Label]) -> Vec<Option<usize>> {
    labels.iter().map(|l| match l { Label::Cluster(c) => Some(*c), Label::Noise => None }).collect()
}

#[test]
fn three_cones_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let pts = cones(&mut rng, 32, 3, 64, 10);
        let p = ClusterParams { eps: 0.35, min_pts: 4 };
        let got = dbscan(&pts, &p).unwrap();
        assert_eq!(as_options(got.labels()), oracles::dbscan(&pts, p.eps, p.min_pts));
        assert_eq!(got.cluster_count(), 3);
    }
}

#[test]
fn trivial_cases() {
    let one = [vec![1.0f64, 0.0]];
    let c = dbscan(&one, &ClusterParams { eps: 0.5, min_pts: 1 }).unwrap();
    assert_eq!(c.labels(), &[Label::Cluster(0)]);
    let anti = [vec![1.0f64, 0.0], vec![-1.0, 0.0]];
    let c = dbscan(&anti, &ClusterParams { eps: 0.5, min_pts: 1 }).unwrap();
    assert_eq!(c.labels(), &[Label::Cluster(0), Label::Cluster(1)]);
    let empty: [Vec<f64>; 0] = [];
    assert!(matches!(dbscan(&empty, &ClusterParams::default()), Err(Error::EmptyInput(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn partition_is_reference_and_scale_invariant(
        seed in any::<u64>(), n in 1usize..80, eps in 0.05f64..1.2, min_pts in 1usize..6, scale in 0.01f64..100.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = cones(&mut rng, 8, 2, n / 2, n - 2 * (n / 2));
        let p = ClusterParams { eps, min_pts };
        let a = dbscan(&pts, &p).unwrap();
        prop_assert_eq!(as_options(a.labels()), oracles::dbscan(&pts, eps, min_pts));
        prop_assert_eq!(&a, &dbscan_with(&pts, &p, true).unwrap());

        // clusters plus noise cover the input exactly once
        let mut seen: Vec<usize> = a.clusters().concat();
        seen.extend(a.noise());
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..pts.len()).collect::<Vec<_>>());

        // power-of-two rescaling is exact in floating point
        let k = 2f64.powi(scale.log2().round() as i32);
        let scaled: Vec<Vec<f64>> = pts.iter().map(|r| r.iter().map(|v| v * k).collect()).collect();
        prop_assert_eq!(&a, &dbscan(&scaled, &p).unwrap());
    }
}

fn group(id: &str, rows: Vec<Vec<f32>>, params: &ClusterParams) -> ClusteredGroup<f32> {
    let dim = rows[0].len();
    let clustering = dbscan(&rows, params).unwrap();
    let members = (0..rows.len()).map(|k| BankMember { face_id: format!("{id}-{k}"), image_id: format!("{id}-img{k}") }).collect();
    ClusteredGroup { identity_id: id.into(), members, embeddings: EmbeddingMatrix::new("arcface", dim, rows.concat()).unwrap(), clustering }
}

#[test]
fn centroid_examples() {
    let p = ClusterParams { eps: 1.5, min_pts: 1 };
    let e = to_f32(&random_unit(&mut ChaCha8Rng::seed_from_u64(2), 16));
    let (bank, _) = build_bank(&[group("a", vec![e.clone(); 5], &p)], &BankParams::default()).unwrap();
    let c = bank.centroids().row(0);
    assert!(c.iter().zip(&e).all(|(x, y)| (x - y).abs() < 1e-6));

    let (bank, _) =
        build_bank(&[group("b", vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], &p)], &BankParams { member_floor: None, ..Default::default() }).unwrap();
    let h = std::f32::consts::FRAC_1_SQRT_2;
    assert_eq!(bank.centroids().row(0), &[h, h, 0.0]);
    assert_eq!(bank.members_of(0).len(), 2);
}

#[test]
fn all_noise_identity_is_skipped() {
    let p = ClusterParams { eps: 0.1, min_pts: 3 };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noisy: Vec<_> = (0..3).map(|_| to_f32(&random_unit(&mut rng, 64))).collect();
    let good = vec![to_f32(&random_unit(&mut rng, 64)); 4];
    let (bank, report) = build_bank(&[group("n", noisy, &p), group("g", good, &p)], &BankParams::default()).unwrap();
    assert_eq!(bank.identity_count(), 1);
    assert_eq!(report.skipped.len(), 1);
    assert_eq!(report.skipped[0].identity_id, "n");
    assert_eq!(report.noise_faces, 3);
}

#[test]
fn fifty_identities_recover_generating_directions() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let dim = 128;
    let mut b = CorpusBuilder::new("single", SplitTag::SingleId).backend("arcface", dim, Scope::Face);
    let mut truth = Vec::new();
    for k in 0..50 {
        let id = format!("id-{k:02}");
        let dir = random_unit(&mut rng, dim);
        for j in 0..20 {
            let s = rng.random_range(0.85..0.95);
            let mut f = placeholder_face(format!("{id}-{j:02}"), format!("{id}-img{j:02}"));
            f.query_group = Some(id.clone());
            b.push_face(f, &[("arcface", &to_f32(&at_similarity(&mut rng, &dir, s)))]).unwrap();
        }
        // one stray face per query that should land in noise
        let mut f = placeholder_face(format!("{id}-zz"), format!("{id}-imgzz"));
        f.query_group = Some(id.clone());
        b.push_face(f, &[("arcface", &to_f32(&random_unit(&mut rng, dim)))]).unwrap();
        truth.push((id, dir));
    }
    let corpus = b.build().unwrap();
    let groups = cluster_corpus(&corpus, "arcface", &ClusterParams::default()).unwrap();
    let (bank, report) = build_bank(&groups, &BankParams::default()).unwrap();
    assert_eq!(bank.identity_count(), 50);
    assert_eq!(report.noise_faces, 50);
    let mut worst = 1.0f64;
    for (id, dir) in &truth {
        let i = bank.identity_index(id).unwrap();
        let c: Vec<f64> = bank.centroids().row(bank.identities()[i].centroids.start).iter().map(|&v| v as f64).collect();
        worst = worst.min(oracles::cos(&c, dir));
        assert_eq!(bank.members_of(i).len(), 20);
    }
    assert!(worst >= 0.99, "worst centroid cosine {worst}");
}

#[test]
fn secondary_clusters_are_flagged() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random_unit(&mut rng, 32);
    let b = random_unit(&mut rng, 32);
    let mut rows: Vec<Vec<f32>> = (0..8).map(|_| to_f32(&at_similarity(&mut rng, &a, 0.95))).collect();
    rows.extend((0..5).map(|_| to_f32(&at_similarity(&mut rng, &b, 0.95))));
    let g = group("x", rows, &ClusterParams { eps: 0.3, min_pts: 3 });
    let params = BankParams { keep_secondary: true, ..Default::default() };
    let (bank, report) = build_bank(&[g], &params).unwrap();
    assert_eq!(bank.centroids().rows(), 2);
    assert!(!bank.is_secondary(0) && bank.is_secondary(1));
    assert_eq!(report.secondary_centroids, 1);
}

#[test]
fn bank_save_load_and_corruption() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = ClusterParams { eps: 0.5, min_pts: 2 };
    let groups: Vec<_> = (0..5)
        .map(|k| {
            let d = random_unit(&mut rng, 16);
            group(&format!("id{k}"), (0..4).map(|_| to_f32(&at_similarity(&mut rng, &d, 0.9))).collect(), &p)
        })
        .collect();
    let (bank, _) = build_bank(&groups, &BankParams::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    bank.save(dir.path()).unwrap();
    assert_eq!(ReferenceBank::load(dir.path()).unwrap(), bank);

    let table = dir.path().join(BANK_TABLE_FILE);
    let text = std::fs::read_to_string(&table).unwrap();
    std::fs::write(&table, &text[..text.len() / 2]).unwrap();
    assert!(ReferenceBank::load(dir.path()).unwrap_err().is_data_error());
    std::fs::write(&table, text).unwrap();

    let blob = dir.path().join(BANK_CENTROIDS_FILE);
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
    assert!(ReferenceBank::load(dir.path()).unwrap_err().is_data_error());
}

#[test]
fn summaries_rebuild_the_clustering() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut b = CorpusBuilder::new("s", SplitTag::SingleId).backend("arcface", 16, Scope::Face);
    for k in 0..4 {
        let d = random_unit(&mut rng, 16);
        for j in 0..9 {
            let mut f = placeholder_face(format!("q{k}-{j}"), format!("q{k}-i{j}"));
            f.query_group = Some(format!("q{k}"));
            let v = if j == 8 { random_unit(&mut rng, 16) } else { at_similarity(&mut rng, &d, 0.9) };
            b.push_face(f, &[("arcface", &to_f32(&v))]).unwrap();
        }
    }
    let corpus = b.build().unwrap();
    let groups = cluster_corpus(&corpus, "arcface", &ClusterParams::default()).unwrap();
    for g in &groups {
        let json = serde_json::to_string(&g.summary()).unwrap();
        let back = ClusteredGroup::from_summary(&corpus, "arcface", &serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.clustering, g.clustering);
        assert_eq!(back.members, g.members);
        assert_eq!(back.embeddings, g.embeddings);
    }
    let mut stale = groups[0].summary();
    stale.noise.clear();
    assert!(ClusteredGroup::from_summary(&corpus, "arcface", &stale).is_err());
}
