mod common;

use std::cell::RefCell;

use common::oracles;
use multiid::align::{CropTemplate, Landmarks5, SimilarityTransform};
use multiid::losses::{
    attention_weights, contrastive_loss, flow_loss, grad_check, gt_aligned_embed, gt_aligned_id_loss, gt_aligned_transform,
    id_loss, inject, total_loss, AlignedEmbedder, Denominator, FlowSample, GradCheckInput, InjectionConfig, LossWeights,
    Reduction, DEFAULT_EPSILON, MASK_SENTINEL,
};
use multiid::matrix::Matrix;
use multiid::synth::{at_similarity, random_unit};
use multiid::{Embedding, Error};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gauss(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[test]
fn randomized_gradient_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = [0.0f64; 3];
    for _ in 0..100 {
        let d = rng.random_range(2..64);
        let reduction = if rng.random_bool(0.5) { Reduction::Sum } else { Reduction::Mean };
        let cases = [
            GradCheckInput::Flow { x0: gauss(&mut rng, d), x1: gauss(&mut rng, d), t: rng.random_range(0.0..1.0), prediction: gauss(&mut rng, d), reduction },
            GradCheckInput::Id { g: gauss(&mut rng, d), t: gauss(&mut rng, d) },
            GradCheckInput::Contrastive {
                g: gauss(&mut rng, d),
                r: gauss(&mut rng, d),
                negatives: (0..rng.random_range(1..32)).map(|_| gauss(&mut rng, d)).collect(),
                tau: rng.random_range(0.05..1.0),
                denominator: if rng.random_bool(0.5) { Denominator::WithPositive } else { Denominator::NegativesOnly },
            },
        ];
        for (k, c) in cases.iter().enumerate() {
            worst[k] = worst[k].max(grad_check(c, DEFAULT_EPSILON).unwrap());
        }
    }
    assert!(worst.iter().all(|&w| w < 1e-4), "{worst:?}");
}

#[test]
fn closed_forms() {
    let tau = 0.07f64;
    let e = |i: usize| {
        let mut v = vec![0.0; 8];
        v[i] = 1.0;
        v
    };
    let negs: Vec<Vec<f64>> = (1..8).map(e).collect();
    let got = contrastive_loss(&e(0), &e(0), &negs, tau, Denominator::WithPositive).unwrap();
    let want = -((1.0 / tau).exp() / ((1.0 / tau).exp() + 7.0)).ln();
    assert!((got - want).abs() < 1e-9);

    let x0 = [1.0, 2.0];
    let x1 = [3.0, -1.0];
    let s = FlowSample { x0: &x0, x1: &x1, t: 0.25, prediction: &[0.0, 0.0] };
    // target velocity x1 - x0 = (2, -3)
    assert!((flow_loss(&s, Reduction::Sum).unwrap() - 13.0f64).abs() < 1e-12);
    assert!((flow_loss(&s, Reduction::Mean).unwrap() - 6.5f64).abs() < 1e-12);

    assert!((id_loss(&[1.0, 0.0], &[0.6, 0.8]).unwrap() - 0.4f64).abs() < 1e-12);
    let w = LossWeights::default();
    assert!((total_loss(1.0, 0.5, 2.0, &w).unwrap() - 1.25).abs() < 1e-12);
}

#[test]
fn info_nce_matches_naive_with_many_negatives() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for tau in [0.05, 0.07, 0.2, 1.0] {
        let g = random_unit(&mut rng, 128);
        let r = at_similarity(&mut rng, &g, 0.7);
        let negs: Vec<Vec<f64>> = (0..4096).map(|_| gauss(&mut rng, 128)).collect();
        let got = contrastive_loss(&g, &r, &negs, tau, Denominator::WithPositive).unwrap();
        let want = oracles::info_nce(&g, &r, &negs, tau);
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "tau {tau}: {got} vs {want}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn info_nce_invariances(seed in any::<u64>(), m in 1usize..40, tau in 0.05f64..1.0, bump in 0.01f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_unit(&mut rng, 16);
        let r = at_similarity(&mut rng, &g, 0.3);
        let mut negs: Vec<Vec<f64>> = (0..m).map(|_| random_unit(&mut rng, 16)).collect();
        let base = contrastive_loss(&g, &r, &negs, tau, Denominator::WithPositive).unwrap();
        prop_assert!(base >= 0.0);

        negs.reverse();
        let rev = contrastive_loss(&g, &r, &negs, tau, Denominator::WithPositive).unwrap();
        prop_assert!((base - rev).abs() < 1e-12);

        // a closer positive lowers the loss
        let closer = at_similarity(&mut rng, &g, (0.3 + bump).min(1.0));
        prop_assert!(contrastive_loss(&g, &closer, &negs, tau, Denominator::WithPositive).unwrap() < base);

        // a negative pulled toward g raises it
        let c0 = oracles::cos(&g, &negs[0]);
        negs[0] = at_similarity(&mut rng, &g, (c0 + bump).min(1.0));
        prop_assert!(contrastive_loss(&g, &r, &negs, tau, Denominator::WithPositive).unwrap() > base);
    }
}

fn matrix(rows: &[Vec<f64>]) -> Matrix<f64> {
    Matrix::from_vec(rows.len(), rows[0].len(), rows.concat()).unwrap()
}

fn random_config(rng: &mut ChaCha8Rng) -> (InjectionConfig<f64>, Vec<Vec<f64>>) {
    let (n_h, n_e) = (rng.random_range(1..12), rng.random_range(1..10));
    let (dm, d) = (rng.random_range(1..16), rng.random_range(1..8));
    let mut mk = |r: usize, c: usize| -> Vec<Vec<f64>> { (0..r).map(|_| gauss(rng, c)).collect() };
    let (h, e, wq, wk, wv) = (mk(n_h, dm), mk(n_e, dm), mk(dm, d), mk(dm, d), mk(dm, dm));
    let mask: Vec<Vec<f64>> = (0..n_h)
        .map(|_| {
            (0..n_e)
                .map(|_| match rng.random_range(0..4) {
                    0 => MASK_SENTINEL,
                    1 => -rng.random_range(0.0..3.0),
                    _ => 0.0,
                })
                .collect()
        })
        .collect();
    let cfg = InjectionConfig {
        h: matrix(&h),
        e: matrix(&e),
        w_q: matrix(&wq),
        w_k: matrix(&wk),
        w_v: matrix(&wv),
        mask: Some(matrix(&mask)),
        lambda_id: rng.random_range(0.1..2.0),
    };
    (cfg, mask)
}

#[test]
fn injection_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let (cfg, mask) = random_config(&mut rng);
        let rows = |m: &Matrix<f64>| (0..m.rows()).map(|i| m.row(i).to_vec()).collect::<Vec<_>>();
        let want = oracles::attention(&rows(&cfg.h), &rows(&cfg.e), &rows(&cfg.w_q), &rows(&cfg.w_k), &rows(&cfg.w_v), &mask, cfg.lambda_id);
        let got = inject(&cfg).unwrap();
        for (i, w) in want.iter().enumerate() {
            for (j, v) in w.iter().enumerate() {
                assert!((got.get(i, j) - v).abs() < 1e-6);
            }
        }
        let a = attention_weights(&cfg).unwrap();
        for i in 0..a.rows() {
            let open = mask[i].iter().any(|&m| m > MASK_SENTINEL);
            let s: f64 = a.row(i).iter().sum();
            if open {
                assert!((s - 1.0).abs() < 1e-12);
            } else {
                assert_eq!(s, 0.0);
                assert_eq!(got.row(i), cfg.h.row(i));
            }
            for (j, &m) in mask[i].iter().enumerate() {
                if m <= MASK_SENTINEL {
                    assert_eq!(a.get(i, j), 0.0);
                }
            }
        }
        let mut off = cfg.clone();
        off.lambda_id = 0.0;
        assert_eq!(inject(&off).unwrap(), cfg.h);
    }
}

/// A stand-in for the extraction service. Each generated image carries the
/// face's true landmarks and identity; the embedding degrades with how far
/// the requested crop is from the face.
struct Image {
    landmarks: Landmarks5<f64>,
    identity: Vec<f64>,
    drift: Vec<f64>,
}

#[derive(Default)]
struct MockEmbedder {
    seen: RefCell<Vec<SimilarityTransform<f64>>>,
}

impl AlignedEmbedder for MockEmbedder {
    type Image = Image;

    fn embed_aligned(&self, image: &Image, transform: &SimilarityTransform<f64>, template: &CropTemplate) -> multiid::Result<Embedding<f32>> {
        self.seen.borrow_mut().push(*transform);
        let mut err = 0.0;
        for (p, q) in image.landmarks.points.iter().zip(&template.landmarks.points) {
            let m = transform.apply(*p);
            err += ((m[0] - q[0]).powi(2) + (m[1] - q[1]).powi(2)).sqrt();
        }
        let w = (err / 5.0 / 10.0).min(1.0);
        let v: Vec<f32> = image.identity.iter().zip(&image.drift).map(|(a, b)| ((1.0 - w) * a + w * b) as f32).collect();
        Embedding::new("arcface", v)
    }
}

fn jitter(rng: &mut ChaCha8Rng, lm: &Landmarks5<f64>, sigma: f64) -> Landmarks5<f64> {
    Landmarks5 { points: lm.points.map(|[x, y]| [x + sigma * rng.sample::<f64, _>(StandardNormal), y + sigma * rng.sample::<f64, _>(StandardNormal)]) }
}

#[test]
fn gt_aligned_crop_ignores_generated_content() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let template = CropTemplate::default();
    let s = 2.5;
    let gt_lm = Landmarks5 { points: template.landmarks.points.map(|[x, y]| [40.0 + x * s, 25.0 + y * s]) };
    let gt_vec = random_unit(&mut rng, 32);
    let gt = Embedding::new("arcface", gt_vec.iter().map(|&v| v as f32).collect()).unwrap();

    let embedder = MockEmbedder::default();
    let mut aligned_losses = Vec::new();
    let mut detected_losses = Vec::new();
    for _ in 0..20 {
        // generated face sits where the GT face was, with noisy appearance
        let img = Image { landmarks: gt_lm.clone(), identity: at_similarity(&mut rng, &gt_vec, 0.9), drift: random_unit(&mut rng, 32) };
        aligned_losses.push(gt_aligned_id_loss(&img, &gt_lm, &gt, &template, &embedder).unwrap());

        // baseline: landmarks re-detected on the noisy generated image
        let detected = jitter(&mut rng, &gt_lm, 12.0);
        let t = template.alignment_for(&detected).unwrap().transform;
        let e = embedder.embed_aligned(&img, &t, &template).unwrap();
        detected_losses.push(id_loss(&e.cast::<f64>().values().to_vec(), &gt_vec).unwrap());
    }
    let expected = gt_aligned_transform(&gt_lm, &template).unwrap();
    let seen = embedder.seen.borrow();
    for t in seen.iter().step_by(2) {
        assert_eq!(*t, expected);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    for l in &aligned_losses {
        assert!((l - 0.1).abs() < 1e-6, "{l}");
    }
    assert!(mean(&detected_losses) > mean(&aligned_losses) + 0.05);
}

struct Failing;

impl AlignedEmbedder for Failing {
    type Image = ();
    fn embed_aligned(&self, _: &(), _: &SimilarityTransform<f64>, _: &CropTemplate) -> multiid::Result<Embedding<f32>> {
        Err(Error::Provider("service unavailable".into()))
    }
}

#[test]
fn provider_failures_surface_typed() {
    let template = CropTemplate::default();
    let err = gt_aligned_embed(&(), &template.landmarks, &template, &Failing).unwrap_err();
    assert!(matches!(err, Error::Provider(_)));
    let degenerate = Landmarks5 { points: [[1.0, 1.0]; 5] };
    assert!(gt_aligned_transform(&degenerate, &template).is_err());
}
