mod common;

use common::{central_diff, oracle_semantic_loss, rel_err};
use fti_core::backends::FaceTemplate;
use fti_core::error::Error;
use fti_core::nn::{gaussian_vec, rng_from_seed, ParamSet};
use fti_core::semantics::SemanticEmbedding;
use fti_core::taa::*;
use rand::Rng;

fn sem(values: Vec<f64>, regions: usize) -> SemanticEmbedding {
    SemanticEmbedding {
        values,
        region_order: (0..regions).map(|r| format!("r{r}")).collect(),
        winner_indices: Vec::new(),
    }
}

#[test]
fn loss_matches_oracle_on_seeded_cases() {
    let mut rng = rng_from_seed(1);
    for _ in 0..100 {
        let d = rng.random_range(1..40);
        let s = gaussian_vec(&mut rng, d);
        let h = gaussian_vec(&mut rng, d);
        let (a, b) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
        let got = semantic_loss_values(&s, &h, a, b).unwrap();
        assert!((got - oracle_semantic_loss(&s, &h, a, b)).abs() < 1e-9);
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = rng_from_seed(2);
    for _ in 0..100 {
        let d = rng.random_range(2..20);
        let s = gaussian_vec(&mut rng, d);
        let h = gaussian_vec(&mut rng, d);
        let g = semantic_loss_grad(&s, &h, 0.7, 0.3).unwrap();
        let f = |x: &[f64]| semantic_loss_values(&s, x, 0.7, 0.3).unwrap();
        for i in 0..d {
            let fd = central_diff(f, &h, i, 1e-5);
            assert!(rel_err(fd, g[i]) < 1e-4, "{fd} vs {}", g[i]);
        }
    }
}

#[test]
fn loss_is_rotation_invariant() {
    let mut rng = rng_from_seed(3);
    for _ in 0..50 {
        let d = 6;
        let s = gaussian_vec(&mut rng, d);
        let h = gaussian_vec(&mut rng, d);
        // Householder reflection I - 2vv^T is orthogonal
        let v = common::unit_gaussian(rng.random(), d);
        let reflect = |x: &[f64]| -> Vec<f64> {
            let p: f64 = x.iter().zip(&v).map(|(a, b)| a * b).sum();
            x.iter().zip(&v).map(|(a, b)| a - 2.0 * p * b).collect()
        };
        let l0 = semantic_loss_values(&s, &h, 0.7, 0.3).unwrap();
        let l1 = semantic_loss_values(&reflect(&s), &reflect(&h), 0.7, 0.3).unwrap();
        assert!((l0 - l1).abs() < 1e-10);
    }
}

#[test]
fn semantic_loss_uses_config_weights() {
    let cfg = TAATrainConfig {
        lambda_mse: 2.0,
        lambda_cos: 0.0,
        ..Default::default()
    };
    let l = semantic_loss(&sem(vec![1.0, 0.0], 1), &sem(vec![0.0, 1.0], 1), &cfg).unwrap();
    assert!((l - 4.0).abs() < 1e-12);
    assert!(matches!(
        semantic_loss(&sem(vec![0.0; 2], 1), &sem(vec![0.0; 2], 1), &cfg),
        Err(Error::ZeroCosine)
    ));
}

#[test]
fn forward_is_bounded_by_layer_norms() {
    let p = TAAParams::init(8, 16, vec!["a".into(), "b".into()], 4, 4);
    let bound = p.layer1.frobenius_norm() * p.layer2.frobenius_norm();
    let mut rng = rng_from_seed(5);
    for _ in 0..200 {
        let t1 = FaceTemplate::new(gaussian_vec(&mut rng, 8), "x").unwrap();
        let t2 = FaceTemplate::new(gaussian_vec(&mut rng, 8), "x").unwrap();
        let o1 = taa_forward(&p, &t1).unwrap().values;
        let o2 = taa_forward(&p, &t2).unwrap().values;
        let dout = common::norm(&o1.iter().zip(&o2).map(|(a, b)| a - b).collect::<Vec<_>>());
        let din = common::norm(&t1.values.iter().zip(&t2.values).map(|(a, b)| a - b).collect::<Vec<_>>());
        assert!(dout <= bound * din + 1e-12);
    }
}

#[test]
fn forward_matches_straight_line_oracle() {
    let p = TAAParams::init(5, 7, vec!["a".into(), "b".into(), "c".into()], 2, 6);
    let t = FaceTemplate::new(gaussian_vec(&mut rng_from_seed(1), 5), "x").unwrap();
    let h: Vec<f64> = common::matvec(&p.layer1, &t.values).into_iter().map(|v| v.max(0.0)).collect();
    let expected = common::matvec(&p.layer2, &h);
    let got = taa_forward(&p, &t).unwrap();
    assert_eq!(got.values.len(), 6);
    for (a, b) in got.values.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(got.region_order, ["a", "b", "c"]);
}

#[test]
fn single_repeated_pair_overfits_monotonically() {
    let t = FaceTemplate::new(common::unit_gaussian(1, 8), "x").unwrap();
    let s = sem(common::unit_gaussian(2, 8), 2);
    let pairs = vec![(t, s); 4];
    let cfg = TAATrainConfig {
        learning_rate: 1e-3,
        epochs: 60,
        batch_size: 4,
        rng_seed: 3,
        ..Default::default()
    };
    let out = train_taa(&pairs, 16, &cfg).unwrap();
    for w in out.epoch_losses.windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "{} -> {}", w[0], w[1]);
    }
    assert!(out.epoch_losses.last().unwrap() < &(0.5 * out.epoch_losses[0]));
}

#[test]
fn training_is_deterministic_per_seed() {
    let pairs: Vec<(FaceTemplate, SemanticEmbedding)> = (0..6)
        .map(|i| {
            (
                FaceTemplate::new(common::unit_gaussian(i, 8), "x").unwrap(),
                sem(common::unit_gaussian(100 + i, 8), 2),
            )
        })
        .collect();
    let cfg = TAATrainConfig {
        epochs: 5,
        batch_size: 4,
        rng_seed: 9,
        ..Default::default()
    };
    let a = train_taa(&pairs, 8, &cfg).unwrap();
    let b = train_taa(&pairs, 8, &cfg).unwrap();
    assert_eq!(a.params.flat(), b.params.flat());
    assert_eq!(a.epoch_losses, b.epoch_losses);
    let c = train_taa(&pairs, 8, &TAATrainConfig { rng_seed: 10, ..cfg }).unwrap();
    assert_ne!(a.params.flat(), c.params.flat());
}

#[test]
fn invalid_configs_rejected() {
    for cfg in [
        TAATrainConfig { epochs: 0, ..Default::default() },
        TAATrainConfig { batch_size: 0, ..Default::default() },
        TAATrainConfig { lambda_mse: -1.0, ..Default::default() },
        TAATrainConfig { learning_rate: 0.0, ..Default::default() },
    ] {
        assert!(cfg.validate().is_err());
    }
}

#[test]
fn learnable_linear_target_converges() {
    let map = fti_core::nn::Linear::gaussian(8, 6, 0.5, &mut rng_from_seed(4));
    let pairs: Vec<(FaceTemplate, SemanticEmbedding)> = (0..16)
        .map(|i| {
            let t = common::unit_gaussian(200 + i, 8);
            let s = common::matvec(&map, &t);
            (FaceTemplate::new(t, "x").unwrap(), sem(s, 2))
        })
        .collect();
    let cfg = TAATrainConfig {
        epochs: 50,
        batch_size: 1,
        rng_seed: 1,
        ..Default::default()
    };
    let out = train_taa(&pairs, 16, &cfg).unwrap();
    let (first, last) = (out.epoch_losses[0], *out.epoch_losses.last().unwrap());
    assert!(last < 0.1 * first, "{first} -> {last}");
}
