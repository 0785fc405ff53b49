mod common;

use common::{affine_prior_registry, central_diff, oracle_critic, oracle_semantics, random_image, unit_gaussian};
use fti_core::adversarial::*;
use fti_core::backends::{FaceTemplate, ImageTensor, LatentCode, VlInput};
use fti_core::nn::{gaussian_vec, rng_from_seed};
use fti_core::semantics::{aggregate_semantics, build_bank};
use rand::Rng;

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

#[test]
fn critic_matches_oracle() {
    let mut rng = rng_from_seed(1);
    for seed in 0..20 {
        let c = CriticParams::init(6, 10, seed);
        for _ in 0..5 {
            let w = gaussian_vec(&mut rng, 6);
            let got = critic_forward(&c, &LatentCode::new(w.clone()).unwrap()).unwrap();
            assert!((got - oracle_critic(&c, &w)).abs() < 1e-12);
        }
    }
    let c = CriticParams::init(6, 10, 0);
    assert!(critic_forward(&c, &LatentCode::new(vec![0.0; 5]).unwrap()).is_err());
}

#[test]
fn wgan_losses_match_batch_means() {
    let c = CriticParams::init(3, 8, 2);
    let mut rng = rng_from_seed(3);
    for _ in 0..100 {
        let nr = rng.random_range(1..6);
        let nf = rng.random_range(1..6);
        let real: Vec<LatentCode> = (0..nr).map(|_| LatentCode::new(gaussian_vec(&mut rng, 3)).unwrap()).collect();
        let fake: Vec<LatentCode> = (0..nf).map(|_| LatentCode::new(gaussian_vec(&mut rng, 3)).unwrap()).collect();
        let mr = real.iter().map(|w| oracle_critic(&c, &w.values)).sum::<f64>() / nr as f64;
        let mf = fake.iter().map(|w| oracle_critic(&c, &w.values)).sum::<f64>() / nf as f64;
        let l = wgan_losses(&c, &real, &fake).unwrap();
        assert!((l.critic_objective - (mr - mf)).abs() < 1e-12);
        assert!((l.projector_adv_loss + mf).abs() < 1e-12);
    }
    assert!(wgan_losses(&c, &[], &[LatentCode::new(vec![0.0; 3]).unwrap()]).is_err());
}

#[test]
fn clipping_bounds_every_weight() {
    let mut c = CriticParams::init(4, 16, 7);
    assert!(c.max_abs() > 0.01);
    c.clip(0.01);
    assert!(c.max_abs() <= 0.01);
}

#[test]
fn reconstruction_terms_match_oracles() {
    let reg = affine_prior_registry(16);
    let bank = common::random_bank(4, 3, &[2, 3, 4], 4);
    let ctx = ReconContext { backends: &reg, f_loss: "fr", bank: &bank };
    let mut rng = rng_from_seed(5);
    for case in 0..100u64 {
        let orig = random_image(case, 16, 16);
        let recon = random_image(1000 + case, 16, 16);
        let t = FaceTemplate::new(unit_gaussian(2000 + case, 4), "fr").unwrap();
        let weights = LossWeights {
            lambda_pix: rng.random_range(0.0..2.0),
            lambda_id: rng.random_range(0.0..2.0),
            lambda_attr: rng.random_range(0.0..2.0),
            lambda_perc: rng.random_range(0.0..2.0),
        };
        let (total, terms) = reconstruction_loss(&ctx, &orig, &recon, &t, &weights).unwrap();

        let pix = mse(orig.data(), recon.data());
        let id = 1.0 - common::cos(&reg.fr_embed("fr", &recon).unwrap().values, &t.values);
        let so = oracle_semantics(&reg.vl_encode(VlInput::Image(&orig)).unwrap().values, &bank).0;
        let sr = oracle_semantics(&reg.vl_encode(VlInput::Image(&recon)).unwrap().values, &bank).0;
        let attr = mse(&so, &sr);
        let perc = reg.perceptual_net.distance(&orig, &recon).unwrap();
        assert!((terms.pix - pix).abs() < 1e-9);
        assert!((terms.id - id).abs() < 1e-9);
        assert!((terms.attr - attr).abs() < 1e-9);
        assert!((terms.perc - perc).abs() < 1e-9);
        assert!((0.0..=2.0).contains(&terms.id));
        let expected = weights.lambda_pix * pix + weights.lambda_id * id + weights.lambda_attr * attr + weights.lambda_perc * perc;
        assert!((total - expected).abs() < 1e-9);
    }
}

#[test]
fn identical_images_have_zero_pixel_and_perceptual_terms() {
    let reg = affine_prior_registry(16);
    let bank = common::random_bank(1, 2, &[3, 3], 4);
    let ctx = ReconContext { backends: &reg, f_loss: "fr", bank: &bank };
    let img = random_image(9, 16, 16);
    let t = reg.fr_embed("fr", &img).unwrap();
    let (total, terms) = reconstruction_loss(&ctx, &img, &img, &t, &LossWeights::default()).unwrap();
    assert_eq!(terms.pix, 0.0);
    assert_eq!(terms.perc, 0.0);
    assert_eq!(terms.attr, 0.0);
    assert!(terms.id.abs() < 1e-12);
    assert!(total.abs() < 1e-12);
}

#[test]
fn reconstruction_gradient_matches_finite_differences() {
    let reg = affine_prior_registry(16);
    let bank = common::random_bank(2, 2, &[2, 2], 4);
    let ctx = ReconContext { backends: &reg, f_loss: "fr", bank: &bank };
    let weights = LossWeights { lambda_pix: 0.7, lambda_id: 1.3, lambda_attr: 0.0, lambda_perc: 0.9 };
    for case in 0..5u64 {
        let orig = random_image(case, 16, 16);
        let recon = random_image(50 + case, 16, 16);
        let t = FaceTemplate::new(unit_gaussian(90 + case, 4), "fr").unwrap();
        let s_orig = aggregate_semantics(&orig, &bank, reg.vl_encoder.as_ref()).unwrap();
        let (_, _, grad) = reconstruction_loss_grad(&ctx, &orig, &recon, &t, &s_orig, &weights).unwrap();
        let f = |x: &[f64]| {
            let r = ImageTensor::new(16, 16, x.to_vec()).unwrap();
            reconstruction_loss(&ctx, &orig, &r, &t, &weights).unwrap().0
        };
        for i in (0..recon.data().len()).step_by(29) {
            let fd = central_diff(f, recon.data(), i, 1e-5);
            assert!((fd - grad[i]).abs() < 1e-8 + 1e-4 * fd.abs(), "{i}: {fd} vs {}", grad[i]);
        }
    }
}

#[test]
fn loss_weight_and_config_validation() {
    assert!(LossWeights { lambda_pix: -1.0, ..Default::default() }.validate().is_err());
    assert!(LossWeights { lambda_pix: 0.0, lambda_id: 0.0, lambda_attr: 0.0, lambda_perc: 0.0 }
        .validate()
        .is_err());
    assert!(WGANConfig { weight_clip: 0.0, ..Default::default() }.validate().is_err());
    assert!(WGANConfig { critic_steps_per_projector_step: 0, ..Default::default() }.validate().is_err());
    let cfg = WGANConfig { learning_rate: 0.1, lr_decay_factor: 0.5, lr_decay_every_epochs: 3, ..Default::default() };
    assert_eq!(cfg.learning_rate_at(2), 0.1);
    assert_eq!(cfg.learning_rate_at(3), 0.05);
    assert_eq!(cfg.learning_rate_at(7), 0.025);
}

#[test]
fn training_freezes_generator_and_clips_critic() {
    let reg = affine_prior_registry(16);
    let images: Vec<ImageTensor> = (0..4).map(|s| random_image(s, 16, 16)).collect();
    let taa = fti_core::taa::TAAParams::init(4, 8, vec!["eyes".into()], 4, 1);
    let bank = build_bank(&[("eyes".to_string(), vec!["a".into(), "b".into()])], reg.vl_encoder.as_ref()).unwrap();
    let ctx = ReconContext { backends: &reg, f_loss: "fr", bank: &bank };
    let samples = prepare_samples(&images, &taa, &ctx).unwrap();
    let s_hat_before: Vec<Vec<f64>> = samples.iter().map(|s| s.s_hat.values.clone()).collect();
    let probe = LatentCode::new(vec![0.3, -0.2]).unwrap();
    let gen_before = reg.generate(&probe).unwrap();
    let taa_before = taa.clone();

    let flp = fti_core::flp::FLPParams::init(fti_core::flp::FlpConfig::with_dims(4, 4, 2, 1, 2), 2).unwrap();
    let flp_before = flp.clone();
    let cfg = WGANConfig { epochs: 3, batch_size: 2, rng_seed: 4, ..Default::default() };
    let mut seen = 0;
    let out = train_flp(&samples, flp, CriticParams::init(2, 8, 3), &cfg, &LossWeights::default(), &ctx, |s| {
        seen += 1;
        assert!(s.critic_max_abs <= cfg.weight_clip);
        assert!((0.0..=2.0).contains(&s.id));
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, 6);
    assert_eq!(out.history.len(), 6);
    assert!(out.critic.max_abs() <= cfg.weight_clip);
    assert_ne!(out.flp, flp_before);
    assert_eq!(reg.generate(&probe).unwrap(), gen_before);
    assert_eq!(taa, taa_before);
    for (s, b) in samples.iter().zip(&s_hat_before) {
        assert_eq!(&s.s_hat.values, b);
    }
}

#[test]
fn critic_gap_rises_then_shrinks_on_affine_prior() {
    let history = common::wgan_toy_history();
    if let Err(msg) = common::check_wgan_separation(&history) {
        panic!("{msg}");
    }
}

#[test]
fn critic_separates_real_from_fake_after_short_run() {
    let reg = affine_prior_registry(16);
    let images: Vec<ImageTensor> = (100..108)
        .map(|s| reg.generate(&reg.sample_prior_latent(s).unwrap()).unwrap())
        .collect();
    let taa = fti_core::taa::TAAParams::init(4, 8, vec!["eyes".into()], 4, 3);
    let bank = build_bank(&[("eyes".to_string(), vec!["a".into(), "b".into()])], reg.vl_encoder.as_ref()).unwrap();
    let ctx = ReconContext { backends: &reg, f_loss: "fr", bank: &bank };
    let samples = prepare_samples(&images, &taa, &ctx).unwrap();
    let flp = fti_core::flp::FLPParams::init(fti_core::flp::FlpConfig::with_dims(4, 4, 2, 1, 2), 5).unwrap();
    let cfg = WGANConfig {
        learning_rate: 1e-2,
        lr_decay_every_epochs: 1000,
        epochs: 30,
        batch_size: 8,
        rng_seed: 2,
        ..Default::default()
    };
    let out = train_flp(&samples, flp, CriticParams::init(2, 16, 6), &cfg, &LossWeights::default(), &ctx, |_| Ok(())).unwrap();
    assert_eq!(out.history.len(), 30);
    let real: Vec<LatentCode> = (5000..5400).map(|s| reg.sample_prior_latent(s).unwrap()).collect();
    let fake: Vec<LatentCode> = samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            let flp = &out.flp;
            (0..50).map(move |k| {
                let n = fti_core::backends::NoiseVector::sample(2, (i * 1000 + k) as u64);
                fti_core::flp::flp_forward(flp, &n, &s.template, &s.s_hat).unwrap().0
            })
        })
        .collect();
    let l = wgan_losses(&out.critic, &real, &fake).unwrap();
    assert!(l.critic_objective > 0.0, "{l:?}");
}
