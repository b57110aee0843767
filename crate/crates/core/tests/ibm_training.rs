mod common;

use common::{fd_check, SenderFixture};
use iec_core::ibm::{train_ibms, IbmBatch, IbmBuffer, IbmConfig, IbmEntry, IbmModel};
use iec_core::nn::{Graph, Init};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_batch(rng: &mut ChaCha8Rng, n: usize, c: usize, t: usize) -> IbmBatch {
    IbmBatch {
        messages: (0..n).map(|_| (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
        targets: (0..n).map(|_| (0..t).map(|_| rng.gen_range(0.0..1.0)).collect()).collect(),
    }
}

fn noise(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..m).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

fn prediction_mse(model: &IbmModel, entries: &[IbmEntry], obs_len: usize) -> f64 {
    let mut total = 0.0;
    for e in entries {
        let p = model.predict_intent(&e.message).unwrap();
        total += p
            .observation
            .iter()
            .zip(&e.target[..obs_len])
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / obs_len as f64;
    }
    total / entries.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn encoder_width_follows_latent_dim(m in prop::sample::select(vec![8usize, 16, 32]), c in 1usize..40, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = IbmConfig { latent_dim: m, ..IbmConfig::default() };
        let model = IbmModel::new(0, c, 7, config, Init::Glorot, &mut rng);
        let (mu, lv) = model.encode(&vec![0.5; c]).unwrap();
        prop_assert_eq!(mu.len(), m);
        prop_assert_eq!(lv.len(), m);
        prop_assert_eq!(model.decode(&mu).unwrap().observation.len(), 6);
    }
}

#[test]
fn elbo_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let config = IbmConfig {
        latent_dim: 4,
        hidden: 6,
        kl_weight: 0.7,
        ..IbmConfig::default()
    };
    let mut model = IbmModel::new(0, 5, 4, config, Init::Glorot, &mut rng);
    let batch = random_batch(&mut rng, 3, 5, 4);
    let eps = noise(&mut rng, 3, 4);
    let checked = fd_check(&mut model, IbmModel::store_mut, 12, 2, |g, m| {
        m.elbo_loss(g, &batch, &eps).unwrap().loss
    });
    assert!(checked > 0);
}

#[test]
fn frozen_prior_encoder_reduces_loss_to_reconstruction() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut model = IbmModel::new(0, 6, 5, IbmConfig::default(), Init::Glorot, &mut rng);
    for t in model.store_mut().tensors_mut() {
        if t.name().starts_with("ibm.encoder") {
            t.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let batch = random_batch(&mut rng, 20, 6, 5);
    let mut g = Graph::new();
    let terms = model.elbo_loss(&mut g, &batch, &noise(&mut rng, 20, 16)).unwrap();
    assert_eq!(g.scalar(terms.kl), 0.0);
    assert_eq!(g.scalar(terms.loss), g.scalar(terms.reconstruction));
}

#[test]
fn overfits_ten_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model_config = IbmConfig {
        learning_rate: 3e-3,
        ..IbmConfig::default()
    };
    let mut model = IbmModel::new(0, 16, 7, model_config, Init::Glorot, &mut rng);
    let batch = random_batch(&mut rng, 10, 16, 7);
    for _ in 0..1500 {
        model.train_step(&batch, &mut rng).unwrap();
    }
    let mut mse = 0.0;
    for (c, t) in batch.messages.iter().zip(&batch.targets) {
        let p = model.predict_intent(c).unwrap().to_flat();
        mse += p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / t.len() as f64;
    }
    mse /= 10.0;
    assert!(mse < 0.05, "round-trip mse {mse}");
}

#[test]
fn loss_trends_down_on_fixed_buffer() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let fixture = SenderFixture::new(32, 0);
    let mut model = IbmModel::new(0, 32, fixture.obs_len + 1, IbmConfig::default(), Init::Glorot, &mut rng);
    let mut buffer = IbmBuffer::new(40_000);
    for e in fixture.entries(200, 1).into_iter().take(500) {
        buffer.push(e);
    }
    let data: Vec<IbmEntry> = buffer.iter().cloned().collect();
    let batch = IbmBatch {
        messages: data.iter().map(|e| e.message.clone()).collect(),
        targets: data.iter().map(|e| e.target.clone()).collect(),
    };
    let mut losses = Vec::new();
    let kl_weight = model.config().kl_weight;
    for _ in 0..100 {
        let (r, k) = model.train_step(&batch, &mut rng).unwrap();
        losses.push(r + kl_weight * k);
    }
    let mut g = Graph::new();
    let final_loss = {
        let eps = noise(&mut rng, batch.len(), 16);
        let t = model.elbo_loss(&mut g, &batch, &eps).unwrap();
        g.scalar(t.loss)
    };
    assert!(final_loss < losses[0], "{final_loss} vs {}", losses[0]);
    let windows: Vec<f64> = losses.chunks(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    for w in windows.windows(2) {
        assert!(w[1] < w[0], "window means not decreasing: {windows:?}");
    }
}

#[test]
fn training_one_agent_leaves_the_other_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut models: Vec<IbmModel> = (0..2)
        .map(|i| IbmModel::new(i, 8, 4, IbmConfig::default(), Init::Glorot, &mut rng))
        .collect();
    let before = models[1].store().clone();
    let before_bits: Vec<u64> = before.tensors().iter().flat_map(|t| t.values().iter().map(|v| v.to_bits())).collect();
    let mut full = IbmBuffer::new(100);
    let b = random_batch(&mut rng, 50, 8, 4);
    for (m, t) in b.messages.into_iter().zip(b.targets) {
        full.push(IbmEntry { message: m, target: t });
    }
    let buffers = vec![full, IbmBuffer::new(100)];
    let stats = train_ibms(&mut models, &buffers, &mut rng).unwrap();
    assert_eq!(stats.len(), 1);
    assert_eq!(stats[0].agent, 0);
    let after_bits: Vec<u64> = models[1]
        .store()
        .tensors()
        .iter()
        .flat_map(|t| t.values().iter().map(|v| v.to_bits()))
        .collect();
    assert_eq!(before_bits, after_bits);
    assert_ne!(models[0].store().tensors()[0].values(), before.tensors()[0].values());
}

#[test]
fn scheduled_rounds_reduce_loss_on_stationary_messages() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let fixture = SenderFixture::new(32, 3);
    let mut models = vec![IbmModel::new(0, 32, fixture.obs_len + 1, IbmConfig::default(), Init::Glorot, &mut rng)];
    let mut recon = Vec::new();
    for round in 0..6 {
        let mut buffer = IbmBuffer::new(40_000);
        for e in fixture.entries(50, round) {
            buffer.push(e);
        }
        let stats = train_ibms(&mut models, std::slice::from_ref(&buffer), &mut rng).unwrap();
        recon.push(stats[0].reconstruction);
    }
    assert!(recon[5] < recon[0], "{recon:?}");
}

#[test]
fn stationary_sender_is_predicted_within_tenth() {
    // sender parked on one cell emitting one message: its next view is fixed
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut model = IbmModel::new(0, 32, 7, IbmConfig::default(), Init::Glorot, &mut rng);
    let message: Vec<f64> = (0..32).map(|i| ((i * 7) as f64).cos()).collect();
    let target = vec![1.0, 0.0, 0.0, 0.0, 0.25, 0.75, -0.05];
    let batch = IbmBatch {
        messages: vec![message.clone(); 50],
        targets: vec![target.clone(); 50],
    };
    for _ in 0..4000 {
        model.train_step(&batch, &mut rng).unwrap();
    }
    let p = model.predict_intent(&message).unwrap();
    for (a, b) in p.observation.iter().zip(&target) {
        assert!((a - b).abs() < 0.1, "{:?} vs {target:?}", p.observation);
    }
}

#[test]
fn fixed_policy_sender_is_learned() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let fixture = SenderFixture::new(128, 4);
    let mut models = vec![IbmModel::new(0, 128, fixture.obs_len + 1, IbmConfig::default(), Init::Glorot, &mut rng)];
    let held_out = fixture.entries(50, 999);
    let untrained = prediction_mse(&models[0], &held_out, fixture.obs_len);
    let mut buffer = IbmBuffer::new(40_000);
    for e in fixture.entries(400, 5) {
        buffer.push(e);
    }
    for _ in 0..20 {
        train_ibms(&mut models, std::slice::from_ref(&buffer), &mut rng).unwrap();
    }
    let trained = prediction_mse(&models[0], &held_out, fixture.obs_len);
    assert!(trained < 0.25 * untrained, "trained {trained} untrained {untrained}");
}
