use ddf_core::numerics::{finite_diff_check, Rng, Tape, Tensor, DEFAULT_EPS};
use ddf_core::objectives::mse;
use ddf_core::vae::{
    kl_divergence, linear_probe_r2, recon_loss, synth_factor_images, train_vae, vae_encode, vae_eval_loss,
    vae_loss, Noise, VaeConfig, VaeModel, VaeTrainConfig,
};
use proptest::prelude::*;

fn kl(mu: &[f64], logvar: &[f64]) -> f64 {
    let tape = Tape::new();
    let m = tape.constant(Tensor::new(&[1, mu.len()], mu.to_vec()).unwrap()).unwrap();
    let l = tape.constant(Tensor::new(&[1, logvar.len()], logvar.to_vec()).unwrap()).unwrap();
    kl_divergence(&m, &l).unwrap().item().unwrap()
}

#[test]
fn kl_examples() {
    assert_eq!(kl(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    assert!((kl(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
    let want = -0.5 * (1.0 + 2f64.ln() - 2.0);
    assert!((kl(&[0.0], &[2f64.ln()]) - want).abs() < 1e-12);
    assert!((want - 0.1534).abs() < 5e-5);
}

#[test]
fn recon_examples() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::new(&[1, 2], vec![0.0, 0.0]).unwrap()).unwrap();
    let xh = tape.constant(Tensor::new(&[1, 2], vec![1.0, 1.0]).unwrap()).unwrap();
    assert_eq!(recon_loss(&x, &x).unwrap().item().unwrap(), 0.0);
    assert_eq!(recon_loss(&x, &xh).unwrap().item().unwrap(), 1.0);
    let bad = tape.constant(Tensor::zeros(&[1, 3])).unwrap();
    assert!(recon_loss(&x, &bad).is_err());

    let mut rng = Rng::new(1);
    let a = rng.normals(12);
    let b = rng.normals(12);
    let va = tape.constant(Tensor::new(&[3, 4], a.clone()).unwrap()).unwrap();
    let vb = tape.constant(Tensor::new(&[3, 4], b.clone()).unwrap()).unwrap();
    let got = recon_loss(&va, &vb).unwrap().item().unwrap();
    assert!((got - mse(&b, &a).unwrap()).abs() < 1e-12);
}

#[test]
fn forward_contracts() {
    let mut rng = Rng::new(2);
    let model = VaeModel::new(VaeConfig::new(10, 8), &mut rng).unwrap();
    let x = Tensor::new(&[5, 10], rng.normals(50)).unwrap();
    let tape = Tape::new();
    let p = tape.freeze(&model.params).unwrap();
    let xv = tape.constant(x.clone()).unwrap();
    let out = model.forward(&p, &xv, Noise::Zero).unwrap();
    assert_eq!(out.x_hat.shape(), vec![5, 10]);
    assert_eq!(out.mu.shape(), vec![5, 8]);
    assert_eq!(out.logvar.shape(), vec![5, 8]);
    // zero noise decodes the mean
    let direct = model.decode(&p, &out.mu).unwrap().value();
    assert_eq!(out.x_hat.value(), direct);

    let sample = |seed| {
        let tape = Tape::new();
        let p = tape.freeze(&model.params).unwrap();
        let xv = tape.constant(x.clone()).unwrap();
        let mut r = Rng::new(seed);
        model.forward(&p, &xv, Noise::Sample(&mut r)).unwrap().x_hat.value()
    };
    assert_eq!(sample(9), sample(9));
    assert_ne!(sample(9), sample(10));

    let emb = vae_encode(&model, &Tensor::new(&[2, 10], [x.row(0), x.row(0)].concat()).unwrap()).unwrap();
    assert_eq!(emb.shape(), &[2, 8]);
    assert_eq!(emb.row(0), emb.row(1));
    assert!(vae_encode(&model, &Tensor::zeros(&[2, 9])).is_err());
}

#[test]
fn loss_is_unweighted_sum() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::new(&[1, 2], vec![0.3, 0.1]).unwrap()).unwrap();
    let mu = tape.constant(Tensor::zeros(&[1, 1])).unwrap();
    let logvar = tape.constant(Tensor::zeros(&[1, 1])).unwrap();
    let out = ddf_core::vae::VaeOutput {
        x_hat: x,
        mu,
        logvar,
    };
    assert_eq!(vae_loss(&x, &out).unwrap().item().unwrap(), 0.0);
    // recon 2.0 and KL 0.5
    let xh = tape.constant(Tensor::new(&[1, 2], vec![0.3 + 2f64.sqrt(), 0.1 - 2f64.sqrt()]).unwrap()).unwrap();
    let out = ddf_core::vae::VaeOutput {
        x_hat: xh,
        mu: tape.constant(Tensor::new(&[1, 1], vec![1.0]).unwrap()).unwrap(),
        logvar,
    };
    assert!((vae_loss(&x, &out).unwrap().item().unwrap() - 2.5).abs() < 1e-12);
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = Rng::new(3);
    let mut cfg = VaeConfig::new(6, 3);
    cfg.hidden = 5;
    let model = VaeModel::new(cfg, &mut rng).unwrap();
    let x = Tensor::new(&[4, 6], rng.normals(24)).unwrap();
    let check = finite_diff_check(&model.params, DEFAULT_EPS, |tape, p| {
        let xv = tape.constant(x.clone())?;
        let mut noise = Rng::new(77);
        let out = model.forward(p, &xv, Noise::Sample(&mut noise))?;
        vae_loss(&xv, &out)
    })
    .unwrap();
    assert!(check.max_rel_error < 1e-4, "{:?}", check.worst);
}

#[test]
fn training_halves_loss_and_embeds_dominant_factor() {
    let data = synth_factor_images(512, 16, 4).unwrap();
    let mut rng = Rng::new(5);
    let mut model = VaeModel::new(VaeConfig::new(256, 8), &mut rng).unwrap();
    let before = vae_eval_loss(&model, &data.pixels).unwrap();
    let history = train_vae(&mut model, &data.pixels, &VaeTrainConfig::default(), &mut rng).unwrap();
    let after = vae_eval_loss(&model, &data.pixels).unwrap();
    let emb = vae_encode(&model, &data.pixels).unwrap();
    let r2 = linear_probe_r2(&emb, &data.factor_1).unwrap();
    eprintln!("vae loss {before:.5} -> {after:.5} (last epoch {:.5}); probe R2 {r2:.4}", history.last().unwrap());
    assert!(after <= 0.5 * before);
    assert!(r2 >= 0.8);
}

#[test]
fn probe_recovers_linear_signal() {
    let mut rng = Rng::new(6);
    let x = Tensor::new(&[50, 2], rng.normals(100)).unwrap();
    let y: Vec<f64> = (0..50).map(|i| 2.0 * x.at(&[i, 0]) - x.at(&[i, 1]) + 0.5).collect();
    assert!((linear_probe_r2(&x, &y).unwrap() - 1.0).abs() < 1e-9);
}

proptest! {
    #[test]
    fn kl_is_non_negative(
        mu in prop::collection::vec(-5.0f64..5.0, 1..8),
        seed in 0u64..1000,
    ) {
        let mut rng = Rng::new(seed);
        let logvar: Vec<f64> = mu.iter().map(|_| rng.uniform(-10.0, 10.0)).collect();
        prop_assert!(kl(&mu, &logvar) >= 0.0);
    }
}
