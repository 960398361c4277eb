use dcs_core::losses::{prepare_sample, LossConfig, LossKind, PreparedSample};
use dcs_core::masking::{GridShape, MaskSpec};
use dcs_core::model::{loss_gradient_error, network_gradient_error, Activation, Autoencoder, FD_STEP};
use dcs_core::numerics::{sample_standard_normal, RngStream, Signal};

const HEIGHT: usize = 3;
const WIDTH: usize = 4;
const DIM: usize = HEIGHT * WIDTH;

fn bsm() -> MaskSpec {
    MaskSpec::Bsm {
        shape: GridShape::new(HEIGHT, WIDTH).unwrap(),
        patch_radius: 1,
    }
}

fn loss_config(kind: LossKind, mask: MaskSpec) -> LossConfig {
    let mut cfg = LossConfig::new(kind, mask);
    // denser masks give the masked losses more than one or two live coordinates
    cfg.rho = 0.4;
    cfg.n_mc = 64;
    cfg
}

fn noisy_input(rng: &mut RngStream) -> Signal<f64> {
    let v = sample_standard_normal(rng, DIM).into_iter().map(|e| 0.5 + 0.4 * e).collect();
    Signal::new(v).unwrap()
}

fn draw(cfg: &LossConfig, seed: u64) -> (Signal<f64>, PreparedSample<f64>, RngStream) {
    let mut rng = RngStream::new(seed, 0).derive_named(cfg.kind.as_str());
    let x = noisy_input(&mut rng);
    let prepared = prepare_sample(cfg, &x, &mut rng).unwrap();
    (x, prepared, rng)
}

fn away_from_guard(cfg: &LossConfig, prepared: &PreparedSample<f64>, x: &Signal<f64>, s_hat: &Signal<f64>) -> bool {
    let (u, v) = match &prepared.pair {
        Some(p) => (p.mask().restrict(x.as_slice()), p.mask().restrict(s_hat.as_slice())),
        None => (x.as_slice().to_vec(), s_hat.as_slice().to_vec()),
    };
    let norm = |w: &[f64]| w.iter().map(|a| a * a).sum::<f64>().sqrt();
    norm(&u) * norm(&v) > 10.0 * cfg.eta
}

#[test]
fn loss_gradients_match_finite_differences() {
    for mask in [bsm(), MaskSpec::TauAmn { delta: 2 }] {
        for kind in LossKind::ALL {
            let cfg = loss_config(kind, mask);
            let mut worst = 0.0f64;
            let mut checked = 0;
            for seed in 0..100 {
                let (x, prepared, mut rng) = draw(&cfg, seed);
                let s_hat = Signal::new(sample_standard_normal(&mut rng, DIM)).unwrap();
                if !away_from_guard(&cfg, &prepared, &x, &s_hat) {
                    continue;
                }
                checked += 1;
                worst = worst.max(loss_gradient_error(&cfg, &prepared, &x, &s_hat, FD_STEP).unwrap());
            }
            assert!(checked >= 95, "{kind}: only {checked} draws checked");
            assert!(worst <= 1e-4, "{kind} {mask:?}: max relative error {worst:e}");
        }
    }
}

#[test]
fn network_gradients_match_finite_differences() {
    let dims = [DIM, 8, 3, 8, DIM];
    let acts = [Activation::Tanh, Activation::Identity, Activation::Tanh, Activation::Identity];
    for kind in LossKind::ALL {
        let cfg = loss_config(kind, bsm());
        let mut worst = 0.0f64;
        for seed in 0..20 {
            let (x, prepared, mut rng) = draw(&cfg, seed);
            let net = Autoencoder::random(&dims, &acts, &mut rng).unwrap();
            worst = worst.max(network_gradient_error(&net, &cfg, &prepared, &x, FD_STEP).unwrap());
        }
        assert!(worst <= 1e-3, "{kind}: max relative error {worst:e}");
    }
}

#[test]
fn relu_network_gradients_away_from_kinks() {
    // Inputs are kept small relative to the biases so no ReLU sits on its kink.
    let cfg = loss_config(LossKind::Dcs, bsm());
    for seed in 0..20 {
        let (x, prepared, mut rng) = draw(&cfg, seed);
        let mut net = Autoencoder::standard(DIM, &[8, 3, 8], &mut rng).unwrap();
        for layer in net.layers_mut() {
            layer.bias.iter_mut().enumerate().for_each(|(i, b)| *b = if i % 2 == 0 { 0.5 } else { -0.5 });
            layer.weights.iter_mut().for_each(|w| *w *= 0.05);
        }
        let err = network_gradient_error(&net, &cfg, &prepared, &x, FD_STEP).unwrap();
        assert!(err <= 1e-3, "seed {seed}: {err:e}");
    }
}
