use super::Autoencoder;
use crate::error::Result;
use crate::losses::{evaluate_prepared, LossConfig, PreparedSample};
use crate::numerics::Signal;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominators below this are clamped, so entries that are zero in both
/// gradients compare as absolute errors.
pub const REL_FLOOR: f64 = 1e-7;

/// `|a - b| / max(|a|, |b|, REL_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn central_difference(mut f: impl FnMut(f64) -> Result<f64>, at: f64, step: f64) -> Result<f64> {
    Ok((f(at + step)? - f(at - step)?) / (2.0 * step))
}

/// Largest relative error between the analytic gradient of a prepared loss
/// in `ŝ` and its central differences.
pub fn loss_gradient_error(
    cfg: &LossConfig,
    prepared: &PreparedSample<f64>,
    x: &Signal<f64>,
    s_hat: &Signal<f64>,
    step: f64,
) -> Result<f64> {
    let analytic = evaluate_prepared(cfg, prepared, x, s_hat)?.grad;
    let mut worst = 0.0f64;
    let mut probe = s_hat.as_slice().to_vec();
    for d in 0..probe.len() {
        let at = probe[d];
        let fd = central_difference(
            |v| {
                probe[d] = v;
                Ok(evaluate_prepared(cfg, prepared, x, &Signal::new(probe.clone())?)?.value)
            },
            at,
            step,
        )?;
        probe[d] = at;
        worst = worst.max(relative_error(analytic[d], fd));
    }
    Ok(worst)
}

/// Largest relative error between backpropagated parameter gradients of
/// `loss(x, net(input))` and central differences, with the sample's mask
/// and weight held fixed.
pub fn network_gradient_error(
    net: &Autoencoder<f64>,
    cfg: &LossConfig,
    prepared: &PreparedSample<f64>,
    x: &Signal<f64>,
    step: f64,
) -> Result<f64> {
    let input = prepared.input(x);
    let fp = net.forward(input)?;
    let value = evaluate_prepared(cfg, prepared, x, &fp.reconstruction)?;
    let analytic = net.backward(&fp.cache, &value.grad)?.flatten();

    let mut probe = net.clone();
    let mut params = net.flatten();
    let mut worst = 0.0f64;
    for (i, g) in analytic.into_iter().enumerate() {
        let at = params[i];
        let fd = central_difference(
            |v| {
                params[i] = v;
                probe.set_flat(&params)?;
                let s_hat = probe.reconstruct(input)?;
                Ok(evaluate_prepared(cfg, prepared, x, &s_hat)?.value)
            },
            at,
            step,
        )?;
        params[i] = at;
        worst = worst.max(relative_error(g, fd));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{prepare_sample, LossKind};
    use crate::masking::{GridShape, MaskSpec};
    use crate::model::Activation;
    use crate::numerics::RngStream;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert!((relative_error(0.0, 1e-9) - 1e-2).abs() < 1e-15);
    }

    #[test]
    fn mse_network_gradient() {
        let mut rng = RngStream::new(9, 0);
        let net = Autoencoder::random(&[4, 3, 4], &[Activation::Tanh, Activation::Identity], &mut rng).unwrap();
        let mask = MaskSpec::Bsm {
            shape: GridShape::new(2, 2).unwrap(),
            patch_radius: 1,
        };
        let cfg = LossConfig::new(LossKind::Mse, mask);
        let x = Signal::new(vec![0.3, -0.7, 1.1, 0.2]).unwrap();
        let prepared = prepare_sample(&cfg, &x, &mut rng).unwrap();
        assert!(network_gradient_error(&net, &cfg, &prepared, &x, FD_STEP).unwrap() < 1e-6);
    }
}
