use dcs_core::losses::{cs_loss, dcs_loss, n2v_loss, DEFAULT_ETA};
use dcs_core::masking::{blind_spot_mask, tau_amn_mask, GridShape, MaskVec, MaskedPair};
use dcs_core::numerics::{RngStream, Signal};
use dcs_core::weights::{estimate_c, k_closed_form};
use proptest::prelude::*;

fn vec_in(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

fn nonzero(v: &[f64]) -> bool {
    v.iter().map(|a| a * a).sum::<f64>() > 1e-6
}

proptest! {
    #[test]
    fn cs_bounded_and_scale_invariant(
        (u, v) in (2usize..20).prop_flat_map(|d| (vec_in(d), vec_in(d))),
        a in 0.01f64..100.0,
        b in 0.01f64..100.0,
    ) {
        prop_assume!(nonzero(&u) && nonzero(&v));
        let su = Signal::new(u).unwrap();
        let sv = Signal::new(v).unwrap();
        let base = cs_loss(&su, &sv, DEFAULT_ETA).unwrap().value;
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&base));
        let scaled = cs_loss(&su.scaled(a), &sv.scaled(b), DEFAULT_ETA).unwrap().value;
        prop_assert!((base - scaled).abs() < 1e-10);
    }

    #[test]
    fn cs_gradient_orthogonal_to_reconstruction(
        (u, v) in (2usize..20).prop_flat_map(|d| (vec_in(d), vec_in(d))),
    ) {
        prop_assume!(nonzero(&u) && nonzero(&v));
        let sv = Signal::new(v.clone()).unwrap();
        let g = cs_loss(&Signal::new(u).unwrap(), &sv, DEFAULT_ETA).unwrap().grad;
        let radial: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
        let scale = g.iter().map(|a| a.abs()).sum::<f64>() * v.iter().map(|a| a.abs()).sum::<f64>();
        prop_assert!(radial.abs() <= 1e-10 * scale.max(1.0));
    }

    #[test]
    fn masked_losses_ignore_unmasked_coordinates(
        (x, s_hat, bits, noise) in (3usize..16).prop_flat_map(|d| (
            vec_in(d),
            vec_in(d),
            prop::collection::vec(any::<bool>(), d),
            vec_in(d),
        )),
    ) {
        prop_assume!(bits.iter().any(|&b| b));
        let mask = MaskVec::from_bits(bits.clone(), 0.5).unwrap();
        let sx = Signal::new(x.clone()).unwrap();
        let pair = MaskedPair::new(sx.clone(), sx.clone(), mask).unwrap();
        let moved: Vec<f64> = s_hat.iter().zip(&noise).zip(&bits)
            .map(|((s, n), &b)| if b { *s } else { s + n })
            .collect();
        let (a, b) = (Signal::new(s_hat).unwrap(), Signal::new(moved).unwrap());
        let n2v = (n2v_loss(&pair, &a).unwrap(), n2v_loss(&pair, &b).unwrap());
        prop_assert_eq!(n2v.0.value, n2v.1.value);
        let dcs = (dcs_loss(&pair, &a, 0.5, DEFAULT_ETA).unwrap(), dcs_loss(&pair, &b, 0.5, DEFAULT_ETA).unwrap());
        prop_assert_eq!(dcs.0.value, dcs.1.value);
        for (d, &on) in bits.iter().enumerate() {
            if !on {
                prop_assert_eq!(n2v.0.grad[d], 0.0);
                prop_assert_eq!(dcs.0.grad[d], 0.0);
            }
        }
    }

    #[test]
    fn blind_spot_replaces_from_patch(
        seed in any::<u64>(),
        height in 1usize..6,
        width in 2usize..6,
        radius in 1usize..3,
        rho in 0.05f64..1.0,
    ) {
        let dim = height * width;
        // distinct values identify where each replacement came from
        let x = Signal::new((0..dim).map(|i| i as f64).collect()).unwrap();
        let shape = GridShape::new(height, width).unwrap();
        let pair = blind_spot_mask(&mut RngStream::new(seed, 0), &x, shape, rho, radius).unwrap();
        prop_assert!(pair.mask().count() >= 1);
        for d in 0..dim {
            let got = pair.x_tilde()[d];
            if pair.mask().is_set(d) {
                let src = got as usize;
                let (r, c) = (d / width, d % width);
                let (sr, sc) = (src / width, src % width);
                prop_assert!(src != d);
                prop_assert!(r.abs_diff(sr) <= radius && c.abs_diff(sc) <= radius);
            } else {
                prop_assert_eq!(got, x[d]);
            }
        }
    }

    #[test]
    fn tau_amn_replaces_from_window(
        seed in any::<u64>(),
        len in 2usize..40,
        delta in 1usize..4,
        rho in 0.05f64..1.0,
    ) {
        let x = Signal::new((0..len).map(|i| i as f64).collect()).unwrap();
        let pair = tau_amn_mask(&mut RngStream::new(seed, 0), &x, rho, delta).unwrap();
        for t in 0..len {
            let got = pair.x_tilde()[t] as usize;
            if pair.mask().is_set(t) {
                prop_assert!(got != t && got.abs_diff(t) <= delta);
            } else {
                prop_assert_eq!(got, t);
            }
        }
    }

    #[test]
    fn c_hat_symmetric_and_scale_free(
        (x, xt) in (2usize..30).prop_flat_map(|d| (vec_in(d), vec_in(d))),
        a in 0.01f64..100.0,
    ) {
        prop_assume!(x != xt);
        let c = estimate_c(&x, &xt).unwrap();
        prop_assert!(c >= 0.0);
        prop_assert!((c - estimate_c(&xt, &x).unwrap()).abs() <= 1e-12 * c.max(1.0));
        let sx: Vec<f64> = x.iter().map(|v| v * a).collect();
        let sxt: Vec<f64> = xt.iter().map(|v| v * a).collect();
        prop_assert!((c - estimate_c(&sx, &sxt).unwrap()).abs() <= 1e-9 * c.max(1.0));
    }

    #[test]
    fn closed_form_weight_monotone_in_unit_interval(c in 0.0f64..1e3, dc in 1e-6f64..10.0) {
        let (k0, k1) = (k_closed_form(c), k_closed_form(c + dc));
        prop_assert!((0.0..1.0).contains(&k0));
        prop_assert!(k1 >= k0);
    }
}
