use moetrack::demoe::{
    decoupling_objective, demoe_layer_forward, encoder_forward, loss_ce, loss_cm, route,
    DeMoELayerParams, EncoderConfig, EncoderStack, ExpertOutputs, Frame, FramePair, LossWeights,
    MaskPlan, ModalityPair,
};
use moetrack::numerics::rng::{gaussian_matrix, stream_rng};
use moetrack::numerics::{Matrix, Precision};
use proptest::prelude::*;

fn small_config(width: usize, depth: usize, patch: usize) -> EncoderConfig {
    EncoderConfig {
        width,
        depth,
        patch,
        in_channels: 3,
        heads: 2,
        precision: Precision::F64,
        ..Default::default()
    }
}

fn random_frame(h: usize, w: usize, seed: u64) -> Frame {
    let m = gaussian_matrix(&mut stream_rng(seed, 99), 1, h * w * 3, 1.0);
    Frame::new(h, w, 3, m.data().to_vec()).unwrap()
}

fn random_tokens(n: usize, c: usize, seed: u64) -> Matrix {
    gaussian_matrix(&mut stream_rng(seed, 98), n, c, 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn encoder_output_shape_depends_only_on_sizes(
        gh in 1usize..4,
        gw in 1usize..4,
        patch in prop::sample::select(vec![2usize, 4]),
        width in prop::sample::select(vec![8usize, 16]),
        seed in any::<u64>(),
    ) {
        let stack = EncoderStack::init(small_config(width, 2, patch), seed % 1000).unwrap();
        let (h, w) = (gh * patch, gw * patch);
        let pair = FramePair::new(random_frame(h, w, seed), Some(random_frame(h, w, seed + 1)), ModalityPair::RgbDepth).unwrap();
        let out = encoder_forward(&stack, &pair).unwrap();
        prop_assert_eq!(out.grid, (gh, gw));
        prop_assert_eq!(out.f_u.shape(), (gh * gw, width));
        prop_assert_eq!(out.layers.len(), 2);
    }

    #[test]
    fn routed_gates_have_k_active_weights(n in 1usize..6, seed in any::<u64>()) {
        let cfg = small_config(8, 1, 2);
        let stack = EncoderStack::init(cfg.clone(), seed % 1000).unwrap();
        let tokens = random_tokens(n, 8, seed);
        let gates = route(&stack.layers[0].moe.router_common, &tokens).unwrap();
        prop_assert_eq!(gates.len(), n);
        for g in gates {
            prop_assert_eq!(g.weights().iter().filter(|w| **w > 0.0).count(), cfg.top_k);
            let s: f64 = g.weights().iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn zeroed_layer_is_the_identity(n in 1usize..6, seed in any::<u64>(), with_tde in any::<bool>()) {
        let p = DeMoELayerParams::zeros(&small_config(8, 1, 2));
        let t_r = random_tokens(n, 8, seed);
        let t_tde = random_tokens(n, 8, seed ^ 1);
        let (f_r, f_tde) = demoe_layer_forward(&p, &t_r, with_tde.then_some(&t_tde)).unwrap();
        prop_assert_eq!(f_r, t_r.clone());
        prop_assert_eq!(f_tde, if with_tde { t_tde } else { t_r });
    }

    #[test]
    fn no_masking_means_no_reconstruction_loss(seed in any::<u64>()) {
        let stack = EncoderStack::init(small_config(8, 2, 2), seed % 1000).unwrap();
        let pair = FramePair::new(random_frame(4, 4, seed), Some(random_frame(4, 4, seed + 7)), ModalityPair::RgbEvent).unwrap();
        prop_assert_eq!(loss_cm(&stack, &pair, 0.0, seed).unwrap(), 0.0);
    }

    #[test]
    fn objective_is_bit_deterministic(seed in any::<u64>()) {
        let stack = EncoderStack::init(small_config(8, 2, 2), seed % 1000).unwrap();
        let pair = FramePair::new(random_frame(4, 4, seed), Some(random_frame(4, 4, seed + 3)), ModalityPair::RgbThermal).unwrap();
        let plan = MaskPlan::sample(seed, 2, 4, 0.25, true).unwrap();
        let w = LossWeights::default();
        let (a, ga) = decoupling_objective(&stack, &pair, &w, &plan).unwrap();
        let (b, gb) = decoupling_objective(&stack, &pair, &w, &plan).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(ga, gb);
    }

    /// Specific outputs built orthogonal to the common sum give zero; adding
    /// any component along the sum makes the loss positive.
    #[test]
    fn orthogonality_loss_vanishes_exactly_on_orthogonal_outputs(
        u in prop::collection::vec(-2f64..2.0, 4),
        raw in prop::collection::vec(prop::collection::vec(-2f64..2.0, 4), 1..4),
        along in 0.1f64..2.0,
    ) {
        let uu: f64 = u.iter().map(|x| x * x).sum();
        prop_assume!(uu > 1e-3);
        let half: Vec<f64> = u.iter().map(|x| x / 2.0).collect();
        let common = vec![Matrix::row_vector(&half).unwrap(), Matrix::row_vector(&half).unwrap()];
        let mut orth = Vec::new();
        for r in &raw {
            let c = r.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() / uu;
            let v: Vec<f64> = r.iter().zip(&u).map(|(a, b)| a - c * b).collect();
            let vv: f64 = v.iter().map(|x| x * x).sum();
            prop_assume!(vv > 1e-3);
            orth.push(v);
        }
        let group = |vs: &[Vec<f64>]| ExpertOutputs {
            common: common.clone(),
            specific: vs.iter().map(|v| Matrix::row_vector(v).unwrap()).collect(),
        };
        prop_assert!(loss_ce(&[group(&orth)]).unwrap().abs() < 1e-12);
        let mut tilted = orth.clone();
        for (t, x) in tilted[0].iter_mut().zip(&u) {
            *t += along * x;
        }
        prop_assert!(loss_ce(&[group(&tilted)]).unwrap() > 1e-6);
    }
}
