use super::*;
use crate::numerics::{Matrix, Precision};

/// Phi(1) to double precision.
const PHI_1: f64 = 0.841_344_746_068_542_9;

fn cfg(width: usize) -> EncoderConfig {
    EncoderConfig {
        width,
        depth: 1,
        patch: 1,
        in_channels: width,
        heads: 2,
        common_experts: 1,
        specific_experts: 1,
        top_k: 1,
        precision: Precision::F64,
    }
}

fn row(v: &[f64]) -> Matrix {
    Matrix::row_vector(v).unwrap()
}

fn constant_expert(width: usize, out: &[f64]) -> Expert {
    let mut e = Expert::zeros(width, width / 8);
    e.b2 = row(out);
    e
}

fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn expert_zero_and_hand_set() {
    let e = Expert::zeros(8, 1);
    let t = Matrix::filled(3, 8, 0.7);
    let out = expert_forward(&e, &t).unwrap();
    assert_eq!(out, Matrix::zeros(3, 8));

    // pre-activation 0.5 * 2 + 0 = 1, so the hidden unit is Phi(1)
    let mut e = Expert::zeros(8, 1);
    e.w1.set(0, 0, 0.5);
    e.w2 = row(&[1.0, -1.0, 2.0, 0.0, 0.5, 0.0, 0.0, 3.0]);
    e.b2 = row(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    let mut t = Matrix::zeros(1, 8);
    t.set(0, 0, 2.0);
    let out = expert_forward(&e, &t).unwrap();
    let want = row(&[PHI_1, -PHI_1, 2.0 * PHI_1, 1.0, 0.5 * PHI_1, 0.0, 0.0, 3.0 * PHI_1]);
    assert!(close(&out, &want, 1e-12), "{out:?}");

    assert!(expert_forward(&e, &Matrix::zeros(1, 4)).is_err());
}

#[test]
fn route_examples() {
    let mut r = Router::new(Matrix::zeros(8, 4), Matrix::zeros(1, 4), 2).unwrap();
    let g = route(&r, &Matrix::filled(2, 8, 1.0)).unwrap();
    assert_eq!(g.len(), 2);
    assert_eq!(g[0].active(), &[0, 1]);
    assert_eq!(g[0].weights(), &[0.5, 0.5, 0.0, 0.0]);

    r.b = row(&[2.0, 1.0, 0.5, 0.1]);
    let g = route(&r, &Matrix::zeros(1, 8)).unwrap();
    let p0 = 1.0f64.exp() / (1.0f64.exp() + 1.0);
    assert_eq!(g[0].active(), &[0, 1]);
    assert!((g[0].weight(0) - p0).abs() < 1e-12);
    assert!((g[0].weight(1) - (1.0 - p0)).abs() < 1e-12);
    assert!((g[0].weight(0) - 0.7311).abs() < 1e-4);

    r.k_active = 4;
    let g = route(&r, &Matrix::zeros(1, 8)).unwrap();
    let s = crate::numerics::softmax(&[2.0, 1.0, 0.5, 0.1]).unwrap();
    for (a, b) in g[0].weights().iter().zip(&s) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(Router::new(Matrix::zeros(8, 4), Matrix::zeros(1, 4), 5).is_err());
}

#[test]
fn cpmoe_degenerate_and_hand_set() {
    let c = cfg(8);
    let mut p = DeMoELayerParams::zeros(&c);
    p.shared_expert = constant_expert(8, &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0]);
    p.shared_expert.frozen = true;
    p.proj_r = Affine::identity(8);
    p.proj_tde = Affine::identity(8);
    let t = Matrix::from_fn(2, 8, |r, c| (r * 8 + c) as f64 * 0.1);

    // zero common experts: P^G = 0 and HG = TG
    let out = cpmoe_forward(&p, &t, &t).unwrap();
    assert_eq!(out.p_g, Matrix::zeros(2, 8));
    let tg = expert_forward(&p.shared_expert, &t).unwrap();
    assert_eq!(out.hg_r, tg);
    assert_eq!(out.hg_tde, tg);

    // constant common expert: P^G = b2 * b2, HG = b2 * b2 + shared
    let b2 = [0.5, -2.0, 1.0, 0.0, 3.0, 0.0, 0.0, 1.5];
    p.common_experts[0] = constant_expert(8, &b2);
    let one = Matrix::filled(1, 8, 0.3);
    let out = cpmoe_forward(&p, &one, &one).unwrap();
    let pg: Vec<f64> = b2.iter().map(|x| x * x).collect();
    assert!(close(&out.p_g, &row(&pg), 1e-12));
    let hg: Vec<f64> = pg
        .iter()
        .zip(p.shared_expert.b2.data())
        .map(|(a, b)| a + b)
        .collect();
    assert!(close(&out.hg_r, &row(&hg), 1e-12));
    assert!(close(&out.hg_tde, &row(&hg), 1e-12));

    // zero projections annihilate the prompt
    p.proj_r = Affine::zeros(8, 8);
    let out = cpmoe_forward(&p, &one, &one).unwrap();
    assert_eq!(out.p_g, Matrix::zeros(1, 8));

    assert!(cpmoe_forward(&p, &one, &Matrix::zeros(2, 8)).is_err());
}

#[test]
fn samoe_gate_weighted_sum() {
    let mut c = cfg(8);
    c.specific_experts = 2;
    c.top_k = 2;
    let mut p = DeMoELayerParams::zeros(&c);
    let o0 = [1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 4.0];
    let o1 = [0.0, 3.0, -1.0, 0.0, 0.0, 0.0, 5.0, 0.0];
    p.specific_experts_r = vec![constant_expert(8, &o0), constant_expert(8, &o1)];
    p.router_r.b = row(&[1.0, 0.0]);
    let t = Matrix::filled(3, 8, -0.2);
    let out = samoe_forward(&p, &t, None).unwrap();
    let w0 = 1.0f64.exp() / (1.0f64.exp() + 1.0);
    let want: Vec<f64> = o0.iter().zip(&o1).map(|(a, b)| w0 * a + (1.0 - w0) * b).collect();
    for r in 0..3 {
        for (a, b) in out.hs_r.row(r).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    assert!((w0 - 0.7311).abs() < 1e-4);
    // absent auxiliary modality: zero grid
    assert_eq!(out.hs_tde, Matrix::zeros(3, 8));
    assert_eq!(out.crossmodal_logits.len(), MODALITY_CLASSES);

    // a single expert with k = 1 passes its output through unchanged
    let mut p = DeMoELayerParams::zeros(&cfg(8));
    p.specific_experts_tde = vec![constant_expert(8, &o1)];
    let out = samoe_forward(&p, &t, Some(&t)).unwrap();
    for r in 0..3 {
        assert_eq!(out.hs_tde.row(r), &o1);
    }
    assert_eq!(out.hs_r, Matrix::zeros(3, 8));
}

#[test]
fn layer_residuals() {
    let c = cfg(8);
    let p = DeMoELayerParams::zeros(&c);
    let t_r = Matrix::from_fn(2, 8, |r, c| (r as f64) - (c as f64) * 0.25);
    let t_tde = t_r.scale(-2.0);
    let (f_r, f_tde) = demoe_layer_forward(&p, &t_r, Some(&t_tde)).unwrap();
    assert_eq!(f_r, t_r);
    assert_eq!(f_tde, t_tde);

    // recomposition: F = HG + HS + t
    let mut p = DeMoELayerParams::random(
        &mut crate::numerics::rng::stream_rng(5, 0),
        &EncoderConfig {
            width: 8,
            ..cfg(8)
        },
    );
    p.proj_r = Affine::identity(8);
    let cp = cpmoe_forward(&p, &t_r, &t_tde).unwrap();
    let sa = samoe_forward(&p, &t_r, Some(&t_tde)).unwrap();
    let (f_r, f_tde) = demoe_layer_forward(&p, &t_r, Some(&t_tde)).unwrap();
    let want_r = cp.hg_r.add(&sa.hs_r).unwrap().add(&t_r).unwrap();
    let want_tde = cp.hg_tde.add(&sa.hs_tde).unwrap().add(&t_tde).unwrap();
    assert!(close(&f_r, &want_r, 1e-12));
    assert!(close(&f_tde, &want_tde, 1e-12));

    // P^G = 0 and HS = 0 leave the shared expert plus the residual
    let mut q = DeMoELayerParams::zeros(&c);
    q.shared_expert = p.shared_expert.clone();
    let (f_r, _) = demoe_layer_forward(&q, &t_r, Some(&t_tde)).unwrap();
    let tg = expert_forward(&q.shared_expert, &t_r).unwrap();
    assert!(close(&f_r, &tg.add(&t_r).unwrap(), 1e-12));
}

fn frame(h: usize, w: usize, c: usize, seed: f64) -> Frame {
    Frame::new(
        h,
        w,
        c,
        (0..h * w * c)
            .map(|i| ((i as f64 + seed) * 0.37).sin())
            .collect(),
    )
    .unwrap()
}

#[test]
fn encoder_shapes_and_empty_stack() {
    let c = EncoderConfig {
        width: 8,
        depth: 2,
        patch: 8,
        in_channels: 3,
        precision: Precision::F64,
        ..Default::default()
    };
    let stack = EncoderStack::init(c, 1).unwrap();
    let pair = FramePair::new(
        frame(16, 16, 3, 0.0),
        Some(frame(16, 16, 3, 1.0)),
        ModalityPair::RgbDepth,
    )
    .unwrap();
    let out = encoder_forward(&stack, &pair).unwrap();
    assert_eq!(out.f_u.shape(), (4, 8));
    assert_eq!(out.grid, (2, 2));
    assert_eq!(out.layers.len(), 2);

    let mut empty = stack.clone();
    empty.layers.clear();
    empty.config.depth = 0;
    let out = encoder_forward(&empty, &pair).unwrap();
    let pe = |f: &Frame| {
        f.patchify(8)
            .unwrap()
            .matmul(&stack.patch_embed.w)
            .unwrap()
            .add_row(&stack.patch_embed.b)
            .unwrap()
    };
    let want = pe(&pair.rgb).add(&pe(pair.tde.as_ref().unwrap())).unwrap();
    assert!(close(&out.f_u, &want, 1e-12));

    let bad = FramePair::rgb_only(frame(12, 16, 3, 0.0));
    assert!(encoder_forward(&stack, &bad).is_err());
}

#[test]
fn symmetric_branches_agree() {
    let c = EncoderConfig {
        width: 8,
        depth: 2,
        patch: 4,
        in_channels: 3,
        precision: Precision::F64,
        ..Default::default()
    };
    let mut stack = EncoderStack::init(c, 2).unwrap();
    for l in &mut stack.layers {
        l.moe.specific_experts_tde = l.moe.specific_experts_r.clone();
        l.moe.router_tde = l.moe.router_r.clone();
        l.moe.proj_tde = l.moe.proj_r.clone();
    }
    let f = frame(8, 8, 3, 3.0);
    let pair = FramePair::new(f.clone(), Some(f), ModalityPair::RgbThermal).unwrap();
    let out = encoder_forward(&stack, &pair).unwrap();
    let last = out.layers.last().unwrap();
    assert_eq!(last.f_r, last.f_tde);
}

/// One layer, identity patch embedding, identity attention block, a single
/// common expert `gelu(t_0) * 1`, everything else zero.
fn reconstruction_stack() -> EncoderStack {
    let c = EncoderConfig {
        depth: 1,
        ..cfg(8)
    };
    let mut moe = DeMoELayerParams::zeros(&c);
    let mut e = Expert::zeros(8, 1);
    e.w1.set(0, 0, 1.0);
    e.w2 = Matrix::filled(1, 8, 1.0);
    moe.common_experts = vec![e];
    moe.proj_r = Affine::identity(8);
    moe.proj_tde = Affine::identity(8);
    EncoderStack {
        config: c,
        patch_embed: Affine::identity(8),
        layers: vec![EncoderLayer {
            msa: MsaParams::passthrough(8, 2),
            moe,
        }],
    }
}

#[test]
fn masked_reconstruction_hand_computed() {
    let stack = reconstruction_stack();
    let mut data = vec![0.0; 16];
    data[0] = 1.0;
    data[8] = 1.0;
    data[3] = -0.4;
    data[13] = 2.0;
    let pair = FramePair::rgb_only(Frame::new(1, 2, 8, data.clone()).unwrap());

    assert_eq!(loss_cm(&stack, &pair, 0.0, 11).unwrap(), 0.0);

    // masked row: prompt drops from Phi(1)^2 to 0 on all 8 channels, in both
    // modality roles; each MSE averages over 2 x 8 entries
    let l = loss_cm(&stack, &pair, 0.5, 11).unwrap();
    let want = PHI_1.powi(4);
    assert!((l - want).abs() < 1e-12, "{l} vs {want}");

    // a mask token equal to the token it replaces changes nothing
    let one = FramePair::rgb_only(Frame::new(1, 1, 8, data[..8].to_vec()).unwrap());
    let mut s = stack.clone();
    s.layers[0].moe.mask_token = row(&data[..8]);
    assert_eq!(loss_cm(&s, &one, 1.0, 3).unwrap(), 0.0);
}

#[test]
fn orthogonality_examples() {
    let m = |v: &[f64]| row(v);
    let g = |u: &[f64], v: &[f64]| ExpertOutputs {
        common: vec![m(u)],
        specific: vec![m(v)],
    };
    assert_eq!(loss_ce(&[g(&[1.0, 0.0], &[1.0, 0.0])]).unwrap(), 1.0);
    assert_eq!(loss_ce(&[g(&[2.0, 0.0], &[1.0, 1.0])]).unwrap(), 2.0);
    assert_eq!(loss_ce(&[g(&[0.0, 3.0], &[2.0, 0.0])]).unwrap(), 0.0);
    // tiny specific outputs are skipped
    assert_eq!(loss_ce(&[g(&[1.0, 0.0], &[1e-10, 0.0])]).unwrap(), 0.0);
    // the common outputs are summed before projecting
    let split = ExpertOutputs {
        common: vec![m(&[1.0, 0.0]), m(&[1.0, 0.0])],
        specific: vec![m(&[1.0, 1.0]), m(&[0.0, 1.0])],
    };
    assert_eq!(loss_ce(&[split]).unwrap(), 2.0);
}

#[test]
fn router_cross_entropy_examples() {
    let want = (1.0f64.exp() + 3.0).ln() - 1.0;
    let l = loss_task(&[vec![1.0, 0.0, 0.0, 0.0]], 0).unwrap();
    assert!((l - want).abs() < 1e-12);
    assert!((l - 0.7437).abs() < 1e-4);
    let l = loss_task(&[vec![0.0; 4], vec![0.0; 4]], 2).unwrap();
    assert!((l - 2.0 * 4.0f64.ln()).abs() < 1e-12);
    let peaked = loss_task(&[vec![0.0, 20.0, 0.0, 0.0]], 1).unwrap();
    assert!(peaked <= 1e-8);
    assert!(loss_task(&[vec![0.0; 4]], 4).is_err());
}

#[test]
fn weighted_total() {
    assert_eq!(loss_moe_total(0.0, 0.0, 3.0, 7.0).unwrap(), 0.0);
    assert_eq!(loss_moe_total(1.0, 2.0, 0.5, 0.25).unwrap(), 1.0);
    assert_eq!(loss_moe_total(1.75, 0.0, 1.0, 9.0).unwrap(), 1.75);
    assert!(loss_moe_total(1.0, 1.0, -1.0, 0.0).is_err());
}

#[test]
fn orthogonality_gradient_on_small_layer() {
    let c = EncoderConfig {
        width: 8,
        depth: 1,
        patch: 4,
        in_channels: 1,
        common_experts: 2,
        specific_experts: 2,
        top_k: 2,
        heads: 2,
        precision: Precision::F64,
    };
    let stack = EncoderStack::init(c, 7).unwrap();
    let pair = FramePair::new(
        frame(4, 8, 1, 0.0),
        Some(frame(4, 8, 1, 5.0)),
        ModalityPair::RgbEvent,
    )
    .unwrap();
    let plan = MaskPlan::none(1);
    let targets = cm_targets(&stack, &pair).unwrap();
    let report = grad_check(
        &stack,
        |s: &EncoderStack| term_gradients(s, &pair, LossTerm::Ce, &plan, &targets),
        DEFAULT_EPSILON,
        1e-5,
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.failures());
    assert!(report
        .blocks
        .iter()
        .filter(|b| b.frozen)
        .all(|b| b.max_abs_analytic == 0.0));
}

#[test]
fn objective_is_deterministic_and_consistent() {
    let c = EncoderConfig {
        width: 8,
        depth: 2,
        patch: 4,
        in_channels: 3,
        precision: Precision::F32,
        ..Default::default()
    };
    let stack = EncoderStack::init(c, 4).unwrap();
    let pair = FramePair::new(
        frame(8, 8, 3, 0.0),
        Some(frame(8, 8, 3, 2.0)),
        ModalityPair::RgbThermal,
    )
    .unwrap();
    let plan = MaskPlan::sample(9, 2, 4, 0.25, true).unwrap();
    let w = LossWeights::default();
    let (a, ga) = decoupling_objective(&stack, &pair, &w, &plan).unwrap();
    let (b, gb) = decoupling_objective(&stack, &pair, &w, &plan).unwrap();
    assert_eq!(a, b);
    assert_eq!(ga, gb);
    let sum = a.l_task + loss_moe_total(a.l_cm, a.l_ce, a.mu, a.lambda).unwrap();
    assert!((a.total - sum).abs() < 1e-5 * a.total.max(1.0));
    assert!(a.l_cm > 0.0 && a.l_ce > 0.0 && a.l_task > 0.0);
    let l_cm = loss_cm_with_plan(&stack, &pair, &plan).unwrap();
    assert!((a.l_cm - l_cm).abs() < 1e-6);
}
